import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from smskd import losses as L
from smskd.errors import ContractError, ParameterError, ShapeError
from smskd.tensor import Tensor


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def heads_with_identity_regressor(channels):
    """VID/FitNets heads whose 1x1 regressor is the identity and log-scale is zero."""
    h = L.build_heads(L.MethodConfig("VID"), [(channels, 2, 2)], [(channels, 2, 2)], 0, np.float64)
    h.params["reg0.weight"].data = np.eye(channels).reshape(channels, channels, 1, 1)
    return h


seeds = st.integers(0, 2**31 - 1)


class TestCrossEntropy:
    def test_uniform(self):
        assert L.cross_entropy(t64(np.zeros((3, 10))), [0, 4, 9]).item() == pytest.approx(math.log(10))

    def test_confident(self):
        z = np.zeros((2, 5))
        z[0, 1] = z[1, 3] = 50.0
        assert L.cross_entropy(t64(z), [1, 3]).item() < 1e-6

    def test_against_oracle(self, rng):
        z = rng.normal(size=(6, 4)) * 2
        y = rng.integers(0, 4, 6)
        assert L.cross_entropy(t64(z), y).item() == pytest.approx(oracles.cross_entropy(z.tolist(), y.tolist()), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ParameterError):
            L.cross_entropy(t64(np.zeros((2, 3))), [0, 3])


class TestKD:
    def test_equal_logits(self, rng):
        z = rng.normal(size=(4, 5))
        assert L.kd_loss(t64(z), t64(z), 4.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_oracle_tau1(self):
        assert L.kd_loss(t64([[1, 0]]), t64([[0, 1]]), 1.0).item() == pytest.approx(0.4621171572600098, abs=1e-12)

    def test_oracle_tau2(self):
        # tau^2 * KL(softmax([.5, 0]) || softmax([0, .5])) = 2 tanh(1/4), 40-digit evaluation
        assert L.kd_loss(t64([[1, 0]]), t64([[0, 1]]), 2.0).item() == pytest.approx(0.4898373248074183, abs=1e-12)

    def test_random_against_oracle(self, rng):
        zt, zs = rng.normal(size=(5, 6)) * 3, rng.normal(size=(5, 6)) * 3
        assert L.kd_loss(t64(zt), t64(zs), 4.0).item() == pytest.approx(oracles.kd(zt.tolist(), zs.tolist(), 4.0), abs=1e-10)

    @given(seeds, st.floats(0.5, 8.0))
    def test_tau_squared_scaling(self, seed, tau):
        from smskd import functional as F

        rng = np.random.default_rng(seed)
        zt, zs = t64(rng.normal(size=(3, 4))), t64(rng.normal(size=(3, 4)))
        plain = F.kl_divergence(F.softmax_with_temperature(zt, tau), F.softmax_with_temperature(zs, tau)).item()
        assert L.kd_loss(zt, zs, tau).item() / tau**2 == pytest.approx(plain, abs=1e-9)

    def test_gradient_only_to_student(self, rng):
        zt, zs = t64(rng.normal(size=(2, 3)), True), t64(rng.normal(size=(2, 3)), True)
        L.kd_loss(zt, zs, 4.0).backward()
        assert zt.grad is None and zs.grad is not None


class TestDKD:
    def test_equal_logits(self, rng):
        z = rng.normal(size=(3, 5))
        assert L.dkd_loss(t64(z), t64(z), [0, 1, 2], 4.0, 1.0, 8.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_tckd_blind_to_nontarget_split(self):
        # same p_y = softmax share of class 0, different split among the others
        zt = t64([[2.0, 1.0, 0.0]])
        zs = t64([[2.0, 0.0, 1.0]])
        assert L.dkd_loss(zt, zs, [0], 1.0, alpha=1.0, beta=0.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_against_oracle(self, rng):
        zt, zs = rng.normal(size=(4, 5)) * 2, rng.normal(size=(4, 5)) * 2
        y = rng.integers(0, 5, 4)
        got = L.dkd_loss(t64(zt), t64(zs), y, 4.0, 1.0, 8.0).item()
        assert got == pytest.approx(oracles.dkd(zt.tolist(), zs.tolist(), y.tolist(), 4.0, 1.0, 8.0), abs=1e-10)

    def test_needs_two_classes(self):
        with pytest.raises(ContractError):
            L.dkd_loss(t64([[1.0]]), t64([[0.0]]), [0], 4.0)

    @given(seeds, st.sampled_from([3, 10, 100]), st.sampled_from([1.0, 4.0]))
    def test_kd_decomposition_identity(self, seed, k, tau):
        from smskd import functional as F

        rng = np.random.default_rng(seed)
        zt, zs = t64(rng.normal(size=(1, k)) * 3), t64(rng.normal(size=(1, k)) * 3)
        y = rng.integers(0, k, 1)
        terms = L.dkd_terms(zt, zs, y, tau)
        pt_y = F.softmax_with_temperature(zt, tau).data[0, y[0]]
        assert L.kd_loss(zt, zs, tau).item() == pytest.approx(terms.tckd.item() + (1 - pt_y) * terms.nckd.item(), abs=1e-6)


class TestFeatureLosses:
    def test_fitnets_exact_and_offset(self, rng):
        t = rng.normal(size=(2, 3, 2, 2))
        assert L.fitnets_loss([t64(t)], [t64(t)]).item() == 0.0
        assert L.fitnets_loss([t64(t)], [t64(t + 1)]).item() == pytest.approx(1.0)

    def test_fitnets_oracle(self, rng):
        t, s = rng.normal(size=(2, 3, 2, 2)), rng.normal(size=(2, 3, 2, 2))
        assert L.fitnets_loss([t64(t)], [t64(s)]).item() == pytest.approx(oracles.mse(t.tolist(), s.tolist()), abs=1e-12)

    def test_fitnets_regressor_applies(self, rng):
        heads = L.build_heads(L.MethodConfig("FitNets"), [(4, 2, 2)], [(2, 2, 2)], 0, np.float64)
        assert heads.has_regressor(0)
        s = t64(rng.normal(size=(3, 2, 2, 2)))
        target = heads.regress(0, s).detach()
        assert L.fitnets_loss([target], [s], heads).item() == pytest.approx(0.0, abs=1e-15)

    def test_fitnets_unpaired(self, rng):
        with pytest.raises(ContractError):
            L.fitnets_loss([t64(np.ones((1, 2)))], [])

    def test_at_identical(self, rng):
        t = rng.normal(size=(2, 3, 4, 4))
        assert L.at_loss([t64(t)], [t64(t)]).item() <= 1e-7

    def test_at_single_channel_is_normalized_square(self, rng):
        h = rng.normal(size=(1, 1, 3, 3))
        a = L.attention_map(t64(h)).data
        sq = (h**2).reshape(1, -1)
        np.testing.assert_allclose(a, sq / np.linalg.norm(sq), atol=1e-12)

    def test_at_hand_oracle(self):
        t = t64([[[[1.0, 0.0], [0.0, 0.0]]]])
        s = t64([[[[0.0, 1.0], [0.0, 0.0]]]])
        assert L.at_loss([t], [s]).item() == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_at_channel_counts_may_differ(self, rng):
        t, s = rng.normal(size=(2, 5, 3, 3)), rng.normal(size=(2, 2, 3, 3))
        got = L.at_loss([t64(t)], [t64(s)]).item()
        assert got == pytest.approx(oracles.at(t.tolist(), s.tolist()), abs=1e-12)

    def test_at_spatial_mismatch(self, rng):
        with pytest.raises(ShapeError):
            L.at_loss([t64(np.ones((1, 1, 4, 4)))], [t64(np.ones((1, 1, 2, 2)))])

    def test_at_zero_map_is_finite(self):
        v = L.at_loss([t64(np.zeros((1, 1, 2, 2)))], [t64(np.ones((1, 1, 2, 2)))]).item()
        assert np.isfinite(v)

    def test_vid_zero_at_exact_mean(self, rng):
        h = heads_with_identity_regressor(3)
        t = rng.normal(size=(2, 3, 2, 2))
        assert L.vid_loss([t64(t)], [t64(t)], h).item() == pytest.approx(0.0, abs=1e-12)

    def test_vid_unit_residual(self, rng):
        h = heads_with_identity_regressor(3)
        t = rng.normal(size=(2, 3, 2, 2))
        assert L.vid_loss([t64(t)], [t64(t - 1)], h).item() == pytest.approx(0.5)

    def test_vid_optimal_log_scale(self):
        # one-unit sweep: the minimizer over s of s + r^2 / (2 exp(2s)) is exp(2s) = r^2
        h = heads_with_identity_regressor(1)
        r = 1.7
        t = t64(np.full((1, 1, 2, 2), r))
        s = t64(np.zeros((1, 1, 2, 2)))
        grid = np.linspace(-1.0, 1.5, 2501)
        vals = []
        for v in grid:
            h.params["logscale0"].data = np.array([v])
            vals.append(L.vid_loss([t], [s], h).item())
        best = grid[int(np.argmin(vals))]
        assert math.exp(2 * best) == pytest.approx(r * r, rel=2e-3)

    def test_vid_requires_heads(self, rng):
        with pytest.raises(ContractError):
            L.vid_loss([t64(np.ones((1, 2)))], [t64(np.ones((1, 2)))], None)


class TestRelationLosses:
    def test_rkd_identical_and_similarity_transform(self, rng):
        x = rng.normal(size=(5, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        moved = 2.5 * x @ q + rng.normal(size=3)
        assert L.rkd_loss(t64(x), t64(x)).item() <= 1e-7
        assert L.rkd_loss(t64(x), t64(moved)).item() <= 1e-7

    def test_rkd_two_samples(self):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            terms = L.rkd_terms(t64([[0.0, 0.0], [1.0, 0.0]]), t64([[0.0, 0.0], [5.0, 1.0]]))
        assert terms.distance.item() == pytest.approx(0.0, abs=1e-12)
        assert terms.angle is None and terms.skipped == ("angle",)
        assert not w

    def test_rkd_skip_warns(self):
        with pytest.warns(RuntimeWarning, match="angle"):
            L.rkd_loss(t64([[0.0, 0.0], [1.0, 0.0]]), t64([[0.0, 0.0], [2.0, 0.0]]))

    def test_rkd_collinear_oracle(self):
        t = [[0, 0], [1, 0], [2, 0]]
        s = [[0, 0], [1, 0], [3, 0]]
        terms = L.rkd_terms(t64(t), t64(s))
        # exhaustive enumeration: distance 1/48, angle 0 (all angles are 0 or pi in both sets)
        assert terms.distance.item() == pytest.approx(1 / 48, abs=1e-12)
        assert terms.angle.item() == pytest.approx(0.0, abs=1e-12)
        assert L.rkd_loss(t64(t), t64(s), 25, 50).item() == pytest.approx(25 / 48, abs=1e-12)

    def test_rkd_random_oracle(self, rng):
        t, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        d, a, total = oracles.rkd(t.tolist(), s.tolist())
        terms = L.rkd_terms(t64(t), t64(s))
        assert terms.distance.item() == pytest.approx(d, abs=1e-12)
        assert terms.angle.item() == pytest.approx(a, abs=1e-12)
        assert L.rkd_loss(t64(t), t64(s)).item() == pytest.approx(total, abs=1e-10)

    @given(seeds, st.floats(0.1, 10.0))
    def test_rkd_distance_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        t, s = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        a = L.rkd_terms(t64(t), t64(s)).distance.item()
        b = L.rkd_terms(t64(t), t64(c * s)).distance.item()
        assert a == pytest.approx(b, abs=1e-7)

    def test_pkt_identical(self, rng):
        x = rng.normal(size=(4, 3))
        assert L.pkt_loss(t64(x), t64(x)).item() <= 1e-7

    def test_pkt_oracle(self, rng):
        t, s = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert L.pkt_loss(t64(t), t64(s)).item() == pytest.approx(oracles.pkt(t.tolist(), s.tolist()), abs=1e-12)

    @given(seeds)
    def test_pkt_per_sample_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        t, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        scale = rng.uniform(0.1, 10.0, size=(4, 1))
        assert L.pkt_loss(t64(t), t64(s)).item() == pytest.approx(L.pkt_loss(t64(t), t64(s * scale)).item(), abs=1e-7)

    def test_cc_identical_and_hand_case(self):
        assert L.cc_loss(t64([[1.0, 2.0], [3.0, 1.0]]), t64([[1.0, 2.0], [3.0, 1.0]])).item() <= 1e-7
        assert L.cc_loss(t64([[1.0, 0.0], [0.0, 1.0]]), t64([[1.0, 1.0], [1.0, 1.0]])).item() == pytest.approx(0.5)

    def test_cc_oracle(self, rng):
        t, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 5))
        assert L.cc_loss(t64(t), t64(s)).item() == pytest.approx(oracles.cc(t.tolist(), s.tolist()), abs=1e-12)

    def test_relation_losses_need_pairs(self):
        with pytest.raises(ContractError):
            L.pkt_loss(t64([[1.0, 2.0]]), t64([[1.0, 2.0]]))
        with pytest.raises(ContractError):
            L.cc_loss(t64([[1.0, 2.0]]), t64([[1.0, 2.0]]))


class TestReferenceLosses:
    def test_ref_zero_at_equality(self, rng):
        z = rng.normal(size=(3, 4))
        assert L.ref_loss(t64(z), t64(z)).item() == pytest.approx(0.0, abs=1e-12)

    def test_ref_direction(self):
        fwd = L.ref_loss(t64([[2.0, 0.0]]), t64([[0.0, 1.0]])).item()
        rev = L.ref_loss(t64([[0.0, 1.0]]), t64([[2.0, 0.0]])).item()
        assert fwd == pytest.approx(0.8287249104088977, abs=1e-12)
        assert rev == pytest.approx(1.0068420594147643, abs=1e-12)
        assert fwd != pytest.approx(rev)

    def test_ref_uniform_student(self, rng):
        zr = rng.normal(size=(1, 5))
        p = oracles.softmax(zr[0].tolist())
        expected = sum(0.2 * math.log(0.2 / v) for v in p)
        assert L.ref_loss(t64(np.zeros((1, 5))), t64(zr)).item() == pytest.approx(expected, abs=1e-12)

    def test_ref_missing_reference(self):
        with pytest.raises(ContractError):
            L.ref_loss(t64([[0.0, 1.0]]), None)

    def test_ref_rejects_attached_reference(self):
        with pytest.raises(ContractError):
            L.ref_loss(t64([[0.0, 1.0]]), t64([[0.0, 1.0]], True))

    def test_adaref_example(self):
        zr = t64(np.log([[0.1, 0.7, 0.2]]))
        got = L.adaref_loss(t64(np.zeros((1, 3))), zr, [1]).item()
        assert got == pytest.approx(0.2270009194512615, abs=1e-12)

    def test_adaref_zero_tcp(self):
        zr = t64([[0.0, -800.0, 0.0]])  # reference gives the true class (numerically) zero mass
        assert L.adaref_loss(t64([[3.0, 1.0, -2.0]]), zr, [1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_adaref_zero_at_equality(self, rng):
        z = rng.normal(size=(3, 4))
        assert L.adaref_loss(t64(z), t64(z), [0, 1, 2]).item() == pytest.approx(0.0, abs=1e-12)

    def test_adaref_random_oracle(self, rng):
        zs, zr = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        y = rng.integers(0, 3, 4)
        w = [oracles.softmax(r.tolist())[k] for r, k in zip(zr, y)]
        assert L.adaref_loss(t64(zs), t64(zr), y).item() == pytest.approx(oracles.ref(zs.tolist(), zr.tolist(), w), abs=1e-12)

    def test_teacher_tcp_switch(self, rng):
        zs, zr, zt = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        y = rng.integers(0, 3, 4)
        w = [oracles.softmax(r.tolist())[k] for r, k in zip(zt, y)]
        got = L.adaref_loss(t64(zs), t64(zr), y, tcp_logits=t64(zt)).item()
        assert got == pytest.approx(oracles.ref(zs.tolist(), zr.tolist(), w), abs=1e-12)

    @given(seeds)
    def test_adaref_bounded_by_ref(self, seed):
        rng = np.random.default_rng(seed)
        zs, zr = t64(rng.normal(size=(5, 4)) * 3), t64(rng.normal(size=(5, 4)) * 3)
        y = rng.integers(0, 4, 5)
        assert L.adaref_loss(zs, zr, y).item() <= L.ref_loss(zs, zr).item() + 1e-9


def _outputs(rng, b=4, k=5, reference=True, c=3, hw=4):
    return L.DistillBatchOutputs(
        t64(rng.normal(size=(b, k))),
        t64(rng.normal(size=(b, k)), True),
        rng.integers(0, k, b),
        4.0,
        t64(rng.normal(size=(b, k))) if reference else None,
        [t64(rng.normal(size=(b, c, hw, hw)))],
        [t64(rng.normal(size=(b, c, hw, hw)), True)],
    )


class TestComposites:
    def test_stage2_with_zero_lambda_is_first_stage_form(self, rng):
        o = _outputs(rng)
        cfg = L.MethodConfig("KD")
        two = L.stage_loss(o, cfg, 2, lambda_r=0.0)
        one = L.distill_loss(o, cfg) + L.cross_entropy(o.student_logits, o.labels) * cfg.lambda_c
        assert abs(two.item() - one.item()) <= 1e-9

    def test_stage1_with_zero_lambda_c_is_pure_distill(self, rng):
        o = _outputs(rng, reference=False)
        cfg = L.MethodConfig("AT", lambda_c=0.0)
        assert L.stage_loss(o, cfg, 1, reference_mode="none").item() == pytest.approx(L.distill_loss(o, cfg).item(), abs=1e-15)

    def test_stage2_composition(self, rng):
        o = _outputs(rng)
        cfg = L.MethodConfig("KD", lambda_c=0.3)
        got = L.stage_loss(o, cfg, 2, lambda_r=0.7).item()
        want = (
            L.kd_loss(o.teacher_logits, o.student_logits, 4.0).item()
            + 0.3 * L.cross_entropy(o.student_logits, o.labels).item()
            + 0.7 * L.adaref_loss(o.student_logits, o.reference_logits, o.labels).item()
        )
        assert got == pytest.approx(want, abs=1e-12)

    def test_plain_reference_switch(self, rng):
        o = _outputs(rng)
        cfg = L.MethodConfig("KD")
        terms = L.stage_loss_terms(o, cfg, 2, reference_mode="plain")
        assert terms["ref"].item() == pytest.approx(L.ref_loss(o.student_logits, o.reference_logits).item())

    def test_stage1_rejects_reference(self, rng):
        with pytest.raises(ContractError):
            L.stage_loss(_outputs(rng), L.MethodConfig("KD"), 1, reference_mode="none")

    def test_later_stage_needs_reference(self, rng):
        with pytest.raises(ContractError):
            L.stage_loss(_outputs(rng, reference=False), L.MethodConfig("KD"), 2)

    def test_negative_lambda_r(self, rng):
        with pytest.raises(ParameterError):
            L.stage_loss(_outputs(rng), L.MethodConfig("KD"), 2, lambda_r=-1.0)

    def test_dla_kd_kd_is_double(self, rng):
        o = _outputs(rng, reference=False)
        kd = L.MethodConfig("KD")
        got = L.dla_loss(o, kd, kd).item()
        want = 2 * L.kd_loss(o.teacher_logits, o.student_logits, 4.0).item() + L.cross_entropy(o.student_logits, o.labels).item()
        assert got == pytest.approx(want, abs=1e-12)

    def test_dla_zero_constituents(self, rng):
        o = _outputs(rng, reference=False)
        o.student_logits = t64(o.teacher_logits.data.copy(), True)
        o.student_taps = [t64(o.teacher_taps[0].data.copy(), True)]
        got = L.dla_loss(o, L.MethodConfig("KD", lambda_c=0.5), L.MethodConfig("AT")).item()
        assert got == pytest.approx(0.5 * L.cross_entropy(o.student_logits, o.labels).item(), abs=1e-7)

    def test_dla_is_sum_of_terms(self, rng):
        o = _outputs(rng, reference=False)
        a, b = L.MethodConfig("AT", weight=3.0), L.MethodConfig("DKD")
        want = L.distill_loss(o, a).item() + L.distill_loss(o, b).item() + L.cross_entropy(o.student_logits, o.labels).item()
        assert L.dla_loss(o, a, b).item() == pytest.approx(want, abs=1e-7)

    def test_ce_method_has_no_distill_term(self, rng):
        o = _outputs(rng, reference=False)
        assert L.distill_loss(o, L.MethodConfig("CE")).item() == 0.0


ALL_METHODS = ["KD", "DKD", "FitNets", "AT", "VID", "RKD", "PKT", "CC"]


class TestSuiteProperties:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_no_gradient_to_teacher_or_reference(self, method, rng):
        b, k = 4, 5
        teacher_taps = [t64(rng.normal(size=(b, 3, 4, 4)))]
        student_taps = [t64(rng.normal(size=(b, 3, 4, 4)), True)]
        zt, zr = t64(rng.normal(size=(b, k))), t64(rng.normal(size=(b, k)))
        o = L.DistillBatchOutputs(zt, t64(rng.normal(size=(b, k)), True), rng.integers(0, k, b), 4.0, zr, teacher_taps, student_taps)
        cfg = L.MethodConfig(method)
        heads = L.build_heads(cfg, [(3, 4, 4)], [(3, 4, 4)], 0, np.float64)
        L.stage_loss(o, cfg, 2, heads=heads).backward()
        assert zt.grad is None and zr.grad is None and teacher_taps[0].grad is None
        assert o.student_logits.grad is not None

    def test_attached_teacher_rejected(self, rng):
        with pytest.raises(ContractError):
            L.DistillBatchOutputs(t64(np.zeros((2, 3)), True), t64(np.zeros((2, 3))), [0, 1])

    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_zero_at_equality(self, method, rng):
        b, k = 5, 4
        taps = rng.normal(size=(b, 3, 4, 4))
        z = rng.normal(size=(b, k))
        o = L.DistillBatchOutputs(t64(z), t64(z.copy(), True), rng.integers(0, k, b), 4.0, None, [t64(taps)], [t64(taps.copy(), True)])
        cfg = L.MethodConfig(method)
        heads = heads_with_identity_regressor(3) if method == "VID" else None
        if method == "VID":
            heads.params["reg0.weight"].data = np.eye(3).reshape(3, 3, 1, 1)
        assert L.distill_loss(o, cfg, heads).item() / cfg.weight <= 1e-7

    # VID is a Gaussian NLL with dropped constants, so it may go negative
    @pytest.mark.parametrize("method", [m for m in ALL_METHODS if m != "VID"])
    def test_nonnegative(self, method, rng):
        o = _outputs(rng, reference=False)
        cfg = L.MethodConfig(method)
        heads = L.build_heads(cfg, [(3, 4, 4)], [(3, 4, 4)], 1, np.float64)
        assert L.distill_loss(o, cfg, heads).item() >= -1e-9

    @pytest.mark.parametrize("method", ALL_METHODS + ["ref", "adaref", "CE"])
    def test_batch_permutation_equivariance(self, method, rng):
        b = 6
        o = _outputs(rng, b=b)
        perm = rng.permutation(b)
        p = L.DistillBatchOutputs(
            t64(o.teacher_logits.data[perm]),
            t64(o.student_logits.data[perm]),
            o.labels[perm],
            4.0,
            t64(o.reference_logits.data[perm]),
            [t64(o.teacher_taps[0].data[perm])],
            [t64(o.student_taps[0].data[perm])],
        )

        def value(x):
            if method == "ref":
                return L.ref_loss(x.student_logits, x.reference_logits).item()
            if method == "adaref":
                return L.adaref_loss(x.student_logits, x.reference_logits, x.labels).item()
            cfg = L.MethodConfig(method)
            heads = L.build_heads(cfg, [(3, 4, 4)], [(3, 4, 4)], 7, np.float64)
            return L.distill_loss(x, cfg, heads).item() + L.cross_entropy(x.student_logits, x.labels).item()

        assert value(o) == pytest.approx(value(p), abs=1e-7)


class TestConfigAndHeads:
    def test_defaults(self):
        assert L.MethodConfig("RKD").params == {"w_d": 25.0, "w_a": 50.0}
        assert L.MethodConfig("DKD").params == {"alpha": 1.0, "beta": 8.0}
        assert L.MethodConfig("PKT").weight == 30000.0

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            L.MethodConfig("CRD")

    def test_negative_weight(self):
        with pytest.raises(ParameterError):
            L.MethodConfig("KD", weight=-1.0)

    def test_params_only_where_required(self):
        with pytest.raises(ParameterError):
            L.MethodConfig("KD", params={"alpha": 1.0})

    def test_vid_heads_always_present(self):
        h = L.build_heads(L.MethodConfig("VID"), [(3, 4, 4)], [(3, 4, 4)])
        assert h.has_regressor(0) and "logscale0" in h.params

    def test_flat_taps_get_linear_regressor(self):
        h = L.build_heads(L.MethodConfig("FitNets"), [(8,)], [(4,)])
        assert h.params["reg0.weight"].shape == (4, 8)

    def test_incompatible_regression(self):
        with pytest.raises(ShapeError):
            L.build_heads(L.MethodConfig("FitNets"), [(8, 4, 4)], [(4, 2, 2)])

    def test_projection_head(self, rng):
        cfg = L.MethodConfig("RKD", project=True)
        h = L.build_heads(cfg, [(6,)], [(3,)], 0, np.float64)
        assert h.has_projection(0) and h.params["proj0.weight"].shape == (3, 6)

    def test_all_tap_pairs_require_equal_counts(self):
        with pytest.raises(ContractError):
            L.select_pairs(2, 1, "all")
        assert L.select_pairs(2, 3, "last") == [(1, 2)]
