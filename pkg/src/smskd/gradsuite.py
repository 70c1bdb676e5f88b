"""Finite-difference checks over every loss in the suite.

Each case builds, from a seed, a scalar function of one float64 tensor
(student logits or a student feature map) plus the point to check it at.
Teacher, reference and head tensors are fixed random constants.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import losses as L
from .gradcheck import check_gradient
from .tensor import Tensor, flatten

B, K, C, H = 5, 4, 3, 4

Case = Callable[[int], tuple[Callable[[Tensor], Tensor], Tensor]]


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 20231])


def _const(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _logit_case(build):
    def case(seed):
        rng = _rng(seed)
        zt, zr = _const(rng.normal(size=(B, K)) * 2), _const(rng.normal(size=(B, K)) * 2)
        y = rng.integers(0, K, size=B)
        return build(zt, zr, y), Tensor(rng.normal(size=(B, K)) * 2)

    return case


def _heads(method: str, t_shape, s_shape, seed: int) -> L.AuxiliaryHeads:
    heads = L.build_heads(L.MethodConfig(method), [t_shape], [s_shape], seed, np.float64)
    rng = _rng(seed + 1)
    for p in heads.parameters():
        p.data = p.data + 0.1 * rng.normal(size=p.shape)  # move log-scales off zero
    return heads


def _feature_case(method: str, s_channels: int = C):
    def case(seed):
        rng = _rng(seed)
        t = _const(rng.normal(size=(B, C, H, H)))
        heads = _heads(method, (C, H, H), (s_channels, H, H), seed) if method in ("FitNets", "VID") else None
        if method == "FitNets" and not heads.params:
            heads = None
        fn = {"FitNets": lambda s: L.fitnets_loss([t], [s], heads),
              "AT": lambda s: L.at_loss([t], [s]),
              "VID": lambda s: L.vid_loss([t], [s], heads)}[method]
        return fn, Tensor(rng.normal(size=(B, s_channels, H, H)))

    return case


def _relation_case(fn):
    def case(seed):
        rng = _rng(seed)
        t = _const(rng.normal(size=(B, 6)))
        return (lambda s: fn(t, s)), Tensor(rng.normal(size=(B, 6)))

    return case


def _composite_case(kind: str):
    """Student logits are a fixed linear read-out of the student feature map being checked."""

    def case(seed):
        rng = _rng(seed)
        t_tap = _const(rng.normal(size=(B, C, H, H)))
        w = _const(rng.normal(size=(C * H * H, K)) * 0.2)
        zt, zr = _const(rng.normal(size=(B, K)) * 2), _const(rng.normal(size=(B, K)) * 2)
        y = rng.integers(0, K, size=B)
        at, kd = L.MethodConfig("AT"), L.MethodConfig("KD", lambda_c=0.7)

        def outputs(s):
            return L.DistillBatchOutputs(zt, flatten(s) @ w, y, 4.0, zr if kind == "stage2" else None, [t_tap], [s])

        if kind == "stage1":
            fn = lambda s: L.stage_loss(outputs(s), at, 1, reference_mode="none")
        elif kind == "stage2":
            fn = lambda s: L.stage_loss(outputs(s), kd, 2, lambda_r=0.5, reference_mode="adaptive")
        else:
            fn = lambda s: L.dla_loss(outputs(s), at, kd)
        return fn, Tensor(rng.normal(size=(B, C, H, H)))

    return case


CASES: dict[str, Case] = {
    "cross_entropy": _logit_case(lambda zt, zr, y: lambda z: L.cross_entropy(z, y)),
    "kd": _logit_case(lambda zt, zr, y: lambda z: L.kd_loss(zt, z, 4.0)),
    "dkd": _logit_case(lambda zt, zr, y: lambda z: L.dkd_loss(zt, z, y, 4.0, 1.0, 8.0)),
    "fitnets": _feature_case("FitNets", s_channels=2),
    "at": _feature_case("AT", s_channels=2),
    "vid": _feature_case("VID"),
    "rkd": _relation_case(lambda t, s: L.rkd_loss(t, s)),
    "pkt": _relation_case(L.pkt_loss),
    "cc": _relation_case(L.cc_loss),
    "ref": _logit_case(lambda zt, zr, y: lambda z: L.ref_loss(z, zr, 1.0)),
    "adaref": _logit_case(lambda zt, zr, y: lambda z: L.adaref_loss(z, zr, y, 1.0)),
    "stage_loss_first": _composite_case("stage1"),
    "stage_loss_later": _composite_case("stage2"),
    "dla": _composite_case("dla"),
}


def run_suite(seeds=range(10), step: float = 1e-5, names=None) -> dict[str, float]:
    """Max relative gradient error per loss over ``seeds``."""
    out = {}
    for name in names or CASES:
        worst = 0.0
        for seed in seeds:
            fn, x = CASES[name](seed)
            worst = max(worst, check_gradient(fn, x, step))
        out[name] = worst
    return out
