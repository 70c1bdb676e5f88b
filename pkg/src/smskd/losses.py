"""Distillation objectives and the stage-wise composite losses.

Every loss here is a pure function of its tensor arguments and returns a
scalar :class:`~smskd.tensor.Tensor`.  Teacher and reference tensors are
expected to be detached; gradients only reach the student (and, for
feature methods, the auxiliary heads).

Response losses work in the log domain via ``log_softmax`` so they stay
finite for saturated teachers; losses that receive probabilities directly
(PKT) floor them at ``EPS`` inside the logarithm instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import functional as F
from .errors import ContractError, ParameterError, ShapeError
from .functional import EPS
from .tensor import Tensor, abs_, clamp_min, exp, flatten, power, sqrt, sum_

METHODS = ("KD", "DKD", "FitNets", "AT", "VID", "RKD", "PKT", "CC", "CE")
FEATURE_METHODS = ("FitNets", "AT", "VID")
RELATION_METHODS = ("RKD", "PKT", "CC")
REFERENCE_MODES = ("none", "plain", "adaptive")

# Scale applied to each method's distillation term (CRD-protocol defaults,
# except AT, which is sized for the unsquared norm form of at_loss).
DEFAULT_WEIGHTS = {
    "KD": 1.0,
    "DKD": 1.0,
    "FitNets": 100.0,
    "AT": 10.0,
    "VID": 1.0,
    "RKD": 1.0,
    "PKT": 30000.0,
    "CC": 0.02,
    "CE": 0.0,
}
DEFAULT_PARAMS = {
    "DKD": {"alpha": 1.0, "beta": 8.0},
    "RKD": {"w_d": 25.0, "w_a": 50.0},
    "AT": {"p": 2.0},
}


@dataclass
class MethodConfig:
    """One distillation method with its weights.

    ``weight`` scales the method's own loss (``None`` picks the default
    from ``DEFAULT_WEIGHTS``); ``lambda_c`` weights cross-entropy.
    ``taps`` selects which tap pairs feature/relation methods use: ``"last"``
    pairs the final taps, ``"all"`` pairs them positionally.
    ``project`` adds a learnable linear map from the student embedding to
    the teacher embedding width for relation methods.
    """

    method: str
    lambda_c: float = 1.0
    weight: Optional[float] = None
    params: dict = field(default_factory=dict)
    taps: str = "last"
    project: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.weight is None:
            self.weight = DEFAULT_WEIGHTS[self.method]
        allowed = DEFAULT_PARAMS.get(self.method, {})
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ParameterError(f"{self.method} does not take parameters {sorted(unknown)}")
        self.params = {**allowed, **self.params}
        for key, value in [("lambda_c", self.lambda_c), ("weight", self.weight), *self.params.items()]:
            if not float(value) >= 0:
                raise ParameterError(f"{self.method}.{key} must be >= 0, got {value}")
        if self.method == "AT" and self.params["p"] < 1:
            raise ParameterError(f"AT power p must be >= 1, got {self.params['p']}")
        if self.taps not in ("last", "all"):
            raise ParameterError(f"taps must be 'last' or 'all', got {self.taps!r}")


@dataclass
class DistillBatchOutputs:
    teacher_logits: Tensor
    student_logits: Tensor
    labels: np.ndarray
    tau: float = 4.0
    reference_logits: Optional[Tensor] = None
    teacher_taps: list = field(default_factory=list)
    student_taps: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("teacher_logits", "reference_logits"):
            t = getattr(self, name)
            if t is not None and t.requires_grad:
                raise ContractError(f"{name} must be detached")
        if any(t.requires_grad for t in self.teacher_taps):
            raise ContractError("teacher taps must be detached")
        if self.teacher_logits.shape != self.student_logits.shape:
            raise ShapeError(
                f"teacher logits {self.teacher_logits.shape} and student logits {self.student_logits.shape} differ"
            )
        self.labels = np.asarray(self.labels)


# -- auxiliary heads ------------------------------------------------------------


def select_pairs(n_teacher: int, n_student: int, mode: str) -> list[tuple[int, int]]:
    if n_teacher == 0 or n_student == 0:
        raise ContractError(f"method needs feature taps, teacher has {n_teacher} and student {n_student}")
    if mode == "last":
        return [(n_teacher - 1, n_student - 1)]
    if n_teacher != n_student:
        raise ContractError(f"unpaired taps: teacher has {n_teacher}, student has {n_student}")
    return [(i, i) for i in range(n_teacher)]


class AuxiliaryHeads:
    """Learnable adapters trained alongside the student.

    Per tap pair ``k`` there may be a regressor (linear for flat taps,
    1x1 conv for spatial ones) mapping the student tap onto the teacher
    tap's shape, and a per-unit log-scale vector used by VID.  Relation
    methods may carry a projection of the student embedding.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ShapeError(f"head names differ: {sorted(state)} vs {sorted(self.params)}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"tensor {name!r}: shape {state[name].shape} does not match {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def has_regressor(self, k: int) -> bool:
        return f"reg{k}.weight" in self.params

    def regress(self, k: int, h: Tensor) -> Tensor:
        w = self.params[f"reg{k}.weight"]
        b = self.params[f"reg{k}.bias"]
        if h.ndim == 4:
            return F.conv2d(h, w, b)
        return h @ w + b

    def log_scale(self, k: int) -> Tensor:
        return self.params[f"logscale{k}"]

    def has_projection(self, k: int) -> bool:
        return f"proj{k}.weight" in self.params

    def project(self, k: int, e: Tensor) -> Tensor:
        return e @ self.params[f"proj{k}.weight"]


def build_heads(
    config: MethodConfig,
    teacher_tap_shapes: Sequence[tuple],
    student_tap_shapes: Sequence[tuple],
    seed: int = 0,
    dtype=np.float32,
) -> AuxiliaryHeads:
    """Create the adapters ``config.method`` needs for the given tap shapes (per-sample)."""
    heads = AuxiliaryHeads()
    method = config.method
    if method not in FEATURE_METHODS + RELATION_METHODS:
        return heads
    rng = np.random.default_rng(seed)
    pairs = select_pairs(len(teacher_tap_shapes), len(student_tap_shapes), config.taps)
    for k, (ti, si) in enumerate(pairs):
        t_shape, s_shape = tuple(teacher_tap_shapes[ti]), tuple(student_tap_shapes[si])
        if method in ("FitNets", "VID"):
            need = method == "VID" or t_shape != s_shape
            if need:
                if len(t_shape) == 3:
                    if len(s_shape) != 3 or t_shape[1:] != s_shape[1:]:
                        raise ShapeError(f"cannot regress student tap {s_shape} onto teacher tap {t_shape}")
                    fan_in, shape_w = s_shape[0], (t_shape[0], s_shape[0], 1, 1)
                    out_units = t_shape[0]
                else:
                    if len(s_shape) != 1:
                        raise ShapeError(f"cannot regress student tap {s_shape} onto flat teacher tap {t_shape}")
                    fan_in, shape_w = s_shape[0], (s_shape[0], t_shape[0])
                    out_units = t_shape[0]
                bound = np.sqrt(6.0 / fan_in)
                heads.params[f"reg{k}.weight"] = Tensor(rng.uniform(-bound, bound, shape_w).astype(dtype), True)
                heads.params[f"reg{k}.bias"] = Tensor(np.zeros(out_units, dtype), True)
            if method == "VID":
                heads.params[f"logscale{k}"] = Tensor(np.zeros(t_shape[0], dtype), True)
        elif method == "AT":
            if t_shape[1:] != s_shape[1:] or len(t_shape) != 3:
                raise ShapeError(f"AT needs equal spatial sizes, got teacher {t_shape} and student {s_shape}")
        elif config.project:
            d_s, d_t = int(np.prod(s_shape)), int(np.prod(t_shape))
            bound = np.sqrt(6.0 / d_s)
            heads.params[f"proj{k}.weight"] = Tensor(rng.uniform(-bound, bound, (d_s, d_t)).astype(dtype), True)
    return heads


# -- response losses ------------------------------------------------------------


def cross_entropy(student_logits: Tensor, labels) -> Tensor:
    logp = F.log_softmax_with_temperature(student_logits, 1.0)
    return -F.pick(logp, labels).mean()


def kd_loss(teacher_logits: Tensor, student_logits: Tensor, tau: float = 4.0) -> Tensor:
    """tau^2 * mean_batch KL(p_teacher || p_student), both softened at ``tau``."""
    log_pt = F.log_softmax_with_temperature(teacher_logits.detach(), tau)
    log_ps = F.log_softmax_with_temperature(student_logits, tau)
    return F.kl_from_log_probs(log_pt, log_ps) * (float(tau) ** 2)


class DKDTerms(NamedTuple):
    tckd: Tensor
    nckd: Tensor


def dkd_terms(teacher_logits: Tensor, student_logits: Tensor, labels, tau: float = 4.0) -> DKDTerms:
    """Target-class and non-target-class parts of the KD loss (both scaled by tau^2).

    TCKD compares the binary split (p_y, 1 - p_y); NCKD compares the
    non-target probabilities renormalized to sum to one.  Together they
    satisfy KD = TCKD + (1 - p^T_y) * NCKD.
    """
    if student_logits.shape[1] < 2:
        raise ContractError(f"DKD needs at least 2 classes, got logits {student_logits.shape}")
    tau = float(tau)
    zt = teacher_logits.detach() * (1.0 / tau)
    zs = student_logits * (1.0 / tau)

    def split(z):
        lse = F.logsumexp(z, axis=1)
        log_target = F.pick(z, labels) - lse
        log_rest = F.logsumexp(F.drop_column(z, labels), axis=1) - lse
        return log_target, log_rest

    lt_y, lt_rest = split(zt)
    ls_y, ls_rest = split(zs)
    binary = exp(lt_y) * (lt_y - ls_y) + exp(lt_rest) * (lt_rest - ls_rest)
    tckd = binary.mean() * tau**2
    if student_logits.shape[1] == 2:
        nckd = (ls_y * 0.0).mean()
    else:
        nt = F.log_softmax_with_temperature(F.drop_column(teacher_logits.detach(), labels), tau)
        ns = F.log_softmax_with_temperature(F.drop_column(student_logits, labels), tau)
        nckd = F.kl_from_log_probs(nt, ns) * tau**2
    return DKDTerms(tckd, nckd)


def dkd_loss(teacher_logits: Tensor, student_logits: Tensor, labels, tau: float = 4.0, alpha: float = 1.0, beta: float = 8.0) -> Tensor:
    if alpha < 0 or beta < 0:
        raise ParameterError(f"DKD weights must be >= 0, got alpha={alpha}, beta={beta}")
    terms = dkd_terms(teacher_logits, student_logits, labels, tau)
    return terms.tckd * float(alpha) + terms.nckd * float(beta)


# -- feature losses -------------------------------------------------------------


def _pairs(teacher_taps, student_taps):
    if len(teacher_taps) != len(student_taps):
        raise ContractError(f"unpaired taps: {len(teacher_taps)} teacher vs {len(student_taps)} student")
    if not teacher_taps:
        raise ContractError("feature loss called without taps")
    return list(zip(teacher_taps, student_taps))


def fitnets_loss(teacher_taps: Sequence[Tensor], student_taps: Sequence[Tensor], heads: Optional[AuxiliaryHeads] = None) -> Tensor:
    """Sum over tap pairs of the mean squared error after regression."""
    total = None
    for k, (t, s) in enumerate(_pairs(teacher_taps, student_taps)):
        r = heads.regress(k, s) if heads is not None and heads.has_regressor(k) else s
        if r.shape != t.shape:
            raise ShapeError(f"FitNets pair {k}: regressed student {r.shape} vs teacher {t.shape}")
        term = ((r - t.detach()) ** 2).mean()
        total = term if total is None else total + term
    return total


def attention_map(h: Tensor, p: float = 2.0) -> Tensor:
    """sum_c |h_c|^p flattened per sample and L2-normalized: [B, H*W]."""
    if h.ndim != 4:
        raise ShapeError(f"attention map needs [B, C, H, W], got {h.shape}")
    a = sum_(power(abs_(h), p), axis=1)
    return F.l2_normalize(flatten(a), axis=1)


def at_loss(teacher_taps: Sequence[Tensor], student_taps: Sequence[Tensor], p: float = 2.0) -> Tensor:
    total = None
    pairs = _pairs(teacher_taps, student_taps)
    for k, (t, s) in enumerate(pairs):
        if t.ndim != 4 or s.ndim != 4 or t.shape[0] != s.shape[0] or t.shape[2:] != s.shape[2:]:
            raise ShapeError(f"AT pair {k}: spatial shapes differ, teacher {t.shape} vs student {s.shape}")
        diff = attention_map(s, p) - attention_map(t.detach(), p)
        dist = sqrt(clamp_min(sum_(diff * diff, axis=1), EPS * EPS))
        term = dist.mean()
        total = term if total is None else total + term
    return total * (1.0 / len(pairs))


def vid_loss(teacher_taps: Sequence[Tensor], student_taps: Sequence[Tensor], heads: AuxiliaryHeads) -> Tensor:
    """Gaussian NLL of the teacher tap under N(mu(student), exp(s)^2), constants dropped.

    ``s`` is a per-unit (per-channel for spatial taps) log standard deviation.
    """
    if heads is None:
        raise ContractError("VID requires auxiliary heads (mean regressor and log-scale)")
    total = None
    for k, (t, s) in enumerate(_pairs(teacher_taps, student_taps)):
        mu = heads.regress(k, s) if heads.has_regressor(k) else s
        if mu.shape != t.shape:
            raise ShapeError(f"VID pair {k}: regressed student {mu.shape} vs teacher {t.shape}")
        log_s = heads.log_scale(k)
        if t.ndim == 4:
            log_s = log_s.reshape(1, -1, 1, 1)
        inv_var = exp(log_s * -2.0)
        nll = log_s + ((t.detach() - mu) ** 2) * inv_var * 0.5
        term = nll.mean()
        total = term if total is None else total + term
    return total


# -- relation losses ------------------------------------------------------------


def _embed(x: Tensor) -> Tensor:
    return x if x.ndim == 2 else flatten(x)


class RKDTerms(NamedTuple):
    distance: Optional[Tensor]
    angle: Optional[Tensor]
    skipped: tuple


def _normalized_distances(x: Tensor) -> Tensor:
    b = x.shape[0]
    d = F.pairwise_distance(x)
    mean_d = sum_(d) * (1.0 / (b * (b - 1)))
    return d / clamp_min(mean_d, EPS)


def _angles(x: Tensor) -> Tensor:
    """cos of the angle at each middle point: out[j, i, k] = <n(x_i - x_j), n(x_k - x_j)>."""
    b, d = x.shape
    diffs = x.reshape(1, b, d) - x.reshape(b, 1, d)
    e = F.l2_normalize(diffs, axis=2)
    return e @ e.transpose(0, 2, 1)


def rkd_terms(teacher_embed: Tensor, student_embed: Tensor) -> RKDTerms:
    t, s = _embed(teacher_embed.detach()), _embed(student_embed)
    b = t.shape[0]
    if s.shape[0] != b:
        raise ShapeError(f"RKD batch sizes differ: {t.shape} vs {s.shape}")
    skipped = []
    distance = angle = None
    if b >= 2:
        off = 1.0 - np.eye(b)
        diff = _normalized_distances(s) - _normalized_distances(t)
        distance = sum_(F.huber(diff) * off) * (1.0 / (b * (b - 1)))
    else:
        skipped.append("distance")
    if b >= 3:
        idx = np.arange(b)
        distinct = (idx[:, None, None] != idx[None, :, None]) & (idx[:, None, None] != idx[None, None, :])
        distinct &= idx[None, :, None] != idx[None, None, :]
        count = int(distinct.sum())
        angle = sum_(F.huber(_angles(s) - _angles(t)) * distinct.astype(float)) * (1.0 / count)
    else:
        skipped.append("angle")
    return RKDTerms(distance, angle, tuple(skipped))


def rkd_loss(teacher_embed: Tensor, student_embed: Tensor, w_d: float = 25.0, w_a: float = 50.0) -> Tensor:
    """w_d * distance term + w_a * angle term, both Huber (delta = 1).

    Terms undefined for the batch size (distance needs 2 samples, angle 3)
    are dropped with a ``RuntimeWarning``; ``rkd_terms`` reports which.
    """
    terms = rkd_terms(teacher_embed, student_embed)
    if terms.skipped:
        warnings.warn(f"RKD skipped {', '.join(terms.skipped)} term(s) for batch size {teacher_embed.shape[0]}", RuntimeWarning)
    total = _embed(student_embed).sum() * 0.0
    if terms.distance is not None:
        total = total + terms.distance * float(w_d)
    if terms.angle is not None:
        total = total + terms.angle * float(w_a)
    return total


def _similarity_distribution(x: Tensor) -> Tensor:
    b = x.shape[0]
    k = (F.cosine_similarity_matrix(x) + 1.0) * 0.5
    k = k * (1.0 - np.eye(b))
    return k / clamp_min(sum_(k, axis=1, keepdims=True), EPS)


def pkt_loss(teacher_embed: Tensor, student_embed: Tensor) -> Tensor:
    t, s = _embed(teacher_embed.detach()), _embed(student_embed)
    if t.shape[0] < 2 or s.shape[0] != t.shape[0]:
        raise ContractError(f"PKT needs matching batches of at least 2, got {t.shape} and {s.shape}")
    return F.kl_divergence(_similarity_distribution(t), _similarity_distribution(s))


def cc_loss(teacher_embed: Tensor, student_embed: Tensor) -> Tensor:
    t, s = _embed(teacher_embed.detach()), _embed(student_embed)
    b = t.shape[0]
    if b < 2 or s.shape[0] != b:
        raise ContractError(f"CC needs matching batches of at least 2, got {t.shape} and {s.shape}")
    nt, ns = F.l2_normalize(t, axis=1), F.l2_normalize(s, axis=1)
    diff = nt @ nt.T - ns @ ns.T
    return sum_(diff * diff) * (1.0 / (b * b))


# -- reference losses -----------------------------------------------------------


def _reference_kl_rows(student_logits: Tensor, reference_logits: Optional[Tensor], tau_ref: float) -> Tensor:
    if reference_logits is None:
        raise ContractError("reference loss requires reference logits")
    if reference_logits.requires_grad:
        raise ContractError("reference logits must be detached")
    if reference_logits.shape != student_logits.shape:
        raise ShapeError(f"reference logits {reference_logits.shape} vs student logits {student_logits.shape}")
    log_ps = F.log_softmax_with_temperature(student_logits, tau_ref)
    log_pr = F.log_softmax_with_temperature(reference_logits, tau_ref)
    return F.kl_from_log_probs(log_ps, log_pr, reduction="none")


def ref_loss(student_logits: Tensor, reference_logits: Tensor, tau_ref: float = 1.0) -> Tensor:
    """mean_batch KL(p_student || p_reference); note student-first direction."""
    return _reference_kl_rows(student_logits, reference_logits, tau_ref).mean()


def true_class_probability(logits: Tensor, labels, tau: float = 1.0) -> np.ndarray:
    probs = F.softmax_with_temperature(logits.detach(), tau).data
    labels = F._check_labels(labels, probs.shape[0], probs.shape[1])
    return probs[np.arange(len(labels)), labels]


def adaref_loss(
    student_logits: Tensor,
    reference_logits: Tensor,
    labels,
    tau_ref: float = 1.0,
    tcp_logits: Optional[Tensor] = None,
) -> Tensor:
    """Reference KL weighted per sample by the true-class probability.

    The weight comes from ``reference_logits`` unless ``tcp_logits`` is given
    (e.g. teacher logits); it is a constant with respect to the student.
    """
    rows = _reference_kl_rows(student_logits, reference_logits, tau_ref)
    source = reference_logits if tcp_logits is None else tcp_logits
    tcp = true_class_probability(source, labels, tau_ref).astype(rows.dtype)
    return (rows * tcp).mean()


# -- composites -----------------------------------------------------------------


def distill_loss(outputs: DistillBatchOutputs, config: MethodConfig, heads: Optional[AuxiliaryHeads] = None) -> Tensor:
    """The method's own loss scaled by ``config.weight`` (zero for ``CE``)."""
    m = config.method
    zs = outputs.student_logits
    if m == "CE":
        return zs.sum() * 0.0
    if m == "KD":
        raw = kd_loss(outputs.teacher_logits, zs, outputs.tau)
    elif m == "DKD":
        raw = dkd_loss(outputs.teacher_logits, zs, outputs.labels, outputs.tau, config.params["alpha"], config.params["beta"])
    else:
        pairs = select_pairs(len(outputs.teacher_taps), len(outputs.student_taps), config.taps)
        t_taps = [outputs.teacher_taps[i] for i, _ in pairs]
        s_taps = [outputs.student_taps[j] for _, j in pairs]
        if m == "FitNets":
            raw = fitnets_loss(t_taps, s_taps, heads)
        elif m == "AT":
            raw = at_loss(t_taps, s_taps, config.params["p"])
        elif m == "VID":
            raw = vid_loss(t_taps, s_taps, heads)
        else:
            raw = None
            for k, (t, s) in enumerate(zip(t_taps, s_taps)):
                s = _embed(s)
                if heads is not None and heads.has_projection(k):
                    s = heads.project(k, s)
                if m == "RKD":
                    term = rkd_loss(t, s, config.params["w_d"], config.params["w_a"])
                elif m == "PKT":
                    term = pkt_loss(t, s)
                else:
                    term = cc_loss(t, s)
                raw = term if raw is None else raw + term
    return raw * float(config.weight)


def stage_loss_terms(
    outputs: DistillBatchOutputs,
    config: MethodConfig,
    stage_index: int,
    reference_mode: str = "adaptive",
    heads: Optional[AuxiliaryHeads] = None,
    tau_ref: float = 1.0,
    tcp_source: str = "reference",
) -> dict:
    """Unweighted-by-lambda_r pieces of the stage objective: distill, cls, ref."""
    if stage_index < 1:
        raise ContractError(f"stage index starts at 1, got {stage_index}")
    if reference_mode not in REFERENCE_MODES:
        raise ParameterError(f"unknown reference mode {reference_mode!r}")
    if stage_index == 1 and (reference_mode != "none" or outputs.reference_logits is not None):
        raise ContractError("stage 1 has no reference model")
    terms = {
        "distill": distill_loss(outputs, config, heads),
        "cls": cross_entropy(outputs.student_logits, outputs.labels),
        "ref": None,
    }
    if stage_index > 1 and reference_mode != "none":
        if outputs.reference_logits is None:
            raise ContractError(f"stage {stage_index} with reference mode {reference_mode!r} needs reference logits")
        if reference_mode == "plain":
            terms["ref"] = ref_loss(outputs.student_logits, outputs.reference_logits, tau_ref)
        else:
            if tcp_source not in ("reference", "teacher"):
                raise ParameterError(f"tcp_source must be 'reference' or 'teacher', got {tcp_source!r}")
            tcp_logits = outputs.teacher_logits if tcp_source == "teacher" else None
            terms["ref"] = adaref_loss(outputs.student_logits, outputs.reference_logits, outputs.labels, tau_ref, tcp_logits)
    return terms


def combine_terms(terms: dict, lambda_c: float, lambda_r: float) -> Tensor:
    total = terms["distill"] + terms["cls"] * float(lambda_c)
    if terms["ref"] is not None:
        total = total + terms["ref"] * float(lambda_r)
    return total


def stage_loss(
    outputs: DistillBatchOutputs,
    config: MethodConfig,
    stage_index: int,
    lambda_r: float = 0.5,
    reference_mode: str = "adaptive",
    heads: Optional[AuxiliaryHeads] = None,
    tau_ref: float = 1.0,
    tcp_source: str = "reference",
) -> Tensor:
    """First stage: distill + lambda_c * CE.  Later stages add lambda_r * (adaptive) reference KL."""
    if lambda_r < 0:
        raise ParameterError(f"lambda_r must be >= 0, got {lambda_r}")
    terms = stage_loss_terms(outputs, config, stage_index, reference_mode, heads, tau_ref, tcp_source)
    return combine_terms(terms, config.lambda_c, lambda_r)


def dla_loss(
    outputs: DistillBatchOutputs,
    config_a: MethodConfig,
    config_b: MethodConfig,
    heads_a: Optional[AuxiliaryHeads] = None,
    heads_b: Optional[AuxiliaryHeads] = None,
) -> Tensor:
    """Joint sum of two methods' losses plus CE weighted by ``config_a.lambda_c``."""
    return (
        distill_loss(outputs, config_a, heads_a)
        + distill_loss(outputs, config_b, heads_b)
        + cross_entropy(outputs.student_logits, outputs.labels) * float(config_a.lambda_c)
    )
