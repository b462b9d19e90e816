"""Conv-LSTM respiration regressor with hand-derived gradients.

Per input branch: a depthwise temporal convolution (one width-w filter per
input dimension, stride 1, zero "same" padding, tanh). Branch outputs are
concatenated along the feature axis and fed to a stack of unidirectional
LSTM layers, then a per-frame dense embedding layer with ReLU and a
per-frame linear head squashed by tanh, so estimates live in (-1, 1) like
the compressed targets.

Everything is float64 numpy. Gradients are exact analytic derivatives
(backpropagation through time and through the concordance expression),
verified against central finite differences in the test suite.

LSTM gate columns are ordered (input, forget, output, candidate) inside
every 4U-wide matrix; the forget block is columns [U, 2U).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .belt import RespirationTrace
from .errors import AlignmentError, ParameterError
from .features import FeatureMatrix
from .segments import Segment

# segments per backprop slab: bounds peak memory while keeping GEMMs large
GRAD_CHUNK = 16


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BranchSpec:
    """One input branch: dimensionality and its conv front-end."""

    input_dims: int
    conv_filters: int | None = None
    conv_width: int = 5

    def __post_init__(self) -> None:
        if self.input_dims < 1:
            raise ParameterError("input_dims must be >= 1")
        if self.conv_filters is None:
            self.conv_filters = self.input_dims
        if self.conv_filters != self.input_dims:
            raise ParameterError(
                f"conv_filters ({self.conv_filters}) must equal input_dims "
                f"({self.input_dims}): one filter per input dimension"
            )
        if self.conv_width < 1:
            raise ParameterError("conv_width must be >= 1")


@dataclass
class ModelConfig:
    branches: list[BranchSpec]
    lstm_layers: int = 2
    lstm_units: int = 128
    embed_units: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if not (1 <= len(self.branches) <= 2):
            raise ParameterError("model takes one or two branches")
        if self.lstm_layers < 1:
            raise ParameterError("lstm_layers must be >= 1")
        if self.lstm_units < 1 or self.embed_units < 1:
            raise ParameterError("layer sizes must be >= 1")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    @property
    def total_input_dims(self) -> int:
        return sum(b.input_dims for b in self.branches)

    def to_dict(self) -> dict:
        return {
            "branches": [
                {
                    "input_dims": b.input_dims,
                    "conv_filters": b.conv_filters,
                    "conv_width": b.conv_width,
                }
                for b in self.branches
            ],
            "lstm_layers": self.lstm_layers,
            "lstm_units": self.lstm_units,
            "embed_units": self.embed_units,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            branches=[
                BranchSpec(
                    input_dims=int(b["input_dims"]),
                    conv_filters=int(b["conv_filters"]),
                    conv_width=int(b["conv_width"]),
                )
                for b in d["branches"]
            ],
            lstm_layers=int(d["lstm_layers"]),
            lstm_units=int(d["lstm_units"]),
            embed_units=int(d["embed_units"]),
            seed=int(d["seed"]),
        )


# ---------------------------------------------------------------------------
# parameters


@dataclass
class BranchParams:
    conv_kernel: np.ndarray  # (dims, width); filter d reads dimension d only
    conv_bias: np.ndarray  # (dims,)


@dataclass
class LstmLayerParams:
    w_in: np.ndarray  # (in_dims, 4U)
    w_rec: np.ndarray  # (U, 4U)
    bias: np.ndarray  # (4U,)


@dataclass
class ModelParams:
    """All weights. Shapes are self-describing, so forward needs no config."""

    branches: list[BranchParams]
    lstm: list[LstmLayerParams]
    embed_w: np.ndarray  # (U, E)
    embed_b: np.ndarray  # (E,)
    head_w: np.ndarray  # (E,)
    head_b: np.ndarray  # scalar, stored 0-d

    @property
    def lstm_units(self) -> int:
        return self.lstm[0].w_rec.shape[0]


def named_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Every tensor in declaration order. This order is the checkpoint
    layout and the Adam state layout; keep it stable."""
    out = []
    for i, b in enumerate(params.branches):
        out.append((f"branch{i}.conv_kernel", b.conv_kernel))
        out.append((f"branch{i}.conv_bias", b.conv_bias))
    for i, l in enumerate(params.lstm):
        out.append((f"lstm{i}.w_in", l.w_in))
        out.append((f"lstm{i}.w_rec", l.w_rec))
        out.append((f"lstm{i}.bias", l.bias))
    out.append(("embed_w", params.embed_w))
    out.append(("embed_b", params.embed_b))
    out.append(("head_w", params.head_w))
    out.append(("head_b", params.head_b))
    return out


def _layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Tensor names and shapes in declaration order, from config alone."""
    u, e = config.lstm_units, config.embed_units
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i, b in enumerate(config.branches):
        shapes.append((f"branch{i}.conv_kernel", (b.input_dims, b.conv_width)))
        shapes.append((f"branch{i}.conv_bias", (b.input_dims,)))
    d_in = config.total_input_dims
    for i in range(config.lstm_layers):
        shapes.append((f"lstm{i}.w_in", (d_in, 4 * u)))
        shapes.append((f"lstm{i}.w_rec", (u, 4 * u)))
        shapes.append((f"lstm{i}.bias", (4 * u,)))
        d_in = u
    shapes.append(("embed_w", (u, e)))
    shapes.append(("embed_b", (e,)))
    shapes.append(("head_w", (e,)))
    shapes.append(("head_b", ()))
    return shapes


def param_count(config: ModelConfig) -> int:
    """Exact number of scalar parameters for this architecture."""
    return sum(math.prod(shape) for _, shape in _layout(config))


def _params_from_arrays(config: ModelConfig, arrays: list[np.ndarray]) -> ModelParams:
    it = iter(arrays)
    branches = [
        BranchParams(conv_kernel=next(it), conv_bias=next(it)) for _ in config.branches
    ]
    lstm = [
        LstmLayerParams(w_in=next(it), w_rec=next(it), bias=next(it))
        for _ in range(config.lstm_layers)
    ]
    return ModelParams(
        branches=branches,
        lstm=lstm,
        embed_w=next(it),
        embed_b=next(it),
        head_w=next(it),
        head_b=next(it),
    )


def init_params(config: ModelConfig) -> ModelParams:
    """Deterministic initialization from config.seed.

    Weights are uniform(-s, s) with s = sqrt(1 / fan_in) per matrix; all
    biases start at zero except the LSTM forget-gate block, which starts
    at 1.0 so early training does not forget everything it integrates.
    """
    rng = np.random.default_rng(config.seed)
    u = config.lstm_units
    arrays: list[np.ndarray] = []
    for name, shape in _layout(config):
        if name.endswith("conv_kernel"):
            s = math.sqrt(1.0 / shape[1])  # fan-in of a depthwise filter is its width
            arrays.append(rng.uniform(-s, s, shape))
        elif name.endswith("w_in") or name.endswith("w_rec") or name == "embed_w":
            s = math.sqrt(1.0 / shape[0])
            arrays.append(rng.uniform(-s, s, shape))
        elif name == "head_w":
            s = math.sqrt(1.0 / shape[0])
            arrays.append(rng.uniform(-s, s, shape))
        elif name.endswith(".bias"):
            b = np.zeros(shape)
            b[u : 2 * u] = 1.0  # forget gate
            arrays.append(b)
        else:
            arrays.append(np.zeros(shape))
    return _params_from_arrays(config, arrays)


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        branches=[
            BranchParams(np.zeros_like(b.conv_kernel), np.zeros_like(b.conv_bias))
            for b in params.branches
        ],
        lstm=[
            LstmLayerParams(
                np.zeros_like(l.w_in), np.zeros_like(l.w_rec), np.zeros_like(l.bias)
            )
            for l in params.lstm
        ],
        embed_w=np.zeros_like(params.embed_w),
        embed_b=np.zeros_like(params.embed_b),
        head_w=np.zeros_like(params.head_w),
        head_b=np.zeros_like(params.head_b),
    )


# ---------------------------------------------------------------------------
# concordance correlation


@dataclass
class CccStats:
    """Population moments of one (estimate, target) segment pair."""

    mu_x: float
    mu_y: float
    var_x: float
    var_y: float
    rho: float


def _moments(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ParameterError("ccc needs two equal-length vectors")
    if x.size < 2:
        raise ParameterError("ccc needs at least two samples")
    mx = float(x.mean())
    my = float(y.mean())
    dx = x - mx
    dy = y - my
    var_x = float(dx @ dx) / x.size
    var_y = float(dy @ dy) / y.size
    cov = float(dx @ dy) / x.size
    return mx, my, var_x, var_y, cov


def ccc_stats(x: np.ndarray, y: np.ndarray) -> CccStats:
    mx, my, var_x, var_y, cov = _moments(x, y)
    denom = math.sqrt(var_x * var_y)
    rho = cov / denom if denom > 0 else 0.0
    rho = min(1.0, max(-1.0, rho))
    return CccStats(mu_x=mx, mu_y=my, var_x=var_x, var_y=var_y, rho=rho)


def ccc(x: np.ndarray, y: np.ndarray) -> float:
    """Concordance correlation: 2*cov / (var_x + var_y + (mu_x - mu_y)^2).

    Variances are population (1/N) moments. When both variances are zero
    the value is 0 by convention.
    """
    mx, my, var_x, var_y, cov = _moments(x, y)
    denom = var_x + var_y + (mx - my) ** 2
    if denom == 0.0:
        return 0.0
    return 2.0 * cov / denom


def _ccc_and_grad(est: np.ndarray, ref: np.ndarray):
    """CCC plus its gradient in the estimate.

    With D = var_e + var_r + (mu_e - mu_r)^2,
      dCCC/de_i = (2 / (N D)) * ((r_i - mu_r) - CCC * (e_i - mu_r)).
    """
    me, mr, var_e, var_r, cov = _moments(est, ref)
    denom = var_e + var_r + (me - mr) ** 2
    if denom == 0.0:
        return 0.0, np.zeros_like(est)
    value = 2.0 * cov / denom
    grad = (2.0 / (est.size * denom)) * ((ref - mr) - value * (est - mr))
    return value, grad


# ---------------------------------------------------------------------------
# forward / backward


def _conv_pad(x: np.ndarray, width: int) -> np.ndarray:
    # "same" zero padding: (w-1)//2 leading zeros, the rest trailing
    b, t, d = x.shape
    left = (width - 1) // 2
    xp = np.zeros((b, t + width - 1, d))
    xp[:, left : left + t, :] = x
    return xp


def _forward_branch(x: np.ndarray, bp: BranchParams, want_cache: bool):
    b, t, d = x.shape
    if d != bp.conv_kernel.shape[0]:
        raise AlignmentError(
            f"branch expects {bp.conv_kernel.shape[0]} dims, got {d}"
        )
    width = bp.conv_kernel.shape[1]
    xp = _conv_pad(x, width)
    pre = np.empty_like(x)
    pre[:] = bp.conv_bias
    for w in range(width):
        pre += xp[:, w : w + t, :] * bp.conv_kernel[:, w]
    act = np.tanh(pre)
    cache = (xp, act) if want_cache else None
    return act, cache


def _backward_branch(d_act: np.ndarray, bp: BranchParams, cache):
    xp, act = cache
    t = d_act.shape[1]
    width = bp.conv_kernel.shape[1]
    d_pre = d_act * (1.0 - act * act)
    d_kernel = np.empty_like(bp.conv_kernel)
    for w in range(width):
        d_kernel[:, w] = np.einsum("btd,btd->d", d_pre, xp[:, w : w + t, :])
    d_bias = d_pre.sum(axis=(0, 1))
    return d_kernel, d_bias


def _forward_lstm(zin: np.ndarray, lp: LstmLayerParams, want_cache: bool):
    b, t, d_in = zin.shape
    u = lp.w_rec.shape[0]
    gates = (zin.reshape(b * t, d_in) @ lp.w_in).reshape(b, t, 4 * u)
    gates += lp.bias
    c_seq = np.empty((b, t, u))
    tc_seq = np.empty((b, t, u))
    h_seq = np.empty((b, t, u))
    h = np.zeros((b, u))
    c = np.zeros((b, u))
    for step in range(t):
        s = gates[:, step, :]
        s += h @ lp.w_rec
        expit(s[:, : 3 * u], out=s[:, : 3 * u])  # i, f, o
        np.tanh(s[:, 3 * u :], out=s[:, 3 * u :])  # candidate g
        i_g = s[:, :u]
        f_g = s[:, u : 2 * u]
        o_g = s[:, 2 * u : 3 * u]
        g_g = s[:, 3 * u :]
        c = f_g * c + i_g * g_g
        tc = np.tanh(c)
        h = o_g * tc
        c_seq[:, step] = c
        tc_seq[:, step] = tc
        h_seq[:, step] = h
    cache = (zin, gates, c_seq, tc_seq, h_seq) if want_cache else None
    return h_seq, cache


def _backward_lstm(d_h_seq: np.ndarray, lp: LstmLayerParams, cache):
    zin, gates, c_seq, tc_seq, _h_seq = cache
    b, t, d_in = zin.shape
    u = lp.w_rec.shape[0]
    d_s = np.empty((b, t, 4 * u))
    w_rec_t = lp.w_rec.T
    dh = np.zeros((b, u))
    dc = np.zeros((b, u))
    for step in range(t - 1, -1, -1):
        g_step = gates[:, step, :]
        i_g = g_step[:, :u]
        f_g = g_step[:, u : 2 * u]
        o_g = g_step[:, 2 * u : 3 * u]
        g_g = g_step[:, 3 * u :]
        tc = tc_seq[:, step]
        dh_t = dh + d_h_seq[:, step]
        d_o = dh_t * tc
        dc_t = dh_t * o_g
        dc_t *= 1.0 - tc * tc
        dc_t += dc
        d_i = dc_t * g_g
        d_g = dc_t * i_g
        if step > 0:
            d_f = dc_t * c_seq[:, step - 1]
        else:
            d_f = np.zeros_like(dc_t)  # c_{-1} is the zero initial state
        dc = dc_t * f_g
        slab = d_s[:, step, :]
        slab[:, :u] = d_i * i_g * (1.0 - i_g)
        slab[:, u : 2 * u] = d_f * f_g * (1.0 - f_g)
        slab[:, 2 * u : 3 * u] = d_o * o_g * (1.0 - o_g)
        slab[:, 3 * u :] = d_g * (1.0 - g_g * g_g)
        dh = slab @ w_rec_t
    d_s_flat = d_s.reshape(b * t, 4 * u)
    d_bias = d_s_flat.sum(axis=0)
    d_w_in = zin.reshape(b * t, d_in).T @ d_s_flat
    # h_{t-1} pairs with d_s_t; the t=0 term vanishes because h_{-1} = 0
    h_prev = np.ascontiguousarray(_h_seq[:, :-1]).reshape(b * (t - 1), u) if t > 1 else None
    if h_prev is not None:
        d_w_rec = h_prev.T @ np.ascontiguousarray(d_s[:, 1:]).reshape(b * (t - 1), 4 * u)
    else:
        d_w_rec = np.zeros_like(lp.w_rec)
    d_zin = (d_s_flat @ lp.w_in.T).reshape(b, t, d_in)
    return d_w_in, d_w_rec, d_bias, d_zin


def _forward_batch(params: ModelParams, xs: list[np.ndarray], want_cache: bool):
    """xs: one (B, T, D_b) float64 array per branch. Returns (y, cache)."""
    branch_outs = []
    branch_caches = []
    for x, bp in zip(xs, params.branches):
        out, cache = _forward_branch(x, bp, want_cache)
        branch_outs.append(out)
        branch_caches.append(cache)
    z = branch_outs[0] if len(branch_outs) == 1 else np.concatenate(branch_outs, axis=2)
    lstm_caches = []
    for lp in params.lstm:
        z, cache = _forward_lstm(z, lp, want_cache)
        lstm_caches.append(cache)
    b, t, u = z.shape
    m = (z.reshape(b * t, u) @ params.embed_w).reshape(b, t, -1)
    m += params.embed_b
    mask = m > 0
    r = np.maximum(m, 0.0)
    y_pre = r.reshape(b * t, -1) @ params.head_w
    y_pre = y_pre.reshape(b, t)
    y_pre += params.head_b
    y = np.tanh(y_pre)
    cache = None
    if want_cache:
        cache = (xs, branch_caches, lstm_caches, z, mask, r, y)
    return y, cache


def _backward_batch(params: ModelParams, cache, d_y: np.ndarray, grads: ModelParams):
    """Accumulate parameter gradients into `grads` given dLoss/dy."""
    xs, branch_caches, lstm_caches, h_top, mask, r, y = cache
    b, t = d_y.shape
    u = params.embed_w.shape[0]
    e = params.embed_w.shape[1]
    d_pre = d_y * (1.0 - y * y)
    d_pre_flat = d_pre.reshape(b * t)
    r_flat = r.reshape(b * t, e)
    grads.head_w += r_flat.T @ d_pre_flat
    grads.head_b += d_pre_flat.sum()
    d_r = d_pre[:, :, None] * params.head_w
    d_r *= mask
    d_m_flat = d_r.reshape(b * t, e)
    grads.embed_w += h_top.reshape(b * t, u).T @ d_m_flat
    grads.embed_b += d_m_flat.sum(axis=0)
    d_z = (d_m_flat @ params.embed_w.T).reshape(b, t, u)
    for lp, lcache, lgrad in zip(
        reversed(params.lstm), reversed(lstm_caches), reversed(grads.lstm)
    ):
        d_w_in, d_w_rec, d_bias, d_z = _backward_lstm(d_z, lp, lcache)
        lgrad.w_in += d_w_in
        lgrad.w_rec += d_w_rec
        lgrad.bias += d_bias
    offset = 0
    for bp, bcache, bgrad, x in zip(params.branches, branch_caches, grads.branches, xs):
        d = x.shape[2]
        d_kernel, d_bias = _backward_branch(d_z[:, :, offset : offset + d], bp, bcache)
        bgrad.conv_kernel += d_kernel
        bgrad.conv_bias += d_bias
        offset += d


def forward(params: ModelParams, features: list[FeatureMatrix]) -> RespirationTrace:
    """Estimate a respiration trace from per-branch features.

    Output has one value per input frame, in (-1, 1). Deterministic and
    pure: same params and features always give the same trace.
    """
    if len(features) != len(params.branches):
        raise AlignmentError(
            f"model has {len(params.branches)} branches, got {len(features)} feature streams"
        )
    n = features[0].n_frames
    rate = features[0].frame_rate_hz
    for f in features[1:]:
        if f.n_frames != n:
            raise AlignmentError(
                f"branches disagree on frame count: {n} vs {f.n_frames}"
            )
        if f.frame_rate_hz != rate:
            raise AlignmentError(
                f"branches disagree on frame rate: {rate} vs {f.frame_rate_hz}"
            )
    xs = [f.data[None, :, :] for f in features]
    y, _ = _forward_batch(params, xs, want_cache=False)
    return RespirationTrace(y[0], rate)


def loss_and_grad(params: ModelParams, batch: list[Segment]):
    """Mean over segments of (1 - CCC(estimate, target)), with gradients.

    Segments whose target is constant have no defined CCC; they are
    skipped with a warning. Gradients are accumulated in fixed segment
    order so results are bit-reproducible.
    """
    if not batch:
        raise ParameterError("empty batch")
    usable = []
    skipped = 0
    for seg in batch:
        if float(seg.target.values.std()) == 0.0:
            skipped += 1
        else:
            usable.append(seg)
    if skipped:
        warnings.warn(
            f"skipped {skipped} segment(s) with constant targets; CCC undefined there",
            stacklevel=2,
        )
    if not usable:
        raise ParameterError("all segments in the batch have constant targets")
    n_branches = len(params.branches)
    for seg in usable:
        if len(seg.features) != n_branches:
            raise AlignmentError(
                f"segment has {len(seg.features)} branches, model expects {n_branches}"
            )
    total = len(usable)
    grads = zeros_like_params(params)
    loss = 0.0
    # group by shape so each slab stacks cleanly; order inside groups is
    # batch order, and group order follows first appearance
    groups: dict[tuple, list[Segment]] = {}
    for seg in usable:
        key = (seg.n_frames, tuple(f.dims for f in seg.features))
        groups.setdefault(key, []).append(seg)
    for segs in groups.values():
        for lo in range(0, len(segs), GRAD_CHUNK):
            chunk = segs[lo : lo + GRAD_CHUNK]
            xs = [
                np.stack([seg.features[bi].data for seg in chunk])
                for bi in range(n_branches)
            ]
            y, cache = _forward_batch(params, xs, want_cache=True)
            d_y = np.empty_like(y)
            for row, seg in enumerate(chunk):
                value, g = _ccc_and_grad(y[row], seg.target.values)
                loss += (1.0 - value) / total
                # d(1 - ccc)/dy = -g, averaged over the batch
                d_y[row] = g * (-1.0 / total)
            _backward_batch(params, cache, d_y, grads)
    return loss, grads


def batch_loss(params: ModelParams, batch: list[Segment]) -> float:
    """Forward-only counterpart of loss_and_grad (same skipping rules)."""
    if not batch:
        raise ParameterError("empty batch")
    usable = [seg for seg in batch if float(seg.target.values.std()) != 0.0]
    if not usable:
        raise ParameterError("all segments in the batch have constant targets")
    total = len(usable)
    loss = 0.0
    groups: dict[tuple, list[Segment]] = {}
    for seg in usable:
        key = (seg.n_frames, tuple(f.dims for f in seg.features))
        groups.setdefault(key, []).append(seg)
    for segs in groups.values():
        for lo in range(0, len(segs), GRAD_CHUNK):
            chunk = segs[lo : lo + GRAD_CHUNK]
            xs = [
                np.stack([seg.features[bi].data for seg in chunk])
                for bi in range(len(params.branches))
            ]
            y, _ = _forward_batch(params, xs, want_cache=False)
            for row, seg in enumerate(chunk):
                loss += (1.0 - ccc(y[row], seg.target.values)) / total
    return loss
