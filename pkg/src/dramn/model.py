"""The recurrent adjacency memory cell and its probability readout.

Each sequence step compresses a raw window to per-channel embeddings, mixes
the five adjacency layers with trainable scalars into one effective graph,
graph-convolves both the embeddings and the previous hidden state, and runs
an LSTM-style gate update. The final hidden state is pooled over channels
into a single instability probability.

The hot path is the batched trace (`forward_trace_batch`), which records
every intermediate needed for exact reverse-mode differentiation. Because
the temporal compressor is affine in the window samples, the trace consumes
per-window channel means instead of full windows; `temporal_compress`
retains the sample-level contract for single windows.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .adjacency import AdjacencyTensor, SequenceSample
from .errors import DataError, NumericalFailureError

CHECKPOINT_MAGIC = b"DRMC"
CHECKPOINT_VERSION = 1

# Flattened storage order of every trainable array; also the checkpoint layout.
PARAM_ORDER = (
    "conv_scale", "conv_shift", "proj_w", "proj_b",
    "alpha",
    "w_xi", "w_hi", "b_i",
    "w_xf", "w_hf", "b_f",
    "w_xo", "w_ho", "b_o",
    "w_xg", "w_hg", "b_g",
    "readout_w", "readout_b",
)

GCN_PARAM_ORDER = (
    "conv_scale", "conv_shift", "proj_w", "proj_b",
    "alpha", "w_g", "b_g", "readout_w", "readout_b",
)


@dataclass(frozen=True)
class ModelDims:
    """Shape contract: channels, window samples, embed/hidden widths, layers, steps."""

    n: int
    t: int
    f: int = 64
    h: int = 64
    d: int = 5
    l_seq: int = 5

    def __post_init__(self):
        for name in ("n", "t", "f", "h", "d", "l_seq"):
            if getattr(self, name) < 1:
                raise DataError(f"dimension {name} must be >= 1, got {getattr(self, name)}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "t", "f", "h", "d", "l_seq")}


@dataclass(eq=False)
class ModelParams:
    """All trainable arrays of the cell, compressor, layer mixing, and readout."""

    dims: ModelDims
    conv_scale: np.ndarray  # ()
    conv_shift: np.ndarray  # ()
    proj_w: np.ndarray      # (F,)
    proj_b: np.ndarray      # (F,)
    alpha: np.ndarray       # (d,)
    w_xi: np.ndarray        # (F, H)
    w_hi: np.ndarray        # (H, H)
    b_i: np.ndarray         # (H,)
    w_xf: np.ndarray
    w_hf: np.ndarray
    b_f: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_o: np.ndarray
    w_xg: np.ndarray
    w_hg: np.ndarray
    b_g: np.ndarray
    readout_w: np.ndarray   # (H,)
    readout_b: np.ndarray   # ()

    def tree(self) -> dict:
        """Name -> array view in PARAM_ORDER; arrays are the live buffers."""
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy(self) -> "ModelParams":
        return ModelParams(dims=self.dims, **{k: v.copy() for k, v in self.tree().items()})


@dataclass(eq=False)
class GcnParams:
    """Single-shot graph-convolution baseline: compress, convolve once, read out."""

    dims: ModelDims
    conv_scale: np.ndarray
    conv_shift: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    alpha: np.ndarray
    w_g: np.ndarray         # (F, H)
    b_g: np.ndarray         # (H,)
    readout_w: np.ndarray
    readout_b: np.ndarray

    def tree(self) -> dict:
        return {name: getattr(self, name) for name in GCN_PARAM_ORDER}

    def copy(self) -> "GcnParams":
        return GcnParams(dims=self.dims, **{k: v.copy() for k, v in self.tree().items()})


@dataclass(eq=False)
class CellState:
    """Hidden and memory state, one row per channel."""

    h: np.ndarray  # (n, H)
    c: np.ndarray  # (n, H)

    @classmethod
    def zeros(cls, n: int, h: int) -> "CellState":
        return cls(h=np.zeros((n, h)), c=np.zeros((n, h)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init.

    The compressor's pointwise scale starts at exactly 1 (identity
    passthrough): drawing it randomly can throttle the whole forward pass
    since every downstream activation is proportional to it. The projection
    bias starts nonzero so node embeddings have a constant component even
    for zero-mean windows; without it the graph convolution multiplies
    zeros and the adjacency input is invisible until the bias drifts away
    from the origin. The forget-gate bias starts at 1.0 to ease early
    gradient flow; the layer-mixing scalars start uniform at 1/d.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0D0A]))

    def u(fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    f, h, d = dims.f, dims.h, dims.d
    return ModelParams(
        dims=dims,
        conv_scale=np.ones(()),
        conv_shift=np.zeros(()),
        proj_w=u(1, f),
        proj_b=0.5 * u(1, f),
        alpha=np.full(d, 1.0 / d),
        w_xi=u(f, f, h), w_hi=u(h, h, h), b_i=np.zeros(h),
        w_xf=u(f, f, h), w_hf=u(h, h, h), b_f=np.ones(h),
        w_xo=u(f, f, h), w_ho=u(h, h, h), b_o=np.zeros(h),
        w_xg=u(f, f, h), w_hg=u(h, h, h), b_g=np.zeros(h),
        readout_w=u(h, h),
        readout_b=np.zeros(()),
    )


def init_gcn_params(dims: ModelDims, seed: int) -> GcnParams:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6C17]))

    def u(fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    f, h, d = dims.f, dims.h, dims.d
    return GcnParams(
        dims=dims,
        conv_scale=np.ones(()),
        conv_shift=np.zeros(()),
        proj_w=u(1, f),
        proj_b=0.5 * u(1, f),
        alpha=np.full(d, 1.0 / d),
        w_g=u(f, f, h),
        b_g=np.zeros(h),
        readout_w=u(h, h),
        readout_b=np.zeros(()),
    )


def zero_gradients(params) -> dict:
    """A gradient tree of zeros congruent with the parameter tree."""
    return {k: np.zeros_like(v) for k, v in params.tree().items()}


def compress_means(means: np.ndarray, params) -> np.ndarray:
    """Embed pooled channel values: scale/shift then project 1 -> F.

    ``means`` has shape (..., n); the result appends an F axis.
    """
    pooled = params.conv_scale * means + params.conv_shift
    return pooled[..., None] * params.proj_w + params.proj_b


def temporal_compress(x_t: np.ndarray, params) -> np.ndarray:
    """Compress one raw window (T x n) to channel embeddings (n x F).

    Pointwise scale and shift over time, global average over the T axis,
    then an affine projection to F dimensions. The time average commutes
    with the affine map, so this reduces to embedding the channel means.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 2:
        raise DataError(f"window slice must be T x n, got shape {x_t.shape}")
    if x_t.shape != (params.dims.t, params.dims.n):
        raise DataError(
            f"window slice shape {x_t.shape} does not match dims "
            f"({params.dims.t}, {params.dims.n})"
        )
    return compress_means(x_t.mean(axis=0), params)


def mix_layers(tensor, alpha: np.ndarray) -> np.ndarray:
    """Collapse the layer stack into one effective graph: sum_k alpha_k layer_k."""
    layers = tensor.layers if isinstance(tensor, AdjacencyTensor) else np.asarray(tensor)
    if layers.shape[-1] != alpha.shape[0]:
        raise DataError(
            f"{layers.shape[-1]} layers cannot be mixed by {alpha.shape[0]} weights"
        )
    return layers @ alpha


def cell_step(x_hat: np.ndarray, state: CellState, g_eff: np.ndarray,
              params: ModelParams) -> CellState:
    """One gated update with graph-convolved input and hidden pathways."""
    xt = g_eff @ x_hat
    ht = g_eff @ state.h
    i = _sigmoid(xt @ params.w_xi + ht @ params.w_hi + params.b_i)
    f = _sigmoid(xt @ params.w_xf + ht @ params.w_hf + params.b_f)
    o = _sigmoid(xt @ params.w_xo + ht @ params.w_ho + params.b_o)
    g = np.tanh(xt @ params.w_xg + ht @ params.w_hg + params.b_g)
    c = f * state.c + i * g
    h = o * np.tanh(c)
    if not (np.isfinite(h).all() and np.isfinite(c).all()):
        raise NumericalFailureError("cell update produced non-finite state")
    return CellState(h=h, c=c)


@dataclass(eq=False)
class ForwardTrace:
    """Everything the reverse pass needs, batched over samples."""

    means: np.ndarray        # (B, L, n)
    layers: np.ndarray       # (B, L, n, n, d) or None in identity-graph mode
    pooled: np.ndarray       # (B, L, n)
    xhat: np.ndarray         # (B, L, n, F)
    geff: np.ndarray         # (B, L, n, n) or None
    xt: list                 # per step (B, n, F)
    ht: list                 # per step (B, n, H)
    h_prev: list             # per step (B, n, H)
    c_prev: list             # per step (B, n, H)
    gates: list              # per step dict of i/f/o/g arrays (B, n, H)
    tanh_c: list             # per step (B, n, H)
    h_last: np.ndarray       # (B, n, H)
    score: np.ndarray        # (B,)
    p: np.ndarray            # (B,)


def forward_trace_batch(means: np.ndarray, layers, params: ModelParams,
                        identity_graph: bool = False) -> ForwardTrace:
    """Batched forward pass recording intermediates.

    ``means``: (B, L, n) per-window channel means. ``layers``: (B, L, n, n, d)
    adjacency stacks, ignored when ``identity_graph`` is set (the ablation
    that reduces the cell to a per-channel LSTM).
    """
    means = np.asarray(means, dtype=np.float64)
    b, l, n = means.shape
    pooled = params.conv_scale * means + params.conv_shift
    xhat = pooled[..., None] * params.proj_w + params.proj_b

    geff = None
    if not identity_graph:
        layers = np.asarray(layers, dtype=np.float64)
        geff = layers @ params.alpha  # (B, L, n, n)

    h = np.zeros((b, n, params.dims.h))
    c = np.zeros((b, n, params.dims.h))
    xt_l, ht_l, hp_l, cp_l, gates_l, tanh_l = [], [], [], [], [], []
    for t in range(l):
        xh = xhat[:, t]
        if identity_graph:
            xt, ht = xh, h
        else:
            gt = geff[:, t]
            xt = gt @ xh
            ht = gt @ h
        i = _sigmoid(xt @ params.w_xi + ht @ params.w_hi + params.b_i)
        f = _sigmoid(xt @ params.w_xf + ht @ params.w_hf + params.b_f)
        o = _sigmoid(xt @ params.w_xo + ht @ params.w_ho + params.b_o)
        g = np.tanh(xt @ params.w_xg + ht @ params.w_hg + params.b_g)
        xt_l.append(xt)
        ht_l.append(ht)
        hp_l.append(h)
        cp_l.append(c)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates_l.append({"i": i, "f": f, "o": o, "g": g})
        tanh_l.append(tc)

    score = (h @ params.readout_w).mean(axis=1) + params.readout_b
    p = _sigmoid(score)
    if not np.isfinite(p).all():
        raise NumericalFailureError("forward pass produced non-finite probabilities")
    return ForwardTrace(
        means=means, layers=None if identity_graph else layers, pooled=pooled,
        xhat=xhat, geff=geff, xt=xt_l, ht=ht_l, h_prev=hp_l, c_prev=cp_l,
        gates=gates_l, tanh_c=tanh_l, h_last=h, score=score, p=p,
    )


def _sample_arrays(sample: SequenceSample):
    means = sample.channel_means[None, ...]
    layers = sample.layer_stack[None, ...]
    return means, layers


def forward(sample: SequenceSample, params: ModelParams,
            identity_graph: bool = False) -> float:
    """Instability probability in [0, 1] for one sequence sample."""
    means, layers = _sample_arrays(sample)
    _check_sample_dims(means, layers, params.dims)
    trace = forward_trace_batch(means, layers, params, identity_graph=identity_graph)
    return float(trace.p[0])


def _check_sample_dims(means, layers, dims: ModelDims):
    b, l, n = means.shape
    if l != dims.l_seq or n != dims.n:
        raise DataError(
            f"sample has {l} steps x {n} channels, model expects "
            f"{dims.l_seq} x {dims.n}"
        )
    if layers is not None and layers.shape[2:] != (n, n, dims.d):
        raise DataError(
            f"adjacency stack shape {layers.shape[2:]} does not match "
            f"({n}, {n}, {dims.d})"
        )


def gcn_forward_trace_batch(means: np.ndarray, layers: np.ndarray, params: GcnParams):
    """Baseline forward: embed the last window, convolve once, pool, read out."""
    means = np.asarray(means, dtype=np.float64)
    last = means[:, -1, :]
    pooled = params.conv_scale * last + params.conv_shift
    xhat = pooled[..., None] * params.proj_w + params.proj_b
    layers = np.asarray(layers, dtype=np.float64)
    geff = layers[:, -1] @ params.alpha
    xt = geff @ xhat
    z = np.tanh(xt @ params.w_g + params.b_g)
    score = (z @ params.readout_w).mean(axis=1) + params.readout_b
    p = _sigmoid(score)
    if not np.isfinite(p).all():
        raise NumericalFailureError("forward pass produced non-finite probabilities")
    return {
        "last": last, "pooled": pooled, "xhat": xhat, "geff": geff,
        "g_layers": layers[:, -1], "xt": xt, "z": z, "score": score, "p": p,
    }


def gcn_forward(sample: SequenceSample, params: GcnParams) -> float:
    means, layers = _sample_arrays(sample)
    trace = gcn_forward_trace_batch(means, layers, params)
    return float(trace["p"][0])


def save_checkpoint(params, path, seed: int = 0, meta: dict = None) -> None:
    """Write a bit-exact checkpoint: JSON header + flat float64 LE arrays + CRC.

    Arrays follow PARAM_ORDER (or GCN_PARAM_ORDER for the baseline); the
    header records dims, seed, the format version, and the array kind.
    """
    kind = "gcn" if isinstance(params, GcnParams) else "dramn"
    order = GCN_PARAM_ORDER if kind == "gcn" else PARAM_ORDER
    tree = params.tree()
    payload = b"".join(
        np.ascontiguousarray(tree[name], dtype="<f8").tobytes() for name in order
    )
    header = {
        "format": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "dims": params.dims.as_dict(),
        "seed": int(seed),
        "crc32": zlib.crc32(payload),
    }
    if meta:
        header["meta"] = meta
    head_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(head_bytes)))
        fh.write(head_bytes)
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, header dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (head_len,) = struct.unpack_from("<I", blob, 4)
    header = json.loads(blob[8:8 + head_len].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = blob[8 + head_len:]
    if zlib.crc32(payload) != header["crc32"]:
        raise DataError(f"{path}: checkpoint payload checksum mismatch")
    dims = ModelDims(**header["dims"])
    kind = header.get("kind", "dramn")
    if kind == "gcn":
        template, order, cls = init_gcn_params(dims, 0), GCN_PARAM_ORDER, GcnParams
    else:
        template, order, cls = init_params(dims, 0), PARAM_ORDER, ModelParams
    arrays = {}
    offset = 0
    for name in order:
        shape = template.tree()[name].shape
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += count * 8
    if offset != len(payload):
        raise DataError(f"{path}: checkpoint payload length mismatch")
    return cls(dims=dims, **arrays), header
