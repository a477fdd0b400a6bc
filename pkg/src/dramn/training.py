"""Supervised training: exact reverse-mode gradients, AdamW, early stopping.

Gradients are derived by hand from the forward trace rather than by an
autodiff framework, so the finite-difference check in the test suite is the
authority on their correctness. The loss is the mean absolute error between
the predicted instability probability and the binary label.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalFailureError
from .model import (
    GcnParams,
    ModelDims,
    ModelParams,
    forward_trace_batch,
    gcn_forward_trace_batch,
    init_gcn_params,
    init_params,
    zero_gradients,
)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and split settings."""

    lr: float = 1e-3
    weight_decay: float = 1e-2
    epochs: int = 100
    batch_size: int = 32
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0
    loss: str = "mae"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0 or not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("val/test fractions must lie in (0, 1)")
        for name in ("lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.loss != "mae":
            raise ConfigError(f"unsupported loss {self.loss!r}")


@dataclass(eq=False)
class Standardizer:
    """Per-channel z-score transform fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray
    std_floor: float = 1e-9

    @classmethod
    def fit_windows(cls, windows) -> "Standardizer":
        """Accumulate channel statistics over an iterable of windows."""
        count = 0
        total = None
        total_sq = None
        for w in windows:
            data = w.data
            if total is None:
                total = data.sum(axis=0)
                total_sq = (data * data).sum(axis=0)
            else:
                total += data.sum(axis=0)
                total_sq += (data * data).sum(axis=0)
            count += data.shape[0]
        if count == 0:
            raise DataError("cannot fit a standardizer on zero windows")
        mean = total / count
        var = np.maximum(total_sq / count - mean * mean, 0.0)
        return cls(mean=mean, std=np.sqrt(var))

    def _safe_std(self) -> np.ndarray:
        return np.maximum(self.std, self.std_floor)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Standardize along the trailing channel axis."""
        return (x - self.mean) / self._safe_std()

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return x * self._safe_std() + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "std_floor": self.std_floor}

    @classmethod
    def from_dict(cls, obj: dict) -> "Standardizer":
        return cls(mean=np.array(obj["mean"], dtype=np.float64),
                   std=np.array(obj["std"], dtype=np.float64),
                   std_floor=float(obj.get("std_floor", 1e-9)))


def mae_loss(p: float, y: float) -> float:
    """Absolute error between a probability and a binary label."""
    return abs(float(p) - float(y))


def mae_batch(p: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(p) - np.asarray(y))))


_GATES = (
    ("i", "w_xi", "w_hi", "b_i"),
    ("f", "w_xf", "w_hf", "b_f"),
    ("o", "w_xo", "w_ho", "b_o"),
    ("g", "w_xg", "w_hg", "b_g"),
)


def backward_batch(means: np.ndarray, layers, params: ModelParams, y: np.ndarray,
                   identity_graph: bool = False):
    """Loss and exact gradients of the batch-mean MAE for the recurrent model.

    Returns (per-sample losses, gradient tree). The layer-mixing gradient
    collects contributions from both graph-convolution pathways (input and
    hidden); in identity-graph mode it is zero and the adjacency stack is
    ignored.
    """
    trace = forward_trace_batch(means, layers, params, identity_graph=identity_graph)
    b, l, n = trace.means.shape
    h_dim = params.dims.h
    y = np.asarray(y, dtype=np.float64)
    losses = np.abs(trace.p - y)

    grads = zero_gradients(params)
    dp = np.sign(trace.p - y) / b
    ds = dp * trace.p * (1.0 - trace.p)
    grads["readout_b"][...] = ds.sum()
    grads["readout_w"][...] = np.einsum("b,bh->h", ds, trace.h_last.mean(axis=1))

    dh = ds[:, None, None] * params.readout_w / n
    dc_carry = np.zeros((b, n, h_dim))
    dxhat = np.zeros_like(trace.xhat)
    dgeff = None if identity_graph else np.zeros_like(trace.geff)

    for t in range(l - 1, -1, -1):
        gates = trace.gates[t]
        tc = trace.tanh_c[t]
        i, f, o, g = gates["i"], gates["f"], gates["o"], gates["g"]
        do = dh * tc
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        dpre = {
            "i": dc * g * i * (1.0 - i),
            "f": dc * trace.c_prev[t] * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dc * i * (1.0 - g * g),
        }
        dc_carry = dc * f

        xt, ht = trace.xt[t], trace.ht[t]
        dxt = np.zeros_like(xt)
        dht = np.zeros_like(ht)
        for name, wx, wh, bias in _GATES:
            d = dpre[name]
            grads[wx] += np.einsum("bnf,bnh->fh", xt, d)
            grads[wh] += np.einsum("bnh,bnk->hk", ht, d)
            grads[bias] += d.sum(axis=(0, 1))
            dxt += d @ params.tree()[wx].T
            dht += d @ params.tree()[wh].T

        if identity_graph:
            dxhat[:, t] = dxt
            dh = dht
        else:
            gt = trace.geff[:, t]
            dgeff[:, t] = (
                np.einsum("bnf,bmf->bnm", dxt, trace.xhat[:, t])
                + np.einsum("bnh,bmh->bnm", dht, trace.h_prev[t])
            )
            gt_t = np.swapaxes(gt, 1, 2)
            dxhat[:, t] = gt_t @ dxt
            dh = gt_t @ dht

    if not identity_graph:
        grads["alpha"][...] = np.einsum("blnm,blnmd->d", dgeff, trace.layers)

    dpooled = dxhat @ params.proj_w
    grads["proj_w"][...] = np.einsum("blnf,bln->f", dxhat, trace.pooled)
    grads["proj_b"][...] = dxhat.sum(axis=(0, 1, 2))
    grads["conv_scale"][...] = (dpooled * trace.means).sum()
    grads["conv_shift"][...] = dpooled.sum()

    _check_grads_finite(grads)
    return losses, grads


def gcn_backward_batch(means: np.ndarray, layers: np.ndarray, params: GcnParams,
                       y: np.ndarray):
    """Loss and exact gradients for the single-shot graph-convolution baseline."""
    tr = gcn_forward_trace_batch(means, layers, params)
    b, n = tr["last"].shape
    y = np.asarray(y, dtype=np.float64)
    losses = np.abs(tr["p"] - y)

    grads = zero_gradients(params)
    dp = np.sign(tr["p"] - y) / b
    ds = dp * tr["p"] * (1.0 - tr["p"])
    grads["readout_b"][...] = ds.sum()
    grads["readout_w"][...] = np.einsum("b,bnh->h", ds, tr["z"]) / n
    dz = ds[:, None, None] * params.readout_w / n
    dpre = dz * (1.0 - tr["z"] ** 2)
    grads["w_g"][...] = np.einsum("bnf,bnh->fh", tr["xt"], dpre)
    grads["b_g"][...] = dpre.sum(axis=(0, 1))
    dxt = dpre @ params.w_g.T
    dgeff = np.einsum("bnf,bmf->bnm", dxt, tr["xhat"])
    grads["alpha"][...] = np.einsum("bnm,bnmd->d", dgeff, tr["g_layers"])
    dxhat = np.swapaxes(tr["geff"], 1, 2) @ dxt
    dpooled = dxhat @ params.proj_w
    grads["proj_w"][...] = np.einsum("bnf,bn->f", dxhat, tr["pooled"])
    grads["proj_b"][...] = dxhat.sum(axis=(0, 1))
    grads["conv_scale"][...] = (dpooled * tr["last"]).sum()
    grads["conv_shift"][...] = dpooled.sum()

    _check_grads_finite(grads)
    return losses, grads


def _check_grads_finite(grads: dict) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalFailureError(f"non-finite gradient in {name}")


def backward(sample, params: ModelParams, y: float, identity_graph: bool = False):
    """Loss and gradients for one sample; see backward_batch."""
    means = sample.channel_means[None, ...]
    layers = None if identity_graph else sample.layer_stack[None, ...]
    losses, grads = backward_batch(means, layers, params, np.array([y]),
                                   identity_graph=identity_graph)
    return float(losses[0]), grads


@dataclass(eq=False)
class AdamWState:
    """First/second moment accumulators and the step counter."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params) -> "AdamWState":
        return cls(m=zero_gradients(params), v=zero_gradients(params), t=0)


def adamw_step(params, grads: dict, state: AdamWState, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, in place.

    Moments are bias-corrected; the decay term multiplies the parameter
    directly and is independent of the gradient path.
    """
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.tree().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        p -= cfg.lr * update
        if cfg.weight_decay:
            p -= cfg.lr * cfg.weight_decay * p
    return params, state


def split_dataset(dataset, cfg: TrainConfig, seed: int = None):
    """Scenario-level train/val/test split.

    Every sample of one scenario lands in the same partition so overlapping
    windows cannot leak across splits. Proportions are rounded to whole
    scenarios; the assignment is a pure function of the scenario ids and the
    seed.
    """
    if not dataset:
        raise DataError("cannot split an empty dataset")
    if seed is None:
        seed = cfg.seed
    ids = sorted({s.scenario_id for s in dataset})
    n_test = int(round(len(ids) * cfg.test_fraction))
    n_val = int(round((len(ids) - n_test) * cfg.val_fraction))
    n_train = len(ids) - n_test - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(
            f"{len(ids)} scenarios cannot fill three non-empty splits at "
            f"test={cfg.test_fraction}, val={cfg.val_fraction}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5917]))
    order = rng.permutation(len(ids))
    test_ids = {ids[k] for k in order[:n_test]}
    val_ids = {ids[k] for k in order[n_test:n_test + n_val]}
    train = [s for s in dataset if s.scenario_id not in test_ids
             and s.scenario_id not in val_ids]
    val = [s for s in dataset if s.scenario_id in val_ids]
    test = [s for s in dataset if s.scenario_id in test_ids]
    return train, val, test


@dataclass(eq=False)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: float


@dataclass(eq=False)
class TrainResult:
    params: object
    history: list
    standardizer: Standardizer
    train_samples: list
    val_samples: list
    test_samples: list
    dims: ModelDims
    variant: str


def stack_inputs(samples, standardizer: Standardizer = None, last_only: bool = False):
    """Stack samples into (means, layers, labels) arrays for the batched path."""
    means = np.stack([s.channel_means for s in samples])
    layers = np.stack([s.layer_stack for s in samples])
    if standardizer is not None:
        means = standardizer.transform(means)
    if last_only:
        means = means[:, -1:, :]
        layers = layers[:, -1:, :, :, :]
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return means, layers, labels


def _variant_fns(variant: str):
    if variant in ("dramn", "lseq1"):
        return (
            lambda m, g, p: forward_trace_batch(m, g, p).p,
            lambda m, g, p, y: backward_batch(m, g, p, y),
        )
    if variant == "lstm":
        return (
            lambda m, g, p: forward_trace_batch(m, None, p, identity_graph=True).p,
            lambda m, g, p, y: backward_batch(m, None, p, y, identity_graph=True),
        )
    if variant == "gcn":
        return (
            lambda m, g, p: gcn_forward_trace_batch(m, g, p)["p"],
            lambda m, g, p, y: gcn_backward_batch(m, g, p, y),
        )
    raise ConfigError(f"unknown model variant {variant!r}")


def train(dataset, cfg: TrainConfig, embed_dim: int = 64, hidden_dim: int = 64,
          variant: str = "dramn") -> TrainResult:
    """Fit a model variant with shuffled mini-batches and early stopping.

    Keeps the parameters from the best-validation epoch. Stops once the
    validation loss has not improved for `early_stop_patience` epochs
    (patience 0 stops after the first non-improving epoch). Strictly
    sequential, so identical inputs give bit-identical parameters.
    """
    train_s, val_s, test_s = split_dataset(dataset, cfg)
    std = Standardizer.fit_windows(w for s in train_s for w in s.windows)

    last_only = variant in ("lseq1", "gcn")
    m_tr, g_tr, y_tr = stack_inputs(train_s, std, last_only=last_only)
    m_va, g_va, y_va = stack_inputs(val_s, std, last_only=last_only)

    n = m_tr.shape[2]
    dims = ModelDims(
        n=n,
        t=train_s[0].windows[0].n_samples,
        f=embed_dim,
        h=hidden_dim,
        d=g_tr.shape[-1],
        l_seq=m_tr.shape[1],
    )
    if variant == "gcn":
        params = init_gcn_params(dims, cfg.seed)
    else:
        params = init_params(dims, cfg.seed)
    predict_fn, grad_fn = _variant_fns(variant)

    state = AdamWState.init(params)
    best = params.copy()
    best_val = np.inf
    since_best = 0
    history = []
    n_train = len(train_s)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x3A1, epoch]))
        order = rng.permutation(n_train)
        loss_sum = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                losses, grads = grad_fn(m_tr[idx], g_tr[idx], params, y_tr[idx])
            except NumericalFailureError as exc:
                raise NumericalFailureError(
                    f"epoch {epoch}, batch at sample {start}: {exc}"
                ) from exc
            adamw_step(params, grads, state, cfg)
            loss_sum += float(losses.sum())
        val_loss = mae_batch(predict_fn(m_va, g_va, params), y_va)
        wall_ms = (time.perf_counter() - t0) * 1e3
        history.append(EpochStats(epoch=epoch, train_loss=loss_sum / n_train,
                                  val_loss=val_loss, wall_ms=wall_ms))
        if val_loss < best_val:
            best_val = val_loss
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= max(cfg.early_stop_patience, 1):
                break

    return TrainResult(
        params=best, history=history, standardizer=std,
        train_samples=train_s, val_samples=val_s, test_samples=test_s,
        dims=dims, variant=variant,
    )


def write_history(history, path, meta: dict = None, zero_wall: bool = False) -> None:
    """Emit per-epoch losses as tab-separated text with comment metadata."""
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    lines.append("epoch\ttrain_loss\tval_loss\twall_ms")
    for st in history:
        wall = 0.0 if zero_wall else st.wall_ms
        lines.append(f"{st.epoch}\t{st.train_loss!r}\t{st.val_loss!r}\t{wall:.3f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
