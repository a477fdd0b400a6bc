"""Five-layer dynamic adjacency tensors built from windowed mode decompositions.

Each measurement window yields an n x n x 5 stack of symmetric matrices:

  layer 1  mutual mode participation (products of mode-entry magnitudes)
  layer 2  coupling strength (cosine similarity of centered magnitude profiles)
  layer 3  phase alignment (circular-mean coherence and angle differences)
  layer 4  co-activation weighted by per-step growth or decay
  layer 5  co-activation weighted by total spectral energy over the window

Every layer is rescaled by its largest absolute entry so downstream graph
convolutions see uniformly scaled edges.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dmd import DmdConfig, TimeSeriesWindow, dmd
from .errors import DataError, InsufficientHistoryError, NumericalFailureError

N_LAYERS = 5

_TENSOR_MAGIC = b"ADJT"
_TENSOR_HEADER = struct.Struct("<4sBiiq")


@dataclass(eq=False)
class AdjacencyTensor:
    """The normalized n x n x 5 layer stack for one window."""

    layers: np.ndarray
    n: int
    source_window: int = 0  # ms offset of the window's first sample

    def validate(self, tol: float = 1e-9) -> None:
        """Check symmetry, bounds, and normalization; raises DataError."""
        if self.layers.shape != (self.n, self.n, N_LAYERS):
            raise DataError(f"layer stack has shape {self.layers.shape}, expected "
                            f"({self.n}, {self.n}, {N_LAYERS})")
        if not np.isfinite(self.layers).all():
            raise DataError("adjacency tensor contains non-finite entries")
        for l in range(N_LAYERS):
            layer = self.layers[:, :, l]
            if np.abs(layer - layer.T).max() > tol:
                raise DataError(f"layer {l + 1} is not symmetric within {tol}")
            peak = np.abs(layer).max()
            if peak > 0 and abs(peak - 1.0) > tol:
                raise DataError(f"layer {l + 1} peak {peak} is not normalized to 1")


@dataclass(eq=False)
class AdjacencySequence:
    """Consecutive window tensors (and their windows) feeding one forecast."""

    tensors: list
    windows: list


@dataclass(eq=False)
class SequenceSample:
    """Model input: consecutive raw windows, their adjacency tensors, a label."""

    windows: list
    tensors: list
    label: int
    scenario_id: str = ""
    t_end: int = 0
    _means: np.ndarray = field(default=None, repr=False)

    @property
    def channel_means(self) -> np.ndarray:
        """Per-window channel means (L x n); the pooled input the model sees."""
        if self._means is None:
            self._means = np.stack([w.data.mean(axis=0) for w in self.windows])
        return self._means

    @property
    def layer_stack(self) -> np.ndarray:
        """Adjacency layers stacked over the sequence (L x n x n x d)."""
        return np.stack([t.layers for t in self.tensors])


@dataclass(frozen=True)
class SequenceConfig:
    """How consecutive windows are carved out of a scenario.

    With ``center_for_adjacency`` set (the default), the decomposition sees
    each window with its per-channel temporal mean removed: large static
    offsets (nominal voltage, nominal frequency) would otherwise claim the
    dominant mode and drown the dynamic structure the layers encode. The
    raw window, offsets included, still feeds the model's feature path.
    """

    l_seq: int = 5
    window_ms: int = 1000
    stride_ms: int = 100
    dmd: DmdConfig = field(default_factory=DmdConfig)
    center_for_adjacency: bool = True

    def __post_init__(self):
        from .errors import ConfigError

        if self.l_seq < 1:
            raise ConfigError(f"l_seq must be >= 1, got {self.l_seq}")
        if self.window_ms < 2:
            raise ConfigError(f"window_ms must be >= 2, got {self.window_ms}")
        if self.stride_ms < 0:
            raise ConfigError(f"stride_ms must be >= 0, got {self.stride_ms}")

    def window_ends(self, t_end: int) -> list:
        """End times of the l_seq windows, oldest first, finishing at t_end."""
        return [t_end - (self.l_seq - 1 - k) * self.stride_ms for k in range(self.l_seq)]

    def history_ms(self) -> int:
        """Scenario span one sequence consumes."""
        return self.window_ms + (self.l_seq - 1) * self.stride_ms

    def adjacency_input(self, window: TimeSeriesWindow) -> TimeSeriesWindow:
        """The view of a window the decomposition should consume."""
        return mean_centered(window) if self.center_for_adjacency else window

    def cache_token(self) -> str:
        return (f"L{self.l_seq}-w{self.window_ms}-s{self.stride_ms}"
                f"-c{int(self.center_for_adjacency)}-{self.dmd.cache_token()}")


class WindowSource(Protocol):
    """Anything that can hand out measurement windows by end time."""

    def window_at(self, end_ms: int, width_ms: int) -> TimeSeriesWindow: ...


def mean_centered(window: TimeSeriesWindow) -> TimeSeriesWindow:
    """Remove each channel's temporal mean; a fully static window is kept raw
    so the decomposition still has its single constant mode to work with."""
    centered = window.data - window.data.mean(axis=0)
    if not np.abs(centered).max() > 0.0:
        return window
    return TimeSeriesWindow(
        data=centered, dt=window.dt,
        channel_names=window.channel_names, t_start=window.t_start,
    )


def layer_participation(phi: np.ndarray) -> np.ndarray:
    """Mutual participation: M[i, j] = sum_k |phi_ik| * |phi_jk|."""
    a = np.abs(phi)
    return a @ a.T


def layer_coupling(phi: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Cosine similarity of zero-mean magnitude profiles, in [-1, 1].

    The denominators carry an epsilon so channels with flat magnitude
    profiles (e.g. a single retained mode) map to 0 instead of dividing
    by zero.
    """
    v = np.abs(phi)
    centered = v - v.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    return (centered @ centered.T) / np.outer(norms + eps, norms + eps)


def layer_phase(phi: np.ndarray) -> np.ndarray:
    """Phase alignment: M[i, j] = kappa_i * kappa_j * cos(theta_i - theta_j).

    theta_i and kappa_i are the direction and length of the circular mean of
    channel i's mode angles; a zero mode entry contributes angle 0. The
    product expands to outer(c, c) + outer(s, s) with c_i = kappa_i cos
    theta_i and s_i = kappa_i sin theta_i, which is what is computed here.
    """
    ang = np.angle(phi)
    c = np.cos(ang).mean(axis=1)
    s = np.sin(ang).mean(axis=1)
    return np.outer(c, c) + np.outer(s, s)


# Per-step growth below this is numerical dust (eigenvalue rounding), not
# dynamics; snapping it to zero keeps static windows from normalizing noise
# into full-scale entries.
GROWTH_DEAD_ZONE = 1e-12


def layer_growth(phi: np.ndarray, lam: np.ndarray, rho_floor: float = 1e-12) -> np.ndarray:
    """Co-activation weighted by per-step growth g_k = log |lambda_k|.

    Moduli are floored to keep nilpotent modes from injecting -inf, and
    growth within GROWTH_DEAD_ZONE of zero is treated as exactly neutral.
    """
    g = np.log(np.maximum(np.abs(lam), rho_floor))
    g[np.abs(g) < GROWTH_DEAD_ZONE] = 0.0
    return np.real((phi * g) @ phi.conj().T)


def energy_factor(rho: float, length: int) -> float:
    """Total energy of a mode with per-step modulus rho over ``length`` steps.

    Equals sum_{l=0}^{length-1} rho^(2l), evaluated through expm1 so moduli
    near 1 keep full precision; the rho = 1 case is exactly ``length``.
    """
    if rho < 0:
        raise ValueError(f"mode modulus must be >= 0, got {rho}")
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if rho == 0.0:
        return 1.0
    if rho == 1.0:
        return float(length)
    try:
        return math.expm1(2.0 * length * math.log(rho)) / math.expm1(2.0 * math.log(rho))
    except OverflowError:
        # the true value exceeds float64 range, exactly as the direct sum would
        return math.inf


# Energy weights above this already dominate a layer by >1e280; capping keeps
# the matrix representable when a transient artifact yields |lambda| >> 1.
ENERGY_WEIGHT_CAP = 1e290


def layer_energy(phi: np.ndarray, lam: np.ndarray, length: int) -> np.ndarray:
    """Co-activation weighted by windowed spectral energy.

    Persistent or amplifying modes dominate; strongly decaying ones are
    de-emphasized. Positive weights make the result positive semidefinite.
    Weights are clipped at ENERGY_WEIGHT_CAP so a strongly amplifying mode
    cannot push the layer out of float64 range.
    """
    e = np.minimum(
        [energy_factor(abs(l), length) for l in lam], ENERGY_WEIGHT_CAP
    )
    return np.real((phi * e) @ phi.conj().T)


def normalize_layers(raw: np.ndarray, source_window: int = 0) -> AdjacencyTensor:
    """Divide each layer by its maximum absolute entry; zero layers stay zero."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[0] != raw.shape[1]:
        raise DataError(f"expected an n x n x d stack, got shape {raw.shape}")
    if not np.isfinite(raw).all():
        raise NumericalFailureError("layer stack contains non-finite entries")
    out = raw.copy()
    for l in range(raw.shape[2]):
        peak = np.abs(out[:, :, l]).max()
        if peak > 0.0:
            out[:, :, l] /= peak
    return AdjacencyTensor(layers=out, n=raw.shape[0], source_window=source_window)


def build_adjacency(window: TimeSeriesWindow, cfg: DmdConfig) -> AdjacencyTensor:
    """Decompose one window and assemble its normalized five-layer tensor."""
    result = dmd(window, cfg)
    raw = np.stack(
        [
            layer_participation(result.modes),
            layer_coupling(result.modes),
            layer_phase(result.modes),
            layer_growth(result.modes, result.eigenvalues),
            layer_energy(result.modes, result.eigenvalues, result.window_len),
        ],
        axis=-1,
    )
    return normalize_layers(raw, source_window=window.t_start)


def build_sequence(scenario: WindowSource, t_end: int, seq_cfg: SequenceConfig):
    """Carve the l_seq overlapping windows ending at ``t_end`` and build tensors.

    Windows end at t_end - (l_seq-1)*stride, ..., t_end - stride, t_end.
    Raises InsufficientHistoryError when the scenario cannot supply them.
    """
    windows = []
    for end in seq_cfg.window_ends(t_end):
        try:
            windows.append(scenario.window_at(end, seq_cfg.window_ms))
        except InsufficientHistoryError as exc:
            raise InsufficientHistoryError(
                f"sequence ending at {t_end} ms needs a window ending at {end} ms: {exc}"
            ) from exc
    tensors = [build_adjacency(seq_cfg.adjacency_input(w), seq_cfg.dmd)
               for w in windows]
    return windows, AdjacencySequence(tensors=tensors, windows=windows)


def tensor_to_bytes(tensor: AdjacencyTensor) -> bytes:
    """Serialize: fixed header (n, d, t_start) + layer-major row-major float64 LE."""
    header = _TENSOR_HEADER.pack(
        _TENSOR_MAGIC, 1, tensor.n, tensor.layers.shape[2], int(tensor.source_window)
    )
    payload = np.ascontiguousarray(
        np.moveaxis(tensor.layers, 2, 0), dtype="<f8"
    ).tobytes()
    return header + payload


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Inverse of tensor_to_bytes; returns (tensor, next_offset)."""
    if len(buf) - offset < _TENSOR_HEADER.size:
        raise DataError("truncated adjacency tensor record")
    magic, version, n, d, t_start = _TENSOR_HEADER.unpack_from(buf, offset)
    if magic != _TENSOR_MAGIC:
        raise DataError(f"bad adjacency tensor magic {magic!r}")
    if version != 1:
        raise DataError(f"unsupported adjacency tensor version {version}")
    start = offset + _TENSOR_HEADER.size
    count = n * n * d
    end = start + count * 8
    if len(buf) < end:
        raise DataError("truncated adjacency tensor payload")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=start)
    layers = np.moveaxis(flat.reshape(d, n, n), 0, 2).copy()
    return AdjacencyTensor(layers=layers, n=n, source_window=int(t_start)), end
