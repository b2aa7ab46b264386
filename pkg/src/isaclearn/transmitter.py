"""Learned transmitters.

Two designs share the same interface (priori angular intervals + per-slot
messages -> per-slot transmit vector, before power normalization):

* symbol-level: one MLP maps [priori || messages] straight to the complex
  transmit vector, a fresh nonlinear precode every slot;
* block-level baseline: a shared encoder maps each one-hot message to a
  complex symbol, a beamformer maps the priori to a precoding matrix W,
  and the transmit vector is W s.

Batch power normalization afterwards enforces the average-power budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .channel import CTensor, cmatmul, cscale
from .config import SystemConfig
from .errors import DomainError, NormalizationError, ShapeError

ANGLE_SCALE = 90.0  # degrees mapped into [-1, 1] at every network input


@dataclass
class PrioriInfo:
    """Known angular intervals for the target and the K users (degrees)."""

    theta_min: float
    theta_max: float
    user_bounds: tuple  # K pairs (min, max)

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "PrioriInfo":
        return cls(cfg.theta_bounds[0], cfg.theta_bounds[1],
                   tuple(tuple(b) for b in cfg.user_bounds))

    def flattened(self) -> np.ndarray:
        """[theta_min, theta_max, u1_min, u1_max, ...], length 2 + 2K."""
        vals = [self.theta_min, self.theta_max]
        for lo, hi in self.user_bounds:
            vals.extend((lo, hi))
        return np.asarray(vals, dtype=np.float64)


def slp_widths(cfg: SystemConfig) -> list[int]:
    return [2 + 2 * cfg.K + cfg.K, 2 * cfg.Nt, 4 * cfg.Nt, 8 * cfg.Nt,
            4 * cfg.Nt, 2 * cfg.Nt]


SLP_ACTIVATIONS = ("relu", "relu", "relu", "relu", "linear")


@dataclass
class SlpParams:
    """Symbol-level transmitter MLP: 5 weight/bias pairs."""

    layers: list
    Nt: int
    K: int
    M_size: int

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator) -> "SlpParams":
        return cls(ad.init_mlp(slp_widths(cfg), rng, "slp"), cfg.Nt, cfg.K, cfg.M_size)


@dataclass
class BlpParams:
    """Block-level baseline: shared symbol encoder + beamformer MLPs."""

    encoder: list     # widths [|M|, Nt, Nt, 2Nt, 2]
    beamformer: list  # widths [2+2K, Nt, 4Nt, 8Nt, 2NtK]
    Nt: int
    K: int
    M_size: int

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator) -> "BlpParams":
        enc_w = [cfg.M_size, cfg.Nt, cfg.Nt, 2 * cfg.Nt, 2]
        bf_w = [2 + 2 * cfg.K, cfg.Nt, 4 * cfg.Nt, 8 * cfg.Nt, 2 * cfg.Nt * cfg.K]
        return cls(ad.init_mlp(enc_w, rng, "blp_enc"),
                   ad.init_mlp(bf_w, rng, "blp_bf"), cfg.Nt, cfg.K, cfg.M_size)


BLP_ACTIVATIONS = ("relu", "relu", "relu", "linear")


def one_hot(m: int, M_size: int) -> np.ndarray:
    if not 0 <= m < M_size:
        raise IndexError(f"one_hot: message {m} outside alphabet of size {M_size}")
    v = np.zeros(M_size)
    v[m] = 1.0
    return v


def _as_message_matrix(messages, K: int, M_size: int) -> np.ndarray:
    m = np.asarray(messages, dtype=np.int64)
    if m.ndim == 1:
        m = m.reshape(K, 1)
    if m.shape[0] != K:
        raise ShapeError(f"messages have shape {m.shape}, expected ({K}, B)")
    if m.min() < 0 or m.max() >= M_size:
        raise DomainError(
            f"message indices must lie in 0..{M_size - 1}, got range "
            f"[{m.min()}, {m.max()}]"
        )
    return m


def message_features(m: np.ndarray, M_size: int) -> np.ndarray:
    """Index i -> (2i - (|M|-1)) / (|M|-1), centered in [-1, 1]."""
    if M_size == 1:
        return np.zeros_like(m, dtype=np.float64)
    return (2.0 * m - (M_size - 1)) / (M_size - 1)


def _priori_block(priori: PrioriInfo, batch: int) -> np.ndarray:
    col = priori.flattened() / ANGLE_SCALE
    return np.repeat(col.reshape(-1, 1), batch, axis=1)


def _split_complex(flat: Node, Nt: int) -> CTensor:
    """First Nt rows are the real part, the next Nt rows the imaginary."""
    return CTensor(ad.slice_rows(flat, 0, Nt), ad.slice_rows(flat, Nt, 2 * Nt))


def slp_forward(priori: PrioriInfo, messages, params: SlpParams) -> CTensor:
    """Per-slot transmit vectors, one column per slot; not power-normalized.

    messages may be a K-vector (single slot) or a K x B matrix.
    """
    m = _as_message_matrix(messages, params.K, params.M_size)
    batch = m.shape[1]
    feats = np.vstack([_priori_block(priori, batch),
                       message_features(m, params.M_size)])
    out = ad.run_mlp(params.layers, SLP_ACTIVATIONS, ad.constant(feats))
    return _split_complex(out, params.Nt)


def blp_forward(priori: PrioriInfo, messages, params: BlpParams) -> CTensor:
    """x = W s: encoder symbols through the priori-shaped beamformer."""
    m = _as_message_matrix(messages, params.K, params.M_size)
    batch = m.shape[1]

    # shared encoder: one-hot columns for every (user, slot) pair
    onehots = np.zeros((params.M_size, params.K * batch))
    onehots[m.reshape(-1), np.arange(params.K * batch)] = 1.0
    sym = ad.run_mlp(params.encoder, BLP_ACTIVATIONS, ad.constant(onehots))
    # rows (re, im) over K*batch columns -> complex K x batch
    s = CTensor(ad.reshape(ad.slice_rows(sym, 0, 1), params.K, batch),
                ad.reshape(ad.slice_rows(sym, 1, 2), params.K, batch))

    bf_in = ad.constant(priori.flattened().reshape(-1, 1) / ANGLE_SCALE)
    w_flat = ad.run_mlp(params.beamformer, BLP_ACTIVATIONS, bf_in)
    half = params.Nt * params.K
    W = CTensor(ad.reshape(ad.slice_rows(w_flat, 0, half), params.Nt, params.K),
                ad.reshape(ad.slice_rows(w_flat, half, 2 * half), params.Nt, params.K))
    return cmatmul(W, s)


def power_normalize(X: CTensor, P_lin: float) -> CTensor:
    """Scale so the batch-average per-slot power equals P_lin exactly."""
    B = X.shape[1]
    if B < 1:
        raise ShapeError("power_normalize: empty batch")
    ss = ad.add(ad.sum_all(ad.mul(X.re, X.re)), ad.sum_all(ad.mul(X.im, X.im)))
    if ss.value[0, 0] == 0.0:
        raise NormalizationError("power_normalize: all-zero block, scale undefined")
    scale = ad.affine_const(ad.powc(ss, -0.5), float(np.sqrt(P_lin * B)))
    return cscale(X, scale)


def normalization_scale(X: CTensor, P_lin: float) -> float:
    """The scalar power_normalize would apply (calibration helper)."""
    ss = float(np.sum(X.re.value ** 2) + np.sum(X.im.value ** 2))
    if ss == 0.0:
        raise NormalizationError("normalization_scale: all-zero block")
    return float(np.sqrt(P_lin * X.shape[1] / ss))
