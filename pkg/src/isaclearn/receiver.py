"""Per-user message decoder: complex observation -> probability vector ->
hard decision. Each user owns an independent parameter set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .channel import CTensor, db_to_linear, path_loss
from .config import SystemConfig


def decoder_widths(cfg: SystemConfig) -> list[int]:
    return [2, cfg.Nt, 2 * cfg.Nt, 2 * cfg.Nt, 2 * cfg.Nt, cfg.M_size]


DECODER_ACTIVATIONS = ("relu", "relu", "relu", "relu", "linear")


def rx_amplitude_scale(cfg: SystemConfig) -> float:
    """Nominal per-component RMS of a received downlink sample.

    Glorot assumes O(1) inputs; the physical samples arrive at the scale of
    sqrt(array_gain^2 * path_loss * per-user power + noise), so first-layer
    weights are initialized against this constant.
    """
    beta = path_loss(cfg.beta0_db, cfg.d_c_mean, cfg.d0, cfg.gamma)
    p_user = db_to_linear(cfg.P_dbm) / cfg.K
    return float(np.sqrt((cfg.Nt * beta * p_user + db_to_linear(cfg.sigma_c2_dbm)) / 2.0))


@dataclass
class DecoderParams:
    """5 weight/bias pairs, widths [2, Nt, 2Nt, 2Nt, 2Nt, |M|]."""

    layers: list
    M_size: int

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator,
             user: int) -> "DecoderParams":
        scale = rx_amplitude_scale(cfg)
        layers = ad.init_mlp(decoder_widths(cfg), rng, f"decoder_{user + 1}",
                             input_scale=[scale, scale])
        return cls(layers, cfg.M_size)


def preprocess_rx(y: complex) -> np.ndarray:
    """Complex sample to its real-valued form [Re, Im]."""
    return np.array([np.real(y), np.imag(y)], dtype=np.float64)


def rx_features(y: CTensor) -> Node:
    """Differentiable batched preprocess: 1 x T complex -> 2 x T real."""
    return ad.concat_rows([y.re, y.im])


def decoder_logits(y2: Node, params: DecoderParams) -> Node:
    return ad.run_mlp(params.layers, DECODER_ACTIVATIONS, y2)


def decode(y2, params: DecoderParams) -> np.ndarray:
    """Probability vector over the |M| messages (softmax of the logits).

    y2 is the 2-vector [Re, Im] (or a 2 x B block); returns shape (|M|,)
    or (|M|, B) accordingly.
    """
    arr = np.asarray(y2, dtype=np.float64)
    squeeze = arr.ndim == 1
    x = ad.constant(arr.reshape(2, -1))
    p = ad.softmax_cols(decoder_logits(x, params)).value
    return p[:, 0] if squeeze else p


def decide(p) -> int | np.ndarray:
    """Index of the largest probability; ties break toward the lowest index."""
    arr = np.asarray(p)
    if arr.ndim == 1:
        if arr.size == 0:
            raise ValueError("decide: empty probability vector")
        return int(np.argmax(arr))
    if arr.shape[0] == 0:
        raise ValueError("decide: empty probability vector")
    return np.argmax(arr, axis=0)
