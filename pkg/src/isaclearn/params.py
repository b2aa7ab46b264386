"""Trainable-parameter container and the binary checkpoint format.

Checkpoint layout (little-endian): magic ``ISACNET1``, then for each
network: u32 name length, name bytes, u32 layer count, and per layer
u32 rows, u32 cols, rows*cols float64 weights (row-major) followed by
rows float64 biases. Networks are read until end of file. Architecture
shapes are config-locked: any drift from the shapes the config implies
is a hard error at load time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import SystemConfig
from .errors import ConfigError
from .radar import (DetectorParams, EstimatorParams, MlpEstimatorParams,
                    detector_widths, mlp_estimator_widths)
from .receiver import DecoderParams, decoder_widths
from .transmitter import BlpParams, SlpParams, slp_widths

MAGIC = b"ISACNET1"


@dataclass
class ModelParams:
    """Weights of every network taking part in one trained system."""

    mode: str                 # "slp" | "blp"
    estimator_kind: str       # "lstm" | "mlp"
    slp: SlpParams | None
    blp: BlpParams | None
    decoders: list
    detector: DetectorParams
    lstm: EstimatorParams | None
    mlp_estimator: MlpEstimatorParams | None

    def named_networks(self) -> list[tuple[str, list]]:
        nets = []
        if self.slp is not None:
            nets.append(("slp", self.slp.layers))
        if self.blp is not None:
            nets.append(("blp_encoder", self.blp.encoder))
            nets.append(("blp_beamformer", self.blp.beamformer))
        for k, dec in enumerate(self.decoders):
            nets.append((f"decoder_{k + 1}", dec.layers))
        nets.append(("detector", self.detector.layers))
        if self.lstm is not None:
            nets.append(("estimator_lstm", self.lstm.gate_layers()))
        if self.mlp_estimator is not None:
            nets.append(("estimator_mlp", self.mlp_estimator.layers))
        return nets

    def trainable(self) -> list:
        nodes = []
        for _, layers in self.named_networks():
            for w, b in layers:
                nodes.append(w)
                nodes.append(b)
        return nodes


def init_model(cfg: SystemConfig, mode: str, estimator_kind: str,
               rng: np.random.Generator) -> ModelParams:
    """Fresh model; initialization order is fixed for determinism."""
    if mode not in ("slp", "blp"):
        raise ConfigError(f"mode must be slp|blp, got {mode!r}")
    if estimator_kind not in ("lstm", "mlp"):
        raise ConfigError(f"estimator must be lstm|mlp, got {estimator_kind!r}")
    slp = SlpParams.init(cfg, rng) if mode == "slp" else None
    blp = BlpParams.init(cfg, rng) if mode == "blp" else None
    decoders = [DecoderParams.init(cfg, rng, k) for k in range(cfg.K)]
    detector = DetectorParams.init(cfg, rng)
    lstm = EstimatorParams.init(cfg, rng) if estimator_kind == "lstm" else None
    mlp_est = MlpEstimatorParams.init(cfg, rng) if estimator_kind == "mlp" else None
    return ModelParams(mode, estimator_kind, slp, blp, decoders, detector,
                       lstm, mlp_est)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: ModelParams):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, layers in model.named_networks():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(layers)))
            for w, b in layers:
                rows, cols = w.value.shape
                fh.write(struct.pack("<II", rows, cols))
                fh.write(w.value.astype("<f8").tobytes(order="C"))
                fh.write(b.value.reshape(-1).astype("<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ConfigError("checkpoint truncated")
    return data


def _read_networks(path) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
    nets: dict[str, list] = {}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path} is not a checkpoint (bad magic)")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (n_layers,) = struct.unpack("<I", _read_exact(fh, 4))
            layers = []
            for _ in range(n_layers):
                rows, cols = struct.unpack("<II", _read_exact(fh, 8))
                w = np.frombuffer(_read_exact(fh, 8 * rows * cols),
                                  dtype="<f8").reshape(rows, cols).copy()
                b = np.frombuffer(_read_exact(fh, 8 * rows),
                                  dtype="<f8").reshape(rows, 1).copy()
                layers.append((w, b))
            nets[name] = layers
    return nets


def _check_widths(name: str, layers, widths):
    if len(layers) != len(widths) - 1:
        raise ConfigError(
            f"{name}: checkpoint has {len(layers)} layers, config implies {len(widths) - 1}"
        )
    for i, (w, _) in enumerate(layers):
        want = (widths[i + 1], widths[i])
        if w.shape != want:
            raise ConfigError(
                f"{name}: layer {i} weight is {w.shape}, config implies {want}"
            )


def _to_nodes(name: str, layers):
    return [(ad.parameter(w, name=f"{name}.W{i}"),
             ad.parameter(b, name=f"{name}.b{i}"))
            for i, (w, b) in enumerate(layers)]


def load_checkpoint(path, cfg: SystemConfig) -> ModelParams:
    """Rebuild a ModelParams from disk, shape-checked against the config."""
    nets = _read_networks(path)

    if "slp" in nets:
        mode = "slp"
        _check_widths("slp", nets["slp"], slp_widths(cfg))
        slp = SlpParams(_to_nodes("slp", nets["slp"]), cfg.Nt, cfg.K, cfg.M_size)
        blp = None
    elif "blp_encoder" in nets and "blp_beamformer" in nets:
        mode = "blp"
        enc_w = [cfg.M_size, cfg.Nt, cfg.Nt, 2 * cfg.Nt, 2]
        bf_w = [2 + 2 * cfg.K, cfg.Nt, 4 * cfg.Nt, 8 * cfg.Nt, 2 * cfg.Nt * cfg.K]
        _check_widths("blp_encoder", nets["blp_encoder"], enc_w)
        _check_widths("blp_beamformer", nets["blp_beamformer"], bf_w)
        slp = None
        blp = BlpParams(_to_nodes("blp_enc", nets["blp_encoder"]),
                        _to_nodes("blp_bf", nets["blp_beamformer"]),
                        cfg.Nt, cfg.K, cfg.M_size)
    else:
        raise ConfigError(f"{path}: no transmitter network found")

    decoders = []
    for k in range(cfg.K):
        name = f"decoder_{k + 1}"
        if name not in nets:
            raise ConfigError(f"{path}: missing {name} for K={cfg.K}")
        _check_widths(name, nets[name], decoder_widths(cfg))
        decoders.append(DecoderParams(_to_nodes(name, nets[name]), cfg.M_size))

    if "detector" not in nets:
        raise ConfigError(f"{path}: missing detector network")
    _check_widths("detector", nets["detector"], detector_widths(cfg))
    detector = DetectorParams(_to_nodes("detector", nets["detector"]))

    lstm = mlp_est = None
    if "estimator_lstm" in nets:
        estimator_kind = "lstm"
        layers = nets["estimator_lstm"]
        if len(layers) != 5:
            raise ConfigError("estimator_lstm: expected 4 gates + head")
        h, z = layers[0][0].shape
        if h != cfg.hidden or z != cfg.N + cfg.hidden:
            raise ConfigError(
                f"estimator_lstm: gate shape {(h, z)} does not match hidden="
                f"{cfg.hidden}, N={cfg.N}"
            )
        for i in range(1, 4):
            if layers[i][0].shape != (h, z):
                raise ConfigError("estimator_lstm: inconsistent gate shapes")
        if layers[4][0].shape != (1, h):
            raise ConfigError("estimator_lstm: head shape mismatch")
        pairs = _to_nodes("lstm", layers)
        lstm = EstimatorParams(pairs[0][0], pairs[0][1], pairs[1][0], pairs[1][1],
                               pairs[2][0], pairs[2][1], pairs[3][0], pairs[3][1],
                               pairs[4][0], pairs[4][1], cfg.N, h)
    elif "estimator_mlp" in nets:
        estimator_kind = "mlp"
        _check_widths("estimator_mlp", nets["estimator_mlp"], mlp_estimator_widths(cfg))
        mlp_est = MlpEstimatorParams(_to_nodes("estimator_mlp", nets["estimator_mlp"]))
    else:
        raise ConfigError(f"{path}: no angle estimator found")

    return ModelParams(mode, estimator_kind, slp, blp, decoders, detector,
                       lstm, mlp_est)
