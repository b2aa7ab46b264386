"""Radar-side receivers: target-presence detector (MLP on the flattened
echo block plus the angular priori) and angle estimators.

The main estimator is an LSTM that walks the echo matrix antenna by
antenna: real rows first, then imaginary rows, each step seeing that
antenna's N time slots as its feature vector. A flat MLP estimator with
the same input information serves as the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .channel import CTensor, db_to_linear, path_loss
from .config import SystemConfig
from .errors import DomainError, ShapeError
from .transmitter import ANGLE_SCALE


def echo_amplitude_scale(cfg: SystemConfig) -> float:
    """Nominal per-component RMS of one echo entry (for first-layer init)."""
    coeff = (np.sqrt(cfg.Nt * cfg.Nr) * cfg.alpha_t
             * path_loss(cfg.alpha0_db, cfg.d_r_mean, cfg.d0, cfg.gamma))
    p_target = db_to_linear(cfg.P_dbm) / 2.0
    per_entry = coeff ** 2 * p_target / cfg.Nr + db_to_linear(cfg.sigma_r2_dbm)
    return float(np.sqrt(per_entry / 2.0))


# ---------------------------------------------------------------------------
# presence detector
# ---------------------------------------------------------------------------

def detector_widths(cfg: SystemConfig) -> list[int]:
    return [2 * cfg.N * cfg.Nr + 2, cfg.N * cfg.Nr, cfg.N, cfg.Nr, 1]


DETECTOR_ACTIVATIONS = ("relu", "relu", "relu", "sigmoid")


@dataclass
class DetectorParams:
    """4 weight/bias pairs, widths [2N*Nr+2, N*Nr, N, Nr, 1], final sigmoid."""

    layers: list

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator) -> "DetectorParams":
        widths = detector_widths(cfg)
        s = echo_amplitude_scale(cfg)
        scale = np.concatenate([np.full(widths[0] - 2, s), np.ones(2)])
        return cls(ad.init_mlp(widths, rng, "detector", input_scale=scale))


def detector_input_batch(y: CTensor, theta_bounds, batch: int) -> Node:
    """Stack flattened echoes of a batch: (2N*Nr+2) x B.

    y is Nr x (B*N) with each scenario's slots contiguous; rows are the
    row-major flattening of Re then Im, then the scaled priori bounds.
    """
    nr, total = y.shape
    if total % batch != 0:
        raise ShapeError(f"detector_input: {total} cols not divisible by batch {batch}")
    n_slots = total // batch
    re = ad.fold_slots(y.re, n_slots)
    im = ad.fold_slots(y.im, n_slots)
    pri = ad.constant(np.repeat(
        np.array([[theta_bounds[0]], [theta_bounds[1]]]) / ANGLE_SCALE, batch, axis=1))
    return ad.concat_rows([re, im, pri])


def detector_input(y_r: CTensor, priori) -> Node:
    """Single-scenario input vector [flat Re || flat Im || bounds/90]."""
    return detector_input_batch(y_r, priori, 1)


def detect(v, params: DetectorParams, q_bar: float):
    """Presence probability and thresholded decision (inclusive at q_bar)."""
    if not 0.0 <= q_bar <= 1.0:
        raise DomainError(f"detect: threshold {q_bar} outside [0, 1]")
    x = v if isinstance(v, Node) else ad.constant(np.asarray(v, dtype=np.float64))
    q = ad.run_mlp(params.layers, DETECTOR_ACTIVATIONS, x)
    t_hat = q.value[0] >= q_bar
    if t_hat.size == 1:
        return q, bool(t_hat[0])
    return q, t_hat


# ---------------------------------------------------------------------------
# LSTM angle estimator
# ---------------------------------------------------------------------------

@dataclass
class EstimatorParams:
    """LSTM cell (4 gates on [x_t || h]) plus a scalar head."""

    wi: Node
    bi: Node
    wf: Node
    bf: Node
    wo: Node
    bo: Node
    wg: Node
    bg: Node
    head_w: Node
    head_b: Node
    n_features: int
    hidden: int

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator) -> "EstimatorParams":
        n, h = cfg.N, cfg.hidden
        s = echo_amplitude_scale(cfg)
        col_scale = np.concatenate([np.full(n, s), np.ones(h)])

        def gate(tag):
            w = ad.parameter(ad.glorot_uniform(h, n + h, rng, col_scale=col_scale),
                             name=f"lstm.w{tag}")
            b = ad.parameter(np.zeros((h, 1)), name=f"lstm.b{tag}")
            return w, b

        wi, bi = gate("i")
        wf, bf = gate("f")
        wo, bo = gate("o")
        wg, bg = gate("g")
        head_w = ad.parameter(ad.glorot_uniform(1, h, rng), name="lstm.head_w")
        head_b = ad.parameter(np.zeros((1, 1)), name="lstm.head_b")
        return cls(wi, bi, wf, bf, wo, bo, wg, bg, head_w, head_b, n, h)

    def gate_layers(self):
        return [(self.wi, self.bi), (self.wf, self.bf), (self.wo, self.bo),
                (self.wg, self.bg), (self.head_w, self.head_b)]


def lstm_cell(x_t: Node, h: Node, c: Node, params: EstimatorParams):
    """One gated update; returns (h', c')."""
    if x_t.value.shape[0] != params.n_features or h.value.shape[0] != params.hidden:
        raise ShapeError(
            f"lstm_cell: got x_t {x_t.value.shape}, h {h.value.shape}; expected "
            f"{params.n_features} features and hidden width {params.hidden}"
        )
    z = ad.concat_rows([x_t, h])
    i = ad.sigmoid(ad.linear(params.wi, params.bi, z))
    f = ad.sigmoid(ad.linear(params.wf, params.bf, z))
    o = ad.sigmoid(ad.linear(params.wo, params.bo, z))
    g = ad.tanh(ad.linear(params.wg, params.bg, z))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def estimator_input(y_r: CTensor) -> Node:
    """[Re(Y); Im(Y)] for one scenario: 2Nr steps (rows) x N features."""
    return ad.concat_rows([y_r.re, y_r.im])


def estimator_steps_batch(y: CTensor, batch: int) -> list[Node]:
    """Per-step feature blocks for a batch: 2Nr Nodes of shape N x B."""
    nr, total = y.shape
    if total % batch != 0:
        raise ShapeError(f"estimator_steps: {total} cols not divisible by batch {batch}")
    n_slots = total // batch
    re = ad.fold_slots(y.re, n_slots)
    im = ad.fold_slots(y.im, n_slots)
    steps = []
    for r in range(nr):
        steps.append(ad.slice_rows(re, r * n_slots, (r + 1) * n_slots))
    for r in range(nr):
        steps.append(ad.slice_rows(im, r * n_slots, (r + 1) * n_slots))
    return steps


def _run_lstm(steps, params: EstimatorParams) -> Node:
    batch = steps[0].value.shape[1]
    h = ad.constant(np.zeros((params.hidden, batch)))
    c = ad.constant(np.zeros((params.hidden, batch)))
    for x_t in steps:
        h, c = lstm_cell(x_t, h, c, params)
    return h


def estimate_angle(seq, params: EstimatorParams, theta_scale_deg: float) -> Node:
    """Angle estimate in degrees, bounded by the tanh-scaled head.

    seq is either the single-scenario matrix (2Nr x N) or the list of
    batched per-step Nodes from estimator_steps_batch.
    """
    if isinstance(seq, (list, tuple)):
        steps = list(seq)
    else:
        mat = seq if isinstance(seq, Node) else ad.constant(np.asarray(seq, dtype=np.float64))
        steps = [ad.reshape(ad.slice_rows(mat, i, i + 1), params.n_features, 1)
                 for i in range(mat.value.shape[0])]
    h_final = _run_lstm(steps, params)
    out = ad.linear(params.head_w, params.head_b, h_final)
    return ad.affine_const(ad.tanh(out), float(theta_scale_deg))


# ---------------------------------------------------------------------------
# MLP angle estimator (baseline)
# ---------------------------------------------------------------------------

def mlp_estimator_widths(cfg: SystemConfig) -> list[int]:
    return [2 * cfg.N * cfg.Nr, cfg.N * cfg.Nr, cfg.N, cfg.Nr, 1]


MLP_ESTIMATOR_ACTIVATIONS = ("relu", "relu", "relu", "linear")


@dataclass
class MlpEstimatorParams:
    layers: list

    @classmethod
    def init(cls, cfg: SystemConfig, rng: np.random.Generator) -> "MlpEstimatorParams":
        widths = mlp_estimator_widths(cfg)
        scale = np.full(widths[0], echo_amplitude_scale(cfg))
        return cls(ad.init_mlp(widths, rng, "estimator_mlp", input_scale=scale))


def mlp_estimator_input_batch(y: CTensor, batch: int) -> Node:
    """Flattened echo [flat Re || flat Im] per scenario: (2N*Nr) x B."""
    nr, total = y.shape
    if total % batch != 0:
        raise ShapeError(f"mlp_estimator_input: {total} cols not divisible by {batch}")
    n_slots = total // batch
    return ad.concat_rows([ad.fold_slots(y.re, n_slots), ad.fold_slots(y.im, n_slots)])


def mlp_estimate_angle(v, params: MlpEstimatorParams, theta_scale_deg: float) -> Node:
    x = v if isinstance(v, Node) else ad.constant(np.asarray(v, dtype=np.float64).reshape(-1, 1))
    out = ad.run_mlp(params.layers, MLP_ESTIMATOR_ACTIVATIONS, x)
    return ad.affine_const(ad.tanh(out), float(theta_scale_deg))
