"""Loss functions, dataset generation, and the joint training loop.

One batch: sample scenarios, run the transmitter on every slot's messages,
normalize power over the batch, push the block through both channels with
frozen noise, run detector / estimator / decoders, combine the three task
losses, backpropagate through everything, and Adam-update all networks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Node
from .channel import (CTensor, Scenario, comm_receive_batch, db_to_linear,
                      radar_echo_batch, sample_scenario, scenario_rng)
from .config import SystemConfig
from .errors import ConfigError, NumericalAbort
from .params import ModelParams, init_model
from .radar import (detect, detector_input_batch, estimate_angle,
                    estimator_steps_batch, mlp_estimate_angle,
                    mlp_estimator_input_batch)
from .receiver import decoder_logits, rx_features
from .transmitter import PrioriInfo, blp_forward, cscale, power_normalize, slp_forward

PROB_CLAMP = 1e-12
PATIENCE = 10          # epochs the validation loss may stall before aborting
UNIFORM_P_RANGE = (6.0, 14.0)  # dBmW, randomized-power training mode

# reserved stream tags; scenario streams use bare (seed, index)
_TAG_INIT = (901, 0)
_TAG_VAL = (902, 0)
_TAG_NOISE = 903
_TAG_SHUFFLE = 904
_TAG_VALNOISE = (905, 0)


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


@dataclass
class LossWeights:
    omega1: float = 0.05
    omega2: float = 0.3

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "LossWeights":
        return cls(cfg.omega1, cfg.omega2)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_node(x) -> Node:
    return x if isinstance(x, Node) else ad.constant(np.asarray(x, dtype=np.float64).reshape(1, -1))


def bce_loss(q, t) -> Node:
    """Binary cross-entropy between presence probabilities and labels."""
    qn = _as_node(q)
    t = np.asarray(t, dtype=np.float64).reshape(1, -1)
    qc = ad.clamp(qn, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = ad.mul(ad.constant(t), ad.log(qc))
    neg = ad.mul(ad.constant(1.0 - t), ad.log(ad.affine_const(qc, -1.0, 1.0)))
    return ad.affine_const(ad.mean_all(ad.add(pos, neg)), -1.0)


def masked_mse_loss(theta_hat, theta, t) -> Node:
    """Mean squared angle error over the target-present samples only."""
    t = np.asarray(t, dtype=np.float64).reshape(1, -1)
    count = t.sum()
    if count == 0:
        return ad.constant(0.0)
    th = _as_node(theta_hat)
    diff = ad.sub(th, ad.constant(np.asarray(theta, dtype=np.float64).reshape(1, -1)))
    masked = ad.mul(ad.mul(diff, diff), ad.constant(t))
    return ad.affine_const(ad.sum_all(masked), 1.0 / count)


def cce_loss(p_users, m_users) -> float:
    """Categorical cross-entropy from probability matrices (samples along
    rows), summed over users with a per-user batch mean."""
    total = 0.0
    for p, m in zip(p_users, m_users):
        p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
        m = np.asarray(m, dtype=np.int64)
        total += float(np.mean(-np.log(p[np.arange(p.shape[0]), m])))
    return total


def cce_from_logits(logits_users, m_users) -> Node:
    """Differentiable CCE: log-probabilities as logits minus log-sum-exp."""
    acc = None
    for logits, m in zip(logits_users, m_users):
        lp = ad.log_softmax_cols(logits)
        picked = ad.pick_rows(lp, np.asarray(m, dtype=np.int64))
        term = ad.affine_const(ad.mean_all(picked), -1.0)
        acc = term if acc is None else ad.add(acc, term)
    return acc


def isac_loss(L1, L2, L3, w: LossWeights):
    """omega2 * [(1-omega1) L1 + omega1 L2] + (1-omega2) L3."""
    c1 = w.omega2 * (1.0 - w.omega1)
    c2 = w.omega2 * w.omega1
    c3 = 1.0 - w.omega2
    if any(isinstance(x, Node) for x in (L1, L2, L3)):
        L1 = L1 if isinstance(L1, Node) else ad.constant(L1)
        L2 = L2 if isinstance(L2, Node) else ad.constant(L2)
        L3 = L3 if isinstance(L3, Node) else ad.constant(L3)
        return ad.add(ad.add(ad.affine_const(L1, c1), ad.affine_const(L2, c2)),
                      ad.affine_const(L3, c3))
    return c1 * L1 + c2 * L2 + c3 * L3


# ---------------------------------------------------------------------------
# batched forward pass
# ---------------------------------------------------------------------------

@dataclass
class BatchRecord:
    """One batch's scenarios, forward artifacts, and labels."""

    scenarios: list
    x: CTensor                    # normalized transmit block, Nt x (B*N)
    y_r: CTensor                  # radar echo, Nr x (B*N)
    y_c: list                     # per-user downlink samples, 1 x (B*N)
    q: Node                       # presence probabilities, 1 x B
    t_hat: np.ndarray             # thresholded presence decisions, (B,)
    theta_hat: Node | None        # 1 x (#present), columns follow present_idx
    present_idx: np.ndarray
    logits: list                  # per-user decoder logits, |M| x (B*N)
    labels_t: np.ndarray          # (B,)
    labels_theta: np.ndarray      # (B,)
    messages: np.ndarray          # (K, B*N)


def batch_messages(scenarios) -> np.ndarray:
    """(K, B*N) message matrix, slot columns contiguous per scenario."""
    return np.concatenate([sc.messages.T for sc in scenarios], axis=1)


def forward_batch(model: ModelParams, scenarios, cfg: SystemConfig,
                  rng: np.random.Generator | None,
                  power_scale: float | None = None,
                  P_dbm: float | None = None) -> BatchRecord:
    """Full differentiable forward pass over a scenario batch.

    power_scale=None applies batch power normalization at P_dbm (default
    cfg.P_dbm); a float freezes the normalization to that scalar instead
    (deployment-style evaluation). rng=None disables channel noise.
    """
    B = len(scenarios)
    priori = PrioriInfo.from_config(cfg)
    msgs = batch_messages(scenarios)

    if model.mode == "slp":
        raw = slp_forward(priori, msgs, model.slp)
    else:
        raw = blp_forward(priori, msgs, model.blp)
    if power_scale is None:
        p_lin = db_to_linear(cfg.P_dbm if P_dbm is None else P_dbm)
        x = power_normalize(raw, p_lin)
    else:
        x = cscale(raw, float(power_scale))

    y_r = radar_echo_batch(x, scenarios, cfg, rng)
    det_in = detector_input_batch(y_r, cfg.theta_bounds, B)
    q, t_hat = detect(det_in, model.detector, cfg.q_bar)
    if B == 1:
        t_hat = np.array([t_hat])

    labels_t = np.array([int(sc.target_present) for sc in scenarios])
    labels_theta = np.array([sc.theta_deg for sc in scenarios])
    present_idx = np.flatnonzero(labels_t)

    theta_hat = None
    if present_idx.size:
        n_slots = y_r.shape[1] // B
        cols = (present_idx[:, None] * n_slots + np.arange(n_slots)[None, :]).reshape(-1)
        y_sel = CTensor(ad.select_cols(y_r.re, cols), ad.select_cols(y_r.im, cols))
        scale = cfg.theta_scale()
        if model.estimator_kind == "lstm":
            steps = estimator_steps_batch(y_sel, present_idx.size)
            theta_hat = estimate_angle(steps, model.lstm, scale)
        else:
            v = mlp_estimator_input_batch(y_sel, present_idx.size)
            theta_hat = mlp_estimate_angle(v, model.mlp_estimator, scale)

    y_c = []
    logits = []
    for k in range(cfg.K):
        yk = comm_receive_batch(x, scenarios, k, cfg, rng)
        y_c.append(yk)
        logits.append(decoder_logits(rx_features(yk), model.decoders[k]))

    return BatchRecord(scenarios, x, y_r, y_c, q, t_hat, theta_hat,
                       present_idx, logits, labels_t, labels_theta, msgs)


def batch_losses(rec: BatchRecord, w: LossWeights):
    """(total, l1, l2, l3) as Nodes for one forward batch."""
    l1 = bce_loss(rec.q, rec.labels_t)
    if rec.theta_hat is None:
        l2 = ad.constant(0.0)
    else:
        theta_p = rec.labels_theta[rec.present_idx]
        l2 = masked_mse_loss(rec.theta_hat, theta_p, np.ones(rec.present_idx.size))
    l3 = cce_from_logits(rec.logits, list(rec.messages))
    return isac_loss(l1, l2, l3, w), l1, l2, l3


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def generate_dataset(cfg: SystemConfig, count: int, seed: int | None = None) -> list[Scenario]:
    """Scenario list reproducible from (seed, index) regardless of order."""
    if count < 1:
        raise ConfigError(f"dataset count must be >= 1, got {count}")
    base = cfg.seed if seed is None else seed
    return [sample_scenario(cfg, scenario_rng(base, i)) for i in range(count)]


DATASET_MAGIC = b"ISACDS1"


def save_dataset(path, cfg: SystemConfig, scenarios):
    rec = struct.Struct("<Bdd" + "dd" * cfg.K)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(cfg.scenario_hash())
        fh.write(struct.pack("<Q", len(scenarios)))
        for sc in scenarios:
            vals = [int(sc.target_present), sc.theta_deg, sc.d_r]
            for k in range(cfg.K):
                vals.extend((sc.user_angles_deg[k], sc.d_c[k]))
            fh.write(rec.pack(*vals))
            fh.write(sc.messages.astype(np.uint8).tobytes(order="C"))


def load_dataset(path, cfg: SystemConfig) -> list[Scenario]:
    rec = struct.Struct("<Bdd" + "dd" * cfg.K)
    msg_bytes = cfg.N * cfg.K
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    with fh:
        if fh.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ConfigError(f"{path} is not a dataset file (bad magic)")
        if fh.read(32) != cfg.scenario_hash():
            raise ConfigError(f"{path}: dataset was generated under a different config")
        (count,) = struct.unpack("<Q", fh.read(8))
        out = []
        for _ in range(count):
            data = fh.read(rec.size)
            if len(data) != rec.size:
                raise ConfigError(f"{path}: truncated dataset")
            vals = rec.unpack(data)
            msgs = np.frombuffer(fh.read(msg_bytes), dtype=np.uint8)
            if msgs.size != msg_bytes:
                raise ConfigError(f"{path}: truncated dataset")
            angles = np.array(vals[3::2], dtype=np.float64)
            dists = np.array(vals[4::2], dtype=np.float64)
            out.append(Scenario(bool(vals[0]), vals[1], vals[2], angles, dists,
                                msgs.reshape(cfg.N, cfg.K).astype(np.int64)))
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train(cfg: SystemConfig, mode: str = "slp", estimator_kind: str = "lstm",
          dataset: list | None = None, verbose: bool = False):
    """Jointly train all networks; returns (model, per-epoch loss trace).

    Deterministic given cfg.seed: scenario streams, init, shuffling, and
    noise are all derived from it. The per-epoch validation loss (fixed
    scenarios and noise) must keep improving within PATIENCE epochs.
    """
    cfg.validate()
    if dataset is None:
        dataset = generate_dataset(cfg, cfg.train_count, cfg.seed)
    model = init_model(cfg, mode, estimator_kind, _stream(cfg.seed, *_TAG_INIT))
    w = LossWeights.from_config(cfg)

    params = model.trainable()
    states = [AdamState.for_param(p) for p in params]
    val_scen = generate_dataset(cfg, min(cfg.batch, 512),
                                int(_stream(cfg.seed, *_TAG_VAL).integers(2 ** 31)))

    n = len(dataset)
    n_batches = (n + cfg.batch - 1) // cfg.batch
    trace = []
    best_val = np.inf
    stalled = 0

    for epoch in range(cfg.epochs):
        order = _stream(cfg.seed, _TAG_SHUFFLE, epoch).permutation(n)
        sums = np.zeros(4)
        for b in range(n_batches):
            idx = order[b * cfg.batch:(b + 1) * cfg.batch]
            scenarios = [dataset[i] for i in idx]
            rng = _stream(cfg.seed, _TAG_NOISE, epoch, b)
            p_dbm = cfg.P_dbm
            if cfg.power_mode == "uniform":
                p_dbm = float(rng.uniform(*UNIFORM_P_RANGE))
            rec = forward_batch(model, scenarios, cfg, rng, P_dbm=p_dbm)
            total, l1, l2, l3 = batch_losses(rec, w)
            vals = np.array([total.value[0, 0], l1.value[0, 0],
                             l2.value[0, 0], l3.value[0, 0]])
            if not np.isfinite(vals).all():
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch} batch {b}: "
                    f"total={vals[0]} bce={vals[1]} mse={vals[2]} cce={vals[3]}"
                )
            ad.backward(total)
            for p, s in zip(params, states):
                ad.adam_step(p, s, cfg.lr)
            ad.zero_grads(params)
            sums += vals

        # fixed validation scenarios and noise -> comparable across epochs
        val_rec = forward_batch(model, val_scen, cfg,
                                _stream(cfg.seed, *_TAG_VALNOISE))
        val_total = batch_losses(val_rec, w)[0].value[0, 0]
        if not np.isfinite(val_total):
            raise NumericalAbort(f"non-finite validation loss at epoch {epoch}")
        if val_total < best_val:
            best_val = val_total
            stalled = 0
        else:
            stalled += 1
            if stalled > PATIENCE:
                raise NumericalAbort(
                    f"validation loss stalled for {stalled} epochs "
                    f"(best {best_val:.6f}, now {val_total:.6f})"
                )

        means = sums / n_batches
        trace.append({"epoch": epoch, "loss_total": means[0], "loss_bce": means[1],
                      "loss_mse": means[2], "loss_cce": means[3],
                      "loss_val": float(val_total)})
        if verbose:
            print(f"epoch {epoch:3d}  total {means[0]:.5f}  bce {means[1]:.5f}  "
                  f"mse {means[2]:.5f}  cce {means[3]:.5f}  val {val_total:.5f}")

    return model, trace


def write_loss_trace(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss_total,loss_bce,loss_mse,loss_cce\n")
        for row in trace:
            fh.write(f"{row['epoch']},{row['loss_total']!r},{row['loss_bce']!r},"
                     f"{row['loss_mse']!r},{row['loss_cce']!r}\n")
