"""Complex-baseband physics: steering vectors, path loss, scenario sampling,
the radar echo under target-present/absent hypotheses, and the downlink
received signal.

Channels are non-differentiable w.r.t. the physics (angles, distances,
noise are sampled constants of a forward pass) but differentiable
pass-throughs w.r.t. the transmit signal, so gradients reach the
transmitter network. Complex values are carried as paired real grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .config import SystemConfig
from .errors import DomainError, ShapeError


def db_to_linear(db: float) -> float:
    """dB (or dBmW) to the linear (milliwatt-consistent) scale."""
    return 10.0 ** (db / 10.0)


# ---------------------------------------------------------------------------
# complex tensors over the autodiff engine
# ---------------------------------------------------------------------------

class CTensor:
    """Complex matrix as paired real grids (re, im), each an autodiff Node."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = re if isinstance(re, Node) else ad.constant(re)
        self.im = im if isinstance(im, Node) else ad.constant(im)
        if self.re.value.shape != self.im.value.shape:
            raise ShapeError(
                f"CTensor: re shape {self.re.value.shape} != im shape {self.im.value.shape}"
            )

    @classmethod
    def from_complex(cls, arr) -> "CTensor":
        arr = np.asarray(arr, dtype=np.complex128)
        if not np.isfinite(arr).all():
            raise DomainError("CTensor: non-finite entries")
        return cls(np.ascontiguousarray(arr.real), np.ascontiguousarray(arr.imag))

    @property
    def shape(self):
        return self.re.value.shape

    def to_complex(self) -> np.ndarray:
        return self.re.value + 1j * self.im.value


def cadd(a: CTensor, b: CTensor) -> CTensor:
    return CTensor(ad.add(a.re, b.re), ad.add(a.im, b.im))


def cmul(a: CTensor, b: CTensor) -> CTensor:
    """Elementwise complex product (a.re+j a.im)(b.re+j b.im)."""
    re = ad.sub(ad.mul(a.re, b.re), ad.mul(a.im, b.im))
    im = ad.add(ad.mul(a.re, b.im), ad.mul(a.im, b.re))
    return CTensor(re, im)


def cmatmul(a: CTensor, b: CTensor) -> CTensor:
    re = ad.sub(ad.matmul(a.re, b.re), ad.matmul(a.im, b.im))
    im = ad.add(ad.matmul(a.re, b.im), ad.matmul(a.im, b.re))
    return CTensor(re, im)


def cscale(a: CTensor, s) -> CTensor:
    """Scale by a real python float or a real 1x1 Node."""
    if isinstance(s, Node):
        return CTensor(ad.mul(a.re, s), ad.mul(a.im, s))
    return CTensor(ad.affine_const(a.re, float(s)), ad.affine_const(a.im, float(s)))


# ---------------------------------------------------------------------------
# array response and propagation
# ---------------------------------------------------------------------------

def _steer(theta_deg: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, unit L2 norm, as a complex column."""
    phase = -np.pi * np.arange(n) * np.sin(np.deg2rad(theta_deg))
    return (np.exp(1j * phase) / np.sqrt(n)).reshape(n, 1)


def steering_vector(theta_deg: float, n: int) -> CTensor:
    """Entry i = (1/sqrt(n)) * exp(-j*pi*i*sin(theta))."""
    if n < 1:
        raise DomainError(f"steering_vector: need n >= 1, got {n}")
    return CTensor.from_complex(_steer(theta_deg, n))


def path_loss(ref_db: float, d: float, d0: float, gamma: float) -> float:
    """Linear distance-dependent loss 10^(ref_db/10) * (d/d0)^(-gamma)."""
    if d <= 0 or d0 <= 0:
        raise DomainError(f"path_loss: distances must be positive, got d={d}, d0={d0}")
    return db_to_linear(ref_db) * (d / d0) ** (-gamma)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """One sampled world; drives both the radar and downlink channels."""

    target_present: bool
    theta_deg: float              # target angle (sampled even when absent)
    d_r: float                    # target distance (m)
    user_angles_deg: np.ndarray   # shape (K,)
    d_c: np.ndarray               # per-user distances, shape (K,)
    messages: np.ndarray          # shape (N, K), entries in {0..|M|-1}


def scenario_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, scenario index); order-independent."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))


def _positive_normal(rng, mean: float, std: float) -> float:
    d = rng.normal(mean, std)
    while d <= 0.0:
        d = rng.normal(mean, std)
    return float(d)


def sample_scenario(cfg: SystemConfig, rng: np.random.Generator) -> Scenario:
    present = bool(rng.random() < 0.5)
    theta = float(rng.uniform(cfg.theta_bounds[0], cfg.theta_bounds[1]))
    d_r = _positive_normal(rng, cfg.d_r_mean, cfg.d_r_std)
    angles = np.empty(cfg.K)
    dists = np.empty(cfg.K)
    for k, (lo, hi) in enumerate(cfg.user_bounds):
        angles[k] = rng.uniform(lo, hi)
        dists[k] = _positive_normal(rng, cfg.d_c_mean, cfg.d_c_std)
    messages = rng.integers(0, cfg.M_size, size=(cfg.N, cfg.K), dtype=np.int64)
    return Scenario(present, theta, d_r, angles, dists, messages)


# ---------------------------------------------------------------------------
# radar echo
# ---------------------------------------------------------------------------

def _radar_gain(cfg: SystemConfig) -> float:
    return float(np.sqrt(cfg.Nt * cfg.Nr))


def radar_echo_batch(x: CTensor, scenarios, cfg: SystemConfig,
                     rng: np.random.Generator | None) -> CTensor:
    """Echoes for B scenarios stacked column-wise: x is Nt x (B*N) with each
    scenario's N slot columns contiguous; returns Nr x (B*N).

    Present scenarios get gain * rcs * path_loss * a_r(theta) a_t(theta)^T
    applied to their slots; absent scenarios contribute noise only. Physics
    coefficients are constants of the batch, so the result stays
    differentiable w.r.t. x. rng=None means noiseless.
    """
    nt, total = x.shape
    B = len(scenarios)
    if nt != cfg.Nt or total % B != 0:
        raise ShapeError(
            f"radar_echo: x is {x.shape}, expected ({cfg.Nt}, {B}*N)"
        )
    n_slots = total // B

    at = np.zeros((cfg.Nt, total), dtype=np.complex128)
    ar_scaled = np.zeros((cfg.Nr, total), dtype=np.complex128)
    g = _radar_gain(cfg)
    for b, sc in enumerate(scenarios):
        cols = slice(b * n_slots, (b + 1) * n_slots)
        if sc.target_present:
            coeff = g * cfg.alpha_t * path_loss(cfg.alpha0_db, sc.d_r, cfg.d0, cfg.gamma)
            at[:, cols] = _steer(sc.theta_deg, cfg.Nt)
            ar_scaled[:, cols] = coeff * _steer(sc.theta_deg, cfg.Nr)

    # projection a_t^T x per column, then outer with the receive response
    s = cmul(CTensor.from_complex(at), x)
    ones_row = CTensor(np.ones((1, cfg.Nt)), np.zeros((1, cfg.Nt)))
    proj = cmatmul(ones_row, s)
    proj_rows = CTensor(ad.broadcast_rows(proj.re, cfg.Nr), ad.broadcast_rows(proj.im, cfg.Nr))
    y = cmul(CTensor.from_complex(ar_scaled), proj_rows)

    if rng is not None:
        sd = np.sqrt(db_to_linear(cfg.sigma_r2_dbm) / 2.0)
        z = sd * (rng.standard_normal((cfg.Nr, total))
                  + 1j * rng.standard_normal((cfg.Nr, total)))
        y = cadd(y, CTensor.from_complex(z))
    return y


def radar_echo(x_block: CTensor, sc: Scenario, cfg: SystemConfig,
               rng: np.random.Generator | None) -> CTensor:
    """Single-scenario echo: x_block is Nt x N, result Nr x N."""
    if x_block.shape != (cfg.Nt, cfg.N):
        raise ShapeError(
            f"radar_echo: x_block is {x_block.shape}, expected ({cfg.Nt}, {cfg.N})"
        )
    return radar_echo_batch(x_block, [sc], cfg, rng)


# ---------------------------------------------------------------------------
# downlink
# ---------------------------------------------------------------------------

def comm_receive_batch(x: CTensor, scenarios, user: int, cfg: SystemConfig,
                       rng: np.random.Generator | None) -> CTensor:
    """Received samples of one user (0-based index) for every slot column of
    x (Nt x B*N); returns 1 x (B*N)."""
    nt, total = x.shape
    B = len(scenarios)
    if nt != cfg.Nt or total % B != 0:
        raise ShapeError(f"comm_receive: x is {x.shape}, expected ({cfg.Nt}, {B}*N)")
    n_slots = total // B
    gc = float(np.sqrt(cfg.Nt))

    a = np.zeros((cfg.Nt, total), dtype=np.complex128)
    for b, sc in enumerate(scenarios):
        beta = path_loss(cfg.beta0_db, sc.d_c[user], cfg.d0, cfg.gamma)
        cols = slice(b * n_slots, (b + 1) * n_slots)
        a[:, cols] = gc * np.sqrt(beta) * _steer(sc.user_angles_deg[user], cfg.Nt)

    s = cmul(CTensor.from_complex(a), x)
    ones_row = CTensor(np.ones((1, cfg.Nt)), np.zeros((1, cfg.Nt)))
    y = cmatmul(ones_row, s)

    if rng is not None:
        sd = np.sqrt(db_to_linear(cfg.sigma_c2_dbm) / 2.0)
        z = sd * (rng.standard_normal((1, total)) + 1j * rng.standard_normal((1, total)))
        y = cadd(y, CTensor.from_complex(z))
    return y


def comm_receive(x_slot: CTensor, sc: Scenario, k: int, cfg: SystemConfig,
                 rng: np.random.Generator | None) -> CTensor:
    """Signal at user k (1-based, per the system model) for one slot;
    returns a 1x1 complex sample."""
    if not 1 <= k <= cfg.K:
        raise IndexError(f"comm_receive: user index {k} outside 1..{cfg.K}")
    if x_slot.shape != (cfg.Nt, 1):
        raise ShapeError(
            f"comm_receive: x_slot is {x_slot.shape}, expected ({cfg.Nt}, 1)"
        )
    return comm_receive_batch(x_slot, [sc], k - 1, cfg, rng)
