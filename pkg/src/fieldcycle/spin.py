"""NV-13C spin model at low field: shifted nuclear Larmor frequency,
chirped-microwave Landau-Zener polarization transfer, and powder averaging.

The working model is four levels: the m_s=0 electron sublevel and one
driven m_s=+/-1 sublevel, each carrying a carbon spin-1/2.  In m_s=0 the
nuclear quantization is set by the (second-order hyperfine corrected)
Zeeman interaction; in the driven sublevel it is set by the hyperfine
coupling, tilted by the N-to-V axis angle.  Sweeping the microwave
frequency through the transition ladder drives sequential avoided
crossings that pump the nuclear spin in a fixed direction irrespective of
crystallite orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import constants as _const

from .errors import NearDivergence, NonlinearRegime, StepTooCoarse
from .util import parallel_map

__all__ = [
    "SpinConstants",
    "SpinSystem",
    "SweepParams",
    "PowderEnsemble",
    "SweepResult",
    "PowderResult",
    "Crossing",
    "shifted_larmor",
    "manifold_blocks",
    "static_hamiltonian",
    "crossing_table",
    "lz_probability",
    "propagate_sweep",
    "powder_average",
    "boltzmann_polarization",
    "enhancement_to_equivalent_field",
    "snr_field_scaling",
]

GUARD_BAND_HZ = 1.0e6
NORM_DRIFT_TOL = 1e-9

_SX = np.array([[0.0, 0.5], [0.5, 0.0]])
_SZ = np.array([[0.5, 0.0], [0.0, -0.5]])
_I2 = np.eye(2)


@dataclass(frozen=True)
class SpinConstants:
    """Gyromagnetic ratios in Hz/T and the zero-field splitting in Hz."""

    gamma_e: float = 28.024e9
    gamma_n: float = 10.7084e6
    delta_zfs: float = 2.87e9
    h: float = _const.h
    k_B: float = _const.k

    def __post_init__(self):
        for name in ("gamma_e", "gamma_n", "delta_zfs", "h", "k_B"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


DEFAULT_CONSTANTS = SpinConstants()


@dataclass(frozen=True)
class SpinSystem:
    """One NV-13C pair: hyperfine coupling A (Hz), N-to-V axis angle with
    respect to the external field (rad), and the polarizing field (T)."""

    hyperfine_Hz: float
    theta_rad: float
    B_pol_T: float

    def __post_init__(self):
        if not 0.0 <= self.theta_rad <= math.pi:
            raise ValueError("theta_rad must lie in [0, pi]")
        if self.B_pol_T <= 0:
            raise ValueError("B_pol_T must be positive")

    def low_field(self, c: SpinConstants = DEFAULT_CONSTANTS) -> bool:
        """True when the nuclear Larmor frequency is below the hyperfine."""
        return c.gamma_n * self.B_pol_T <= abs(self.hyperfine_Hz)


@dataclass(frozen=True)
class SweepParams:
    """Chirped microwave drive.

    ``band_center_Hz=None`` selects, per system, the two-crossing ladder
    into the lower hyperfine branch (the canonical transfer window); an
    explicit center/width addresses an absolute frequency band instead.
    ``sweep_rate_Hz_per_s`` > 0 sweeps the frequency upward.
    """

    sweep_rate_Hz_per_s: float = 6.0e9
    mw_rabi_Hz: float = 60e3
    n_sweeps: int = 1
    band_center_Hz: Optional[float] = None
    band_width_Hz: float = 400e6
    cfl: float = 1e-2  # max |H| * dt per step
    edge_fraction: float = 0.12  # cos^2 drive apodization at window edges
    reset_fidelity: float = 1.0

    def __post_init__(self):
        if self.sweep_rate_Hz_per_s == 0:
            raise ValueError("sweep_rate_Hz_per_s must be nonzero")
        if self.band_width_Hz <= 0:
            raise ValueError("band_width_Hz must be positive")
        if self.mw_rabi_Hz <= 0:
            raise ValueError("mw_rabi_Hz must be positive")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be at least 1")
        if not 0.0 < self.cfl <= 1e-2:
            raise ValueError("cfl must be in (0, 1e-2]")
        if not 0.0 <= self.reset_fidelity <= 1.0:
            raise ValueError("reset_fidelity must lie in [0, 1]")


# ---------------------------------------------------------------------------
# static structure

def shifted_larmor(sys: SpinSystem, c: SpinConstants = DEFAULT_CONSTANTS) -> float:
    """Second-order hyperfine-corrected nuclear frequency in m_s=0 (Hz)."""
    denom = c.delta_zfs - c.gamma_e * sys.B_pol_T * math.cos(sys.theta_rad)
    if abs(denom) < GUARD_BAND_HZ:
        raise NearDivergence(
            f"electron gap {denom:.3g} Hz inside the {GUARD_BAND_HZ:.0e} Hz guard band")
    w_l = c.gamma_n * sys.B_pol_T
    return w_l + c.gamma_e * sys.B_pol_T * sys.hyperfine_Hz * math.sin(sys.theta_rad) / denom


def electron_gap(sys: SpinSystem, c: SpinConstants = DEFAULT_CONSTANTS) -> float:
    """Rotating-frame reference: driven-sublevel energy above m_s=0 (Hz)."""
    return c.delta_zfs - c.gamma_e * sys.B_pol_T * math.cos(sys.theta_rad)


def manifold_blocks(sys: SpinSystem, c: SpinConstants = DEFAULT_CONSTANTS):
    """Nuclear Hamiltonians (Hz) of the two electron manifolds.

    m_s=0 carries the corrected Zeeman splitting along the field axis;
    the driven manifold carries the bare Zeeman plus the hyperfine field
    tilted by theta.
    """
    h_g = shifted_larmor(sys, c) * _SZ
    w_l = c.gamma_n * sys.B_pol_T
    a = sys.hyperfine_Hz
    h_e = w_l * _SZ - a * (math.cos(sys.theta_rad) * _SZ + math.sin(sys.theta_rad) * _SX)
    return h_g, h_e


def static_hamiltonian(sys: SpinSystem, c: SpinConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """4x4 lab-frame Hamiltonian (Hz), basis (0,up),(0,dn),(e,up),(e,dn)."""
    h_g, h_e = manifold_blocks(sys, c)
    gap = electron_gap(sys, c)
    h = np.zeros((4, 4))
    h[:2, :2] = h_g
    h[2:, 2:] = h_e + gap * _I2
    return h


@dataclass(frozen=True)
class Crossing:
    """One avoided crossing of the swept ladder."""

    detuning_Hz: float       # rotating-frame detuning where the levels meet
    frequency_Hz: float      # absolute microwave frequency of the transition
    g_level: int             # 0 = lower m_s=0 nuclear level, 1 = upper
    e_level: int             # 0 = lower driven-manifold level, 1 = upper
    coupling_Hz: float       # off-diagonal element (half the minimum gap)


def crossing_table(sys: SpinSystem, sweep: SweepParams,
                   c: SpinConstants = DEFAULT_CONSTANTS) -> list[Crossing]:
    """The four ladder crossings, ordered as the upward sweep meets them
    (decreasing detuning)."""
    h_g, h_e = manifold_blocks(sys, c)
    gap = electron_gap(sys, c)
    wg, qg = np.linalg.eigh(h_g)
    we, qe = np.linalg.eigh(h_e)
    out = []
    for i in range(2):
        for j in range(2):
            coupling = sweep.mw_rabi_Hz / 2 * abs(np.vdot(qe[:, j], qg[:, i]))
            det = float(wg[i] - we[j])
            out.append(Crossing(det, gap - det, i, j, float(coupling)))
    out.sort(key=lambda x: -x.detuning_Hz)
    return out


def lz_probability(gap_Hz: float, rate_Hz_per_s: float) -> float:
    """Diabatic passage probability exp(-2 pi gap^2 / |rate|) for one
    avoided crossing, with gap and rate in angular-consistent units."""
    if rate_Hz_per_s == 0:
        raise ValueError("rate must be nonzero")
    if gap_Hz == 0.0:
        return 1.0
    return float(np.exp(-2.0 * np.pi * gap_Hz ** 2 / abs(rate_Hz_per_s)))


# ---------------------------------------------------------------------------
# sweep propagation

def _detuning_window(sys, sweep, c):
    """Detuning interval (d_hi -> d_lo) the integrator covers."""
    table = crossing_table(sys, sweep, c)
    dets = [x.detuning_Hz for x in table]
    rate = abs(sweep.sweep_rate_Hz_per_s)
    margin = max(12.0 * math.sqrt(rate) / (2 * math.pi), 8.0 * sweep.mw_rabi_Hz,
                 0.35 * (dets[0] - dets[1]))
    if sweep.band_center_Hz is None:
        # canonical ladder: both crossings into the lower hyperfine branch
        d_hi = dets[0] + margin
        d_lo = 0.5 * (dets[1] + dets[2])
    else:
        gap = electron_gap(sys, c)
        d_hi = gap - (sweep.band_center_Hz - sweep.band_width_Hz / 2)
        d_lo = gap - (sweep.band_center_Hz + sweep.band_width_Hz / 2)
        # integrate only where the structure lives
        d_hi = min(d_hi, dets[0] + margin)
        d_lo = max(d_lo, dets[-1] - margin)
    if sweep.sweep_rate_Hz_per_s < 0:
        d_hi, d_lo = d_lo, d_hi
    return d_hi, d_lo


def _sweep_unitary(sys, sweep, c, chunk=32768):
    """Total unitary of one chirp over the detuning window.

    The per-step propagator is the exact exponential of the midpoint
    Hamiltonian (batched eigendecomposition, log-tree product), so each
    step is unitary to machine precision; the drive envelope ramps on and
    off over ``edge_fraction`` of the window to avoid switching artifacts.
    """
    h_g, h_e = manifold_blocks(sys, c)
    d_hi, d_lo = _detuning_window(sys, sweep, c)
    if (d_hi - d_lo) * sweep.sweep_rate_Hz_per_s <= 0 or d_hi == d_lo:
        return np.eye(4, dtype=complex), 0
    omega = sweep.mw_rabi_Hz
    h_base = np.zeros((4, 4))
    h_base[:2, :2] = h_g
    h_base[2:, 2:] = h_e
    h_drive = np.zeros((4, 4))
    h_drive[:2, 2:] = _I2 / 2
    h_drive[2:, :2] = _I2 / 2
    h_detune = np.zeros((4, 4))
    h_detune[2, 2] = h_detune[3, 3] = 1.0

    hmax = (max(abs(d_hi), abs(d_lo))
            + float(abs(np.linalg.eigvalsh(h_g)).max())
            + float(abs(np.linalg.eigvalsh(h_e)).max()) + omega)
    dt = sweep.cfl / hmax
    span = d_hi - d_lo
    total_t = abs(span / sweep.sweep_rate_Hz_per_s)
    nst = max(8, int(math.ceil(total_t / dt)))
    dt = total_t / nst

    u_total = np.eye(4, dtype=complex)
    ef = sweep.edge_fraction
    for s0 in range(0, nst, chunk):
        s1 = min(s0 + chunk, nst)
        x = (np.arange(s0, s1) + 0.5) / nst
        det = d_hi - span * x
        env = np.ones_like(x)
        lo = x < ef
        hi = x > 1.0 - ef
        env[lo] = np.sin(0.5 * np.pi * x[lo] / ef) ** 2
        env[hi] = np.sin(0.5 * np.pi * (1.0 - x[hi]) / ef) ** 2
        hb = (h_base[None, :, :]
              + det[:, None, None] * h_detune[None, :, :]
              + (omega * env)[:, None, None] * h_drive[None, :, :])
        w, q = np.linalg.eigh(hb)
        phases = np.exp(-2j * np.pi * w * dt)
        ub = np.einsum("nij,nj,nkj->nik", q, phases, q.conj())
        while ub.shape[0] > 1:
            m = ub.shape[0]
            if m % 2:
                tail = ub[-1]
                ub = np.matmul(ub[1:m:2], ub[0:m - 1:2])
                ub = np.concatenate([ub, tail[None]])
            else:
                ub = np.matmul(ub[1::2], ub[0::2])
        u_total = ub[0] @ u_total
    return u_total, nst


def _reset_electron(rho: np.ndarray, fidelity: float) -> np.ndarray:
    """Optical repolarization: project the electron back to m_s=0 keeping
    the nuclear populations; ``fidelity`` < 1 leaves part of the state
    untouched.  The sweep retrace and repumping take many nuclear Larmor
    periods, so nuclear coherences dephase between sweeps."""
    rho_n = rho[:2, :2] + rho[2:, 2:]
    reset = np.zeros_like(rho)
    reset[0, 0] = rho_n[0, 0]
    reset[1, 1] = rho_n[1, 1]
    return fidelity * reset + (1.0 - fidelity) * rho


@dataclass(frozen=True)
class SweepResult:
    polarization: float
    norm_drift: float
    n_steps: int
    per_sweep: tuple[float, ...]


def propagate_sweep(sys: SpinSystem, sweep: SweepParams,
                    c: SpinConstants = DEFAULT_CONSTANTS,
                    details: bool = False):
    """Net nuclear polarization after ``n_sweeps`` chirps with electron
    repolarization between sweeps; starts in m_s=0 with an unpolarized
    nucleus.  Returns the polarization, or a SweepResult when ``details``."""
    u, nst = _sweep_unitary(sys, sweep, c)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[1, 1] = 0.5
    per_sweep = []
    worst_drift = 0.0
    for _ in range(sweep.n_sweeps):
        rho = u @ rho @ u.conj().T
        drift = abs(float(np.trace(rho).real) - 1.0)
        worst_drift = max(worst_drift, drift)
        if drift > NORM_DRIFT_TOL:
            raise StepTooCoarse(f"norm drift {drift:.3e} exceeds {NORM_DRIFT_TOL:.0e}")
        rho = _reset_electron(rho, sweep.reset_fidelity)
        per_sweep.append(float((rho[0, 0] - rho[1, 1]).real
                               + (rho[2, 2] - rho[3, 3]).real))
    pol = per_sweep[-1]
    if details:
        return SweepResult(pol, worst_drift, nst, tuple(per_sweep))
    return pol


# ---------------------------------------------------------------------------
# powder averaging

@dataclass(frozen=True)
class PowderEnsemble:
    """Orientation quadrature: nodes theta_k with sin-theta weights that
    sum to one over the hemisphere."""

    thetas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @classmethod
    def gauss_legendre(cls, n: int) -> "PowderEnsemble":
        """n-node Gauss-Legendre rule in cos(theta) over the hemisphere."""
        u, w = np.polynomial.legendre.leggauss(n)
        cosu = 0.5 * (u + 1.0)
        return cls(tuple(float(t) for t in np.arccos(cosu)),
                   tuple(float(x) for x in 0.5 * w))

    @classmethod
    def single(cls, theta: float) -> "PowderEnsemble":
        return cls((float(theta),), (1.0,))


@dataclass(frozen=True)
class PowderResult:
    mean_polarization: float
    table: tuple[tuple[float, float, float], ...]  # (theta, weight, polarization)

    def signs_uniform(self) -> bool:
        signs = {p > 0 for _, _, p in self.table}
        return len(signs) == 1


def powder_average(sys_template: SpinSystem, sweep: SweepParams,
                   ensemble: PowderEnsemble,
                   c: SpinConstants = DEFAULT_CONSTANTS,
                   max_workers: Optional[int] = None) -> PowderResult:
    """Orientation-averaged transfer; per-node results reduce in node order."""
    if len(ensemble.thetas) < 1:
        raise ValueError("empty ensemble")

    def one(theta):
        return propagate_sweep(replace(sys_template, theta_rad=theta), sweep, c)

    pols = parallel_map(one, ensemble.thetas, max_workers=max_workers)
    mean = float(sum(w * p for w, p in zip(ensemble.weights, pols)))
    table = tuple((t, w, p) for t, w, p in zip(ensemble.thetas, ensemble.weights, pols))
    return PowderResult(mean, table)


# ---------------------------------------------------------------------------
# polarization bookkeeping

def boltzmann_polarization(B_T: float, T_K: float,
                           c: SpinConstants = DEFAULT_CONSTANTS) -> float:
    """Thermal nuclear polarization tanh(h gamma B / 2 k T); odd in B."""
    if T_K <= 0:
        raise ValueError("T must be positive")
    return math.tanh(c.h * c.gamma_n * B_T / (2.0 * c.k_B * T_K))


def enhancement_to_equivalent_field(epsilon: float, B_ref_T: float,
                                    T_K: float = 298.0,
                                    c: SpinConstants = DEFAULT_CONSTANTS) -> float:
    """Field whose thermal polarization matches an enhancement ``epsilon``
    over the reference field; valid only in the linear tanh regime."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    b_eq = epsilon * B_ref_T
    for b in (B_ref_T, b_eq):
        if c.h * c.gamma_n * b / (2.0 * c.k_B * T_K) > 0.1:
            raise NonlinearRegime(
                f"tanh argument at B={b:.3g} T exceeds 0.1; product rule invalid")
    return b_eq


def snr_field_scaling(B1_T: float, B2_T: float) -> float:
    """Inductive-detection SNR ratio between fields, (B2/B1)^(7/4)."""
    if B1_T <= 0 or B2_T <= 0:
        raise ValueError("fields must be positive")
    return (B2_T / B1_T) ** 1.75
