"""Passive scalar transport by white-in-time vortex noise on the torus.

Solves ``dT + dW o grad T = kappa Lap T dt`` pseudo-spectrally with 2/3
dealiasing. ``W`` is the Gaussian field with covariance
``sum_k c_k P_k e^{ik.x}``, synthesized from a real Karhunen-Loeve basis.
Trajectories are advanced in batches; each trajectory owns one random
substream so results do not depend on the batch size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import rng as _rng
from .covariance import SpectrumCoeffs, vortex_spectrum
from .eddy import epsilon_q, q_diag, scan_law
from .fields import ConfigurationError, FloatArray, Mollifier, half_space_mask, wavevectors
from .structures import StructureLaw

SCHEMES = ("ito_corrected_euler", "stratonovich_heun")


class NumericalAbort(RuntimeError):
    """A trajectory blew up or produced non-finite values."""

    def __init__(self, message: str, diagnostics: dict) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """Real scalar with Fourier coefficients on the cube ``|k_i| <= k_max``."""

    d: int
    k_max: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.k_max + 1,) * self.d:
            raise ValueError("coefficient cube has the wrong shape")
        mirrored = np.conj(np.flip(c))
        c = np.where(half_space_mask(self.d, self.k_max), c, mirrored)
        c[(self.k_max,) * self.d] = c[(self.k_max,) * self.d].real
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_modes(cls, d: int, k_max: int, modes: Sequence[tuple[Sequence[int], complex]]) -> ScalarField:
        """``T = sum_j (a_j e^{ik_j.x} + c.c.)`` (the ``k = 0`` entry is the real mean)."""
        c = np.zeros((2 * k_max + 1,) * d, np.complex128)
        for k, a in modes:
            k = tuple(int(v) for v in k)
            if len(k) != d or max(abs(v) for v in k) > k_max:
                raise ConfigurationError(f"initial mode {k} outside the resolved cube")
            if all(v == 0 for v in k):
                c[(k_max,) * d] += complex(a).real
                continue
            pos = tuple(v + k_max for v in k)
            neg = tuple(-v + k_max for v in k)
            c[pos] += a
            c[neg] += np.conj(a)
        return cls(d, k_max, c)

    @property
    def mass(self) -> float:
        return float(self.coeffs[(self.k_max,) * self.d].real)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))


@dataclass(frozen=True)
class NoiseBasis:
    """Real modes ``a_j e_j cos(k_j.x)`` and ``a_j e_j sin(k_j.x)``, ``a_j = sqrt(2 c_k)``.

    ``k`` holds the half-space representatives ``(n, d)``; ``directions``
    the orthonormal transverse vectors ``(n, d-1, d)``.
    """

    d: int
    k_max: int
    k: np.ndarray
    directions: np.ndarray
    amplitude: np.ndarray
    qbar: float
    epsilon_q: float
    tail_mass: float = 0.0

    @property
    def n_modes(self) -> int:
        """Number of real (cos or sin) modes."""
        return 2 * self.k.shape[0] * (self.d - 1)

    def pointwise_covariance(self) -> FloatArray:
        """``sum_j a_j^2 e_j e_j^T`` (cos^2 + sin^2 = 1)."""
        if self.k.shape[0] == 0:
            return np.zeros((self.d, self.d))
        a2 = self.amplitude ** 2
        return np.einsum("n,nje,njf->ef", a2, self.directions, self.directions)

    def synthesize(self, points, xi: FloatArray, eta: FloatArray) -> FloatArray:
        """Field ``sum a e (xi cos + eta sin)`` at ``points`` for weights ``(..., n, d-1)``."""
        pts = np.atleast_2d(np.asarray(points, np.float64))
        phase = pts @ self.k.T.astype(np.float64)
        cos, sin = np.cos(phase), np.sin(phase)
        w_c = xi * self.amplitude[:, None]
        w_s = eta * self.amplitude[:, None]
        return (np.einsum("pn,...nj,nje->...pe", cos, w_c, self.directions)
                + np.einsum("pn,...nj,nje->...pe", sin, w_s, self.directions))


def _transverse(k: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the plane (or line) normal to each ``k``, ``(n, d-1, d)``."""
    k = k.astype(np.float64)
    kn = k / np.linalg.norm(k, axis=1, keepdims=True)
    if k.shape[1] == 2:
        return np.stack([kn[:, 1], -kn[:, 0]], axis=1)[:, None, :]
    axis = np.eye(3)[np.argmin(np.abs(kn), axis=1)]
    e1 = np.cross(kn, axis)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(kn, e1)
    return np.stack([e1, e2], axis=1)


def build_noise_basis(coeffs: SpectrumCoeffs, k_max: int | None = None) -> NoiseBasis:
    """Real KL basis of the spectrum restricted to ``|k_i| <= k_max``.

    Modes with ``c_k = 0`` are dropped. ``tail_mass`` is the spectral mass
    of ``coeffs`` outside the retained cube.
    """
    k_max = coeffs.k_max if k_max is None else int(k_max)
    full_total = coeffs.total()
    trunc = coeffs.truncated(k_max) if k_max < coeffs.k_max else coeffs
    c = trunc.per_mode()
    d = coeffs.d
    mask = half_space_mask(d, k_max) & (c > 0)
    k = np.stack([w[mask] for w in wavevectors(d, k_max)], axis=1) if np.any(mask) else \
        np.zeros((0, d), np.int64)
    amp = np.sqrt(2.0 * c[mask])
    dirs = _transverse(k) if k.shape[0] else np.zeros((0, d - 1, d))
    return NoiseBasis(d, k_max, k, dirs, amp, q_diag(trunc), epsilon_q(trunc),
                      max(full_total - trunc.total(), 0.0))


def empty_basis(d: int) -> NoiseBasis:
    return NoiseBasis(d, 0, np.zeros((0, d), np.int64), np.zeros((0, d - 1, d)), np.zeros(0),
                      0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping and resolution.

    Stability requires ``dt (kappa + qbar/2) k_max_T^2 <= 0.5`` with
    ``k_max_T`` the per-axis scalar cutoff (default ``n_grid // 3``).
    """

    kappa: float = 0.05
    dt: float = 1e-3
    steps: int = 100
    scheme: str = "ito_corrected_euler"
    n_grid: int = 64
    k_max_T: int | None = None
    noise_k_max: int = 10
    out_every: int = 1
    blowup_factor: float = 10.0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if not self.kappa >= 0 or not self.dt > 0 or self.steps < 0:
            raise ConfigurationError("need kappa >= 0, dt > 0, steps >= 0")
        if self.n_grid < 8 or self.n_grid % 2:
            raise ConfigurationError("n_grid must be even and at least 8")
        if not 1 <= self.kT or 3 * self.kT >= self.n_grid:
            raise ConfigurationError("k_max_T violates the 2/3 dealiasing rule")
        if self.noise_k_max + 2 * self.kT >= self.n_grid:
            raise ConfigurationError(
                f"noise_k_max + 2 k_max_T = {self.noise_k_max + 2 * self.kT} must stay below "
                f"n_grid = {self.n_grid} to keep the transport product alias-free")
        if self.out_every < 1:
            raise ConfigurationError("out_every must be positive")

    @property
    def kT(self) -> int:
        return self.n_grid // 3 if self.k_max_T is None else int(self.k_max_T)

    @property
    def t_end(self) -> float:
        return self.dt * self.steps

    def stability_number(self, qbar: float) -> float:
        return self.dt * (self.kappa + 0.5 * qbar) * self.kT ** 2

    def check_stability(self, qbar: float) -> None:
        s = self.stability_number(qbar)
        if s > 0.5:
            raise ConfigurationError(f"unstable: dt (kappa + qbar/2) k_max_T^2 = {s:.3g} > 0.5")


# ---------------------------------------------------------------------------
# spectral machinery in rfft layout
# ---------------------------------------------------------------------------


class _Grid:
    def __init__(self, d: int, n: int, kT: int) -> None:
        self.d, self.n, self.kT = d, n, kT
        freqs = [np.fft.fftfreq(n, 1.0 / n)] * (d - 1) + [np.fft.rfftfreq(n, 1.0 / n)]
        self.k = np.stack(np.meshgrid(*freqs, indexing="ij"))
        self.k2 = np.sum(self.k ** 2, axis=0)
        self.keep = np.all(np.abs(self.k) <= kT, axis=0)
        self.shape = self.k2.shape
        self.scale = float(n ** d)
        self.axes = tuple(range(-d, 0))

    def to_grid(self, hat):
        return np.fft.irfftn(hat, s=(self.n,) * self.d, axes=self.axes) * self.scale

    def to_hat(self, g):
        return np.fft.rfftn(g, axes=self.axes) / self.scale

    def positions(self, k: np.ndarray) -> tuple[tuple, np.ndarray]:
        """rfft-layout index tuples for integer wavevectors with last component >= 0."""
        idx = tuple(np.mod(k[:, a], self.n) for a in range(self.d - 1)) + (k[:, -1],)
        return idx, np.ravel_multi_index(idx, self.shape)

    def cube_to_hat(self, cube: np.ndarray, k_max: int) -> np.ndarray:
        out = np.zeros(self.shape, np.complex128)
        k = np.stack([w.ravel() for w in wavevectors(self.d, k_max)], axis=1)
        sel = k[:, -1] >= 0
        idx, _ = self.positions(k[sel])
        out[idx] = cube.ravel()[sel]
        return out

    def hat_to_cube(self, hat: np.ndarray, k_max: int) -> np.ndarray:
        k = np.stack([w.ravel() for w in wavevectors(self.d, k_max)], axis=1)
        lead = hat.shape[:-self.d]
        out = np.empty(lead + (k.shape[0],), np.complex128)
        sel = k[:, -1] >= 0
        idx, _ = self.positions(k[sel])
        out[..., sel] = hat[(...,) + idx]
        idx2, _ = self.positions(-k[~sel])
        out[..., ~sel] = np.conj(hat[(...,) + idx2])
        return out.reshape(hat.shape[:-self.d] + (2 * k_max + 1,) * self.d)


class _NoiseScatter:
    """Maps basis weights to rfft-layout velocity coefficients."""

    def __init__(self, basis: NoiseBasis, grid: _Grid) -> None:
        k = basis.k
        last = k[:, -1] if k.size else np.zeros(0, np.int64)
        self.direct = np.flatnonzero(last >= 0)
        self.mirror = np.flatnonzero(last <= 0)
        _, self.pos_direct = grid.positions(k[self.direct]) if k.size else (None, np.zeros(0, int))
        _, self.pos_mirror = grid.positions(-k[self.mirror]) if k.size else (None, np.zeros(0, int))
        # coefficient of e^{ik.x} for cos: a/2, for sin: -i a/2
        self.vec = basis.amplitude[:, None, None] * basis.directions * 0.5
        self.size = int(np.prod(grid.shape))
        self.grid = grid

    def hat(self, xi: np.ndarray, eta: np.ndarray, scale: float) -> np.ndarray:
        """``(B, d) + shape`` coefficients for weights ``(B, n, d-1)``."""
        b = xi.shape[0]
        d = self.grid.d
        w = np.einsum("bnj,nje->ben", xi - 1j * eta, self.vec) * scale
        out = np.zeros((b, d, self.size), np.complex128)
        out[:, :, self.pos_direct] = w[:, :, self.direct]
        out[:, :, self.pos_mirror] = np.conj(w[:, :, self.mirror])
        return out.reshape((b, d) + self.grid.shape)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


class TransportSolver:
    """Batched stepper bound to one basis and configuration."""

    def __init__(self, basis: NoiseBasis, cfg: SolverConfig, d: int | None = None) -> None:
        self.d = basis.d if d is None else d
        if basis.k_max > cfg.noise_k_max and basis.k.shape[0]:
            if np.max(np.abs(basis.k)) > cfg.noise_k_max:
                raise ConfigurationError("noise basis exceeds the configured noise_k_max")
        cfg.check_stability(basis.qbar)
        self.basis, self.cfg = basis, cfg
        self.grid = _Grid(self.d, cfg.n_grid, cfg.kT)
        self.scatter = _NoiseScatter(basis, self.grid)
        g = self.grid
        self.ik = 1j * g.k
        self.heat = np.exp(-cfg.kappa * g.k2 * cfg.dt) * g.keep
        self.heat_ito = np.exp(-(cfg.kappa + 0.5 * basis.qbar) * g.k2 * cfg.dt) * g.keep
        self.sqrt_dt = math.sqrt(cfg.dt)

    def _advect(self, hat: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Dealiased coefficients of ``u . grad T`` for ``hat`` of shape ``(B,) + shape``."""
        grad = self.grid.to_grid(self.ik[None] * hat[:, None])
        prod = np.sum(u * grad, axis=1)
        out = self.grid.to_hat(prod) * self.grid.keep
        out[(slice(None),) + (0,) * self.d] = 0.0
        return out

    def noise_grid(self, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        return self.grid.to_grid(self.scatter.hat(xi, eta, self.sqrt_dt))

    def step(self, hat: np.ndarray, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Advance a batch one step with standard normal weights ``(B, n, d-1)``."""
        if self.basis.k.shape[0] == 0:
            return hat * self.heat
        u = self.noise_grid(xi, eta)
        if self.cfg.scheme == "ito_corrected_euler":
            return self.heat_ito * (hat - self._advect(hat, u))
        b1 = self._advect(hat, u)
        pred = hat - b1
        b2 = self._advect(pred, u)
        return self.heat * (hat - 0.5 * (b1 + b2))


def _norms(hat: np.ndarray, d: int) -> np.ndarray:
    """``||T||^2`` per batch member in rfft layout (Parseval with Hermitian weights)."""
    w = np.full(hat.shape[-1], 2.0)
    w[0] = w[-1] = 1.0
    return np.sum(np.abs(hat) ** 2 * w, axis=tuple(range(1, hat.ndim)))


def _draws(gens: list, n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    z = np.stack([g.standard_normal((2, n, d - 1)) for g in gens])
    return z[:, 0], z[:, 1]


def step_transport(T: ScalarField, basis: NoiseBasis, cfg: SolverConfig,
                   generator: np.random.Generator) -> ScalarField:
    """One time step of a single trajectory."""
    solver = TransportSolver(basis, cfg, T.d)
    grid = solver.grid
    hat = grid.cube_to_hat(T.coeffs, T.k_max)[None] * grid.keep
    xi, eta = _draws([generator], basis.k.shape[0], T.d)
    new = solver.step(hat, xi, eta)
    new[(0,) + (0,) * T.d] = T.mass
    _check_blowup(hat, new, T.d, cfg, 0)
    k_out = min(T.k_max, cfg.kT)
    return ScalarField(T.d, k_out, grid.hat_to_cube(new[0], k_out))


def _check_blowup(old, new, d, cfg, step) -> None:
    n_old, n_new = _norms(old, d), _norms(new, d)
    bad = ~np.isfinite(n_new) | (n_new > (cfg.blowup_factor ** 2) * np.maximum(n_old, 1e-300))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalAbort(
            f"trajectory {i} blew up at step {step}: ||T||^2 {n_old[i]:.3e} -> {n_new[i]:.3e}",
            {"step": step, "batch_member": i, "norm_sq_before": float(n_old[i]),
             "norm_sq_after": float(n_new[i])})


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class TransportEnsemble:
    """Ensemble statistics at output times."""

    times: FloatArray
    mean_hat: np.ndarray            # (n_out,) + cube of E[T_hat]
    energy: FloatArray              # E ||T||^2
    energy_se: FloatArray
    l1_sq: FloatArray               # E (int |T|)^2
    l1_sq_se: FloatArray
    n_traj: int
    k_max: int
    d: int
    qbar: float
    epsilon_q: float
    kappa: float
    scheme: str
    tail_mass: float = 0.0
    final_hat: np.ndarray | None = field(default=None, repr=False)

    @property
    def mean_energy(self) -> FloatArray:
        """``||E T||^2`` without the mean mode."""
        m = np.array(self.mean_hat)
        m[(slice(None),) + (self.k_max,) * self.d] = 0.0
        return np.sum(np.abs(m) ** 2, axis=tuple(range(1, m.ndim)))

    def mode_mean(self, k) -> np.ndarray:
        idx = tuple(int(v) + self.k_max for v in k)
        return self.mean_hat[(slice(None),) + idx]


def run_ensemble(T0: ScalarField, basis: NoiseBasis, cfg: SolverConfig, n_traj: int, seed: int,
                 batch: int = 100, first_index: int = 0, keep_final: bool = False,
                 record_k_max: int | None = None) -> TransportEnsemble:
    """Run ``n_traj`` trajectories from ``T0`` and accumulate statistics.

    Trajectory ``i`` draws from substream ``(seed, TRANSPORT, first_index + i)``;
    accumulation runs in trajectory order.
    """
    if n_traj < 1:
        raise ConfigurationError("need at least one trajectory")
    d = T0.d
    solver = TransportSolver(basis, cfg, d)
    grid = solver.grid
    out_steps = list(range(0, cfg.steps + 1, cfg.out_every))
    if out_steps[-1] != cfg.steps:
        out_steps.append(cfg.steps)
    n_out = len(out_steps)
    kr = min(cfg.kT, T0.k_max if record_k_max is None else record_k_max)
    mean_sum = np.zeros((n_out,) + (2 * kr + 1,) * d, np.complex128)
    e1 = np.zeros(n_out)
    e2 = np.zeros(n_out)
    l1 = np.zeros(n_out)
    l2 = np.zeros(n_out)
    hat0 = grid.cube_to_hat(T0.coeffs, T0.k_max) * grid.keep
    finals = []
    nb = basis.k.shape[0]
    for start in range(0, n_traj, batch):
        size = min(batch, n_traj - start)
        gens = [_rng.substream(seed, _rng.TRANSPORT, first_index + start + i) for i in range(size)]
        hat = np.broadcast_to(hat0, (size,) + grid.shape).copy()
        o = 0
        for step in range(cfg.steps + 1):
            if step == out_steps[o]:
                mean_sum[o] += grid.hat_to_cube(hat, kr).sum(0)
                en = _norms(hat, d)
                e1[o] += en.sum()
                e2[o] += (en * en).sum()
                a = np.mean(np.abs(grid.to_grid(hat)), axis=tuple(range(1, d + 1))) ** 2
                l1[o] += a.sum()
                l2[o] += (a * a).sum()
                o += 1
            if step == cfg.steps:
                break
            xi, eta = _draws(gens, nb, d) if nb else (None, None)
            new = solver.step(hat, xi, eta)
            new[(slice(None),) + (0,) * d] = T0.mass
            _check_blowup(hat, new, d, cfg, step + 1)
            hat = new
        if keep_final:
            finals.append(grid.hat_to_cube(hat, kr))

    def se(s1, s2):
        mu = s1 / n_traj
        var = np.maximum(s2 / n_traj - mu * mu, 0.0) * n_traj / max(n_traj - 1, 1)
        return mu, np.sqrt(var / n_traj)

    en_mu, en_se = se(e1, e2)
    l1_mu, l1_se = se(l1, l2)
    return TransportEnsemble(
        times=np.array(out_steps, np.float64) * cfg.dt, mean_hat=mean_sum / n_traj,
        energy=en_mu, energy_se=en_se, l1_sq=l1_mu, l1_sq_se=l1_se, n_traj=n_traj, k_max=kr,
        d=d, qbar=basis.qbar, epsilon_q=basis.epsilon_q, kappa=cfg.kappa, scheme=cfg.scheme,
        tail_mass=basis.tail_mass,
        final_hat=np.concatenate(finals) if keep_final else None)


# ---------------------------------------------------------------------------
# decay diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayReport:
    lambda_hat: float               # rate of ||E T||^2
    lambda_hat_energy: float        # rate of E ||T||^2
    lambda_ref: float               # 2 (kappa + qbar/2) |k_min|^2
    lambda_heat: float              # 2 kappa |k_min|^2
    times: FloatArray
    l1_sq: FloatArray
    bound: FloatArray
    bound_ok: bool
    window: tuple[float, float]


def _fit_rate(t: FloatArray, y: FloatArray) -> float:
    pos = y > 0
    if np.count_nonzero(pos) < 2:
        return math.nan
    return -float(stats.linregress(t[pos], np.log(y[pos])).slope)


def eddy_bound(ens: TransportEnsemble, energy0: float, k_min_sq: float = 1.0) -> FloatArray:
    """``(eps_Q/kappa + 2 |D| e^{-2 t lambda}) E||T_0||^2`` with ``|D| = 1``.

    ``lambda = (kappa + qbar/2) |k_min|^2`` is the first eigenvalue of
    ``-(kappa + qbar/2) Lap`` on mean-zero functions of the torus.
    """
    lam = (ens.kappa + 0.5 * ens.qbar) * k_min_sq
    floor = ens.epsilon_q / ens.kappa if ens.kappa > 0 else math.inf
    return (floor + 2.0 * np.exp(-2.0 * ens.times * lam)) * energy0


def measure_decay(ens: TransportEnsemble, window: tuple[float, float] = (0.1, 1.0),
                  k_min_sq: float = 1.0) -> DecayReport:
    """Exponential rates over ``[window[0] t_end, window[1] t_end]`` and the eddy bound."""
    if ens.n_traj < 100:
        raise ConfigurationError("measure_decay needs at least 100 trajectories")
    t = ens.times
    lo, hi = window[0] * t[-1], window[1] * t[-1]
    sel = (t >= lo) & (t <= hi)
    lam_mean = _fit_rate(t[sel], ens.mean_energy[sel])
    mean0 = ens.energy[0]
    lam_energy = _fit_rate(t[sel], ens.energy[sel] - np.abs(ens.mean_hat[(0,) + (ens.k_max,) * ens.d]) ** 2)
    mass0 = ens.mean_hat[(0,) + (ens.k_max,) * ens.d].real
    energy0 = mean0 - mass0 ** 2
    bound = eddy_bound(ens, energy0, k_min_sq)
    return DecayReport(lam_mean, lam_energy, 2.0 * (ens.kappa + 0.5 * ens.qbar) * k_min_sq,
                       2.0 * ens.kappa * k_min_sq, t, ens.l1_sq, bound,
                       bool(np.all(ens.l1_sq <= bound)), (lo, hi))


def mode_decay_rate(ens: TransportEnsemble, k, window: tuple[float, float] = (0.0, 1.0)) -> float:
    """Fitted rate of ``|E T_hat(k)|`` (reference ``(kappa + qbar/2)|k|^2``)."""
    t = ens.times
    sel = (t >= window[0] * t[-1]) & (t <= window[1] * t[-1])
    return _fit_rate(t[sel], np.abs(ens.mode_mean(k))[sel])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DissipationRow:
    ell: float
    qbar: float
    epsilon_q: float
    lambda_hat: float
    lambda_ref: float
    floor: float
    bound_ok: bool
    tail_mass: float
    final_l1_sq: float
    mode: tuple = ()
    mode_rate: float = math.nan
    mode_rate_ref: float = math.nan


def dissipation_experiment(template: StructureLaw, ell_list: Sequence[float], cfg: SolverConfig,
                           m: Mollifier, T0: ScalarField, n_traj: int, seed: int,
                           spectrum_k_max: int | None = None, batch: int = 100) -> dict:
    """Transport ensembles across sizes at fixed ``sigma^2`` (2D) or ``E[U] sigma^2`` (3D).

    All sizes share the random substreams, so differences in ``lambda_hat``
    reflect the spectra rather than sampling noise. Each row also carries
    the decay rate of ``|E T_hat(k)|`` for the largest initial mode ``k``.
    """
    ells = np.asarray(ell_list, np.float64)
    if ells.size < 2 or np.any(np.diff(ells) >= 0):
        raise ConfigurationError("ell_list must be strictly decreasing")
    rows = []
    ref = template.sigma_sq() * template.mean_duration()
    mode = _dominant_mode(T0)
    for ell in ells:
        law = scan_law(template, float(ell))
        norm = ref / (law.sigma_sq() * law.mean_duration())
        spec = vortex_spectrum(law, m, spectrum_k_max or 4 * cfg.noise_k_max).scaled(norm)
        basis = build_noise_basis(spec, cfg.noise_k_max)
        ens = run_ensemble(T0, basis, cfg, n_traj, seed, batch=batch)
        rep = measure_decay(ens)
        k2 = float(np.sum(np.square(mode)))
        rows.append(DissipationRow(float(ell), basis.qbar, basis.epsilon_q, rep.lambda_hat,
                                   rep.lambda_ref, basis.epsilon_q / cfg.kappa, rep.bound_ok,
                                   basis.tail_mass, float(ens.l1_sq[-1]), mode,
                                   mode_decay_rate(ens, mode),
                                   (cfg.kappa + 0.5 * basis.qbar) * k2))
    lam = np.array([r.lambda_hat for r in rows])
    verdicts = {"lambda_increasing_ok": bool(np.all(np.diff(lam) > 0)),
                "bound_ok": bool(all(r.bound_ok for r in rows))}
    return {"rows": rows, "verdicts": verdicts}


def _dominant_mode(T: ScalarField) -> tuple:
    """Half-space wavevector with the largest ``|T_hat|`` (ties go to the first in C order)."""
    mag = np.where(half_space_mask(T.d, T.k_max), np.abs(T.coeffs), -1.0)
    idx = np.unravel_index(int(np.argmax(mag)), mag.shape)
    return tuple(int(i) - T.k_max for i in idx)


def write_timeseries_csv(ens: TransportEnsemble, rep: DecayReport, path: str | Path) -> Path:
    """``t, E||T||^2, E(int|T|)^2, ||E T||^2, bound`` per output time."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy", "energy_se", "l1_sq", "l1_sq_se", "mean_energy", "bound"])
        for row in zip(ens.times, ens.energy, ens.energy_se, ens.l1_sq, ens.l1_sq_se,
                       ens.mean_energy, rep.bound):
            w.writerow([f"{v:.17g}" for v in row])
    return path
