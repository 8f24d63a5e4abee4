"""The rescaled compound-Poisson process ``W^N_t = N^-1 sum_i sigma_i 1{s_i <= t}``.

Arrivals ``s_i`` form a Poisson process of rate ``lambda N^2`` on ``[0, T]``
(count drawn first, then sorted uniform times). Each ``sigma_i`` is an
independent structure; paths are recorded only at probe points.
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
from .covariance import SpectrumCoeffs, two_point_covariance, vortex_spectrum
from .fields import (
    ConfigurationError,
    FloatArray,
    Mollifier,
    evaluate_modes,
    grid_points,
    wavenumber_sq,
    wavevectors,
)
from .structures import StructureLaw, draw_many, filament_coeffs


@dataclass(frozen=True)
class ScalingParams:
    N: int = 1
    lam: float = 1.0
    T: float = 1.0

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError("N must be a positive integer")
        if not self.lam > 0 or not self.T > 0:
            raise ConfigurationError("lambda and T must be positive")

    @property
    def rate(self) -> float:
        """Arrival rate ``lambda N^2`` of the rescaled process."""
        return self.lam * self.N ** 2

    @property
    def amplitude(self) -> float:
        return 1.0 / self.N


@dataclass(frozen=True)
class JumpPathRecord:
    """One path observed at ``probes`` and ``out_times``.

    ``values`` has shape ``(len(out_times), n_probes, d)``. ``jumps`` (the
    rescaled per-arrival probe values) and ``arrival_times`` are kept only
    on request; the per-path maxima of the jump sizes are always stored.
    """

    path_index: int
    n_arrivals: int
    out_times: FloatArray
    values: FloatArray
    max_jump: float
    max_jump_h: float
    arrival_times: FloatArray | None = None
    jumps: FloatArray | None = None


@dataclass
class JumpKernel:
    """Precomputed per-structure evaluation at fixed probes."""

    law: StructureLaw
    m: Mollifier
    k_max: int
    probes: FloatArray
    _base: np.ndarray | None = field(default=None, repr=False)
    _h2: float | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.probes = np.atleast_2d(np.asarray(self.probes, np.float64))
        if self.probes.shape[1] != self.law.d:
            raise ConfigurationError("probe dimension does not match the law")
        if self.m.d != self.law.d:
            raise ConfigurationError("mollifier dimension does not match the law")
        if self.law.d == 2:
            k = wavevectors(2, self.k_max).astype(np.float64)
            k2 = wavenumber_sq(2, self.k_max).astype(np.float64)
            k2[self.k_max, self.k_max] = np.inf
            self._kperp_over_k2 = 1j * np.stack([k[1], -k[0]]) / k2
            self._knorm = np.sqrt(wavenumber_sq(2, self.k_max).astype(np.float64))
            if self.law.length == "point":
                self._base = self._kperp_over_k2 * self.m.theta_hat(self.law.ell * self._knorm)
                self._h2 = float(np.sum(np.abs(self._base) ** 2))

    def values(self, draws: dict) -> tuple[FloatArray, FloatArray]:
        """Probe values ``(n, n_probes, d)`` and ``||sigma_i||_H`` for drawn structures."""
        if self.law.d == 3:
            return self._values_3d(draws)
        gamma, ell, x0 = draws["gamma"], draws["ell"], draws["x0"]
        n = gamma.size
        out = np.empty((n, self.probes.shape[0], 2))
        e = [_phase_powers(-x0[:, a], self.k_max) for a in range(2)]
        kk = np.arange(-self.k_max, self.k_max + 1)
        if self._base is not None:
            h = np.abs(gamma) * math.sqrt(self._h2)
            for j, x in enumerate(self.probes):
                p1 = e[0] * np.exp(1j * kk * x[0])
                p2 = e[1] * np.exp(1j * kk * x[1])
                for c in range(2):
                    out[:, j, c] = np.einsum("bi,bi->b", p1 @ self._base[c], p2).real
            out *= gamma[:, None, None]
            return out, h
        radial = self.m.theta_hat(ell[:, None, None] * self._knorm[None])
        h = np.abs(gamma) * np.sqrt(np.einsum("bij,cij->b", radial ** 2,
                                              np.abs(self._kperp_over_k2) ** 2))
        for j, x in enumerate(self.probes):
            p1 = e[0] * np.exp(1j * kk * x[0])
            p2 = e[1] * np.exp(1j * kk * x[1])
            for c in range(2):
                out[:, j, c] = np.einsum("bi,bij,ij,bj->b", p1, radial,
                                         self._kperp_over_k2[c], p2, optimize=True).real
        out *= gamma[:, None, None]
        return out, h

    def _values_3d(self, draws: dict) -> tuple[FloatArray, FloatArray]:
        n = draws["gamma"].size
        coeffs = np.stack([filament_coeffs(self.m, self.k_max, draws["gamma"][i], draws["ell"][i],
                                           draws["x0"][i], draws["increments"][i])
                           for i in range(n)]) if n else np.zeros((0, 3) + (2 * self.k_max + 1,) * 3)
        vals = evaluate_modes(coeffs, self.probes) if n else np.zeros((0, len(self.probes), 3))
        h = np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=tuple(range(1, coeffs.ndim))))
        return vals, h


def _phase_powers(z: FloatArray, k_max: int) -> np.ndarray:
    """``exp(i k z)`` for ``k = -K..K`` by repeated multiplication; ``(n, 2K+1)``."""
    base = np.exp(1j * z)
    pos = np.cumprod(np.broadcast_to(base[:, None], (z.size, k_max)), axis=1) if k_max else \
        np.zeros((z.size, 0), complex)
    return np.hstack([np.conj(pos[:, ::-1]), np.ones((z.size, 1)), pos])


def _check_times(sp: ScalingParams, out_times) -> FloatArray:
    t = np.asarray(out_times, dtype=np.float64).ravel()
    if t.size == 0:
        raise ConfigurationError("out_times must be nonempty")
    if np.any(t < 0) or np.any(t > sp.T) or np.any(~np.isfinite(t)):
        raise ConfigurationError(f"out_times must lie in [0, T={sp.T}]")
    return t


def _path(kernel: JumpKernel, sp: ScalingParams, times: FloatArray, seed: int, index: int,
          keep: bool) -> JumpPathRecord:
    gen = _rng.substream(seed, _rng.JUMP, index)
    n = int(gen.poisson(sp.rate * sp.T))
    arrivals = np.sort(gen.random(n) * sp.T)
    draws = draw_many(kernel.law, gen, n)
    vals, h = kernel.values(draws)
    vals *= sp.amplitude
    cum = np.concatenate([np.zeros((1,) + vals.shape[1:]), np.cumsum(vals, axis=0)])
    idx = np.searchsorted(arrivals, times, side="right")
    norms = np.sqrt(np.sum(vals ** 2, axis=(1, 2))) if n else np.zeros(0)
    return JumpPathRecord(
        path_index=index, n_arrivals=n, out_times=times, values=cum[idx],
        max_jump=float(norms.max()) if n else 0.0,
        max_jump_h=float(h.max() * sp.amplitude) if n else 0.0,
        arrival_times=arrivals if keep else None,
        jumps=vals if keep else None,
    )


def simulate_wn(law: StructureLaw, sp: ScalingParams, probes, out_times, seed: int,
                m: Mollifier, k_max: int, path_index: int = 0,
                keep_jumps: bool = True) -> JumpPathRecord:
    """Simulate one path; identical arguments reproduce it bit for bit."""
    kernel = JumpKernel(law, m, k_max, probes)
    return _path(kernel, sp, _check_times(sp, out_times), seed, path_index, keep_jumps)


def simulate_ensemble(law: StructureLaw, sp: ScalingParams, probes, out_times, n_paths: int,
                      seed: int, m: Mollifier, k_max: int, keep_jumps: bool = False,
                      first_index: int = 0) -> list[JumpPathRecord]:
    """Paths ``first_index .. first_index + n_paths - 1`` (each from its own substream)."""
    kernel = JumpKernel(law, m, k_max, probes)
    times = _check_times(sp, out_times)
    return [_path(kernel, sp, times, seed, first_index + i, keep_jumps) for i in range(n_paths)]


def path_values(paths: Sequence[JumpPathRecord]) -> FloatArray:
    """Stack ``values``: ``(n_paths, n_times, n_probes, d)``."""
    return np.stack([p.values for p in paths])


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantileSummary:
    n: int
    median: float
    mean: float
    q05: float
    q95: float
    maximum: float


def max_jump_stat(paths: Sequence[JumpPathRecord], norm: str = "probe") -> QuantileSummary:
    """Quantiles of ``sup_s ||Delta_s W^N||`` across paths.

    ``norm="probe"`` uses the Euclidean norm of the jump over all probes;
    ``norm="h"`` uses the ``L^2`` norm of the whole field.
    """
    if not paths:
        raise ValueError("ensemble is empty")
    attr = {"probe": "max_jump", "h": "max_jump_h"}[norm]
    x = np.array([getattr(p, attr) for p in paths])
    q = np.quantile(x, [0.05, 0.5, 0.95])
    return QuantileSummary(x.size, float(q[1]), float(x.mean()), float(q[0]), float(q[2]),
                           float(x.max()))


@dataclass(frozen=True)
class CovarianceCheck:
    estimate: FloatArray
    stderr: FloatArray
    analytic: FloatArray
    checked: np.ndarray
    max_z: float
    passed: bool


def covariance_check(paths: Sequence[JumpPathRecord], coeffs: SpectrumCoeffs, sp: ScalingParams,
                     probes, time_index: int = -1, n_se: float = 3.0,
                     rel_floor: float = 0.05) -> CovarianceCheck:
    """Compare ``E[W_t(x) W_t(y)^T]`` with ``lambda t Q(x - y)`` entrywise.

    Entries with ``|analytic| > rel_floor * max`` must lie within ``n_se``
    standard errors.
    """
    w = path_values(paths)[:, time_index].reshape(len(paths), -1)
    t = paths[0].out_times[time_index]
    prod = w[:, :, None] * w[:, None, :]
    est = prod.mean(0)
    se = prod.std(0, ddof=1) / math.sqrt(len(paths))
    ana = sp.lam * t * two_point_covariance(coeffs, probes)
    checked = np.abs(ana) > rel_floor * np.abs(ana).max()
    z = np.abs(est - ana) / np.where(se > 0, se, np.inf)
    max_z = float(z[checked].max()) if np.any(checked) else 0.0
    return CovarianceCheck(est, se, ana, checked, max_z, bool(max_z <= n_se))


@dataclass(frozen=True)
class GaussianityReport:
    ks_statistic: float
    ks_pvalue: float
    skew: float
    skew_stderr: float
    excess_kurtosis: float
    n_paths: int
    variance_analytic: float
    ks_threshold: float


def scalar_samples(paths: Sequence[JumpPathRecord], direction, probe_index: int = 0,
                   time_index: int = -1) -> FloatArray:
    v = np.asarray(direction, np.float64)
    return np.array([p.values[time_index, probe_index] @ v for p in paths])


def gaussianity_check(law: StructureLaw, sp: ScalingParams, probe, direction, n_paths: int,
                      seed: int, m: Mollifier, k_max: int,
                      coeffs: SpectrumCoeffs | None = None) -> GaussianityReport:
    """KS distance, skew and excess kurtosis of ``direction . W^N_T(probe)``.

    Samples are standardized by the analytic variance
    ``lambda T dir^T Q(0) dir``.
    """
    if n_paths < 1000:
        raise ConfigurationError("gaussianity_check needs at least 1000 paths")
    direction = np.asarray(direction, np.float64)
    direction = direction / np.linalg.norm(direction)
    coeffs = vortex_spectrum(law, m, k_max) if coeffs is None else coeffs
    q0 = two_point_covariance(coeffs, np.zeros((1, law.d)))
    var = sp.lam * sp.T * float(direction @ q0 @ direction)
    if var < 1e-14:
        raise ConfigurationError("analytic variance vanishes: null direction")
    paths = simulate_ensemble(law, sp, np.atleast_2d(probe), [sp.T], n_paths, seed, m, k_max)
    x = scalar_samples(paths, direction) / math.sqrt(var)
    ks = stats.kstest(x, "norm")
    n = x.size
    skew_se = math.sqrt(6.0 * (n - 2) / ((n + 1) * (n + 3)))
    return GaussianityReport(float(ks.statistic), float(ks.pvalue), float(stats.skew(x)), skew_se,
                             float(stats.kurtosis(x)), n, var, 1.63 / math.sqrt(n) + 0.01)


# ---------------------------------------------------------------------------
# exact moments for the 2D point-mass law
# ---------------------------------------------------------------------------


def _probe_field_grid(law: StructureLaw, m: Mollifier, k_max: int, probes, n_grid: int):
    """Per-probe field values over a uniform grid of start points ``X0``."""
    if law.d != 2 or law.length != "point":
        raise ConfigurationError("exact jump moments need the 2D point-mass law")
    kernel = JumpKernel(law, m, k_max, probes)
    x0 = grid_points(2, n_grid).reshape(2, -1).T
    draws = {"gamma": np.full(x0.shape[0], law.sigma * law.ell ** law.gamma_power),
             "ell": np.full(x0.shape[0], law.ell), "x0": x0}
    return kernel.values(draws)


def jump_moment(law: StructureLaw, m: Mollifier, k_max: int, probes, p: int,
                direction=None) -> float:
    """``E ||sigma(probes)||^p`` (or ``E (dir . sigma(x))^p``) over uniform ``X0``.

    The field is a trigonometric polynomial of degree ``k_max``; for even
    ``p`` the grid mean with ``> p k_max`` points per axis is exact.
    """
    vals, _ = _probe_field_grid(law, m, k_max, probes, p * k_max + 2)
    if direction is not None:
        s = vals[:, 0, :] @ (np.asarray(direction, np.float64) / np.linalg.norm(direction))
        return float(np.mean(np.abs(s) ** p))
    return float(np.mean(np.sum(vals ** 2, axis=(1, 2)) ** (p / 2)))


def compound_poisson_kurtosis(law: StructureLaw, m: Mollifier, k_max: int, sp: ScalingParams,
                              probe, direction) -> float:
    """Excess kurtosis ``E J^4 / (lambda N^2 T (E J^2)^2)`` of ``dir . W^N_T(probe)``."""
    j2 = jump_moment(law, m, k_max, np.atleast_2d(probe), 2, direction)
    j4 = jump_moment(law, m, k_max, np.atleast_2d(probe), 4, direction)
    return j4 / (sp.rate * sp.T * j2 * j2)


def tail_bound(sp: ScalingParams, moment_p: float, p: float, eps: float) -> float:
    """``lambda T N^2 E||sigma||^p / (N eps)^p`` with ``phi(n) = n^p``."""
    return sp.lam * sp.T * sp.N ** 2 * moment_p / (sp.N * eps) ** p


def tail_probability(paths: Sequence[JumpPathRecord], eps: float, norm: str = "probe") -> float:
    attr = {"probe": "max_jump", "h": "max_jump_h"}[norm]
    return float(np.mean([getattr(p, attr) > eps for p in paths]))


def increment_correlation(paths: Sequence[JumpPathRecord], direction, i1: int, i2: int,
                          probe_index: int = 0) -> tuple[float, float]:
    """Correlation of ``W_{t2} - W_{t1}`` with ``W_{t1}`` and its approximate stderr."""
    a = scalar_samples(paths, direction, probe_index, i1)
    b = scalar_samples(paths, direction, probe_index, i2) - a
    r = float(np.corrcoef(a, b)[0, 1])
    return r, 1.0 / math.sqrt(len(paths))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_paths_csv(paths: Sequence[JumpPathRecord], probes, path: str | Path) -> Path:
    """One row per ``(path, out_time, probe)`` with the ``W^N`` components."""
    path = Path(path)
    probes = np.atleast_2d(probes)
    d = probes.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "probe"] + [f"x{i}" for i in range(d)] + [f"W{i}" for i in range(d)])
        for p in paths:
            for ti, t in enumerate(p.out_times):
                for j, x in enumerate(probes):
                    w.writerow([p.path_index, f"{t:.17g}", j] + [f"{v:.17g}" for v in x]
                               + [f"{v:.17g}" for v in p.values[ti, j]])
    return path
