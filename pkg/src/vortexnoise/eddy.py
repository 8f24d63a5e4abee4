"""Eddy-dissipation diagnostics: pointwise noise strength ``q(x,x)`` and ``eps_Q``.

For a homogeneous covariance ``Q(x) = sum_k c_k P_k e^{ik.x}`` the operator
is block diagonal in Fourier space, so ``eps_Q = max_k c_k``, while
``Q(0) = ((d-1)/d) (sum_k c_k) I`` by the cubic symmetry of the mode set.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .covariance import SpectrumCoeffs, covariance_matrix, lattice_shells, vortex_spectrum
from .fields import ConfigurationError, Mollifier, evaluate_modes, half_space_mask, make_mollifier
from .structures import Ensemble, SampleRecord, StructureLaw


def q_diag(coeffs: SpectrumCoeffs) -> float:
    """Smallest eigenvalue of ``Q(0) = sum_k c_k P_k``."""
    if coeffs.is_isotropic:
        return (coeffs.d - 1) / coeffs.d * coeffs.total()
    return float(np.linalg.eigvalsh(covariance_matrix(coeffs, np.zeros(coeffs.d)))[0])


def epsilon_q(coeffs: SpectrumCoeffs) -> float:
    """Operator norm ``max_k c_k`` of the covariance."""
    vals = coeffs.values if coeffs.is_isotropic else coeffs.mode_values
    return float(max(np.max(vals, initial=0.0), 0.0))


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    iterations: int = 0
    converged: bool = True


def _collect(samples) -> tuple[int, int, np.ndarray]:
    """Stack coefficient cubes, shape ``(n, d) + cube``."""
    if isinstance(samples, Ensemble):
        parts = [b.coeffs for b in samples.batches()]
        d, k_max = samples.d, samples.k_max
    else:
        recs = list(samples)
        if not recs:
            raise ValueError("empty ensemble")
        d, k_max = recs[0].field.d, recs[0].field.k_max
        parts = [np.stack([np.asarray(r.field.coeffs) for r in recs])]
    if not parts:
        raise ValueError("empty ensemble")
    return d, k_max, np.concatenate(parts)


def real_embedding(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Isometric real coordinates ``sqrt(2) [Re, Im]`` of the half-space modes.

    Rows satisfy ``<x_i, x_j> = <u_i, u_j>_{L^2}`` with the normalized measure.
    """
    k_max = (coeffs.shape[-1] - 1) // 2
    mask = half_space_mask(d, k_max)
    half = coeffs[(slice(None), slice(None)) + (mask,)].reshape(coeffs.shape[0], -1)
    return math.sqrt(2.0) * np.hstack([half.real, half.imag])


def _power_iteration(apply, dim: int, iterations: int, tol: float, seed: int):
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, iterations + 1):
        w = apply(v)
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, v, it, True
        v = w / nrm
        if it > 1 and abs(new - lam) <= tol * abs(new):
            return new, v, it, True
        lam = new
    return lam, v, iterations, False


def mc_epsilon_q(samples: Ensemble | Iterable[SampleRecord], iterations: int = 5000,
                 tol: float = 1e-8, seed: int = 0) -> MCEstimate:
    """Top eigenvalue of ``v -> (1/n) sum_i <u_i, v> u_i`` by power iteration.

    Iterates on whichever of the ``n x n`` Gram matrix or the ``M x M``
    coordinate covariance is smaller. The standard error is that of the
    Rayleigh quotient ``mean_i <u_i, v>^2`` at the final direction.
    """
    d, _, coeffs = _collect(samples)
    x = real_embedding(coeffs, d)
    n, dim = x.shape
    if n <= dim:
        g = x @ x.T / n
        lam, a, it, ok = _power_iteration(lambda v: g @ v, n, iterations, tol, seed)
        v = x.T @ a
        nv = np.linalg.norm(v)
        v = v / nv if nv > 0 else v
    else:
        c = x.T @ x / n
        lam, v, it, ok = _power_iteration(lambda v: c @ v, dim, iterations, tol, seed)
    if not ok:
        warnings.warn(f"power iteration did not reach relative change {tol:g} in {iterations} "
                      "steps; returning the last iterate", RuntimeWarning, stacklevel=2)
    proj = (x @ v) ** 2
    se = float(np.std(proj, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MCEstimate(float(lam), se, it, ok)


def mc_q(samples: Ensemble | Iterable[SampleRecord], point=None) -> MCEstimate:
    """Smallest eigenvalue of ``(1/n) sum_i u_i(x) u_i(x)^T`` at a probe point."""
    d, _, coeffs = _collect(samples)
    point = np.zeros(d) if point is None else np.asarray(point, np.float64)
    vals = evaluate_modes(coeffs, point[None])[:, 0, :]
    n = vals.shape[0]
    mat = vals.T @ vals / n
    w, vecs = np.linalg.eigh(mat)
    proj = (vals @ vecs[:, 0]) ** 2
    return MCEstimate(float(w[0]), float(np.std(proj, ddof=1) / math.sqrt(n)) if n > 1 else math.nan)


# ---------------------------------------------------------------------------
# scaling scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EddyReport:
    ell: float
    q_diag: float
    epsilon_q: float
    sigma_sq: float
    mean_duration: float
    mc_q: float | None = None
    mc_q_stderr: float | None = None
    mc_epsilon_q: float | None = None
    mc_epsilon_q_stderr: float | None = None


@dataclass(frozen=True)
class ScanResult:
    d: int
    k_max: int
    reports: tuple[EddyReport, ...]
    fit: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)

    def table(self) -> list[dict]:
        return [asdict(r) for r in self.reports]


def scan_law(template: StructureLaw, ell: float) -> StructureLaw:
    """The member of the template's family at size ``ell``."""
    if template.length == "point":
        return template.replace(ell=ell)
    return template.replace(ell_max=ell)


def check_resolution(m: Mollifier, ell_min: float, k_max: int, threshold: float = 0.1) -> None:
    """Raise unless ``theta_hat(ell_min k_max) <= threshold``."""
    if k_max < 4.0 / ell_min:
        raise ConfigurationError(f"k_max={k_max} is below 4/ell_min={4.0 / ell_min:g}")
    val = abs(float(m.theta_hat(ell_min * k_max)))
    if val > threshold:
        raise ConfigurationError(
            f"k_max={k_max} leaves theta_hat(ell_min*k_max)={val:.3f} > {threshold}; "
            "the small-scale regime is unresolved")


def scan_scaling(template: StructureLaw, ell_list: Sequence[float], k_max: int,
                 d: int | None = None, m: Mollifier | None = None,
                 eps_spread_max: float = 2.0, r2_min: float = 0.99,
                 slope_tol: float = 0.05) -> ScanResult:
    """``q`` and ``eps_Q`` across sizes with the 2D log fit or the 3D power fit.

    2D fits ``q`` against ``|log ell|`` and judges ``r^2``; 3D fits
    ``log q`` against ``log ell`` and judges the slope against -1.
    """
    d = template.d if d is None else d
    if d != template.d:
        raise ConfigurationError("template dimension does not match d")
    ells = np.asarray(ell_list, dtype=np.float64)
    if ells.size < 3 or np.any(np.diff(ells) >= 0) or np.any(ells <= 0):
        raise ConfigurationError("ell_list must be positive, strictly decreasing, length >= 3")
    m = make_mollifier(d=d) if m is None else m
    check_resolution(m, float(ells[-1]), k_max)
    lattice_shells(d, k_max)
    reports = []
    for ell in ells:
        law = scan_law(template, float(ell))
        c = vortex_spectrum(law, m, k_max, d)
        reports.append(EddyReport(float(ell), q_diag(c), epsilon_q(c), law.sigma_sq(),
                                  law.mean_duration()))
    q = np.array([r.q_diag for r in reports])
    norm = np.array([r.sigma_sq * r.mean_duration for r in reports])
    eps = np.array([r.epsilon_q for r in reports]) / norm
    spread = float(eps.max() / eps.min())
    fit: dict = {"epsilon_spread": spread}
    verdicts: dict = {"epsilon_bounded_ok": bool(spread < eps_spread_max)}
    if d == 2:
        res = stats.linregress(np.abs(np.log(ells)), q / norm)
        fit.update(q_vs_abslog_slope=float(res.slope), q_vs_abslog_intercept=float(res.intercept),
                   r2=float(res.rvalue ** 2), slope_stderr=float(res.stderr))
        verdicts["scaling_2d_ok"] = bool(res.rvalue ** 2 > r2_min)
    else:
        res = stats.linregress(np.log(ells), np.log(q / norm))
        fit.update(loglog_slope=float(res.slope), loglog_intercept=float(res.intercept),
                   r2=float(res.rvalue ** 2), slope_stderr=float(res.stderr))
        verdicts["scaling_3d_ok"] = bool(abs(res.slope + 1.0) <= slope_tol)
    return ScanResult(d, k_max, tuple(reports), fit, verdicts)


def write_scan_csv(result: ScanResult, path: str | Path) -> Path:
    path = Path(path)
    rows = result.table()
    cols = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else f"{r[c]:.17g}" for c in cols])
    return path
