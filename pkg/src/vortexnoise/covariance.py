"""Isotropic spectral covariances ``Q(x) = sum_k c_k P_k e^{ik.x}``.

Analytic spectra are stored per lattice shell (one value per distinct
``|k|^2`` with its multiplicity inside the cube ``|k_i| <= k_max``), which
keeps 3D scans at large ``k_max`` cheap. Monte Carlo and anisotropic spectra
additionally carry per-mode arrays over the cube.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, signal, stats

from .fields import ConfigurationError, FloatArray, Mollifier, wavenumber_sq, wavevectors
from .structures import Ensemble, SampleRecord, StructureLaw

PROVENANCES = ("vortex", "fgf", "kraichnan", "multifractal", "cutoff", "monte_carlo", "custom")


# ---------------------------------------------------------------------------
# lattice shells
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def lattice_shells(d: int, k_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct ``|k|^2 > 0`` in the cube ``|k_i| <= k_max`` and their multiplicities."""
    if d not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {d}")
    r1 = np.zeros(k_max * k_max + 1)
    r1[np.arange(k_max + 1) ** 2] = 2.0
    r1[0] = 1.0
    counts = r1
    for _ in range(d - 1):
        if counts.size * r1.size < 4_000_000:
            counts = np.convolve(counts, r1)
        else:
            counts = np.rint(signal.fftconvolve(counts, r1))
    counts = np.rint(counts).astype(np.int64)
    counts[0] = 0
    k2 = np.flatnonzero(counts)
    mult = counts[k2]
    k2.setflags(write=False)
    mult.setflags(write=False)
    return k2, mult


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumCoeffs:
    """Covariance coefficients ``c_k`` on the cube ``|k_i| <= k_max``.

    ``k2``, ``mult`` and ``values`` describe the shell-averaged spectrum.
    ``mode_values`` (optional, shape ``(2K+1,)*d``) holds per-mode data; when
    present it is authoritative and ``values`` are shell means of it.
    """

    d: int
    k_max: int
    k2: np.ndarray
    mult: np.ndarray
    values: FloatArray
    provenance: str
    stderr: FloatArray | None = None
    mode_values: FloatArray | None = None
    mode_stderr: FloatArray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not (len(self.k2) == len(self.mult) == len(self.values)):
            raise ValueError("shell arrays have inconsistent lengths")
        for name in ("k2", "mult", "values", "stderr", "mode_values", "mode_stderr"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @classmethod
    def from_radial(cls, d: int, k_max: int, fn, provenance: str, **meta) -> SpectrumCoeffs:
        """Evaluate ``fn(|k|)`` (vectorized) on every shell."""
        k2, mult = lattice_shells(d, k_max)
        vals = np.asarray(fn(np.sqrt(k2.astype(np.float64))), dtype=np.float64)
        return cls(d, k_max, k2, mult, vals, provenance, meta=meta)

    @classmethod
    def from_modes(cls, d: int, k_max: int, mode_values: FloatArray, provenance: str = "custom",
                   mode_stderr: FloatArray | None = None, stderr: FloatArray | None = None,
                   **meta) -> SpectrumCoeffs:
        """Wrap a per-mode cube; shell values are multiplicity-weighted means."""
        mode_values = np.array(mode_values, dtype=np.float64)
        expected = (2 * k_max + 1,) * d
        if mode_values.shape != expected:
            raise ValueError(f"mode array must have shape {expected}")
        mode_values[(k_max,) * d] = 0.0
        k2, mult = lattice_shells(d, k_max)
        idx = _shell_index(d, k_max)
        sums = np.bincount(idx.ravel(), weights=mode_values.ravel(), minlength=k2.size + 1)[1:]
        return cls(d, k_max, k2, mult, sums / mult, provenance, stderr, mode_values, mode_stderr,
                   meta=meta)

    @property
    def knorm(self) -> FloatArray:
        return np.sqrt(self.k2.astype(np.float64))

    @property
    def is_isotropic(self) -> bool:
        return self.mode_values is None

    def per_mode(self) -> FloatArray:
        """Coefficient cube ``c_k`` with ``c_0 = 0``."""
        if self.mode_values is not None:
            return np.array(self.mode_values)
        idx = _shell_index(self.d, self.k_max)
        return np.concatenate([[0.0], self.values])[idx]

    def total(self) -> float:
        """``sum_k c_k`` over the cube."""
        if self.mode_values is not None:
            return float(np.sum(self.mode_values))
        return float(np.dot(self.mult, self.values))

    def energy(self) -> float:
        """``E ||u||^2 = sum_k trace(c_k P_k) = (d-1) sum_k c_k``."""
        return (self.d - 1) * self.total()

    def scaled(self, factor: float) -> SpectrumCoeffs:
        return SpectrumCoeffs(
            self.d, self.k_max, self.k2, self.mult, self.values * factor, self.provenance,
            None if self.stderr is None else self.stderr * abs(factor),
            None if self.mode_values is None else self.mode_values * factor,
            None if self.mode_stderr is None else self.mode_stderr * abs(factor),
            dict(self.meta))

    def truncated(self, k_max: int) -> SpectrumCoeffs:
        """Restrict to the smaller cube ``|k_i| <= k_max``."""
        if k_max > self.k_max:
            raise ValueError("cannot extend a spectrum")
        if self.mode_values is not None:
            s = slice(self.k_max - k_max, self.k_max + k_max + 1)
            sub = self.mode_values[(s,) * self.d]
            sub_se = None if self.mode_stderr is None else self.mode_stderr[(s,) * self.d]
            return SpectrumCoeffs.from_modes(self.d, k_max, sub, self.provenance, sub_se,
                                             **self.meta)
        k2, mult = lattice_shells(self.d, k_max)
        pos = np.searchsorted(self.k2, k2)
        return SpectrumCoeffs(self.d, k_max, k2, mult, self.values[pos], self.provenance,
                              None if self.stderr is None else self.stderr[pos], meta=dict(self.meta))

    def shell(self, k2: int) -> float:
        i = int(np.searchsorted(self.k2, k2))
        if i >= self.k2.size or self.k2[i] != k2:
            raise KeyError(f"no lattice points with |k|^2 = {k2}")
        return float(self.values[i])


@functools.lru_cache(maxsize=16)
def _shell_index(d: int, k_max: int) -> np.ndarray:
    """Cube array mapping each mode to ``1 + shell position`` (0 for k = 0)."""
    k2s, _ = lattice_shells(d, k_max)
    k2 = wavenumber_sq(d, k_max)
    idx = np.searchsorted(k2s, k2) + 1
    idx[k2 == 0] = 0
    idx.setflags(write=False)
    return idx


@dataclass(frozen=True)
class LawSpectrumSpec:
    """``gamma^2(r) f_L(r) = C r^alpha`` with optional cutoff ``r <= 1/k0`` or mixture terms."""

    alpha: float = 0.0
    C: float = 1.0
    k0: float | None = None
    terms: tuple[tuple[float, float], ...] = ()
    mean_duration: float = 1.0

    def __post_init__(self) -> None:
        for c, a in ((self.C, self.alpha),) + tuple(self.terms):
            if not a > -1:
                raise ConfigurationError(f"alpha must exceed -1, got {a}")
            if not c > 0:
                raise ConfigurationError("C must be positive")
        if self.k0 is not None and self.k0 < 2:
            raise ConfigurationError("infrared cutoff needs k0 >= 2")


# ---------------------------------------------------------------------------
# analytic spectra
# ---------------------------------------------------------------------------


def _check_mollifier(m: Mollifier, d: int) -> None:
    if m.d != d:
        raise ConfigurationError(f"mollifier is {m.d}D but the spectrum is {d}D")


def vortex_spectrum(law: StructureLaw, m: Mollifier, k_max: int, d: int | None = None) -> SpectrumCoeffs:
    """``c_k = E[U] E[Gamma^2 theta_hat(L|k|)^2] / |k|^2`` for a structure law.

    Power-law lengths give ``C |k|^{-3-alpha} F_alpha(ell_max |k|)`` where
    ``F_alpha(x) = int_0^x u^alpha theta_hat(u)^2 du`` is integrated exactly
    on the cached ``theta_hat`` interpolant.
    """
    d = law.d if d is None else d
    if d != law.d:
        raise ConfigurationError("law dimension does not match d")
    _check_mollifier(m, d)
    kind, c, a, upper = law.gamma2_weight()
    mean_u = law.mean_duration()
    if kind == "point":
        def fn(k):
            return mean_u * c * m.theta_hat(a * k) ** 2 / k ** 2
    else:
        def fn(k):
            return mean_u * c * k ** (-3.0 - a) * m.energy_integral(a, upper * k)
    return SpectrumCoeffs.from_radial(d, k_max, fn, "vortex", law=law.to_dict())


def power_law_constant(m: Mollifier, alpha: float, C: float = 1.0) -> float:
    """``D = C int_0^inf theta_hat(r)^2 r^alpha dr`` on the cached profile."""
    return float(C * m.energy_integral(alpha, m.r_max))


def power_law_spectrum(spec: LawSpectrumSpec, m: Mollifier, k_max: int, d: int) -> SpectrumCoeffs:
    """Vortex spectrum for ``gamma^2 f_L = C r^alpha`` on all of ``(0, inf)``.

    Without a cutoff this is ``E[U] D |k|^{-3-alpha}``. The law is not a
    probability measure (infinite mass at large ``r``), but the covariance
    is finite because ``theta_hat`` decays.
    """
    _check_mollifier(m, d)
    if spec.k0 is not None:
        return cutoff_spectrum(spec, m, k_max, d)["coeffs"]
    D = power_law_constant(m, spec.alpha, spec.C)
    scale = spec.mean_duration if d == 3 else 1.0
    return SpectrumCoeffs.from_radial(d, k_max, lambda k: scale * D * k ** (-3.0 - spec.alpha),
                                      "vortex", alpha=spec.alpha, C=spec.C, D=D)


def fgf_spectrum(s: float, D: float, k_max: int, d: int) -> SpectrumCoeffs:
    """Solenoidal fractional Gaussian field: ``c_k = D |k|^{-2s}``."""
    return SpectrumCoeffs.from_radial(d, k_max, lambda k: D * k ** (-2.0 * s), "fgf", s=s, D=D)


def kraichnan_spectrum(zeta: float, D: float, k_max: int, d: int) -> SpectrumCoeffs:
    """Kraichnan ensemble: ``c_k = D |k|^{-(d+zeta)}``."""
    return SpectrumCoeffs.from_radial(d, k_max, lambda k: D * k ** (-(d + zeta)), "kraichnan",
                                      zeta=zeta, D=D)


def remainder_mass(coeffs: SpectrumCoeffs, k0: float) -> float:
    """Low-mode mass ``sum_{0 < |k| <= k0} c_k``."""
    sel = coeffs.k2 <= k0 * k0
    return float(np.dot(coeffs.mult[sel], coeffs.values[sel]))


def remainder_bound(c_prime: float, alpha: float, k0: float) -> float:
    return c_prime / (alpha + 1.0) * k0 ** (-(1.0 + alpha)) * math.log(k0)


def calibrate_remainder_constant(spec: LawSpectrumSpec, m: Mollifier, d: int,
                                 k0_ref: float = 4.0) -> float:
    """``C'`` making the remainder bound an equality at ``k0_ref``."""
    ref = LawSpectrumSpec(spec.alpha, spec.C, k0_ref, mean_duration=spec.mean_duration)
    coeffs = _cutoff_coeffs(ref, m, int(math.ceil(k0_ref)), d)
    return remainder_mass(coeffs, k0_ref) / remainder_bound(1.0, spec.alpha, k0_ref)


def _cutoff_coeffs(spec: LawSpectrumSpec, m: Mollifier, k_max: int, d: int) -> SpectrumCoeffs:
    a, k0 = spec.alpha, float(spec.k0)
    scale = spec.mean_duration if d == 3 else 1.0
    return SpectrumCoeffs.from_radial(
        d, k_max, lambda k: scale * spec.C * k ** (-3.0 - a) * m.energy_integral(a, k / k0),
        "cutoff", alpha=a, C=spec.C, k0=k0)


def cutoff_spectrum(spec: LawSpectrumSpec, m: Mollifier, k_max: int, d: int,
                    c_prime: float | None = None, k0_ref: float = 4.0) -> dict:
    """Power law truncated to ``L <= 1/k0``, its low-mode mass and the remainder bound.

    ``c_prime`` defaults to the value calibrated at ``k0_ref``.
    """
    if spec.k0 is None:
        raise ConfigurationError("cutoff_spectrum needs k0")
    if d == 3 and not spec.alpha > 0:
        raise ConfigurationError("the 3D cutoff variant needs alpha > 0")
    _check_mollifier(m, d)
    coeffs = _cutoff_coeffs(spec, m, k_max, d)
    if c_prime is None:
        c_prime = calibrate_remainder_constant(spec, m, d, k0_ref)
    rem = remainder_mass(coeffs, spec.k0)
    return {"coeffs": coeffs, "remainder_norm": rem,
            "bound": remainder_bound(c_prime, spec.alpha, spec.k0), "c_prime": c_prime}


def multifractal_spectrum(terms: Sequence[tuple[float, float]], m: Mollifier, k_max: int,
                          d: int, mean_duration: float = 1.0) -> SpectrumCoeffs:
    """``c_k = sum_i D_i |k|^{-(3+alpha_i)}`` with ``D_i = C_i int theta_hat^2 r^alpha_i``."""
    _check_mollifier(m, d)
    if not terms:
        raise ConfigurationError("multifractal spectrum needs at least one term")
    LawSpectrumSpec(terms=tuple((float(c), float(a)) for c, a in terms))
    Ds = [power_law_constant(m, a, c) for c, a in terms]
    scale = mean_duration if d == 3 else 1.0

    def fn(k):
        return scale * sum(D * k ** (-3.0 - a) for D, (_, a) in zip(Ds, terms))

    return SpectrumCoeffs.from_radial(d, k_max, fn, "multifractal",
                                      terms=[list(t) for t in terms], D=Ds)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def _batches_of(samples):
    if isinstance(samples, Ensemble):
        yield samples.law, samples.d, samples.k_max, None
        for b in samples.batches():
            yield None, None, None, b.coeffs
        return
    law = None
    for rec in samples:
        if not isinstance(rec, SampleRecord):
            raise TypeError("expected SampleRecord items or an Ensemble")
        if law is None:
            law = rec.law
            yield law, rec.field.d, rec.field.k_max, None
        elif rec.law != law:
            raise ValueError("ensemble mixes structure laws")
        yield None, None, None, np.asarray(rec.field.coeffs)[None]


def mc_covariance(samples: Ensemble | Iterable[SampleRecord]) -> SpectrumCoeffs:
    """Empirical ``c_k = mean_i |u_i(k)|^2 / (d-1)`` with per-mode and per-shell errors.

    Shell standard errors come from the per-sample shell means, so they
    account for correlations between modes of one sample.
    """
    it = _batches_of(samples)
    try:
        law, d, k_max, _ = next(it)
    except StopIteration:
        raise ValueError("empty ensemble") from None
    k2s, mult = lattice_shells(d, k_max)
    idx = _shell_index(d, k_max).ravel()
    order = np.argsort(idx, kind="stable")
    starts = np.searchsorted(idx[order], np.arange(1, k2s.size + 1))
    shape = (2 * k_max + 1,) * d
    s1 = np.zeros(idx.size)
    s2 = np.zeros(idx.size)
    h1 = np.zeros(k2s.size)
    h2 = np.zeros(k2s.size)
    n = 0
    for _, _, _, coeffs in it:
        p = np.sum(coeffs.real ** 2 + coeffs.imag ** 2, axis=1).reshape(coeffs.shape[0], -1) / (d - 1)
        s1 += p.sum(0)
        s2 += (p * p).sum(0)
        shell = np.add.reduceat(p[:, order], starts, axis=1) / mult
        h1 += shell.sum(0)
        h2 += (shell * shell).sum(0)
        n += p.shape[0]
    if n == 0:
        raise ValueError("empty ensemble")

    def mean_se(a, b):
        mu = a / n
        var = np.maximum(b / n - mu * mu, 0.0) * n / max(n - 1, 1)
        return mu, np.sqrt(var / n)

    mode_mu, mode_se = mean_se(s1, s2)
    shell_mu, shell_se = mean_se(h1, h2)
    out = SpectrumCoeffs(d, k_max, k2s, mult, shell_mu, "monte_carlo", shell_se,
                         mode_mu.reshape(shape), mode_se.reshape(shape),
                         meta={"n_samples": n, "law": law.to_dict()})
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_bins: int
    slope_stderr: float


def fit_slope(coeffs: SpectrumCoeffs, k_range: tuple[float, float]) -> SlopeFit:
    """Least-squares fit of ``log c`` against ``log |k|`` over half-integer ``|k|`` bins.

    Within each bin ``log |k|`` and ``log c`` are multiplicity-weighted means,
    so an exact power law is fitted exactly.
    """
    lo, hi = k_range
    kn = coeffs.knorm
    sel = (kn >= lo) & (kn <= hi)
    if not np.any(sel):
        raise ValueError(f"no lattice shells in {k_range}")
    vals = coeffs.values[sel]
    if np.any(vals <= 0):
        raise ValueError("spectrum has non-positive values in the fit range")
    w = coeffs.mult[sel].astype(np.float64)
    bins = np.rint(2.0 * kn[sel]).astype(np.int64)
    uniq, inv = np.unique(bins, return_inverse=True)
    wsum = np.bincount(inv, weights=w)
    x = np.bincount(inv, weights=w * np.log(kn[sel])) / wsum
    y = np.bincount(inv, weights=w * np.log(vals)) / wsum
    if uniq.size < 4:
        raise ValueError("need at least 4 distinct |k| bins for a slope fit")
    res = stats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2), int(uniq.size),
                    float(res.stderr))


def max_relative_error(a: SpectrumCoeffs, b: SpectrumCoeffs) -> float:
    """Largest per-mode ``|a - b| / |b|`` (shells carry every mode of a radial spectrum)."""
    if (a.d, a.k_max) != (b.d, b.k_max):
        raise ValueError("spectra live on different lattices")
    if a.is_isotropic and b.is_isotropic:
        return float(np.max(np.abs(a.values - b.values) / np.abs(b.values)))
    pa, pb = a.per_mode(), b.per_mode()
    mask = pb != 0
    return float(np.max(np.abs(pa[mask] - pb[mask]) / np.abs(pb[mask])))


def covariance_matrix(coeffs: SpectrumCoeffs, z) -> FloatArray:
    """``Q(z) = sum_k c_k P_k cos(k.z)``, a ``d x d`` matrix."""
    d, K = coeffs.d, coeffs.k_max
    c = coeffs.per_mode().ravel()
    k = wavevectors(d, K).reshape(d, -1).astype(np.float64)
    k2 = np.sum(k * k, axis=0)
    nz = k2 > 0
    k, k2, c = k[:, nz], k2[nz], c[nz]
    w = c * np.cos(np.asarray(z, np.float64) @ k)
    return np.sum(w) * np.eye(d) - (k * (w / k2)) @ k.T


def two_point_covariance(coeffs: SpectrumCoeffs, points) -> FloatArray:
    """Block matrix ``[Q(x_a - x_b)]`` for probe points, shape ``(m d, m d)``."""
    pts = np.atleast_2d(np.asarray(points, np.float64))
    m, d = pts.shape
    out = np.zeros((m * d, m * d))
    for a in range(m):
        for b in range(m):
            out[a * d:(a + 1) * d, b * d:(b + 1) * d] = covariance_matrix(coeffs, pts[a] - pts[b])
    return out


def energy_oracle_2d_point(m: Mollifier, ell: float, sigma: float, k_max: int) -> float:
    """``sigma^2 sum_k theta_hat(ell|k|)^2/|k|^2`` by direct loops over the cube."""
    total = 0.0
    for k1 in range(-k_max, k_max + 1):
        for k2 in range(-k_max, k_max + 1):
            if k1 == 0 and k2 == 0:
                continue
            q = k1 * k1 + k2 * k2
            total += float(m.theta_hat(ell * math.sqrt(q))) ** 2 / q
    return sigma ** 2 * total


def independent_power_constant(m: Mollifier, alpha: float, C: float = 1.0) -> float:
    """``D`` by adaptive quadrature with an algebraic endpoint weight."""
    with warnings.catch_warnings():
        # tail pieces are ~1e-20 and trip scipy's roundoff heuristic
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return C * _quad_power(m, alpha)


def _quad_power(m: Mollifier, alpha: float) -> float:
    total, _ = integrate.quad(lambda r: float(m.theta_hat(r)) ** 2, 0.0, 1.0, weight="alg",
                              wvar=(alpha, 0.0), limit=200, epsabs=1e-14, epsrel=1e-12)
    edges = np.geomspace(1.0, m.r_max, 48)
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda r: r ** alpha * float(m.theta_hat(r)) ** 2, a, b,
                                limit=200, epsabs=1e-14, epsrel=1e-12)
        total += val
    return total


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_spectrum_csv(coeffs: SpectrumCoeffs, path: str | Path) -> Path:
    """One row per shell: ``k2, |k|, multiplicity, c, stderr``."""
    path = Path(path)
    se = coeffs.stderr if coeffs.stderr is not None else np.full(coeffs.values.shape, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k2", "k", "multiplicity", "c", "stderr"])
        for k2, mu, v, s in zip(coeffs.k2, coeffs.mult, coeffs.values, se):
            w.writerow([int(k2), f"{math.sqrt(k2):.17g}", int(mu), f"{v:.17g}", f"{s:.17g}"])
    return path


def write_spectrum_binary(coeffs: SpectrumCoeffs, path: str | Path) -> Path:
    """Per-mode cube as little-endian float64 after an int64 ``(d, k_max)`` header."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(np.array([coeffs.d, coeffs.k_max], dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(coeffs.per_mode(), dtype="<f8").tobytes())
    return path


def read_spectrum_binary(path: str | Path) -> SpectrumCoeffs:
    raw = Path(path).read_bytes()
    d, k_max = np.frombuffer(raw[:16], dtype="<i8")
    cube = np.frombuffer(raw[16:], dtype="<f8").reshape((2 * int(k_max) + 1,) * int(d))
    return SpectrumCoeffs.from_modes(int(d), int(k_max), cube)


def write_json(obj: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
