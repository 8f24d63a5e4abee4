"""Spectral fields on the periodic box and the radial mollifier.

Conventions used throughout the package:

* The torus is ``[0, 2*pi)^d`` with integer wavevectors, so a field is
  ``u(x) = sum_k u_hat(k) exp(i k.x)``.
* Lengths (mollifier scales, positions) are measured in the same units, so
  a structure of scale ``ell`` is resolved once ``ell * |k|`` reaches O(1).
* Norms use the normalized volume measure ``dx / (2*pi)^d``; Parseval then
  reads ``||u||^2 = sum_k |u_hat(k)|^2``.
* Spectral coefficients are stored on the full symmetric cube
  ``|k_i| <= k_max`` in *centered* order: index ``j`` along an axis is the
  wavenumber ``j - k_max``.
"""

from __future__ import annotations

import functools
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import special
from scipy.interpolate import PchipInterpolator

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]

TABLE_NODES = 4096


class ConfigurationError(ValueError):
    """A parameter set that cannot produce a meaningful computation."""


# ---------------------------------------------------------------------------
# wavevector bookkeeping
# ---------------------------------------------------------------------------


def _check_dim(d: int) -> None:
    if d not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {d}")


@functools.lru_cache(maxsize=32)
def wavevectors(d: int, k_max: int) -> NDArray[np.int64]:
    """Integer wavevector components on the cube, shape ``(d, 2K+1, ..., 2K+1)``."""
    _check_dim(d)
    axis = np.arange(-k_max, k_max + 1)
    k = np.stack(np.meshgrid(*([axis] * d), indexing="ij"))
    k.setflags(write=False)
    return k


@functools.lru_cache(maxsize=32)
def wavenumber_sq(d: int, k_max: int) -> NDArray[np.int64]:
    """``|k|^2`` on the cube (integer valued)."""
    k2 = np.sum(wavevectors(d, k_max) ** 2, axis=0)
    k2.setflags(write=False)
    return k2


@functools.lru_cache(maxsize=32)
def half_space_mask(d: int, k_max: int) -> NDArray[np.bool_]:
    """One representative per ``{k, -k}`` pair: first nonzero component > 0."""
    k = wavevectors(d, k_max)
    mask = np.zeros(k.shape[1:], dtype=bool)
    undecided = np.ones(k.shape[1:], dtype=bool)
    for comp in k:
        mask |= undecided & (comp > 0)
        undecided &= comp == 0
    mask.setflags(write=False)
    return mask


def enforce_reality(coeffs: ComplexArray, d: int) -> ComplexArray:
    """Rebuild the ``-k`` half from the representatives and zero ``k = 0``.

    ``coeffs`` has ``d`` trailing spatial axes of length ``2K+1``; leading
    axes (components, batch) are carried along.
    """
    k_max = (coeffs.shape[-1] - 1) // 2
    spatial = tuple(range(coeffs.ndim - d, coeffs.ndim))
    mirrored = np.conj(np.flip(coeffs, axis=spatial))
    out = np.where(half_space_mask(d, k_max), coeffs, mirrored)
    out[(...,) + (k_max,) * d] = 0.0
    return out


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def _bump(rho: FloatArray) -> FloatArray:
    out = np.zeros_like(rho)
    inside = rho < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - rho[inside] ** 2))
    return out


def _radial_kernel(d: int, x: FloatArray) -> FloatArray:
    if d == 2:
        return special.j0(x)
    return np.sinc(x / np.pi)


def _radial_quadrature(d: int, r: FloatArray, n: int) -> tuple[float, FloatArray]:
    """Mass and Fourier profile of the unnormalized bump with ``n`` nodes."""
    t, w = np.polynomial.legendre.leggauss(n)
    rho = 0.5 * (t + 1.0)
    w = 0.5 * w
    sphere = 2.0 * np.pi if d == 2 else 4.0 * np.pi
    radial_w = sphere * w * _bump(rho) * rho ** (d - 1)
    mass = float(np.sum(radial_w))
    profile = np.empty_like(r)
    for start in range(0, r.size, 256):
        block = r[start:start + 256]
        profile[start:start + 256] = _radial_kernel(d, np.outer(block, rho)) @ radial_w
    return mass, profile / mass


class Mollifier:
    """Normalized radial bump ``theta`` on the unit ball with a cached ``theta_hat`` table.

    ``theta_hat(r) = int theta(x) exp(-i xi.x) dx`` at ``|xi| = r``, so
    ``theta_hat(0) = 1``. The rescaled mollifier ``theta_ell`` has transform
    ``theta_hat(ell * |k|)``.
    """

    def __init__(self, d: int, r_nodes: FloatArray, values: FloatArray, norm: float,
                 quadrature_points: int) -> None:
        self.d = d
        self.profile_id = "standard_bump"
        self.quadrature_points = quadrature_points
        self.normalization = norm
        r_nodes = np.asarray(r_nodes, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        r_nodes.setflags(write=False)
        values.setflags(write=False)
        self.r_nodes = r_nodes
        self.values = values
        self.r_max = float(r_nodes[-1])
        self._interp = PchipInterpolator(r_nodes, values, extrapolate=False)
        self._lock = threading.Lock()
        self.out_of_range_count = 0
        self._energy_cache: dict[float, tuple[FloatArray, tuple[FloatArray, FloatArray]]] = {}

    def __repr__(self) -> str:
        return f"Mollifier(d={self.d}, r_max={self.r_max:g}, nodes={self.r_nodes.size})"

    def theta(self, x: FloatArray) -> FloatArray:
        """Density at points ``x`` of shape ``(..., d)``."""
        rho = np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)
        return _bump(rho) / self.normalization

    def theta_hat(self, r: FloatArray | float) -> FloatArray:
        """Radial Fourier profile; arguments past the table are returned as 0."""
        r = np.abs(np.asarray(r, dtype=np.float64))
        out = self._interp(r)
        beyond = r > self.r_max
        n_beyond = int(np.count_nonzero(beyond))
        if n_beyond:
            with self._lock:
                self.out_of_range_count += n_beyond
            out = np.where(beyond, 0.0, out)
        return out

    def energy_integral(self, alpha: float, upper: FloatArray | float) -> FloatArray:
        """``int_0^upper u^alpha theta_hat(u)^2 du``, vectorized over ``upper``.

        Integrates the interpolant piece by piece (Gauss-Jacobi on the first
        table interval for the algebraic endpoint, Gauss-Legendre elsewhere),
        so the result is accurate to roundoff for the tabulated profile.
        Values of ``upper`` past the table saturate.
        """
        if alpha <= -1.0:
            raise ConfigurationError(f"alpha must exceed -1, got {alpha}")
        cumulative, (gl_t, gl_w) = self._energy_table(float(alpha))
        upper = np.minimum(np.asarray(upper, dtype=np.float64), self.r_max)
        out = np.zeros_like(upper)
        pos = upper > 0
        u = upper[pos]
        idx = np.clip(np.searchsorted(self.r_nodes, u, side="right") - 1, 0, self.r_nodes.size - 2)
        lo = self.r_nodes[idx]
        partial = np.zeros_like(u)
        first = idx == 0
        if np.any(first):
            partial[first] = self._jacobi_piece(alpha, u[first])
        rest = ~first
        if np.any(rest):
            a, b = lo[rest], u[rest]
            half = 0.5 * (b - a)
            nodes = a[:, None] + half[:, None] * (gl_t[None, :] + 1.0)
            vals = nodes ** alpha * self._interp(nodes) ** 2
            partial[rest] = half * (vals @ gl_w)
        out[pos] = cumulative[idx] + partial
        return out

    def _jacobi_piece(self, alpha: float, b: FloatArray) -> FloatArray:
        x, w = special.roots_jacobi(16, 0.0, alpha)
        nodes = 0.5 * b[:, None] * (x[None, :] + 1.0)
        vals = self._interp(nodes) ** 2
        return (0.5 * b) ** (alpha + 1.0) * (vals @ w)

    def _energy_table(self, alpha: float):
        cached = self._energy_cache.get(alpha)
        if cached is not None:
            return cached
        gl_t, gl_w = np.polynomial.legendre.leggauss(8)
        a, b = self.r_nodes[:-1], self.r_nodes[1:]
        half = 0.5 * (b - a)
        nodes = a[:, None] + half[:, None] * (gl_t[None, :] + 1.0)
        pieces = half * ((nodes ** alpha * self._interp(nodes) ** 2) @ gl_w)
        pieces[0] = self._jacobi_piece(alpha, b[:1])[0]
        cumulative = np.concatenate([[0.0], np.cumsum(pieces)])
        entry = (cumulative, (gl_t, gl_w))
        self._energy_cache[alpha] = entry
        return entry


@functools.lru_cache(maxsize=16)
def make_mollifier(profile_id: str = "standard_bump", quadrature_points: int = 1024,
                   d: int = 2, r_max: float = 512.0, nodes: int = TABLE_NODES) -> Mollifier:
    """Build the normalized bump ``Z^-1 exp(-1/(1-|x|^2))`` and its ``theta_hat`` table.

    The table is log-spaced on ``(1e-3, r_max]`` plus the origin. The radial
    quadrature is repeated with twice the nodes on every eighth table node;
    a discrepancy above 1e-8 raises :class:`ConfigurationError`.
    """
    if profile_id != "standard_bump":
        raise ConfigurationError(f"unknown mollifier profile {profile_id!r}")
    if quadrature_points < 256:
        raise ConfigurationError("quadrature_points must be at least 256")
    _check_dim(d)
    if r_max <= 1.0:
        raise ConfigurationError("r_max must exceed 1")
    r = np.concatenate([[0.0], np.geomspace(1e-3, r_max, nodes - 1)])
    z, table = _radial_quadrature(d, r, quadrature_points)
    probe = np.concatenate([r[::8], r[-1:]])
    z2, check = _radial_quadrature(d, probe, 2 * quadrature_points)
    drift = max(abs(z - z2) / z2, float(np.max(np.abs(table[::8] - check[:-1]))),
                abs(table[-1] - check[-1]))
    if drift > 1e-8:
        raise ConfigurationError(
            f"radial quadrature did not converge (refinement changed the table by {drift:.3e}); "
            "increase quadrature_points or lower r_max")
    table[0] = 1.0
    return Mollifier(d, r, table, z, quadrature_points)


def theta_hat_scaled(m: Mollifier, ell: float, k) -> float:
    """``theta_hat(ell |k|)`` for a single wavevector."""
    r = float(ell) * float(np.linalg.norm(np.asarray(k, dtype=np.float64)))
    return float(m.theta_hat(r))


# ---------------------------------------------------------------------------
# spectral and grid fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralField:
    """Real vector field on the torus stored as Fourier coefficients.

    ``coeffs`` has shape ``(d, 2K+1, ..., 2K+1)`` in centered order.
    """

    d: int
    k_max: int
    coeffs: ComplexArray
    divergence_free: bool = False

    def __post_init__(self) -> None:
        _check_dim(self.d)
        expected = (self.d,) + (2 * self.k_max + 1,) * self.d
        if self.coeffs.shape != expected:
            raise ConfigurationError(f"coeffs shape {self.coeffs.shape} != {expected}")
        arr = np.array(self.coeffs, dtype=np.complex128)
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def zeros(cls, d: int, k_max: int) -> SpectralField:
        return cls(d, k_max, np.zeros((d,) + (2 * k_max + 1,) * d, np.complex128), True)

    @classmethod
    def from_half(cls, d: int, k_max: int, coeffs: ComplexArray,
                  divergence_free: bool = False) -> SpectralField:
        """Keep the half-space representatives of ``coeffs`` and mirror the rest."""
        return cls(d, k_max, enforce_reality(np.asarray(coeffs, np.complex128), d), divergence_free)

    def norm_sq(self) -> float:
        """``||u||_H^2`` by Parseval."""
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def reality_defect(self) -> float:
        flipped = np.conj(np.flip(self.coeffs, axis=tuple(range(1, self.d + 1))))
        return float(np.max(np.abs(self.coeffs - flipped), initial=0.0))

    def divergence_defect(self) -> float:
        """``max |k.u_hat(k)| / |u_hat(k)|`` over modes with nonzero coefficient."""
        k = wavevectors(self.d, self.k_max)
        kdotu = np.abs(np.sum(k * self.coeffs, axis=0))
        scale = np.linalg.norm(self.coeffs, axis=0) * np.sqrt(wavenumber_sq(self.d, self.k_max))
        nz = scale > 0
        return float(np.max(kdotu[nz] / scale[nz], initial=0.0))

    def mean(self) -> ComplexArray:
        return self.coeffs[(slice(None),) + (self.k_max,) * self.d]

    def evaluate(self, points) -> FloatArray:
        """Direct Fourier summation at ``points`` of shape ``(m, d)``; returns ``(m, d)``."""
        return evaluate_modes(self.coeffs[None], points)[0]


@dataclass(frozen=True)
class GridField:
    """Real vector samples at grid points ``x_j = 2*pi*j/n``; shape ``(d, n, ..., n)``."""

    d: int
    n: int
    values: FloatArray

    def __post_init__(self) -> None:
        _check_dim(self.d)
        expected = (self.d,) + (self.n,) * self.d
        if self.values.shape != expected:
            raise ConfigurationError(f"values shape {self.values.shape} != {expected}")
        arr = np.array(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def norm_sq(self) -> float:
        return float(np.mean(np.sum(self.values ** 2, axis=0)))


def grid_points(d: int, n: int) -> FloatArray:
    """Grid coordinates, shape ``(d, n, ..., n)``."""
    x = 2.0 * np.pi * np.arange(n) / n
    return np.stack(np.meshgrid(*([x] * d), indexing="ij"))


def leray_project(f: SpectralField) -> SpectralField:
    """Apply ``P_k = I - k k^T/|k|^2`` mode by mode."""
    k = wavevectors(f.d, f.k_max).astype(np.float64)
    k2 = wavenumber_sq(f.d, f.k_max).astype(np.float64)
    k2[(f.k_max,) * f.d] = 1.0
    kdotu = np.sum(k * f.coeffs, axis=0)
    projected = f.coeffs - k * (kdotu / k2)
    return SpectralField(f.d, f.k_max, enforce_reality(projected, f.d), True)


def _check_resolution(n: int, k_max: int) -> None:
    if n < 2 * k_max + 2:
        raise ConfigurationError(f"grid n={n} aliases modes up to k_max={k_max}; need n >= {2 * k_max + 2}")


def to_grid(f: SpectralField, n: int) -> GridField:
    """Exact synthesis of the truncated series on an ``n^d`` grid."""
    _check_resolution(n, f.k_max)
    full = np.zeros((f.d,) + (n,) * f.d, np.complex128)
    idx = np.arange(-f.k_max, f.k_max + 1) % n
    full[np.ix_(range(f.d), *([idx] * f.d))] = f.coeffs
    values = np.fft.ifftn(full, axes=tuple(range(1, f.d + 1))).real * n ** f.d
    return GridField(f.d, n, values)


def to_spectral(g: GridField, k_max: int, divergence_free: bool = False) -> SpectralField:
    """Discrete Fourier analysis, keeping ``|k_i| <= k_max`` and dropping the mean."""
    _check_resolution(g.n, k_max)
    full = np.fft.fftn(g.values, axes=tuple(range(1, g.d + 1))) / g.n ** g.d
    idx = np.arange(-k_max, k_max + 1) % g.n
    coeffs = full[np.ix_(range(g.d), *([idx] * g.d))]
    return SpectralField(g.d, k_max, enforce_reality(coeffs, g.d), divergence_free)


def axis_phases(z: FloatArray, k_max: int) -> ComplexArray:
    """``exp(i k z)`` for ``k = -K..K``; ``z`` of shape ``(...,)`` -> ``(..., 2K+1)``."""
    kk = np.arange(-k_max, k_max + 1)
    arg = np.asarray(z, dtype=np.float64)[..., None] * kk
    return np.cos(arg) + 1j * np.sin(arg)


def evaluate_modes(coeffs: ComplexArray, points) -> FloatArray:
    """Evaluate a batch of fields at points by separable direct summation.

    ``coeffs`` has shape ``(b, d, 2K+1, ...)``; ``points`` is ``(m, d)``.
    Returns ``(b, m, d)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = pts.shape[1]
    k_max = (coeffs.shape[-1] - 1) // 2
    phases = [axis_phases(pts[:, a], k_max) for a in range(d)]
    if d == 2:
        vals = np.einsum("bcij,mi,mj->bmc", coeffs, phases[0], phases[1], optimize=True)
    else:
        vals = np.einsum("bcijl,mi,mj,ml->bmc", coeffs, phases[0], phases[1], phases[2],
                         optimize=True)
    return vals.real


def warn_if_truncated(m: Mollifier, before: int) -> None:
    lost = m.out_of_range_count - before
    if lost:
        warnings.warn(f"{lost} theta_hat arguments exceeded the table range r_max={m.r_max:g}; "
                      "treated as 0", RuntimeWarning, stacklevel=3)
