"""Random vortex structures: mollified point vortices (2D) and Brownian filaments (3D).

A structure is drawn from a :class:`StructureLaw` (circulation, size,
duration, start point) and returned as a divergence-free
:class:`~vortexnoise.fields.SpectralField` on the torus.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate

from . import rng as _rng
from .fields import (
    ComplexArray,
    ConfigurationError,
    FloatArray,
    Mollifier,
    SpectralField,
    axis_phases,
    enforce_reality,
    wavenumber_sq,
    wavevectors,
)

LENGTH_LAWS = ("point", "power")
DURATION_LAWS = ("point", "exponential")


@dataclass(frozen=True)
class StructureLaw:
    """Joint law of ``(Gamma, L, U, X0)``.

    ``Gamma = s * sigma * L**gamma_power`` with an independent Rademacher sign
    ``s``. ``L`` is either a point mass at ``ell`` or has density proportional
    to ``r**beta`` on ``(0, ell_max]`` (an infrared cutoff ``k0`` is
    ``ell_max = 1/k0``). ``U`` (3D only) is a point mass or exponential with
    mean ``duration``; each filament takes ``n_steps`` Brownian steps.
    ``X0`` is uniform on the torus.
    """

    d: int = 2
    sigma: float = 1.0
    gamma_power: float = 0.0
    length: str = "point"
    ell: float = 0.1
    beta: float = 0.0
    ell_max: float = 1.0
    duration_law: str = "point"
    duration: float = 1.0
    n_steps: int = 200

    def __post_init__(self) -> None:
        if self.d not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.d}")
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise ConfigurationError("sigma must be finite and non-negative")
        if self.length not in LENGTH_LAWS:
            raise ConfigurationError(f"length law must be one of {LENGTH_LAWS}")
        if self.length == "point" and not self.ell > 0:
            raise ConfigurationError("point-mass length scale must be positive")
        if self.length == "power":
            if not self.ell_max > 0:
                raise ConfigurationError("ell_max must be positive")
            if not self.beta > -1:
                raise ConfigurationError("power density r**beta needs beta > -1 to normalize")
        if self.duration_law not in DURATION_LAWS:
            raise ConfigurationError(f"duration law must be one of {DURATION_LAWS}")
        if self.duration < 0:
            raise ConfigurationError("duration must be non-negative")
        if self.d == 3 and self.n_steps < 50:
            raise ConfigurationError("n_steps must be at least 50 (dt <= U/50)")
        if not math.isfinite(self.sigma_sq()):
            raise ConfigurationError("E[Gamma^2] diverges for this law")

    # -- constructors -------------------------------------------------------

    @classmethod
    def point_vortex(cls, ell: float, sigma: float = 1.0) -> StructureLaw:
        return cls(d=2, sigma=sigma, length="point", ell=ell)

    @classmethod
    def filament(cls, ell: float, sigma: float = 1.0, duration: float = 1.0,
                 duration_law: str = "point", n_steps: int = 200) -> StructureLaw:
        return cls(d=3, sigma=sigma, length="point", ell=ell, duration=duration,
                   duration_law=duration_law, n_steps=n_steps)

    @classmethod
    def power_law(cls, d: int, beta: float, ell_max: float = 1.0, sigma: float = 1.0,
                  gamma_power: float = 0.0, **kw) -> StructureLaw:
        return cls(d=d, sigma=sigma, gamma_power=gamma_power, length="power", beta=beta,
                   ell_max=ell_max, **kw)

    def replace(self, **changes) -> StructureLaw:
        return dataclasses.replace(self, **changes)

    # -- moments ------------------------------------------------------------

    def length_moment(self, q: float) -> float:
        """``E[L**q]`` (``inf`` when divergent)."""
        if self.length == "point":
            return self.ell ** q
        e = self.beta + q
        if e <= -1:
            return math.inf
        return (self.beta + 1) / (e + 1) * self.ell_max ** q

    def sigma_sq(self) -> float:
        """``E[Gamma^2]``."""
        return self.sigma ** 2 * self.length_moment(2 * self.gamma_power)

    def mean_duration(self) -> float:
        return self.duration if self.d == 3 else 1.0

    def gamma2_weight(self) -> tuple[str, float, float, float]:
        """The measure ``gamma(r)^2 f_L(r) dr`` that enters every covariance.

        Returns ``("point", mass, ell, 0)`` or ``("power", C, alpha, upper)``
        for ``C r**alpha`` on ``(0, upper]``.
        """
        if self.length == "point":
            return ("point", self.sigma ** 2 * self.ell ** (2 * self.gamma_power), self.ell, 0.0)
        c = self.sigma ** 2 * (self.beta + 1) / self.ell_max ** (self.beta + 1)
        return ("power", c, self.beta + 2 * self.gamma_power, self.ell_max)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> StructureLaw:
        return cls(**data)


@dataclass(frozen=True)
class SampleRecord:
    """One drawn structure with the substream that produced it."""

    index: int
    gamma: float
    ell: float
    duration: float
    x0: FloatArray
    field: SpectralField
    substream: tuple[int, int, int]
    law: StructureLaw


@dataclass(frozen=True)
class MomentReport:
    finite: bool
    value: float
    exponent: float | None = None


# ---------------------------------------------------------------------------
# parameter draws
# ---------------------------------------------------------------------------


def _draw(law: StructureLaw, gen: np.random.Generator):
    sign = 1.0 if gen.integers(0, 2) else -1.0
    if law.length == "point":
        ell = law.ell
    else:
        ell = law.ell_max * gen.random() ** (1.0 / (law.beta + 1.0))
    if law.d == 3 and law.duration_law == "exponential":
        duration = gen.exponential(law.duration)
    else:
        duration = law.duration
    x0 = gen.random(law.d) * 2.0 * np.pi
    gamma = sign * law.sigma * ell ** law.gamma_power
    increments = None
    if law.d == 3:
        dt = duration / law.n_steps
        increments = gen.standard_normal((law.n_steps, 3)) * math.sqrt(dt)
    return gamma, ell, duration, x0, increments


def draw_parameters(law: StructureLaw, seed: int, index: int,
                    stream: int = _rng.STRUCTURE):
    """``(gamma, ell, duration, x0, increments)`` for one sample index."""
    return _draw(law, _rng.substream(seed, stream, index))


# ---------------------------------------------------------------------------
# field construction
# ---------------------------------------------------------------------------


def _inv_k2(d: int, k_max: int) -> FloatArray:
    k2 = wavenumber_sq(d, k_max).astype(np.float64)
    k2[(k_max,) * d] = np.inf
    return 1.0 / k2


def _radial_factor(m: Mollifier, ell: FloatArray, d: int, k_max: int) -> FloatArray:
    """``theta_hat(ell_b |k|)`` for a batch of scales, shape ``(b,) + cube``."""
    knorm = np.sqrt(wavenumber_sq(d, k_max).astype(np.float64))
    ell = np.asarray(ell, dtype=np.float64)
    uniq, inverse = np.unique(ell, return_inverse=True)
    table = np.stack([m.theta_hat(u * knorm) for u in uniq])
    return table[inverse]


def _position_phases(x0: FloatArray, k_max: int) -> ComplexArray:
    """``exp(-i k.x0)`` on the cube for a batch of points ``(b, d)``."""
    x0 = np.atleast_2d(x0)
    d = x0.shape[1]
    ph = [axis_phases(-x0[:, a], k_max) for a in range(d)]
    if d == 2:
        return ph[0][:, :, None] * ph[1][:, None, :]
    return ph[0][:, :, None, None] * ph[1][:, None, :, None] * ph[2][:, None, None, :]


def vortex_coeffs(m: Mollifier, k_max: int, gamma, ell, x0) -> ComplexArray:
    """Batch of 2D vortex fields ``Gamma theta_hat(L|k|) e^{-ik.X0} i k_perp/|k|^2``.

    Returns ``(b, 2, 2K+1, 2K+1)`` with ``k_perp = (k2, -k1)``.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    k = wavevectors(2, k_max).astype(np.float64)
    kperp = np.stack([k[1], -k[0]])
    scalar = (gamma[:, None, None] * _radial_factor(m, np.atleast_1d(ell), 2, k_max)
              * _inv_k2(2, k_max) * _position_phases(x0, k_max))
    coeffs = 1j * scalar[:, None] * kperp[None]
    return enforce_reality(coeffs, 2)


def filament_vorticity(m: Mollifier, k_max: int, ell: float, x0: FloatArray,
                       increments: FloatArray) -> ComplexArray:
    """Per-mode Ito sum ``theta_hat(L|k|) sum_j e^{-ik.X_j} dX_j``; shape ``(3,) + cube``.

    ``X_j = x0 + sum_{i<j} dX_i`` is the left point of step ``j``.
    """
    path = x0[None, :] + np.concatenate([np.zeros((1, 3)), np.cumsum(increments, axis=0)[:-1]])
    n = path.shape[0]
    size = 2 * k_max + 1
    e = [axis_phases(-path[:, a], k_max) for a in range(3)]
    a12 = (e[0][:, :, None] * e[1][:, None, :]).reshape(n, size * size)
    b3 = (e[2][:, :, None] * increments[:, None, :]).reshape(n, size * 3)
    omega = (a12.T @ b3).reshape(size, size, size, 3)
    omega = np.moveaxis(omega, -1, 0)
    return omega * _radial_factor(m, [ell], 3, k_max)[0]


def filament_coeffs(m: Mollifier, k_max: int, gamma: float, ell: float, x0: FloatArray,
                    increments: FloatArray | None) -> ComplexArray:
    """``Gamma i k x omega_hat(k) / |k|^2``, the curl of the vector potential."""
    size = 2 * k_max + 1
    if increments is None or increments.size == 0:
        return np.zeros((3, size, size, size), np.complex128)
    omega = filament_vorticity(m, k_max, ell, np.asarray(x0, np.float64), increments)
    k = wavevectors(3, k_max).astype(np.float64)
    cross = np.stack([
        k[1] * omega[2] - k[2] * omega[1],
        k[2] * omega[0] - k[0] * omega[2],
        k[0] * omega[1] - k[1] * omega[0],
    ])
    return enforce_reality(1j * gamma * cross * _inv_k2(3, k_max), 3)


def _record(law, m, k_max, index, seed, stream, params) -> SampleRecord:
    gamma, ell, duration, x0, incr = params
    if law.d == 2:
        coeffs = vortex_coeffs(m, k_max, [gamma], [ell], x0[None])[0]
    else:
        coeffs = filament_coeffs(m, k_max, gamma, ell, x0, incr)
    x0 = np.array(x0)
    x0.setflags(write=False)
    return SampleRecord(index, gamma, ell, duration, x0, SpectralField(law.d, k_max, coeffs, True),
                        (int(seed), int(stream), int(index)), law)


def sample_vortex_2d(law: StructureLaw, m: Mollifier, k_max: int, sample_index: int,
                     seed: int) -> SampleRecord:
    """Draw one mollified point vortex on the 2-torus."""
    if law.d != 2:
        raise ConfigurationError("sample_vortex_2d needs a 2D law")
    params = draw_parameters(law, seed, sample_index)
    return _record(law, m, k_max, sample_index, seed, _rng.STRUCTURE, params)


def sample_filament_3d(law: StructureLaw, m: Mollifier, k_max: int, sample_index: int,
                       seed: int) -> SampleRecord:
    """Draw one Brownian vortex filament on the 3-torus (no stopping time)."""
    if law.d != 3:
        raise ConfigurationError("sample_filament_3d needs a 3D law")
    params = draw_parameters(law, seed, sample_index)
    return _record(law, m, k_max, sample_index, seed, _rng.STRUCTURE, params)


def sample(law: StructureLaw, m: Mollifier, k_max: int, sample_index: int,
           seed: int) -> SampleRecord:
    if law.d == 2:
        return sample_vortex_2d(law, m, k_max, sample_index, seed)
    return sample_filament_3d(law, m, k_max, sample_index, seed)


def structure_batch(law: StructureLaw, m: Mollifier, k_max: int, params: Sequence) -> ComplexArray:
    """Coefficients for a list of drawn parameter tuples, ``(b, d) + cube``."""
    if law.d == 2:
        gamma = [p[0] for p in params]
        ell = [p[1] for p in params]
        x0 = np.array([p[3] for p in params]).reshape(-1, 2)
        return vortex_coeffs(m, k_max, gamma, ell, x0)
    return np.stack([filament_coeffs(m, k_max, p[0], p[1], p[3], p[4]) for p in params]) \
        if params else np.zeros((0, 3) + (2 * k_max + 1,) * 3, np.complex128)


@dataclass
class Batch:
    indices: np.ndarray
    gamma: FloatArray
    ell: FloatArray
    duration: FloatArray
    x0: FloatArray
    coeffs: ComplexArray


class Ensemble:
    """Lazily generated i.i.d. structures ``0..n_samples-1`` for one law and seed.

    Batches are produced in index order regardless of ``workers``.
    """

    def __init__(self, law: StructureLaw, mollifier: Mollifier, k_max: int, n_samples: int,
                 seed: int, workers: int = 1) -> None:
        if n_samples < 0:
            raise ConfigurationError("n_samples must be non-negative")
        if mollifier.d != law.d:
            raise ConfigurationError("mollifier and law dimensions differ")
        self.law = law
        self.mollifier = mollifier
        self.k_max = int(k_max)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.workers = max(1, int(workers))

    @property
    def d(self) -> int:
        return self.law.d

    def __len__(self) -> int:
        return self.n_samples

    def record(self, index: int) -> SampleRecord:
        return sample(self.law, self.mollifier, self.k_max, index, self.seed)

    def _make_batch(self, indices: np.ndarray) -> Batch:
        params = [draw_parameters(self.law, self.seed, int(i)) for i in indices]
        coeffs = structure_batch(self.law, self.mollifier, self.k_max, params)
        return Batch(
            indices=indices,
            gamma=np.array([p[0] for p in params], dtype=np.float64),
            ell=np.array([p[1] for p in params], dtype=np.float64),
            duration=np.array([p[2] for p in params], dtype=np.float64),
            x0=np.array([p[3] for p in params], dtype=np.float64).reshape(-1, self.d),
            coeffs=coeffs,
        )

    def batches(self, batch_size: int = 512) -> Iterator[Batch]:
        chunks = [np.arange(s, min(s + batch_size, self.n_samples))
                  for s in range(0, self.n_samples, batch_size)]
        if self.workers == 1:
            for c in chunks:
                yield self._make_batch(c)
            return
        with ThreadPoolExecutor(self.workers) as pool:
            yield from pool.map(self._make_batch, chunks)

    def describe(self) -> dict:
        return {
            "law": self.law.to_dict(),
            "mollifier": {"profile_id": self.mollifier.profile_id, "d": self.mollifier.d,
                          "r_max": self.mollifier.r_max,
                          "quadrature_points": self.mollifier.quadrature_points},
            "k_max": self.k_max,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def _length_moment_quad(law: StructureLaw, q: float) -> MomentReport:
    if law.length == "point":
        return MomentReport(True, law.ell ** q)
    e = law.beta + q
    if e <= -1:
        return MomentReport(False, math.inf, e)
    norm = (law.beta + 1) / law.ell_max ** (law.beta + 1)
    val, _ = integrate.quad(lambda r: norm, 0.0, law.ell_max, weight="alg", wvar=(e, 0.0))
    return MomentReport(True, val, e)


def _duration_moment_quad(law: StructureLaw, q: float) -> float:
    if law.duration_law == "point":
        return law.duration ** q
    mean = law.duration
    val, _ = integrate.quad(lambda u: u ** q * math.exp(-u / mean) / mean, 0.0, math.inf)
    return val


def validate_moments(law: StructureLaw, p: float) -> MomentReport:
    """Check ``E|Gamma|^p L^-p`` (2D) or ``E|Gamma|^p U^{p/2} L^{-2p}`` (3D).

    These are the superquadratic moment conditions under which the jump
    process has a Gaussian limit.
    """
    if p <= 2:
        raise ConfigurationError("the moment condition needs p > 2")
    lq = p * law.gamma_power - (p if law.d == 2 else 2 * p)
    lm = _length_moment_quad(law, lq)
    if not lm.finite:
        return lm
    value = law.sigma ** p * lm.value
    if law.d == 3:
        value *= _duration_moment_quad(law, p / 2)
    return MomentReport(math.isfinite(value), value, lm.exponent)


# ---------------------------------------------------------------------------
# free-space demo kernel
# ---------------------------------------------------------------------------


def free_space_velocity_2d(x: FloatArray, x0: FloatArray, gamma: float = 1.0) -> FloatArray:
    """Singular Biot-Savart part ``-Gamma/(2 pi) (x-x0)_perp / |x-x0|^2``.

    Approximate: no boundary corrector and no periodization. For
    illustration only; the torus samplers above do not use it. A torus
    sample with circulation ``g`` matches this kernel with ``gamma = (2 pi)^2 g``
    because torus coefficients are taken against the normalized measure.
    """
    z = np.asarray(x, np.float64) - np.asarray(x0, np.float64)
    perp = np.stack([z[..., 1], -z[..., 0]], axis=-1)
    return -gamma / (2 * np.pi) * perp / np.sum(z ** 2, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

ENSEMBLE_MAGIC = b"VXNSENS1"
_HEADER = struct.Struct("<8sqqq")


def export_ensemble(ensemble: Ensemble, path: str | Path, extra_meta: dict | None = None,
                    batch_size: int = 512) -> tuple[Path, Path]:
    """Write ``path`` (binary) and ``path.json`` (sidecar).

    Binary layout, little-endian: magic ``VXNSENS1``, int64 ``d``, ``k_max``,
    ``n_samples``, then one row of float64 per sample: ``index, gamma, ell,
    duration, x0[d]``, then the coefficient cube as interleaved
    ``(re, im)`` pairs in C order over ``(component, k_1, ..., k_d)``.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ENSEMBLE_MAGIC, ensemble.d, ensemble.k_max, ensemble.n_samples))
        for b in ensemble.batches(batch_size):
            head = np.column_stack([b.indices.astype(np.float64), b.gamma, b.ell, b.duration, b.x0])
            body = b.coeffs.reshape(len(b.indices), -1).view(np.float64)
            fh.write(np.ascontiguousarray(np.hstack([head, body]), dtype="<f8").tobytes())
    meta = ensemble.describe()
    meta["row_layout"] = ["index", "gamma", "ell", "duration"] + [f"x0_{i}" for i in range(ensemble.d)] \
        + ["coeffs(re,im interleaved; component, k_1..k_d C order)"]
    if extra_meta:
        meta.update(extra_meta)
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, side


def read_ensemble(path: str | Path) -> dict:
    """Inverse of :func:`export_ensemble`; returns header fields and arrays."""
    raw = Path(path).read_bytes()
    magic, d, k_max, n = _HEADER.unpack_from(raw)
    if magic != ENSEMBLE_MAGIC:
        raise ValueError("not an ensemble file")
    ncoef = d * (2 * k_max + 1) ** d
    width = 4 + d + 2 * ncoef
    rows = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, width)
    coeffs = rows[:, 4 + d:].copy().view(np.complex128).reshape((n, d) + (2 * k_max + 1,) * d)
    return {"d": d, "k_max": k_max, "n_samples": n, "index": rows[:, 0].astype(np.int64),
            "gamma": rows[:, 1], "ell": rows[:, 2], "duration": rows[:, 3],
            "x0": rows[:, 4:4 + d], "coeffs": coeffs}


def draw_many(law: StructureLaw, gen: np.random.Generator, n: int) -> dict:
    """Vectorized draws of ``n`` structures from one generator.

    Returns arrays ``gamma, ell, duration, x0`` and, in 3D, ``increments``
    of shape ``(n, n_steps, 3)``.
    """
    sign = np.where(gen.integers(0, 2, n) == 1, 1.0, -1.0)
    if law.length == "point":
        ell = np.full(n, law.ell)
    else:
        ell = law.ell_max * gen.random(n) ** (1.0 / (law.beta + 1.0))
    if law.d == 3 and law.duration_law == "exponential":
        duration = gen.exponential(law.duration, n)
    else:
        duration = np.full(n, float(law.duration))
    x0 = gen.random((n, law.d)) * 2.0 * np.pi
    out = {"gamma": sign * law.sigma * ell ** law.gamma_power, "ell": ell,
           "duration": duration, "x0": x0}
    if law.d == 3:
        dt = duration / law.n_steps
        out["increments"] = gen.standard_normal((n, law.n_steps, 3)) * np.sqrt(dt)[:, None, None]
    return out


def coupled_filament_pair(law: StructureLaw, m: Mollifier, k_max: int, index: int,
                          seed: int) -> tuple[ComplexArray, ComplexArray]:
    """Fields at ``dt = U/n_steps`` and ``dt/2`` driven by the same Brownian path.

    The fine path is drawn with ``2 n_steps`` increments and the coarse one
    sums consecutive pairs, so the difference isolates time discretization.
    """
    fine_law = law.replace(n_steps=2 * law.n_steps)
    gamma, ell, _, x0, fine = draw_parameters(fine_law, seed, index)
    coarse = fine.reshape(law.n_steps, 2, 3).sum(axis=1)
    return (filament_coeffs(m, k_max, gamma, ell, x0, coarse),
            filament_coeffs(m, k_max, gamma, ell, x0, fine))
