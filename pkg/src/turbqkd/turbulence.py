"""Kolmogorov phase screens built from random Zernike superpositions.

Coefficients follow the Noll covariance for Kolmogorov turbulence, scaled by
``(D/r0)^(5/3)`` where ``r0`` is the plane-wave Fried parameter of the path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .optics import ComplexField, GridSpec

# Noll residual errors Delta_J / (D/r0)^(5/3), J = 1..21.
NOLL_RESIDUALS = (
    1.0299, 0.582, 0.134, 0.111, 0.0880, 0.0648, 0.0587, 0.0525, 0.0463, 0.0401,
    0.0377, 0.0352, 0.0328, 0.0304, 0.0279, 0.0267, 0.0255, 0.0243, 0.0232, 0.0220,
    0.0208,
)

# Prefactor of the closed-form covariance, Gamma(14/3) [24/5 Gamma(6/5)]^(5/6) Gamma(11/6)^2 / (2 pi^2).
_NOLL_PREFACTOR = 2.2698076253380393


@dataclass(frozen=True)
class TurbulenceStrength:
    cn2: float
    wavelength: float = 810e-9
    length: float = 5400.0

    def __post_init__(self):
        if self.cn2 <= 0:
            raise ValueError("cn2 must be positive")

    @property
    def r0(self) -> float:
        return fried_r0(self.cn2, self.wavelength, self.length)


def fried_r0(cn2: float, wavelength: float, length: float) -> float:
    """Plane-wave Fried parameter ``(0.423 k^2 Cn2 L)^(-3/5)``."""
    if cn2 <= 0 or wavelength <= 0 or length <= 0:
        raise ValueError("cn2, wavelength and length must be positive")
    k = 2 * np.pi / wavelength
    return float((0.423 * k**2 * cn2 * length) ** (-3 / 5))


def noll_nm(j: int) -> tuple[int, int]:
    """Radial order ``n`` and signed azimuthal order ``m`` of Noll index ``j``.

    Even ``j`` with ``m != 0`` are cosine terms (``m > 0``), odd ones sine
    terms (returned as ``m < 0``).
    """
    if j < 1:
        raise ValueError("Noll index starts at 1")
    n = int((np.sqrt(8 * j - 7) - 1) // 2)
    # guard against float rounding at triangular boundaries
    while n * (n + 1) // 2 >= j:
        n -= 1
    while (n + 1) * (n + 2) // 2 < j:
        n += 1
    k = j - n * (n + 1) // 2  # 1-based position within order n
    if n % 2 == 0:
        m = 2 * (k // 2)
    else:
        m = 2 * ((k - 1) // 2) + 1
    if m != 0 and j % 2 == 1:
        m = -m
    return n, m


def _radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * factorial(n - s) / (
            factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s)
        )
        out += c * rho ** (n - 2 * s)
    return out


def zernike_on_disk(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Noll-normalised Zernike ``Z_j`` at polar points inside the unit disk."""
    n, m = noll_nm(j)
    r = _radial(n, m, rho)
    if m == 0:
        return np.sqrt(n + 1) * r
    ang = np.cos(m * theta) if m > 0 else np.sin(-m * theta)
    return np.sqrt(2 * (n + 1)) * r * ang


def zernike_eval(j: int, grid: GridSpec, aperture_radius: float) -> np.ndarray:
    """``Z_j`` sampled on ``grid`` over a disk of ``aperture_radius``; zero outside."""
    r, theta = grid.polar()
    rho = r / aperture_radius
    inside = rho <= 1
    out = np.zeros_like(r)
    out[inside] = zernike_on_disk(j, rho[inside], theta[inside])
    return out


def _noll_raw(n: int, n2: int) -> float:
    lg = (
        gammaln((n + n2 - 5 / 3) / 2)
        - gammaln((n - n2 + 17 / 3) / 2)
        - gammaln((n2 - n + 17 / 3) / 2)
        - gammaln((n + n2 + 23 / 3) / 2)
    )
    return _NOLL_PREFACTOR * np.sqrt((n + 1) * (n2 + 1)) * np.exp(lg)


@lru_cache(maxsize=1)
def _noll_calibration() -> float:
    """Scale mapping the closed form onto the tabulated residual Delta_1.

    The closed-form prefactor sums to ~1.043 over all modes; Noll's table
    (and direct integration of the Kolmogorov spectrum) gives 1.0299.
    """
    # n + 1 modes per radial order; terms fall off as n^(-8/3)
    n = np.arange(1, 100_000, dtype=float)
    total = np.sum((n + 1) * _noll_raw(n, n))
    return NOLL_RESIDUALS[0] / float(total)


def zernike_covariance(j_max: int, d_eff: float, r0: float, calibrated: bool = True) -> np.ndarray:
    """Kolmogorov covariance of Zernike coefficients ``j = 2..j_max`` (rad^2).

    Non-zero cross terms couple modes with equal ``|m|`` and matching parity.
    """
    if j_max < 2:
        raise ValueError("j_max must be at least 2")
    if d_eff <= 0 or r0 <= 0:
        raise ValueError("d_eff and r0 must be positive")
    js = range(2, j_max + 1)
    nm = [noll_nm(j) for j in js]
    size = len(nm)
    cov = np.zeros((size, size))
    for a, (n, m) in enumerate(nm):
        for b, (n2, m2) in enumerate(nm):
            if abs(m) != abs(m2):
                continue
            if m != 0 and np.sign(m) != np.sign(m2):
                continue
            sign = (-1) ** ((n + n2 - 2 * abs(m)) // 2)
            cov[a, b] = sign * _noll_raw(n, n2)
    scale = (d_eff / r0) ** (5 / 3)
    if calibrated:
        scale *= _noll_calibration()
    return cov * scale


def zernike_variances(j_max: int, d_eff: float, r0: float) -> np.ndarray:
    """Per-mode coefficient variances for ``j = 2..j_max``."""
    return np.diag(zernike_covariance(j_max, d_eff, r0)).copy()


@dataclass
class PhaseScreen:
    coefficients: np.ndarray  # a_j for j = 2..J, rad
    phase: np.ndarray
    grid: GridSpec
    radius: float
    seed: int | None = None

    @property
    def j_values(self) -> np.ndarray:
        return np.arange(2, 2 + len(self.coefficients))

    def write_coefficients(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["j", "a_j_rad"])
            for j, a in zip(self.j_values, self.coefficients):
                w.writerow([int(j), repr(float(a))])


class ZernikeBasis:
    """Zernike modes ``j = 2..j_max`` sampled once on a grid."""

    def __init__(self, j_max: int, grid: GridSpec, radius: float):
        self.j_max = j_max
        self.grid = grid
        self.radius = radius
        r, theta = grid.polar()
        rho = r / radius
        self._inside = rho <= 1
        self.modes = np.stack(
            [zernike_on_disk(j, rho[self._inside], theta[self._inside]) for j in range(2, j_max + 1)]
        )

    def assemble(self, coefficients: np.ndarray) -> np.ndarray:
        phase = np.zeros((self.grid.n, self.grid.n))
        phase[self._inside] = coefficients @ self.modes
        return phase


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # all-zero or round-off indefinite covariance
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0, None))


def draw_coefficients(cov: np.ndarray, seed: int, independent: bool = False) -> np.ndarray:
    """Zero-mean Gaussian coefficients with covariance ``cov``.

    The standard-normal draw depends only on ``seed`` and the mode count, so
    screens for different turbulence strengths with the same seed differ
    only by a scale factor.
    """
    z = np.random.default_rng(seed).standard_normal(cov.shape[0])
    if independent:
        return np.sqrt(np.clip(np.diag(cov), 0, None)) * z
    return _cholesky(cov) @ z


def sample_screen(
    cov_or_variances: np.ndarray,
    grid: GridSpec,
    seed: int,
    radius: float,
    independent: bool = False,
    basis: ZernikeBasis | None = None,
) -> PhaseScreen:
    """Random phase screen; a 1-D argument is treated as independent variances."""
    cov = np.asarray(cov_or_variances, dtype=float)
    if cov.ndim == 1:
        cov = np.diag(cov)
    j_max = cov.shape[0] + 1
    if basis is None or basis.j_max != j_max or basis.grid != grid or basis.radius != radius:
        basis = ZernikeBasis(j_max, grid, radius)
    a = draw_coefficients(cov, seed, independent)
    return PhaseScreen(a, basis.assemble(a), grid, radius, seed)


def apply_screen(field: ComplexField, screen: PhaseScreen | np.ndarray) -> ComplexField:
    phase = screen.phase if isinstance(screen, PhaseScreen) else screen
    return field.with_data(field.data * np.exp(1j * phase))
