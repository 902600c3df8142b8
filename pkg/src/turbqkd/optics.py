"""Transverse-field optics for the OAM / ANGLE link.

Fields live on a square grid centred on the optical axis.  The envelope
convention carries the factor ``exp(-i k z)`` implicitly, so an LG mode has
the curvature term ``exp(-i k r^2 / 2R)`` and a Gouy phase that grows with
``+z``; :func:`propagate` uses the matching angular-spectrum transfer function.
All inner products are discrete sums weighted by the pixel area.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.special import eval_genlaguerre

logger = logging.getLogger(__name__)

OAM = "OAM"
ANGLE = "ANGLE"


class ResolutionError(ValueError):
    """Grid too coarse (or too small) for the requested beam."""


@dataclass(frozen=True)
class GridSpec:
    """Square sampling window; ``n`` samples across ``side`` metres."""

    side: float = 1.2
    n: int = 1024

    def __post_init__(self):
        if self.n <= 0 or self.n & (self.n - 1):
            raise ValueError(f"samples per side must be a power of two, got {self.n}")
        if self.side <= 0:
            raise ValueError("grid side must be positive")

    @property
    def pitch(self) -> float:
        return self.side / self.n

    @property
    def pixel_area(self) -> float:
        return self.pitch**2

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.pitch

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.axis()
        return np.meshgrid(x, x, indexing="xy")

    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        xx, yy = self.mesh()
        return np.hypot(xx, yy), np.arctan2(yy, xx)


@dataclass(frozen=True)
class BeamParams:
    w0: float = 8e-2
    wavelength: float = 810e-9
    length: float = 5400.0
    aperture: float = 0.30

    def __post_init__(self):
        for name in ("w0", "wavelength", "length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.aperture < 0:
            raise ValueError("aperture must be non-negative")

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def rayleigh_range(self) -> float:
        return np.pi * self.w0**2 / self.wavelength


@dataclass(frozen=True)
class ModeLabel:
    basis: str
    index: int

    def __post_init__(self):
        if self.basis == OAM and self.index == 0:
            raise ValueError("l = 0 is not part of the OAM alphabet")
        if self.basis not in (OAM, ANGLE):
            raise ValueError(f"unknown basis {self.basis!r}")


@dataclass
class ComplexField:
    data: np.ndarray
    grid: GridSpec
    z: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"field shape {self.data.shape} does not match grid n={self.grid.n}")

    def power(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2) * self.grid.pixel_area)

    def with_data(self, data: np.ndarray, z: float | None = None) -> "ComplexField":
        return ComplexField(data, self.grid, self.z if z is None else z, dict(self.meta))


def oam_alphabet(d: int = 8) -> list[int]:
    """OAM values -d/2..d/2 without l = 0, in increasing order."""
    if d < 2 or d % 2:
        raise ValueError("dimension must be even and >= 2")
    half = d // 2
    return [ell for ell in range(-half, half + 1) if ell != 0]


def beam_geometry(z: float, params: BeamParams, ell: int = 0) -> tuple[float, float, float]:
    """Beam radius, curvature radius and Gouy phase at ``z``.

    The curvature radius is ``inf`` at the waist (flat phase front).
    """
    zr = params.rayleigh_range
    w = params.w0 * np.sqrt(1 + (z / zr) ** 2)
    R = np.inf if z == 0 else z * (1 + (zr / z) ** 2)
    psi = (abs(ell) + 1) * np.arctan(z / zr)
    return float(w), float(R), float(psi)


def _check_resolution(w: float, grid: GridSpec, min_pixels: float = 8.0):
    if w / grid.pitch < min_pixels:
        raise ResolutionError(
            f"beam radius {w:.4g} m spans only {w / grid.pitch:.1f} pixels (< {min_pixels})"
        )
    if grid.side < 2 * w:
        raise ResolutionError(f"grid window {grid.side} m smaller than the beam diameter")


def normalize(field: ComplexField) -> ComplexField:
    p = field.power()
    if p == 0:
        raise ValueError("cannot normalize an all-zero field")
    return field.with_data(field.data / np.sqrt(p))


def lg_mode(ell: int, z: float, params: BeamParams, grid: GridSpec) -> ComplexField:
    """Unit-norm LG mode with p = 0 and azimuthal charge ``ell``.

    The amplitude normalisation is computed on the grid rather than taken
    from the analytic constant.
    """
    ModeLabel(OAM, ell)
    w, R, psi = beam_geometry(z, params, ell)
    _check_resolution(w, grid)
    r, phi = grid.polar()
    a = abs(ell)
    rho2 = 2 * r**2 / w**2
    amp = (params.w0 / w) * (np.sqrt(2) * r / w) ** a * np.exp(-(r**2) / w**2)
    amp = amp * eval_genlaguerre(0, a, rho2)
    phase = -ell * phi + psi
    if np.isfinite(R):
        phase = phase - params.k * r**2 / (2 * R)
    data = amp * np.exp(1j * phase)
    out = ComplexField(data.astype(np.complex128), grid, z, {"basis": OAM, "index": ell})
    return normalize(out)


def angle_index(ell: int, d: int = 8) -> int:
    """Position ``g(l)`` of ``l`` in the ANGLE-basis Fourier sum."""
    return d // 2 + (ell - 1) * (ell > 0) + ell * (ell < 0)


def angle_matrix(d: int = 8) -> np.ndarray:
    """Unitary ``U[j, s]`` such that ``|phi_j> = sum_s U[j, s] |l_s>``.

    Columns follow :func:`oam_alphabet` ordering.
    """
    g = np.array([angle_index(ell, d) for ell in oam_alphabet(d)])
    j = np.arange(d)[:, None]
    return np.exp(2j * np.pi * j * g[None, :] / d) / np.sqrt(d)


def angle_mode(j: int, z: float, params: BeamParams, grid: GridSpec, d: int = 8) -> ComplexField:
    if not 0 <= j < d:
        raise ValueError(f"ANGLE index must be in [0, {d}), got {j}")
    coeffs = angle_matrix(d)[j]
    data = np.zeros((grid.n, grid.n), dtype=np.complex128)
    for c, ell in zip(coeffs, oam_alphabet(d)):
        data += c * lg_mode(ell, z, params, grid).data
    return ComplexField(data, grid, z, {"basis": ANGLE, "index": j})


def mode_set(basis: str, z: float, params: BeamParams, grid: GridSpec, d: int = 8) -> list[ComplexField]:
    if basis == OAM:
        return [lg_mode(ell, z, params, grid) for ell in oam_alphabet(d)]
    if basis == ANGLE:
        return [angle_mode(j, z, params, grid, d) for j in range(d)]
    raise ValueError(f"unknown basis {basis!r}")


def transfer_function(grid: GridSpec, dz: float, wavelength: float) -> np.ndarray:
    """Angular-spectrum transfer function with the carrier ``exp(-i k dz)`` removed.

    ``k - kz`` is evaluated as ``kt^2 / (k + kz)`` to keep precision at km
    distances.  Evanescent components are zeroed.
    """
    k = 2 * np.pi / wavelength
    f = scipy.fft.fftfreq(grid.n, d=grid.pitch)
    kx = 2 * np.pi * f
    kt2 = kx[None, :] ** 2 + kx[:, None] ** 2
    evanescent = kt2 >= k**2
    if evanescent.any():
        logger.warning("zeroing %d evanescent spatial frequencies", int(evanescent.sum()))
    kz = np.sqrt(np.where(evanescent, 0.0, k**2 - kt2))
    H = np.exp(1j * dz * kt2 / (k + kz))
    H[evanescent] = 0
    return H


def propagate_array(data: np.ndarray, H: np.ndarray, workers: int | None = None) -> np.ndarray:
    """Apply a precomputed transfer function over the last two axes."""
    spec = scipy.fft.fft2(data, axes=(-2, -1), workers=workers)
    return scipy.fft.ifft2(spec * H, axes=(-2, -1), workers=workers)


def propagate(field: ComplexField, dz: float, params: BeamParams, workers: int | None = None) -> ComplexField:
    """Free-space propagation over ``dz`` by the angular-spectrum method."""
    H = transfer_function(field.grid, dz, params.wavelength)
    return field.with_data(propagate_array(field.data, H, workers), z=field.z + dz)


def aperture_mask(grid: GridSpec, diameter: float) -> np.ndarray:
    r, _ = grid.polar()
    if diameter <= 0:
        return np.zeros_like(r, dtype=bool)
    return r <= diameter / 2


def apply_aperture(field: ComplexField, diameter: float) -> tuple[ComplexField, float]:
    """Zero the field outside a centred circular aperture.

    Returns the clipped field and the transmitted power fraction.
    """
    before = field.power()
    out = field.with_data(np.where(aperture_mask(field.grid, diameter), field.data, 0))
    frac = out.power() / before if before > 0 else 0.0
    return out, frac


def overlap(field_a: ComplexField, field_b: ComplexField) -> complex:
    """Discrete inner product ``<a|b>``; conjugate-linear in ``a``."""
    if field_a.grid != field_b.grid:
        raise ValueError("fields sampled on different grids")
    return complex(np.vdot(field_a.data, field_b.data) * field_a.grid.pixel_area)


def beam_radius(field: ComplexField, ell: int = 0) -> float:
    """Radius from the second intensity moment about the centroid.

    For an LG mode with p = 0, ``<r^2> = (|l| + 1) w^2 / 2``.
    """
    xx, yy = field.grid.mesh()
    inten = np.abs(field.data) ** 2
    tot = inten.sum()
    cx = (inten * xx).sum() / tot
    cy = (inten * yy).sum() / tot
    r2 = (inten * ((xx - cx) ** 2 + (yy - cy) ** 2)).sum() / tot
    return float(np.sqrt(2 * r2 / (abs(ell) + 1)))


def centroid(field: ComplexField) -> tuple[float, float]:
    xx, yy = field.grid.mesh()
    inten = np.abs(field.data) ** 2
    tot = inten.sum()
    return float((inten * xx).sum() / tot), float((inten * yy).sum() / tot)


def dump_field(field: ComplexField, path: str | Path, params: BeamParams | None = None,
               crop: float | None = None) -> Path:
    """Write real and imaginary planes as CSV plus a JSON sidecar.

    Produces ``<stem>_re.csv``, ``<stem>_im.csv`` and ``<stem>.json``.  With
    ``crop`` only the central square of that side length (m) is written.
    """
    path = Path(path)
    stem = path.with_suffix("")
    data = field.data
    grid = field.grid
    lo, hi = 0, grid.n
    if crop is not None:
        half = int(np.ceil(crop / 2 / grid.pitch))
        lo, hi = max(0, grid.n // 2 - half), min(grid.n, grid.n // 2 + half + 1)
        data = data[lo:hi, lo:hi]
    np.savetxt(f"{stem}_re.csv", data.real, delimiter=",", fmt="%.8e")
    np.savetxt(f"{stem}_im.csv", data.imag, delimiter=",", fmt="%.8e")
    side = {"grid_side_m": grid.side, "grid_n": grid.n, "pitch_m": grid.pitch, "z_m": field.z,
            "first_index": lo, "samples": hi - lo, **field.meta}
    if params is not None:
        side.update(wavelength_m=params.wavelength, w0_m=params.w0)
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(side, indent=2, sort_keys=True))
    return sidecar
