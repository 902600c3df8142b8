"""High-dimensional BB84 over a turbulent OAM link.

The receiver projects the aberrated, aperture-clipped field onto the ideal
vacuum-propagated modes of the same basis at ``z = L``.  Because the screen,
propagation and aperture are all linear, one ensemble of OAM amplitudes
serves both bases: ANGLE amplitudes follow from the unitary change of basis.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .optics import (
    ANGLE,
    OAM,
    BeamParams,
    GridSpec,
    angle_matrix,
    aperture_mask,
    lg_mode,
    oam_alphabet,
    propagate_array,
    transfer_function,
)
from .turbulence import ZernikeBasis, draw_coefficients, fried_r0, zernike_covariance

logger = logging.getLogger(__name__)

TABLE_CN2 = (1e-16, 2e-16, 5e-16, 1e-15, 1e-14)
BASES = (OAM, ANGLE)


def shannon_h(e: float, d: int) -> float:
    """``-e log2(e/(d-1)) - (1-e) log2(1-e)``, with ``h(0) = 0``."""
    if d < 2:
        raise ValueError("d must be at least 2")
    if not 0 <= e < 1:
        raise ValueError(f"error rate must be in [0, 1), got {e}")
    if e == 0:
        return 0.0
    return float(-e * np.log2(e / (d - 1)) - (1 - e) * np.log2(1 - e))


def key_rate(d: int, e: float) -> float:
    """Secret bits per sifted photon, ``log2 d - 2 h(e)``; may be negative."""
    return float(np.log2(d) - 2 * shannon_h(e, d))


def reported_bits(d: int, e: float) -> float:
    """Key rate clamped at zero, as reported in tables."""
    return max(0.0, key_rate(d, e))


def security_threshold(d: int, xtol: float = 1e-9) -> float:
    """QDER at which the key rate crosses zero."""
    hi = (d - 1) / d
    return float(brentq(lambda e: key_rate(d, e), 1e-12, hi - 1e-12, xtol=xtol))


def row_normalize(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    sums = m.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError("crosstalk row with no detected power")
    return m / sums


def qder(matrix: np.ndarray) -> float:
    """1 - mean diagonal of the row-normalised crosstalk matrix."""
    return float(1 - np.mean(np.diag(row_normalize(matrix))))


@dataclass
class ChannelConfig:
    beam: BeamParams = field(default_factory=BeamParams)
    grid: GridSpec = field(default_factory=GridSpec)
    d: int = 8
    j_max: int = 36
    d_eff: float | None = None  # default max(2 w0, D)
    n_realizations: int = 100
    seed: int = 1234
    independent_modes: bool = False
    workers: int = 1

    @property
    def zernike_diameter(self) -> float:
        if self.d_eff is not None:
            return self.d_eff
        return max(2 * self.beam.w0, self.beam.aperture)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["zernike_diameter"] = self.zernike_diameter
        return out


@dataclass
class CrosstalkMatrix:
    basis: str
    cn2: float
    raw: np.ndarray  # mean |overlap|^2 before post-selection
    per_realization_diag: np.ndarray  # mean diagonal |overlap|^2 per realization

    @property
    def normalized(self) -> np.ndarray:
        return row_normalize(self.raw)

    @property
    def qder(self) -> float:
        return qder(self.raw)

    @property
    def detection_fraction(self) -> np.ndarray:
        return self.raw.sum(axis=1)

    def write_csv(self, path: str | Path, metadata: dict | None = None) -> None:
        path = Path(path)
        np.savetxt(path, self.normalized, delimiter=",", fmt="%.12e")
        side = {
            "basis": self.basis,
            "cn2": self.cn2,
            "qder": self.qder,
            "n_realizations": len(self.per_realization_diag),
            "detection_fraction": self.detection_fraction.tolist(),
            "normalization": "row",
        }
        if metadata:
            side.update(metadata)
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


class Channel:
    """Precomputed propagation kernels and ideal receiver modes for one configuration."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        beam, grid = config.beam, config.grid
        self.ells = oam_alphabet(config.d)
        self.sent = np.stack([lg_mode(ell, 0.0, beam, grid).data for ell in self.ells])
        self.H = transfer_function(grid, beam.length, beam.wavelength)
        ideal = propagate_array(self.sent, self.H)
        self.mask = aperture_mask(grid, beam.aperture)
        # receiver projections only need pixels inside the aperture
        self._ideal_in = ideal[:, self.mask]
        self.zernike = ZernikeBasis(config.j_max, grid, config.zernike_diameter / 2)
        self.U = angle_matrix(config.d)

    def covariance(self, cn2: float) -> np.ndarray:
        r0 = fried_r0(cn2, self.config.beam.wavelength, self.config.beam.length)
        return zernike_covariance(self.config.j_max, self.config.zernike_diameter, r0)

    def amplitudes(self, phase: np.ndarray | None) -> np.ndarray:
        """``A[s, t] = <ideal_t | received_s>`` in the OAM basis."""
        fields = self.sent if phase is None else self.sent * np.exp(1j * phase)[None]
        out = propagate_array(fields, self.H)
        area = self.config.grid.pixel_area
        return (out[:, self.mask] @ self._ideal_in.conj().T) * area

    def to_basis(self, A: np.ndarray, basis: str) -> np.ndarray:
        if basis == OAM:
            return A
        if basis == ANGLE:
            return self.U @ A @ self.U.conj().T
        raise ValueError(f"unknown basis {basis!r}")

    def realization_seed(self, index: int) -> int:
        return self.config.seed + index

    def phase(self, cn2: float | None, index: int) -> np.ndarray | None:
        if cn2 is None or cn2 == 0:
            return None
        a = draw_coefficients(self.covariance(cn2), self.realization_seed(index), self.config.independent_modes)
        return self.zernike.assemble(a)

    def ensemble(self, cn2: float | None, bases=BASES) -> dict[str, CrosstalkMatrix]:
        """Average crosstalk over the realizations, screens shared by all bases."""
        n = self.config.n_realizations
        if n < 1:
            raise ValueError("need at least one realization")

        def one(i):
            A = self.amplitudes(self.phase(cn2, i))
            return {b: np.abs(self.to_basis(A, b)) ** 2 for b in bases}

        if self.config.workers > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                results = list(pool.map(one, range(n)))
        else:
            results = [one(i) for i in range(n)]
        out = {}
        for b in bases:
            stack = np.stack([r[b] for r in results])
            diag = np.array([np.mean(np.diag(p)) for p in stack])
            out[b] = CrosstalkMatrix(b, cn2 or 0.0, stack.mean(axis=0), diag)
        return out


def simulate_channel(basis: str, cn2: float | None, config: ChannelConfig, channel: Channel | None = None) -> CrosstalkMatrix:
    channel = channel or Channel(config)
    return channel.ensemble(cn2, bases=(basis,))[basis]


def worst_realization(basis: str, cn2: float, config: ChannelConfig, channel: Channel | None = None,
                      matrix: CrosstalkMatrix | None = None):
    """Realization with the smallest mean diagonal overlap, and its received fields.

    Returns ``(index, diag_mean, fields)`` where ``fields`` are the aberrated
    fields at ``z = L`` for each sent mode of ``basis`` (before the aperture).
    An ensemble already computed for ``(basis, cn2)`` can be passed as
    ``matrix`` to avoid rerunning it.
    """
    channel = channel or Channel(config)
    m = matrix if matrix is not None else channel.ensemble(cn2, bases=(basis,))[basis]
    idx = int(np.argmin(m.per_realization_diag))
    phase = channel.phase(cn2, idx)
    sent = channel.sent if phase is None else channel.sent * np.exp(1j * phase)[None]
    out = propagate_array(sent, channel.H)
    if basis == ANGLE:
        out = np.tensordot(channel.U, out, axes=(1, 0))
    return idx, float(m.per_realization_diag[idx]), out


@dataclass
class QkdRow:
    cn2: float
    basis: str
    qder: float
    bits_per_photon: float
    secure: bool


@dataclass
class QkdReport:
    rows: list[QkdRow]
    matrices: dict[tuple[float, str], CrosstalkMatrix]
    d: int
    n_realizations: int
    seed: int

    def row(self, cn2: float, basis: str) -> QkdRow:
        for r in self.rows:
            if r.cn2 == cn2 and r.basis == basis:
                return r
        raise KeyError((cn2, basis))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cn2", "basis", "qder_pct", "bits_per_photon", "secure"])
            for r in self.rows:
                w.writerow([f"{r.cn2:.3e}", r.basis, f"{100 * r.qder:.4f}", f"{r.bits_per_photon:.4f}", str(r.secure).lower()])


def run_table(cn2_levels=TABLE_CN2, bases=BASES, config: ChannelConfig | None = None, channel: Channel | None = None) -> QkdReport:
    config = config or ChannelConfig()
    channel = channel or Channel(config)
    threshold = security_threshold(config.d)
    rows, matrices = [], {}
    for cn2 in cn2_levels:
        logger.info("simulating cn2=%.2e (%d realizations)", cn2, config.n_realizations)
        ens = channel.ensemble(cn2, bases)
        for b in bases:
            e = ens[b].qder
            rows.append(QkdRow(cn2, b, e, reported_bits(config.d, e), e < threshold))
            matrices[(cn2, b)] = ens[b]
    return QkdReport(rows, matrices, config.d, config.n_realizations, config.seed)
