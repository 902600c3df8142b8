import json

import numpy as np
import pytest

from turbqkd.optics import (
    ANGLE,
    OAM,
    BeamParams,
    ComplexField,
    GridSpec,
    ModeLabel,
    ResolutionError,
    angle_index,
    angle_matrix,
    angle_mode,
    apply_aperture,
    beam_geometry,
    beam_radius,
    dump_field,
    lg_mode,
    mode_set,
    oam_alphabet,
    overlap,
    propagate,
)

PARAMS = BeamParams()
GRID = GridSpec()


def gram(fields):
    return np.array([[overlap(a, b) for b in fields] for a in fields])


@pytest.fixture(scope="module")
def oam_at_source():
    return mode_set(OAM, 0.0, PARAMS, GRID)


@pytest.fixture(scope="module")
def angle_at_source():
    return mode_set(ANGLE, 0.0, PARAMS, GRID)


def test_alphabet_skips_zero():
    assert oam_alphabet(8) == [-4, -3, -2, -1, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        oam_alphabet(7)
    with pytest.raises(ValueError):
        ModeLabel(OAM, 0)
    ModeLabel(ANGLE, 0)


def test_geometry_at_waist():
    w, R, psi = beam_geometry(0.0, PARAMS, ell=2)
    assert w == PARAMS.w0
    assert np.isinf(R)
    assert psi == 0.0


def test_geometry_at_rayleigh_range():
    zr = PARAMS.rayleigh_range
    w, R, psi = beam_geometry(zr, PARAMS, ell=0)
    assert w == pytest.approx(np.sqrt(2) * PARAMS.w0, rel=1e-14)
    assert R == pytest.approx(2 * zr, rel=1e-14)
    assert psi == pytest.approx(np.pi / 4, rel=1e-14)
    assert beam_geometry(zr, PARAMS, ell=3)[2] == pytest.approx(np.pi, rel=1e-14)


def test_defaults_rayleigh_and_receiver_radius():
    assert PARAMS.rayleigh_range == pytest.approx(24822.8, rel=1e-4)
    w, _, _ = beam_geometry(PARAMS.length, PARAMS)
    assert w == pytest.approx(0.0819, abs=5e-5)


def test_vortex_null_and_unit_norm():
    f = lg_mode(1, 0.0, PARAMS, GRID)
    c = GRID.n // 2
    assert f.data[c, c] == 0
    assert f.power() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("ell", [1, -2, 3])
def test_topological_charge(ell):
    f = lg_mode(ell, 0.0, PARAMS, GRID)
    # walk a circle of radius w0 and unwrap the phase
    theta = np.linspace(0, 2 * np.pi, 721)
    idx = np.rint(PARAMS.w0 * np.stack([np.sin(theta), np.cos(theta)]) / GRID.pitch).astype(int) + GRID.n // 2
    phase = np.unwrap(np.angle(f.data[idx[0], idx[1]]))
    assert phase[-1] - phase[0] == pytest.approx(-2 * np.pi * ell, abs=1e-6)


def test_coarse_grid_raises():
    with pytest.raises(ResolutionError):
        lg_mode(1, 0.0, PARAMS, GridSpec(side=1.2, n=64))
    with pytest.raises(ResolutionError):
        lg_mode(1, 0.0, PARAMS, GridSpec(side=0.1, n=1024))


def test_angle_index_values():
    assert [angle_index(ell) for ell in (-4, -1, 1, 4)] == [0, 3, 4, 7]
    assert sorted(angle_index(ell) for ell in oam_alphabet()) == list(range(8))


def test_angle_matrix_unitary_and_unbiased():
    U = angle_matrix()
    assert np.allclose(U @ U.conj().T, np.eye(8), atol=1e-14)
    assert np.allclose(np.abs(U) ** 2, 1 / 8, atol=1e-15)


def test_angle_index_bounds():
    with pytest.raises(ValueError):
        angle_mode(8, 0.0, PARAMS, GRID)


def test_oam_orthonormal(oam_at_source):
    G = gram(oam_at_source)
    assert np.max(np.abs(G - np.eye(8))) <= 1e-6


def test_angle_orthonormal(angle_at_source):
    G = gram(angle_at_source)
    assert np.max(np.abs(G - np.eye(8))) <= 1e-6


def test_mutually_unbiased_on_grid(oam_at_source, angle_at_source):
    P = np.array([[abs(overlap(a, b)) ** 2 for b in angle_at_source] for a in oam_at_source])
    assert np.max(np.abs(P - 1 / 8)) <= 1e-6


def test_orthonormal_after_vacuum_propagation(oam_at_source):
    moved = [propagate(f, PARAMS.length, PARAMS) for f in oam_at_source]
    assert np.max(np.abs(gram(moved) - np.eye(8))) <= 1e-8


def test_power_conserved_by_propagation(oam_at_source):
    for f in oam_at_source[:3]:
        out = propagate(f, PARAMS.length, PARAMS)
        assert abs(out.power() - f.power()) / f.power() < 1e-10


def test_l1_radius_at_receiver():
    f = propagate(lg_mode(1, 0.0, PARAMS, GRID), PARAMS.length, PARAMS)
    w_expected, _, _ = beam_geometry(PARAMS.length, PARAMS)
    assert beam_radius(f, ell=1) == pytest.approx(w_expected, rel=5e-3)


def test_propagated_mode_matches_analytic_mode():
    f = propagate(lg_mode(2, 0.0, PARAMS, GRID), PARAMS.length, PARAMS)
    ref = lg_mode(2, PARAMS.length, PARAMS, GRID)
    assert abs(overlap(ref, f)) ** 2 == pytest.approx(1.0, abs=1e-6)


def test_plane_wave_unchanged():
    grid = GridSpec(side=1.0, n=64)
    f = ComplexField(np.full((64, 64), 1 + 0j), grid)
    out = propagate(f, 1000.0, PARAMS)
    assert np.allclose(out.data, f.data, atol=1e-12)
    assert out.z == 1000.0


def test_forward_then_back_is_identity():
    grid = GridSpec(side=1.2, n=256)
    f = lg_mode(3, 0.0, PARAMS, grid)
    back = propagate(propagate(f, 2000.0, PARAMS), -2000.0, PARAMS)
    assert np.max(np.abs(back.data - f.data)) < 1e-8


def test_aperture_cases():
    f = propagate(lg_mode(1, 0.0, PARAMS, GRID), PARAMS.length, PARAMS)
    same, frac = apply_aperture(f, 2.0)
    assert frac == 1.0
    assert np.array_equal(same.data, f.data)
    nothing, frac = apply_aperture(f, 0.0)
    assert frac == 0.0
    assert not nothing.data.any()


def test_aperture_passes_gaussian_like_beam():
    xx, yy = GRID.mesh()
    w, _, _ = beam_geometry(PARAMS.length, PARAMS)
    f = ComplexField(np.exp(-(xx**2 + yy**2) / w**2).astype(complex), GRID)
    _, frac = apply_aperture(f, PARAMS.aperture)
    # encircled energy of a Gaussian: 1 - exp(-2 a^2 / w^2)
    assert frac == pytest.approx(1 - np.exp(-2 * 0.15**2 / w**2), abs=1e-4)
    assert frac > 0.99


def test_overlap_properties():
    grid = GridSpec(side=1.2, n=256)
    a = lg_mode(1, 0.0, PARAMS, grid)
    b = angle_mode(3, 0.0, PARAMS, grid)
    assert overlap(a, a) == pytest.approx(1.0, abs=1e-12)
    assert overlap(a, b) == pytest.approx(np.conj(overlap(b, a)), abs=1e-15)
    assert abs(overlap(a, lg_mode(-1, 0.0, PARAMS, grid))) ** 2 < 1e-10
    with pytest.raises(ValueError):
        overlap(a, lg_mode(1, 0.0, PARAMS, GridSpec(side=1.2, n=512)))


def test_grid_convergence_of_overlaps():
    def clipped_overlap(grid):
        sent = propagate(angle_mode(2, 0.0, PARAMS, grid), PARAMS.length, PARAMS)
        sent, _ = apply_aperture(sent, PARAMS.aperture)
        return abs(overlap(lg_mode(3, PARAMS.length, PARAMS, grid), sent)) ** 2

    coarse = clipped_overlap(GridSpec(side=1.2, n=512))
    fine = clipped_overlap(GridSpec(side=1.2, n=1024))
    assert abs(coarse - fine) < 1e-4


def test_dump_field_crop(tmp_path):
    grid = GridSpec(side=1.2, n=128)
    f = lg_mode(2, 0.0, PARAMS, grid)
    sidecar = dump_field(f, tmp_path / "mode.csv", PARAMS, crop=0.3)
    meta = json.loads(sidecar.read_text())
    re = np.loadtxt(tmp_path / "mode_re.csv", delimiter=",")
    im = np.loadtxt(tmp_path / "mode_im.csv", delimiter=",")
    lo, n = meta["first_index"], meta["samples"]
    assert re.shape == im.shape == (n, n)
    assert n * grid.pitch >= 0.3
    assert np.allclose(re + 1j * im, f.data[lo:lo + n, lo:lo + n], rtol=1e-7, atol=1e-12)
    assert meta["index"] == 2 and meta["w0_m"] == PARAMS.w0
