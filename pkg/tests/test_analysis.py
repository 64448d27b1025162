import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nmcontrol.analysis import (AffineBlochMap, UnphysicalStateError, VolumeSeries,
                                adiabatic_density, bloch_array, bloch_coords, decoherence_rate,
                                density_from_bloch, detect_nonmarkovianity, ellipsoid, entropy,
                                integrate_rate, maps_from_trajectory, projector, solve_affine,
                                tomography_inputs, volume)
from nmcontrol.model import adiabatic_frame, default_params

unit = st.floats(-1.0, 1.0)
mats = arrays(np.float64, (3, 3), elements=st.floats(-1.0, 1.0))
vecs = arrays(np.float64, (3,), elements=st.floats(-0.5, 0.5))


def ball_point():
    return st.tuples(unit, unit, unit).filter(lambda r: sum(x * x for x in r) <= 1.0)


def test_basis_coordinates():
    assert bloch_coords(projector("diabatic_1")).as_array().tolist() == [0.0, 0.0, -1.0]
    assert bloch_coords(projector("diabatic_2")).as_array().tolist() == [0.0, 0.0, 1.0]
    assert np.allclose(bloch_coords(projector("plus")).as_array(), [1, 0, 0])
    # y = 2 Im rho12 and |+i> has rho12 = -i/2
    assert np.allclose(bloch_coords(projector("plus_i")).as_array(), [0, -1, 0])
    assert bloch_coords(0.5 * np.eye(2)).norm == 0.0


@given(ball_point())
def test_bloch_round_trip(r):
    rho = density_from_bloch(r)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.allclose(bloch_array(rho), r, atol=1e-15)


def test_tomography_set_spans():
    ins = bloch_array(tomography_inputs())
    assert ins.shape == (5, 3)
    assert abs(np.linalg.det(np.hstack([ins[:4], np.ones((4, 1))]))) > 0.1


@settings(max_examples=50)
@given(mats, vecs)
def test_affine_reconstruction(a, b):
    ins = bloch_array(tomography_inputs())
    outs = ins @ a.T + b
    a2, b2 = solve_affine(ins[:4], outs[None, :4])
    assert np.allclose(a2[0], a, atol=1e-12)
    assert np.allclose(b2[0], b, atol=1e-12)


def _fake_batch(a, b):
    ins = bloch_array(tomography_inputs())
    outs = ins @ a.T + b
    return np.stack([density_from_bloch(r) for r in outs])[None]


def test_identity_map():
    ms = maps_from_trajectory([0.0], _fake_batch(np.eye(3), np.zeros(3)))
    assert ms.reliable
    assert volume(ms[0]) == 1.0


def test_linearity_violation_flagged():
    batch = _fake_batch(np.eye(3) * 0.5, np.zeros(3))
    batch[0, 4] = density_from_bloch([0.01, 0.0, 0.0])
    ms = maps_from_trajectory([0.0], batch)
    assert not ms.reliable
    assert ms.linearity_error == pytest.approx(0.01)


@settings(max_examples=50)
@given(mats, vecs)
def test_ellipsoid_product_is_volume(a, b):
    m = AffineBlochMap(a, b)
    e = ellipsoid(m)
    assert np.prod(e.semi_axes) == pytest.approx(abs(volume(m)), rel=1e-10, abs=1e-14)
    assert np.all(np.diff(e.semi_axes) <= 0)
    assert np.allclose(e.directions.T @ e.directions, np.eye(3), atol=1e-12)
    assert np.array_equal(e.center, b)


def test_contracting_map_volume():
    m = AffineBlochMap(np.diag([0.5, 0.5, 0.2]), np.zeros(3))
    assert volume(m) == pytest.approx(0.05)


def _series(v, dt_fs=0.1):
    t = np.arange(len(v)) * dt_fs
    return VolumeSeries(t, np.asarray(v, dtype=float))


def test_markovian_exponential():
    t = np.linspace(0, 50, 501)
    rate = 1e-3
    v = np.exp(-2 * rate * t * 41.341373335)
    s = VolumeSeries(t, v)
    g = decoherence_rate(s)
    assert np.allclose(g[1:-1], rate, rtol=1e-4)
    bumps, flagged = detect_nonmarkovianity(s)
    assert bumps == [] and not flagged
    assert np.allclose(integrate_rate(t, g), v, rtol=1e-3)


def test_bump_detected():
    t = np.linspace(0, 60, 601)
    v = np.exp(-t / 20) + 0.06 * np.exp(-((t - 25) / 2) ** 2)
    s = VolumeSeries(t, v)
    bumps, flagged = detect_nonmarkovianity(s)
    assert flagged
    assert len(bumps) == 1
    assert bumps[0][0] == pytest.approx(25, abs=1.0)
    g = decoherence_rate(s)
    assert np.nanmin(g[(t > 20) & (t < 25)]) < 0


def test_rate_floor():
    s = _series([1.0, 0.5, 0.2, 0.0, -0.1, 0.1])
    g = decoherence_rate(s)
    assert np.all(np.isfinite(g[:3]))
    assert np.all(np.isnan(g[3:]))


@given(st.floats(0.0, 1.0))
def test_entropy_bounds(p):
    rho = np.diag([p, 1 - p]).astype(complex)
    s = entropy(rho)
    assert -1e-12 <= s <= 1.0 + 1e-12


def test_entropy_anchors():
    assert entropy(projector("plus")) == pytest.approx(0.0, abs=1e-12)
    assert entropy(0.5 * np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(UnphysicalStateError):
        entropy(np.diag([1.2, -0.2]))


def test_adiabatic_density():
    p = default_params()
    u = adiabatic_frame(p)
    ground = np.outer(u[:, 0], u[:, 0])
    ad = adiabatic_density(ground, p)
    assert ad[0, 0].real == pytest.approx(1.0)
    assert abs(ad[0, 1]) < 1e-14
    # bare state |1> has a fixed overlap with the adiabatic ground state
    ad1 = adiabatic_density(projector("diabatic_1"), p)
    assert ad1[0, 0].real == pytest.approx(u[0, 0] ** 2)
    assert np.trace(ad1).real == pytest.approx(1.0)
