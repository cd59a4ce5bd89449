import cmath
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nr4d.array_geometry import Angle, UpaConfig, matched_precoder, single_element_precoder, steering_vector
from nr4d.nr_grid import SPEED_OF_LIGHT, fill_grid, make_grid_dims, make_numerology
from nr4d.range_doppler import compute_rdm, estimate_channel
from nr4d.scene import (
    Box,
    Rectangle,
    ScatterScene,
    Scatterer,
    noise_variance,
    noiseless_echo,
    sample_scene_from_primitives,
    scene_from_points,
    synthesize_echo,
)

DIMS = make_grid_dims(make_numerology(3), 2, 1, 26e9)  # K=24, L=112
CFG = UpaConfig(2, 2)


def echo_oracle(grid, cfg, w, scene):
    """Direct evaluation of the echo sum, one resource element at a time."""
    d = grid.dims
    out = np.zeros((cfg.n_elements, d.K, d.L), dtype=complex)
    for s in scene.scatterers:
        a = steering_vector(cfg, s.angle)
        g = complex(np.vdot(a, w))
        tau = 2 * s.range_m / SPEED_OF_LIGHT
        fd = 2 * s.radial_velocity_mps / d.wavelength_m
        for k in range(d.K):
            for l in range(d.L):
                ph = cmath.exp(-2j * math.pi * k * d.scs_hz * tau) * cmath.exp(2j * math.pi * fd * l * d.symbol_duration_s)
                out[:, k, l] += s.gain * a * g * grid.symbols[k, l] * ph
    return out


def test_empty_scene_noiseless_is_zero():
    grid = fill_grid(DIMS, 0)
    rx = synthesize_echo(grid, CFG, single_element_precoder(CFG), ScatterScene(), math.inf, 0)
    assert rx.per_antenna.shape == (4, DIMS.K, DIMS.L)
    assert not rx.per_antenna.any()


def test_zenith_scatterer_at_zero_range():
    grid = fill_grid(DIMS, 3)
    cfg = UpaConfig(3, 2)
    ang = Angle(0.0, math.pi / 2)
    w = matched_precoder(cfg, ang)
    scene = ScatterScene((Scatterer(0.0, ang, 0.0, 1.0),))
    y = noiseless_echo(grid, cfg, w, scene)
    np.testing.assert_allclose(y, np.broadcast_to(math.sqrt(6) * grid.symbols, y.shape), atol=1e-12)


def test_echo_matches_direct_sum():
    grid = fill_grid(DIMS, 5)
    rng = np.random.default_rng(0)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    scene = ScatterScene(
        (
            Scatterer(12.3, Angle(0.3, -0.2), 7.5, 0.8 * cmath.exp(0.4j)),
            Scatterer(40.0, Angle(-1.0, 0.5), -20.0, 1.3j),
        )
    )
    np.testing.assert_allclose(noiseless_echo(grid, CFG, w, scene), echo_oracle(grid, CFG, w, scene), atol=1e-10)


def test_one_bin_range_offset_lands_in_bin_one():
    dims = make_grid_dims(make_numerology(3), 2, 1, 26e9)
    n_r, n_d = 32, 128
    r = SPEED_OF_LIGHT / (2 * dims.scs_hz * n_r)  # 2 R df / c = 1 / N_R
    grid = fill_grid(dims, 2)
    scene = ScatterScene((Scatterer(r, Angle(0.0, 0.0)),))
    rx = synthesize_echo(grid, CFG, single_element_precoder(CFG), scene, math.inf)
    rdm = compute_rdm(estimate_channel(rx, grid), n_r, n_d)
    assert np.unravel_index(np.argmax(rdm.integrated), rdm.integrated.shape) == (1, 0)


scat = st.builds(
    Scatterer,
    range_m=st.floats(0, 200),
    angle=st.builds(Angle, st.floats(-3, 3), st.floats(-1.5, 1.5)),
    radial_velocity_mps=st.floats(-50, 50),
    gain=st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
)


@given(a=scat, b=scat)
def test_superposition(a, b):
    grid = fill_grid(DIMS, 1)
    w = single_element_precoder(CFG)
    both = noiseless_echo(grid, CFG, w, ScatterScene((a, b)))
    parts = noiseless_echo(grid, CFG, w, ScatterScene((a,))) + noiseless_echo(grid, CFG, w, ScatterScene((b,)))
    np.testing.assert_allclose(both, parts, atol=1e-9)


@given(v=st.floats(0.5, 100))
def test_negating_velocity_conjugates_doppler(v):
    grid = fill_grid(DIMS, 1)
    w = single_element_precoder(CFG)
    ang = Angle(0.0, 0.0)
    pos = noiseless_echo(grid, CFG, w, ScatterScene((Scatterer(0.0, ang, v),)))
    neg = noiseless_echo(grid, CFG, w, ScatterScene((Scatterer(0.0, ang, -v),)))
    # at R=0 and theta=phi=0 the only remaining phase is the Doppler ramp (times symbols and steering)
    ramp_pos = pos[0] / grid.symbols
    ramp_neg = neg[0] / grid.symbols
    np.testing.assert_allclose(ramp_neg, np.conj(ramp_pos), atol=1e-12)


def test_noise_variance_matches_snr():
    dims = make_grid_dims(make_numerology(3), 32, 1, 26e9)  # 384 x 112 x 4 antennas > 1e5 REs
    grid = fill_grid(dims, 0)
    for snr_db in (0.0, 10.0, -5.0):
        rx = synthesize_echo(grid, CFG, single_element_precoder(CFG), ScatterScene(), snr_db, seed=9)
        measured = np.mean(np.abs(rx.per_antenna) ** 2)
        assert measured == pytest.approx(noise_variance(CFG, snr_db), rel=0.05)
        assert noise_variance(CFG, snr_db) == pytest.approx(4 / 10 ** (snr_db / 10))


def test_noise_is_seeded():
    grid = fill_grid(DIMS, 0)
    a = synthesize_echo(grid, CFG, single_element_precoder(CFG), ScatterScene(), 0.0, 4)
    b = synthesize_echo(grid, CFG, single_element_precoder(CFG), ScatterScene(), 0.0, 4)
    c = synthesize_echo(grid, CFG, single_element_precoder(CFG), ScatterScene(), 0.0, 5)
    np.testing.assert_array_equal(a.per_antenna, b.per_antenna)
    assert not np.array_equal(a.per_antenna, c.per_antenna)


def test_nan_snr_rejected():
    with pytest.raises(ValueError):
        synthesize_echo(fill_grid(DIMS, 0), CFG, single_element_precoder(CFG), ScatterScene(), math.nan)


def test_aliasing_velocity_warns():
    grid = fill_grid(DIMS, 0)
    vmax = DIMS.max_unambiguous_velocity_mps
    with pytest.warns(UserWarning):
        noiseless_echo(grid, CFG, single_element_precoder(CFG), ScatterScene((Scatterer(5.0, Angle(0, 0), 1.1 * vmax),)))


def test_negative_range_rejected():
    with pytest.raises(ValueError):
        Scatterer(-1.0, Angle(0, 0))


def test_unit_rectangle_count():
    scene = sample_scene_from_primitives([Rectangle((5.0, 0.0, 0.0), (1.0, 1.0))], 100.0, 0)
    assert len(scene) == 100


def test_primitive_sampling_deterministic():
    prims = [Rectangle((5.0, 1.0, 0.0), (2.0, 1.0), (10.0, 20.0, 30.0)), Box((8.0, 0.0, 1.0), (1.0, 2.0, 1.0))]
    a = sample_scene_from_primitives(prims, 5.0, 11)
    b = sample_scene_from_primitives(prims, 5.0, 11)
    assert a == b
    assert len(a) == round(2 * 5) + 2 * round(2 * 5) + 2 * round(1 * 5) + 2 * round(2 * 5)


def test_points_lie_on_rectangle():
    rect = Rectangle((1.0, 2.0, 3.0), (2.0, 4.0), (30.0, 0.0, 0.0))
    pts = sample_scene_from_primitives([rect], 50.0, 1).positions()
    assert np.allclose(pts[:, 2], 3.0)  # yaw keeps the plane horizontal
    assert np.all(np.linalg.norm(pts[:, :2] - [1.0, 2.0], axis=1) <= math.hypot(1, 2) + 1e-9)


def test_empty_primitive_list():
    assert len(sample_scene_from_primitives([], 1.0, 0)) == 0


def test_point_on_x_axis_to_scatterer():
    s = scene_from_points(np.array([[10.0, 0.0, 0.0]])).scatterers[0]
    assert s.range_m == 10.0
    assert (s.angle.theta_rad, s.angle.phi_rad) == (0.0, 0.0)


def test_density_must_be_positive():
    with pytest.raises(ValueError):
        sample_scene_from_primitives([Rectangle((0, 0, 0), (1, 1))], 0.0, 0)
