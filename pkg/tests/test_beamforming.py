import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from mmsounder.beamforming import (ArrayGeometry, Beam, BeamCodebook, beam_pair_power_map,
                                   beamwidth_3db, build_codebook, check_unimodality, gain,
                                   ideal_phases_deg, make_beam, sidelobe_level_db)


def test_element_exponent_gives_subarray_directivity():
    # numerical directivity of the cos**q power pattern over the front hemisphere
    geom = ArrayGeometry()
    q = geom.element_exponent
    radiated, _ = integrate.dblquad(lambda th, ph: np.cos(th) ** q * np.sin(th),
                                    0, 2 * np.pi, 0, np.pi / 2)
    directivity_db = 10 * np.log10(4 * np.pi / radiated)
    assert directivity_db == pytest.approx(7.5, abs=1e-6)


def test_element_amplitude_peak_and_back_hemisphere():
    geom = ArrayGeometry()
    assert 20 * np.log10(geom.element_amplitude(0.0, 0.0)) == pytest.approx(7.5)
    assert geom.element_amplitude(120.0, 0.0) == 0.0


def test_broadside_weights_equal():
    beam = make_beam(ArrayGeometry(), 0.0)
    assert len(set(beam.phase_codes)) == 1


def test_codebook_shape(codebook):
    assert len(codebook) == 19
    np.testing.assert_allclose(codebook.azimuths_deg, np.arange(-45, 46, 5))
    assert np.all(np.diff(codebook.azimuths_deg) > 0)
    assert codebook.pattern_dbi.shape == (19, 61, 181)


def test_boresight_gain(codebook):
    assert codebook.beams[9].boresight_gain_dbi == pytest.approx(19.5, abs=0.1)
    assert ArrayGeometry().peak_gain_dbi == pytest.approx(12.04 + 7.5, abs=0.01)


def test_weights_unit_modulus_and_quantized(codebook):
    for beam in codebook.beams:
        assert np.allclose(np.abs(beam.weights), 1.0)
        steps = beam.phases_deg / codebook.phase_step_deg
        assert np.allclose(steps, np.round(steps))


def test_beamwidth_near_broadside(codebook):
    for i, beam in enumerate(codebook.beams):
        if abs(beam.azimuth_deg) <= 30:
            assert beamwidth_3db(codebook, i) == pytest.approx(12.0, abs=2.0)


def test_beamwidth_scan_broadening(codebook):
    # the projected aperture shrinks with cos(scan), so the beam widens by 1/cos
    broadside = beamwidth_3db(codebook, 9)
    for i, beam in enumerate(codebook.beams):
        projected = beamwidth_3db(codebook, i) * np.cos(np.radians(beam.azimuth_deg))
        assert projected == pytest.approx(broadside, rel=0.06)


def test_sidelobes_at_least_10db_down(codebook):
    for i in range(len(codebook)):
        assert sidelobe_level_db(codebook, i) <= -10.0


def test_broadside_90_deg_off(codebook):
    g0 = codebook.gain_db(0.0, beams=[9])[0]
    g90 = codebook.gain_db(90.0, beams=[9])[0]
    assert g90 <= g0 - 10


def test_table_maxima_near_steering(codebook):
    el0 = int(np.argmin(np.abs(codebook.el_grid_deg)))
    peaks = codebook.az_grid_deg[np.argmax(codebook.pattern_dbi[:, el0, :], axis=1)]
    assert np.all(np.abs(peaks - codebook.azimuths_deg) <= 3.0)


def test_gain_at_steering_matches_table(codebook):
    geom = codebook.geometry
    for i, beam in enumerate(codebook.beams):
        _, g = gain(beam, geom, beam.azimuth_deg, 0.0)
        assert abs(g - codebook.pattern_dbi[i].max()) <= 0.5


def test_quantization_distortion_below_1db(codebook):
    geom = codebook.geometry
    for beam in codebook.beams:
        ideal = Beam(beam.azimuth_deg, 0.0, tuple(ideal_phases_deg(geom, beam.azimuth_deg, 0.0)), 1.0)
        _, g_ideal = gain(ideal, geom, beam.azimuth_deg)
        _, g_q = gain(beam, geom, beam.azimuth_deg)
        assert abs(g_ideal - g_q) < 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 90))
def test_broadside_beam_symmetric(x):
    geom = ArrayGeometry()
    beam = make_beam(geom, 0.0)
    _, a = gain(beam, geom, x)
    _, b = gain(beam, geom, -x)
    assert abs(a - b) < 1e-9


@pytest.mark.parametrize("az, el", [(46.0, 0.0), (0.0, 31.0), (-50.0, 0.0)])
def test_steering_range_enforced(az, el):
    with pytest.raises(ValueError):
        make_beam(ArrayGeometry(), az, el)


def test_duplicate_azimuths_rejected():
    with pytest.raises(ValueError):
        build_codebook(azimuths_deg=[0.0, 5.0, 5.0])


def test_power_map_argmax(codebook):
    m = beam_pair_power_map(codebook, codebook, 20.0, 15.0)
    i, j = np.unravel_index(np.argmax(m), m.shape)
    assert (codebook.azimuths_deg[i], codebook.azimuths_deg[j]) == (20.0, 15.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-45, 45), st.floats(-45, 45), st.floats(-50, 50))
def test_power_map_additive_shift(dod, doa, shift):
    cb = build_codebook()
    a = beam_pair_power_map(cb, cb, dod, doa, 0.0)
    b = beam_pair_power_map(cb, cb, dod, doa, shift)
    np.testing.assert_allclose(b - a, shift, atol=1e-9)
    assert np.argmax(a) == np.argmax(b)


def test_power_map_isotropic_constant():
    # a codebook whose beams are all the same broadside beam has equal gains
    geom = ArrayGeometry()
    beam = make_beam(geom, 0.0)
    base = build_codebook(geom, [0.0])
    same = BeamCodebook(geom, base.phase_step_deg, (beam,) * 4, base.az_grid_deg,
                        base.el_grid_deg, np.repeat(base.pattern_dbi, 4, axis=0))
    m = beam_pair_power_map(same, same, 12.0, -7.0)
    assert np.ptp(m) == 0.0


def test_unimodal_inside_sector(codebook):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_unimodality(codebook, np.arange(-45, 45.01, 0.25)) == []


def test_unimodality_violation_warns(codebook):
    with pytest.warns(RuntimeWarning):
        bad = check_unimodality(codebook, [-60.0, 0.0])
    assert bad == [-60.0]


def test_codebook_dict_round_trip(codebook):
    back = BeamCodebook.from_dict(codebook.to_dict())
    assert back.beams == codebook.beams
    np.testing.assert_allclose(back.pattern_dbi, codebook.pattern_dbi)
