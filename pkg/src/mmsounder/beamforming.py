"""
Switched-beam codebooks for a planar array with quantized phase shifters.

Coordinates: the array lies in the y-z plane and its boresight is +x.
Azimuth is measured in the horizontal plane from boresight towards +y,
elevation from the horizontal plane towards +z.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

STEER_AZ_LIMIT_DEG = 45.0
STEER_EL_LIMIT_DEG = 30.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform rectangular array of 2-patch subarrays."""

    num_h: int = 8
    num_v: int = 2
    spacing_h_m: float = 5.6e-3
    spacing_v_m: float = 12.5e-3
    carrier_hz: float = 27.85e9
    subarray_element_gain_dbi: float = 7.5

    def __post_init__(self):
        if self.num_h < 1 or self.num_v < 1:
            raise ValueError("array needs at least one element per axis")
        if self.spacing_h_m <= 0 or self.spacing_v_m <= 0:
            raise ValueError("element spacings must be positive")

    @property
    def num_elements(self) -> int:
        return self.num_h * self.num_v

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength_m

    @cached_property
    def element_positions(self) -> np.ndarray:
        """(num_elements, 2) array of (y, z) positions centred on the array."""
        y = (np.arange(self.num_h) - (self.num_h - 1) / 2) * self.spacing_h_m
        z = (np.arange(self.num_v) - (self.num_v - 1) / 2) * self.spacing_v_m
        yy, zz = np.meshgrid(y, z, indexing="ij")
        return np.column_stack([yy.ravel(), zz.ravel()])

    @property
    def element_exponent(self) -> float:
        """Exponent q of the cos**q(theta) subarray power pattern.

        A cos**q power pattern confined to the front hemisphere has peak
        directivity 2(q+1); q is chosen so that this equals the subarray gain.
        """
        return 10 ** (self.subarray_element_gain_dbi / 10) / 2 - 1

    @property
    def peak_gain_dbi(self) -> float:
        """Boresight gain of the broadside beam (array gain plus subarray gain)."""
        return 10 * np.log10(self.num_elements) + self.subarray_element_gain_dbi

    def steering_phase(self, azimuth_deg, elevation_deg) -> np.ndarray:
        """Element phases k*(p . u) for directions, shape (..., num_elements)."""
        az = np.radians(np.asarray(azimuth_deg, dtype=float))[..., None]
        el = np.radians(np.asarray(elevation_deg, dtype=float))[..., None]
        pos = self.element_positions
        return self.wavenumber * (pos[:, 0] * np.cos(el) * np.sin(az) + pos[:, 1] * np.sin(el))

    def element_amplitude(self, azimuth_deg, elevation_deg) -> np.ndarray:
        """Field amplitude (sqrt of linear gain) of one subarray."""
        az = np.radians(np.asarray(azimuth_deg, dtype=float))
        el = np.radians(np.asarray(elevation_deg, dtype=float))
        cos_theta = np.clip(np.cos(el) * np.cos(az), 0.0, None)
        peak = 10 ** (self.subarray_element_gain_dbi / 10)
        return np.sqrt(peak * cos_theta ** self.element_exponent)

    def to_dict(self) -> dict:
        return {
            "num_h": self.num_h, "num_v": self.num_v,
            "spacing_h_m": self.spacing_h_m, "spacing_v_m": self.spacing_v_m,
            "carrier_hz": self.carrier_hz,
            "subarray_element_gain_dbi": self.subarray_element_gain_dbi,
        }


@dataclass(frozen=True)
class Beam:
    """One steerable beam: a phase code per element."""

    azimuth_deg: float
    elevation_deg: float
    phase_codes: tuple
    phase_step_deg: float
    boresight_gain_dbi: float = float("nan")

    @property
    def phases_deg(self) -> np.ndarray:
        return np.asarray(self.phase_codes, dtype=float) * self.phase_step_deg

    @property
    def weights(self) -> np.ndarray:
        return np.exp(1j * np.radians(self.phases_deg))


def _field(weights: np.ndarray, geometry: ArrayGeometry, azimuth_deg, elevation_deg) -> np.ndarray:
    """Complex far-field of weight vectors.

    ``weights`` has shape (num_beams, num_elements); the result has shape
    (num_beams,) + broadcast(azimuth, elevation).shape. ``|field|**2`` is the
    linear gain over isotropic.
    """
    az, el = np.broadcast_arrays(np.asarray(azimuth_deg, float), np.asarray(elevation_deg, float))
    steer = np.exp(1j * geometry.steering_phase(az, el))
    af = np.tensordot(weights, steer, axes=([1], [steer.ndim - 1]))
    return af * geometry.element_amplitude(az, el) / np.sqrt(geometry.num_elements)


def _to_db(x) -> np.ndarray:
    return 20 * np.log10(np.maximum(np.abs(x), 1e-15))


def ideal_phases_deg(geometry: ArrayGeometry, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Progressive phases (degrees) that co-phase all elements towards a direction."""
    return -np.degrees(geometry.steering_phase(azimuth_deg, elevation_deg))


def make_beam(geometry: ArrayGeometry, azimuth_deg: float, elevation_deg: float = 0.0,
              phase_step_deg: float = 11.25) -> Beam:
    """Steer a beam and round every element phase to the shifter step."""
    if abs(azimuth_deg) > STEER_AZ_LIMIT_DEG + 1e-9:
        raise ValueError(f"azimuth {azimuth_deg} deg outside +/-{STEER_AZ_LIMIT_DEG} deg steering range")
    if abs(elevation_deg) > STEER_EL_LIMIT_DEG + 1e-9:
        raise ValueError(f"elevation {elevation_deg} deg outside +/-{STEER_EL_LIMIT_DEG} deg steering range")
    levels = int(round(360.0 / phase_step_deg))
    codes = np.mod(np.round(ideal_phases_deg(geometry, azimuth_deg, elevation_deg) / phase_step_deg),
                   levels).astype(int)
    beam = Beam(float(azimuth_deg), float(elevation_deg), tuple(int(c) for c in codes), phase_step_deg)
    g = _field(beam.weights[None, :], geometry, azimuth_deg, elevation_deg)[0]
    return Beam(beam.azimuth_deg, beam.elevation_deg, beam.phase_codes, phase_step_deg,
                float(_to_db(g)))


def gain(beam: Beam, geometry: ArrayGeometry, azimuth_deg, elevation_deg=0.0):
    """Complex field value and gain in dBi of ``beam`` towards a direction.

    Returns
    -------
    field : complex or ndarray
    gain_dbi : float or ndarray
    """
    f = _field(beam.weights[None, :], geometry, azimuth_deg, elevation_deg)[0]
    return f, _to_db(f)


@dataclass(frozen=True, eq=False)
class BeamCodebook:
    """Ordered beams of one array plus a sampled gain table.

    ``pattern_dbi`` has shape (num_beams, len(el_grid_deg), len(az_grid_deg)).
    """

    geometry: ArrayGeometry
    phase_step_deg: float
    beams: tuple
    az_grid_deg: np.ndarray = field(repr=False)
    el_grid_deg: np.ndarray = field(repr=False)
    pattern_dbi: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.beams)

    @property
    def azimuths_deg(self) -> np.ndarray:
        return np.array([b.azimuth_deg for b in self.beams])

    @property
    def elevations_deg(self) -> np.ndarray:
        return np.array([b.elevation_deg for b in self.beams])

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        return np.array([b.weights for b in self.beams])

    def field(self, azimuth_deg, elevation_deg=0.0, beams=None) -> np.ndarray:
        """Complex field of (a subset of) beams, shape (num_beams,) + direction shape."""
        w = self.weight_matrix if beams is None else self.weight_matrix[np.asarray(beams)]
        return _field(w, self.geometry, azimuth_deg, elevation_deg)

    def gain_db(self, azimuth_deg, elevation_deg=0.0, beams=None) -> np.ndarray:
        return _to_db(self.field(azimuth_deg, elevation_deg, beams))

    def subset(self, indices) -> "BeamCodebook":
        idx = list(indices)
        return BeamCodebook(self.geometry, self.phase_step_deg, tuple(self.beams[i] for i in idx),
                            self.az_grid_deg, self.el_grid_deg, self.pattern_dbi[idx])

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "phase_step_deg": self.phase_step_deg,
            "beams": [{"azimuth_deg": b.azimuth_deg, "elevation_deg": b.elevation_deg,
                       "phase_codes": list(b.phase_codes)} for b in self.beams],
            "az_grid_deg": [float(self.az_grid_deg[0]), float(self.az_grid_deg[-1]),
                            len(self.az_grid_deg)],
            "el_grid_deg": [float(self.el_grid_deg[0]), float(self.el_grid_deg[-1]),
                            len(self.el_grid_deg)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BeamCodebook":
        geometry = ArrayGeometry(**d["geometry"])
        step = float(d["phase_step_deg"])
        beams = []
        for b in d["beams"]:
            beam = Beam(float(b["azimuth_deg"]), float(b["elevation_deg"]),
                        tuple(int(c) for c in b["phase_codes"]), step)
            g = _field(beam.weights[None, :], geometry, beam.azimuth_deg, beam.elevation_deg)[0]
            beams.append(Beam(beam.azimuth_deg, beam.elevation_deg, beam.phase_codes, step,
                              float(_to_db(g))))
        az = np.linspace(*d["az_grid_deg"][:2], int(d["az_grid_deg"][2]))
        el = np.linspace(*d["el_grid_deg"][:2], int(d["el_grid_deg"][2]))
        return _with_table(geometry, step, beams, az, el)


def _with_table(geometry, step, beams, az_grid, el_grid) -> BeamCodebook:
    ee, aa = np.meshgrid(el_grid, az_grid, indexing="ij")
    weights = np.array([b.weights for b in beams])
    table = _to_db(_field(weights, geometry, aa, ee))
    return BeamCodebook(geometry, step, tuple(beams), np.asarray(az_grid, float),
                        np.asarray(el_grid, float), table)


def build_codebook(geometry: ArrayGeometry | None = None, azimuths_deg=None, elevations_deg=(0.0,),
                   phase_step_deg: float = 11.25, az_grid_deg=None, el_grid_deg=None) -> BeamCodebook:
    """Build a quantized-phase codebook and tabulate its patterns.

    Beams are ordered by elevation, then azimuth. The default azimuth set is
    the 19 beams from -45 to 45 deg in 5 deg steps; the default pattern grid
    is 1 deg over azimuth [-90, 90] and elevation [-30, 30].
    """
    geometry = geometry or ArrayGeometry()
    if azimuths_deg is None:
        azimuths_deg = np.arange(-45.0, 45.1, 5.0)
    az_sorted = np.sort(np.asarray(azimuths_deg, dtype=float))
    if np.any(np.diff(az_sorted) == 0):
        raise ValueError("beam azimuths must be unique")
    if az_grid_deg is None:
        az_grid_deg = np.arange(-90.0, 90.5, 1.0)
    if el_grid_deg is None:
        el_grid_deg = np.arange(-30.0, 30.5, 1.0)
    beams = [make_beam(geometry, az, el, phase_step_deg)
             for el in elevations_deg for az in az_sorted]
    return _with_table(geometry, phase_step_deg, beams, az_grid_deg, el_grid_deg)


def beam_pair_power_map(codebook_tx: BeamCodebook, codebook_rx: BeamCodebook,
                        dod_azimuth_deg: float, doa_azimuth_deg: float, power_db: float = 0.0,
                        dod_elevation_deg: float = 0.0, doa_elevation_deg: float = 0.0) -> np.ndarray:
    """Received power (dB) of one path for every (TX beam, RX beam) pair."""
    g_tx = codebook_tx.gain_db(dod_azimuth_deg, dod_elevation_deg)
    g_rx = codebook_rx.gain_db(doa_azimuth_deg, doa_elevation_deg)
    return power_db + g_tx[:, None] + g_rx[None, :]


def beamwidth_3db(codebook: BeamCodebook, index: int, resolution_deg: float = 0.01) -> float:
    """Azimuth 3 dB beamwidth of one beam at its steering elevation."""
    beam = codebook.beams[index]
    az = np.arange(-90.0, 90.0 + resolution_deg / 2, resolution_deg)
    g = codebook.gain_db(az, beam.elevation_deg, beams=[index])[0]
    peak = int(np.argmax(g))
    above = g >= g[peak] - 3.0
    lo = peak
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = peak
    while hi < az.size - 1 and above[hi + 1]:
        hi += 1
    return float(az[hi] - az[lo])


def sidelobe_level_db(codebook: BeamCodebook, index: int, resolution_deg: float = 0.05) -> float:
    """Strongest local maximum outside the main lobe, relative to the main lobe (dB)."""
    beam = codebook.beams[index]
    az = np.arange(-90.0, 90.0 + resolution_deg / 2, resolution_deg)
    g = codebook.gain_db(az, beam.elevation_deg, beams=[index])[0]
    inner = np.flatnonzero((g[1:-1] > g[:-2]) & (g[1:-1] >= g[2:])) + 1
    levels = np.sort(g[inner])[::-1]
    if levels.size < 2:
        return -np.inf
    return float(levels[1] - levels[0])


def beam_sequence_peaks(codebook: BeamCodebook, azimuth_deg: float, elevation_deg: float = 0.0,
                        floor_db: float = 10.0) -> np.ndarray:
    """Beam indices where the received power across adjacent beams peaks.

    Local maxima more than ``floor_db`` below the strongest one are ignored;
    they are sidelobe responses that the MPC extractor rejects anyway.
    """
    g = codebook.gain_db(azimuth_deg, elevation_deg)
    padded = np.concatenate([[-np.inf], g, [-np.inf]])
    peaks = np.flatnonzero((padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:]))
    return peaks[g[peaks] >= g.max() - floor_db]


def check_unimodality(codebook: BeamCodebook, azimuths_deg, elevation_deg: float = 0.0,
                      floor_db: float = 10.0) -> list:
    """Directions whose beam-domain response has more than one significant peak.

    Violations are reported with a warning rather than raised.
    """
    bad = [float(a) for a in np.atleast_1d(azimuths_deg)
           if beam_sequence_peaks(codebook, a, elevation_deg, floor_db).size != 1]
    if bad:
        warnings.warn(f"beam-domain response is multi-modal for {len(bad)} direction(s), "
                      f"e.g. {bad[:3]} deg", RuntimeWarning, stacklevel=2)
    return bad
