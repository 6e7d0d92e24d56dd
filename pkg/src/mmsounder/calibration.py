"""Back-to-back system frequency response: synthesis and removal."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

SYNTHETIC = "synthetic"
MEASURED = "measured-file"


class GridMismatchError(ValueError):
    """Raised when a calibration does not share the capture's tone grid."""


@dataclass(frozen=True, eq=False)
class CalibrationResponse:
    """Complex response per tone, shared by all beam pairs or one row per pair.

    ``response`` has shape (num_tones,) or (num_pairs, num_tones).
    """

    tone_frequencies_hz: np.ndarray = field(repr=False)
    response: np.ndarray = field(repr=False)
    source: str = SYNTHETIC

    def __post_init__(self):
        f = np.asarray(self.tone_frequencies_hz, dtype=float).ravel()
        r = np.asarray(self.response, dtype=complex)
        if r.shape[-1] != f.size or r.ndim not in (1, 2):
            raise GridMismatchError("response must have one value per tone")
        if np.any(np.abs(r) == 0) or not np.all(np.isfinite(r)):
            raise ValueError("calibration response must be finite and non-zero on every tone")
        f.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "tone_frequencies_hz", f)
        object.__setattr__(self, "response", r)

    @property
    def num_tones(self) -> int:
        return self.tone_frequencies_hz.size

    @property
    def per_pair(self) -> bool:
        return self.response.ndim == 2

    def tone_response(self, pair: int = 0) -> np.ndarray:
        return self.response[pair] if self.per_pair else self.response

    def matches(self, tone_frequencies_hz) -> bool:
        f = np.asarray(tone_frequencies_hz, dtype=float)
        return f.shape == self.tone_frequencies_hz.shape and np.allclose(
            f, self.tone_frequencies_hz, rtol=0, atol=1e-3)


def identity_response(tone_frequencies_hz) -> CalibrationResponse:
    f = np.asarray(tone_frequencies_hz, dtype=float)
    return CalibrationResponse(f, np.ones(f.size, dtype=complex))


def _smooth_unit_rms(rng: np.random.Generator, n: int, correlation_tones: float) -> np.ndarray:
    x = gaussian_filter1d(rng.standard_normal(n), correlation_tones, mode="wrap")
    x = x - x.mean()
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def synthesize_system_response(tone_frequencies_hz, ripple_db_rms: float = 0.13,
                               phase_rms_rad: float = 0.04, seed: int = 0,
                               correlation_tones: float = 25.0) -> CalibrationResponse:
    """Smooth random amplitude and phase ripple with exact RMS values.

    Both ripples are Gaussian-smoothed white noise with a correlation length
    of ``correlation_tones``, made zero-mean and scaled so their RMS over the
    grid equals ``ripple_db_rms`` (dB) and ``phase_rms_rad``.
    """
    if ripple_db_rms < 0 or phase_rms_rad < 0:
        raise ValueError("ripple values must be non-negative")
    f = np.asarray(tone_frequencies_hz, dtype=float)
    rng = np.random.default_rng(seed)
    amp_db = ripple_db_rms * _smooth_unit_rms(rng, f.size, correlation_tones)
    phase = phase_rms_rad * _smooth_unit_rms(rng, f.size, correlation_tones)
    return CalibrationResponse(f, 10 ** (amp_db / 20) * np.exp(1j * phase), SYNTHETIC)


def apply_calibration(spectrum, cal: CalibrationResponse, tone_frequencies_hz=None,
                      pair: int | None = None) -> np.ndarray:
    """Divide tone values by the calibration response, element-wise.

    ``spectrum`` has the tones on its last axis. With a per-pair table,
    either pass ``pair`` or give a leading axis with one row per pair.
    """
    s = np.asarray(spectrum)
    if tone_frequencies_hz is not None and not cal.matches(tone_frequencies_hz):
        raise GridMismatchError("capture and calibration tone grids differ")
    if s.shape[-1] != cal.num_tones:
        raise GridMismatchError(f"capture has {s.shape[-1]} tones, calibration {cal.num_tones}")
    if not cal.per_pair:
        return s / cal.response
    if pair is not None:
        return s / cal.response[pair]
    if s.ndim < 2 or s.shape[-2] != cal.response.shape[0]:
        raise GridMismatchError("per-pair calibration needs one row per beam pair")
    return s / cal.response
