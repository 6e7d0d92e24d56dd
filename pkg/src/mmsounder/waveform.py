"""
Multi-tone sounding waveform: synthesis, crest-factor optimization and a
Zadoff-Chu reference.

The sounding signal is a flat-spectrum sum of ``2N+1`` complex exponentials
spaced by ``tone_spacing_hz``. One period lasts ``1/tone_spacing_hz`` seconds,
so the whole waveform is described by the tone grid plus one phase per tone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class InvalidSpecError(ValueError):
    """Raised when a tone grid cannot be realised at the requested sample rate."""


def _is_integer(x: float, rtol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= rtol * max(1.0, abs(x))


@dataclass(frozen=True, eq=False)
class MultitoneSpec:
    """Tone grid and per-tone phases of a multi-tone waveform.

    Parameters
    ----------
    num_tones : int
        Number of tones, odd (``2N+1``).
    tone_spacing_hz : float
        Spacing between adjacent tones. Also the inverse of the period.
    first_tone_hz : float
        Baseband frequency of the lowest tone.
    sample_rate_hz : float
        Sample rate of the generated waveform.
    phases_rad : array_like
        One phase per tone. Stored modulo 2*pi.
    """

    num_tones: int
    tone_spacing_hz: float
    first_tone_hz: float
    sample_rate_hz: float
    phases_rad: np.ndarray = field(repr=False)

    def __post_init__(self):
        if int(self.num_tones) != self.num_tones or self.num_tones < 1 or self.num_tones % 2 == 0:
            raise InvalidSpecError(f"num_tones must be a positive odd integer, got {self.num_tones}")
        if self.tone_spacing_hz <= 0 or self.sample_rate_hz <= 0 or self.first_tone_hz < 0:
            raise InvalidSpecError("tone spacing and sample rate must be positive, first tone non-negative")
        top = self.first_tone_hz + (self.num_tones - 1) * self.tone_spacing_hz
        if not top < self.sample_rate_hz / 2:
            raise InvalidSpecError(
                f"highest tone {top / 1e6:.3f} MHz is not below Nyquist "
                f"({self.sample_rate_hz / 2e6:.3f} MHz)")
        if not _is_integer(self.sample_rate_hz / self.tone_spacing_hz):
            raise InvalidSpecError("sample_rate_hz must be an integer multiple of tone_spacing_hz")
        if not _is_integer(self.first_tone_hz / self.tone_spacing_hz):
            raise InvalidSpecError("first_tone_hz must lie on the tone grid")
        phases = np.mod(np.asarray(self.phases_rad, dtype=float).ravel(), TWO_PI)
        if phases.size != self.num_tones:
            raise InvalidSpecError(f"expected {self.num_tones} phases, got {phases.size}")
        phases.setflags(write=False)
        object.__setattr__(self, "num_tones", int(self.num_tones))
        object.__setattr__(self, "phases_rad", phases)

    def __eq__(self, other):
        if not isinstance(other, MultitoneSpec):
            return NotImplemented
        return (self.grid() == other.grid()
                and np.array_equal(self.phases_rad, other.phases_rad))

    def __hash__(self):
        return hash((self.grid(), self.phases_rad.tobytes()))

    def grid(self) -> tuple:
        """(num_tones, tone_spacing_hz, first_tone_hz, sample_rate_hz)."""
        return (self.num_tones, float(self.tone_spacing_hz), float(self.first_tone_hz),
                float(self.sample_rate_hz))

    @classmethod
    def sounder_default(cls, phases_rad=None) -> "MultitoneSpec":
        """801 tones at 500 kHz from 50 MHz, sampled at 1.25 GHz."""
        phases = np.zeros(801) if phases_rad is None else phases_rad
        return cls(801, 500e3, 50e6, 1.25e9, phases)

    def with_phases(self, phases_rad) -> "MultitoneSpec":
        return MultitoneSpec(self.num_tones, self.tone_spacing_hz, self.first_tone_hz,
                             self.sample_rate_hz, phases_rad)

    @property
    def samples_per_period(self) -> int:
        return int(round(self.sample_rate_hz / self.tone_spacing_hz))

    @property
    def period_s(self) -> float:
        return 1.0 / self.tone_spacing_hz

    @property
    def first_bin(self) -> int:
        return int(round(self.first_tone_hz / self.tone_spacing_hz))

    @property
    def tone_bins(self) -> np.ndarray:
        """FFT bin of every tone in a one-period DFT at ``sample_rate_hz``."""
        return self.first_bin + np.arange(self.num_tones)

    @property
    def tone_frequencies_hz(self) -> np.ndarray:
        return self.first_tone_hz + self.tone_spacing_hz * np.arange(self.num_tones)

    @property
    def tone_offsets_hz(self) -> np.ndarray:
        """Tone frequencies relative to the centre of the occupied band."""
        return self.tone_spacing_hz * (np.arange(self.num_tones) - (self.num_tones - 1) / 2)

    @property
    def bandwidth_hz(self) -> float:
        return self.num_tones * self.tone_spacing_hz


@dataclass(frozen=True, eq=False)
class MultitoneWaveform:
    """One sampled period of a multi-tone waveform, peak-normalized to 1."""

    spec: MultitoneSpec
    samples: np.ndarray = field(repr=False)
    papr_db: float

    def tone_values(self) -> np.ndarray:
        """Complex amplitude of every tone, from a DFT of one period."""
        n = self.samples.size
        return np.fft.fft(self.samples)[self.spec.tone_bins] / n

    def periods(self, count: int) -> np.ndarray:
        return np.tile(self.samples, count)


def papr_db(samples) -> float:
    """Peak-to-average power ratio of a complex sequence in dB.

    >>> round(papr_db([1, 0, 0, 0]), 2)
    6.02
    """
    s = np.asarray(samples)
    if s.size == 0:
        raise ValueError("PAPR of an empty sequence is undefined")
    p = np.abs(s) ** 2
    mean = p.mean()
    if mean == 0:
        raise ValueError("PAPR undefined: sequence has zero power")
    return float(max(10 * np.log10(p.max() / mean), 0.0))


def _tone_envelope(phases: np.ndarray, first_bin: int, n_fft: int) -> np.ndarray:
    spectrum = np.zeros(n_fft, dtype=complex)
    spectrum[(first_bin + np.arange(phases.size)) % n_fft] = np.exp(1j * phases)
    return np.fft.ifft(spectrum) * n_fft


def synthesize(spec: MultitoneSpec, oversample: int = 1) -> MultitoneWaveform:
    """Sample one period of the multi-tone waveform.

    Every tone has unit amplitude; the result is then scaled so its peak
    magnitude is 1. ``oversample`` multiplies the sample rate, which is
    useful to catch peaks that fall between samples.
    """
    n_fft = spec.samples_per_period * int(oversample)
    s = _tone_envelope(spec.phases_rad, spec.first_bin, n_fft)
    s = s / np.abs(s).max()
    return MultitoneWaveform(spec, s, papr_db(s))


def oversampled_papr_db(spec: MultitoneSpec, factor: int = 4) -> float:
    """PAPR of the waveform evaluated on a ``factor``-times finer time grid."""
    return papr_db(_tone_envelope(spec.phases_rad, 0, spec.samples_per_period * factor))


def chirp_phases(num_tones: int) -> np.ndarray:
    """Quadratic tone phases ``pi*k**2/N``; a good low-crest starting point."""
    k = np.arange(num_tones)
    return np.pi * k ** 2 / num_tones


def optimize_phases(spec: MultitoneSpec, target_papr_db: float = 0.0, max_iters: int = 2000,
                    seed: int = 0, oversample: int = 4, tol_db: float = 1e-3,
                    patience: int = 25, return_history: bool = False):
    """Lower the crest factor by iterative clipping and filtering.

    Each iteration clips the oversampled envelope to its RMS level and
    projects the clipped signal back onto the tone grid, keeping the new
    phases and discarding the magnitude change. The best phases seen so far
    are kept, so the returned PAPR never exceeds the input PAPR.

    The iteration starts from whichever of the input phases and the
    quadratic (chirp) phases has the lower PAPR, plus a small seeded dither
    that breaks symmetric fixed points such as all-zero phases. It stops at
    ``target_papr_db``, after ``max_iters`` iterations, or when the best PAPR
    improved by less than ``tol_db`` over the last ``patience`` iterations.

    Returns
    -------
    MultitoneSpec
        Copy of the input grid with optimized phases. With ``return_history=True``
        a tuple of that copy and the best-so-far PAPR after every iteration (dB).
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n_fft = spec.samples_per_period * oversample
    n = spec.num_tones
    input_papr = oversampled_papr_db(spec, oversample)
    best_phases, best = spec.phases_rad.copy(), input_papr
    history = [best]

    if n == 1 or best <= target_papr_db:
        out = spec
        return (out, np.array(history)) if return_history else out

    start = spec.phases_rad
    chirp = chirp_phases(n)
    if papr_db(_tone_envelope(chirp, 0, n_fft)) < input_papr:
        start = chirp
    rng = np.random.default_rng(seed)
    phases = start + 1e-2 * rng.standard_normal(n)

    last_gain_iter, last_gain_level = 0, best
    for it in range(1, max_iters + 1):
        s = _tone_envelope(phases, 0, n_fft)
        mag = np.abs(s)
        level = np.sqrt(np.mean(mag ** 2))
        clipped = np.where(mag > level, level * s / np.maximum(mag, 1e-300), s)
        phases = np.angle(np.fft.fft(clipped)[:n])
        current = papr_db(_tone_envelope(phases, 0, n_fft))
        if current < best:
            best, best_phases = current, phases.copy()
        history.append(best)
        if best <= target_papr_db:
            break
        if last_gain_level - best >= tol_db:
            last_gain_iter, last_gain_level = it, best
        elif it - last_gain_iter >= patience:
            break

    logger.debug("phase optimization: %.3f dB -> %.3f dB in %d iterations",
                 input_papr, best, len(history) - 1)
    out = spec if best >= input_papr else spec.with_phases(best_phases)
    return (out, np.array(history)) if return_history else out


@dataclass(frozen=True, eq=False)
class ZadoffChuWaveform:
    """Band-limited, oversampled Zadoff-Chu reference signal."""

    length: int
    root: int
    tone_spacing_hz: float
    sample_rate_hz: float
    samples: np.ndarray = field(repr=False)
    papr_db: float


def zadoff_chu(length: int, root: int) -> np.ndarray:
    """Root Zadoff-Chu sequence of odd or even length."""
    if length < 1:
        raise ValueError("length must be positive")
    if not 0 < root < length or math.gcd(root, length) != 1:
        raise ValueError(f"root {root} must be in (0, {length}) and coprime with the length")
    n = np.arange(length)
    if length % 2:
        return np.exp(-1j * np.pi * root * n * (n + 1) / length)
    return np.exp(-1j * np.pi * root * n ** 2 / length)


def zadoff_chu_baseline(length: int, root: int, sample_rate_hz: float, bandwidth_hz: float,
                        oversample: int = 4) -> ZadoffChuWaveform:
    """Zadoff-Chu symbols placed one per tone, band-limited and oversampled.

    The tone spacing is ``bandwidth_hz / length`` so the symbols exactly fill
    the band. The periodic signal is evaluated on
    ``round(oversample * sample_rate_hz / spacing)`` points per period, which
    is the ideal low-pass interpolation of the chip sequence. With
    ``sample_rate_hz == bandwidth_hz`` and ``oversample == 1`` this is the
    critically sampled, constant-envelope sequence.
    """
    symbols = zadoff_chu(length, root)
    spacing = bandwidth_hz / length
    n_fft = int(round(oversample * sample_rate_hz / spacing))
    if n_fft < length:
        raise ValueError("sample rate too low for the requested bandwidth")
    spectrum = np.zeros(n_fft, dtype=complex)
    spectrum[:length] = symbols
    s = np.fft.ifft(spectrum) * n_fft
    s = s / np.abs(s).max()
    return ZadoffChuWaveform(length, root, spacing, sample_rate_hz * oversample, s, papr_db(s))
