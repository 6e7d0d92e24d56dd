"""
Post-processing of sweep recordings.

From captures to impulse responses and directional PDPs, then the derived
views (omni PDP, PADP, PAS), MPC extraction with sidelobe-ghost rejection,
delay and angular statistics, delay-Doppler spectra, path-loss fits and
beam-tracking comparisons. PDP values are absolute received power in mW per
delay bin, so summing a directional PDP over delay gives the power received
through that beam pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from mmsounder.calibration import CalibrationResponse, apply_calibration
from mmsounder.scene import free_space_path_loss_db
from mmsounder.sounder import SweepRecording, capture_periods, transmitted_tones

WINDOWS = ("hanning", "none")


def _window(name: str, n: int) -> np.ndarray:
    if name == "hanning":
        return get_window("hann", n, fftbins=True)
    if name == "none":
        return np.ones(n)
    raise ValueError(f"window must be one of {WINDOWS}")


def to_db(power_mw):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(power_mw)


# ---------------------------------------------------------------- impulse responses


def tone_estimates(recording: SweepRecording, snapshot: int,
                   calibration: CalibrationResponse | None) -> np.ndarray:
    """Channel transfer function per beam pair, shape (pairs, num_tones).

    Repetitions are averaged coherently, the tone bins are divided by the
    transmitted tones and the AGC gain, then by the calibration response.
    """
    if calibration is None:
        raise ValueError("a calibration response is required (use identity_response for none)")
    h = recording.header
    spec = h.waveform
    periods = capture_periods(recording, snapshot).astype(complex)
    avg = periods.mean(axis=1)
    y = np.fft.fft(avg, axis=-1)[:, spec.tone_bins] / spec.samples_per_period
    tx = transmitted_tones(spec, h.receiver.awg_bits, h.tx_power_dbm)
    amp = 10 ** (recording.snapshots[snapshot].gain_db / 20)
    return apply_calibration(y / (tx * amp), calibration, spec.tone_frequencies_hz)


def impulse_responses(recording: SweepRecording, calibration: CalibrationResponse | None,
                      window: str = "hanning", snapshots=None) -> np.ndarray:
    """Complex impulse responses, shape (snapshots, n_tx, n_rx, num_tones).

    Scaled so ``|h|**2`` is absolute power per delay bin (mW).
    """
    h = recording.header
    n = h.waveform.num_tones
    w = _window(window, n)
    scale = math.sqrt(10 ** (h.tx_power_dbm / 10) / np.mean(w ** 2))
    idx = range(recording.num_snapshots) if snapshots is None else list(snapshots)
    n_tx, n_rx = len(h.schedule.tx_beams), len(h.schedule.rx_beams)
    out = np.empty((len(idx), n_tx, n_rx, n), dtype=complex)
    for i, k in enumerate(idx):
        est = tone_estimates(recording, k, calibration)
        out[i] = (np.fft.ifft(est * w, axis=-1) * scale).reshape(n_tx, n_rx, n)
    return out


@dataclass(frozen=True, eq=False)
class DirectionalPDP:
    """Power per (TX beam, RX beam, delay bin) in mW for one snapshot."""

    power: np.ndarray = field(repr=False)
    delay_bin_s: float
    tx_azimuths_deg: np.ndarray = field(repr=False)
    rx_azimuths_deg: np.ndarray = field(repr=False)
    snapshot: int = 0
    time_s: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.power, dtype=float)
        if p.ndim != 3 or np.any(p < 0):
            raise ValueError("PDP tensor must be 3-D and non-negative")
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "tx_azimuths_deg", np.asarray(self.tx_azimuths_deg, float))
        object.__setattr__(self, "rx_azimuths_deg", np.asarray(self.rx_azimuths_deg, float))

    @property
    def num_delays(self) -> int:
        return self.power.shape[2]

    @property
    def delays_s(self) -> np.ndarray:
        return np.arange(self.num_delays) * self.delay_bin_s


def directional_pdp(recording: SweepRecording, calibration: CalibrationResponse | None,
                    window: str = "hanning", snapshots=None) -> list:
    """One :class:`DirectionalPDP` per requested snapshot."""
    h = recording.header
    idx = list(range(recording.num_snapshots) if snapshots is None else snapshots)
    cir = impulse_responses(recording, calibration, window, idx)
    bin_s = 1.0 / h.waveform.bandwidth_hz
    return [DirectionalPDP(np.abs(c) ** 2, bin_s, h.tx_beam_azimuths_deg, h.rx_beam_azimuths_deg,
                           k, recording.snapshots[k].start_time_s)
            for k, c in zip(idx, cir)]


def _tensor(pdp) -> np.ndarray:
    return pdp.power if isinstance(pdp, DirectionalPDP) else np.asarray(pdp, dtype=float)


def omni_pdp(pdp, method: str = "max") -> np.ndarray:
    """Omnidirectional PDP: max (default) or sum over both beam axes."""
    p = _tensor(pdp)
    if method == "max":
        return p.max(axis=(0, 1))
    if method == "sum":
        return p.sum(axis=(0, 1))
    raise ValueError("method must be 'max' or 'sum'")


def padp(pdp, side: str) -> np.ndarray:
    """Power angular-delay profile (beams, delay) for ``side`` in {'tx', 'rx'}."""
    p = _tensor(pdp)
    side = side.lower()
    if side == "tx":
        return p.max(axis=1)
    if side == "rx":
        return p.max(axis=0)
    raise ValueError("side must be 'tx' or 'rx'")


def pas(pdp) -> np.ndarray:
    """Angular power spectrum (n_tx, n_rx): PDP summed over delay."""
    return _tensor(pdp).sum(axis=2)


def noise_floor_db(pdp, tail_fraction: float = 0.1) -> float:
    """Mean noise power per PDP bin (dB), from the tail of the delay axis.

    The median over the last ``tail_fraction`` of delay bins of every beam
    pair is divided by ln 2, which is the mean of an exponential (noise-only)
    power distribution given its median.
    """
    p = _tensor(pdp)
    n = p.shape[-1]
    tail = p[..., n - max(1, int(round(n * tail_fraction))):]
    return float(to_db(np.median(tail) / math.log(2)))


# ---------------------------------------------------------------- MPC extraction


@dataclass(frozen=True)
class MPCEstimate:
    delay_bin: int
    tx_beam: int
    rx_beam: int
    power_db: float
    snapshot: int = 0
    delay_s: float = float("nan")
    tx_azimuth_deg: float = float("nan")
    rx_azimuth_deg: float = float("nan")


def peaks_3d(power: np.ndarray, threshold: float = -np.inf) -> np.ndarray:
    """Indices (delay, tx, rx) of 3-D local maxima above ``threshold``.

    A cell is a peak if it is at least as large as all 26 neighbours and
    strictly larger than every neighbour that precedes it in lexicographic
    (delay, tx, rx) order, so a plateau yields only its first cell. Axes are
    not wrapped. ``power`` is indexed (tx, rx, delay).
    """
    p = np.moveaxis(np.asarray(power, dtype=float), 2, 0)
    padded = np.pad(p, 1, constant_values=-np.inf)
    core = padded[1:-1, 1:-1, 1:-1]
    is_peak = core > threshold
    shape = p.shape
    for dd in (-1, 0, 1):
        for dt in (-1, 0, 1):
            for dr in (-1, 0, 1):
                if dd == dt == dr == 0:
                    continue
                nb = padded[1 + dd:1 + dd + shape[0], 1 + dt:1 + dt + shape[1], 1 + dr:1 + dr + shape[2]]
                if (dd, dt, dr) > (0, 0, 0):
                    is_peak &= core >= nb
                else:
                    is_peak &= core > nb
    return np.argwhere(is_peak)


def select_mpcs(peaks: list) -> list:
    """Apply the per-delay-bin acceptance rules to candidate peaks.

    ``peaks`` holds (delay_bin, tx, rx, power_linear) tuples. In each delay
    bin the strongest peak is kept, any peak within 10 dB of it is kept, and
    a peak within 20 dB is kept only if both its TX and RX beams differ from
    the strongest one.
    """
    by_delay = {}
    for pk in peaks:
        by_delay.setdefault(pk[0], []).append(pk)
    accepted = []
    for d in sorted(by_delay):
        group = sorted(by_delay[d], key=lambda q: (-q[3], q[1], q[2]))
        strongest = group[0]
        p_max = strongest[3]
        accepted.append(strongest)
        for q in group[1:]:
            if q[3] > p_max / 10:
                accepted.append(q)
            elif q[3] > p_max / 100 and q[1] != strongest[1] and q[2] != strongest[2]:
                accepted.append(q)
    return accepted


def extract_mpcs(pdp, noise_floor: float, threshold_db: float = 6.0) -> list:
    """MPCs of one directional PDP; the detection threshold is noise + ``threshold_db``."""
    p = _tensor(pdp)
    th = 10 ** ((noise_floor + threshold_db) / 10)
    cand = [(int(d), int(t), int(r), float(p[t, r, d])) for d, t, r in peaks_3d(p, th)]
    meta = pdp if isinstance(pdp, DirectionalPDP) else None
    out = []
    for d, t, r, v in select_mpcs(cand):
        if meta is None:
            out.append(MPCEstimate(d, t, r, float(to_db(v))))
        else:
            out.append(MPCEstimate(d, t, r, float(to_db(v)), meta.snapshot, d * meta.delay_bin_s,
                                   float(meta.tx_azimuths_deg[t]), float(meta.rx_azimuths_deg[r])))
    return out


# ---------------------------------------------------------------- statistics


def rms_delay_spread(pdp, delays_s, noise_floor: float | None = None,
                     threshold_db: float = 6.0) -> float:
    """Root-mean-square delay spread of a (thresholded) power delay profile.

    With ``noise_floor`` (dB) only bins above ``noise_floor + threshold_db``
    contribute.
    """
    p = np.asarray(pdp, dtype=float)
    tau = np.asarray(delays_s, dtype=float)
    if noise_floor is not None:
        p = np.where(p > 10 ** ((noise_floor + threshold_db) / 10), p, 0.0)
    total = p.sum()
    if not total > 0:
        raise ValueError("no power above the threshold; delay spread undefined")
    mean = (p * tau).sum() / total
    return float(np.sqrt(max((p * (tau - mean) ** 2).sum() / total, 0.0)))


@dataclass(frozen=True)
class AngularStats:
    mean_angle_deg: float
    angular_spread_deg: float


def angular_stats(weights, angles_deg, method: str = "circular") -> AngularStats:
    """Power-weighted mean direction and angular spread.

    The mean is the argument of the power-weighted sum of unit phasors. The
    default spread is the RMS of the wrapped deviations from that mean, so
    equal power at +-10 deg gives exactly 10 deg. ``method='fleury'`` returns
    ``sqrt(sum w |e^{j phi} - mu|^2 / sum w)`` converted to degrees, where
    ``mu`` is the mean phasor; it is the chord-based variant and is slightly
    smaller than the arc-based default.
    """
    w = np.asarray(weights, dtype=float).ravel()
    phi = np.radians(np.asarray(angles_deg, dtype=float).ravel())
    if w.shape != phi.shape:
        raise ValueError("one weight per angle is required")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("total power is zero; angular statistics undefined")
    mu = (w * np.exp(1j * phi)).sum() / total
    mean = np.angle(mu)
    if method == "circular":
        dev = np.angle(np.exp(1j * (phi - mean)))
        spread = np.sqrt((w * dev ** 2).sum() / total)
    elif method == "fleury":
        spread = np.sqrt((w * np.abs(np.exp(1j * phi) - mu) ** 2).sum() / total)
    else:
        raise ValueError("method must be 'circular' or 'fleury'")
    return AngularStats(float(np.degrees(mean)), float(np.degrees(spread)))


@dataclass(frozen=True, eq=False)
class DelayDopplerSpectrum:
    """Power over delay x Doppler; the Doppler axis is symmetric about 0.

    For an even number of snapshots the Nyquist column appears at both ends.
    """

    power: np.ndarray = field(repr=False)
    delays_s: np.ndarray = field(repr=False)
    doppler_hz: np.ndarray = field(repr=False)

    @property
    def doppler_resolution_hz(self) -> float:
        return float(self.doppler_hz[1] - self.doppler_hz[0])

    def peak(self) -> tuple:
        """(delay_s, doppler_hz, power) of the strongest cell."""
        d, v = np.unravel_index(np.argmax(self.power), self.power.shape)
        return float(self.delays_s[d]), float(self.doppler_hz[v]), float(self.power[d, v])


def delay_doppler(cirs, times_s, selection="max", window: str = "none",
                  delay_bin_s: float = 1.0) -> DelayDopplerSpectrum:
    """Delay-Doppler spectrum of one burst.

    Parameters
    ----------
    cirs : ndarray
        Complex impulse responses (snapshots, n_tx, n_rx, delays), e.g. from
        :func:`impulse_responses`.
    times_s : array_like
        Snapshot start times; must be uniformly spaced.
    selection : 'max' or (tx, rx)
        A fixed beam pair, or the per-cell maximum over all pairs.
    window : {'none', 'hanning'}
        Taper applied across snapshots.
    """
    h = np.asarray(cirs)
    t = np.asarray(times_s, dtype=float)
    if h.ndim != 4 or h.shape[0] != t.size:
        raise ValueError("cirs must be (snapshots, n_tx, n_rx, delays) with one time per snapshot")
    s = t.size
    if s < 2:
        raise ValueError("need at least two snapshots")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
        raise ValueError("snapshot timestamps are not uniformly spaced")
    if selection != "max":
        tx, rx = selection
        h = h[:, tx:tx + 1, rx:rx + 1]
    w = _window(window, s)[:, None, None, None]
    spec = np.fft.fftshift(np.fft.fft(h * w, axis=0), axes=0) / np.sqrt(np.sum(w ** 2))
    power = (np.abs(spec) ** 2).max(axis=(1, 2)).T
    freqs = np.fft.fftshift(np.fft.fftfreq(s, dt[0]))
    if s % 2 == 0:
        power = np.concatenate([power, power[:, :1]], axis=1)
        freqs = np.append(freqs, -freqs[0])
    return DelayDopplerSpectrum(power, np.arange(h.shape[-1]) * delay_bin_s, freqs)


# ---------------------------------------------------------------- path loss


@dataclass(frozen=True, eq=False)
class PathLossFit:
    """Least-squares path-loss model in dB.

    Close-in: ``PL = FSPL(d0) + 10 n log10(d/d0)`` with ``params = {'n'}``.
    Alpha-beta-gamma: ``PL = 10 alpha log10(d) + beta + 10 gamma log10(f/1GHz)``;
    from a single carrier the frequency term is not identifiable, so gamma
    is fixed at 0 and beta absorbs it.
    """

    model: str
    params: dict
    shadowing_sigma_db: float
    residuals_db: np.ndarray = field(repr=False)


def fit_path_loss(distances_m, path_loss_db, model: str = "close-in",
                  carrier_hz: float = 27.85e9, d0_m: float = 1.0) -> PathLossFit:
    d = np.asarray(distances_m, dtype=float)
    pl = np.asarray(path_loss_db, dtype=float)
    if d.shape != pl.shape or d.ndim != 1:
        raise ValueError("need matching 1-D distance and path-loss arrays")
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    distinct = np.unique(d).size
    x = 10 * np.log10(d / d0_m)
    if model == "close-in":
        if distinct < 2:
            raise ValueError("close-in fit needs at least two distinct distances")
        anchor = free_space_path_loss_db(d0_m, carrier_hz)
        n = float(np.sum(x * (pl - anchor)) / np.sum(x * x))
        resid = pl - (anchor + n * x)
        params = {"n": n, "fspl_d0_db": anchor, "d0_m": d0_m}
    elif model in ("abg", "alpha-beta-gamma"):
        if distinct < 3:
            raise ValueError("alpha-beta-gamma fit needs at least three distinct distances")
        a = np.column_stack([10 * np.log10(d), np.ones_like(d)])
        (alpha, beta), *_ = np.linalg.lstsq(a, pl, rcond=None)
        resid = pl - a @ np.array([alpha, beta])
        model = "alpha-beta-gamma"
        params = {"alpha": float(alpha), "beta": float(beta), "gamma": 0.0}
    else:
        raise ValueError("model must be 'close-in' or 'alpha-beta-gamma'")
    return PathLossFit(model, params, float(np.sqrt(np.mean(resid ** 2))), resid)


# ---------------------------------------------------------------- beam tracking


@dataclass(frozen=True, eq=False)
class BeamTracking:
    fixed_db: np.ndarray = field(repr=False)
    instantaneous_db: np.ndarray = field(repr=False)
    fixed_pair: tuple = (0, 0)

    @property
    def gain_db(self) -> np.ndarray:
        return self.instantaneous_db - self.fixed_db


def beam_tracking_gain(pas_series) -> BeamTracking:
    """Compare the best pair per snapshot with the pair best on average.

    ``pas_series`` has shape (snapshots, n_tx, n_rx) in linear power.
    """
    p = np.asarray(pas_series, dtype=float)
    if p.ndim != 3 or p.shape[0] < 1:
        raise ValueError("expected a (snapshots, n_tx, n_rx) PAS series")
    fixed = np.unravel_index(np.argmax(p.mean(axis=0)), p.shape[1:])
    fixed_db = to_db(p[:, fixed[0], fixed[1]])
    inst_db = to_db(p.reshape(p.shape[0], -1).max(axis=1))
    return BeamTracking(fixed_db, inst_db, (int(fixed[0]), int(fixed[1])))
