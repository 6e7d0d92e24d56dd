"""
Sweep scheduling, link budget, impairments and the capture simulator.

Signals are complex baseband in units of sqrt(mW): ``|x|**2`` is power in mW.
The transmitted tones carry the conducted TX power, ``tx_eirp_dbm`` minus
the peak beam gain of the TX codebook. Every capture is generated as
received tones -> time samples, then thermal noise, AGC gain and an ADC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from mmsounder._hashing import content_hash
from mmsounder.beamforming import BeamCodebook
from mmsounder.waveform import MultitoneSpec, synthesize

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
THERMAL_NOISE_DBM_HZ = -174.0


def _ns(seconds: float) -> int:
    ns = seconds * 1e9
    if abs(ns - round(ns)) > 1e-6:
        raise ValueError(f"{seconds} s is not a whole number of nanoseconds")
    return int(round(ns))


@dataclass(frozen=True)
class SweepSchedule:
    """Beam-pair sweep timing.

    Within a snapshot the pairs run TX-major (all RX beams for the first TX
    beam, then the next TX beam). Each pair takes ``repetitions_per_pair``
    slots of one waveform period plus one guard interval. Snapshots follow
    back to back inside a burst; bursts start every ``burst_period_s``.
    Times are kept in integer nanoseconds so the ledger is exact.
    """

    tx_beams: tuple
    rx_beams: tuple
    waveform_duration_s: float = 2e-6
    guard_s: float = 2e-6
    repetitions_per_pair: int = 1
    snapshots_per_burst: int = 20
    burst_period_s: float = 60e-3
    num_bursts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tx_beams", tuple(int(b) for b in self.tx_beams))
        object.__setattr__(self, "rx_beams", tuple(int(b) for b in self.rx_beams))
        if not self.tx_beams or not self.rx_beams:
            raise ValueError("schedule needs at least one TX and one RX beam")
        if min(self.repetitions_per_pair, self.snapshots_per_burst, self.num_bursts) < 1:
            raise ValueError("repetitions, snapshots per burst and bursts must be >= 1")
        if self.waveform_duration_s <= 0 or self.guard_s < 0:
            raise ValueError("waveform duration must be positive and guard non-negative")
        if self.snapshots_per_burst * self.snapshot_time_ns > _ns(self.burst_period_s):
            raise ValueError(
                f"{self.snapshots_per_burst} snapshots of {self.snapshot_time_ns / 1e6:g} ms "
                f"do not fit in a {self.burst_period_s * 1e3:g} ms burst")

    @classmethod
    def dynamic(cls, num_bursts: int = 1) -> "SweepSchedule":
        """10x10 pairs (every other beam of a 19-beam codebook), one repetition."""
        beams = tuple(range(0, 19, 2))
        return cls(beams, beams, repetitions_per_pair=1, snapshots_per_burst=20,
                   num_bursts=num_bursts)

    @classmethod
    def static(cls, num_bursts: int = 1) -> "SweepSchedule":
        """Full 19x19 sweep with 10 repetitions per pair; one sweep per burst."""
        beams = tuple(range(19))
        return cls(beams, beams, repetitions_per_pair=10, snapshots_per_burst=1,
                   num_bursts=num_bursts)

    @classmethod
    def preset(cls, name: str, num_bursts: int = 1) -> "SweepSchedule":
        presets = {"dynamic-10x10": cls.dynamic, "static-19x19x10": cls.static}
        if name not in presets:
            raise ValueError(f"unknown schedule preset {name!r}; choose from {sorted(presets)}")
        return presets[name](num_bursts)

    @property
    def num_pairs(self) -> int:
        return len(self.tx_beams) * len(self.rx_beams)

    @property
    def num_snapshots(self) -> int:
        return self.snapshots_per_burst * self.num_bursts

    @property
    def slot_time_ns(self) -> int:
        return _ns(self.waveform_duration_s) + _ns(self.guard_s)

    @property
    def pair_time_ns(self) -> int:
        return self.repetitions_per_pair * self.slot_time_ns

    @property
    def snapshot_time_ns(self) -> int:
        return self.num_pairs * self.pair_time_ns

    @property
    def pair_time_s(self) -> float:
        return self.pair_time_ns / 1e9

    @property
    def snapshot_time_s(self) -> float:
        return self.snapshot_time_ns / 1e9

    def pairs(self) -> list:
        """(tx_beam, rx_beam) codebook indices in sweep order."""
        return [(t, r) for t in self.tx_beams for r in self.rx_beams]

    def snapshot_start_ns(self, snapshot: int) -> int:
        burst, k = divmod(snapshot, self.snapshots_per_burst)
        return burst * _ns(self.burst_period_s) + k * self.snapshot_time_ns

    def capture_times_s(self, snapshot: int) -> np.ndarray:
        """Start time of every repetition, shape (num_pairs, repetitions)."""
        base = self.snapshot_start_ns(snapshot)
        pair = np.arange(self.num_pairs)[:, None] * self.pair_time_ns
        rep = np.arange(self.repetitions_per_pair)[None, :] * self.slot_time_ns
        return (base + pair + rep) / 1e9

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tx_beams"], d["rx_beams"] = list(self.tx_beams), list(self.rx_beams)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSchedule":
        return cls(**d)


CLOCK_MODES = ("shared", "gps_disciplined", "free_running")


@dataclass(frozen=True)
class ClockModel:
    """Phase drift between the TX and RX references.

    ``drift = 360*f_c*fractional_offset*t + lo_phase_deg + jitter (+ walk)``,
    where jitter is drawn once per beam-pair capture with standard deviation
    ``phase_noise_std_deg`` and the random walk (gps_disciplined only)
    grows as ``random_walk_coeff * sqrt(t)`` degrees.
    """

    mode: str = "shared"
    fractional_offset: float = 0.0
    phase_noise_std_deg: float = 0.0
    random_walk_coeff: float = 0.0
    seed: int = 0
    lo_phase_deg: float = 0.0

    def __post_init__(self):
        if self.mode not in CLOCK_MODES:
            raise ValueError(f"clock mode must be one of {CLOCK_MODES}")
        if self.mode == "shared" and self.fractional_offset != 0:
            raise ValueError("a shared reference has no frequency offset")
        if self.phase_noise_std_deg < 0 or self.random_walk_coeff < 0:
            raise ValueError("noise parameters must be non-negative")

    def drift_deg(self, times_s, carrier_hz: float) -> np.ndarray:
        """Drift phase for capture times of shape (captures, repetitions).

        Times are expected in sweep order (row-major nondecreasing).
        """
        t = np.atleast_2d(np.asarray(times_s, dtype=float))
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xC10C]))
        phase = 360.0 * carrier_hz * self.fractional_offset * t + self.lo_phase_deg
        if self.phase_noise_std_deg > 0:
            phase = phase + self.phase_noise_std_deg * rng.standard_normal((t.shape[0], 1))
        if self.mode == "gps_disciplined" and self.random_walk_coeff > 0:
            flat = t.ravel()
            dt = np.diff(flat, prepend=flat[0])
            steps = self.random_walk_coeff * np.sqrt(np.maximum(dt, 0.0)) * rng.standard_normal(flat.size)
            phase = phase + np.cumsum(steps).reshape(t.shape)
        return phase

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReceiverConfig:
    noise_figure_db: float = 5.0
    bandwidth_hz: float = 400e6
    adc_bits: int = 10
    agc_range_db: float = 60.0
    agc_step_db: float = 0.5
    saturation_dbm: float = -6.0
    awg_bits: int = 15
    agc_backoff_db: float = 3.0
    add_noise: bool = True

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.agc_step_db <= 0 or self.agc_range_db < 0:
            raise ValueError("bandwidth and AGC step must be positive, AGC range non-negative")
        if self.adc_bits < 1 or self.awg_bits < 1:
            raise ValueError("quantizer resolutions must be >= 1 bit")

    @property
    def sensitivity_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + self.noise_figure_db + 10 * math.log10(self.bandwidth_hz)

    def noise_variance_mw(self, sample_rate_hz: float) -> float:
        """Per-sample complex noise power when digitizing at ``sample_rate_hz``."""
        return 10 ** ((THERMAL_NOISE_DBM_HZ + self.noise_figure_db) / 10) * sample_rate_hz

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinkBudget:
    sensitivity_dbm: float
    eis_dbm: float
    max_path_loss_db: float
    dynamic_range_db: float


def link_budget(rx: ReceiverConfig, tx_eirp_dbm: float, rx_beam_gain_dbi: float) -> LinkBudget:
    """Sensitivity, equivalent isotropic sensitivity and measurable range."""
    sens = rx.sensitivity_dbm
    eis = sens - rx_beam_gain_dbi
    return LinkBudget(sens, eis, tx_eirp_dbm - eis, rx.saturation_dbm - sens)


def agc_select(powers_dbm, rx: ReceiverConfig) -> float:
    """Largest gain step that keeps the strongest pair at least the backoff below saturation."""
    p = np.asarray(powers_dbm, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one beam-pair power")
    headroom = rx.saturation_dbm - rx.agc_backoff_db - float(np.max(p))
    if not np.isfinite(headroom):
        return float(rx.agc_range_db) if headroom > 0 else 0.0
    steps = math.floor(headroom / rx.agc_step_db + 1e-9)
    return float(np.clip(steps * rx.agc_step_db, 0.0, rx.agc_range_db))


def quantize_midrise(x, bits: int, full_scale: float):
    """Uniform mid-rise quantizer applied to I and Q separately.

    Returns the quantized signal and whether any rail exceeded full scale.
    """
    x = np.asarray(x)
    step = 2.0 * full_scale / 2 ** bits
    top = full_scale - step / 2

    def q(v):
        return np.clip(step * (np.floor(v / step) + 0.5), -top, top)

    clipped = bool(np.any(np.abs(x.real) > full_scale) or np.any(np.abs(x.imag) > full_scale))
    return q(x.real) + 1j * q(x.imag), clipped


def transmitted_tones(spec: MultitoneSpec, awg_bits: int, tx_power_dbm: float) -> np.ndarray:
    """Complex tone values of the AWG output, scaled to the conducted TX power.

    The waveform is quantized once at ``awg_bits`` on each rail; the sum of
    tone powers equals ``tx_power_dbm``.
    """
    samples, _ = quantize_midrise(synthesize(spec).samples, awg_bits, 1.0)
    tones = np.fft.fft(samples)[spec.tone_bins] / samples.size
    scale = math.sqrt(10 ** (tx_power_dbm / 10) / np.sum(np.abs(tones) ** 2))
    return tones * scale


@dataclass(frozen=True, eq=False)
class RecordingHeader:
    carrier_hz: float
    schedule: SweepSchedule
    waveform: MultitoneSpec
    receiver: ReceiverConfig
    clock: ClockModel
    seed: int
    tx_power_dbm: float
    tx_codebook_hash: str = ""
    rx_codebook_hash: str = ""
    tx_beam_azimuths_deg: tuple = ()
    rx_beam_azimuths_deg: tuple = ()
    scene_hash: str = ""
    scene_name: str = ""
    snapshot_count: int = 0
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        w = self.waveform
        return {
            "version": self.version, "carrier_hz": self.carrier_hz,
            "schedule": self.schedule.to_dict(),
            "timing": {"pair_time_s": self.schedule.pair_time_s,
                       "snapshot_time_s": self.schedule.snapshot_time_s},
            "waveform": {"num_tones": w.num_tones, "tone_spacing_hz": w.tone_spacing_hz,
                         "first_tone_hz": w.first_tone_hz, "sample_rate_hz": w.sample_rate_hz,
                         "phases_rad": w.phases_rad.tolist()},
            "receiver": self.receiver.to_dict(), "clock": self.clock.to_dict(),
            "seed": self.seed, "tx_power_dbm": self.tx_power_dbm,
            "tx_codebook_hash": self.tx_codebook_hash, "rx_codebook_hash": self.rx_codebook_hash,
            "tx_beam_azimuths_deg": list(self.tx_beam_azimuths_deg),
            "rx_beam_azimuths_deg": list(self.rx_beam_azimuths_deg),
            "scene_hash": self.scene_hash, "scene_name": self.scene_name,
            "snapshot_count": self.snapshot_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecordingHeader":
        return cls(
            carrier_hz=d["carrier_hz"], schedule=SweepSchedule.from_dict(d["schedule"]),
            waveform=MultitoneSpec(**d["waveform"]), receiver=ReceiverConfig(**d["receiver"]),
            clock=ClockModel(**d["clock"]), seed=d["seed"], tx_power_dbm=d["tx_power_dbm"],
            tx_codebook_hash=d["tx_codebook_hash"], rx_codebook_hash=d["rx_codebook_hash"],
            tx_beam_azimuths_deg=tuple(d["tx_beam_azimuths_deg"]),
            rx_beam_azimuths_deg=tuple(d["rx_beam_azimuths_deg"]),
            scene_hash=d["scene_hash"], scene_name=d["scene_name"],
            snapshot_count=d["snapshot_count"], version=d["version"])

    @property
    def samples_per_capture(self) -> int:
        return self.schedule.repetitions_per_pair * self.waveform.samples_per_period


@dataclass(eq=False)
class Snapshot:
    """All beam-pair captures of one sweep.

    ``samples`` has shape (num_pairs, repetitions * samples_per_period);
    ``capture_times_s`` holds the start time of every pair.
    """

    index: int
    gain_db: float
    capture_times_s: np.ndarray
    samples: np.ndarray
    clipped: bool = False
    mpcs: list = field(default_factory=list)

    @property
    def start_time_s(self) -> float:
        return float(self.capture_times_s[0])


@dataclass(eq=False)
class SweepRecording:
    header: RecordingHeader
    snapshots: list = field(default_factory=list)

    @property
    def num_snapshots(self) -> int:
        return len(self.snapshots)

    @property
    def snapshot_times_s(self) -> np.ndarray:
        return np.array([s.start_time_s for s in self.snapshots])

    @property
    def gains_db(self) -> np.ndarray:
        return np.array([s.gain_db for s in self.snapshots])

    def clipped_snapshots(self) -> list:
        return [s.index for s in self.snapshots if s.clipped]


def codebook_hash(codebook: BeamCodebook) -> str:
    return content_hash(codebook.to_dict())


def _capture_rng(seed: int, snapshot: int, pair: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, snapshot, pair]))


def _channel_tones(mpcs, codebook_tx, codebook_rx, tx_beam, rx_beam, offsets_hz) -> np.ndarray:
    if not mpcs:
        return np.zeros(offsets_hz.size, dtype=complex)
    dod_az = np.array([m.dod_azimuth_deg for m in mpcs])
    dod_el = np.array([m.dod_elevation_deg for m in mpcs])
    doa_az = np.array([m.doa_azimuth_deg for m in mpcs])
    doa_el = np.array([m.doa_elevation_deg for m in mpcs])
    g = np.array([m.complex_gain for m in mpcs])
    delays = np.array([m.delay_s for m in mpcs])
    amp = (codebook_tx.field(dod_az, dod_el, beams=[tx_beam])[0]
           * codebook_rx.field(doa_az, doa_el, beams=[rx_beam])[0] * g)
    return np.exp(-2j * np.pi * np.outer(offsets_hz, delays)) @ amp


def iter_snapshots(scene, waveform: MultitoneSpec, codebook_tx: BeamCodebook,
                   codebook_rx: BeamCodebook, schedule: SweepSchedule, clock: ClockModel,
                   receiver: ReceiverConfig, tx_power_dbm: float, seed: int = 0,
                   system_response=None, start_time_s: float = 0.0, carrier_hz: float = 27.85e9):
    """Yield one :class:`Snapshot` at a time; see :func:`run_sweep`."""
    tx_tones = transmitted_tones(waveform, receiver.awg_bits, tx_power_dbm)
    offsets = waveform.tone_offsets_hz
    n_fft = waveform.samples_per_period
    bins = waveform.tone_bins
    reps = schedule.repetitions_per_pair
    noise_var = receiver.noise_variance_mw(waveform.sample_rate_hz)
    full_scale = math.sqrt(10 ** (receiver.saturation_dbm / 10))
    pairs = schedule.pairs()
    all_times = np.stack([schedule.capture_times_s(k) for k in range(schedule.num_snapshots)])
    all_times = all_times + start_time_s
    all_drift = np.radians(clock.drift_deg(all_times.reshape(-1, reps), carrier_hz)
                           ).reshape(all_times.shape)

    for snap in range(schedule.num_snapshots):
        times = all_times[snap]
        drift = all_drift[snap]
        clean = np.empty((len(pairs), reps * n_fft), dtype=complex)
        powers = np.empty(len(pairs))
        snap_mpcs = []
        for p, (tb, rb) in enumerate(pairs):
            mpcs = scene.snapshot_mpcs(float(times[p, 0]))
            if p == 0:
                snap_mpcs = mpcs
            tones = tx_tones if system_response is None else tx_tones * system_response.tone_response(p)
            tones = tones * _channel_tones(mpcs, codebook_tx, codebook_rx, tb, rb, offsets)
            powers[p] = np.sum(np.abs(tones) ** 2)
            spectrum = np.zeros(n_fft, dtype=complex)
            spectrum[bins] = tones
            period = np.fft.ifft(spectrum) * n_fft
            clean[p] = (period[None, :] * np.exp(1j * drift[p])[:, None]).ravel()

        with np.errstate(divide="ignore"):
            gain_db = agc_select(10 * np.log10(powers), receiver)
        amp = 10 ** (gain_db / 20)
        out = np.empty(clean.shape, dtype=np.complex64)
        clipped = False
        for p in range(len(pairs)):
            x = clean[p]
            if receiver.add_noise:
                rng = _capture_rng(seed, snap, p)
                x = x + math.sqrt(noise_var / 2) * (rng.standard_normal(x.size)
                                                     + 1j * rng.standard_normal(x.size))
            q, c = quantize_midrise(x * amp, receiver.adc_bits, full_scale)
            clipped |= c
            out[p] = q
        if clipped:
            logger.warning("snapshot %d: ADC clipping at gain %.1f dB", snap, gain_db)
        yield Snapshot(snap, gain_db, times[:, 0].copy(), out, clipped, snap_mpcs)


def make_header(scene, waveform, codebook_tx, codebook_rx, schedule, clock, receiver,
                tx_power_dbm, seed, carrier_hz) -> RecordingHeader:
    scene_dict = scene.to_dict() if hasattr(scene, "to_dict") else {}
    return RecordingHeader(
        carrier_hz=carrier_hz, schedule=schedule, waveform=waveform, receiver=receiver,
        clock=clock, seed=seed, tx_power_dbm=tx_power_dbm,
        tx_codebook_hash=codebook_hash(codebook_tx), rx_codebook_hash=codebook_hash(codebook_rx),
        tx_beam_azimuths_deg=tuple(float(codebook_tx.beams[b].azimuth_deg) for b in schedule.tx_beams),
        rx_beam_azimuths_deg=tuple(float(codebook_rx.beams[b].azimuth_deg) for b in schedule.rx_beams),
        scene_hash=content_hash(scene_dict), scene_name=getattr(scene, "name", ""),
        snapshot_count=schedule.num_snapshots)


def run_sweep(scene, waveform: MultitoneSpec, codebook_tx: BeamCodebook, codebook_rx: BeamCodebook,
              schedule: SweepSchedule, clock: ClockModel | None = None,
              receiver: ReceiverConfig | None = None, tx_eirp_dbm: float = 57.0, seed: int = 0,
              system_response=None, start_time_s: float | None = None) -> SweepRecording:
    """Simulate every scheduled beam-pair capture over ``scene``.

    For each pair the scene is evaluated at the pair's own start time, the
    paths are weighted by the complex TX and RX beam fields, and the result
    multiplies the transmitted tones (and ``system_response`` if given).
    The drift phase is applied per repetition, thermal noise is added at the
    receiver noise figure, and the AGC picks one gain per snapshot from the
    noiseless pair powers before the ADC quantizes I and Q. Snapshots where
    the ADC clipped are flagged, not rejected.

    Parameters
    ----------
    tx_eirp_dbm : float
        EIRP at the peak of the TX codebook. The conducted power is this
        minus the codebook's highest boresight gain.
    seed : int
        Seeds the per-capture noise. Each (snapshot, pair) draws from its
        own stream so captures can be generated in any order.
    """
    clock = clock or ClockModel()
    receiver = receiver or ReceiverConfig()
    carrier_hz = scene.carrier_hz
    max_index = max(max(schedule.tx_beams), max(schedule.rx_beams))
    if max(schedule.tx_beams) >= len(codebook_tx) or max(schedule.rx_beams) >= len(codebook_rx):
        raise ValueError(f"schedule refers to beam {max_index} missing from a codebook")
    tx_power_dbm = tx_eirp_dbm - max(b.boresight_gain_dbi for b in codebook_tx.beams)
    start = scene.duration_s[0] if start_time_s is None else start_time_s
    header = make_header(scene, waveform, codebook_tx, codebook_rx, schedule, clock, receiver,
                         tx_power_dbm, seed, carrier_hz)
    snaps = list(iter_snapshots(scene, waveform, codebook_tx, codebook_rx, schedule, clock,
                                receiver, tx_power_dbm, seed, system_response, start, carrier_hz))
    return SweepRecording(header, snaps)


def capture_periods(recording: SweepRecording, snapshot: int) -> np.ndarray:
    """Samples of one snapshot reshaped to (pairs, repetitions, samples_per_period)."""
    h = recording.header
    s = recording.snapshots[snapshot].samples
    return s.reshape(s.shape[0], h.schedule.repetitions_per_pair, h.waveform.samples_per_period)


def coherent_averaging_loss_db(repetitions: int, total_drift_deg: float) -> float:
    """Power loss of averaging ``repetitions`` copies whose phase advances linearly.

    The phase steps by ``total_drift_deg / repetitions`` per repetition, so
    the mean phasor has magnitude ``|sin(R*d/2) / (R*sin(d/2))|``.
    """
    d = math.radians(total_drift_deg) / repetitions
    if abs(math.sin(d / 2)) < 1e-15:
        return 0.0
    ratio = abs(math.sin(repetitions * d / 2) / (repetitions * math.sin(d / 2)))
    return float(20 * math.log10(max(ratio, 1e-300)))


def averaging_gain_probe(recording: SweepRecording) -> dict:
    """SNR on the tone grid before and after averaging the repetitions.

    Noise power per bin comes from DFT bins outside the occupied band; the
    signal power is the tone-bin power minus that noise. Ratios are pooled
    over every capture of the recording.
    """
    h = recording.header
    reps = h.schedule.repetitions_per_pair
    if reps < 2:
        raise ValueError("averaging needs at least two repetitions per pair")
    bins = h.waveform.tone_bins
    n_fft = h.waveform.samples_per_period
    mask = np.ones(n_fft, dtype=bool)
    mask[max(bins[0] - 2, 0):bins[-1] + 3] = False
    mask[0] = False
    sig1 = noise1 = sig_avg = noise_avg = 0.0
    for k in range(recording.num_snapshots):
        spec = np.fft.fft(capture_periods(recording, k), axis=-1) / n_fft
        nv1 = np.mean(np.abs(spec[..., mask]) ** 2)
        tone1 = np.mean(np.abs(spec[..., bins]) ** 2)
        mean_spec = spec.mean(axis=1)
        nva = np.mean(np.abs(mean_spec[..., mask]) ** 2)
        tonea = np.mean(np.abs(mean_spec[..., bins]) ** 2)
        sig1 += tone1 - nv1
        noise1 += nv1
        sig_avg += tonea - nva
        noise_avg += nva
    before = 10 * math.log10(max(sig1, 1e-300) / noise1)
    after = 10 * math.log10(max(sig_avg, 1e-300) / noise_avg)
    return {"snr_single_db": before, "snr_averaged_db": after, "improvement_db": after - before,
            "repetitions": reps, "ideal_improvement_db": 10 * math.log10(reps)}
