"""End-to-end acceptance criteria, one test each.

Every test records a one-line verdict (printed in the terminal summary by
``conftest.py``) before asserting, so a failing criterion still reports its
measured value.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from conftest import ACCEPTANCE_RESULTS
from helpers import fixed_scene, path_for_rx_power, single_pair_schedule
from mmsounder import analysis as an
from mmsounder import storage
from mmsounder.calibration import identity_response
from mmsounder.scene import (FixedMPCScene, GroundTruthMPC, Pose, PropagationScene, Scatterer,
                             Trajectory, case2_blockage, free_space_path_loss_db)
from mmsounder.sounder import (ClockModel, ReceiverConfig, SweepSchedule, averaging_gain_probe,
                               coherent_averaging_loss_db, link_budget, make_header, run_sweep)
from mmsounder.waveform import (MultitoneSpec, optimize_phases, oversampled_papr_db,
                                zadoff_chu_baseline)

pytestmark = pytest.mark.acceptance

CARRIER_HZ = 27.85e9


def record(number, passed, detail):
    passed = bool(passed)
    ACCEPTANCE_RESULTS.append((number, passed, detail))
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, f"criterion {number}: {detail}"


def _circular_hz_distance(a, b, span):
    d = (a - b) % span
    return min(d, span - d)


# ---------------------------------------------------------------- 1 waveform


def test_criterion_1_waveform_papr():
    t0 = time.perf_counter()
    spec = optimize_phases(MultitoneSpec.sounder_default())
    papr = oversampled_papr_db(spec)
    zc = zadoff_chu_baseline(spec.num_tones, 1, spec.sample_rate_hz, spec.bandwidth_hz).papr_db
    elapsed = time.perf_counter() - t0
    record(1, papr <= 1.0 and zc - papr >= 1.0 and elapsed < 30,
           f"PAPR {papr:.3f} dB (<= 1.0), Zadoff-Chu {zc:.3f} dB, margin {zc - papr:.3f} dB "
           f"(>= 1.0), {elapsed:.1f} s")


# ---------------------------------------------------------------- 2 link budget


def test_criterion_2_link_budget():
    lb = link_budget(ReceiverConfig(), 57.0, 19.0)
    got = (lb.sensitivity_dbm, lb.eis_dbm, lb.max_path_loss_db, lb.dynamic_range_db)
    want = (-83, -102, 159, 77)
    # the published figures are whole dB; the unrounded values sit 0.02 dB off
    record(2, tuple(round(v) for v in got) == want and max(abs(g - w) for g, w in zip(got, want)) < 0.05,
           "sensitivity {:.2f} dBm, EIS {:.2f} dBm, max path loss {:.2f} dB, "
           "dynamic range {:.2f} dB".format(*got))


# ---------------------------------------------------------------- 3 timing


def test_criterion_3_timing(spec, codebook, tmp_path):
    values = {}
    for name in ("dynamic-10x10", "static-19x19x10"):
        sched = SweepSchedule.preset(name)
        header = make_header(case2_blockage(), spec, codebook, codebook, sched, ClockModel(),
                             ReceiverConfig(), 38.0, 0, CARRIER_HZ)
        path = tmp_path / f"{name}.sndr"
        storage.RecordingWriter(path, header).finalize()
        back = storage.read_recording(path).header.schedule
        values[name] = (back.pair_time_ns, back.snapshot_time_ns)
    dyn, sta = values["dynamic-10x10"], values["static-19x19x10"]
    record(3, dyn == (4_000, 400_000) and sta == (40_000, 14_440_000),
           f"dynamic pair {dyn[0] / 1e3:g} us snapshot {dyn[1] / 1e3:g} us; "
           f"static pair {sta[0] / 1e3:g} us sweep {sta[1] / 1e6:g} ms (header round trip)")


# ---------------------------------------------------------------- 4 path loss


def _measured_path_loss(spec, codebook, distances, extra_loss_db):
    beam = 9  # boresight
    gain = codebook.beams[beam].boresight_gain_dbi
    cal = identity_response(spec.tone_frequencies_hz)
    pl = []
    for d, extra in zip(distances, extra_loss_db):
        scene = PropagationScene(Pose((0.0, 0.0, 5.0), 0.0), Pose((d, 0.0, 5.0), 180.0),
                                 los_extra_loss_db=extra, name="los")
        rec = run_sweep(scene, spec, codebook, codebook, single_pair_schedule(beam),
                        receiver=ReceiverConfig(add_noise=False))
        rx_dbm = 10 * np.log10(an.pas(an.directional_pdp(rec, cal)[0])[0, 0])
        pl.append(rec.header.tx_power_dbm + 2 * gain - rx_dbm)
    return np.array(pl)


def test_criterion_4_path_loss(spec, codebook):
    t0 = time.perf_counter()
    d = np.linspace(30.0, 122.0, 24)
    clean = an.fit_path_loss(d, _measured_path_loss(spec, codebook, d, np.zeros(d.size)),
                             "close-in", CARRIER_HZ)
    shadow = np.random.default_rng(11).normal(0.0, 1.0, d.size)
    shadowed = an.fit_path_loss(d, _measured_path_loss(spec, codebook, d, shadow),
                                "close-in", CARRIER_HZ)
    fspl6 = float(free_space_path_loss_db(6.0, CARRIER_HZ))
    elapsed = time.perf_counter() - t0
    n0, n1 = clean.params["n"], shadowed.params["n"]
    record(4, abs(n0 - 2.0) <= 0.01 and abs(n1 - 2.0) <= 0.1 and abs(fspl6 - 76.9) <= 0.05
           and elapsed < 10,
           f"CI n {n0:.4f} noiseless, {n1:.4f} with 1 dB shadowing "
           f"(sigma {shadowed.shadowing_sigma_db:.2f} dB); FSPL(6 m) {fspl6:.3f} dB; {elapsed:.1f} s")


# ---------------------------------------------------------------- 5 phase stability


def _capture_phases_deg(rec, cal):
    """Phase of each snapshot's tone estimates relative to the first, averaged over tones."""
    h = np.stack([an.tone_estimates(rec, k, cal)[0] for k in range(rec.num_snapshots)])
    return np.degrees(np.angle(np.sum(h * np.conj(h[0]), axis=1)))


def test_criterion_5_phase_stability(spec, codebook):
    t0 = time.perf_counter()
    cal = identity_response(spec.tone_frequencies_hz)
    scene = PropagationScene(Pose((0.0, 0.0, 2.0)), Pose((20.0, 0.0, 2.0), 180.0))
    quiet = ReceiverConfig(add_noise=False)
    # two captures 1.444 ms apart, the time of one pass over 19 x 19 pairs at 4 us
    sched = SweepSchedule((9,), (9,), 2e-6, 1.442e-3, 1, 2, 10e-3, 1)
    rec = run_sweep(scene, spec, codebook, codebook, sched, receiver=quiet,
                    clock=ClockModel("free_running", fractional_offset=2.77e-10))
    accumulated = _capture_phases_deg(rec, cal)[1]

    sched = SweepSchedule((9,), (9,), 2e-6, 2e-6, 1, 1000, 10e-3, 1)
    rec = run_sweep(scene, spec, codebook, codebook, sched, receiver=quiet,
                    clock=ClockModel("shared", phase_noise_std_deg=5.8, seed=21))
    phases = _capture_phases_deg(rec, cal)
    phases = phases - np.degrees(np.angle(np.mean(np.exp(1j * np.radians(phases)))))
    std = float(np.std((phases + 180) % 360 - 180))
    elapsed = time.perf_counter() - t0
    record(5, abs(accumulated - 4.0) <= 0.2 and abs(std / 5.8 - 1) <= 0.1 and elapsed < 30,
           f"free-running drift {accumulated:.3f} deg over 1.444 ms (4 +- 0.2); "
           f"shared-clock jitter std {std:.2f} deg over 1000 captures (5.8 +- 10%); {elapsed:.1f} s")


# ---------------------------------------------------------------- 6 averaging gain


def test_criterion_6_averaging_gain(spec, codebook):
    mpc = path_for_rx_power(codebook, -85.0)
    sched = single_pair_schedule(reps=10, snapshots=20)
    stable = averaging_gain_probe(run_sweep(fixed_scene(mpc), spec, codebook, codebook, sched,
                                            seed=5))["improvement_db"]
    # 18 deg per 4 us slot, 180 deg across the 10 repetitions
    offset = 18.0 / (360 * CARRIER_HZ * 4e-6)
    drifting = averaging_gain_probe(run_sweep(
        fixed_scene(mpc), spec, codebook, codebook, sched,
        clock=ClockModel("free_running", fractional_offset=offset), seed=5))["improvement_db"]
    loss = coherent_averaging_loss_db(10, 180.0)
    record(6, abs(stable - 10.0) <= 0.5 and abs(drifting - (10.0 + loss)) <= 0.3,
           f"stable phase {stable:.2f} dB (10 +- 0.5); 180 deg drift {drifting:.2f} dB vs "
           f"closed form {10 + loss:.2f} dB (+- 0.3)")


# ---------------------------------------------------------------- 7 delay-Doppler


def _burst_spectrum(scene, spec, codebook, seed):
    cal = identity_response(spec.tone_frequencies_hz)
    rec = run_sweep(scene, spec, codebook, codebook, SweepSchedule.dynamic(), seed=seed)
    cir = an.impulse_responses(rec, cal, "hanning")
    return an.delay_doppler(cir, rec.snapshot_times_s, "max", "none", 1 / spec.bandwidth_hz)


def test_criterion_7_delay_doppler(spec, codebook):
    # static LOS, 20 m
    los = PropagationScene(Pose((0.0, 0.0, 2.0)), Pose((20.0, 0.0, 2.0), 180.0))
    dd = _burst_spectrum(los, spec, codebook, 2)
    delay, doppler, peak = dd.peak()
    tau = los.snapshot_mpcs(0.0)[0].delay_s
    bin_s = 1 / spec.bandwidth_hz
    above_db = 10 * np.log10(peak / np.median(dd.power))
    # one local maximum 30 dB above the floor: the Hann delay sidelobes of an
    # off-grid path decay monotonically and do not form peaks of their own
    maxima = maximum_filter(dd.power, size=3, mode="nearest") == dd.power
    single = int(np.sum(maxima & (dd.power >= np.median(dd.power) * 1e3))) == 1

    # bistatic pair +-10 m apart facing a target that crosses their bisector at 13.39 m/s;
    # the path length shrinks at 13.39 m/s, a Doppler of +1244 Hz
    half = 10.0
    target = Scatterer("target", Trajectory.linear((half / np.sqrt(3), 0.0, 2.0), (-13.39, 0.0, 0.0),
                                                   0.0, 1.0), reflection_loss_db=0.0)
    moving = PropagationScene(Pose((0.0, -half, 2.0), 60.0), Pose((0.0, half, 2.0), -60.0),
                              (target,), include_los=False)
    truth = moving.snapshot_mpcs(0.0)[0].doppler_hz
    dd2 = _burst_spectrum(moving, spec, codebook, 3)
    span = 1 / SweepSchedule.dynamic().snapshot_time_s
    _, v, _ = dd2.peak()
    # +1250 Hz is the Nyquist bin of 20 snapshots at 400 us, listed as -1250 Hz
    err = _circular_hz_distance(v, 1250.0, span)
    record(7, abs(delay - tau) <= 0.5 * bin_s and doppler == 0 and above_db >= 30 and single
           and err <= 125,
           f"static LOS peak at ({delay * 1e9:.1f} ns, {doppler:g} Hz), {above_db:.1f} dB over "
           f"median, single={single}; moving target (true {truth:.0f} Hz) peak {v:g} Hz, "
           f"{err:g} Hz from 1250 on the circular Doppler axis")


# ---------------------------------------------------------------- 8 MPC extraction


def _random_scene(spec, codebook, rng, noise_bin_dbm, tx_power):
    n = int(rng.integers(1, 7))
    while True:
        bins = np.sort(rng.choice(np.arange(2, int(0.9 * spec.num_tones)), n, replace=False))
        if n == 1 or np.diff(bins).min() >= 3:
            break
    # a Hann-windowed on-bin path keeps 0.25 / 0.375 of its power in its peak bin
    peak_fraction_db = 10 * np.log10(0.25 / 0.375)
    mpcs, truth = [], []
    for d in bins:
        dod, doa = rng.uniform(-45, 45, 2)
        snr = rng.uniform(12, 35)
        g = (np.abs(codebook.field(dod, 0.0)) ** 2).max() * (np.abs(codebook.field(doa, 0.0)) ** 2).max()
        rx = noise_bin_dbm + snr - peak_fraction_db
        amp = np.sqrt(10 ** ((rx - tx_power) / 10) / g)
        mpcs.append(GroundTruthMPC(d / spec.bandwidth_hz, dod, doa, 0.0, 0.0,
                                   amp * np.exp(2j * np.pi * rng.uniform()), 0.0, "single-bounce"))
        truth.append((int(d), dod, doa))
    return FixedMPCScene(tuple(mpcs)), truth


GHOSTS = (  # (power relative to the path, shares TX beam, shares RX beam, must be accepted)
    (-15.0, True, False, False),
    (-15.0, False, True, False),
    (-25.0, False, False, False),
    (-8.0, True, False, True),
    (-15.0, False, False, True),
)


def _inject(p, d, t, r, rel_db, share_tx, share_rx, rng):
    """Place an isolated peak at delay ``d`` relative to the path at (t, r); returns its cell."""
    n_tx, n_rx = p.shape[:2]
    far_tx = [k for k in range(n_tx) if abs(k - t) >= 3]
    far_rx = [k for k in range(n_rx) if abs(k - r) >= 3]
    gt = t if share_tx else int(rng.choice(far_tx))
    gr = r if share_rx else int(rng.choice(far_rx))
    p[gt, gr, d] = p[t, r, d] * 10 ** (rel_db / 10)
    return gt, gr


def _is_local_max(p, t, r, d):
    box = p[max(t - 1, 0):t + 2, max(r - 1, 0):r + 2, max(d - 1, 0):d + 2]
    return p[t, r, d] >= box.max()


def test_criterion_8_mpc_extraction(spec, codebook):
    t0 = time.perf_counter()
    az = codebook.azimuths_deg
    cal = identity_response(spec.tone_frequencies_hz)
    rx_cfg = ReceiverConfig()
    noise_bin_dbm = -174 + rx_cfg.noise_figure_db + 10 * np.log10(spec.tone_spacing_hz)
    tx_power = 57.0 - max(b.boresight_gain_dbi for b in codebook.beams)
    sched = SweepSchedule(tuple(range(19)), tuple(range(19)), snapshots_per_burst=1)
    detected = total = 0
    ghost_bad = ghost_tested = control_ok = control_tested = 0
    n_scenes = 100
    for k in range(n_scenes):
        rng = np.random.default_rng(1000 + k)
        scene, truth = _random_scene(spec, codebook, rng, noise_bin_dbm, tx_power)
        rec = run_sweep(scene, spec, codebook, codebook, sched, seed=k)
        pdp = an.directional_pdp(rec, cal)[0]
        nf = an.noise_floor_db(pdp)
        est = an.extract_mpcs(pdp, nf)
        for d, dod, doa in truth:
            total += 1
            detected += any(e.delay_bin == d and abs(az[e.tx_beam] - dod) <= 5
                            and abs(az[e.rx_beam] - doa) <= 5 for e in est)
        # ghosts around the three strongest delay bins; an injection only
        # exercises the rules if it is a local maximum above the detection threshold
        threshold = 10 ** ((nf + 6.0) / 10)
        # the acceptance rules compare against the strongest peak of a delay bin
        per_bin = {}
        for e in sorted(est, key=lambda e: e.power_db):
            per_bin[e.delay_bin] = e
        paths = sorted(per_bin.values(), key=lambda e: -e.power_db)[:3]
        for path, (rel_db, share_tx, share_rx, wanted) in itertools.product(paths, GHOSTS):
            p = pdp.power.copy()
            gt, gr = _inject(p, path.delay_bin, path.tx_beam, path.rx_beam,
                             rel_db, share_tx, share_rx, rng)
            cell = (path.delay_bin, gt, gr)
            if p[gt, gr, path.delay_bin] <= threshold or not _is_local_max(p, gt, gr, path.delay_bin):
                continue
            accepted = cell in {(e.delay_bin, e.tx_beam, e.rx_beam) for e in an.extract_mpcs(p, nf)}
            if wanted:
                control_tested += 1
                control_ok += accepted
            else:
                ghost_tested += 1
                ghost_bad += accepted
    elapsed = time.perf_counter() - t0
    rate = detected / total
    record(8, n_scenes >= 100 and rate >= 0.95 and ghost_bad == 0 and ghost_tested >= 100
           and control_ok == control_tested and elapsed < 300,
           f"{n_scenes} scenes, detected {detected}/{total} = {rate:.1%} (>= 95%); "
           f"ghosts accepted {ghost_bad}/{ghost_tested}; rule-abiding controls accepted "
           f"{control_ok}/{control_tested}; {elapsed:.0f} s")


# ---------------------------------------------------------------- 9 blockage phenomenology


def _thresholded_pas(pdp, threshold_db=6.0):
    p = pdp.power
    return np.where(p > 10 ** ((an.noise_floor_db(pdp) + threshold_db) / 10), p, 0.0).sum(axis=2)


def test_criterion_9_blockage(spec, codebook):
    t0 = time.perf_counter()
    margin, depth = 10.0, 20.0
    cal = identity_response(spec.tone_frequencies_hz)
    sched = SweepSchedule(tuple(range(19)), tuple(range(19)), snapshots_per_burst=1,
                          burst_period_s=0.25, num_bursts=48)
    results = {}
    for background in (False, True):
        scene = case2_blockage(reflection_margin_db=margin, blockage_depth_db=depth,
                               background_scatterers=background)
        rec = run_sweep(scene, spec, codebook, codebook, sched, seed=5)
        results[background] = (rec.snapshot_times_s, an.directional_pdp(rec, cal))
    times, pdps = results[False]
    blocked = (times > 5.6) & (times < 8.9)
    idle = (times < 2.9) | (times > 9.1)
    tracking = an.beam_tracking_gain(np.stack([an.pas(p) for p in pdps]))
    gain = float(np.median(tracking.gain_db[blocked]))

    times, pdps = results[True]
    rx_spread = np.array([an.angular_stats(_thresholded_pas(p).sum(axis=0), codebook.azimuths_deg)
                          .angular_spread_deg for p in pdps])
    tx_spread = np.array([an.angular_stats(_thresholded_pas(p).sum(axis=1), codebook.azimuths_deg)
                          .angular_spread_deg for p in pdps])
    rx_idle, rx_blk = rx_spread[idle].mean(), rx_spread[blocked].mean()
    tx_idle, tx_blk = tx_spread[idle].mean(), tx_spread[blocked].mean()
    elapsed = time.perf_counter() - t0
    record(9, abs(gain - (depth - margin)) <= 0.5 and rx_blk > rx_idle and tx_blk > tx_idle,
           f"tracking gain during blockage {gain:.2f} dB (depth - margin = {depth - margin:g} "
           f"+- 0.5); angular spread idle -> blocked RX {rx_idle:.2f} -> {rx_blk:.2f} deg, "
           f"TX {tx_idle:.2f} -> {tx_blk:.2f} deg; {elapsed:.0f} s")


# ---------------------------------------------------------------- 10 format integrity


def test_criterion_10_format_integrity(spec, codebook, tmp_path):
    sched = SweepSchedule((7, 9, 11), (8, 10), snapshots_per_burst=4)
    clock = ClockModel("free_running", fractional_offset=1e-10, phase_noise_std_deg=2.0, seed=3)

    def simulate(path):
        rec = run_sweep(case2_blockage(), spec, codebook, codebook, sched, clock=clock, seed=42)
        storage.write_recording(rec, path)
        return rec

    rec = simulate(tmp_path / "a.sndr")
    back = storage.read_recording(tmp_path / "a.sndr")
    exact = all(np.array_equal(a.samples, b.samples) and a.gain_db == b.gain_db
                and np.array_equal(a.capture_times_s, b.capture_times_s)
                for a, b in zip(rec.snapshots, back.snapshots)) \
        and back.header.to_dict() == rec.header.to_dict()

    data = bytearray((tmp_path / "a.sndr").read_bytes())
    data[len(data) // 2] ^= 0x10
    (tmp_path / "bad.sndr").write_bytes(bytes(data))
    try:
        storage.read_recording(tmp_path / "bad.sndr")
        caught = False
    except storage.ChecksumError:
        caught = True

    simulate(tmp_path / "b.sndr")
    crc_a, crc_b = storage.file_crc32(tmp_path / "a.sndr"), storage.file_crc32(tmp_path / "b.sndr")
    same = crc_a == crc_b and (tmp_path / "a.sndr").read_bytes() == (tmp_path / "b.sndr").read_bytes()
    record(10, exact and caught and same,
           f"round trip bit-exact={exact}; flipped bit detected={caught}; "
           f"rerun checksums {crc_a:08x} / {crc_b:08x}")
