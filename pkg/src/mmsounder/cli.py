"""
Command-line entry point: ``mmsounder <subcommand> [options]``.

Subcommands write their artifacts under ``--out`` and print a short JSON
report on stdout. Exit codes: 0 ok, 2 invalid input, 3 I/O error,
4 malformed file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mmsounder import analysis, storage
from mmsounder.beamforming import ArrayGeometry, build_codebook
from mmsounder.calibration import identity_response
from mmsounder.scene import case1_moving_scatterers, case2_blockage, free_space_path_loss_db
from mmsounder.sounder import (ClockModel, ReceiverConfig, SweepSchedule, codebook_hash,
                               link_budget, make_header, iter_snapshots)
from mmsounder.waveform import (MultitoneSpec, optimize_phases, oversampled_papr_db,
                                synthesize, zadoff_chu_baseline)

logger = logging.getLogger("mmsounder")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4

SCENARIOS = ("case1_moving_scatterers", "case2_blockage")
PRESETS = ("dynamic-10x10", "static-19x19x10")


@dataclass
class RunConfig:
    """Resolved options of one invocation (command line over ``--config`` file)."""

    subcommand: str
    out: Path = Path(".")
    seed: int = 0
    options: dict = field(default_factory=dict)


def _default_spec(num_tones: int = 801, phases=None) -> MultitoneSpec:
    return MultitoneSpec(num_tones, 500e3, 50e6, 1.25e9,
                         np.zeros(num_tones) if phases is None else phases)


def _emit(report: dict, out: Path, name: str) -> None:
    (out / name).write_text(json.dumps(report, indent=1), encoding="utf-8")
    print(json.dumps(report, indent=1))


# ---------------------------------------------------------------- subcommands


def cmd_waveform(cfg: RunConfig) -> int:
    o = cfg.options
    spec = optimize_phases(_default_spec(o["tones"]), max_iters=o["max_iters"], seed=cfg.seed)
    wf = synthesize(spec)
    storage.write_waveform_spec(spec, cfg.out / "waveform_spec.txt")
    storage.write_csv(cfg.out / "waveform_samples.csv", ["index", "i", "q"],
                      [(k, float(s.real), float(s.imag)) for k, s in enumerate(wf.samples)])
    report = {"num_tones": spec.num_tones, "tone_spacing_hz": spec.tone_spacing_hz,
              "sample_rate_hz": spec.sample_rate_hz, "samples_per_period": spec.samples_per_period,
              "papr_db": wf.papr_db, "papr_4x_oversampled_db": oversampled_papr_db(spec)}
    if o["compare_zc"]:
        zc = zadoff_chu_baseline(spec.num_tones, o["zc_root"], spec.sample_rate_hz,
                                 spec.bandwidth_hz)
        report["zadoff_chu_papr_db"] = zc.papr_db
        report["zadoff_chu_minus_multitone_db"] = zc.papr_db - report["papr_4x_oversampled_db"]
    _emit(report, cfg.out, "waveform_report.json")
    return EXIT_OK


def cmd_codebook(cfg: RunConfig) -> int:
    o = cfg.options
    az = np.arange(-45.0, 45.0 + 1e-9, o["azimuth_step"])
    cb = build_codebook(ArrayGeometry(), az, phase_step_deg=o["phase_step"])
    storage.write_codebook(cb, cfg.out / "codebook.json")
    el0 = int(np.argmin(np.abs(cb.el_grid_deg)))
    rows = [(float(a), i, float(cb.pattern_dbi[i, el0, j]))
            for i in range(len(cb)) for j, a in enumerate(cb.az_grid_deg)]
    storage.write_csv(cfg.out / "codebook_patterns.csv", ["azimuth_deg", "beam", "gain_dbi"], rows)
    _emit({"num_beams": len(cb), "azimuths_deg": cb.azimuths_deg.tolist(),
           "boresight_gain_dbi": [b.boresight_gain_dbi for b in cb.beams],
           "hash": codebook_hash(cb)}, cfg.out, "codebook_report.json")
    return EXIT_OK


def _scene(o: dict):
    if o.get("scene"):
        return storage.read_scene(o["scene"])
    if o["scenario"] == "case1_moving_scatterers":
        return case1_moving_scatterers()
    if o["scenario"] == "case2_blockage":
        return case2_blockage(o["vehicle"])
    raise ValueError(f"unknown scenario {o['scenario']!r}; choose from {SCENARIOS}")


def cmd_simulate(cfg: RunConfig) -> int:
    o = cfg.options
    scene = _scene(o)
    schedule = SweepSchedule.preset(o["preset"], o["bursts"])
    spec = (storage.read_waveform_spec(o["waveform"]) if o.get("waveform")
            else optimize_phases(_default_spec(), seed=0))
    codebook = build_codebook()
    clock = ClockModel(o["clock"], o["fractional_offset"], o["phase_noise_deg"],
                       o["random_walk"], seed=cfg.seed)
    receiver = ReceiverConfig(add_noise=not o["no_noise"])
    tx_power = o["eirp"] - max(b.boresight_gain_dbi for b in codebook.beams)
    start = scene.duration_s[0] if o["start_time"] is None else o["start_time"]
    header = make_header(scene, spec, codebook, codebook, schedule, clock, receiver, tx_power,
                         cfg.seed, scene.carrier_hz)
    rec_path = cfg.out / "recording.sndr"
    recording = storage.SweepRecording(header, [])
    with storage.RecordingWriter(rec_path, header) as writer:
        for snap in iter_snapshots(scene, spec, codebook, codebook, schedule, clock, receiver,
                                   tx_power, cfg.seed, None, start, scene.carrier_hz):
            writer.append_snapshot(snap)
            snap.samples = snap.samples[:0]
            recording.snapshots.append(snap)
        writer.finalize()
    crc = storage.file_crc32(rec_path)
    storage.write_sidecar(recording, cfg.out / "recording.truth.json")
    _emit({"recording": str(rec_path), "crc32": f"{crc:08x}", "scene": header.scene_name,
           "preset": o["preset"], "snapshots": schedule.num_snapshots,
           "pair_time_us": schedule.pair_time_ns / 1e3,
           "snapshot_time_ms": schedule.snapshot_time_ns / 1e6,
           "clipped_snapshots": recording.clipped_snapshots()}, cfg.out, "simulate_report.json")
    return EXIT_OK


def _los_path_loss_points(paths) -> tuple:
    """(distance, path loss) per recording from its strongest beam pair."""
    codebook = build_codebook()
    gains = np.array([b.boresight_gain_dbi for b in codebook.beams])
    dist, pl = [], []
    for p in paths:
        rec = storage.read_recording(p)
        truth = storage.read_sidecar(Path(p).with_suffix(".truth.json"))
        storage.attach_ground_truth(rec, truth)
        h = rec.header
        if h.tx_codebook_hash != codebook_hash(codebook):
            raise ValueError(f"{p}: recorded with a non-default codebook")
        cal = identity_response(h.waveform.tone_frequencies_hz)
        pdp = analysis.directional_pdp(rec, cal, snapshots=[0])[0]
        s = analysis.pas(pdp)
        i, j = np.unravel_index(np.argmax(s), s.shape)
        rx_dbm = 10 * np.log10(s[i, j])
        pl.append(h.tx_power_dbm + gains[h.schedule.tx_beams[i]] + gains[h.schedule.rx_beams[j]]
                  - rx_dbm)
        los = [m for m in rec.snapshots[0].mpcs if m.source == "los"]
        if not los:
            raise ValueError(f"{p}: ground truth has no LOS path")
        dist.append(los[0].path_length_m)
    return np.array(dist), np.array(pl)


def _write_fits(out: Path, d, pl, carrier_hz: float) -> dict:
    fits = [analysis.fit_path_loss(d, pl, "close-in", carrier_hz)]
    if np.unique(d).size >= 3:
        fits.append(analysis.fit_path_loss(d, pl, "alpha-beta-gamma", carrier_hz))
    rows = [(f.model, k, float(v)) for f in fits for k, v in f.params.items()]
    rows += [(f.model, "shadowing_sigma_db", f.shadowing_sigma_db) for f in fits]
    storage.write_csv(out / "pathloss_fit.csv", ["model", "parameter", "value"], rows)
    return {f.model: {**f.params, "shadowing_sigma_db": f.shadowing_sigma_db} for f in fits}


def cmd_analyze(cfg: RunConfig) -> int:
    o = cfg.options
    paths = o["recording"] or []
    if not paths:
        raise ValueError("analyze needs at least one --recording")
    report = {}
    if o["fit_pathloss"]:
        d, pl = _los_path_loss_points(paths)
        report["pathloss"] = _write_fits(cfg.out, d, pl, 27.85e9)
    if o["pdp"] or o["mpc"] or o["doppler"] or o["pas"]:
        rec = storage.read_recording(paths[0])
        h = rec.header
        cal = (storage.read_calibration(o["calibration"]) if o.get("calibration")
               else identity_response(h.waveform.tone_frequencies_hz))
        cir = analysis.impulse_responses(rec, cal, o["window"])
        bin_s = 1.0 / h.waveform.bandwidth_hz
        pdps = [analysis.DirectionalPDP(np.abs(c) ** 2, bin_s, h.tx_beam_azimuths_deg,
                                        h.rx_beam_azimuths_deg, s.index, s.start_time_s)
                for c, s in zip(cir, rec.snapshots)]
        delays_ns = pdps[0].delays_s * 1e9
        if o["pdp"]:
            rows = [(p.snapshot, float(t), float(v)) for p in pdps
                    for t, v in zip(delays_ns, analysis.to_db(analysis.omni_pdp(p)))]
            storage.write_csv(cfg.out / "pdp.csv", ["snapshot", "delay_ns", "power_db"], rows)
        if o["pas"]:
            rows = [(p.snapshot, float(p.tx_azimuths_deg[i]), float(p.rx_azimuths_deg[j]),
                     float(analysis.to_db(v)))
                    for p in pdps for (i, j), v in np.ndenumerate(analysis.pas(p))]
            storage.write_csv(cfg.out / "pas.csv",
                              ["snapshot", "tx_azimuth_deg", "rx_azimuth_deg", "power_db"], rows)
        if o["mpc"]:
            mpcs = []
            for p in pdps:
                mpcs += analysis.extract_mpcs(p, analysis.noise_floor_db(p), o["threshold_db"])
            storage.write_csv(
                cfg.out / "mpc.csv",
                ["snapshot", "delay_ns", "tx_beam", "rx_beam", "tx_azimuth_deg", "rx_azimuth_deg",
                 "power_db"],
                [(m.snapshot, m.delay_s * 1e9, m.tx_beam, m.rx_beam, m.tx_azimuth_deg,
                  m.rx_azimuth_deg, m.power_db) for m in mpcs])
            report["mpc_count"] = len(mpcs)
            report["strongest_mpcs"] = [
                {"snapshot": m.snapshot, "delay_ns": m.delay_s * 1e9,
                 "tx_azimuth_deg": m.tx_azimuth_deg, "rx_azimuth_deg": m.rx_azimuth_deg,
                 "power_db": m.power_db}
                for m in sorted(mpcs, key=lambda m: -m.power_db)[:o["top"]]]
        if o["doppler"]:
            spb = h.schedule.snapshots_per_burst
            if spb < 2:
                raise ValueError("Doppler analysis needs at least two snapshots per burst")
            rows, peaks = [], []
            for b in range(rec.num_snapshots // spb):
                sl = slice(b * spb, (b + 1) * spb)
                dd = analysis.delay_doppler(cir[sl], rec.snapshot_times_s[sl], "max",
                                            o["doppler_window"], bin_s)
                pw = analysis.to_db(dd.power)
                rows += [(b, float(delays_ns[i]), float(dd.doppler_hz[k]), float(pw[i, k]))
                         for i in range(pw.shape[0]) for k in range(pw.shape[1])]
                _, v, _ = dd.peak()
                peaks.append(v)
            storage.write_csv(cfg.out / "doppler.csv",
                              ["burst", "delay_ns", "doppler_hz", "power_db"], rows)
            report["doppler_peak_hz"] = peaks
    _emit(report, cfg.out, "analyze_report.json")
    return EXIT_OK


def cmd_fit_pathloss(cfg: RunConfig) -> int:
    o = cfg.options
    if o["input"]:
        data = np.loadtxt(o["input"], delimiter=",", skiprows=1, ndmin=2)
        d, pl = data[:, 0], data[:, 1]
    else:
        rng = np.random.default_rng(cfg.seed)
        d = np.linspace(o["min_distance"], o["max_distance"], o["points"])
        pl = free_space_path_loss_db(d, o["carrier"]) + o["shadowing_db"] * rng.standard_normal(d.size)
        storage.write_csv(cfg.out / "pathloss_points.csv", ["distance_m", "path_loss_db"],
                          [(float(a), float(b)) for a, b in zip(d, pl)])
    _emit(_write_fits(cfg.out, d, pl, o["carrier"]), cfg.out, "pathloss_report.json")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    o = cfg.options
    report = {}
    if o["recording"]:
        rec = storage.read_recording(o["recording"])
        h = rec.header
        report["recording"] = {
            "crc32": f"{storage.file_crc32(o['recording']):08x}", "scene": h.scene_name,
            "seed": h.seed, "snapshots": rec.num_snapshots,
            "beam_pairs": h.schedule.num_pairs,
            "repetitions_per_pair": h.schedule.repetitions_per_pair,
            "pair_time_us": h.schedule.pair_time_ns / 1e3,
            "snapshot_time_ms": h.schedule.snapshot_time_ns / 1e6,
            "clock": h.clock.mode, "gains_db": sorted(set(rec.gains_db.tolist())),
            "clipped_snapshots": rec.clipped_snapshots()}
        rx = h.receiver
    else:
        rx = ReceiverConfig()
    lb = link_budget(rx, o["eirp"], o["rx_gain"])
    report["link_budget"] = {"sensitivity_dbm": lb.sensitivity_dbm, "eis_dbm": lb.eis_dbm,
                             "max_path_loss_db": lb.max_path_loss_db,
                             "dynamic_range_db": lb.dynamic_range_db}
    _emit(report, cfg.out, "report.json")
    return EXIT_OK


COMMANDS = {"waveform": cmd_waveform, "codebook": cmd_codebook, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "fit-pathloss": cmd_fit_pathloss, "report": cmd_report}


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with default option values")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mmsounder", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="subcommand", required=True)

    w = sub.add_parser("waveform", parents=[common], help="optimize and export the waveform")
    w.add_argument("--tones", type=int, default=801)
    w.add_argument("--max-iters", type=int, default=2000)
    w.add_argument("--compare-zc", action="store_true")
    w.add_argument("--zc-root", type=int, default=1)

    c = sub.add_parser("codebook", parents=[common], help="build and export a beam codebook")
    c.add_argument("--azimuth-step", type=float, default=5.0)
    c.add_argument("--phase-step", type=float, default=11.25)

    s = sub.add_parser("simulate", parents=[common], help="simulate a sweep over a scene")
    s.add_argument("--scenario", choices=SCENARIOS, default="case2_blockage")
    s.add_argument("--scene", type=Path, help="scene JSON file (overrides --scenario)")
    s.add_argument("--vehicle", choices=("truck", "van", "car"), default="truck")
    s.add_argument("--preset", choices=PRESETS, default="dynamic-10x10")
    s.add_argument("--bursts", type=int, default=1)
    s.add_argument("--start-time", type=float, default=None)
    s.add_argument("--waveform", type=Path, help="waveform spec file")
    s.add_argument("--clock", choices=("shared", "gps_disciplined", "free_running"),
                   default="shared")
    s.add_argument("--fractional-offset", type=float, default=0.0)
    s.add_argument("--phase-noise-deg", type=float, default=0.0)
    s.add_argument("--random-walk", type=float, default=0.0)
    s.add_argument("--eirp", type=float, default=57.0)
    s.add_argument("--no-noise", action="store_true")

    a = sub.add_parser("analyze", parents=[common], help="post-process recordings")
    a.add_argument("--recording", type=Path, action="append")
    a.add_argument("--calibration", type=Path)
    a.add_argument("--window", choices=analysis.WINDOWS, default="hanning")
    a.add_argument("--doppler-window", choices=analysis.WINDOWS, default="none")
    a.add_argument("--threshold-db", type=float, default=6.0)
    a.add_argument("--top", type=int, default=10)
    for flag in ("--pdp", "--pas", "--mpc", "--doppler", "--fit-pathloss"):
        a.add_argument(flag, action="store_true")

    f = sub.add_parser("fit-pathloss", parents=[common], help="fit path-loss models")
    f.add_argument("--input", type=Path, help="CSV with distance_m,path_loss_db columns")
    f.add_argument("--carrier", type=float, default=27.85e9)
    f.add_argument("--min-distance", type=float, default=30.0)
    f.add_argument("--max-distance", type=float, default=122.0)
    f.add_argument("--points", type=int, default=50)
    f.add_argument("--shadowing-db", type=float, default=0.0)

    r = sub.add_parser("report", parents=[common], help="summarize a recording and link budget")
    r.add_argument("--recording", type=Path)
    r.add_argument("--eirp", type=float, default=57.0)
    r.add_argument("--rx-gain", type=float, default=19.0)
    return p


def parse_config(argv) -> RunConfig:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        overrides = json.loads(args.config.read_text(encoding="utf-8"))
        sub = parser._subparsers._group_actions[0].choices[args.subcommand]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    opts = {k: v for k, v in vars(args).items()
            if k not in ("subcommand", "seed", "out", "config", "verbose")}
    opts["verbose"] = args.verbose
    return RunConfig(args.subcommand, Path(args.out), int(args.seed), opts)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code else EXIT_OK
    except (ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.DEBUG if cfg.options.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[cfg.subcommand](cfg)
    except storage.FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
