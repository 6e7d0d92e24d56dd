"""
On-disk artifacts: binary sweep recordings, ground-truth sidecars, text
specs for waveforms and calibrations, JSON codebooks and scenes, and CSV
result tables.

Recording layout (all little-endian)::

    "SNDR" | u16 version | u32 snapshot_count | u32 capture_count
    u32 header_len | header (UTF-8 JSON)
    capture*: u32 snapshot | u32 pair | f64 timestamp_s | f32 gain_db
              u32 n | n x (f32 I, f32 Q)
    u32 n_clipped | n_clipped x u32 snapshot index
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from mmsounder._hashing import canonical_json
from mmsounder.beamforming import BeamCodebook
from mmsounder.calibration import MEASURED, CalibrationResponse
from mmsounder.scene import GroundTruthMPC, scene_from_dict
from mmsounder.sounder import FORMAT_VERSION, RecordingHeader, Snapshot, SweepRecording
from mmsounder.waveform import MultitoneSpec

MAGIC = b"SNDR"
TEXT_SCHEMA_VERSION = 1

_PREAMBLE = struct.Struct("<4sHIII")
_CAPTURE = struct.Struct("<IIdfI")
_U32 = struct.Struct("<I")
_COUNTS_OFFSET = 6

__all__ = [
    "FormatError", "BadMagicError", "ChecksumError", "UnsupportedVersionError",
    "TruncatedFileError", "RecordingHeader", "Snapshot", "SweepRecording", "RecordingWriter",
    "write_recording", "read_recording", "file_crc32", "write_sidecar", "read_sidecar",
    "attach_ground_truth", "write_waveform_spec", "read_waveform_spec", "write_calibration",
    "read_calibration", "write_codebook", "read_codebook", "write_scene", "read_scene",
    "write_csv",
]


class FormatError(Exception):
    """Base class for malformed artifact files."""


class BadMagicError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, section: str, detail: str = ""):
        self.section = section
        super().__init__(f"file truncated in {section}" + (f": {detail}" if detail else ""))


# ---------------------------------------------------------------- recordings


class RecordingWriter:
    """Streams captures to a recording file without holding them in memory.

    Counts in the preamble are patched and the trailer and checksum written
    by :meth:`finalize` (also called on leaving a ``with`` block cleanly).
    """

    def __init__(self, path, header: RecordingHeader):
        self.path = Path(path)
        self._f = open(self.path, "wb")
        self._captures = 0
        self._snapshots = set()
        self._clipped = []
        self._closed = False
        blob = canonical_json(header.to_dict()).encode("utf-8")
        self._f.write(_PREAMBLE.pack(MAGIC, header.version, 0, 0, len(blob)))
        self._f.write(blob)

    def append(self, snapshot: int, pair: int, timestamp_s: float, gain_db: float, samples) -> None:
        if self._closed:
            raise ValueError("writer already finalized")
        iq = np.asarray(samples, dtype=np.complex64)
        self._f.write(_CAPTURE.pack(snapshot, pair, float(timestamp_s), float(gain_db), iq.size))
        self._f.write(iq.astype("<c8").tobytes())
        self._captures += 1
        self._snapshots.add(snapshot)

    def append_snapshot(self, snap: Snapshot) -> None:
        for p in range(snap.samples.shape[0]):
            self.append(snap.index, p, snap.capture_times_s[p], snap.gain_db, snap.samples[p])
        if snap.clipped:
            self._clipped.append(snap.index)

    def finalize(self) -> int:
        """Close the file and return its CRC32."""
        if self._closed:
            raise ValueError("writer already finalized")
        self._f.write(_U32.pack(len(self._clipped)))
        for k in self._clipped:
            self._f.write(_U32.pack(k))
        self._f.seek(_COUNTS_OFFSET)
        self._f.write(struct.pack("<II", len(self._snapshots), self._captures))
        self._f.close()
        self._closed = True
        crc = _crc32(self.path, os.path.getsize(self.path))
        with open(self.path, "ab") as f:
            f.write(_U32.pack(crc))
        return crc

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._closed:
            return
        if exc_type is None:
            self.finalize()
        else:
            self._f.close()
            self._closed = True


def _crc32(path, length: int) -> int:
    crc = 0
    with open(path, "rb") as f:
        while length > 0:
            chunk = f.read(min(length, 1 << 20))
            if not chunk:
                break
            crc = zlib.crc32(chunk, crc)
            length -= len(chunk)
    return crc & 0xFFFFFFFF


def file_crc32(path) -> int:
    """CRC32 of a finished recording, i.e. of every byte before its 4-byte trailer.

    This is the value the trailer stores. A CRC taken over the trailer too
    would be the same constant for every file, so it cannot identify one.
    """
    size = os.path.getsize(path)
    if size < _U32.size:
        raise TruncatedFileError("checksum")
    return _crc32(path, size - _U32.size)


def write_recording(recording: SweepRecording, path) -> int:
    """Write a whole recording; returns the file CRC32."""
    with RecordingWriter(path, recording.header) as w:
        for snap in recording.snapshots:
            w.append_snapshot(snap)
        return w.finalize()


def _take(buf: memoryview, pos: int, size: int, section: str) -> int:
    if pos + size > len(buf):
        raise TruncatedFileError(section, f"need {size} bytes at offset {pos}, file has {len(buf)}")
    return pos + size


def read_recording(path) -> SweepRecording:
    """Read and validate a recording file."""
    data = Path(path).read_bytes()
    buf = memoryview(data)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagicError(f"{path}: not a sweep recording (bad magic)")
    end = _take(buf, 0, _PREAMBLE.size, "preamble")
    _, version, n_snap, n_cap, hlen = _PREAMBLE.unpack_from(buf, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"recording format version {version}; this reader supports "
                                      f"{FORMAT_VERSION}")
    pos = end
    end = _take(buf, pos, hlen, "header")
    try:
        header = RecordingHeader.from_dict(json.loads(bytes(buf[pos:end]).decode("utf-8")))
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"unreadable header: {e}") from e
    pos = end

    captures = []
    for k in range(n_cap):
        section = f"capture {k}"
        end = _take(buf, pos, _CAPTURE.size, section)
        snap, pair, ts, gain, n = _CAPTURE.unpack_from(buf, pos)
        pos = end
        end = _take(buf, pos, 8 * n, section)
        iq = np.frombuffer(buf[pos:end], dtype="<c8").astype(np.complex64)
        pos = end
        captures.append((snap, pair, ts, gain, iq))

    end = _take(buf, pos, 4, "trailer")
    (n_clip,) = _U32.unpack_from(buf, pos)
    pos = end
    end = _take(buf, pos, 4 * n_clip, "trailer")
    clipped = set(np.frombuffer(buf[pos:end], dtype="<u4").tolist())
    pos = end
    end = _take(buf, pos, 4, "checksum")
    (stored,) = _U32.unpack_from(buf, pos)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} unexpected bytes after the checksum")
    actual = zlib.crc32(buf[:pos]) & 0xFFFFFFFF
    if actual != stored:
        raise ChecksumError(f"CRC32 mismatch: stored {stored:08x}, computed {actual:08x}")

    grouped = {}
    for snap, pair, ts, gain, iq in captures:
        grouped.setdefault(snap, []).append((pair, ts, gain, iq))
    snapshots = []
    for idx in sorted(grouped):
        rows = sorted(grouped[idx], key=lambda r: r[0])
        snapshots.append(Snapshot(
            index=idx, gain_db=float(rows[0][2]),
            capture_times_s=np.array([r[1] for r in rows]),
            samples=np.stack([r[3] for r in rows]) if rows else np.empty((0, 0), np.complex64),
            clipped=idx in clipped))
    if len(snapshots) != n_snap:
        raise FormatError(f"preamble announces {n_snap} snapshots, found {len(snapshots)}")
    header_fields = header.to_dict()
    header_fields["snapshot_count"] = n_snap
    return SweepRecording(RecordingHeader.from_dict(header_fields), snapshots)


# ---------------------------------------------------------------- ground-truth sidecar


def write_sidecar(recording: SweepRecording, path) -> None:
    h = recording.header
    doc = {
        "schema_version": TEXT_SCHEMA_VERSION, "seed": h.seed, "scene_hash": h.scene_hash,
        "scene_name": h.scene_name,
        "snapshots": [{"index": s.index, "time_s": s.start_time_s,
                       "mpcs": [m.to_dict() for m in s.mpcs]} for s in recording.snapshots],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def read_sidecar(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != TEXT_SCHEMA_VERSION:
        raise UnsupportedVersionError(f"sidecar schema version {doc.get('schema_version')!r}")
    for s in doc["snapshots"]:
        s["mpcs"] = [GroundTruthMPC.from_dict(m) for m in s["mpcs"]]
    return doc


def attach_ground_truth(recording: SweepRecording, sidecar: dict) -> SweepRecording:
    """Copy sidecar MPC lists onto the recording's snapshots after checking provenance."""
    h = recording.header
    if sidecar["seed"] != h.seed or sidecar["scene_hash"] != h.scene_hash:
        raise FormatError("sidecar does not belong to this recording (seed or scene hash differ)")
    by_index = {s["index"]: s["mpcs"] for s in sidecar["snapshots"]}
    for snap in recording.snapshots:
        snap.mpcs = list(by_index.get(snap.index, []))
    return recording


# ---------------------------------------------------------------- text specs


def _kv_lines(pairs: dict) -> list:
    return [f"{k}={v}" for k, v in pairs.items()]


def _parse_kv(text: str, marker: str):
    head, sep, body = text.partition(f"{marker}:\n")
    if not sep:
        raise FormatError(f"missing '{marker}:' section")
    meta = {}
    for line in head.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    version = int(meta.get("format_version", -1))
    if version != TEXT_SCHEMA_VERSION:
        raise UnsupportedVersionError(f"text format version {version}")
    return meta, [ln for ln in body.splitlines() if ln.strip()]


def write_waveform_spec(spec: MultitoneSpec, path) -> None:
    """key=value grid description, then one phase per line (radians, 12 significant digits)."""
    lines = _kv_lines({"format_version": TEXT_SCHEMA_VERSION, "num_tones": spec.num_tones,
                       "tone_spacing_hz": repr(float(spec.tone_spacing_hz)),
                       "first_tone_hz": repr(float(spec.first_tone_hz)),
                       "sample_rate_hz": repr(float(spec.sample_rate_hz))})
    lines.append("phases_rad:")
    lines += [f"{p:.12g}" for p in spec.phases_rad]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_waveform_spec(path) -> MultitoneSpec:
    meta, rows = _parse_kv(Path(path).read_text(encoding="utf-8"), "phases_rad")
    try:
        return MultitoneSpec(int(meta["num_tones"]), float(meta["tone_spacing_hz"]),
                             float(meta["first_tone_hz"]), float(meta["sample_rate_hz"]),
                             np.array([float(r) for r in rows]))
    except KeyError as e:
        raise FormatError(f"missing key {e}") from e


def write_calibration(cal: CalibrationResponse, path) -> None:
    """Tone grid as key=value, then one "re im" line per tone (per pair if tabulated)."""
    f = cal.tone_frequencies_hz
    spacing = float(f[1] - f[0]) if f.size > 1 else 0.0
    if f.size > 2 and not np.allclose(np.diff(f), spacing, rtol=0, atol=1e-6):
        raise ValueError("calibration text format needs a uniform tone grid")
    rows = np.atleast_2d(cal.response)
    lines = _kv_lines({"format_version": TEXT_SCHEMA_VERSION, "num_tones": f.size,
                       "first_tone_hz": repr(float(f[0])), "tone_spacing_hz": repr(spacing),
                       "num_pairs": rows.shape[0] if cal.per_pair else 0, "source": cal.source})
    lines.append("values:")
    lines += [f"{v.real:.17g} {v.imag:.17g}" for v in rows.ravel()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_calibration(path) -> CalibrationResponse:
    meta, rows = _parse_kv(Path(path).read_text(encoding="utf-8"), "values")
    n = int(meta["num_tones"])
    f = float(meta["first_tone_hz"]) + float(meta["tone_spacing_hz"]) * np.arange(n)
    vals = np.array([complex(*map(float, r.split())) for r in rows])
    pairs = int(meta.get("num_pairs", 0))
    resp = vals.reshape(pairs, n) if pairs else vals
    if resp.size != max(pairs, 1) * n:
        raise FormatError("calibration value count does not match the grid")
    return CalibrationResponse(f, resp, meta.get("source", MEASURED))


def write_codebook(codebook: BeamCodebook, path) -> None:
    doc = {"schema_version": TEXT_SCHEMA_VERSION, **codebook.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def read_codebook(path) -> BeamCodebook:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.pop("schema_version", None) != TEXT_SCHEMA_VERSION:
        raise UnsupportedVersionError("unsupported codebook schema version")
    return BeamCodebook.from_dict(doc)


def write_scene(scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1), encoding="utf-8")


def read_scene(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return scene_from_dict(doc)
    except ValueError as e:
        if "schema version" in str(e):
            raise UnsupportedVersionError(str(e)) from e
        raise


# ---------------------------------------------------------------- CSV tables


def write_csv(path, columns, rows) -> None:
    """CSV with a one-line header; floats written with 10 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
