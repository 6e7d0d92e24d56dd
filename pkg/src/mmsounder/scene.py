"""
Time-varying propagation scenes and their ground-truth multipath components.

Positions are metres in a right-handed frame with +z up. A scene holds a TX
and an RX pose, point reflectors that create single-bounce paths, and
vertical screens that block any path segment crossing them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from mmsounder.beamforming import SPEED_OF_LIGHT, ArrayGeometry

SCENE_SCHEMA_VERSION = 1

LOS = "los"
SINGLE_BOUNCE = "single-bounce"
BLOCKED = "blocked"

POINT_REFLECTOR = "point-reflector"
BLOCKER_SCREEN = "blocker-screen"


def free_space_path_loss_db(distance_m, carrier_hz: float):
    """Free-space path loss ``20*log10(4*pi*d*f/c)`` in dB."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = 20 * np.log10(4 * np.pi * d * carrier_hz / SPEED_OF_LIGHT)
    return float(out) if out.ndim == 0 else out


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class Pose:
    position: tuple
    boresight_azimuth_deg: float = 0.0

    def __post_init__(self):
        p = tuple(float(x) for x in self.position)
        if len(p) != 3 or not np.all(np.isfinite(p)) or not np.isfinite(self.boresight_azimuth_deg):
            raise ValueError("pose needs a finite 3-vector position and azimuth")
        object.__setattr__(self, "position", p)

    @property
    def xyz(self) -> np.ndarray:
        return np.array(self.position)

    def direction_to(self, point) -> tuple:
        """(azimuth relative to boresight, elevation) in degrees towards ``point``."""
        d = np.asarray(point, dtype=float) - self.xyz
        az = np.degrees(np.arctan2(d[1], d[0])) - self.boresight_azimuth_deg
        el = np.degrees(np.arctan2(d[2], np.hypot(d[0], d[1])))
        return float(_wrap_deg(az)), float(el)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "boresight_azimuth_deg": self.boresight_azimuth_deg}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear path through timed waypoints; held constant outside them."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        p = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if p.shape != (t.size, 3):
            raise ValueError("need one 3-vector position per waypoint time")
        if np.any(np.diff(t) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    @classmethod
    def static(cls, position) -> "Trajectory":
        return cls([0.0], [position])

    @classmethod
    def linear(cls, start, velocity, t0: float, t1: float) -> "Trajectory":
        start = np.asarray(start, float)
        return cls([t0, t1], [start, start + np.asarray(velocity, float) * (t1 - t0)])

    def _segment(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))

    def position(self, t: float) -> np.ndarray:
        if self.times.size == 1:
            return self.positions[0].copy()
        return np.array([np.interp(t, self.times, self.positions[:, i]) for i in range(3)])

    def velocity(self, t: float) -> np.ndarray:
        """Right-hand derivative; zero before the first and after the last waypoint."""
        if self.times.size == 1 or t < self.times[0] or t >= self.times[-1]:
            return np.zeros(3)
        k = self._segment(t)
        return (self.positions[k + 1] - self.positions[k]) / (self.times[k + 1] - self.times[k])

    def heading_deg(self) -> float:
        if self.times.size < 2:
            return 0.0
        d = self.positions[1] - self.positions[0]
        return float(np.degrees(np.arctan2(d[1], d[0])))


@dataclass(frozen=True, eq=False)
class Scatterer:
    """A point reflector or a vertical blocking screen.

    For a screen, the trajectory gives the centre of its bottom edge,
    ``extent_m`` is (width along the screen axis, height) and
    ``axis_azimuth_deg`` the horizontal direction of the width axis
    (defaults to the direction of travel). Paths crossing a screen are
    attenuated by ``blockage_loss_db``.
    """

    name: str
    trajectory: Trajectory
    kind: str = POINT_REFLECTOR
    reflection_loss_db: float = 0.0
    extent_m: tuple = (0.0, 0.0)
    blockage_loss_db: float = 6.0
    axis_azimuth_deg: float | None = None

    def __post_init__(self):
        if self.kind not in (POINT_REFLECTOR, BLOCKER_SCREEN):
            raise ValueError(f"unknown scatterer kind {self.kind!r}")
        if self.reflection_loss_db < 0 or self.blockage_loss_db < 0:
            raise ValueError("losses must be non-negative")

    def blocks(self, a, b, t: float) -> bool:
        """True if the segment a->b crosses this screen at time ``t``."""
        if self.kind != BLOCKER_SCREEN:
            return False
        base = self.trajectory.position(t)
        heading = self.trajectory.heading_deg() if self.axis_azimuth_deg is None else self.axis_azimuth_deg
        axis = np.array([np.cos(np.radians(heading)), np.sin(np.radians(heading)), 0.0])
        normal = np.array([-axis[1], axis[0], 0.0])
        a = np.asarray(a, float)
        d = np.asarray(b, float) - a
        denom = d @ normal
        if abs(denom) < 1e-12:
            return False
        s = ((base - a) @ normal) / denom
        if s < 0.0 or s > 1.0:
            return False
        hit = a + s * d - base
        width, height = self.extent_m
        return abs(hit @ axis) <= width / 2 and 0.0 <= hit[2] <= height

    def to_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind,
            "times": self.trajectory.times.tolist(), "positions": self.trajectory.positions.tolist(),
            "reflection_loss_db": self.reflection_loss_db, "extent_m": list(self.extent_m),
            "blockage_loss_db": self.blockage_loss_db, "axis_azimuth_deg": self.axis_azimuth_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scatterer":
        return cls(d["name"], Trajectory(d["times"], d["positions"]), d["kind"],
                   float(d["reflection_loss_db"]), tuple(d["extent_m"]),
                   float(d["blockage_loss_db"]), d.get("axis_azimuth_deg"))


@dataclass(frozen=True)
class GroundTruthMPC:
    """One propagation path at one instant."""

    delay_s: float
    dod_azimuth_deg: float
    doa_azimuth_deg: float
    dod_elevation_deg: float
    doa_elevation_deg: float
    complex_gain: complex
    doppler_hz: float
    interaction: str
    source: str = ""

    @property
    def power_db(self) -> float:
        return float(20 * np.log10(max(abs(self.complex_gain), 1e-300)))

    @property
    def path_length_m(self) -> float:
        return self.delay_s * SPEED_OF_LIGHT

    def to_dict(self) -> dict:
        return {
            "delay_s": self.delay_s, "dod_azimuth_deg": self.dod_azimuth_deg,
            "doa_azimuth_deg": self.doa_azimuth_deg, "dod_elevation_deg": self.dod_elevation_deg,
            "doa_elevation_deg": self.doa_elevation_deg,
            "gain_re": float(np.real(self.complex_gain)), "gain_im": float(np.imag(self.complex_gain)),
            "doppler_hz": self.doppler_hz, "interaction": self.interaction, "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthMPC":
        return cls(d["delay_s"], d["dod_azimuth_deg"], d["doa_azimuth_deg"], d["dod_elevation_deg"],
                   d["doa_elevation_deg"], complex(d["gain_re"], d["gain_im"]), d["doppler_hz"],
                   d["interaction"], d.get("source", ""))


@dataclass(frozen=True, eq=False)
class PropagationScene:
    """TX/RX poses plus moving scatterers over a time window."""

    tx: Pose
    rx: Pose
    scatterers: tuple = ()
    carrier_hz: float = 27.85e9
    duration_s: tuple = (0.0, 1.0)
    include_los: bool = True
    los_extra_loss_db: float = 0.0
    name: str = "scene"

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def _path(self, points, velocities, t, interaction, source, extra_loss_db, skip=None):
        pts = [np.asarray(p, float) for p in points]
        legs = [b - a for a, b in zip(pts[:-1], pts[1:])]
        length = float(sum(np.linalg.norm(leg) for leg in legs))
        # d(length)/dt: each leg end contributes its velocity projected on the leg direction
        rate = 0.0
        for k, leg in enumerate(legs):
            u = leg / np.linalg.norm(leg)
            rate += u @ (velocities[k + 1] - velocities[k])
        blocked_loss = 0.0
        for sc in self.scatterers:
            if sc is skip or sc.kind != BLOCKER_SCREEN:
                continue
            if any(sc.blocks(a, b, t) for a, b in zip(pts[:-1], pts[1:])):
                blocked_loss += sc.blockage_loss_db
        loss_db = extra_loss_db + blocked_loss
        lam = self.wavelength_m
        amp = lam / (4 * np.pi * length) * 10 ** (-loss_db / 20)
        gain = amp * np.exp(-2j * np.pi * np.mod(length / lam, 1.0))
        dod = self.tx.direction_to(pts[1])
        doa = self.rx.direction_to(pts[-2])
        return GroundTruthMPC(
            delay_s=length / SPEED_OF_LIGHT,
            dod_azimuth_deg=dod[0], doa_azimuth_deg=doa[0],
            dod_elevation_deg=dod[1], doa_elevation_deg=doa[1],
            complex_gain=complex(gain), doppler_hz=float(-rate / lam),
            interaction=BLOCKED if blocked_loss > 0 else interaction, source=source)

    def snapshot_mpcs(self, t: float) -> list:
        """Ground-truth paths at time ``t``: LOS then one bounce per reflector."""
        t0, t1 = self.duration_s
        if not t0 - 1e-12 <= t <= t1 + 1e-12:
            raise ValueError(f"t={t} outside scene duration [{t0}, {t1}]")
        zero = np.zeros(3)
        out = []
        if self.include_los:
            out.append(self._path([self.tx.xyz, self.rx.xyz], [zero, zero], t, LOS, "los",
                                  self.los_extra_loss_db))
        for sc in self.scatterers:
            if sc.kind != POINT_REFLECTOR:
                continue
            p = sc.trajectory.position(t)
            v = sc.trajectory.velocity(t)
            out.append(self._path([self.tx.xyz, p, self.rx.xyz], [zero, v, zero], t,
                                  SINGLE_BOUNCE, sc.name, sc.reflection_loss_db, skip=sc))
        return out

    def swapped(self) -> "PropagationScene":
        """Same scene with TX and RX exchanged."""
        return replace(self, tx=self.rx, rx=self.tx)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENE_SCHEMA_VERSION, "type": "propagation", "name": self.name,
            "carrier_hz": self.carrier_hz, "duration_s": list(self.duration_s),
            "include_los": self.include_los, "los_extra_loss_db": self.los_extra_loss_db,
            "tx": self.tx.to_dict(), "rx": self.rx.to_dict(),
            "scatterers": [s.to_dict() for s in self.scatterers],
        }


@dataclass(frozen=True, eq=False)
class FixedMPCScene:
    """Explicit list of paths whose phases rotate at their Doppler shift.

    Handy for synthetic tests: delays and angles stay fixed while the
    complex gain of every path evolves as ``g * exp(j*2*pi*doppler*t)``.
    """

    mpcs: tuple
    duration_s: tuple = (0.0, 1.0)
    carrier_hz: float = 27.85e9
    name: str = "fixed"

    def snapshot_mpcs(self, t: float) -> list:
        return [replace(m, complex_gain=complex(m.complex_gain * np.exp(2j * np.pi * m.doppler_hz * t)))
                for m in self.mpcs]

    def to_dict(self) -> dict:
        return {"schema_version": SCENE_SCHEMA_VERSION, "type": "fixed", "name": self.name,
                "carrier_hz": self.carrier_hz, "duration_s": list(self.duration_s),
                "mpcs": [m.to_dict() for m in self.mpcs]}


def scene_from_dict(d: dict):
    version = d.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema version {version!r}")
    if d.get("type", "propagation") == "fixed":
        return FixedMPCScene(tuple(GroundTruthMPC.from_dict(m) for m in d["mpcs"]),
                             tuple(d["duration_s"]), d["carrier_hz"], d.get("name", "fixed"))
    return PropagationScene(
        tx=Pose(tuple(d["tx"]["position"]), d["tx"]["boresight_azimuth_deg"]),
        rx=Pose(tuple(d["rx"]["position"]), d["rx"]["boresight_azimuth_deg"]),
        scatterers=tuple(Scatterer.from_dict(s) for s in d["scatterers"]),
        carrier_hz=d["carrier_hz"], duration_s=tuple(d["duration_s"]),
        include_los=d["include_los"], los_extra_loss_db=d["los_extra_loss_db"],
        name=d.get("name", "scene"))


# Scenario templates. Positions and speeds are representative of the street
# measurements, not fitted to them.

VEHICLES = {
    # height (m), length (m), loss when the vehicle cuts a path (dB)
    "truck": (3.8, 8.0, 20.0),
    "van": (3.4, 6.0, 6.0),
    "car": (1.5, 4.5, 0.0),
}


# weak street-side scatterers for case 2, all inside both +-45 deg sectors
_BACKGROUND_POINTS = ((25.0, 10.0, 2.0), (30.0, -10.0, 2.0), (40.0, -12.0, 2.0),
                      (55.0, -12.0, 2.0), (40.0, 12.0, 2.0))


def case1_moving_scatterers(duration_s: float = 12.0, carrier_hz: float = 27.85e9) -> PropagationScene:
    """Three cars approaching TX/RX and a pedestrian walking away.

    TX and RX face the same direction down the street, so the direct path
    leaves both arrays at 90 deg and falls outside their sectors.
    """
    tx = Pose((0.0, 0.0, 3.5), 0.0)
    rx = Pose((0.0, -10.0, 1.8), 0.0)
    cars = [
        ("car1", (90.0, -3.0, 1.0), 6.0, 6.0),
        ("car2", (97.0, -5.5, 1.0), 6.2, 6.0),
        ("car3", (104.0, -8.0, 1.0), 6.4, 6.0),
    ]
    scatterers = [Scatterer(n, Trajectory.linear(p, (-v, 0.0, 0.0), 0.0, duration_s),
                            reflection_loss_db=loss)
                  for n, p, v, loss in cars]
    scatterers.append(Scatterer("pedestrian", Trajectory.linear((15.0, 2.0, 1.2), (1.4, 0.0, 0.0),
                                                                0.0, duration_s),
                                reflection_loss_db=22.0))
    return PropagationScene(tx, rx, tuple(scatterers), carrier_hz, (0.0, duration_s),
                            name="case1_moving_scatterers")


def _ideal_beam_gain_db(geometry: ArrayGeometry, azimuth_deg: float) -> float:
    return 10 * np.log10(geometry.num_elements) + 20 * np.log10(
        float(geometry.element_amplitude(azimuth_deg, 0.0)))


def case2_blockage(vehicle: str = "truck", reflection_margin_db: float = 10.0,
                   blockage_depth_db: float | None = None, vehicle_height_m: float | None = None,
                   duration_s: float = 12.0, carrier_hz: float = 27.85e9,
                   geometry: ArrayGeometry | None = None, background_scatterers: bool = False,
                   background_level_db: float = 25.0) -> PropagationScene:
    """LOS plus one wall reflection, cut in turn by a vehicle crossing the street.

    Path directions relative to the arrays are LOS (TX -5, RX -25) deg and
    reflection (TX 35, RX -35) deg. ``reflection_margin_db`` sets how much
    weaker the reflection is than the LOS as seen through ideal beams
    steered at each path. The vehicle cuts the reflection for about
    t in [3, 4.8] s and the LOS for about t in [5.5, 9] s.

    With ``background_scatterers`` five fixed wall points are added, each
    ``background_level_db`` below the LOS in path gain. They stand for the
    weak paths of a real street that carry a visible share of the power
    once the LOS is blocked.
    """
    geometry = geometry or ArrayGeometry(carrier_hz=carrier_hz)
    height, length, loss = VEHICLES[vehicle]
    if vehicle_height_m is not None:
        height = vehicle_height_m
    if blockage_depth_db is not None:
        loss = blockage_depth_db

    separation = 80.0
    tx = Pose((0.0, 0.0, 3.5), 5.0)
    rx = Pose((separation, 0.0, 1.8), 205.0)
    # reflector where the TX ray at 40 deg meets the RX ray at 170 deg
    tx_leg = separation * np.sin(np.radians(10.0)) / np.sin(np.radians(130.0))
    refl_xy = tx_leg * np.array([np.cos(np.radians(40.0)), np.sin(np.radians(40.0))])
    refl = np.array([refl_xy[0], refl_xy[1], 2.65])

    los_len = np.linalg.norm(rx.xyz - tx.xyz)
    refl_len = np.linalg.norm(refl - tx.xyz) + np.linalg.norm(rx.xyz - refl)
    beam_delta = (_ideal_beam_gain_db(geometry, 35.0) + _ideal_beam_gain_db(geometry, -35.0)
                  - _ideal_beam_gain_db(geometry, -5.0) - _ideal_beam_gain_db(geometry, -25.0))
    spreading_delta = 20 * np.log10(refl_len / los_len)
    refl_loss = max(reflection_margin_db - spreading_delta + beam_delta, 0.0)

    # The vehicle drives along -y on the line x = 16 m. It crosses the
    # reflector->RX leg first and the LOS afterwards, slowing down on the
    # way, so the two cuts last about 1.8 s and 3.5 s.
    lane_x = 16.0
    y_cross = refl[1] * (separation - lane_x) / (separation - refl[0])
    half = length / 2
    times = [0.0, 3.0, 4.8, 5.5, 9.0, duration_s]
    ys = [y_cross + half + 3.0 * 4.44, y_cross + half, y_cross - half, half, -half,
          -half - 2.3 * (duration_s - 9.0)]
    vehicle_sc = Scatterer(vehicle, Trajectory(times, [(lane_x, y, 0.0) for y in ys]),
                           kind=BLOCKER_SCREEN, extent_m=(length, height), blockage_loss_db=loss,
                           axis_azimuth_deg=-90.0)
    wall = Scatterer("wall", Trajectory.static(refl), reflection_loss_db=float(refl_loss))
    scatterers = [wall, vehicle_sc]
    if background_scatterers:
        for k, point in enumerate(_BACKGROUND_POINTS):
            p = np.array(point)
            length = np.linalg.norm(p - tx.xyz) + np.linalg.norm(rx.xyz - p)
            loss = background_level_db - 20 * np.log10(length / los_len)
            scatterers.append(Scatterer(f"background{k}", Trajectory.static(p),
                                        reflection_loss_db=float(max(loss, 0.0))))
    return PropagationScene(tx, rx, tuple(scatterers), carrier_hz, (0.0, duration_s),
                            name=f"case2_blockage_{vehicle}")


def scenario_templates() -> dict:
    return {
        "case1_moving_scatterers": case1_moving_scatterers(),
        "case2_blockage": case2_blockage("truck"),
    }
