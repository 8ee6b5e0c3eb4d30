"""Track serialization and the canonical shipped layouts.

The paper-scale large track is reconstructed to the published gate count and
loop length (8 gates, 116 m, gate heights between 2 and 6 m inside the 70 m
cube); exact coordinates are unpublished, so the layout ships as a versioned
stand-in data file.
"""

from __future__ import annotations

import json
import math
from importlib import resources

import numpy as np

from .core import Gate, Track, vec3

TRACK_SCHEMA_VERSION = 1


def track_to_dict(track: Track) -> dict:
    return {
        "version": TRACK_SCHEMA_VERSION,
        "gates": [
            {
                "id": g.id,
                "center": [float(c) for c in g.center],
                "yaw": g.yaw,
                "inner_width": g.inner_width,
                "inner_height": g.inner_height,
                "frame_thickness": g.frame_thickness,
                "shape_id": g.shape_id,
                "base_size": g.base_size,
            }
            for g in track.gates
        ],
        "extra_waypoints": [
            {"insert_after_gate": after, "point": [float(c) for c in p]}
            for after, p in track.extra_waypoints
        ],
        "laps_for_success": track.laps_for_success,
        "bounds_side": track.bounds_side,
    }


def track_from_dict(data: dict) -> Track:
    if data.get("version") != TRACK_SCHEMA_VERSION:
        raise ValueError(f"unsupported track schema version {data.get('version')!r}")
    gates = tuple(
        Gate(
            id=g["id"],
            center=np.asarray(g["center"], dtype=float),
            yaw=float(g["yaw"]),
            inner_width=float(g.get("inner_width", 1.4)),
            inner_height=float(g.get("inner_height", 1.4)),
            frame_thickness=float(g.get("frame_thickness", 0.2)),
            shape_id=int(g.get("shape_id", 0)),
            base_size=float(g.get("base_size", 1.3)),
        )
        for g in data["gates"]
    )
    extras = tuple(
        (int(e["insert_after_gate"]), np.asarray(e["point"], dtype=float))
        for e in data.get("extra_waypoints", [])
    )
    return Track(
        gates=gates,
        extra_waypoints=extras,
        laps_for_success=int(data.get("laps_for_success", 5)),
        bounds_side=float(data.get("bounds_side", 70.0)),
    )


def generate_large_track(loop_length: float = 116.0) -> Track:
    """Programmatic construction of the canonical 8-gate layout."""
    xy = np.array(
        [
            [24.0, 0.0],
            [16.0, 11.0],
            [-1.0, 15.0],
            [-18.0, 9.0],
            [-23.5, -1.0],
            [-16.0, -11.5],
            [1.0, -13.5],
            [17.5, -9.0],
        ]
    )
    heights = np.array([2.5, 4.0, 5.5, 3.0, 2.5, 4.5, 6.0, 3.5])

    def length_3d(scale: float) -> float:
        pts = np.column_stack([xy * scale, heights])
        return sum(float(np.linalg.norm(pts[(i + 1) % 8] - pts[i])) for i in range(8))

    lo, hi = 0.5, 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if length_3d(mid) < loop_length:
            lo = mid
        else:
            hi = mid
    xy = xy * (0.5 * (lo + hi))
    gates = []
    for i in range(8):
        tangent = xy[(i + 1) % 8] - xy[(i - 1) % 8]
        yaw = math.atan2(tangent[1], tangent[0])
        gates.append(
            Gate(
                id=i,
                center=vec3(xy[i, 0], xy[i, 1], heights[i]),
                yaw=yaw,
                inner_width=1.1,
                inner_height=1.1,
                frame_thickness=0.25,
                shape_id=0,
                base_size=1.3,
            )
        )
    return Track(gates=tuple(gates))


def canonical_large_track() -> Track:
    """The shipped, versioned 8-gate track file."""
    text = resources.files("gracer.data").joinpath("large8_track.json").read_text()
    return track_from_dict(json.loads(text))


def square_test_track(side: float = 12.0, height: float = 4.0) -> Track:
    """Small square layout for unit tests."""
    pts = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    gates = []
    for i, (x, y) in enumerate(pts):
        nxt = np.array(pts[(i + 1) % 4])
        prv = np.array(pts[(i - 1) % 4])
        tangent = nxt - prv
        gates.append(
            Gate(id=i, center=vec3(x, y, height), yaw=math.atan2(tangent[1], tangent[0]))
        )
    return Track(gates=tuple(gates))
