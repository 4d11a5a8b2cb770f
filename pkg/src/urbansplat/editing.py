"""Scene editing: swap object models, translate trajectories, compose yaw
rotations. Edits apply to a copy; the input scene is untouched.

Script format (JSON):
  {"edits": [
    {"op": "swap", "a": "car_0", "b": "car_1"},
    {"op": "translate", "id": "car_0", "delta": [dx, dy, dz],
     "frames": [first, last]},
    {"op": "rotate_yaw", "id": "car_0", "angle": radians,   # or "degrees"
     "frames": [first, last]}
  ]}
frames is inclusive and optional (defaults to the whole track).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import rotation_z


@dataclass
class EditScript:
    edits: list

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        edits = obj.get("edits")
        if not isinstance(edits, list):
            raise ValueError("edit script needs an 'edits' list")
        return cls(edits=edits)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def _frame_range(edit, num_frames):
    fr = edit.get("frames")
    if fr is None:
        return 0, num_frames - 1
    a, b = int(fr[0]), int(fr[1])
    if not (0 <= a <= b < num_frames):
        raise ValueError(f"frames {fr} outside [0, {num_frames})")
    return a, b


def apply_edit(scene, script):
    """Run the script on a copy of the scene and return it."""
    if not isinstance(script, EditScript):
        script = EditScript.from_json(script)
    out = scene.copy()
    for edit in script.edits:
        op = edit.get("op")
        if op == "swap":
            a, b = edit["a"], edit["b"]
            if a not in out.objects or b not in out.objects:
                raise KeyError(f"swap: unknown object id in {a!r}, {b!r}")
            out.objects[a].gaussians, out.objects[b].gaussians = (
                out.objects[b].gaussians,
                out.objects[a].gaussians,
            )
        elif op == "translate":
            node = out.objects[edit["id"]]
            lo, hi = _frame_range(edit, node.track.num_frames)
            delta = np.asarray(edit["delta"], dtype=np.float64).reshape(3)
            node.track.translations[lo : hi + 1] += delta
        elif op == "rotate_yaw":
            node = out.objects[edit["id"]]
            lo, hi = _frame_range(edit, node.track.num_frames)
            if "angle" in edit:
                angle = float(edit["angle"])
            elif "degrees" in edit:
                angle = float(np.deg2rad(float(edit["degrees"])))
            else:
                raise ValueError("rotate_yaw needs 'angle' (radians) or 'degrees'")
            Rz = rotation_z(angle)
            for t in range(lo, hi + 1):
                node.track.rotations[t] = node.track.rotations[t] @ Rz
        else:
            raise ValueError(f"unknown edit op {op!r}")
    return out
