"""Minimal PLY point-cloud I/O: float32 xyz, optional uchar rgb,
ascii and binary_little_endian variants. Enough for LiDAR sweeps and
SfM seeds; anything fancier is rejected loudly.
"""

from __future__ import annotations

import numpy as np

_PROP_TYPES = {
    "float": ("<f4", 4),
    "float32": ("<f4", 4),
    "double": ("<f8", 8),
    "float64": ("<f8", 8),
    "uchar": ("u1", 1),
    "uint8": ("u1", 1),
    "int": ("<i4", 4),
    "int32": ("<i4", 4),
}


def read_ply(path):
    """Returns (points (N, 3) float64, colors (N, 3) float64 in [0,1] or None)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        count = None
        props = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            tokens = line.decode("ascii").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    count = int(tokens[2])
                elif int(tokens[2]) != 0:
                    raise ValueError(f"{path}: only vertex elements supported")
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise ValueError(f"{path}: list properties unsupported")
                if tokens[1] not in _PROP_TYPES:
                    raise ValueError(f"{path}: property type {tokens[1]} unsupported")
                props.append((tokens[2], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ValueError(f"{path}: format {fmt} unsupported")
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        names = [p[0] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise ValueError(f"{path}: missing {axis} property")

        if fmt == "ascii":
            body = f.read().decode("ascii").split()
            vals = np.array(body, dtype=np.float64)
            if vals.size != count * len(props):
                raise ValueError(f"{path}: vertex data size mismatch")
            table = vals.reshape(count, len(props))
            cols = {name: table[:, i] for i, (name, _) in enumerate(props)}
            # ascii colors are stored as 0..255 integers by convention
            col_scale = 255.0
        else:
            dtype = np.dtype([(name, _PROP_TYPES[t][0]) for name, t in props])
            raw = f.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise ValueError(f"{path}: vertex data size mismatch")
            rec = np.frombuffer(raw, dtype=dtype)
            cols = {name: rec[name].astype(np.float64) for name, _ in props}
            col_scale = 255.0 if any(
                t in ("uchar", "uint8") for n, t in props if n == "red"
            ) else 1.0

    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=-1)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=-1) / col_scale
    return pts, colors


def write_ply(path, points, colors=None, binary=True):
    """xyz float32 (+ optional uchar rgb from floats in [0,1])."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {n}")
    header += ["property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if colors.shape[0] != n:
            raise ValueError("colors/points length mismatch")
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            if colors is None:
                f.write(points.astype("<f4").tobytes())
            else:
                dtype = np.dtype(
                    [(c, "<f4") for c in "xyz"]
                    + [(c, "u1") for c in ("red", "green", "blue")]
                )
                rec = np.empty(n, dtype=dtype)
                rec["x"], rec["y"], rec["z"] = points.astype("<f4").T
                rgb = np.rint(np.clip(colors, 0, 1) * 255).astype("u1")
                rec["red"], rec["green"], rec["blue"] = rgb.T
                f.write(rec.tobytes())
        else:
            f32 = points.astype(np.float32)
            if colors is None:
                lines = [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}" for p in f32]
            else:
                rgb = np.rint(np.clip(colors, 0, 1) * 255).astype(int)
                lines = [
                    f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}"
                    for p, c in zip(f32, rgb)
                ]
            f.write(("\n".join(lines) + "\n").encode("ascii"))
