"""Learnable sky: a cubemap sampled along per-pixel ray directions and
composited behind the splatted foreground as C = C_fg + (1 - O) * C_sky.

Face order (+x, -x, +y, -y, +z, -z), face-local coordinates per the GL
cube-map convention, texel centers on the half-integer grid, clamp-to-edge
bilinear filtering. Sampling is linear in the texels, so the backward pass
is a scatter of the same four tap weights.
"""

from __future__ import annotations

import numpy as np


def face_uv(dirs):
    """Map direction vectors to (face index, u, v) with u, v in [0, 1].

    Vectorized over leading dims; directions need not be unit length.
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    # argmax with fixed x > y > z precedence on ties
    face = np.where(
        (ax >= ay) & (ax >= az),
        np.where(x >= 0, 0, 1),
        np.where(ay >= az, np.where(y >= 0, 2, 3), np.where(z >= 0, 4, 5)),
    )
    ma = np.maximum(np.maximum(ax, ay), az)
    ma = np.where(ma == 0, 1.0, ma)  # zero vector maps to face 0 center
    sc = np.choose(face, [-z, z, x, x, x, -x])
    tc = np.choose(face, [-y, -y, z, -z, -y, -y])
    u = 0.5 * (sc / ma + 1.0)
    v = 0.5 * (tc / ma + 1.0)
    return face.astype(np.int64), u, v


def _taps(face, u, v, resolution):
    """Bilinear tap indices and weights with clamp-to-edge."""
    R = resolution
    s = u * R - 0.5
    t = v * R - 0.5
    i0 = np.floor(s)
    j0 = np.floor(t)
    fu = s - i0
    fv = t - j0
    i0 = np.clip(i0, 0, R - 1).astype(np.int64)
    j0 = np.clip(j0, 0, R - 1).astype(np.int64)
    i1 = np.minimum(i0 + 1, R - 1)
    j1 = np.minimum(j0 + 1, R - 1)
    w00 = (1 - fu) * (1 - fv)
    w10 = fu * (1 - fv)
    w01 = (1 - fu) * fv
    w11 = fu * fv
    # faces indexed [face][row=t][col=s]
    return (
        (face, j0, i0, w00),
        (face, j0, i1, w10),
        (face, j1, i0, w01),
        (face, j1, i1, w11),
    )


def sample_cubemap(faces, dirs):
    """Sample colors along dirs; faces is (6, R, R, 3). Returns (..., 3)."""
    faces = np.asarray(faces, dtype=np.float64)
    face, u, v = face_uv(dirs)
    out = np.zeros(face.shape + (3,), dtype=np.float64)
    for f, j, i, w in _taps(face, u, v, faces.shape[1]):
        out += faces[f, j, i] * w[..., None]
    return out


def splat_cubemap_grad(faces_shape, dirs, d_colors):
    """Adjoint of sample_cubemap: scatter per-pixel color gradients back
    onto the texels. Returns (6, R, R, 3)."""
    grad = np.zeros(faces_shape, dtype=np.float64)
    face, u, v = face_uv(dirs)
    d = np.asarray(d_colors, dtype=np.float64)
    for f, j, i, w in _taps(face, u, v, faces_shape[1]):
        np.add.at(grad, (f, j, i), d * w[..., None])
    return grad
