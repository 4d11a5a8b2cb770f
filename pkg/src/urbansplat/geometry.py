"""Core geometry: quaternions, covariance assembly, rigid pose composition,
time-conditioned SH appearance, and the EWA projection of a 3D Gaussian to
screen space.

Everything here is plain float64 numpy and shape-polymorphic where it is
cheap to be. The numba kernels in rasterizer/_kernels.py re-implement the
hot subset; tests pin the kernels to these functions.

Conventions:
  quaternions are scalar-first (w, x, y, z), stored unnormalized,
  normalized at every use site;
  world frame is z-up, meters;
  camera maps world to camera as p = R @ x + t with +z forward;
  pixel (u, v) = (fx*x/z + cx, fy*y/z + cy), integer coords are pixel
  centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# 2D low-pass added to every projected covariance, in px^2. Guarantees a
# footprint of at least ~0.5 px so sub-pixel Gaussians do not alias away.
LOWPASS_2D = 0.3

# Screen-space support is cut where alpha can no longer reach this value;
# also the blend-time skip threshold.
ALPHA_THRESHOLD = 1.0 / 255.0

# Alpha saturates here; keeps 1 - alpha away from zero so transmittance
# stays recoverable by division in the backward pass.
ALPHA_CLAMP = 0.99

# View-frustum guard factor: points outside 1.3x the image field of view
# are culled rather than clamped onto the guard band.
FRUSTUM_GUARD = 1.3

NEAR_CLIP = 0.2

# Real SH constants, Sloan's polynomial table (same basis as the reference
# splatting rasterizer).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


# ---------------------------------------------------------------------------
# quaternions / rotations


def quat_normalize(q):
    """Return q / |q|. Raises on zero norm (degenerate rotation state)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_to_rotmat(q):
    """Unit-normalizes q = (w, x, y, z) and returns the (..., 3, 3) rotation."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_multiply(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotation_z(theta):
    """Rotation about +z by theta (radians), (..., 3, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3), dtype=np.float64)
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


def rotation_z_grad(theta):
    """d/dtheta of rotation_z."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    dR = np.zeros(theta.shape + (3, 3), dtype=np.float64)
    dR[..., 0, 0] = -s
    dR[..., 0, 1] = -c
    dR[..., 1, 0] = c
    dR[..., 1, 1] = -s
    return dR


def build_covariance(log_scale, quaternion):
    """3D covariance R S S^T R^T from per-axis log scales and a rotation
    quaternion. Symmetric PSD by construction; broadcasting over leading
    dims.
    """
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    R = quat_to_rotmat(quaternion)
    M = R * s[..., None, :]  # R @ diag(s)
    return M @ np.swapaxes(M, -1, -2)


def quat_rotmat_backward(q, dR):
    """Gradient of a loss wrt the UNNORMALIZED quaternion q given the
    gradient dR wrt the rotation matrix built by quat_to_rotmat.

    Chains through the normalization: dL/dq = (I - qh qh^T)/|q| @ dL/dqh.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / n
    w, x, y, z = qh[..., 0], qh[..., 1], qh[..., 2], qh[..., 3]
    g = np.asarray(dR, dtype=np.float64)

    # dR/d(qh_k) contracted with g, entries from the quat_to_rotmat table.
    dw = (
        -2 * z * g[..., 0, 1] + 2 * y * g[..., 0, 2]
        + 2 * z * g[..., 1, 0] - 2 * x * g[..., 1, 2]
        - 2 * y * g[..., 2, 0] + 2 * x * g[..., 2, 1]
    )
    dx = (
        2 * y * g[..., 0, 1] + 2 * z * g[..., 0, 2]
        + 2 * y * g[..., 1, 0] - 4 * x * g[..., 1, 1] - 2 * w * g[..., 1, 2]
        + 2 * z * g[..., 2, 0] + 2 * w * g[..., 2, 1] - 4 * x * g[..., 2, 2]
    )
    dy = (
        -4 * y * g[..., 0, 0] + 2 * x * g[..., 0, 1] + 2 * w * g[..., 0, 2]
        + 2 * x * g[..., 1, 0] + 2 * z * g[..., 1, 2]
        - 2 * w * g[..., 2, 0] + 2 * z * g[..., 2, 1] - 4 * y * g[..., 2, 2]
    )
    dz = (
        -4 * z * g[..., 0, 0] - 2 * w * g[..., 0, 1] + 2 * x * g[..., 0, 2]
        + 2 * w * g[..., 1, 0] - 4 * z * g[..., 1, 1] + 2 * y * g[..., 1, 2]
        + 2 * x * g[..., 2, 0] + 2 * y * g[..., 2, 1]
    )
    dqh = np.stack([dw, dx, dy, dz], axis=-1)
    # project out the radial component, divide by the norm
    return (dqh - qh * np.sum(dqh * qh, axis=-1, keepdims=True)) / n


# ---------------------------------------------------------------------------
# rigid pose tracks


def effective_pose(rotation, translation, delta_yaw, delta_translation):
    """Tracked pose refined by the learnable residual:
    R' = R @ Rz(delta_yaw), T' = T + delta_translation.
    """
    R = np.asarray(rotation, dtype=np.float64)
    Rp = R @ rotation_z(delta_yaw)
    Tp = np.asarray(translation, dtype=np.float64) + np.asarray(
        delta_translation, dtype=np.float64
    )
    return Rp, Tp


def object_to_world(mu_obj, quat_obj, rotation, translation):
    """Transform object-local Gaussians into world frame.

    mu_w = R mu_o + T; the world-frame orientation matrix is R @ R(q_o).
    Returns (mu_w (..., 3), R_w (..., 3, 3)).
    """
    R = np.asarray(rotation, dtype=np.float64)
    T = np.asarray(translation, dtype=np.float64)
    mu_w = mu_obj @ R.T + T
    R_w = R @ quat_to_rotmat(quat_obj)
    return mu_w, R_w


# ---------------------------------------------------------------------------
# appearance


def fourier_basis(k, t, n_frames):
    """Cosine feature vector (cos(i*pi*t/n_frames))_{i=0..k-1}."""
    i = np.arange(k, dtype=np.float64)
    return np.cos(i * np.pi * float(t) / float(n_frames))


def eval_fourier_sh(coeffs, t, n_frames):
    """Collapse time-indexed SH coefficients to a single SH vector at time t.

    coeffs has shape (..., k, B, 3): k Fourier coefficients per SH basis
    function per channel. Returns (..., B, 3).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis = fourier_basis(coeffs.shape[-3], t, n_frames)
    return np.einsum("...kbc,k->...bc", coeffs, basis)


def sh_basis(dirs, degree):
    """Real SH basis values for unit directions, shape (..., (degree+1)^2)."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"sh degree {degree} unsupported")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + ((degree + 1) ** 2,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_grad(dirs, degree):
    """d(sh_basis)/d(dir) for unit directions, shape (..., B, 3).

    Derivative wrt the raw (unnormalized-direction) components is obtained
    by the caller through the normalization Jacobian.
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise ValueError(f"sh degree {degree} unsupported")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    B = (degree + 1) ** 2
    g = np.zeros(dirs.shape[:-1] + (B, 3), dtype=np.float64)
    if degree >= 1:
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = SH_C2[2] * (-2 * x)
        g[..., 6, 1] = SH_C2[2] * (-2 * y)
        g[..., 6, 2] = SH_C2[2] * (4 * z)
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = SH_C2[4] * (2 * x)
        g[..., 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        g[..., 9, 0] = SH_C3[0] * 6 * x * y
        g[..., 9, 1] = SH_C3[0] * (3 * x * x - 3 * y * y)
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4 * z * z - x * x - 3 * y * y)
        g[..., 11, 2] = SH_C3[2] * (8 * y * z)
        g[..., 12, 0] = SH_C3[3] * (-6 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6 * z * z - 3 * x * x - 3 * y * y)
        g[..., 13, 0] = SH_C3[4] * (4 * z * z - 3 * x * x - y * y)
        g[..., 13, 1] = SH_C3[4] * (-2 * x * y)
        g[..., 13, 2] = SH_C3[4] * (8 * x * z)
        g[..., 14, 0] = SH_C3[5] * (2 * x * z)
        g[..., 14, 1] = SH_C3[5] * (-2 * y * z)
        g[..., 14, 2] = SH_C3[5] * (x * x - y * y)
        g[..., 15, 0] = SH_C3[6] * (3 * x * x - 3 * y * y)
        g[..., 15, 1] = SH_C3[6] * (-6 * x * y)
    return g


def eval_sh_color(sh, view_dir, degree=None):
    """RGB from SH coefficients sh (..., B, 3) and unit view directions.

    color = max(0, sum_b sh_b Y_b(dir) + 0.5); the +0.5 offset centers the
    DC term so zero coefficients give mid-gray before clamping.
    """
    sh = np.asarray(sh, dtype=np.float64)
    B = sh.shape[-2]
    if degree is None:
        degree = int(round(np.sqrt(B))) - 1
    basis = sh_basis(view_dir, degree)
    rgb = np.einsum("...b,...bc->...c", basis[..., : sh.shape[-2]], sh) + 0.5
    return np.maximum(rgb, 0.0)


# ---------------------------------------------------------------------------
# camera + projection


@dataclass
class Camera:
    """Pinhole camera. R, t map world points into the camera frame
    (p_cam = R @ p_world + t); +z looks forward.
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    near_clip: float = NEAR_CLIP

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("non-positive image size")
        fx, fy = self.K[0, 0], self.K[1, 1]
        cx, cy = self.K[0, 2], self.K[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("non-positive focal length")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point outside image")
        if self.near_clip <= 0:
            raise ValueError("near_clip must be positive")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-6:
            raise ValueError("camera R is not a rotation")

    @property
    def fx(self):
        return self.K[0, 0]

    @property
    def fy(self):
        return self.K[1, 1]

    @property
    def cx(self):
        return self.K[0, 2]

    @property
    def cy(self):
        return self.K[1, 2]

    @property
    def center(self):
        """Camera origin in world coordinates, -R^T t."""
        return -self.R.T @ self.t

    @property
    def tan_half_fov(self):
        return 0.5 * self.width / self.fx, 0.5 * self.height / self.fy

    def to_json(self):
        return {
            "K": self.K.tolist(),
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "width": int(self.width),
            "height": int(self.height),
            "near_clip": float(self.near_clip),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            K=np.array(d["K"], dtype=np.float64),
            R=np.array(d["R"], dtype=np.float64),
            t=np.array(d["t"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
            near_clip=float(d.get("near_clip", NEAR_CLIP)),
        )

    def ray_directions(self):
        """Unit world-space ray directions through every pixel center,
        shape (H, W, 3). Used for sky shading."""
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        x = (uu - self.cx) / self.fx
        y = (vv - self.cy) / self.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        d_world = d_cam @ self.R  # R^T applied row-wise
        return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


@dataclass
class ProjectedGaussian:
    """Screen-space footprint of one world Gaussian under a camera."""

    mean2d: np.ndarray       # (2,) pixels
    cov2d: np.ndarray        # (2, 2) px^2, low-pass already added
    view_depth: float        # camera-frame z, used for sorting and depth maps
    radius: float            # support radius in px (threshold-covering)
    source_index: int = -1


def support_radius(cov2d, opacity):
    """Pixel radius beyond which alpha < ALPHA_THRESHOLD for this footprint.

    At least the 3-sigma radius; wider for opacity > exp(-4.5)/threshold
    so the binned rectangle covers every pixel the blend would not skip.
    """
    a, b, c = cov2d[..., 0, 0], cov2d[..., 0, 1], cov2d[..., 1, 1]
    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    lam_max = mid + disc
    q = 2.0 * np.log(np.maximum(opacity, ALPHA_THRESHOLD) / ALPHA_THRESHOLD)
    return np.ceil(np.sqrt(np.maximum(9.0, q) * lam_max))


def project_gaussian(mu_w, cov_w, camera, opacity=1.0):
    """EWA projection of one world-space Gaussian.

    Returns a ProjectedGaussian, or None when culled: behind the near
    plane, or outside the FRUSTUM_GUARD-scaled field of view.
    cov2d = J W cov_w W^T J^T + LOWPASS_2D * I with J the perspective
    Jacobian at the point.
    """
    p = camera.R @ np.asarray(mu_w, dtype=np.float64) + camera.t
    if p[2] <= camera.near_clip:
        return None
    tanx, tany = camera.tan_half_fov
    if abs(p[0] / p[2]) > FRUSTUM_GUARD * tanx:
        return None
    if abs(p[1] / p[2]) > FRUSTUM_GUARD * tany:
        return None
    fx, fy = camera.fx, camera.fy
    z = p[2]
    J = np.array(
        [
            [fx / z, 0.0, -fx * p[0] / (z * z)],
            [0.0, fy / z, -fy * p[1] / (z * z)],
        ]
    )
    A = J @ camera.R
    cov2d = A @ np.asarray(cov_w, dtype=np.float64) @ A.T
    cov2d[0, 0] += LOWPASS_2D
    cov2d[1, 1] += LOWPASS_2D
    mean2d = np.array([fx * p[0] / z + camera.cx, fy * p[1] / z + camera.cy])
    return ProjectedGaussian(
        mean2d=mean2d,
        cov2d=cov2d,
        view_depth=float(z),
        radius=float(support_radius(cov2d, opacity)),
    )
