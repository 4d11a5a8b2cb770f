"""Training losses with hand-derived gradients.

Every function returns (value, gradient) with the gradient taken wrt the
first argument. Reductions are means so the weights in the total loss are
resolution-independent.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

PROB_EPS = 1e-6


def _gauss_kernel():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


_K = _gauss_kernel()


def _filt(img):
    """Separable Gaussian window, zero padding (constant 0 boundary)."""
    out = correlate1d(img, _K, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _K, axis=1, mode="constant", cval=0.0)


def l1_loss(pred, target):
    diff = pred - target
    n = diff.size
    value = float(np.abs(diff).sum() / n)
    return value, np.sign(diff) / n


def ssim(pred, target):
    """Mean SSIM over pixels and channels plus d(SSIM)/d(pred).

    11x11 Gaussian window (sigma 1.5), zero-padded; local statistics are
    windowed moments; the gradient chains through mu, E[x^2], E[xy] and
    uses the window's self-adjointness (symmetric kernel, zero pad).
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    mu_x = _filt(x)
    mu_y = _filt(y)
    ex2 = _filt(x * x)
    ey2 = _filt(y * y)
    exy = _filt(x * y)
    sx = ex2 - mu_x * mu_x
    sy = ey2 - mu_y * mu_y
    sxy = exy - mu_x * mu_y

    A1 = 2 * mu_x * mu_y + SSIM_C1
    A2 = 2 * sxy + SSIM_C2
    B1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    B2 = sx + sy + SSIM_C2
    S = (A1 * A2) / (B1 * B2)
    n = S.size
    value = float(S.mean())

    # dS wrt the independent filtered stats (mu_x, ex2, exy); note
    # sx = ex2 - mu_x^2 and sxy = exy - mu_x mu_y fold extra mu_x terms
    # into the A2/B2 channels
    dS_dA1 = A2 / (B1 * B2)
    dS_dA2 = A1 / (B1 * B2)
    dS_dB1 = -S / B1
    dS_dB2 = -S / B2
    dS_dmu = (
        dS_dA1 * 2 * mu_y
        + dS_dA2 * 2 * (-mu_y)
        + dS_dB1 * 2 * mu_x
        + dS_dB2 * (-2 * mu_x)
    )
    dS_dex2 = dS_dB2
    dS_dexy = dS_dA2 * 2

    grad = _filt(dS_dmu) + 2 * x * _filt(dS_dex2) + y * _filt(dS_dexy)
    grad /= n
    if np.asarray(pred).ndim == 2:
        grad = grad[:, :, 0]
    return value, grad


def color_loss(pred, target, ssim_weight=0.2):
    """(1 - w) L1 + w (1 - SSIM)."""
    v1, g1 = l1_loss(pred, target)
    vs, gs = ssim(pred, target)
    value = (1.0 - ssim_weight) * v1 + ssim_weight * (1.0 - vs)
    grad = (1.0 - ssim_weight) * g1 - ssim_weight * gs
    return value, grad


def depth_loss(pred_depth, lidar_depth, lidar_mask, keep_fraction=0.95):
    """Trimmed L1 against LiDAR hits: the (1 - keep_fraction) largest
    absolute errors are dropped (dynamic scene: moving points poison a
    plain L1). Keeps k = floor(0.95 n + 0.5) pixels, ties broken by pixel
    index so the selection is deterministic.
    """
    mask = np.asarray(lidar_mask, dtype=bool)
    n = int(mask.sum())
    grad = np.zeros_like(np.asarray(pred_depth, dtype=np.float64))
    if n == 0:
        return 0.0, grad
    idx = np.nonzero(mask.ravel())[0]
    err = (np.asarray(pred_depth, dtype=np.float64).ravel() - np.asarray(
        lidar_depth, dtype=np.float64).ravel())[idx]
    k = int(np.floor(keep_fraction * n + 0.5))
    k = max(k, 1)
    order = np.lexsort((idx, np.abs(err)))
    kept = order[:k]
    value = float(np.abs(err[kept]).sum() / k)
    flat = grad.ravel()
    flat[idx[kept]] = np.sign(err[kept]) / k
    return value, grad


def sky_loss(opacity, sky_mask):
    """Binary cross-entropy pushing blended opacity to 0 on sky pixels and
    1 elsewhere. Probabilities clamped to [1e-6, 1 - 1e-6]; clamped pixels
    pass no gradient."""
    o = np.asarray(opacity, dtype=np.float64)
    s = np.asarray(sky_mask, dtype=np.float64)
    oc = np.clip(o, PROB_EPS, 1.0 - PROB_EPS)
    n = o.size
    value = float(np.mean(-s * np.log(1.0 - oc) - (1.0 - s) * np.log(oc)))
    grad = (s / (1.0 - oc) - (1.0 - s) / oc) / n
    grad[(o < PROB_EPS) | (o > 1.0 - PROB_EPS)] = 0.0
    return value, grad


def semantic_loss(logit_map, labels, ignore_index=-1):
    """Pixelwise softmax cross-entropy on the blended logit map.

    labels: (H, W) int, ignore_index pixels are skipped. Returns the mean
    over supervised pixels and the gradient wrt the logit map.
    """
    L = np.asarray(logit_map, dtype=np.float64)
    lab = np.asarray(labels)
    H, W, M = L.shape
    valid = (lab != ignore_index) & (lab >= 0) & (lab < M)
    n = int(valid.sum())
    grad = np.zeros_like(L)
    if n == 0:
        return 0.0, grad
    z = L[valid]
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    tgt = lab[valid]
    rows = np.arange(n)
    value = float(-np.log(np.clip(p[rows, tgt], PROB_EPS, None)).mean())
    g = p.copy()
    g[rows, tgt] -= 1.0
    grad[valid] = g / n
    return value, grad


def opacity_entropy(opacities):
    """Mean binary entropy of per-Gaussian opacities; pushes object
    Gaussians toward fully opaque or empty once densification has settled.
    Gradient is wrt the opacities (sigmoid outputs), not the logits."""
    o = np.asarray(opacities, dtype=np.float64)
    if o.size == 0:
        return 0.0, np.zeros_like(o)
    oc = np.clip(o, PROB_EPS, 1.0 - PROB_EPS)
    value = float(np.mean(-oc * np.log(oc) - (1.0 - oc) * np.log(1.0 - oc)))
    grad = np.log((1.0 - oc) / oc) / o.size
    grad[(o < PROB_EPS) | (o > 1.0 - PROB_EPS)] = 0.0
    return value, grad
