"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one-to-one and are used when the compiled
extension is unavailable (or when ``GLIDERMDO_PURE_PYTHON=1``).
"""

import numpy as np

_FOUR_PI = 4.0 * np.pi
_TINY = 1e-12


def _bound_segment(P, A, B):
    r1 = P - A
    r2 = P - B
    cross = np.cross(r1, r2)
    r1n = np.linalg.norm(r1, axis=-1)
    r2n = np.linalg.norm(r2, axis=-1)
    denom = r1n * r2n * (r1n * r2n + np.einsum("...k,...k->...", r1, r2))
    cross2 = np.einsum("...k,...k->...", cross, cross)
    lseg2 = np.einsum("...k,...k->...", B - A, B - A)
    ok = (cross2 > _TINY * _TINY * lseg2) & (np.abs(denom) > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(ok, (r1n + r2n) / np.where(ok, denom, 1.0), 0.0)
    return fac[..., None] * cross


def _trailing_leg(P, A):
    # semi-infinite filament from A to +infinity along +x
    r = P - A
    rn = np.linalg.norm(r, axis=-1)
    ucr = np.stack([np.zeros_like(r[..., 0]), -r[..., 2], r[..., 1]], axis=-1)
    denom = rn * (rn - r[..., 0])
    h2 = r[..., 1] ** 2 + r[..., 2] ** 2
    ok = h2 > _TINY * _TINY * np.maximum(rn * rn, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(ok, 1.0 / np.where(ok, denom, 1.0), 0.0)
    return fac[..., None] * ucr


def _ring(P, C, wake):
    # closed loop C0 -> C1 -> C2 -> C3 -> C0; wake rings replace C2 -> C3 by
    # semi-infinite legs leaving C2 and entering C3
    v = _bound_segment(P, C[..., 0, :], C[..., 1, :])
    v += _bound_segment(P, C[..., 1, :], C[..., 2, :])
    v += (1.0 - wake)[..., None] * _bound_segment(P, C[..., 2, :], C[..., 3, :])
    v += _bound_segment(P, C[..., 3, :], C[..., 0, :])
    v += wake[..., None] * (_trailing_leg(P, C[..., 2, :]) - _trailing_leg(P, C[..., 3, :]))
    return v


def aic_matrix(colloc, normals, corners, wake):
    """Normal-wash influence matrix of symmetric vortex-ring pairs.

    ``aic[i, j]`` is the velocity normal to panel ``i`` induced at its
    collocation point by unit-strength ring ``j`` together with its mirror
    image about the ``y = 0`` plane. ``corners`` is ``(m, 4, 3)``; rings with
    ``wake[j] = 1`` shed their aft side as two legs running to ``+x``
    infinity.
    """
    colloc = np.asarray(colloc, dtype=float)
    normals = np.asarray(normals, dtype=float)
    C = np.asarray(corners, dtype=float)[None, :, :, :]
    w = np.asarray(wake, dtype=float)[None, :]
    flip = np.array([1.0, -1.0, 1.0])
    out = np.empty((len(colloc), C.shape[1]))
    # row blocks bound the (block, m, 3) temporaries
    step = max(1, 2**22 // max(1, 3 * C.shape[1]))
    for s in range(0, len(colloc), step):
        P = colloc[s : s + step, None, :]
        v = _ring(P, C, w) - _ring(P, C * flip, w)
        out[s : s + step] = np.einsum("ijk,ik->ij", v, normals[s : s + step]) / _FOUR_PI
    return out


def containment_sum(points, centers, axes, eps):
    """Summed pointwise containment violation for a batch of hulls.

    ``centers`` is ``(k, 2)`` holding ``(xi0, zeta0)``; ``axes`` is ``(k, 3)``
    holding the external semi-axes. Returns a ``(k,)`` array.
    """
    points = np.asarray(points, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    dx = (points[None, :, 0] - centers[:, 0:1]) / axes[:, 0:1]
    dy = points[None, :, 1] / axes[:, 1:2]
    dz = (points[None, :, 2] - centers[:, 1:2]) / axes[:, 2:3]
    d2 = dx * dx + dy * dy + dz * dz
    with np.errstate(divide="ignore"):
        v = np.maximum(0.0, (1.0 + eps) / d2 - 1.0)
    return v.sum(axis=1)


def hvi_batch(front, ref, samples):
    """Hypervolume improvement of each sample over a sorted 2-D front.

    ``front`` must be mutually non-dominated, dominate ``ref`` and be sorted
    by the first objective ascending.
    """
    front = np.asarray(front, dtype=float).reshape(-1, 2)
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    r1, r2 = float(ref[0]), float(ref[1])
    # vertical strips [a_k, b_k) with ceiling h_k
    a = np.concatenate([[-np.inf], front[:, 0]])
    b = np.concatenate([front[:, 0], [r1]])
    h = np.concatenate([[r2], front[:, 1]])
    y1 = samples[:, 0:1]
    y2 = samples[:, 1:2]
    width = np.clip(b[None, :] - np.maximum(y1, a[None, :]), 0.0, None)
    height = np.clip(h[None, :] - y2, 0.0, None)
    return (width * height).sum(axis=1)
