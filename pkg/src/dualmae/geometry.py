"""Point-cloud sampling, grouping, and the squared-L2 Chamfer loss.

All nearest-neighbor computations are exact brute force (desk scale), with
ties broken by lowest index so runs are reproducible.  Clouds and centers
are float32; patch offsets are stored float64 (exact for float32 inputs),
so patches[g] + centers[g] reproduces the parent points bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _accum, _make

__all__ = ["PointCloud", "PatchSet", "normalize", "fps", "knn_group",
           "patchify", "chamfer_l2"]


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float32
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass
class PatchSet:
    centers: np.ndarray         # (G, 3) float32
    patches: np.ndarray         # (G, k, 3) float64, center-relative
    source_indices: np.ndarray  # (G, k) int

    @property
    def num_patches(self):
        return self.centers.shape[0]

    @property
    def patch_size(self):
        return self.patches.shape[1]


def normalize(cloud: PointCloud) -> PointCloud:
    """Shift the centroid to the origin and scale the farthest point to norm 1."""
    pts = cloud.points.astype(np.float64)
    centered = pts - pts.mean(axis=0)
    radius = np.sqrt((centered * centered).sum(axis=1).max())
    if radius < 1e-12:
        raise ValueError("degenerate point cloud: all points identical")
    return PointCloud((centered / radius).astype(np.float32), label=cloud.label)


def fps(cloud: PointCloud, m: int, seed) -> np.ndarray:
    """Greedy farthest-point sampling; returns m indices.

    The first index is drawn from `seed`; each next index maximizes the
    minimum distance to the chosen set, ties going to the lowest index.
    """
    n = len(cloud)
    if not 1 <= m <= n:
        raise ValueError(f"fps asked for {m} of {n} points")
    pts = cloud.points.astype(np.float64)
    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    chosen = np.empty(m, dtype=np.intp)
    chosen[0] = start
    d = ((pts - pts[start]) ** 2).sum(axis=1)
    d[start] = -1.0  # never re-pick
    for i in range(1, m):
        nxt = int(np.argmax(d))
        chosen[i] = nxt
        d = np.minimum(d, ((pts - pts[nxt]) ** 2).sum(axis=1))
        d[nxt] = -1.0
    return chosen


def knn_group(cloud: PointCloud, center_indices, k: int) -> PatchSet:
    """Group the k nearest points (center included) around each center.

    Patch coordinates are stored center-relative; distance ties break by
    lowest index (stable sort).
    """
    n = len(cloud)
    if not 1 <= k <= n:
        raise ValueError(f"knn_group asked for {k} of {n} points")
    idx = np.asarray(center_indices, dtype=np.intp)
    pts = cloud.points.astype(np.float64)
    centers = pts[idx]                                   # (G, 3)
    d2 = ((pts[None, :, :] - centers[:, None, :]) ** 2).sum(axis=-1)  # (G, N)
    order = np.argsort(d2, axis=1, kind="stable")
    members = order[:, :k]                               # (G, k)
    patches = pts[members] - centers[:, None, :]         # exact in float64
    return PatchSet(centers=cloud.points[idx].copy(),
                    patches=patches,
                    source_indices=members)


def patchify(cloud: PointCloud, num_patches: int, k: int, seed) -> PatchSet:
    """fps + knn_group; the standard patch construction for one cloud."""
    return knn_group(cloud, fps(cloud, num_patches, seed), k)


def chamfer_l2(recon, target) -> Tensor:
    """Symmetric mean of squared nearest-neighbor distances.

    Accepts (..., M, 3) vs (..., N, 3) with identical leading dims; the
    per-set values are averaged over the leading dims, so patch-wise batched
    calls return the mean patch loss.  Differentiable w.r.t. both inputs
    (teacher/target side is usually a plain array and gets no gradient).
    """
    r = recon if isinstance(recon, Tensor) else Tensor(recon)
    t = target if isinstance(target, Tensor) else Tensor(target)
    rd, td = r.data, t.data
    if rd.ndim < 2 or td.ndim < 2 or rd.shape[-1] != 3 or td.shape[-1] != 3:
        raise ValueError(f"chamfer_l2 needs (..., M, 3) point sets, got {rd.shape} and {td.shape}")
    if rd.shape[:-2] != td.shape[:-2]:
        raise ValueError(f"chamfer_l2 leading dims differ: {rd.shape} vs {td.shape}")
    m, n = rd.shape[-2], td.shape[-2]
    if m == 0 or n == 0:
        raise ValueError("chamfer_l2 on an empty point set")
    lead = int(np.prod(rd.shape[:-2], dtype=np.int64)) if rd.ndim > 2 else 1

    diff = rd[..., :, None, :] - td[..., None, :, :]
    d2 = (diff * diff).sum(axis=-1)                      # (..., M, N)
    nn_r = d2.argmin(axis=-1)                            # (..., M)
    nn_t = d2.argmin(axis=-2)                            # (..., N)
    min_r = np.take_along_axis(d2, nn_r[..., :, None], axis=-1)[..., 0]
    min_t = np.take_along_axis(d2, nn_t[..., None, :], axis=-2)[..., 0, :]
    per_set = min_r.mean(axis=-1) + min_t.mean(axis=-1)  # (...,)
    value = np.asarray(per_set.mean(), dtype=rd.dtype)

    def bw(g):
        scale = g / lead
        if r.requires_grad:
            sel_t = np.take_along_axis(td, nn_r[..., :, None], axis=-2)   # (..., M, 3)
            grad_r = (2.0 / m) * (rd - sel_t)
            sel_r = np.take_along_axis(rd, nn_t[..., :, None], axis=-2)   # (..., N, 3)
            contrib = (2.0 / n) * (sel_r - td)
            flat_g = grad_r.reshape(lead, recon_m, 3)
            np.add.at(flat_g, (np.arange(lead)[:, None], nn_t.reshape(lead, n)),
                      contrib.reshape(lead, n, 3))
            _accum(r, (flat_g.reshape(rd.shape)) * scale)
        if t.requires_grad:
            sel_r = np.take_along_axis(rd, nn_t[..., :, None], axis=-2)
            grad_t = (2.0 / n) * (td - sel_r)
            sel_t = np.take_along_axis(td, nn_r[..., :, None], axis=-2)
            contrib = (2.0 / m) * (sel_t - rd)
            flat_g = grad_t.reshape(lead, n, 3)
            np.add.at(flat_g, (np.arange(lead)[:, None], nn_r.reshape(lead, m)),
                      contrib.reshape(lead, m, 3))
            _accum(t, (flat_g.reshape(td.shape)) * scale)

    recon_m = m
    return _make(value, (r, t), bw)
