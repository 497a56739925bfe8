"""Geometric and editing metrics.

Chamfer and F-Score work on point clouds; the IoU family voxelizes
meshes on a grid over [-1,1]^3 (cell occupied if its center is inside
the mesh or within half a cell of its surface). Multi-view consistency
is the variance of per-view visible-surface Chamfer distances.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from . import geometry, rng

VOXEL_GRID = 64
EVAL_POINTS_DESK = 4096
EVAL_POINTS_PAPER = 204800
FSCORE_TAU = 0.1


@dataclass
class MetricReport:
    cd: float
    fscore: float
    part_iou: float = None
    preservation_iou: float = None
    mv_cons: float = None

    def to_json(self):
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None})


def _clouds(a, b):
    a = np.asarray(getattr(a, "points", a), dtype=np.float64)
    b = np.asarray(getattr(b, "points", b), dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer/fscore need nonempty clouds")
    return a, b


def chamfer(a, b):
    """Summed bidirectional mean of squared nearest-neighbor distances."""
    a, b = _clouds(a, b)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float((d_ab ** 2).mean() + (d_ba ** 2).mean())


def chamfer_bruteforce(a, b):
    """O(|A||B|) reference; must agree with chamfer() on the distances."""
    a, b = _clouds(a, b)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def fscore(a, b, tau=FSCORE_TAU):
    if tau <= 0:
        raise ValueError("tau must be positive")
    a, b = _clouds(a, b)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    precision = float((d_ab <= tau).mean())
    recall = float((d_ba <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# -- voxel IoU family ------------------------------------------------------

def voxelize_mesh(verts, faces, grid=VOXEL_GRID, bounds=(-1.0, 1.0)):
    """Boolean occupancy on a grid^3 lattice over the given cube."""
    lo, hi = bounds
    pitch = (hi - lo) / grid
    centers_1d = lo + pitch * (np.arange(grid) + 0.5)
    occ = np.zeros((grid, grid, grid), dtype=bool)
    vmin = verts.min(axis=0) - pitch
    vmax = verts.max(axis=0) + pitch
    idx = [np.flatnonzero((centers_1d >= vmin[k] - pitch / 2)
                          & (centers_1d <= vmax[k] + pitch / 2)) for k in range(3)]
    if any(len(i) == 0 for i in idx):
        return occ
    gx, gy, gz = np.meshgrid(centers_1d[idx[0]], centers_1d[idx[1]],
                             centers_1d[idx[2]], indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    occupied = geometry.points_inside_mesh(pts, verts, faces)
    near = ~occupied
    if near.any():
        d = geometry.point_triangle_distances(pts[near], verts, faces)
        sub = occupied.copy()
        sub[np.flatnonzero(near)[d <= pitch / 2]] = True
        occupied = sub
    block = occupied.reshape(len(idx[0]), len(idx[1]), len(idx[2]))
    occ[np.ix_(idx[0], idx[1], idx[2])] = block
    return occ


def _voxel_iou(occ_a, occ_b):
    union = (occ_a | occ_b).sum()
    return float((occ_a & occ_b).sum() / union) if union else 0.0


def part_overlap_iou(meshes, grid=VOXEL_GRID):
    """Mean over unordered part pairs of voxel IoU; lower = cleaner parts."""
    if len(meshes) < 2:
        raise ValueError("need at least two parts")
    occs = [voxelize_mesh(v, f, grid) for v, f in meshes]
    for i, occ in enumerate(occs):
        if not occ.any():
            raise ValueError(f"part {i} occupies no voxels")
    vals = [_voxel_iou(occs[i], occs[j])
            for i in range(len(occs)) for j in range(i + 1, len(occs))]
    return float(np.mean(vals))


def preservation_iou(before, after, frozen_ids, grid=VOXEL_GRID):
    """Mean voxel IoU of each frozen part's before/after geometry.

    before/after: dict part_id -> (verts, faces).
    """
    vals = []
    for pid in frozen_ids:
        if pid not in before or pid not in after:
            raise ValueError(f"part {pid} missing from before/after meshes")
        occ_b = voxelize_mesh(*before[pid], grid)
        occ_a = voxelize_mesh(*after[pid], grid)
        # a part outside the grid (or below its resolution) on both sides is
        # preserved, not destroyed
        if not occ_b.any() and not occ_a.any():
            vals.append(1.0)
        else:
            vals.append(_voxel_iou(occ_b, occ_a))
    if not vals:
        raise ValueError("no frozen parts given")
    return float(np.mean(vals))


def monte_carlo_iou(contains_a, contains_b, n=100000, seed=0, bounds=(-1.0, 1.0)):
    """Sampling oracle for voxel IoU: inside-tests on uniform points."""
    rs = rng.stream(seed, "mc_iou")
    pts = rs.uniform(bounds[0], bounds[1], size=(n, 3))
    ina, inb = contains_a(pts), contains_b(pts)
    union = (ina | inb).sum()
    return float((ina & inb).sum() / union) if union else 0.0


# -- multi-view consistency ------------------------------------------------

def _visible_points(meshes, view_dir, n, rs):
    pts_all, nrm_all = [], []
    for verts, faces in meshes:
        p, nr = geometry.sample_mesh_surface(verts, faces, n, rs)
        pts_all.append(p)
        nrm_all.append(nr)
    pts = np.vstack(pts_all)
    nrm = np.vstack(nrm_all)
    facing = nrm @ view_dir > 0.0  # outward normal toward the camera
    return pts[facing] if facing.any() else pts


def mv_consistency(asset_meshes, ref_meshes, views=8, points=1024, seed=0):
    """Variance over views of visible-surface Chamfer distance."""
    if views < 2:
        raise ValueError("need at least two views")
    cds = []
    for vi in range(views):
        az, el = 360.0 * vi / views, 20.0
        d = geometry.view_direction(az, el)
        rs_a = rng.stream(seed, "mv", vi, 0)
        rs_b = rng.stream(seed, "mv", vi, 1)
        pa = _visible_points(asset_meshes, d, points, rs_a)
        pb = _visible_points(ref_meshes, d, points, rs_b)
        cds.append(chamfer(pa, pb))
    return float(np.var(cds))
