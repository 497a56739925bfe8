"""Masked part-level editing.

An edit re-initializes the targeted part latents (from retrieved
exemplars or interpolation), re-noises them to an intermediate level and
runs a short masked Euler refinement in which frozen parts condition
attention but receive no updates. Edited latents are validated against
the edit condition in the retriever's shape space; decoded meshes get a
seam projection and Laplacian smoothing pass.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import encoders, generator, geometry, metrics, rng
from .generator import CfgParams
from .index import query_topk_parts


class EditError(ValueError):
    pass


@dataclass
class EditRequest:
    targets: tuple              # part indices; for compose: list of index lists
    op: str                     # swap | refine | compose
    c_edit: np.ndarray = None   # condition embedding (compose: list, per group)
    alpha: float = 0.5          # refine interpolation weight
    k: int = 3                  # exemplar candidates
    k_steps: int = 20
    t_edit: float = 0.5
    theta_valid: float = 0.5
    max_retries: int = None     # defaults to k
    seed: int = 0

    def __post_init__(self):
        if self.op not in ("swap", "refine", "compose"):
            raise EditError(f"unknown op {self.op!r}")
        if self.op in ("swap", "refine") and not len(self.targets):
            raise EditError("swap/refine need a nonempty target set")
        if not 0.0 <= self.alpha <= 1.0:
            raise EditError("alpha must lie in [0, 1]")
        if self.op == "compose":
            flat = [i for grp in self.targets for i in grp]
            if len(flat) != len(set(flat)):
                raise EditError("compose masks must be disjoint")


@dataclass
class EditResult:
    latents: list               # PartLatent, frozen entries bit-identical
    accepted: bool
    retries_used: int
    seam_vertices: int = 0
    metrics: dict = field(default_factory=dict)


def retrieve_exemplars(db, c_edit, k=3, exclude_asset=None):
    """Ranked part exemplars by cosine; same tie rules as the object query."""
    return query_topk_parts(db, c_edit, k, exclude_asset=exclude_asset)


def align_exemplar(z_ref, t_i, scale_i):
    """Adopt the exemplar latent verbatim; keep the target pose bits."""
    return encoders.PartLatent(np.asarray(z_ref, dtype=np.float64).copy(),
                               -1, t_i, scale_i)


def refine_attribute(z_i, candidate_latents, alpha):
    """(1 - alpha) * current + alpha * mean of candidates."""
    if not 0.0 <= alpha <= 1.0:
        raise EditError("alpha must lie in [0, 1]")
    cand = np.mean([np.asarray(c, dtype=np.float64) for c in candidate_latents],
                   axis=0)
    return (1.0 - alpha) * np.asarray(z_i, dtype=np.float64) + alpha * cand


def masked_denoise(z0, targets, ctx, params, cfg, k_steps=20, t_edit=0.5,
                   guidance=None, seed=0, part_ids=None):
    """Re-noise target token groups to t_edit, then integrate K Euler steps
    updating only those groups; frozen groups stay bit-identical."""
    z0 = np.asarray(z0, dtype=np.float64)
    n = z0.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[list(targets)] = True
    if not mask.any():
        return z0.copy()
    guidance = guidance or CfgParams()
    part_ids = np.arange(n) if part_ids is None else np.asarray(part_ids)
    out = z0.copy()
    rs = rng.stream(seed, "edit_noise")
    noise = rs.standard_normal(z0.shape)
    out[mask] = (1.0 - t_edit) * out[mask] + t_edit * noise[mask]
    dt = t_edit / k_steps
    for k in range(k_steps):
        t = t_edit - k * dt
        v = generator._velocity(params, cfg, out, t, ctx, part_ids, guidance)
        out[mask] -= dt * v[mask]
    out[~mask] = z0[~mask]
    return out


def semantic_validate(z_edited, c_edit, theta_valid, enc_params):
    """Cosine of the shape-head embedding of the edited latent vs c_edit."""
    emb = encoders.head_forward(np.asarray(z_edited, dtype=np.float64),
                                enc_params, "shape").data
    c = np.asarray(c_edit, dtype=np.float64)
    denom = np.linalg.norm(emb) * np.linalg.norm(c)
    if denom == 0:
        return False, -1.0
    sim = float(np.dot(emb, c) / denom)
    return sim >= theta_valid, sim


# -- mesh post-processing --------------------------------------------------

def seam_discontinuity(verts, seam_idx, frozen_meshes):
    """Mean seam-vertex distance to the nearest frozen surface."""
    if len(seam_idx) == 0:
        return 0.0
    d = _frozen_distance(verts[seam_idx], frozen_meshes)
    return float(d.mean())


def _frozen_distance(pts, frozen_meshes):
    d = np.full(len(pts), np.inf)
    for fv, ff in frozen_meshes:
        d = np.minimum(d, geometry.point_triangle_distances(pts, fv, ff))
    return d


def _vertex_neighbors(n_verts, faces):
    nbrs = [set() for _ in range(n_verts)]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return [np.array(sorted(s), dtype=np.int64) for s in nbrs]


def boundary_smooth(edited_verts, edited_faces, frozen_meshes, eps_seam=0.02,
                    lam=0.5, iters=3, n_near=4, samples_per_mesh=2048, seed=0):
    """Project seam vertices toward the frozen surface, then Laplacian-smooth
    the edited mesh. Frozen meshes are never modified.

    Returns (new verts, seam vertex indices, discontinuity before, after).
    A per-vertex guard keeps the seam discontinuity non-increasing: a
    projection or smoothing move that would pull a seam vertex farther from
    the frozen surface is dropped for that vertex.
    """
    verts = np.array(edited_verts, dtype=np.float64)
    if len(verts) == 0:
        raise EditError("edited mesh has no vertices")
    if not frozen_meshes:
        return verts, np.array([], dtype=np.int64), 0.0, 0.0
    dist0 = _frozen_distance(verts, frozen_meshes)
    seam = np.flatnonzero(dist0 <= eps_seam)
    before = float(dist0[seam].mean()) if len(seam) else 0.0
    if len(seam):
        surf = []
        for mi, (fv, ff) in enumerate(frozen_meshes):
            rs = rng.stream(seed, "seam_surf", mi)
            p, _ = geometry.sample_mesh_surface(fv, ff, samples_per_mesh, rs)
            surf.append(p)
        tree = cKDTree(np.vstack(surf))
        _, nn = tree.query(verts[seam], k=n_near)
        proj = tree.data[np.atleast_2d(nn)].mean(axis=1)
        d_new = _frozen_distance(proj, frozen_meshes)
        keep = d_new <= dist0[seam]
        verts[seam[keep]] = proj[keep]
    nbrs = _vertex_neighbors(len(verts), np.asarray(edited_faces))
    seam_set = set(seam.tolist())
    for _ in range(iters):
        new = verts.copy()
        for vi, nb in enumerate(nbrs):
            if len(nb) == 0:
                continue
            new[vi] = verts[vi] + lam * (verts[nb].mean(axis=0) - verts[vi])
        if seam_set:
            d_old = _frozen_distance(verts[seam], frozen_meshes)
            d_new = _frozen_distance(new[seam], frozen_meshes)
            worse = d_new > d_old
            new[seam[worse]] = verts[seam[worse]]
        verts = new
    after = seam_discontinuity(verts, seam, frozen_meshes)
    return verts, seam, before, after


# -- dispatcher ------------------------------------------------------------

def _latents_to_tokens(latents, cfg):
    z = np.zeros((len(latents), cfg.tokens_per_part, cfg.width))
    for i, lat in enumerate(latents):
        z[i] = np.tile(lat.z, (cfg.tokens_per_part, 1))
    return z


def _run_masked(latents, init_z, targets, ctx, dit_params, dit_cfg, req, attempt):
    """One denoise attempt from the given per-target initial latents."""
    work = [lat.copy() for lat in latents]
    for ti, zi in zip(targets, init_z):
        work[ti].z = zi
    z_tok = _latents_to_tokens(work, dit_cfg)
    z_out = masked_denoise(z_tok, targets, ctx, dit_params, dit_cfg,
                           k_steps=req.k_steps, t_edit=req.t_edit,
                           seed=rng_key(req.seed, attempt))
    result = [lat if i not in targets else lat.copy()
              for i, lat in enumerate(latents)]
    for ti in targets:
        result[ti].z = z_out[ti].mean(axis=0)
    return result


def rng_key(seed, attempt):
    return (int(seed) * 1000003 + attempt) & 0x7FFFFFFF


def edit(request, latents, dit_params, dit_cfg, enc_params, db, ctx=None,
         exclude_asset=None):
    """Dispatch one edit over an asset's part latents.

    latents: list of PartLatent (the asset); db: RetrievalIndex for exemplars;
    ctx: optional conditioning token matrix for the denoiser.
    """
    n = len(latents)
    if request.op == "compose":
        groups = [list(g) for g in request.targets]
        conds = request.c_edit if request.c_edit is not None else [None] * len(groups)
    else:
        groups = [list(request.targets)]
        conds = [request.c_edit]
    for grp in groups:
        for i in grp:
            if not 0 <= i < n:
                raise EditError(f"target index {i} out of range")
    union = [i for g in groups for i in g]
    if not union:
        return EditResult([lat for lat in latents], True, 0)
    if request.op == "refine" and request.alpha == 0.0:
        # zero interpolation weight: the edit is an identity by contract
        return EditResult([lat.copy() for lat in latents], True, 0)

    max_retries = request.max_retries if request.max_retries is not None else request.k
    # rank exemplar candidates per group
    group_cands = []
    for grp, c in zip(groups, conds):
        if c is None:
            raise EditError("edit condition required for nonempty target set")
        hits = retrieve_exemplars(db, c, request.k, exclude_asset=exclude_asset)
        group_cands.append([p.latent.astype(np.float64) for _, p, _ in hits])

    retries = 0
    for attempt in range(max(1, max_retries)):
        init_z = []
        ok = True
        for grp, cands in zip(groups, group_cands):
            if attempt >= len(cands) and request.op != "refine":
                ok = False
                break
            for i in grp:
                if request.op == "refine":
                    init_z.append(refine_attribute(latents[i].z, cands,
                                                   request.alpha))
                else:
                    init_z.append(cands[attempt].copy())
        if not ok:
            break
        candidate = _run_masked(latents, init_z, union, ctx, dit_params,
                                dit_cfg, request, attempt)
        accepted = True
        for grp, c in zip(groups, conds):
            for i in grp:
                passed, _ = semantic_validate(candidate[i].z, c,
                                              request.theta_valid, enc_params)
                if not passed:
                    accepted = False
        if accepted:
            return EditResult(candidate, True, retries)
        retries += 1
        if request.op == "refine":
            break  # interpolation target does not change with rank
    return EditResult([lat for lat in latents], False, retries)
