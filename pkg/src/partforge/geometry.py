"""Primitive meshes and the small geometry toolbox built on them.

All primitives are centered at the origin in their local frame and
described by three half-extents. Poses are translation + uniform scale
only, so every transform here composes as p -> scale * p + translation.
"""

import numpy as np

from .tensor import DegenerateInputError

KINDS = ("box", "cylinder", "sphere", "cone")
SEGMENTS = 16  # tessellation resolution for curved primitives


# -- tessellation ----------------------------------------------------------

def _box_mesh(size):
    sx, sy, sz = size
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)],
                 dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2],      # x = -sx
        [4, 6, 7], [4, 7, 5],      # x = +sx
        [0, 4, 5], [0, 5, 1],      # y = -sy
        [2, 3, 7], [2, 7, 6],      # y = +sy
        [0, 2, 6], [0, 6, 4],      # z = -sz
        [1, 5, 7], [1, 7, 3],      # z = +sz
    ], dtype=np.int64)
    return v, f


def _cylinder_mesh(size):
    r, h = size[0], size[2]
    ang = 2.0 * np.pi * np.arange(SEGMENTS) / SEGMENTS
    ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    bot = np.column_stack([ring, np.full(SEGMENTS, -h)])
    top = np.column_stack([ring, np.full(SEGMENTS, h)])
    v = np.vstack([bot, top, [[0, 0, -h]], [[0, 0, h]]])
    cb, ct = 2 * SEGMENTS, 2 * SEGMENTS + 1
    faces = []
    for i in range(SEGMENTS):
        j = (i + 1) % SEGMENTS
        faces += [[i, j, SEGMENTS + j], [i, SEGMENTS + j, SEGMENTS + i]]
        faces += [[cb, j, i], [ct, SEGMENTS + i, SEGMENTS + j]]
    return v, np.array(faces, dtype=np.int64)


def _cone_mesh(size):
    r, h = size[0], size[2]
    ang = 2.0 * np.pi * np.arange(SEGMENTS) / SEGMENTS
    base = np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(SEGMENTS, -h)])
    v = np.vstack([base, [[0, 0, h]], [[0, 0, -h]]])
    apex, cb = SEGMENTS, SEGMENTS + 1
    faces = []
    for i in range(SEGMENTS):
        j = (i + 1) % SEGMENTS
        faces += [[i, j, apex], [cb, j, i]]
    return v, np.array(faces, dtype=np.int64)


def _sphere_mesh(size):
    r = size[0]
    n_el = SEGMENTS // 2
    verts = [[0, 0, r]]
    for e in range(1, n_el):
        el = np.pi * e / n_el
        for a in range(SEGMENTS):
            az = 2.0 * np.pi * a / SEGMENTS
            verts.append([r * np.sin(el) * np.cos(az),
                          r * np.sin(el) * np.sin(az),
                          r * np.cos(el)])
    verts.append([0, 0, -r])
    v = np.array(verts, dtype=np.float64)
    south = len(verts) - 1
    faces = []
    ring = lambda e, a: 1 + (e - 1) * SEGMENTS + (a % SEGMENTS)
    for a in range(SEGMENTS):
        faces.append([0, ring(1, a), ring(1, a + 1)])
        faces.append([south, ring(n_el - 1, a + 1), ring(n_el - 1, a)])
    for e in range(1, n_el - 1):
        for a in range(SEGMENTS):
            faces += [[ring(e, a), ring(e + 1, a), ring(e + 1, a + 1)],
                      [ring(e, a), ring(e + 1, a + 1), ring(e, a + 1)]]
    return v, np.array(faces, dtype=np.int64)


_MESHERS = {"box": _box_mesh, "cylinder": _cylinder_mesh,
            "sphere": _sphere_mesh, "cone": _cone_mesh}


def tessellate(kind, size):
    """Triangle mesh of a primitive in its local frame: (V: nx3, F: mx3)."""
    return _MESHERS[kind](np.asarray(size, dtype=np.float64))


def local_half_extents(kind, size):
    size = np.asarray(size, dtype=np.float64)
    if kind == "box":
        return size.copy()
    if kind == "sphere":
        return np.full(3, size[0])
    return np.array([size[0], size[0], size[2]])  # cylinder / cone


def apply_pose(points, translation, scale):
    return np.asarray(points) * float(scale) + np.asarray(translation, dtype=np.float64)


# -- analytic inside tests -------------------------------------------------

def contains_local(kind, size, p):
    """Boolean mask: which local-frame points lie inside the primitive."""
    p = np.asarray(p, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    if kind == "box":
        return np.all(np.abs(p) <= size, axis=-1)
    if kind == "sphere":
        return np.linalg.norm(p, axis=-1) <= size[0]
    rad = np.hypot(p[..., 0], p[..., 1])
    inz = np.abs(p[..., 2]) <= size[2]
    if kind == "cylinder":
        return inz & (rad <= size[0])
    # cone: apex at +h, base at -h; radius shrinks linearly toward the apex
    frac = (size[2] - p[..., 2]) / (2.0 * size[2])
    return inz & (rad <= size[0] * np.clip(frac, 0.0, 1.0))


# -- analytic surface sampling --------------------------------------------

def sample_surface_local(kind, size, n, rng):
    """n points uniform (area-weighted) on the analytic primitive surface."""
    size = np.asarray(size, dtype=np.float64)
    if kind == "box":
        return _sample_box(size, n, rng)
    if kind == "sphere":
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * size[0]
    if kind == "cylinder":
        return _sample_cylinder(size, n, rng)
    return _sample_cone(size, n, rng)


def _sample_box(size, n, rng):
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy]) * 4.0
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    p = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis, sign = f // 2, 1.0 if f % 2 else -1.0
        others = [a for a in range(3) if a != axis]
        p[m, axis] = sign * size[axis]
        p[m, others[0]] = u[m, 0] * size[others[0]]
        p[m, others[1]] = u[m, 1] * size[others[1]]
    return p


def _sample_cylinder(size, n, rng):
    r, h = size[0], size[2]
    a_side = 2.0 * np.pi * r * 2.0 * h
    a_cap = np.pi * r * r
    which = rng.choice(3, size=n, p=np.array([a_side, a_cap, a_cap]) / (a_side + 2 * a_cap))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    p = np.empty((n, 3))
    side = which == 0
    p[side] = np.column_stack([r * np.cos(ang[side]), r * np.sin(ang[side]),
                               rng.uniform(-h, h, size=side.sum())])
    for w, z in ((1, -h), (2, h)):
        m = which == w
        rr = r * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
        p[m] = np.column_stack([rr * np.cos(ang[m]), rr * np.sin(ang[m]),
                                np.full(m.sum(), z)])
    return p


def _sample_cone(size, n, rng):
    r, h = size[0], size[2]
    slant = np.hypot(r, 2.0 * h)
    a_side = np.pi * r * slant
    a_base = np.pi * r * r
    which = rng.choice(2, size=n, p=np.array([a_side, a_base]) / (a_side + a_base))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    p = np.empty((n, 3))
    m = which == 0
    # uniform on the lateral surface: radius fraction ~ sqrt(U)
    frac = np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
    p[m] = np.column_stack([r * frac * np.cos(ang[m]), r * frac * np.sin(ang[m]),
                            h - 2.0 * h * frac])
    m = ~m
    rr = r * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
    p[m] = np.column_stack([rr * np.cos(ang[m]), rr * np.sin(ang[m]),
                            np.full(m.sum(), -h)])
    return p


# -- generic mesh utilities ------------------------------------------------

def triangle_areas(verts, faces):
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_mesh_surface(verts, faces, n, rng):
    """Area-weighted uniform samples on a triangle mesh; returns (points, normals)."""
    areas = triangle_areas(verts, faces)
    if areas.sum() <= 0:
        raise DegenerateInputError("sample_mesh_surface: zero-area mesh")
    tri = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=n), rng.uniform(size=n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a = verts[faces[tri, 0]]
    ab = verts[faces[tri, 1]] - a
    ac = verts[faces[tri, 2]] - a
    pts = a + u[:, None] * ab + v[:, None] * ac
    nrm = np.cross(ab, ac)
    ln = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.where(ln > 0, nrm / np.maximum(ln, 1e-300), 0.0)
    return pts, nrm


def ray_mesh_hits(origins, direction, verts, faces, eps=1e-12):
    """Moller-Trumbore for a bundle of parallel rays.

    origins: Rx3, direction: 3. Returns (t: RxT, hit: RxT bool) with t the
    ray parameter for each ray/triangle pair.
    """
    a = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - a
    e2 = verts[faces[:, 2]] - a
    d = np.asarray(direction, dtype=np.float64)
    pvec = np.cross(d, e2)                            # Tx3
    det = np.einsum("tj,tj->t", e1, pvec)             # T
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - a[None, :, :]        # RxTx3
    u = np.einsum("rtj,tj->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("rtj,j->rt", qvec, d) * inv
    t = np.einsum("rtj,tj->rt", qvec, e2) * inv
    hit = ok[None, :] & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9)
    return t, hit


def points_inside_mesh(points, verts, faces):
    """Parity test along +x rays; meshes here are closed primitives."""
    t, hit = ray_mesh_hits(points, np.array([1.0, 0.0, 0.0]), verts, faces)
    crossings = (hit & (t > 1e-9)).sum(axis=1)
    return crossings % 2 == 1


def point_triangle_distances(points, verts, faces):
    """Min distance from each point to the mesh surface (exact, vectorized)."""
    a = verts[faces[:, 0]][None]
    b = verts[faces[:, 1]][None]
    c = verts[faces[:, 2]][None]
    p = points[:, None, :]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ptj,ptj->pt", ab, ap)
    d2 = np.einsum("ptj,ptj->pt", ac, ap)
    bp = p - b
    d3 = np.einsum("ptj,ptj->pt", ab, bp)
    d4 = np.einsum("ptj,ptj->pt", ac, bp)
    cp = p - c
    d5 = np.einsum("ptj,ptj->pt", ab, cp)
    d6 = np.einsum("ptj,ptj->pt", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(np.abs(denom) < 1e-300, 1.0, denom)
    v = np.clip(vb / denom, 0.0, 1.0)
    w = np.clip(vc / denom, 0.0, 1.0)
    # interior candidate
    proj_in = a + v[..., None] * ab + w[..., None] * ac
    d_in = np.linalg.norm(p - proj_in, axis=-1)

    def seg_dist(s0, e):
        tpar = np.einsum("ptj,ptj->pt", p - s0, e) / np.maximum(
            np.einsum("ptj,ptj->pt", e, e), 1e-300)
        tpar = np.clip(tpar, 0.0, 1.0)
        return np.linalg.norm(p - (s0 + tpar[..., None] * e), axis=-1)

    d_edges = np.minimum(np.minimum(seg_dist(a, ab), seg_dist(a, ac)),
                         seg_dist(b, c - b))
    inside = (v >= 0.0) & (w >= 0.0) & (v + w <= 1.0)
    d = np.where(inside, d_in, d_edges)
    return d.min(axis=1)


def view_direction(azimuth, elevation):
    """Unit vector from origin toward the camera at (azimuth, elevation) degrees."""
    az, el = np.radians(azimuth), np.radians(elevation)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def view_basis(azimuth, elevation):
    """(right, up, forward) for an orthographic camera looking at the origin."""
    d = view_direction(azimuth, elevation)
    world_up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(d, world_up)) > 0.999:
        world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(world_up, d)
    right /= np.linalg.norm(right)
    up = np.cross(d, right)
    return right, up, -d  # forward points from camera toward the scene
