"""Synthetic multi-part objects: generation, rendering, sampling, export.

Each object is 2-8 labeled primitives attached box-to-box and normalized
into [-1,1]^3. Renders are orthographic depth + part-ID masks; they stand
in for RGB photographs so the whole pipeline runs without any pretrained
image encoder while preserving the geometric signal retrieval needs.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geometry, rng
from .tensor import DegenerateInputError

PART_LABELS = ("leg", "seat", "back", "top", "handle", "wheel", "body", "arm")

# label -> (primitive kind, half-extent ranges); each label gets a distinct
# kind/aspect signature so part-level contrastive positives are learnable
_LABEL_PRIORS = {
    "leg":    ("cylinder", [(0.05, 0.08), (0.05, 0.08), (0.35, 0.50)]),
    "seat":   ("box",      [(0.30, 0.45), (0.30, 0.45), (0.04, 0.07)]),
    "back":   ("box",      [(0.28, 0.42), (0.03, 0.06), (0.30, 0.45)]),
    "top":    ("cylinder", [(0.34, 0.48), (0.34, 0.48), (0.03, 0.06)]),
    "handle": ("sphere",   [(0.10, 0.16), (0.10, 0.16), (0.10, 0.16)]),
    "wheel":  ("cylinder", [(0.14, 0.20), (0.14, 0.20), (0.08, 0.12)]),
    "body":   ("box",      [(0.20, 0.32), (0.20, 0.32), (0.20, 0.32)]),
    "arm":    ("cone",     [(0.08, 0.12), (0.08, 0.12), (0.32, 0.45)]),
}

RENDER_SIZE = 64        # H = W
PATCH_SIZE = 4          # 16x16 patch grid -> L = 256 tokens
RENDER_EXTENT = 1.35    # half-extent of the orthographic film plane
N_VIEWS = 8
ATTACH_TOL = 0.05
MAX_OVERLAP_IOU = 0.5


class GenerationError(RuntimeError):
    pass


@dataclass
class PrimitiveSpec:
    kind: str
    size: np.ndarray          # three positive half-extents (local frame)
    translation: np.ndarray   # pose: world position
    scale: float              # pose: uniform scale, > 0
    label: str

    def mesh(self):
        v, f = geometry.tessellate(self.kind, self.size)
        return geometry.apply_pose(v, self.translation, self.scale), f

    def half_extents(self):
        return geometry.local_half_extents(self.kind, self.size) * self.scale

    def contains(self, points):
        local = (np.asarray(points) - self.translation) / self.scale
        return geometry.contains_local(self.kind, self.size, local)

    def to_dict(self):
        return {"kind": self.kind, "size": self.size.tolist(),
                "translation": self.translation.tolist(),
                "scale": self.scale, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], np.array(d["size"]), np.array(d["translation"]),
                   float(d["scale"]), d["label"])


@dataclass
class PartObjectSpec:
    parts: list
    n_parts: int
    seed: int

    def meshes(self):
        return [p.mesh() for p in self.parts]

    def bounds(self):
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for p in self.parts:
            he = p.half_extents()
            lo = np.minimum(lo, p.translation - he)
            hi = np.maximum(hi, p.translation + he)
        return lo, hi

    def to_dict(self):
        return {"n_parts": self.n_parts, "seed": self.seed,
                "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls([PrimitiveSpec.from_dict(p) for p in d["parts"]],
                   int(d["n_parts"]), int(d["seed"]))


@dataclass
class DepthRender:
    depth: np.ndarray      # HxW, +inf where nothing is hit
    part_mask: np.ndarray  # HxW int, 0 = background, i+1 = part i
    view: tuple            # (azimuth, elevation) degrees


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray = field(default=None)


def canonical_views():
    return [(45.0 * i, 20.0) for i in range(N_VIEWS)]


# -- generation ------------------------------------------------------------

def _pairwise_overlap_iou(parts, grid=24):
    """Mean pairwise IoU via analytic inside tests on a joint-bbox grid."""
    ious = []
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            a, b = parts[i], parts[j]
            lo = np.minimum(a.translation - a.half_extents(),
                            b.translation - b.half_extents())
            hi = np.maximum(a.translation + a.half_extents(),
                            b.translation + b.half_extents())
            axes = [np.linspace(lo[k] + (hi[k] - lo[k]) / (2 * grid),
                                hi[k] - (hi[k] - lo[k]) / (2 * grid), grid)
                    for k in range(3)]
            gx, gy, gz = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
            ina, inb = a.contains(pts), b.contains(pts)
            union = (ina | inb).sum()
            ious.append((ina & inb).sum() / union if union else 0.0)
    return float(np.mean(ious)) if ious else 0.0


def _attempt_object(seed, n_parts, attempt):
    rs = rng.stream(seed, "object", attempt)
    label_ids = rs.choice(len(PART_LABELS), size=n_parts, replace=False)
    parts = []
    for li in label_ids:
        label = PART_LABELS[li]
        kind, ranges = _LABEL_PRIORS[label]
        size = np.array([rs.uniform(lo, hi) for lo, hi in ranges])
        parts.append(PrimitiveSpec(kind, size, np.zeros(3), 1.0, label))
    for i in range(1, n_parts):
        anchor = parts[int(rs.integers(0, i))]
        axis = int(rs.integers(0, 3))
        sign = 1.0 if rs.uniform() < 0.5 else -1.0
        t = anchor.translation.copy()
        t[axis] += sign * (anchor.half_extents()[axis] + parts[i].half_extents()[axis])
        for other in range(3):
            if other != axis:
                t[other] += rs.uniform(-0.4, 0.4) * anchor.half_extents()[other]
        parts[i].translation = t
    return PartObjectSpec(parts, n_parts, seed)


def _boxes_touch(a, b, tol):
    gap = np.abs(a.translation - b.translation) - (a.half_extents() + b.half_extents())
    return np.all(gap <= tol)


def _all_parts_visible(obj):
    for az, el in canonical_views():
        r = render_depth(obj, (az, el))
        seen = set(np.unique(r.part_mask)) - {0}
        if len(seen) == obj.n_parts:
            # fast path: every part visible in one view
            return True
    visible = set()
    for az, el in canonical_views():
        r = render_depth(obj, (az, el))
        visible |= set(np.unique(r.part_mask)) - {0}
    return len(visible) == obj.n_parts


def generate_object(seed, n_parts):
    """Deterministic multi-part object; retries until the filters pass."""
    if not 2 <= n_parts <= 8:
        raise ValueError("n_parts must be in [2, 8]")
    for attempt in range(100):
        obj = _attempt_object(seed, n_parts, attempt)
        obj = normalize_canonical(obj)
        touch_ok = all(
            any(_boxes_touch(p, q, ATTACH_TOL) for q in obj.parts if q is not p)
            for p in obj.parts)
        if not touch_ok:
            continue
        if _pairwise_overlap_iou(obj.parts) >= MAX_OVERLAP_IOU:
            continue
        if not _all_parts_visible(obj):
            continue
        return obj
    raise GenerationError(f"no valid object after 100 attempts (seed={seed})")


def normalize_canonical(obj):
    """Isotropic map of the union bbox into [-1,1]^3, longest axis exact."""
    lo, hi = obj.bounds()
    extent = hi - lo
    if np.max(extent) <= 0:
        raise DegenerateInputError("normalize_canonical: degenerate bounding box")
    s = 2.0 / np.max(extent)
    c = (lo + hi) / 2.0
    parts = [PrimitiveSpec(p.kind, p.size.copy(), s * (p.translation - c),
                           s * p.scale, p.label) for p in obj.parts]
    return PartObjectSpec(parts, obj.n_parts, obj.seed)


# -- rendering -------------------------------------------------------------

def render_depth(obj, view, size=RENDER_SIZE, extent=RENDER_EXTENT):
    """Orthographic depth + front-most part mask from the given view."""
    az, el = view
    right, up, forward = geometry.view_basis(az, el)
    half = extent * (1.0 - 1.0 / size)
    xs = np.linspace(-half, half, size)
    ys = np.linspace(half, -half, size)  # image row 0 is "up"
    gx, gy = np.meshgrid(xs, ys)
    origins = (gx.ravel()[:, None] * right[None, :]
               + gy.ravel()[:, None] * up[None, :]
               - 3.0 * forward[None, :])
    best_t = np.full(size * size, np.inf)
    best_id = np.zeros(size * size, dtype=np.int64)
    for pid, part in enumerate(obj.parts, start=1):
        v, f = part.mesh()
        t, hit = geometry.ray_mesh_hits(origins, forward, v, f)
        t = np.where(hit & (t > 0.0), t, np.inf)
        tmin = t.min(axis=1)
        closer = tmin < best_t
        best_t[closer] = tmin[closer]
        best_id[closer] = pid
    return DepthRender(best_t.reshape(size, size),
                       best_id.reshape(size, size), (az, el))


# -- sampling --------------------------------------------------------------

def sample_points(part, n, rs):
    """n area-weighted uniform samples on the posed primitive surface."""
    if n < 1:
        raise ValueError("need n >= 1")
    local = geometry.sample_surface_local(part.kind, part.size, n, rs)
    return PointCloud(geometry.apply_pose(local, part.translation, part.scale))


def _part_surface_area(part, n_probe=256):
    v, f = part.mesh()
    return float(geometry.triangle_areas(v, f).sum())


def sample_object_points(obj, n, rs):
    """Samples over the whole object, area-weighted across parts, labeled."""
    areas = np.array([_part_surface_area(p) for p in obj.parts])
    counts = np.maximum(1, np.round(n * areas / areas.sum()).astype(int))
    pts, labs = [], []
    for pid, (part, cnt) in enumerate(zip(obj.parts, counts)):
        pts.append(sample_points(part, int(cnt), rs).points)
        labs.append(np.full(int(cnt), pid))
    return PointCloud(np.vstack(pts), np.concatenate(labs))


# -- binary export ---------------------------------------------------------

PRTF_MAGIC = b"PRTF"
PRTF_VERSION = 1


def write_pointcloud(path, cloud):
    pts = np.asarray(cloud.points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(PRTF_MAGIC)
        fh.write(struct.pack("<II", PRTF_VERSION, pts.shape[0]))
        fh.write(pts.tobytes())


def read_pointcloud(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PRTF_MAGIC:
            raise ValueError(f"bad point-cloud magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != PRTF_VERSION:
            raise ValueError(f"unsupported point-cloud version {version}")
        data = np.frombuffer(fh.read(count * 12), dtype="<f4").reshape(count, 3)
    return PointCloud(data.astype(np.float64))


def export_object(obj, out_dir, points_per_part=1024, seed=None):
    """One directory per object: JSON spec, PRTF clouds, raw depth/mask views."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "spec.json").write_text(json.dumps(obj.to_dict(), indent=2))
    seed = obj.seed if seed is None else seed
    for i, part in enumerate(obj.parts):
        rs = rng.stream(seed, "points", i)
        write_pointcloud(out_dir / f"part_{i:02d}.prtf",
                         sample_points(part, points_per_part, rs))
    for vi, view in enumerate(canonical_views()):
        r = render_depth(obj, view)
        depth = np.where(np.isfinite(r.depth), r.depth, -1.0).astype("<f4")
        (out_dir / f"view_{vi:02d}.depth").write_bytes(depth.tobytes())
        (out_dir / f"view_{vi:02d}.mask").write_bytes(
            r.part_mask.astype("<i4").tobytes())
        (out_dir / f"view_{vi:02d}.json").write_text(json.dumps(
            {"H": r.depth.shape[0], "W": r.depth.shape[1],
             "view": list(r.view), "depth_dtype": "<f4", "mask_dtype": "<i4",
             "background_depth": -1.0}))


def load_object(obj_dir):
    return PartObjectSpec.from_dict(json.loads((obj_dir / "spec.json").read_text()))


# -- in-memory corpus for training ----------------------------------------

@dataclass
class CorpusItem:
    obj: PartObjectSpec
    renders: list           # DepthRender per canonical view
    part_clouds: list       # PointCloud per part (posed, canonical frame)
    part_labels: list       # label strings


def build_corpus(seed, n_objects, points_per_part=256, min_parts=2, max_parts=8):
    """Deterministic corpus of generated objects with renders and clouds."""
    items = []
    for i in range(n_objects):
        nm = rng.stream(seed, "corpus", i)
        n_parts = int(nm.integers(min_parts, max_parts + 1))
        obj = generate_object(seed * 100003 + i, n_parts)
        renders = [render_depth(obj, v) for v in canonical_views()]
        clouds = [sample_points(p, points_per_part, rng.stream(seed, "cloud", i, j))
                  for j, p in enumerate(obj.parts)]
        items.append(CorpusItem(obj, renders, clouds,
                                [p.label for p in obj.parts]))
    return items
