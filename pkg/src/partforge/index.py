"""Persisted retrieval database: curation, exact top-k cosine query, I/O.

Entries hold object- and part-level embeddings (float32, unit norm),
one representative view's patch tokens, and the part latents needed by
the generator and editor. Search is exact; the index is small enough
that brute force doubles as its own oracle.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .io_formats import FormatError

PRTI_MAGIC = b"PRTI"
PRTI_VERSION = 1


class QueryError(ValueError):
    pass


class FingerprintError(RuntimeError):
    pass


@dataclass
class IndexPart:
    part_id: int
    label: str
    embedding: np.ndarray      # f32, unit norm (shared cross-modal space)
    latent: np.ndarray         # f32, raw part-encoder latent
    translation: np.ndarray    # f32 x3
    scale: float


@dataclass
class IndexEntry:
    asset_id: str
    object_embedding: np.ndarray   # f32, unit norm
    parts: list                    # IndexPart
    view: tuple                    # (azimuth, elevation) of the stored tokens
    tokens: np.ndarray             # f32 L x d patch tokens of that view


@dataclass
class RetrievalIndex:
    entries: list
    fingerprint: bytes = b"\x00" * 32

    def require_fingerprint(self, fingerprint):
        if fingerprint != self.fingerprint:
            raise FingerprintError("index was built with a different checkpoint")


def _unit32(v):
    v = np.asarray(v, dtype=np.float64)
    return (v / np.linalg.norm(v)).astype(np.float32)


def curate_kmeans(embeddings, target, seed, max_iter=100, tol=1e-6):
    """Lloyd's algorithm with k-means++ seeding; returns selected row indices.

    Deterministic in seed. Empty clusters are re-seeded from the point
    farthest from its centroid. The selection maps each final centroid to
    its nearest distinct input row.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if target > n:
        raise ValueError("target exceeds available embeddings")
    if target == n:
        return list(range(n))
    from . import rng
    rs = rng.stream(seed, "kmeans")
    # k-means++ seeding
    centers = [x[int(rs.integers(0, n))]]
    for _ in range(target - 1):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centers], axis=0)
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers.append(x[int(rs.choice(n, p=probs))])
    centers = np.array(centers)
    prev_sse = np.inf
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for k in range(target):
            members = x[assign == k]
            if len(members) == 0:
                far = int(d2[np.arange(n), assign].argmax())
                centers[k] = x[far]
                assign[far] = k
            else:
                centers[k] = members.mean(axis=0)
        shift = ((x - centers[assign]) ** 2).sum()
        if prev_sse - shift < tol:
            break
        prev_sse = shift
    chosen = []
    for k in range(target):
        d2k = ((x - centers[k]) ** 2).sum(axis=1)
        order = np.argsort(d2k, kind="stable")
        pick = next(int(i) for i in order if int(i) not in chosen)
        chosen.append(pick)
    return chosen


def kmeans_sse(embeddings, centers, assign):
    x = np.asarray(embeddings, dtype=np.float64)
    return float(((x - np.asarray(centers)[assign]) ** 2).sum())


def query_topk(index, q, k):
    """Exact top-k by cosine; ties broken by ascending asset_id."""
    if not index.entries:
        raise QueryError("index is empty")
    if not 1 <= k <= len(index.entries):
        raise QueryError(f"k={k} out of range for index of {len(index.entries)}")
    q = np.asarray(q, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0:
        raise QueryError("zero query vector")
    q = q / nq
    sims = [float(np.dot(q, e.object_embedding.astype(np.float64))
                  / np.linalg.norm(e.object_embedding.astype(np.float64)))
            for e in index.entries]
    order = sorted(range(len(sims)),
                   key=lambda i: (-sims[i], index.entries[i].asset_id))
    return [(index.entries[i], sims[i]) for i in order[:k]]


def query_topk_parts(index, c_edit, k, exclude_asset=None):
    """Part-level exact top-k by cosine; ties by (asset_id, part_id)."""
    pool = [(e, p) for e in index.entries for p in e.parts
            if e.asset_id != exclude_asset]
    if not pool:
        raise QueryError("index has no parts")
    if not 1 <= k <= len(pool):
        raise QueryError(f"k={k} out of range for {len(pool)} parts")
    q = np.asarray(c_edit, dtype=np.float64)
    nq = np.linalg.norm(q)
    if nq == 0:
        raise QueryError("zero query vector")
    q = q / nq
    sims = [float(np.dot(q, p.embedding.astype(np.float64))
                  / np.linalg.norm(p.embedding.astype(np.float64)))
            for _, p in pool]
    order = sorted(range(len(pool)),
                   key=lambda i: (-sims[i], pool[i][0].asset_id, pool[i][1].part_id))
    return [(pool[i][0], pool[i][1], sims[i]) for i in order[:k]]


def build_index(corpus, params, enc_cfg, curate_target=None, seed=0,
                fingerprint=None):
    """Embed a corpus with trained encoders into a RetrievalIndex.

    Object embedding: image-side object feature averaged over all views.
    Part embeddings: shape-side head outputs. The stored patch tokens come
    from the view with the most foreground pixels.
    """
    from . import encoders, hcr
    entries = []
    for item in corpus:
        obj_feats = []
        for vi in range(len(item.renders)):
            part_feats = []
            for pi in range(item.obj.n_parts):
                member = encoders.patch_membership(
                    item.renders[vi].part_mask, pi + 1, enc_cfg.patch)
                if not member.any():
                    continue
                part_feats.append(
                    hcr.image_part_feature(item, pi, vi, params, enc_cfg).data)
            if part_feats:
                obj_feats.append(np.mean(part_feats, axis=0))
        if not obj_feats:
            continue
        obj_emb = _unit32(np.mean(obj_feats, axis=0))
        fg_counts = [np.count_nonzero(r.part_mask) for r in item.renders]
        rep = int(np.argmax(fg_counts))
        tokens = encoders.encode_patches(item.renders[rep], params,
                                         enc_cfg).data.astype(np.float32)
        parts = []
        for pi, part in enumerate(item.obj.parts):
            local = encoders.part_local_points(item.part_clouds[pi].points,
                                               part.translation, part.scale)
            latent = encoders.encode_part(local, params).data
            emb = encoders.head_forward(latent, params, "shape").data
            parts.append(IndexPart(pi, part.label, _unit32(emb),
                                   latent.astype(np.float32),
                                   part.translation.astype(np.float32),
                                   float(part.scale)))
        entries.append(IndexEntry(f"obj_{item.obj.seed:010d}", obj_emb, parts,
                                  item.renders[rep].view, tokens))
    if curate_target is not None and curate_target < len(entries):
        embs = np.array([e.object_embedding for e in entries], dtype=np.float64)
        keep = curate_kmeans(embs, curate_target, seed)
        entries = [entries[i] for i in sorted(keep)]
    fp = fingerprint if fingerprint is not None else b"\x00" * 32
    return RetrievalIndex(entries, fp)


def label_condition(index, label):
    """c_edit for a label query: mean stored part embedding of that label."""
    embs = [p.embedding.astype(np.float64)
            for e in index.entries for p in e.parts if p.label == label]
    if not embs:
        raise QueryError(f"no parts with label {label!r} in index")
    m = np.mean(embs, axis=0)
    n = np.linalg.norm(m)
    if n == 0:
        raise QueryError("degenerate label condition")
    return m / n


# -- persistence -----------------------------------------------------------

def _pack_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _unpack_array(blob, pos):
    (ndim,) = struct.unpack_from("<B", blob, pos)
    pos += 1
    shape = struct.unpack_from(f"<{ndim}I", blob, pos)
    pos += 4 * ndim
    size = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
    return arr, pos + 4 * size


def save_index(index, path):
    """Atomic write: PRTI binary plus a JSON manifest for inspection."""
    out = PRTI_MAGIC + struct.pack("<II", PRTI_VERSION, len(index.entries))
    out += index.fingerprint
    for e in index.entries:
        ib = e.asset_id.encode("utf-8")
        out += struct.pack("<H", len(ib)) + ib
        out += _pack_array(e.object_embedding)
        out += struct.pack("<ff", *e.view)
        out += _pack_array(e.tokens)
        out += struct.pack("<I", len(e.parts))
        for p in e.parts:
            lb = p.label.encode("utf-8")
            out += struct.pack("<H", len(lb)) + lb
            out += struct.pack("<I", p.part_id)
            out += _pack_array(p.embedding)
            out += _pack_array(p.latent)
            out += _pack_array(p.translation)
            out += struct.pack("<f", p.scale)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)
    manifest = {
        "entries": len(index.entries),
        "fingerprint": index.fingerprint.hex(),
        "assets": [{"asset_id": e.asset_id,
                    "parts": [{"part_id": p.part_id, "label": p.label}
                              for p in e.parts]} for e in index.entries],
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_index(path, expect_fingerprint=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PRTI_MAGIC:
        raise FormatError(f"bad index magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != PRTI_VERSION:
        raise FormatError(f"unsupported index version {version}")
    pos = 12
    try:
        fingerprint = blob[pos:pos + 32]
        if len(fingerprint) != 32:
            raise FormatError("truncated index file")
        pos += 32
        entries = []
        for _ in range(count):
            (ilen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            asset_id = blob[pos:pos + ilen].decode("utf-8")
            pos += ilen
            obj_emb, pos = _unpack_array(blob, pos)
            view = struct.unpack_from("<ff", blob, pos)
            pos += 8
            tokens, pos = _unpack_array(blob, pos)
            (n_parts,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            parts = []
            for _ in range(n_parts):
                (llen,) = struct.unpack_from("<H", blob, pos)
                pos += 2
                label = blob[pos:pos + llen].decode("utf-8")
                pos += llen
                (part_id,) = struct.unpack_from("<I", blob, pos)
                pos += 4
                emb, pos = _unpack_array(blob, pos)
                lat, pos = _unpack_array(blob, pos)
                tr, pos = _unpack_array(blob, pos)
                (scale,) = struct.unpack_from("<f", blob, pos)
                pos += 4
                parts.append(IndexPart(part_id, label, emb, lat, tr, scale))
            entries.append(IndexEntry(asset_id, obj_emb, parts,
                                      (float(view[0]), float(view[1])), tokens))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated index file: {exc}") from None
    idx = RetrievalIndex(entries, fingerprint)
    if expect_fingerprint is not None:
        idx.require_fingerprint(expect_fingerprint)
    return idx
