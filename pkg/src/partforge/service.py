"""HTTP/JSON editing service.

Exposes generation, retrieval inspection, and masked editing under /v1.
Model and index are read-only shared state; a per-asset lock serializes
edits; the asset store is JSON files written atomically. An asset's
current latents are always the deterministic replay of its base latents
through its edit history, so undo is "pop and replay".
"""

import json
import os
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from . import editor as editor_mod
from . import encoders, generator, index as index_mod

PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
           "#edc948", "#b07aa1", "#9c755f"]


def _latents_to_json(latents):
    return [{"part_id": l.part_id, "z": l.z.tolist(),
             "translation": l.translation.tolist(), "scale": l.scale}
            for l in latents]


def _latents_from_json(spec):
    return [encoders.PartLatent(np.array(l["z"]), l["part_id"],
                                np.array(l["translation"]), l["scale"])
            for l in spec]


class AssetStore:
    """Disk-backed asset records with atomic writes."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def save(self, record):
        path = self.root / f"{record['asset_id']}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record))
        os.replace(tmp, path)

    def load(self, asset_id):
        path = self.root / f"{asset_id}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def list_ids(self):
        return sorted(p.stem for p in self.root.glob("*.json"))


def create_app(cfg, enc_params, dit_params, idx, store_dir):
    from .cli import _dit_cfg, _generate_asset

    app = FastAPI(title="partforge", version="1")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    store = AssetStore(store_dir)
    locks = {}
    locks_guard = threading.Lock()
    dit_cfg = _dit_cfg(cfg)
    loaded = enc_params is not None and dit_params is not None and idx is not None

    def asset_lock(asset_id):
        with locks_guard:
            return locks.setdefault(asset_id, threading.Lock())

    def require_loaded():
        if not loaded:
            raise HTTPException(503, "model not loaded")

    def get_record(asset_id):
        rec = store.load(asset_id)
        if rec is None:
            raise HTTPException(404, f"unknown asset {asset_id}")
        return rec

    def resolve_condition(cond):
        if not isinstance(cond, dict):
            raise HTTPException(422, "condition must be an object")
        if "label" in cond:
            try:
                return index_mod.label_condition(idx, cond["label"])
            except index_mod.QueryError as exc:
                raise HTTPException(422, str(exc))
        if "reference_part" in cond:
            ref = cond["reference_part"]
            for e in idx.entries:
                if e.asset_id == ref.get("asset_id"):
                    for p in e.parts:
                        if p.part_id == ref.get("part_id"):
                            return p.embedding.astype(np.float64)
            raise HTTPException(422, "reference part not found in index")
        raise HTTPException(422, "condition needs 'label' or 'reference_part'")

    def build_request(body, seed):
        op = body.get("op")
        targets = body.get("target_parts")
        if op == "compose":
            groups = [list(map(int, g)) for g in targets]
            c = [resolve_condition(c) for c in body.get("conditions",
                 [body.get("condition")] * len(groups))]
            targets, c_edit = groups, c
        else:
            targets = tuple(int(i) for i in (targets or ()))
            c_edit = resolve_condition(body.get("condition", {}))
        try:
            return editor_mod.EditRequest(
                targets, op, c_edit,
                alpha=float(body.get("alpha", cfg.alpha)),
                k=int(body.get("k", cfg.k)),
                k_steps=int(body.get("k_steps", cfg.k_steps)),
                t_edit=cfg.t_edit, theta_valid=cfg.theta_valid, seed=seed)
        except editor_mod.EditError as exc:
            raise HTTPException(422, str(exc))

    def replay(record):
        """Base latents + full history -> current latents, deterministically."""
        latents = _latents_from_json(record["base_latents"])
        for step in record["history"]:
            req = build_request(step["request"], step["seed"])
            result = editor_mod.edit(req, latents, dit_params, dit_cfg,
                                     enc_params, idx)
            latents = result.latents
        return latents

    def edit_metrics(req, before_latents, after_latents):
        """Preservation IoU of frozen parts and seam stats of edited parts."""
        from . import metrics as metrics_mod
        if req.op == "compose":
            targets = {i for grp in req.targets for i in grp}
        else:
            targets = set(req.targets)
        frozen = [i for i in range(len(before_latents)) if i not in targets]
        out = {}
        if frozen:
            bm = {i: encoders.decode_part(before_latents[i], enc_params)
                  for i in frozen}
            am = {i: encoders.decode_part(after_latents[i], enc_params)
                  for i in frozen}
            out["preservation_iou"] = metrics_mod.preservation_iou(
                bm, am, frozen, grid=32)
            frozen_meshes = list(bm.values())
            seam_before, seam_after, n_seam = [], [], 0
            for i in sorted(targets):
                ev, ef = encoders.decode_part(after_latents[i], enc_params)
                _, seam, b, a = editor_mod.boundary_smooth(ev, ef,
                                                           frozen_meshes)
                if len(seam):
                    seam_before.append(b)
                    seam_after.append(a)
                    n_seam += len(seam)
            out["seam_vertices"] = n_seam
            if seam_before:
                out["seam_before"] = float(np.mean(seam_before))
                out["seam_after"] = float(np.mean(seam_after))
        return out

    def meshes_payload(latents):
        parts = []
        for i, lat in enumerate(latents):
            verts, faces = encoders.decode_part(lat, enc_params)
            parts.append({"part_id": lat.part_id,
                          "label": lat.label,
                          "vertices": np.asarray(verts, dtype=np.float32)
                          .round(6).tolist(),
                          "faces": np.asarray(faces).tolist(),
                          "color": PALETTE[i % len(PALETTE)]})
        return {"parts": parts}

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok" if loaded else "degraded",
                "index_fingerprint": idx.fingerprint.hex() if idx else None,
                "assets": len(store.list_ids())}

    @app.get("/v1/assets")
    def list_assets():
        out = []
        for aid in store.list_ids():
            rec = store.load(aid)
            out.append({"asset_id": aid, "source": rec["source"],
                        "status": rec.get("status", "ready"),
                        "n_parts": len(rec["base_latents"]),
                        "edits": len(rec["history"])})
        return out

    @app.post("/v1/generate", status_code=202)
    def generate(body: dict):
        require_loaded()
        seed = int(body.get("seed", 0))
        n_parts = int(body.get("parts", 3))
        if not 2 <= n_parts <= dit_cfg.max_parts:
            raise HTTPException(422, "parts out of range")
        asset_id = f"gen_{seed:06d}_{uuid.uuid4().hex[:8]}"
        latents, meshes, retrievals = _generate_asset(
            cfg, enc_params, dit_params, idx, n_parts, seed)
        store.save({"asset_id": asset_id, "source": "generated",
                    "seed": seed, "status": "ready",
                    "base_latents": _latents_to_json(latents),
                    "history": [], "retrievals": retrievals})
        return {"asset_id": asset_id, "poll": f"/v1/assets/{asset_id}"}

    @app.get("/v1/assets/{asset_id}")
    def get_asset(asset_id: str):
        rec = get_record(asset_id)
        return {"asset_id": asset_id, "source": rec["source"],
                "status": rec.get("status", "ready"),
                "n_parts": len(rec["base_latents"]),
                "history": [s["request"] for s in rec["history"]]}

    @app.get("/v1/assets/{asset_id}/mesh")
    def get_mesh(asset_id: str):
        require_loaded()
        rec = get_record(asset_id)
        return meshes_payload(replay(rec))

    @app.get("/v1/assets/{asset_id}/retrievals")
    def get_retrievals(asset_id: str):
        rec = get_record(asset_id)
        return rec.get("retrievals", [])

    @app.post("/v1/assets/{asset_id}/edit")
    def post_edit(asset_id: str, body: dict):
        require_loaded()
        rec = get_record(asset_id)
        lock = asset_lock(asset_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(409, "edit already in progress for this asset")
        try:
            seed = int(body.get("seed", len(rec["history"])))
            req = build_request(body, seed)
            latents = replay(rec)
            result = editor_mod.edit(req, latents, dit_params, dit_cfg,
                                     enc_params, idx)
            if result.accepted:
                result.metrics = edit_metrics(req, latents, result.latents)
                rec["history"].append({"request": body, "seed": seed})
                store.save(rec)
                latents = result.latents
            return {"accepted": result.accepted,
                    "retries_used": result.retries_used,
                    "metrics": result.metrics,
                    "meshes": meshes_payload(latents)}
        finally:
            lock.release()

    @app.post("/v1/assets/{asset_id}/undo")
    def post_undo(asset_id: str):
        require_loaded()
        rec = get_record(asset_id)
        lock = asset_lock(asset_id)
        if not lock.acquire(blocking=False):
            raise HTTPException(409, "edit already in progress for this asset")
        try:
            if not rec["history"]:
                raise HTTPException(422, "nothing to undo")
            rec["history"].pop()
            store.save(rec)
            return {"asset_id": asset_id, "edits": len(rec["history"]),
                    "meshes": meshes_payload(replay(rec))}
        finally:
            lock.release()

    return app
