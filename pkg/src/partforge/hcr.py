"""Hierarchical contrastive retrieval training.

Bidirectional momentum queues supply large negative pools; a numerically
stable InfoNCE aligns image-side and shape-side features at part and
object granularity. Part positives share a label across objects; object
positives are the same instance.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import encoders, rng
from .optim import Adam
from .tensor import (NumericalError, ShapeError, Tensor, concat, l2_normalize,
                     matmul, mul, reshape, texp, tlog, transpose, tsum)


class ConfigurationError(ValueError):
    pass


@dataclass
class HcrConfig:
    tau: float = 0.07
    lambda_part: float = 0.03
    lambda_obj: float = 0.03
    queue_size: int = 512
    momentum: float = 0.99
    batch_objects: int = 8
    max_parts_per_batch: int = 16
    lr: float = 1e-3

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError("temperature must be positive")


@dataclass
class MomentumQueue:
    capacity: int
    dim: int
    side: str
    buffer: np.ndarray = field(default=None)
    labels: np.ndarray = field(default=None)
    head: int = 0
    fill: int = 0

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = np.zeros((self.capacity, self.dim))
        if self.labels is None:
            self.labels = np.full(self.capacity, -1, dtype=np.int64)

    def contents(self):
        """(rows, labels) oldest-first."""
        if self.fill < self.capacity:
            return self.buffer[:self.fill].copy(), self.labels[:self.fill].copy()
        return (np.roll(self.buffer, -self.head, axis=0),
                np.roll(self.labels, -self.head))


def momentum_update(theta_m, theta_t, m):
    """EMA of parameter dicts: theta_m <- m * theta_m + (1 - m) * theta_t."""
    for k, pm in theta_m.items():
        pt = theta_t[k]
        am = pm.data if isinstance(pm, Tensor) else pm
        at = pt.data if isinstance(pt, Tensor) else pt
        if am.shape != at.shape:
            raise ShapeError(f"momentum_update: shape mismatch for {k}")
        am *= m
        am += (1.0 - m) * at
    return theta_m


def queue_push(q, feats, labels=None):
    """FIFO push of B unit-norm rows (+labels); evicts the oldest B at capacity."""
    feats = np.asarray(feats, dtype=np.float64)
    b = feats.shape[0]
    if b > q.capacity:
        raise ValueError("push larger than queue capacity")
    labels = np.full(b, -1, dtype=np.int64) if labels is None \
        else np.asarray(labels, dtype=np.int64)
    for row, lab in zip(feats, labels):
        q.buffer[q.head] = row
        q.labels[q.head] = lab
        q.head = (q.head + 1) % q.capacity
    q.fill = min(q.fill + b, q.capacity)
    return q


def info_nce(q_feats, k_feats, tau, positives):
    """Numerically stable InfoNCE with multi-positive rows.

    positives: list (len N) of index arrays into the keys; the identity
    map reproduces the plain diagonal formulation exactly. Differentiable
    in both feature sets.
    """
    qn = l2_normalize(q_feats if isinstance(q_feats, Tensor) else Tensor(q_feats))
    kn = l2_normalize(k_feats if isinstance(k_feats, Tensor) else Tensor(k_feats))
    n, m = qn.shape[0], kn.shape[0]
    logits = mul(matmul(qn, transpose(kn)), 1.0 / tau)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    shifted = logits - shift
    log_prob = shifted - tlog(tsum(texp(shifted), axis=1, keepdims=True))
    weights = np.zeros((n, m))
    for i, pos in enumerate(positives):
        pos = np.atleast_1d(np.asarray(pos, dtype=np.int64))
        if pos.size == 0:
            raise ConfigurationError(f"query {i} has no positives")
        weights[i, pos] = 1.0 / pos.size
    return mul(tsum(mul(log_prob, Tensor(weights / n))), -1.0)


def _direction_loss(q_feats, batch_keys_m, labels_q, labels_k, queue, tau):
    """One direction of the symmetric loss: queries vs batch keys + queue.

    Queue entries carry the labels they were pushed with; same-label queue
    entries count as positives (part level: shared label; object level:
    same instance id)."""
    batch = np.asarray(batch_keys_m, dtype=np.float64)
    nb = batch.shape[0]
    key_labels = np.asarray(labels_k, dtype=np.int64)
    if queue is not None and queue.fill >= nb:
        q_rows, q_labels = queue.contents()
        keys = np.vstack([batch, q_rows])
        key_labels = np.concatenate([key_labels, q_labels])
    else:
        keys = batch
    positives = [np.flatnonzero(key_labels == lab) for lab in labels_q]
    return info_nce(q_feats, Tensor(keys), tau, positives)


def hcr_loss(batch, queues, cfg):
    """Two-level, two-direction loss.

    batch fields: img_part / shape_part (Tensors P x d), their momentum
    copies (arrays, unit-norm), part_labels (ints), img_obj / shape_obj
    (Tensors O x d) with momentum copies and obj_ids.
    queues: dict with keys (level, side) -> MomentumQueue.
    """
    tau = cfg.tau
    l_part = mul(
        _direction_loss(batch["img_part"], batch["shape_part_m"],
                        batch["part_labels"], batch["part_labels"],
                        queues.get(("part", "shape")), tau)
        + _direction_loss(batch["shape_part"], batch["img_part_m"],
                          batch["part_labels"], batch["part_labels"],
                          queues.get(("part", "image")), tau), 0.5)
    l_obj = mul(
        _direction_loss(batch["img_obj"], batch["shape_obj_m"],
                        batch["obj_ids"], batch["obj_ids"],
                        queues.get(("obj", "shape")), tau)
        + _direction_loss(batch["shape_obj"], batch["img_obj_m"],
                          batch["obj_ids"], batch["obj_ids"],
                          queues.get(("obj", "image")), tau), 0.5)
    total = mul(l_part, cfg.lambda_part) + mul(l_obj, cfg.lambda_obj)
    return total, {"L_part": float(l_part.data), "L_obj": float(l_obj.data)}


# -- training loop ---------------------------------------------------------

def _unit(x):
    return x / np.linalg.norm(x)


def _visible_views(item, part_idx):
    views = []
    for vi, r in enumerate(item.renders):
        if encoders.patch_membership(r.part_mask, part_idx + 1).any():
            views.append(vi)
    return views


def image_part_feature(item, part_idx, view_idx, params, cfg):
    """Image-side part feature for one view: pooled member tokens plus the
    member-region geometric summary, through the image head."""
    render = item.renders[view_idx]
    tokens = encoders.encode_patches(render, params, cfg)
    member = encoders.patch_membership(render.part_mask, part_idx + 1, cfg.patch)
    pooled = encoders.pool_part_features(tokens, member)
    extras = encoders.region_summary(render, member, cfg.patch)
    feat = concat([reshape(pooled, (1, -1)), Tensor(extras[None, :])], axis=1)
    return encoders.head_forward(feat, params, "img")


def shape_part_feature(item, part_idx, params):
    part = item.obj.parts[part_idx]
    local = encoders.part_local_points(item.part_clouds[part_idx].points,
                                       part.translation, part.scale)
    return encoders.head_forward(encoders.encode_part(local, params),
                                 params, "shape")


def _part_features(item, part_idx, view_idx, params, cfg):
    img = image_part_feature(item, part_idx, view_idx, params, cfg)
    shape = shape_part_feature(item, part_idx, params)
    return img, shape


def image_part_query(item, part_idx, params, cfg, views=None):
    """Query protocol: mean image-side feature over the part's visible views."""
    views = _visible_views(item, part_idx) if views is None else views
    if not views:
        raise encoders.PartInvisibleError("part visible in no view")
    feats = [image_part_feature(item, part_idx, vi, params, cfg).data
             for vi in views]
    return np.mean(feats, axis=0)


def retrieval_recall_at_1(query_items, params, cfg, key_items=None):
    """Part-level recall@1: multi-view-mean image query -> nearest shape
    feature by cosine, scored by label agreement.

    key_items plays the role of the retrieval database (default: the query
    items themselves, with self-matches excluded)."""
    self_keys = key_items is None
    img_feats, q_labels = [], []
    for item in query_items:
        for pi in range(item.obj.n_parts):
            views = _visible_views(item, pi)
            if not views:
                continue
            img_feats.append(_unit(image_part_query(item, pi, params, cfg, views)))
            q_labels.append(item.part_labels[pi])
    key_src = query_items if self_keys else key_items
    shape_feats, k_labels = [], []
    for item in key_src:
        for pi in range(item.obj.n_parts):
            if self_keys and not _visible_views(item, pi):
                continue
            shape_feats.append(_unit(shape_part_feature(item, pi, params).data))
            k_labels.append(item.part_labels[pi])
    sims = np.array(img_feats) @ np.array(shape_feats).T
    if self_keys:
        np.fill_diagonal(sims, -np.inf)  # self-match trivially shares the label
    nearest = sims.argmax(axis=1)
    return float((np.array(k_labels)[nearest] == np.array(q_labels)).mean())


def train_retriever(corpus, cfg, steps, seed=0, enc_cfg=None, log_path=None,
                    holdout_frac=0.2, log_every=50, params=None):
    """Optimize patch + part encoders under the contrastive objective.

    Returns (params, momentum_params, log_records). Encoder/decoder params
    share one dict; decoder heads are untouched here.
    """
    enc_cfg = enc_cfg or encoders.EncoderConfig()
    if params is None:
        params = encoders.init_encoder_params(enc_cfg, rng.stream(seed, "init"))
    params_m = {k: v.data.copy() for k, v in params.items()}
    n_hold = max(1, int(len(corpus) * holdout_frac))
    train_items, hold_items = corpus[:-n_hold], corpus[-n_hold:]
    trainable = {k: v for k, v in params.items()
                 if k.startswith(("patch.", "part.", "head."))}
    opt = Adam(trainable, lr=cfg.lr)
    queues = {(lvl, side): MomentumQueue(cfg.queue_size, enc_cfg.d, side)
              for lvl in ("part", "obj") for side in ("image", "shape")}
    label_ids = {lab: i for i, lab in enumerate(
        sorted({lab for it in corpus for lab in it.part_labels}))}
    records = []
    best_m, best_recall = None, -1.0
    rs = rng.stream(seed, "train")

    for step in range(steps):
        # cosine decay settles the features instead of oscillating at the end
        opt.lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / max(1, steps)))
        batch = _assemble_batch(train_items, params, params_m, enc_cfg, cfg,
                                label_ids, rs)
        loss, parts = hcr_loss(batch, queues, cfg)
        if not np.isfinite(loss.data):
            raise NumericalError(
                f"non-finite loss at step {step}; batch objects "
                f"{batch['obj_seeds']}, labels {batch['part_labels'].tolist()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        momentum_update({k: params_m[k] for k in trainable},
                        trainable, cfg.momentum)
        for side, key in (("image", "img_part_m"), ("shape", "shape_part_m")):
            queue_push(queues[("part", side)], batch[key], batch["part_labels"])
        for side, key in (("image", "img_obj_m"), ("shape", "shape_obj_m")):
            queue_push(queues[("obj", side)], batch[key], batch["obj_ids"])
        if step % log_every == 0 or step == steps - 1:
            # evaluate with the momentum encoder: its ~1/(1-m)-step average
            # is far less noisy than the live parameters
            pm_t = {k: Tensor(v) for k, v in params_m.items()}
            rec = {"step": step, **parts,
                   "recall@1": retrieval_recall_at_1(hold_items, pm_t, enc_cfg,
                                                     key_items=train_items),
                   "queue_fill": queues[("part", "shape")].fill}
            records.append(rec)
            if rec["recall@1"] > best_recall:
                best_recall = rec["recall@1"]
                best_m = {k: v.copy() for k, v in params_m.items()}
            if log_path:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
    # ship the best momentum checkpoint seen on the holdout trajectory
    return params, (best_m if best_m is not None else params_m), records


def _assemble_batch(items, params, params_m, enc_cfg, cfg, label_ids, rs):
    chosen = rs.choice(len(items), size=min(cfg.batch_objects, len(items)),
                       replace=False)
    pm_tensors = {k: Tensor(v) for k, v in params_m.items()}
    img_p, shp_p, img_pm, shp_pm, labels = [], [], [], [], []
    img_o, shp_o, img_om, shp_om, obj_ids = [], [], [], [], []
    seeds = []
    for oi in chosen:
        item = items[int(oi)]
        seeds.append(item.obj.seed)
        o_img, o_shp, o_img_m, o_shp_m = [], [], [], []
        for pi in range(item.obj.n_parts):
            views = _visible_views(item, pi)
            if not views:
                continue
            vi = views[int(rs.integers(0, len(views)))]
            img, shp = _part_features(item, pi, vi, params, enc_cfg)
            img_m, shp_m = _part_features(item, pi, vi, pm_tensors, enc_cfg)
            o_img.append(img)
            o_shp.append(shp)
            o_img_m.append(img_m.data)
            o_shp_m.append(shp_m.data)
            if len(labels) < cfg.max_parts_per_batch:
                img_p.append(img)
                shp_p.append(shp)
                img_pm.append(_unit(img_m.data))
                shp_pm.append(_unit(shp_m.data))
                labels.append(label_ids[item.part_labels[pi]])
        if o_img:
            img_o.append(encoders.object_pool(o_img))
            shp_o.append(encoders.object_pool(o_shp))
            img_om.append(_unit(np.mean(o_img_m, axis=0)))
            shp_om.append(_unit(np.mean(o_shp_m, axis=0)))
            obj_ids.append(int(oi))
    stack = lambda feats: concat_rows(feats)
    return {
        "img_part": stack(img_p), "shape_part": stack(shp_p),
        "img_part_m": np.array(img_pm), "shape_part_m": np.array(shp_pm),
        "part_labels": np.array(labels),
        "img_obj": stack(img_o), "shape_obj": stack(shp_o),
        "img_obj_m": np.array(img_om), "shape_obj_m": np.array(shp_om),
        "obj_ids": np.array(obj_ids), "obj_seeds": seeds,
    }


def concat_rows(feats):
    from .tensor import concat, reshape
    return concat([reshape(f, (1, -1)) for f in feats], axis=0)
