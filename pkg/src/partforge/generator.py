"""Dual-lane diffusion transformer with retrieval cross-attention.

Part latents ride as token groups through alternating local (within-part)
and global (across-part) attention; every block cross-attends to the
fused context of query + retrieved patch tokens. Training is rectified
flow matching (velocity target eps - Z0); sampling is Euler integration
with classifier-free guidance over the context.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import encoders, rng
from .optim import Adam
from .tensor import (NumericalError, Tensor, concat, layer_norm, matmul, mul,
                     reshape, softmax_stable, take, tanh, tmean, transpose,
                     tsum)


class ConfigError(ValueError):
    pass


@dataclass
class DiTConfig:
    n_blocks: int = 6
    global_blocks: tuple = (0, 2, 4)
    width: int = 32            # token width == part-latent width
    heads: int = 4
    tokens_per_part: int = 16
    max_parts: int = 8
    ctx_dim: int = 32          # patch-token width
    cfg_drop: float = 0.1

    def __post_init__(self):
        if any(b >= self.n_blocks or b < 0 for b in self.global_blocks):
            raise ConfigError("global_blocks must index existing blocks")
        if self.width % self.heads:
            raise ConfigError("width must divide by head count")


def paper_config():
    """Paper-scale configuration, documentation-grade."""
    return DiTConfig(n_blocks=21, global_blocks=tuple(range(0, 21, 2)),
                     width=1024, heads=16, tokens_per_part=16, max_parts=8,
                     ctx_dim=1024)


@dataclass
class CfgParams:
    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError("guidance scale must be >= 0")


def init_dit_params(cfg, rs):
    w, c = cfg.width, cfg.ctx_dim
    p = {}

    def lin(fan_in, *shape):
        return Tensor(rs.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)

    def norm_pair(name):
        p[name + ".g"] = Tensor(np.ones(w), requires_grad=True)
        p[name + ".b"] = Tensor(np.zeros(w), requires_grad=True)

    for i in range(cfg.n_blocks):
        pre = f"dit.b{i}."
        lanes = ["local"] + (["global"] if i in cfg.global_blocks else [])
        for lane in lanes:
            for mat in ("q", "k", "v", "o"):
                p[pre + lane + ".W" + mat] = lin(w, w, w)
            norm_pair(pre + lane + ".ln")
        p[pre + "cross.Wq"] = lin(w, w, w)
        p[pre + "cross.Wk"] = lin(c, c, w)
        p[pre + "cross.Wv"] = lin(c, c, w)
        p[pre + "cross.Wo"] = lin(w, w, w)
        norm_pair(pre + "cross.ln")
        p[pre + "mlp.W1"] = lin(w, w, 4 * w)
        p[pre + "mlp.b1"] = Tensor(np.zeros(4 * w), requires_grad=True)
        p[pre + "mlp.W2"] = lin(4 * w, 4 * w, w)
        p[pre + "mlp.b2"] = Tensor(np.zeros(w), requires_grad=True)
        norm_pair(pre + "mlp.ln")
    p["dit.part_emb"] = Tensor(0.02 * rs.standard_normal((cfg.max_parts, w)),
                               requires_grad=True)
    p["dit.time.W"] = lin(w, w, w)
    p["dit.time.b"] = Tensor(np.zeros(w), requires_grad=True)
    norm_pair("dit.out.ln")
    p["dit.out.W"] = Tensor(np.zeros((w, w)), requires_grad=True)  # zero-init head
    p["dit.out.b"] = Tensor(np.zeros(w), requires_grad=True)
    p["dit.null_ctx"] = Tensor(0.02 * rs.standard_normal((1, c)), requires_grad=True)
    p["dit.pose.W"] = lin(w, w, 4)
    p["dit.pose.b"] = Tensor(np.zeros(4), requires_grad=True)
    return p


def fuse_context(e_q, retrieved_tokens, k):
    """Concat(query tokens, retrieved tokens in rank order) -> (k+1)L x d."""
    e_q = np.asarray(e_q, dtype=np.float64)
    rows = [e_q]
    for tok in retrieved_tokens[:k]:
        tok = np.asarray(tok, dtype=np.float64)
        if tok.shape[1] != e_q.shape[1]:
            raise ConfigError("token width mismatch in fused context")
        rows.append(tok)
    return np.vstack(rows)


def _timestep_embedding(t, width):
    half = width // 2
    freqs = 2.0 ** np.arange(half)
    ang = np.pi * freqs * t
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _attention(x, keys, params, prefix, heads):
    """Multi-head attention; x supplies Q, keys supplies K/V."""
    r = x.shape[0]
    m = keys.shape[0]
    w = params[prefix + ".Wq"].shape[1]
    dh = w // heads
    q = matmul(x, params[prefix + ".Wq"])
    k = matmul(keys, params[prefix + ".Wk"])
    v = matmul(keys, params[prefix + ".Wv"])
    qh = transpose(reshape(q, (r, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (m, heads, dh)), (1, 0, 2))
    vh = transpose(reshape(v, (m, heads, dh)), (1, 0, 2))
    logits = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    attn = softmax_stable(logits)
    out = matmul(attn, vh)                      # heads x r x dh
    out = reshape(transpose(out, (1, 0, 2)), (r, w))
    return matmul(out, params[prefix + ".Wo"])


def _ln(x, params, name):
    return layer_norm(x, params[name + ".g"], params[name + ".b"])


def dit_forward(params, cfg, z_t, t, ctx, part_ids, return_tokens=False):
    """Velocity prediction for noisy part tokens.

    z_t: (N, T, width) array or Tensor; t: shared noise level; ctx:
    (M, ctx_dim) array/Tensor or None for the learned null context;
    part_ids: N ints indexing the part-ID embedding table.
    """
    part_ids = np.asarray(part_ids, dtype=np.int64)
    n = part_ids.shape[0]
    tkn = cfg.tokens_per_part
    if np.any(part_ids >= cfg.max_parts):
        raise ConfigError("part id exceeds embedding table")
    x = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=np.float64))
    x = reshape(x, (n * tkn, cfg.width))
    pid_rows = take(params["dit.part_emb"], np.repeat(part_ids, tkn))
    t_emb = matmul(Tensor(_timestep_embedding(float(t), cfg.width)[None, :]),
                   params["dit.time.W"]) + params["dit.time.b"]
    x = x + pid_rows + t_emb
    if ctx is None:
        ctx_t = concat([params["dit.null_ctx"]] * 4, axis=0)
    else:
        ctx_t = ctx if isinstance(ctx, Tensor) else Tensor(np.asarray(ctx, dtype=np.float64))
    for i in range(cfg.n_blocks):
        pre = f"dit.b{i}."
        parts_out = []
        xn = _ln(x, params, pre + "local.ln")
        for pi in range(n):
            sl = take(xn, slice(pi * tkn, (pi + 1) * tkn))
            parts_out.append(_attention(sl, sl, params, pre + "local", cfg.heads))
        x = x + concat(parts_out, axis=0)
        if i in cfg.global_blocks:
            xg = _ln(x, params, pre + "global.ln")
            x = x + _attention(xg, xg, params, pre + "global", cfg.heads)
        xc = _ln(x, params, pre + "cross.ln")
        x = x + _attention(xc, ctx_t, params, pre + "cross", cfg.heads)
        xm = _ln(x, params, pre + "mlp.ln")
        h = tanh(matmul(xm, params[pre + "mlp.W1"]) + params[pre + "mlp.b1"])
        x = x + matmul(h, params[pre + "mlp.W2"]) + params[pre + "mlp.b2"]
    tokens = _ln(x, params, "dit.out.ln")
    v = x + matmul(tokens, params["dit.out.W"]) + params["dit.out.b"]
    v = reshape(v, (n, tkn, cfg.width))
    if return_tokens:
        return v, tokens
    return v


def pose_from_tokens(tokens, params, cfg, n_parts):
    """Pose head: per-part (translation, log-scale) from mean final tokens."""
    per_part = reshape(tokens, (n_parts, cfg.tokens_per_part, cfg.width))
    means = tmean(per_part, axis=1)
    return matmul(means, params["dit.pose.W"]) + params["dit.pose.b"]


def interpolate(z0, eps, t):
    """Straight-line bridge Z_t = (1 - t) Z_0 + t eps."""
    return (1.0 - t) * np.asarray(z0) + t * np.asarray(eps)


def flow_loss(params, cfg, z0, eps, t, ctx, part_ids):
    """Velocity regression: || v_hat - (eps - Z_0) ||^2 averaged elementwise."""
    z_t = interpolate(z0, eps, t)
    v_hat, tokens = dit_forward(params, cfg, z_t, t, ctx, part_ids,
                                return_tokens=True)
    target = Tensor(np.asarray(eps) - np.asarray(z0))
    diff = v_hat - target
    loss = tmean(mul(diff, diff))
    if not np.all(np.isfinite(loss.data)):
        raise NumericalError("non-finite flow loss")
    return loss, tokens


def total_loss(flow, hcr):
    """Unweighted sum; the contrastive lambdas live inside the HCR term."""
    return flow + hcr


# -- sampling --------------------------------------------------------------

def _velocity(params, cfg, z, t, ctx, part_ids, guidance):
    if guidance.scale == 1.0:
        return dit_forward(params, cfg, z, t, ctx, part_ids).data
    v_un = dit_forward(params, cfg, z, t, None, part_ids).data
    if guidance.scale == 0.0:
        return v_un
    v_c = dit_forward(params, cfg, z, t, ctx, part_ids).data
    return v_un + guidance.scale * (v_c - v_un)


def sample_latents(params, cfg, n_parts, ctx, steps, guidance, seed,
                   part_ids=None, oracle_velocity=None):
    """Euler integration of the learned (or oracle) velocity from t=1 to 0.

    Returns (Z at t=0 as (N, T, width), pose head output (N, 4)).
    """
    part_ids = np.arange(n_parts) if part_ids is None else np.asarray(part_ids)
    rs = rng.stream(seed, "sample")
    z = rs.standard_normal((n_parts, cfg.tokens_per_part, cfg.width))
    dt = 1.0 / steps
    for s in range(steps):
        t = 1.0 - s * dt
        if oracle_velocity is not None:
            v = oracle_velocity(z, t)
        else:
            v = _velocity(params, cfg, z, t, ctx, part_ids, guidance)
        z = z - dt * v
    _, tokens = dit_forward(params, cfg, z, 0.0, ctx, part_ids, return_tokens=True)
    poses = pose_from_tokens(tokens, params, cfg, n_parts).data
    return z, poses


def latents_to_parts(z, poses, enc_params):
    """Token groups -> PartLatent list (z = token mean; pose head gives T)."""
    out = []
    for i in range(z.shape[0]):
        zi = z[i].mean(axis=0)
        tr = poses[i, :3]
        scale = float(np.exp(np.clip(poses[i, 3], -6.0, 3.0)))
        out.append(encoders.PartLatent(zi, i, tr.copy(), scale))
    return out


# -- training --------------------------------------------------------------

@dataclass
class GenTrainConfig:
    steps: int = 500
    lr: float = 1e-3
    k: int = 3
    cfg_drop: float = 0.1
    pose_weight: float = 1.0
    stage: str = "flow"        # "flow" (stage 1) or "joint" (stage 2)
    backbone_lr_scale: float = 1.0
    head_lr_scale: float = 1.0
    log_every: int = 50
    clip_norm: float = 1.0
    # paper-scale anchors, kept for the "paper" profile
    paper_lr: float = 3e-5
    paper_batch: int = 48


def object_condition_tokens(item, view_idx, enc_params, enc_cfg):
    render = item.renders[view_idx]
    return encoders.encode_patches(render, enc_params, enc_cfg).data


def ground_truth_tokens(item, enc_params, cfg):
    """Clean Z_0: each part's encoder latent tiled across its token group."""
    z0 = np.zeros((item.obj.n_parts, cfg.tokens_per_part, cfg.width))
    poses = np.zeros((item.obj.n_parts, 4))
    for pi, part in enumerate(item.obj.parts):
        local = encoders.part_local_points(item.part_clouds[pi].points,
                                           part.translation, part.scale)
        z = encoders.encode_part(local, enc_params).data
        z0[pi] = np.tile(z, (cfg.tokens_per_part, 1))
        poses[pi, :3] = part.translation
        poses[pi, 3] = np.log(part.scale)
    return z0, poses


def train_generator(corpus, retrieval_index, enc_params, enc_cfg, dit_params,
                    cfg, tcfg, seed=0, log_path=None, query_embed=None):
    """Stage-1 flow training (encoders frozen) with retrieval conditioning.

    query_embed(item, view_idx) -> object embedding for index queries; when
    None, conditioning uses the query tokens only (no retrieval).
    """
    from .index import query_topk
    lr_scale = {"dit.": tcfg.backbone_lr_scale}
    opt = Adam(dit_params, lr=tcfg.lr, lr_scale=lr_scale)
    rs = rng.stream(seed, "gen_train")
    records = []
    for step in range(tcfg.steps):
        item = corpus[int(rs.integers(0, len(corpus)))]
        vi = int(rs.integers(0, len(item.renders)))
        z0, poses_gt = ground_truth_tokens(item, enc_params, cfg)
        eps = rs.standard_normal(z0.shape)
        t = float(rs.uniform())
        if rs.uniform() < tcfg.cfg_drop:
            ctx = None
        else:
            e_q = object_condition_tokens(item, vi, enc_params, enc_cfg)
            retrieved = []
            if retrieval_index is not None and query_embed is not None:
                q = query_embed(item, vi)
                hits = query_topk(retrieval_index, q,
                                  min(tcfg.k, len(retrieval_index.entries)))
                retrieved = [e.tokens.astype(np.float64) for e, _ in hits]
            ctx = fuse_context(e_q, retrieved, len(retrieved))
        part_ids = np.arange(item.obj.n_parts)
        loss, tokens = flow_loss(dit_params, cfg, z0, eps, t, ctx, part_ids)
        pose_pred = pose_from_tokens(tokens, dit_params, cfg, item.obj.n_parts)
        pose_diff = pose_pred - Tensor(poses_gt)
        loss_total = loss + mul(tmean(mul(pose_diff, pose_diff)), tcfg.pose_weight)
        if not np.isfinite(loss_total.data):
            raise NumericalError(f"non-finite generator loss at step {step} "
                                 f"(object seed {item.obj.seed}, view {vi})")
        opt.zero_grad()
        loss_total.backward()
        opt.step(clip_norm=tcfg.clip_norm)
        if step % tcfg.log_every == 0 or step == tcfg.steps - 1:
            rec = {"step": step, "flow_loss": float(loss.data),
                   "total_loss": float(loss_total.data)}
            records.append(rec)
            if log_path:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
    return dit_params, records
