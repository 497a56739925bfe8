"""Trainable desk-scale encoders and the part decoder.

The patch encoder maps depth renders to L dense tokens (a stand-in for a
pretrained vision backbone); the part encoder is a permutation-invariant
point network; the part decoder maps a latent back to primitive
parameters. Pooling operators build part- and object-level features from
patch tokens.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .synthdata import PATCH_SIZE, RENDER_SIZE, PART_LABELS
from .tensor import (Tensor, concat, matmul, softplus, take, tanh, tmax,
                     tmean, reshape)

MEMBERSHIP_THRESHOLD = 0.25  # strict: a patch joins a part if > 25% of pixels match
DEPTH_SCALE = 1.0 / 3.0
PIXEL_CHANNELS = 5  # fg, depth, patch-relative depth, |grad x|, |grad y|


class PartInvisibleError(RuntimeError):
    """No patch belongs to the requested part in this view."""


@dataclass
class EncoderConfig:
    d: int = 32           # embedding width
    h: int = 64           # hidden width
    ph: int = 64          # patch-encoder hidden width
    render_size: int = RENDER_SIZE
    patch: int = PATCH_SIZE

    @property
    def n_patches(self):
        return (self.render_size // self.patch) ** 2

    @property
    def patch_pixels(self):
        return self.patch * self.patch

    @property
    def patch_feat(self):
        return self.patch_pixels * PIXEL_CHANNELS


@dataclass
class PartLatent:
    z: np.ndarray
    part_id: int
    translation: np.ndarray
    scale: float
    label: str = None

    def copy(self):
        return PartLatent(self.z.copy(), self.part_id, self.translation.copy(),
                          self.scale, self.label)


def init_encoder_params(cfg, rs):
    """Patch encoder + part encoder + part decoder, one flat named dict."""
    d, h = cfg.d, cfg.h

    def lin(fan_in, *shape):
        return Tensor(rs.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)

    return {
        # patch MLP is bias-free so all-background renders map to exactly
        # the positional embeddings
        "patch.W1": lin(cfg.patch_feat, cfg.patch_feat, cfg.ph),
        "patch.W2": lin(cfg.ph, cfg.ph, d),
        "patch.pos": Tensor(0.02 * rs.standard_normal((cfg.n_patches, d)),
                            requires_grad=True),
        "head.img.W1": lin(d + N_REGION_FEATS, d + N_REGION_FEATS, h),
        "head.img.b1": Tensor(np.zeros(h), requires_grad=True),
        "head.img.W2": lin(h, h, d),
        "head.img.b2": Tensor(np.zeros(d), requires_grad=True),
        "head.shape.W1": lin(d, d, h),
        "head.shape.b1": Tensor(np.zeros(h), requires_grad=True),
        "head.shape.W2": lin(h, h, d),
        "head.shape.b2": Tensor(np.zeros(d), requires_grad=True),
        "part.W1": lin(3, 3, h),
        "part.b1": Tensor(np.zeros(h), requires_grad=True),
        "part.W2": lin(h, h, d),
        "part.b2": Tensor(np.zeros(d), requires_grad=True),
        "dec.W1": lin(d, d, h),
        "dec.b1": Tensor(np.zeros(h), requires_grad=True),
        "dec.kind": lin(h, h, len(geometry.KINDS)),
        "dec.kind_b": Tensor(np.zeros(len(geometry.KINDS)), requires_grad=True),
        "dec.size": lin(h, h, 3),
        "dec.size_b": Tensor(np.zeros(3), requires_grad=True),
        "dec.pose": lin(h, h, 4),
        "dec.pose_b": Tensor(np.zeros(4), requires_grad=True),
    }


def depth_features(depth):
    """Raw depth raster -> scaled depth image; background (non-finite) is 0."""
    d = np.asarray(depth, dtype=np.float64)
    return np.where(np.isfinite(d), d, 0.0) * DEPTH_SCALE


def _to_patches(img, patch):
    s = img.shape[0]
    g = s // patch
    return img.reshape(g, patch, g, patch).transpose(0, 2, 1, 3).reshape(g * g, patch * patch)


def patch_pixel_features(depth, patch):
    """L x (patch^2 * 5) fixed featurization of a depth raster.

    Channels per pixel: foreground bit, scaled depth, depth relative to the
    patch's foreground mean, and horizontal/vertical gradient magnitudes.
    An all-background raster maps to exactly zero.
    """
    d = np.asarray(depth, dtype=np.float64)
    fg = np.isfinite(d).astype(np.float64)
    d0 = depth_features(d)
    gx = np.zeros_like(d0)
    gy = np.zeros_like(d0)
    gx[:, :-1] = np.abs(d0[:, 1:] - d0[:, :-1])
    gy[:-1, :] = np.abs(d0[1:, :] - d0[:-1, :])
    fg_p = _to_patches(fg, patch)
    d0_p = _to_patches(d0, patch)
    cnt = fg_p.sum(axis=1, keepdims=True)
    mean = np.divide(d0_p.sum(axis=1, keepdims=True), cnt,
                     out=np.zeros_like(cnt), where=cnt > 0)
    rel_p = (d0_p - mean) * fg_p
    return np.hstack([fg_p, d0_p, rel_p, _to_patches(gx, patch),
                      _to_patches(gy, patch)])


def encode_patches(render, params, cfg):
    """L x d patch tokens: bias-free 2-layer MLP on fixed pixel features,
    plus a learned positional embedding."""
    if render.depth.shape != (cfg.render_size, cfg.render_size):
        raise ValueError("render size does not match encoder config")
    feats = patch_pixel_features(render.depth, cfg.patch)
    hidden = tanh(matmul(Tensor(feats), params["patch.W1"]))
    return matmul(hidden, params["patch.W2"]) + params["patch.pos"]


def head_forward(x, params, side):
    """2-layer projection head for the contrastive space; residual when the
    input and output widths match."""
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    row = reshape(xt, (1, -1))
    hidden = tanh(matmul(row, params[f"head.{side}.W1"]) + params[f"head.{side}.b1"])
    out = matmul(hidden, params[f"head.{side}.W2"]) + params[f"head.{side}.b2"]
    if out.shape == row.shape:
        out = out + row
    return reshape(out, (-1,))


N_REGION_FEATS = 6


def region_summary(render, membership, patch):
    """Geometric summary of a part's member-patch region in one view.

    Mean pooling of tokens erases extent; these six scalars (log member
    count, bbox height/width, fill ratio, aspect, mean member depth) carry
    it. All values are O(1) by construction.
    """
    member = np.asarray(membership)
    idx = np.flatnonzero(member)
    g = render.depth.shape[0] // patch
    if idx.size == 0:
        return np.zeros(N_REGION_FEATS)
    rows, cols = idx // g, idx % g
    h = (rows.max() - rows.min() + 1) / g
    w = (cols.max() - cols.min() + 1) / g
    n = idx.size
    fill = n / ((rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1))
    d0 = _to_patches(depth_features(render.depth), patch)[idx]
    return np.array([np.log1p(n) / np.log1p(g * g), h, w, fill,
                     h / (h + w), d0.mean()])


def patch_membership(part_mask, part_id, patch=PATCH_SIZE):
    """Boolean per-patch membership: > 25% of the patch's pixels carry the id."""
    frac = _to_patches((np.asarray(part_mask) == part_id).astype(np.float64), patch).mean(axis=1)
    return frac > MEMBERSHIP_THRESHOLD


def pool_part_features(tokens, membership):
    """Mean of member tokens; raises if the part owns no patch in this view."""
    idx = np.flatnonzero(membership)
    if idx.size == 0:
        raise PartInvisibleError("part has no member patches in this view")
    return tmean(take(tokens, idx), axis=0)


def object_pool(part_features):
    """Arithmetic mean of per-part feature vectors."""
    if not part_features:
        raise ValueError("need at least one part feature")
    rows = concat([reshape(f, (1, -1)) for f in part_features], axis=0)
    return tmean(rows, axis=0)


def encode_part(points, params):
    """Permutation-invariant embedding of a local-frame point cloud."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    hidden = tanh(matmul(Tensor(pts), params["part.W1"]) + params["part.b1"])
    feats = matmul(hidden, params["part.W2"]) + params["part.b2"]
    return tmax(feats, axis=0)


def part_local_points(cloud_points, translation, scale):
    return (np.asarray(cloud_points) - np.asarray(translation)) / float(scale)


def decoder_forward(z, params):
    """Differentiable decoder heads from a latent (Tensor or array)."""
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    hidden = tanh(matmul(reshape(zt, (1, -1)), params["dec.W1"]) + params["dec.b1"])
    kind_logits = matmul(hidden, params["dec.kind"]) + params["dec.kind_b"]
    size = softplus(matmul(hidden, params["dec.size"]) + params["dec.size_b"])
    pose = matmul(hidden, params["dec.pose"]) + params["dec.pose_b"]
    return {"kind_logits": reshape(kind_logits, (-1,)),
            "size": reshape(size, (-1,)),
            "pose_t": take(reshape(pose, (-1,)), slice(0, 3)),
            "pose_log_s": take(reshape(pose, (-1,)), 3)}


def decode_part(latent, params):
    """Latent -> posed triangle mesh (verts, faces) via primitive parameters."""
    out = decoder_forward(latent.z, params)
    kind = geometry.KINDS[int(np.argmax(out["kind_logits"].data))]
    size = np.maximum(out["size"].data, 1e-4)
    verts, faces = geometry.tessellate(kind, size)
    verts = verts * float(np.exp(out["pose_log_s"].data)) + out["pose_t"].data
    verts = verts * latent.scale + latent.translation
    return verts, faces


def decoder_loss(params, kind_idx, size, cloud_local):
    """Supervised loss for one primitive: kind CE + size MSE + identity-pose MSE."""
    from .tensor import softmax_stable, tlog, tsum
    z = encode_part(cloud_local, params)
    out = decoder_forward(z, params)
    probs = softmax_stable(reshape(out["kind_logits"], (1, -1)))
    ce = -tlog(take(reshape(probs, (-1,)), int(kind_idx)))
    size_err = tmean((out["size"] - Tensor(np.asarray(size))) ** 2)
    pose_err = tmean(out["pose_t"] ** 2) + (out["pose_log_s"] ** 2)
    return ce + size_err + pose_err


def train_decoder(params, steps=400, seed=0, lr=1e-2, batch=8,
                  points_per_cloud=256, freeze_encoder=False, log_every=50):
    """Fit the part decoder (optionally jointly with the part encoder) on
    primitives drawn from the synthetic label priors."""
    from . import rng as _rng
    from .optim import Adam
    from .synthdata import PART_LABELS, _LABEL_PRIORS
    from . import geometry as geo
    trainable = {k: v for k, v in params.items()
                 if k.startswith("dec.") or (not freeze_encoder and k.startswith("part."))}
    opt = Adam(trainable, lr=lr)
    rs = _rng.stream(seed, "decoder")
    records = []
    for step in range(steps):
        total = None
        for _ in range(batch):
            label = PART_LABELS[int(rs.integers(0, len(PART_LABELS)))]
            kind, ranges = _LABEL_PRIORS[label]
            size = np.array([rs.uniform(lo, hi) for lo, hi in ranges])
            cloud = geo.sample_surface_local(kind, size, points_per_cloud, rs)
            loss = decoder_loss(params, geo.KINDS.index(kind), size, cloud)
            total = loss if total is None else total + loss
        total = total * (1.0 / batch)
        opt.zero_grad()
        total.backward()
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            records.append({"step": step, "loss": float(total.data)})
    return params, records


def encoder_param_arrays(params):
    return {k: v.data.copy() for k, v in params.items()}


def encoder_params_from_arrays(arrays):
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
