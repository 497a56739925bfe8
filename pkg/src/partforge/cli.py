"""Command-line pipeline driver.

Every command resolves its configuration from defaults < config file <
flags, writes the resolved config next to its outputs, and is
deterministic given (config, seed). Errors exit nonzero with a
machine-readable JSON line on stderr.
"""

import configparser
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np

from . import editor as editor_mod
from . import encoders, generator, hcr, index as index_mod, io_formats, metrics
from . import rng, synthdata
from .tensor import Tensor

EXIT_BAD_INPUT = 2
EXIT_FAILED = 1


@dataclass
class RunConfig:
    seed: int = 0
    profile: str = "desk"
    # dataset
    n_objects: int = 120
    points_per_part: int = 256
    min_parts: int = 2
    max_parts: int = 8
    # encoder dims
    d: int = 32
    h: int = 64
    ph: int = 64
    # HCR
    tau: float = 0.07
    lambda_part: float = 0.03
    lambda_obj: float = 0.03
    queue_size: int = 512
    momentum: float = 0.99
    batch_objects: int = 8
    retriever_steps: int = 2000
    retriever_lr: float = 1e-3
    # decoder
    decoder_steps: int = 400
    # generator
    gen_blocks: int = 6
    gen_heads: int = 4
    tokens_per_part: int = 16
    gen_steps: int = 1000
    gen_lr: float = 1e-3
    # retrieval / sampling
    k: int = 3
    sampler_steps: int = 50
    cfg_scale: float = 1.0
    # editing
    alpha: float = 0.5
    k_steps: int = 20
    t_edit: float = 0.5
    theta_valid: float = 0.5

    def apply_profile(self):
        if self.profile == "paper":
            # documentation-grade full-scale settings; not runnable on a desk
            self.d, self.h = 1024, 2048
            self.gen_blocks, self.gen_heads = 21, 16
            self.sampler_steps = 250
            self.n_objects = 10000
        return self


def _load_config_file(path):
    cp = configparser.ConfigParser()
    cp.read_string("[run]\n" + Path(path).read_text())
    out = {}
    for section in cp.sections():
        out.update(dict(cp[section]))
    return out


def resolve_config(config_path, overrides):
    cfg = RunConfig()
    file_vals = _load_config_file(config_path) if config_path else {}
    for f in fields(RunConfig):
        if f.name in file_vals:
            raw = file_vals[f.name]
            setattr(cfg, f.name, f.type(raw) if f.type is not str else raw)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.apply_profile()


def _write_resolved(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True))


def _fail(code, message, **extra):
    sys.stderr.write(json.dumps({"error": message, **extra}) + "\n")
    sys.exit(code)


def _require(path, producer):
    if not Path(path).exists():
        _fail(EXIT_BAD_INPUT,
              f"missing artifact {path}; run `partforge {producer}` first",
              artifact=str(path), producer=producer)


def _enc_cfg(cfg):
    return encoders.EncoderConfig(d=cfg.d, h=cfg.h, ph=cfg.ph)


def _dit_cfg(cfg):
    if cfg.profile == "paper":
        return generator.paper_config()
    return generator.DiTConfig(n_blocks=cfg.gen_blocks,
                               global_blocks=tuple(range(0, cfg.gen_blocks, 2)),
                               heads=cfg.gen_heads, width=cfg.d,
                               tokens_per_part=cfg.tokens_per_part,
                               ctx_dim=cfg.d)


def _hcr_cfg(cfg):
    return hcr.HcrConfig(tau=cfg.tau, lambda_part=cfg.lambda_part,
                         lambda_obj=cfg.lambda_obj, queue_size=cfg.queue_size,
                         momentum=cfg.momentum, batch_objects=cfg.batch_objects,
                         lr=cfg.retriever_lr)


def _load_corpus(data_dir, cfg):
    """Rebuild the in-memory corpus deterministically from the dataset seed."""
    meta = json.loads((Path(data_dir) / "dataset.json").read_text())
    return synthdata.build_corpus(meta["seed"], meta["n_objects"],
                                  points_per_part=meta["points_per_part"],
                                  min_parts=meta["min_parts"],
                                  max_parts=meta["max_parts"])


def _params_from_checkpoint(path):
    arrays = io_formats.load_params(path)
    return encoders.encoder_params_from_arrays(arrays)


common_options = [
    click.option("--config", "config_path", type=click.Path(exists=True)),
    click.option("--seed", type=int, default=None),
    click.option("--out", "out_dir", type=click.Path(), default="runs"),
    click.option("--profile", type=click.Choice(["desk", "paper"]), default=None),
]


def add_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
def main():
    """Part-structured retrieval-augmented 3D generation pipeline."""


@main.command("synth")
@add_options(common_options)
@click.option("--n-objects", type=int, default=None)
def cmd_synth(config_path, seed, out_dir, profile, n_objects):
    """Generate the synthetic dataset and export it to disk."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile,
                                       "n_objects": n_objects})
    out = Path(out_dir) / "dataset"
    _write_resolved(cfg, out)
    corpus = synthdata.build_corpus(cfg.seed, cfg.n_objects,
                                    points_per_part=cfg.points_per_part,
                                    min_parts=cfg.min_parts,
                                    max_parts=cfg.max_parts)
    for i, item in enumerate(corpus):
        synthdata.export_object(item.obj, out / f"obj_{i:05d}",
                                points_per_part=cfg.points_per_part)
    (out / "dataset.json").write_text(json.dumps(
        {"seed": cfg.seed, "n_objects": cfg.n_objects,
         "points_per_part": cfg.points_per_part,
         "min_parts": cfg.min_parts, "max_parts": cfg.max_parts}, indent=2))
    click.echo(f"wrote {len(corpus)} objects to {out}")


@main.command("train-retriever")
@add_options(common_options)
@click.option("--steps", type=int, default=None)
@click.option("--data", "data_dir", type=click.Path(), default="runs/dataset")
def cmd_train_retriever(config_path, seed, out_dir, profile, steps, data_dir):
    """Contrastive training of the patch/part encoders."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    if steps is not None:
        cfg.retriever_steps = steps
    _require(Path(data_dir) / "dataset.json", "synth")
    out = Path(out_dir) / "retriever"
    _write_resolved(cfg, out)
    corpus = _load_corpus(data_dir, cfg)
    params, params_m, recs = hcr.train_retriever(
        corpus, _hcr_cfg(cfg), cfg.retriever_steps, seed=cfg.seed,
        enc_cfg=_enc_cfg(cfg), log_path=str(out / "train_log.jsonl"))
    # ship the EMA weights: they are what the logged recall is measured with
    for k, v in params.items():
        if k.startswith(("patch.", "part.", "head.")):
            v.data[...] = params_m[k]
    params, dec_recs = encoders.train_decoder(params, steps=cfg.decoder_steps,
                                              seed=cfg.seed, freeze_encoder=True)
    io_formats.save_params(out / "encoders.prtw",
                           encoders.encoder_param_arrays(params))
    io_formats.save_params(out / "encoders_momentum.prtw", params_m)
    click.echo(f"final recall@1 {recs[-1]['recall@1']:.3f} -> {out}")


@main.command("build-index")
@add_options(common_options)
@click.option("--data", "data_dir", type=click.Path(), default="runs/dataset")
@click.option("--curate", type=int, default=None,
              help="k-means curation target size")
def cmd_build_index(config_path, seed, out_dir, profile, data_dir, curate):
    """Embed the corpus into the persisted retrieval index."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    ckpt = Path(out_dir) / "retriever" / "encoders.prtw"
    _require(ckpt, "train-retriever")
    _require(Path(data_dir) / "dataset.json", "synth")
    out = Path(out_dir) / "index"
    _write_resolved(cfg, out)
    corpus = _load_corpus(data_dir, cfg)
    params = _params_from_checkpoint(ckpt)
    idx = index_mod.build_index(corpus, params, _enc_cfg(cfg),
                                curate_target=curate, seed=cfg.seed,
                                fingerprint=io_formats.params_fingerprint(ckpt))
    index_mod.save_index(idx, out / "corpus.prti")
    click.echo(f"indexed {len(idx.entries)} assets -> {out}")


@main.command("train-gen")
@add_options(common_options)
@click.option("--steps", type=int, default=None)
@click.option("--data", "data_dir", type=click.Path(), default="runs/dataset")
def cmd_train_gen(config_path, seed, out_dir, profile, steps, data_dir):
    """Flow-matching training of the dual-lane denoiser."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    if steps is not None:
        cfg.gen_steps = steps
    ckpt = Path(out_dir) / "retriever" / "encoders.prtw"
    idx_path = Path(out_dir) / "index" / "corpus.prti"
    _require(ckpt, "train-retriever")
    _require(idx_path, "build-index")
    out = Path(out_dir) / "generator"
    _write_resolved(cfg, out)
    corpus = _load_corpus(data_dir, cfg)
    enc_params = _params_from_checkpoint(ckpt)
    idx = index_mod.load_index(idx_path,
                               expect_fingerprint=io_formats.params_fingerprint(ckpt))
    dit_cfg = _dit_cfg(cfg)
    dit_params = generator.init_dit_params(dit_cfg, rng.stream(cfg.seed, "dit"))
    enc_cfg = _enc_cfg(cfg)

    def query_embed(item, vi):
        feats = []
        for pi in range(item.obj.n_parts):
            try:
                feats.append(hcr.image_part_feature(item, pi, vi, enc_params,
                                                    enc_cfg).data)
            except encoders.PartInvisibleError:
                continue
        return np.mean(feats, axis=0) if feats else np.zeros(enc_cfg.d)

    tcfg = generator.GenTrainConfig(steps=cfg.gen_steps, lr=cfg.gen_lr,
                                    k=cfg.k)
    dit_params, recs = generator.train_generator(
        corpus, idx, enc_params, enc_cfg, dit_params, dit_cfg, tcfg,
        seed=cfg.seed, log_path=str(out / "train_log.jsonl"),
        query_embed=query_embed)
    io_formats.save_params(out / "dit.prtw",
                           {k: v.data for k, v in dit_params.items()})
    click.echo(f"final flow loss {recs[-1]['flow_loss']:.4f} -> {out}")


def _load_stack(out_dir, cfg):
    """Load encoder checkpoint, DiT checkpoint, and index with fingerprints."""
    ckpt = Path(out_dir) / "retriever" / "encoders.prtw"
    dit_ckpt = Path(out_dir) / "generator" / "dit.prtw"
    idx_path = Path(out_dir) / "index" / "corpus.prti"
    _require(ckpt, "train-retriever")
    _require(dit_ckpt, "train-gen")
    _require(idx_path, "build-index")
    enc_params = _params_from_checkpoint(ckpt)
    dit_params = {k: Tensor(v, requires_grad=True)
                  for k, v in io_formats.load_params(dit_ckpt).items()}
    idx = index_mod.load_index(idx_path,
                               expect_fingerprint=io_formats.params_fingerprint(ckpt))
    return enc_params, dit_params, idx


def _generate_asset(cfg, enc_params, dit_params, idx, n_parts, seed):
    """Sample one asset conditioned on a retrieved exemplar context."""
    dit_cfg = _dit_cfg(cfg)
    hits = index_mod.query_topk(idx, idx.entries[
        int(rng.stream(seed, "pick").integers(0, len(idx.entries)))
    ].object_embedding, min(cfg.k, len(idx.entries)))
    e_q = hits[0][0].tokens.astype(np.float64)
    ctx = generator.fuse_context(e_q, [e.tokens.astype(np.float64)
                                       for e, _ in hits], len(hits))
    z, poses = generator.sample_latents(
        dit_params, dit_cfg, n_parts, ctx, cfg.sampler_steps,
        generator.CfgParams(cfg.cfg_scale), seed)
    latents = generator.latents_to_parts(z, poses, enc_params)
    meshes = [(lat.part_id, *encoders.decode_part(lat, enc_params))
              for lat in latents]
    retrievals = [{"asset_id": e.asset_id, "similarity": s} for e, s in hits]
    return latents, meshes, retrievals


@main.command("generate")
@add_options(common_options)
@click.option("--parts", "n_parts", type=int, default=3)
def cmd_generate(config_path, seed, out_dir, profile, n_parts):
    """Sample a part-structured asset and export its meshes."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    enc_params, dit_params, idx = _load_stack(out_dir, cfg)
    out = Path(out_dir) / "generated" / f"asset_{cfg.seed:06d}"
    _write_resolved(cfg, out)
    latents, meshes, retrievals = _generate_asset(cfg, enc_params, dit_params,
                                                  idx, n_parts, cfg.seed)
    io_formats.save_meshes(out / "asset.prtm", meshes)
    (out / "latents.json").write_text(json.dumps(
        [{"part_id": l.part_id, "z": l.z.tolist(),
          "translation": l.translation.tolist(), "scale": l.scale}
         for l in latents], indent=2))
    (out / "retrievals.json").write_text(json.dumps(retrievals, indent=2))
    click.echo(f"generated {n_parts}-part asset -> {out}")


@main.command("edit")
@add_options(common_options)
@click.option("--asset", "asset_dir", type=click.Path(exists=True), required=True)
@click.option("--edit-op", type=click.Choice(["swap", "refine", "compose"]),
              default="swap")
@click.option("--target-parts", default="0",
              help="comma-separated part indices; ';' separates compose groups")
@click.option("--label", "cond_label", default=None,
              help="condition label for the edit")
@click.option("--alpha", type=float, default=None)
def cmd_edit(config_path, seed, out_dir, profile, asset_dir, edit_op,
             target_parts, cond_label, alpha):
    """Apply a masked part edit to a generated asset."""
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    if alpha is not None:
        cfg.alpha = alpha
    enc_params, dit_params, idx = _load_stack(out_dir, cfg)
    asset_dir = Path(asset_dir)
    lat_spec = json.loads((asset_dir / "latents.json").read_text())
    latents = [encoders.PartLatent(np.array(l["z"]), l["part_id"],
                                   np.array(l["translation"]), l["scale"])
               for l in lat_spec]
    if edit_op == "compose":
        groups = [[int(i) for i in grp.split(",") if i != ""]
                  for grp in target_parts.split(";")]
        targets = groups
    else:
        targets = tuple(int(i) for i in target_parts.split(","))
    label = cond_label or idx.entries[0].parts[0].label
    c = index_mod.label_condition(idx, label)
    c_edit = [c] * len(targets) if edit_op == "compose" else c
    try:
        req = editor_mod.EditRequest(targets, edit_op, c_edit, alpha=cfg.alpha,
                                     k=cfg.k, k_steps=cfg.k_steps,
                                     t_edit=cfg.t_edit,
                                     theta_valid=cfg.theta_valid, seed=cfg.seed)
    except editor_mod.EditError as exc:
        _fail(EXIT_BAD_INPUT, str(exc))
    result = editor_mod.edit(req, latents, dit_params, _dit_cfg(cfg),
                             enc_params, idx)
    out = asset_dir / f"edit_{cfg.seed:06d}"
    _write_resolved(cfg, out)
    meshes = [(l.part_id, *encoders.decode_part(l, enc_params))
              for l in result.latents]
    io_formats.save_meshes(out / "edited.prtm", meshes)
    (out / "edit_result.json").write_text(json.dumps(
        {"accepted": result.accepted, "retries_used": result.retries_used,
         "seam_vertices": result.seam_vertices, "metrics": result.metrics,
         "op": edit_op, "targets": list(map(list, targets))
         if edit_op == "compose" else list(targets)}, indent=2))
    click.echo(f"edit accepted={result.accepted} -> {out}")


@main.command("eval")
@add_options(common_options)
@click.option("--data", "data_dir", type=click.Path(), default="runs/dataset")
@click.option("--quick-steps", type=int, default=60,
              help="retriever steps per sweep point")
@click.option("--n-objects", type=int, default=16,
              help="corpus size for the sweep")
def cmd_eval(config_path, seed, out_dir, profile, data_dir, quick_steps,
             n_objects):
    """Ablation sweeps (retrieval k; contrastive lambda) -> CSV + figures."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    out = Path(out_dir) / "eval"
    _write_resolved(cfg, out)
    corpus = synthdata.build_corpus(cfg.seed, n_objects,
                                    points_per_part=cfg.points_per_part)
    enc_cfg = _enc_cfg(cfg)

    # -- k sweep: retrieval context size vs reconstruction proxy ----------
    k_values = [1, 3, 5, 10]
    ckpt = Path(out_dir) / "retriever" / "encoders.prtw"
    if ckpt.exists():
        params = _params_from_checkpoint(ckpt)
    else:
        params = encoders.init_encoder_params(enc_cfg, rng.stream(cfg.seed, "init"))
    idx = index_mod.build_index(corpus, params, enc_cfg)
    k_rows = []
    for k in k_values:
        sims = []
        for e in idx.entries:
            hits = index_mod.query_topk(idx, e.object_embedding,
                                        min(k, len(idx.entries)))
            sims.append(np.mean([s for _, s in hits]))
        k_rows.append({"k": k, "mean_topk_similarity": float(np.mean(sims))})
    with open(out / "sweep_k.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["k", "mean_topk_similarity"])
        w.writeheader()
        w.writerows(k_rows)

    # -- lambda sweep: short retriever runs per weight --------------------
    lam_values = [0.01, 0.02, 0.03, 0.05, 0.10]
    lam_rows = []
    for lam in lam_values:
        hcfg = _hcr_cfg(cfg)
        hcfg.lambda_part = hcfg.lambda_obj = lam
        _, _, recs = hcr.train_retriever(corpus, hcfg, quick_steps,
                                         seed=cfg.seed, enc_cfg=enc_cfg,
                                         log_every=max(1, quick_steps - 1))
        lam_rows.append({"lambda": lam,
                         "final_L_part": recs[-1]["L_part"],
                         "final_L_obj": recs[-1]["L_obj"],
                         "recall_at_1": recs[-1]["recall@1"]})
    with open(out / "sweep_lambda.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["lambda", "final_L_part",
                                           "final_L_obj", "recall_at_1"])
        w.writeheader()
        w.writerows(lam_rows)

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot([r["k"] for r in k_rows],
                 [r["mean_topk_similarity"] for r in k_rows], marker="o")
    axes[0].set_xlabel("retrieval k")
    axes[0].set_ylabel("mean top-k cosine")
    axes[0].set_title("Context size sweep")
    axes[1].plot([r["lambda"] for r in lam_rows],
                 [r["recall_at_1"] for r in lam_rows], marker="o")
    axes[1].set_xlabel("contrastive lambda")
    axes[1].set_ylabel("recall@1")
    axes[1].set_title("Loss weight sweep")
    fig.tight_layout()
    fig.savefig(out / "sweeps.png", dpi=120)
    plt.close(fig)
    click.echo(f"wrote sweep CSVs and figures -> {out}")


@main.command("serve")
@add_options(common_options)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
def cmd_serve(config_path, seed, out_dir, profile, host, port):
    """Run the HTTP editing service."""
    import uvicorn
    from .service import create_app
    cfg = resolve_config(config_path, {"seed": seed, "profile": profile})
    enc_params, dit_params, idx = _load_stack(out_dir, cfg)
    app = create_app(cfg, enc_params, dit_params, idx,
                     store_dir=Path(out_dir) / "assets")
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
