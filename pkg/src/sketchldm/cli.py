"""Command-line surface for the sketch synthesis pipeline.

Commands: synth-data, prepare-data, encode-photos, train-vae, train-ldm,
finetune-photo, sample, evaluate, render.  Exit codes: 0 success, 1 input or
configuration problem, 2 runtime failure.  No command overwrites an existing
output without --force, and every command is deterministic under --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .conditioning import (
    FixtureEncoder,
    LoraSpec,
    build_context_cache,
    load_clip_adapter,
    load_context_cache,
    save_context_cache,
)
from .config import RunConfig, load_run_config
from .diffusion import make_schedule
from .errors import (
    ConfigurationError,
    InvalidInputError,
    NumericalError,
    SketchLdmError,
)
from .evalkit import (
    clip_score,
    control_accuracy,
    extract_features,
    fid,
    retrieval_topk,
    sequences_to_rasters,
    train_feature_extractor,
)
from .sketch_data.cache import load_cache, save_cache
from .sketch_data.paired import load_photo_sketch_pairs
from .sketch_data.preprocess import count_strokes
from .sketch_data.quickdraw import load_quickdraw
from .sketch_data.render import render_raster, render_svg
from .sketch_data.synthetic import write_photo_sketch_fixture, write_synthetic_quickdraw
from .sketch_data.types import SketchSequence
from .train_ldm import (
    finetune_photo,
    load_ldm,
    sample_sketches,
    schedule_from_checkpoint,
    train_ldm,
)
from .vae.model import SketchVae, VaeConfig
from .vae.train import load_vae, records_to_tensor, train_vae


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors surface as validation failures (exit 1)."""

    def error(self, message):
        raise InvalidInputError(f"{self.prog}: {message}")


def _ensure_writable(paths, force: bool) -> None:
    for p in paths:
        p = Path(p)
        if p.exists() and not force:
            raise InvalidInputError(
                f"refusing to overwrite {p}; pass --force to replace it")


def _split_csv(text: str) -> list[str]:
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise InvalidInputError("expected a comma-separated list")
    return items


# ---------------------------------------------------------------------------
# data commands


def _cmd_synth_data(args) -> int:
    out = Path(args.out)
    corpus_path = out / "synthetic.ndjson"
    targets = [corpus_path]
    if args.pairs:
        targets.append(out / "pairs" / "manifest.tsv")
    _ensure_writable(targets, args.force)
    categories = _split_csv(args.categories)
    path = write_synthetic_quickdraw(corpus_path, categories,
                                     per_category=args.per_category,
                                     seed=args.seed)
    print(f"wrote {path} ({len(categories)} categories x {args.per_category})")
    if args.pairs:
        manifest = write_photo_sketch_fixture(out / "pairs", n_pairs=args.pairs,
                                              seed=args.seed)
        print(f"wrote {manifest} ({args.pairs} photo-sketch pairs)")
    return 0


def _cmd_prepare_data(args) -> int:
    out = Path(args.out)
    _ensure_writable([out], args.force)
    categories = _split_csv(args.categories)
    records, report = load_quickdraw(args.input, categories,
                                     n_points=args.n_points,
                                     epsilon=args.epsilon,
                                     per_category_limit=args.limit)
    save_cache(records, out, meta={
        "categories": sorted(categories),
        "n_points": args.n_points,
        "epsilon": args.epsilon,
    })
    print(report.summary())
    print(f"wrote {out} ({len(records)} records)")
    return 0


def _cmd_encode_photos(args) -> int:
    out = Path(args.out)
    _ensure_writable([out], args.force)
    if args.adapter == "clip":
        adapter = load_clip_adapter(context_width=args.context_width)
    else:
        adapter = FixtureEncoder(context_width=args.context_width)
    _, photos = load_photo_sketch_pairs(args.manifest, n_points=args.n_points)
    cache = build_context_cache(photos, adapter)
    save_context_cache(out, cache, adapter.context_width)
    print(f"wrote {out} ({len(cache)} contexts, width {adapter.context_width})")
    return 0


# ---------------------------------------------------------------------------
# training commands


def _load_cached_records(cfg: RunConfig):
    if not cfg.data.cache:
        raise ConfigurationError("config needs data.cache to point at a "
                                 "prepared record cache")
    records, meta = load_cache(cfg.data.cache)
    if meta.get("n_points") != cfg.data.n_points:
        raise ConfigurationError(
            f"cache was prepared with n_points={meta.get('n_points')}, "
            f"config says {cfg.data.n_points}")
    return records, meta


def _run_payload(cfg: RunConfig) -> dict:
    return {"run_config": cfg.to_dict(), "config_hash": cfg.config_hash}


def _cmd_train_vae(args) -> int:
    cfg = load_run_config(args.config)
    out_dir = Path(cfg.out_dir)
    ckpt, csv = out_dir / "vae.pt", out_dir / "vae_loss.csv"
    _ensure_writable([ckpt, csv], args.force)
    records, _ = _load_cached_records(cfg)
    vcfg = VaeConfig(n_points=cfg.data.n_points, ratio=cfg.data.ratio,
                     model_width=cfg.vae.width,
                     depth_per_stage=cfg.vae.depth_per_stage,
                     head_count=cfg.vae.head_count,
                     kl_weight=cfg.vae.kl_weight,
                     pad_l1_weight=cfg.vae.pad_l1_weight)
    _, info = train_vae(records_to_tensor(records), vcfg,
                        steps=cfg.train.steps, batch_size=cfg.train.batch_size,
                        lr=cfg.train.lr, seed=cfg.seed,
                        log_every=cfg.train.log_every, csv_path=csv,
                        checkpoint_path=ckpt,
                        total_steps=cfg.train.total_steps,
                        extra_payload=_run_payload(cfg))
    final = info["final"]
    print(f"trained {cfg.train.steps} steps; final total loss "
          f"{final['total']:.5f} (abs {final['l_abs']:.5f}, "
          f"state {final['l_state']:.5f})")
    print(f"wrote {ckpt} [config {cfg.config_hash}]")
    return 0


def _cmd_train_ldm(args) -> int:
    cfg = load_run_config(args.config)
    out_dir = Path(cfg.out_dir)
    ckpt, csv = out_dir / "ldm.pt", out_dir / "ldm_loss.csv"
    _ensure_writable([ckpt, csv], args.force)
    records, meta = _load_cached_records(cfg)
    vae, latent_std, _ = load_vae(args.vae)
    if vae.config.n_points != cfg.data.n_points:
        raise ConfigurationError(
            f"VAE was trained for n_points={vae.config.n_points}, "
            f"config says {cfg.data.n_points}")
    schedule = make_schedule(T=cfg.schedule.T,
                             beta_start=cfg.schedule.beta_start,
                             beta_end=cfg.schedule.beta_end)
    payload = _run_payload(cfg)
    payload["categories"] = meta.get("categories")
    payload["vae"] = {"config": dataclasses.asdict(vae.config),
                      "state_dict": vae.state_dict()}
    _, info = train_ldm(
        records, vae, latent_std, steps=cfg.train.steps,
        batch_size=cfg.train.batch_size, lr=cfg.train.lr, seed=cfg.seed,
        width=cfg.ldm.width, depth=cfg.ldm.depth,
        head_count=cfg.ldm.head_count, use_class=cfg.ldm.use_class,
        use_points=cfg.ldm.use_points, use_strokes=cfg.ldm.use_strokes,
        stroke_mode=cfg.ldm.stroke_mode, stroke_max=cfg.ldm.stroke_max,
        schedule=schedule, log_every=cfg.train.log_every, csv_path=csv,
        checkpoint_path=ckpt, total_steps=cfg.train.total_steps,
        extra_payload=payload)
    loss = info["final_loss"]
    print(f"trained {cfg.train.steps} steps; final loss "
          + (f"{loss:.5f}" if loss is not None else "n/a"))
    print(f"wrote {ckpt} [config {cfg.config_hash}]")
    return 0


def _cmd_finetune_photo(args) -> int:
    cfg = load_run_config(args.config)
    out_dir = Path(cfg.out_dir)
    ckpt, csv = out_dir / "ldm_photo.pt", out_dir / "ldm_photo_loss.csv"
    _ensure_writable([ckpt, csv], args.force)
    if not cfg.data.manifest:
        raise ConfigurationError("config needs data.manifest for paired data")
    if not cfg.data.context_cache:
        raise ConfigurationError(
            "config needs data.context_cache; run encode-photos first")
    base, latent_std, base_payload = load_ldm(args.base)
    vae = _vae_from_payload(base_payload, args.vae)
    records, _ = load_photo_sketch_pairs(cfg.data.manifest,
                                         n_points=cfg.data.n_points,
                                         epsilon=cfg.data.epsilon)
    contexts, _ = load_context_cache(cfg.data.context_cache)
    rank = args.lora_rank if args.lora_rank is not None else cfg.lora.rank
    schedule = schedule_from_checkpoint(base_payload)
    payload = _run_payload(cfg)
    payload["vae"] = {"config": dataclasses.asdict(vae.config),
                      "state_dict": vae.state_dict()}
    _, info, report = finetune_photo(
        records, contexts, base, vae, latent_std, steps=cfg.train.steps,
        lora=LoraSpec(rank=rank, alpha=cfg.lora.alpha),
        batch_size=cfg.train.batch_size, lr=cfg.train.lr, seed=cfg.seed,
        schedule=schedule, log_every=cfg.train.log_every, csv_path=csv,
        checkpoint_path=ckpt, extra_payload=payload)
    print(f"transplanted {len(report['copied'])} tensors from the base model; "
          f"{len(report['missing'])} new, {len(report['unused'])} dropped")
    loss = info["final_loss"]
    print(f"trained {cfg.train.steps} steps on {info['trainable_parameters']} "
          "adapter parameters; final loss "
          + (f"{loss:.5f}" if loss is not None else "n/a"))
    print(f"wrote {ckpt} [config {cfg.config_hash}]")
    return 0


# ---------------------------------------------------------------------------
# sampling


def _vae_from_payload(payload: dict, vae_flag: str | None) -> SketchVae:
    extra = payload.get("extra", {})
    if "vae" in extra:
        vae = SketchVae(VaeConfig(**extra["vae"]["config"]))
        vae.load_state_dict(extra["vae"]["state_dict"])
        vae.eval()
        return vae
    if vae_flag:
        return load_vae(vae_flag)[0]
    raise InvalidInputError(
        "checkpoint has no embedded decoder; pass --vae with the VAE "
        "checkpoint used during training")


def _resolve_category(value: str, payload: dict, num_classes: int) -> int:
    categories = payload.get("extra", {}).get("categories") or []
    if value in categories:
        return categories.index(value)
    try:
        class_id = int(value)
    except ValueError:
        raise InvalidInputError(
            f"unknown category {value!r}; known: {categories}") from None
    if not 0 <= class_id < num_classes:
        raise InvalidInputError(
            f"category id {class_id} out of range [0, {num_classes})")
    return class_id


def _autofill_strokes(points: np.ndarray, observed: list[int],
                      stroke_max: int, rng) -> np.ndarray:
    """Pick a stroke count compatible with each requested point count,
    preferring values seen during training (a stroke needs >= 2 points)."""
    out = np.empty(len(points), dtype=np.int64)
    for i, n in enumerate(points):
        cap = max(1, min(stroke_max, int(n) // 2))
        pool = [s for s in observed if s <= cap] or list(range(1, cap + 1))
        out[i] = pool[rng.integers(0, len(pool))]
    return out


def _autofill_points(strokes: np.ndarray, observed: list[int], n_max: int,
                     ratio: int, rng) -> np.ndarray:
    out = np.empty(len(strokes), dtype=np.int64)
    for i, s in enumerate(strokes):
        floor = 2 * int(s)
        pool = [n for n in observed if n >= floor]
        if not pool:
            pool = [n for n in range(floor, n_max + 1) if n % ratio == 0] or [n_max]
        out[i] = pool[rng.integers(0, len(pool))]
    return out


def _sequence_to_json(seq: SketchSequence, requested: dict) -> str:
    return json.dumps({
        "points": [[float(x), float(y), float(p)] for x, y, p in seq.points],
        "realized_length": int(seq.realized_length),
        "requested": requested,
    }, separators=(",", ":"))


def _build_sample_conditions(model, payload, args, num: int):
    """Resolve CLI knobs into per-sample condition arrays."""
    cfgb = model.config
    rng = np.random.default_rng(args.seed)
    observed = payload.get("extra", {}).get("observed", {})
    conditions, requested = {}, {}

    if cfgb.use_class:
        if args.category is None:
            raise InvalidInputError("this model needs --category")
        class_id = _resolve_category(args.category, payload, cfgb.num_classes)
        conditions["class_id"] = torch.full((num,), class_id, dtype=torch.long)
        requested["category"] = args.category
    elif args.category is not None:
        raise InvalidInputError("model was not trained with class conditioning")

    if cfgb.use_photo:
        if args.photo is None:
            raise InvalidInputError("this model needs --photo")
        photo_path = Path(args.photo)
        if not photo_path.is_file():
            raise InvalidInputError(f"photo not found: {photo_path}")
        ctx = FixtureEncoder(cfgb.context_width).encode(photo_path)
        conditions["photo_context"] = ctx[None].expand(num, -1, -1)
        requested["photo"] = str(photo_path)
    elif args.photo is not None:
        raise InvalidInputError("model was not trained with photo conditioning")

    if args.points is not None and not cfgb.use_points:
        raise InvalidInputError("model was not trained with point-count control")
    if args.strokes is not None and not cfgb.use_strokes:
        raise InvalidInputError("model was not trained with stroke-count control")

    points = strokes = None
    if args.points is not None:
        if not 1 <= args.points <= cfgb.n_points:
            raise InvalidInputError(
                f"--points must lie in [1, {cfgb.n_points}]")
        points = np.full(num, args.points, dtype=np.int64)
        requested["points"] = args.points
        if cfgb.use_strokes:
            strokes = _autofill_strokes(points,
                                        observed.get("stroke_counts", []),
                                        cfgb.stroke_max, rng)
    elif args.strokes is not None:
        if not 1 <= args.strokes <= cfgb.stroke_max:
            raise InvalidInputError(
                f"--strokes must lie in [1, {cfgb.stroke_max}]")
        strokes = np.full(num, args.strokes, dtype=np.int64)
        requested["strokes"] = args.strokes
        if cfgb.use_points:
            points = _autofill_points(strokes,
                                      observed.get("point_counts", []),
                                      cfgb.n_points, cfgb.ratio, rng)
    else:
        if cfgb.use_points or cfgb.use_strokes:
            raise InvalidInputError(
                "give exactly one of --points or --strokes")

    if cfgb.use_points and points is None:
        raise InvalidInputError("this model needs --points")
    if cfgb.use_strokes and strokes is None:
        raise InvalidInputError("this model needs --strokes")
    if points is not None:
        conditions["point_count"] = torch.from_numpy(points)
    if strokes is not None:
        conditions["stroke_count"] = torch.from_numpy(strokes)
    return conditions, requested, points, strokes


def _cmd_sample(args) -> int:
    model, latent_std, payload = load_ldm(args.ckpt)
    vae = _vae_from_payload(payload, args.vae)
    schedule = schedule_from_checkpoint(payload)
    num = args.num
    out = Path(args.out)
    names = [f"sketch_{i:03d}" for i in range(num)]
    targets = [out / "manifest.csv"]
    targets += [out / f"{n}.json" for n in names]
    targets += [out / f"{n}.svg" for n in names]
    _ensure_writable(targets, args.force)

    conditions, requested, points, strokes = _build_sample_conditions(
        model, payload, args, num)
    sketches = sample_sketches(model, vae, latent_std, count=num,
                               schedule=schedule, seed=args.seed,
                               sample_steps=args.steps, **conditions)

    out.mkdir(parents=True, exist_ok=True)
    rows = ["index,file,requested_points,requested_strokes,"
            "realized_points,realized_strokes"]
    for i, (name, seq) in enumerate(zip(names, sketches)):
        per_requested = dict(requested)
        if points is not None:
            per_requested["points"] = int(points[i])
        if strokes is not None:
            per_requested["strokes"] = int(strokes[i])
        (out / f"{name}.json").write_text(
            _sequence_to_json(seq, per_requested), encoding="utf-8")
        (out / f"{name}.svg").write_text(render_svg(seq), encoding="utf-8")
        rows.append(",".join([
            str(i), name,
            str(int(points[i])) if points is not None else "",
            str(int(strokes[i])) if strokes is not None else "",
            str(seq.realized_length),
            str(count_strokes(seq).stroke_count),
        ]))
    (out / "manifest.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {num} sketches to {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation


def _raster_png_bytes(seq: SketchSequence, side: int = 64) -> bytes:
    img = Image.fromarray(render_raster(seq, side=side), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _fixture_image_embedder():
    """image bytes/path -> one pooled deterministic feature vector."""
    encoder = FixtureEncoder(64)

    def embed(item) -> np.ndarray:
        data = item if isinstance(item, bytes) else Path(item).read_bytes()
        return encoder.encode_bytes(data).mean(dim=0).numpy().astype(np.float64)
    return embed


def _evaluate_control(model, vae, latent_std, payload, args) -> dict:
    cfgb = model.config
    schedule = schedule_from_checkpoint(payload)
    rng = np.random.default_rng(args.seed)
    observed = payload.get("extra", {}).get("observed", {})
    num = args.num
    class_id = None
    if cfgb.use_class:
        class_id = torch.from_numpy(
            rng.integers(0, cfgb.num_classes, size=num))
    if args.knob == "points":
        if not cfgb.use_points:
            raise InvalidInputError("model has no point-count control")
        grid = np.arange(2 * cfgb.ratio, cfgb.n_points + 1, cfgb.ratio)
        requested = grid[rng.integers(0, len(grid), size=num)]
        points = requested
        strokes = (_autofill_strokes(points, observed.get("stroke_counts", []),
                                     cfgb.stroke_max, rng)
                   if cfgb.use_strokes else None)
        tolerance = cfgb.ratio
    else:
        if not cfgb.use_strokes:
            raise InvalidInputError("model has no stroke-count control")
        hi = min(8, cfgb.stroke_max)
        requested = rng.integers(1, hi + 1, size=num)
        strokes = requested
        points = (_autofill_points(strokes, observed.get("point_counts", []),
                                   cfgb.n_points, cfgb.ratio, rng)
                  if cfgb.use_points else None)
        tolerance = 1
    kwargs = {}
    if class_id is not None:
        kwargs["class_id"] = class_id
    if points is not None:
        kwargs["point_count"] = torch.from_numpy(points)
    if strokes is not None:
        kwargs["stroke_count"] = torch.from_numpy(strokes)
    sketches = sample_sketches(model, vae, latent_std, count=num,
                               schedule=schedule, seed=args.seed,
                               sample_steps=args.steps, **kwargs)
    if args.knob == "points":
        realized = [s.realized_length for s in sketches]
    else:
        realized = [count_strokes(s).stroke_count for s in sketches]
    report = control_accuracy(requested, realized, tolerance=tolerance)
    rows = ["requested,realized"]
    rows += [f"{int(r)},{int(z)}" for r, z in zip(requested, realized)]
    return {"summary": dataclasses.asdict(report),
            "summary_text": report.summary(),
            "csv": "\n".join(rows) + "\n"}


def _evaluate_fid(model, vae, latent_std, payload, args) -> dict:
    if not args.cache:
        raise InvalidInputError("fid needs --cache with reference records")
    records, _ = load_cache(args.cache)
    reference = [r.sketch for r in records]
    labels = torch.tensor([r.category_id for r in records])
    rasters = sequences_to_rasters(reference, side=64)
    extractor = train_feature_extractor(
        rasters, labels, num_classes=int(labels.max()) + 1, seed=args.seed)
    ref_feats = extract_features(extractor, rasters)
    if args.self_check:
        value = fid(ref_feats, ref_feats)
        return {"summary": {"fid": value, "mode": "self"},
                "summary_text": f"self fid {value:.3e}", "csv": None}
    schedule = schedule_from_checkpoint(payload)
    cfgb = model.config
    rng = np.random.default_rng(args.seed)
    observed = payload.get("extra", {}).get("observed", {})
    num = args.num
    kwargs = {}
    if cfgb.use_class:
        kwargs["class_id"] = torch.from_numpy(
            rng.integers(0, cfgb.num_classes, size=num))
    if cfgb.use_points:
        pool = observed.get("point_counts") or [cfgb.n_points]
        points = np.array([pool[rng.integers(0, len(pool))] for _ in range(num)])
        kwargs["point_count"] = torch.from_numpy(points)
        if cfgb.use_strokes:
            kwargs["stroke_count"] = torch.from_numpy(_autofill_strokes(
                points, observed.get("stroke_counts", []), cfgb.stroke_max, rng))
    elif cfgb.use_strokes:
        pool = observed.get("stroke_counts") or [1]
        kwargs["stroke_count"] = torch.from_numpy(
            np.array([pool[rng.integers(0, len(pool))] for _ in range(num)]))
    sketches = sample_sketches(model, vae, latent_std, count=num,
                               schedule=schedule, seed=args.seed,
                               sample_steps=args.steps, **kwargs)
    gen_feats = extract_features(extractor,
                                 sequences_to_rasters(sketches, side=64))
    value = fid(gen_feats, ref_feats)
    return {"summary": {"fid": value, "samples": num},
            "summary_text": f"fid {value:.4f} over {num} samples", "csv": None}


def _evaluate_photo_features(model, vae, latent_std, payload, args):
    """Shared plumbing for clip/retrieval: per pair, sample one sketch from
    the photo's context and embed both through the fixture encoder."""
    if not args.manifest:
        raise InvalidInputError("this metric needs --manifest with pairs")
    if not model.config.use_photo:
        raise InvalidInputError("checkpoint is not photo-conditional")
    _, photos = load_photo_sketch_pairs(args.manifest,
                                        n_points=model.config.n_points)
    schedule = schedule_from_checkpoint(payload)
    cfgb = model.config
    encoder = FixtureEncoder(cfgb.context_width)
    rng = np.random.default_rng(args.seed)
    observed = payload.get("extra", {}).get("observed", {})
    pids = sorted(photos)[: args.num]
    contexts = torch.stack([encoder.encode(photos[pid]) for pid in pids])
    num = len(pids)
    kwargs = {"photo_context": contexts}
    if cfgb.use_points:
        pool = observed.get("point_counts") or [cfgb.n_points]
        points = np.array([pool[rng.integers(0, len(pool))] for _ in range(num)])
        kwargs["point_count"] = torch.from_numpy(points)
        if cfgb.use_strokes:
            kwargs["stroke_count"] = torch.from_numpy(_autofill_strokes(
                points, observed.get("stroke_counts", []), cfgb.stroke_max, rng))
    elif cfgb.use_strokes:
        pool = observed.get("stroke_counts") or [1]
        kwargs["stroke_count"] = torch.from_numpy(
            np.array([pool[rng.integers(0, len(pool))] for _ in range(num)]))
    sketches = sample_sketches(model, vae, latent_std, count=num,
                               schedule=schedule, seed=args.seed,
                               sample_steps=args.steps, **kwargs)
    sketch_pngs = [_raster_png_bytes(s) for s in sketches]
    photo_paths = [photos[pid] for pid in pids]
    return sketch_pngs, photo_paths


def _evaluate_clip(model, vae, latent_std, payload, args) -> dict:
    sketch_pngs, photo_paths = _evaluate_photo_features(
        model, vae, latent_std, payload, args)
    value = clip_score(sketch_pngs, photo_paths, _fixture_image_embedder())
    return {"summary": {"clip_score": value, "pairs": len(photo_paths)},
            "summary_text": f"clip score {value:.2f} over "
                            f"{len(photo_paths)} pairs", "csv": None}


def _evaluate_retrieval(model, vae, latent_std, payload, args) -> dict:
    sketch_pngs, photo_paths = _evaluate_photo_features(
        model, vae, latent_std, payload, args)
    embed = _fixture_image_embedder()
    sketch_vecs = np.stack([embed(b) for b in sketch_pngs])
    photo_vecs = np.stack([embed(p) for p in photo_paths])
    count = len(photo_paths)
    ks = [k for k in (1, 5, 10) if k <= count] or [1]
    table = retrieval_topk(sketch_vecs, photo_vecs, list(range(count)), ks=ks)
    text = ", ".join(f"top-{k} {v:.1%}" for k, v in table.items())
    return {"summary": {"retrieval": table, "pairs": count},
            "summary_text": text, "csv": None}


def _cmd_evaluate(args) -> int:
    out = Path(args.out)
    summary_path = out.with_suffix(out.suffix + ".summary.json")
    _ensure_writable([out, summary_path], args.force)
    model, latent_std, payload = load_ldm(args.ckpt)
    vae = _vae_from_payload(payload, args.vae)
    runner = {"control": _evaluate_control, "fid": _evaluate_fid,
              "clip": _evaluate_clip, "retrieval": _evaluate_retrieval}
    result = runner[args.metric](model, vae, latent_std, payload, args)
    out.parent.mkdir(parents=True, exist_ok=True)
    if result["csv"] is not None:
        out.write_text(result["csv"], encoding="utf-8")
        summary_path.write_text(json.dumps(result["summary"], indent=2) + "\n",
                                encoding="utf-8")
        print(f"wrote {out} and {summary_path}")
    else:
        out.write_text(json.dumps(result["summary"], indent=2) + "\n",
                       encoding="utf-8")
        print(f"wrote {out}")
    print(result["summary_text"])
    return 0


# ---------------------------------------------------------------------------
# rendering


def _load_sketch_json(path: Path) -> SketchSequence:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        points = np.asarray(doc["points"], dtype=np.float32)
        seq = SketchSequence(points=points,
                             realized_length=int(doc["realized_length"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: not a sketch file: {exc}") from exc
    seq.validate()
    return seq


def _cmd_render(args) -> int:
    out = Path(args.out)
    jobs = []
    for item in args.input:
        p = Path(item)
        if not p.exists():
            raise InvalidInputError(f"input not found: {p}")
        if p.suffix == ".json":
            jobs.append((p.stem, _load_sketch_json(p)))
        else:
            records, _ = load_cache(p)
            jobs += [(f"{p.stem}_{i:04d}", r.sketch)
                     for i, r in enumerate(records)]
    ext = "svg" if args.format == "svg" else "png"
    targets = [out / f"{name}.{ext}" for name, _ in jobs]
    _ensure_writable(targets, args.force)
    out.mkdir(parents=True, exist_ok=True)
    for (name, seq), target in zip(jobs, targets):
        if args.format == "svg":
            target.write_text(render_svg(seq, side=args.side), encoding="utf-8")
        else:
            Image.fromarray(render_raster(seq, side=args.side),
                            mode="L").save(target)
    print(f"rendered {len(jobs)} sketches to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="sketchldm",
                     description="Abstraction-controllable sketch synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", default="star,grid")
    p.add_argument("--per-category", type=int, default=100)
    p.add_argument("--pairs", type=int, default=0,
                   help="also write this many photo-sketch fixture pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("prepare-data", help="preprocess ndjson into a record cache")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--categories", required=True)
    p.add_argument("--n-points", type=int, default=96)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--limit", type=int, default=None,
                   help="per-category record limit")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_prepare_data)

    p = sub.add_parser("encode-photos", help="cache photo context vectors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--adapter", choices=["fixture", "clip"], default="fixture")
    p.add_argument("--context-width", type=int, default=64)
    p.add_argument("--n-points", type=int, default=96)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_encode_photos)

    p = sub.add_parser("train-vae", help="train the sketch compressor")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_train_vae)

    p = sub.add_parser("train-ldm", help="train the latent denoiser")
    p.add_argument("--config", required=True)
    p.add_argument("--vae", required=True,
                   help="VAE checkpoint from train-vae")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_train_ldm)

    p = sub.add_parser("finetune-photo", help="adapt a class model to photos")
    p.add_argument("--config", required=True)
    p.add_argument("--base", required=True,
                   help="class-conditional LDM checkpoint")
    p.add_argument("--vae", default=None,
                   help="fallback VAE checkpoint if the base has none embedded")
    p.add_argument("--lora-rank", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_finetune_photo)

    p = sub.add_parser("sample", help="draw sketches from a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vae", default=None)
    p.add_argument("--category", default=None)
    p.add_argument("--photo", default=None)
    knob = p.add_mutually_exclusive_group()
    knob.add_argument("--points", type=int, default=None)
    knob.add_argument("--strokes", type=int, default=None)
    p.add_argument("--num", type=int, default=8)
    p.add_argument("--steps", type=int, default=None,
                   help="denoising steps (default: the full schedule)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("evaluate", help="run a metric against a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vae", default=None)
    p.add_argument("--metric", choices=["control", "fid", "clip", "retrieval"],
                   required=True)
    p.add_argument("--knob", choices=["points", "strokes"], default="points")
    p.add_argument("--num", type=int, default=200)
    p.add_argument("--cache", default=None, help="reference record cache (fid)")
    p.add_argument("--manifest", default=None,
                   help="photo-sketch pairs (clip/retrieval)")
    p.add_argument("--self-check", action="store_true",
                   help="fid of the reference set against itself")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("render", help="render sketch files or a cache")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["svg", "png"], default="svg")
    p.add_argument("--side", type=int, default=256)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SketchLdmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
