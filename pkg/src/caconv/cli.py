"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numeric divergence, 5 shape mismatch. Diagnostics go to stderr; reports
and tables go to stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dataio import (DEFAULT_SENTINEL, DependencySpec, Manifest, Record, crop_tiles,
                     iter_tiles, load_dataset, load_manifest, mask_to_labels, synth_dataset,
                     write_dataset)
from .dependency import cooccurrence, write_report
from .errors import (ConfigError, DataError, DimensionError, InfeasibleSpecError, NumericError,
                     UsageError)
from .imageio import read_image, read_mask, write_gray, write_rgb
from .metrics import evaluate
from .model import Model, load_checkpoint, save_checkpoint
from .training import holdout, train

log = logging.getLogger("caconv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_SHAPE = 0, 2, 3, 4, 5


def _load_training_manifest(cfg: RunConfig) -> Manifest:
    if cfg.manifest is None:
        raise ConfigError("config sets no data.manifest")
    manifest = load_manifest(cfg.manifest)
    if cfg.class_order is not None:
        try:
            manifest = manifest.reorder(cfg.class_order)
        except DataError as exc:
            raise ConfigError(f"model.class_order disagrees with the manifest: {exc}") from None
    return manifest


def _aligned(manifest: Manifest, model: Model) -> Manifest:
    """Reorder manifest columns to the model's class order when names are known."""
    names = model.config.class_names
    if manifest.n_classes != model.config.n_classes:
        raise DimensionError(f"manifest has {manifest.n_classes} classes, checkpoint "
                             f"{model.config.n_classes}")
    if names is None or list(names) == manifest.class_names:
        return manifest
    try:
        return manifest.reorder(names)
    except DataError:
        raise DimensionError(f"manifest classes {manifest.class_names} differ from checkpoint "
                             f"classes {list(names)}") from None


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.checkpoint is not None:
        cfg.checkpoint = Path(args.checkpoint)
    manifest = _load_training_manifest(cfg)
    data = load_dataset(manifest, cfg.input_size)
    trn, val = holdout(data, cfg.val_fraction, cfg.seed)
    model = Model.init(cfg.model_config(manifest.n_classes, manifest.class_names), cfg.seed)
    log.info("training %s on %d images, validating on %d", cfg.kind, len(trn), len(val))
    result = train(model, trn, val, cfg.schedule(), seed=cfg.seed, threshold=cfg.threshold)
    cfg.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cfg.checkpoint, model, result.best_arrays)
    result.write_log(cfg.log)
    best = result.history[result.best_epoch - 1]
    log.info("best epoch %d (val F2 %.4f); wrote %s and %s", best.epoch, best.val_f2,
             cfg.checkpoint, cfg.log)
    return EXIT_OK


def format_report(names, summary, labels) -> str:
    lines = ["class,precision,recall,tp,fp,fn"]
    for name, p, r, c in zip(names, labels.precision, labels.recall, labels.counts):
        ps = "absent" if np.isnan(p) else f"{100 * p:.2f}"
        rs = "absent" if np.isnan(r) else f"{100 * r:.2f}"
        lines.append(f"{name},{ps},{rs},{c.tp},{c.fp},{c.fn}")
    lines += ["", "mean_f2,pe,re,pc,rc", summary.csv_line()]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    threshold = args.threshold
    cfg = load_config(args.config) if args.config else None
    if threshold is None:
        threshold = cfg.threshold if cfg is not None else 0.5
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold must lie in [0, 1], got {threshold}")
    ckpt = args.checkpoint or (cfg.checkpoint if cfg is not None else None)
    manifest_path = args.manifest or (cfg.manifest if cfg is not None else None)
    if ckpt is None or manifest_path is None:
        raise UsageError("eval needs --checkpoint and --manifest (or a config naming them)")
    model = load_checkpoint(ckpt)
    manifest = _aligned(load_manifest(manifest_path), model)
    data = load_dataset(manifest, model.config.extractor.input_size)
    summary, labels = evaluate(model.predict(data.images), data.labels, threshold)
    report = format_report(manifest.class_names, summary, labels)
    sys.stdout.write(report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report)
    return EXIT_OK


def normalize_maps(maps: np.ndarray) -> np.ndarray:
    """Jointly min-max scale ``S x S x N`` maps to uint8; a constant stack becomes 128."""
    lo, hi = float(maps.min()), float(maps.max())
    if hi == lo:
        return np.full(maps.shape, 128, dtype=np.uint8)
    return np.round((maps - lo) / (hi - lo) * 255.0).astype(np.uint8)


def upsample(img: np.ndarray, size: int) -> np.ndarray:
    factor = size // img.shape[0]
    if factor * img.shape[0] != size:
        raise DimensionError(f"cannot upsample {img.shape[0]} to {size} by an integer factor")
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def cmd_export_attention(args) -> int:
    model = load_checkpoint(args.checkpoint)
    size = model.config.extractor.input_size
    image = read_image(args.image)
    if image.shape[:2] != (size, size):
        raise DimensionError(f"image {args.image} is {image.shape[1]}x{image.shape[0]}, "
                             f"model expects {size}x{size}")
    maps = model.attention_maps(image).data
    scaled = normalize_maps(maps)
    names = model.config.class_names or tuple(f"class{l}" for l in range(scaled.shape[-1]))
    out = Path(args.out)
    for l, name in enumerate(names):
        stem = f"{l:02d}_{_safe(name)}"
        write_gray(out / f"{stem}.pgm", scaled[..., l])
        write_gray(out / f"{stem}_up.pgm", upsample(scaled[..., l], size))
        print(f"{l},{name},{float(maps[..., l].min())!r},{float(maps[..., l].max())!r}")
    log.info("wrote %d map pairs under %s", len(names), out)
    return EXIT_OK


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def cmd_analyze_deps(args) -> int:
    manifest = load_manifest(args.manifest, check_paths=False)
    if len(manifest) == 0:
        raise DataError(f"manifest {args.manifest} has no records")
    matrix = cooccurrence(manifest.label_matrix(), manifest.class_names)
    sys.stdout.write(matrix.to_csv())
    if args.out:
        for path in write_report(matrix, args.out, image=not args.no_image):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    names = [n.strip() for n in args.classes.split(",") if n.strip()]
    out = Path(args.out)
    if not Path(args.tiles).is_dir():
        raise DataError(f"tiles directory not found: {args.tiles}")
    records, rejected = [], []
    for img_path, mask_path in iter_tiles(args.tiles):
        image = read_image(img_path)
        mask = read_mask(mask_path)
        kept_here = 0
        for crop in crop_tiles(image, mask, args.window, args.stride):
            tag = f"{img_path.stem}_{crop.row}_{crop.col}"
            labels = mask_to_labels(crop.mask, len(names), args.sentinel)
            if labels is None:
                rejected.append(tag)
                continue
            rel = f"img/{tag}.png"
            write_rgb(out / rel, crop.image)
            records.append(Record(rel, tuple(int(b) for b in labels)))
            kept_here += 1
        if kept_here == 0:
            log.warning("tile %s produced no usable crops", img_path.name)
    manifest = Manifest(names, records, out)
    manifest.save(out / "manifest.csv")
    (out / "rejected.txt").write_text("".join(t + "\n" for t in rejected))
    if rejected:
        log.warning("rejected %d crops containing unclassified pixels (see %s)", len(rejected),
                    out / "rejected.txt")
    counts = manifest.label_matrix().sum(axis=0)
    print("class,count")
    for name, c in zip(names, counts):
        print(f"{name},{int(c)}")
    print(f"total,{len(records)}")
    return EXIT_OK


QUICKSTART = """\
# small synthetic run; see README for every key
model.blocks = 2x8, 2x16, 2x32
model.pools = 1, 1, 0
model.input_size = {size}
model.hidden = 32
train.max_epochs = {epochs}
train.lr = 0.001
train.seed = 0
data.manifest = manifest.csv
out.checkpoint = model.ckpt
out.log = train_log.csv
"""


def cmd_synth(args) -> int:
    if args.pairs:
        pairs = []
        for item in args.pairs.split(";"):
            try:
                a, b, q = item.split(",")
                pairs.append((int(a), int(b), float(q)))
            except ValueError:
                raise UsageError(f"--pairs item {item!r} is not 'r,p,q'") from None
        spec = DependencySpec([args.prior] * args.classes, pairs)
    else:
        spec = DependencySpec([args.prior] * args.classes)
    data = synth_dataset(args.classes, args.count, spec, seed=args.seed, image_size=args.size)
    manifest = write_dataset(data, args.out)
    cfg_path = Path(args.out) / "quickstart.cfg"
    cfg_path.write_text(QUICKSTART.format(size=args.size, epochs=args.epochs))
    log.info("wrote %d images, %s and %s", len(manifest), Path(args.out) / "manifest.csv",
             cfg_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caconv", description=(
        "Multi-label image classifier with class attention and a bidirectional LSTM."))
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint", help="override out.checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-attention", help="write per-class attention maps as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("analyze-deps", help="conditional co-occurrence matrix of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="path prefix for .csv and .pgm outputs")
    p.add_argument("--no-image", action="store_true")
    p.set_defaults(func=cmd_analyze_deps)

    p = sub.add_parser("make-dataset", help="crop segmented tiles into a labelled manifest")
    p.add_argument("--tiles", required=True, help="directory of NAME.png + NAME_mask.png")
    p.add_argument("--classes", required=True, help="comma-separated names for mask IDs 0..N-1")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=600)
    p.add_argument("--stride", type=int, default=200)
    p.add_argument("--sentinel", type=int, default=DEFAULT_SENTINEL)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("synth", help="generate a synthetic dataset and a quickstart config")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--prior", type=float, default=0.4)
    p.add_argument("--pairs", help="'r,p,q;...' planting P(p | r) = q")
    p.add_argument("--epochs", type=int, default=20, help="max epochs in the quickstart config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        # non-finite values are caught and reported by the tensor layer itself
        with np.errstate(all="ignore"):
            return args.func(args)
    except (ConfigError, UsageError, InfeasibleSpecError) as exc:
        return _fail(EXIT_CONFIG, "config error", exc)
    except DataError as exc:
        return _fail(EXIT_DATA, "data error", exc)
    except NumericError as exc:
        return _fail(EXIT_DIVERGED, "numeric divergence", exc)
    except DimensionError as exc:
        return _fail(EXIT_SHAPE, "shape mismatch", exc)


def _fail(code: int, kind: str, exc: Exception) -> int:
    print(f"caconv: {kind}: {exc}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
