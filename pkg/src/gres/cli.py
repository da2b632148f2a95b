"""Command line entry point: generate, train, eval, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig, load_config
from .dataset import DatasetManifest, generate_corpus, load_all
from .trainer import RANK_CRITERIA_GRID, Checkpoint, ablate, evaluate, forward_group, rank_seed, train

log = logging.getLogger("gres")

SUITES = ("main", "rank_criteria", "group_size")


def _seed_override(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GRES_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"GRES_SEED must be an integer, got {env!r}") from None
    return None


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = _seed_override(args)
    return cfg if seed is None else cfg.replace(seed=seed)


def _split_dir(data, split):
    """``data`` is either a split directory or a corpus root holding ``train/`` and ``test/``."""
    data = Path(data)
    if (data / split / "manifest.json").exists():
        return data / split
    if (data / "manifest.json").exists():
        return data
    raise FileNotFoundError(f"no {split} manifest under {data}")


def _to_png(values, path):
    Image.fromarray(np.asarray(values, dtype=np.uint8)).save(path)


def heatmap_to_uint8(m):
    """Cosine similarity in [-1, 1] to 8-bit gray."""
    m = np.clip(np.asarray(m, dtype=np.float64), -1.0, 1.0)
    return np.round((m + 1.0) / 2.0 * 255.0).astype(np.uint8)


# --------------------------------------------------------------------------- commands


def cmd_generate(args):
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} is not empty")
    manifests = generate_corpus(cfg.synth(), cfg.seed, out)
    for split, m in manifests.items():
        print(f"{split}: {len(m.groups)} groups -> {out / split}")
    return 0


def cmd_train(args):
    cfg = _config(args)
    manifest = DatasetManifest.load(_split_dir(args.data, "train"))
    out = Path(args.out)
    log_csv = args.log or out.with_suffix(".log.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt = train(cfg, manifest, log_csv=log_csv, progress=True)
    ckpt.save(out)
    print(f"checkpoint -> {out}")
    return 0


def _dump_group(group, out, masks, heat_dir, mask_dir):
    for i, rec in enumerate(group.images):
        stem = Path(rec.image_id).stem
        if mask_dir is not None:
            _to_png(masks[i] * 255, mask_dir / f"{group.group_id}_{stem}.png")
        if heat_dir is not None:
            slots = [out.Ml[i]]
            if out.ranked is not None:
                slots += list(out.ranked.maps[i])
            for k, m in enumerate(slots):
                name = "lang" if k == 0 else f"proto{k - 1}"
                _to_png(heatmap_to_uint8(m.numpy()), heat_dir / f"{group.group_id}_{stem}_{k}_{name}.png")


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    seed = _seed_override(args)
    manifest = DatasetManifest.load(_split_dir(args.data, "test"))
    groups = load_all(manifest)
    model = ckpt.build_model()
    report = evaluate(model, groups, criterion=args.criterion, seed=seed)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps({k: report[k] for k in ("miou_bar", "miou", "r_neg", "mae", "f_max", "s_alpha", "e_xi")}))

    if args.dump_heatmaps or args.dump_masks:
        base = report_path.with_suffix("")
        heat_dir = Path(str(base) + "_heatmaps") if args.dump_heatmaps else None
        mask_dir = Path(str(base) + "_masks") if args.dump_masks else None
        for d in (heat_dir, mask_dir):
            if d is not None:
                d.mkdir(parents=True, exist_ok=True)
        seed = model.config.seed if seed is None else seed
        criterion = args.criterion or model.default_criterion()
        for gi, group in enumerate(groups):
            out, decisions = forward_group(model, group, criterion, rank_seed(seed, 0, gi))
            masks = []
            for i, dec in enumerate(decisions):
                masks.append((out.logits[i] > 0).numpy().astype(np.uint8) if dec.is_positive
                             else np.zeros(out.logits[i].shape, dtype=np.uint8))
            _dump_group(group, out, masks, heat_dir, mask_dir)
    return 0


def cmd_ablate(args):
    cfg = _config(args)
    train_m = DatasetManifest.load(_split_dir(args.data, "train"))
    test_m = DatasetManifest.load(_split_dir(args.data, "test"))
    report = ablate(cfg, load_all(train_m), load_all(test_m), args.suite)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_csv())
    print(report.to_csv(), end="")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="gres", description="Group-wise referring segmentation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{generate,train,eval,ablate}")

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="flat key = value run config (defaults when omitted)")
        p.add_argument("--seed", type=int, default=None, help="overrides GRES_SEED and the config seed")

    p = sub.add_parser("generate", help="write a synthetic train/test corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.add_argument("--data", required=True, help="corpus root or train split directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="per-step loss CSV (default: next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON metric report")
    common(p, config=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus root or test split directory")
    p.add_argument("--report", required=True)
    p.add_argument("--criterion", choices=RANK_CRITERIA_GRID, default=None, help="test-time ranking criterion")
    p.add_argument("--dump-heatmaps", action="store_true",
                   help="write N+1 grayscale heatmaps per image next to the report")
    p.add_argument("--dump-masks", action="store_true", help="write predicted masks (0/255 PNG) next to the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid and write a CSV table")
    common(p)
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--data", required=True, help="corpus root holding train/ and test/")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FileExistsError, KeyError, RuntimeError) as exc:
        print(f"gres {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
