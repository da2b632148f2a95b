"""Training, inference, evaluation and the ablation harness."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .dataset import DatasetManifest, GroupSample, load_all, rechunk, validate_manifest
from .hierarchizer import Criterion
from .metrics import EvalRecord, SaliencyPair, adapted_miou, iou, r_neg, sod_metrics, vanilla_miou, e_measure
from .model import GRSer
from .objectives import positive_seg_loss, total_loss, triplet_loss
from .predictor import emit_mask

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Checkpoint:
    state: Dict[str, torch.Tensor]
    config: RunConfig
    vocab: List[str]
    epoch: int

    def build_model(self) -> GRSer:
        model = GRSer(self.vocab, self.config)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {"state": self.state, "config": self.config.to_dict(), "vocab": self.vocab, "epoch": self.epoch},
            path,
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
        return cls(blob["state"], RunConfig(**blob["config"]), list(blob["vocab"]), int(blob["epoch"]))


def seed_everything(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def rank_seed(seed: int, epoch: int, index: int) -> int:
    return (seed * 1_000_003 + epoch * 10_007 + index) % (2**32)


def _as_samples(data) -> List[GroupSample]:
    if isinstance(data, DatasetManifest):
        return load_all(data)
    return list(data)


def train(
    config: RunConfig,
    manifest,
    log_csv=None,
    progress: bool = False,
    time_budget: Optional[float] = None,
) -> Checkpoint:
    """Fit a model on the train split; one group per optimization step.

    ``manifest`` is a :class:`DatasetManifest` (validated first) or an
    already loaded list of :class:`GroupSample`.
    """
    if isinstance(manifest, DatasetManifest):
        report = validate_manifest(manifest)
        if not report.ok:
            raise ValueError("invalid training manifest:\n  " + "\n  ".join(report.violations[:20]))
        vocab = manifest.vocab
    else:
        vocab = None
    groups = _as_samples(manifest)
    if vocab is None:
        vocab = sorted({tok for g in groups for tok in g.expression})
    for g in groups:
        if g.N != config.N:
            raise ValueError(f"group {g.group_id} has {g.N} images, config N={config.N}")

    seed_everything(config.seed)
    model = GRSer(vocab, config)
    tensors = [model.group_tensors(g) for g in groups]
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    total_steps = config.epochs * len(groups)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: (1 - step / max(total_steps, 1)) ** 0.9
    )
    rng = np.random.default_rng(config.seed)
    lam = config.lam if config.use_mirror else 0.0

    writer = None
    if log_csv is not None:
        handle = open(log_csv, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(["epoch", "step", "group_id", "ce", "ce_mirror", "tri", "total", "t_over_T"])

    start = time.perf_counter()
    step = 0
    model.train()
    try:
        for t in range(1, config.epochs + 1):
            for gi in rng.permutation(len(groups)):
                group = groups[gi]
                images, targets, positive = tensors[gi]
                seed = rank_seed(config.seed, t, int(gi))
                out = model(images, group.expression, seed=seed)
                ce = positive_seg_loss(out.logits, targets, positive)
                if config.use_triplet:
                    tri = triplet_loss(out.e, out.Lp, out.Lp_anti, positive, config.m).mean()
                else:
                    tri = torch.zeros(())
                if lam > 0 and bool(positive.any()):
                    mirror = model(images, group.expression, seed=seed, swap=True, V=out.V)
                    ce_m = positive_seg_loss(mirror.logits, 1 - targets, positive)
                else:
                    ce_m = torch.zeros(())
                terms = total_loss(ce, ce_m, tri, t, config.epochs, lam)
                if not torch.isfinite(terms.total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {t}, step {step}, group {group.group_id}: {terms.as_row()}"
                    )
                optimizer.zero_grad()
                terms.total.backward()
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                scheduler.step()
                if writer is not None:
                    row = terms.as_row()
                    writer.writerow(
                        [t, step, group.group_id]
                        + [f"{row[k]:.6g}" for k in ("ce", "ce_mirror", "tri", "total", "t_over_T")]
                    )
                step += 1
            if progress:
                log.info("epoch %d/%d done (%.1fs)", t, config.epochs, time.perf_counter() - start)
            if time_budget is not None and time.perf_counter() - start > time_budget:
                raise TimeoutError(f"training exceeded {time_budget:.0f}s at epoch {t}")
    finally:
        if writer is not None:
            handle.close()

    model.eval()
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(state, config, list(model.vocab), config.epochs)


def _model(ckpt_or_model) -> GRSer:
    if isinstance(ckpt_or_model, Checkpoint):
        return ckpt_or_model.build_model()
    return ckpt_or_model


@torch.no_grad()
def forward_group(model: GRSer, group: GroupSample, criterion=None, seed: int = 0):
    if group.N != model.config.N:
        raise ValueError(f"group {group.group_id} has {group.N} images, model expects N={model.config.N}")
    model.eval()
    images, _, _ = model.group_tensors(group)
    out = model(images, group.expression, criterion=criterion, seed=seed)
    return out, model.decisions(out)


def infer_group(ckpt_or_model, group: GroupSample, criterion=None, seed: int = 0):
    """Per image ``(mask, Decision)``; negative decisions give all-zero masks."""
    model = _model(ckpt_or_model)
    out, decisions = forward_group(model, group, criterion, seed)
    return [(emit_mask(out.logits[i], d).numpy(), d) for i, d in enumerate(decisions)]


def evaluate(ckpt_or_model, data, criterion=None, seed: Optional[int] = None) -> dict:
    """Metric report over a split (see :mod:`gres.metrics` for the JSON layout)."""
    model = _model(ckpt_or_model)
    seed = model.config.seed if seed is None else seed
    if criterion is None:
        criterion = model.default_criterion()
    records, pairs, tp_pairs = [], [], []
    for gi, group in enumerate(_as_samples(data)):
        out, decisions = forward_group(model, group, criterion, rank_seed(seed, 0, gi))
        probs = torch.sigmoid(out.logits)
        for i, (rec, dec) in enumerate(zip(group.images, decisions)):
            mask = emit_mask(out.logits[i], dec).numpy()
            gt = rec.target
            saliency = probs[i].numpy().astype(np.float64) if dec.is_positive else np.zeros(gt.shape)
            value = iou(mask, gt) if (rec.is_positive and dec.is_positive) else None
            er = EvalRecord(rec.image_id, rec.is_positive, dec.is_positive, value)
            er.extra = {"group_id": group.group_id, "d_pos": dec.d_pos, "d_neg": dec.d_neg}
            records.append(er)
            pair = SaliencyPair(saliency, gt)
            pairs.append(pair)
            if er.category == "TP":
                tp_pairs.append(pair)
    sod = sod_metrics(pairs)
    e_xi = float(np.mean([e_measure(p.pred, p.gt) for p in tp_pairs])) if tp_pairs else None
    return {
        "miou_bar": adapted_miou(records),
        "miou": vanilla_miou(records),
        "r_neg": r_neg(records),
        "mae": sod["mae"],
        "f_max": sod["f_max"],
        "s_alpha": sod["s_alpha"],
        "e_xi": e_xi,
        "meta": {
            "rank_criterion": Criterion(criterion).value,
            "e_xi_scope": "true positives only",
            "sod_scope": "all images",
            "n_images": len(records),
        },
        "records": [r.to_dict() for r in records],
    }


# --------------------------------------------------------------------------- ablations

MAIN_ROWS = {
    "full": {},
    "w/o TQM": {"use_tqm": False},
    "w/o HMapHier": {"use_hierarchizer": False},
    "w/o MirrorT": {"use_mirror": False},
    "w/o TriLoss": {"use_triplet": False},
}
RANK_CRITERIA_GRID = ("random", "pos", "neg", "pos_plus_neg")
GROUP_SIZES = (1, 2, 4)


@dataclass
class AblationReport:
    suite: str
    rows: List[dict] = field(default_factory=list)

    FIELDS = ("setting", "train_criterion", "test_criterion", "N", "miou_bar", "e_xi", "r_neg")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row.get(k)) for k in self.FIELDS})
        return buf.getvalue()

    def row(self, setting: str) -> dict:
        for r in self.rows:
            if r["setting"] == setting:
                return r
        raise KeyError(setting)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _row(setting, cfg, report, train_crit, test_crit):
    return {
        "setting": setting,
        "train_criterion": train_crit,
        "test_criterion": test_crit,
        "N": cfg.N,
        "miou_bar": report["miou_bar"],
        "e_xi": report["e_xi"],
        "r_neg": report["r_neg"],
    }


def ablate(
    config: RunConfig,
    train_data,
    test_data,
    suite: str,
    settings: Optional[Sequence] = None,
    cache: Optional[dict] = None,
) -> AblationReport:
    """Train and evaluate every cell of a predefined grid with the shared seed.

    ``suite`` is ``main``, ``rank_criteria`` or ``group_size``. ``settings``
    restricts the grid (row names, train criteria, or group sizes).
    ``cache`` maps a config to an already trained checkpoint so suites can
    share runs.
    """
    train_groups = _as_samples(train_data)
    test_groups = _as_samples(test_data)
    cache = {} if cache is None else cache

    def fit(cfg, groups):
        key = tuple(sorted(cfg.to_dict().items()))
        if key not in cache:
            cache[key] = train(cfg, groups)
        return cache[key]

    report = AblationReport(suite)
    if suite == "main":
        for name in settings or MAIN_ROWS:
            cfg = config.replace(**MAIN_ROWS[name])
            ckpt = fit(cfg, train_groups)
            crit = "random" if not cfg.use_hierarchizer else cfg.rank_criterion
            report.rows.append(_row(name, cfg, evaluate(ckpt, test_groups), crit, crit))
    elif suite == "rank_criteria":
        for train_crit in settings or RANK_CRITERIA_GRID:
            cfg = config.replace(rank_criterion=train_crit)
            ckpt = fit(cfg, train_groups)
            for test_crit in RANK_CRITERIA_GRID:
                rep = evaluate(ckpt, test_groups, criterion=test_crit)
                report.rows.append(_row(f"{train_crit}/{test_crit}", cfg, rep, train_crit, test_crit))
    elif suite == "group_size":
        for n in settings or GROUP_SIZES:
            cfg = config.replace(N=n)
            ckpt = fit(cfg, rechunk(train_groups, n))
            rep = evaluate(ckpt, rechunk(test_groups, n))
            report.rows.append(_row(f"N={n}", cfg, rep, cfg.rank_criterion, cfg.rank_criterion))
    else:
        raise ValueError(f"unknown suite {suite!r}; expected main, rank_criteria or group_size")
    return report
