"""Grouped dataset format, RES-to-group conversion and the synthetic shapes corpus.

On disk a split is a directory holding ``manifest.json`` plus the PNG files it
references (paths are relative to the manifest)::

    {"N": 4, "split": "train", "vocab": [...],
     "groups": [{"group_id": "g00000", "expression": ["red", "circle"],
                 "images": [{"path": "images/...png", "mask_path": "masks/...png" | null,
                             "is_positive": true}, ...]}]}
"""
from __future__ import annotations

import json
import random
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import SynthConfig

NO_TOKEN = "<no>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (NO_TOKEN, UNK_TOKEN)

COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 210, 40),
    "magenta": (210, 50, 200),
    "cyan": (40, 200, 210),
}
SHAPES = ("circle", "square", "triangle")


@dataclass
class ImageRecord:
    image_id: str
    pixels: np.ndarray
    mask: Optional[np.ndarray]
    is_positive: bool

    def __post_init__(self):
        has_fg = self.mask is not None and bool(self.mask.any())
        if self.is_positive and not has_fg:
            raise ValueError(f"{self.image_id}: flagged positive but mask is absent or all-zero")
        if not self.is_positive and has_fg:
            raise ValueError(f"{self.image_id}: flagged negative but mask has foreground")

    @property
    def target(self) -> np.ndarray:
        """Binary ground truth; the zero mask for negatives."""
        if self.mask is None:
            return np.zeros(self.pixels.shape[:2], dtype=np.uint8)
        return self.mask.astype(np.uint8)


@dataclass
class GroupSample:
    group_id: str
    expression: List[str]
    images: List[ImageRecord]

    @property
    def N(self):
        return len(self.images)

    @property
    def positives(self):
        return [r.is_positive for r in self.images]


@dataclass
class ImageEntry:
    path: str
    mask_path: Optional[str]
    is_positive: bool


@dataclass
class GroupEntry:
    group_id: str
    expression: List[str]
    images: List[ImageEntry]


@dataclass
class DatasetManifest:
    groups: List[GroupEntry]
    split: str
    N: int
    vocab: List[str]
    root: Optional[Path] = None

    def group(self, group_id: str) -> GroupEntry:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"group {group_id!r} not in manifest")

    def to_dict(self):
        return {
            "N": self.N,
            "split": self.split,
            "vocab": list(self.vocab),
            "groups": [
                {
                    "group_id": g.group_id,
                    "expression": list(g.expression),
                    "images": [
                        {"path": im.path, "mask_path": im.mask_path, "is_positive": im.is_positive}
                        for im in g.images
                    ],
                }
                for g in self.groups
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data, root=None):
        groups = [
            GroupEntry(
                group_id=g["group_id"],
                expression=list(g["expression"]),
                images=[
                    ImageEntry(im["path"], im.get("mask_path"), bool(im["is_positive"]))
                    for im in g["images"]
                ],
            )
            for g in data["groups"]
        ]
        return cls(groups, data.get("split", "train"), int(data["N"]), list(data["vocab"]), root)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.json"
        path.write_text(self.dumps())
        self.root = directory
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        return cls.from_dict(json.loads(path.read_text()), root=path.parent)


# --------------------------------------------------------------------------- regrouping


def regroup_res(
    annotations: Sequence[Tuple[str, Sequence[str], Optional[str]]],
    negatives_pool: Sequence[str],
    seed: int,
    N: int = 8,
    split: str = "train",
) -> DatasetManifest:
    """Turn per-image ``(image_id, expression, mask_path)`` annotations into groups.

    Images sharing an exact expression form one group. Each group carries up
    to ``N // 2`` positives (larger sets are chunked) and is filled to ``N``
    with negatives sampled from ``negatives_pool``; a candidate is never an
    image annotated with the same expression.
    """
    if not annotations:
        raise ValueError("annotations must be non-empty")
    rng = random.Random(seed)

    by_expr: "OrderedDict[Tuple[str, ...], List[Tuple[str, Optional[str]]]]" = OrderedDict()
    expr_of_image: Dict[str, set] = {}
    for image_id, expression, mask_path in annotations:
        key = tuple(expression)
        if not key:
            raise ValueError(f"{image_id}: empty expression")
        by_expr.setdefault(key, []).append((image_id, mask_path))
        expr_of_image.setdefault(image_id, set()).add(key)

    per_group = max(1, N // 2)
    pool = list(dict.fromkeys(negatives_pool))
    vocab = set()
    groups = []
    for key, members in by_expr.items():
        vocab.update(key)
        seen = set()
        for image_id, _ in members:
            if image_id in seen:
                raise ValueError(f"duplicate image {image_id!r} for expression {' '.join(key)!r}")
            seen.add(image_id)
        eligible = [im for im in pool if key not in expr_of_image.get(im, ())]
        for start in range(0, len(members), per_group):
            chunk = members[start:start + per_group]
            need = N - len(chunk)
            candidates = [im for im in eligible if im not in seen]
            if need > 0 and not candidates:
                raise ValueError(f"no eligible negatives for expression {' '.join(key)!r}")
            if need > len(candidates):
                raise ValueError(
                    f"need {need} negatives for {' '.join(key)!r}, only {len(candidates)} eligible"
                )
            negatives = rng.sample(candidates, need)
            images = [ImageEntry(i, m, True) for i, m in chunk]
            images += [ImageEntry(i, None, False) for i in negatives]
            groups.append(GroupEntry(f"g{len(groups):05d}", list(key), images))

    vocab_list = list(RESERVED_TOKENS) + sorted(vocab)
    return DatasetManifest(groups, split, N, vocab_list)


# --------------------------------------------------------------------------- synthesis


def _shape_mask(shape, size, top, left, canvas):
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    y = yy - top
    x = xx - left
    inside_box = (y >= 0) & (y < size) & (x >= 0) & (x < size)
    if shape == "square":
        return inside_box
    if shape == "circle":
        c = (size - 1) / 2.0
        return inside_box & ((y - c) ** 2 + (x - c) ** 2 <= (size / 2.0) ** 2)
    if shape == "triangle":
        # apex at top centre, base along the bottom row
        c = (size - 1) / 2.0
        half_width = (y + 1) * (size / 2.0) / size
        return inside_box & (np.abs(x - c) <= half_width)
    raise ValueError(f"unknown shape {shape!r}")


def _place(rng, sizes, canvas, tries=100, restarts=50):
    """Non-overlapping top-left corners for square boxes of the given sizes."""
    for _ in range(restarts):
        boxes = []
        for size in sizes:
            for _ in range(tries):
                top = int(rng.integers(0, canvas - size + 1))
                left = int(rng.integers(0, canvas - size + 1))
                if all(
                    top + size + 1 <= t or t + s + 1 <= top or left + size + 1 <= l or l + s + 1 <= left
                    for t, l, s in boxes
                ):
                    boxes.append((top, left, size))
                    break
            else:
                break
        if len(boxes) == len(sizes):
            return boxes
    raise RuntimeError("could not place shapes without overlap; enlarge image_size")


def render_image(objects, canvas):
    """Rasterize ``[(color, shape, size, top, left), ...]`` into RGB pixels and per-object masks."""
    pixels = np.zeros((canvas, canvas, 3), dtype=np.uint8)
    masks = []
    for color, shape, size, top, left in objects:
        m = _shape_mask(shape, size, top, left, canvas)
        pixels[m] = COLOR_RGB[color]
        masks.append(m)
    return pixels, masks


def _synth_image(rng, target, positive, config: SynthConfig, combos):
    distractors = [c for c in combos if c != target]
    n_distract = int(rng.integers(1, config.max_distractors + 1))
    if not positive:
        n_distract += 1
    # half the distractors share an attribute with the target when possible
    picked = []
    for k in range(n_distract):
        if k % 2 == 0:
            near = [c for c in distractors if c[0] == target[0] or c[1] == target[1]]
            choices = near or distractors
        else:
            choices = distractors
        picked.append(choices[int(rng.integers(len(choices)))])
    kinds = ([target] if positive else []) + picked
    sizes = [int(rng.integers(config.min_size, config.max_size + 1)) for _ in kinds]
    boxes = _place(rng, sizes, config.image_size)
    objects = [(c, s, size, top, left) for (c, s), (top, left, size) in zip(kinds, boxes)]
    pixels, masks = render_image(objects, config.image_size)
    mask = masks[0].astype(np.uint8) if positive else None
    return pixels, mask, objects


def synth_vocab(config: SynthConfig):
    return list(RESERVED_TOKENS) + sorted(set(config.colors) | set(config.shapes))


def generate_synthetic(
    config: SynthConfig,
    seed: int,
    out_dir=None,
    split: str = "train",
    n_groups: Optional[int] = None,
):
    """Build a seeded synthetic split.

    Every group pairs a two-token "color shape" expression with ``N // 2``
    positives (the target shape plus distractors) and ``N - N // 2``
    negatives (distractors only). Returns ``(manifest, samples)``; when
    ``out_dir`` is given the PNGs and ``manifest.json`` are written there.
    """
    for c in config.colors:
        if c not in COLOR_RGB:
            raise ValueError(f"unknown color {c!r}; known: {sorted(COLOR_RGB)}")
    for s in config.shapes:
        if s not in SHAPES:
            raise ValueError(f"unknown shape {s!r}; known: {list(SHAPES)}")
    combos = [(c, s) for c in config.colors for s in config.shapes]
    if len(combos) < 2:
        raise ValueError("vocabulary too small: need at least two color/shape combinations")
    n_groups = config.n_groups if n_groups is None else n_groups
    N = config.N
    n_pos = N // 2 if N > 1 else 1

    rng = np.random.default_rng(seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)

    entries, samples = [], []
    for g in range(n_groups):
        target = combos[int(rng.integers(len(combos)))]
        if N == 1:
            flags = [bool(g % 2 == 0)]
        else:
            flags = [True] * n_pos + [False] * (N - n_pos)
            rng.shuffle(flags)
        group_id = f"{split}{g:05d}"
        records, image_entries = [], []
        for k, positive in enumerate(flags):
            pixels, mask, _ = _synth_image(rng, target, positive, config, combos)
            image_id = f"{group_id}_{k}"
            records.append(ImageRecord(image_id, pixels, mask, positive))
            path = f"images/{image_id}.png"
            mask_path = f"masks/{image_id}.png" if positive else None
            if out is not None:
                Image.fromarray(pixels).save(out / path)
                if positive:
                    Image.fromarray(mask * 255).save(out / mask_path)
            image_entries.append(ImageEntry(path, mask_path, positive))
        expression = [target[0], target[1]]
        entries.append(GroupEntry(group_id, expression, image_entries))
        samples.append(GroupSample(group_id, expression, records))

    manifest = DatasetManifest(entries, split, N, synth_vocab(config))
    if out is not None:
        manifest.save(out)
    return manifest, samples


def generate_corpus(config: SynthConfig, seed: int, out_dir) -> Dict[str, DatasetManifest]:
    """Write ``train/`` and ``test/`` splits under ``out_dir`` with independent seeds."""
    out_dir = Path(out_dir)
    seq = np.random.SeedSequence(seed).spawn(2)
    train, _ = generate_synthetic(
        config, int(seq[0].generate_state(1)[0]), out_dir / "train", "train", config.n_groups
    )
    test, _ = generate_synthetic(
        config, int(seq[1].generate_state(1)[0]), out_dir / "test", "test", config.n_test_groups
    )
    return {"train": train, "test": test}


# --------------------------------------------------------------------------- loading


def _read_png(path: Path, mode: str) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            return np.array(img.convert(mode))
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"corrupt image {path}: {exc}") from exc


def binarize_mask(values: np.ndarray, name="mask") -> np.ndarray:
    """Threshold at half the max value; warns when the input is not two-valued."""
    top = values.max() if values.size else 0
    if top == 0:
        return np.zeros(values.shape, dtype=np.uint8)
    uniq = np.unique(values)
    if not np.array_equal(uniq, np.array([0, top], dtype=values.dtype)) and len(uniq) > 1:
        warnings.warn(f"{name}: non-binary mask values {uniq[:6].tolist()}...; binarizing at 0.5*max")
    return (values >= 0.5 * top).astype(np.uint8)


def load_group(manifest: DatasetManifest, group_id: str) -> GroupSample:
    entry = manifest.group(group_id)
    root = Path(manifest.root) if manifest.root is not None else Path(".")
    records = []
    for im in entry.images:
        pixels = _read_png(root / im.path, "RGB")
        mask = None
        if im.mask_path is not None:
            mask = binarize_mask(_read_png(root / im.mask_path, "L"), im.mask_path)
        image_id = Path(im.path).stem
        records.append(ImageRecord(image_id, pixels, mask, im.is_positive))
    return GroupSample(entry.group_id, list(entry.expression), records)


def load_all(manifest: DatasetManifest) -> List[GroupSample]:
    return [load_group(manifest, g.group_id) for g in manifest.groups]


def rechunk(groups: Sequence[GroupSample], N: int) -> List[GroupSample]:
    """Split each group into groups of ``N`` images with the same expression.

    Positives and negatives are interleaved first so every chunk keeps the
    1:1 balance (up to one image for odd ``N``).
    """
    out = []
    for g in groups:
        if g.N % N:
            raise ValueError(f"group {g.group_id} of size {g.N} cannot be split into groups of {N}")
        if g.N == N:
            out.append(g)
            continue
        pos = [r for r in g.images if r.is_positive]
        neg = [r for r in g.images if not r.is_positive]
        mixed = []
        for k in range(max(len(pos), len(neg))):
            mixed.extend(pos[k:k + 1] + neg[k:k + 1])
        for c in range(0, len(mixed), N):
            out.append(GroupSample(f"{g.group_id}_{c // N}", list(g.expression), mixed[c:c + N]))
    return out


# --------------------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    groups: List[dict] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    @property
    def exit_code(self):
        return 0 if self.ok else 1


def validate_manifest(manifest: DatasetManifest, check_files: bool = True) -> ValidationReport:
    report = ValidationReport()
    root = Path(manifest.root) if manifest.root is not None else None
    seen_ids = set()
    for g in manifest.groups:
        n_pos = sum(im.is_positive for im in g.images)
        n_neg = len(g.images) - n_pos
        report.groups.append(
            {"group_id": g.group_id, "size": len(g.images), "positives": n_pos, "negatives": n_neg}
        )
        where = f"group {g.group_id}"
        if g.group_id in seen_ids:
            report.violations.append(f"{where}: duplicate group id")
        seen_ids.add(g.group_id)
        if len(g.images) != manifest.N:
            report.violations.append(
                f"{where}: group size mismatch ({len(g.images)} != N={manifest.N})"
            )
        # odd N cannot split evenly; allow a difference of one
        if manifest.split == "train" and abs(n_pos - n_neg) > manifest.N % 2:
            report.violations.append(f"{where}: ratio positive:negative = {n_pos}:{n_neg}, expected 1:1")
        if not g.expression:
            report.violations.append(f"{where}: empty expression")
        paths = [im.path for im in g.images]
        if len(set(paths)) != len(paths):
            report.violations.append(f"{where}: duplicate image within group")
        for im in g.images:
            if im.is_positive and im.mask_path is None:
                report.violations.append(f"{where}: positive image {im.path} has no mask")
            if not check_files or root is None:
                continue
            if not (root / im.path).exists():
                report.violations.append(f"{where}: missing file {im.path}")
            if im.mask_path is not None:
                mpath = root / im.mask_path
                if not mpath.exists():
                    report.violations.append(f"{where}: missing file {im.mask_path}")
                    continue
                try:
                    values = _read_png(mpath, "L")
                except ValueError as exc:
                    report.violations.append(f"{where}: {exc}")
                    continue
                uniq = np.unique(values)
                if len(uniq) > 2 or (len(uniq) == 2 and uniq[0] != 0):
                    report.violations.append(f"{where}: mask {im.mask_path} is not binary")
                if im.is_positive and not values.any():
                    report.violations.append(f"{where}: positive mask {im.mask_path} is empty")
    return report
