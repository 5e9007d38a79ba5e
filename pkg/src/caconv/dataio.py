"""Dataset manifests, tile cropping with mask aggregation, and synthetic data.

Manifest CSV::

    #classes:airplane,bare soil,building
    img/0001.png,101
    img/0002.png,010,harbor

The optional third column is a scene tag used for stratified splits. Paths
are relative to the manifest's directory.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError, DimensionError, InfeasibleSpecError, UsageError

log = logging.getLogger(__name__)

DEFAULT_SENTINEL = 255
HEADER = "#classes:"


# -- manifests ---------------------------------------------------------------------


@dataclass
class Record:
    path: str
    labels: tuple[int, ...]
    scene: str | None = None


@dataclass
class Manifest:
    class_names: list[str]
    records: list[Record] = field(default_factory=list)
    root: Path = Path(".")

    def __post_init__(self):
        n = len(self.class_names)
        for rec in self.records:
            if len(rec.labels) != n:
                raise DataError(f"{rec.path}: {len(rec.labels)} labels for {n} classes")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def label_matrix(self) -> np.ndarray:
        return np.array([r.labels for r in self.records], dtype=np.int64).reshape(
            len(self.records), self.n_classes)

    def scenes(self) -> list[str] | None:
        tags = [r.scene for r in self.records]
        return None if any(t is None for t in tags) else tags

    def resolve(self, rec: Record) -> Path:
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p

    def subset(self, indices) -> "Manifest":
        return Manifest(list(self.class_names), [self.records[i] for i in indices], self.root)

    def reorder(self, class_order: Sequence[str]) -> "Manifest":
        """Permute label columns (and hence recurrent time steps) to ``class_order``."""
        if sorted(class_order) != sorted(self.class_names):
            raise DataError(f"class order {list(class_order)} is not a permutation of "
                            f"{self.class_names}")
        idx = [self.class_names.index(c) for c in class_order]
        recs = [Record(r.path, tuple(r.labels[i] for i in idx), r.scene) for r in self.records]
        return Manifest(list(class_order), recs, self.root)

    def to_text(self) -> str:
        lines = [HEADER + ",".join(self.class_names)]
        for r in self.records:
            row = f"{r.path},{''.join(str(int(b)) for b in r.labels)}"
            lines.append(row + (f",{r.scene}" if r.scene is not None else ""))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())


def parse_manifest(text: str, root: Path = Path(".")) -> Manifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(HEADER):
        raise DataError(f"manifest must start with '{HEADER}name1,name2,...'")
    names = [n.strip() for n in lines[0][len(HEADER):].split(",")]
    if not all(names):
        raise DataError("empty class name in manifest header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3) or set(parts[1]) - {"0", "1"}:
            raise DataError(f"manifest line {lineno}: expected 'path,bitstring[,scene]'")
        records.append(Record(parts[0], tuple(int(b) for b in parts[1]),
                              parts[2] if len(parts) == 3 else None))
    return Manifest(names, records, root)


def load_manifest(path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    manifest = parse_manifest(text, path.parent)
    if check_paths:
        missing = [str(manifest.resolve(r)) for r in manifest.records
                   if not manifest.resolve(r).exists()]
        if missing:
            raise DataError(f"{len(missing)} manifest image(s) missing, first: {missing[0]}")
    return manifest


@dataclass
class Dataset:
    images: np.ndarray  # n x S x S x C, floats in [0, 1]
    labels: np.ndarray  # n x N, {0, 1}
    class_names: list[str]
    scenes: list[str] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        scenes = None if self.scenes is None else [self.scenes[i] for i in idx]
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names), scenes)


def load_dataset(manifest: Manifest, size: int) -> Dataset:
    from .imageio import read_image

    if len(manifest) == 0:
        raise DataError("manifest has no records")
    images = np.stack([read_image(manifest.resolve(r), size) for r in manifest.records])
    return Dataset(images, manifest.label_matrix(), list(manifest.class_names),
                   manifest.scenes())


# -- tile cropping -----------------------------------------------------------------


def grid_offsets(extent: int, window: int, stride: int) -> range:
    """Top-left offsets of a sliding window; count is ``(extent - window) // stride + 1``."""
    if window < 1 or stride < 1:
        raise DimensionError("window and stride must be positive")
    if window > extent:
        raise DimensionError(f"window {window} exceeds tile extent {extent}")
    return range(0, extent - window + 1, stride)


class Crop(NamedTuple):
    row: int
    col: int
    image: np.ndarray | None
    mask: np.ndarray


def crop_tiles(image: np.ndarray | None, mask: np.ndarray, window: int = 600, stride: int = 200
               ) -> list[Crop]:
    """Row-major grid of ``window x window`` views over a tile and its mask."""
    H, W = mask.shape[:2]
    if image is not None and image.shape[:2] != (H, W):
        raise DimensionError(f"tile image {image.shape[:2]} and mask {(H, W)} differ")
    crops = []
    for r in grid_offsets(H, window, stride):
        for c in grid_offsets(W, window, stride):
            sub = None if image is None else image[r:r + window, c:c + window]
            crops.append(Crop(r, c, sub, mask[r:r + window, c:c + window]))
    return crops


def mask_to_labels(mask: np.ndarray, n_classes: int, sentinel: int = DEFAULT_SENTINEL
                   ) -> np.ndarray | None:
    """Presence vector of class IDs in ``mask``, or None if any pixel is unclassified."""
    ids = np.unique(mask)
    bad = ids[(ids != sentinel) & ((ids < 0) | (ids >= n_classes))]
    if bad.size:
        raise DataError(f"mask holds class IDs outside 0..{n_classes - 1}: {bad.tolist()}")
    if (ids == sentinel).any():
        return None
    labels = np.zeros(n_classes, dtype=np.int64)
    labels[ids] = 1
    return labels


# -- synthetic data with planted dependencies ---------------------------------------


@dataclass
class DependencySpec:
    """Marginal class priors plus pairwise implications ``(r, p, P(p | r))``.

    Each class may appear in at most one pair; pairs are sampled from their
    exact 2x2 joint table, every other class independently.
    """

    priors: Sequence[float]
    pairs: Sequence[tuple[int, int, float]] = ()

    def __post_init__(self):
        self.priors = [float(p) for p in self.priors]
        self.pairs = [(int(r), int(p), float(q)) for r, p, q in self.pairs]
        n = len(self.priors)
        used: set[int] = set()
        for r, p, q in self.pairs:
            if r == p or not (0 <= r < n and 0 <= p < n):
                raise InfeasibleSpecError(f"bad pair ({r}, {p})")
            if r in used or p in used:
                raise InfeasibleSpecError(f"class {r if r in used else p} is in two pairs")
            used.update((r, p))
        for i, pr in enumerate(self.priors):
            if not 0.0 <= pr <= 1.0:
                raise InfeasibleSpecError(f"prior of class {i} is {pr}")
        for r, p, q in self.pairs:
            self.joint_table(r, p, q)

    @property
    def n_classes(self) -> int:
        return len(self.priors)

    @classmethod
    def from_conditionals(cls, priors: Sequence[float],
                          pairs: Sequence[tuple[int, int, float, float]]) -> "DependencySpec":
        """Pairs given as ``(a, b, P(b|a), P(a|b))``; the prior of ``b`` is implied."""
        priors = list(priors)
        simple = []
        for a, b, b_given_a, a_given_b in pairs:
            if a_given_b <= 0:
                raise InfeasibleSpecError(f"P({a}|{b}) must be positive")
            implied = b_given_a * priors[a] / a_given_b
            if implied > 1.0:
                raise InfeasibleSpecError(
                    f"implied prior of class {b} is {implied:.4f} > 1")
            priors[b] = implied
            simple.append((a, b, b_given_a))
        return cls(priors, simple)

    def joint_table(self, r: int, p: int, q: float) -> np.ndarray:
        """``[[P(~r,~p), P(~r,p)], [P(r,~p), P(r,p)]]``."""
        pr, pp = self.priors[r], self.priors[p]
        both = q * pr
        table = np.array([[1.0 - pr - pp + both, pp - both], [pr - both, both]])
        if not 0.0 <= q <= 1.0 or (table < -1e-12).any():
            raise InfeasibleSpecError(
                f"P({p}|{r})={q} with priors {pr}, {pp} implies a probability outside [0, 1]")
        return np.clip(table, 0.0, 1.0)

    def conditional(self, p: int, r: int) -> float:
        """``P(C_p | C_r)`` implied by these priors and pairs."""
        if self.priors[r] == 0:
            return float("nan")
        for a, b, q in self.pairs:
            if (a, b) == (r, p):
                return q
            if (a, b) == (p, r):
                return q * self.priors[p] / self.priors[r]
        return 1.0 if p == r else self.priors[p]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        Y = np.zeros((count, self.n_classes), dtype=np.int64)
        paired = {c for r, p, _ in self.pairs for c in (r, p)}
        for c in range(self.n_classes):
            if c not in paired:
                Y[:, c] = rng.random(count) < self.priors[c]
        for r, p, q in self.pairs:
            cells = rng.choice(4, size=count, p=self.joint_table(r, p, q).reshape(-1))
            Y[:, r] = cells >= 2
            Y[:, p] = cells % 2
        return Y


SHAPES = ("square", "disk", "triangle", "cross", "ring", "diamond", "hbar", "vbar")
COLORS = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.80, 0.10], [0.15, 0.25, 0.95], [0.95, 0.90, 0.10],
    [0.85, 0.10, 0.85], [0.10, 0.85, 0.90], [0.95, 0.55, 0.05], [0.97, 0.97, 0.97],
])


def glyph(cls_index: int) -> tuple[str, np.ndarray]:
    """Distinct (shape, colour) for up to 64 classes."""
    shape = SHAPES[cls_index % len(SHAPES)]
    color = COLORS[(cls_index * 3 + cls_index // len(SHAPES)) % len(COLORS)]
    return shape, color


def _shape_mask(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    dy, dx = yy - c, xx - c
    r = size / 2.0
    t = max(1, size // 4)
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "disk":
        return dy ** 2 + dx ** 2 <= r ** 2
    if shape == "triangle":
        return np.abs(dx) <= (yy + 1) / 2.0
    if shape == "cross":
        return (np.abs(dy) < t / 2 + 0.5) | (np.abs(dx) < t / 2 + 0.5)
    if shape == "ring":
        d2 = dy ** 2 + dx ** 2
        return (d2 <= r ** 2) & (d2 >= (r - t) ** 2)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if shape == "hbar":
        return np.abs(dy) < t / 2 + 0.5
    if shape == "vbar":
        return np.abs(dx) < t / 2 + 0.5
    raise ValueError(shape)


def render_image(labels: Sequence[int], rng: np.random.Generator, size: int = 64,
                 hide_prob: Sequence[float] | None = None, noise: float = 0.05,
                 object_frac: tuple[float, float] = (0.18, 0.32)) -> np.ndarray:
    """Gray noisy canvas with one glyph per present (and not hidden) class."""
    img = 0.4 + noise * rng.standard_normal((size, size, 3))
    lo = max(3, int(round(object_frac[0] * size)))
    hi = max(lo, int(round(object_frac[1] * size)))
    for c in np.flatnonzero(labels):
        if hide_prob is not None and rng.random() < hide_prob[c]:
            continue
        shape, color = glyph(int(c))
        s = int(rng.integers(lo, hi + 1))
        y, x = rng.integers(0, size - s + 1, size=2)
        m = _shape_mask(shape, s)
        patch = img[y:y + s, x:x + s]
        patch[m] = color + noise * rng.standard_normal((int(m.sum()), 3))
    return np.clip(img, 0.0, 1.0)


def synth_dataset(n_classes: int, count: int, spec: DependencySpec | None = None, seed: int = 0,
                  image_size: int = 64, hide_prob: Sequence[float] | None = None,
                  noise: float = 0.05, class_names: Sequence[str] | None = None) -> Dataset:
    """Images of coloured glyphs whose labels follow ``spec``.

    ``hide_prob[c]`` is the chance a present class is left out of the picture
    (the label stays on), so only co-occurring classes can give it away.
    """
    if spec is None:
        spec = DependencySpec([0.4] * n_classes)
    if spec.n_classes != n_classes:
        raise InfeasibleSpecError(f"spec covers {spec.n_classes} classes, not {n_classes}")
    if count < 1:
        raise UsageError("count must be positive")
    rng = np.random.default_rng(seed)
    labels = spec.sample(count, rng)
    images = np.stack([render_image(y, rng, image_size, hide_prob, noise) for y in labels])
    names = list(class_names) if class_names is not None else [
        f"{glyph(c)[0]}{c}" for c in range(n_classes)]
    return Dataset(images, labels, names)


def write_dataset(dataset: Dataset, out_dir, image_dir: str = "img") -> Manifest:
    """Write images as PNG plus ``manifest.csv`` under ``out_dir``."""
    from .imageio import write_rgb

    out = Path(out_dir)
    records = []
    for i, (img, y) in enumerate(zip(dataset.images, dataset.labels)):
        rel = f"{image_dir}/{i:05d}.png"
        write_rgb(out / rel, img)
        scene = None if dataset.scenes is None else dataset.scenes[i]
        records.append(Record(rel, tuple(int(b) for b in y), scene))
    manifest = Manifest(list(dataset.class_names), records, out)
    manifest.save(out / "manifest.csv")
    return manifest


# -- splitting ----------------------------------------------------------------------


def split_indices(n: int, train_fraction: float = 0.8, scenes: Sequence[str] | None = None,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test partition, per scene when tags are given."""
    if not 0.0 < train_fraction < 1.0:
        raise UsageError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    if scenes is None:
        groups = [np.arange(n)]
    else:
        if len(scenes) != n:
            raise UsageError("one scene tag per record required")
        tags = np.asarray(scenes)
        groups = [np.flatnonzero(tags == s) for s in sorted(set(scenes))]
    train, test = [], []
    for g in groups:
        g = rng.permutation(g)
        k = int(np.floor(train_fraction * len(g) + 0.5))
        train.append(g[:k])
        test.append(g[k:])
    tr, te = np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
    if len(tr) == 0 or len(te) == 0:
        raise UsageError(f"split of {n} records leaves an empty side")
    return tr, te


def split(data: Manifest | Dataset, train_fraction: float = 0.8, stratify: bool = True,
          seed: int = 0):
    scenes = data.scenes() if isinstance(data, Manifest) else data.scenes
    tr, te = split_indices(len(data), train_fraction, scenes if stratify else None, seed)
    return data.subset(tr), data.subset(te)


def iter_tiles(tiles_dir) -> Iterator[tuple[Path, Path]]:
    """``(image, mask)`` pairs: ``name.png`` with ``name_mask.png`` (PNG or PGM)."""
    tiles_dir = Path(tiles_dir)
    for img in sorted(tiles_dir.iterdir()):
        if img.suffix.lower() not in (".png", ".ppm", ".pgm") or img.stem.endswith("_mask"):
            continue
        for ext in (".png", ".pgm"):
            mask = img.with_name(img.stem + "_mask" + ext)
            if mask.exists():
                yield img, mask
                break
        else:
            raise DataError(f"no mask for tile {img}")
