"""Deterministic two-domain synthetic street scenes for segmentation.

Each scene is a layered layout over five classes: sky above a random
horizon, road below it, building rectangles rising from the horizon,
vegetation blobs against the sky, and vehicle rectangles on the road.
Pixels get a fixed per-class base color plus light speckle noise.

A domain is the same layout distribution viewed through a
:class:`DomainShift`: a per-channel affine transform, a gamma curve, a
vertical brightness gradient, and additive noise. Shifts never touch the
label map, and layout randomness is seeded independently of shift
randomness, so the source and target domains differ only in appearance
statistics. That makes channel-level alignment exactly the right tool for
closing the gap, which is the point of the benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .formats import format_kv, parse_kv, read_pgm, read_ppm, write_pgm, write_ppm

CLASS_NAMES = ("sky", "road", "building", "vegetation", "vehicle")
NUM_CLASSES = 5
PALETTE = np.array([
    [0.55, 0.70, 0.95],   # sky
    [0.35, 0.35, 0.35],   # road
    [0.60, 0.50, 0.45],   # building
    [0.20, 0.55, 0.25],   # vegetation
    [0.80, 0.15, 0.15],   # vehicle
], dtype=np.float32)

SPECKLE_SIGMA = 0.02
MIN_REGION_PIXELS = 6
MAX_LAYOUT_ATTEMPTS = 30

# layout sampling ranges (fractions of image size)
HORIZON_RANGE = (0.3, 0.5)
BUILDING_COUNT = (1, 2, 3)
BUILDING_WIDTH = (0.15, 0.35)
BUILDING_HEIGHT = (0.35, 0.9)        # fraction of the sky band
VEGETATION_COUNTS = (0, 1, 2, 3, 4)
VEGETATION_P = (0.12, 0.22, 0.22, 0.22, 0.22)
VEGETATION_RADIUS = (0.04, 0.10)
VEHICLE_COUNTS = (0, 1, 2, 3)
VEHICLE_P = (0.12, 0.30, 0.30, 0.28)
VEHICLE_HEIGHT = (0.07, 0.15)
VEHICLE_WIDTH = (0.09, 0.18)


@dataclass(frozen=True)
class SceneSpec:
    """Resolution and seed of one scene domain; h and w must divide by 8."""

    height: int = 64
    width: int = 64
    num_classes: int = NUM_CLASSES
    seed: int = 0

    def validate(self) -> None:
        if self.height % 8 or self.width % 8:
            raise ValueError(
                f"resolution {self.height}x{self.width} must be a multiple of 8")
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"the scene palette defines exactly {NUM_CLASSES} classes")


@dataclass(frozen=True)
class DomainShift:
    """Appearance transform of one domain; labels are never altered.

    Applied as: per-channel gain and bias, clamp to [0, 1], gamma curve,
    vertical brightness gradient, additive Gaussian noise, final clamp.
    The identity shift leaves images bit-unchanged.
    """

    gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    noise_sigma: float = 0.0
    vgrad: float = 0.0
    seed: int = 0

    @classmethod
    def identity(cls) -> "DomainShift":
        return cls()

    @classmethod
    def sample(cls, rng: np.random.Generator, seed: int = 0) -> "DomainShift":
        """Draw a random shift from the declared parameter ranges."""
        return cls(
            gain=tuple(rng.uniform(0.5, 1.5, size=3)),
            bias=tuple(rng.uniform(-0.2, 0.2, size=3)),
            gamma=float(rng.uniform(0.7, 1.4)),
            noise_sigma=float(rng.uniform(0.0, 0.08)),
            vgrad=float(rng.uniform(0.0, 0.15)),
            seed=seed,
        )

    def is_identity(self) -> bool:
        return (self.gain == (1.0, 1.0, 1.0) and self.bias == (0.0, 0.0, 0.0)
                and self.gamma == 1.0 and self.noise_sigma == 0.0 and self.vgrad == 0.0)


# The default target domain: strong channel recoloring plus mild texture
# and lighting changes, all inside the DomainShift sampling ranges.
DEFAULT_TARGET_SHIFT = DomainShift(
    gain=(0.55, 0.80, 1.35),
    bias=(0.08, 0.00, -0.12),
    gamma=1.30,
    noise_sigma=0.05,
    vgrad=0.12,
    seed=0,
)


@dataclass
class LabeledScene:
    """One image (3, h, w) float32 in [0, 1] with an optional label map."""

    image: np.ndarray
    labels: np.ndarray | None = None


def _paint_layout(rng: np.random.Generator, h: int, w: int) -> tuple[np.ndarray, list[int]]:
    """One layout attempt; returns the label map and the placed class list."""
    horizon = int(round(h * rng.uniform(*HORIZON_RANGE)))
    labels = np.full((h, w), 1, dtype=np.int64)   # road
    labels[:horizon] = 0                          # sky
    placed = [0, 1]

    n_build = int(rng.choice(BUILDING_COUNT))
    for _ in range(n_build):
        bw = max(2, int(round(w * rng.uniform(*BUILDING_WIDTH))))
        bh = max(2, int(round(horizon * rng.uniform(*BUILDING_HEIGHT))))
        x0 = int(rng.integers(0, max(1, w - bw + 1)))
        labels[max(0, horizon - bh):horizon, x0:x0 + bw] = 2
    placed.append(2)

    n_veg = int(rng.choice(VEGETATION_COUNTS, p=VEGETATION_P))
    if n_veg:
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(n_veg):
            cy = horizon - rng.uniform(0.0, 0.12) * h
            cx = rng.uniform(0, w - 1)
            ry = max(2.0, h * rng.uniform(*VEGETATION_RADIUS))
            rx = max(2.0, w * rng.uniform(*VEGETATION_RADIUS))
            mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0) & (yy < horizon)
            labels[mask] = 3
        placed.append(3)

    n_veh = int(rng.choice(VEHICLE_COUNTS, p=VEHICLE_P))
    if n_veh:
        for _ in range(n_veh):
            vh = max(3, int(round(h * rng.uniform(*VEHICLE_HEIGHT))))
            vw = max(3, int(round(w * rng.uniform(*VEHICLE_WIDTH))))
            y0 = int(rng.integers(horizon + 1, max(horizon + 2, h - vh + 1)))
            x0 = int(rng.integers(0, max(1, w - vw + 1)))
            labels[y0:y0 + vh, x0:x0 + vw] = 4
        placed.append(4)

    return labels, placed


def _scene_labels(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Sample layouts until every placed class keeps a minimum region size."""
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        labels, placed = _paint_layout(rng, h, w)
        counts = np.bincount(labels.ravel(), minlength=NUM_CLASSES)
        if all(counts[c] >= MIN_REGION_PIXELS for c in placed):
            return labels
    raise RuntimeError("could not sample a valid scene layout; resolution too small?")


def render_scene(rng: np.random.Generator, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Label map plus base image: palette colors with speckle, clipped to [0, 1]."""
    labels = _scene_labels(rng, h, w)
    image = PALETTE[labels].transpose(2, 0, 1).copy()
    image += rng.normal(0.0, SPECKLE_SIGMA, size=image.shape).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)
    return image.astype(np.float32), labels


def apply_shift(image: np.ndarray, shift: DomainShift,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply a domain shift to a (3, h, w) image; see DomainShift for the order.

    Steps that are identity at default parameter values are skipped
    entirely, so the identity shift is a bit-exact no-op and consumes no
    random draws.
    """
    out = image
    if shift.gain != (1.0, 1.0, 1.0) or shift.bias != (0.0, 0.0, 0.0):
        gain = np.asarray(shift.gain, dtype=image.dtype).reshape(3, 1, 1)
        bias = np.asarray(shift.bias, dtype=image.dtype).reshape(3, 1, 1)
        out = np.clip(out * gain + bias, 0.0, 1.0)
    if shift.gamma != 1.0:
        out = np.clip(out, 0.0, 1.0) ** np.asarray(shift.gamma, dtype=image.dtype)
    if shift.vgrad != 0.0:
        h = out.shape[1]
        ramp = (np.arange(h, dtype=image.dtype) / max(1, h - 1) - 0.5) * shift.vgrad
        out = out + ramp[None, :, None]
    if shift.noise_sigma != 0.0:
        if rng is None:
            raise ValueError("a noisy shift needs a random generator")
        out = out + rng.normal(0.0, shift.noise_sigma, size=out.shape).astype(image.dtype)
    if out is not image:
        out = np.clip(out, 0.0, 1.0).astype(image.dtype)
    return out


def generate_domain(spec: SceneSpec, shift: DomainShift, count: int) -> list[LabeledScene]:
    """``count`` scenes, deterministic in (spec.seed, shift.seed, count).

    Layout and speckle draw from a per-image stream seeded by
    (spec.seed, index); shift noise draws from an independent stream seeded
    by (shift.seed, spec.seed, index). Labels therefore do not depend on
    the shift at all.
    """
    spec.validate()
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    scenes = []
    for i in range(count):
        layout_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i]))
        image, labels = render_scene(layout_rng, spec.height, spec.width)
        shift_rng = np.random.default_rng(
            np.random.SeedSequence([shift.seed, spec.seed, i]))
        image = apply_shift(image, shift, shift_rng)
        scenes.append(LabeledScene(image=image, labels=labels))
    return scenes


def _split_seed(seed: int, split: int) -> int:
    return int(np.random.SeedSequence([seed, split]).generate_state(1)[0])


class Dataset:
    """The three benchmark splits with counted target-train access.

    Source scenes carry labels; target-train exposes images only (its
    labels were never generated); target-eval keeps labels aside for the
    evaluator. Every read of a target-train image bumps a counter so tests
    can prove the source-only mode never touches the target domain.
    """

    def __init__(self, source: list[LabeledScene], target_train: list[np.ndarray],
                 target_eval: list[LabeledScene], meta: dict[str, str] | None = None):
        self.source = source
        self._target_train = target_train
        self.target_eval = target_eval
        self.meta = meta or {}
        self.target_train_reads = 0

    @property
    def n_target_train(self) -> int:
        return len(self._target_train)

    def target_train_image(self, index: int) -> np.ndarray:
        self.target_train_reads += 1
        return self._target_train[index]

    def resolution(self) -> tuple[int, int]:
        img = self.source[0].image
        return img.shape[1], img.shape[2]


def make_benchmark(seed: int = 0, n_source: int = 200, n_target_train: int = 100,
                   n_target_eval: int = 50, height: int = 64, width: int = 64,
                   target_shift: DomainShift | None = None) -> Dataset:
    """Source (identity shift, labeled) and target (shifted) splits.

    The three splits use disjoint derived layout seeds. The target shift
    defaults to DEFAULT_TARGET_SHIFT reseeded with the benchmark seed.
    """
    if target_shift is None:
        target_shift = replace(DEFAULT_TARGET_SHIFT, seed=seed)
    seeds = [_split_seed(seed, k) for k in range(3)]
    specs = [SceneSpec(height=height, width=width, seed=s) for s in seeds]
    source = generate_domain(specs[0], DomainShift.identity(), n_source)
    target_train = [s.image for s in generate_domain(specs[1], target_shift, n_target_train)]
    target_eval = generate_domain(specs[2], target_shift, n_target_eval)
    meta = {
        "num_source": str(n_source),
        "num_target_train": str(n_target_train),
        "num_target_eval": str(n_target_eval),
        "height": str(height),
        "width": str(width),
        "num_classes": str(NUM_CLASSES),
        "seed": str(seed),
        "source_seed": str(seeds[0]),
        "target_train_seed": str(seeds[1]),
        "target_eval_seed": str(seeds[2]),
        "shift_gain_r": repr(target_shift.gain[0]),
        "shift_gain_g": repr(target_shift.gain[1]),
        "shift_gain_b": repr(target_shift.gain[2]),
        "shift_bias_r": repr(target_shift.bias[0]),
        "shift_bias_g": repr(target_shift.bias[1]),
        "shift_bias_b": repr(target_shift.bias[2]),
        "shift_gamma": repr(target_shift.gamma),
        "shift_noise": repr(target_shift.noise_sigma),
        "shift_vgrad": repr(target_shift.vgrad),
        "shift_seed": str(target_shift.seed),
    }
    return Dataset(source, target_train, [s for s in target_eval], meta=meta)


# ---------------------------------------------------------------------------
# on-disk layout: <root>/{source,target_train,target_eval}/img_%05d.ppm (+ lbl)
# ---------------------------------------------------------------------------

SPLITS = ("source", "target_train", "target_eval")


def write_benchmark(dataset: Dataset, root: Path | str) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    src_dir = root / "source"
    src_dir.mkdir(exist_ok=True)
    for i, scene in enumerate(dataset.source):
        write_ppm(src_dir / f"img_{i:05d}.ppm", scene.image)
        write_pgm(src_dir / f"lbl_{i:05d}.pgm", scene.labels)
    tt_dir = root / "target_train"
    tt_dir.mkdir(exist_ok=True)
    for i in range(dataset.n_target_train):
        write_ppm(tt_dir / f"img_{i:05d}.ppm", dataset._target_train[i])
    te_dir = root / "target_eval"
    te_dir.mkdir(exist_ok=True)
    for i, scene in enumerate(dataset.target_eval):
        write_ppm(te_dir / f"img_{i:05d}.ppm", scene.image)
        write_pgm(te_dir / f"lbl_{i:05d}.pgm", scene.labels)
    (root / "manifest.txt").write_text(format_kv(dataset.meta))
    # reads during writing do not count as training access
    dataset.target_train_reads = 0


class DiskDataset(Dataset):
    """Lazy per-split loader over the on-disk layout.

    A split's files are only opened on first access, so a source-only
    training run never opens anything under target_train, and evaluation
    works even if target_train was deleted from disk.
    """

    def __init__(self, root: Path | str):
        root = Path(root)
        manifest = root / "manifest.txt"
        if not manifest.exists():
            raise DataError(f"missing dataset manifest: {manifest}")
        meta = parse_kv(manifest.read_text(), source=str(manifest))
        for key in ("num_source", "num_target_train", "num_target_eval", "num_classes"):
            if key not in meta:
                raise DataError(f"{manifest}: missing key {key}")
        super().__init__(source=None, target_train=None, target_eval=None, meta=meta)
        self.root = root

    def _load_split(self, name: str, count: int, with_labels: bool) -> list[LabeledScene]:
        split_dir = self.root / name
        scenes = []
        for i in range(count):
            img_path = split_dir / f"img_{i:05d}.ppm"
            if not img_path.exists():
                raise DataError(
                    f"dataset mismatch: manifest promises {count} {name} images "
                    f"but {img_path} is missing")
            labels = read_pgm(split_dir / f"lbl_{i:05d}.pgm") if with_labels else None
            scenes.append(LabeledScene(image=read_ppm(img_path), labels=labels))
        return scenes

    @property
    def source(self) -> list[LabeledScene]:
        if self._source is None:
            self._source = self._load_split("source", int(self.meta["num_source"]), True)
        return self._source

    @source.setter
    def source(self, value):
        self._source = value

    @property
    def target_eval(self) -> list[LabeledScene]:
        if self._target_eval is None:
            self._target_eval = self._load_split(
                "target_eval", int(self.meta["num_target_eval"]), True)
        return self._target_eval

    @target_eval.setter
    def target_eval(self, value):
        self._target_eval = value

    @property
    def n_target_train(self) -> int:
        return int(self.meta["num_target_train"])

    def target_train_image(self, index: int) -> np.ndarray:
        if self._target_train is None:
            self._target_train = [
                s.image for s in self._load_split("target_train", self.n_target_train, False)
            ]
        self.target_train_reads += 1
        return self._target_train[index]
