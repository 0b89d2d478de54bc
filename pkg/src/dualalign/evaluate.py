"""Per-class IoU / mean IoU over a labeled evaluation set, plus ablation sweeps.

Evaluation always goes through the single-branch test forward, so a trained
checkpoint needs no target imagery at all. A single global confusion matrix
accumulates over the whole set (rows = ground truth, columns = prediction);
IoU_c = TP / (TP + FP + FN) with zero-denominator classes excluded from the
mean rather than scored zero, so tiny evaluation sets stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .scenes import Dataset, LabeledScene
from .segnet import SegModel, seg_forward_test
from .tensor import Tensor
from .trainer import TrainConfig, train

EVAL_BATCH = 10


class ConfusionMatrix:
    """C x C pixel counts; rows index ground truth, columns prediction."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, truth: np.ndarray, pred: np.ndarray) -> None:
        if truth.shape != pred.shape:
            raise ValueError(f"shape mismatch: truth {truth.shape} vs pred {pred.shape}")
        c = self.num_classes
        for name, arr in (("truth", truth), ("prediction", pred)):
            if arr.min() < 0 or arr.max() >= c:
                raise DataError(
                    f"{name} labels outside [0, {c}): found {int(arr.min())}..{int(arr.max())}")
        flat = c * truth.reshape(-1) + pred.reshape(-1)
        self.counts += np.bincount(flat, minlength=c * c).reshape(c, c)

    def total(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> tuple[list[float], float]:
    """Per-class IoU (nan where the class is absent on both sides) and the mean.

    The mean runs over classes with a nonzero union only; if every class is
    excluded there is nothing to score.
    """
    tp = np.diag(cm.counts)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    ious: list[float] = []
    included: list[float] = []
    for c in range(cm.num_classes):
        if union[c] == 0:
            ious.append(math.nan)
        else:
            value = float(tp[c]) / float(union[c])
            ious.append(value)
            included.append(value)
    if not included:
        raise DataError("every class has an empty union; nothing to evaluate")
    return ious, float(np.mean(included))


@dataclass
class EvalReport:
    per_class: list[float]
    mean_iou: float
    confusion: ConfusionMatrix

    def csv(self) -> str:
        lines = [f"class_{c},{iou:.6g}" for c, iou in enumerate(self.per_class)]
        lines.append(f"mIoU,{self.mean_iou:.6g}")
        return "\n".join(lines) + "\n"


def evaluate_model(model: SegModel, eval_set: list[LabeledScene],
                   batch: int = EVAL_BATCH) -> EvalReport:
    """Run the test forward over the set and score one global confusion matrix."""
    cm = ConfusionMatrix(model.num_classes)
    for start in range(0, len(eval_set), batch):
        chunk = eval_set[start:start + batch]
        images = np.stack([s.image for s in chunk])
        truth = np.stack([s.labels for s in chunk])
        pred = seg_forward_test(Tensor(images), model).label_map()
        cm.add(truth, pred)
    ious, mean_iou = miou(cm)
    return EvalReport(per_class=ious, mean_iou=mean_iou, confusion=cm)


# ---------------------------------------------------------------------------
# ablation sweeps: one trained model per (setting, seed), shared everything else
# ---------------------------------------------------------------------------

SWEEPS = {
    "align": ("align_point", ["S1", "S2", "S3", "D1", "D2"]),
    "targets": ("k", ["1", "2", "4", "enumerate"]),
    "training": ("mode", ["end_to_end", "two_stage", "source_only"]),
}


@dataclass
class AblationRow:
    setting: str
    seed: str        # seed index as text, or "mean"
    mean_iou: float


def _config_for(config: TrainConfig, sweep: str, value: str, seed_offset: int) -> TrainConfig:
    cfg = replace(config,
                  seed_data=config.seed_data + seed_offset,
                  seed_init=config.seed_init + seed_offset,
                  seed_sampling=config.seed_sampling + seed_offset)
    if sweep == "align":
        return replace(cfg, align_point=value)
    if sweep == "training":
        return replace(cfg, mode=value)
    if sweep == "targets":
        # the pseudo-target protocol: a fixed 8-image subset, K stochastic
        # or full enumeration over it
        if value == "enumerate":
            return replace(cfg, mode="enumerate_targets", pseudo_targets=8)
        return replace(cfg, mode="end_to_end", k_targets=int(value), pseudo_targets=8)
    raise ValueError(f"unknown sweep {sweep!r}; expected one of {sorted(SWEEPS)}")


def ablate(config: TrainConfig, dataset: Dataset, sweep: str,
           values: list[str] | None = None, n_seeds: int = 3,
           progress=None) -> list[AblationRow]:
    """Train one model per (setting, seed) and report mIoU per setting.

    Every setting shares seeds and data; only the swept knob changes. The
    output carries one row per (setting, seed) plus a mean row per setting,
    and makes no ranking assertion itself.
    """
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; expected one of {sorted(SWEEPS)}")
    key, default_values = SWEEPS[sweep]
    values = list(values) if values is not None else list(default_values)
    for v in values:
        if v not in default_values:
            raise ValueError(f"value {v!r} is not valid for sweep {sweep} ({key})")
    rows: list[AblationRow] = []
    for value in values:
        scores = []
        for s in range(n_seeds):
            cfg = _config_for(config, sweep, value, s)
            result = train(cfg, dataset)
            report = evaluate_model(result.models.segnet, dataset.target_eval)
            rows.append(AblationRow(setting=f"{key}={value}", seed=str(s),
                                    mean_iou=report.mean_iou))
            scores.append(report.mean_iou)
            if progress is not None:
                progress(value, s, report.mean_iou)
        rows.append(AblationRow(setting=f"{key}={value}", seed="mean",
                                mean_iou=float(np.mean(scores))))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    lines = ["setting,seed,miou"]
    for row in rows:
        lines.append(f"{row.setting},{row.seed},{row.mean_iou:.6g}")
    return "\n".join(lines) + "\n"
