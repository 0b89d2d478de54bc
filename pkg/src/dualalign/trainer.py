"""Joint training: stochastic target sampling, combined loss, momentum SGD.

One step takes a batch of labeled source scenes; every scene draws K
target images (uniform, without replacement), is stylized toward each of
them, and the stylized copies run through the segmentation network with
mid-network alignment against the same target. The step loss is

    mean over (source, target) pairs of the segmentation loss
    + lambda * mean over pairs of the generation loss

and one momentum-SGD update is applied to the joint parameter set. Modes:

- end_to_end: generator decoder and segmentation net update together;
  segmentation gradients reach the decoder through the synthesized image.
- two_stage: the generator pretrains alone first, then freezes while the
  segmentation net trains on its outputs.
- source_only: the segmentation net trains on raw source images, no
  alignment, and never reads a target image.
- enumerate_targets: every source pairs with the whole (pseudo) target
  set each step instead of sampling; the per-image loss is the mean over
  the set, which the stochastic mode estimates.

All randomness comes from three named streams (data order, weight init,
target sampling) so runs are bit-reproducible, and the streams' states are
serialized into checkpoints so a resumed run continues the exact same
sequence.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .align import DEFAULT_EPS
from .errors import DataError, NumericalError
from .formats import load_checkpoint, save_checkpoint
from .generator import GeneratorModel, generation_loss, synthesize
from .optim import ParameterSet, sgd_momentum_step
from .scenes import Dataset, LabeledScene
from .segnet import ALIGN_POINTS, SegModel, seg_forward_test, seg_forward_train, segmentation_loss
from .tensor import Tape, Tensor

MODES = ("end_to_end", "two_stage", "source_only", "enumerate_targets")
DEFAULT_PSEUDO_TARGETS = 8


@dataclass
class TrainConfig:
    lam: float = 0.1                 # weight of the generation loss
    lr: float = 1e-2
    momentum: float = 0.99
    iterations: int = 2000
    batch: int = 3
    k_targets: int = 2               # sampled targets per source image
    mode: str = "end_to_end"
    align_point: str = "S3"
    stop_grad_target: bool = False
    pseudo_targets: int = 0          # >0 restricts sampling to a fixed subset
    num_classes: int = 5
    eps: float = DEFAULT_EPS
    seed_data: int = 0
    seed_init: int = 1
    seed_sampling: int = 2
    log_every: int = 10
    checkpoint_every: int = 500

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.k_targets < 1:
            raise ValueError(f"k must be >= 1, got {self.k_targets}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.align_point not in ALIGN_POINTS:
            raise ValueError(f"align_point must be one of {ALIGN_POINTS}")
        if self.iterations < 1 or self.batch < 1:
            raise ValueError("iterations and batch must be >= 1")


@dataclass
class Models:
    generator: GeneratorModel
    segnet: SegModel

    def all_tensors(self) -> dict[str, Tensor]:
        out = dict(self.generator.all_tensors())
        out.update(self.segnet.all_tensors())
        return out

    def freeze_generator(self) -> None:
        for layer in self.generator.decoder:
            layer.kernel.requires_grad = False
            layer.bias.requires_grad = False


def init_models(config: TrainConfig, dtype=np.float32) -> Models:
    """Seeded models; generator and segnet draw from independent streams."""
    gen_rng = np.random.default_rng(np.random.SeedSequence([config.seed_init, 0]))
    seg_rng = np.random.default_rng(np.random.SeedSequence([config.seed_init, 1]))
    generator = GeneratorModel.create(gen_rng, eps=config.eps, dtype=dtype)
    segnet = SegModel.create(seg_rng, num_classes=config.num_classes,
                             align_point=config.align_point,
                             stop_grad_target=config.stop_grad_target,
                             eps=config.eps, dtype=dtype)
    return Models(generator=generator, segnet=segnet)


def trainable_params(models: Models, stage: str) -> ParameterSet:
    """The joint parameter set for a stage: 'gen', 'seg', or 'joint'."""
    params = ParameterSet()
    if stage in ("gen", "joint"):
        params.update(models.generator.parameters())
    if stage in ("seg", "joint"):
        params.update(models.segnet.parameters())
    return params


def sample_target_indices(n: int, k: int, rng: np.random.Generator) -> list[int]:
    """K distinct indices, uniform without replacement, exactly K draws.

    Partial Fisher-Yates: draw j ~ U[i, n) and swap, so k == n yields a
    full permutation and k == 1 costs a single draw.
    """
    if k > n:
        raise ValueError(f"cannot sample {k} targets from a set of {n}")
    idx = list(range(n))
    for i in range(k):
        j = int(rng.integers(i, n))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def sample_targets(dataset: Dataset, k: int, rng: np.random.Generator,
                   pool: list[int] | None = None) -> list[np.ndarray]:
    """K target-train images drawn without replacement (optionally from a pool)."""
    pool = pool if pool is not None else list(range(dataset.n_target_train))
    picks = sample_target_indices(len(pool), k, rng)
    return [dataset.target_train_image(pool[j]) for j in picks]


@dataclass
class StepLosses:
    seg: float
    gen: float
    total: float


def _check_losses(iteration: int, seg: float, gen: float, total: float) -> None:
    if not (np.isfinite(seg) and np.isfinite(gen) and np.isfinite(total)):
        raise NumericalError(
            f"non-finite loss at iteration {iteration}: "
            f"seg={seg}, gen={gen}, total={total}")


def _stack_pairs(scenes: list[LabeledScene],
                 targets: list[list[np.ndarray]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = len(targets[0])
    xs = np.stack([s.image for s in scenes])
    labels = np.stack([s.labels for s in scenes])
    xs_rep = np.repeat(xs, k, axis=0)
    labels_rep = np.repeat(labels, k, axis=0)
    xt = np.stack([img for per_source in targets for img in per_source])
    return xs_rep, labels_rep, xt


def pair_losses(models: Models, xs_rep: np.ndarray, labels_rep: np.ndarray,
                xt: np.ndarray) -> tuple[Tensor, Tensor]:
    """Segmentation and generation losses, each a mean over the pair batch."""
    sample = synthesize(models.generator, Tensor(xs_rep), Tensor(xt))
    pred = seg_forward_train(sample.image, Tensor(xt), models.segnet)
    loss_seg = segmentation_loss(pred, labels_rep)
    loss_gen = generation_loss(sample)
    return loss_seg, loss_gen


def train_step(models: Models, scenes: list[LabeledScene],
               targets: list[list[np.ndarray]], config: TrainConfig,
               params: ParameterSet, iteration: int = 0) -> StepLosses:
    """One optimization step; see the module docstring for the objective."""
    if config.mode == "source_only":
        xs = np.stack([s.image for s in scenes])
        labels = np.stack([s.labels for s in scenes])
        with Tape() as tape:
            pred = seg_forward_test(Tensor(xs), models.segnet)
            loss = segmentation_loss(pred, labels)
            seg_val = loss.item()
            _check_losses(iteration, seg_val, 0.0, seg_val)
            tape.backward(loss)
        sgd_momentum_step(params, config.lr, config.momentum)
        return StepLosses(seg=seg_val, gen=0.0, total=seg_val)

    xs_rep, labels_rep, xt = _stack_pairs(scenes, targets)
    with Tape() as tape:
        loss_seg, loss_gen = pair_losses(models, xs_rep, labels_rep, xt)
        # lambda == 0 skips the generation term entirely so the update is
        # bit-identical to training on the segmentation loss alone
        total = loss_seg if config.lam == 0 else loss_seg + config.lam * loss_gen
        seg_val, gen_val, total_val = loss_seg.item(), loss_gen.item(), total.item()
        _check_losses(iteration, seg_val, gen_val, total_val)
        tape.backward(total)
    sgd_momentum_step(params, config.lr, config.momentum)
    return StepLosses(seg=seg_val, gen=gen_val, total=total_val)


def generator_step(models: Models, scenes: list[LabeledScene],
                   targets: list[list[np.ndarray]], config: TrainConfig,
                   params: ParameterSet, iteration: int = 0) -> StepLosses:
    """Generator-only pretraining step (stage one of two_stage)."""
    xs_rep, _, xt = _stack_pairs(scenes, targets)
    with Tape() as tape:
        sample = synthesize(models.generator, Tensor(xs_rep), Tensor(xt))
        loss_gen = generation_loss(sample)
        gen_val = loss_gen.item()
        _check_losses(iteration, 0.0, gen_val, gen_val)
        tape.backward(loss_gen)
    sgd_momentum_step(params, config.lr, config.momentum)
    return StepLosses(seg=0.0, gen=gen_val, total=gen_val)


# ---------------------------------------------------------------------------
# the full loop with logging, checkpointing, and resume
# ---------------------------------------------------------------------------

METRICS_HEADER = "iter,loss_seg,loss_gen,loss_total"


def format_metric(x: float) -> str:
    return f"{x:.6g}"


def metrics_csv(rows: list[tuple[int, float, float, float]]) -> str:
    lines = [METRICS_HEADER]
    for it, seg, gen, total in rows:
        lines.append(f"{it},{format_metric(seg)},{format_metric(gen)},{format_metric(total)}")
    return "\n".join(lines) + "\n"


def _rng_to_str(rng: np.random.Generator) -> str:
    st = rng.bit_generator.state
    return (f"{st['state']['state']}:{st['state']['inc']}:"
            f"{st['has_uint32']}:{st['uinteger']}")


def _rng_from_str(text: str) -> np.random.Generator:
    a, b, c, d = text.split(":")
    bg = np.random.PCG64()
    bg.state = {"bit_generator": "PCG64",
                "state": {"state": int(a), "inc": int(b)},
                "has_uint32": int(c), "uinteger": int(d)}
    return np.random.Generator(bg)


class _BatchQueue:
    """Seeded reshuffling queue over source indices."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.queue: deque[int] = deque()

    def next_batch(self, size: int) -> list[int]:
        while len(self.queue) < size:
            self.queue.extend(int(i) for i in self.rng.permutation(self.n))
        return [self.queue.popleft() for _ in range(size)]

    def dump(self) -> str:
        return ",".join(str(i) for i in self.queue)

    def load(self, text: str) -> None:
        self.queue = deque(int(t) for t in text.split(",") if t)


def _pseudo_pool(config: TrainConfig, n_targets: int) -> list[int]:
    """The active target pool; a seeded fixed subset when pseudo_targets > 0."""
    want = config.pseudo_targets
    if want == 0 and config.mode == "enumerate_targets":
        want = min(DEFAULT_PSEUDO_TARGETS, n_targets)
    if want == 0:
        return list(range(n_targets))
    if want > n_targets:
        raise ValueError(f"pseudo target set of {want} exceeds target-train size {n_targets}")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed_data, 7]))
    return sorted(sample_target_indices(n_targets, want, rng))


@dataclass
class TrainState:
    models: Models
    params: ParameterSet
    data_rng: np.random.Generator
    sampling_rng: np.random.Generator
    queue: _BatchQueue
    stage: str
    iteration: int = 0
    metrics: list[tuple[int, float, float, float]] = field(default_factory=list)
    pre_metrics: list[tuple[int, float, float, float]] = field(default_factory=list)


@dataclass
class TrainResult:
    models: Models
    params: ParameterSet
    metrics: list[tuple[int, float, float, float]]
    pre_metrics: list[tuple[int, float, float, float]]
    checkpoints: list[Path]
    wall_seconds: float


def _config_metadata(config: TrainConfig) -> dict[str, str]:
    out = {}
    for f in fields(TrainConfig):
        out[f"cfg_{f.name}"] = repr(getattr(config, f.name))
    return out


def config_from_metadata(meta: dict[str, str]) -> TrainConfig:
    kwargs = {}
    for f in fields(TrainConfig):
        key = f"cfg_{f.name}"
        if key not in meta:
            raise DataError(f"checkpoint metadata is missing {key}")
        raw = meta[key]
        if f.type == "str":
            kwargs[f.name] = raw.strip("'\"")
        elif f.type == "bool":
            kwargs[f.name] = raw == "True"
        elif f.type == "int":
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return TrainConfig(**kwargs)


def save_train_checkpoint(stem: Path, state: TrainState, config: TrainConfig) -> Path:
    tensors = {name: t.data.astype(np.float32)
               for name, t in state.models.all_tensors().items()}
    for name in state.params.names():
        tensors[f"vel.{name}"] = state.params.velocity(name).astype(np.float32)
    meta = {
        "kind": "train-checkpoint",
        "stage": state.stage,
        "iteration": str(state.iteration),
        "rng_data": _rng_to_str(state.data_rng),
        "rng_sampling": _rng_to_str(state.sampling_rng),
        "data_queue": state.queue.dump(),
    }
    meta.update(_config_metadata(config))
    save_checkpoint(stem, tensors, meta)
    return stem.with_suffix(".manifest")


def _load_bundle(stem: Path | str, dtype=np.float32):
    tensors, meta = load_checkpoint(stem)
    config = config_from_metadata(meta)
    models = init_models(config, dtype=dtype)
    for name, tensor in models.all_tensors().items():
        if name not in tensors:
            raise DataError(f"checkpoint is missing tensor {name}")
        if tensors[name].shape != tensor.data.shape:
            raise DataError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"expected {tensor.data.shape}")
        tensor.data = tensors[name].astype(dtype)
    return models, config, meta, tensors


def load_models(stem: Path | str, dtype=np.float32) -> tuple[Models, TrainConfig, dict[str, str]]:
    """Rebuild models from a checkpoint bundle."""
    models, config, meta, _ = _load_bundle(stem, dtype)
    return models, config, meta


def _restore_state(stem: Path, config: TrainConfig) -> TrainState:
    models, ckpt_config, meta, tensors = _load_bundle(stem)
    if _config_metadata(ckpt_config) != _config_metadata(config):
        raise DataError(f"checkpoint {stem} was written with a different configuration")
    stage = meta["stage"]
    if config.mode == "two_stage" and stage == "seg":
        models.freeze_generator()
    params = trainable_params(models, stage)
    for name in params.names():
        vel = tensors.get(f"vel.{name}")
        if vel is None:
            raise DataError(f"checkpoint is missing momentum buffer for {name}")
        params.set_velocity(name, vel)
    data_rng = _rng_from_str(meta["rng_data"])
    sampling_rng = _rng_from_str(meta["rng_sampling"])
    queue = _BatchQueue(0, data_rng)  # n is reset by the caller
    queue.load(meta.get("data_queue", ""))
    return TrainState(models=models, params=params, data_rng=data_rng,
                      sampling_rng=sampling_rng, queue=queue, stage=stage,
                      iteration=int(meta["iteration"]))


def latest_checkpoint(out_dir: Path) -> Path | None:
    best = None
    best_key = None
    for manifest in sorted(Path(out_dir).glob("*.manifest")):
        try:
            _, meta = load_checkpoint(manifest)
        except DataError:
            continue
        if meta.get("kind") != "train-checkpoint":
            continue
        rank = 0 if meta.get("stage") == "gen" else 1
        key = (rank, int(meta.get("iteration", 0)))
        if best_key is None or key > best_key:
            best, best_key = manifest.with_suffix(""), key
    return best


def train(config: TrainConfig, dataset: Dataset, out_dir: Path | str | None = None,
          resume: bool = False, progress=None) -> TrainResult:
    """Run the configured training; optionally write metrics and checkpoints.

    With ``resume`` and an ``out_dir`` holding a checkpoint, training
    restarts from the latest one and continues the exact random streams,
    appending to the existing metrics log.
    """
    config.validate()
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    n_source = len(dataset.source)
    if n_source < config.batch:
        raise DataError(f"batch {config.batch} exceeds source-set size {n_source}")
    needs_targets = config.mode != "source_only"
    pool = _pseudo_pool(config, dataset.n_target_train) if needs_targets else []
    k = len(pool) if config.mode == "enumerate_targets" else config.k_targets
    if needs_targets and k > len(pool):
        raise ValueError(f"k={k} exceeds the available target pool of {len(pool)}")

    start = time.perf_counter()
    state = None
    if resume and out_path is not None:
        stem = latest_checkpoint(out_path)
        if stem is not None:
            state = _restore_state(stem, config)
            state.queue.n = n_source
    if state is None:
        models = init_models(config)
        stage = "gen" if config.mode == "two_stage" else (
            "seg" if config.mode == "source_only" else "joint")
        data_rng = np.random.default_rng(np.random.SeedSequence([config.seed_data]))
        sampling_rng = np.random.default_rng(np.random.SeedSequence([config.seed_sampling]))
        state = TrainState(models=models,
                           params=trainable_params(models, stage),
                           data_rng=data_rng, sampling_rng=sampling_rng,
                           queue=_BatchQueue(n_source, data_rng),
                           stage=stage)
    else:
        state.queue.n = n_source

    checkpoints: list[Path] = []

    def run_stage(stage: str, metrics: list, csv_name: str, ckpt_prefix: str) -> None:
        step_fn = generator_step if stage == "gen" else train_step
        csv_path = out_path / csv_name if out_path is not None else None
        if csv_path is not None and state.iteration == 0 and not metrics:
            csv_path.write_text(METRICS_HEADER + "\n")
        while state.iteration < config.iterations:
            it = state.iteration + 1
            batch_idx = state.queue.next_batch(config.batch)
            scenes = [dataset.source[i] for i in batch_idx]
            targets = []
            if needs_targets:
                for _ in range(config.batch):
                    if config.mode == "enumerate_targets":
                        targets.append([dataset.target_train_image(j) for j in pool])
                    else:
                        targets.append(sample_targets(dataset, k, state.sampling_rng, pool))
            losses = step_fn(state.models, scenes, targets, config, state.params,
                             iteration=it)
            state.iteration = it
            if it % config.log_every == 0:
                row = (it, losses.seg, losses.gen, losses.total)
                metrics.append(row)
                if csv_path is not None:
                    with csv_path.open("a") as fh:
                        fh.write(f"{it},{format_metric(losses.seg)},"
                                 f"{format_metric(losses.gen)},{format_metric(losses.total)}\n")
                if progress is not None:
                    progress(stage, it, losses)
            if out_path is not None and it % config.checkpoint_every == 0 and it < config.iterations:
                stem = out_path / f"{ckpt_prefix}{it:06d}"
                save_train_checkpoint(stem, state, config)
                checkpoints.append(stem)

    if config.mode == "two_stage":
        if state.stage == "gen":
            run_stage("gen", state.pre_metrics, "metrics_pretrain.csv", "ckpt_g")
            state.models.freeze_generator()
            state.stage = "seg"
            state.iteration = 0
            state.params = trainable_params(state.models, "seg")
        run_stage("seg", state.metrics, "metrics.csv", "ckpt_")
    else:
        run_stage(state.stage, state.metrics, "metrics.csv", "ckpt_")

    if out_path is not None:
        stem = out_path / "final"
        save_train_checkpoint(stem, state, config)
        checkpoints.append(stem)

    return TrainResult(models=state.models, params=state.params,
                       metrics=state.metrics, pre_metrics=state.pre_metrics,
                       checkpoints=checkpoints,
                       wall_seconds=time.perf_counter() - start)
