"""Experiment orchestration: datasets, architectures, training, evaluation.

A run is fully determined by (config, dataset bytes, run seed): dataset
subsampling, network init, batch order and dropout masks all draw from
seeds derived with :func:`subseed`.  The five method variants share one
training loop; the staged variants train the feature-shaping loss first and
hand over to cross-entropy at the switch iteration (OpenMax rides on a
cross-entropy backbone and only changes inference).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .config import ExperimentConfig, snapshot_lines
from .datasets import (
    KNOWN_SET_PRESETS,
    Dataset,
    OpenSplit,
    build_open_split,
    load_cifar10,
    load_idx,
    make_blobs,
    stratified_batches,
)
from .errors import ConfigError
from .evaluation import OpennessSpec, RunMetrics, confusion, metrics, openness
from .loss import LossConfig, loss_schedule, superlative_loss
from .openmax import OpenMaxConfig, WeibullModel, fit_openmax, openmax_recalibrate
from .predictor import ThresholdTable, estimate_thresholds, predict_batch
from .representation import MeanActivationVector, compute_mavs

log = logging.getLogger(__name__)

# stream tags for seed derivation
_DATA, _MODEL, _BATCH, _DROPOUT, _EVAL = 0, 1, 2, 3, 4


def subseed(*parts) -> list[int]:
    """Deterministic seed material for a named random stream."""
    return [int(p) for p in parts]


@dataclass
class RunArtifact:
    method: str
    set_name: str
    run_index: int
    seed: int
    known_classes: list[int]
    config_lines: list[str]
    mavs: list[MeanActivationVector]
    thresholds: ThresholdTable
    weibulls: list[WeibullModel] | None
    metrics: RunMetrics
    loss_trace: np.ndarray
    wall_clock: float  # informational only; never serialized


def resolve_known_set(name: str, n_classes: int, base_seed: int) -> list[int]:
    """Preset name, explicit class list, or ``randomN`` seeded selection."""
    name = name.strip().lower()
    if name in KNOWN_SET_PRESETS:
        return list(KNOWN_SET_PRESETS[name])
    if name.startswith("random"):
        count = int(name[len("random") :])
        if not 0 < count < n_classes:
            raise ConfigError(f"random known-set size must lie in (0, {n_classes})")
        rng = np.random.default_rng(subseed(base_seed, 17, count))
        return sorted(rng.choice(n_classes, size=count, replace=False).tolist())
    try:
        classes = [int(tok) for tok in name.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse known set {name!r}") from exc
    if not classes:
        raise ConfigError("known set must not be empty")
    return classes


def _mnist_paths(data_dir, train: bool):
    stem = "train" if train else "t10k"
    return (f"{data_dir}/{stem}-images-idx3-ubyte", f"{data_dir}/{stem}-labels-idx1-ubyte")


def load_file_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/test pair for the file-backed datasets (not blobs)."""
    if config.dataset in ("mnist", "fashion-mnist"):
        train = load_idx(*_mnist_paths(config.data_dir, True))
        test = load_idx(*_mnist_paths(config.data_dir, False))
    elif config.dataset == "cifar10":
        batches = [f"{config.data_dir}/data_batch_{i}.bin" for i in range(1, 6)]
        train = load_cifar10(batches, to_grayscale=True)
        test = load_cifar10([f"{config.data_dir}/test_batch.bin"], to_grayscale=True)
    else:
        raise ConfigError(f"{config.dataset} is not file-backed")
    return train, test


def _subsample_per_class(dataset: Dataset, per_class: int, seed_material) -> Dataset:
    rng = np.random.default_rng(seed_material)
    keep = []
    for cls in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size > per_class:
            idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        keep.append(idx)
    keep = np.concatenate(keep)
    return Dataset(
        dataset.images[keep], dataset.labels[keep], dataset.class_names, dataset.provenance
    )


def make_run_datasets(
    config: ExperimentConfig, seed: int, file_data: tuple[Dataset, Dataset] | None
) -> tuple[Dataset, Dataset, int]:
    """(train, test, total class count) for one run.

    Blobs are drawn fresh per run seed; file datasets are shared and only
    subsampled (with the base seed, so every run sees the same subset).
    """
    if config.dataset == "blobs":
        # one draw per run so train and test share class centers
        per_class = config.blobs_per_class + config.blobs_test_per_class
        pool = make_blobs(
            config.blobs_classes,
            per_class,
            config.blobs_dim,
            config.blobs_center_scale,
            config.blobs_noise_sigma,
            seed=_as_int_seed(subseed(seed, _DATA, 0)),
        )
        blocks = np.arange(config.blobs_classes)[:, None] * per_class
        train_idx = (blocks + np.arange(config.blobs_per_class)).ravel()
        test_idx = (blocks + np.arange(config.blobs_per_class, per_class)).ravel()
        train = Dataset(pool.images[train_idx], pool.labels[train_idx], None, pool.provenance)
        test = Dataset(pool.images[test_idx], pool.labels[test_idx], None, pool.provenance)
        return train, test, config.blobs_classes
    train, test = file_data
    if config.per_class_train > 0:
        train = _subsample_per_class(
            train, config.per_class_train, subseed(config.base_seed, _DATA, 2)
        )
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    return train, test, n_classes


def _as_int_seed(parts: list[int]) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def build_architecture(config: ExperimentConfig, input_shape, n_known: int):
    """Layer specs plus the activation-vector tap index.

    Conv stacks follow conv -> batchnorm -> relu -> maxpool per block, then
    hidden dense layers with relu; the activation vector is the last hidden
    relu output, followed by dropout and the logit layer.
    """
    kind = config.arch_kind
    if kind == "auto":
        kind = "conv" if len(input_shape) == 3 and min(input_shape[0], input_shape[1]) >= 8 else "mlp"
    specs: list[nn.LayerSpec] = []
    if kind == "conv":
        if len(input_shape) != 3:
            raise ConfigError("conv architecture needs (H, W, C) input")
        channels = input_shape[2]
        for out_ch in config.conv_channels:
            specs.append(nn.conv2d(channels, out_ch, kernel=config.conv_kernel))
            if config.use_batchnorm:
                specs.append(nn.batchnorm())
            specs.append(nn.relu())
            specs.append(nn.maxpool2())
            channels = out_ch
    if not config.dense_widths:
        raise ConfigError("at least one hidden dense width is required")
    for width in config.dense_widths:
        specs.append(nn.dense(width))
        # normalizing the hidden activations pins the feature scale, which
        # the feature-shaping loss needs: without it the loss is degree-2
        # homogeneous in the activations and collapse to zero is a minimum
        if config.use_batchnorm:
            specs.append(nn.batchnorm())
        specs.append(nn.relu())
    penultimate = len(specs) - 1
    if config.dropout_keep < 1.0:
        specs.append(nn.dropout(config.dropout_keep))
    specs.append(nn.dense(n_known))
    return specs, penultimate


def _companion_for(method: str) -> tuple[str, int]:
    """(companion_loss, effective switch iteration) per method variant."""
    if method == "ls":
        return "none", 0
    if method in ("ce", "om"):
        return "cross-entropy" if method == "ce" else "openmax-backbone", 0
    if method == "ls+ce":
        return "cross-entropy", -1  # -1: keep the configured switch
    if method == "ls+om":
        return "openmax-backbone", -1
    raise ConfigError(f"unknown method {method!r}")


def make_loss_config(config: ExperimentConfig, method: str) -> LossConfig:
    companion, switch = _companion_for(method)
    if switch == -1:
        switch = config.switch_iteration
    return LossConfig(
        gamma=config.gamma,
        bd_form=config.bd_form,
        is_form=config.is_form,
        switch_iteration=switch,
        companion_loss=companion,
    )


def train_one_run(config: ExperimentConfig, method: str, split: OpenSplit, seed: int):
    """Train a model for one (method, split, seed); returns (model, loss trace)."""
    input_shape = split.train.images.shape[1:]
    specs, penultimate = build_architecture(config, input_shape, split.n_known)
    model = nn.build_model(specs, input_shape, penultimate, seed=_as_int_seed(subseed(seed, _MODEL)))
    lcfg = make_loss_config(config, method)
    params = model.params()
    values = [p.value for p in params]
    adam = nn.AdamState.for_params(values, lr=config.learning_rate)
    trace = np.empty(config.iterations)
    iteration = 0
    epoch = 0
    model.train()
    while iteration < config.iterations:
        for idx in stratified_batches(split, config.batch_size, seed=subseed(seed, _BATCH, epoch)):
            x = split.train.images[idx]
            y = split.train.labels[idx]
            logits, avs, cache = nn.forward_pass(model, x, rng_seed=subseed(seed, _DROPOUT, iteration))
            if loss_schedule(iteration, lcfg) == "ls":
                report = superlative_loss(avs, y, lcfg, n_classes=split.n_known)
                value = report.l_s
                grad_logits = np.zeros_like(logits)
                grad_avs = report.grad_avs
            else:
                value, grad_logits = nn.cross_entropy_loss(logits, y)
                grad_avs = np.zeros_like(avs)
            grads = nn.backward_pass(model, cache, grad_logits, grad_avs)
            nn.adam_update(values, grads, adam)
            trace[iteration] = value
            iteration += 1
            if iteration >= config.iterations:
                break
        epoch += 1
    return model, trace


def forward_dataset(model: nn.Model, images: np.ndarray, chunk: int = 512):
    """Eval-mode logits and activation vectors over a whole dataset."""
    mode = model.mode
    model.eval()
    logits, avs = [], []
    for start in range(0, images.shape[0], chunk):
        lo, av, _ = nn.forward_pass(model, images[start : start + chunk], rng_seed=0)
        logits.append(lo)
        avs.append(av)
    model.mode = mode
    return np.concatenate(logits), np.concatenate(avs)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def evaluate_run(
    config: ExperimentConfig, method: str, model: nn.Model, split: OpenSplit
) -> tuple[list[MeanActivationVector], ThresholdTable, list[WeibullModel] | None, RunMetrics]:
    """Post-training calibration and open-set evaluation on the test set."""
    k = split.n_known
    train_logits, train_avs = forward_dataset(model, split.train.images)
    mavs = compute_mavs(train_avs, split.train.labels, k)
    table = estimate_thresholds(
        train_avs, split.train.labels, mavs, config.threshold_percentile, "euclidean"
    )
    weibulls = None
    test_logits, test_avs = forward_dataset(model, split.test.images)
    if method in ("om", "ls+om"):
        omcfg = OpenMaxConfig(config.openmax_tail_size, config.openmax_alpha, "euclidean")
        train_pred = np.argmax(train_logits, axis=1)
        weibulls = fit_openmax(train_avs, split.train.labels, train_pred, mavs, omcfg)
        preds = np.empty(test_avs.shape[0], dtype=np.int64)
        for i in range(test_avs.shape[0]):
            probs = openmax_recalibrate(test_avs[i], test_logits[i], mavs, weibulls, omcfg)
            preds[i] = int(np.argmax(probs))  # index k is the unknown slot
    else:
        softmax = _softmax_rows(test_logits) if method in ("ce", "ls+ce") else None
        preds = predict_batch(test_avs, mavs, table, softmax)
    cm = confusion(preds, split.test.labels, k)
    return mavs, table, weibulls, metrics(cm)


def run_experiment(config: ExperimentConfig, file_data=None) -> list[RunArtifact]:
    """Execute the full (sets x methods x runs) grid; returns all artifacts."""
    config.validate()
    if config.dataset != "blobs" and file_data is None:
        file_data = load_file_datasets(config)
    lines = snapshot_lines(config)
    artifacts = []
    for set_name in config.sets:
        for method in config.methods:
            for r in range(config.runs):
                seed = config.base_seed + r
                started = time.perf_counter()
                train, test, n_classes = make_run_datasets(config, seed, file_data)
                known = resolve_known_set(set_name, n_classes, config.base_seed)
                split = build_open_split(train, test, known)
                model, trace = train_one_run(config, method, split, seed)
                mavs, table, weibulls, run_metrics = evaluate_run(config, method, model, split)
                run_metrics.seed = seed
                run_metrics.method = method
                run_metrics.set_name = set_name
                elapsed = time.perf_counter() - started
                log.info(
                    "run set=%s method=%s r=%d seed=%d f1=%.4f wall=%.1fs",
                    set_name, method, r, seed, run_metrics.groups["overall"].f1, elapsed,
                )
                artifacts.append(
                    RunArtifact(
                        method=method,
                        set_name=set_name,
                        run_index=r,
                        seed=seed,
                        known_classes=list(split.known_classes),
                        config_lines=lines,
                        mavs=mavs,
                        thresholds=table,
                        weibulls=weibulls,
                        metrics=run_metrics,
                        loss_trace=trace,
                        wall_clock=elapsed,
                    )
                )
    return artifacts

@dataclass
class OpennessLevel:
    c_train: int
    c_test: int
    c_target: int
    openness: float
    method: str
    f1_mean: float
    f1_median: float
    artifacts: list[RunArtifact]


def sweep_openness(config: ExperimentConfig, train_counts, file_data=None) -> list[OpennessLevel]:
    """Re-run the experiment at several known-class counts.

    For each count the known classes are a seeded random selection, the test
    set keeps every class, and the target count is train + 1.  Returns one
    summary per (count, method) with overall-F1 statistics.
    """
    config.validate()
    if config.dataset != "blobs" and file_data is None:
        file_data = load_file_datasets(config)
    probe_seed = config.base_seed
    train, test, n_classes = make_run_datasets(config, probe_seed, file_data)
    levels = []
    for c_train in train_counts:
        if not 0 < c_train < n_classes:
            raise ConfigError(
                f"train count {c_train} must lie in (0, {n_classes}) so c_target fits"
            )
        spec = OpennessSpec(c_train=c_train, c_test=n_classes, c_target=c_train + 1)
        value = openness(spec)
        level_config = replace(config, sets=[f"random{c_train}"])
        artifacts = run_experiment(level_config, file_data=file_data)
        for method in config.methods:
            f1s = np.array(
                [a.metrics.groups["overall"].f1 for a in artifacts if a.method == method]
            )
            levels.append(
                OpennessLevel(
                    c_train=c_train,
                    c_test=n_classes,
                    c_target=c_train + 1,
                    openness=value,
                    method=method,
                    f1_mean=float(f1s.mean()),
                    f1_median=float(np.median(f1s)),
                    artifacts=[a for a in artifacts if a.method == method],
                )
            )
    return levels
