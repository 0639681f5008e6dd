"""Loss composition and mini-batch gradient descent.

Three strategies share one loop:

* plain: mean CTC loss over the batch.
* weighted: per-cluster mean CTC losses scaled by cluster weights and
  summed, so a cluster's weight is interpretable regardless of how many
  of its utterances land in a batch.
* mtl: per utterance, w1 * ctc + w2 * severity cross-entropy, averaged
  over the batch.

The optimizer is plain gradient descent with a fixed learning rate.
Shuffling, augmentation, and gradient accumulation order are all derived
from the config seed, so identical configs produce bit-identical
checkpoints and histories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import ctc as ctc_mod
from .clustering import ClusterModel, assign_cluster
from .corpus import CorpusManifest, Split, filter_split
from .errors import ConfigError, ValidationError
from .metrics import SeverityLevel, wer
from .model import AcousticModel, PoolingMode

logger = logging.getLogger(__name__)

# Trainers build their model with these when the caller does not supply one.
DEFAULT_CONTEXT_WIDTH = 3
DEFAULT_HIDDEN_DIMS = (32, 32)

# Stream tags for per-purpose child RNGs.
_TAG_SHUFFLE, _TAG_AUGMENT = 11, 12

MEAN_WITHIN_CLUSTER = "mean"
SUM_WITHIN_CLUSTER = "sum"


class Strategy(Enum):
    PLAIN = "plain"
    WEIGHTED = "weighted"
    MTL = "mtl"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise ValidationError(f"unknown strategy: {value!r}")


@dataclass(frozen=True)
class SpecAugmentConfig:
    """Time/frequency masking knobs; mask widths are drawn uniform-inclusive."""

    n_time_masks: int = 0
    max_time_mask_frames: int = 0
    n_freq_masks: int = 0
    max_freq_mask_dims: int = 0
    mask_value: float = 0.0

    def validate(self) -> None:
        if min(self.n_time_masks, self.max_time_mask_frames, self.n_freq_masks, self.max_freq_mask_dims) < 0:
            raise ValidationError("SpecAugment counts and widths must be >= 0")


def spec_augment(features: np.ndarray, cfg: SpecAugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Masked copy of features: time masks first, then frequency masks.

    Each mask draws its width, then its start. The input is never modified.
    """
    cfg.validate()
    feats = np.array(features, copy=True)
    t, f = feats.shape
    if cfg.max_time_mask_frames > t:
        raise ValidationError(f"max_time_mask_frames {cfg.max_time_mask_frames} exceeds T={t}")
    if cfg.max_freq_mask_dims > f:
        raise ValidationError(f"max_freq_mask_dims {cfg.max_freq_mask_dims} exceeds F={f}")
    for _ in range(cfg.n_time_masks):
        width = int(rng.integers(0, cfg.max_time_mask_frames + 1))
        start = int(rng.integers(0, t - width + 1))
        feats[start : start + width, :] = cfg.mask_value
    for _ in range(cfg.n_freq_masks):
        width = int(rng.integers(0, cfg.max_freq_mask_dims + 1))
        start = int(rng.integers(0, f - width + 1))
        feats[:, start : start + width] = cfg.mask_value
    return feats


@dataclass(frozen=True)
class TrainConfig:
    strategy: Strategy = Strategy.PLAIN
    cluster_weights: dict[str, float] | None = None
    mtl_weights: tuple[float, float] = (0.5, 0.5)
    pooling: PoolingMode = PoolingMode.FIRST_TOKEN
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 8
    augment: SpecAugmentConfig | None = None
    augment_oversample: dict[str, int] | None = None
    severity_filter: frozenset[SeverityLevel] | None = None
    seed: int = 0
    cluster_loss_reduction: str = MEAN_WITHIN_CLUSTER

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.strategy is Strategy.WEIGHTED:
            if not self.cluster_weights:
                raise ValidationError("weighted strategy needs cluster_weights")
            if any(w < 0 for w in self.cluster_weights.values()):
                raise ValidationError("cluster weights must be non-negative")
            if not any(w > 0 for w in self.cluster_weights.values()):
                raise ValidationError("at least one cluster weight must be positive")
        if self.strategy is Strategy.MTL:
            w1, w2 = self.mtl_weights
            if w1 < 0 or w2 < 0 or w1 + w2 <= 0:
                raise ValidationError(f"mtl_weights must be non-negative with a positive sum, got {self.mtl_weights}")
        if self.augment_oversample and any(f < 1 for f in self.augment_oversample.values()):
            raise ValidationError("oversample factors must be integers >= 1")
        if self.cluster_loss_reduction not in (MEAN_WITHIN_CLUSTER, SUM_WITHIN_CLUSTER):
            raise ValidationError(f"cluster_loss_reduction must be mean or sum, got {self.cluster_loss_reduction!r}")
        if self.augment is not None:
            self.augment.validate()


@dataclass
class TrainHistory:
    """Per-epoch curves; severity accuracy stays None outside MTL."""

    train_loss: list[float] = field(default_factory=list)
    dev_wer: list[float] = field(default_factory=list)
    dev_severity_acc: list[float | None] = field(default_factory=list)


def history_csv(history: TrainHistory) -> str:
    lines = ["epoch,train_loss,dev_wer,dev_severity_acc"]
    for i, (loss, dwer, acc) in enumerate(
        zip(history.train_loss, history.dev_wer, history.dev_severity_acc), start=1
    ):
        acc_s = "" if acc is None else repr(acc)
        dwer_s = "" if math.isnan(dwer) else repr(dwer)
        lines.append(f"{i},{loss!r},{dwer_s},{acc_s}")
    return "\n".join(lines) + "\n"


def softmax_cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """(loss, gradient) of -log softmax(logits)[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    logp = ctc_mod.log_softmax(logits)
    grad = np.exp(logp)
    grad[target] -= 1.0
    return float(-logp[target]), grad


def weighted_ctc_batch_loss(
    per_utterance: Sequence[tuple[ctc_mod.CtcResult, str]],
    weights: Mapping[str, float],
    reduction: str = MEAN_WITHIN_CLUSTER,
) -> tuple[float, list[float]]:
    """Cluster-weighted batch loss and per-utterance gradient multipliers.

    With the default mean-within-cluster reduction the total is
    sum_k w_k * mean(loss of cluster k in this batch) and each utterance's
    multiplier is w_k / count_k. The sum reduction skips the normalization.
    """
    if reduction not in (MEAN_WITHIN_CLUSTER, SUM_WITHIN_CLUSTER):
        raise ValidationError(f"unknown reduction {reduction!r}")
    counts: dict[str, int] = {}
    for _, key in per_utterance:
        if key not in weights:
            raise ValidationError(f"no weight configured for cluster {key!r}")
        counts[key] = counts.get(key, 0) + 1

    total = 0.0
    for key in sorted(counts):
        cluster_sum = sum(r.neg_log_likelihood for r, k in per_utterance if k == key)
        if reduction == MEAN_WITHIN_CLUSTER:
            total += weights[key] * (cluster_sum / counts[key])
        else:
            total += weights[key] * cluster_sum
    multipliers = [
        weights[key] / counts[key] if reduction == MEAN_WITHIN_CLUSTER else weights[key]
        for _, key in per_utterance
    ]
    return total, multipliers


def mtl_loss(
    ctc_nll: float,
    severity_logits: np.ndarray,
    true_severity: SeverityLevel,
    w1: float,
    w2: float,
) -> tuple[float, float, np.ndarray]:
    """(total, ctc gradient scale, severity-logits gradient) for Eq-style
    interpolation total = w1 * ctc + w2 * cross_entropy."""
    if not np.isfinite(ctc_nll) or not np.isfinite(severity_logits).all():
        raise ValidationError("mtl_loss requires finite inputs")
    ce, ce_grad = softmax_cross_entropy(severity_logits, int(true_severity))
    total = w1 * ctc_nll + w2 * ce
    return total, w1, w2 * ce_grad


def _speaker_cluster_keys(
    speakers: Sequence, cluster_model: ClusterModel | None, need_reason: str
) -> dict[str, str]:
    """Cluster key per speaker: cluster index when a model is given, else
    the severity tag."""
    keys: dict[str, str] = {}
    for s in speakers:
        if cluster_model is not None:
            c = cluster_model.assignments.get(s.speaker_id)
            if c is None:
                if s.embedding is None:
                    raise ValidationError(f"{need_reason}: no cluster assignment or embedding for {s.speaker_id}")
                c = assign_cluster(cluster_model, s.embedding)
            keys[s.speaker_id] = str(c)
        else:
            if s.severity is None:
                raise ValidationError(f"{need_reason}: speaker {s.speaker_id} has no severity label")
            keys[s.speaker_id] = s.severity.name
    return keys


def _decode_pairs(model: AcousticModel, view: CorpusManifest, features: Mapping[str, np.ndarray]):
    pairs = []
    for uid in sorted(view.utterances):
        rec = view.utterances[uid]
        logits, _, _ = model.forward(features[uid])
        pairs.append((list(rec.transcript), ctc_mod.greedy_decode(logits)))
    return pairs


def train(
    manifest: CorpusManifest,
    features: Mapping[str, np.ndarray],
    model: AcousticModel,
    config: TrainConfig,
    cluster_model: ClusterModel | None = None,
) -> tuple[AcousticModel, TrainHistory]:
    """Fine-tune a copy of `model` on the manifest's Train split.

    The manifest may contain every split; training uses Train (after the
    config's severity filter) and the per-epoch history decodes Dev.
    Utterances whose transcript cannot be aligned in their frames are
    skipped with a logged count; more than 10% of them aborts the run.
    """
    config.validate()
    train_view = filter_split(manifest, Split.TRAIN, severity_subset=config.severity_filter)
    dev_view = filter_split(manifest, Split.DEV)
    if not train_view.utterances:
        raise ValidationError("training set is empty after filtering")

    speakers = list(train_view.speakers.values())
    cluster_keys: dict[str, str] = {}
    if config.strategy is Strategy.WEIGHTED or config.augment_oversample:
        cluster_keys = _speaker_cluster_keys(
            speakers, cluster_model, f"{config.strategy.value} training"
        )
    if config.strategy is Strategy.MTL:
        unlabeled = sorted(s.speaker_id for s in speakers if s.severity is None)
        if unlabeled:
            raise ValidationError(f"mtl training: speakers without severity labels: {unlabeled}")

    feasible = []
    skipped = 0
    for uid in sorted(train_view.utterances):
        rec = train_view.utterances[uid]
        if rec.duration_frames < ctc_mod.min_frames_required(rec.transcript):
            skipped += 1
        else:
            feasible.append(uid)
    if skipped:
        logger.warning("skipping %d infeasible training utterances (of %d)", skipped, len(train_view.utterances))
    if skipped > 0.10 * len(train_view.utterances):
        raise ValidationError(
            f"{skipped} of {len(train_view.utterances)} training utterances are infeasible (>10%); "
            "the corpus and model configuration are mismatched"
        )

    # Canonically ordered work list; oversampling replicates utterances so
    # each replica draws its own augmentation masks.
    entries: list[tuple[str, int]] = []
    for uid in feasible:
        key = cluster_keys.get(train_view.utterances[uid].speaker_id)
        factor = 1
        if config.augment_oversample and key is not None:
            factor = config.augment_oversample.get(key, 1)
        entries.extend((uid, r) for r in range(factor))
    entry_index = {e: i for i, e in enumerate(entries)}

    trained = model.clone()
    trained.pooling = config.pooling  # the config owns the severity pooling placement
    history = TrainHistory()

    w1, w2 = config.mtl_weights
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _TAG_SHUFFLE, epoch]))
        order = [entries[i] for i in shuffle_rng.permutation(len(entries))]
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = sorted(order[start : start + config.batch_size], key=lambda e: entry_index[e])
            members = []
            for uid, replica in batch:
                rec = train_view.utterances[uid]
                feats = features[uid]
                if config.augment is not None:
                    aug_rng = np.random.default_rng(
                        np.random.SeedSequence([config.seed, _TAG_AUGMENT, epoch, entry_index[(uid, replica)]])
                    )
                    feats = spec_augment(feats, config.augment, aug_rng)
                logits, severity_logits, cache = trained.forward(feats)
                result = ctc_mod.ctc_loss_and_grad(logits, rec.transcript)
                members.append((uid, rec, result, severity_logits, cache))

            if config.strategy is Strategy.WEIGHTED:
                per_utt = [(result, cluster_keys[rec.speaker_id]) for _, rec, result, _, _ in members]
                batch_loss, multipliers = weighted_ctc_batch_loss(
                    per_utt, config.cluster_weights, config.cluster_loss_reduction
                )
                severity_grads = [None] * len(members)
            elif config.strategy is Strategy.MTL:
                multipliers, severity_grads, totals = [], [], []
                for _, rec, result, severity_logits, _ in members:
                    severity = train_view.speakers[rec.speaker_id].severity
                    total, ctc_scale, sev_grad = mtl_loss(
                        result.neg_log_likelihood, severity_logits, severity, w1, w2
                    )
                    totals.append(total)
                    multipliers.append(ctc_scale / len(members))
                    severity_grads.append(sev_grad / len(members))
                batch_loss = sum(totals) / len(members)
            else:
                batch_loss = sum(r.neg_log_likelihood for _, _, r, _, _ in members) / len(members)
                multipliers = [1.0 / len(members)] * len(members)
                severity_grads = [None] * len(members)

            grad_total: dict[str, np.ndarray] = {}
            for (uid, rec, result, severity_logits, cache), mult, sev_grad in zip(
                members, multipliers, severity_grads
            ):
                grads = trained.backward(cache, result.grad_logits * mult, sev_grad)
                for name, g in grads.items():
                    if name in grad_total:
                        grad_total[name] += g
                    else:
                        grad_total[name] = g
            for name in trained.param_names():
                trained.params[name] -= config.learning_rate * grad_total[name]
            batch_losses.append(batch_loss)

        history.train_loss.append(sum(batch_losses) / len(batch_losses))
        if dev_view.utterances:
            history.dev_wer.append(wer(_decode_pairs(trained, dev_view, features)))
        else:
            history.dev_wer.append(float("nan"))
        history.dev_severity_acc.append(
            _dev_severity_accuracy(trained, dev_view, features) if config.strategy is Strategy.MTL else None
        )
        logger.info(
            "epoch %d/%d: train_loss=%.4f dev_wer=%.2f",
            epoch + 1,
            config.epochs,
            history.train_loss[-1],
            history.dev_wer[-1],
        )
    return trained, history


def _dev_severity_accuracy(
    model: AcousticModel, dev_view: CorpusManifest, features: Mapping[str, np.ndarray]
) -> float | None:
    """Per-utterance severity accuracy over labeled dev speakers."""
    hits = 0
    total = 0
    for uid in sorted(dev_view.utterances):
        rec = dev_view.utterances[uid]
        severity = dev_view.speakers[rec.speaker_id].severity
        if severity is None:
            continue
        _, severity_logits, _ = model.forward(features[uid])
        hits += int(np.argmax(severity_logits)) == int(severity)
        total += 1
    return hits / total if total else None


# ---------------------------------------------------------------------------
# Train config files: flat `key = value` lines, TrainConfig field names.

def _parse_mapping(value: str, cast, what: str) -> dict:
    out = {}
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        key, sep, val = item.partition(":")
        if not sep:
            raise ConfigError(f"{what} entries must look like key:value, got {item!r}")
        try:
            out[key.strip()] = cast(val.strip())
        except ValueError as exc:
            raise ConfigError(f"bad {what} entry {item!r}: {exc}") from exc
    if not out:
        raise ConfigError(f"{what} must not be empty")
    return out


def parse_train_config(text: str) -> TrainConfig:
    """Parse `key = value` lines into a TrainConfig; unknown keys are errors.

    Augmentation fields nest under an `augment.` prefix, e.g.
    `augment.n_time_masks = 2`.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected `key = value`, got {raw!r}")
        values[key.strip()] = value.strip()

    kwargs: dict = {}
    augment_fields: dict[str, str] = {}
    for key, value in values.items():
        try:
            if key == "strategy":
                kwargs["strategy"] = Strategy.parse(value)
            elif key == "cluster_weights":
                kwargs["cluster_weights"] = _parse_mapping(value, float, "cluster_weights")
            elif key == "mtl_weights":
                parts = [float(x) for x in value.split(",")]
                if len(parts) != 2:
                    raise ConfigError(f"mtl_weights needs two values, got {value!r}")
                kwargs["mtl_weights"] = (parts[0], parts[1])
            elif key == "pooling":
                kwargs["pooling"] = PoolingMode.parse(value)
            elif key == "learning_rate":
                kwargs["learning_rate"] = float(value)
            elif key == "epochs":
                kwargs["epochs"] = int(value)
            elif key == "batch_size":
                kwargs["batch_size"] = int(value)
            elif key == "severity_filter":
                kwargs["severity_filter"] = frozenset(SeverityLevel.parse(s.strip()) for s in value.split(","))
            elif key == "seed":
                kwargs["seed"] = int(value)
            elif key == "cluster_loss_reduction":
                kwargs["cluster_loss_reduction"] = value
            elif key == "augment_oversample":
                kwargs["augment_oversample"] = _parse_mapping(value, int, "augment_oversample")
            elif key.startswith("augment."):
                augment_fields[key[len("augment."):]] = value
            else:
                raise ConfigError(f"unknown config key: {key!r}")
        except (ValueError, ValidationError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc

    if augment_fields:
        allowed = {"n_time_masks", "max_time_mask_frames", "n_freq_masks", "max_freq_mask_dims", "mask_value"}
        unknown = sorted(set(augment_fields) - allowed)
        if unknown:
            raise ConfigError(f"unknown augment config keys: {unknown}")
        cast = {"mask_value": float}
        kwargs["augment"] = SpecAugmentConfig(
            **{k: cast.get(k, int)(v) for k, v in augment_fields.items()}
        )

    config = TrainConfig(**kwargs)
    config.validate()
    return config


def render_train_config(config: TrainConfig) -> str:
    """TrainConfig back to the flat file format (parse/render round-trips)."""
    lines = [
        f"strategy = {config.strategy.value}",
        f"mtl_weights = {config.mtl_weights[0]},{config.mtl_weights[1]}",
        f"pooling = {config.pooling.value}",
        f"learning_rate = {config.learning_rate!r}",
        f"epochs = {config.epochs}",
        f"batch_size = {config.batch_size}",
        f"seed = {config.seed}",
        f"cluster_loss_reduction = {config.cluster_loss_reduction}",
    ]
    if config.cluster_weights is not None:
        pairs = ",".join(f"{k}:{v!r}" for k, v in sorted(config.cluster_weights.items()))
        lines.append(f"cluster_weights = {pairs}")
    if config.severity_filter is not None:
        lines.append("severity_filter = " + ",".join(s.name for s in sorted(config.severity_filter)))
    if config.augment_oversample is not None:
        pairs = ",".join(f"{k}:{v}" for k, v in sorted(config.augment_oversample.items()))
        lines.append(f"augment_oversample = {pairs}")
    if config.augment is not None:
        a = config.augment
        lines += [
            f"augment.n_time_masks = {a.n_time_masks}",
            f"augment.max_time_mask_frames = {a.max_time_mask_frames}",
            f"augment.n_freq_masks = {a.n_freq_masks}",
            f"augment.max_freq_mask_dims = {a.max_freq_mask_dims}",
            f"augment.mask_value = {a.mask_value!r}",
        ]
    return "\n".join(lines) + "\n"
