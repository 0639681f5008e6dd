"""Toy acoustic encoder with a pooled severity head.

Frames are stacked with `context_width` neighbors (zero-padded edges),
pushed through tanh hidden layers, then projected two ways: per frame to
V+1 transcription logits (blank last) and, after pooling over time, to 4
severity logits. Forward and backward are exact and all math is float64,
so finite-difference checks hold tightly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ValidationError

SEVERITY_CLASSES = 4
_CHECKPOINT_MAGIC = "sevasr checkpoint v1"


class PoolingMode(Enum):
    """How the severity head summarizes the hidden sequence over time."""

    FIRST_TOKEN = "first-token"
    MAX = "max"
    MEAN = "mean"

    @classmethod
    def parse(cls, value) -> "PoolingMode":
        if isinstance(value, PoolingMode):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise ValidationError(f"unknown pooling mode: {value!r}")


def pool(hidden: np.ndarray, mode: PoolingMode) -> np.ndarray:
    """Reduce a T x H hidden sequence to an H vector."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[0] < 1:
        raise ValidationError(f"hidden sequence must be non-empty T x H, got shape {hidden.shape}")
    mode = PoolingMode.parse(mode)
    if mode is PoolingMode.FIRST_TOKEN:
        return hidden[0].copy()
    if mode is PoolingMode.MAX:
        return hidden.max(axis=0)
    return hidden.mean(axis=0)


@dataclass
class ForwardCache:
    """Activations needed for an exact backward pass."""

    layer_inputs: list[np.ndarray]  # input to each affine layer (stacked features first)
    hiddens: list[np.ndarray]  # tanh outputs per hidden layer
    pooled: np.ndarray
    max_indices: np.ndarray | None  # per-dim argmax frames, MAX pooling only
    severity_raw: np.ndarray  # pre-sigmoid severity scores
    n_frames: int


def init_params(
    feature_dim: int,
    context_width: int,
    hidden_dims: tuple[int, ...],
    vocab_size: int,
    seed: int,
    scale: float = 1.0,
) -> dict[str, np.ndarray]:
    """Seeded uniform(-scale/sqrt(fan_in), +scale/sqrt(fan_in)) weights, zero biases."""
    if scale < 0:
        raise ValidationError(f"init scale must be >= 0, got {scale}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    in_dim = feature_dim * context_width
    for i, h in enumerate(hidden_dims):
        bound = scale / np.sqrt(in_dim)
        params[f"hidden{i}.weight"] = rng.uniform(-bound, bound, size=(in_dim, h))
        params[f"hidden{i}.bias"] = np.zeros(h)
        in_dim = h
    bound = scale / np.sqrt(in_dim)
    params["ctc.weight"] = rng.uniform(-bound, bound, size=(in_dim, vocab_size + 1))
    params["ctc.bias"] = np.zeros(vocab_size + 1)
    params["severity.weight"] = rng.uniform(-bound, bound, size=(in_dim, SEVERITY_CLASSES))
    params["severity.bias"] = np.zeros(SEVERITY_CLASSES)
    return params


def stack_context(features: np.ndarray, context_width: int) -> np.ndarray:
    """Concatenate each frame with its neighbors, zero-padded at the edges."""
    half = context_width // 2
    padded = np.pad(features, ((half, half), (0, 0)))
    t = features.shape[0]
    return np.hstack([padded[off : off + t] for off in range(context_width)])


class AcousticModel:
    """Per-frame transcription logits plus a pooled severity classifier."""

    def __init__(
        self,
        feature_dim: int,
        vocab_size: int,
        context_width: int = 3,
        hidden_dims: tuple[int, ...] = (32, 32),
        pooling: PoolingMode | str = PoolingMode.FIRST_TOKEN,
        sigmoid_head: bool = False,
        seed: int = 0,
        init_scale: float = 1.0,
        params: dict[str, np.ndarray] | None = None,
    ):
        if context_width < 1 or context_width % 2 == 0:
            raise ValidationError(f"context_width must be odd and >= 1, got {context_width}")
        if vocab_size < 1 or feature_dim < 1 or any(h < 1 for h in hidden_dims):
            raise ValidationError("feature_dim, vocab_size, and hidden dims must be >= 1")
        self.feature_dim = int(feature_dim)
        self.vocab_size = int(vocab_size)
        self.context_width = int(context_width)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.pooling = PoolingMode.parse(pooling)
        self.sigmoid_head = bool(sigmoid_head)
        self.seed = int(seed)
        self.params = params if params is not None else init_params(
            feature_dim, context_width, self.hidden_dims, vocab_size, seed, init_scale
        )
        self._check_param_shapes()

    @property
    def blank(self) -> int:
        return self.vocab_size

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.hidden_dims)):
            names += [f"hidden{i}.weight", f"hidden{i}.bias"]
        names += ["ctc.weight", "ctc.bias", "severity.weight", "severity.bias"]
        return names

    def _check_param_shapes(self) -> None:
        in_dim = self.feature_dim * self.context_width
        expected = {}
        for i, h in enumerate(self.hidden_dims):
            expected[f"hidden{i}.weight"] = (in_dim, h)
            expected[f"hidden{i}.bias"] = (h,)
            in_dim = h
        expected["ctc.weight"] = (in_dim, self.vocab_size + 1)
        expected["ctc.bias"] = (self.vocab_size + 1,)
        expected["severity.weight"] = (in_dim, SEVERITY_CLASSES)
        expected["severity.bias"] = (SEVERITY_CLASSES,)
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValidationError(f"parameter {name} missing or not of shape {shape}")
        for name, value in self.params.items():
            if name not in expected:
                raise ValidationError(f"unexpected parameter {name}")
            if not np.isfinite(value).all():
                raise ValidationError(f"parameter {name} has non-finite entries")

    def clone(self) -> "AcousticModel":
        return AcousticModel(
            feature_dim=self.feature_dim,
            vocab_size=self.vocab_size,
            context_width=self.context_width,
            hidden_dims=self.hidden_dims,
            pooling=self.pooling,
            sigmoid_head=self.sigmoid_head,
            seed=self.seed,
            params={k: v.copy() for k, v in self.params.items()},
        )

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
        """(T x (V+1) logits, 4-vector severity logits, cache for backward)."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ValidationError(
                f"features must be T x {self.feature_dim}, got shape {features.shape}"
            )
        if features.shape[0] < 1:
            raise ValidationError("features must contain at least one frame")

        x = stack_context(features, self.context_width)
        layer_inputs = []
        hiddens = []
        for i in range(len(self.hidden_dims)):
            layer_inputs.append(x)
            x = np.tanh(x @ self.params[f"hidden{i}.weight"] + self.params[f"hidden{i}.bias"])
            hiddens.append(x)
        last = x
        logits = last @ self.params["ctc.weight"] + self.params["ctc.bias"]

        max_indices = None
        if self.pooling is PoolingMode.MAX:
            max_indices = last.argmax(axis=0)  # earliest frame wins ties
        pooled = pool(last, self.pooling)
        severity_raw = pooled @ self.params["severity.weight"] + self.params["severity.bias"]
        severity_logits = _sigmoid(severity_raw) if self.sigmoid_head else severity_raw

        cache = ForwardCache(
            layer_inputs=layer_inputs,
            hiddens=hiddens,
            pooled=pooled,
            max_indices=max_indices,
            severity_raw=severity_raw,
            n_frames=features.shape[0],
        )
        return logits, severity_logits, cache

    def backward(
        self,
        cache: ForwardCache,
        grad_logits: np.ndarray,
        grad_severity_logits: np.ndarray | None = None,
    ) -> dict[str, np.ndarray]:
        """Exact parameter gradients for upstream grads on both heads.

        MAX pooling routes the pooled gradient only to the recorded argmax
        frames; MEAN spreads 1/T; FIRST_TOKEN hits frame 0.
        """
        last = cache.hiddens[-1]
        t, h = last.shape
        grad_logits = np.asarray(grad_logits, dtype=np.float64)
        if grad_logits.shape != (t, self.vocab_size + 1):
            raise ValidationError(
                f"grad_logits shape {grad_logits.shape} does not match cache ({t}, {self.vocab_size + 1})"
            )
        if grad_severity_logits is None:
            grad_severity_logits = np.zeros(SEVERITY_CLASSES)
        grad_severity_logits = np.asarray(grad_severity_logits, dtype=np.float64)
        if grad_severity_logits.shape != (SEVERITY_CLASSES,):
            raise ValidationError(f"grad_severity_logits must have shape ({SEVERITY_CLASSES},)")

        grads: dict[str, np.ndarray] = {}
        if self.sigmoid_head:
            sig = _sigmoid(cache.severity_raw)
            grad_sev_raw = grad_severity_logits * sig * (1.0 - sig)
        else:
            grad_sev_raw = grad_severity_logits
        grads["severity.weight"] = np.outer(cache.pooled, grad_sev_raw)
        grads["severity.bias"] = grad_sev_raw.copy()

        grad_pooled = self.params["severity.weight"] @ grad_sev_raw
        grad_last = grad_logits @ self.params["ctc.weight"].T
        if self.pooling is PoolingMode.FIRST_TOKEN:
            grad_last[0] += grad_pooled
        elif self.pooling is PoolingMode.MEAN:
            grad_last += grad_pooled / t
        else:
            grad_last[cache.max_indices, np.arange(h)] += grad_pooled

        grads["ctc.weight"] = last.T @ grad_logits
        grads["ctc.bias"] = grad_logits.sum(axis=0)

        grad_h = grad_last
        for i in range(len(self.hidden_dims) - 1, -1, -1):
            grad_pre = grad_h * (1.0 - cache.hiddens[i] ** 2)
            grads[f"hidden{i}.weight"] = cache.layer_inputs[i].T @ grad_pre
            grads[f"hidden{i}.bias"] = grad_pre.sum(axis=0)
            grad_h = grad_pre @ self.params[f"hidden{i}.weight"].T
        return grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Checkpoints: text header, float64 parameters in declaration order, then an
# 8-byte blake2b checksum of everything before it.

def save_checkpoint(model: AcousticModel, path) -> None:
    header = "\n".join(
        [
            _CHECKPOINT_MAGIC,
            f"feature_dim = {model.feature_dim}",
            f"context_width = {model.context_width}",
            f"hidden_dims = {','.join(str(h) for h in model.hidden_dims)}",
            f"vocab_size = {model.vocab_size}",
            f"pooling = {model.pooling.value}",
            f"sigmoid_head = {int(model.sigmoid_head)}",
            f"seed = {model.seed}",
            "params",
        ]
    ) + "\n"
    blob = header.encode("utf-8")
    for name in model.param_names():
        blob += model.params[name].astype("<f8").tobytes()
    digest = hashlib.blake2b(blob, digest_size=8).digest()
    Path(path).write_bytes(blob + digest)


def load_checkpoint(path) -> AcousticModel:
    raw = Path(path).read_bytes()
    marker = b"\nparams\n"
    split_at = raw.find(marker)
    if split_at < 0 or len(raw) < 8:
        raise ValidationError(f"not a checkpoint file: {path}")
    body, digest = raw[:-8], raw[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise ValidationError(f"checkpoint {path} failed its checksum")

    header_lines = raw[: split_at + 1].decode("utf-8").splitlines()
    if header_lines[0] != _CHECKPOINT_MAGIC:
        raise ValidationError(f"checkpoint {path} has unknown magic {header_lines[0]!r}")
    fields = {}
    for line in header_lines[1:]:
        key, _, value = line.partition(" = ")
        fields[key.strip()] = value.strip()
    try:
        feature_dim = int(fields["feature_dim"])
        context_width = int(fields["context_width"])
        hidden_dims = tuple(int(h) for h in fields["hidden_dims"].split(","))
        vocab_size = int(fields["vocab_size"])
        pooling = PoolingMode.parse(fields["pooling"])
        sigmoid_head = bool(int(fields["sigmoid_head"]))
        seed = int(fields["seed"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"checkpoint {path} has a bad header: {exc}") from exc

    shapes = []
    in_dim = feature_dim * context_width
    for h in hidden_dims:
        shapes += [(in_dim, h), (h,)]
        in_dim = h
    shapes += [(in_dim, vocab_size + 1), (vocab_size + 1,), (in_dim, SEVERITY_CLASSES), (SEVERITY_CLASSES,)]
    expected = sum(int(np.prod(s)) for s in shapes)
    data = np.frombuffer(body[split_at + len(marker):], dtype="<f8")
    if data.size != expected:
        raise ValidationError(f"checkpoint {path} holds {data.size} parameters, header implies {expected}")

    names = []
    for i in range(len(hidden_dims)):
        names += [f"hidden{i}.weight", f"hidden{i}.bias"]
    names += ["ctc.weight", "ctc.bias", "severity.weight", "severity.bias"]
    params = {}
    offset = 0
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape))
        params[name] = data[offset : offset + size].reshape(shape).copy()
        offset += size
    return AcousticModel(
        feature_dim=feature_dim,
        vocab_size=vocab_size,
        context_width=context_width,
        hidden_dims=hidden_dims,
        pooling=pooling,
        sigmoid_head=sigmoid_head,
        seed=seed,
        params=params,
    )
