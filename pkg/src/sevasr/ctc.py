"""Connectionist temporal classification, exact and in log space.

The loss marginalizes over every frame-level alignment that collapses
(remove adjacent repeats, then blanks) to the target label sequence. The
blank symbol is always the LAST output class, index V for a vocabulary of
size V. The forward/backward recursions run over the blank-augmented
label sequence of length 2L+1 using max-shifted log-sum-exp throughout,
and the gradient with respect to the raw logits is analytic.

`brute_force_ctc` is an independent oracle that enumerates all (V+1)^T
paths; it deliberately shares no code with the dynamic program.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

NEG_INF = -np.inf


class InfeasibleTranscriptError(Exception):
    """The label sequence cannot be aligned within the available frames.

    Raised instead of returning an infinite loss so trainers can skip
    and count such utterances deterministically.
    """


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def min_frames_required(labels: Sequence[int]) -> int:
    """Feasibility bound: |labels| plus one extra frame per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


@dataclass
class CtcResult:
    neg_log_likelihood: float
    grad_logits: np.ndarray


def _validate_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 2:
        raise ValidationError(f"logits must be T x (V+1) with T >= 1, V >= 1, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValidationError("logits contain non-finite entries")
    return logits


def _validate_labels(labels: Sequence[int], vocab_size: int) -> list[int]:
    labels = [int(t) for t in labels]
    for t in labels:
        if not 0 <= t < vocab_size:
            raise ValidationError(f"label {t} outside vocabulary [0, {vocab_size})")
    return labels


def ctc_loss_and_grad(logits: np.ndarray, labels: Sequence[int]) -> CtcResult:
    """Negative log likelihood of `labels` and its exact gradient.

    logits: T x (V+1) raw scores, blank at index V.
    labels: token ids in [0, V); may be empty (all-blank alignment).

    Raises InfeasibleTranscriptError when T < |labels| + adjacent repeats.
    """
    logits = _validate_logits(logits)
    T, C = logits.shape
    blank = C - 1
    labels = _validate_labels(labels, blank)
    if T < min_frames_required(labels):
        raise InfeasibleTranscriptError(
            f"{len(labels)} labels need at least {min_frames_required(labels)} frames, have {T}"
        )

    # Blank-augmented sequence: blank, l1, blank, l2, ..., blank.
    S = 2 * len(labels) + 1
    aug = np.full(S, blank, dtype=np.int64)
    aug[1::2] = labels

    logp = log_softmax(logits)
    lp_aug = logp[:, aug]  # T x S emission log probs

    # A skip transition s-2 -> s is allowed only onto a label that differs
    # from the label two augmented positions back (blanks never skipped onto).
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp_aug[0, 0]
    if S > 1:
        alpha[0, 1] = lp_aug[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        step = np.concatenate(([NEG_INF], prev[:-1]))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(prev, step), skip) + lp_aug[t]

    if S == 1:
        log_p = alpha[T - 1, 0]
    else:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if not np.isfinite(log_p):
        raise FloatingPointError("CTC forward pass underflowed; logits are too extreme")

    # Backward variables include the emission at their own frame, so the
    # node occupancy at (t, s) is alpha + beta minus one emission term.
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp_aug[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = lp_aug[T - 1, S - 2]
    from_skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        from_skip_ok[:-2] = skip_ok[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.concatenate((nxt[1:], [NEG_INF]))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        skip = np.where(from_skip_ok, skip, NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(nxt, step), skip) + lp_aug[t]

    occupancy = np.full((T, S), NEG_INF)
    reachable = (alpha > NEG_INF) & (beta > NEG_INF)
    occupancy[reachable] = alpha[reachable] + beta[reachable] - lp_aug[reachable]

    # Per-class posterior mass: sum occupancy over augmented positions of
    # each class, then grad = softmax - posterior / p(labels).
    log_q = np.full((T, C), NEG_INF)
    for t in range(T):
        np.logaddexp.at(log_q[t], aug, occupancy[t])
    grad = np.exp(logp) - np.exp(log_q - log_p)

    return CtcResult(float(-log_p), grad)


def collapse_path(path: Sequence[int], blank: int) -> tuple[int, ...]:
    """CTC collapse: drop adjacent repeats first, then blanks."""
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return tuple(out)


def brute_force_ctc(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Label-sequence probability by enumerating every frame path.

    Guards T <= 8 and V <= 4 against combinatorial blowup. Independent of
    the dynamic program on purpose: linear-space products, no recursions.
    """
    logits = _validate_logits(logits)
    T, C = logits.shape
    blank = C - 1
    if T > 8 or blank > 4:
        raise ValidationError(f"brute force limited to T <= 8, V <= 4; got T={T}, V={blank}")
    target = tuple(_validate_labels(labels, blank))

    probs = softmax(logits)
    total = 0.0
    for path in itertools.product(range(C), repeat=T):
        if collapse_path(path, blank) == target:
            p = 1.0
            for t, s in enumerate(path):
                p *= probs[t, s]
            total += p
    return total


def greedy_decode(logits: np.ndarray) -> list[int]:
    """Best-path decoding: per-frame argmax (ties to the lowest index),
    collapse adjacent repeats, drop blanks."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValidationError(f"logits must be 2-D, got shape {logits.shape}")
    blank = logits.shape[1] - 1
    path = np.argmax(logits, axis=1)
    return list(collapse_path(path, blank))


def all_label_sequences(vocab_size: int, max_len: int):
    """Every label sequence over the vocabulary up to max_len (repeats allowed)."""
    for length in range(max_len + 1):
        yield from itertools.product(range(vocab_size), repeat=length)


def check_oracle_equivalence(seed: int, replicates: int = 5, logit_scale: float = 2.0):
    """Compare exp(-loss) against the path-enumeration oracle.

    Sweeps every T <= 5, V <= 3 and random label sequences of length <= 3.
    Returns (max_abs_deviation, n_feasible_cases, elapsed_seconds).
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    max_dev = 0.0
    n_cases = 0
    for T in range(1, 6):
        for V in range(1, 4):
            for L in range(0, 4):
                for _ in range(replicates):
                    logits = rng.normal(0.0, logit_scale, size=(T, V + 1))
                    labels = list(rng.integers(0, V, size=L))
                    oracle = brute_force_ctc(logits, labels)
                    if T < min_frames_required(labels):
                        if oracle != 0.0:
                            raise AssertionError("oracle found paths for an infeasible labeling")
                        continue
                    result = ctc_loss_and_grad(logits, labels)
                    max_dev = max(max_dev, abs(np.exp(-result.neg_log_likelihood) - oracle))
                    n_cases += 1
    return max_dev, n_cases, time.perf_counter() - start


def check_gradients(seed: int, n_cases: int = 50, h: float = 1e-5):
    """Central-difference check of the CTC gradient on random tiny instances.

    Entries with analytic and numeric magnitude below 1e-4 are held to an
    absolute tolerance; the rest to a relative one. Returns
    (max_relative_error, max_small_abs_error, n_cases, elapsed_seconds).
    """
    from .gradcheck import central_difference, gradient_errors

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    max_rel = 0.0
    max_abs = 0.0
    done = 0
    while done < n_cases:
        T = int(rng.integers(1, 6))
        V = int(rng.integers(1, 4))
        L = int(rng.integers(0, 4))
        labels = list(rng.integers(0, V, size=L))
        if T < min_frames_required(labels):
            continue
        logits = rng.normal(0.0, 2.0, size=(T, V + 1))
        analytic = ctc_loss_and_grad(logits, labels).grad_logits
        numeric = central_difference(
            lambda x: ctc_loss_and_grad(x.reshape(logits.shape), labels).neg_log_likelihood,
            logits.ravel(),
            h,
        ).reshape(logits.shape)
        rel, small_abs = gradient_errors(analytic, numeric)
        max_rel = max(max_rel, rel)
        max_abs = max(max_abs, small_abs)
        done += 1
    return max_rel, max_abs, done, time.perf_counter() - start
