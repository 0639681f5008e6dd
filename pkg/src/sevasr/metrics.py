"""Edit-distance metrics, severity bucketing, and scoring tables.

Word and character error rates are pooled: total edits divided by total
reference length across all scored pairs, reported in percent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError


class SeverityLevel(IntEnum):
    """Speaker impairment severity, totally ordered VL < L < M < H."""

    VL = 0
    L = 1
    M = 2
    H = 3

    @classmethod
    def parse(cls, value) -> "SeverityLevel":
        if isinstance(value, SeverityLevel):
            return value
        if isinstance(value, str) and value in cls.__members__:
            return cls[value]
        raise ValidationError(f"unknown severity tag: {value!r}")


# CER percentages at which a speaker moves up one severity level.
SEVERITY_CER_THRESHOLDS = (10.0, 20.0, 40.0)


@dataclass(frozen=True)
class EditStats:
    """Counts from a minimal-cost alignment of hypothesis against reference."""

    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def error_rate(self) -> float:
        """Error rate in percent. Undefined for an empty reference."""
        if self.reference_length <= 0:
            raise ValidationError("error rate undefined for empty reference")
        return 100.0 * self.distance / self.reference_length

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )


def edit_distance(reference: Sequence, hypothesis: Sequence) -> EditStats:
    """Levenshtein alignment under unit costs with a deterministic backtrace.

    When several minimal alignments exist the backtrace prefers
    substitution over deletion over insertion, so the S/D/I split is
    reproducible even though only S+D+I is unique.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)

    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row = d[i]
        prev = d[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ri == hyp[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(subs, dels, ins, n)


def pooled_stats(pairs: Iterable[tuple[Sequence, Sequence]]) -> EditStats:
    total = EditStats(0, 0, 0, 0)
    for ref, hyp in pairs:
        total = total + edit_distance(ref, hyp)
    return total


def wer(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """Pooled word error rate in percent over (reference, hypothesis) pairs."""
    total = pooled_stats(pairs)
    if total.reference_length == 0:
        raise ValidationError("WER undefined: total reference length is zero")
    return total.error_rate


def transcript_characters(tokens: Sequence[int], vocabulary: Sequence[str]) -> list[str]:
    """Spell out a token-id sequence as characters, single-space separated.

    Spaces count as characters, so CER reflects word boundaries too.
    """
    words = []
    for t in tokens:
        if not 0 <= t < len(vocabulary):
            raise ValidationError(f"token id {t} outside vocabulary of size {len(vocabulary)}")
        words.append(vocabulary[t])
    return list(" ".join(words))


def speaker_cer(
    pairs: Iterable[tuple[Sequence[int], Sequence[int]]],
    vocabulary: Sequence[str],
    pooled: bool = True,
) -> float:
    """Character error rate in percent over one speaker's utterances.

    Default pools edits across utterances (total edits / total reference
    characters); ``pooled=False`` averages per-utterance rates instead.
    """
    char_pairs = [
        (transcript_characters(ref, vocabulary), transcript_characters(hyp, vocabulary))
        for ref, hyp in pairs
    ]
    if not char_pairs:
        raise ValidationError("speaker CER undefined: no utterances")
    if pooled:
        total = pooled_stats(char_pairs)
        if total.reference_length == 0:
            raise ValidationError("speaker CER undefined: empty references")
        return total.error_rate
    return sum(edit_distance(r, h).error_rate for r, h in char_pairs) / len(char_pairs)


def severity_from_cer(cer: float) -> SeverityLevel:
    """Bucket a CER percentage into a severity level.

    Intervals are half-open with boundaries belonging to the higher
    severity side: [0,10) VL, [10,20) L, [20,40) M, [40,inf) H.
    """
    if cer < 0:
        raise ValidationError(f"CER must be non-negative, got {cer}")
    lo, mid, hi = SEVERITY_CER_THRESHOLDS
    if cer < lo:
        return SeverityLevel.VL
    if cer < mid:
        return SeverityLevel.L
    if cer < hi:
        return SeverityLevel.M
    return SeverityLevel.H


def relative_improvement(baseline_wer: float, new_wer: float) -> float:
    """Relative WER improvement in percent: 100 * (baseline - new) / baseline."""
    if baseline_wer <= 0:
        raise ValidationError(f"baseline WER must be positive, got {baseline_wer}")
    return 100.0 * (baseline_wer - new_wer) / baseline_wer


@dataclass(frozen=True)
class GroupScore:
    """One scored group of utterances (a severity level, a cluster, or All)."""

    group: str
    wer: float | None
    cer: float | None
    n_utterances: int
    n_speakers: int


def format_score_table(rows: Sequence[GroupScore]) -> str:
    """Human-readable scoring table, one row per group."""
    header = ("group", "WER", "CER", "utts", "speakers")
    cells = [header]
    for r in rows:
        cells.append(
            (
                r.group,
                "-" if r.wer is None else f"{r.wer:.2f}",
                "-" if r.cer is None else f"{r.cer:.2f}",
                str(r.n_utterances),
                str(r.n_speakers),
            )
        )
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = []
    for row in cells:
        lines.append("  ".join(val.rjust(w) if i else val.ljust(w) for i, (val, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


def score_table_csv(rows: Sequence[GroupScore]) -> str:
    """Machine-readable variant of the scoring table (same columns)."""
    lines = ["group,wer,cer,n_utterances,n_speakers"]
    for r in rows:
        wer_s = "" if r.wer is None else repr(r.wer)
        cer_s = "" if r.cer is None else repr(r.cer)
        lines.append(f"{r.group},{wer_s},{cer_s},{r.n_utterances},{r.n_speakers}")
    return "\n".join(lines) + "\n"
