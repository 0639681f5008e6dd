"""Corpus data model, manifest serialization, and seeded synthetic corpora.

The synthetic generator stands in for restricted clinical speech data.
Every vocabulary token owns a fixed prototype feature block; an utterance
is the concatenation of its tokens' prototypes, shifted by a per-speaker
voice offset and degraded by Gaussian noise whose scale grows with the
speaker's severity level. Speakers belong to latent voice clusters that
determine both their feature offset and their embedding vector, so
embedding-space clustering has a ground truth to recover.

All randomness flows through per-entity child generators derived from the
spec seed, which makes corpora bit-reproducible and lets two specs that
differ only in noise scales share transcripts exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .clustering import assign_cluster, ClusterModel
from .errors import CorpusSpecError, ManifestError, ValidationError
from .metrics import SeverityLevel

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = "manifest.jsonl"

# Geometry of the latent voice clusters. Embedding centers sit on scaled
# coordinate axes so any two are far apart relative to the speaker noise.
EMBED_CLUSTER_SCALE = 5.0
EMBED_NOISE_SCALE = 0.1
FEATURE_OFFSET_SCALE = 1.0
SPEAKER_OFFSET_JITTER = 0.1

# Stream tags keeping per-entity RNGs independent of each other.
_TAG_VOCAB, _TAG_PROTO, _TAG_CLUSTER, _TAG_SPEAKER, _TAG_UTTERANCE = 1, 2, 3, 4, 5

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class Split(Enum):
    TRAIN = "Train"
    DEV = "Dev"
    TEST = "Test"

    @classmethod
    def parse(cls, value) -> "Split":
        if isinstance(value, Split):
            return value
        for member in cls:
            if member.value == value:
                return member
        raise ValidationError(f"unknown split: {value!r}")


@dataclass(frozen=True)
class UtteranceRecord:
    """Metadata for one utterance; the T x F feature payload lives in the
    feature store and is referenced by path."""

    utterance_id: str
    speaker_id: str
    transcript: tuple[int, ...]
    duration_frames: int
    features_path: str | None = None


@dataclass(frozen=True)
class SpeakerRecord:
    speaker_id: str
    split: Split
    utterance_ids: tuple[str, ...]
    severity: SeverityLevel | None = None
    embedding: np.ndarray | None = None


@dataclass
class CorpusManifest:
    speakers: dict[str, SpeakerRecord]
    utterances: dict[str, UtteranceRecord]
    vocabulary: list[str]
    feature_dim: int
    embedding_dim: int
    features_dir: Path | None = None

    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def speakers_in(self, split: Split) -> list[SpeakerRecord]:
        return [s for s in self.speakers.values() if s.split == split]


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Knobs of the synthetic corpus generator.

    severity_mix are draw probabilities for VL/L/M/H; severity_noise_scale
    must grow (weakly) with severity so that harder speakers really are
    harder. frame_drop_prob optionally thins frames per severity level to
    mimic articulatory reduction; it defaults off.
    """

    n_speakers_per_split: tuple[int, int, int]
    utterances_per_speaker: int
    vocab_size: int
    feature_dim: int
    frames_per_token: int = 4
    min_tokens_per_utterance: int = 3
    max_tokens_per_utterance: int = 8
    severity_mix: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    severity_noise_scale: tuple[float, float, float, float] = (0.05, 0.15, 0.3, 0.6)
    frame_drop_prob: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    embedding_dim: int = 8
    n_latent_voice_clusters: int = 2
    seed: int = 0

    def validate(self) -> list[str]:
        """Violated-field descriptions; empty when the spec is usable."""
        bad = []
        if len(self.n_speakers_per_split) != 3 or any(n < 1 for n in self.n_speakers_per_split):
            bad.append(f"n_speakers_per_split must be three counts >= 1, got {self.n_speakers_per_split}")
        for name in ("utterances_per_speaker", "vocab_size", "feature_dim", "frames_per_token",
                     "min_tokens_per_utterance", "max_tokens_per_utterance", "embedding_dim",
                     "n_latent_voice_clusters"):
            if getattr(self, name) < 1:
                bad.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_tokens_per_utterance < self.min_tokens_per_utterance:
            bad.append("max_tokens_per_utterance must be >= min_tokens_per_utterance")
        if len(self.severity_mix) != 4 or any(p < 0 for p in self.severity_mix):
            bad.append(f"severity_mix must be four non-negative probabilities, got {self.severity_mix}")
        elif abs(sum(self.severity_mix) - 1.0) > 1e-9:
            bad.append(f"severity_mix must sum to 1 within 1e-9, got sum {sum(self.severity_mix)}")
        if len(self.severity_noise_scale) != 4 or any(s < 0 for s in self.severity_noise_scale):
            bad.append(f"severity_noise_scale must be four non-negative reals, got {self.severity_noise_scale}")
        elif any(a > b for a, b in zip(self.severity_noise_scale, self.severity_noise_scale[1:])):
            bad.append(f"severity_noise_scale must be non-decreasing VL..H, got {self.severity_noise_scale}")
        if len(self.frame_drop_prob) != 4 or any(not 0 <= p < 1 for p in self.frame_drop_prob):
            bad.append(f"frame_drop_prob entries must lie in [0, 1), got {self.frame_drop_prob}")
        if not 0 <= self.seed < 2 ** 64:
            bad.append(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.n_latent_voice_clusters > 2 * self.embedding_dim:
            bad.append("n_latent_voice_clusters must be <= 2 * embedding_dim for separated centers")
        return bad


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _make_vocabulary(size: int, rng: np.random.Generator) -> list[str]:
    """Unique pronounceable pseudo-words of 1..3 CV syllables."""
    words: list[str] = []
    seen = set()
    attempts = 0
    while len(words) < size and attempts < 100 * size + 1000:
        attempts += 1
        n_syll = int(rng.integers(1, 4))
        word = "".join(
            _CONSONANTS[int(rng.integers(len(_CONSONANTS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    for i in range(len(words), size):  # deterministic fallback for huge vocabularies
        words.append(f"w{i}")
    return words


def _embedding_centers(n_clusters: int, dim: int) -> np.ndarray:
    centers = np.zeros((n_clusters, dim))
    for c in range(n_clusters):
        sign = 1.0 if c < dim else -1.0
        centers[c, c % dim] = sign * EMBED_CLUSTER_SCALE
    return centers


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> tuple[CorpusManifest, dict[str, np.ndarray]]:
    """Build a manifest plus an in-memory feature store, features keyed by
    utterance id as float32 T x F matrices (exactly what the on-disk store
    would hold, so in-memory and round-tripped corpora train identically).
    """
    violations = spec.validate()
    if violations:
        raise CorpusSpecError("invalid corpus spec: " + "; ".join(violations))

    vocabulary = _make_vocabulary(spec.vocab_size, _rng(spec.seed, _TAG_VOCAB))
    prototypes = _rng(spec.seed, _TAG_PROTO).normal(
        0.0, 1.0, size=(spec.vocab_size, spec.frames_per_token, spec.feature_dim)
    )
    feature_centers = (
        _rng(spec.seed, _TAG_CLUSTER).normal(0.0, 1.0, size=(spec.n_latent_voice_clusters, spec.feature_dim))
        * FEATURE_OFFSET_SCALE
    )
    embed_centers = _embedding_centers(spec.n_latent_voice_clusters, spec.embedding_dim)

    speakers: dict[str, SpeakerRecord] = {}
    utterances: dict[str, UtteranceRecord] = {}
    features: dict[str, np.ndarray] = {}

    for split_idx, (split, n_speakers) in enumerate(zip(Split, spec.n_speakers_per_split)):
        for i in range(n_speakers):
            speaker_id = f"{split.value.lower()}_{i:03d}"
            srng = _rng(spec.seed, _TAG_SPEAKER, split_idx, i)
            severity = SeverityLevel(int(srng.choice(4, p=np.asarray(spec.severity_mix, dtype=np.float64))))
            # Round-robin keeps every latent cluster populated in every split.
            cluster = i % spec.n_latent_voice_clusters
            offset = feature_centers[cluster] + srng.normal(0.0, SPEAKER_OFFSET_JITTER, spec.feature_dim)
            embedding = embed_centers[cluster] + srng.normal(0.0, EMBED_NOISE_SCALE, spec.embedding_dim)

            utt_ids = []
            for j in range(spec.utterances_per_speaker):
                urng = _rng(spec.seed, _TAG_UTTERANCE, split_idx, i, j)
                n_tokens = int(urng.integers(spec.min_tokens_per_utterance, spec.max_tokens_per_utterance + 1))
                transcript = tuple(int(t) for t in urng.integers(0, spec.vocab_size, size=n_tokens))
                feats = prototypes[list(transcript)].reshape(-1, spec.feature_dim) + offset
                # Noise is always drawn so specs differing only in scale
                # share every other draw (zero-noise twin corpora).
                feats = feats + urng.normal(0.0, 1.0, feats.shape) * spec.severity_noise_scale[severity]
                drop_p = spec.frame_drop_prob[severity]
                if drop_p > 0.0:
                    feats = _drop_frames(feats, spec.frames_per_token, drop_p, urng)

                utterance_id = f"{speaker_id}_u{j:03d}"
                utt_ids.append(utterance_id)
                utterances[utterance_id] = UtteranceRecord(
                    utterance_id=utterance_id,
                    speaker_id=speaker_id,
                    transcript=transcript,
                    duration_frames=feats.shape[0],
                )
                features[utterance_id] = feats.astype(np.float32)

            speakers[speaker_id] = SpeakerRecord(
                speaker_id=speaker_id,
                split=split,
                utterance_ids=tuple(utt_ids),
                severity=severity,
                embedding=embedding,
            )

    manifest = CorpusManifest(
        speakers=speakers,
        utterances=utterances,
        vocabulary=vocabulary,
        feature_dim=spec.feature_dim,
        embedding_dim=spec.embedding_dim,
    )
    return manifest, features


def _drop_frames(feats: np.ndarray, frames_per_token: int, drop_p: float, rng: np.random.Generator) -> np.ndarray:
    """Drop frames independently, but keep at least one frame per token."""
    keep = rng.random(feats.shape[0]) >= drop_p
    for start in range(0, feats.shape[0], frames_per_token):
        block = slice(start, min(start + frames_per_token, feats.shape[0]))
        if not keep[block].any():
            keep[start] = True
    return feats[keep]


# ---------------------------------------------------------------------------
# Feature store: one binary file per utterance.

def write_feature_file(path, feats: np.ndarray) -> None:
    """Little-endian binary: uint32 T, uint32 F, then T*F float32 row-major."""
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
    with open(path, "wb") as f:
        f.write(np.array(feats.shape, dtype="<u4").tobytes())
        f.write(feats.astype("<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValidationError(f"feature file too short: {path}")
    t, f = (int(x) for x in np.frombuffer(raw[:8], dtype="<u4"))
    data = np.frombuffer(raw[8:], dtype="<f4")
    if data.size != t * f:
        raise ValidationError(f"feature file {path} holds {data.size} values, header says {t}x{f}")
    return data.reshape(t, f).copy()


def load_all_features(manifest: CorpusManifest, features: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Resolve every utterance's feature matrix, from memory or the store."""
    out: dict[str, np.ndarray] = {}
    for utt_id, rec in manifest.utterances.items():
        if features is not None and utt_id in features:
            feats = np.asarray(features[utt_id], dtype=np.float32)
        elif rec.features_path is not None and manifest.features_dir is not None:
            feats = read_feature_file(manifest.features_dir / rec.features_path)
        else:
            raise ValidationError(f"no feature payload for utterance {utt_id}")
        if feats.shape != (rec.duration_frames, manifest.feature_dim):
            raise ValidationError(
                f"features for {utt_id} have shape {feats.shape}, manifest says "
                f"({rec.duration_frames}, {manifest.feature_dim})"
            )
        out[utt_id] = feats
    return out


# ---------------------------------------------------------------------------
# Manifest serialization: JSON lines, meta record first.

def _speaker_to_json(s: SpeakerRecord) -> dict:
    return {
        "kind": "speaker",
        "speaker_id": s.speaker_id,
        "split": s.split.value,
        "utterance_ids": list(s.utterance_ids),
        "severity": None if s.severity is None else s.severity.name,
        "embedding": None if s.embedding is None else [float(x) for x in s.embedding],
    }


def _utterance_to_json(u: UtteranceRecord) -> dict:
    return {
        "kind": "utterance",
        "utterance_id": u.utterance_id,
        "speaker_id": u.speaker_id,
        "transcript": list(u.transcript),
        "duration_frames": u.duration_frames,
        "features_path": u.features_path,
    }


def save_manifest(manifest: CorpusManifest, path) -> None:
    records = [
        {
            "kind": "meta",
            "vocabulary": manifest.vocabulary,
            "feature_dim": manifest.feature_dim,
            "embedding_dim": manifest.embedding_dim,
        }
    ]
    records.extend(_speaker_to_json(s) for s in manifest.speakers.values())
    records.extend(_utterance_to_json(u) for u in manifest.utterances.values())
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n")


def save_corpus(manifest: CorpusManifest, features: Mapping[str, np.ndarray], out_dir) -> CorpusManifest:
    """Write manifest plus one .feat file per utterance; returns the manifest
    as reloadable from disk (feature paths filled in)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    utterances = {}
    for utt_id, rec in manifest.utterances.items():
        if utt_id not in features:
            raise ValidationError(f"missing features for utterance {utt_id}")
        write_feature_file(out_dir / f"{utt_id}.feat", features[utt_id])
        utterances[utt_id] = replace(rec, features_path=f"{utt_id}.feat")
    stored = CorpusManifest(
        speakers=dict(manifest.speakers),
        utterances=utterances,
        vocabulary=list(manifest.vocabulary),
        feature_dim=manifest.feature_dim,
        embedding_dim=manifest.embedding_dim,
        features_dir=out_dir,
    )
    save_manifest(stored, out_dir / MANIFEST_FILENAME)
    return stored


def _parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest line {lineno}: not valid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict) or "kind" not in rec:
        raise ManifestError(f"manifest line {lineno}: record has no 'kind' field")
    return rec


def load_manifest(path) -> CorpusManifest:
    """Parse and integrity-check a manifest file.

    Parse problems report the offending line number; integrity problems
    report the offending ids.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"manifest {path} is empty")

    meta = _parse_record(lines[0], 1)
    if meta.get("kind") != "meta":
        raise ManifestError("manifest line 1: first record must have kind 'meta'")
    for key in ("vocabulary", "feature_dim", "embedding_dim"):
        if key not in meta:
            raise ManifestError(f"manifest line 1: meta record missing '{key}'")

    speakers: list[SpeakerRecord] = []
    utterances: list[UtteranceRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_record(line, lineno)
        kind = rec["kind"]
        try:
            if kind == "speaker":
                speakers.append(
                    SpeakerRecord(
                        speaker_id=rec["speaker_id"],
                        split=Split.parse(rec["split"]),
                        utterance_ids=tuple(rec["utterance_ids"]),
                        severity=None if rec.get("severity") is None else SeverityLevel.parse(rec["severity"]),
                        embedding=None if rec.get("embedding") is None else np.asarray(rec["embedding"], dtype=np.float64),
                    )
                )
            elif kind == "utterance":
                utterances.append(
                    UtteranceRecord(
                        utterance_id=rec["utterance_id"],
                        speaker_id=rec["speaker_id"],
                        transcript=tuple(int(t) for t in rec["transcript"]),
                        duration_frames=int(rec["duration_frames"]),
                        features_path=rec.get("features_path"),
                    )
                )
            else:
                raise ManifestError(f"manifest line {lineno}: unknown record kind {kind!r}")
        except (KeyError, TypeError, ValidationError) as exc:
            raise ManifestError(f"manifest line {lineno}: {exc}") from exc

    violations = _validate_parts(meta["vocabulary"], meta["feature_dim"], meta["embedding_dim"], speakers, utterances)
    if violations:
        raise ManifestError("manifest integrity violations: " + "; ".join(violations))

    manifest = CorpusManifest(
        speakers={s.speaker_id: s for s in speakers},
        utterances={u.utterance_id: u for u in utterances},
        vocabulary=list(meta["vocabulary"]),
        feature_dim=int(meta["feature_dim"]),
        embedding_dim=int(meta["embedding_dim"]),
        features_dir=path.parent,
    )
    return manifest


def _validate_parts(
    vocabulary,
    feature_dim,
    embedding_dim,
    speakers: Iterable[SpeakerRecord],
    utterances: Iterable[UtteranceRecord],
) -> list[str]:
    violations = []
    if len(set(vocabulary)) != len(vocabulary):
        dupes = sorted({t for t in vocabulary if list(vocabulary).count(t) > 1})
        violations.append(f"vocabulary has duplicate tokens: {dupes}")
    if feature_dim < 1:
        violations.append(f"feature_dim must be >= 1, got {feature_dim}")
    if embedding_dim < 1:
        violations.append(f"embedding_dim must be >= 1, got {embedding_dim}")

    speakers = list(speakers)
    utterances = list(utterances)
    seen_speakers: dict[str, SpeakerRecord] = {}
    for s in speakers:
        if s.speaker_id in seen_speakers:
            extra = " with conflicting splits" if seen_speakers[s.speaker_id].split != s.split else ""
            violations.append(f"duplicate speaker_id {s.speaker_id}{extra}")
        else:
            seen_speakers[s.speaker_id] = s
    utts: dict[str, UtteranceRecord] = {}
    for u in utterances:
        if u.utterance_id in utts:
            violations.append(f"duplicate utterance_id {u.utterance_id}")
        else:
            utts[u.utterance_id] = u

    referenced: dict[str, str] = {}
    for s in seen_speakers.values():
        if s.embedding is not None and s.embedding.shape != (embedding_dim,):
            violations.append(f"speaker {s.speaker_id} embedding has dim {s.embedding.shape}, expected {embedding_dim}")
        for uid in s.utterance_ids:
            if uid in referenced:
                violations.append(f"utterance {uid} referenced by both {referenced[uid]} and {s.speaker_id}")
                continue
            referenced[uid] = s.speaker_id
            if uid not in utts:
                violations.append(f"speaker {s.speaker_id} references missing utterance {uid}")
            elif utts[uid].speaker_id != s.speaker_id:
                violations.append(
                    f"utterance {uid} carries speaker_id {utts[uid].speaker_id} but is listed by {s.speaker_id}"
                )
    for u in utts.values():
        if u.speaker_id not in seen_speakers:
            violations.append(f"utterance {u.utterance_id} names missing speaker {u.speaker_id}")
        elif u.utterance_id not in referenced:
            violations.append(f"utterance {u.utterance_id} not listed by its speaker {u.speaker_id}")
        if u.duration_frames < 1:
            violations.append(f"utterance {u.utterance_id} has duration_frames {u.duration_frames} < 1")
        for t in u.transcript:
            if not 0 <= t < len(vocabulary):
                violations.append(f"utterance {u.utterance_id} token id {t} outside vocabulary")
                break
    return violations


def validate_manifest(manifest: CorpusManifest) -> list[str]:
    """All invariant violations in the manifest; empty means consistent."""
    violations = _validate_parts(
        manifest.vocabulary,
        manifest.feature_dim,
        manifest.embedding_dim,
        manifest.speakers.values(),
        manifest.utterances.values(),
    )
    for key, s in manifest.speakers.items():
        if key != s.speaker_id:
            violations.append(f"speaker map key {key} does not match record id {s.speaker_id}")
    for key, u in manifest.utterances.items():
        if key != u.utterance_id:
            violations.append(f"utterance map key {key} does not match record id {u.utterance_id}")
    return violations


def filter_split(
    manifest: CorpusManifest,
    split: Split | str,
    severity_subset: Iterable[SeverityLevel | str] | None = None,
    cluster_subset: Iterable[int] | None = None,
    cluster_model: ClusterModel | None = None,
) -> CorpusManifest:
    """View of the manifest restricted to one split and optional filters.

    Filters are conjunctive. Severity filtering drops unlabeled speakers;
    cluster filtering requires the cluster model to cover (or be able to
    assign) every speaker in the split. The input manifest is untouched.
    """
    split = Split.parse(split)
    severities = None if severity_subset is None else {SeverityLevel.parse(s) for s in severity_subset}
    clusters = None
    if cluster_subset is not None:
        if cluster_model is None:
            raise ValidationError("cluster_subset given without a cluster model")
        clusters = set()
        for c in cluster_subset:
            if not 0 <= int(c) < cluster_model.k:
                raise ValidationError(f"cluster index {c} outside [0, {cluster_model.k})")
            clusters.add(int(c))

    selected: dict[str, SpeakerRecord] = {}
    for speaker_id, s in manifest.speakers.items():
        if s.split != split:
            continue
        if severities is not None and (s.severity is None or s.severity not in severities):
            continue
        if clusters is not None:
            c = cluster_model.assignments.get(speaker_id)
            if c is None:
                if s.embedding is None:
                    raise ValidationError(f"cluster model does not cover speaker {speaker_id} (no embedding either)")
                c = assign_cluster(cluster_model, s.embedding)
            if c not in clusters:
                continue
        selected[speaker_id] = s

    utterances = {
        uid: manifest.utterances[uid] for s in selected.values() for uid in s.utterance_ids
    }
    return CorpusManifest(
        speakers=selected,
        utterances=utterances,
        vocabulary=manifest.vocabulary,
        feature_dim=manifest.feature_dim,
        embedding_dim=manifest.embedding_dim,
        features_dir=manifest.features_dir,
    )


# ---------------------------------------------------------------------------
# Optional external speaker embeddings (one line: speaker_id then D floats).

def save_embedding_file(embeddings: Mapping[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sid in sorted(embeddings):
            vec = " ".join(repr(float(x)) for x in np.asarray(embeddings[sid]).ravel())
            f.write(f"{sid} {vec}\n")


def load_embedding_file(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ValidationError(f"embedding file line {lineno}: need speaker_id plus floats")
            try:
                out[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(f"embedding file line {lineno}: {exc}") from exc
    return out


def with_embeddings(manifest: CorpusManifest, embeddings: Mapping[str, np.ndarray]) -> CorpusManifest:
    """Copy of the manifest with speaker embeddings replaced from a mapping."""
    speakers = {}
    for sid, s in manifest.speakers.items():
        if sid in embeddings:
            emb = np.asarray(embeddings[sid], dtype=np.float64)
            if emb.shape != (manifest.embedding_dim,):
                raise ValidationError(f"embedding for {sid} has dim {emb.shape}, expected {manifest.embedding_dim}")
            speakers[sid] = replace(s, embedding=emb)
        else:
            speakers[sid] = s
    unknown = sorted(set(embeddings) - set(manifest.speakers))
    if unknown:
        raise ValidationError(f"embeddings name unknown speakers: {unknown}")
    return CorpusManifest(
        speakers=speakers,
        utterances=dict(manifest.utterances),
        vocabulary=list(manifest.vocabulary),
        feature_dim=manifest.feature_dim,
        embedding_dim=manifest.embedding_dim,
        features_dir=manifest.features_dir,
    )
