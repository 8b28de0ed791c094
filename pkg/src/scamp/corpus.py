"""Video-query annotation corpora: data model, JSONL ingestion, vocab.

A corpus file is JSON Lines. Each line is one record:

    {"video": {"id": str, "duration": float, "features": [[float, ...], ...]}}
    {"query": {"id": str, "video_id": str, "tokens": [str, ...],
               "pos": [str, ...], "gt_span": [float, float] | null}}

Feature matrices are row-major, one row per frame. ``gt_span`` is in seconds
and is used for evaluation and diagnostics only, never for training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

POS_TAGS = ("NOUN", "VERB", "OTHER")

MASK_TOKEN = "<mask>"
UNK_TOKEN = "<unk>"
MASK_ID = 0
UNK_ID = 1

DEFAULT_VOCAB_SIZE = 8000
DEFAULT_MAX_QUERY_LEN = 20


class CorpusError(Exception):
    """Base class for corpus loading failures."""


class CorpusParseError(CorpusError):
    """A record is malformed; the message names the offending line."""


class CorpusIntegrityError(CorpusError):
    """Records parse but violate a corpus invariant."""


class UnknownVideoError(CorpusError):
    """A lookup referenced a video id that is not in the corpus."""


@dataclass
class VideoRecord:
    video_id: str
    features: np.ndarray  # [n_frames, feat_dim], float64
    duration: float

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        if self.features.ndim != 2 or self.n_frames < 2:
            raise CorpusIntegrityError(
                f"video {self.video_id!r}: features must be [n_frames >= 2, d]"
            )
        if not np.isfinite(self.features).all():
            raise CorpusIntegrityError(f"video {self.video_id!r}: non-finite feature values")
        if not (self.duration > 0):
            raise CorpusIntegrityError(f"video {self.video_id!r}: duration must be > 0")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.duration == other.duration
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


@dataclass
class QueryRecord:
    query_id: str
    video_id: str
    tokens: list[str]
    pos_tags: list[str]
    gt_span: tuple[float, float] | None = None

    def validate(self, video: VideoRecord) -> None:
        if not self.tokens:
            raise CorpusIntegrityError(f"query {self.query_id!r}: empty token list")
        if len(self.pos_tags) != len(self.tokens):
            raise CorpusIntegrityError(
                f"query {self.query_id!r}: {len(self.pos_tags)} pos tags for "
                f"{len(self.tokens)} tokens"
            )
        for tag in self.pos_tags:
            if tag not in POS_TAGS:
                raise CorpusIntegrityError(f"query {self.query_id!r}: unknown pos tag {tag!r}")
        if self.gt_span is not None:
            start, end = self.gt_span
            if not (0 <= start < end <= video.duration):
                raise CorpusIntegrityError(
                    f"query {self.query_id!r}: gt_span {self.gt_span} outside "
                    f"[0, {video.duration}]"
                )


@dataclass
class AnnotationCorpus:
    videos: list[VideoRecord]
    queries: list[QueryRecord]
    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._video_index = {v.video_id: v for v in self.videos}
        if len(self._video_index) != len(self.videos):
            raise CorpusIntegrityError("duplicate video ids in corpus")
        self._queries_by_video: dict[str, list[QueryRecord]] = {v.video_id: [] for v in self.videos}
        for q in self.queries:
            if q.video_id not in self._video_index:
                raise CorpusIntegrityError(
                    f"query {q.query_id!r} references unknown video {q.video_id!r}"
                )
            self._queries_by_video[q.video_id].append(q)
        if not self.vocab:
            self.vocab = build_vocab(self.queries)

    def video(self, video_id: str) -> VideoRecord:
        try:
            return self._video_index[video_id]
        except KeyError:
            raise UnknownVideoError(f"unknown video id {video_id!r}") from None

    def token_ids(self, tokens: list[str]) -> list[int]:
        return [self.vocab.get(t, UNK_ID) for t in tokens]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AnnotationCorpus):
            return NotImplemented
        return (
            self.videos == other.videos
            and self.queries == other.queries
            and self.vocab == other.vocab
        )


def build_vocab(queries: list[QueryRecord], vocab_size: int = DEFAULT_VOCAB_SIZE) -> dict[str, int]:
    """Deterministic vocab: special ids first, then lexicographic corpus tokens.

    Tokens beyond the size cap map to UNK_ID at encode time.
    """
    vocab = {MASK_TOKEN: MASK_ID, UNK_TOKEN: UNK_ID}
    tokens = sorted({t for q in queries for t in q.tokens})
    for tok in tokens[: max(0, vocab_size - len(vocab))]:
        vocab[tok] = len(vocab)
    if len(tokens) > vocab_size - 2:
        logger.warning(
            "vocab overflow: %d distinct tokens, keeping %d", len(tokens), vocab_size - 2
        )
    return vocab


def find_queries(video_id: str, corpus: AnnotationCorpus) -> list[QueryRecord]:
    """All queries paired with ``video_id``, in stable corpus order."""
    if video_id not in corpus._video_index:
        raise UnknownVideoError(f"unknown video id {video_id!r}")
    return list(corpus._queries_by_video[video_id])


def _parse_video(obj: dict, lineno: int) -> VideoRecord:
    try:
        features = np.asarray(obj["features"], dtype=np.float64)
        return VideoRecord(
            video_id=str(obj["id"]),
            features=features,
            duration=float(obj["duration"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusParseError(f"line {lineno}: bad video record: {exc}") from exc


def _parse_query(obj: dict, lineno: int, max_query_len: int) -> QueryRecord:
    try:
        tokens = [str(t) for t in obj["tokens"]]
        pos = [str(t) for t in obj["pos"]]
        span = obj.get("gt_span")
        gt_span = None if span is None else (float(span[0]), float(span[1]))
        rec = QueryRecord(
            query_id=str(obj["id"]),
            video_id=str(obj["video_id"]),
            tokens=tokens,
            pos_tags=pos,
            gt_span=gt_span,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorpusParseError(f"line {lineno}: bad query record: {exc}") from exc
    if len(rec.tokens) > max_query_len:
        logger.warning(
            "query %s: %d tokens truncated to %d", rec.query_id, len(rec.tokens), max_query_len
        )
        rec.tokens = rec.tokens[:max_query_len]
        rec.pos_tags = rec.pos_tags[:max_query_len]
    return rec


def load_corpus(
    path: str | Path,
    max_query_len: int = DEFAULT_MAX_QUERY_LEN,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
) -> AnnotationCorpus:
    """Load and validate a JSONL corpus file.

    Raises CorpusParseError with a line number for malformed records and
    CorpusIntegrityError for invariant violations (dangling video ids, bad
    spans, non-finite features).
    """
    videos: list[VideoRecord] = []
    queries: list[QueryRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or len(obj) != 1:
                raise CorpusParseError(f"line {lineno}: expected a single-key record object")
            kind, body = next(iter(obj.items()))
            if kind == "video":
                videos.append(_parse_video(body, lineno))
            elif kind == "query":
                queries.append(_parse_query(body, lineno, max_query_len))
            else:
                raise CorpusParseError(f"line {lineno}: unknown record kind {kind!r}")

    corpus = AnnotationCorpus(videos, queries, build_vocab(queries, vocab_size))
    for video in corpus.videos:
        video.validate()
    for query in corpus.queries:
        query.validate(corpus.video(query.video_id))
    return corpus


def save_corpus(corpus: AnnotationCorpus, path: str | Path) -> None:
    """Write a corpus in the JSONL format understood by load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in corpus.videos:
            rec = {"video": {"id": v.video_id, "duration": v.duration,
                             "features": v.features.tolist()}}
            fh.write(json.dumps(rec) + "\n")
        for q in corpus.queries:
            rec = {"query": {"id": q.query_id, "video_id": q.video_id, "tokens": q.tokens,
                             "pos": q.pos_tags,
                             "gt_span": None if q.gt_span is None else list(q.gt_span)}}
            fh.write(json.dumps(rec) + "\n")
