"""Scene-complexity estimation from a video's paired queries.

A video's complexity is the number of distinguishable scenes its annotations
describe. We take the noun set of each query (humans excluded: "person" says
nothing about the scene), then greedily delete the set that overlaps the most
other sets until all survivors are pairwise disjoint. The survivor count is
the complexity. A separate diagnostic counts scenes from ground-truth spans
by merging spans with IoU > 0.5; it is never used for training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import AnnotationCorpus, QueryRecord, find_queries

logger = logging.getLogger(__name__)

DEFAULT_MAX_COMPLEXITY = 12


class ComplexityError(ValueError):
    """Estimation is impossible (e.g. the video has no paired queries)."""


def load_human_nouns(path: str | Path | None = None) -> frozenset[str]:
    """Load the human-noun exclusion list, one token per line, UTF-8."""
    if path is None:
        text = resources.files("scamp.data").joinpath("human_nouns.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(tok for tok in (line.strip() for line in text.splitlines()) if tok)


_DEFAULT_HUMAN_NOUNS = None


def default_human_nouns() -> frozenset[str]:
    global _DEFAULT_HUMAN_NOUNS
    if _DEFAULT_HUMAN_NOUNS is None:
        _DEFAULT_HUMAN_NOUNS = load_human_nouns()
    return _DEFAULT_HUMAN_NOUNS


@dataclass
class NounSet:
    """Ordered noun-token sets, one per surviving query, with provenance."""

    elements: list[frozenset[str]]
    query_ids: list[str]

    def __post_init__(self) -> None:
        if len(self.elements) != len(self.query_ids):
            raise ValueError("elements and query_ids must align")
        for e in self.elements:
            if not e:
                raise ValueError("empty noun set element")

    def __len__(self) -> int:
        return len(self.elements)


@dataclass
class RemovalStep:
    query_id: str
    nouns: frozenset[str]
    degree: int  # number of other elements it shared a noun with


@dataclass
class SceneComplexity:
    alpha: int  # clamped to [1, k_max]
    raw_count: int  # survivor count before clamping
    noun_set: NounSet  # survivors
    trace: list[RemovalStep] = field(default_factory=list)
    degraded: bool = False  # True when no query yielded nouns (fallback path)


def extract_nouns(queries: list[QueryRecord],
                  human_nouns: frozenset[str] | None = None) -> NounSet:
    """Per-query NOUN tokens minus human nouns; noun-free queries drop out."""
    if not queries:
        raise ComplexityError("extract_nouns needs at least one query")
    if human_nouns is None:
        human_nouns = default_human_nouns()
    elements: list[frozenset[str]] = []
    query_ids: list[str] = []
    for q in queries:
        nouns = frozenset(
            tok for tok, tag in zip(q.tokens, q.pos_tags)
            if tag == "NOUN" and tok not in human_nouns
        )
        if nouns:
            elements.append(nouns)
            query_ids.append(q.query_id)
        else:
            logger.debug("query %s yields no scene nouns; skipped", q.query_id)
    return NounSet(elements, query_ids)


def _overlap_degrees(elements: list[frozenset[str]]) -> list[int]:
    return [
        sum(1 for j, other in enumerate(elements) if j != i and e & other)
        for i, e in enumerate(elements)
    ]


def remove_redundancy(ns: NounSet) -> tuple[NounSet, list[RemovalStep]]:
    """Delete the most-overlapping element until survivors are disjoint.

    Overlap degree counts distinct other elements sharing >= 1 noun. Ties
    remove the element latest in corpus order. Each iteration removes exactly
    one element, so the loop terminates.
    """
    elements = list(ns.elements)
    query_ids = list(ns.query_ids)
    trace: list[RemovalStep] = []
    while True:
        degrees = _overlap_degrees(elements)
        if not any(degrees):
            break
        best = max(range(len(elements)), key=lambda i: (degrees[i], i))
        trace.append(RemovalStep(query_ids[best], elements[best], degrees[best]))
        del elements[best], query_ids[best]
    kept = NounSet(elements, query_ids)
    for i, e in enumerate(kept.elements):
        for other in kept.elements[i + 1:]:
            assert not (e & other), "survivors must be pairwise disjoint"
    return kept, trace


def estimate(video_id: str, corpus: AnnotationCorpus,
             k_max: int = DEFAULT_MAX_COMPLEXITY,
             human_nouns: frozenset[str] | None = None) -> SceneComplexity:
    """Scene complexity of one video from its paired queries, clamped to [1, k_max]."""
    queries = find_queries(video_id, corpus)
    if not queries:
        raise ComplexityError(f"video {video_id!r} has no paired queries")
    ns = extract_nouns(queries, human_nouns)
    if len(ns) == 0:
        # No query carried a scene noun; fall back to the query count.
        raw = len(queries)
        logger.warning("video %s: no scene nouns in any query; alpha falls back "
                       "to query count %d", video_id, raw)
        return SceneComplexity(alpha=max(1, min(raw, k_max)), raw_count=raw,
                               noun_set=ns, degraded=True)
    kept, trace = remove_redundancy(ns)
    raw = len(kept)
    return SceneComplexity(alpha=max(1, min(raw, k_max)), raw_count=raw,
                           noun_set=kept, trace=trace)


def _span_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def gt_scene_count(queries: list[QueryRecord]) -> int:
    """Diagnostic scene count from GT spans: merge spans with IoU > 0.5.

    Greedy in corpus order; a query joins the first group whose representative
    span (the group founder's) overlaps it with IoU > 0.5.
    """
    if not queries:
        raise ComplexityError("gt_scene_count needs at least one query")
    reps: list[tuple[float, float]] = []
    for q in queries:
        if q.gt_span is None:
            raise ComplexityError(f"query {q.query_id!r} has no gt_span")
        for rep in reps:
            if _span_iou(rep, q.gt_span) > 0.5:
                break
        else:
            reps.append(q.gt_span)
    return len(reps)
