"""Synthetic corpus generator with planted scenes and a ground-truth oracle.

Stands in for pretrained video/text encoders: every video is a concatenation
of contiguous scene spans, frames inside a scene are that scene's prototype
vector plus Gaussian noise, and every scene gets at least one templated query.
The oracle records the planted structure (true scene counts, spans and the
scene each query describes) so tests can check estimators against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import AnnotationCorpus, QueryRecord, VideoRecord


class SyntheticSpecError(ValueError):
    """The generator spec is inconsistent (e.g. more scenes than frames)."""


# Each scene concept owns one unique noun; indices past the end of the bank
# get a numeric suffix so nouns stay disjoint no matter how many concepts a
# corpus needs. Subjects and verbs come from small shared banks, so a masked
# noun cannot be inferred from the rest of the query: the only route to it is
# the video frames the proposal mask lets through.
_NOUNS = [
    "laptop", "stair", "food", "hand", "door", "cup", "book", "towel", "shelf",
    "pillow", "window", "broom", "mirror", "box", "shoe", "blanket", "phone",
    "table", "chair", "lamp", "bag", "plate", "glass", "jacket", "camera",
    "sandwich", "bottle", "couch", "sink", "fridge", "closet", "floor", "wall",
    "picture", "clock", "vacuum", "dish", "light", "bed", "desk",
]
_SUBJECTS = ["person", "someone"]  # human nouns: exercised by the exclusion filter
_VERBS = ["sees", "has", "finds", "takes", "shows", "keeps"]

# (template, pos tags); {s}=subject, {v}=shared verb, {n}=the concept noun.
_TEMPLATES = [
    (("{s}", "{v}", "the", "{n}"), ("NOUN", "VERB", "OTHER", "NOUN")),
    (("{s}", "{v}", "a", "{n}", "nearby"), ("NOUN", "VERB", "OTHER", "NOUN", "OTHER")),
    (("{s}", "{v}", "that", "{n}", "there"), ("NOUN", "VERB", "OTHER", "NOUN", "OTHER")),
]


def _bank_token(bank: list[str], index: int) -> str:
    base = bank[index % len(bank)]
    round_no = index // len(bank)
    return base if round_no == 0 else f"{base}{round_no + 1}"


@dataclass
class SyntheticSpec:
    seed: int
    n_videos: int = 100
    n_frames: int = 32
    feat_dim: int = 64
    duration: float = 30.0
    scene_range: tuple[int, int] = (1, 4)
    redundancy_rate: float = 0.0
    duplicate_rate: float = 0.0
    noise_std: float = 0.1

    def validate(self) -> None:
        lo, hi = self.scene_range
        if not (1 <= lo <= hi):
            raise SyntheticSpecError(f"bad scene_range {self.scene_range}")
        if hi > self.n_frames:
            raise SyntheticSpecError(
                f"scene_range max {hi} exceeds n_frames {self.n_frames}"
            )
        if self.n_videos < 1 or self.n_frames < 2 or self.feat_dim < 1:
            raise SyntheticSpecError("n_videos, n_frames, feat_dim out of range")
        if not (self.duration > 0):
            raise SyntheticSpecError("duration must be > 0")
        for name in ("redundancy_rate", "duplicate_rate"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise SyntheticSpecError(f"{name} must be in [0, 1]")
        if self.noise_std < 0:
            raise SyntheticSpecError("noise_std must be >= 0")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "seed" not in raw:
            raise SyntheticSpecError("seed is mandatory")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise SyntheticSpecError(f"unknown spec keys: {sorted(unknown)}")
        if "scene_range" in raw:
            raw["scene_range"] = tuple(raw["scene_range"])
        spec = cls(**raw)
        spec.validate()
        return spec


@dataclass
class VideoOracle:
    scene_count: int
    spans: list[tuple[float, float]]  # seconds, disjoint, covering [0, duration]
    concept_ids: list[int]
    query_scene: dict[str, int]  # query_id -> scene index


@dataclass
class OracleAnnotations:
    videos: dict[str, VideoOracle] = field(default_factory=dict)

    def scene_count(self, video_id: str) -> int:
        return self.videos[video_id].scene_count

    def to_json(self, path: str | Path) -> None:
        payload = {
            vid: {
                "scene_count": vo.scene_count,
                "spans": [list(s) for s in vo.spans],
                "concept_ids": vo.concept_ids,
                "query_scene": vo.query_scene,
            }
            for vid, vo in self.videos.items()
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, path: str | Path) -> "OracleAnnotations":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        videos = {
            vid: VideoOracle(
                scene_count=body["scene_count"],
                spans=[tuple(s) for s in body["spans"]],
                concept_ids=list(body["concept_ids"]),
                query_scene=dict(body["query_scene"]),
            )
            for vid, body in payload.items()
        }
        return cls(videos)


class _ConceptPool:
    """Lazily allocated scene concepts with globally disjoint noun tokens."""

    def __init__(self, rng: np.random.Generator, feat_dim: int):
        self._rng = rng
        self._feat_dim = feat_dim
        self.nouns: list[str] = []
        self.prototypes: list[np.ndarray] = []

    def fresh(self) -> int:
        j = len(self.nouns)
        self.nouns.append(_bank_token(_NOUNS, j))
        self.prototypes.append(self._rng.normal(0.0, 1.0, size=self._feat_dim))
        return j


def _partition_frames(rng: np.random.Generator, n_frames: int, n_scenes: int) -> list[tuple[int, int]]:
    """Split [0, n_frames) into n_scenes contiguous runs of at least one frame."""
    if n_scenes == 1:
        return [(0, n_frames)]
    cuts = np.sort(rng.choice(np.arange(1, n_frames), size=n_scenes - 1, replace=False))
    bounds = [0, *cuts.tolist(), n_frames]
    return [(bounds[i], bounds[i + 1]) for i in range(n_scenes)]


def _render(rng: np.random.Generator, noun: str) -> tuple[list[str], list[str]]:
    template, pos = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
    subst = {
        "{s}": _SUBJECTS[int(rng.integers(len(_SUBJECTS)))],
        "{v}": _VERBS[int(rng.integers(len(_VERBS)))],
        "{n}": noun,
    }
    return [subst.get(t, t) for t in template], list(pos)


def generate_synthetic(spec: SyntheticSpec) -> tuple[AnnotationCorpus, OracleAnnotations]:
    """Generate a corpus plus its oracle. Deterministic given spec.seed.

    Redundant and duplicated scene counts are deterministic per video:
    round(rate * n_scenes) extra queries re-describe rng-chosen scenes, and
    round(duplicate_rate * n_scenes) scenes reuse a concept already planted in
    another video (same prototype and nouns, for cross-video hard negatives).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pool = _ConceptPool(rng, spec.feat_dim)

    videos: list[VideoRecord] = []
    queries: list[QueryRecord] = []
    oracle = OracleAnnotations()
    qid = 0

    for vi in range(spec.n_videos):
        video_id = f"v{vi:04d}"
        lo, hi = spec.scene_range
        n_scenes = int(rng.integers(lo, hi + 1))
        frame_runs = _partition_frames(rng, spec.n_frames, n_scenes)

        n_dup = int(round(spec.duplicate_rate * n_scenes))
        dup_slots = set(rng.choice(n_scenes, size=min(n_dup, n_scenes), replace=False).tolist())
        concept_ids: list[int] = []
        for s in range(n_scenes):
            reusable = [c for c in range(len(pool.nouns)) if c not in concept_ids]
            if s in dup_slots and reusable:
                concept_ids.append(int(rng.choice(reusable)))
            else:
                concept_ids.append(pool.fresh())

        feats = np.empty((spec.n_frames, spec.feat_dim), dtype=np.float64)
        for (a, b), cid in zip(frame_runs, concept_ids):
            noise = rng.normal(0.0, spec.noise_std, size=(b - a, spec.feat_dim))
            feats[a:b] = pool.prototypes[cid] + noise
        videos.append(VideoRecord(video_id=video_id, features=feats, duration=spec.duration))

        sec = spec.duration / spec.n_frames
        spans = [(a * sec, b * sec) for a, b in frame_runs]

        query_scene: dict[str, int] = {}
        n_extra = int(round(spec.redundancy_rate * n_scenes))
        extra_slots = rng.integers(0, n_scenes, size=n_extra).tolist() if n_extra else []
        for s, cid in enumerate(concept_ids):
            for _ in range(1 + extra_slots.count(s)):
                tokens, pos = _render(rng, pool.nouns[cid])
                query_id = f"q{qid:05d}"
                qid += 1
                queries.append(QueryRecord(
                    query_id=query_id,
                    video_id=video_id,
                    tokens=tokens,
                    pos_tags=pos,
                    gt_span=spans[s],
                ))
                query_scene[query_id] = s

        oracle.videos[video_id] = VideoOracle(
            scene_count=n_scenes,
            spans=spans,
            concept_ids=concept_ids,
            query_scene=query_scene,
        )

    return AnnotationCorpus(videos, queries), oracle
