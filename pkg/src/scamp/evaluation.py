"""Retrieval metrics and diagnostics.

Temporal IoU, R@n at IoU>m (strict inequality), mean top-1 IoU, and a
scene-count versus proposal-count heatmap of mean top-1 IoU. Besides the
model's own adaptive proposals, two replacement strategies can be scored
through the same trained heads for comparison: a fixed count of evenly
spaced proposals, and sliding windows of a fixed length and stride.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from . import complexity
from .blocks import make_generator
from .config import RunConfig
from .corpus import AnnotationCorpus, QueryRecord, find_queries
from .losses import (mvr_loss, predict_span, sample_masked_positions,
                     swept_mqr)
from .model import MomentModel
from .proposals import ProposalMask, ProposalSet, base_mask, flatten_and_normalize
from .synthetic import OracleAnnotations

logger = logging.getLogger(__name__)

Span = tuple[float, float]


class EvalError(ValueError):
    """Evaluation inputs are unusable (no queries, missing spans, ...)."""


def iou(a: Span, b: Span) -> float:
    """Temporal intersection over union; 0 when the union has zero length."""
    if a[0] > a[1] or b[0] > b[1]:
        raise EvalError(f"inverted span: {a} vs {b}")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def recall_at(preds: list[list[Span]], gts: list[Span], n: int, m: float) -> float:
    """Fraction of queries whose best IoU over the top-n predictions is > m."""
    if not preds or len(preds) != len(gts):
        raise EvalError("recall_at needs aligned, nonempty predictions and GTs")
    hits = 0
    for spans, gt in zip(preds, gts):
        if not spans:
            raise EvalError("a query has no predictions")
        best = max(iou(s, gt) for s in spans[:n])
        hits += best > m
    return hits / len(preds)


def mean_iou(preds: list[list[Span]], gts: list[Span]) -> float:
    """Mean of per-query top-1 IoUs."""
    if not preds or len(preds) != len(gts):
        raise EvalError("mean_iou needs aligned, nonempty predictions and GTs")
    return sum(iou(spans[0], gt) for spans, gt in zip(preds, gts)) / len(preds)


def mismatch_heatmap(rows: list[tuple[int, int, float]]) -> dict[tuple[int, int], tuple[float, int]]:
    """(scene_count, proposal_count, top1_iou) rows -> bucket means + counts."""
    sums: dict[tuple[int, int], list[float]] = {}
    for scenes, props, top1 in rows:
        acc = sums.setdefault((scenes, props), [0.0, 0])
        acc[0] += top1
        acc[1] += 1
    return {key: (total / count, count) for key, (total, count) in sums.items()}


def parse_strategy(spec: str) -> tuple[str, tuple]:
    """adaptive | fixed:n | window:w,s -> (kind, params)."""
    if spec == "adaptive":
        return "adaptive", ()
    kind, sep, rest = spec.partition(":")
    if kind == "fixed" and sep:
        n = int(rest)
        if n < 1:
            raise EvalError(f"fixed proposal count must be >= 1, got {n}")
        return "fixed", (n,)
    if kind == "window" and sep:
        parts = rest.split(",")
        if len(parts) != 2:
            raise EvalError(f"window strategy needs w,s; got {spec!r}")
        w, s = float(parts[0]), float(parts[1])
        if w <= 0 or s <= 0:
            raise EvalError("window length and stride must be positive")
        return "window", (w, s)
    raise EvalError(f"unknown strategy {spec!r}; use adaptive | fixed:n | window:w,s")


def strategy_centers_widths(kind: str, params: tuple, duration: float) -> list[tuple[float, float]]:
    """Replacement (center, width) pairs in normalized coordinates."""
    if kind == "fixed":
        n = params[0]
        return [((i + 0.5) / n, 2.0 / n) for i in range(n)]
    if kind == "window":
        w_sec, stride = params
        width = min(w_sec / duration, 1.0)
        pairs = []
        start = 0.0
        while start + w_sec <= duration + 1e-9:
            pairs.append(((start + w_sec / 2.0) / duration, width))
            start += stride
        if not pairs:  # window longer than the video: one centered window
            pairs.append((0.5, width))
        return pairs
    raise EvalError(f"no replacement pairs for strategy kind {kind!r}")


@dataclass
class QueryResult:
    query_id: str
    video_id: str
    scene_count: int
    proposal_count: int
    spans: list[Span]  # ranked best-first
    ious: list[float]  # vs gt, same order
    gt_span: Span


@dataclass
class EvalReport:
    strategy: str
    scene_source: str
    results: list[QueryResult]
    recalls: dict[str, float]
    miou: float
    heatmap: dict[tuple[int, int], tuple[float, int]]
    config_digest: str = ""

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["query_id", "video_id", "scenes", "proposals",
                         "top1_iou", "pred_start", "pred_end", "gt_start", "gt_end"])
            for r in self.results:
                wr.writerow([r.query_id, r.video_id, r.scene_count, r.proposal_count,
                             f"{r.ious[0]:.6f}", f"{r.spans[0][0]:.6f}",
                             f"{r.spans[0][1]:.6f}", f"{r.gt_span[0]:.6f}",
                             f"{r.gt_span[1]:.6f}"])

    def write_json(self, path: str | Path) -> None:
        payload = {
            "strategy": self.strategy,
            "scene_source": self.scene_source,
            "config_digest": self.config_digest,
            "n_queries": len(self.results),
            "recalls": self.recalls,
            "miou": self.miou,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def write_heatmap_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["scenes", "proposals", "mean_iou", "n"])
            for (scenes, props) in sorted(self.heatmap):
                mean, count = self.heatmap[(scenes, props)]
                wr.writerow([scenes, props, f"{mean:.6f}", count])


def _strategy_proposals(model: MomentModel, v_att, q_att, alpha: int,
                        pairs: list[tuple[float, float]]) -> tuple[ProposalSet, torch.Tensor]:
    """Replacement proposals pushed through the same interaction features."""
    z = model.proposer.complexity_vector(alpha)
    _, v_prime, _ = model.proposer.interact(z, v_att, q_att)
    n_frames = v_prime.shape[0]
    masks: list[ProposalMask] = []
    feats: list[torch.Tensor] = []
    for c, w in pairs:
        w = max(w, model.proposer.w_min)
        bm = base_mask(c, w, model.proposer.gauss_sigma, n_frames)
        pm = flatten_and_normalize(bm, c, w, n_frames)
        masks.append(pm)
        feats.append(v_prime * pm.mask.unsqueeze(1))
    ones = torch.ones(len(pairs), dtype=v_prime.dtype)
    pset = ProposalSet(p_alpha=len(pairs), masks=masks, features=feats,
                       g=ones, gates=ones)
    return pset, v_prime


def _scene_count(query: QueryRecord, corpus: AnnotationCorpus, source: str,
                 alphas: dict[str, int],
                 oracle: OracleAnnotations | None) -> int:
    if source == "estimate":
        return alphas[query.video_id]
    if source == "gt":
        return complexity.gt_scene_count(find_queries(query.video_id, corpus))
    if source == "oracle":
        if oracle is None:
            raise EvalError("scene_source=oracle needs oracle annotations")
        return oracle.scene_count(query.video_id)
    raise EvalError(f"unknown scene_source {source!r}")


def evaluate_corpus(model: MomentModel, corpus: AnnotationCorpus, cfg: RunConfig,
                    strategy: str = "adaptive", scene_source: str | None = None,
                    oracle: OracleAnnotations | None = None) -> EvalReport:
    """Score every query, rank spans, aggregate recalls/mIoU/heatmap.

    The model's complexity input always comes from the annotation-based
    estimator; scene_source only controls the heatmap's scene axis. Ranking
    scores average the masked-token loss over every maskable token, and
    frame masking is seeded per query_id, so reports are order-independent
    and byte-identical across runs.
    """
    scene_source = scene_source or cfg.scene_source
    kind, params = parse_strategy(strategy)
    alphas = {v.video_id: complexity.estimate(v.video_id, corpus, cfg.k_max).alpha
              for v in corpus.videos if find_queries(v.video_id, corpus)}
    max_n = max(cfg.eval_ns)
    results: list[QueryResult] = []
    model.eval()
    with torch.no_grad():
        for query in corpus.queries:
            if query.gt_span is None:
                raise EvalError(f"query {query.query_id!r} has no gt_span")
            video = corpus.video(query.video_id)
            alpha = alphas[query.video_id]
            token_ids = corpus.token_ids(query.tokens)
            gen = make_generator(cfg.seed, f"eval-mask:{query.query_id}")
            if kind == "adaptive":
                pset, _, q_enc = model(video.features, token_ids, alpha,
                                       generator=None)
            else:
                v_enc = model.encode_video(video.features)
                q_enc = model.encode_query(token_ids)
                v_att, q_att = model.interact(v_enc, q_enc)
                pairs = strategy_centers_widths(kind, params, video.duration)
                pset, _ = _strategy_proposals(model, v_att, q_att, alpha, pairs)
            _, per_mqr_t = swept_mqr(model, query, token_ids, pset.features,
                                     cfg.mask_token_id)
            masked = [sample_masked_positions(pm.st_idx, pm.ed_idx,
                                              cfg.mvr_rate, gen)
                      for pm in pset.masks]
            _, per_mvr_t = mvr_loss(model.regressor, q_enc, pset.features, masked)
            per_mqr = [float(x) for x in per_mqr_t]
            per_mvr = [float(x) for x in per_mvr_t]
            spans = predict_span(pset, per_mqr, per_mvr, video.duration)
            ious = [iou(s, query.gt_span) for s in spans]
            results.append(QueryResult(
                query_id=query.query_id, video_id=query.video_id,
                scene_count=_scene_count(query, corpus, scene_source, alphas, oracle),
                proposal_count=pset.p_alpha,
                spans=spans[:max(max_n, 1)], ious=ious[:max(max_n, 1)],
                gt_span=query.gt_span))

    preds = [r.spans for r in results]
    gts = [r.gt_span for r in results]
    recalls = {f"R@{n},IoU={m:g}": recall_at(preds, gts, n, m)
               for n in cfg.eval_ns for m in cfg.eval_iou_thresholds}
    heat = mismatch_heatmap([(r.scene_count, r.proposal_count, r.ious[0])
                             for r in results])
    return EvalReport(strategy=strategy, scene_source=scene_source,
                      results=results, recalls=recalls,
                      miou=mean_iou(preds, gts), heatmap=heat,
                      config_digest=cfg.digest())
