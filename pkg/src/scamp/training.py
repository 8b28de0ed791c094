"""Two-stage training, hard-negative cache construction, and checkpointing.

Stage 1 optimizes the reconstruction losses plus the video-level hinge, one
(video, query) pair per step with Adam. A retrieval pass then scores every
corpus video against each query by decoder reconstruction loss and caches
the k lowest-loss non-ground-truth videos. Stage 2 continues from the
stage-1 weights with the corpus-level hinge added. The whole run is a pure
function of (corpus, config): every random draw comes from generators
derived from the config seed.

Checkpoints are a JSON manifest (version, config digest, model hyperparams,
tensor shapes and byte offsets) next to a little-endian float64 blob.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import complexity
from .blocks import make_generator
from .config import RunConfig
from .corpus import AnnotationCorpus, find_queries
from .losses import compute_losses, reconstruction_scores, sample_masked_query
from .model import MomentModel

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainerError(RuntimeError):
    """Corpus/config combination cannot be trained."""


class TrainingDivergedError(TrainerError):
    """A loss went non-finite; training aborted."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, truncated, or shaped wrong."""


@dataclass
class MetricsRow:
    step: int
    stage: int
    l_mqr: float
    l_mvr: float
    l_vid: float
    l_cps: float
    total: float


def write_metrics(rows: list[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "stage", "l_mqr", "l_mvr", "l_vid", "l_cps", "total"])
        for r in rows:
            wr.writerow([r.step, r.stage, f"{r.l_mqr:.10f}", f"{r.l_mvr:.10f}",
                         f"{r.l_vid:.10f}", f"{r.l_cps:.10f}", f"{r.total:.10f}"])


@dataclass
class NegativeCache:
    negatives: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for qid, vids in self.negatives.items():
            if len(set(vids)) != len(vids):
                raise ValueError(f"duplicate negatives for query {qid!r}")

    def for_query(self, query_id: str) -> list[str]:
        return self.negatives.get(query_id, [])

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.negatives, fh, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, path: str | Path) -> "NegativeCache":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def corpus_feat_dim(corpus: AnnotationCorpus) -> int:
    dims = {v.feat_dim for v in corpus.videos}
    if len(dims) != 1:
        raise TrainerError(f"videos disagree on feature dim: {sorted(dims)}")
    return dims.pop()


def build_model(corpus: AnnotationCorpus, cfg: RunConfig) -> MomentModel:
    cfg.validate()
    return MomentModel(
        feat_dim=corpus_feat_dim(corpus), vocab_size=len(corpus.vocab),
        dim=cfg.dim, n_heads=cfg.n_heads, ff_mult=cfg.ff_mult, k_max=cfg.k_max,
        p_min=cfg.p_min, p_max=cfg.p_max, gauss_sigma=cfg.gauss_sigma,
        w_min=cfg.w_min, tau=cfg.tau, seed=cfg.seed)


def video_alphas(corpus: AnnotationCorpus, k_max: int) -> dict[str, int]:
    """Scene complexity per video, computed once from annotations."""
    return {v.video_id: complexity.estimate(v.video_id, corpus, k_max).alpha
            for v in corpus.videos if find_queries(v.video_id, corpus)}


def _train_stage(model: MomentModel, corpus: AnnotationCorpus, cfg: RunConfig,
                 stage: int, steps: int, alphas: dict[str, int],
                 cache: NegativeCache | None, step_offset: int) -> list[MetricsRow]:
    if not corpus.queries:
        raise TrainerError("corpus has no queries to train on")
    torch.set_num_threads(1)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched_gen = make_generator(cfg.seed, f"schedule-stage{stage}")
    sample_gen = make_generator(cfg.seed, f"sample-stage{stage}")
    rows: list[MetricsRow] = []
    n_queries = len(corpus.queries)
    for step in range(steps):
        optimizer.zero_grad()
        acc = [0.0] * 5
        for _ in range(cfg.grad_accum):
            query = corpus.queries[int(torch.randint(n_queries, (1,), generator=sched_gen))]
            video = corpus.video(query.video_id)
            negatives = None
            if stage == 2 and cache is not None:
                negatives = [corpus.video(vid).features
                             for vid in cache.for_query(query.query_id)]
            total, report, _ = compute_losses(
                model, video, query, alphas[query.video_id],
                corpus.token_ids(query.tokens), generator=sample_gen,
                mask_token_id=cfg.mask_token_id, mvr_rate=cfg.mvr_rate,
                delta1=cfg.delta1, delta2=cfg.delta2, gamma=cfg.gamma,
                negatives=negatives, include_corpus_loss=stage == 2)
            if not math.isfinite(report.total):
                raise TrainingDivergedError(
                    f"non-finite loss at stage {stage} step {step} "
                    f"(query {query.query_id}): {report.total}")
            (total / cfg.grad_accum).backward()
            for i, val in enumerate((report.l_mqr, report.l_mvr, report.l_vid,
                                     report.l_cps, report.total)):
                acc[i] += val / cfg.grad_accum
        optimizer.step()
        rows.append(MetricsRow(step_offset + step, stage, *acc))
        if step % 200 == 0:
            logger.info("stage %d step %d/%d total %.4f", stage, step, steps, acc[4])
    return rows


def train_stage1(corpus: AnnotationCorpus, cfg: RunConfig,
                 model: MomentModel | None = None,
                 alphas: dict[str, int] | None = None) -> tuple[MomentModel, list[MetricsRow]]:
    """Reconstruction + video-level contrastive training from scratch."""
    if model is None:
        model = build_model(corpus, cfg)
    if alphas is None:
        alphas = video_alphas(corpus, cfg.k_max)
    rows = _train_stage(model, corpus, cfg, stage=1, steps=cfg.steps_stage1,
                        alphas=alphas, cache=None, step_offset=0)
    return model, rows


def build_negative_cache(model: MomentModel, corpus: AnnotationCorpus,
                         k: int, cfg: RunConfig) -> NegativeCache:
    """Per query: k non-ground-truth videos with the lowest reconstruction
    loss, scored on encoder-level features with fixed per-query masks.
    Lists are sorted ascending by score with ties broken by video_id."""
    model.eval()
    cache: dict[str, list[str]] = {}
    with torch.no_grad():
        encoded = {v.video_id: model.encode_video(v.features) for v in corpus.videos}
        video_ids = [v.video_id for v in corpus.videos]
        for query in corpus.queries:
            if k == 0:
                cache[query.query_id] = []
                continue
            gen = make_generator(cfg.seed, f"cache-mask:{query.query_id}")
            token_ids = corpus.token_ids(query.tokens)
            mq = sample_masked_query(query, token_ids, cfg.mask_token_id, gen)
            q_msk_emb = model.encode_query(mq.masked_ids)
            scores = reconstruction_scores(
                model.decoder, q_msk_emb, [encoded[vid] for vid in video_ids],
                mq.target_positions, mq.target_ids)
            ranked = sorted(
                ((float(scores[i]), vid) for i, vid in enumerate(video_ids)
                 if vid != query.video_id))
            cache[query.query_id] = [vid for _, vid in ranked[:k]]
    return NegativeCache(cache)


def train_stage2(model: MomentModel, corpus: AnnotationCorpus,
                 cache: NegativeCache, cfg: RunConfig,
                 alphas: dict[str, int] | None = None,
                 step_offset: int | None = None) -> tuple[MomentModel, list[MetricsRow]]:
    """Continue from stage-1 weights with the corpus-level hinge added."""
    if alphas is None:
        alphas = video_alphas(corpus, cfg.k_max)
    offset = cfg.steps_stage1 if step_offset is None else step_offset
    rows = _train_stage(model, corpus, cfg, stage=2, steps=cfg.steps_stage2,
                        alphas=alphas, cache=cache, step_offset=offset)
    return model, rows


def run_full_training(corpus: AnnotationCorpus, cfg: RunConfig
                      ) -> tuple[MomentModel, list[MetricsRow], NegativeCache]:
    """stage 1 -> negative cache -> stage 2; deterministic given the seed."""
    alphas = video_alphas(corpus, cfg.k_max)
    model, rows1 = train_stage1(corpus, cfg, alphas=alphas)
    cache = build_negative_cache(model, corpus, cfg.k_negatives, cfg)
    model, rows2 = train_stage2(model, corpus, cache, cfg, alphas=alphas)
    return model, rows1 + rows2, cache


def _checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".json":
        return p, p.with_suffix(".bin")
    return p.with_suffix(p.suffix + ".json") if p.suffix else Path(str(p) + ".json"), \
        p.with_suffix(p.suffix + ".bin") if p.suffix else Path(str(p) + ".bin")


def save_checkpoint(model: MomentModel, path: str | Path,
                    config_digest: str = "") -> tuple[Path, Path]:
    """Write manifest JSON + little-endian float64 blob; returns both paths."""
    manifest_path, blob_path = _checkpoint_paths(path)
    state = model.state_dict()
    tensors = {}
    offset = 0
    chunks = []
    for name in sorted(state):
        t = state[name].detach().to(torch.float64).contiguous()
        arr = t.numpy().astype("<f8")
        chunks.append(arr.tobytes())
        tensors[name] = {"shape": list(t.shape), "offset": offset, "numel": t.numel()}
        offset += t.numel() * 8
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config_digest": config_digest,
        "dtype": "float64",
        "byte_order": "little",
        "model": {
            "feat_dim": model.feat_dim, "vocab_size": model.vocab_size,
            "dim": model.dim, "n_heads": model.mm_block.n_heads,
            "ff_mult": model.mm_block.ff1.out_features // model.dim,
            "k_max": model.proposer.k_max, "p_min": model.proposer.p_min,
            "p_max": model.proposer.p_max,
            "gauss_sigma": model.proposer.gauss_sigma,
            "w_min": model.proposer.w_min, "tau": model.proposer.tau,
        },
        "tensors": tensors,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read (state dict, manifest); validates version and blob length."""
    manifest_path, blob_path = _checkpoint_paths(path)
    if not manifest_path.exists():
        raise CheckpointError(f"missing manifest {manifest_path}")
    if not blob_path.exists():
        raise CheckpointError(f"missing blob {blob_path}")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {manifest_path}: {exc.msg}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {manifest.get('version')} != {CHECKPOINT_VERSION}")
    blob = blob_path.read_bytes()
    state: dict[str, torch.Tensor] = {}
    for name, meta in manifest["tensors"].items():
        start, numel = meta["offset"], meta["numel"]
        end = start + numel * 8
        if end > len(blob):
            raise CheckpointError(
                f"blob truncated: tensor {name!r} needs bytes up to {end}, "
                f"file has {len(blob)}")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(meta["shape"])
        state[name] = torch.from_numpy(arr.copy())
    return state, manifest


def model_from_checkpoint(path: str | Path, seed: int = 0) -> tuple[MomentModel, dict]:
    """Rebuild the model named by the manifest and load its weights."""
    state, manifest = load_checkpoint(path)
    m = manifest["model"]
    model = MomentModel(
        feat_dim=m["feat_dim"], vocab_size=m["vocab_size"], dim=m["dim"],
        n_heads=m["n_heads"], ff_mult=m["ff_mult"], k_max=m["k_max"],
        p_min=m["p_min"], p_max=m["p_max"], gauss_sigma=m["gauss_sigma"],
        w_min=m["w_min"], tau=m["tau"], seed=seed)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"state does not fit the model: {exc}") from exc
    return model, manifest
