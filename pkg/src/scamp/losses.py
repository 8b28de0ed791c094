"""Training losses and the span-ranking inference rule.

Four terms per (video, query) step: masked-query reconstruction (cross
entropy of a masked noun/verb token decoded from each proposal's features),
masked-video reconstruction (squared L2 inpainting of zeroed in-span frame
rows), a video-level hinge against complement-mask negatives, and a
corpus-level hinge against cached hard-negative videos. The total is scaled
by gamma/(1+e^-alpha) so complex videos carry more weight. At inference,
proposals are ranked ascending by their reconstruction losses and turned
into clamped [start, end] spans in seconds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch

from .corpus import QueryRecord, VideoRecord
from .model import CrossModalDecoder, FrameRegressor, MomentModel
from .proposals import ProposalSet

logger = logging.getLogger(__name__)

DEFAULT_DELTA1 = 0.1
DEFAULT_DELTA2 = 0.5
DEFAULT_GAMMA = 0.5
DEFAULT_MVR_RATE = 0.1
MASKABLE_TAGS = ("NOUN", "VERB")


class LossInputError(ValueError):
    """A loss was called with no usable targets."""


@dataclass
class MaskedQuery:
    masked_ids: list[int]  # token ids with targets replaced by the mask id
    target_positions: list[int]
    target_ids: list[int]

    def __post_init__(self) -> None:
        if not self.target_positions:
            raise LossInputError("masked query needs at least one target position")
        if len(self.target_positions) != len(self.target_ids):
            raise LossInputError("target positions and ids must align")


@dataclass
class MaskedProposal:
    positions: list[int]  # zeroed frame rows, all inside [st_idx, ed_idx]

    def __post_init__(self) -> None:
        if not self.positions:
            raise LossInputError("masked proposal needs at least one position")


@dataclass
class LossReport:
    l_mqr: float
    l_mvr: float
    l_vid: float
    l_cps: float
    total: float
    per_mqr: list[float] = field(default_factory=list)
    per_mvr: list[float] = field(default_factory=list)


def sample_masked_query(query: QueryRecord, token_ids: list[int],
                        mask_token_id: int,
                        generator: torch.Generator) -> MaskedQuery:
    """Mask one uniformly chosen NOUN/VERB token (fallback: any token)."""
    cands = [i for i, tag in enumerate(query.pos_tags) if tag in MASKABLE_TAGS]
    if not cands:
        cands = list(range(len(token_ids)))
    pick = cands[int(torch.randint(len(cands), (1,), generator=generator))]
    masked = list(token_ids)
    target = masked[pick]
    masked[pick] = mask_token_id
    return MaskedQuery(masked, [pick], [target])


def enumerate_masked_queries(query: QueryRecord, token_ids: list[int],
                             mask_token_id: int) -> list[MaskedQuery]:
    """One masked variant per NOUN/VERB position (fallback: every position)."""
    cands = [i for i, tag in enumerate(query.pos_tags) if tag in MASKABLE_TAGS]
    if not cands:
        cands = list(range(len(token_ids)))
    variants = []
    for pick in cands:
        masked = list(token_ids)
        target = masked[pick]
        masked[pick] = mask_token_id
        variants.append(MaskedQuery(masked, [pick], [target]))
    return variants


def sample_masked_positions(st_idx: int, ed_idx: int, rate: float,
                            generator: torch.Generator) -> MaskedProposal:
    """Mask each in-span frame independently at `rate`; always at least one."""
    n = ed_idx - st_idx + 1
    draw = torch.rand(n, dtype=torch.float64, generator=generator) < rate
    positions = [st_idx + i for i in range(n) if bool(draw[i])]
    if not positions:
        positions = [st_idx + int(torch.randint(n, (1,), generator=generator))]
    return MaskedProposal(positions)


def _decoder_ce(decoder: CrossModalDecoder, q_msk_emb: torch.Tensor,
                feats: torch.Tensor, target_positions: list[int],
                target_ids: list[int]) -> torch.Tensor:
    """Mean cross entropy at the target positions; feats [B, N, d] -> [B]."""
    q_rep = q_msk_emb.unsqueeze(0).expand(feats.shape[0], -1, -1)
    out = decoder(q_rep, feats)  # [B, N_q, d]
    logits = decoder.vocab_head(out[:, target_positions, :])  # [B, T, V]
    logp = torch.log_softmax(logits, dim=-1)
    tgt = torch.as_tensor(target_ids, dtype=torch.long)
    picked = logp.gather(-1, tgt.view(1, -1, 1).expand(feats.shape[0], -1, 1))
    return -picked.squeeze(-1).mean(dim=-1)


def mqr_loss(decoder: CrossModalDecoder, q_msk_emb: torch.Tensor,
             features: list[torch.Tensor], target_positions: list[int],
             target_ids: list[int]) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Masked-token cross entropy per proposal; returns (mean, per-proposal)."""
    if not target_positions:
        raise LossInputError("mqr_loss needs target positions")
    per = _decoder_ce(decoder, q_msk_emb, torch.stack(features), target_positions,
                      target_ids)
    return per.mean(), list(per)


def swept_mqr(model: MomentModel, query: QueryRecord, token_ids: list[int],
              features: list[torch.Tensor],
              mask_token_id: int = 0) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Per-proposal MQR averaged over every maskable token.

    Deterministic expectation of the single-sample training objective; used
    at inference so the ranking does not hinge on which token one random
    draw happens to mask."""
    variants = enumerate_masked_queries(query, token_ids, mask_token_id)
    feats = torch.stack(features)
    per = []
    for mq in variants:
        q_msk_emb = model.encode_query(mq.masked_ids)
        per.append(_decoder_ce(model.decoder, q_msk_emb, feats,
                               mq.target_positions, mq.target_ids))
    per_prop = torch.stack(per).mean(dim=0)
    return per_prop.mean(), list(per_prop)


def mvr_loss(regressor: FrameRegressor, q_emb: torch.Tensor,
             features: list[torch.Tensor],
             masked: list[MaskedProposal]) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Inpainting loss: squared L2 (summed over channels) at zeroed rows,
    averaged over rows, then over proposals. Targets stay graph-connected."""
    if len(features) != len(masked):
        raise LossInputError("one masked-position set per proposal required")
    n_frames = features[0].shape[0]
    keep_rows = []
    for mp in masked:
        keep = torch.ones(n_frames, dtype=features[0].dtype)
        keep[mp.positions] = 0.0
        keep_rows.append(keep)
    stacked = torch.stack(features)  # [P, N_v, d]
    masked_feats = stacked * torch.stack(keep_rows).unsqueeze(-1)
    q_rep = q_emb.unsqueeze(0).expand(stacked.shape[0], -1, -1)
    out = regressor(q_rep, masked_feats)  # [P, N_v, d]
    per = []
    for p, mp in enumerate(masked):
        resid = out[p, mp.positions] - stacked[p, mp.positions]
        per.append((resid**2).sum(dim=-1).mean())
    return torch.stack(per).mean(), per


def video_contrastive(decoder: CrossModalDecoder, q_msk_emb: torch.Tensor,
                      v_prime: torch.Tensor, pset: ProposalSet,
                      target_positions: list[int], target_ids: list[int],
                      l_mqr: torch.Tensor,
                      delta1: float = DEFAULT_DELTA1) -> tuple[torch.Tensor, torch.Tensor]:
    """Hinge against complement-mask negatives: max(l_mqr - L* + delta1, 0)."""
    neg = []
    for pm in pset.masks:
        comp = 1.0 - pm.mask
        if float(comp.detach().max()) < 1e-6:
            logger.debug("proposal covers the whole video; complement negative ~0")
        neg.append(v_prime * comp.unsqueeze(1))
    l_star = _decoder_ce(decoder, q_msk_emb, torch.stack(neg), target_positions,
                         target_ids).mean()
    return torch.relu(l_mqr - l_star + delta1), l_star


def reconstruction_scores(decoder: CrossModalDecoder, q_msk_emb: torch.Tensor,
                          feats_list: list[torch.Tensor], target_positions: list[int],
                          target_ids: list[int]) -> torch.Tensor:
    """Decoder cross entropy per candidate feature matrix; batches same-length
    candidates together. Returns [len(feats_list)]."""
    scores: list[torch.Tensor | None] = [None] * len(feats_list)
    by_len: dict[int, list[int]] = {}
    for i, f in enumerate(feats_list):
        by_len.setdefault(f.shape[0], []).append(i)
    for idxs in by_len.values():
        ce = _decoder_ce(decoder, q_msk_emb, torch.stack([feats_list[i] for i in idxs]),
                         target_positions, target_ids)
        for j, i in enumerate(idxs):
            scores[i] = ce[j]
    return torch.stack(scores)


def corpus_contrastive(decoder: CrossModalDecoder, q_msk_emb: torch.Tensor,
                       negative_feats: list[torch.Tensor],
                       target_positions: list[int], target_ids: list[int],
                       l_mqr: torch.Tensor,
                       delta2: float = DEFAULT_DELTA2) -> torch.Tensor:
    """Hinge against hard-negative videos: max(l_mqr - L_dagger + delta2, 0)."""
    if not negative_feats:
        logger.warning("corpus contrastive called with no negatives; returning 0")
        return torch.zeros((), dtype=l_mqr.dtype)
    l_dagger = reconstruction_scores(decoder, q_msk_emb, negative_feats,
                                     target_positions, target_ids).mean()
    return torch.relu(l_mqr - l_dagger + delta2)


def calibration_weight(alpha: int, gamma: float = DEFAULT_GAMMA) -> float:
    return gamma / (1.0 + math.exp(-float(alpha)))


def calibrated_total(l_mqr, l_mvr, l_vid, l_cps, alpha: int,
                     gamma: float = DEFAULT_GAMMA) -> torch.Tensor:
    """gamma/(1+e^-alpha) * (l_mqr + l_mvr + l_vid + l_cps)."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return calibration_weight(alpha, gamma) * (l_mqr + l_mvr + l_vid + l_cps)


def predict_span(pset: ProposalSet, per_mqr: list[float], per_mvr: list[float],
                 duration: float) -> list[tuple[float, float]]:
    """Spans in seconds, ranked ascending by per-proposal l_mqr + l_mvr.

    Each span is clamp([c - w/2, c + w/2], 0, 1) * duration; sigmoid centers
    and the width floor guarantee start < end after clamping.
    """
    if pset.p_alpha < 1:
        raise LossInputError("predict_span needs at least one proposal")
    scores = [m + v for m, v in zip(per_mqr, per_mvr)]
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    spans = []
    for i in order:
        c = float(pset.masks[i].center.detach())
        w = float(pset.masks[i].width.detach())
        start = min(max(c - w / 2.0, 0.0), 1.0) * duration
        end = min(max(c + w / 2.0, 0.0), 1.0) * duration
        spans.append((start, end))
    return spans


def compute_losses(model: MomentModel, video: VideoRecord, query: QueryRecord,
                   alpha: int, token_ids: list[int], *,
                   generator: torch.Generator,
                   mask_token_id: int = 0,
                   mvr_rate: float = DEFAULT_MVR_RATE,
                   delta1: float = DEFAULT_DELTA1,
                   delta2: float = DEFAULT_DELTA2,
                   gamma: float = DEFAULT_GAMMA,
                   negatives: list | None = None,
                   include_corpus_loss: bool = False,
                   relaxed: bool = False,
                   count_noise: bool = True):
    """One full loss evaluation for a (video, query) pair.

    Returns (total tensor for backward, LossReport, ProposalSet). negatives
    are raw feature arrays of hard-negative videos; they only contribute when
    include_corpus_loss is set (stage-2 objective). count_noise=False selects
    the proposal count by noise-free argmax (the inference rule) while mask
    sampling stays driven by `generator`.
    """
    mq = sample_masked_query(query, token_ids, mask_token_id, generator)
    pset, v_prime, q_enc = model(video.features, token_ids, alpha,
                                 generator=generator if count_noise else None,
                                 relaxed=relaxed)
    q_msk_emb = model.encode_query(mq.masked_ids)

    l_mqr, per_mqr = mqr_loss(model.decoder, q_msk_emb, pset.features,
                              mq.target_positions, mq.target_ids)
    masked = [sample_masked_positions(pm.st_idx, pm.ed_idx, mvr_rate, generator)
              for pm in pset.masks]
    l_mvr, per_mvr = mvr_loss(model.regressor, q_enc, pset.features, masked)
    l_vid, _ = video_contrastive(model.decoder, q_msk_emb, v_prime, pset,
                                 mq.target_positions, mq.target_ids, l_mqr, delta1)
    if include_corpus_loss:
        neg_feats = [model.encode_video(nf) for nf in (negatives or [])]
        l_cps = corpus_contrastive(model.decoder, q_msk_emb, neg_feats,
                                   mq.target_positions, mq.target_ids, l_mqr, delta2)
    else:
        l_cps = torch.zeros((), dtype=l_mqr.dtype)

    total = calibrated_total(l_mqr, l_mvr, l_vid, l_cps, alpha, gamma)
    report = LossReport(
        l_mqr=float(l_mqr.detach()), l_mvr=float(l_mvr.detach()),
        l_vid=float(l_vid.detach()), l_cps=float(l_cps.detach()),
        total=float(total.detach()),
        per_mqr=[float(x.detach()) for x in per_mqr],
        per_mvr=[float(x.detach()) for x in per_mvr],
    )
    return total, report, pset
