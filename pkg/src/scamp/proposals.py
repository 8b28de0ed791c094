"""Complexity-adaptive proposal generation.

A learnable codebook row (picked by the video's scene complexity) attends
jointly with video and query features; from the attended summary the module
selects how many proposals to emit (straight-through Gumbel over the integer
range [p_min, p_max]) and regresses a (center, width) pair per proposal slot.
Each pair becomes a Gaussian frame mask whose in-span values are flattened to
their mean and peak-normalized to 1, and proposal features are the video
features row-scaled by that mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .blocks import (DTYPE, AttentionBlock, DimensionError, check_finite,
                     gumbel_softmax, init_linear)

DEFAULT_P_MIN = 5
DEFAULT_P_MAX = 14
DEFAULT_GAUSS_SIGMA = 8.0
DEFAULT_W_MIN = 0.05


@dataclass
class ProposalMask:
    center: torch.Tensor  # scalar in (0,1), graph-connected
    width: torch.Tensor  # scalar in [w_min, 1]
    st_idx: int  # first in-span frame index, 0-based
    ed_idx: int  # last in-span frame index, st_idx <= ed_idx <= n_frames-1
    mask: torch.Tensor  # [n_frames], values in [0,1], flat inside the span


@dataclass
class ProposalSet:
    p_alpha: int
    masks: list[ProposalMask]
    features: list[torch.Tensor]  # each [n_frames, d] = v row-scaled by mask
    g: torch.Tensor  # count selection vector [n]
    gates: torch.Tensor  # per-slot scalars, exactly 1.0 on hard-selected slots


def _scalar(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def base_mask(center, width, gauss_sigma: float, n_frames: int) -> torch.Tensor:
    """Gaussian over positions i/n_frames, i = 1..n_frames, spread width/sigma."""
    c = torch.as_tensor(center, dtype=DTYPE)
    w = torch.as_tensor(width, dtype=DTYPE)
    if _scalar(w) <= 0 or gauss_sigma <= 0:
        raise ValueError(f"width and gauss_sigma must be positive, got {_scalar(w)}, {gauss_sigma}")
    pos = torch.arange(1, n_frames + 1, dtype=DTYPE) / n_frames
    spread = w / gauss_sigma
    return torch.exp(-((pos - c) ** 2) / (2.0 * spread**2)) / (math.sqrt(2.0 * math.pi) * spread)


def span_indices(center: float, width: float, n_frames: int) -> tuple[int, int]:
    st = min(max(math.floor(n_frames * (center - width / 2.0)), 0), n_frames - 1)
    ed = min(max(math.ceil(n_frames * (center + width / 2.0)) - 1, st), n_frames - 1)
    return st, ed


def flatten_and_normalize(m: torch.Tensor, center, width, n_frames: int) -> ProposalMask:
    """Replace in-span values by their mean, then scale the mask to peak 1.

    Differentiable through both the mean substitution and the max scaling.
    """
    if m.shape != (n_frames,):
        raise DimensionError(f"mask shape {tuple(m.shape)} != ({n_frames},)")
    c = torch.as_tensor(center, dtype=DTYPE)
    w = torch.as_tensor(width, dtype=DTYPE)
    st, ed = span_indices(_scalar(c), _scalar(w), n_frames)
    region_mean = m[st:ed + 1].mean()
    flat = torch.cat([m[:st], region_mean.expand(ed - st + 1), m[ed + 1:]])
    flat = flat / flat.max()
    return ProposalMask(center=c, width=w, st_idx=st, ed_idx=ed, mask=flat)


class ProposalGenerator(nn.Module):
    """Codebook + interaction + count selection + per-slot span regression."""

    def __init__(self, dim: int, k_max: int = 12,
                 p_min: int = DEFAULT_P_MIN, p_max: int = DEFAULT_P_MAX,
                 gauss_sigma: float = DEFAULT_GAUSS_SIGMA, w_min: float = DEFAULT_W_MIN,
                 tau: float = 1.0, n_heads: int = 4, ff_mult: int = 2,
                 gen: torch.Generator | None = None):
        super().__init__()
        if not (1 <= p_min <= p_max):
            raise ValueError(f"need 1 <= p_min <= p_max, got {p_min}, {p_max}")
        if k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {k_max}")
        self.dim = dim
        self.k_max = k_max
        self.p_min = p_min
        self.p_max = p_max
        self.n_counts = p_max - p_min + 1
        self.gauss_sigma = gauss_sigma
        self.w_min = w_min
        self.tau = tau
        scale = 1.0 / math.sqrt(dim)
        self.codebook = nn.Parameter(torch.empty(k_max, dim, dtype=DTYPE))
        # Unit-scale slot queries: slots must start spread out so the per-slot
        # (center, width) regressions cover distinct spans from step 0.
        self.slot_queries = nn.Parameter(torch.empty(p_max, dim, dtype=DTYPE))
        with torch.no_grad():
            self.codebook.normal_(0.0, scale, generator=gen)
            self.slot_queries.normal_(0.0, 1.0, generator=gen)
        self.interact_block = AttentionBlock(dim, n_heads, ff_mult, gen=gen)
        self.count_hidden = init_linear(nn.Linear(dim, dim, dtype=DTYPE), gen) \
            if gen is not None else nn.Linear(dim, dim, dtype=DTYPE)
        self.count_out = init_linear(nn.Linear(dim, self.n_counts, dtype=DTYPE), gen) \
            if gen is not None else nn.Linear(dim, self.n_counts, dtype=DTYPE)
        self.span_head = init_linear(nn.Linear(dim, 2, dtype=DTYPE), gen) \
            if gen is not None else nn.Linear(dim, 2, dtype=DTYPE)
        self.register_buffer("count_values",
                             torch.arange(p_min, p_max + 1, dtype=DTYPE))

    def complexity_vector(self, alpha: int) -> torch.Tensor:
        """Codebook row for complexity alpha (1-indexed, clamped to k_max)."""
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {alpha}")
        return self.codebook[min(alpha, self.k_max) - 1]

    def interact(self, z: torch.Tensor, v: torch.Tensor, q: torch.Tensor):
        """Joint attention over [z || v || q]; returns the three segments."""
        if z.shape != (self.dim,) or v.shape[-1] != self.dim or q.shape[-1] != self.dim:
            raise DimensionError("interact expects z [d], v [N_v, d], q [N_q, d]")
        n_v = v.shape[0]
        seq = torch.cat([z.unsqueeze(0), v, q], dim=0)
        out = self.interact_block(seq)
        return out[0], out[1:1 + n_v], out[1 + n_v:]

    def count_logits(self, z_prime: torch.Tensor) -> torch.Tensor:
        return self.count_out(torch.relu(self.count_hidden(z_prime)))

    def select_count(self, z_prime: torch.Tensor,
                     generator: torch.Generator | None = None,
                     relaxed: bool = False) -> tuple[int, torch.Tensor]:
        """Pick the proposal count over {p_min..p_max}.

        Hard mode returns the straight-through one-hot g and the integer it
        encodes. relaxed=True returns the noise-free tau-softmax instead and
        reports p_max so every slot stays live (used for gradient checking).
        """
        logits = self.count_logits(z_prime)
        if relaxed:
            return self.p_max, torch.softmax(logits / self.tau, dim=-1)
        g = gumbel_softmax(logits, self.tau, generator)
        p_alpha = int(round(float((g.detach() * self.count_values).sum())))
        return p_alpha, g

    def regress_center_width(self, z_prime: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-slot (center, width), sigmoid-squashed; width clamped to [w_min, 1]."""
        cw = torch.sigmoid(self.span_head(z_prime.unsqueeze(0) + self.slot_queries))
        centers = cw[:, 0]
        widths = cw[:, 1].clamp(self.w_min, 1.0)
        return centers, widths

    def slot_gates(self, g: torch.Tensor, p_alpha: int) -> torch.Tensor:
        """Per-slot suffix sums of g: slot j is live iff the chosen count > j.

        With a hard one-hot g the gate is exactly 1.0 on the first p_alpha
        slots, so multiplying features by it changes nothing forward while
        routing gradient back into the count head.
        """
        suffix = torch.flip(torch.cumsum(torch.flip(g, [0]), 0), [0])
        idx = [min(max(j + 1 - self.p_min, 0), self.n_counts - 1) for j in range(p_alpha)]
        return suffix[idx]

    def build_proposals(self, v_prime: torch.Tensor, z_prime: torch.Tensor,
                        generator: torch.Generator | None = None,
                        relaxed: bool = False) -> ProposalSet:
        n_frames = v_prime.shape[0]
        p_alpha, g = self.select_count(z_prime, generator, relaxed)
        centers, widths = self.regress_center_width(z_prime)
        gates = self.slot_gates(g, p_alpha)
        masks: list[ProposalMask] = []
        feats: list[torch.Tensor] = []
        for p in range(p_alpha):
            bm = base_mask(centers[p], widths[p], self.gauss_sigma, n_frames)
            pm = flatten_and_normalize(bm, centers[p], widths[p], n_frames)
            masks.append(pm)
            feats.append(gates[p] * v_prime * pm.mask.unsqueeze(1))
        check_finite(feats[0], "proposal features")
        return ProposalSet(p_alpha=p_alpha, masks=masks, features=feats, g=g, gates=gates)
