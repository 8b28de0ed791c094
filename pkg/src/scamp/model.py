"""Model composition: encoders, cross-modal interaction, proposal generation,
and the reconstruction heads.

Video features are projected to the model width; queries are embedded from
the corpus vocabulary. Both get sinusoidal positions and layer normalization,
then one attention block over the concatenated [video || query] sequence
produces attended features. The proposal generator consumes those together
with the complexity codebook row. Two heads drive the losses: a cross-modal
decoder that predicts the identity of a masked query token from proposal
features, and a frame regressor that inpaints zeroed proposal-feature rows.
"""

from __future__ import annotations

import torch
from torch import nn

from .blocks import (DTYPE, AttentionBlock, DimensionError, init_linear,
                     layer_norm, make_generator, positional_encoding)
from .proposals import ProposalGenerator, ProposalSet


class CrossModalDecoder(nn.Module):
    """Attention over [query tokens || frame features] with a vocab head.

    The block is post-norm: frame rows arrive scaled by a proposal mask, and
    a pre-norm block would renormalize every row to full strength before
    attention, erasing the mask. Post-norm keeps attenuated rows attenuated.
    """

    def __init__(self, dim: int, vocab_size: int, n_heads: int, ff_mult: int,
                 gen: torch.Generator | None = None):
        super().__init__()
        self.dim = dim
        self.vocab_size = vocab_size
        self.block = AttentionBlock(dim, n_heads, ff_mult, gen=gen,
                                    post_norm=True)
        self.vocab_head = nn.Linear(dim, vocab_size, dtype=DTYPE)
        if gen is not None:
            init_linear(self.vocab_head, gen)

    def forward(self, q_emb: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        """Query-position outputs [..., N_q, d] for inputs [..., N_q|N_v, d]."""
        n_q = q_emb.shape[-2]
        out = self.block(torch.cat([q_emb, feats], dim=-2))
        return out[..., :n_q, :]

    def token_logits(self, q_emb: torch.Tensor, feats: torch.Tensor,
                     position: int) -> torch.Tensor:
        """Vocabulary logits at one query position; [..., vocab_size]."""
        return self.vocab_head(self.forward(q_emb, feats)[..., position, :])


class FrameRegressor(nn.Module):
    """Attention over [query tokens || masked frame features], frame head d->d.

    Post-norm for the same reason as the decoder: zeroed and mask-attenuated
    rows must stay recognizable inside attention.
    """

    def __init__(self, dim: int, n_heads: int, ff_mult: int,
                 gen: torch.Generator | None = None):
        super().__init__()
        self.dim = dim
        self.block = AttentionBlock(dim, n_heads, ff_mult, gen=gen,
                                    post_norm=True)
        self.frame_head = nn.Linear(dim, dim, dtype=DTYPE)
        if gen is not None:
            init_linear(self.frame_head, gen)

    def forward(self, q_emb: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
        """Frame-position outputs [..., N_v, d]."""
        n_q = q_emb.shape[-2]
        out = self.block(torch.cat([q_emb, feats], dim=-2))
        return self.frame_head(out[..., n_q:, :])


class MomentModel(nn.Module):
    """Full pipeline over one (video, query, complexity) triple."""

    def __init__(self, feat_dim: int, vocab_size: int, dim: int = 64,
                 n_heads: int = 4, ff_mult: int = 2, k_max: int = 12,
                 p_min: int = 5, p_max: int = 14, gauss_sigma: float = 8.0,
                 w_min: float = 0.05, tau: float = 1.0, seed: int = 0):
        super().__init__()
        self.feat_dim = feat_dim
        self.vocab_size = vocab_size
        self.dim = dim
        gen = make_generator(seed, "model-init")
        self.video_proj = init_linear(nn.Linear(feat_dim, dim, dtype=DTYPE), gen)
        self.embedding = nn.Parameter(torch.empty(vocab_size, dim, dtype=DTYPE))
        with torch.no_grad():
            self.embedding.normal_(0.0, dim**-0.5, generator=gen)
        self.ln_v_g = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln_v_b = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.ln_q_g = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln_q_b = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.mm_block = AttentionBlock(dim, n_heads, ff_mult, gen=gen)
        self.proposer = ProposalGenerator(
            dim, k_max=k_max, p_min=p_min, p_max=p_max, gauss_sigma=gauss_sigma,
            w_min=w_min, tau=tau, n_heads=n_heads, ff_mult=ff_mult, gen=gen)
        self.decoder = CrossModalDecoder(dim, vocab_size, n_heads, ff_mult, gen=gen)
        self.regressor = FrameRegressor(dim, n_heads, ff_mult, gen=gen)

    def encode_video(self, features) -> torch.Tensor:
        """Raw [N_v, feat_dim] array -> normalized, position-aware [N_v, d]."""
        t = torch.as_tensor(features, dtype=DTYPE)
        if t.dim() != 2 or t.shape[1] != self.feat_dim:
            raise DimensionError(
                f"expected video features [N_v, {self.feat_dim}], got {tuple(t.shape)}")
        x = self.video_proj(t) + positional_encoding(t.shape[0], self.dim)
        return layer_norm(x, self.ln_v_g, self.ln_v_b)

    def encode_query(self, token_ids: list[int]) -> torch.Tensor:
        """Token id list -> normalized, position-aware [N_q, d]."""
        if not token_ids:
            raise DimensionError("query must have at least one token")
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        if int(ids.max()) >= self.vocab_size or int(ids.min()) < 0:
            raise DimensionError("token id outside vocabulary")
        x = self.embedding[ids] + positional_encoding(len(token_ids), self.dim)
        return layer_norm(x, self.ln_q_g, self.ln_q_b)

    def interact(self, v_enc: torch.Tensor, q_enc: torch.Tensor):
        """Joint attention over [video || query]; returns attended segments."""
        n_v = v_enc.shape[0]
        out = self.mm_block(torch.cat([v_enc, q_enc], dim=0))
        return out[:n_v], out[n_v:]

    def propose(self, v_att: torch.Tensor, q_att: torch.Tensor, alpha: int,
                generator: torch.Generator | None = None,
                relaxed: bool = False) -> tuple[ProposalSet, torch.Tensor]:
        """Complexity-conditioned proposals from attended features.

        generator=None selects the proposal count by noise-free argmax (the
        inference rule); a generator gives the stochastic training draw.
        Returns the proposal set and the attended video features it masks.
        """
        z = self.proposer.complexity_vector(alpha)
        z_prime, v_prime, _ = self.proposer.interact(z, v_att, q_att)
        pset = self.proposer.build_proposals(v_prime, z_prime, generator, relaxed)
        return pset, v_prime

    def forward(self, features, token_ids: list[int], alpha: int,
                generator: torch.Generator | None = None,
                relaxed: bool = False):
        """Full pass; returns (proposals, attended video, encoded query)."""
        v_enc = self.encode_video(features)
        q_enc = self.encode_query(token_ids)
        v_att, q_att = self.interact(v_enc, q_enc)
        pset, v_prime = self.propose(v_att, q_att, alpha, generator, relaxed)
        return pset, v_prime, q_enc
