"""Differentiable numeric kernel shared by the whole pipeline.

Thin layer over torch (CPU, float64 throughout): a pre-norm transformer
block, sinusoidal positional encoding, layer normalization, a
straight-through Gumbel-Softmax whose forward value is an exact one-hot, and
a finite-difference gradient checker that serves as the independent oracle
for reverse-mode gradients. All randomness goes through explicit
torch.Generator objects derived from (seed, purpose, index) so every run is
reproducible.
"""

from __future__ import annotations

import hashlib
import math

import torch
from torch import nn

DTYPE = torch.float64
LN_EPS = 1e-5


class NumericError(ArithmeticError):
    """A forward or backward pass produced NaN/Inf."""


class DimensionError(ValueError):
    """Tensor shapes violate an op's contract."""


def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Stable 63-bit stream seed from (seed, purpose, index) via sha256."""
    digest = hashlib.sha256(f"{seed}:{purpose}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def make_generator(seed: int, purpose: str, index: int = 0) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, purpose, index))
    return gen


def check_finite(x: torch.Tensor, context: str = "tensor") -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NumericError(f"non-finite values in {context}")
    return x


def init_linear(lin: nn.Linear, gen: torch.Generator) -> nn.Linear:
    """Uniform(-1/sqrt(fan_in), +) init drawn from an explicit generator."""
    bound = 1.0 / math.sqrt(lin.weight.shape[1])
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=gen)
        if lin.bias is not None:
            lin.bias.uniform_(-bound, bound, generator=gen)
    return lin


def positional_encoding(length: int, dim: int) -> torch.Tensor:
    """Standard sinusoidal table [length, dim]; dim must be even."""
    if length < 1 or dim < 1:
        raise DimensionError(f"bad positional encoding shape ({length}, {dim})")
    if dim % 2:
        raise DimensionError(f"positional encoding dim must be even, got {dim}")
    pos = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=DTYPE) * (-math.log(10000.0) / dim))
    table = torch.empty(length, dim, dtype=DTYPE)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)
    return table


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-row normalization (mean 0, variance 1 before affine), eps 1e-5."""
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise DimensionError("layer_norm parameter width mismatch")
    return torch.nn.functional.layer_norm(x, (x.shape[-1],), gamma, beta, eps=LN_EPS)


def gumbel_softmax(logits: torch.Tensor, tau: float = 1.0,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Hard one-hot forward, soft-tau backward (straight-through).

    The forward value is an exact one-hot (y_hard + (y_soft - y_soft.detach())
    cancels to 0.0 elementwise), so it sums to exactly 1 with a single nonzero
    entry. generator=None skips the Gumbel noise: deterministic argmax, used
    at inference.
    """
    if logits.shape[-1] < 1:
        raise DimensionError("gumbel_softmax needs at least one logit")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    check_finite(logits, "gumbel_softmax logits")
    if generator is not None:
        u = torch.rand(logits.shape, dtype=logits.dtype, generator=generator)
        u = u.clamp_(1e-12, 1.0 - 1e-12)
        noisy = logits + (-torch.log(-torch.log(u)))
    else:
        noisy = logits
    y_soft = torch.softmax(noisy / tau, dim=-1)
    index = noisy.argmax(dim=-1, keepdim=True)
    y_hard = torch.zeros_like(y_soft).scatter_(-1, index, 1.0)
    return y_hard + (y_soft - y_soft.detach())


class AttentionBlock(nn.Module):
    """Transformer layer, pre-norm by default: x + MHA(LN(x)), then
    h + FF(LN(h)). With post_norm=True the classic order is used instead:
    LN(x + MHA(x)), then LN(h + FF(h)).

    The choice matters when row magnitudes carry meaning: layer norm is
    scale-invariant per row, so a pre-norm block treats an attenuated row
    and a full-strength row identically inside attention, while a post-norm
    block feeds the raw magnitudes to the Q/K/V projections.

    Accepts [L, d] or [B, L, d]; shape is preserved. No positional encoding
    inside, so the op is permutation-equivariant over rows.
    """

    def __init__(self, dim: int, n_heads: int, ff_mult: int = 2,
                 gen: torch.Generator | None = None, post_norm: bool = False):
        super().__init__()
        if dim % n_heads:
            raise DimensionError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.post_norm = post_norm
        kw = {"dtype": DTYPE}
        self.q_proj = nn.Linear(dim, dim, **kw)
        self.k_proj = nn.Linear(dim, dim, **kw)
        self.v_proj = nn.Linear(dim, dim, **kw)
        self.o_proj = nn.Linear(dim, dim, **kw)
        self.ff1 = nn.Linear(dim, ff_mult * dim, **kw)
        self.ff2 = nn.Linear(ff_mult * dim, dim, **kw)
        self.ln1_g = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln1_b = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.ln2_g = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln2_b = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        if gen is not None:
            for lin in (self.q_proj, self.k_proj, self.v_proj, self.o_proj,
                        self.ff1, self.ff2):
                init_linear(lin, gen)

    def _attend(self, x: torch.Tensor) -> torch.Tensor:
        b, length, _ = x.shape
        def split(t):  # [B, L, d] -> [B, heads, L, head_dim]
            return t.view(b, length, self.n_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        ctx = torch.softmax(scores, dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(b, length, self.dim)
        return self.o_proj(ctx)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise DimensionError(
                f"expected [L, {self.dim}] or [B, L, {self.dim}], got {tuple(x.shape)}"
            )
        if self.post_norm:
            h = layer_norm(x + self._attend(x), self.ln1_g, self.ln1_b)
            h = layer_norm(h + self.ff2(torch.relu(self.ff1(h))),
                           self.ln2_g, self.ln2_b)
        else:
            h = x + self._attend(layer_norm(x, self.ln1_g, self.ln1_b))
            h = h + self.ff2(torch.relu(self.ff1(layer_norm(h, self.ln2_g, self.ln2_b))))
        check_finite(h, "attention block output")
        return h.squeeze(0) if squeeze else h


def grad_check(f, params, h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    f is a no-argument closure over params returning a scalar tensor. The
    relative error per coordinate is |a - n| / max(|a|, |n|, 1e-2), which
    keeps near-zero gradients from inflating the ratio.
    """
    params = [p for p in params]
    for p in params:
        p.grad = None
    out = f()
    if out.dim() != 0:
        raise DimensionError("grad_check needs a scalar-valued function")
    check_finite(out, "grad_check forward")
    out.backward()
    max_rel = 0.0
    with torch.no_grad():
        for p in params:
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            flat = p.data.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = f().item()
                flat[i] = orig - h
                f_minus = f().item()
                flat[i] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise NumericError("non-finite value during finite differencing")
                numeric = (f_plus - f_minus) / (2.0 * h)
                analytic = gflat[i].item()
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)
                max_rel = max(max_rel, rel)
    return max_rel
