"""Run configuration: one JSON document covering corpus, model, training and
evaluation settings. Unknown keys are rejected so stale config files fail
loudly, and a sha256 digest of the canonical form is stamped into checkpoints
and reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Config file is malformed, has unknown keys, or fails validation."""


@dataclass
class RunConfig:
    seed: int
    # model widths
    dim: int = 64
    n_heads: int = 4
    ff_mult: int = 2
    # proposal generation
    k_max: int = 12
    p_min: int = 5
    p_max: int = 14
    gauss_sigma: float = 8.0
    w_min: float = 0.05
    tau: float = 1.0
    # losses
    delta1: float = 0.1
    delta2: float = 0.5
    gamma: float = 0.5
    mvr_rate: float = 0.1
    mask_token_id: int = 0
    # corpus
    vocab_size: int = 8000
    max_query_len: int = 20
    # training
    lr: float = 1e-3
    steps_stage1: int = 2000
    steps_stage2: int = 2000
    k_negatives: int = 15
    grad_accum: int = 1
    # evaluation
    eval_iou_thresholds: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)
    eval_ns: tuple[int, ...] = (1, 5)
    scene_source: str = "estimate"

    def validate(self) -> None:
        if self.dim < 1 or self.dim % self.n_heads:
            raise ConfigError(f"dim {self.dim} must be positive and divisible "
                              f"by n_heads {self.n_heads}")
        if not (1 <= self.p_min <= self.p_max):
            raise ConfigError(f"need 1 <= p_min <= p_max, got {self.p_min}, {self.p_max}")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.gauss_sigma <= 0 or self.tau <= 0:
            raise ConfigError("gauss_sigma and tau must be positive")
        if not (0 < self.w_min <= 1):
            raise ConfigError("w_min must be in (0, 1]")
        if not (0 < self.mvr_rate <= 1):
            raise ConfigError("mvr_rate must be in (0, 1]")
        if self.gamma <= 0 or self.delta1 < 0 or self.delta2 < 0:
            raise ConfigError("gamma must be positive, margins nonnegative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.steps_stage1 < 0 or self.steps_stage2 < 0:
            raise ConfigError("step counts must be nonnegative")
        if self.k_negatives < 0:
            raise ConfigError("k_negatives must be nonnegative")
        if self.grad_accum < 1:
            raise ConfigError("grad_accum must be >= 1")
        if self.mask_token_id < 0 or self.mask_token_id >= self.vocab_size:
            raise ConfigError("mask_token_id must index into the vocabulary")
        if self.scene_source not in ("estimate", "gt", "oracle"):
            raise ConfigError(f"scene_source must be estimate|gt|oracle, "
                              f"got {self.scene_source!r}")
        for m in self.eval_iou_thresholds:
            if not (0 <= m < 1):
                raise ConfigError(f"IoU threshold {m} outside [0, 1)")
        for n in self.eval_ns:
            if n < 1:
                raise ConfigError(f"recall top-n {n} must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval_iou_thresholds"] = list(self.eval_iou_thresholds)
        d["eval_ns"] = list(self.eval_ns)
        return d

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise ConfigError("seed is mandatory")
        raw = dict(raw)
        for key in ("eval_iou_thresholds", "eval_ns"):
            if key in raw:
                raw[key] = tuple(raw[key])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply `key=value` strings (values parsed as JSON, else literal)."""
        raw = self.to_dict()
        for item in assignments:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} must look like key=value")
            if key not in raw:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                raw[key] = json.loads(value)
            except json.JSONDecodeError:
                raw[key] = value
        return RunConfig.from_dict(raw)
