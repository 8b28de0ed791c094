"""Shared fixtures: a hand-traceable annotation corpus, tiny synthetic
corpora/configs sized for fast tests, and a numpy reimplementation of the
attention block that serves as an independent forward-pass oracle.
"""

import math

import numpy as np
import pytest

from scamp.config import RunConfig
from scamp.corpus import AnnotationCorpus, QueryRecord, VideoRecord
from scamp.synthetic import SyntheticSpec, generate_synthetic


def make_video(video_id: str, n_frames: int = 8, feat_dim: int = 8,
               duration: float = 30.0, seed: int = 0) -> VideoRecord:
    rng = np.random.default_rng(seed)
    feats = rng.normal(0.0, 1.0, size=(n_frames, feat_dim))
    return VideoRecord(video_id=video_id, features=feats, duration=duration)


@pytest.fixture
def traced_corpus() -> AnnotationCorpus:
    """One video, four queries whose noun sets are
    {laptop, stair}, {food, stair}, {food, hand}, {food}.

    Redundancy removal must delete the degree-3 set {food, stair} first,
    then the tied {food} (latest wins), leaving complexity 2.
    """
    video = make_video("vid0")
    queries = [
        QueryRecord("q1", "vid0", ["person", "opens", "the", "laptop", "on", "stair"],
                    ["NOUN", "VERB", "OTHER", "NOUN", "OTHER", "NOUN"], (0.0, 10.0)),
        QueryRecord("q2", "vid0", ["person", "puts", "food", "on", "stair"],
                    ["NOUN", "VERB", "NOUN", "OTHER", "NOUN"], (2.0, 12.0)),
        QueryRecord("q3", "vid0", ["someone", "holds", "food", "in", "hand"],
                    ["NOUN", "VERB", "NOUN", "OTHER", "NOUN"], (18.0, 30.0)),
        QueryRecord("q4", "vid0", ["person", "eats", "the", "food"],
                    ["NOUN", "VERB", "OTHER", "NOUN"], (20.0, 30.0)),
    ]
    return AnnotationCorpus([video], queries)


@pytest.fixture(scope="session")
def tiny_spec() -> SyntheticSpec:
    return SyntheticSpec(seed=5, n_videos=6, n_frames=8, feat_dim=8,
                         duration=24.0, scene_range=(1, 3))


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    corpus, oracle = generate_synthetic(tiny_spec)
    return corpus, oracle


@pytest.fixture(scope="session")
def tiny_cfg() -> RunConfig:
    return RunConfig(seed=11, dim=16, n_heads=2, steps_stage1=12,
                     steps_stage2=12, k_negatives=3)


def np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray,
                  eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_attention_forward(block, x: np.ndarray) -> np.ndarray:
    """Numpy reimplementation of AttentionBlock.forward for [L, d] inputs."""
    p = {k: v.detach().numpy() for k, v in block.state_dict().items()}

    def lin(name, t):
        return t @ p[f"{name}.weight"].T + p[f"{name}.bias"]

    def mha(t):
        length = t.shape[0]
        def split(m):  # [L, d] -> [heads, L, head_dim]
            return m.reshape(length, block.n_heads, block.head_dim).transpose(1, 0, 2)
        q, k, v = split(lin("q_proj", t)), split(lin("k_proj", t)), split(lin("v_proj", t))
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(block.head_dim)
        ctx = np_softmax(scores) @ v
        return lin("o_proj", ctx.transpose(1, 0, 2).reshape(length, block.dim))

    def ff(t):
        return lin("ff2", np.maximum(lin("ff1", t), 0.0))

    if block.post_norm:
        h = np_layer_norm(x + mha(x), p["ln1_g"], p["ln1_b"])
        return np_layer_norm(h + ff(h), p["ln2_g"], p["ln2_b"])
    h = x + mha(np_layer_norm(x, p["ln1_g"], p["ln1_b"]))
    return h + ff(np_layer_norm(h, p["ln2_g"], p["ln2_b"]))
