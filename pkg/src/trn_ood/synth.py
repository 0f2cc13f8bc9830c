"""Synthetic text-rich networks for demos, self-checks, and tests.

Features are class-conditional Gaussians (a stand-in for text-encoder
embeddings), edges come from a homophilous two-probability block model,
and optional texts/years make the label-free shift kinds exercisable.
"""

from __future__ import annotations

import numpy as np

from .graph import TrnGraph, make_graph
from .rng import Rng

_WORDS = ("graph", "node", "text", "model", "energy", "signal", "paper",
          "review", "market", "study", "method", "result", "system",
          "network", "feature", "pattern", "topic", "domain")


def make_class_graph(n: int, d: int, num_classes: int, rng: Rng,
                     mean_scale: float = 3.0, noise: float = 1.0,
                     p_in: float = 0.05, p_out: float = 0.005,
                     with_texts: bool = False, with_years: bool = False) -> TrnGraph:
    """Blocky graph with Gaussian class clusters in feature space."""
    labels = np.arange(n, dtype=np.int64) % num_classes
    rng.shuffle(labels)
    means = rng.normal(0.0, mean_scale, size=(num_classes, d))
    feats = means[labels] + rng.normal(0.0, noise, size=(n, d))
    edges = []
    for i in range(n):
        # vectorized Bernoulli over the upper triangle row
        js = np.arange(i + 1, n)
        if js.size == 0:
            continue
        p = np.where(labels[js] == labels[i], p_in, p_out)
        hit = rng.random(js.size) < p
        for j in js[hit]:
            edges.append((i, j))
    edges = np.asarray(edges, dtype=np.int64) if edges else np.zeros((0, 2), np.int64)
    texts = None
    if with_texts:
        texts = []
        for i in range(n):
            k = 4 + int(rng.integers(5))
            words = [_WORDS[int(rng.integers(len(_WORDS)))] for _ in range(k)]
            texts.append(" ".join(words) + ".")
    years = None
    if with_years:
        years = 2000 + (np.arange(n, dtype=np.int64) * 20) // n
    return make_graph(feats.astype(np.float32), edges, labels, num_classes,
                      texts=texts, years=years)


def separable_two_class(n: int = 60, d: int = 8, rng: Rng | None = None) -> TrnGraph:
    """Linearly separable two-class fixture for optimizer sanity checks."""
    rng = rng or Rng(7, "synth/separable")
    return make_class_graph(n, d, 2, rng, mean_scale=4.0, noise=0.5,
                            p_in=0.15, p_out=0.01)
