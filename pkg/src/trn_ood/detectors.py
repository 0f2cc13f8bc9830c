"""OOD scoring functions.

All scorers are pure float64 functions over frozen arrays and follow the
same sign convention: higher score = more OOD. The energy score is the
negative log-sum-exp of classifier logits; the alignment-augmented score
subtracts a temperature-weighted text/structure agreement term; optional
propagation smooths scores over the random-walk matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .graph import TrnGraph, row_norm_adj


@dataclass
class ScoreVector:
    """Per-node detector scores plus the parameters that produced them."""

    scores: np.ndarray
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.method}: non-finite scores")


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.sum(np.exp(z - m), axis=1)))


def energy_score(logits: np.ndarray) -> ScoreVector:
    """e_i = -log sum_c exp(z_ic), computed in shifted form."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 1:
        raise ValueError(f"energy_score: logits must be [n, C], got {z.shape}")
    return ScoreVector(-_logsumexp_rows(z), "energy")


def msp_score(logits: np.ndarray) -> ScoreVector:
    """Negated maximum softmax probability (sign flipped so higher = OOD)."""
    z = np.asarray(logits, dtype=np.float64)
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    probs = e / np.sum(e, axis=1, keepdims=True)
    return ScoreVector(-np.max(probs, axis=1), "msp")


@dataclass
class MahalanobisModel:
    """Class-conditional Gaussian fit: per-class means, one shared covariance."""

    means: np.ndarray           # [C, d]
    cov: np.ndarray             # [d, d]
    eps_cov: float
    _cho: tuple = field(default=None, repr=False)

    @classmethod
    def fit(cls, feats: np.ndarray, labels: np.ndarray, num_classes: int,
            eps_scale: float = 1e-4) -> "MahalanobisModel":
        """Fit on ID training embeddings. The ridge eps is scale-aware:
        eps_scale * trace(cov) / d."""
        x = np.asarray(feats, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        d = x.shape[1]
        means = np.zeros((num_classes, d))
        centered = np.zeros_like(x)
        for c in range(num_classes):
            sel = y == c
            if sel.any():
                means[c] = x[sel].mean(axis=0)
                centered[sel] = x[sel] - means[c]
        cov = centered.T @ centered / max(1, x.shape[0])
        eps = eps_scale * np.trace(cov) / d
        model = cls(means=means, cov=cov, eps_cov=float(eps))
        model._factorize()
        return model

    def _factorize(self):
        reg = self.cov + self.eps_cov * np.eye(self.cov.shape[0])
        try:
            self._cho = scipy.linalg.cho_factor(reg, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError(
                "Mahalanobis covariance factorization failed; raise eps_cov "
                f"(currently {self.eps_cov:g})") from exc

    def score(self, feats: np.ndarray) -> np.ndarray:
        if self._cho is None:
            self._factorize()
        x = np.asarray(feats, dtype=np.float64)
        dists = np.empty((x.shape[0], self.means.shape[0]))
        for c in range(self.means.shape[0]):
            diff = (x - self.means[c]).T
            solved = scipy.linalg.cho_solve(self._cho, diff)
            dists[:, c] = np.einsum("ij,ij->j", diff, solved)
        return dists.min(axis=1)


def mahalanobis_score(feats: np.ndarray, model: MahalanobisModel) -> ScoreVector:
    """Minimum squared Mahalanobis distance to any class mean."""
    return ScoreVector(model.score(feats), "mahalanobis",
                       params={"eps_cov": model.eps_cov})


def propagate_scores(s: ScoreVector, g: TrnGraph, K: int, alpha: float) -> ScoreVector:
    """K steps of s <- alpha * s + (1 - alpha) * D^(-1) A s.

    Isolated nodes have an all-zero row in D^(-1)A, so their score decays
    toward alpha^K times the input.
    """
    if K < 0 or not (0.0 <= alpha <= 1.0):
        raise ValueError(f"propagate_scores: K={K}, alpha={alpha} out of range")
    if s.scores.shape != (g.n,):
        raise ValueError(f"propagate_scores: {s.scores.shape[0]} scores for {g.n} nodes")
    if K == 0 or alpha == 1.0:
        out = s.scores.copy()
    else:
        p = row_norm_adj(g)
        out = s.scores.copy()
        for _ in range(K):
            out = alpha * out + (1.0 - alpha) * (p @ out)
    params = dict(s.params)
    params.update({"K": int(K), "alpha": float(alpha)})
    return ScoreVector(out, s.method + "+prop", params)


def alignment(p_hat: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Row-wise inner product of two row-normalized embedding matrices."""
    p = np.asarray(p_hat, dtype=np.float64)
    q = np.asarray(g_hat, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise ValueError(f"alignment: shapes {p.shape} vs {q.shape}")
    return np.einsum("ij,ij->i", p, q)


def elign_score(energy: ScoreVector, p_hat: np.ndarray, g_hat: np.ndarray,
                T: float = 1.0) -> ScoreVector:
    """Energy minus T times text/structure alignment; T = 0 reduces to energy."""
    align = alignment(p_hat, g_hat)
    if align.shape != energy.scores.shape:
        raise ValueError(f"elign_score: {align.shape[0]} alignments for "
                         f"{energy.scores.shape[0]} energies")
    return ScoreVector(energy.scores - T * align, "elign", params={"T": float(T)})


def threshold(s: ScoreVector, tau_thresh: float) -> np.ndarray:
    """Detector decision: flag node as OOD iff score >= tau_thresh."""
    return s.scores >= tau_thresh
