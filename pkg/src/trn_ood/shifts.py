"""Distribution-shift generators over text-rich networks.

Four families: attribute shifts (embedding mixing, raw-text augmentation),
structural shifts (block-model rewiring, similarity-based reconnection,
text swapping), label leave-out, and temporal domain splits. Every
generator is a pure function of (graph, spec): all randomness comes from a
stream derived from the spec's seed, so regenerating a split reproduces it
byte for byte.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _toolkit_version
from .dataio import (load_graph_dir, load_int_vector, save_graph_dir, save_npy,
                     write_json)
from .graph import TrnGraph, cosine_similarity_matrix, make_graph
from .rng import Rng
from .textaug import LexicalCache, text_augment

log = logging.getLogger(__name__)


class ShiftError(ValueError):
    """Invalid shift parameters or an infeasible shift on the given graph."""


FEATURE_MIX = "FeatureMix"
STRUCTURE_REWIRE = "StructureRewire"
SEMANTIC_CONNECT = "SemanticConnect"
TEXT_SWAP = "TextSwap"
LABEL_LEAVE_OUT = "LabelLeaveOut"
TEMPORAL_SPLIT = "TemporalSplit"
TEXT_AUGMENT = "TextAugment"

KINDS = (FEATURE_MIX, STRUCTURE_REWIRE, SEMANTIC_CONNECT, TEXT_SWAP,
         LABEL_LEAVE_OUT, TEMPORAL_SPLIT, TEXT_AUGMENT)

# Published configurations.
FEATURE_MIX_LEVELS = (0.5, 0.7, 0.9)
STRUCTURE_PRESETS = {
    "mild": {"beta": 0.2, "f_ii": 0.7, "f_ij": 0.5},
    "medium": {"beta": 0.5, "f_ii": 0.6, "f_ij": 0.3},
    "strong": {"beta": 1.0, "f_ii": 0.4, "f_ij": 0.7},
}
SEMANTIC_THRESHOLDS = (0.75, 0.85, 0.95)
SWAP_SCOPES = ("intra", "inter", "random")
SEMANTIC_MODES = ("top", "bottom", "threshold-percentile")
TEXT_AUGMENT_DEFAULTS = {"alpha_text": 1.0, "p_char": 1.0}

# Above this node count, block-model sampling subsamples candidate pairs
# per block instead of enumerating all of them.
SBM_EXACT_NODE_LIMIT = 20_000
_SBM_BLOCK_BUDGET = 5_000_000


@dataclass(frozen=True)
class ShiftSpec:
    """One OOD scenario: a kind tag, its parameter record, and a seed."""

    kind: str
    params: dict
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShiftError(f"unknown shift kind {self.kind!r}")
        _VALIDATORS[self.kind](self.params)

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "ood_classes" in params:
            params["ood_classes"] = sorted(int(c) for c in params["ood_classes"])
        return {"kind": self.kind, "params": params, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ShiftSpec":
        return cls(kind=obj["kind"], params=dict(obj["params"]), seed=int(obj["seed"]))

    def slug(self) -> str:
        """Deterministic directory-name fragment."""
        bits = [self.kind.lower()]
        for key in sorted(self.params):
            val = self.params[key]
            if isinstance(val, float):
                sval = ("%g" % val).replace(".", "p").replace("-", "m")
            elif isinstance(val, (list, tuple, set, frozenset)):
                sval = "-".join(str(v) for v in sorted(val))
            else:
                sval = str(val)
            bits.append(f"{key}_{sval}")
        return "_".join(bits)


def _probability(params, key):
    v = params.get(key)
    if not isinstance(v, (int, float)) or not (0.0 <= float(v) <= 1.0):
        raise ShiftError(f"parameter {key!r} must lie in [0, 1], got {v!r}")


def _validate_feature_mix(p):
    _probability(p, "alpha_feat")


def _validate_structure(p):
    for key in ("beta", "f_ii", "f_ij"):
        _probability(p, key)


def _validate_semantic(p):
    mode = p.get("mode")
    if mode not in SEMANTIC_MODES:
        raise ShiftError(f"mode must be one of {SEMANTIC_MODES}, got {mode!r}")
    if mode == "threshold-percentile":
        _probability(p, "threshold")
    elif p.get("threshold") is not None:
        raise ShiftError("threshold is only valid with mode='threshold-percentile'")


def _validate_swap(p):
    _probability(p, "beta_swap")
    if p.get("scope") not in SWAP_SCOPES:
        raise ShiftError(f"scope must be one of {SWAP_SCOPES}, got {p.get('scope')!r}")


def _validate_leave_out(p):
    classes = p.get("ood_classes")
    if not classes:
        raise ShiftError("ood_classes must be a non-empty class-index list")


def _validate_temporal(p):
    for key in ("r_id", "r_ood"):
        rng_pair = p.get(key)
        if (not isinstance(rng_pair, (list, tuple)) or len(rng_pair) != 2
                or rng_pair[0] > rng_pair[1]):
            raise ShiftError(f"{key} must be an ordered [lo, hi] year range")
    lo1, hi1 = p["r_id"]
    lo2, hi2 = p["r_ood"]
    if max(lo1, lo2) <= min(hi1, hi2):
        raise ShiftError(f"year ranges overlap: {p['r_id']} vs {p['r_ood']}")


def _validate_text_augment(p):
    if p.get("type") not in ("synonym", "antonym"):
        raise ShiftError(f"type must be 'synonym' or 'antonym', got {p.get('type')!r}")
    _probability(p, "alpha_text")
    _probability(p, "p_char")


_VALIDATORS = {
    FEATURE_MIX: _validate_feature_mix,
    STRUCTURE_REWIRE: _validate_structure,
    SEMANTIC_CONNECT: _validate_semantic,
    TEXT_SWAP: _validate_swap,
    LABEL_LEAVE_OUT: _validate_leave_out,
    TEMPORAL_SPLIT: _validate_temporal,
    TEXT_AUGMENT: _validate_text_augment,
}


@dataclass(frozen=True)
class OodSplit:
    """Paired ID graph and OOD graph with per-node OOD indicators.

    `eval_nodes` indexes rows of `ood_graph` that take part in detection
    evaluation; `ood_flags` runs parallel to it. For attribute and
    structural shifts every node of the perturbed graph is an OOD copy and
    the ID side comes from the untouched graph at evaluation time.
    """

    id_graph: TrnGraph
    ood_graph: TrnGraph
    ood_flags: np.ndarray
    eval_nodes: np.ndarray
    spec: ShiftSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ood_flags.shape != self.eval_nodes.shape:
            raise ShiftError("ood_flags and eval_nodes must run parallel")


# ---------------------------------------------------------------------------
# Attribute-level shifts
# ---------------------------------------------------------------------------

def draw_mix_partners(n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node donors (j, k) with j, k, i all distinct, and mixing weights w.

    Exposed separately so tests can replay the exact draw sequence.
    """
    j = np.empty(n, dtype=np.int64)
    k = np.empty(n, dtype=np.int64)
    w = np.empty(n, dtype=np.float64)
    for i in range(n):
        pick = rng.choice(n - 1, size=2, replace=False)
        pick = np.where(pick >= i, pick + 1, pick)
        j[i], k[i] = pick[0], pick[1]
        w[i] = rng.random()
    return j, k, w


def feature_mix(g: TrnGraph, alpha_feat: float, rng: Rng) -> TrnGraph:
    """Blend each embedding with a random convex pair: structure untouched.

    x_i <- (1 - alpha) x_i + alpha (w x_j + (1 - w) x_k), w ~ U(0, 1).
    """
    if not (0.0 <= alpha_feat <= 1.0):
        raise ShiftError(f"alpha_feat must lie in [0, 1], got {alpha_feat}")
    if g.n < 3:
        raise ShiftError(f"feature_mix needs n >= 3 to draw distinct donors, got n={g.n}")
    j, k, w = draw_mix_partners(g.n, rng)
    x = g.features.astype(np.float64)
    mixed = w[:, None] * x[j] + (1.0 - w[:, None]) * x[k]
    out = (1.0 - alpha_feat) * x + alpha_feat * mixed
    return g.with_features(out.astype(np.float32))


def text_augment_shift(g: TrnGraph, type_: str, alpha_text: float, p_char: float,
                       cache: LexicalCache, rng: Rng) -> TrnGraph:
    """Augment every node's raw text; embeddings are left untouched.

    The perturbed texts need re-encoding (see the embedding exporter)
    before the feature matrix reflects the shift.
    """
    if g.texts is None:
        raise ShiftError("text augmentation needs raw texts on the graph")
    new_texts = []
    for i, t in enumerate(g.texts):
        node_rng = rng.split(f"node{i}")
        new_texts.append(text_augment(t, type_, alpha_text, p_char, cache, node_rng))
    return g.with_features(g.features, texts=tuple(new_texts))


# ---------------------------------------------------------------------------
# Structural shifts
# ---------------------------------------------------------------------------

def _edge_codes(edges: np.ndarray, n: int) -> np.ndarray:
    e = edges.astype(np.int64)
    return e[:, 0] * n + e[:, 1]


def _codes_to_edges(codes: np.ndarray, n: int) -> np.ndarray:
    codes = np.sort(np.asarray(codes, dtype=np.int64))
    return np.stack([codes // n, codes % n], axis=1)


def _triangular_decode(t: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices of the strict upper triangle of an s x s block
    to (row, col) with row < col."""
    t = t.astype(np.float64)
    row = np.floor(((2 * s - 1) - np.sqrt((2 * s - 1) ** 2 - 8 * t)) / 2).astype(np.int64)
    # guard against sqrt rounding at block boundaries
    base = row * (2 * s - row - 1) // 2
    too_big = base > t.astype(np.int64)
    row[too_big] -= 1
    base = row * (2 * s - row - 1) // 2
    too_small = t.astype(np.int64) >= base + (s - row - 1)
    row[too_small] += 1
    base = row * (2 * s - row - 1) // 2
    col = t.astype(np.int64) - base + row + 1
    return row, col


def _sample_block_pairs(count: int, members_a: np.ndarray, members_b: np.ndarray | None,
                        total: int, rng: Rng, n: int) -> np.ndarray:
    """Draw `count` distinct node pairs from one block (or block pair)."""
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if total <= _SBM_BLOCK_BUDGET:
        idx = rng.choice(total, size=count, replace=False)
    else:
        # subsampled regime for very large blocks: draw with replacement, dedup
        idx = np.unique(rng.integers(0, total, size=count))
    if members_b is None:
        s = members_a.size
        row, col = _triangular_decode(np.asarray(idx, dtype=np.int64), s)
        i = members_a[row]
        j = members_a[col]
    else:
        i = members_a[np.asarray(idx, dtype=np.int64) // members_b.size]
        j = members_b[np.asarray(idx, dtype=np.int64) % members_b.size]
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    return lo * np.int64(n) + hi


def sample_sbm_edges(g: TrnGraph, f_ii: float, f_ij: float, rng: Rng) -> np.ndarray:
    """Block-model edge sample with classes as blocks, as sorted pair codes.

    Edge probabilities are rho * f_ii within a block and rho * f_ij across
    blocks, where rho counts each undirected edge twice over the n(n-1)/2
    possible pairs (the source convention for reported edge counts). Each
    block pair draws a binomial edge count and then that many distinct
    pairs, which is distributionally identical to per-pair Bernoulli
    sampling but costs O(edges), not O(n^2).
    """
    n = g.n
    if n < 2:
        raise ShiftError(f"sbm sampling needs n >= 2, got n={n}")
    pairs_total = n * (n - 1) // 2
    rho = 2.0 * g.num_edges / pairs_total
    p_same = min(1.0, rho * f_ii)
    p_cross = min(1.0, rho * f_ij)
    members = [np.flatnonzero(g.labels == c).astype(np.int64)
               for c in range(g.num_classes)]
    codes = []
    for a in range(g.num_classes):
        sa = members[a].size
        total = sa * (sa - 1) // 2
        if total and p_same > 0:
            cnt = int(rng.binomial(total, p_same))
            codes.append(_sample_block_pairs(cnt, members[a], None, total, rng, n))
        for b in range(a + 1, g.num_classes):
            total = sa * members[b].size
            if total and p_cross > 0:
                cnt = int(rng.binomial(total, p_cross))
                codes.append(_sample_block_pairs(cnt, members[a], members[b],
                                                 total, rng, n))
    if not codes:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(codes))


def sbm_rewire(g: TrnGraph, beta: float, f_ii: float, f_ij: float, rng: Rng) -> TrnGraph:
    """Blend the original edge set with a block-model sample at ratio beta.

    ceil((1-beta) m) edges are kept from the original graph and
    ceil(beta m) drawn from the block-model sample; after deduplication
    the union is topped up from the beta-weighted pools until the original
    edge count m is restored or the eligible pools run dry, so graph
    density is preserved whenever the pools allow it.
    """
    if g.n < 2:
        raise ShiftError(f"sbm_rewire needs n >= 2, got n={g.n}")
    m = g.num_edges
    orig_codes = _edge_codes(g.edges, g.n)
    sbm_codes = sample_sbm_edges(g, f_ii, f_ij, rng)

    n_orig = math.ceil((1.0 - beta) * m)
    n_sbm = math.ceil(beta * m)
    pick_orig = rng.choice(m, size=min(n_orig, m), replace=False) if m else np.zeros(0, np.int64)
    take_orig = orig_codes[np.sort(pick_orig)]
    if sbm_codes.size:
        pick_sbm = rng.choice(sbm_codes.size, size=min(n_sbm, sbm_codes.size),
                              replace=False)
        take_sbm = sbm_codes[np.sort(pick_sbm)]
    else:
        take_sbm = np.zeros(0, dtype=np.int64)

    chosen = set(take_orig.tolist()) | set(take_sbm.tolist())

    # top-up pools: what each source still has to offer, in shuffled order
    unused_orig = np.setdiff1d(orig_codes, take_orig, assume_unique=True)
    unused_sbm = np.setdiff1d(sbm_codes, take_sbm, assume_unique=True)
    rng.shuffle(unused_orig)
    rng.shuffle(unused_sbm)
    pools = {"orig": list(unused_orig[::-1]), "sbm": list(unused_sbm[::-1])}
    while len(chosen) < m:
        want_sbm = rng.random() < beta
        order = ["sbm", "orig"] if want_sbm else ["orig", "sbm"]
        if beta == 0.0:
            order = ["orig"]
        elif beta == 1.0:
            order = ["sbm"]
        source = next((k for k in order if pools[k]), None)
        if source is None:
            break
        code = pools[source].pop()
        chosen.add(int(code))

    return g.with_edges(_codes_to_edges(np.fromiter(chosen, dtype=np.int64,
                                                    count=len(chosen)), g.n))


def _all_pairs_by_similarity(g: TrnGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Off-diagonal pair similarities ordered by (similarity, i, j) ascending."""
    sims = cosine_similarity_matrix(g.features)
    iu, ju = np.triu_indices(g.n, k=1)
    vals = sims[iu, ju]
    order = np.lexsort((ju, iu, vals))
    return vals[order], iu[order], ju[order]


def semantic_connect(g: TrnGraph, mode: str, threshold: float | None = None,
                     rng: Rng | None = None) -> TrnGraph:
    """Reconnect the graph by embedding similarity, keeping the edge count.

    top/bottom take the k most/least similar pairs (k = current edge
    count); threshold-percentile takes the ceil(k/2) pairs at or directly
    above the similarity value at the given percentile and the floor(k/2)
    directly below it, shifting the window when one side runs out. Ties
    break by ascending (i, j); the result is deterministic, `rng` is
    accepted only for interface uniformity.
    """
    if mode not in SEMANTIC_MODES:
        raise ShiftError(f"mode must be one of {SEMANTIC_MODES}, got {mode!r}")
    k = g.num_edges
    total = g.n * (g.n - 1) // 2
    if k > total:
        raise ShiftError(f"cannot select {k} pairs, only {total} exist")
    if k == 0:
        return g.with_edges(np.zeros((0, 2), dtype=np.uint32))
    vals, iu, ju = _all_pairs_by_similarity(g)
    if mode == "top":
        # pairs strictly above the boundary similarity are all in; the tie
        # block at the boundary fills the remainder in ascending (i, j)
        boundary = vals[total - k]
        n_tied_needed = k - int(np.sum(vals > boundary))
        idx = np.concatenate([np.flatnonzero(vals == boundary)[:n_tied_needed],
                              np.flatnonzero(vals > boundary)])
    elif mode == "bottom":
        boundary = vals[k - 1]
        n_tied_needed = k - int(np.sum(vals < boundary))
        idx = np.concatenate([np.flatnonzero(vals < boundary),
                              np.flatnonzero(vals == boundary)[:n_tied_needed]])
    else:
        if threshold is None:
            raise ShiftError("threshold-percentile mode needs a threshold")
        if not (0.0 <= threshold <= 1.0):
            raise ShiftError(f"threshold must lie in [0, 1], got {threshold}")
        v = np.quantile(vals, threshold, method="lower")
        pos = int(np.searchsorted(vals, v, side="left"))
        lo = pos - k // 2
        hi = pos + (k - k // 2)
        if lo < 0:
            hi -= lo
            lo = 0
        if hi > total:
            lo -= hi - total
            hi = total
        idx = np.arange(lo, hi)
    edges = np.stack([iu[idx], ju[idx]], axis=1)
    return g.with_edges(edges)


# ---------------------------------------------------------------------------
# Text swap
# ---------------------------------------------------------------------------

def select_swap_pairs(g: TrnGraph, beta_swap: float, scope: str, rng: Rng) -> np.ndarray:
    """Disjoint node pairs eligible under the scope, as an array [p, 2].

    intra pairs share a label, inter pairs differ, random allows any.
    Raises when the graph cannot supply enough disjoint eligible pairs.
    """
    if scope not in SWAP_SCOPES:
        raise ShiftError(f"scope must be one of {SWAP_SCOPES}, got {scope!r}")
    if not (0.0 <= beta_swap <= 1.0):
        raise ShiftError(f"beta_swap must lie in [0, 1], got {beta_swap}")
    if scope in ("intra", "inter") and g.labels is None:
        raise ShiftError(f"scope {scope!r} needs labels")
    n_swap = int(beta_swap * g.n)
    n_pairs = (n_swap + 1) // 2
    if n_pairs == 0:
        return np.zeros((0, 2), dtype=np.int64)

    if scope == "random":
        perm = rng.permutation(g.n)
        available = g.n // 2
        if n_pairs > available:
            raise ShiftError(f"text_swap scope=random: need {n_pairs} disjoint pairs, "
                             f"only {available} possible (short by {n_pairs - available})")
        return perm[:2 * n_pairs].reshape(n_pairs, 2).astype(np.int64)

    if scope == "intra":
        pool = []
        for c in range(g.num_classes):
            nodes = np.flatnonzero(g.labels == c)
            perm = nodes[rng.permutation(nodes.size)]
            for t in range(nodes.size // 2):
                pool.append((perm[2 * t], perm[2 * t + 1]))
        if n_pairs > len(pool):
            raise ShiftError(f"text_swap scope=intra: need {n_pairs} disjoint pairs, "
                             f"only {len(pool)} eligible (short by {n_pairs - len(pool)})")
        pool_arr = np.asarray(pool, dtype=np.int64)
        pick = rng.choice(len(pool), size=n_pairs, replace=False)
        return pool_arr[np.sort(pick)]

    # inter: repeatedly pair nodes from the two largest remaining classes,
    # which attains the maximum number of disjoint cross-class pairs
    buckets = []
    for c in range(g.num_classes):
        nodes = np.flatnonzero(g.labels == c)
        buckets.append(list(nodes[rng.permutation(nodes.size)]))
    pairs = []
    while len(pairs) < n_pairs:
        order = sorted(range(len(buckets)), key=lambda c: (-len(buckets[c]), c))
        if len(order) < 2 or not buckets[order[1]]:
            raise ShiftError(f"text_swap scope=inter: need {n_pairs} disjoint pairs, "
                             f"got {len(pairs)} (short by {n_pairs - len(pairs)})")
        a, b = order[0], order[1]
        pairs.append((buckets[a].pop(), buckets[b].pop()))
    return np.asarray(pairs, dtype=np.int64)


def apply_swap(g: TrnGraph, pairs: np.ndarray) -> TrnGraph:
    """Exchange feature rows (and texts) along the given disjoint pairs."""
    feats = g.features.copy()
    texts = list(g.texts) if g.texts is not None else None
    for i, j in np.asarray(pairs, dtype=np.int64):
        feats[[i, j]] = feats[[j, i]]
        if texts is not None:
            texts[i], texts[j] = texts[j], texts[i]
    return g.with_features(feats, texts=tuple(texts) if texts is not None else None)


def text_swap(g: TrnGraph, beta_swap: float, scope: str, rng: Rng) -> TrnGraph:
    """Swap features/texts between a controlled fraction of node pairs."""
    pairs = select_swap_pairs(g, beta_swap, scope, rng)
    if pairs.shape[0] == 0:
        return g
    return apply_swap(g, pairs)


# ---------------------------------------------------------------------------
# Label and domain splits
# ---------------------------------------------------------------------------

def label_leave_out(g: TrnGraph, ood_classes) -> OodSplit:
    """Withhold the given classes: train on the rest, evaluate on everything.

    The ID graph is the induced subgraph on nodes outside the withheld
    classes, with labels re-indexed densely; the OOD evaluation graph keeps
    the complete edge set (inductive setting: the full structure is visible
    at test time).
    """
    ood = sorted({int(c) for c in ood_classes})
    if not ood:
        raise ShiftError("ood_classes must be non-empty")
    if any(c < 0 or c >= g.num_classes for c in ood):
        raise ShiftError(f"ood_classes {ood} outside [0, {g.num_classes})")
    if len(ood) >= g.num_classes:
        raise ShiftError("ood_classes must leave at least one ID class")
    keep_classes = [c for c in range(g.num_classes) if c not in ood]
    remap = -np.ones(g.num_classes, dtype=np.int64)
    remap[keep_classes] = np.arange(len(keep_classes))
    id_nodes = np.flatnonzero(~np.isin(g.labels, ood))
    sub = g.subgraph(id_nodes)
    id_graph = make_graph(sub.features, sub.edges, remap[sub.labels],
                          len(keep_classes), texts=sub.texts, years=sub.years)
    flags = np.isin(g.labels, ood)
    spec = ShiftSpec(LABEL_LEAVE_OUT, {"ood_classes": ood}, seed=0)
    return OodSplit(id_graph=id_graph, ood_graph=g, ood_flags=flags,
                    eval_nodes=np.arange(g.n, dtype=np.int64), spec=spec)


def id_nodes_for_leave_out(g: TrnGraph, ood_classes) -> np.ndarray:
    """Original indices of the ID-graph rows, in row order."""
    ood = sorted({int(c) for c in ood_classes})
    return np.flatnonzero(~np.isin(g.labels, ood))


def temporal_split(g: TrnGraph, r_id, r_ood) -> OodSplit:
    """Domain split by year range; both ranges are inclusive and disjoint.

    The evaluation graph contains the nodes visible up to the end of the
    OOD range and only the edges among them; nodes dated inside either
    range are the evaluation nodes.
    """
    if g.years is None:
        raise ShiftError("temporal_split needs per-node years")
    lo1, hi1 = int(r_id[0]), int(r_id[1])
    lo2, hi2 = int(r_ood[0]), int(r_ood[1])
    if lo1 > hi1 or lo2 > hi2:
        raise ShiftError(f"year ranges must be ordered: {r_id}, {r_ood}")
    if max(lo1, lo2) <= min(hi1, hi2):
        raise ShiftError(f"year ranges overlap: {r_id} vs {r_ood}")
    years = g.years
    id_nodes = np.flatnonzero((years >= lo1) & (years <= hi1))
    visible = np.flatnonzero(years <= hi2)
    id_graph = g.subgraph(id_nodes)
    ood_graph = g.subgraph(visible)
    vis_years = years[visible]
    in_id = (vis_years >= lo1) & (vis_years <= hi1)
    in_ood = (vis_years >= lo2) & (vis_years <= hi2)
    eval_nodes = np.flatnonzero(in_id | in_ood).astype(np.int64)
    flags = in_ood[eval_nodes]
    if not flags.any():
        log.warning("temporal_split: OOD year range %s selected no nodes", (lo2, hi2))
    spec = ShiftSpec(TEMPORAL_SPLIT, {"r_id": [lo1, hi1], "r_ood": [lo2, hi2]}, seed=0)
    return OodSplit(id_graph=id_graph, ood_graph=ood_graph, ood_flags=flags,
                    eval_nodes=eval_nodes, spec=spec)


def temporal_id_nodes(g_ood: TrnGraph, r_id) -> np.ndarray:
    """Rows of the evaluation graph whose year falls in the ID range."""
    lo, hi = int(r_id[0]), int(r_id[1])
    return np.flatnonzero((g_ood.years >= lo) & (g_ood.years <= hi))


# ---------------------------------------------------------------------------
# Dispatch and serialization
# ---------------------------------------------------------------------------

def generate_split(g: TrnGraph, spec: ShiftSpec,
                   cache: LexicalCache | None = None) -> OodSplit:
    """Run one shift spec against a graph; pure given (g, spec, cache)."""
    rng = Rng(spec.seed, f"shift/{spec.kind}")
    p = spec.params
    if spec.kind == FEATURE_MIX:
        ood = feature_mix(g, float(p["alpha_feat"]), rng)
    elif spec.kind == STRUCTURE_REWIRE:
        ood = sbm_rewire(g, float(p["beta"]), float(p["f_ii"]), float(p["f_ij"]), rng)
    elif spec.kind == SEMANTIC_CONNECT:
        ood = semantic_connect(g, p["mode"], p.get("threshold"), rng)
    elif spec.kind == TEXT_SWAP:
        ood = text_swap(g, float(p["beta_swap"]), p["scope"], rng)
    elif spec.kind == TEXT_AUGMENT:
        if cache is None:
            raise ShiftError("TextAugment needs a lexical cache")
        ood = text_augment_shift(g, p["type"], float(p["alpha_text"]),
                                 float(p["p_char"]), cache, rng)
    elif spec.kind == LABEL_LEAVE_OUT:
        split = label_leave_out(g, p["ood_classes"])
        return OodSplit(split.id_graph, split.ood_graph, split.ood_flags,
                        split.eval_nodes, spec, dict(split.provenance))
    elif spec.kind == TEMPORAL_SPLIT:
        split = temporal_split(g, p["r_id"], p["r_ood"])
        return OodSplit(split.id_graph, split.ood_graph, split.ood_flags,
                        split.eval_nodes, spec, dict(split.provenance))
    else:  # pragma: no cover - guarded by ShiftSpec validation
        raise ShiftError(f"unknown shift kind {spec.kind!r}")
    flags = np.ones(g.n, dtype=bool)
    return OodSplit(id_graph=g, ood_graph=ood, ood_flags=flags,
                    eval_nodes=np.arange(g.n, dtype=np.int64), spec=spec)


def save_split(split: OodSplit, directory: Path, config_hash: str = "") -> None:
    directory = Path(directory)
    save_graph_dir(split.id_graph, directory / "id_graph")
    save_graph_dir(split.ood_graph, directory / "ood_graph")
    save_npy(directory / "ood_flags.npy", split.ood_flags.astype(np.uint8))
    save_npy(directory / "eval_nodes.npy", split.eval_nodes.astype(np.int64))
    meta = {
        "spec": split.spec.to_dict(),
        "seed": int(split.spec.seed),
        "ood_flags": "ood_flags.npy",
        "eval_nodes": "eval_nodes.npy",
        "toolkit_version": _toolkit_version,
        "config_hash": config_hash,
    }
    meta.update(split.provenance)
    write_json(directory / "split.json", meta)


def load_split(directory: Path) -> OodSplit:
    import json

    directory = Path(directory)
    with open(directory / "split.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    spec = ShiftSpec.from_dict(meta["spec"])
    flags = np.load(directory / meta["ood_flags"]).astype(bool)
    eval_nodes = load_int_vector(directory / meta["eval_nodes"], "eval_nodes")
    prov = {k: meta[k] for k in ("toolkit_version", "config_hash") if k in meta}
    return OodSplit(id_graph=load_graph_dir(directory / "id_graph"),
                    ood_graph=load_graph_dir(directory / "ood_graph"),
                    ood_flags=flags, eval_nodes=eval_nodes, spec=spec,
                    provenance=prov)
