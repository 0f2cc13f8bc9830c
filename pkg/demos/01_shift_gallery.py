"""
Gallery of distribution shifts on a synthetic text-rich network
===============================================================

Builds one small network and runs every shift family against it,
printing what each one changes.
"""

import numpy as np

from trn_ood import shifts as sh
from trn_ood.graph import cosine_similarity_matrix
from trn_ood.rng import Rng
from trn_ood.synth import make_class_graph
from trn_ood.textaug import LexicalCache

rng = Rng(0, "demo/shifts")
g = make_class_graph(120, 8, 3, rng, p_in=0.15, p_out=0.02,
                     with_texts=True, with_years=True)
print(f"base graph: {g.n} nodes, {g.num_edges} edges, {g.num_classes} classes")


def edge_overlap(a, b):
    ea = {tuple(e) for e in a.edges.tolist()}
    eb = {tuple(e) for e in b.edges.tolist()}
    return len(ea & eb) / max(1, len(ea))


# --- attribute level: feature mixing at the three published noise levels
for alpha in sh.FEATURE_MIX_LEVELS:
    mixed = sh.feature_mix(g, alpha, Rng(0, f"demo/mix{alpha}"))
    drift = np.linalg.norm(mixed.features - g.features, axis=1).mean()
    print(f"feature_mix alpha={alpha}: mean embedding drift {drift:.3f}, "
          f"edges untouched: {np.array_equal(mixed.edges, g.edges)}")

# --- attribute level: raw-text augmentation (embeddings need re-encoding)
cache = LexicalCache({
    "graph": {"syn": ["network"], "ant": []},
    "model": {"syn": ["system"], "ant": ["chaos"]},
    "energy": {"syn": ["power"], "ant": ["lethargy"]},
})
aug = sh.text_augment_shift(g, "synonym", 1.0, 1.0, cache, Rng(0, "demo/aug"))
n_changed = sum(a != b for a, b in zip(aug.texts, g.texts))
print(f"text_augment: {n_changed}/{g.n} node texts perturbed "
      f"(first: {g.texts[0]!r} -> {aug.texts[0]!r})")

# --- structure level: block-model rewiring presets
for name, p in sh.STRUCTURE_PRESETS.items():
    rew = sh.sbm_rewire(g, p["beta"], p["f_ii"], p["f_ij"],
                        Rng(0, f"demo/sbm/{name}"))
    print(f"sbm_rewire {name} (beta={p['beta']}): kept "
          f"{edge_overlap(g, rew):.0%} of original edges, "
          f"count {rew.num_edges} vs {g.num_edges}")

# --- structure level: similarity-driven reconnection
for mode in ("top", "bottom"):
    conn = sh.semantic_connect(g, mode)
    sims = cosine_similarity_matrix(g.features)
    mean_sim = np.mean([sims[i, j] for i, j in conn.edges.tolist()])
    print(f"semantic_connect {mode}: mean similarity of chosen pairs {mean_sim:+.3f}")

# --- structure level: text swapping across scopes
for scope in sh.SWAP_SCOPES:
    swapped = sh.text_swap(g, 1.0, scope, Rng(0, f"demo/swap/{scope}"))
    moved = int((swapped.features != g.features).any(axis=1).sum())
    print(f"text_swap scope={scope}: {moved} nodes carry another node's text")

# --- label shift: withhold one class
split = sh.label_leave_out(g, {2})
print(f"label_leave_out {{2}}: ID graph {split.id_graph.n} nodes /"
      f" {split.id_graph.num_edges} edges, {int(split.ood_flags.sum())} OOD nodes,"
      f" evaluation graph keeps all {split.ood_graph.num_edges} edges")

# --- domain shift: temporal split
tsplit = sh.temporal_split(g, (2000, 2009), (2015, 2019))
print(f"temporal_split: {tsplit.id_graph.n} ID nodes (2000-2009), "
      f"{int(tsplit.ood_flags.sum())} OOD nodes (2015-2019), "
      f"evaluation graph has {tsplit.ood_graph.n} visible nodes")
