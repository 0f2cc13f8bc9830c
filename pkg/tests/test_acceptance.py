"""Acceptance gate: one test per criterion, each printing a PASS line with
its runtime (run with `pytest tests/test_acceptance.py -s` to see them all).
Everything runs on bundled synthetic fixtures; no network, no external data.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from trn_ood import autodiff as ad
from trn_ood import dataio
from trn_ood import model as tnt
from trn_ood import shifts as sh
from trn_ood.detectors import elign_score, energy_score, propagate_scores
from trn_ood.graph import cosine_similarity_matrix, make_graph, row_norm_adj
from trn_ood.harness import (cmd_eval, cmd_gen_shifts, cmd_train,
                             config_from_dict, split_masks)
from trn_ood.metrics import aupr, auroc, fpr95
from trn_ood.rng import Rng
from trn_ood.selfcheck import (check_primitive_gradients,
                               finite_difference_gradient)
from trn_ood.synth import make_class_graph
from trn_ood.textaug import LexicalCache, text_augment


class Budget:
    def __init__(self, seconds: float):
        self.limit = seconds
        self.start = time.perf_counter()

    def done(self, n: int, label: str):
        elapsed = time.perf_counter() - self.start
        assert elapsed < self.limit, f"criterion {n} took {elapsed:.1f}s " \
                                     f"(budget {self.limit:.0f}s)"
        print(f"[ACCEPTANCE {n}] PASS ({elapsed:.1f}s) {label}")


# --------------------------------------------------------------------------
# 1. Gradient suite
# --------------------------------------------------------------------------

def _model_loss(g, state, cfg, train_idx):
    out = tnt.forward(g, state)
    cls = ad.cross_entropy(ad.gather_rows(out.logits, train_idx),
                           g.labels[train_idx])
    cont = tnt.contrastive_loss(out.p_t, out.g_tilde, cfg.tau)
    return ad.add(cls, ad.scalar_mul(cont, cfg.lam))


def _end_to_end_gradient_error(forward_dtype) -> float:
    # fixture audited for differentiability margins: no relu pre-activation
    # or normalized row sits within the finite-difference step of a kink
    g = make_class_graph(6, 3, 2, Rng(0, "acc/e2e"), p_in=0.6, p_out=0.3)
    train_idx = np.arange(6)
    cfg = tnt.TntConfig(d=3, d_p=3, r=2, seed=22, tau=0.5, lam=0.7)
    state = tnt.TntState.initialize(cfg, 2, dtype=forward_dtype)
    with ad.Tape() as tape:
        loss = _model_loss(g, state, cfg, train_idx)
        grads = ad.backward(loss, tape)
    state64 = tnt.TntState.initialize(cfg, 2, dtype=np.float64)
    worst = 0.0
    for name, param in state.named_params().items():
        target = state64.named_params()[name]

        def f(x):
            saved = target.data
            target.data = x
            val = float(_model_loss(g, state64, cfg, train_idx).data)
            target.data = saved
            return val

        fd = finite_difference_gradient(f, target.data.copy(), h=1e-4)
        analytic = grads[param].astype(np.float64)
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, np.max(np.abs(analytic - fd)) / scale)
    return worst


def test_criterion_1_gradient_suite():
    budget = Budget(60)
    ok, detail = check_primitive_gradients(trials=20, tol=1e-4)
    assert ok, f"primitive gradients: {detail}"
    err32 = _end_to_end_gradient_error(np.float32)
    assert err32 < 1e-3, f"end-to-end (32-bit forward): {err32:.3g}"
    err64 = _end_to_end_gradient_error(np.float64)
    assert err64 < 1e-4, f"end-to-end (64-bit forward): {err64:.3g}"
    budget.done(1, f"primitives ({detail}); end-to-end rel err "
                   f"{err32:.2g} (f32) / {err64:.2g} (f64)")


# --------------------------------------------------------------------------
# 2. Metric oracles
# --------------------------------------------------------------------------

def _brute_auroc(scores, flags):
    pos, neg = scores[flags], scores[~flags]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def _brute_aupr(scores, flags):
    n_pos = flags.sum()
    ap, prev_r = 0.0, 0.0
    for tau in np.unique(scores)[::-1]:
        sel = scores >= tau
        tp = (sel & flags).sum()
        r, p = tp / n_pos, tp / sel.sum()
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def _brute_fpr95(scores, flags):
    for tau in np.unique(scores)[::-1]:
        sel = scores >= tau
        if (sel & flags).sum() / flags.sum() >= 0.95:
            return (sel & ~flags).sum() / (~flags).sum()
    raise AssertionError


def test_criterion_2_metric_oracles():
    budget = Budget(10)
    rng = Rng(0, "acc/metrics")
    checked = 0
    while checked < 200:
        n = 4 + int(rng.integers(61))
        scores = rng.uniform(-3, 3, size=n)
        if rng.random() < 0.5:
            scores = np.round(scores, 1)  # inject ties
        flags = rng.random(n) < 0.4
        if not flags.any() or flags.all():
            continue
        assert abs(auroc(scores, flags) - _brute_auroc(scores, flags)) < 1e-12
        assert abs(aupr(scores, flags) - _brute_aupr(scores, flags)) < 1e-12
        assert fpr95(scores, flags) == _brute_fpr95(scores, flags)
        checked += 1
    budget.done(2, f"{checked} randomized instances, ties included")


# --------------------------------------------------------------------------
# 3. Propagation oracle
# --------------------------------------------------------------------------

def test_criterion_3_propagation_oracle():
    budget = Budget(30)
    rng = Rng(1, "acc/prop")
    for trial in range(50):
        n = 4 + int(rng.integers(13))
        g = make_class_graph(n, 3, 2, rng.split(f"g{trial}"), p_in=0.5, p_out=0.2)
        s = rng.normal(size=g.n)
        from trn_ood.detectors import ScoreVector

        out = propagate_scores(ScoreVector(s, "raw"), g, K=3, alpha=0.5)
        dense = row_norm_adj(g).toarray()
        ref = s.copy()
        for _ in range(3):
            ref = 0.5 * ref + 0.5 * (dense @ ref)
        assert np.max(np.abs(out.scores - ref)) < 1e-10
        ident = propagate_scores(ScoreVector(s, "raw"), g, K=3, alpha=1.0)
        assert np.array_equal(ident.scores, s)
    budget.done(3, "50 random graphs, K=3 alpha=0.5 vs dense powers; "
                   "alpha=1 exact identity")


# --------------------------------------------------------------------------
# 4. Shift-generator contracts
# --------------------------------------------------------------------------

def _cora_like_fixture():
    """Seven unevenly sized classes, homophilous edges, like a small Cora."""
    rng = Rng(2, "acc/cora")
    sizes = [35, 22, 42, 80, 43, 30, 18]  # 270 nodes
    labels = np.concatenate([np.full(s, c) for c, s in enumerate(sizes)])
    rng.shuffle(labels)
    feats = rng.normal(size=(labels.size, 8)).astype(np.float32)
    edges = []
    for i in range(labels.size):
        js = np.arange(i + 1, labels.size)
        p = np.where(labels[js] == labels[i], 0.06, 0.004)
        for j in js[rng.random(js.size) < p]:
            edges.append((i, j))
    return make_graph(feats, np.array(edges), labels, 7)


def test_criterion_4_shift_generator_contracts():
    budget = Budget(30)
    g = make_class_graph(150, 5, 3, Rng(7, "acc/sbm"), p_in=0.2, p_out=0.05)

    # structure rewiring presets preserve edge count within 1%
    for name, p in sh.STRUCTURE_PRESETS.items():
        for seed in range(3):
            out = sh.sbm_rewire(g, p["beta"], p["f_ii"], p["f_ij"],
                                Rng(seed, f"acc/{name}"))
            m = g.num_edges
            assert m * 0.99 - 2 <= out.num_edges <= m + 1, \
                f"{name}: {out.num_edges} vs {m}"

    # beta = 0 yields a subset of the original edges
    out0 = sh.sbm_rewire(g, 0.0, 0.7, 0.5, Rng(0, "acc/b0"))
    assert {tuple(e) for e in out0.edges.tolist()} <= \
           {tuple(e) for e in g.edges.tolist()}

    # semantic top selection matches exhaustive enumeration for n <= 32
    for seed in range(3):
        gs = make_class_graph(28, 4, 2, Rng(seed, "acc/sem"), p_in=0.3, p_out=0.1)
        out = sh.semantic_connect(gs, "top")
        sims = cosine_similarity_matrix(gs.features)
        chosen = {(int(i), int(j)) for i, j in out.edges.tolist()}
        all_pairs = [(i, j) for i in range(gs.n) for j in range(i + 1, gs.n)]
        ranked = sorted(all_pairs, key=lambda ij: (-sims[ij], ij))
        expected = set(ranked[:gs.num_edges])
        sel = [sims[ij] for ij in chosen]
        unsel = [sims[ij] for ij in all_pairs if ij not in chosen]
        assert min(sel) >= max(unsel)
        assert {sims[ij] for ij in chosen} == {sims[ij] for ij in expected}

    # text swap is a bitwise involution
    gt = make_class_graph(42, 5, 3, Rng(3, "acc/swap"), p_in=0.3, p_out=0.05,
                          with_texts=True)
    pairs = sh.select_swap_pairs(gt, 1.0, "random", Rng(4, "acc/swap2"))
    twice = sh.apply_swap(sh.apply_swap(gt, pairs), pairs)
    assert np.array_equal(twice.features, gt.features)
    assert twice.texts == gt.texts

    # label leave-out exact counting oracle on a Cora-like fixture
    cora = _cora_like_fixture()
    split = sh.label_leave_out(cora, {0, 1, 2})
    keep = {i for i in range(cora.n) if cora.labels[i] not in (0, 1, 2)}
    expected_nodes = len(keep)
    expected_edges = sum(1 for a, b in cora.edges.tolist()
                         if a in keep and b in keep)
    assert split.id_graph.n == expected_nodes
    assert split.id_graph.num_edges == expected_edges
    assert split.id_graph.num_classes == 4
    assert set(split.id_graph.labels.tolist()) == {0, 1, 2, 3}
    assert split.ood_flags.sum() == cora.n - expected_nodes
    budget.done(4, "sbm presets within 1%; beta=0 subset; semantic top vs "
                   "enumeration; swap involution; leave-out counting oracle")


# --------------------------------------------------------------------------
# 5. End-to-end trend check
# --------------------------------------------------------------------------

def _l2n(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1
    return x / norms


def _elign_prop_scores(out, graph):
    e = energy_score(out.logits.data.astype(np.float64))
    s = elign_score(e, _l2n(out.p_t.data.astype(np.float64)),
                    _l2n(out.g_tilde.data.astype(np.float64)), T=1.0)
    return propagate_scores(s, graph, K=3, alpha=0.5).scores


def test_criterion_5_feature_mix_trend():
    budget = Budget(120)
    g = make_class_graph(300, 16, 3, Rng(99, "trend/base"),
                         mean_scale=1.5, noise=1.3, p_in=0.05, p_out=0.005)
    masks = split_masks(g, {"seed": 0})
    test_idx = np.flatnonzero(masks["test"])
    per_seed = {}
    for seed in (0, 1, 2):
        cfg = tnt.TntConfig(d=16, d_p=32, r=8, epochs=120, lr=0.05,
                            lam=0.5, tau=0.1, seed=seed)
        state, _ = tnt.train(g, cfg, masks["train"])
        out_id = tnt.forward(g, state)
        neg = _elign_prop_scores(out_id, g)[test_idx]
        row = {}
        for alpha in (0.5, 0.9):
            gp = sh.feature_mix(g, alpha, Rng(seed, f"trend/mix{alpha}"))
            pos = _elign_prop_scores(tnt.forward(gp, state), gp)[test_idx]
            scores = np.concatenate([neg, pos])
            flags = np.concatenate([np.zeros(neg.size, bool),
                                    np.ones(pos.size, bool)])
            row[alpha] = auroc(scores, flags)
        per_seed[seed] = row
    mean_09 = np.mean([per_seed[s][0.9] for s in per_seed])
    n_ordered = sum(per_seed[s][0.9] >= per_seed[s][0.5] for s in per_seed)
    assert mean_09 >= 0.85, f"mean AUROC(0.9) = {mean_09:.4f}"
    assert n_ordered >= 2, f"ordering held in {n_ordered}/3 seeds"
    budget.done(5, f"mean AUROC(0.9) = {mean_09:.3f} >= 0.85; "
                   f"AUROC(0.9) >= AUROC(0.5) in {n_ordered}/3 seeds")


# --------------------------------------------------------------------------
# 6. E-lign reduction at T = 0
# --------------------------------------------------------------------------

def test_criterion_6_elign_reduces_to_energy_propagation():
    budget = Budget(30)
    rng = Rng(5, "acc/elign")
    g = make_class_graph(40, 4, 2, rng.split("graph"), p_in=0.3, p_out=0.1)
    logits = rng.normal(size=(g.n, 4))
    p_hat = _l2n(rng.normal(size=(g.n, 6)))
    g_hat = _l2n(rng.normal(size=(g.n, 6)))
    energy_pipeline = propagate_scores(energy_score(logits), g, K=3, alpha=0.5)
    elign_pipeline = propagate_scores(
        elign_score(energy_score(logits), p_hat, g_hat, T=0.0), g, K=3, alpha=0.5)
    assert np.array_equal(energy_pipeline.scores, elign_pipeline.scores)
    budget.done(6, "T=0 E-lign + propagation is bit-for-bit the "
                   "energy-propagation pipeline")


# --------------------------------------------------------------------------
# 7. Pipeline determinism
# --------------------------------------------------------------------------

def test_criterion_7_pipeline_determinism(tmp_path):
    budget = Budget(120)
    g = make_class_graph(36, 5, 3, Rng(0, "acc/det"), p_in=0.35, p_out=0.05)
    data = tmp_path / "data"
    dataio.save_npy(data / "features.npy", g.features)
    dataio.save_npy(data / "edges.npy", g.edges)
    dataio.save_npy(data / "labels.npy", g.labels)
    doc = {
        "name": "det",
        "seeds": [0, 1],
        "dataset": {"features": str(data / "features.npy"),
                    "edges": str(data / "edges.npy"),
                    "labels": str(data / "labels.npy"),
                    "num_classes": 3},
        "masks": {"seed": 0},
        "model": {"d_p": 8, "r": 2, "epochs": 10, "lr": 0.05},
        "gcn": {"hidden": 8, "epochs": 10, "lr": 0.05},
        "shifts": [{"kind": "FeatureMix", "alpha_feat": 0.9},
                   {"kind": "StructureRewire", "beta": 0.5, "f_ii": 0.6,
                    "f_ij": 0.3}],
        "methods": [{"name": "energy", "K": 3, "alpha": 0.5},
                    {"name": "msp"},
                    {"name": "elign", "K": 3, "alpha": 0.5, "T": 1.0}],
    }
    config = config_from_dict(doc)
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cmd_gen_shifts(config, out) == 0
        assert cmd_train(config, out) == 0
        assert cmd_eval(config, out) == 0
        tree = {str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*")) if p.is_file()}
        trees.append(tree)
    assert trees[0].keys() == trees[1].keys()
    for name in trees[0]:
        assert trees[0][name] == trees[1][name], f"{name} differs between runs"
    budget.done(7, f"gen-shifts + train + eval twice: {len(trees[0])} files "
                   "byte-identical")


# --------------------------------------------------------------------------
# 8. Text augmentation
# --------------------------------------------------------------------------

_FUZZ_WORDS = ("graph", "node", "text", "model", "energy", "signal", "paper",
               "review", "market", "study", "method", "result", "wild", "old")
_FUZZ_CACHE = LexicalCache({
    "graph": {"syn": ["network", "mesh"], "ant": []},
    "text": {"syn": ["prose"], "ant": []},
    "model": {"syn": ["system"], "ant": ["chaos"]},
    "energy": {"syn": ["power"], "ant": ["lethargy"]},
    "paper": {"syn": ["article", "preprint"], "ant": []},
    "wild": {"syn": ["feral"], "ant": ["tame"]},
    "old": {"syn": ["ancient"], "ant": ["new"]},
    "study": {"syn": ["survey"], "ant": []},
})


def _fuzz_corpus(n_sentences: int, rng: Rng) -> list[str]:
    out = []
    for _ in range(n_sentences):
        k = 3 + int(rng.integers(10))
        words = [_FUZZ_WORDS[int(rng.integers(len(_FUZZ_WORDS)))]
                 for _ in range(k)]
        if rng.random() < 0.3:
            words[int(rng.integers(k))] += ","
        out.append(" ".join(words) + ".")
    return out


def test_criterion_8_text_augmentation():
    budget = Budget(60)
    rng = Rng(6, "acc/textaug")
    corpus = _fuzz_corpus(1000, rng.split("corpus"))

    for i, sentence in enumerate(corpus):
        node_rng = rng.split(f"id{i}")
        assert text_augment(sentence, "synonym", 0.0, 1.0, _FUZZ_CACHE,
                            node_rng) == sentence

    changed = 0
    for i, sentence in enumerate(corpus):
        node_rng = rng.split(f"aug{i}")
        out = text_augment(sentence, "synonym", 1.0, 0.0, _FUZZ_CACHE, node_rng)
        orig_tokens = sentence.split()
        new_tokens = out.split()
        assert len(new_tokens) == len(orig_tokens), "token count changed"
        for o, n in zip(orig_tokens, new_tokens):
            if o == n:
                continue
            changed += 1
            core_o = o.rstrip(".,").lower()
            core_n = n.rstrip(".,").lower()
            alts = {a.lower() for a in _FUZZ_CACHE.alternatives(core_o, "synonym")}
            assert core_n in alts, f"{core_n!r} not a listed synonym of {core_o!r}"

    with_noise = 0
    for i, sentence in enumerate(corpus[:200]):
        node_rng = rng.split(f"noise{i}")
        out = text_augment(sentence, "antonym", 1.0, 1.0, _FUZZ_CACHE, node_rng)
        assert len(out.split()) == len(sentence.split())
        with_noise += out != sentence
    assert changed > 0 and with_noise > 0
    budget.done(8, f"alpha=0 byte-identity; {changed} substitutions all "
                   "cache-listed; token counts preserved on 1000 sentences")


# --------------------------------------------------------------------------
# 9. [SECONDARY] exporter round trip, plus primary independence
# --------------------------------------------------------------------------

def test_criterion_9_primary_runs_without_secondary():
    # the primary package must not depend on the exporter in any way
    import trn_ood

    src_root = Path(trn_ood.__file__).parent
    for path in src_root.rglob("*.py"):
        assert "trn_ood_export" not in path.read_text(encoding="utf-8"), path
    print("[ACCEPTANCE 9a] PASS primary suite runs on bundled fixtures with "
          "no secondary component")


def test_criterion_9_exporter_round_trip(tmp_path):
    exporter = pytest.importorskip(
        "trn_ood_export", reason="secondary exporter not installed")
    from trn_ood_export.embed import default_encoder_available, export_embeddings
    from trn_ood_export.jobs import ExportJob

    texts = [f"sentinel text number {i}" for i in range(100)]
    texts_path = tmp_path / "texts.jsonl"
    dataio.save_texts(texts_path, texts)
    out_path = tmp_path / "feats.npy"
    if not default_encoder_available():
        pytest.skip("default sentence encoder unavailable in this environment "
                    "(no model weights, no network)")
    export_embeddings(ExportJob(input_path=texts_path, output_path=out_path))
    arr = np.load(out_path)
    assert arr.shape == (100, 384) and arr.dtype == np.float32
    loaded = dataio.load_features(out_path)
    assert loaded.shape == (100, 384)
    print("[ACCEPTANCE 9] PASS exporter round trip")
