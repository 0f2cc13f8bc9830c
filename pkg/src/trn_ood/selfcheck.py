"""Built-in diagnostics: gradient checks, metric oracles, determinism.

Each check returns (ok, detail); `run_all` prints one line per check with
its runtime and reports overall success. The gradient checks resolve
primitives through the autodiff module namespace at call time, so an
injected wrong gradient (e.g. in a mutation test) is caught.
"""

from __future__ import annotations

import io
import time

import numpy as np

from . import autodiff as ad
from . import metrics
from .detectors import energy_score, propagate_scores
from .graph import row_norm_adj
from .rng import Rng
from .shifts import FEATURE_MIX, ShiftSpec, generate_split, save_split
from .synth import make_class_graph


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar-valued f at x, in float64."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  abs_floor: float = 1e-6) -> float:
    """Largest elementwise relative error, ignoring entries that agree to
    within the absolute floor (handles gradients near zero)."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.maximum(denom, 1e-300))
    return float(rel.max()) if rel.size else 0.0


def _scalarize(out: ad.Tensor, weights: np.ndarray) -> ad.Tensor:
    """Fixed random linear functional of the output, as a scalar tensor."""
    w = ad.Tensor(weights.reshape(out.data.shape), dtype=out.data.dtype)
    return ad.sum_all(ad.mul(out, w))


def primitive_cases(rng: Rng):
    """(name, builder, inputs) triples with random shapes and U(-1, 1) entries.

    relu inputs keep a margin away from its kink so central differences at
    h = 1e-4 stay valid; l2_normalize inputs avoid near-zero rows likewise.
    """
    m = 2 + int(rng.integers(4))
    k = 2 + int(rng.integers(4))
    p = 2 + int(rng.integers(4))

    def rt(*shape):
        return rng.uniform(-1, 1, size=shape)

    def rt_away_from_zero(*shape):
        mag = rng.uniform(0.05, 1.0, size=shape)
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return mag * sign

    idx = rng.integers(0, m, size=k + 1)
    targets = rng.integers(0, p, size=m)
    cases = []
    cases.append(("matmul", lambda a, b: ad.matmul(a, b), [rt(m, k), rt(k, p)]))
    cases.append(("add", lambda a, b: ad.add(a, b), [rt(m, k), rt(m, k)]))
    cases.append(("add_rowvec", lambda a, b: ad.add(a, b), [rt(m, k), rt(k)]))
    cases.append(("sub", lambda a, b: ad.sub(a, b), [rt(m, k), rt(m, k)]))
    cases.append(("mul", lambda a, b: ad.mul(a, b), [rt(m, k), rt(m, k)]))
    cases.append(("scalar_mul", lambda a: ad.scalar_mul(a, 0.7), [rt(m, k)]))
    cases.append(("relu", lambda a: ad.relu(a), [rt_away_from_zero(m, p)]))
    cases.append(("softmax", lambda a: ad.softmax(a, axis=1), [rt(m, p)]))
    cases.append(("log_sum_exp", lambda a: ad.log_sum_exp(a, axis=1), [rt(m, p)]))
    cases.append(("l2_normalize", lambda a: ad.l2_normalize(a), [rt(m, k) + 2.0]))
    cases.append(("gather_rows", lambda a: ad.gather_rows(a, idx), [rt(m, k)]))
    cases.append(("concat_rows", lambda a, b: ad.concat_rows([a, b]),
                  [rt(m, k), rt(p, k)]))
    cases.append(("cross_entropy",
                  lambda a: ad.cross_entropy(a, targets), [rt(m, p)]))
    cases.append(("reshape", lambda a: ad.reshape(a, (k, m)), [rt(m, k)]))
    cases.append(("transpose", lambda a: ad.transpose(a), [rt(m, k)]))
    cases.append(("slice_cols", lambda a: ad.slice_cols(a, 1, k), [rt(m, k + 1)]))
    cases.append(("per_row_matvec", lambda w, x: ad.per_row_matvec(w, x),
                  [rt(m, p, k), rt(m, k)]))
    cases.append(("sum_all", lambda a: ad.sum_all(a), [rt(m, k)]))
    cases.append(("mean_all", lambda a: ad.mean_all(a), [rt(m, k)]))
    return cases


def check_primitive_gradients(trials: int = 20, tol: float = 1e-4,
                              seed: int = 0) -> tuple[bool, str]:
    """Analytic vs central-difference gradients for every primitive."""
    worst = ("", 0.0)
    for trial in range(trials):
        rng = Rng(seed, f"gradcheck/{trial}")
        for name, builder, inputs in primitive_cases(rng):
            tensors = [ad.Tensor(x, requires_grad=True, dtype=np.float64)
                       for x in inputs]
            with ad.Tape() as tape:
                out = builder(*tensors)
                w = rng.uniform(-1, 1, size=out.data.size)
                loss = _scalarize(out, w)
                grads = ad.backward(loss, tape)
            for k, t in enumerate(tensors):
                def f(x, k=k):
                    datas = [np.array(inp, dtype=np.float64) for inp in inputs]
                    datas[k] = x
                    ts = [ad.Tensor(dat, dtype=np.float64) for dat in datas]
                    return float(_scalarize(builder(*ts), w).data)
                fd = finite_difference_gradient(f, np.array(inputs[k], dtype=np.float64))
                err = max_rel_error(grads[t], fd)
                if err > worst[1]:
                    worst = (name, err)
                if err > tol:
                    return False, f"{name}: relative error {err:.3g} > {tol}"
    return True, f"worst {worst[0]}: {worst[1]:.3g}"


def check_metric_oracles(trials: int = 30, seed: int = 1) -> tuple[bool, str]:
    """AUROC/AUPR vs brute force, FPR95 vs exhaustive threshold sweep."""
    rng = Rng(seed, "selfcheck/metrics")
    for _ in range(trials):
        n = 4 + int(rng.integers(61))
        scores = np.round(rng.uniform(-2, 2, size=n), 1)  # rounding makes ties
        flags = rng.random(n) < 0.4
        if not flags.any() or flags.all():
            continue
        au = metrics.auroc(scores, flags)
        pos, neg = scores[flags], scores[~flags]
        wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
        brute = wins / (pos.size * neg.size)
        if abs(au - brute) > 1e-12:
            return False, f"auroc {au} vs brute {brute}"
        ap = metrics.aupr(scores, flags)
        brute_ap = _brute_average_precision(scores, flags)
        if abs(ap - brute_ap) > 1e-12:
            return False, f"aupr {ap} vs brute {brute_ap}"
        fp = metrics.fpr95(scores, flags)
        if fp != _brute_fpr_at_tpr(scores, flags, 0.95):
            return False, f"fpr95 {fp} vs sweep {_brute_fpr_at_tpr(scores, flags, 0.95)}"
    return True, f"{trials} randomized instances"


def _brute_average_precision(scores, flags) -> float:
    taus = np.unique(scores)[::-1]
    n_pos = int(flags.sum())
    ap = 0.0
    prev_r = 0.0
    for tau in taus:
        sel = scores >= tau
        tp = int((sel & flags).sum())
        r = tp / n_pos
        p = tp / int(sel.sum())
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def _brute_fpr_at_tpr(scores, flags, target) -> float:
    for tau in np.unique(scores)[::-1]:
        sel = scores >= tau
        if int((sel & flags).sum()) / int(flags.sum()) >= target:
            return int((sel & ~flags).sum()) / int((~flags).sum())
    raise AssertionError("unreachable")


def check_propagation_oracle(trials: int = 25, seed: int = 2) -> tuple[bool, str]:
    """Sparse propagation vs dense matrix-power computation."""
    rng = Rng(seed, "selfcheck/prop")
    for _ in range(trials):
        n = 4 + int(rng.integers(13))
        g = make_class_graph(n, 3, 2, rng.split(f"g{n}"), p_in=0.4, p_out=0.2)
        s = rng.normal(size=g.n)
        sv = propagate_scores(energy_vector(s), g, K=3, alpha=0.5)
        dense = row_norm_adj(g).toarray()
        ref = s.copy()
        for _ in range(3):
            ref = 0.5 * ref + 0.5 * (dense @ ref)
        if np.max(np.abs(sv.scores - ref)) > 1e-10:
            return False, f"propagation deviates by {np.max(np.abs(sv.scores - ref)):.2e}"
        ident = propagate_scores(energy_vector(s), g, K=5, alpha=1.0)
        if not np.array_equal(ident.scores, s):
            return False, "alpha=1 is not an identity"
    return True, f"{trials} random graphs"


def energy_vector(scores: np.ndarray):
    from .detectors import ScoreVector

    return ScoreVector(scores, "raw")


def check_determinism(tmp_dir, seed: int = 3) -> tuple[bool, str]:
    """Same (graph, spec, seed) must serialize byte-identically twice."""
    import filecmp
    from pathlib import Path

    tmp_dir = Path(tmp_dir)
    g = make_class_graph(40, 5, 3, Rng(seed, "selfcheck/det"), with_texts=False)
    spec = ShiftSpec(FEATURE_MIX, {"alpha_feat": 0.5}, seed=11)
    for run in ("a", "b"):
        save_split(generate_split(g, spec), tmp_dir / run, config_hash="check")
    cmp = filecmp.dircmp(tmp_dir / "a", tmp_dir / "b")
    same = _trees_equal(tmp_dir / "a", tmp_dir / "b")
    return same, "byte-identical trees" if same else f"differs: {cmp.diff_files}"


def _trees_equal(a, b) -> bool:
    from pathlib import Path

    a, b = Path(a), Path(b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if files_a != files_b:
        return False
    return all((a / p).read_bytes() == (b / p).read_bytes() for p in files_a)


def check_energy_identity(seed: int = 4) -> tuple[bool, str]:
    """Energy of shifted logits obeys e(z + c) = e(z) - c."""
    rng = Rng(seed, "selfcheck/energy")
    z = rng.normal(size=(50, 6))
    e = energy_score(z).scores
    c = 0.83
    e_shift = energy_score(z + c).scores
    err = np.max(np.abs(e_shift - (e - c)))
    return err < 1e-9, f"max deviation {err:.2e}"


def run_all(tmp_dir) -> tuple[bool, str]:
    """Execute every check; returns (all_ok, printable table)."""
    checks = [
        ("gradients/primitives", lambda: check_primitive_gradients(trials=3)),
        ("metrics/oracles", check_metric_oracles),
        ("propagation/oracle", check_propagation_oracle),
        ("energy/shift-identity", check_energy_identity),
        ("shifts/determinism", lambda: check_determinism(tmp_dir)),
    ]
    buf = io.StringIO()
    all_ok = True
    buf.write(f"{'check':<28}{'status':<8}{'time':>8}  detail\n")
    for name, fn in checks:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        all_ok &= ok
        buf.write(f"{name:<28}{'PASS' if ok else 'FAIL':<8}{elapsed:>7.2f}s  {detail}\n")
    buf.write(f"\noverall: {'PASS' if all_ok else 'FAIL'}\n")
    return all_ok, buf.getvalue()
