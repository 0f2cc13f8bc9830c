"""Experiment configuration and the gen-shifts / train / eval pipeline.

Configs are TOML (human-edited); everything the pipeline writes is JSON,
CSV, or the binary formats of the other modules (machine-emitted). Every
metadata file carries the config hash, and evaluation refuses to mix
artifacts from different configs unless forced.

Output tree under the configured directory:

    splits/<split-name>/...     one OodSplit per (shift, seed) + manifest.json
    checkpoints/<backbone>_<graph-hash>_seed<k>.ckpt (+ .log.csv)
    eval/<split>__<method>__seed<k>.json
    results.csv, summary.csv
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomlkit

from . import __version__ as _toolkit_version
from . import model as tnt
from .dataio import atomic_write_text, load_graph, write_json
from .detectors import (MahalanobisModel, ScoreVector, elign_score, energy_score,
                        mahalanobis_score, msp_score, propagate_scores)
from .graph import TrnGraph
from .metrics import MetricReport, detection_report, id_accuracy
from .rng import Rng
from .shifts import (LABEL_LEAVE_OUT, TEMPORAL_SPLIT, TEXT_AUGMENT, OodSplit,
                     ShiftSpec, ShiftError, generate_split, id_nodes_for_leave_out,
                     load_split, save_split)
from .textaug import LexicalCache

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad experiment configuration (missing files, invalid values)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_METHOD_BACKBONES = {"msp": "gcn", "energy": "gcn", "mahalanobis": "gcn",
                     "elign": "tnt"}


@dataclass
class MethodConfig:
    name: str
    K: int = 0
    alpha: float = 0.5
    T: float = 1.0
    backbone: str = ""

    def __post_init__(self):
        if self.name not in _METHOD_BACKBONES:
            raise ConfigError(f"unknown method {self.name!r}; "
                              f"choose from {sorted(_METHOD_BACKBONES)}")
        if not self.backbone:
            self.backbone = _METHOD_BACKBONES[self.name]
        if self.backbone not in ("gcn", "tnt"):
            raise ConfigError(f"backbone must be 'gcn' or 'tnt', got {self.backbone!r}")
        if self.K < 0 or not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"method {self.name}: K={self.K}, alpha={self.alpha}")

    def method_id(self) -> str:
        bits = [self.name]
        if self.name == "elign":
            bits.append(f"T{self.T:g}".replace(".", "p"))
        if self.K > 0:
            bits.append(f"K{self.K}")
            bits.append(f"a{self.alpha:g}".replace(".", "p"))
        if self.backbone != _METHOD_BACKBONES[self.name]:
            bits.append(self.backbone)
        return "_".join(bits)

    def to_dict(self) -> dict:
        return {"name": self.name, "K": self.K, "alpha": self.alpha,
                "T": self.T, "backbone": self.backbone}


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    masks: dict
    shifts: list[ShiftSpec] = field(default_factory=list)  # seed 0 templates
    methods: list[MethodConfig] = field(default_factory=list)
    model: dict = field(default_factory=dict)
    gcn: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "out"

    def canonical_dict(self) -> dict:
        """Normalized config content; excludes the output location so the
        hash identifies the experiment, not where it lands on disk."""
        return {
            "name": self.name,
            "dataset": dict(sorted(self.dataset.items())),
            "masks": dict(sorted(self.masks.items())),
            "shifts": [s.to_dict() for s in self.shifts],
            "methods": [m.to_dict() for m in self.methods],
            "model": dict(sorted(self.model.items())),
            "gcn": dict(sorted(self.gcn.items())),
            "seeds": list(self.seeds),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_toml(self) -> str:
        doc = self.canonical_dict()
        doc["output"] = {"dir": self.out_dir}
        doc["shifts"] = [
            {"kind": s["kind"], "seed": s["seed"], **s["params"]}
            for s in doc["shifts"]
        ]
        doc["methods"] = [m.to_dict() for m in self.methods]
        return tomlkit.dumps(doc)


def _shift_from_table(table: dict) -> ShiftSpec:
    table = dict(table)
    kind = table.pop("kind", None)
    if kind is None:
        raise ConfigError("every [[shifts]] table needs a 'kind'")
    seed = int(table.pop("seed", 0))
    return ShiftSpec(kind=kind, params=table, seed=seed)


def parse_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        dataset = dict(doc["dataset"])
    except KeyError:
        raise ConfigError("config needs a [dataset] table") from None
    if base_dir is not None:
        for key in ("features", "edges", "labels", "texts", "years", "lexical_cache"):
            if key in dataset and not os.path.isabs(str(dataset[key])):
                dataset[key] = str(base_dir / dataset[key])
    for key in ("features", "edges", "labels"):
        if key not in dataset:
            raise ConfigError(f"[dataset] needs '{key}'")
        if not Path(dataset[key]).exists():
            raise ConfigError(f"[dataset] {key}: no such file {dataset[key]}")
    seeds = [int(s) for s in doc.get("seeds", [0])]
    if not seeds:
        raise ConfigError("seed list must be non-empty")
    try:
        shifts = [_shift_from_table(t) for t in doc.get("shifts", [])]
        methods = [MethodConfig(**dict(t)) for t in doc.get("methods", [])]
    except (ShiftError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = doc.get("output", {}).get("dir", "out")
    return ExperimentConfig(
        name=str(doc.get("name", "experiment")),
        dataset=dataset,
        masks=dict(doc.get("masks", {})),
        shifts=shifts,
        methods=methods,
        model=dict(doc.get("model", {})),
        gcn=dict(doc.get("gcn", {})),
        seeds=seeds,
        out_dir=str(out_dir),
    )


def load_dataset(config: ExperimentConfig) -> TrnGraph:
    ds = config.dataset
    return load_graph(ds["features"], ds["edges"], ds["labels"],
                      num_classes=ds.get("num_classes"),
                      texts_path=ds.get("texts"), years_path=ds.get("years"))


def graph_hash(g: TrnGraph) -> str:
    h = hashlib.sha256()
    h.update(np.int64(g.n).tobytes())
    h.update(np.int64(g.num_classes).tobytes())
    h.update(g.features.tobytes())
    h.update(g.edges.tobytes())
    h.update(g.labels.tobytes())
    return h.hexdigest()[:12]


def split_masks(g: TrnGraph, masks_cfg: dict) -> dict[str, np.ndarray]:
    """Load masks from files, or draw a stratified split by fractions."""
    if "train" in masks_cfg:
        out = {}
        for part in ("train", "val", "test"):
            arr = np.load(masks_cfg[part]).astype(bool)
            if arr.shape != (g.n,):
                raise ConfigError(f"mask {part}: shape {arr.shape} != [{g.n}]")
            out[part] = arr
        return out
    train_frac = float(masks_cfg.get("train_fraction", 0.6))
    val_frac = float(masks_cfg.get("val_fraction", 0.2))
    if not (0 < train_frac < 1 and 0 <= val_frac < 1 and train_frac + val_frac < 1):
        raise ConfigError(f"bad split fractions {train_frac}/{val_frac}")
    seed = int(masks_cfg.get("seed", 0))
    rng = Rng(seed, "masks")
    train = np.zeros(g.n, dtype=bool)
    val = np.zeros(g.n, dtype=bool)
    test = np.zeros(g.n, dtype=bool)
    for c in range(g.num_classes):
        nodes = np.flatnonzero(g.labels == c)
        perm = nodes[rng.permutation(nodes.size)]
        n_tr = int(round(train_frac * perm.size))
        n_va = int(round(val_frac * perm.size))
        train[perm[:n_tr]] = True
        val[perm[n_tr:n_tr + n_va]] = True
        test[perm[n_tr + n_va:]] = True
    for part, mask in (("train", train), ("test", test)):
        if not mask.any():
            raise ConfigError(f"stratified split produced an empty {part} set")
    return {"train": train, "val": val, "test": test}


# ---------------------------------------------------------------------------
# gen-shifts
# ---------------------------------------------------------------------------

def split_dir_name(spec: ShiftSpec) -> str:
    return f"{spec.slug()}_seed{spec.seed}"


def cmd_gen_shifts(config: ExperimentConfig, out_dir: Path | None = None) -> int:
    """Write one OodSplit directory per (shift, seed) plus a manifest."""
    out = Path(out_dir or config.out_dir)
    base = load_dataset(config)
    cache = None
    if config.dataset.get("lexical_cache"):
        cache = LexicalCache.load(config.dataset["lexical_cache"])
    chash = config.config_hash()
    entries = []
    failures = []
    for template in config.shifts:
        for seed in config.seeds:
            spec = ShiftSpec(template.kind, dict(template.params), seed=seed)
            name = split_dir_name(spec)
            try:
                split = generate_split(base, spec, cache=cache)
                save_split(split, out / "splits" / name, config_hash=chash)
                entries.append({
                    "name": name,
                    "path": f"splits/{name}",
                    "kind": spec.kind,
                    "seed": seed,
                    "params": spec.to_dict()["params"],
                    "requires_reembedding": spec.kind == TEXT_AUGMENT,
                })
            except (ShiftError, ValueError, MemoryError) as exc:
                log.error("shift %s failed: %s", name, exc)
                failures.append({"name": name, "error": str(exc)})
    manifest = {
        "config_hash": chash,
        "toolkit_version": _toolkit_version,
        "dataset": config.name,
        "splits": entries,
        "failures": failures,
    }
    write_json(out / "splits" / "manifest.json", manifest)
    return 0 if not failures else 2


def read_manifest(out: Path) -> dict:
    path = Path(out) / "splits" / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{path} missing; run gen-shifts first")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _needed_backbones(config: ExperimentConfig) -> set[str]:
    return {m.backbone for m in config.methods} or {"tnt"}


def _make_tnt_config(config: ExperimentConfig, d: int, seed: int) -> tnt.TntConfig:
    kwargs = dict(config.model)
    kwargs.pop("d", None)
    kwargs.pop("seed", None)
    return tnt.TntConfig(d=d, seed=seed, **kwargs)


def _make_gcn_config(config: ExperimentConfig, d: int, seed: int) -> tnt.GcnConfig:
    kwargs = dict(config.gcn)
    kwargs.pop("d", None)
    kwargs.pop("seed", None)
    return tnt.GcnConfig(d=d, seed=seed, **kwargs)


def _checkpoint_path(out: Path, backbone: str, ghash: str, seed: int) -> Path:
    return Path(out) / "checkpoints" / f"{backbone}_{ghash}_seed{seed}.ckpt"


def _train_one(backbone: str, id_graph: TrnGraph, config: ExperimentConfig,
               seed: int):
    masks = split_masks(id_graph, config.masks)
    if backbone == "tnt":
        cfg = _make_tnt_config(config, id_graph.d, seed)
        return tnt.train(id_graph, cfg, masks["train"])
    cfg = _make_gcn_config(config, id_graph.d, seed)
    return tnt.gcn_train(id_graph, cfg, masks["train"])


def _write_log_csv(path: Path, logs, chash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "cls_loss", "cont_loss", "total"])
    for row in logs:
        writer.writerow([row.epoch, repr(row.cls_loss), repr(row.cont_loss),
                         repr(row.total)])
    atomic_write_text(path, buf.getvalue())


def _id_graphs_to_train(config: ExperimentConfig, out: Path) -> dict[str, TrnGraph]:
    """Distinct ID graphs across splits, keyed by content hash.

    Attribute and structural shifts share the untouched base graph, so one
    checkpoint per seed serves them all; label/temporal splits train on
    their own ID subgraphs.
    """
    graphs: dict[str, TrnGraph] = {}
    base = load_dataset(config)
    if not config.shifts:
        graphs[graph_hash(base)] = base
        return graphs
    manifest = read_manifest(out)
    for entry in manifest["splits"]:
        split = load_split(out / entry["path"])
        g = split.id_graph
        graphs.setdefault(graph_hash(g), g)
    return graphs


def cmd_train(config: ExperimentConfig, out_dir: Path | None = None) -> int:
    """Train each needed backbone per (ID graph, seed); write checkpoints + logs."""
    out = Path(out_dir or config.out_dir)
    chash = config.config_hash()
    graphs = _id_graphs_to_train(config, out)
    for ghash, id_graph in sorted(graphs.items()):
        for backbone in sorted(_needed_backbones(config)):
            for seed in config.seeds:
                path = _checkpoint_path(out, backbone, ghash, seed)
                if path.exists():
                    continue
                state, logs = _train_one(backbone, id_graph, config, seed)
                record, tensors = tnt.state_to_checkpoint(state)
                record["config_hash"] = chash
                record["graph_hash"] = ghash
                record["seed"] = seed
                tnt.save_checkpoint(path, record, tensors)
                _write_log_csv(path.with_suffix(".log.csv"), logs, chash)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@dataclass
class _Backbone:
    """Frozen forward passes of one checkpoint over one split's two graphs."""

    kind: str
    state: object
    id_logits: np.ndarray
    id_embed: np.ndarray          # penultimate representation on the ID graph
    id_ptext: np.ndarray | None
    ood_logits: np.ndarray
    ood_embed: np.ndarray
    ood_ptext: np.ndarray | None


def _run_backbone(kind: str, state, g_id: TrnGraph, g_ood: TrnGraph) -> _Backbone:
    if kind == "tnt":
        out_id = tnt.forward(g_id, state)
        out_ood = tnt.forward(g_ood, state)
        return _Backbone(kind, state,
                         out_id.logits.data.astype(np.float64),
                         out_id.g_tilde.data.astype(np.float64),
                         out_id.p_t.data.astype(np.float64),
                         out_ood.logits.data.astype(np.float64),
                         out_ood.g_tilde.data.astype(np.float64),
                         out_ood.p_t.data.astype(np.float64))
    h_id, logit_id = tnt.gcn_forward(g_id, state)
    h_ood, logit_ood = tnt.gcn_forward(g_ood, state)
    return _Backbone(kind, state,
                     logit_id.data.astype(np.float64), h_id.data.astype(np.float64),
                     None,
                     logit_ood.data.astype(np.float64), h_ood.data.astype(np.float64),
                     None)


def _l2n(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out


def _method_scores_on(side: str, bb: _Backbone, method: MethodConfig,
                      graph: TrnGraph, maha: MahalanobisModel | None) -> ScoreVector:
    logits = bb.id_logits if side == "id" else bb.ood_logits
    embed = bb.id_embed if side == "id" else bb.ood_embed
    ptext = bb.id_ptext if side == "id" else bb.ood_ptext
    if method.name == "msp":
        sv = msp_score(logits)
    elif method.name == "energy":
        sv = energy_score(logits)
    elif method.name == "mahalanobis":
        sv = mahalanobis_score(embed, maha)
    elif method.name == "elign":
        sv = elign_score(energy_score(logits), _l2n(ptext), _l2n(embed), T=method.T)
    else:  # pragma: no cover - filtered at config parse
        raise ConfigError(f"unknown method {method.name}")
    if method.K > 0:
        sv = propagate_scores(sv, graph, method.K, method.alpha)
    return sv


def _eval_cell(split: OodSplit, method: MethodConfig, bb: _Backbone,
               masks: dict[str, np.ndarray], maha: MahalanobisModel | None
               ) -> MetricReport:
    kind = split.spec.kind
    test_idx = np.flatnonzero(masks["test"])
    acc = id_accuracy(bb.id_logits, split.id_graph.labels, masks["test"])
    if kind == LABEL_LEAVE_OUT:
        # single evaluation graph: ID test nodes vs withheld-class nodes
        sv = _method_scores_on("ood", bb, method, split.ood_graph, maha)
        id_nodes = id_nodes_for_leave_out(split.ood_graph,
                                          split.spec.params["ood_classes"])
        neg = sv.scores[id_nodes[test_idx]]
        pos = sv.scores[split.eval_nodes[split.ood_flags]]
    elif kind == TEMPORAL_SPLIT:
        sv = _method_scores_on("ood", bb, method, split.ood_graph, maha)
        years = split.ood_graph.years
        lo, hi = split.spec.params["r_id"]
        id_rows = np.flatnonzero((years >= lo) & (years <= hi))
        neg = sv.scores[id_rows[test_idx]] if id_rows.size else np.zeros(0)
        pos = sv.scores[split.eval_nodes[split.ood_flags]]
    else:
        # perturbed-copy scenarios: ID test nodes on the clean graph vs the
        # same node indices on the perturbed graph
        sv_id = _method_scores_on("id", bb, method, split.id_graph, maha)
        sv_ood = _method_scores_on("ood", bb, method, split.ood_graph, maha)
        neg = sv_id.scores[test_idx]
        pos = sv_ood.scores[test_idx]
    scores = np.concatenate([neg, pos])
    flags = np.concatenate([np.zeros(neg.size, bool), np.ones(pos.size, bool)])
    return detection_report(scores, flags, id_acc=acc)


def cmd_eval(config: ExperimentConfig, out_dir: Path | None = None,
             force: bool = False) -> int:
    """Score every (split, method, seed) cell; write per-run JSON + CSV tables."""
    out = Path(out_dir or config.out_dir)
    chash = config.config_hash()
    manifest = read_manifest(out)
    if manifest.get("config_hash") != chash and not force:
        raise ConfigError(
            f"splits were generated with config {manifest.get('config_hash')}, "
            f"current config is {chash}; rerun gen-shifts or pass --force")
    if not config.methods:
        raise ConfigError("no [[methods]] configured")
    missing: list[str] = []
    rows: list[dict] = []

    # one run per (split, method); the split's seed selects the matching
    # checkpoint, so seed k pairs the seed-k shift with the seed-k model
    cells = []
    for entry in manifest["splits"]:
        split = load_split(out / entry["path"])
        masks = split_masks(split.id_graph, config.masks)
        ghash = graph_hash(split.id_graph)
        seed = int(entry["seed"])
        backbones: dict[str, _Backbone] = {}
        mahas: dict[str, MahalanobisModel | None] = {}
        for backbone in sorted({m.backbone for m in config.methods}):
            path = _checkpoint_path(out, backbone, ghash, seed)
            if not path.exists():
                missing.append(str(path))
                continue
            record, tensors = tnt.load_checkpoint(path)
            if record.get("config_hash") != chash and not force:
                raise ConfigError(
                    f"{path}: checkpoint config {record.get('config_hash')} "
                    f"!= current {chash}; retrain or pass --force")
            state = tnt.state_from_checkpoint(record, tensors)
            bb = _run_backbone(backbone, state, split.id_graph, split.ood_graph)
            if any(m.backbone == backbone and m.name == "mahalanobis"
                   for m in config.methods):
                mahas[backbone] = MahalanobisModel.fit(
                    bb.id_embed[masks["train"]],
                    split.id_graph.labels[masks["train"]],
                    split.id_graph.num_classes)
            else:
                mahas[backbone] = None
            backbones[backbone] = bb
        for method in config.methods:
            if method.backbone not in backbones:
                continue
            cells.append((entry, split, masks, seed, method,
                          backbones[method.backbone], mahas[method.backbone]))

    failures: list[str] = []

    def run_cell(cell):
        entry, split, masks, seed, method, bb, maha = cell
        cell_id = f"{entry['name']}__{method.method_id()}__seed{seed}"
        try:
            report = _eval_cell(split, method, bb, masks, maha)
        except Exception as exc:
            log.error("eval cell %s failed: %s", cell_id, exc)
            failures.append(f"{cell_id}: {exc}")
            return None
        payload = {
            "dataset": config.name,
            "split": entry["name"],
            "shift": split.spec.slug(),
            "shift_kind": entry["kind"],
            "method": method.method_id(),
            "seed": seed,
            "metrics": report.to_dict(),
            "config_hash": chash,
            "toolkit_version": _toolkit_version,
        }
        write_json(out / "eval" / f"{cell_id}.json", payload)
        return payload

    n_threads = max(1, int(os.environ.get("TRN_OOD_THREADS", "1")))
    if n_threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            payloads = list(pool.map(run_cell, cells))
    else:
        payloads = [run_cell(c) for c in cells]
    rows.extend(p for p in payloads if p is not None)

    _write_results_csv(out / "results.csv", rows, chash)
    _write_summary_csv(out / "summary.csv", rows, chash)
    if missing:
        log.error("missing checkpoints (skipped): %s", ", ".join(missing))
    return 2 if (missing or failures) else 0


_METRIC_COLS = ("auroc", "aupr", "fpr95", "id_acc")


def _write_results_csv(path: Path, rows: list[dict], chash: str) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "shift", "method", *_METRIC_COLS, "seed"])
    for row in sorted(rows, key=lambda r: (r["shift"], r["method"], r["seed"])):
        writer.writerow([row["dataset"], row["shift"], row["method"],
                         *[repr(row["metrics"][c]) for c in _METRIC_COLS],
                         row["seed"]])
    atomic_write_text(path, buf.getvalue())


def _aggregate(group: list[dict]) -> dict:
    out = {}
    for col in _METRIC_COLS:
        vals = np.asarray([r["metrics"][col] for r in group], dtype=np.float64)
        out[f"{col}_mean"] = float(vals.mean())
        out[f"{col}_std"] = float(vals.std())
    return out


def _write_summary_csv(path: Path, rows: list[dict], chash: str) -> None:
    """Mean +- std over seeds per (split, method), and over whole shift
    suites per method (the reporting convention for scenario aggregates)."""
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    header = ["dataset", "shift", "method", "n_runs"]
    for col in _METRIC_COLS:
        header += [f"{col}_mean", f"{col}_std"]
    writer.writerow(header)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["split"], row["method"]), []).append(row)
        groups.setdefault(("ALL", row["method"]), []).append(row)
    for (split, method) in sorted(groups):
        group = groups[(split, method)]
        agg = _aggregate(group)
        record = [group[0]["dataset"], split, method, len(group)]
        for col in _METRIC_COLS:
            record += [repr(agg[f"{col}_mean"]), repr(agg[f"{col}_std"])]
        writer.writerow(record)
    atomic_write_text(path, buf.getvalue())
