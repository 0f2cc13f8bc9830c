"""File formats: NPY matrices, edge lists, JSON-Lines texts, graph directories.

All writes are deterministic (sorted JSON keys, fixed float repr, NPY v1.0
little-endian) so that identical inputs produce byte-identical trees, and
atomic (temp file + rename) so concurrent cells never observe partial files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .graph import GraphError, TrnGraph, make_graph


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, payload: str) -> None:
    atomic_write_bytes(path, payload.encode("utf-8"))


def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, no whitespace drift, UTF-8 verbatim."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def save_npy(path: Path, arr: np.ndarray) -> None:
    import io

    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr))
    atomic_write_bytes(path, buf.getvalue())


def load_features(path: Path) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 2:
        raise GraphError(f"{path}: features must be 2-D, got shape {arr.shape}")
    return arr.astype(np.float32, copy=False)


def load_int_vector(path: Path, name: str) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 1:
        raise GraphError(f"{path}: {name} must be 1-D, got shape {arr.shape}")
    return arr.astype(np.int64, copy=False)


def load_edges(path: Path) -> np.ndarray:
    """Edge list from .npy (u32 [m, 2]) or whitespace .txt, by extension."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    elif path.suffix == ".txt":
        arr = np.loadtxt(path, dtype=np.int64, ndmin=2)
        if arr.size == 0:
            arr = np.zeros((0, 2), dtype=np.int64)
    else:
        raise GraphError(f"{path}: unknown edge-list extension (want .npy or .txt)")
    if arr.ndim != 2 or (arr.size and arr.shape[1] != 2):
        raise GraphError(f"{path}: edge list must have two columns, got shape {arr.shape}")
    return arr


def load_texts(path: Path, n: int | None = None) -> list[str]:
    """JSON Lines, one {"id": int, "text": str} object per node, id order 0..n-1."""
    out: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                node = int(obj["id"])
                text = str(obj["text"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: malformed texts line ({exc})") from exc
            if node in out:
                raise GraphError(f"{path}:{lineno}: duplicate id {node}")
            out[node] = text
    count = n if n is not None else len(out)
    if sorted(out) != list(range(count)):
        raise GraphError(f"{path}: ids must cover 0..{count - 1} exactly")
    return [out[i] for i in range(count)]


def save_texts(path: Path, texts) -> None:
    lines = []
    for i, t in enumerate(texts):
        lines.append(json.dumps({"id": i, "text": str(t)}, sort_keys=True,
                                ensure_ascii=False))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def save_graph_dir(g: TrnGraph, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_npy(directory / "features.npy", g.features.astype(np.float32))
    save_npy(directory / "edges.npy", g.edges.astype(np.uint32))
    save_npy(directory / "labels.npy", g.labels.astype(np.int64))
    meta = {"n": g.n, "d": g.d, "num_classes": g.num_classes,
            "has_texts": g.texts is not None, "has_years": g.years is not None}
    write_json(directory / "meta.json", meta)
    if g.texts is not None:
        save_texts(directory / "texts.jsonl", g.texts)
    if g.years is not None:
        save_npy(directory / "years.npy", g.years.astype(np.int64))


def load_graph_dir(directory: Path) -> TrnGraph:
    directory = Path(directory)
    with open(directory / "meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    features = load_features(directory / "features.npy")
    edges = load_edges(directory / "edges.npy")
    labels = load_int_vector(directory / "labels.npy", "labels")
    texts = load_texts(directory / "texts.jsonl", features.shape[0]) if meta.get("has_texts") else None
    years = load_int_vector(directory / "years.npy", "years") if meta.get("has_years") else None
    return make_graph(features, edges, labels, meta["num_classes"],
                      texts=texts, years=years)


def load_graph(features_path, edges_path, labels_path, num_classes=None,
               texts_path=None, years_path=None) -> TrnGraph:
    """Assemble a TrnGraph from the individual on-disk pieces."""
    features = load_features(Path(features_path))
    edges = load_edges(Path(edges_path))
    labels = load_int_vector(Path(labels_path), "labels")
    texts = load_texts(Path(texts_path), features.shape[0]) if texts_path else None
    years = load_int_vector(Path(years_path), "years") if years_path else None
    return make_graph(features, edges, labels, num_classes, texts=texts, years=years)
