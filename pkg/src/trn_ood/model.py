"""The text-and-topology OOD detector and its training loop.

Pipeline: a GCN structure encoder over the self-looped normalized
adjacency, a neighborhood cross-attention block that injects structural
context into the text embeddings, a weight-generating network (full or
low-rank factorized) that emits per-node projections of the text features,
a fuse GCN layer, and a one-layer GCN classifier head. Training minimizes
classification cross-entropy plus a weighted symmetric contrastive term
that pulls each node's projected-text and structure-aware embeddings
together.

Also hosts the plain GCN classifier used as the backbone for the post-hoc
detector baselines, and the sectioned-binary checkpoint format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import atomic_write_bytes
from .graph import TrnGraph, sym_norm_adj
from .rng import Rng


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss ({value}) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TntConfig:
    """Model and optimization hyperparameters.

    Defaults follow the published configuration: projection size 128,
    rank 16, a two-layer weight-generating MLP, one GCN layer per
    component, contrastive temperature 0.1.
    """

    d: int
    d_p: int = 128
    r: int = 16
    hyper_hidden: int | None = None
    L: int = 1
    tau: float = 0.1
    lam: float = 0.5
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 0.0
    use_low_rank: bool = False
    seed: int = 0
    contrastive_batch: int = 2048
    hyper_full_cap: int = 1 << 28

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.use_low_rank and self.r > min(self.d_p, self.d):
            raise ValueError(f"rank {self.r} exceeds min(d_p, d) = {min(self.d_p, self.d)}")

    @property
    def hyper_width(self) -> int:
        return self.hyper_hidden if self.hyper_hidden is not None else self.d_p

    def to_dict(self) -> dict:
        return asdict(self)


def glorot(rng: Rng, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    """Fan-based uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out)) * scale
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)


@dataclass
class TntState:
    """All trainable tensors plus the optimizer state."""

    enc_weights: list[Tensor]
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    hyper_w1: Tensor
    hyper_b1: Tensor
    hyper_w2: Tensor
    hyper_b2: Tensor
    fuse_w: Tensor
    cls_w: Tensor
    num_classes: int
    config: TntConfig
    opt: ad.AdamState | None = None

    @classmethod
    def initialize(cls, config: TntConfig, num_classes: int, rng: Rng | None = None,
                   dtype=np.float32) -> "TntState":
        rng = rng or Rng(config.seed, "init/tnt")
        d, d_p, h = config.d, config.d_p, config.hyper_width
        hyper_out = (d_p * config.r + config.r * d) if config.use_low_rank else d_p * d
        enc = []
        fin = d
        for _ in range(config.L):
            enc.append(Tensor(glorot(rng, fin, d_p), requires_grad=True, dtype=dtype))
            fin = d_p
        def t(arr):
            return Tensor(arr, requires_grad=True, dtype=dtype)
        state = cls(
            enc_weights=enc,
            w_q=t(glorot(rng, d_p, d_p)),
            w_k=t(glorot(rng, d, d_p)),
            w_v=t(glorot(rng, d, d)),
            hyper_w1=t(glorot(rng, d, h)),
            hyper_b1=t(np.zeros(h, dtype=np.float32)),
            # down-scaled so early projections start as small perturbations
            hyper_w2=t(glorot(rng, h, hyper_out, scale=0.1)),
            hyper_b2=t(np.zeros(hyper_out, dtype=np.float32)),
            fuse_w=t(glorot(rng, d_p, d_p)),
            cls_w=t(glorot(rng, d_p, num_classes)),
            num_classes=num_classes,
            config=config,
        )
        state.opt = ad.AdamState.for_params(state.params())
        return state

    def params(self) -> list[Tensor]:
        return [*self.enc_weights, self.w_q, self.w_k, self.w_v,
                self.hyper_w1, self.hyper_b1, self.hyper_w2, self.hyper_b2,
                self.fuse_w, self.cls_w]

    def named_params(self) -> dict[str, Tensor]:
        named = {f"enc.{i}.weight": w for i, w in enumerate(self.enc_weights)}
        named.update({
            "attn.q": self.w_q, "attn.k": self.w_k, "attn.v": self.w_v,
            "hyper.l1.weight": self.hyper_w1, "hyper.l1.bias": self.hyper_b1,
            "hyper.l2.weight": self.hyper_w2, "hyper.l2.bias": self.hyper_b2,
            "fuse.weight": self.fuse_w, "cls.weight": self.cls_w,
        })
        return named


@dataclass
class TntOutputs:
    """Forward-pass artifacts; rows of every matrix align with graph nodes."""

    g: Tensor          # structural embeddings [n, d_p]
    z: Tensor          # fused representations [n, d]
    p_t: Tensor        # projected text representations [n, d_p]
    g_tilde: Tensor    # fuse-GCN output [n, d_p]
    logits: Tensor     # [n, C]


def _attention_mask(g: TrnGraph, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Additive -1e30 mask for non-neighbor pairs and a 0/1 row gate for
    nodes that have at least one neighbor."""
    n = g.n
    mask = np.full((n, n), -1e30, dtype=dtype)
    i = g.edges[:, 0].astype(np.int64)
    j = g.edges[:, 1].astype(np.int64)
    mask[i, j] = 0.0
    mask[j, i] = 0.0
    gate = np.zeros((n, n), dtype=dtype)
    has_nbr = np.zeros(n, dtype=bool)
    has_nbr[i] = True
    has_nbr[j] = True
    gate[has_nbr, :] = 1.0
    return mask, gate


def encode_structure(x: Tensor, a_hat: sp.spmatrix, state: TntState) -> Tensor:
    """L rounds of relu(A_hat @ H @ W)."""
    h = x
    for w in state.enc_weights:
        h = ad.relu(ad.matmul(ad.sparse_dense_matmul(a_hat, h), w))
    return h


def cross_attention(x: Tensor, g_struct: Tensor, mask: np.ndarray,
                    gate: np.ndarray, state: TntState) -> Tensor:
    """Residual neighbor attention: queries from structure, keys/values
    from text. Nodes without neighbors keep their text embedding as-is."""
    d_z = state.config.d_p
    q = ad.matmul(g_struct, state.w_q)
    k = ad.matmul(x, state.w_k)
    v = ad.matmul(x, state.w_v)
    scores = ad.scalar_mul(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_z))
    scores = ad.add(scores, Tensor(mask, dtype=scores.data.dtype))
    attn = ad.softmax(scores, axis=1)
    attn = ad.mul(attn, Tensor(gate, dtype=attn.data.dtype))
    return ad.add(x, ad.matmul(attn, v))


def _hyper_mlp(z: Tensor, state: TntState) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(z, state.hyper_w1), state.hyper_b1))
    return ad.add(ad.matmul(h, state.hyper_w2), state.hyper_b2)


def hyper_project_full(z: Tensor, x: Tensor, state: TntState) -> Tensor:
    """Per-node full projection: reshape the generated row to [d_p, d] and
    apply it to the node's text embedding."""
    cfg = state.config
    n = x.data.shape[0]
    budget = n * cfg.d_p * cfg.d
    if budget > cfg.hyper_full_cap:
        raise MemoryError(
            f"full per-node projections need {budget} floats "
            f"(> cap {cfg.hyper_full_cap}); set use_low_rank=True")
    w_rows = _hyper_mlp(z, state)
    w3 = ad.reshape(w_rows, (n, cfg.d_p, cfg.d))
    return ad.per_row_matvec(w3, x)


def hyper_project_lowrank(z: Tensor, x: Tensor, state: TntState) -> Tensor:
    """Factorized projection L_i (R_i x_i), evaluated right to left."""
    cfg = state.config
    n = x.data.shape[0]
    split = cfg.d_p * cfg.r
    out = _hyper_mlp(z, state)
    l_fac = ad.reshape(ad.slice_cols(out, 0, split), (n, cfg.d_p, cfg.r))
    r_fac = ad.reshape(ad.slice_cols(out, split, split + cfg.r * cfg.d),
                       (n, cfg.r, cfg.d))
    t = ad.per_row_matvec(r_fac, x)
    return ad.per_row_matvec(l_fac, t)


def forward(g: TrnGraph, state: TntState, a_hat: sp.spmatrix | None = None) -> TntOutputs:
    """End-to-end forward pass; pure function of (graph, weights).

    Runs at the precision of the state's weights (float32 in production,
    float64 when a test drives the finite-difference oracle path).
    """
    a_hat = sym_norm_adj(g) if a_hat is None else a_hat
    dtype = state.cls_w.data.dtype
    x = Tensor(g.features, dtype=dtype)
    mask, gate = _attention_mask(g, dtype)
    g_struct = encode_structure(x, a_hat, state)
    z = cross_attention(x, g_struct, mask, gate, state)
    if state.config.use_low_rank:
        p_t = hyper_project_lowrank(z, x, state)
    else:
        p_t = hyper_project_full(z, x, state)
    g_tilde = ad.relu(ad.matmul(ad.sparse_dense_matmul(a_hat, p_t), state.fuse_w))
    logits = ad.matmul(ad.sparse_dense_matmul(a_hat, g_tilde), state.cls_w)
    return TntOutputs(g=g_struct, z=z, p_t=p_t, g_tilde=g_tilde, logits=logits)


def contrastive_loss(p_t: Tensor, g_tilde: Tensor, tau: float) -> Tensor:
    """Symmetric InfoNCE between row-normalized projections, diagonal targets."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    n = p_t.data.shape[0]
    p_hat = ad.l2_normalize(p_t)
    g_hat = ad.l2_normalize(g_tilde)
    sim = ad.scalar_mul(ad.matmul(p_hat, ad.transpose(g_hat)), 1.0 / tau)
    targets = np.arange(n)
    both = ad.add(ad.cross_entropy(sim, targets),
                  ad.cross_entropy(ad.transpose(sim), targets))
    return ad.scalar_mul(both, 0.5)


@dataclass
class EpochLog:
    epoch: int
    cls_loss: float
    cont_loss: float
    total: float


def train(g: TrnGraph, config: TntConfig, train_mask: np.ndarray,
          state: TntState | None = None) -> tuple[TntState, list[EpochLog]]:
    """Adam training of the combined objective; deterministic given the seed.

    The contrastive term runs on a uniformly sampled node batch of at most
    `contrastive_batch` per step (full batch when the graph is small).
    """
    train_idx = np.flatnonzero(np.asarray(train_mask).astype(bool))
    if train_idx.size == 0:
        raise ValueError("train: empty train mask")
    state = state or TntState.initialize(config, g.num_classes)
    rng = Rng(config.seed, "train/tnt/batches")
    a_hat = sym_norm_adj(g)
    labels = g.labels
    logs: list[EpochLog] = []
    for epoch in range(config.epochs):
        with ad.Tape() as tape:
            out = forward(g, state, a_hat)
            cls = ad.cross_entropy(ad.gather_rows(out.logits, train_idx),
                                   labels[train_idx])
            if config.lam > 0:
                if g.n > config.contrastive_batch:
                    batch = np.sort(rng.choice(g.n, size=config.contrastive_batch,
                                               replace=False))
                    cont = contrastive_loss(ad.gather_rows(out.p_t, batch),
                                            ad.gather_rows(out.g_tilde, batch),
                                            config.tau)
                else:
                    cont = contrastive_loss(out.p_t, out.g_tilde, config.tau)
                total = ad.add(cls, ad.scalar_mul(cont, config.lam))
                cont_val = float(cont.data)
            else:
                total = cls
                cont_val = 0.0
            if not np.isfinite(total.data):
                raise TrainingDiverged(epoch, float(total.data))
            grads = ad.backward(total, tape)
        params = state.params()
        glist = [grads[p] for p in params]
        if config.weight_decay:
            glist = [gr + config.weight_decay * p.data for gr, p in zip(glist, params)]
        ad.adam_step(params, glist, state.opt, config.lr)
        logs.append(EpochLog(epoch, float(cls.data), cont_val, float(total.data)))
    return state, logs


# ---------------------------------------------------------------------------
# Plain GCN classifier (backbone for the post-hoc baselines)
# ---------------------------------------------------------------------------

@dataclass
class GcnConfig:
    d: int
    hidden: int = 64
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GcnState:
    w1: Tensor
    w2: Tensor
    num_classes: int
    config: GcnConfig
    opt: ad.AdamState | None = None

    @classmethod
    def initialize(cls, config: GcnConfig, num_classes: int,
                   rng: Rng | None = None) -> "GcnState":
        rng = rng or Rng(config.seed, "init/gcn")
        state = cls(
            w1=Tensor(glorot(rng, config.d, config.hidden), requires_grad=True),
            w2=Tensor(glorot(rng, config.hidden, num_classes), requires_grad=True),
            num_classes=num_classes, config=config)
        state.opt = ad.AdamState.for_params(state.params())
        return state

    def params(self) -> list[Tensor]:
        return [self.w1, self.w2]

    def named_params(self) -> dict[str, Tensor]:
        return {"gcn.l1.weight": self.w1, "gcn.l2.weight": self.w2}


def gcn_forward(g: TrnGraph, state: GcnState,
                a_hat: sp.spmatrix | None = None) -> tuple[Tensor, Tensor]:
    """Two-layer GCN; returns (hidden, logits)."""
    a_hat = sym_norm_adj(g) if a_hat is None else a_hat
    x = Tensor(g.features)
    h = ad.relu(ad.matmul(ad.sparse_dense_matmul(a_hat, x), state.w1))
    logits = ad.matmul(ad.sparse_dense_matmul(a_hat, h), state.w2)
    return h, logits


def gcn_train(g: TrnGraph, config: GcnConfig, train_mask: np.ndarray,
              state: GcnState | None = None) -> tuple[GcnState, list[EpochLog]]:
    train_idx = np.flatnonzero(np.asarray(train_mask).astype(bool))
    if train_idx.size == 0:
        raise ValueError("gcn_train: empty train mask")
    state = state or GcnState.initialize(config, g.num_classes)
    a_hat = sym_norm_adj(g)
    logs: list[EpochLog] = []
    for epoch in range(config.epochs):
        with ad.Tape() as tape:
            _, logits = gcn_forward(g, state, a_hat)
            loss = ad.cross_entropy(ad.gather_rows(logits, train_idx),
                                    g.labels[train_idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, float(loss.data))
            grads = ad.backward(loss, tape)
        params = state.params()
        glist = [grads[p] for p in params]
        if config.weight_decay:
            glist = [gr + config.weight_decay * p.data for gr, p in zip(glist, params)]
        ad.adam_step(params, glist, state.opt, config.lr)
        logs.append(EpochLog(epoch, float(loss.data), 0.0, float(loss.data)))
    return state, logs


# ---------------------------------------------------------------------------
# Checkpoints: magic "TNT1", JSON config record, then named f32 tensors
# ---------------------------------------------------------------------------

_MAGIC = b"TNT1"


def save_checkpoint(path: Path, config_record: dict, tensors: dict[str, np.ndarray]) -> None:
    """Sectioned little-endian binary: header + (name, shape, f32 data) records."""
    import json

    blob = bytearray()
    blob += _MAGIC
    cfg = json.dumps(config_record, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        blob += struct.pack("<I", len(nb))
        blob += nb
        blob += struct.pack("<I", arr32.ndim)
        blob += struct.pack(f"<{arr32.ndim}I", *arr32.shape)
        blob += arr32.tobytes()
    atomic_write_bytes(Path(path), bytes(blob))


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    import json

    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    off = 4
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config_record = json.loads(raw[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = arr.copy()
    return config_record, tensors


def state_to_checkpoint(state: TntState | GcnState) -> tuple[dict, dict[str, np.ndarray]]:
    record = {"kind": "tnt" if isinstance(state, TntState) else "gcn",
              "num_classes": state.num_classes,
              "config": state.config.to_dict()}
    tensors = {name: t.data for name, t in state.named_params().items()}
    return record, tensors


def state_from_checkpoint(record: dict, tensors: dict[str, np.ndarray]):
    if record["kind"] == "tnt":
        cfg = TntConfig(**record["config"])
        state = TntState.initialize(cfg, record["num_classes"])
    else:
        cfg = GcnConfig(**record["config"])
        state = GcnState.initialize(cfg, record["num_classes"])
    named = state.named_params()
    if set(named) != set(tensors):
        raise ValueError(f"checkpoint tensors {sorted(tensors)} do not match "
                         f"state {sorted(named)}")
    for name, tensor_obj in named.items():
        arr = tensors[name].astype(np.float32)
        if arr.shape != tensor_obj.data.shape:
            raise ValueError(f"checkpoint tensor {name}: shape {arr.shape} vs "
                             f"{tensor_obj.data.shape}")
        tensor_obj.data = arr
    return state
