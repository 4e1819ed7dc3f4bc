"""Bag-of-tiles transformer with a classification head and a gene head.

A bag of k tile embeddings is projected to the internal width, a learnable
class token is prepended, a learnable positional embedding is added, and the
sequence runs through L pre-norm encoder blocks. The normalized class-token
output drives subtype logits; the remaining token outputs drive per-instance
gene predictions, aggregated per gene by averaging its top-n instance values.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, FormatError, ShapeError
from .nn.tensor import Tape, Tensor, active_tape

CHECKPOINT_MAGIC = b"SGCKPT01"


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults mirror the reference training setup."""

    depth: int = 1
    width: int = 384
    heads: int = 4
    mlp_ratio: int = 4
    bag_size: int = 49
    feat_dim: int = 1024
    num_genes: int = 0
    num_classes: int = 3
    gene_drop_p: float = 0.25
    mlp_drop_p: float = 0.0
    top_n_choices: tuple = (1, 2, 5, 10, 20, 49)
    dtype: str = "float32"

    def validate(self) -> "ModelConfig":
        if self.depth < 1:
            raise ConfigError(f"encoder depth must be >= 1, got {self.depth}")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if any(n < 1 or n > self.bag_size for n in self.top_n_choices):
            raise ConfigError(f"top_n_choices {self.top_n_choices} must lie in [1, bag_size]")
        if not 0.0 <= self.gene_drop_p < 1.0 or not 0.0 <= self.mlp_drop_p < 1.0:
            raise ConfigError("dropout probabilities must be in [0, 1)")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_genes < 0 or self.bag_size < 1 or self.feat_dim < 1:
            raise ConfigError("bag_size, feat_dim must be positive; num_genes non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["top_n_choices"] = list(self.top_n_choices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "top_n_choices" in d:
            d["top_n_choices"] = tuple(d["top_n_choices"])
        return cls(**d).validate()


def param_shape_inventory(config: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every learnable tensor; the single source of truth."""
    d, w = config.feat_dim, config.width
    hidden = config.mlp_ratio * w
    shapes: dict[str, tuple] = {
        "embed.weight": (d, w),
        "embed.bias": (w,),
        "class_token": (1, w),
        "pos_embed": (config.bag_size + 1, w),
    }
    for i in range(config.depth):
        p = f"blocks.{i}."
        shapes[p + "ln1.gain"] = (w,)
        shapes[p + "ln1.bias"] = (w,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + "attn." + name] = (w, w)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[p + "attn." + name] = (w,)
        shapes[p + "ln2.gain"] = (w,)
        shapes[p + "ln2.bias"] = (w,)
        shapes[p + "mlp.w1"] = (w, hidden)
        shapes[p + "mlp.b1"] = (hidden,)
        shapes[p + "mlp.w2"] = (hidden, w)
        shapes[p + "mlp.b2"] = (w,)
    shapes["final_ln.gain"] = (w,)
    shapes["final_ln.bias"] = (w,)
    shapes["cls_head.weight"] = (w, config.num_classes)
    shapes["cls_head.bias"] = (config.num_classes,)
    shapes["gene_head.weight"] = (w, config.num_genes)
    shapes["gene_head.bias"] = (config.num_genes,)
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shape_inventory(config).values())


class ModelParams:
    """All learnable tensors, addressable by name in a stable order."""

    def __init__(self, params: dict[str, nn.Param]):
        self._params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        params: dict[str, nn.Param] = {}
        for name, shape in param_shape_inventory(config).items():
            if name == "class_token" or name == "pos_embed":
                data = np.zeros(shape, dtype=dtype)
            elif name.endswith(".gain"):
                data = np.ones(shape, dtype=dtype)
            elif name.endswith(("bias", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
                data = np.zeros(shape, dtype=dtype)
            else:
                data = nn.trunc_normal(rng, shape, std=0.02, dtype=dtype)
            params[name] = nn.Param(data)
        return cls(params)

    def __getitem__(self, name: str) -> nn.Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def named(self) -> list[tuple[str, nn.Param]]:
        return sorted(self._params.items())

    def zero_grads(self) -> None:
        for _, p in self.named():
            p.zero_grad()

    def count(self) -> int:
        return sum(p.value.size for _, p in self.named())

    def block(self, i: int, group: str) -> dict[str, nn.Param]:
        prefix = f"blocks.{i}.{group}."
        return {k[len(prefix):]: p for k, p in self._params.items() if k.startswith(prefix)}

    def num_blocks(self) -> int:
        depths = {int(k.split(".")[1]) for k in self._params if k.startswith("blocks.")}
        return max(depths) + 1 if depths else 0

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: nn.Param(p.data.astype(dtype)) for k, p in self._params.items()})


@dataclass
class ForwardOutput:
    """Per-bag outputs: slide embedding, class logits, instance and slide gene predictions."""

    c: np.ndarray  # (batch, width)
    logits: np.ndarray  # (batch, classes)
    s: np.ndarray  # (batch, genes, bag_size)
    S: np.ndarray  # (batch, genes)


def embed_input(bags: Tensor, params: ModelParams) -> Tensor:
    """Project instances to the internal width, prepend the class token, add positions.

    The d -> width map is a plain linear projection; laying the d features of
    each instance out as a square block and convolving with kernel = stride =
    block side computes the same product, so no separate convolution path exists.
    """
    if bags.ndim != 3:
        raise ShapeError(f"expected (batch, bag_size, feat_dim) bags, got {bags.shape}")
    b = bags.shape[0]
    k_plus_1, width = params["pos_embed"].shape
    if bags.shape[1] != k_plus_1 - 1 or bags.shape[2] != params["embed.weight"].shape[0]:
        raise ShapeError(
            f"bag shape {bags.shape[1:]} does not match parameters "
            f"({k_plus_1 - 1}, {params['embed.weight'].shape[0]})"
        )
    projected = nn.linear(bags, params["embed.weight"], params["embed.bias"])
    token = nn.broadcast_to(params["class_token"].value, (b, 1, width))
    z0 = nn.concat([token, projected], axis=1)
    return nn.add(z0, params["pos_embed"].value)


def encoder_forward(
    z0: Tensor,
    params: ModelParams,
    heads: int,
    mlp_drop_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Pre-norm residual recurrence over all encoder blocks."""
    z = z0
    for i in range(params.num_blocks()):
        ln1 = params.block(i, "ln1")
        attended = nn.multi_head_self_attention(
            nn.layernorm(z, ln1["gain"], ln1["bias"]), params.block(i, "attn"), heads
        )
        z = nn.add(attended, z)
        ln2 = params.block(i, "ln2")
        fed = nn.mlp_block(
            nn.layernorm(z, ln2["gain"], ln2["bias"]), params.block(i, "mlp"), mlp_drop_p, training, rng
        )
        z = nn.add(fed, z)
    return z


def classify(z_l: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Slide embedding c = LN(class-token row) and its class logits."""
    row0 = nn.slice_axis(z_l, axis=1, start=0, stop=1)
    c = nn.layernorm(row0, params["final_ln.gain"], params["final_ln.bias"])
    c = nn.reshape(c, (z_l.shape[0], z_l.shape[2]))
    logits = nn.linear(c, params["cls_head.weight"], params["cls_head.bias"])
    return c, logits


def gene_head(
    z_l: Tensor,
    params: ModelParams,
    n: int,
    drop_p: float = 0.25,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Per-instance gene predictions s and the top-n average S(n).

    The instance rows (class token excluded) pass through dropout and a
    pointwise width -> genes map; S(n) per gene is the mean of that gene's
    n largest per-instance predictions.
    """
    k = z_l.shape[1] - 1
    if not 1 <= n <= k:
        raise ContractError(f"top-n count {n} outside [1, {k}]")
    tokens = nn.slice_axis(z_l, axis=1, start=1, stop=k + 1)
    tokens = nn.dropout(tokens, drop_p, training, rng)
    s = nn.linear(tokens, params["gene_head.weight"], params["gene_head.bias"])  # (b, k, genes)
    s_n = nn.topn_mean(s, n, axis=1)
    return s, s_n


def topn_curve(s: np.ndarray) -> np.ndarray:
    """S(n) for every n = 1..k: (batch, k, genes) -> (batch, k, genes)."""
    desc = -np.sort(-s, axis=1, kind="stable")
    counts = np.arange(1, s.shape[1] + 1, dtype=s.dtype).reshape(1, -1, 1)
    return np.cumsum(desc, axis=1) / counts


def aggregate_test(s: np.ndarray, form: str = "mean") -> np.ndarray:
    """Slide-level gene prediction from per-instance predictions, eval mode.

    "mean" averages S(n) over all n = 1..k; "harmonic" instead sums S(n)/n,
    a compatibility form kept behind this flag.
    """
    curve = topn_curve(s)
    if form == "mean":
        return curve.mean(axis=1)
    if form == "harmonic":
        weights = 1.0 / np.arange(1, s.shape[1] + 1, dtype=s.dtype).reshape(1, -1, 1)
        return (curve * weights).sum(axis=1)
    raise ConfigError(f"unknown aggregation form {form!r}")


def total_loss(
    logits: Tensor,
    labels: np.ndarray,
    gene_pred: Tensor | None,
    gene_target: np.ndarray | None,
    gamma: float,
    gene_loss: str = "mse",
) -> tuple[Tensor, float, float]:
    """Cross-entropy plus gamma-weighted gene regression loss.

    Weight regularization is decoupled weight decay applied inside the
    optimizer step, so it does not appear in the returned value. Returns the
    combined scalar plus the two raw component values for logging.
    """
    ce = nn.cross_entropy(logits, labels)
    if gene_pred is None or gene_target is None or gene_pred.shape[-1] == 0:
        return ce, ce.item(), 0.0
    diff = nn.sub(gene_pred, Tensor(np.asarray(gene_target, dtype=gene_pred.dtype)))
    if gene_loss == "mse":
        gene_term = nn.mean_all(nn.mul(diff, diff))
    elif gene_loss == "mae":
        gene_term = nn.mean_all(nn.abs_op(diff))
    else:
        raise ConfigError(f"unknown gene loss form {gene_loss!r}")
    combined = nn.add(ce, nn.scale(gene_term, gamma))
    return combined, ce.item(), gene_term.item()


class Model:
    """Config + parameters with convenience forward passes."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.config = config.validate()
        self.params = params if params is not None else ModelParams.init(config, seed)

    def forward(
        self,
        bags: Tensor,
        n: int | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor, Tensor | None]:
        """One pass over a (batch, k, d) tensor; returns (c, logits, s, S(n) or None)."""
        cfg = self.config
        z0 = embed_input(bags, self.params)
        z_l = encoder_forward(z0, self.params, cfg.heads, cfg.mlp_drop_p, training, rng)
        c, logits = classify(z_l, self.params)
        if cfg.num_genes == 0:
            return c, logits, None, None
        s, s_n = gene_head(
            z_l, self.params, n if n is not None else cfg.bag_size, cfg.gene_drop_p, training, rng
        )
        return c, logits, s, s_n

    def predict(self, bags: np.ndarray, batch_size: int = 256, aggregate: str = "mean") -> ForwardOutput:
        """Deterministic eval-mode forward over numpy bags, batched for memory."""
        if active_tape() is not None:
            raise ContractError("predict must run outside a recording tape")
        bags = np.asarray(bags, dtype=self.config.np_dtype)
        cs, logits_all, s_all, agg_all = [], [], [], []
        for start in range(0, bags.shape[0], batch_size):
            chunk = Tensor(bags[start : start + batch_size])
            c, logits, s, _ = self.forward(chunk, training=False)
            cs.append(c.data)
            logits_all.append(logits.data)
            if s is not None:
                s_all.append(s.data)
                agg_all.append(aggregate_test(s.data, form=aggregate))
        c = np.concatenate(cs, axis=0)
        logits = np.concatenate(logits_all, axis=0)
        if s_all:
            s = np.concatenate(s_all, axis=0).transpose(0, 2, 1)  # (batch, genes, k)
            agg = np.concatenate(agg_all, axis=0)
        else:
            s = np.zeros((bags.shape[0], 0, self.config.bag_size), dtype=self.config.np_dtype)
            agg = np.zeros((bags.shape[0], 0), dtype=self.config.np_dtype)
        return ForwardOutput(c=c, logits=logits, s=s, S=agg)

    def astype(self, dtype: str) -> "Model":
        cfg = ModelConfig.from_dict({**self.config.to_dict(), "dtype": dtype})
        return Model(cfg, self.params.astype(cfg.np_dtype))


# ---------------------------------------------------------------------------
# checkpoint container: magic, JSON header, raw little-endian tensor payload
# ---------------------------------------------------------------------------


def _tensor_entries(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries = []
    payload = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": payload.tell(),
                "nbytes": len(raw),
            }
        )
        payload.write(raw)
    return entries, payload.getvalue()


def save_checkpoint(
    path,
    config: ModelConfig,
    params: ModelParams,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write a self-contained, byte-deterministic checkpoint."""
    arrays = {f"param/{name}": p.data for name, p in params.named()}
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {k: v for k, v in optimizer_state.items() if k != "moments"}
        for name, (m, v) in optimizer_state.get("moments", {}).items():
            arrays[f"adam_m/{name}"] = m
            arrays[f"adam_v/{name}"] = v
    entries, payload = _tensor_entries(arrays)
    header = {
        "version": 1,
        "config": config.to_dict(),
        "tensors": entries,
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, dict | None, dict]:
    """Read a checkpoint; returns (config, params, optimizer_state, extra)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {CHECKPOINT_MAGIC!r}", offset=0)
    pos = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}", offset=pos) from e
    base = pos + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob):
            raise FormatError("truncated checkpoint payload", offset=start)
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob[start:end], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(entry["dtype"])
    config = ModelConfig.from_dict(header["config"])
    params = ModelParams(
        {name[len("param/"):]: nn.Param(arr) for name, arr in arrays.items() if name.startswith("param/")}
    )
    opt_state = None
    if header.get("optimizer") is not None:
        moments = {}
        for name in arrays:
            if name.startswith("adam_m/"):
                bare = name[len("adam_m/"):]
                moments[bare] = (arrays[name], arrays[f"adam_v/{bare}"])
        opt_state = dict(header["optimizer"])
        opt_state["moments"] = moments
    return config, params, opt_state, header.get("extra", {})
