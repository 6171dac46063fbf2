"""Tokenized graph transformer for node classification.

Each node arrives as a ``(K+1, d')`` block of hop tokens. The network
projects the tokens, runs ``L`` pre-LayerNorm encoder layers whose attention
only mixes tokens of the same node, collapses the hops with an attention
readout anchored on hop 0 and classifies with a two-layer MLP.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import _io
from . import tensor as T
from .errors import CacheError, ConfigError, NumericalError, ShapeError, ValidationError
from .rng import make_rng

CHECKPOINT_MAGIC = b"HOPCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    K: int = 3
    in_dim: int = 1
    hidden: int = 128
    layers: int = 1
    heads: int = 8
    ffn_dim: int = 0
    mlp_hidden: int = 0
    dropout: float = 0.1
    num_classes: int = 2
    include_hop0_logit: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        # 0 selects the conventional widths
        if not self.ffn_dim:
            self.ffn_dim = 2 * self.hidden
        if not self.mlp_hidden:
            self.mlp_hidden = max(1, self.hidden // 2)

    def validate(self):
        if self.K < 1:
            raise ConfigError(f"model.K must be >= 1 for the hop readout, got {self.K}")
        if self.layers < 1:
            raise ConfigError(f"model.layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"model.hidden={self.hidden} is not divisible by heads={self.heads}")
        if self.in_dim < 1 or self.num_classes < 1:
            raise ConfigError("model.in_dim and model.num_classes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype must be float32 or float64, got {self.dtype}")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _xavier(rng, fan_in, fan_out, dtype):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def project(tokens, E):
    """Map every token through ``E`` (no bias): ``(b, K+1, d') -> (b, K+1, d_m)``."""
    tokens = T.as_tensor(tokens)
    if tokens.ndim != 3 or tokens.shape[-1] != E.shape[0]:
        raise ShapeError(f"project: tokens {tokens.shape} vs projection {E.shape}")
    return T.matmul(tokens, E)


def readout(z, wa, include_hop0=False):
    """Attention readout over hops.

    Scores ``[z_0 | z_k] . wa`` are softmax-normalized over ``k = 1..K`` and
    the output is ``z_0 + sum_k alpha_k z_k``. With ``include_hop0`` the
    softmax also covers ``k = 0`` while hop 0 still enters only through the
    additive ``z_0`` term. Returns ``(out, alpha)`` with ``alpha`` shaped
    ``(b, 1, K)`` (or ``(b, 1, K+1)``).
    """
    b, t, d = z.shape
    if t < 2:
        raise ValidationError("readout needs at least one non-zero hop (K >= 1)")
    if wa.shape != (1, 2 * d):
        raise ShapeError(f"readout: W_a has shape {wa.shape}, expected (1, {2 * d})")
    z0 = z[:, 0:1, :]
    zk = z[:, 1:, :]
    w_self = T.transpose(wa[:, :d])
    w_hop = T.transpose(wa[:, d:])
    s0 = T.matmul(z0, w_self)
    scores = T.matmul(zk, w_hop) + s0
    if include_hop0:
        scores = T.concat([T.matmul(z0, w_hop) + s0, scores], axis=1)
    alpha = T.softmax(T.transpose(scores), axis=-1)
    hops = alpha[:, :, 1:] if include_hop0 else alpha
    out = z0 + T.matmul(hops, zk)
    return T.reshape(out, (b, d)), alpha


def node_loss(logits, labels, num_classes=None):
    """Mean cross-entropy over labeled rows.

    ``labels`` is either an int vector (``-1`` = unlabeled) or a ``(b, c)``
    array of probability rows; all-zero rows count as unlabeled.
    """
    logits = T.as_tensor(logits)
    c = logits.shape[-1] if num_classes is None else num_classes
    labels = np.asarray(labels)
    if labels.ndim == 1:
        mask = labels >= 0
        if (labels[mask] >= c).any():
            raise ValidationError(f"class index {int(labels[mask].max())} >= num_classes {c}")
        targets = np.zeros((labels.shape[0], c), dtype=logits.dtype)
        targets[np.flatnonzero(mask), labels[mask]] = 1.0
    else:
        if labels.shape != logits.shape:
            raise ShapeError(f"loss: logits {logits.shape} vs soft labels {labels.shape}")
        targets = labels.astype(logits.dtype, copy=False)
        mask = targets.sum(axis=1) > 0
    if not mask.any():
        raise ValidationError("empty labeled set")
    if mask.all():
        return T.cross_entropy(logits, targets)
    rows = np.flatnonzero(mask)
    return T.cross_entropy(logits[rows], targets[rows])


class NAGphormer:
    """Parameters plus forward pass. Parameters are leaf :class:`Tensor` objects."""

    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg.validate()
        self.dtype = np.dtype(cfg.dtype)
        self.params = self._init_params(make_rng(seed, "init"))

    def _init_params(self, rng):
        c, dt = self.cfg, self.dtype
        d = c.hidden
        p = {"proj.E": _xavier(rng, c.in_dim, d, dt)}
        for l in range(c.layers):
            pre = f"layers.{l}."
            p[pre + "ln1.gamma"] = np.ones(d, dt)
            p[pre + "ln1.beta"] = np.zeros(d, dt)
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + "attn." + name] = _xavier(rng, d, d, dt)
            p[pre + "attn.bo"] = np.zeros(d, dt)
            p[pre + "ln2.gamma"] = np.ones(d, dt)
            p[pre + "ln2.beta"] = np.zeros(d, dt)
            p[pre + "ffn.w1"] = _xavier(rng, d, c.ffn_dim, dt)
            p[pre + "ffn.b1"] = np.zeros(c.ffn_dim, dt)
            p[pre + "ffn.w2"] = _xavier(rng, c.ffn_dim, d, dt)
            p[pre + "ffn.b2"] = np.zeros(d, dt)
        p["final_ln.gamma"] = np.ones(d, dt)
        p["final_ln.beta"] = np.zeros(d, dt)
        p["readout.wa"] = np.zeros((1, 2 * d), dt)
        p["head.w1"] = _xavier(rng, d, c.mlp_hidden, dt)
        p["head.b1"] = np.zeros(c.mlp_hidden, dt)
        p["head.w2"] = _xavier(rng, c.mlp_hidden, c.num_classes, dt)
        p["head.b2"] = np.zeros(c.num_classes, dt)
        return {k: T.Tensor(v, requires_grad=True, name=k) for k, v in p.items()}

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            raise CacheError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise CacheError(f"parameter {k}: shape {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.dtype)

    def encoder_layer(self, z, l, training=False, rng=None):
        """``z' = MSA(LN(z)) + z``; ``z = FFN(LN(z')) + z'``."""
        P = self.params
        pre = f"layers.{l}."
        b, t, d = z.shape
        h, p = self.cfg.heads, self.cfg.dropout
        dh = d // h

        x = T.layernorm(z, P[pre + "ln1.gamma"], P[pre + "ln1.beta"])

        def heads(w):
            return T.transpose(T.reshape(T.matmul(x, w), (b, t, h, dh)), (0, 2, 1, 3))

        q, k, v = heads(P[pre + "attn.wq"]), heads(P[pre + "attn.wk"]), heads(P[pre + "attn.wv"])
        att = T.softmax(T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh)), axis=-1)
        o = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
        o = T.matmul(o, P[pre + "attn.wo"]) + P[pre + "attn.bo"]
        z = z + T.dropout(o, p, rng, training)

        x = T.layernorm(z, P[pre + "ln2.gamma"], P[pre + "ln2.beta"])
        f = T.gelu(T.matmul(x, P[pre + "ffn.w1"]) + P[pre + "ffn.b1"])
        f = T.dropout(f, p, rng, training)
        f = T.matmul(f, P[pre + "ffn.w2"]) + P[pre + "ffn.b2"]
        z = z + T.dropout(f, p, rng, training)
        if not np.isfinite(z.data).all():
            raise NumericalError(f"non-finite activations after encoder layer {l}")
        return z

    def classify(self, z_out, training=False, rng=None):
        P = self.params
        hdn = T.gelu(T.matmul(z_out, P["head.w1"]) + P["head.b1"])
        hdn = T.dropout(hdn, self.cfg.dropout, rng, training)
        return T.matmul(hdn, P["head.w2"]) + P["head.b2"]

    def forward(self, tokens, training=False, rng=None, return_alpha=False):
        """Logits ``(b, c)`` for a ``(b, K+1, d')`` token block."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 3 or tokens.shape[1:] != (self.cfg.K + 1, self.cfg.in_dim):
            raise ShapeError(f"forward: tokens {tokens.shape}, expected (b, {self.cfg.K + 1}, "
                             f"{self.cfg.in_dim})")
        if training and self.cfg.dropout > 0 and rng is None:
            raise ValidationError("training with dropout needs an rng stream")
        z = project(T.Tensor(tokens, dtype=self.dtype), self.params["proj.E"])
        for l in range(self.cfg.layers):
            z = self.encoder_layer(z, l, training, rng)
        z = T.layernorm(z, self.params["final_ln.gamma"], self.params["final_ln.beta"])
        out, alpha = readout(z, self.params["readout.wa"], self.cfg.include_hop0_logit)
        logits = self.classify(out, training, rng)
        return (logits, alpha) if return_alpha else logits

    def predict(self, tokens):
        with T.no_grad():
            return self.forward(tokens).data


def fixed_attention_forward(tokens, betas):
    """Self-attention with a fixed matrix whose last row is ``betas``, summed over rows.

    For each node this returns ``sum_k betas[k] * tokens[:, k]``, the
    representation a decoupled GCN with identity feature map produces.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if tokens.ndim != 3 or betas.shape != (tokens.shape[1],):
        raise ShapeError(f"betas of length {betas.shape} do not match {tokens.shape[1]} hops")
    t = tokens.shape[1]
    S = np.zeros((t, t))
    S[-1, :] = betas
    attended = np.einsum("ij,bjd->bid", S, tokens)
    return attended.sum(axis=1)


def save_checkpoint(model: NAGphormer, path, extra=None):
    state = model.state_dict()
    names = sorted(state)
    entries = [{"name": k, "shape": list(state[k].shape), "dtype": state[k].dtype.str,
                "crc32": zlib.crc32(np.ascontiguousarray(state[k]).tobytes())} for k in names]
    header = {"config": asdict(model.cfg), "tensors": entries, "extra": extra or {}}
    _io.write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header,
                        [state[k] for k in names])


def load_checkpoint(path):
    """Return ``(model, extra)``."""
    header, offset = _io.read_header(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    try:
        cfg = ModelConfig.from_dict(header["config"])
        entries = header["tensors"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CacheError(f"{path}: bad checkpoint header ({exc})") from None
    sizes = [int(np.prod(e["shape"])) * np.dtype(e["dtype"]).itemsize for e in entries]
    _io.verify(path, CHECKPOINT_MAGIC, offset, sum(sizes))
    state = {}
    with open(path, "rb") as fh:
        fh.seek(offset)
        for e, size in zip(entries, sizes):
            buf = fh.read(size)
            if zlib.crc32(buf) != e["crc32"]:
                raise CacheError(f"{path}: checksum failure in tensor {e['name']}")
            state[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    model = NAGphormer(cfg)
    model.load_state_dict(state)
    return model, header.get("extra", {})

