"""Mini-batch training, evaluation, node splits and the decoupled-GCN baseline."""
from __future__ import annotations

import math
import resource
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nraug as augment
from .errors import ConfigError, NumericalError, ShapeError, ValidationError
from .graph import NormalizedAdjacency
from .model import ModelConfig, NAGphormer, load_checkpoint, node_loss, save_checkpoint
from .optim import AdamW
from .rng import make_rng


@dataclass
class TrainConfig:
    batch_size: int = 2000
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs_max: int = 200
    patience: int = 50
    seed: int = 0
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)
    aug: augment.AugConfig = field(default_factory=augment.AugConfig)

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_max < 1 or self.patience < 1:
            raise ConfigError("epochs_max and patience must be >= 1")
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")
        self.model.validate()
        self.aug.validate()
        return self

    def to_flat(self):
        flat = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("model", "aug"):
                flat.update({f"{f.name}.{k}": v for k, v in asdict(value).items()})
            else:
                flat[f.name] = value
        return flat

    @classmethod
    def from_flat(cls, flat):
        """Build from ``{"lr": .., "model.hidden": .., "aug.p_aug": ..}``.

        Nested dicts are accepted too. String values are coerced to the
        field's type, so CLI overrides can be passed through unchanged.
        """
        flat = _flatten(flat)
        defaults = cls().to_flat()
        unknown = sorted(set(flat) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        merged = {k: _coerce(k, v, defaults[k]) for k, v in {**defaults, **flat}.items()}
        top = {k: v for k, v in merged.items() if "." not in k}
        model = ModelConfig(**{k[6:]: v for k, v in merged.items() if k.startswith("model.")})
        augc = augment.AugConfig(**{k[4:]: v for k, v in merged.items() if k.startswith("aug.")})
        return cls(model=model, aug=augc, **top)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, default):
    if not isinstance(value, str) or isinstance(default, str):
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        return type(default)(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None


def split_sizes(n, fractions):
    """Largest-remainder rounding of ``n * fractions``, with at least one node per part.

    >>> split_sizes(10, (0.6, 0.2, 0.2))
    (6, 2, 2)
    >>> split_sizes(3, (0.6, 0.2, 0.2))
    (1, 1, 1)
    """
    k = len(fractions)
    if n < k:
        raise ValidationError(f"cannot split {n} nodes into {k} non-empty sets")
    raw = [n * f for f in fractions]
    sizes = [math.floor(r) for r in raw]
    by_remainder = sorted(range(k), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_remainder[:n - sum(sizes)]:
        sizes[i] += 1
    for i in range(k):
        while sizes[i] == 0:
            donor = max(range(k), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] += 1
    return tuple(sizes)


def split_nodes(n, fractions=(0.6, 0.2, 0.2), seed=0, candidates=None):
    """Seeded shuffle split of ``candidates`` (default ``range(n)``) into train/val/test."""
    pool = np.arange(n) if candidates is None else np.asarray(candidates, dtype=np.int64)
    sizes = split_sizes(pool.shape[0], fractions)
    perm = pool[make_rng(seed, "split").permutation(pool.shape[0])]
    a, b = sizes[0], sizes[0] + sizes[1]
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    seconds: float


@dataclass
class Metrics:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0
    test_acc: float = float("nan")
    peak_memory_mb: float = 0.0
    stopped_early: bool = False

    def records(self):
        """Line-delimited ``(epoch, split, metric, value)`` records."""
        for r in self.epochs:
            yield {"epoch": r.epoch, "split": "train", "metric": "loss", "value": r.train_loss}
            yield {"epoch": r.epoch, "split": "val", "metric": "accuracy", "value": r.val_acc}
        yield {"epoch": self.best_epoch, "split": "test", "metric": "accuracy", "value": self.test_acc}

    def timing_free(self):
        d = asdict(self)
        d.pop("peak_memory_mb")
        for r in d["epochs"]:
            r.pop("seconds")
        return d


@dataclass
class TrainResult:
    metrics: Metrics
    model: NAGphormer
    splits: tuple


def _batches(ids, size):
    for start in range(0, ids.shape[0], size):
        yield ids[start:start + size]


def predict_logits(model, tokens, ids, batch_size=2000):
    """Eval-mode logits for ``ids``, computed ``batch_size`` nodes at a time."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((ids.shape[0], model.cfg.num_classes), dtype=model.dtype)
    for start in range(0, ids.shape[0], batch_size):
        chunk = ids[start:start + batch_size]
        out[start:start + chunk.shape[0]] = model.predict(tokens.gather(chunk))
    return out


def evaluate(model, tokens, labels, ids, batch_size=2000):
    """Fraction of ``ids`` whose argmax logit equals the label.

    ``model`` may be a :class:`NAGphormer` or a checkpoint path. Runs in eval
    mode (no dropout, no augmentation).
    """
    if not isinstance(model, NAGphormer):
        model, _ = load_checkpoint(model)
    ids = np.asarray(ids, dtype=np.int64)
    labels = np.asarray(labels)
    if ids.size == 0:
        raise ValidationError("evaluate: empty index set")
    if ids.min() < 0 or ids.max() >= labels.shape[0]:
        raise ValidationError(f"evaluate: index out of range [0, {labels.shape[0]})")
    correct = 0
    for chunk in _batches(ids, batch_size):
        pred = model.predict(tokens.gather(chunk)).argmax(axis=1)
        correct += int((pred == labels[chunk]).sum())
    return correct / ids.shape[0]


def train(tokens, labels, cfg: TrainConfig, splits=None, checkpoint_path=None, log=None):
    """Train with AdamW and early stopping on validation accuracy.

    ``tokens`` is anything with ``gather(ids) -> (b, K+1, d')`` (a resident
    :class:`~hopformer.hop2token.TokenTensor` or a disk-backed
    :class:`~hopformer.hop2token.TokenStore`). ``log`` receives one dict per
    metric record as training proceeds. The returned model holds the
    best-validation parameters.
    """
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    mc = cfg.model
    if tokens.K != mc.K or tokens.width != mc.in_dim:
        raise ShapeError(f"token cache is K={tokens.K}, width={tokens.width} but model expects "
                         f"K={mc.K}, in_dim={mc.in_dim}")
    if labels.shape[0] != tokens.n:
        raise ShapeError(f"{labels.shape[0]} labels for {tokens.n} nodes")
    if labels.max() >= mc.num_classes:
        raise ValidationError(f"label {labels.max()} >= model.num_classes {mc.num_classes}")
    if splits is None:
        splits = split_nodes(tokens.n, (cfg.train_frac, cfg.val_frac, cfg.test_frac), cfg.seed,
                             candidates=np.flatnonzero(labels >= 0))
    train_ids, val_ids, test_ids = (np.asarray(s, dtype=np.int64) for s in splits)

    model = NAGphormer(mc, seed=cfg.seed)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    metrics = Metrics()
    best_state = model.state_dict()
    emit = log or (lambda rec: None)

    for epoch in range(1, cfg.epochs_max + 1):
        t0 = time.perf_counter()
        order = train_ids[make_rng(cfg.seed, "shuffle", epoch).permutation(train_ids.shape[0])]
        aug_rng = make_rng(cfg.seed, "aug", epoch)
        drop_rng = make_rng(cfg.seed, "dropout", epoch)
        total, seen = 0.0, 0
        for bi, ids in enumerate(_batches(order, cfg.batch_size)):
            y = labels[ids]
            # batches come from the labeled split; unlabeled rows would mean a bad split file
            if (y < 0).any():
                raise ValidationError("training batch contains unlabeled nodes")
            batch = augment.Batch.from_hard(tokens.gather(ids).astype(model.dtype, copy=False), y,
                                        mc.num_classes, ids)
            if cfg.aug.enabled:
                batch = augment.nraug(batch, cfg.aug, aug_rng)
            logits = model.forward(batch.tokens, training=True, rng=drop_rng)
            loss = node_loss(logits, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"loss diverged at epoch {epoch}, batch {bi}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            total += value * ids.shape[0]
            seen += ids.shape[0]
        val_acc = evaluate(model, tokens, labels, val_ids, cfg.batch_size)
        rec = EpochRecord(epoch, total / seen, val_acc, time.perf_counter() - t0)
        metrics.epochs.append(rec)
        emit({"epoch": epoch, "split": "train", "metric": "loss", "value": rec.train_loss})
        emit({"epoch": epoch, "split": "val", "metric": "accuracy", "value": val_acc})
        if val_acc > metrics.best_val_acc:
            metrics.best_val_acc, metrics.best_epoch = val_acc, epoch
            best_state = model.state_dict()
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path, {"epoch": epoch, "val_acc": val_acc})
        elif epoch - metrics.best_epoch >= cfg.patience:
            metrics.stopped_early = True
            break

    model.load_state_dict(best_state)
    metrics.test_acc = evaluate(model, tokens, labels, test_ids, cfg.batch_size)
    emit({"epoch": metrics.best_epoch, "split": "test", "metric": "accuracy",
          "value": metrics.test_acc})
    metrics.peak_memory_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    return TrainResult(metrics, model, (train_ids, val_ids, test_ids))


def decoupled_gcn_oracle(a: NormalizedAdjacency, x, betas):
    """``sum_k betas[k] * A_hat^k x`` with dense products and an identity feature map."""
    x = np.asarray(x, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != a.n:
        raise ShapeError(f"oracle: features {x.shape} do not match n={a.n}")
    if betas.ndim != 1 or betas.size < 1:
        raise ShapeError("oracle: betas must be a non-empty vector")
    dense = a.to_dense()
    h = x
    z = betas[0] * h
    for beta in betas[1:]:
        h = dense @ h
        z = z + beta * h
    return z
