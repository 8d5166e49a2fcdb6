"""Single-layer LSTM next-key classifier written directly against numpy.

Inputs are one-hot key ids, so the input half of every gate matrix is used
as a lookup table instead of a matmul.  The four gate matrices are stored
stacked (order i, f, o, c) and exposed by name for persistence and tests.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
PROB_FLOOR = 1e-12
GATE_NAMES = ("i", "f", "o", "c")
TENSOR_NAMES = ("W_i", "W_f", "W_o", "W_c", "b_i", "b_f", "b_o", "b_c", "W_y", "b_y")


class ModelFormatError(ValueError):
    """Raised when a model file is corrupt or bound to another vocabulary."""


class TrainingDiverged(RuntimeError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LstmParams:
    """Weights of one LSTM cell plus the softmax output layer.

    ``W`` has shape ``(4d, n + d)``: rows are the stacked gates, the first
    ``n`` columns act on the one-hot input and the last ``d`` on ``h_{t-1}``.
    """

    n: int
    d: int
    W: np.ndarray
    b: np.ndarray
    W_y: np.ndarray
    b_y: np.ndarray

    def _gate(self, name: str) -> slice:
        k = GATE_NAMES.index(name)
        return slice(k * self.d, (k + 1) * self.d)

    @property
    def W_i(self) -> np.ndarray:
        return self.W[self._gate("i")]

    @property
    def W_f(self) -> np.ndarray:
        return self.W[self._gate("f")]

    @property
    def W_o(self) -> np.ndarray:
        return self.W[self._gate("o")]

    @property
    def W_c(self) -> np.ndarray:
        return self.W[self._gate("c")]

    @property
    def b_i(self) -> np.ndarray:
        return self.b[self._gate("i")]

    @property
    def b_f(self) -> np.ndarray:
        return self.b[self._gate("f")]

    @property
    def b_o(self) -> np.ndarray:
        return self.b[self._gate("o")]

    @property
    def b_c(self) -> np.ndarray:
        return self.b[self._gate("c")]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W, self.b, self.W_y, self.b_y)

    def copy(self) -> "LstmParams":
        return LstmParams(self.n, self.d, self.W.copy(), self.b.copy(), self.W_y.copy(), self.b_y.copy())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @classmethod
    def zeros(cls, n: int, d: int) -> "LstmParams":
        return cls(n, d, np.zeros((4 * d, n + d)), np.zeros(4 * d), np.zeros((n, d)), np.zeros(n))

    @classmethod
    def from_tensors(cls, n: int, d: int, tensors: dict[str, np.ndarray]) -> "LstmParams":
        W = np.concatenate([tensors[f"W_{g}"] for g in GATE_NAMES], axis=0)
        b = np.concatenate([tensors[f"b_{g}"] for g in GATE_NAMES])
        params = cls(n, d, W, b, np.array(tensors["W_y"], dtype=np.float64), np.array(tensors["b_y"], dtype=np.float64))
        params.check_shapes()
        return params

    def check_shapes(self) -> None:
        n, d = self.n, self.d
        expected = {"W": (4 * d, n + d), "b": (4 * d,), "W_y": (n, d), "b_y": (n,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")


def init_params(n: int, d: int, rng: np.random.Generator, scale: float | None = None,
                forget_bias: float = 1.0) -> LstmParams:
    """Uniform(-s, s) weights with s = 1/sqrt(d); forget-gate bias starts at ``forget_bias``."""
    s = 1.0 / math.sqrt(d) if scale is None else scale
    W = rng.uniform(-s, s, size=(4 * d, n + d))
    W_y = rng.uniform(-s, s, size=(n, d))
    b = np.zeros(4 * d)
    b[d:2 * d] = forget_bias
    return LstmParams(n, d, W, b, W_y, np.zeros(n))


@dataclass
class ForwardCache:
    keys: np.ndarray
    h: list[np.ndarray]
    c: list[np.ndarray]
    gates: list[np.ndarray]
    tanh_c: list[np.ndarray]
    probs: np.ndarray


def forward(params: LstmParams, histories) -> tuple[np.ndarray, ForwardCache]:
    """Run a batch of key histories (shape ``(B, h)``) through the cell.

    Returns next-key distributions of shape ``(B, n)`` and the activations
    needed by :func:`backward`.
    """
    keys = np.asarray(histories, dtype=np.intp)
    if keys.ndim == 1:
        keys = keys[None, :]
    n, d = params.n, params.d
    if keys.size and (keys.min() < 0 or keys.max() >= n):
        raise ValueError(f"key id outside [0, {n})")
    B, steps = keys.shape
    x_table = np.ascontiguousarray(params.W[:, :n].T)
    Wh_T = params.W[:, n:].T
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    hs, cs, gates_seq, tanh_cs = [h], [c], [], []
    for t in range(steps):
        z = x_table[keys[:, t]] + h @ Wh_T + params.b
        gates = np.empty_like(z)
        gates[:, :3 * d] = sigmoid(z[:, :3 * d])
        gates[:, 3 * d:] = np.tanh(z[:, 3 * d:])
        i, f, o, g = gates[:, :d], gates[:, d:2 * d], gates[:, 2 * d:3 * d], gates[:, 3 * d:]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs.append(h)
        cs.append(c)
        gates_seq.append(gates)
        tanh_cs.append(tc)
    probs = softmax(h @ params.W_y.T + params.b_y)
    return probs, ForwardCache(keys, hs, cs, gates_seq, tanh_cs, probs)


def predict(params: LstmParams, history) -> np.ndarray:
    """Next-key distribution for a single history."""
    probs, _ = forward(params, np.asarray(history)[None, :])
    return probs[0]


def cross_entropy(distribution: np.ndarray, target: int) -> float:
    return float(-math.log(max(float(distribution[target]), PROB_FLOOR)))


def batch_loss(probs: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None) -> float:
    picked = np.maximum(probs[np.arange(len(targets)), targets], PROB_FLOOR)
    losses = -np.log(picked)
    if weights is None:
        return float(losses.mean())
    return float(np.dot(losses, weights) / weights.sum())


def backward(params: LstmParams, cache: ForwardCache, targets, weights=None) -> LstmParams:
    """Gradients of ``sum_k weights[k] * CE_k`` with respect to every tensor.

    ``weights`` defaults to ``1/B`` (the batch mean).  The result reuses
    :class:`LstmParams` as a container of gradient arrays.
    """
    targets = np.asarray(targets, dtype=np.intp)
    n, d = params.n, params.d
    B, steps = cache.keys.shape
    w = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=np.float64)

    dlogits = cache.probs.copy()
    dlogits[np.arange(B), targets] -= 1.0
    dlogits *= w[:, None]

    h_last = cache.h[-1]
    dW_y = dlogits.T @ h_last
    db_y = dlogits.sum(axis=0)

    Wh = params.W[:, n:]
    dWh = np.zeros((4 * d, d))
    db = np.zeros(4 * d)
    dz_all = np.empty((steps, B, 4 * d))
    dh = dlogits @ params.W_y
    dc = np.zeros((B, d))
    for t in range(steps - 1, -1, -1):
        gates = cache.gates[t]
        i, f, o, g = gates[:, :d], gates[:, d:2 * d], gates[:, 2 * d:3 * d], gates[:, 3 * d:]
        tc = cache.tanh_c[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :d] = dc * g * i * (1.0 - i)
        dz[:, d:2 * d] = dc * cache.c[t] * f * (1.0 - f)
        dz[:, 2 * d:3 * d] = dh * tc * o * (1.0 - o)
        dz[:, 3 * d:] = dc * i * (1.0 - g * g)
        dWh += dz.T @ cache.h[t]
        db += dz.sum(axis=0)
        dh = dz @ Wh
        dc = dc * f

    onehot = np.zeros((steps * B, n))
    onehot[np.arange(steps * B), cache.keys.T.reshape(-1)] = 1.0
    dWx = dz_all.reshape(steps * B, 4 * d).T @ onehot
    dW = np.concatenate([dWx, dWh], axis=1)
    return LstmParams(n, d, dW, db, dW_y, db_y)


def numerical_gradient(params: LstmParams, histories, targets, eps: float = 1e-5) -> LstmParams:
    """Central finite differences of the mean cross-entropy, one scalar at a time."""
    grads = LstmParams.zeros(params.n, params.d)
    probe = params.copy()
    for src, dst in zip(probe.arrays(), grads.arrays()):
        flat_src, flat_dst = src.reshape(-1), dst.reshape(-1)
        for k in range(flat_src.size):
            orig = flat_src[k]
            flat_src[k] = orig + eps
            up = batch_loss(forward(probe, histories)[0], np.asarray(targets))
            flat_src[k] = orig - eps
            down = batch_loss(forward(probe, histories)[0], np.asarray(targets))
            flat_src[k] = orig
            flat_dst[k] = (up - down) / (2 * eps)
    return grads


def max_relative_error(analytic: LstmParams, numeric: LstmParams, floor: float = 1e-8) -> float:
    worst = 0.0
    for a, b in zip(analytic.arrays(), numeric.arrays()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    hidden: int = 64
    init_scale: float | None = None
    clip_norm: float = 5.0
    draws_per_row: int = 3  # with counts: rows drawn per epoch, per distinct row

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.draws_per_row < 1:
            raise ValueError("draws_per_row must be >= 1")


@dataclass
class TrainResult:
    params: LstmParams
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)


def train(histories, targets, n: int, cfg: TrainConfig, counts=None, progress=None) -> TrainResult:
    """Mini-batch SGD with global-norm clipping.

    ``counts`` gives the multiplicity of each (history, target) row when the
    caller has merged duplicates.  Batches are then drawn with replacement in
    proportion to the counts, which is uniform sampling from the expanded
    sample set; an epoch draws ``draws_per_row`` rows per distinct row.
    Without counts an epoch is one shuffled pass.  The recorded loss and
    accuracy are measured on the whole (weighted) training set after each
    epoch.
    """
    X = np.asarray(histories, dtype=np.intp)
    y = np.asarray(targets, dtype=np.intp)
    if len(X) == 0:
        raise ValueError("empty training set")
    m = np.ones(len(X)) if counts is None else np.asarray(counts, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(n, cfg.hidden, rng, cfg.init_scale)
    result = TrainResult(params)
    share = m / m.sum()
    for epoch in range(cfg.epochs):
        if counts is None:
            order = rng.permutation(len(X))
        else:
            order = rng.choice(len(X), size=cfg.draws_per_row * len(X), p=share)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, cache = forward(params, X[idx])
            grads = backward(params, cache, y[idx])
            scale = 1.0
            norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.arrays()))
            if cfg.clip_norm and norm > cfg.clip_norm:
                scale = cfg.clip_norm / norm
            for p, g in zip(params.arrays(), grads.arrays()):
                p -= cfg.learning_rate * scale * g
        if not params.is_finite():
            raise TrainingDiverged(
                f"non-finite weights at epoch {epoch + 1}; lower the learning rate "
                f"(currently {cfg.learning_rate})")
        avg, acc = _evaluate(params, X, y, share)
        if not math.isfinite(avg):
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch + 1}; lower the learning rate (currently {cfg.learning_rate})")
        result.losses.append(avg)
        result.accuracies.append(acc)
        if progress is not None:
            progress(epoch + 1, avg)
    return result


def _evaluate(params: LstmParams, X: np.ndarray, y: np.ndarray, share: np.ndarray,
              chunk: int = 4096) -> tuple[float, float]:
    """Weighted mean cross-entropy and top-1 accuracy over a whole dataset."""
    loss = acc = 0.0
    for start in range(0, len(X), chunk):
        sl = slice(start, start + chunk)
        probs, _ = forward(params, X[sl])
        rows = np.arange(len(probs))
        loss += float(np.dot(-np.log(np.maximum(probs[rows, y[sl]], PROB_FLOOR)), share[sl]))
        acc += float(share[sl][probs.argmax(axis=1) == y[sl]].sum())
    return loss, acc


def vocabulary_hash(templates) -> str:
    return hashlib.sha256("\n".join(templates).encode("utf-8")).hexdigest()


@dataclass
class SequenceModel:
    params: LstmParams
    window: int
    vocab_hash: str
    manifest: str = ""


def save_model(model: SequenceModel, path) -> None:
    """Write the model as JSON: header fields then every tensor, row-major.

    Floats are emitted with ``repr`` precision so reloading is bitwise exact.
    """
    p = model.params
    doc = {
        "format": "insiderlog-model",
        "version": FORMAT_VERSION,
        "manifest": model.manifest,
        "n": p.n,
        "d": p.d,
        "h": model.window,
        "vocab_hash": model.vocab_hash,
        "tensors": {name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
                    for name, t in p.tensors().items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path, expected_vocab_hash: str | None = None) -> SequenceModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "insiderlog-model":
        raise ModelFormatError(f"corrupt model file {path}: missing header")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {doc.get('version')} not supported (expected {FORMAT_VERSION})")
    try:
        n, d, h = int(doc["n"]), int(doc["d"]), int(doc["h"])
        tensors = {}
        for name in TENSOR_NAMES:
            entry = doc["tensors"][name]
            tensors[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params = LstmParams.from_tensors(n, d, tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    if expected_vocab_hash is not None and doc["vocab_hash"] != expected_vocab_hash:
        raise ModelFormatError(
            f"vocabulary hash mismatch: model bound to {doc['vocab_hash'][:12]}, "
            f"data uses {expected_vocab_hash[:12]}")
    return SequenceModel(params, h, doc["vocab_hash"], doc.get("manifest", ""))
