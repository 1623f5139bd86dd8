"""Bilinear compatibility model.

An image x (dim m) is scored against a document vector d (dim m_hat) as
x^T W d. W is Glorot-initialized and trained with softmax cross-entropy
over the seen classes using Adam. Document vectors stay sparse; scoring
and the gradient contraction only touch their nonzero entries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, ValidationError

ZWM_MAGIC = b"ZWM1"


@dataclass
class BilinearModel:
    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValidationError("W must be a matrix")
        if not np.all(np.isfinite(self.W)):
            raise ValidationError("W contains non-finite entries")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def m_hat(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    l2_weight: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValidationError("adam betas must lie in (0, 1)")
        if self.learning_rate < 0 or self.l2_weight < 0:
            raise ValidationError("learning_rate and l2_weight must be non-negative")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, model: BilinearModel) -> "AdamState":
        return cls(np.zeros_like(model.W), np.zeros_like(model.W), 0)


def init_glorot(m: int, m_hat: int, seed: int) -> BilinearModel:
    """Uniform init on [-sqrt(6/(m+m_hat)), +sqrt(6/(m+m_hat))]."""
    if m <= 0 or m_hat <= 0:
        raise ValidationError("model dimensions must be positive")
    limit = np.sqrt(6.0 / (m + m_hat))
    rng = np.random.default_rng(seed)
    return BilinearModel(rng.uniform(-limit, limit, size=(m, m_hat)))


def scores(model: BilinearModel, x, docs) -> np.ndarray:
    """x^T W d_k for every candidate document, O(m*m_hat + sum nnz)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.m,):
        raise DimensionMismatchError(f"image has dim {x.shape}, expected ({model.m},)")
    u = x @ model.W
    out = np.empty(len(docs))
    for k, d in enumerate(docs):
        if d.dim != model.m_hat:
            raise DimensionMismatchError(f"doc {k} has dim {d.dim}, expected {model.m_hat}")
        out[k] = d.dot_dense(u)
    return out


def predict(model: BilinearModel, x, docs) -> int:
    """Index of the best-scoring candidate; ties go to the lowest index."""
    if not docs:
        raise ValidationError("no candidate documents")
    return int(np.argmax(scores(model, x, docs)))


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _doc_matrix_apply(coeffs, docs, m_hat):
    """Accumulate coeffs @ D over sparse document rows: (B, L) -> (B, m_hat)."""
    out = np.zeros((coeffs.shape[0], m_hat))
    for k, d in enumerate(docs):
        if d.nnz:
            out[:, d.indices] += np.outer(coeffs[:, k], d.values)
    return out


def loss_and_grad(model: BilinearModel, batch_x, batch_y, docs, l2_weight: float = 0.0):
    """Mean cross-entropy over the seen-class logits and its gradient in W.

    batch_x is (B, m); batch_y holds local class indices into docs. The
    gradient is mean_b x_b (p_b - e_{y_b})^T D (+ l2_weight * W).
    """
    batch_x = np.asarray(batch_x, dtype=np.float64)
    batch_y = np.asarray(batch_y, dtype=np.int64)
    if batch_x.ndim != 2 or batch_x.shape[1] != model.m:
        raise DimensionMismatchError("batch_x must be (B, m)")
    num_docs = len(docs)
    if batch_y.min(initial=0) < 0 or batch_y.max(initial=-1) >= num_docs:
        raise ValidationError("label outside the seen class set")

    u = batch_x @ model.W  # (B, m_hat)
    logits = np.empty((batch_x.shape[0], num_docs))
    for k, d in enumerate(docs):
        logits[:, k] = u[:, d.indices] @ d.values if d.nnz else 0.0
    probs = _softmax(logits)
    b = batch_x.shape[0]
    nll = -np.log(np.maximum(probs[np.arange(b), batch_y], 1e-300))
    loss = float(nll.mean())

    coeffs = probs.copy()
    coeffs[np.arange(b), batch_y] -= 1.0
    grad = batch_x.T @ _doc_matrix_apply(coeffs, docs, model.m_hat) / b
    if l2_weight:
        loss += 0.5 * l2_weight * float(np.sum(model.W * model.W))
        grad = grad + l2_weight * model.W
    return loss, grad


def adam_step(model: BilinearModel, state: AdamState, grad, config: TrainConfig):
    """One bias-corrected Adam update; returns the updated (model, state)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.W.shape:
        raise DimensionMismatchError("gradient shape differs from W")
    t = state.step + 1
    m1 = config.adam_beta1 * state.first_moment + (1 - config.adam_beta1) * grad
    m2 = config.adam_beta2 * state.second_moment + (1 - config.adam_beta2) * grad * grad
    m1_hat = m1 / (1 - config.adam_beta1**t)
    m2_hat = m2 / (1 - config.adam_beta2**t)
    new_w = model.W - config.learning_rate * m1_hat / (np.sqrt(m2_hat) + config.adam_eps)
    return BilinearModel(new_w), AdamState(m1, m2, t)


def train(images, labels, docs, config: TrainConfig, init: BilinearModel | None = None):
    """Mini-batch Adam over shuffled images; returns (model, per-epoch losses).

    images is (N, m); labels holds local indices into docs (the seen-class
    document vectors). Shuffling is seeded, so runs are reproducible.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        raise ValidationError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != images.shape[0]:
        raise ValidationError("labels and images disagree in length")
    m = images.shape[1]
    m_hat = docs[0].dim
    model = init if init is not None else init_glorot(m, m_hat, config.seed)
    state = AdamState.zeros_like(model)
    rng = np.random.default_rng(config.seed)
    n = images.shape[0]
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = loss_and_grad(
                model, images[idx], labels[idx], docs, config.l2_weight
            )
            total += loss * idx.shape[0]
            model, state = adam_step(model, state, grad, config)
        losses.append(total / n)
    return model, losses


def save_model(path, model: BilinearModel) -> None:
    with open(path, "wb") as fh:
        fh.write(ZWM_MAGIC)
        fh.write(struct.pack("<II", model.m, model.m_hat))
        fh.write(np.ascontiguousarray(model.W, dtype="<f8").tobytes())


def load_model(path) -> BilinearModel:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != ZWM_MAGIC:
        raise ValidationError(f"{path}: bad or missing ZWM1 header")
    m, m_hat = struct.unpack_from("<II", data, 4)
    expected = 12 + 8 * m * m_hat
    if len(data) != expected:
        raise DimensionMismatchError(f"{path}: payload size mismatch for {m}x{m_hat}")
    w = np.frombuffer(data, dtype="<f8", count=m * m_hat, offset=12).reshape(m, m_hat)
    return BilinearModel(w.copy())
