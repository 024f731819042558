"""Two-layer graph attention network with bilinear attention scores.

Layer 1 runs ``heads`` attention heads, concatenates their outputs and
applies ReLU; layer 2 is a single head producing class logits, followed by a
row softmax. Attention for node i is restricted to its neighbours in the
adjacency matrix (self-loop included):

    e_ij = (Wq v_i) . (Wk v_j),   alpha_i = softmax_j(e_ij),   out_i = sum_j alpha_ij Wv v_j

Everything is computed in float64 with hand-derived gradients; training is
full-batch Adam on the seeded-node cross-entropy (summed, not averaged).
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import BadMagic, DivergedLoss, EmptySeedSet, IoFailure, ShapeMismatch, TruncatedPayload
from .rng import Xoshiro256

MODEL_MAGIC = b"LMW1"


@dataclass
class AttentionHead:
    """``query`` and ``key`` are ``[d_att, d_in]``, ``value`` is ``[d_out, d_in]``."""

    query: np.ndarray
    key: np.ndarray
    value: np.ndarray

    def arrays(self):
        return [self.query, self.key, self.value]

    def copy(self):
        return AttentionHead(self.query.copy(), self.key.copy(), self.value.copy())


@dataclass
class GatModel:
    hidden: list
    output: AttentionHead

    @property
    def in_dim(self):
        return self.hidden[0].query.shape[1]

    @property
    def num_heads(self):
        return len(self.hidden)

    @property
    def hidden_dim(self):
        return self.hidden[0].value.shape[0]

    @property
    def att_dim(self):
        return self.hidden[0].query.shape[0]

    @property
    def num_classes(self):
        return self.output.value.shape[0]

    def parameters(self):
        """All weight matrices in declaration order (hidden heads, then output)."""
        out = []
        for h in self.hidden:
            out.extend(h.arrays())
        out.extend(self.output.arrays())
        return out

    def copy(self):
        return GatModel([h.copy() for h in self.hidden], self.output.copy())


@dataclass
class TrainConfig:
    learning_rate: float = 5e-3
    epochs: int = 300
    weight_decay: float = 5e-4
    seed: int = 0
    patience: int = 50
    init_scale: float = 1.0
    heads: int = 8
    hidden: int = 8
    att_dim: int = 8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if min(self.heads, self.hidden, self.att_dim) < 1:
            raise ValueError("network dimensions must be positive")


@dataclass
class TrainResult:
    model: GatModel
    losses: list = field(default_factory=list)
    best_loss: float = math.inf
    best_epoch: int = 0
    stopped_early: bool = False


def init_model(in_dim, num_classes, heads=8, hidden=8, att_dim=8, seed=0, init_scale=1.0):
    """Uniform(-s, s) init with s = init_scale * sqrt(6 / (fan_in + fan_out))."""
    rng = Xoshiro256(seed)

    def draw(rows, cols):
        s = init_scale * math.sqrt(6.0 / (rows + cols))
        return rng.uniform(-s, s, (rows, cols))

    def head(d_in, d_out):
        return AttentionHead(draw(att_dim, d_in), draw(att_dim, d_in), draw(d_out, d_in))

    hidden_heads = [head(in_dim, hidden) for _ in range(heads)]
    return GatModel(hidden_heads, head(heads * hidden, num_classes))


# ---------------------------------------------------------------- sparse kernels


class Neighborhoods:
    """CSR view of an adjacency matrix: row i lists the nodes i attends to."""

    def __init__(self, adjacency):
        A = sparse.csr_matrix(adjacency, dtype=bool)
        A.sum_duplicates()
        A.sort_indices()
        self.n = A.shape[0]
        self.indptr = A.indptr
        self.cols = A.indices
        self.rows = np.repeat(np.arange(self.n), np.diff(A.indptr))
        if (np.diff(self.indptr) == 0).any():
            raise ShapeMismatch("every node needs at least one neighbour (add self-loops)")

    def matrix(self, values):
        return sparse.csr_matrix((values, self.cols, self.indptr), shape=(self.n, self.n))

    def segment_sum(self, values):
        return np.add.reduceat(values, self.indptr[:-1])

    def segment_max(self, values):
        return np.maximum.reduceat(values, self.indptr[:-1])


def attention_scores(X, head, nb):
    """Bilinear scores e_ij for every stored (i, j) of the neighbourhoods."""
    Q = X @ head.query.T
    K = X @ head.key.T
    return np.einsum("ed,ed->e", Q[nb.rows], K[nb.cols])


def attention_softmax(e, nb):
    shifted = e - nb.segment_max(e)[nb.rows]
    ex = np.exp(shifted)
    return ex / nb.segment_sum(ex)[nb.rows]


def aggregate(X, head, alpha, nb):
    """Pre-activation head output: sum_j alpha_ij Wv x_j."""
    return nb.matrix(alpha) @ (X @ head.value.T)


def head_forward(X, head, nb):
    e = attention_scores(X, head, nb)
    alpha = attention_softmax(e, nb)
    return aggregate(X, head, alpha, nb), alpha


def _head_backward(X, head, alpha, nb, d_out):
    """Gradients of a single head w.r.t. its weights and its input."""
    Q = X @ head.query.T
    K = X @ head.key.T
    G = X @ head.value.T
    A = nb.matrix(alpha)
    dG = A.T @ d_out
    d_alpha = np.einsum("ed,ed->e", d_out[nb.rows], G[nb.cols])
    d_e = alpha * (d_alpha - nb.segment_sum(alpha * d_alpha)[nb.rows])
    dE = nb.matrix(d_e)
    dQ = dE @ K
    dK = dE.T @ Q
    grads = AttentionHead(dQ.T @ X, dK.T @ X, dG.T @ X)
    dX = dQ @ head.query + dK @ head.key + dG @ head.value
    return grads, dX


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(z)
    return ex / ex.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    X: np.ndarray
    hidden_alpha: list
    hidden_pre: np.ndarray
    hidden_out: np.ndarray
    output_alpha: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward_cached(model, features, nb):
    X = np.asarray(features, dtype=np.float64)
    if X.shape[1] != model.in_dim:
        raise ShapeMismatch(f"features have {X.shape[1]} columns, model expects {model.in_dim}")
    pre, alphas = [], []
    for h in model.hidden:
        out, alpha = head_forward(X, h, nb)
        pre.append(out)
        alphas.append(alpha)
    H = np.hstack(pre)
    R = np.maximum(H, 0.0)
    logits, alpha2 = head_forward(R, model.output, nb)
    return ForwardCache(X, alphas, H, R, alpha2, logits, softmax_rows(logits))


def forward(model, graph):
    """Class probabilities ``Z`` of shape ``[N, num_classes]``."""
    return forward_cached(model, graph.features, Neighborhoods(graph.adjacency)).probs


def _seed_labels(seeds):
    return np.asarray(getattr(seeds, "labels", seeds), dtype=np.int64)


def loss(Z, seeds):
    """Summed cross-entropy over seeded nodes and its gradient w.r.t. the logits."""
    labels = _seed_labels(seeds)
    seeded = np.flatnonzero(labels >= 0)
    if seeded.size == 0:
        raise EmptySeedSet("no seeded nodes to train on")
    p = Z[seeded, labels[seeded]]
    with np.errstate(divide="ignore"):
        value = float(-np.log(p).sum())
    grad = np.zeros_like(Z)
    grad[seeded] = Z[seeded]
    grad[seeded, labels[seeded]] -= 1.0
    return value, grad


def backward(model, cache, d_logits, nb):
    """Parameter gradients (a GatModel of arrays) given d loss / d logits."""
    out_grads, dR = _head_backward(cache.hidden_out, model.output, cache.output_alpha, nb, d_logits)
    dH = dR * (cache.hidden_pre > 0)
    width = model.hidden_dim
    hidden_grads = []
    for k, h in enumerate(model.hidden):
        g, _ = _head_backward(cache.X, h, cache.hidden_alpha[k], nb, dH[:, k * width:(k + 1) * width])
        hidden_grads.append(g)
    return GatModel(hidden_grads, out_grads)


def loss_and_grad(model, graph, seeds, nb=None):
    nb = nb or Neighborhoods(graph.adjacency)
    cache = forward_cached(model, graph.features, nb)
    value, d_logits = loss(cache.probs, seeds)
    return value, backward(model, cache, d_logits, nb), cache


class Adam:
    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g + self.wd * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model, graph, seeds, cfg):
    """Fit ``model`` in place on the seeded nodes and return the best-loss copy.

    Stops after ``cfg.epochs`` or once the loss has not improved by 1e-5 for
    ``cfg.patience`` consecutive epochs.
    """
    nb = Neighborhoods(graph.adjacency)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.weight_decay)
    result = TrainResult(model.copy())
    wait = 0
    for epoch in range(cfg.epochs):
        value, grads, _ = loss_and_grad(model, graph, seeds, nb)
        if not math.isfinite(value):
            raise DivergedLoss(f"loss became {value} at epoch {epoch}", result.losses + [value])
        result.losses.append(value)
        if value < result.best_loss - 1e-5:
            result.best_loss, result.best_epoch = value, epoch
            result.model = model.copy()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                result.stopped_early = True
                break
        opt.step(params, grads.parameters())
    return result


def predict(model, graph):
    return np.argmax(forward(model, graph), axis=1)


# ---------------------------------------------------------------- checkpoints
#
# "LMW1" | u32 heads | u32 in_dim | u32 hidden | u32 att_dim | u32 classes |
# f32 tensors in declaration order: per hidden head (query, key, value), then
# the output head (query, key, value). Little-endian.


def encode_model(model):
    header = MODEL_MAGIC + struct.pack(
        "<5I", model.num_heads, model.in_dim, model.hidden_dim, model.att_dim, model.num_classes
    )
    body = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.parameters())
    return header + body


def decode_model(buf):
    if buf[:4] != MODEL_MAGIC:
        raise BadMagic(f"expected {MODEL_MAGIC!r}", offset=0)
    if len(buf) < 24:
        raise TruncatedPayload("checkpoint header truncated", offset=len(buf))
    heads, in_dim, hidden, att, classes = struct.unpack_from("<5I", buf, 4)
    off = 24

    def take(rows, cols):
        nonlocal off
        n = rows * cols
        if len(buf) < off + 4 * n:
            raise TruncatedPayload("checkpoint tensor truncated", offset=len(buf))
        a = np.frombuffer(buf, "<f4", n, off).astype(np.float64).reshape(rows, cols)
        off += 4 * n
        return a

    hidden_heads = [AttentionHead(take(att, in_dim), take(att, in_dim), take(hidden, in_dim))
                    for _ in range(heads)]
    d = heads * hidden
    return GatModel(hidden_heads, AttentionHead(take(att, d), take(att, d), take(classes, d)))


def save_model(model, path):
    try:
        with open(path, "wb") as fh:
            fh.write(encode_model(model))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path):
    try:
        with open(path, "rb") as fh:
            return decode_model(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
