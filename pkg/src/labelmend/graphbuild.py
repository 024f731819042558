"""Superpixel graphs: pooled node features, spatial and semantic edge weights,
and the similarity-filtered adjacency used by the attention network."""

import struct
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import rgb_to_hsv
from scipy import sparse

from .errors import BadMagic, IoFailure, NoEdges, ShapeMismatch, TruncatedPayload
from .superpixel import rgb_to_lab

GRAPH_MAGIC = b"LMG1"
_EDGE = struct.Struct("<IIBfB")


@dataclass(frozen=True)
class ImageGraph:
    """``spatial`` (W_l) and ``adjacency`` (A) are symmetric boolean CSR
    matrices; ``semantic`` (W_s) stores a value for every W_l edge.
    ``adjacency`` carries self-loops."""

    features: np.ndarray
    spatial: sparse.csr_matrix
    semantic: sparse.csr_matrix
    adjacency: sparse.csr_matrix
    gamma: float

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


# ---------------------------------------------------------------- node features


def _bilinear_axis(src_len, dst_len):
    """Sample positions and weights for align-corners=False resizing."""
    pos = (np.arange(dst_len) + 0.5) * src_len / dst_len - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src_len - 1)
    return lo, hi, pos - lo


def upsample_bilinear(dense, size):
    dense = np.asarray(dense, dtype=np.float64)
    H, W = size
    _, h, w = dense.shape
    y0, y1, fy = _bilinear_axis(h, H)
    x0, x1, fx = _bilinear_axis(w, W)
    rows = dense[:, y0, :] * (1 - fy)[None, :, None] + dense[:, y1, :] * fy[None, :, None]
    return rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx


def _membership(partition):
    flat = partition.assignment.ravel()
    n = flat.size
    return sparse.csr_matrix(
        (np.ones(n), (flat, np.arange(n))), shape=(partition.count, n)
    )


def pool_features(dense, partition, image_size):
    """Upsample ``dense`` ([C, h', w']) to the image size and average it over
    each superpixel. Returns ``[N, C]``."""
    dense = np.asarray(dense)
    if dense.ndim != 3 or dense.shape[0] < 1:
        raise ShapeMismatch(f"dense features must be [C, h, w], got {dense.shape}")
    H, W = image_size
    if partition.assignment.shape != (H, W):
        raise ShapeMismatch("partition does not match the image size")
    if dense.shape[1] > H or dense.shape[2] > W:
        raise ShapeMismatch("feature maps are larger than the image")
    up = upsample_bilinear(dense, (H, W)).reshape(dense.shape[0], -1)
    sizes = partition.sizes
    assert (sizes > 0).all(), "empty superpixel"
    return (_membership(partition) @ up.T) / sizes[:, None]


def handcrafted_features(image, partition):
    """16-d colour/position descriptor per superpixel, each block in [0, 1]:
    mean Lab (3), Lab std (3), saturation-weighted 8-bin hue histogram (8),
    centroid (2)."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    member = _membership(partition)
    sizes = partition.sizes.astype(np.float64)[:, None]

    lab = rgb_to_lab(image).reshape(3, -1).T
    lab_scaled = (lab - [0.0, -128.0, -128.0]) / [100.0, 255.0, 255.0]
    mean = (member @ lab_scaled) / sizes
    sq = (member @ lab_scaled ** 2) / sizes
    std = np.sqrt(np.maximum(sq - mean ** 2, 0.0)) * 2.0

    hsv = rgb_to_hsv(image).reshape(-1, 3)
    bins = np.minimum((hsv[:, 0] * 8).astype(int), 7)
    hist = sparse.csr_matrix((hsv[:, 1], (np.arange(H * W), bins)), shape=(H * W, 8))
    hist = (member @ hist).toarray() / sizes

    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    pos = np.column_stack([(xx.ravel() + 0.5) / W, (yy.ravel() + 0.5) / H])
    centroid = (member @ pos) / sizes
    return np.clip(np.hstack([mean, std, hist, centroid]), 0.0, 1.0)


# ---------------------------------------------------------------- edges


def spatial_weights(partition):
    a = partition.assignment
    src = np.concatenate([a[:, :-1].ravel(), a[:-1, :].ravel()])
    dst = np.concatenate([a[:, 1:].ravel(), a[1:, :].ravel()])
    diff = src != dst
    i = np.concatenate([src[diff], dst[diff]])
    j = np.concatenate([dst[diff], src[diff]])
    n = partition.count
    w = sparse.csr_matrix((np.ones(i.size, bool), (i, j)), shape=(n, n))
    w.sum_duplicates()
    w.data[:] = True
    w.sort_indices()
    return w


def _edges(W_l):
    coo = sparse.csr_matrix(W_l).tocoo()
    keep = coo.row != coo.col
    return coo.row[keep], coo.col[keep]


def semantic_weights(V, W_l):
    """exp(-||v_i - v_j|| / 2h) on every spatial edge, zero elsewhere. The
    result has exactly W_l's sparsity pattern."""
    V = np.asarray(V, dtype=np.float64)
    W_l = sparse.csr_matrix(W_l, dtype=bool)
    W_l.sort_indices()
    rows = np.repeat(np.arange(W_l.shape[0]), np.diff(W_l.indptr))
    cols = W_l.indices
    dist = np.linalg.norm(V[rows] - V[cols], axis=1)
    vals = np.exp(-dist / (2.0 * V.shape[1]))
    return sparse.csr_matrix((vals, cols.copy(), W_l.indptr.copy()), shape=W_l.shape)


def edge_values(W_s, W_l):
    """Rows, cols and W_s values over the off-diagonal edges of W_l."""
    rows, cols = _edges(W_l)
    vals = np.asarray(sparse.csr_matrix(W_s)[rows, cols]).ravel()
    return rows, cols, vals


def similarity_threshold(W_s, W_l):
    """Mean minus population std of W_s over unordered spatial edges."""
    rows, cols, vals = edge_values(W_s, W_l)
    upper = rows < cols
    v = vals[upper]
    if v.size == 0:
        return 0.0
    return float(v.mean() - v.std())


def build_adjacency(W_s, W_l, symmetrize="or"):
    """Filter weak edges. Edge i->j is dropped when its similarity is below
    both the global threshold and node i's strongest edge. Returns (A, gamma)
    with A symmetric (OR or AND of the two directions) plus self-loops."""
    if symmetrize not in ("or", "and"):
        raise ValueError("symmetrize must be 'or' or 'and'")
    n = W_l.shape[0]
    rows, cols, vals = edge_values(W_s, W_l)
    if n > 1 and rows.size == 0:
        raise NoEdges("graph with several nodes has no spatial edges")
    gamma = similarity_threshold(W_s, W_l)
    row_max = np.full(n, -np.inf)
    np.maximum.at(row_max, rows, vals)
    keep = ~((vals < gamma) & (vals < row_max[rows]))
    directed = sparse.csr_matrix((keep, (rows, cols)), shape=(n, n), dtype=bool)
    directed.eliminate_zeros()
    sym = directed.maximum(directed.T) if symmetrize == "or" else directed.minimum(directed.T)
    A = (sym + sparse.identity(n, dtype=bool, format="csr")).tocsr().astype(bool)
    A.sort_indices()
    return A, gamma


def build_graph(features, partition, symmetrize="or"):
    V = np.asarray(features, dtype=np.float64)
    if V.shape[0] != partition.count:
        raise ShapeMismatch(f"{V.shape[0]} feature rows for {partition.count} superpixels")
    W_l = spatial_weights(partition)
    W_s = semantic_weights(V, W_l)
    A, gamma = build_adjacency(W_s, W_l, symmetrize)
    return ImageGraph(V, W_l, W_s, A, gamma)


# ---------------------------------------------------------------- LMG1 files
#
# "LMG1" | u32 n | u32 h | f32 V[n*h] | u32 m | m x (u32 i, u32 j, u8 w_l,
# f32 w_s, u8 a) | f32 gamma. Each unordered pair is stored once with i <= j;
# self-loops appear as (i, i, 0, 0.0, 1).


def encode_graph(graph):
    n, h = graph.features.shape
    W_l = sparse.triu(graph.spatial, k=1).tocsr()
    A = sparse.triu(graph.adjacency, k=0).tocsr()
    pairs = sorted(set(zip(*W_l.nonzero())) | set(zip(*A.nonzero())))
    W_s = graph.semantic.tocsr()
    parts = [GRAPH_MAGIC, struct.pack("<II", n, h),
             np.ascontiguousarray(graph.features, dtype="<f4").tobytes(),
             struct.pack("<I", len(pairs))]
    for i, j in pairs:
        i, j = int(i), int(j)
        wl = bool(W_l[i, j]) if i != j else False
        ws = float(W_s[i, j]) if wl else 0.0
        parts.append(_EDGE.pack(i, j, wl, ws, bool(graph.adjacency[i, j])))
    parts.append(struct.pack("<f", graph.gamma))
    return b"".join(parts)


def decode_graph(buf):
    if buf[:4] != GRAPH_MAGIC:
        raise BadMagic(f"expected {GRAPH_MAGIC!r}", offset=0)
    try:
        n, h = struct.unpack_from("<II", buf, 4)
        off = 12
        V = np.frombuffer(buf, "<f4", n * h, off).astype(np.float64).reshape(n, h)
        off += 4 * n * h
        (m,) = struct.unpack_from("<I", buf, off)
        off += 4
        rec = np.frombuffer(buf, np.dtype([("i", "<u4"), ("j", "<u4"), ("wl", "u1"),
                                           ("ws", "<f4"), ("a", "u1")]), m, off)
        off += m * _EDGE.size
        (gamma,) = struct.unpack_from("<f", buf, off)
    except (struct.error, ValueError) as exc:
        raise TruncatedPayload(f"graph file truncated: {exc}", offset=len(buf)) from None
    i, j = rec["i"].astype(int), rec["j"].astype(int)
    wl = rec["wl"].astype(bool)
    a = rec["a"].astype(bool)

    def sym(mask, vals, dtype):
        ii = np.concatenate([i[mask], j[mask & (i != j)]])
        jj = np.concatenate([j[mask], i[mask & (i != j)]])
        vv = np.concatenate([vals[mask], vals[mask & (i != j)]])
        m_ = sparse.csr_matrix((vv.astype(dtype), (ii, jj)), shape=(n, n))
        m_.sort_indices()
        return m_

    W_l = sym(wl, np.ones(m, bool), bool)
    W_s = sym(wl, rec["ws"].astype(np.float64), np.float64)
    A = sym(a, np.ones(m, bool), bool)
    return ImageGraph(V, W_l, W_s, A, float(gamma))


def write_graph(graph, path):
    try:
        with open(path, "wb") as fh:
            fh.write(encode_graph(graph))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_graph(path):
    try:
        with open(path, "rb") as fh:
            return decode_graph(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
