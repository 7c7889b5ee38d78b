"""Similarity search: embedding extraction, exact flat Euclidean index with
binary persistence, query augmentation, and top-k retrieval metrics."""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .model import ModelParams, full_pass
from .numerics import no_grad
from .preprocess import as_series

INDEX_MAGIC = b"TSIX"
INDEX_VERSION = 1
STRENGTH_GRID = (0, 10, 20, 30, 40, 50)
NOISE_CAP_PCT = 10.0
VIEWS = ("time", "fft", "register")


def embed_view(x, params: ModelParams, view: str = "register") -> np.ndarray:
    """Flattened decoder view for a series (channel-averaged when C > 1).

    No masking is applied; the register view is the semantic embedding used
    for search.
    """
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    xs = as_series(x)
    with no_grad():
        views = full_pass(xs.values, params).views
    chosen = {"time": views.time_e, "fft": views.fft_e, "register": views.reg_e}[view]
    arr = chosen.data  # (C, tokens, D)
    if arr.shape[0] > 1:
        arr = arr.mean(axis=0)
    return np.ascontiguousarray(arr.reshape(-1))


def embed_register(x, params: ModelParams) -> np.ndarray:
    return embed_view(x, params, "register")


def embed_many(samples, params: ModelParams, view: str = "register", batch: int = 256):
    """Embed a list of univariate series in channel-stacked batches.

    The model treats channels independently, so this matches mapping
    `embed_view` over the samples (up to floating-point associativity in
    the BLAS kernels), just much faster.
    """
    arrs = [as_series(s).values for s in samples]
    if any(a.shape[1] != 1 for a in arrs):
        return [embed_view(a, params, view) for a in arrs]
    out = []
    for i in range(0, len(arrs), batch):
        stacked = np.concatenate(arrs[i : i + batch], axis=1)
        with no_grad():
            views = full_pass(stacked, params).views
        chosen = {"time": views.time_e, "fft": views.fft_e, "register": views.reg_e}[view]
        data = chosen.data  # (B, tokens, D)
        out.extend(np.ascontiguousarray(v.reshape(-1)) for v in data)
    return out


@dataclass
class EmbeddingRecord:
    id: str
    family: str
    fine: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.vector).all():
            raise ValueError(f"record {self.id!r}: vector has non-finite entries")


class FlatIndex:
    """Exact nearest neighbours by Euclidean distance; ties resolve to the
    earlier-inserted record."""

    def __init__(self, records):
        self.records = list(records)
        if not self.records:
            raise ValueError("index needs at least one record")
        dims = {r.vector.size for r in self.records}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        self._matrix = np.stack([r.vector for r in self.records])

    def __len__(self):
        return len(self.records)

    def query_topk(self, q: np.ndarray, k: int):
        """Returns [(record, distance)] of the k nearest, ascending."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.size != self.dim:
            raise ValueError(f"query dim {q.size} != index dim {self.dim}")
        if k > len(self.records):
            warnings.warn(f"k={k} exceeds index size {len(self.records)}; returning all")
            k = len(self.records)
        d = np.sqrt(((self._matrix - q) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")[:k]
        return [(self.records[i], float(d[i])) for i in order]

    def save(self, path) -> None:
        buf = io.BytesIO()
        buf.write(INDEX_MAGIC)
        buf.write(struct.pack("<I", INDEX_VERSION))
        buf.write(struct.pack("<I", self.dim))
        buf.write(struct.pack("<I", len(self.records)))
        for r in self.records:
            for text in (r.id, r.family, r.fine):
                b = text.encode("utf-8")
                buf.write(struct.pack("<I", len(b)))
                buf.write(b)
            buf.write(r.vector.astype("<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "FlatIndex":
        def read(fh, n):
            data = fh.read(n)
            if len(data) != n:
                raise OSError(f"index file truncated: wanted {n} bytes, got {len(data)}")
            return data

        with open(path, "rb") as fh:
            if read(fh, 4) != INDEX_MAGIC:
                raise CheckpointError(f"{path}: bad index magic")
            (version,) = struct.unpack("<I", read(fh, 4))
            if version != INDEX_VERSION:
                raise CheckpointError(f"{path}: unsupported index version {version}")
            (dim,) = struct.unpack("<I", read(fh, 4))
            (count,) = struct.unpack("<I", read(fh, 4))
            records = []
            for _ in range(count):
                texts = []
                for _ in range(3):
                    (ln,) = struct.unpack("<I", read(fh, 4))
                    texts.append(read(fh, ln).decode("utf-8"))
                vec = np.frombuffer(read(fh, 4 * dim), dtype="<f4").astype(np.float64)
                records.append(EmbeddingRecord(texts[0], texts[1], texts[2], vec))
        return cls(records)


def build_index(records) -> FlatIndex:
    return FlatIndex(records)


# ------------------------------------------------------------- augmentation


@dataclass
class AugmentSpec:
    shift_pct: float = 20.0
    scale_pct: float = 20.0
    noise_pct: float = 10.0

    @classmethod
    def from_strength(cls, s: int) -> "AugmentSpec":
        if s not in STRENGTH_GRID:
            raise ValueError(f"strength must be one of {STRENGTH_GRID}, got {s}")
        return cls(shift_pct=float(s), scale_pct=float(s), noise_pct=min(float(s), NOISE_CAP_PCT))


def augment_query(x, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Circular time shift, multiplicative scaling, then additive Gaussian
    noise with sigma relative to the scaled series' standard deviation."""
    xs = as_series(x).values
    S = xs.shape[0]
    max_shift = int(round(spec.shift_pct / 100.0 * S))
    shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift > 0 else 0
    out = np.roll(xs, shift, axis=0)
    factor = rng.uniform(1.0 - spec.scale_pct / 100.0, 1.0 + spec.scale_pct / 100.0)
    out = out * factor
    if spec.noise_pct > 0:
        sigma = spec.noise_pct / 100.0 * out.std(axis=0, keepdims=True)
        out = out + rng.normal(size=out.shape) * sigma
    return out


# ------------------------------------------------------------------- metrics

METRICS = ("prec", "mrr", "ap", "ndcg")


def retrieval_metrics(rankings, k: int = 3) -> dict:
    """Standard top-k metrics over per-query binary relevance lists.

    `rankings` is an iterable of sequences of 0/1 relevance flags in rank
    order; entries beyond k are ignored, short lists count as irrelevant
    padding.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rankings = [list(r) for r in rankings]
    if not rankings or any(len(r) == 0 for r in rankings):
        raise ValueError("retrieval_metrics: empty ranking")
    prec, mrr, ap, ndcg = [], [], [], []
    for r in rankings:
        rel = np.asarray(r[:k], dtype=float)
        if rel.size < k:
            rel = np.concatenate([rel, np.zeros(k - rel.size)])
        prec.append(rel.sum() / k)
        hits = np.flatnonzero(rel)
        mrr.append(1.0 / (hits[0] + 1) if hits.size else 0.0)
        precision_at = np.cumsum(rel) / np.arange(1, k + 1)
        ap.append(float((precision_at * rel).sum() / k))
        gains = rel / np.log2(np.arange(2, k + 2))
        ideal = np.sort(rel)[::-1] / np.log2(np.arange(2, k + 2))
        ndcg.append(float(gains.sum() / ideal.sum()) if ideal.sum() > 0 else 0.0)
    return {
        "prec": float(np.mean(prec)),
        "mrr": float(np.mean(mrr)),
        "ap": float(np.mean(ap)),
        "ndcg": float(np.mean(ndcg)),
    }


def run_benchmark(
    samples,
    families,
    fines,
    embed_fn,
    task: str = "family",
    s_grid=STRENGTH_GRID,
    k: int = 3,
    seed: int = 0,
    embed_many_fn=None,
) -> list[dict]:
    """Index every sample, turn each one into an augmented query per strength
    level, retrieve top-k, and score label agreement.

    `embed_many_fn` (list of series -> list of vectors) is an optional
    batched fast path. Returns rows {task, s, prec, mrr, ap, ndcg,
    self_top1}.
    """
    if task not in ("family", "fine"):
        raise ValueError(f"task must be 'family' or 'fine', got {task!r}")
    batched = embed_many_fn if embed_many_fn is not None else lambda xs: [embed_fn(x) for x in xs]
    vectors = batched(list(samples))
    records = [
        EmbeddingRecord(str(i), str(fam), str(fine), v)
        for i, (v, fam, fine) in enumerate(zip(vectors, families, fines))
    ]
    index = FlatIndex(records)
    labels = [r.family if task == "family" else r.fine for r in records]
    rows = []
    for s in s_grid:
        spec = AugmentSpec.from_strength(s)
        rng = np.random.default_rng(seed * 1000 + s)
        queries = [augment_query(sample, spec, rng) for sample in samples]
        qvecs = batched(queries)
        rankings = []
        self_hits = 0
        for i, qv in enumerate(qvecs):
            hits = index.query_topk(qv, k)
            rankings.append([1 if (r.family if task == "family" else r.fine) == labels[i] else 0
                             for r, _ in hits])
            if hits[0][0].id == str(i):
                self_hits += 1
        row = {"task": task, "s": s, "self_top1": self_hits / len(samples)}
        row.update(retrieval_metrics(rankings, k))
        rows.append(row)
    return rows
