"""Bit-packed Hamming-distance search and retrieval metrics.

Codes are packed LSB-first into little-endian 64-bit words, one row of words
per code, so a whole database scans with XOR + popcount. Metrics accumulate
integer counts and only divide at the end; sums of the resulting ratios go
through math.fsum, which is exactly rounded, so results are reproducible to
the bit against naive reference evaluators.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError

WORD_BITS = 64

CODES_MAGIC = b"BHC1"


@dataclass
class PackedCodes:
    """n binary codes of length code_length packed into uint64 words."""

    n: int
    code_length: int
    words: np.ndarray  # (n, words_per_code) uint64

    @property
    def words_per_code(self) -> int:
        return self.words.shape[1]

    def __getitem__(self, i) -> np.ndarray:
        return self.words[i]


def pack_codes(bits) -> PackedCodes:
    """Pack rows of {0,1} bits, LSB-first within each word.

    Bit j of a code lands in word j // 64 at bit position j % 64; bits past
    the code length in the last word stay zero.
    """
    try:
        bits = np.asarray(bits)
    except ValueError as exc:
        raise DimensionError(f"ragged code rows: {exc}") from None
    if bits.ndim != 2:
        raise DimensionError(f"codes must be a 2-D bit array, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise DimensionError("codes must contain only 0/1 bits")
    n, m = bits.shape
    words_per_code = (m + WORD_BITS - 1) // WORD_BITS
    as_bytes = np.packbits(bits.astype(np.uint8), axis=1, bitorder="little")
    padded = np.zeros((n, words_per_code * 8), dtype=np.uint8)
    padded[:, : as_bytes.shape[1]] = as_bytes
    words = padded.view(np.dtype("<u8")).astype(np.uint64, copy=False)
    return PackedCodes(n=n, code_length=m, words=np.ascontiguousarray(words))


def unpack_codes(packed: PackedCodes) -> np.ndarray:
    """Inverse of pack_codes; returns (n, code_length) uint8 bits."""
    byte_view = packed.words.astype("<u8").view(np.uint8)
    byte_view = byte_view.reshape(packed.n, packed.words_per_code * 8)
    bits = np.unpackbits(byte_view, axis=1, bitorder="little")
    return bits[:, : packed.code_length].astype(np.uint8)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Popcount of XOR over the packed words of two codes."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise DimensionError(f"packed shapes differ: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def hamming_to_all(query: np.ndarray, db: PackedCodes) -> np.ndarray:
    """Hamming distance from one packed query to every database code."""
    query = np.asarray(query, dtype=np.uint64)
    if query.shape != (db.words_per_code,):
        raise DimensionError(
            f"query has {query.shape} words, database codes have "
            f"{db.words_per_code}"
        )
    return np.bitwise_count(db.words ^ query).sum(axis=1).astype(np.int64)


def rank_database(query: np.ndarray, db: PackedCodes) -> np.ndarray:
    """Database indices by ascending distance, ties broken by ascending index."""
    return np.argsort(hamming_to_all(query, db), kind="stable")


@dataclass(frozen=True)
class RelevanceJudge:
    """Label-based relevance: equality for class indices, nonempty tag
    intersection for multi-hot rows. Symmetric in its two arguments."""

    mode: str  # "single" | "multi"

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise DimensionError(f"unknown relevance mode: {self.mode!r}")

    def relevant(self, query_label, db_labels) -> np.ndarray:
        if self.mode == "single":
            return np.asarray(db_labels) == query_label
        q = np.asarray(query_label, dtype=np.int64)
        return (np.asarray(db_labels, dtype=np.int64) @ q) > 0


def judge_for(labels) -> RelevanceJudge:
    """Pick the judge mode from the label array's shape."""
    return RelevanceJudge("single" if np.asarray(labels).ndim == 1 else "multi")


def average_precision(relevance, total_relevant: int, k: int) -> float:
    """AP of one ranked relevance list truncated at k.

    (sum over relevant ranks i <= k of precision@i) / min(total_relevant, k);
    0 when the denominator is 0.
    """
    rel = np.asarray(relevance, dtype=np.int64)[:k]
    denom = min(int(total_relevant), int(k))
    if denom <= 0:
        return 0.0
    hits = np.nonzero(rel)[0]
    if hits.size == 0:
        return 0.0
    cum = np.cumsum(rel)
    terms = cum[hits] / (hits + 1.0)
    return math.fsum(terms.tolist()) / denom


def _check_eval_inputs(query_codes, db_codes, query_labels, db_labels):
    if query_codes.n == 0:
        raise ValueError("empty query set")
    if query_codes.code_length != db_codes.code_length:
        raise DimensionError(
            f"query code length {query_codes.code_length} does not match "
            f"database {db_codes.code_length}"
        )
    if len(np.asarray(query_labels)) != query_codes.n:
        raise DimensionError("query labels do not match query codes")
    if len(np.asarray(db_labels)) != db_codes.n:
        raise DimensionError("database labels do not match database codes")


def mean_average_precision(
    query_codes: PackedCodes,
    db_codes: PackedCodes,
    query_labels,
    db_labels,
    judge: RelevanceJudge | None = None,
    k: int | None = None,
) -> float:
    """Mean of per-query AP over a ranked top-k scan; k=None scans everything."""
    _check_eval_inputs(query_codes, db_codes, query_labels, db_labels)
    judge = judge or judge_for(db_labels)
    if k is None:
        k = db_codes.n
    aps = []
    for qi in range(query_codes.n):
        rel_all = judge.relevant(np.asarray(query_labels)[qi], db_labels)
        order = rank_database(query_codes[qi], db_codes)
        aps.append(average_precision(rel_all[order], int(rel_all.sum()), k))
    return math.fsum(aps) / len(aps)


def precision_at_k(
    query_codes: PackedCodes,
    db_codes: PackedCodes,
    query_labels,
    db_labels,
    ks,
    judge: RelevanceJudge | None = None,
) -> list[tuple[int, float]]:
    """Mean fraction of relevant items among the top k, for each requested k."""
    _check_eval_inputs(query_codes, db_codes, query_labels, db_labels)
    judge = judge or judge_for(db_labels)
    ks = [int(k) for k in ks]
    per_k = {k: [] for k in ks}
    for qi in range(query_codes.n):
        rel_all = judge.relevant(np.asarray(query_labels)[qi], db_labels)
        ranked = rel_all[rank_database(query_codes[qi], db_codes)]
        cum = np.cumsum(ranked.astype(np.int64))
        for k in ks:
            kk = min(k, db_codes.n)
            per_k[k].append(int(cum[kk - 1]) / k)
    return [(k, math.fsum(per_k[k]) / query_codes.n) for k in ks]


def precision_at_radius(
    query_codes: PackedCodes,
    db_codes: PackedCodes,
    query_labels,
    db_labels,
    radius: int = 2,
    judge: RelevanceJudge | None = None,
    skip_empty: bool = False,
) -> float:
    """Mean precision among database items within the given Hamming radius.

    A query retrieving nothing contributes 0 by default; with skip_empty it
    is dropped from the average instead.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    _check_eval_inputs(query_codes, db_codes, query_labels, db_labels)
    judge = judge or judge_for(db_labels)
    contributions = []
    for qi in range(query_codes.n):
        dist = hamming_to_all(query_codes[qi], db_codes)
        within = dist <= radius
        retrieved = int(within.sum())
        if retrieved == 0:
            if not skip_empty:
                contributions.append(0.0)
            continue
        rel = judge.relevant(np.asarray(query_labels)[qi], db_labels)
        contributions.append(int((rel & within).sum()) / retrieved)
    if not contributions:
        return 0.0
    return math.fsum(contributions) / len(contributions)


def pr_curve(
    query_codes: PackedCodes,
    db_codes: PackedCodes,
    query_labels,
    db_labels,
    judge: RelevanceJudge | None = None,
) -> list[tuple[float, float]]:
    """(recall, precision) at every Hamming threshold 0..code_length.

    Retrieval at threshold t is the ball of distance <= t. Queries with no
    relevant database item are excluded from the averaging entirely; a query
    whose ball is empty at some threshold contributes precision 1 there
    (vacuously, every retrieved item is relevant). Points are raw, not
    interpolated.
    """
    _check_eval_inputs(query_codes, db_codes, query_labels, db_labels)
    judge = judge or judge_for(db_labels)
    m = db_codes.code_length
    per_threshold_precision = [[] for _ in range(m + 1)]
    per_threshold_recall = [[] for _ in range(m + 1)]
    for qi in range(query_codes.n):
        rel = judge.relevant(np.asarray(query_labels)[qi], db_labels)
        total_relevant = int(rel.sum())
        if total_relevant == 0:
            continue
        dist = hamming_to_all(query_codes[qi], db_codes)
        retrieved_by_t = np.cumsum(np.bincount(dist, minlength=m + 1))
        relevant_by_t = np.cumsum(np.bincount(dist[rel], minlength=m + 1))
        for t in range(m + 1):
            ret = int(retrieved_by_t[t])
            hit = int(relevant_by_t[t])
            per_threshold_precision[t].append(hit / ret if ret else 1.0)
            per_threshold_recall[t].append(hit / total_relevant)
    points = []
    for t in range(m + 1):
        if not per_threshold_precision[t]:
            continue
        nq = len(per_threshold_precision[t])
        points.append(
            (
                math.fsum(per_threshold_recall[t]) / nq,
                math.fsum(per_threshold_precision[t]) / nq,
            )
        )
    return points


@dataclass
class EvalReport:
    """Retrieval metrics for one query/database pair."""

    map_at_k: float
    precision_at_k: list
    p_at_h2: float
    pr_curve: list
    k: int | None = None
    radius: int = 2

    def scalars(self) -> dict:
        return {
            "map_at_k": self.map_at_k,
            "p_at_h2": self.p_at_h2,
            "k": self.k,
            "radius": self.radius,
        }


def evaluate_retrieval(
    query_codes: PackedCodes,
    db_codes: PackedCodes,
    query_labels,
    db_labels,
    k: int | None = None,
    radius: int = 2,
    ks=None,
    judge: RelevanceJudge | None = None,
) -> EvalReport:
    """All four metric families in one pass over the database."""
    judge = judge or judge_for(db_labels)
    if ks is None:
        cap = db_codes.n
        ks = [v for v in (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000) if v <= cap]
    return EvalReport(
        map_at_k=mean_average_precision(
            query_codes, db_codes, query_labels, db_labels, judge, k
        ),
        precision_at_k=precision_at_k(
            query_codes, db_codes, query_labels, db_labels, ks, judge
        ),
        p_at_h2=precision_at_radius(
            query_codes, db_codes, query_labels, db_labels, radius, judge
        ),
        pr_curve=pr_curve(query_codes, db_codes, query_labels, db_labels, judge),
        k=k,
        radius=radius,
    )


def save_codes(packed: PackedCodes, path) -> None:
    """Write a code database: magic "BHC1", u32 n, u32 m, packed words, all
    little-endian."""
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<II", packed.n, packed.code_length))
        fh.write(packed.words.astype("<u8").tobytes())


def load_codes(path) -> PackedCodes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CODES_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CODES_MAGIC!r}", offset=0)
    if len(raw) < 12:
        raise FormatError("truncated header", offset=len(raw))
    n, m = struct.unpack_from("<II", raw, 4)
    words_per_code = (m + WORD_BITS - 1) // WORD_BITS
    need = 12 + n * words_per_code * 8
    if len(raw) < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(raw)}", offset=len(raw)
        )
    words = np.frombuffer(raw, dtype="<u8", count=n * words_per_code, offset=12)
    words = words.reshape(n, words_per_code).astype(np.uint64)
    return PackedCodes(n=n, code_length=m, words=words)


def report_to_json(report: EvalReport, sig_digits: int = 6) -> str:
    """Scalar metrics as JSON with fixed significant digits."""

    def _round(v):
        return float(f"{v:.{sig_digits}g}") if isinstance(v, float) else v

    return json.dumps({k: _round(v) for k, v in report.scalars().items()}, indent=2)


def write_precision_csv(points, path, sig_digits: int = 6) -> None:
    with open(path, "w") as fh:
        fh.write("k,precision\n")
        for k, p in points:
            fh.write(f"{k},{p:.{sig_digits}g}\n")


def write_pr_csv(points, path, sig_digits: int = 6) -> None:
    with open(path, "w") as fh:
        fh.write("recall,precision\n")
        for r, p in points:
            fh.write(f"{r:.{sig_digits}g},{p:.{sig_digits}g}\n")
