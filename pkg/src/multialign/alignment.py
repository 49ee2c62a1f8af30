"""Shared bilingual primitives: the orthogonal Procrustes solver, CSLS
similarity, and lexicon induction by nearest-neighbor retrieval.

Scoring against large vocabularies is blockwise: retrieval routines keep at
most ``block_rows`` full score rows in memory at a time, and their results do
not depend on the block schedule.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError

DEFAULT_CSLS_K = 10
DEFAULT_BLOCK_ROWS = 1024

_UNIT_TOL = 1e-6


class Lexicon:
    """Word-translation pairs between two languages as (src, tgt) row indices.

    A source index may map to several targets (and vice versa); exact
    duplicate pairs are dropped, keeping first occurrence order.
    """

    def __init__(self, src_lang, tgt_lang, pairs):
        self.src_lang = src_lang
        self.tgt_lang = tgt_lang
        seen = set()
        unique = []
        for pair in pairs:
            pair = (int(pair[0]), int(pair[1]))
            if pair not in seen:
                seen.add(pair)
                unique.append(pair)
        self.pairs = unique

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __eq__(self, other):
        return (
            isinstance(other, Lexicon)
            and self.src_lang == other.src_lang
            and self.tgt_lang == other.tgt_lang
            and self.pairs == other.pairs
        )

    def __repr__(self):
        return f"Lexicon({self.src_lang!r} -> {self.tgt_lang!r}, {len(self)} pairs)"

    def src_indices(self):
        return np.array([p[0] for p in self.pairs], dtype=np.intp)

    def tgt_indices(self):
        return np.array([p[1] for p in self.pairs], dtype=np.intp)

    def validate(self, n_src, n_tgt):
        for s, t in self.pairs:
            if not (0 <= s < n_src and 0 <= t < n_tgt):
                raise ValueError(
                    f"lexicon pair ({s}, {t}) out of bounds for sizes ({n_src}, {n_tgt})"
                )
        return self


class OrthogonalMap:
    """A d x d orthogonal matrix; validated to ||W^T W - I||_F <= 1e-8 * d."""

    def __init__(self, matrix):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("orthogonal map must be a square matrix")
        d = matrix.shape[0]
        gram_err = np.linalg.norm(matrix.T @ matrix - np.eye(d))
        if not np.isfinite(gram_err) or gram_err > 1e-8 * d:
            raise ValueError(f"matrix is not orthogonal (||W^T W - I||_F = {gram_err:.3e})")
        matrix.setflags(write=False)
        self.matrix = matrix

    @property
    def dim(self):
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))


def solve_procrustes(x_sel, z_sel):
    """Closed-form minimizer of sum ||W x_i - z_i||^2 over orthogonal W.

    With X^T Z = U S V^T, the solution is W = V U^T. Reflections are allowed
    (the determinant is unconstrained).
    """
    x_sel = np.asarray(x_sel, dtype=np.float64)
    z_sel = np.asarray(z_sel, dtype=np.float64)
    if x_sel.ndim != 2 or z_sel.ndim != 2 or x_sel.shape != z_sel.shape:
        raise ValueError(
            f"paired matrices must share shape, got {x_sel.shape} vs {z_sel.shape}"
        )
    if x_sel.shape[0] < 1:
        raise ValueError("need at least one pair")
    if not (np.isfinite(x_sel).all() and np.isfinite(z_sel).all()):
        raise ValueError("non-finite input")
    u, _, vt = np.linalg.svd(x_sel.T @ z_sel)
    return OrthogonalMap(vt.T @ u.T)


def _check_unit_rows(mat, name):
    norms = np.linalg.norm(mat, axis=1)
    if np.abs(norms - 1.0).max() > _UNIT_TOL:
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"{name} rows must be unit-norm (max deviation {worst:.2e})")


def _topk_mean(queries, keys, k, block_rows):
    """Per query row, the mean of its k largest dot products with key rows."""
    n_keys = keys.shape[0]
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], block_rows):
        stop = min(start + block_rows, queries.shape[0])
        cos = queries[start:stop] @ keys.T
        if k >= n_keys:
            out[start:stop] = cos.mean(axis=1)
        else:
            out[start:stop] = np.partition(cos, n_keys - k, axis=1)[:, n_keys - k:].mean(axis=1)
    return out


def csls_scores(mapped_src, tgt, k=DEFAULT_CSLS_K, block_rows=DEFAULT_BLOCK_ROWS):
    """Full CSLS score matrix: 2*cos(i,j) - r_T(i) - r_S(j).

    r_T(i) is the mean of the k largest cosines from mapped source row i to
    the target rows; r_S(j) symmetrically from target row j to the mapped
    source rows. Cosines are computed blockwise; calling this at all
    materializes the n_s x n_t result, so for large-vocabulary retrieval use
    :func:`retrieve_topk` instead.
    """
    mapped_src = np.asarray(mapped_src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if not 1 <= k <= min(mapped_src.shape[0], tgt.shape[0]):
        raise ValueError(f"k={k} out of range for sizes {mapped_src.shape[0]}, {tgt.shape[0]}")
    _check_unit_rows(mapped_src, "mapped source")
    _check_unit_rows(tgt, "target")
    r_t = _topk_mean(mapped_src, tgt, k, block_rows)
    r_s = _topk_mean(tgt, mapped_src, k, block_rows)
    out = np.empty((mapped_src.shape[0], tgt.shape[0]))
    for start in range(0, mapped_src.shape[0], block_rows):
        stop = min(start + block_rows, mapped_src.shape[0])
        cos = mapped_src[start:stop] @ tgt.T
        out[start:stop] = 2.0 * cos - r_t[start:stop, None] - r_s[None, :]
    return out


def _retrieval_margins(mapped_src, tgt, retrieval, k, block_rows):
    if retrieval == "nn":
        return None, None
    if retrieval == "csls":
        if not 1 <= k <= min(mapped_src.shape[0], tgt.shape[0]):
            raise ValueError(
                f"k={k} out of range for sizes {mapped_src.shape[0]}, {tgt.shape[0]}"
            )
        _check_unit_rows(mapped_src, "mapped source")
        _check_unit_rows(tgt, "target")
        r_t = _topk_mean(mapped_src, tgt, k, block_rows)
        r_s = _topk_mean(tgt, mapped_src, k, block_rows)
        return r_t, r_s
    raise ValueError(f"unknown retrieval {retrieval!r}; expected 'nn' or 'csls'")


def _best_match_indices(mapped_src, tgt, retrieval, k, block_rows):
    """Forward argmax per source row and backward argmax per target row under
    one score matrix, without materializing more than a block of it.

    Ties break to the lowest index (np.argmax picks the first maximum; the
    cross-block column update uses strict improvement, so ascending block
    order preserves lowest-index ties).
    """
    n_src, n_tgt = mapped_src.shape[0], tgt.shape[0]
    r_t, r_s = _retrieval_margins(mapped_src, tgt, retrieval, k, block_rows)
    fwd = np.empty(n_src, dtype=np.intp)
    best_col = np.full(n_tgt, -np.inf)
    bwd = np.zeros(n_tgt, dtype=np.intp)
    for start in range(0, n_src, block_rows):
        stop = min(start + block_rows, n_src)
        scores = mapped_src[start:stop] @ tgt.T
        if retrieval == "csls":
            scores *= 2.0
            scores -= r_t[start:stop, None]
            scores -= r_s[None, :]
        fwd[start:stop] = np.argmax(scores, axis=1)
        col_max = scores.max(axis=0)
        improves = col_max > best_col
        bwd[improves] = np.argmax(scores[:, improves], axis=0) + start
        best_col[improves] = col_max[improves]
    return fwd, bwd


def induce_lexicon(
    w_map,
    src_emb,
    tgt_emb,
    retrieval="csls",
    k=DEFAULT_CSLS_K,
    direction="union",
    block_rows=DEFAULT_BLOCK_ROWS,
):
    """Induce a lexicon by retrieving, under ``W @ x`` mapped-source scores,
    the best target per source row (fwd), the best source per target row
    (bwd), or the duplicate-free union of both."""
    if len(src_emb) == 0 or len(tgt_emb) == 0:
        raise ValueError("cannot induce a lexicon over an empty vocabulary")
    if direction not in ("fwd", "bwd", "union"):
        raise ValueError(f"unknown direction {direction!r}")
    mapped = src_emb.vectors @ w_map.matrix.T
    fwd_idx, bwd_idx = _best_match_indices(mapped, tgt_emb.vectors, retrieval, k, block_rows)
    pairs = []
    if direction in ("fwd", "union"):
        pairs.extend((i, int(j)) for i, j in enumerate(fwd_idx))
    if direction in ("bwd", "union"):
        pairs.extend((int(i), j) for j, i in enumerate(bwd_idx))
    return Lexicon(src_emb.lang_id, tgt_emb.lang_id, pairs)


def retrieve_topk(
    queries,
    tgt,
    retrieval="csls",
    k=DEFAULT_CSLS_K,
    topk=1,
    block_rows=DEFAULT_BLOCK_ROWS,
    source_vecs=None,
):
    """Top-``topk`` target indices per query row, scores descending.

    ``source_vecs`` supplies the source-side population for the CSLS r_S
    neighborhood when the queries are a subset of it (defaults to the queries
    themselves). Never materializes more than a block of score rows.
    """
    queries = np.asarray(queries, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    src_ctx = queries if source_vecs is None else np.asarray(source_vecs, dtype=np.float64)
    n_tgt = tgt.shape[0]
    if not 1 <= topk <= n_tgt:
        raise ValueError(f"topk={topk} out of range for {n_tgt} targets")
    if retrieval == "csls":
        if not 1 <= k <= min(src_ctx.shape[0], n_tgt):
            raise ValueError(f"k={k} out of range for sizes {src_ctx.shape[0]}, {n_tgt}")
        _check_unit_rows(queries, "query")
        _check_unit_rows(tgt, "target")
        if source_vecs is not None:
            _check_unit_rows(src_ctx, "source")
        r_t = _topk_mean(queries, tgt, k, block_rows)
        r_s = _topk_mean(tgt, src_ctx, k, block_rows)
    elif retrieval == "nn":
        r_t = r_s = None
    else:
        raise ValueError(f"unknown retrieval {retrieval!r}")
    out = np.empty((queries.shape[0], topk), dtype=np.intp)
    for start in range(0, queries.shape[0], block_rows):
        stop = min(start + block_rows, queries.shape[0])
        scores = queries[start:stop] @ tgt.T
        if retrieval == "csls":
            scores *= 2.0
            scores -= r_t[start:stop, None]
            scores -= r_s[None, :]
        out[start:stop] = _topk_indices(scores, topk)
    return out


def _topk_indices(scores, topk):
    """Row-wise top-k column indices, score-descending, lowest index on ties."""
    n = scores.shape[1]
    if topk >= n:
        cand = np.broadcast_to(np.arange(n, dtype=np.intp), scores.shape).copy()
    else:
        cand = np.argpartition(-scores, topk - 1, axis=1)[:, :topk]
        cand = np.sort(cand, axis=1)
    vals = np.take_along_axis(scores, cand, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(cand, order, axis=1)[:, :topk]


# -- lexicon text files ("<src_word> <tgt_word>" per line; tab accepted on read)


def read_word_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split("\t") if "\t" in line else line.split()
            if len(tokens) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'src tgt', got {line!r}")
            pairs.append((tokens[0], tokens[1]))
    return pairs


def write_word_pairs(path, pairs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in pairs:
            fh.write(f"{src} {tgt}\n")


def lexicon_from_word_pairs(word_pairs, src_emb, tgt_emb):
    """Resolve word pairs against the two vocabularies; out-of-vocabulary
    pairs are skipped and counted."""
    src_index = src_emb.word_index
    tgt_index = tgt_emb.word_index
    pairs = []
    oov = 0
    for src, tgt in word_pairs:
        si = src_index.get(src)
        ti = tgt_index.get(tgt)
        if si is None or ti is None:
            oov += 1
            continue
        pairs.append((si, ti))
    return Lexicon(src_emb.lang_id, tgt_emb.lang_id, pairs), oov


def lexicon_to_word_pairs(lexicon, src_emb, tgt_emb):
    return [(src_emb.vocab[s], tgt_emb.vocab[t]) for s, t in lexicon.pairs]
