"""Entropic Gromov-Wasserstein alignment between two vocabularies, plus the
Procrustes/CSLS refinement that turns the resulting coupling into a lexicon.

The solver alternates the square-loss gradient pseudo-cost with Sinkhorn
scaling toward uniform marginals. Sinkhorn runs in the log domain so the
small regularizations this problem needs do not underflow; the coupling is
rounded onto the marginal polytope after every outer iteration, so its
feasibility invariants hold throughout, not just at exit. Cost matrices and
the coupling are stored in 32-bit floats; scalar reductions (objective,
marginal sums) accumulate in 64-bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import matrixio
from .alignment import DEFAULT_BLOCK_ROWS, DEFAULT_CSLS_K, Lexicon, induce_lexicon, solve_procrustes
from .errors import NumericsError

log = logging.getLogger(__name__)

_MARGINAL_TOL = 1e-6
# Revert-and-stop slack for the monotone-objective safeguard; well under the
# 1e-8 the coupling contract allows.
_MONOTONE_SLACK = 1e-10


@dataclass
class GWConfig:
    epsilon: float = 5e-4
    outer_iters: int = 300
    sinkhorn_iters: int = 50
    conv_tol: float = 1e-7
    refine_rounds: int = 5
    train_vocab: int = 20000
    csls_k: int = DEFAULT_CSLS_K
    block_rows: int = DEFAULT_BLOCK_ROWS

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.outer_iters < 1 or self.sinkhorn_iters < 1:
            raise ValueError("iteration counts must be positive")
        if self.conv_tol < 0:
            raise ValueError("conv_tol must be non-negative")
        if self.refine_rounds < 0:
            raise ValueError("refine_rounds must be non-negative")
        if self.train_vocab < 1:
            raise ValueError("train_vocab must be positive")


class Coupling:
    """A transport plan with its row/column marginals."""

    def __init__(self, plan, row_marginal, col_marginal):
        self.plan = np.ascontiguousarray(plan, dtype=np.float32)
        self.row_marginal = np.asarray(row_marginal, dtype=np.float64)
        self.col_marginal = np.asarray(col_marginal, dtype=np.float64)
        self.validate()

    def validate(self, tol=_MARGINAL_TOL):
        if (self.plan < 0).any():
            raise ValueError("coupling has negative entries")
        row_err = np.abs(self.plan.sum(axis=1, dtype=np.float64) - self.row_marginal).max()
        col_err = np.abs(self.plan.sum(axis=0, dtype=np.float64) - self.col_marginal).max()
        if row_err > tol or col_err > tol:
            raise ValueError(
                f"coupling marginals off by (row {row_err:.2e}, col {col_err:.2e})"
            )
        return self

    @property
    def shape(self):
        return self.plan.shape

    def row_argmax(self):
        return np.argmax(self.plan, axis=1)


def save_coupling(coupling, path):
    matrixio.write_matrix(path, coupling.plan, np.float32)


def load_coupling(path):
    plan = matrixio.read_matrix(path, np.float32)
    n_s, n_t = plan.shape
    return Coupling(plan, np.full(n_s, 1.0 / n_s), np.full(n_t, 1.0 / n_t))


def _rescaled_self_similarity(vectors):
    sim = (vectors @ vectors.T).astype(np.float32)
    peak = np.abs(sim).max()
    if peak > 0:
        sim /= peak
    return sim


def _sinkhorn_log(pseudo_cost, log_p, log_q, epsilon, iters):
    """Log-domain Sinkhorn toward marginals exp(log_p), exp(log_q).

    Returns the scaled plan in float64. Raises NumericsError when the
    potentials leave the finite range, which is the log-domain face of a
    scaling vector overflowing or underflowing.
    """
    scaled = np.asarray(pseudo_cost, dtype=np.float64) / -epsilon
    a = np.zeros(log_p.shape[0])
    b = np.zeros(log_q.shape[0])
    for _ in range(iters):
        a = log_p - logsumexp(scaled + b[None, :], axis=1)
        b = log_q - logsumexp(scaled + a[:, None], axis=0)
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise NumericsError(
                "Sinkhorn scaling diverged (overflow/underflow); "
                "increase the entropic regularization epsilon"
            )
    return np.exp(scaled + a[:, None] + b[None, :])


def _round_to_marginals(plan, p, q):
    """Project a near-feasible plan exactly onto the marginal polytope by
    row/column damping plus a non-negative rank-one correction."""
    row = plan.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(row > 0, np.minimum(1.0, p / row), 1.0)
    plan = plan * scale[:, None]
    col = plan.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(col > 0, np.minimum(1.0, q / col), 1.0)
    plan = plan * scale[None, :]
    err_r = np.maximum(p - plan.sum(axis=1), 0.0)
    err_c = np.maximum(q - plan.sum(axis=0), 0.0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def _gw_terms(c_src, c_tgt, p, q):
    """Square-loss decomposition pieces: the separable constant vectors."""
    const_src = (c_src.astype(np.float64) ** 2) @ p
    const_tgt = (c_tgt.astype(np.float64) ** 2) @ q
    return const_src, const_tgt


def _pseudo_cost(c_src, c_tgt, plan, const_src, const_tgt):
    cross = c_src @ plan @ c_tgt.T
    cost = -4.0 * cross
    cost += 2.0 * const_src[:, None].astype(np.float32)
    cost += 2.0 * const_tgt[None, :].astype(np.float32)
    return cost


def _objective(c_src, c_tgt, plan, const_src, const_tgt, epsilon):
    cross = (c_src @ plan) @ c_tgt.T
    quad = (
        float(const_src @ plan.sum(axis=1, dtype=np.float64))
        + float(const_tgt @ plan.sum(axis=0, dtype=np.float64))
        - 2.0 * float(np.sum(cross.astype(np.float64) * plan, dtype=np.float64))
    )
    positive = plan[plan > 0].astype(np.float64)
    entropy = -float(np.sum(positive * np.log(positive), dtype=np.float64))
    return quad - epsilon * entropy


def gw_align(src_emb, tgt_emb, cfg=None, callback=None):
    """Entropic Gromov-Wasserstein coupling between the two vocabularies'
    intra-language cosine-similarity structures, with uniform marginals.

    Similarity matrices are rescaled by their largest absolute entry so the
    regularization strength transfers across datasets. The recorded objective
    is non-increasing: an outer step that would raise it is reverted and the
    loop stops. ``callback(outer_iteration, plan, objective)``, when given,
    fires after every accepted outer iteration.
    """
    cfg = cfg or GWConfig()
    xs = src_emb.top(cfg.train_vocab)
    zs = tgt_emb.top(cfg.train_vocab)
    n_s, n_t = len(xs), len(zs)
    c_src = _rescaled_self_similarity(xs.vectors)
    c_tgt = _rescaled_self_similarity(zs.vectors)
    p = np.full(n_s, 1.0 / n_s)
    q = np.full(n_t, 1.0 / n_t)
    log_p = np.log(p)
    log_q = np.log(q)
    const_src, const_tgt = _gw_terms(c_src, c_tgt, p, q)

    plan = np.outer(p, q).astype(np.float32)
    objective = _objective(c_src, c_tgt, plan, const_src, const_tgt, cfg.epsilon)
    for outer in range(1, cfg.outer_iters + 1):
        cost = _pseudo_cost(c_src, c_tgt, plan, const_src, const_tgt)
        new_plan = _sinkhorn_log(cost, log_p, log_q, cfg.epsilon, cfg.sinkhorn_iters)
        new_plan = _round_to_marginals(new_plan, p, q).astype(np.float32)
        new_objective = _objective(c_src, c_tgt, new_plan, const_src, const_tgt, cfg.epsilon)
        if new_objective > objective + _MONOTONE_SLACK:
            log.debug("gw: objective would rise at outer %d; stopping", outer)
            break
        delta = float(np.abs(new_plan.astype(np.float64) - plan).sum())
        rel = delta / max(float(np.abs(plan).sum(dtype=np.float64)), 1e-300)
        plan = new_plan
        objective = new_objective
        if callback is not None:
            callback(outer, plan, objective)
        if rel <= cfg.conv_tol:
            log.debug("gw: converged at outer %d (rel change %.2e)", outer, rel)
            break
    return Coupling(plan, p, q)


def refine_coupling(coupling, src_emb, tgt_emb, cfg=None):
    """Turn a coupling into a lexicon: start from its row-argmax pairs, then
    alternate Procrustes with CSLS union induction over the same trimmed
    vocabularies for ``refine_rounds`` rounds."""
    cfg = cfg or GWConfig()
    xs = src_emb.top(cfg.train_vocab)
    zs = tgt_emb.top(cfg.train_vocab)
    if coupling.shape != (len(xs), len(zs)):
        raise ValueError(
            f"coupling shape {coupling.shape} does not match trimmed "
            f"vocabularies ({len(xs)}, {len(zs)})"
        )
    pairs = [(i, int(j)) for i, j in enumerate(coupling.row_argmax())]
    lexicon = Lexicon(xs.lang_id, zs.lang_id, pairs)
    for _ in range(cfg.refine_rounds):
        w_map = solve_procrustes(
            xs.vectors[lexicon.src_indices()],
            zs.vectors[lexicon.tgt_indices()],
        )
        lexicon = induce_lexicon(
            w_map,
            xs,
            zs,
            retrieval="csls",
            k=cfg.csls_k,
            direction="union",
            block_rows=cfg.block_rows,
        )
    return lexicon
