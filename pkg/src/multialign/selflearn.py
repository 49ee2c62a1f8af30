"""Unsupervised self-learning aligner: a similarity-of-similarities seed
lexicon followed by a stochastic dictionary-induction loop.

The loop alternates a Procrustes solve on the current pairs with a fresh
induction over the training vocabulary, randomly dropping induced pairs
(keep probability grows once the objective stalls) to escape local optima.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .alignment import (
    DEFAULT_BLOCK_ROWS,
    DEFAULT_CSLS_K,
    Lexicon,
    induce_lexicon,
    solve_procrustes,
)

log = logging.getLogger(__name__)


@dataclass
class SelfLearnConfig:
    init_vocab: int = 4000
    keep_prob_start: float = 0.1
    keep_prob_growth: float = 2.0
    stall_patience: int = 50
    max_iters: int = 2000
    retrieval: str = "csls"
    csls_k: int = DEFAULT_CSLS_K
    objective_tol: float = 1e-6
    seed: int = 0
    block_rows: int = DEFAULT_BLOCK_ROWS

    def __post_init__(self):
        if self.init_vocab < 1:
            raise ValueError("init_vocab must be positive")
        if not 0.0 < self.keep_prob_start <= 1.0:
            raise ValueError("keep_prob_start must be in (0, 1]")
        if self.keep_prob_growth <= 1.0:
            raise ValueError("keep_prob_growth must exceed 1")
        if self.stall_patience < 1 or self.max_iters < 1:
            raise ValueError("stall_patience and max_iters must be positive")
        if self.retrieval not in ("nn", "csls"):
            raise ValueError(f"unknown retrieval {self.retrieval!r}")
        if self.objective_tol < 0:
            raise ValueError("objective_tol must be non-negative")


def _sorted_signatures(vectors):
    """Unit-normalized, descending-sorted rows of sqrt(min-shifted self-similarity)."""
    sim = vectors @ vectors.T
    sim -= sim.min()
    np.sqrt(sim, out=sim)
    sim = np.sort(sim, axis=1)[:, ::-1]
    norms = np.linalg.norm(sim, axis=1)
    norms[norms == 0.0] = 1.0
    return sim / norms[:, None]


def init_unsupervised(src_emb, tgt_emb, init_vocab=4000):
    """Seed lexicon from monolingual similarity structure alone.

    Each word's signature is the sorted vector of its similarities to every
    other word in its own language; signatures are matched across languages
    by cosine, in both directions, and the union is returned.
    """
    if init_vocab > len(src_emb) or init_vocab > len(tgt_emb):
        raise ValueError(
            f"init_vocab={init_vocab} exceeds a vocabulary "
            f"({len(src_emb)}, {len(tgt_emb)})"
        )
    sig_src = _sorted_signatures(src_emb.vectors[:init_vocab])
    sig_tgt = _sorted_signatures(tgt_emb.vectors[:init_vocab])
    sim = sig_src @ sig_tgt.T
    fwd = np.argmax(sim, axis=1)
    bwd = np.argmax(sim, axis=0)
    pairs = [(i, int(j)) for i, j in enumerate(fwd)]
    pairs.extend((int(i), j) for j, i in enumerate(bwd))
    return Lexicon(src_emb.lang_id, tgt_emb.lang_id, pairs)


def _mean_pair_cosine(mapped, tgt_vectors, lexicon):
    src_idx = lexicon.src_indices()
    tgt_idx = lexicon.tgt_indices()
    return float(np.einsum("ij,ij->i", mapped[src_idx], tgt_vectors[tgt_idx]).mean())


def self_learn(src_emb, tgt_emb, cfg=None, log_path=None):
    """Run the stochastic self-learning loop and return the final full
    (non-stochastic) induced lexicon.

    The per-iteration objective is the mean cosine between mapped sources and
    their matched targets over the pre-dropout induction. When it fails to
    improve by more than ``objective_tol`` for ``stall_patience`` iterations,
    the keep probability grows; once it is 1 and the objective stalls again,
    the loop stops. With a fixed seed the run is bit-reproducible.
    """
    cfg = cfg or SelfLearnConfig()
    rng = np.random.default_rng(cfg.seed)
    init_vocab = min(cfg.init_vocab, len(src_emb), len(tgt_emb))
    current = init_unsupervised(src_emb, tgt_emb, init_vocab)
    if len(current) == 0:
        raise ValueError("seed lexicon is empty")

    keep_prob = cfg.keep_prob_start
    best_objective = -np.inf
    stall = 0
    history = []
    full_lex = current
    for iteration in range(1, cfg.max_iters + 1):
        w_map = solve_procrustes(
            src_emb.vectors[current.src_indices()],
            tgt_emb.vectors[current.tgt_indices()],
        )
        full_lex = induce_lexicon(
            w_map,
            src_emb,
            tgt_emb,
            retrieval=cfg.retrieval,
            k=cfg.csls_k,
            direction="union",
            block_rows=cfg.block_rows,
        )
        mapped = src_emb.vectors @ w_map.matrix.T
        objective = _mean_pair_cosine(mapped, tgt_emb.vectors, full_lex)
        if not np.isfinite(objective):
            raise ValueError(f"non-finite objective at iteration {iteration}")
        history.append((iteration, objective, keep_prob, len(full_lex)))

        if objective > best_objective + cfg.objective_tol:
            best_objective = objective
            stall = 0
        else:
            stall += 1
        if stall >= cfg.stall_patience:
            if keep_prob >= 1.0:
                log.debug("%s->%s: converged at iteration %d", src_emb.lang_id,
                          tgt_emb.lang_id, iteration)
                break
            keep_prob = min(1.0, keep_prob * cfg.keep_prob_growth)
            stall = 0

        mask = rng.random(len(full_lex)) < keep_prob
        if mask.any():
            kept = [p for p, m in zip(full_lex.pairs, mask) if m]
            current = Lexicon(full_lex.src_lang, full_lex.tgt_lang, kept)
        else:
            current = full_lex

    if log_path is not None:
        with open(log_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "keep_prob", "lexicon_size"])
            writer.writerows(history)
    return full_lex
