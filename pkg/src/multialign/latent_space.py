"""Shared latent space over a language graph: one orthogonal map per language
plus a single SPD metric, fitted to the per-edge lexicons.

For an edge (i, j) with pairs Y, the translation operator factors through the
metric as U_j B U_i^T, and the fitted loss is the per-edge mean of
||U_j B U_i^T x_a - z_b||^2 summed over edges. Words map into the latent
space as x -> B^(1/2) U_i^T x.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import matrixio
from .alignment import OrthogonalMap
from .embeddings import EmbeddingMatrix, normalize
from .errors import FormatError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphEdge:
    src: str
    tgt: str
    method: str = "selflearn"  # selflearn | gw | supplied
    path: str | None = None

    def __post_init__(self):
        if self.method not in ("selflearn", "gw", "supplied"):
            raise ValueError(f"unknown edge method {self.method!r}")
        if self.method == "supplied" and not self.path:
            raise ValueError(f"edge {self.src}-{self.tgt}: supplied edges need a lexicon path")

    @property
    def key(self):
        return (self.src, self.tgt)

    @property
    def name(self):
        return f"{self.src}-{self.tgt}"


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


@dataclass
class LanguageGraph:
    nodes: list[str]
    edges: list[GraphEdge]

    def violations(self):
        """All structural problems, not just the first."""
        problems = []
        if not self.nodes:
            problems.append("graph has no languages")
        if len(set(self.nodes)) != len(self.nodes):
            problems.append("duplicate language codes")
        node_set = set(self.nodes)
        seen = set()
        for edge in self.edges:
            if edge.src == edge.tgt:
                problems.append(f"self-loop edge {edge.name}")
            for end in (edge.src, edge.tgt):
                if end not in node_set:
                    problems.append(f"edge {edge.name}: undeclared language {end!r}")
            undirected = frozenset((edge.src, edge.tgt))
            if undirected in seen:
                problems.append(f"duplicate edge {edge.name}")
            seen.add(undirected)
        if self.nodes and not problems:
            uf = _UnionFind(self.nodes)
            for edge in self.edges:
                uf.union(edge.src, edge.tgt)
            roots = {uf.find(n) for n in self.nodes}
            if len(roots) > 1:
                comp0 = uf.find(self.nodes[0])
                unreachable = sorted(n for n in self.nodes if uf.find(n) != comp0)
                problems.append(f"graph is disconnected; unreachable from {self.nodes[0]}: "
                                + ", ".join(unreachable))
        return problems

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))
        return self


class SPDMetric:
    """A symmetric positive-definite d x d metric."""

    SYM_TOL = 1e-9
    EIG_FLOOR = 1e-10

    def __init__(self, matrix):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("metric must be square")
        sym_err = np.linalg.norm(matrix - matrix.T)
        if not np.isfinite(sym_err) or sym_err > self.SYM_TOL:
            raise ValueError(f"metric is not symmetric (||B - B^T||_F = {sym_err:.3e})")
        eigvals = np.linalg.eigvalsh(matrix)
        if eigvals.min() < self.EIG_FLOOR:
            raise ValueError(f"metric is not positive definite (min eig {eigvals.min():.3e})")
        matrix.setflags(write=False)
        self.matrix = matrix

    @property
    def dim(self):
        return self.matrix.shape[0]

    def sqrt(self):
        """Symmetric square root via eigendecomposition."""
        w, v = np.linalg.eigh(self.matrix)
        root = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
        return 0.5 * (root + root.T)


@dataclass
class MultilingualSpace:
    """Per-language orthogonal maps plus the shared metric and its cached root."""

    maps: dict[str, OrthogonalMap]
    metric: SPDMetric
    sqrt_metric: np.ndarray = None
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.sqrt_metric is None:
            self.sqrt_metric = self.metric.sqrt()
        d = self.metric.dim
        for lang, omap in self.maps.items():
            if omap.dim != d:
                raise ValueError(f"map for {lang!r} has dim {omap.dim}, metric has {d}")
        root_err = np.linalg.norm(self.sqrt_metric @ self.sqrt_metric - self.metric.matrix)
        if root_err > 1e-8 * d:
            raise ValueError(f"cached metric root is inconsistent ({root_err:.3e})")

    @property
    def languages(self):
        return sorted(self.maps)

    @property
    def dim(self):
        return self.metric.dim


@dataclass
class FitConfig:
    max_iters: int = 150
    grad_tol: float = 1e-6
    loss_tol: float = 1e-6
    b_floor: float = 1e-10
    seed: int = 0
    init: str = "identity"  # identity | random_orthogonal
    max_halvings: int = 30

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.grad_tol < 0 or self.loss_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.b_floor <= 0:
            raise ValueError("b_floor must be positive")
        if self.init not in ("identity", "random_orthogonal"):
            raise ValueError(f"unknown init {self.init!r}")


def _sym(mat):
    return 0.5 * (mat + mat.T)


def _polar_retract(mat):
    u, _, vt = np.linalg.svd(mat)
    return u @ vt


def _clamp_spd(mat, floor):
    w, v = np.linalg.eigh(_sym(mat))
    return _sym((v * np.maximum(w, floor)) @ v.T)


class _EdgeData:
    """Gathered pair rows for one edge; per-edge mean weighting."""

    def __init__(self, edge_key, x_rows, z_rows):
        self.key = edge_key
        self.x = x_rows
        self.z = z_rows
        self.inv_m = 1.0 / x_rows.shape[0]

    def loss(self, u_src, u_tgt, metric):
        residual = (self.x @ u_src) @ metric @ u_tgt.T - self.z
        return self.inv_m * float(np.sum(residual * residual, dtype=np.float64))

    def residual(self, u_src, u_tgt, metric):
        return (self.x @ u_src) @ metric @ u_tgt.T - self.z


def fit_shared_space(embeddings, lexicons, graph, cfg=None, callback=None):
    """Fit the per-language orthogonal maps and the shared SPD metric.

    Alternates first-order feasible steps: each map takes a tangent-projected
    gradient step with polar retraction, the metric a symmetrized gradient
    step followed by an eigenvalue clamp at ``b_floor``. Every step is
    backtracked (halving from 1.0, up to ``max_halvings``) until the loss
    decreases, so the recorded loss sequence is non-increasing. Stops on the
    relative Riemannian gradient norm, the relative loss change, or
    ``max_iters``. ``callback(iteration, loss, maps, metric)`` fires after
    every sweep.
    """
    cfg = cfg or FitConfig()
    graph.validate()
    langs = sorted(graph.nodes)
    for lang in langs:
        if lang not in embeddings:
            raise ValueError(f"no embeddings for language {lang!r}")
    dims = {embeddings[lang].dim for lang in langs}
    if len(dims) != 1:
        raise ValueError(f"embedding dimensions differ across languages: {sorted(dims)}")
    d = dims.pop()

    edge_data = []
    for edge in graph.edges:
        lex = lexicons.get(edge.key)
        if lex is None:
            raise ValueError(f"missing lexicon for edge {edge.name}")
        if len(lex) == 0:
            raise ValueError(f"empty lexicon on edge {edge.name}")
        src_emb = embeddings[edge.src]
        tgt_emb = embeddings[edge.tgt]
        lex.validate(len(src_emb), len(tgt_emb))
        edge_data.append(
            _EdgeData(edge.key, src_emb.vectors[lex.src_indices()],
                      tgt_emb.vectors[lex.tgt_indices()])
        )

    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "identity":
        maps = {lang: np.eye(d) for lang in langs}
    else:
        maps = {lang: _polar_retract(rng.standard_normal((d, d))) for lang in langs}
    metric = np.eye(d)

    incident = {lang: [e for e in edge_data if lang in e.key] for lang in langs}
    edge_losses = {e.key: e.loss(maps[e.key[0]], maps[e.key[1]], metric) for e in edge_data}
    loss = float(sum(edge_losses[e.key] for e in edge_data))
    history = [loss]
    grad_norm0 = None

    for iteration in range(1, cfg.max_iters + 1):
        # Riemannian gradient norm at the sweep start, for the stop test.
        sq_norm = 0.0
        metric_grad = np.zeros((d, d))
        map_grads = {lang: np.zeros((d, d)) for lang in langs}
        for e in edge_data:
            src, tgt = e.key
            res = e.residual(maps[src], maps[tgt], metric)
            scale = 2.0 * e.inv_m
            map_grads[src] += scale * (e.x.T @ res) @ maps[tgt] @ metric
            map_grads[tgt] += scale * (res.T @ e.x) @ maps[src] @ metric
            metric_grad += scale * (e.x @ maps[src]).T @ res @ maps[tgt]
        for lang in langs:
            u = maps[lang]
            g = map_grads[lang]
            tangent = g - u @ _sym(u.T @ g)
            sq_norm += float(np.sum(tangent * tangent))
            map_grads[lang] = tangent
        metric_grad = _sym(metric_grad)
        sq_norm += float(np.sum(metric_grad * metric_grad))
        grad_norm = np.sqrt(sq_norm)
        if grad_norm0 is None:
            grad_norm0 = grad_norm
        if grad_norm <= cfg.grad_tol * max(grad_norm0, 1e-300):
            break

        # Per-language feasible steps; only incident edges change.
        for lang in langs:
            tangent = map_grads[lang]
            if not tangent.any():
                continue
            local = incident[lang]
            local_old = sum(edge_losses[e.key] for e in local)
            step = 1.0
            for _ in range(cfg.max_halvings + 1):
                candidate = _polar_retract(maps[lang] - step * tangent)
                trial = {lang: candidate}
                new_losses = {
                    e.key: e.loss(trial.get(e.key[0], maps[e.key[0]]),
                                  trial.get(e.key[1], maps[e.key[1]]), metric)
                    for e in local
                }
                if sum(new_losses.values()) < local_old:
                    maps[lang] = candidate
                    edge_losses.update(new_losses)
                    break
                step *= 0.5

        # Metric step: affects every edge.
        total_old = sum(edge_losses[e.key] for e in edge_data)
        metric_grad = np.zeros((d, d))
        for e in edge_data:
            src, tgt = e.key
            res = e.residual(maps[src], maps[tgt], metric)
            metric_grad += (2.0 * e.inv_m) * (e.x @ maps[src]).T @ res @ maps[tgt]
        metric_grad = _sym(metric_grad)
        if metric_grad.any():
            step = 1.0
            for _ in range(cfg.max_halvings + 1):
                candidate = _clamp_spd(metric - step * metric_grad, cfg.b_floor)
                new_losses = {
                    e.key: e.loss(maps[e.key[0]], maps[e.key[1]], candidate)
                    for e in edge_data
                }
                if sum(new_losses.values()) < total_old:
                    metric = candidate
                    edge_losses = new_losses
                    break
                step *= 0.5

        new_loss = float(sum(edge_losses[e.key] for e in edge_data))
        history.append(new_loss)
        if callback is not None:
            callback(iteration, new_loss,
                     {lang: maps[lang].copy() for lang in langs}, metric.copy())
        rel_change = abs(loss - new_loss) / max(loss, 1e-300)
        loss = new_loss
        if rel_change <= cfg.loss_tol:
            break

    space = MultilingualSpace(
        maps={lang: OrthogonalMap(_polar_retract(maps[lang])) for lang in langs},
        metric=SPDMetric(_clamp_spd(metric, cfg.b_floor)),
        loss_history=history,
    )
    log.debug("fit: %d sweeps, loss %.3e -> %.3e", len(history) - 1, history[0], history[-1])
    return space


def map_to_latent(space, lang, emb, renormalize=True):
    """Map a language's embeddings into the shared latent space
    (x -> B^(1/2) U^T x per row), optionally unit-normalizing for retrieval."""
    if lang not in space.maps:
        raise KeyError(f"language {lang!r} not in the fitted space")
    if emb.dim != space.dim:
        raise ValueError(f"embedding dim {emb.dim} does not match space dim {space.dim}")
    latent = emb.vectors @ space.maps[lang].matrix @ space.sqrt_metric
    out = EmbeddingMatrix(emb.lang_id, emb.vocab, latent, emb.dup_skipped)
    if renormalize:
        out = normalize(out, ("unit",))
    return out


# -- serialization: a directory of binary matrices plus a manifest


def save_space(space, dirpath, config=None, seed=None):
    import os

    os.makedirs(dirpath, exist_ok=True)
    matrixio.write_matrix(os.path.join(dirpath, "metric.bin"), space.metric.matrix, np.float64)
    matrixio.write_matrix(os.path.join(dirpath, "metric_sqrt.bin"), space.sqrt_metric, np.float64)
    for lang, omap in space.maps.items():
        matrixio.write_matrix(os.path.join(dirpath, f"map_{lang}.bin"), omap.matrix, np.float64)
    manifest = {
        "languages": space.languages,
        "dim": space.dim,
        "seed": seed,
        "config": config,
        "loss_history": [float(v) for v in space.loss_history],
    }
    with open(os.path.join(dirpath, "space.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_space(dirpath):
    import os

    manifest_path = os.path.join(dirpath, "space.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read space manifest {manifest_path}: {exc}") from exc
    metric = SPDMetric(matrixio.read_matrix(os.path.join(dirpath, "metric.bin"), np.float64))
    sqrt_metric = matrixio.read_matrix(os.path.join(dirpath, "metric_sqrt.bin"), np.float64)
    maps = {
        lang: OrthogonalMap(matrixio.read_matrix(os.path.join(dirpath, f"map_{lang}.bin"),
                                                 np.float64))
        for lang in manifest["languages"]
    }
    return MultilingualSpace(
        maps=maps,
        metric=metric,
        sqrt_metric=sqrt_metric,
        loss_history=list(manifest.get("loss_history", [])),
    )


def config_digest(config_mapping):
    """Stable hash of a JSON-serializable config for run manifests."""
    blob = json.dumps(config_mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
