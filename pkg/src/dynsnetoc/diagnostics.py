"""Summary statistics, empirical verification of the sparsity and
power-law asymptotics, posterior predictive checks, label alignment,
affiliation tables and Sankey flow extraction.

Degree conventions: the multigraph degree D_i counts every multiedge
incident to node i once (self-loops included once) and defines activity
(D_i >= 1).  Degree-frequency tables N_j, used for the power-law
analysis, are computed on the binarized simple graph without self-loops
and tabulate j >= 1 only; an active node whose only connection is a
self-loop therefore contributes to the active count but to no N_j bin.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InsufficientDataError, ParameterError
from .generator import SimConfig, simulate, simulate_graph_slice
from .model import DynamicMultigraph, Hyperparams, LatentState

__all__ = [
    "SummaryStats", "summary_stats",
    "SparsityScanResult", "sparsity_scan",
    "TailFitResult", "degree_tail_exponent",
    "PpcEnvelope", "posterior_predictive",
    "align_labels", "match_communities",
    "AffiliationTable", "affiliations",
    "sankey_flows",
]


# ---------------------------------------------------------------------------
# Summary statistics

@dataclass
class SummaryStats:
    """One timestep's summaries: per-node multigraph degrees, the active
    node count, the simple-graph degree frequency table {j: N_j} and the
    multiedge count over unordered pairs i != j."""

    degrees: np.ndarray
    active_count: int
    degree_freq: dict
    edge_count: int


def summary_stats(graph: DynamicMultigraph, t) -> SummaryStats:
    """Compute the slice summaries for timestep t (1-based)."""
    ii, jj, cc = graph.edges(t)
    n = graph.num_nodes
    pair = ii != jj
    degrees = np.bincount(ii, weights=cc, minlength=n)
    degrees += np.bincount(jj[pair], weights=cc[pair], minlength=n)
    active = degrees >= 1
    simple_deg = (np.bincount(ii[pair], minlength=n)
                  + np.bincount(jj[pair], minlength=n))
    vals, counts = np.unique(simple_deg[active & (simple_deg > 0)],
                             return_counts=True)
    freq = {int(j): int(c) for j, c in zip(vals, counts)}
    return SummaryStats(
        degrees=degrees,
        active_count=int(active.sum()),
        degree_freq=freq,
        edge_count=int(cc[pair].sum()),
    )


# ---------------------------------------------------------------------------
# Sparsity scan (edges vs active nodes across graph sizes)

@dataclass
class SparsityScanResult:
    slope: float
    stderr: float
    points: np.ndarray      # rows of (alpha, seed, active_nodes, edges)


def sparsity_scan(hyper: Hyperparams, alphas, num_seeds, epsilon, *,
                  base_seed=0) -> SparsityScanResult:
    """Fit the growth exponent of edges against active nodes.

    Simulates one-timestep graphs over the alpha grid (num_seeds
    replicates each), pools (log N, log E) at t=1 and returns the
    ordinary-least-squares slope with its standard error.  The sparse
    regime predicts slope 2/(1+sigma); the dense regime slope 2.
    """
    alphas = list(alphas)
    if len(alphas) < 4:
        raise ParameterError("need at least 4 alpha values")
    if num_seeds < 5:
        raise ParameterError("need at least 5 seeds per alpha")
    rows = []
    for ai, alpha in enumerate(alphas):
        h = Hyperparams(alpha=float(alpha), sigma=hyper.sigma, tau=hyper.tau,
                        psi=hyper.psi, a=hyper.a, b=hyper.b)
        for s in range(num_seeds):
            seed = base_seed + 7919 * ai + s
            _, graph = simulate(SimConfig(hyper=h, T=1, epsilon=epsilon,
                                          seed=seed))
            st = summary_stats(graph, 1)
            if st.active_count > 0 and st.edge_count > 0:
                rows.append((alpha, seed, st.active_count, st.edge_count))
    if len(rows) < 3:
        raise InsufficientDataError("almost all simulated graphs were empty")
    pts = np.array(rows, dtype=float)
    x = np.log(pts[:, 2])
    y = np.log(pts[:, 3])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(len(x) - 2, 1)
    stderr = float(np.sqrt(resid @ resid / dof / ((x - x.mean()) @ (x - x.mean()))))
    return SparsityScanResult(slope=float(slope), stderr=stderr, points=pts)


# ---------------------------------------------------------------------------
# Power-law tail fit

@dataclass
class TailFitResult:
    exponent: float          # least-squares estimate of the frequency exponent
    stderr: float
    hill_exponent: float     # rank-based alternative (1 + Hill tail index)
    window: tuple            # (j_lo, j_hi) fitted degree range
    n_points: int
    is_power_law: bool       # curvature screen on the log-log residuals


def degree_tail_exponent(stats: SummaryStats) -> TailFitResult:
    """Estimate the degree-distribution tail exponent.

    Fits log(N_j / N) against log j by weighted least squares (weights
    N_j) over the upper decade of observed degrees, and reports a
    Hill-style estimate from the degree order statistics over the same
    window.  A quadratic-curvature screen flags tables whose log-log
    frequencies are visibly nonlinear, i.e. not power-law-like.
    """
    freq = stats.degree_freq
    if len(freq) < 10:
        raise InsufficientDataError(
            f"need at least 10 distinct degrees, have {len(freq)}")
    degrees = np.array(sorted(freq))
    counts = np.array([freq[int(j)] for j in degrees], dtype=float)
    j_hi = degrees.max()
    j_lo = max(1, int(np.ceil(j_hi / 10)))
    sel = degrees >= j_lo
    if sel.sum() < 10:
        # widen until the window carries enough support
        order = np.argsort(degrees)[::-1]
        j_lo = int(degrees[order[min(9, len(order) - 1)]])
        sel = degrees >= j_lo
    if sel.sum() < 3:
        raise InsufficientDataError("too few populated bins in the tail window")
    x = np.log(degrees[sel].astype(float))
    total = counts.sum()
    y = np.log(counts[sel] / total)
    w = counts[sel]

    wmean_x = np.average(x, weights=w)
    wmean_y = np.average(y, weights=w)
    dx = x - wmean_x
    sxx = float(np.sum(w * dx * dx))
    slope = float(np.sum(w * dx * (y - wmean_y)) / sxx)
    resid = y - (wmean_y + slope * dx)
    dof = max(sel.sum() - 2, 1)
    s2 = float(np.sum(w * resid**2) / dof)
    stderr = float(np.sqrt(s2 / sxx))
    exponent = -slope

    # curvature screen: significant quadratic term means "not a power law"
    is_power_law = True
    if sel.sum() >= 4:
        design = np.column_stack([np.ones_like(x), x, x * x])
        wd = design * w[:, None]
        coef, res2, *_ = np.linalg.lstsq(wd.T @ design, wd.T @ y, rcond=None)
        fit2 = design @ coef
        s2q = float(np.sum(w * (y - fit2) ** 2) / max(sel.sum() - 3, 1))
        cov = s2q * np.linalg.inv(wd.T @ design)
        se_c2 = np.sqrt(max(cov[2, 2], 1e-300))
        is_power_law = bool(abs(coef[2]) < 4.0 * se_c2)

    # Hill-style estimate from degrees at or above the window edge
    d_seq = np.repeat(degrees[sel], counts[sel].astype(int)).astype(float)
    ratios = np.log(d_seq / (j_lo - 0.5))
    pos = ratios[ratios > 0]
    hill_index = 1.0 / float(pos.mean()) if pos.size else np.nan
    return TailFitResult(
        exponent=exponent, stderr=stderr, hill_exponent=1.0 + hill_index,
        window=(int(j_lo), int(j_hi)), n_points=int(sel.sum()),
        is_power_law=is_power_law,
    )


# ---------------------------------------------------------------------------
# Posterior predictive envelope of the degree distribution

@dataclass
class PpcEnvelope:
    """Per timestep: degree axis (j >= 1), pointwise lower/upper envelope
    quantiles of N_j across replicated graphs, and the observed N_j."""

    degrees: list
    lower: list
    upper: list
    empirical: list

    def fraction_covered(self, t):
        """Share of populated empirical bins inside the envelope at t."""
        emp = self.empirical[t - 1]
        lo = self.lower[t - 1]
        hi = self.upper[t - 1]
        mask = emp >= 1
        if not mask.any():
            return 1.0
        return float(((emp[mask] >= lo[mask]) & (emp[mask] <= hi[mask])).mean())


def posterior_predictive(chain, graph: DynamicMultigraph, n_rep, *,
                         level=0.95, seed=0) -> PpcEnvelope:
    """Pointwise posterior-predictive envelope of the degree frequencies.

    Draws ``n_rep`` evenly spaced posterior samples, regenerates each
    timestep's graph slice from the sampled weights with the two-stage
    generator, and tabulates simple-graph degree frequencies.  Each
    replicate uses its own deterministic RNG sub-stream.
    """
    if len(chain) < n_rep:
        raise InsufficientDataError(
            f"chain has {len(chain)} draws, fewer than n_rep={n_rep}")
    layout = chain.layout
    big_t, p, ell = layout.T, layout.p, layout.L
    if graph.num_nodes != ell:
        raise ParameterError("graph node count does not match the chain layout")
    idx = np.linspace(0, len(chain) - 1, n_rep).astype(int)
    w0_all = chain.w0_draws()
    beta_all = chain.beta_draws()
    streams = np.random.SeedSequence(seed).spawn(n_rep)
    tables = [[] for _ in range(big_t)]
    max_deg = [0] * big_t
    emp_freq = []
    for t in range(1, big_t + 1):
        f = summary_stats(graph, t).degree_freq
        emp_freq.append(f)
        max_deg[t - 1] = max(f, default=0)
    dummy_gamma = np.ones((max(big_t - 1, 0), p, ell))
    for r, draw in enumerate(idx):
        state = LatentState(w0=w0_all[draw], beta=beta_all[draw],
                            gamma=dummy_gamma)
        rng = np.random.default_rng(streams[r])
        for t in range(1, big_t + 1):
            sl = simulate_graph_slice(state, t, rng)
            rep_graph = DynamicMultigraph(1, ell, [sl])
            f = summary_stats(rep_graph, 1).degree_freq
            tables[t - 1].append(f)
            max_deg[t - 1] = max(max_deg[t - 1], max(f, default=0))

    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    degrees, lower, upper, empirical = [], [], [], []
    for t in range(big_t):
        jmax = max(max_deg[t], 1)
        mat = np.zeros((n_rep, jmax + 1))
        for r, f in enumerate(tables[t]):
            for j, c in f.items():
                mat[r, j] = c
        js = np.arange(1, jmax + 1)
        degrees.append(js)
        lower.append(np.quantile(mat[:, 1:], lo_q, axis=0))
        upper.append(np.quantile(mat[:, 1:], hi_q, axis=0))
        emp = np.zeros(jmax)
        for j, c in emp_freq[t].items():
            if j <= jmax:
                emp[j - 1] = c
        empirical.append(emp)
    return PpcEnvelope(degrees=degrees, lower=lower, upper=upper,
                       empirical=empirical)


# ---------------------------------------------------------------------------
# Label alignment

def _standardize(v, axis=-1):
    m = v.mean(axis=axis, keepdims=True)
    s = v.std(axis=axis, keepdims=True)
    return (v - m) / np.where(s > 0, s, 1.0)


def match_communities(source_beta, target_beta):
    """Permutation ``perm`` maximizing the total correlation between
    source community perm[k] and target community k (assignment problem).

    Both inputs have shape [T, p, L]; the per-community feature is the
    flattened score trajectory over (t, i).
    """
    p = source_beta.shape[1]
    if p == 1:
        return np.array([0])
    src = _standardize(np.transpose(source_beta, (1, 0, 2)).reshape(p, -1))
    tgt = _standardize(np.transpose(target_beta, (1, 0, 2)).reshape(p, -1))
    score = src @ tgt.T / src.shape[1]          # score[ks, kt]
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(p, dtype=int)
    perm[cols] = rows
    return perm


def align_labels(chain):
    """Undo label switching: permute each draw's communities to best match
    the highest-log-posterior draw.

    Returns a new chain; beta, gamma and the community-indexed
    hyperparameters (a, b) are permuted consistently.  For p <= 4 the
    exact best permutation is found by enumeration, otherwise by solving
    the assignment problem per draw.  Idempotent.
    """
    p = chain.layout.p
    if p == 1 or len(chain) == 0:
        return chain
    n = len(chain)
    big_t, ell = chain.layout.T, chain.layout.L
    beta = chain.beta_draws()
    ref = int(np.argmax(chain.log_posterior_trace))
    ref_feat = _standardize(np.transpose(beta[ref], (1, 0, 2)).reshape(p, -1))

    feats = _standardize(np.transpose(beta, (0, 2, 1, 3)).reshape(n, p, -1))
    scores = np.einsum("nkf,mf->nkm", feats, ref_feat) / feats.shape[2]

    if p <= 4:
        perms = np.array(list(itertools.permutations(range(p))))
        # total[n, q] = sum_k scores[n, perms[q, k], k]
        total = scores[:, perms, np.arange(p)[None, :]].sum(axis=2)
        best = perms[np.argmax(total, axis=1)]
    else:
        best = np.empty((n, p), dtype=int)
        for i in range(n):
            rows, cols = linear_sum_assignment(-scores[i])
            perm = np.empty(p, dtype=int)
            perm[cols] = rows
            best[i] = perm

    from dataclasses import replace as dc_replace
    latent = chain.latent_draws.copy()
    hyper = chain.hyper_draws.copy()
    start_b = chain.layout.L
    start_g = start_b + big_t * p * ell
    beta_view = latent[:, start_b:start_g].reshape(n, big_t, p, ell)
    gamma_view = latent[:, start_g:].reshape(n, max(big_t - 1, 0), p, ell)
    beta_view[:] = np.take_along_axis(beta_view, best[:, None, :, None], axis=2)
    if gamma_view.shape[1]:
        gamma_view[:] = np.take_along_axis(gamma_view, best[:, None, :, None],
                                           axis=2)
    hyper[:, 4:4 + p] = np.take_along_axis(hyper[:, 4:4 + p], best, axis=1)
    hyper[:, 4 + p:4 + 2 * p] = np.take_along_axis(hyper[:, 4 + p:4 + 2 * p],
                                                   best, axis=1)
    return dc_replace(chain, latent_draws=latent, hyper_draws=hyper)


# ---------------------------------------------------------------------------
# Affiliations and Sankey flows

@dataclass
class AffiliationTable:
    """Per (timestep, node): normalized posterior-mean scores (rows sum to
    1), multigraph degree, argmax-tie flags, and optional node labels."""

    proportions: np.ndarray   # [T, L, p]
    degrees: np.ndarray       # [T, L]
    ties: np.ndarray          # [T, L] bool: argmax affiliation not unique
    labels: list | None = None


def affiliations(chain, graph: DynamicMultigraph) -> AffiliationTable:
    """Posterior-mean affiliation proportions per node and timestep.

    The chain is expected to be label-aligned already (see
    :func:`align_labels`).
    """
    layout = chain.layout
    if graph.num_nodes != layout.L or graph.num_timesteps != layout.T:
        raise ParameterError("graph does not match the chain layout")
    mean_beta = chain.beta_draws().mean(axis=0)          # [T, p, L]
    props = np.transpose(mean_beta, (0, 2, 1))           # [T, L, p]
    props = props / props.sum(axis=2, keepdims=True)
    big_t, ell, p = props.shape
    degrees = np.zeros((big_t, ell))
    for t in range(1, big_t + 1):
        degrees[t - 1] = summary_stats(graph, t).degrees
    top = props.max(axis=2, keepdims=True)
    ties = (props == top).sum(axis=2) > 1
    return AffiliationTable(proportions=props, degrees=degrees, ties=ties,
                            labels=graph.node_labels)


def sankey_flows(table: AffiliationTable, top_k):
    """Flow records of hard community assignments between consecutive
    timesteps for the top-k highest-degree nodes of each timestep.

    Each record is {"t", "from", "to", "count", "labels"}: "from"/"to"
    are 0-based community indices, with -1 marking a node entering (not in
    the previous top-k) or leaving (not in the next).  Records carry the
    source timestep t (1-based) of the transition t -> t+1.  Ties in the
    argmax affiliation break toward the lower community index and are
    flagged in the table's ``ties`` field.
    """
    if top_k < 1:
        raise ParameterError("top_k must be >= 1")
    big_t, ell, _ = table.proportions.shape

    def label(i):
        return table.labels[i] if table.labels is not None else str(i)

    top_sets = []
    assign = np.argmax(table.proportions, axis=2)        # [T, L]
    for t in range(big_t):
        order = np.lexsort((np.arange(ell), -table.degrees[t]))
        top_sets.append(list(order[:min(top_k, ell)]))
    records = []
    for t in range(big_t - 1):
        cur, nxt = set(top_sets[t]), set(top_sets[t + 1])
        groups = {}
        for i in sorted(cur | nxt):
            src = int(assign[t, i]) if i in cur else -1
            dst = int(assign[t + 1, i]) if i in nxt else -1
            groups.setdefault((src, dst), []).append(i)
        for (src, dst) in sorted(groups):
            nodes = groups[(src, dst)]
            records.append({
                "t": t + 1,
                "from": src,
                "to": dst,
                "count": len(nodes),
                "labels": [label(i) for i in nodes],
            })
    return records
