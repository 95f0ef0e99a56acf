"""Posterior inference: parameter packing, initialization, NUTS driver,
chains, and recovery/coverage evaluation.

All positive parameters are sampled on the log scale and sigma through a
logit, so the sampler sees an unconstrained vector laid out as

    [log w0 (L) | log beta (T*p*L) | log gamma ((T-1)*p*L) |
     log alpha | logit sigma | (log tau) | log psi | log a (p) | log b (p)]

with the tau coordinate omitted whenever it is held fixed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, NumericError, ParameterError, ShapeError
from .model import (
    _HALFNORMAL_CONST as _HN_CONST,
    DynamicMultigraph,
    Hyperparams,
    LatentState,
    PriorSpec,
    log_posterior_and_grad,
)
from .nuts import nuts_sample

__all__ = ["InferenceConfig", "ParamLayout", "Chain", "unconstrain", "constrain",
           "initialize_state", "run_nuts", "run_chains", "coverage_eval"]


@dataclass(frozen=True)
class InferenceConfig:
    """Sampler settings.

    ``L`` is the truncation level (node-universe size used by the etBFRY
    prior); ``None`` means "use the graph's node count".  It must be at
    least the graph's node count, which itself bounds the number of
    observed active nodes; a larger L pads the universe with unobserved
    nodes.  ``tau_fixed_value`` switches tau from sampled to constant.
    """

    p: int
    L: int | None = None
    num_warmup: int = 1000
    num_samples: int = 1000
    thin: int = 1
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    tau_fixed_value: float | None = None
    prior_scales: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 1:
            raise ParameterError("p must be >= 1")
        for name in ("num_warmup", "num_samples", "thin"):
            if getattr(self, name) < (0 if name == "num_warmup" else 1):
                raise ParameterError(f"{name} out of range")
        if not 0 < self.target_accept < 1:
            raise ParameterError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ParameterError("max_tree_depth must be >= 1")
        if self.tau_fixed_value is not None and not self.tau_fixed_value > 0:
            raise ParameterError("tau_fixed_value must be positive")

    def priors(self) -> PriorSpec:
        return PriorSpec.from_dict(self.prior_scales)


@dataclass(frozen=True)
class ParamLayout:
    """Shape bookkeeping for the flat unconstrained vector."""

    L: int
    T: int
    p: int
    tau_fixed: bool
    tau_value: float | None = None

    @property
    def n_latent(self):
        return self.L + self.T * self.p * self.L + (self.T - 1) * self.p * self.L

    @property
    def n_hyper(self):
        return 3 + (0 if self.tau_fixed else 1) + 2 * self.p

    @property
    def dim(self):
        return self.n_latent + self.n_hyper

    @property
    def sigma_index(self):
        return self.n_latent + 1

    def hyper_names(self):
        """Names of all 4 + 2p hyperparameters, fixed tau included."""
        return (["alpha", "sigma", "tau", "psi"]
                + [f"a_{k + 1}" for k in range(self.p)]
                + [f"b_{k + 1}" for k in range(self.p)])


def unconstrain(state: LatentState, hyper: Hyperparams, layout: ParamLayout):
    """Flatten to the unconstrained vector (log / logit transforms)."""
    if state.num_nodes != layout.L or state.num_timesteps != layout.T \
            or state.num_communities != layout.p:
        raise ShapeError("state does not match the layout")
    if not state.all_positive():
        raise ParameterError("unconstrain requires strictly positive latents")
    if not 0 < hyper.sigma < 1:
        raise ParameterError("unconstrain requires sigma in (0, 1)")
    parts = [np.log(state.w0), np.log(state.beta).ravel(),
             np.log(state.gamma).ravel(),
             [np.log(hyper.alpha)],
             [np.log(hyper.sigma) - np.log1p(-hyper.sigma)]]
    if not layout.tau_fixed:
        parts.append([np.log(hyper.tau)])
    parts += [[np.log(hyper.psi)], np.log(hyper.a), np.log(hyper.b)]
    return np.concatenate([np.atleast_1d(np.asarray(q, dtype=float)) for q in parts])


def constrain(x, layout: ParamLayout):
    """Inverse of :func:`unconstrain`; round-trips to ~1e-12."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.dim,):
        raise ShapeError(f"expected vector of length {layout.dim}, got {x.shape}")
    L, T, p = layout.L, layout.T, layout.p
    i = 0
    w0 = np.exp(x[i:i + L]); i += L
    beta = np.exp(x[i:i + T * p * L]).reshape(T, p, L); i += T * p * L
    n_g = (T - 1) * p * L
    gamma = np.exp(x[i:i + n_g]).reshape(max(T - 1, 0), p, L); i += n_g
    alpha = float(np.exp(x[i])); i += 1
    sigma = float(1.0 / (1.0 + np.exp(-x[i]))); i += 1
    if layout.tau_fixed:
        tau = float(layout.tau_value)
    else:
        tau = float(np.exp(x[i])); i += 1
    psi = float(np.exp(x[i])); i += 1
    a = np.exp(x[i:i + p]); i += p
    b = np.exp(x[i:i + p]); i += p
    state = LatentState(w0=w0, beta=beta, gamma=gamma)
    hyper = Hyperparams(alpha=alpha, sigma=sigma, tau=tau, psi=psi, a=a, b=b,
                        tau_fixed=layout.tau_fixed)
    return state, hyper


def _log_jacobian(x, layout: ParamLayout):
    """Log |d(constrained)/d(unconstrained)|: sum of log coords plus the
    logistic-transform term for sigma."""
    xs = float(x[layout.sigma_index])
    sigma = 1.0 / (1.0 + np.exp(-xs))
    return float(x.sum()) - xs + np.log(sigma * (1.0 - sigma))


def initialize_state(graph: DynamicMultigraph, cfg: InferenceConfig, rng):
    """Deterministic starting point: sociabilities scaled from observed
    mean degrees, scores and transitions at their prior means, scalar
    hyperparameters at their prior medians (sigma at 0.2)."""
    priors = cfg.priors()
    # HalfNormal(s) median = s * sqrt(2) * erfinv(1/2)
    med = 0.6744897501960817
    alpha0 = priors.alpha_scale * med
    psi0 = priors.psi_scale * med
    a0 = np.full(cfg.p, priors.a_scale * med)
    b0 = np.full(cfg.p, priors.b_scale * med)
    sigma0 = 0.2
    if cfg.tau_fixed_value is not None:
        tau0 = float(cfg.tau_fixed_value)
    else:
        tau0 = priors.tau_scale * med
    hyper = Hyperparams(alpha=alpha0, sigma=sigma0, tau=tau0, psi=psi0,
                        a=a0, b=b0, tau_fixed=cfg.tau_fixed_value is not None)

    L = graph.num_nodes
    T = graph.num_timesteps
    degree_sum = np.zeros(L)
    for t in range(1, T + 1):
        ii, jj, cc = graph.edges(t)
        degree_sum += np.bincount(ii, weights=cc, minlength=L)
        mask = ii != jj
        degree_sum += np.bincount(jj[mask], weights=cc[mask], minlength=L)
    mean_degree = degree_sum / T
    mean_beta = float(np.mean(a0 / b0))
    w0 = np.sqrt(mean_degree + 0.1) / np.sqrt(cfg.p * T * mean_beta)
    beta = np.broadcast_to((a0 / b0)[None, :, None], (T, cfg.p, L)).copy()
    gamma = psi0 / beta[:-1] if T > 1 else np.empty((0, cfg.p, L))
    state = LatentState(w0=w0, beta=beta, gamma=gamma.copy())
    return state, hyper


@dataclass
class Chain:
    """Posterior draws plus sampler diagnostics.

    ``latent_draws`` holds constrained values laid out as
    [w0 | beta | gamma] per row; ``hyper_draws`` holds all 4 + 2p
    hyperparameters (fixed tau included, bit-identical across draws).
    """

    layout: ParamLayout
    latent_draws: np.ndarray
    hyper_draws: np.ndarray
    log_posterior_trace: np.ndarray
    accept_stat: float
    divergences: int
    step_size: float
    mass_diag: np.ndarray
    warmup_logp: np.ndarray
    seed: int

    def __len__(self):
        return self.latent_draws.shape[0]

    @property
    def hyper_names(self):
        return self.layout.hyper_names()

    def w0_draws(self):
        return self.latent_draws[:, :self.layout.L]

    def beta_draws(self):
        L, T, p = self.layout.L, self.layout.T, self.layout.p
        n = self.latent_draws.shape[0]
        return self.latent_draws[:, L:L + T * p * L].reshape(n, T, p, L)

    def gamma_draws(self):
        L, T, p = self.layout.L, self.layout.T, self.layout.p
        n = self.latent_draws.shape[0]
        return self.latent_draws[:, L + T * p * L:].reshape(n, max(T - 1, 0), p, L)

    def hyper(self, name):
        return self.hyper_draws[:, self.hyper_names.index(name)]


def _pad_graph(graph, L):
    if L == graph.num_nodes:
        return graph
    return DynamicMultigraph(graph.num_timesteps, L,
                             [graph.edges(t) for t in range(1, graph.num_timesteps + 1)],
                             None)


def _make_reference_target(graph, layout, priors):
    """Straightforward target built on the public posterior operations.
    Used as the correctness oracle for the optimized closure below."""
    big = 300.0

    def logp_grad(x):
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > big:
            return -np.inf, np.zeros_like(x)
        state, hyper = constrain(x, layout)
        value, g = log_posterior_and_grad(graph, state, hyper, priors)
        if g is None or not np.isfinite(value):
            return -np.inf, np.zeros_like(x)
        parts = [g.w0, g.beta.ravel(), g.gamma.ravel(), [g.alpha], [g.sigma]]
        if not layout.tau_fixed:
            parts.append([g.tau])
        parts += [[g.psi], g.a, g.b]
        grad = np.concatenate([np.atleast_1d(np.asarray(q, dtype=float))
                               for q in parts])
        return value + _log_jacobian(x, layout), grad

    return logp_grad


def _make_target(graph, layout, priors):
    """Optimized (value, gradient) closure for the sampler.

    Computes the same quantity as :func:`_make_reference_target` (pinned
    by tests to ~1e-8 relative) while reusing the unconstrained vector as
    the log of every positive coordinate, precomputing all count
    constants, and writing gradients into one flat buffer.
    """
    import math

    from scipy.special import digamma as _digamma
    from scipy.special import gammaln as _gammaln
    from scipy.special import ndtr as _ndtr

    from .distributions import _log1mexp

    L, T, p = layout.L, layout.T, layout.p
    tpl = T * p * L
    n_g = (T - 1) * p * L
    n_lat = layout.n_latent
    dim = layout.dim
    i_alpha = n_lat
    i_sigma = n_lat + 1
    i_tau = n_lat + 2 if not layout.tau_fixed else None
    off = 2 if layout.tau_fixed else 3
    i_psi = n_lat + off
    sl_a = slice(n_lat + off + 1, n_lat + off + 1 + p)
    sl_b = slice(n_lat + off + 1 + p, n_lat + off + 1 + 2 * p)
    ln2 = math.log(2.0)

    slices = []
    const_total = 0.0
    for t in range(1, T + 1):
        ii, jj, cc = graph.edges(t)
        pair = ii != jj
        pii, pjj = ii[pair], jj[pair]
        pcc = cc[pair].astype(float)
        si = ii[~pair]
        sc = cc[~pair].astype(float)
        const_total -= float(_gammaln(pcc + 1.0).sum() + _gammaln(sc + 1.0).sum())
        const_total += ln2 * float(pcc.sum())
        slices.append((pii, pjj, pcc, si, sc))

    # half-normal prior constants (retained so values are comparable)
    n_hn = 2 + 2 * p + (0 if layout.tau_fixed else 1)
    const_total += n_hn * _HN_CONST
    const_total -= (math.log(priors.alpha_scale) + math.log(priors.psi_scale)
                    + p * math.log(priors.a_scale) + p * math.log(priors.b_scale)
                    + (0.0 if layout.tau_fixed else math.log(priors.tau_scale)))
    s_sig = priors.sigma_scale
    const_total -= math.log(np.sqrt(2.0 * np.pi) * s_sig * (_ndtr(1.0 / s_sig) - 0.5))
    inv2_alpha = 1.0 / priors.alpha_scale**2
    inv2_tau = 1.0 / priors.tau_scale**2
    inv2_psi = 1.0 / priors.psi_scale**2
    inv2_a = 1.0 / priors.a_scale**2
    inv2_b = 1.0 / priors.b_scale**2
    inv2_sig = 1.0 / priors.sigma_scale**2
    log_l = math.log(L)

    def logp_grad(x):
        if not np.isfinite(x).all():
            return -np.inf, np.zeros(dim)
        if np.abs(x).max() > 300.0:
            return -np.inf, np.zeros(dim)
        theta = np.exp(x)
        w0 = theta[:L]
        beta = theta[L:L + tpl].reshape(T, p, L)
        gamma = theta[L + tpl:n_lat].reshape(T - 1, p, L)
        lbeta = x[L:L + tpl].reshape(T, p, L)
        alpha = theta[i_alpha]
        xs = x[i_sigma]
        sigma = 1.0 / (1.0 + math.exp(-xs))
        tau = layout.tau_value if layout.tau_fixed else theta[i_tau]
        psi = theta[i_psi]
        a = theta[sl_a]
        b = theta[sl_b]
        if w0.min() <= 0.0 or beta.min() <= 0.0 or (n_g and gamma.min() <= 0.0) \
                or sigma <= 0.0 or sigma >= 1.0:
            return -np.inf, np.zeros(dim)

        grad = np.zeros(dim)
        g_w0 = grad[:L]
        g_beta = grad[L:L + tpl].reshape(T, p, L)
        g_gamma = grad[L + tpl:n_lat].reshape(T - 1, p, L)
        logp = const_total

        # Poisson likelihood, every slice
        for t in range(T):
            bt = beta[t]
            w = w0 * bt
            wk = w.sum(axis=1)
            logp -= float(wk @ wk)
            gw = np.empty((p, L))
            gw[:] = (-2.0 * wk)[:, None]
            pii, pjj, pcc, si, sc = slices[t]
            if pii.size:
                r = w[0, pii] * w[0, pjj]
                for k in range(1, p):
                    r += w[k, pii] * w[k, pjj]
                if r.min() <= 0.0:
                    return -np.inf, np.zeros(dim)
                logp += float(pcc @ np.log(r))
                coef = pcc / r
                for k in range(p):
                    gw[k] += np.bincount(pii, weights=coef * w[k, pjj], minlength=L)
                    gw[k] += np.bincount(pjj, weights=coef * w[k, pii], minlength=L)
            if si.size:
                ws = w[:, si]
                rs = (ws * ws).sum(axis=0)
                if rs.min() <= 0.0:
                    return -np.inf, np.zeros(dim)
                logp += float(sc @ np.log(rs))
                cs = sc / rs
                for k in range(p):
                    gw[k] += np.bincount(si, weights=2.0 * cs * w[k, si], minlength=L)
            g_w0 += (bt * gw).sum(axis=0)
            g_beta[t] += w0 * gw

        # etBFRY prior on w0 (log w0 is x[:L])
        lw0 = x[:L]
        log_c = (math.log(sigma) + log_l - math.log(alpha)) / sigma
        c = math.exp(log_c)
        xx = sigma * math.log1p(c / tau)
        if xx <= 0.0 or not np.isfinite(xx):
            return -np.inf, np.zeros(dim)
        log_d = sigma * math.log(tau) + xx + float(_log1mexp(xx))
        cw = c * w0
        l1m = _log1mexp(cw)
        if not np.isfinite(l1m).all():
            return -np.inf, np.zeros(dim)
        sum_lw0 = float(lw0.sum())
        sum_w0 = float(w0.sum())
        logp += (L * math.log(sigma) - (1.0 + sigma) * sum_lw0 - tau * sum_w0
                 + float(l1m.sum()) - L * float(_gammaln(1.0 - sigma)) - L * log_d)
        e1 = np.exp(-cw) / (-np.expm1(-cw))
        g_w0 += -(1.0 + sigma) / w0 - tau + c * e1
        log_u = math.log(tau + c)
        log_tau = math.log(tau)
        r_c = sigma * math.exp((sigma - 1.0) * log_u - log_d)
        r_tau = r_c - sigma * math.exp((sigma - 1.0) * log_tau - log_d)
        r_sig_part = (math.exp(sigma * log_u - log_d) * log_u
                      - math.exp(sigma * log_tau - log_d) * log_tau)
        dc_dalpha = -c / (sigma * alpha)
        dc_dsigma = c * (1.0 - sigma * log_c) / sigma**2
        sum_we1 = float((w0 * e1).sum())
        d_alpha = (sum_we1 - L * r_c) * dc_dalpha
        d_sigma = (L / sigma - sum_lw0 + L * float(_digamma(1.0 - sigma))
                   + (sum_we1 - L * r_c) * dc_dsigma - L * r_sig_part)
        d_tau = -sum_w0 - L * r_tau

        # transition factors gamma[t] | beta[t]
        d_psi = 0.0
        if T > 1:
            lgam = x[L + tpl:n_lat].reshape(T - 1, p, L)
            bhead = beta[:-1]
            logp += float(psi * lbeta[:-1].sum() + (psi - 1.0) * lgam.sum()
                          - (bhead * gamma).sum() - n_g * _gammaln(psi))
            g_beta[:-1] += psi / bhead - gamma
            g_gamma += (psi - 1.0) / gamma - bhead
            d_psi += float(lbeta[:-1].sum() + lgam.sum() - n_g * _digamma(psi))

        # score-chain factors: beta[1] ~ Gamma(a, b), then
        # beta[t+1] | gamma[t] ~ Gamma(a + psi, gamma[t] + b)
        d_a = np.zeros(p)
        d_b = np.zeros(p)
        for t in range(T):
            if t == 0:
                sum_lb = lbeta[0].sum(axis=1)
                log_b = np.log(b)
                logp += float((a * log_b * L).sum() + ((a - 1.0) * sum_lb).sum()
                              - (b[:, None] * beta[0]).sum()
                              - L * _gammaln(a).sum())
                g_beta[0] += (a - 1.0)[:, None] / beta[0] - b[:, None]
                d_a += L * log_b + sum_lb - L * _digamma(a)
                d_b += L * a / b - beta[0].sum(axis=1)
                continue
            shape = a + psi
            rate = b[:, None] + gamma[t - 1]
            log_rate = np.log(rate)
            sum_lr = log_rate.sum(axis=1)
            sum_lb = lbeta[t].sum(axis=1)
            logp += float((shape * sum_lr).sum() + ((shape - 1.0) * sum_lb).sum()
                          - (rate * beta[t]).sum() - L * _gammaln(shape).sum())
            g_beta[t] += (shape - 1.0)[:, None] / beta[t] - rate
            drate = shape[:, None] / rate - beta[t]
            g_gamma[t - 1] += drate
            dshape = sum_lr + sum_lb - L * _digamma(shape)
            d_a += dshape
            d_psi += float(dshape.sum())
            d_b += drate.sum(axis=1)

        # hyperpriors
        logp -= 0.5 * (alpha * alpha * inv2_alpha + psi * psi * inv2_psi
                       + float(a @ a) * inv2_a + float(b @ b) * inv2_b
                       + sigma * sigma * inv2_sig)
        d_alpha -= alpha * inv2_alpha
        d_psi -= psi * inv2_psi
        d_a -= a * inv2_a
        d_b -= b * inv2_b
        d_sigma -= sigma * inv2_sig
        if not layout.tau_fixed:
            logp -= 0.5 * tau * tau * inv2_tau
            d_tau -= tau * inv2_tau

        if not np.isfinite(logp):
            return -np.inf, np.zeros(dim)

        # chain rule to unconstrained coordinates plus transform Jacobian
        grad[:n_lat] *= theta[:n_lat]
        grad[:n_lat] += 1.0
        grad[i_alpha] = d_alpha * alpha + 1.0
        grad[i_sigma] = d_sigma * sigma * (1.0 - sigma) + (1.0 - 2.0 * sigma)
        if not layout.tau_fixed:
            grad[i_tau] = d_tau * tau + 1.0
        grad[i_psi] = d_psi * psi + 1.0
        grad[sl_a] = d_a * a + 1.0
        grad[sl_b] = d_b * b + 1.0
        jac = float(x.sum()) - xs + math.log(sigma * (1.0 - sigma))
        return logp + jac, grad

    return logp_grad


def _refine_start(target, x0, maxiter=500):
    """Short L-BFGS ascent toward the posterior mode so NUTS warmup starts
    near the typical set instead of spending its budget on the transient."""
    from scipy import optimize

    def neg(x):
        v, g = target(x)
        if not np.isfinite(v):
            return 1e12, np.zeros_like(x)
        return -v, -g

    res = optimize.minimize(neg, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": maxiter, "maxcor": 25})
    x = res.x
    if np.isfinite(target(x)[0]):
        return x
    return x0


def _progress_printer(chain_id, every):
    def cb(it, total, logp, eps, div):
        if it % every == 0 or it == total or div:
            print(f"[chain {chain_id}] iter {it}/{total} logp={logp:.3f} "
                  f"eps={eps:.3g} div={int(div)}", file=sys.stderr)
    return cb


def run_nuts(graph: DynamicMultigraph, cfg: InferenceConfig, *, chain_id=0,
             progress=True) -> Chain:
    """Sample the approximate posterior of (w0, beta, gamma, hyperparams)
    given all graph slices with NUTS."""
    if graph.num_nodes < 1:
        raise ParameterError("graph must have at least one node")
    L = cfg.L if cfg.L is not None else graph.num_nodes
    if L < graph.num_nodes:
        raise ParameterError(
            f"truncation level L={L} is below the graph's node universe "
            f"({graph.num_nodes}); L must cover every observed node")
    work_graph = _pad_graph(graph, L)
    layout = ParamLayout(L=L, T=graph.num_timesteps, p=cfg.p,
                         tau_fixed=cfg.tau_fixed_value is not None,
                         tau_value=cfg.tau_fixed_value)
    priors = cfg.priors()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    state0, hyper0 = initialize_state(work_graph, cfg, rng)
    x0 = unconstrain(state0, hyper0, layout)
    target = _make_target(work_graph, layout, priors)
    if not np.isfinite(target(x0)[0]):
        raise NumericError("initial state has non-finite log posterior")
    x0 = _refine_start(target, x0)

    total = cfg.num_warmup + cfg.num_samples * cfg.thin
    cb = _progress_printer(chain_id, max(1, total // 40)) if progress else None
    res = nuts_sample(target, x0,
                      num_warmup=cfg.num_warmup, num_samples=cfg.num_samples,
                      rng=rng, thin=cfg.thin, target_accept=cfg.target_accept,
                      max_tree_depth=cfg.max_tree_depth, progress=cb)
    if cfg.num_samples * cfg.thin > 0:
        div_rate = res.divergences / (cfg.num_samples * cfg.thin)
        if div_rate > 0.2:
            print(f"[chain {chain_id}] warning: divergence rate "
                  f"{div_rate:.1%} exceeds 20%", file=sys.stderr)

    n = res.samples.shape[0]
    n_latent = layout.n_latent
    latent = np.exp(res.samples[:, :n_latent])
    hyper_draws = np.empty((n, 4 + 2 * cfg.p))
    i = n_latent
    hyper_draws[:, 0] = np.exp(res.samples[:, i]); i += 1
    hyper_draws[:, 1] = 1.0 / (1.0 + np.exp(-res.samples[:, i])); i += 1
    if layout.tau_fixed:
        hyper_draws[:, 2] = layout.tau_value
    else:
        hyper_draws[:, 2] = np.exp(res.samples[:, i]); i += 1
    hyper_draws[:, 3] = np.exp(res.samples[:, i]); i += 1
    hyper_draws[:, 4:4 + 2 * cfg.p] = np.exp(res.samples[:, i:i + 2 * cfg.p])

    # stored trace is the constrained-space log posterior (target minus
    # the transform Jacobian)
    jac = np.array([_log_jacobian(row, layout) for row in res.samples])
    trace = res.target_logp - jac
    return Chain(layout=layout, latent_draws=latent, hyper_draws=hyper_draws,
                 log_posterior_trace=trace, accept_stat=res.accept_stat,
                 divergences=res.divergences, step_size=res.step_size,
                 mass_diag=res.mass_diag, warmup_logp=res.warmup_logp,
                 seed=cfg.seed)


def _chain_worker(args):
    graph, cfg, chain_id, progress = args
    return run_nuts(graph, cfg, chain_id=chain_id, progress=progress)


def run_chains(graph, cfg: InferenceConfig, n_chains, *, parallel=True,
               progress=True):
    """Run several chains with distinct deterministic sub-seeds.

    Chains run in separate processes when ``parallel`` is set (they share
    no mutable state), falling back to sequential execution for a single
    chain.
    """
    seeds = [int(s.generate_state(1)[0]) for s in
             np.random.SeedSequence(cfg.seed).spawn(n_chains)]
    from dataclasses import replace as dc_replace
    cfgs = [dc_replace(cfg, seed=s) for s in seeds]
    jobs = [(graph, c, i, progress) for i, c in enumerate(cfgs)]
    if parallel and n_chains > 1:
        import concurrent.futures as cf
        import os
        workers = min(n_chains, os.cpu_count() or 1)
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_chain_worker, jobs))
    return [_chain_worker(j) for j in jobs]


@dataclass
class CoverageResult:
    w0_coverage: float
    beta_coverage: float
    w0_hits: np.ndarray
    beta_hits: np.ndarray


def coverage_eval(chain: Chain, truth: LatentState, level=0.95) -> CoverageResult:
    """Fraction of true coordinates inside their central credible interval.

    Community labels are aligned first: the chain is internally aligned to
    its own best draw, then the posterior-mean scores are matched to the
    truth's communities, so coverage is invariant to label switching.
    """
    if len(chain) < 100:
        raise InsufficientDataError(
            f"need at least 100 draws for coverage, have {len(chain)}")
    if truth.num_nodes != chain.layout.L or truth.num_timesteps != chain.layout.T \
            or truth.num_communities != chain.layout.p:
        raise ShapeError("truth dimensions do not match the chain layout")
    from .diagnostics import align_labels, match_communities
    aligned = align_labels(chain)
    perm = match_communities(aligned.beta_draws().mean(axis=0), truth.beta)
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0

    w0_draws = aligned.w0_draws()
    lo = np.quantile(w0_draws, lo_q, axis=0)
    hi = np.quantile(w0_draws, hi_q, axis=0)
    w0_hits = (truth.w0 >= lo) & (truth.w0 <= hi)

    beta_draws = aligned.beta_draws()[:, :, perm, :]
    lo = np.quantile(beta_draws, lo_q, axis=0)
    hi = np.quantile(beta_draws, hi_q, axis=0)
    beta_hits = (truth.beta >= lo) & (truth.beta <= hi)

    return CoverageResult(
        w0_coverage=float(w0_hits.mean()),
        beta_coverage=float(beta_hits.mean()),
        w0_hits=w0_hits,
        beta_hits=beta_hits,
    )
