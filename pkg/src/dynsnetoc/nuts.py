"""No-U-turn sampler with dual-averaging step size and diagonal mass
adaptation.

Target-agnostic: the caller supplies ``logp_grad(x) -> (float, ndarray)``
for an unconstrained position x.  A value of -inf marks zero posterior
mass; such leapfrog states are treated as divergent and never selected.

The transition is the multinomial variant: every visited leapfrog state
carries weight exp(-(H - H0)) and proposals are drawn from subtrees in
proportion to their total weight, with the biased progressive rule at the
top level.  Doubling stops at the first sub-U-turn (checked with
velocities M^-1 r, not raw momenta), at a divergence (energy error above
1000) or at ``max_tree_depth``.

Warmup follows the usual three-phase schedule: a step-size-only opening
buffer, doubling covariance-estimation windows that refresh the diagonal
mass matrix (restarting dual averaging each time), and a closing buffer
that settles the step size for sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

__all__ = ["NutsResult", "nuts_sample"]

_MAX_ENERGY_ERROR = 1000.0


@dataclass
class NutsResult:
    samples: np.ndarray          # [num_samples, dim], unconstrained space
    target_logp: np.ndarray      # per stored draw, value handed in by logp_grad
    accept_stat: float           # mean acceptance statistic, sampling phase
    divergences: int             # divergent transitions, sampling phase
    warmup_divergences: int
    step_size: float
    mass_diag: np.ndarray        # diagonal of the metric M (momentum covariance)
    warmup_logp: np.ndarray      # target value at every warmup iteration
    tree_depths: np.ndarray      # depth reached per sampling iteration


class _Tree:
    __slots__ = ("x_bwd", "r_bwd", "g_bwd", "x_fwd", "r_fwd", "g_fwd",
                 "x_prop", "g_prop", "logp_prop", "log_w", "alpha_sum",
                 "n_alpha", "turning", "diverging", "depth_steps")

    def __init__(self, x, r, g, logp, log_w, alpha, diverging):
        self.x_bwd = self.x_fwd = self.x_prop = x
        self.r_bwd = self.r_fwd = r
        self.g_bwd = self.g_fwd = self.g_prop = g
        self.logp_prop = logp
        self.log_w = log_w
        self.alpha_sum = alpha
        self.n_alpha = 1
        self.turning = False
        self.diverging = diverging
        self.depth_steps = 1


def _leapfrog(logp_grad, x, r, g, eps, inv_mass):
    r_half = r + 0.5 * eps * g
    x_new = x + eps * inv_mass * r_half
    logp_new, g_new = logp_grad(x_new)
    r_new = r_half + 0.5 * eps * g_new
    return x_new, r_new, g_new, logp_new


def _kinetic(r, inv_mass):
    return 0.5 * float(np.dot(r * inv_mass, r))


def _is_turning(x_bwd, r_bwd, x_fwd, r_fwd, inv_mass):
    dx = x_fwd - x_bwd
    return (np.dot(dx, inv_mass * r_bwd) < 0.0) or (np.dot(dx, inv_mass * r_fwd) < 0.0)


def _base_case(logp_grad, x, r, g, direction, eps, inv_mass, h0):
    x1, r1, g1, logp1 = _leapfrog(logp_grad, x, r, g, direction * eps, inv_mass)
    if np.isfinite(logp1):
        h1 = -logp1 + _kinetic(r1, inv_mass)
        delta = h1 - h0
    else:
        delta = np.inf
    diverging = not np.isfinite(delta) or delta > _MAX_ENERGY_ERROR
    log_w = -delta if not diverging else -np.inf
    alpha = float(np.exp(min(0.0, -delta))) if np.isfinite(delta) else 0.0
    return _Tree(x1, r1, g1, logp1, log_w, alpha, diverging)


def _build_tree(logp_grad, tree_from, direction, depth, eps, inv_mass, h0, rng):
    """Grow a subtree of 2^depth leapfrog states from one edge of
    ``tree_from`` and return it."""
    if direction == 1:
        x, r, g = tree_from.x_fwd, tree_from.r_fwd, tree_from.g_fwd
    else:
        x, r, g = tree_from.x_bwd, tree_from.r_bwd, tree_from.g_bwd
    if depth == 0:
        return _base_case(logp_grad, x, r, g, direction, eps, inv_mass, h0)

    inner = _build_tree(logp_grad, tree_from, direction, depth - 1, eps,
                        inv_mass, h0, rng)
    if inner.turning or inner.diverging:
        return inner
    outer = _build_tree(logp_grad, inner, direction, depth - 1, eps,
                        inv_mass, h0, rng)
    # merge outer into inner (multinomial proposal swap within the subtree)
    total = np.logaddexp(inner.log_w, outer.log_w)
    if np.isfinite(outer.log_w) and np.log(rng.uniform()) < outer.log_w - total:
        inner.x_prop = outer.x_prop
        inner.g_prop = outer.g_prop
        inner.logp_prop = outer.logp_prop
    inner.log_w = total
    inner.alpha_sum += outer.alpha_sum
    inner.n_alpha += outer.n_alpha
    inner.depth_steps += outer.depth_steps
    if direction == 1:
        inner.x_fwd, inner.r_fwd, inner.g_fwd = outer.x_fwd, outer.r_fwd, outer.g_fwd
    else:
        inner.x_bwd, inner.r_bwd, inner.g_bwd = outer.x_bwd, outer.r_bwd, outer.g_bwd
    inner.diverging = outer.diverging
    inner.turning = outer.turning or _is_turning(
        inner.x_bwd, inner.r_bwd, inner.x_fwd, inner.r_fwd, inv_mass)
    return inner


def _transition(logp_grad, x0, g0, logp0, eps, inv_mass, sqrt_mass,
                max_tree_depth, rng):
    """One NUTS draw.  Returns (x, logp, g, accept_stat, divergent, depth)."""
    r0 = rng.standard_normal(x0.shape[0]) * sqrt_mass
    h0 = -logp0 + _kinetic(r0, inv_mass)
    tree = _Tree(x0, r0, g0, logp0, 0.0, 1.0, False)
    tree.alpha_sum = 0.0
    tree.n_alpha = 0
    x_new, logp_new, g_new = x0, logp0, g0
    divergent = False
    depth = 0
    while depth < max_tree_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        sub = _build_tree(logp_grad, tree, direction, depth, eps, inv_mass,
                          h0, rng)
        tree.alpha_sum += sub.alpha_sum
        tree.n_alpha += sub.n_alpha
        if sub.diverging or sub.turning:
            divergent = divergent or sub.diverging
            break
        # biased progressive sampling: favour the fresh subtree
        if np.log(rng.uniform()) < sub.log_w - tree.log_w:
            x_new, logp_new, g_new = sub.x_prop, sub.logp_prop, sub.g_prop
        tree.log_w = np.logaddexp(tree.log_w, sub.log_w)
        if direction == 1:
            tree.x_fwd, tree.r_fwd, tree.g_fwd = sub.x_fwd, sub.r_fwd, sub.g_fwd
        else:
            tree.x_bwd, tree.r_bwd, tree.g_bwd = sub.x_bwd, sub.r_bwd, sub.g_bwd
        depth += 1
        if _is_turning(tree.x_bwd, tree.r_bwd, tree.x_fwd, tree.r_fwd, inv_mass):
            break
    accept_stat = tree.alpha_sum / max(tree.n_alpha, 1)
    return x_new, logp_new, g_new, accept_stat, divergent, depth


def _find_reasonable_step_size(logp_grad, x0, g0, logp0, inv_mass, sqrt_mass, rng):
    eps = 1.0
    r0 = rng.standard_normal(x0.shape[0]) * sqrt_mass
    h0 = -logp0 + _kinetic(r0, inv_mass)
    direction = 0
    for _ in range(100):
        _, r1, _, logp1 = _leapfrog(logp_grad, x0, r0, g0, eps, inv_mass)
        if np.isfinite(logp1):
            delta = -(-logp1 + _kinetic(r1, inv_mass)) + h0
        else:
            delta = -np.inf
        want_bigger = delta > np.log(0.5)
        if direction == 0:
            direction = 1 if want_bigger else -1
        elif (direction == 1) != want_bigger:
            return eps
        eps *= 2.0 if want_bigger else 0.5
        if not 1e-10 < eps < 1e7:
            raise NumericError("failed to find a workable initial step size")
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size (Hoffman-Gelman defaults)."""

    def __init__(self, eps0, target_accept, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target_accept
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.m = 0
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.log_eps = np.log(eps0)

    def update(self, accept_stat):
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    def adapted(self):
        return np.exp(self.log_eps_bar)


def _mass_windows(num_warmup):
    """(start, end) pairs of the covariance-estimation windows."""
    if num_warmup < 40:
        return []
    init_buf = 75 if num_warmup >= 150 else max(5, num_warmup // 7)
    term_buf = 50 if num_warmup >= 150 else max(5, num_warmup // 10)
    base = 25 if num_warmup >= 150 else max(5, num_warmup // 12)
    windows = []
    start = init_buf
    size = base
    while start + size <= num_warmup - term_buf:
        end = start + size
        # absorb a remainder too small to double once more
        if end + 2 * size > num_warmup - term_buf:
            end = num_warmup - term_buf
        windows.append((start, end))
        start = end
        size *= 2
    return windows


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # shrink towards a small diagonal, as in Stan
        return (self.n / (self.n + 5.0)) * var + 1e-3 * (5.0 / (self.n + 5.0))


def nuts_sample(logp_grad, x0, *, num_warmup, num_samples, rng, thin=1,
                target_accept=0.8, max_tree_depth=10, step_size=None,
                adapt_mass=True, progress=None) -> NutsResult:
    """Run warmup plus sampling and return stored draws.

    ``num_samples`` counts stored draws; with ``thin`` > 1 the sampler
    runs num_samples * thin post-warmup iterations.  ``progress``, if
    given, is called as progress(iteration, total, logp, eps, divergent).
    """
    x = np.array(x0, dtype=float)
    dim = x.shape[0]
    logp, g = logp_grad(x)
    if not np.isfinite(logp):
        raise NumericError("initial point has zero posterior mass")

    inv_mass = np.ones(dim)
    sqrt_mass = np.ones(dim)
    if step_size is None:
        eps = _find_reasonable_step_size(logp_grad, x, g, logp, inv_mass,
                                         sqrt_mass, rng)
    else:
        eps = float(step_size)
    da = _DualAveraging(eps, target_accept)

    windows = _mass_windows(num_warmup) if adapt_mass else []
    window_idx = 0
    welford = _Welford(dim)

    warmup_logp = np.empty(num_warmup)
    warmup_div = 0
    total_iters = num_warmup + num_samples * thin
    for m in range(num_warmup):
        x, logp, g, astat, div, _ = _transition(
            logp_grad, x, g, logp, eps, inv_mass, sqrt_mass, max_tree_depth, rng)
        warmup_logp[m] = logp
        warmup_div += int(div)
        eps = da.update(astat)
        if window_idx < len(windows):
            start, end = windows[window_idx]
            if start <= m < end:
                welford.push(x)
            if m == end - 1:
                inv_mass = welford.variance()
                sqrt_mass = 1.0 / np.sqrt(inv_mass)
                window_idx += 1
                welford = _Welford(dim)
                eps = da.adapted()
                da = _DualAveraging(eps, target_accept)
        if progress is not None:
            progress(m + 1, total_iters, logp, eps, div)
    if num_warmup > 0:
        eps = da.adapted()

    samples = np.empty((num_samples, dim))
    target_logp = np.empty(num_samples)
    depths = np.zeros(num_samples, dtype=np.int64)
    accept_sum = 0.0
    divergences = 0
    kept = 0
    for m in range(num_samples * thin):
        x, logp, g, astat, div, depth = _transition(
            logp_grad, x, g, logp, eps, inv_mass, sqrt_mass, max_tree_depth, rng)
        accept_sum += astat
        divergences += int(div)
        if (m + 1) % thin == 0:
            samples[kept] = x
            target_logp[kept] = logp
            depths[kept] = depth
            kept += 1
        if progress is not None:
            progress(num_warmup + m + 1, total_iters, logp, eps, div)

    return NutsResult(
        samples=samples,
        target_logp=target_logp,
        accept_stat=accept_sum / max(num_samples * thin, 1),
        divergences=divergences,
        warmup_divergences=warmup_div,
        step_size=float(eps),
        mass_diag=1.0 / inv_mass,
        warmup_logp=warmup_logp,
        tree_depths=depths,
    )
