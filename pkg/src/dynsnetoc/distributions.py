"""Random-variate generation and densities for the model's building blocks.

Everything here is parameterized the same way the rest of the package is:
Gamma distributions always use (shape, rate), samplers always take an
explicit ``numpy.random.Generator``, and positive-parameter domains are
validated eagerly.

The two non-standard laws are

* the exponentially tilted BFRY distribution, the finite-dimensional iid
  approximation used as prior on the base sociabilities, and
* the epsilon-truncated generalized-gamma point process that generates
  (sociability, location) atoms for simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import digamma, gammaincc, gammaln

from .errors import NumericError, ParameterError

__all__ = [
    "GgpParams",
    "EtBfryParams",
    "gamma_sample",
    "etbfry_log_density",
    "etbfry_sample",
    "ggp_tail_intensity",
    "ggp_truncated_sample",
]

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class GgpParams:
    """Parameters of a generalized gamma process.

    ``alpha`` is the observation-window size (overall mass), ``sigma``
    controls activity (infinite for sigma in (0,1), finite for sigma < 0)
    and ``tau`` is the exponential tilt rate of the jump intensity
    w^(-1-sigma) * exp(-tau*w) / Gamma(1-sigma).
    """

    alpha: float
    sigma: float
    tau: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not self.sigma < 1 or self.sigma == 0:
            raise ParameterError(
                f"sigma must lie in (-inf, 1) excluding 0, got {self.sigma}"
            )


@dataclass(frozen=True)
class EtBfryParams:
    """Parameters of the exponentially tilted BFRY law with tilt level L."""

    alpha: float
    truncation_level: int
    tau: float
    sigma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not 0 < self.sigma < 1:
            raise ParameterError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.truncation_level < 1:
            raise ParameterError("truncation_level must be >= 1")


def gamma_sample(shape, rate, rng, size=None):
    """Draw from Gamma(shape, rate) with density proportional to
    x^(shape-1) * exp(-rate*x).

    This is the single project-wide Gamma sampler; the rate
    parameterization is mandatory everywhere.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or not np.all(np.isfinite(shape)):
        raise ParameterError("gamma_sample: shape must be positive and finite")
    if np.any(rate <= 0) or not np.all(np.isfinite(rate)):
        raise ParameterError("gamma_sample: rate must be positive and finite")
    return rng.gamma(shape, 1.0 / rate, size=size)


def _log1mexp(x):
    """log(1 - exp(-x)) for x > 0, stable at both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        small = np.log(-np.expm1(-np.minimum(x, _LN2)))
        large = np.log1p(-np.exp(-np.maximum(x, _LN2)))
    return np.where(x < _LN2, small, large)


def _etbfry_internals(p: EtBfryParams):
    """Tilt scale c = (sigma*L/alpha)^(1/sigma) and the log normalizer
    pieces shared by density, gradient and sampler."""
    sigma, tau = p.sigma, p.tau
    log_c = (np.log(sigma) + np.log(p.truncation_level) - np.log(p.alpha)) / sigma
    c = np.exp(log_c)
    # log D with D = (tau + c)^sigma - tau^sigma, written to survive both
    # c >> tau and c << tau
    x = sigma * np.log1p(c / tau)
    log_d = sigma * np.log(tau) + x + _log1mexp(x)
    return c, log_c, log_d


def etbfry_log_density(w, p: EtBfryParams):
    """Log density of the etBFRY(alpha/L, tau, sigma) distribution.

    The density is

        sigma * w^(-1-sigma) * exp(-tau*w) * (1 - exp(-c*w))
        ---------------------------------------------------- ,
        Gamma(1-sigma) * ((tau + c)^sigma - tau^sigma)

    with c = (sigma*L/alpha)^(1/sigma).  Both the 1 - exp(-c*w) factor and
    the denominator are evaluated in log space to control cancellation.

    Accepts scalar or array ``w``; raises for any w <= 0.
    """
    w_arr = np.asarray(w, dtype=float)
    if np.any(w_arr <= 0) or not np.all(np.isfinite(w_arr)):
        raise ParameterError("etbfry_log_density: w must be positive and finite")
    sigma, tau = p.sigma, p.tau
    c, _, log_d = _etbfry_internals(p)
    out = (
        np.log(sigma)
        - (1.0 + sigma) * np.log(w_arr)
        - tau * w_arr
        + _log1mexp(c * w_arr)
        - gammaln(1.0 - sigma)
        - log_d
    )
    if np.isscalar(w):
        return float(out)
    return out


def etbfry_log_density_grad(w, alpha, truncation_level, tau, sigma):
    """Log density of etBFRY plus its partial derivatives.

    Returns ``(logpdf, d_w, d_alpha, d_sigma, d_tau)``, each an array of
    the same length as ``w``.  Used by the posterior gradient, so this
    assumes positive finite inputs and does not re-validate.
    """
    p = EtBfryParams(alpha=alpha, truncation_level=truncation_level, tau=tau, sigma=sigma)
    w = np.asarray(w, dtype=float)
    c, log_c, log_d = _etbfry_internals(p)
    cw = c * w
    logpdf = (
        np.log(sigma)
        - (1.0 + sigma) * np.log(w)
        - tau * w
        + _log1mexp(cw)
        - gammaln(1.0 - sigma)
        - log_d
    )
    # e1 = 1 / (exp(c*w) - 1), via exp(-cw)/(1 - exp(-cw))
    e1 = np.exp(-cw) / (-np.expm1(-cw))
    d_w = -(1.0 + sigma) / w - tau + c * e1

    log_u = np.log(tau + c)
    log_tau = np.log(tau)
    # ratios r_* = (d D / d *) / D computed in log space
    r_c = sigma * np.exp((sigma - 1.0) * log_u - log_d)
    r_tau = r_c - sigma * np.exp((sigma - 1.0) * log_tau - log_d)
    r_sigma_partial = (
        np.exp(sigma * log_u - log_d) * log_u
        - np.exp(sigma * log_tau - log_d) * log_tau
    )
    dc_dalpha = -c / (sigma * alpha)
    dc_dsigma = c * (1.0 - sigma * log_c) / sigma**2

    d_alpha = (w * e1 - r_c) * dc_dalpha
    d_sigma = (
        1.0 / sigma
        - np.log(w)
        + digamma(1.0 - sigma)
        + (w * e1 - r_c) * dc_dsigma
        - r_sigma_partial
    )
    d_tau = -w - r_tau
    d_alpha = np.broadcast_to(d_alpha, w.shape).copy() if np.ndim(d_alpha) == 0 else d_alpha
    return logpdf, d_w, d_alpha, d_sigma, d_tau


def etbfry_sample(p: EtBfryParams, rng, size=None):
    """Exact draw(s) from the etBFRY distribution.

    Uses the mixture identity 1 - exp(-c*w) = integral_0^c w*exp(-s*w) ds:
    the auxiliary tilt s has density sigma*(tau+s)^(sigma-1) / D on (0, c)
    (sampled by inverse CDF in closed form), and w | s is
    Gamma(1 - sigma, tau + s).  No rejection step is needed and the draw
    is exact for every parameter setting.
    """
    sigma, tau = p.sigma, p.tau
    c, _, _ = _etbfry_internals(p)
    x = sigma * np.log1p(c / tau)
    v = rng.uniform(size=size)
    # log(1 + v*(exp(x) - 1)), with the large-x branch avoiding overflow
    if x > 30.0:
        log_inner = np.log(v) + x
    else:
        log_inner = np.log1p(v * np.expm1(x))
    s = np.exp(np.log(tau) + log_inner / sigma) - tau
    s = np.maximum(s, 0.0)
    return rng.gamma(1.0 - sigma, 1.0 / (tau + s))


def _levy_density(w, sigma, tau):
    return w ** (-1.0 - sigma) * np.exp(-tau * w - gammaln(1.0 - sigma))


def _tail_intensity_quadrature(sigma, tau, epsilon):
    """Adaptive-quadrature evaluation of the tail Levy intensity."""
    if epsilon <= 0:
        raise ParameterError("quadrature tail intensity needs epsilon > 0")
    mid = max(1.0, 2.0 * epsilon)
    part1, _ = integrate.quad(_levy_density, epsilon, mid, args=(sigma, tau), limit=200)
    part2, _ = integrate.quad(_levy_density, mid, np.inf, args=(sigma, tau), limit=200)
    return part1 + part2


def ggp_tail_intensity(p: GgpParams, epsilon, method="auto"):
    """Tail intensity rho_bar(epsilon) = integral_epsilon^inf of the jump
    intensity w^(-1-sigma) exp(-tau*w) / Gamma(1-sigma) dw.

    ``alpha * rho_bar(epsilon)`` is the expected number of atoms above the
    truncation threshold.  The closed form goes through the upper
    incomplete gamma function; the negative parameter -sigma is lifted to
    1-sigma by one integration-by-parts step.  Near sigma = 0 that
    expression loses accuracy, so ``method="auto"`` switches to adaptive
    quadrature for |sigma| < 0.01.
    """
    sigma, tau = p.sigma, p.tau
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    if sigma > 0 and epsilon == 0:
        raise ParameterError(
            "sigma in (0,1) has infinite activity: epsilon must be positive"
        )
    if method == "quadrature" or (method == "auto" and abs(sigma) < 1e-2):
        return _tail_intensity_quadrature(sigma, tau, epsilon)
    if method not in ("auto", "incomplete-gamma"):
        raise ParameterError(f"unknown method {method!r}")
    if sigma < 0:
        if epsilon == 0:
            return tau**sigma / (-sigma)
        return tau**sigma * gammaincc(-sigma, tau * epsilon) / (-sigma)
    x = tau * epsilon
    # Gamma(-sigma, x) = (x^-sigma e^-x - Gamma(1-sigma, x)) / sigma
    term = epsilon ** (-sigma) * np.exp(-x - gammaln(1.0 - sigma))
    return (term - tau**sigma * gammaincc(1.0 - sigma, x)) / sigma


def ggp_truncated_sample(p: GgpParams, epsilon, rng):
    """Sample the atoms of a GGP restricted to jumps above ``epsilon``.

    Returns ``(w0, theta)``: the number of atoms K is Poisson with mean
    alpha * rho_bar(epsilon), jump sizes are iid from the restricted
    intensity and locations are iid Uniform(0, alpha).

    For sigma < 0 the process has finite activity and epsilon = 0 is
    allowed (jumps are then exactly Gamma(-sigma, tau)).  For
    sigma in (0, 1) jumps are drawn by rejection from a Pareto(sigma,
    epsilon) proposal accepted with probability exp(-tau*w); the expected
    acceptance rate is checked up front and sampling aborts if it is
    hopeless, which signals that epsilon is far too small for the tilt.
    """
    sigma, tau, alpha = p.sigma, p.tau, p.alpha
    intensity = ggp_tail_intensity(p, epsilon)
    k = int(rng.poisson(alpha * intensity))
    theta = rng.uniform(0.0, alpha, size=k)
    if k == 0:
        return np.empty(0), theta

    if sigma < 0:
        if epsilon == 0:
            return gamma_sample(-sigma, tau, rng, size=k), theta
        accept_prob = float(gammaincc(-sigma, tau * epsilon))
        if accept_prob < 1e-6:
            raise NumericError(
                "truncated Gamma jump sampling is degenerate: "
                f"P(w > epsilon) = {accept_prob:.3g}"
            )
        out = np.empty(0)
        while out.size < k:
            n = int((k - out.size) / accept_prob * 1.2) + 16
            cand = gamma_sample(-sigma, tau, rng, size=n)
            out = np.concatenate([out, cand[cand > epsilon]])
        return out[:k], theta

    expected_acc = sigma * epsilon**sigma * np.exp(gammaln(1.0 - sigma)) * intensity
    if expected_acc < 1e-6:
        raise NumericError(
            "Pareto-rejection sampling of truncated GGP jumps has expected "
            f"acceptance {expected_acc:.3g}; increase epsilon"
        )
    out = np.empty(0)
    while out.size < k:
        n = int((k - out.size) / expected_acc * 1.2) + 16
        w = epsilon * rng.uniform(size=n) ** (-1.0 / sigma)
        keep = rng.uniform(size=n) < np.exp(-tau * w)
        out = np.concatenate([out, w[keep]])
    return out[:k], theta
