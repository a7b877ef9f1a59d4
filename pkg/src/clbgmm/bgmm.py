"""Variational Bayesian Gaussian mixture estimation.

Conjugate model: Dirichlet prior on mixing weights, Gaussian prior on
component means, Gamma priors on precisions (spherical/diagonal) or a
Wishart prior (full). Fitting alternates closed-form posterior updates
with a log-sum-exp responsibility step, tracks the evidence lower bound,
and prunes low-weight components once after convergence.

Point estimates (posterior means) populate the returned FittedMixture;
scoring is a plain mixture density over those plug-in parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cholesky, cho_solve, eigh
from scipy.special import digamma, gammaln, logsumexp

from .errors import NumericalError, ValidationError

COVARIANCE_TYPES = ("spherical", "diagonal", "full")

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class BgmmConfig:
    """Hyperparameters for one variational mixture fit.

    weight_concentration_prior defaults to 1/max_components; a
    precision_prior_rate of None means "empirical per-dimension variance",
    resolved against the data at fit time.
    """

    max_components: int = 10
    covariance_type: str = "diagonal"
    weight_concentration_prior: float | None = None
    mean_prior_strength: float = 1.0
    precision_prior_shape: float = 1.0
    precision_prior_rate: float | None = None
    variance_floor: float = 1e-6
    max_iterations: int = 200
    elbo_tolerance: float = 1e-6
    prune_threshold: float = 1e-2
    n_restarts: int = 1

    def validate(self) -> "BgmmConfig":
        if self.max_components < 1:
            raise ValidationError("max_components must be >= 1")
        if self.covariance_type not in COVARIANCE_TYPES:
            raise ValidationError(f"unknown covariance_type {self.covariance_type!r}")
        for name in ("mean_prior_strength", "precision_prior_shape",
                     "variance_floor", "elbo_tolerance"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.weight_concentration_prior is not None and self.weight_concentration_prior <= 0:
            raise ValidationError("weight_concentration_prior must be positive")
        if self.precision_prior_rate is not None and self.precision_prior_rate <= 0:
            raise ValidationError("precision_prior_rate must be positive")
        if self.max_iterations < 1 or self.n_restarts < 1:
            raise ValidationError("max_iterations and n_restarts must be >= 1")
        if not (0.0 < self.prune_threshold < 1.0):
            raise ValidationError("prune_threshold must lie in (0, 1)")
        return self

    def to_dict(self) -> dict:
        return {
            "max_components": self.max_components,
            "covariance_type": self.covariance_type,
            "weight_concentration_prior": self.weight_concentration_prior,
            "mean_prior_strength": self.mean_prior_strength,
            "precision_prior_shape": self.precision_prior_shape,
            "precision_prior_rate": self.precision_prior_rate,
            "variance_floor": self.variance_floor,
            "max_iterations": self.max_iterations,
            "elbo_tolerance": self.elbo_tolerance,
            "prune_threshold": self.prune_threshold,
            "n_restarts": self.n_restarts,
        }

    @staticmethod
    def from_dict(d: dict) -> "BgmmConfig":
        return BgmmConfig(**d).validate()


@dataclass(frozen=True)
class FittedMixture:
    """Pruned mixture with plug-in weights, means and covariances.

    covariances shape per type: (J,) spherical, (J, D) diagonal,
    (J, D, D) full.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str
    metadata: dict

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "covariance_type": self.covariance_type,
            "metadata": self.metadata,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")

    @staticmethod
    def from_dict(d: dict) -> "FittedMixture":
        return FittedMixture(
            weights=np.asarray(d["weights"], dtype=np.float64),
            means=np.asarray(d["means"], dtype=np.float64),
            covariances=np.asarray(d["covariances"], dtype=np.float64),
            covariance_type=str(d["covariance_type"]),
            metadata=dict(d["metadata"]),
        )


@dataclass
class VariationalState:
    """Posterior parameters and responsibilities of one fit.

    shape/rate hold the Gamma precision posteriors (spherical: rate (J,);
    diagonal: rate (J, D)); dof/scale hold the Wishart posterior for the
    full structure. Unused fields stay None.
    """

    covariance_type: str
    responsibilities: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    means: np.ndarray
    shape: np.ndarray | None = None
    rate: np.ndarray | None = None
    dof: np.ndarray | None = None
    scale: np.ndarray | None = None
    elbo_trace: list = field(default_factory=list)

    def expected_weights(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class _Priors:
    alpha0: float
    beta0: float
    m0: np.ndarray
    a0: float                    # Gamma shape (spherical/diagonal)
    b0: np.ndarray | float       # Gamma rate: scalar (spherical) or (D,) (diagonal)
    nu0: float | None = None     # Wishart dof (full)
    w0_inv: np.ndarray | None = None
    w0_logdet: float | None = None


def _resolve_priors(X: np.ndarray, config: BgmmConfig) -> _Priors:
    n, d = X.shape
    alpha0 = config.weight_concentration_prior
    if alpha0 is None:
        alpha0 = 1.0 / config.max_components
    m0 = X.mean(axis=0)
    emp_var = np.maximum(X.var(axis=0), config.variance_floor)
    a0 = config.precision_prior_shape
    if config.precision_prior_rate is not None:
        rate = np.full(d, config.precision_prior_rate)
    else:
        rate = emp_var
    pri = _Priors(alpha0=alpha0, beta0=config.mean_prior_strength, m0=m0,
                  a0=a0, b0=rate)
    if config.covariance_type == "spherical":
        pri.b0 = float(rate.mean())
    elif config.covariance_type == "full":
        # Wishart prior matching E[precision] = 1/rate per dimension
        pri.nu0 = d + a0
        pri.w0_inv = np.diag(pri.nu0 * rate)
        pri.w0_logdet = -float(np.sum(np.log(pri.nu0 * rate)))
    return pri


def _init_responsibilities(X: np.ndarray, n_components: int,
                           rng: np.random.Generator) -> np.ndarray:
    """One-hot assignment to farthest-point centers.

    The first center is the data point nearest a random probe drawn in the
    data bounding box, which keeps the start independent of row order.
    """
    n = X.shape[0]
    n_centers = min(n_components, n)
    probe = rng.uniform(X.min(axis=0), X.max(axis=0))
    first = int(np.argmin(np.linalg.norm(X - probe, axis=1)))
    centers = [first]
    min_dist = np.linalg.norm(X - X[first], axis=1)
    for _ in range(n_centers - 1):
        nxt = int(np.argmax(min_dist))
        centers.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(X - X[nxt], axis=1))
    dists = np.linalg.norm(X[:, None, :] - X[centers][None, :, :], axis=2)
    assign = np.argmin(dists, axis=1)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), assign] = 1.0
    return resp


def _m_step(X: np.ndarray, resp: np.ndarray, pri: _Priors,
            state: VariationalState) -> None:
    n, d = X.shape
    nk = resp.sum(axis=0) + 1e-12
    xbar = (resp.T @ X) / nk[:, None]

    state.alpha = pri.alpha0 + resp.sum(axis=0)
    state.beta = pri.beta0 + nk
    state.means = (pri.beta0 * pri.m0[None, :] + nk[:, None] * xbar) / state.beta[:, None]

    shrink = (pri.beta0 * nk / state.beta)  # (J,)
    dev = xbar - pri.m0[None, :]

    if state.covariance_type in ("spherical", "diagonal"):
        # per-dim scatter around the weighted mean
        sq = resp.T @ (X ** 2) - nk[:, None] * xbar ** 2  # (J, D)
        sq = np.maximum(sq, 0.0)
        if state.covariance_type == "diagonal":
            state.shape = pri.a0 + 0.5 * nk
            state.rate = pri.b0[None, :] + 0.5 * (sq + shrink[:, None] * dev ** 2)
        else:
            state.shape = pri.a0 + 0.5 * nk * d
            state.rate = pri.b0 + 0.5 * (sq.sum(axis=1) + shrink * (dev ** 2).sum(axis=1))
    else:
        j = resp.shape[1]
        state.dof = pri.nu0 + nk
        scale = np.empty((j, d, d))
        for k in range(j):
            xc = X - xbar[k]
            scatter = (resp[:, k][:, None] * xc).T @ xc
            w_inv = pri.w0_inv + scatter + shrink[k] * np.outer(dev[k], dev[k])
            w_inv = 0.5 * (w_inv + w_inv.T)
            try:
                low = cholesky(w_inv, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"scale matrix update failed for component {k}") from exc
            w = cho_solve((low, True), np.eye(d))
            scale[k] = 0.5 * (w + w.T)
        state.scale = scale


def _expected_log_density(X: np.ndarray, state: VariationalState) -> np.ndarray:
    """Per-sample, per-component expected Gaussian log density + E[log pi]."""
    n, d = X.shape
    elog_pi = digamma(state.alpha) - digamma(state.alpha.sum())
    m = state.means
    if state.covariance_type == "diagonal":
        elog_lam = digamma(state.shape)[:, None] - np.log(state.rate)  # (J, D)
        prec = state.shape[:, None] / state.rate                       # (J, D)
        quad = (X ** 2) @ prec.T - 2.0 * X @ (prec * m).T + np.sum(prec * m ** 2, axis=1)
        log_dens = 0.5 * elog_lam.sum(axis=1) - 0.5 * d * LOG_2PI \
            - 0.5 * (quad + d / state.beta)
    elif state.covariance_type == "spherical":
        elog_lam = digamma(state.shape) - np.log(state.rate)           # (J,)
        prec = state.shape / state.rate
        sq = ((X[:, None, :] - m[None, :, :]) ** 2).sum(axis=2)        # (N, J)
        log_dens = 0.5 * d * elog_lam - 0.5 * d * LOG_2PI \
            - 0.5 * (prec * sq + d / state.beta)
    else:
        j = m.shape[0]
        quad = np.empty((n, j))
        elog_det = np.empty(j)
        for k in range(j):
            low = cholesky(state.scale[k], lower=True)
            y = (X - m[k]) @ low
            quad[:, k] = (y ** 2).sum(axis=1)
            logdet_w = 2.0 * np.sum(np.log(np.diag(low)))
            elog_det[k] = np.sum(digamma(0.5 * (state.dof[k] + 1 - np.arange(1, d + 1)))) \
                + d * np.log(2.0) + logdet_w
        log_dens = 0.5 * elog_det - 0.5 * d * LOG_2PI \
            - 0.5 * (state.dof * quad + d / state.beta)
    return elog_pi[None, :] + log_dens


def _kl_terms(pri: _Priors, state: VariationalState) -> float:
    """KL(q || prior) for the weight and mean/precision posteriors."""
    alpha, beta, m = state.alpha, state.beta, state.means
    j, d = m.shape

    kl = gammaln(alpha.sum()) - gammaln(j * pri.alpha0) \
        + j * gammaln(pri.alpha0) - np.sum(gammaln(alpha)) \
        + np.sum((alpha - pri.alpha0) * (digamma(alpha) - digamma(alpha.sum())))

    dev = m - pri.m0[None, :]
    if state.covariance_type == "diagonal":
        a, b = state.shape, state.rate
        kl += np.sum(d * (0.5 * np.log(beta / pri.beta0) - 0.5)
                     + 0.5 * pri.beta0 * ((a[:, None] / b * dev ** 2).sum(axis=1) + d / beta))
        kl += np.sum((a[:, None] - pri.a0) * digamma(a)[:, None]
                     - gammaln(a)[:, None] + gammaln(pri.a0)
                     + pri.a0 * (np.log(b) - np.log(pri.b0)[None, :])
                     + a[:, None] * (pri.b0[None, :] - b) / b)
    elif state.covariance_type == "spherical":
        a, b = state.shape, state.rate
        kl += np.sum(d * (0.5 * np.log(beta / pri.beta0) - 0.5)
                     + 0.5 * pri.beta0 * (a / b * (dev ** 2).sum(axis=1) + d / beta))
        kl += np.sum((a - pri.a0) * digamma(a) - gammaln(a) + gammaln(pri.a0)
                     + pri.a0 * (np.log(b) - np.log(pri.b0))
                     + a * (pri.b0 - b) / b)
    else:
        nu, w = state.dof, state.scale
        idx = np.arange(1, d + 1)
        for k in range(j):
            low = cholesky(w[k], lower=True)
            logdet_w = 2.0 * np.sum(np.log(np.diag(low)))
            elog_det = np.sum(digamma(0.5 * (nu[k] + 1 - idx))) + d * np.log(2.0) + logdet_w
            quad = nu[k] * dev[k] @ w[k] @ dev[k]
            kl += 0.5 * d * np.log(beta[k] / pri.beta0) - 0.5 * d \
                + 0.5 * pri.beta0 * (quad + d / beta[k])
            log_b_q = -0.5 * nu[k] * logdet_w - 0.5 * nu[k] * d * np.log(2.0) \
                - 0.25 * d * (d - 1) * np.log(np.pi) \
                - np.sum(gammaln(0.5 * (nu[k] + 1 - idx)))
            log_b_p = -0.5 * pri.nu0 * pri.w0_logdet - 0.5 * pri.nu0 * d * np.log(2.0) \
                - 0.25 * d * (d - 1) * np.log(np.pi) \
                - np.sum(gammaln(0.5 * (pri.nu0 + 1 - idx)))
            kl += log_b_q - log_b_p + 0.5 * (nu[k] - pri.nu0) * elog_det \
                + 0.5 * nu[k] * (np.trace(pri.w0_inv @ w[k]) - d)
    return float(kl)


def _fit_once(X: np.ndarray, config: BgmmConfig, pri: _Priors,
              rng: np.random.Generator) -> VariationalState:
    resp = _init_responsibilities(X, config.max_components, rng)
    state = VariationalState(
        covariance_type=config.covariance_type,
        responsibilities=resp,
        alpha=np.zeros(config.max_components),
        beta=np.zeros(config.max_components),
        means=np.zeros((config.max_components, X.shape[1])),
    )
    prev = -np.inf
    for _ in range(config.max_iterations):
        _m_step(X, state.responsibilities, pri, state)
        log_dens = _expected_log_density(X, state)
        log_norm = logsumexp(log_dens, axis=1)
        state.responsibilities = np.exp(log_dens - log_norm[:, None])
        value = float(log_norm.sum()) - _kl_terms(pri, state)
        state.elbo_trace.append(value)
        if abs(value - prev) < config.elbo_tolerance:
            break
        prev = value
    return state


def _plug_in(state: VariationalState, config: BgmmConfig, pri: _Priors,
             seed: int, restart: int) -> FittedMixture:
    weights = state.expected_weights()
    keep = weights >= config.prune_threshold
    fallback = False
    if not np.any(keep):
        keep = np.zeros_like(keep)
        keep[int(np.argmax(weights))] = True
        fallback = True
    n_pruned = int(np.sum(~keep))
    w = weights[keep]
    w = w / w.sum()
    means = state.means[keep]
    floor = config.variance_floor

    if config.covariance_type == "diagonal":
        cov = np.maximum(state.rate[keep] / state.shape[keep][:, None], floor)
    elif config.covariance_type == "spherical":
        cov = np.maximum(state.rate[keep] / state.shape[keep], floor)
    else:
        kept = np.where(keep)[0]
        d = means.shape[1]
        cov = np.empty((kept.shape[0], d, d))
        for i, k in enumerate(kept):
            prec = state.dof[k] * state.scale[k]
            low = cholesky(prec, lower=True)
            sigma = cho_solve((low, True), np.eye(d))
            sigma = 0.5 * (sigma + sigma.T)
            vals, vecs = eigh(sigma)
            vals = np.maximum(vals, floor)
            cov[i] = vecs @ np.diag(vals) @ vecs.T

    converged = len(state.elbo_trace) < config.max_iterations or (
        len(state.elbo_trace) >= 2
        and abs(state.elbo_trace[-1] - state.elbo_trace[-2]) < config.elbo_tolerance
    )
    meta = {
        "final_elbo": state.elbo_trace[-1],
        "iterations": len(state.elbo_trace),
        "components_pruned": n_pruned,
        "seed": seed,
        "restart": restart,
        "converged": bool(converged),
        "all_pruned_fallback": fallback,
        "scoring": "posterior-mean plug-in",
    }
    return FittedMixture(weights=w, means=means, covariances=cov,
                         covariance_type=config.covariance_type, metadata=meta)


def fit(data, config: BgmmConfig, seed: int):
    """Fit a variational mixture; returns (FittedMixture, VariationalState).

    Deterministic for fixed (data, config, seed). With n_restarts > 1 the
    restart with the highest final ELBO wins; ties go to the lowest index.
    """
    config.validate()
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError("data must be a non-empty list of equal-length vectors")
    if not np.all(np.isfinite(X)):
        raise ValidationError("data contains non-finite values")

    pri = _resolve_priors(X, config)
    rng = np.random.default_rng(seed)
    best_state = None
    best_restart = 0
    for r in range(config.n_restarts):
        state = _fit_once(X, config, pri, rng)
        if best_state is None or state.elbo_trace[-1] > best_state.elbo_trace[-1]:
            best_state = state
            best_restart = r
    mixture = _plug_in(best_state, config, pri, seed, best_restart)
    return mixture, best_state


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def _component_log_density(mix: FittedMixture, X: np.ndarray) -> np.ndarray:
    """(N, J) Gaussian log densities under the plug-in parameters."""
    d = mix.dim
    m = mix.means
    if mix.covariance_type == "diagonal":
        var = mix.covariances  # (J, D)
        quad = ((X[:, None, :] - m[None, :, :]) ** 2 / var[None, :, :]).sum(axis=2)
        return -0.5 * (d * LOG_2PI + np.log(var).sum(axis=1)[None, :] + quad)
    if mix.covariance_type == "spherical":
        var = mix.covariances  # (J,)
        sq = ((X[:, None, :] - m[None, :, :]) ** 2).sum(axis=2)
        return -0.5 * (d * LOG_2PI + d * np.log(var)[None, :] + sq / var[None, :])
    out = np.empty((X.shape[0], mix.n_components))
    for k in range(mix.n_components):
        low = cholesky(mix.covariances[k], lower=True)
        y = np.linalg.solve(low, (X - m[k]).T).T
        logdet = 2.0 * np.sum(np.log(np.diag(low)))
        out[:, k] = -0.5 * (d * LOG_2PI + logdet + (y ** 2).sum(axis=1))
    return out


def log_likelihood_batch(mix: FittedMixture, X) -> np.ndarray:
    """Mixture log density for a batch of points, via log-sum-exp."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != mix.dim:
        raise ValidationError(f"dimension mismatch: got {X.shape[1]}, mixture expects {mix.dim}")
    return logsumexp(_component_log_density(mix, X) + np.log(mix.weights)[None, :], axis=1)


def log_likelihood(mix: FittedMixture, x) -> float:
    """Mixture log density at a single point."""
    return float(log_likelihood_batch(mix, np.asarray(x, dtype=np.float64)[None, :])[0])


def elbo(state: VariationalState) -> float:
    """Current evidence lower bound (last entry of the trace)."""
    return state.elbo_trace[-1]


def effective_components(state: VariationalState, threshold: float) -> int:
    """Number of components whose expected mixing weight reaches threshold."""
    return int(np.sum(state.expected_weights() >= threshold))
