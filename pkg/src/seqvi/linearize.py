"""Linearised (function-space) moments of the network outputs at inducing points.

Around each mean ``mu`` the network is replaced by its first-order
expansion ``f(x; mu) + J_mu(x) (theta - mu)``. With a diagonal parameter
covariance, the outputs at the inducing points are Gaussian; only the
per-point, per-output variances are kept (cross-point and cross-output
covariances are dropped).
"""

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from seqvi._validation import ContractError, DomainError, is_concrete
from seqvi.distributions import DiagGaussian, GaussMixture, _gaussian_terms, kl_categorical
from seqvi.nn import batch_jacobian, forward

VAR_FLOOR = 1e-12


class InducingSet(NamedTuple):
    points: jnp.ndarray
    source: str = "generated-uniform"


class FunctionMoments(NamedTuple):
    """Flattened ``(n_inducing * output_dim,)`` means and variances."""

    mean: jnp.ndarray
    var: jnp.ndarray


class MixtureFunctionMoments(NamedTuple):
    p: jnp.ndarray
    mean: jnp.ndarray
    var: jnp.ndarray

    @property
    def per_component(self):
        return [FunctionMoments(self.mean[i], self.var[i]) for i in range(self.p.shape[0])]


def _points(ind):
    pts = ind.points if isinstance(ind, InducingSet) else ind
    pts = jnp.asarray(pts, dtype=jnp.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ContractError("inducing points must be a non-empty 2-D array")
    return pts


def _moments(spec, mu, sigma, pts):
    jac = batch_jacobian(spec, mu, pts)
    var = jnp.sum(jac**2 * sigma**2, axis=-1)
    return jnp.ravel(forward(spec, mu, pts)), jnp.maximum(jnp.ravel(var), VAR_FLOOR)


def gaussian_function_moments(spec, q, ind):
    if q.dim != spec.n_params:
        raise ContractError(f"distribution has dimension {q.dim}, network has {spec.n_params} parameters")
    mean, var = _moments(spec, q.mu, q.sigma, _points(ind))
    return FunctionMoments(mean, var)


def mixture_function_moments(spec, q, ind):
    """Per-component linearised moments; component ``i`` is expanded around its own mean."""
    if q.dim != spec.n_params:
        raise ContractError(f"distribution has dimension {q.dim}, network has {spec.n_params} parameters")
    pts = _points(ind)
    mean, var = jax.vmap(lambda m, s: _moments(spec, m, s, pts))(q.mu, q.sigma)
    return MixtureFunctionMoments(q.probs, mean, var)


def function_moments(spec, q, ind):
    if isinstance(q, GaussMixture):
        return mixture_function_moments(spec, q, ind)
    return gaussian_function_moments(spec, q, ind)


def fs_kl_gaussian(cur, prior):
    """Diagonal Gaussian KL over the inducing-output coordinates."""
    if np.shape(cur.mean) != np.shape(prior.mean):
        raise ContractError("function moments have different dimensions")
    if is_concrete(prior.var) and np.any(np.asarray(prior.var) <= 0):
        raise DomainError("prior variances must be positive")
    return _gaussian_terms(cur.mean, cur.var, prior.mean, prior.var)


def fs_kl_mixture(cur, prior):
    """Categorical KL plus mixing-weighted per-component function-space KLs."""
    if np.shape(cur.mean) != np.shape(prior.mean):
        raise ContractError("mixture moments differ in components or dimension")
    if is_concrete(prior.var) and np.any(np.asarray(prior.var) <= 0):
        raise DomainError("prior variances must be positive")
    comp = _gaussian_terms(cur.mean, cur.var, prior.mean, prior.var)
    return kl_categorical(cur.p, prior.p) + jnp.sum(cur.p * comp)


def fs_kl(cur, prior):
    if isinstance(cur, MixtureFunctionMoments):
        return fs_kl_mixture(cur, prior)
    return fs_kl_gaussian(cur, prior)
