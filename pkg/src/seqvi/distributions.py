"""Variational families over flat parameter vectors and their KL terms.

Both families are ``NamedTuple`` pytrees so they pass through ``jax.jit``
and ``jax.grad`` unchanged. Standard deviations are stored through the
unconstrained ``rho`` with ``sigma = softplus(rho)``.
"""

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from seqvi._validation import ContractError, DomainError, is_concrete
from seqvi.autodiff import log_softmax, softmax, softplus, softplus_inverse

_PROB_FLOOR = 1e-12
_LOG_2PI = float(np.log(2.0 * np.pi))


class DiagGaussian(NamedTuple):
    mu: jnp.ndarray
    rho: jnp.ndarray

    @property
    def sigma(self):
        return softplus(self.rho)

    @property
    def dim(self):
        return self.mu.shape[-1]


class GaussMixture(NamedTuple):
    """Mixture of ``k`` diagonal Gaussians stored as stacked ``(k, n)`` arrays.

    ``logits`` are the un-normalised log mixing probabilities.
    """

    logits: jnp.ndarray
    mu: jnp.ndarray
    rho: jnp.ndarray

    @property
    def k(self):
        return self.logits.shape[0]

    @property
    def dim(self):
        return self.mu.shape[-1]

    @property
    def probs(self):
        return softmax(self.logits)

    @property
    def sigma(self):
        return softplus(self.rho)

    def component(self, i):
        return DiagGaussian(self.mu[i], self.rho[i])

    @classmethod
    def from_components(cls, logits, components):
        if len(components) < 1:
            raise ContractError("a mixture needs at least one component")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ContractError(f"components have different dimensions {sorted(dims)}")
        logits = jnp.asarray(logits, dtype=jnp.float64)
        if logits.shape != (len(components),):
            raise ContractError("need one logit per component")
        return cls(
            logits,
            jnp.stack([jnp.asarray(c.mu) for c in components]),
            jnp.stack([jnp.asarray(c.rho) for c in components]),
        )


class GumbelSoftmaxSample(NamedTuple):
    weights: jnp.ndarray
    temperature: float


def standard_gaussian(n):
    """N(0, I) over ``n`` parameters."""
    return DiagGaussian(jnp.zeros(n), jnp.full(n, softplus_inverse(1.0)))


def standard_mixture(k, n):
    """``k`` identical N(0, I) components with uniform mixing probabilities."""
    return GaussMixture(jnp.zeros(k), jnp.zeros((k, n)), jnp.full((k, n), softplus_inverse(1.0)))


def sample_gaussian(d, noise):
    """Reparameterised draw ``mu + softplus(rho) * noise``."""
    if is_concrete(noise) and np.shape(noise)[-1] != d.dim:
        raise ContractError(f"noise has length {np.shape(noise)[-1]}, distribution has {d.dim}")
    return d.mu + d.sigma * noise


def sample_gumbel_softmax(logits, temperature, gumbel):
    """Relaxed one-hot draw ``softmax((logits + gumbel) / temperature)``."""
    if is_concrete(temperature) and not float(temperature) > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    if is_concrete(gumbel) and np.shape(gumbel) != np.shape(logits):
        raise ContractError("gumbel noise must match the logits' shape")
    return GumbelSoftmaxSample(softmax((logits + gumbel) / temperature), temperature)


def straight_through(weights):
    """One-hot at the argmax in the forward pass, gradient of the soft weights in the backward pass."""
    hard = jax.nn.one_hot(jnp.argmax(weights), weights.shape[-1], dtype=weights.dtype)
    return hard - jax.lax.stop_gradient(weights) + weights


def sample_mixture(m, temperature, noise, gumbel, hard=False):
    """Convex combination of per-component draws, weighted by a Gumbel-softmax sample.

    ``noise`` has shape ``(k, n)`` (one standard-normal vector per component)
    and ``gumbel`` has shape ``(k,)``. With ``hard=True`` the weights are
    replaced by their straight-through one-hot version, so the draw is a
    single component's sample.
    """
    if is_concrete(noise) and np.shape(noise) != np.shape(m.mu):
        raise ContractError(f"noise shape {np.shape(noise)} does not match {np.shape(m.mu)}")
    w = sample_gumbel_softmax(m.logits, temperature, gumbel).weights
    if hard:
        w = straight_through(w)
    return jnp.sum(w[:, None] * (m.mu + m.sigma * noise), axis=0)


def draw_noise(key, q):
    """Standard-normal (and, for mixtures, standard-Gumbel) noise for one draw of ``q``.

    The normal noise comes from the first half of the split key for either
    family, so a one-component mixture sees exactly the Gaussian's stream.
    """
    k_normal, k_gumbel = jax.random.split(key)
    if isinstance(q, GaussMixture):
        return (
            jax.random.normal(k_normal, (q.k, q.dim)),
            jax.random.gumbel(k_gumbel, (q.k,)),
        )
    return jax.random.normal(k_normal, (1, q.dim))[0], None


def sample(q, key, temperature=0.1):
    """One reparameterised draw from either family."""
    noise, gumbel = draw_noise(key, q)
    if isinstance(q, GaussMixture):
        return sample_mixture(q, temperature, noise, gumbel)
    return sample_gaussian(q, noise)


def sample_exact(q, key, n_samples):
    """``n_samples`` exact draws (hard categorical selection for mixtures)."""
    k_normal, k_cat = jax.random.split(key)
    if isinstance(q, GaussMixture):
        z = jax.random.normal(k_normal, (n_samples, q.k, q.dim))
        idx = jax.random.categorical(k_cat, q.logits, shape=(n_samples,))
        return q.mu[idx] + q.sigma[idx] * z[jnp.arange(n_samples), idx]
    z = jax.random.normal(k_normal, (n_samples, 1, q.dim))[:, 0]
    return q.mu + q.sigma * z


def _gaussian_terms(mu_q, var_q, mu_p, var_p):
    return 0.5 * jnp.sum(jnp.log(var_p) - jnp.log(var_q) - 1.0 + (var_q + (mu_q - mu_p) ** 2) / var_p, axis=-1)


def kl_diag_gaussian(q, p):
    """Closed-form KL(q || p) between diagonal Gaussians."""
    if np.shape(q.mu) != np.shape(p.mu):
        raise ContractError(f"dimension mismatch {np.shape(q.mu)} vs {np.shape(p.mu)}")
    return _gaussian_terms(q.mu, q.sigma**2, p.mu, p.sigma**2)


def kl_categorical(p_t, p_prev):
    """KL between probability vectors; zero-mass entries of ``p_t`` contribute nothing."""
    p_t = jnp.asarray(p_t)
    p_prev = jnp.asarray(p_prev)
    if np.shape(p_t) != np.shape(p_prev):
        raise ContractError("probability vectors differ in length")
    if is_concrete(p_t) and is_concrete(p_prev):
        if np.any((np.asarray(p_t) > 0) & (np.asarray(p_prev) <= 0)):
            raise DomainError("p_prev has zero mass where p_t is positive")
    log_ratio = jnp.log(jnp.maximum(p_t, _PROB_FLOOR)) - jnp.log(jnp.maximum(p_prev, _PROB_FLOOR))
    return jnp.sum(jnp.where(p_t > 0, p_t * log_ratio, 0.0))


def kl_mixture_upper_bound(q_t, q_prev):
    """Categorical KL plus mixing-weighted component KLs; upper-bounds the mixture KL."""
    if q_t.k != q_prev.k or q_t.dim != q_prev.dim:
        raise ContractError("mixtures differ in number of components or dimension")
    p_t = q_t.probs
    component = _gaussian_terms(q_t.mu, q_t.sigma**2, q_prev.mu, q_prev.sigma**2)
    return kl_categorical(p_t, q_prev.probs) + jnp.sum(p_t * component)


def log_prob_gaussian(d, theta):
    var = d.sigma**2
    return -0.5 * jnp.sum(_LOG_2PI + jnp.log(var) + (theta - d.mu) ** 2 / var, axis=-1)


def log_prob_mixture(m, theta):
    """Exact mixture log-density via log-sum-exp; ``theta`` may carry leading batch axes."""
    theta = jnp.asarray(theta)[..., None, :]
    var = m.sigma**2
    comp = -0.5 * jnp.sum(_LOG_2PI + jnp.log(var) + (theta - m.mu) ** 2 / var, axis=-1)
    return jax.scipy.special.logsumexp(comp + log_softmax(m.logits), axis=-1)


def kl_mixture_mc(q_t, q_prev, n_samples, key, return_stderr=False):
    """Monte Carlo estimate of KL(q_t || q_prev) from exact draws of ``q_t``."""
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    theta = sample_exact(q_t, key, n_samples)
    diff = log_prob_mixture(q_t, theta) - log_prob_mixture(q_prev, theta)
    est = jnp.mean(diff)
    if return_stderr:
        return est, jnp.std(diff) / np.sqrt(n_samples)
    return est


def to_checkpoint(q):
    """Flat ``{key: array}`` mapping with keys ``lambda``, ``mu.<i>``, ``rho.<i>``."""
    out = {}
    if isinstance(q, GaussMixture):
        out["lambda"] = np.asarray(q.logits)
        for i in range(q.k):
            out[f"mu.{i}"] = np.asarray(q.mu[i])
            out[f"rho.{i}"] = np.asarray(q.rho[i])
    else:
        out["mu.0"] = np.asarray(q.mu)
        out["rho.0"] = np.asarray(q.rho)
    return out


def from_checkpoint(arrays):
    if "lambda" in arrays:
        k = len(arrays["lambda"])
        return GaussMixture(
            jnp.asarray(arrays["lambda"]),
            jnp.stack([jnp.asarray(arrays[f"mu.{i}"]) for i in range(k)]),
            jnp.stack([jnp.asarray(arrays[f"rho.{i}"]) for i in range(k)]),
        )
    return DiagGaussian(jnp.asarray(arrays["mu.0"]), jnp.asarray(arrays["rho.0"]))
