"""Fully connected networks evaluated from a flat parameter vector."""

from dataclasses import dataclass
from functools import cached_property, partial

import jax
import jax.numpy as jnp
import numpy as np

from seqvi import distributions as dist
from seqvi._validation import ContractError, DomainError
from seqvi.autodiff import jacobian, sigmoid, softmax, softplus_inverse, swish

INIT_SIGMA = 0.02


@dataclass(frozen=True)
class FcnnSpec:
    """Layer widths of a swish MLP with a linear output layer.

    The flat parameter vector stores, layer by layer, the row-major
    ``(fan_in, fan_out)`` weight matrix followed by the bias.
    """

    input_dim: int
    hidden: tuple = (16, 16)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.output_dim) + self.hidden) < 1:
            raise ContractError("all layer widths must be at least 1")

    @property
    def widths(self):
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    @cached_property
    def registry(self):
        """``[(name, slice, shape), ...]`` partitioning ``[0, n_params)``."""
        out, start = [], 0
        w = self.widths
        for i, (a, b) in enumerate(zip(w[:-1], w[1:])):
            out.append((f"W{i}", slice(start, start + a * b), (a, b)))
            start += a * b
            out.append((f"b{i}", slice(start, start + b), (b,)))
            start += b
        return tuple(out)

    @property
    def n_params(self):
        w = self.widths
        return sum((a + 1) * b for a, b in zip(w[:-1], w[1:]))

    def unflatten(self, theta):
        return {name: theta[sl].reshape(shape) for name, sl, shape in self.registry}


def forward(spec, theta, x):
    """Logits (pre final activation) for a batch ``x`` of shape ``(m, input_dim)``."""
    x = jnp.asarray(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"input of shape {x.shape} does not match input_dim={spec.input_dim}")
    if theta.shape[-1] != spec.n_params:
        raise ContractError(f"theta has {theta.shape[-1]} entries, spec needs {spec.n_params}")
    p = spec.unflatten(theta)
    n_layers = len(spec.widths) - 1
    h = x
    for i in range(n_layers):
        h = h @ p[f"W{i}"] + p[f"b{i}"]
        if i < n_layers - 1:
            h = swish(h)
    return h


def param_jacobian(spec, theta, x):
    """``(output_dim, n_params)`` Jacobian of the logits at a single input."""
    return jacobian(lambda xi, th: forward(spec, th, xi[None, :])[0], theta, jnp.asarray(x))


def batch_jacobian(spec, theta, xs):
    """Stacked Jacobians ``(m, output_dim, n_params)`` for the rows of ``xs``."""
    return jax.vmap(lambda xi: jax.jacrev(lambda th: forward(spec, th, xi[None, :])[0])(theta))(xs)


def init_params(spec, key):
    """He-style normal init scaled by fan-in; biases start at zero."""
    parts = []
    for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        key, sub = jax.random.split(key)
        parts.append(jnp.ravel(jax.random.normal(sub, (a, b)) * np.sqrt(2.0 / a)))
        parts.append(jnp.zeros(b))
    return jnp.concatenate(parts)


def init_variational(spec, key, k=None, sigma=INIT_SIGMA):
    """Initial variational state: one Gaussian, or ``k`` mixture components with equal weights.

    Component ``i`` uses ``fold_in(key, i)`` so a one-component mixture
    starts from exactly the Gaussian's means.
    """
    rho0 = float(softplus_inverse(sigma))
    if k is None:
        mu = init_params(spec, jax.random.fold_in(key, 0))
        return dist.DiagGaussian(mu, jnp.full(spec.n_params, rho0))
    mu = jnp.stack([init_params(spec, jax.random.fold_in(key, i)) for i in range(k)])
    return dist.GaussMixture(jnp.zeros(k), mu, jnp.full((k, spec.n_params), rho0))


def probabilities(logits):
    """Class probabilities; a single-logit head is expanded to ``[1 - p, p]``."""
    if logits.shape[-1] == 1:
        p = sigmoid(logits)
        return jnp.concatenate([1.0 - p, p], axis=-1)
    return softmax(logits)


def predict_point(spec, theta, x):
    return probabilities(forward(spec, theta, x))


def predict_bma(spec, posterior, x, n_samples=64, key=None):
    """Bayesian model average of predictive probabilities over ``n_samples`` posterior draws."""
    if n_samples < 1:
        raise DomainError("n_samples must be at least 1")
    if key is None:
        key = jax.random.PRNGKey(0)
    x = jnp.asarray(x, dtype=jnp.float64)
    thetas = dist.sample_exact(posterior, key, n_samples)
    return _bma(spec, thetas, x)


@partial(jax.jit, static_argnums=0)
def _bma(spec, thetas, x):
    return jnp.mean(jax.vmap(lambda th: predict_point(spec, th, x))(thetas), axis=0)


def decide(probs):
    """Argmax with lowest-index tie-break (probability 0.5 for binary heads)."""
    probs = np.asarray(probs)
    if probs.shape[1] == 2:
        return (probs[:, 1] > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1)
