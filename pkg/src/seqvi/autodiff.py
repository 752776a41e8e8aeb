"""Differentiation entry points and activations.

Reverse-mode differentiation is delegated to JAX; this module pins the
contracts the rest of the package relies on (scalar outputs for ``grad``,
a ``d x n`` matrix for ``jacobian``) and provides numerically stable
activations in float64.
"""

import jax
import jax.numpy as jnp

from seqvi._validation import ContractError

_SOFTPLUS_CUTOFF = 30.0


def grad(f, at):
    """Gradient of the scalar function ``f`` evaluated at ``at``.

    Raises:
        ContractError: if ``f(at)`` is not a scalar.
    """
    at = jnp.asarray(at, dtype=jnp.float64)
    out = jax.eval_shape(f, at)
    if out.shape not in ((), (1,)):
        raise ContractError(f"grad needs a scalar-valued function, got output shape {out.shape}")
    return jax.grad(lambda a: jnp.reshape(f(a), ()))(at)


def jacobian(f, at, input):
    """Jacobian of ``f(input, theta)`` with respect to ``theta`` at ``at``.

    ``f`` maps a single input and a flat parameter vector to ``d`` outputs.
    One reverse pass is made per output row. Returns a ``(d, n)`` matrix.
    """
    at = jnp.asarray(at, dtype=jnp.float64)
    if at.ndim != 1:
        raise ContractError("parameters must be a flat vector")

    def flat(theta):
        return jnp.ravel(f(input, theta))

    return jax.jacrev(flat)(at)


def sigmoid(x):
    return jax.nn.sigmoid(x)


def softplus(x):
    """``log(1 + exp(x))`` with linear / exponential branches beyond +-30."""
    x = jnp.asarray(x)
    mid = jnp.clip(x, -_SOFTPLUS_CUTOFF, _SOFTPLUS_CUTOFF)
    low = jnp.minimum(x, -_SOFTPLUS_CUTOFF)
    return jnp.where(
        x > _SOFTPLUS_CUTOFF,
        x,
        jnp.where(x < -_SOFTPLUS_CUTOFF, jnp.exp(low), jnp.log1p(jnp.exp(mid))),
    )


def softplus_inverse(y):
    """Inverse of :func:`softplus` for ``y > 0``."""
    y = jnp.asarray(y, dtype=jnp.float64)
    return jnp.where(y > _SOFTPLUS_CUTOFF, y, jnp.log(jnp.expm1(jnp.minimum(y, _SOFTPLUS_CUTOFF))))


def swish(x):
    return x * jax.nn.sigmoid(x)


def log_softmax(x):
    x = jnp.asarray(x)
    shifted = x - jax.lax.stop_gradient(jnp.max(x, axis=-1, keepdims=True))
    return shifted - jnp.log(jnp.sum(jnp.exp(shifted), axis=-1, keepdims=True))


def softmax(x):
    return jnp.exp(log_softmax(x))
