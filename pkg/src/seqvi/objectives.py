"""Per-step training objectives.

Every objective is a pure function of the trainable state and of
externally supplied noise, so the same call can be differentiated,
finite-differenced, or replayed step for step. Each returns
``(total, (likelihood_term, regulariser_term))``.

Likelihood terms are averaged over the (possibly concatenated) minibatch
and the regulariser weight is given per example: a sum-of-losses
objective ``sum_nll + c * KL`` over a batch of ``b`` rows is passed here
as ``kl_weight = c / b``. Adam is invariant to that constant rescaling.
"""

from typing import NamedTuple

import jax
import jax.numpy as jnp

from seqvi import distributions as dist
from seqvi.autodiff import log_softmax, softplus
from seqvi.linearize import fs_kl, function_moments
from seqvi.nn import forward

METHODS = (
    "joint-map",
    "fine-tune",
    "ewc",
    "si",
    "er",
    "p-g-vcl",
    "l-g-vcl",
    "p-gm-vcl",
    "l-gm-vcl",
    "p-g-sfsvi",
    "l-g-sfsvi",
    "p-gm-sfsvi",
    "l-gm-sfsvi",
)


class MethodInfo(NamedTuple):
    name: str
    family: str  # "map", "vcl" or "sfsvi"
    focus: str | None  # "prior" / "likelihood" for the variational methods
    mixture: bool

    @property
    def variational(self):
        return self.family != "map"

    @property
    def replay(self):
        return self.name == "er" or self.focus == "likelihood"


def method_info(name):
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    if name in ("joint-map", "fine-tune", "ewc", "si", "er"):
        return MethodInfo(name, "map", None, False)
    focus, family, kind = name.split("-")
    return MethodInfo(name, kind, "prior" if focus == "p" else "likelihood", family == "gm")


def loss(logits, labels, head="multiclass"):
    """Mean negative log-likelihood (categorical or binary cross entropy)."""
    if head == "binary":
        z = logits[:, 0]
        return jnp.mean(softplus(z) - labels * z)
    logp = log_softmax(logits)
    return -jnp.mean(jnp.take_along_axis(logp, labels[:, None].astype(jnp.int32), axis=1))


def draw(q, noise, temperature, hard=False):
    """Reparameterised parameter draw from pre-sampled ``(normal, gumbel)`` noise."""
    z, g = noise
    if isinstance(q, dist.GaussMixture):
        return dist.sample_mixture(q, temperature, z, g, hard)
    return dist.sample_gaussian(q, z)


def param_kl(q, prior, theta=None, mode="bound"):
    """KL in parameter space: closed form, the mixture upper bound, or a one-draw MC term."""
    if isinstance(q, dist.DiagGaussian):
        return dist.kl_diag_gaussian(q, prior)
    if mode == "mc":
        return dist.log_prob_mixture(q, theta) - dist.log_prob_mixture(prior, theta)
    return dist.kl_mixture_upper_bound(q, prior)


def expected_nll(q, x, y, noise, *, spec, head, temperature=0.1, hard=False):
    """Monte Carlo NLL; ``noise`` may carry a leading axis of independent draws.

    Returns the mean NLL and the parameter draws used.
    """
    z, g = noise
    if jnp.ndim(z) == jnp.ndim(q.mu):
        theta = draw(q, noise, temperature, hard)
        return loss(forward(spec, theta, x), y, head), theta

    def one(zz, gg):
        theta = draw(q, (zz, gg), temperature, hard)
        return loss(forward(spec, theta, x), y, head), theta

    vals, thetas = jax.vmap(one)(z, g if g is not None else jnp.zeros(jnp.shape(z)[:1]))
    return jnp.mean(vals), thetas


def vcl_objective(
    q, prior, x, y, noise, *, spec, head, kl_weight, temperature=0.1, kl_mode="bound", hard=False
):
    """Parameter-space free energy: expected NLL plus weighted KL to the prior."""
    nll, theta = expected_nll(q, x, y, noise, spec=spec, head=head, temperature=temperature, hard=hard)
    kl = jnp.mean(param_kl(q, prior, theta, kl_mode))
    return nll + kl_weight * kl, (nll, kl)


def sfsvi_objective(q, prior, x, y, noise, inducing, *, spec, head, kl_weight, temperature=0.1, hard=False):
    """Function-space free energy: expected NLL plus weighted KL between linearised output moments."""
    nll, _ = expected_nll(q, x, y, noise, spec=spec, head=head, temperature=temperature, hard=hard)
    prior = jax.lax.stop_gradient(prior)
    kl = fs_kl(function_moments(spec, q, inducing), function_moments(spec, prior, inducing))
    return nll + kl_weight * kl, (nll, kl)


def quadratic_penalty(theta, anchor, importance, strength):
    return 0.5 * strength * jnp.sum(importance * (theta - anchor) ** 2)


def map_objective(theta, x, y, *, spec, head, anchor=None, importance=None, strength=0.0):
    nll = loss(forward(spec, theta, x), y, head)
    pen = 0.0 if anchor is None else quadratic_penalty(theta, anchor, importance, strength)
    return nll + pen, (nll, pen)
