import jax
from jax.flatten_util import ravel_pytree
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from seqvi import distributions as dist
from seqvi._validation import ContractError, DomainError
from seqvi.autodiff import softplus_inverse

from conftest import central_diff


def gaussian(mu, sigma):
    return dist.DiagGaussian(jnp.asarray(mu, float), softplus_inverse(jnp.asarray(sigma, float)))


def random_gaussian(rng, n):
    return gaussian(rng.normal(size=n), rng.uniform(0.3, 2.0, size=n))


def random_mixture(rng, k, n, spread=1.0):
    return dist.GaussMixture(
        jnp.asarray(rng.normal(size=k)),
        jnp.asarray(rng.normal(scale=spread, size=(k, n))),
        softplus_inverse(jnp.asarray(rng.uniform(0.4, 1.5, size=(k, n)))),
    )


def np_mixture_logpdf(m, x):
    """Independent numpy/scipy mixture density, used as an oracle."""
    logp = np.log(np.asarray(m.probs))
    mu, sd = np.asarray(m.mu), np.asarray(m.sigma)
    comp = stats.norm.logpdf(x[:, None, :], mu, sd).sum(-1)
    return logsumexp(comp + logp, axis=1)


def np_mixture_draws(m, n, rng):
    p = np.asarray(m.probs)
    idx = rng.choice(len(p), size=n, p=p)
    mu, sd = np.asarray(m.mu), np.asarray(m.sigma)
    return mu[idx] + sd[idx] * rng.standard_normal((n, mu.shape[1]))


# ---- containers -------------------------------------------------------------

def test_sigma_positive_even_for_very_negative_rho():
    d = dist.DiagGaussian(jnp.zeros(3), jnp.array([-200.0, -30.0, 5.0]))
    assert np.all(np.asarray(d.sigma) > 0)


def test_mixture_rejects_mismatched_components():
    with pytest.raises(ContractError):
        dist.GaussMixture.from_components([0.0, 0.0], [dist.standard_gaussian(2), dist.standard_gaussian(3)])


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6))
def test_mixing_probabilities_on_simplex(logits):
    m = dist.standard_mixture(len(logits), 2)._replace(logits=jnp.array(logits))
    p = np.asarray(m.probs)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)


# ---- sampling ---------------------------------------------------------------

def test_zero_noise_gives_mean():
    d = gaussian([1.0, -2.0], [0.5, 3.0])
    np.testing.assert_array_equal(dist.sample_gaussian(d, jnp.zeros(2)), d.mu)


def test_standard_gaussian_passes_noise_through(rng):
    z = rng.normal(size=4)
    np.testing.assert_allclose(dist.sample_gaussian(dist.standard_gaussian(4), z), z, rtol=1e-14)


def test_sample_gaussian_length_mismatch():
    with pytest.raises(ContractError):
        dist.sample_gaussian(dist.standard_gaussian(3), jnp.zeros(2))


def test_gaussian_sample_mean(rng):
    d = gaussian(rng.normal(size=5), rng.uniform(0.5, 2, size=5))
    n = 100_000
    z = jax.random.normal(jax.random.PRNGKey(0), (n, 5))
    draws = np.asarray(jax.vmap(lambda zz: dist.sample_gaussian(d, zz))(z))
    assert np.all(np.abs(draws.mean(0) - np.asarray(d.mu)) < 3 * np.asarray(d.sigma) / np.sqrt(n))


def test_gumbel_softmax_rejects_nonpositive_temperature():
    with pytest.raises(DomainError):
        dist.sample_gumbel_softmax(jnp.zeros(2), 0.0, jnp.zeros(2))


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=5), st.floats(0.05, 5.0))
def test_gumbel_softmax_weights_on_simplex(logits, temp):
    g = np.random.default_rng(len(logits)).gumbel(size=len(logits))
    w = np.asarray(dist.sample_gumbel_softmax(jnp.array(logits), temp, jnp.asarray(g)).weights)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-9)


def test_gumbel_softmax_low_temperature_is_one_hot(rng):
    lam, g = rng.normal(size=4), rng.gumbel(size=4)
    w = np.asarray(dist.sample_gumbel_softmax(jnp.asarray(lam), 1e-4, jnp.asarray(g)).weights)
    np.testing.assert_allclose(w, np.eye(4)[np.argmax(lam + g)], atol=1e-9)


def test_gumbel_argmax_frequency_uniform_logits():
    n = 100_000
    g = jax.random.gumbel(jax.random.PRNGKey(3), (n, 2))
    w = jax.vmap(lambda gg: dist.sample_gumbel_softmax(jnp.zeros(2), 1.0, gg).weights)(g)
    assert float(jnp.mean(jnp.argmax(w, axis=1) == 1)) == pytest.approx(0.5, abs=0.005)


def test_straight_through_forward_is_one_hot_and_backward_is_soft():
    lam = jnp.array([0.3, 1.0, -0.2])
    f = lambda l: dist.straight_through(jax.nn.softmax(l))
    np.testing.assert_array_equal(f(lam), [0.0, 1.0, 0.0])
    jac_st = jax.jacobian(f)(lam)
    np.testing.assert_allclose(jac_st, jax.jacobian(jax.nn.softmax)(lam), atol=1e-15)


def test_single_component_mixture_equals_gaussian(rng):
    g = random_gaussian(rng, 6)
    m = dist.GaussMixture.from_components([0.4], [g])
    z = rng.normal(size=(1, 6))
    for hard in (False, True):
        np.testing.assert_array_equal(
            dist.sample_mixture(m, 0.1, jnp.asarray(z), jnp.array([0.7]), hard), dist.sample_gaussian(g, z[0])
        )


def test_identical_components_ignore_logits(rng):
    g = random_gaussian(rng, 3)
    z = jnp.asarray(np.repeat(rng.normal(size=(1, 3)), 3, axis=0))
    outs = [
        dist.sample_mixture(dist.GaussMixture.from_components(lam, [g] * 3), 0.5, z, jnp.asarray(rng.gumbel(size=3)))
        for lam in ([0.0, 0.0, 0.0], [5.0, -1.0, 2.0])
    ]
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-13)
    np.testing.assert_allclose(outs[0], dist.sample_gaussian(g, z[0]), rtol=1e-13)


def test_low_temperature_mixture_mean(rng):
    m = random_mixture(rng, 3, 2, spread=2.0)
    n = 100_000
    keys = jax.random.split(jax.random.PRNGKey(7), n)
    draws = np.asarray(jax.vmap(lambda k: dist.sample(m, k, 1e-4))(keys))
    mean = (np.asarray(m.probs)[:, None] * np.asarray(m.mu)).sum(0)
    se = draws.std(0) / np.sqrt(n)
    assert np.all(np.abs(draws.mean(0) - mean) < 4 * se)


def test_sample_exact_matches_mixture_moments(rng):
    m = random_mixture(rng, 3, 2, spread=2.0)
    draws = np.asarray(dist.sample_exact(m, jax.random.PRNGKey(1), 100_000))
    ref = np_mixture_draws(m, 400_000, rng)
    se = np.sqrt(draws.var(0) / 100_000 + ref.var(0) / 400_000)
    assert np.all(np.abs(draws.mean(0) - ref.mean(0)) < 4 * se)


def test_draw_noise_k1_shares_gaussian_stream():
    key = jax.random.PRNGKey(11)
    z_g, _ = dist.draw_noise(key, dist.standard_gaussian(5))
    z_m, _ = dist.draw_noise(key, dist.standard_mixture(1, 5))
    np.testing.assert_array_equal(z_g, z_m[0])


# ---- KL terms ---------------------------------------------------------------

def test_kl_identity_and_analytic():
    q = gaussian([0.3, -1.0], [0.5, 2.0])
    assert float(dist.kl_diag_gaussian(q, q)) == pytest.approx(0.0, abs=1e-14)
    assert float(dist.kl_diag_gaussian(gaussian([1.0], [1.0]), gaussian([0.0], [1.0]))) == pytest.approx(0.5)


def test_kl_dimension_mismatch():
    with pytest.raises(ContractError):
        dist.kl_diag_gaussian(dist.standard_gaussian(2), dist.standard_gaussian(3))


def test_kl_gaussian_matches_scipy_entropy_formula(rng):
    # per-coordinate KL from scipy's differential entropy and cross entropy
    q, p = random_gaussian(rng, 4), random_gaussian(rng, 4)
    mq, sq, mp, sp = (np.asarray(a) for a in (q.mu, q.sigma, p.mu, p.sigma))
    cross = 0.5 * np.log(2 * np.pi * sp**2) + (sq**2 + (mq - mp) ** 2) / (2 * sp**2)
    ref = np.sum(cross - stats.norm(mq, sq).entropy())
    assert float(dist.kl_diag_gaussian(q, p)) == pytest.approx(ref, rel=1e-12)


def test_kl_gaussian_mc_dim10(rng):
    q, p = random_gaussian(rng, 10), random_gaussian(rng, 10)
    n = 1_000_000
    x = np.asarray(q.mu) + np.asarray(q.sigma) * rng.standard_normal((n, 10))
    diff = stats.norm.logpdf(x, q.mu, q.sigma).sum(1) - stats.norm.logpdf(x, p.mu, p.sigma).sum(1)
    assert abs(float(dist.kl_diag_gaussian(q, p)) - diff.mean()) < 3 * diff.std() / np.sqrt(n)


def test_kl_categorical_examples():
    assert float(dist.kl_categorical(jnp.array([0.2, 0.8]), jnp.array([0.2, 0.8]))) == 0.0
    ref = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
    assert float(dist.kl_categorical(jnp.array([0.5, 0.5]), jnp.array([0.25, 0.75]))) == pytest.approx(ref, abs=1e-12)
    assert ref == pytest.approx(0.143841, abs=1e-6)
    assert float(dist.kl_categorical(jnp.array([1.0, 0.0]), jnp.array([0.5, 0.5]))) == pytest.approx(np.log(2), abs=1e-12)


def test_kl_categorical_support_violation():
    with pytest.raises(DomainError):
        dist.kl_categorical(jnp.array([0.5, 0.5]), jnp.array([1.0, 0.0]))


def test_upper_bound_identity_and_k1(rng):
    m = random_mixture(rng, 3, 4)
    assert float(dist.kl_mixture_upper_bound(m, m)) == pytest.approx(0.0, abs=1e-13)
    a, b = random_gaussian(rng, 4), random_gaussian(rng, 4)
    ma = dist.GaussMixture.from_components([0.0], [a])
    mb = dist.GaussMixture.from_components([0.0], [b])
    assert float(dist.kl_mixture_upper_bound(ma, mb)) == float(dist.kl_diag_gaussian(a, b))


def test_upper_bound_dominates_mc_kl(rng):
    q, p = random_mixture(rng, 3, 5), random_mixture(rng, 3, 5)
    x = np_mixture_draws(q, 1_000_000, rng)
    diff = np_mixture_logpdf(q, x) - np_mixture_logpdf(p, x)
    assert float(dist.kl_mixture_upper_bound(q, p)) >= diff.mean() - 3 * diff.std() / 1000.0


def test_log_prob_mixture_matches_scipy(rng):
    m = random_mixture(rng, 3, 4)
    x = rng.normal(size=(20, 4))
    np.testing.assert_allclose(dist.log_prob_mixture(m, jnp.asarray(x)), np_mixture_logpdf(m, x), rtol=1e-12)


def test_mc_kl_identity_within_stderr(rng):
    m = random_mixture(rng, 2, 3)
    est, se = dist.kl_mixture_mc(m, m, 1000, jax.random.PRNGKey(0), return_stderr=True)
    assert abs(float(est)) <= 3 * float(se) + 1e-15


def test_mc_kl_k1_converges_to_closed_form(rng):
    a, b = random_gaussian(rng, 3), random_gaussian(rng, 3)
    ma = dist.GaussMixture.from_components([0.0], [a])
    mb = dist.GaussMixture.from_components([0.0], [b])
    est, se = dist.kl_mixture_mc(ma, mb, 200_000, jax.random.PRNGKey(2), return_stderr=True)
    assert abs(float(est) - float(dist.kl_diag_gaussian(a, b))) < 3 * float(se)


def test_mc_kl_rejects_zero_samples():
    with pytest.raises(DomainError):
        dist.kl_mixture_mc(dist.standard_mixture(2, 2), dist.standard_mixture(2, 2), 0, jax.random.PRNGKey(0))


def test_kl_gradients_match_fd(rng):
    q, p = random_mixture(rng, 2, 3), random_mixture(rng, 2, 3)
    flat, unravel = ravel_pytree(q)
    f = lambda v: dist.kl_mixture_upper_bound(unravel(jnp.asarray(v)), p)
    np.testing.assert_allclose(jax.grad(f)(flat), central_diff(f, np.asarray(flat)), rtol=1e-6, atol=1e-8)


# ---- checkpoint layout --------------------------------------------------------

def test_checkpoint_roundtrip(rng):
    m = random_mixture(rng, 3, 4)
    arrays = dist.to_checkpoint(m)
    assert set(arrays) == {"lambda", "mu.0", "mu.1", "mu.2", "rho.0", "rho.1", "rho.2"}
    back = dist.from_checkpoint(arrays)
    for a, b in zip(m, back):
        np.testing.assert_array_equal(a, b)
    g = random_gaussian(rng, 4)
    back = dist.from_checkpoint(dist.to_checkpoint(g))
    assert isinstance(back, dist.DiagGaussian)
    np.testing.assert_array_equal(back.mu, g.mu)
