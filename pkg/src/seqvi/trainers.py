"""Continual-learning trainers: one call to :func:`train_task` per task.

Each task runs three stages: build the objective from the current prior
(or penalty), minimise it with Adam under a one-cycle schedule, then
update the coreset and the prior / penalty accumulators. The whole
optimisation of a task is a single ``lax.scan``; minibatches, coreset
batches and inducing points are drawn up front with numpy so that every
random choice is fixed by ``(seed, task index)``.
"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
import optax

from seqvi import distributions as dist
from seqvi._validation import ContractError, DomainError, TrainingDivergence, check_2d, check_labels
from seqvi.linearize import InducingSet
from seqvi.nn import FcnnSpec, forward, init_params, init_variational, predict_bma, predict_point
from seqvi.objectives import METHODS, loss, map_objective, method_info, sfsvi_objective, vcl_objective

log = logging.getLogger(__name__)

# named random substreams derived from the single run seed
STREAM_DATA, STREAM_INIT, STREAM_TRAIN, STREAM_CORESET, STREAM_EVAL = range(5)


def substream(seed, stream, *extra):
    """numpy Generator for one named substream of ``seed``."""
    return np.random.default_rng([int(seed), stream, *map(int, extra)])


def subkey(seed, stream, *extra):
    key = jax.random.fold_in(jax.random.PRNGKey(int(seed)), stream)
    for e in extra:
        key = jax.random.fold_in(key, int(e))
    return key


@dataclass(frozen=True)
class TrainerConfig:
    method: str = "l-gm-sfsvi"
    k: int = 3
    base_lr: float = 0.1
    batch_size: int = 16
    epochs: int = 100
    coreset_per_task: int = 16
    n_inducing: int = 16
    temperature: float = 0.1
    straight_through: bool = True
    seed: int = 0
    lambda_reg: float = 1.0
    xi: float = 1.0
    kl_mode: str = "bound"
    kl_scale: float = 1.0
    n_train_samples: int = 10
    init_sigma: float = 0.02
    warmup_frac: float = 0.3
    resample_inducing: bool = True
    # SFSVI learning rate x0.1 and halved batches for replay-based VI methods
    protocol_adjustments: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        for name in ("k", "batch_size", "n_inducing", "n_train_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("epochs", "coreset_per_task"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.base_lr > 0 or not self.temperature > 0 or not self.init_sigma > 0:
            raise ValueError("base_lr, temperature and init_sigma must be positive")
        if self.kl_mode not in ("bound", "mc"):
            raise ValueError("kl_mode must be 'bound' or 'mc'")
        if self.method == "si" and not self.xi > 0:
            raise ValueError("SI damping xi must be positive")

    @property
    def info(self):
        return method_info(self.method)

    @property
    def learning_rate(self):
        if self.protocol_adjustments and self.info.family == "sfsvi":
            return 0.1 * self.base_lr
        return self.base_lr

    def batch_sizes(self, coreset_size):
        """``(current, coreset)`` minibatch sizes given the coreset size."""
        info = self.info
        if not info.replay or coreset_size == 0:
            return self.batch_size, 0
        if info.variational and self.protocol_adjustments:
            half = max(1, self.batch_size // 2)
            return half, half
        return self.batch_size, self.batch_size


@dataclass(frozen=True)
class Coreset:
    inputs: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray

    @classmethod
    def empty(cls, input_dim):
        return cls(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.labels)


def update_coreset(coreset, X, y, per_task, rng, task_id=0):
    """Append ``per_task`` rows drawn uniformly without replacement from ``(X, y)``."""
    if per_task > len(y):
        raise DomainError(f"cannot draw {per_task} coreset points from a task of {len(y)} rows")
    if per_task == 0:
        return coreset
    idx = np.sort(rng.choice(len(y), size=per_task, replace=False))
    return Coreset(
        np.concatenate([coreset.inputs, np.asarray(X)[idx]]),
        np.concatenate([coreset.labels, np.asarray(y)[idx]]),
        np.concatenate([coreset.task_ids, np.full(per_task, task_id, dtype=np.int64)]),
    )


def make_inducing(n, rng, bounds=None, coreset=None, mode="uniform"):
    """``n`` inducing inputs, uniform within per-dimension bounds or drawn from the coreset."""
    if mode == "uniform":
        if bounds is None:
            raise ContractError("uniform inducing points need input bounds")
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
        return InducingSet(rng.uniform(lo, hi, size=(n, len(lo))), "generated-uniform")
    if mode == "from-coreset":
        if coreset is None or len(coreset) == 0:
            raise DomainError("cannot draw inducing points from an empty coreset")
        idx = rng.choice(len(coreset), size=n, replace=n > len(coreset))
        return InducingSet(coreset.inputs[idx], "sampled-from-coreset")
    raise ValueError(f"unknown inducing mode {mode!r}")


@dataclass
class TrainerState:
    spec: FcnnSpec
    head: str
    variational: object
    prior: object = None
    coreset: Coreset = None
    importance: np.ndarray = None
    anchor: np.ndarray = None
    task_index: int = 0
    history: tuple = ()
    seen: tuple = ()


def init_state(spec, cfg, head="multiclass"):
    """Fresh trainer state before the first task (standard-normal prior for VI methods)."""
    info = cfg.info
    key = subkey(cfg.seed, STREAM_INIT)
    n = spec.n_params
    if info.variational:
        k = cfg.k if info.mixture else None
        q = init_variational(spec, key, k=k, sigma=cfg.init_sigma)
        prior = dist.standard_mixture(cfg.k, n) if info.mixture else dist.standard_gaussian(n)
    else:
        q = init_params(spec, jax.random.fold_in(key, 0))
        prior = None
    importance = np.zeros(n) if cfg.method in ("ewc", "si") else None
    return TrainerState(spec, head, q, prior, Coreset.empty(spec.input_dim), importance, None)


@dataclass(frozen=True)
class _Plan:
    method: str
    spec: FcnnSpec
    head: str
    steps: int
    lr: float
    warmup_frac: float
    temperature: float
    kl_mode: str
    n_samples: int
    hard: bool


def one_cycle(base_lr, steps, warmup_frac=0.3):
    """Linear warm-up from ``base_lr / 25`` to ``base_lr``, then cosine decay to ``base_lr / 100``."""
    warmup = int(round(warmup_frac * steps))
    return optax.warmup_cosine_decay_schedule(
        init_value=base_lr / 25.0,
        peak_value=base_lr,
        warmup_steps=warmup,
        decay_steps=max(steps, warmup + 1),
        end_value=base_lr / 100.0,
    )


def _noise(params, key, n_samples):
    if n_samples == 1:
        return dist.draw_noise(key, params)
    z, g = jax.vmap(lambda k: dist.draw_noise(k, params))(jax.random.split(key, n_samples))
    return z, g


@partial(jax.jit, static_argnums=0)
def _run(plan, params, prior, xs, ys, cxs, cys, inds, keys, kl_weight, anchor, importance, strength):
    info = method_info(plan.method)
    opt = optax.adam(one_cycle(plan.lr, plan.steps, plan.warmup_frac))
    track_si = plan.method == "si"

    def step(carry, batch):
        params, opt_state, omega = carry
        x, y, cx, cy, ind, key = batch
        xb = jnp.concatenate([x, cx])
        yb = jnp.concatenate([y, cy])
        if info.family == "vcl":
            obj = lambda p: vcl_objective(
                p, prior, xb, yb, _noise(p, key, plan.n_samples), spec=plan.spec, head=plan.head,
                kl_weight=kl_weight, temperature=plan.temperature, kl_mode=plan.kl_mode, hard=plan.hard,
            )
            (total, terms), g = jax.value_and_grad(obj, has_aux=True)(params)
        elif info.family == "sfsvi":
            obj = lambda p: sfsvi_objective(
                p, prior, xb, yb, _noise(p, key, plan.n_samples), ind, spec=plan.spec, head=plan.head,
                kl_weight=kl_weight, temperature=plan.temperature, hard=plan.hard,
            )
            (total, terms), g = jax.value_and_grad(obj, has_aux=True)(params)
        else:
            (total, terms), g = jax.value_and_grad(
                lambda p: map_objective(
                    p, xb, yb, spec=plan.spec, head=plan.head, anchor=anchor,
                    importance=importance, strength=strength,
                ),
                has_aux=True,
            )(params)
        updates, opt_state = opt.update(g, opt_state, params)
        new = optax.apply_updates(params, updates)
        if track_si:
            g_task = g - strength * importance * (params - anchor)
            omega = omega - g_task * (new - params)
        return (new, opt_state, omega), jnp.stack([total, terms[0], terms[1]])

    omega0 = jnp.zeros_like(params) if track_si else jnp.zeros(())
    (params, _, omega), trace = jax.lax.scan(
        step, (params, opt.init(params), omega0), (xs, ys, cxs, cys, inds, keys)
    )
    return params, omega, trace


def _epoch_batches(m, b, epochs, rng):
    n_batches = -(-m // b)
    out = []
    for _ in range(epochs):
        perm = rng.permutation(m)
        pad = n_batches * b - m
        if pad:
            perm = np.concatenate([perm, perm[:pad]])
        out.append(perm.reshape(n_batches, b))
    if not out:
        return np.zeros((0, b), dtype=np.int64), n_batches
    return np.concatenate(out), n_batches


def _draw_rows(size, b, steps, rng):
    if b == 0 or size == 0:
        return np.zeros((steps, 0), dtype=np.int64)
    if size < b:
        return rng.integers(0, size, size=(steps, b))
    return np.stack([rng.choice(size, size=b, replace=False) for _ in range(steps)])


def _inducing_plan(cfg, state, steps, rng, bounds):
    info = cfg.info
    d = state.spec.input_dim
    if info.family != "sfsvi":
        return np.zeros((steps, 0, d))
    from_coreset = info.focus == "prior" and len(state.coreset) > 0
    mode = "from-coreset" if from_coreset else "uniform"
    if mode == "uniform" and bounds is None:
        raise ContractError("SFSVI methods need input bounds for uniform inducing points")
    draw = lambda: make_inducing(cfg.n_inducing, rng, bounds, state.coreset, mode).points
    if cfg.resample_inducing:
        return np.stack([draw() for _ in range(steps)]) if steps else np.zeros((0, cfg.n_inducing, d))
    fixed = draw()
    return np.broadcast_to(fixed, (steps,) + fixed.shape).copy()


def _empirical_fisher(spec, head, theta, X, y):
    def example_loss(th, x, t):
        return loss(forward(spec, th, x[None]), t[None], head)

    grads = jax.vmap(jax.grad(example_loss), in_axes=(None, 0, 0))(theta, jnp.asarray(X), jnp.asarray(y))
    return np.asarray(jnp.mean(grads**2, axis=0))


def train_task(state, X, y, cfg, bounds=None):
    """Advance ``state`` by one task.

    Args:
        state: state after ``state.task_index`` tasks.
        X, y: training inputs and integer labels of the new task.
        cfg: the :class:`TrainerConfig`.
        bounds: per-dimension ``(lo, hi)`` for uniformly generated inducing points.

    Returns:
        A new :class:`TrainerState`; ``state`` itself is not modified.

    Raises:
        TrainingDivergence: if any step produced a non-finite loss.
    """
    info = cfg.info
    spec = state.spec
    X = check_2d(X, spec.input_dim)
    n_out = 2 if state.head == "binary" else spec.output_dim
    y = check_labels(y, X.shape[0], n_out)
    if X.shape[0] == 0:
        raise ContractError("a task needs at least one training row")
    t = state.task_index

    params = state.variational
    seen = state.seen
    if cfg.method == "joint-map":
        seen = seen + ((X, y),)
        X = np.concatenate([s[0] for s in seen])
        y = np.concatenate([s[1] for s in seen])
        params = init_params(spec, jax.random.fold_in(subkey(cfg.seed, STREAM_INIT), 0))

    rng = substream(cfg.seed, STREAM_TRAIN, t)
    b_cur, b_core = cfg.batch_sizes(len(state.coreset))
    idx, n_batches = _epoch_batches(X.shape[0], b_cur, cfg.epochs, rng)
    steps = idx.shape[0]
    core_idx = _draw_rows(len(state.coreset), b_core, steps, rng)
    inds = _inducing_plan(cfg, state, steps, rng, bounds)

    b_total = b_cur + core_idx.shape[1]
    if info.family == "vcl":
        kl_weight = cfg.kl_scale / (n_batches * b_total)
    elif info.family == "sfsvi":
        ratio = b_cur / (core_idx.shape[1] or b_cur)
        kl_weight = cfg.kl_scale * ratio / b_total
    else:
        kl_weight = 0.0

    anchor = importance = None
    strength = 0.0
    if cfg.method in ("ewc", "si"):
        anchor = jnp.asarray(state.anchor if state.anchor is not None else params)
        importance = jnp.asarray(state.importance)
        strength = cfg.lambda_reg

    omega = None
    trace = np.zeros((0, 3))
    if steps:
        plan = _Plan(
            cfg.method, spec, state.head, steps, cfg.learning_rate, cfg.warmup_frac,
            cfg.temperature, cfg.kl_mode, cfg.n_train_samples, cfg.straight_through,
        )
        keys = jax.random.split(subkey(cfg.seed, STREAM_TRAIN, t), steps)
        label_dtype = jnp.float64 if state.head == "binary" else jnp.int64
        params, omega, trace = _run(
            plan,
            params,
            state.prior,
            jnp.asarray(X[idx]),
            jnp.asarray(y[idx], dtype=label_dtype),
            jnp.asarray(state.coreset.inputs[core_idx]).reshape(steps, -1, spec.input_dim),
            jnp.asarray(state.coreset.labels[core_idx], dtype=label_dtype).reshape(steps, -1),
            jnp.asarray(inds),
            keys,
            kl_weight,
            anchor,
            importance,
            strength,
        )
        trace = np.asarray(trace)
        bad = np.flatnonzero(~np.all(np.isfinite(trace), axis=1))
        if bad.size:
            s = int(bad[0])
            terms = dict(zip(("total", "likelihood", "regulariser"), trace[s].tolist()))
            raise TrainingDivergence(f"{cfg.method}: non-finite loss at task {t + 1}, step {s}: {terms}", s, terms)
        log.debug("%s task %d: %d steps, final loss %.5f", cfg.method, t + 1, steps, trace[-1, 0])

    new = dataclasses.replace(
        state,
        variational=params,
        task_index=t + 1,
        history=state.history + (trace,),
        seen=seen,
    )
    if info.focus == "prior":
        new.prior = params
    if cfg.method == "ewc":
        new.importance = state.importance + _empirical_fisher(spec, state.head, params, X, y)
        new.anchor = np.asarray(params)
    elif cfg.method == "si":
        start = np.asarray(state.variational)
        delta = np.asarray(params) - start
        if omega is not None:
            new.importance = state.importance + np.maximum(np.asarray(omega) / (delta**2 + cfg.xi), 0.0)
        new.anchor = np.asarray(params)
    if info.replay or info.family == "sfsvi":
        per_task = min(cfg.coreset_per_task, len(y))
        crng = substream(cfg.seed, STREAM_CORESET, t)
        new.coreset = update_coreset(state.coreset, X, y, per_task, crng, task_id=t)
    return new


def predict_proba(state, X, n_samples=64, key=None):
    """Class probabilities: model averaging for VI states, point prediction otherwise."""
    X = check_2d(X, state.spec.input_dim)
    if isinstance(state.variational, (dist.DiagGaussian, dist.GaussMixture)):
        return np.asarray(predict_bma(state.spec, state.variational, X, n_samples, key))
    return np.asarray(predict_point(state.spec, state.variational, jnp.asarray(X)))
