"""Experiment runs: train through a task sequence, score, and write metrics, checkpoints and grids."""

import csv
import dataclasses
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np
import yaml

from seqvi import distributions as dist
from seqvi._validation import ContractError, TrainingDivergence
from seqvi.data import input_bounds, load_sequence
from seqvi.nn import FcnnSpec, decide
from seqvi.trainers import (
    STREAM_EVAL,
    Coreset,
    TrainerConfig,
    TrainerState,
    init_state,
    predict_proba,
    subkey,
    train_task,
)

log = logging.getLogger(__name__)

OUT_ENV = "SEQVI_OUT"
EWC_GRID = {"lambda_reg": (1.0, 10.0, 100.0, 1000.0, 10000.0)}
SI_GRID = {"lambda_reg": (1.0, 10.0, 100.0, 1000.0, 10000.0), "xi": (0.1, 1.0, 10.0)}


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 64
    grid_resolution: int = 50


@dataclass(frozen=True)
class RunConfig:
    sequence: str
    trainer: TrainerConfig
    seed: int = 0
    eval: EvalConfig = EvalConfig()
    hidden: tuple = (16, 16)
    out: str = "runs/default"
    iris_path: str = None
    sequence_params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        seq = doc.pop("sequence")
        if isinstance(seq, str):
            seq = {"name": seq}
        seq = dict(seq)
        seed = int(doc.pop("seed", 0))
        trainer = dict(doc.pop("trainer", {}))
        trainer["seed"] = seed
        ev = EvalConfig(**doc.pop("eval", {}))
        cfg = cls(
            sequence=seq.pop("name"),
            iris_path=seq.pop("path", None),
            hidden=tuple(seq.pop("hidden", doc.pop("hidden", (16, 16)))),
            sequence_params=seq,
            trainer=TrainerConfig(**trainer),
            seed=seed,
            eval=ev,
            out=str(doc.pop("out", f"runs/{trainer.get('method', 'run')}")),
        )
        if doc:
            raise ValueError(f"unknown config keys: {sorted(doc)}")
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed), trainer=dataclasses.replace(self.trainer, seed=int(seed)))

    def to_dict(self):
        seq = {"name": self.sequence, **self.sequence_params}
        if self.iris_path:
            seq["path"] = self.iris_path
        trainer = dataclasses.asdict(self.trainer)
        trainer.pop("seed")
        return {
            "sequence": seq,
            "hidden": list(self.hidden),
            "seed": self.seed,
            "trainer": trainer,
            "eval": dataclasses.asdict(self.eval),
            "out": self.out,
        }

    def output_dir(self):
        out = Path(self.out)
        root = os.environ.get(OUT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


@dataclass(frozen=True)
class MetricsRow:
    method: str
    task: int
    accuracies: tuple

    @property
    def average_accuracy(self):
        return float(np.mean(self.accuracies))


@dataclass
class RunResult:
    config: RunConfig
    rows: list
    states: list
    error: str = None

    @property
    def faa(self):
        return final_average_accuracy(self.rows, len(self.states) if self.error is None else None)


def final_average_accuracy(rows, n_tasks=None):
    """Mean test accuracy of the last row, which must cover every task."""
    if not rows:
        raise ContractError("no metrics rows")
    last = max(rows, key=lambda r: r.task)
    if n_tasks is not None and last.task != n_tasks:
        raise ContractError(f"final task {n_tasks} missing from metrics rows")
    return float(np.mean(last.accuracies))


def build_spec(seq, hidden=(16, 16)):
    n_classes = len(seq.class_universe)
    head = "binary" if seq.setting == "domain-incremental" and n_classes == 2 else "multiclass"
    return FcnnSpec(seq.input_dim, hidden, 1 if head == "binary" else n_classes), head


def accuracy(state, ds, n_samples, key):
    probs = predict_proba(state, ds.inputs, n_samples, key)
    return float(np.mean(decide(probs) == ds.labels))


def train_sequence(seq, cfg, hidden=(16, 16), n_eval_samples=64, split="test"):
    """Train ``cfg.method`` through ``seq``; return metrics rows and the state after each task.

    Raises :class:`TrainingDivergence` with the partial rows attached as ``.rows``.
    """
    spec, head = build_spec(seq, hidden)
    bounds = input_bounds(seq)
    state = init_state(spec, cfg, head)
    rows, states = [], []
    evals = seq.split(split)

    def score(st, t):
        key = subkey(cfg.seed, STREAM_EVAL, t)
        return MetricsRow(cfg.method, t, tuple(accuracy(st, evals[i], n_eval_samples, key) for i in range(t)))

    if cfg.method == "joint-map":
        train = seq.split("train")
        X = np.concatenate([d.inputs for d in train])
        y = np.concatenate([d.labels for d in train])
        state = train_task(state, X, y, cfg, bounds)
        for t in range(1, len(seq) + 1):
            rows.append(score(state, t))
            states.append(state)
        return rows, states

    for t, task in enumerate(seq.tasks, start=1):
        try:
            state = train_task(state, task["train"].inputs, task["train"].labels, cfg, bounds)
        except TrainingDivergence as e:
            e.rows, e.states = rows, states
            raise
        rows.append(score(state, t))
        states.append(state)
    return rows, states


def tune(seq, cfg, grid=None, hidden=(16, 16), n_eval_samples=64):
    """Pick penalty hyperparameters by validation final average accuracy (first best wins)."""
    if grid is None:
        grid = SI_GRID if cfg.method == "si" else EWC_GRID
    names = sorted(grid)
    best, best_score = cfg, -1.0
    for values in np.array(np.meshgrid(*[grid[n] for n in names], indexing="ij")).reshape(len(names), -1).T:
        cand = dataclasses.replace(cfg, **{n: float(v) for n, v in zip(names, values)})
        try:
            rows, _ = train_sequence(seq, cand, hidden, n_eval_samples, split="validation")
        except TrainingDivergence:
            continue
        score = final_average_accuracy(rows)
        log.info("tune %s %s -> %.4f", cfg.method, dict(zip(names, values)), score)
        if score > best_score:
            best, best_score = cand, score
    return best, best_score


def metrics_csv(rows, n_tasks):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "task"] + [f"acc_{i}" for i in range(1, n_tasks + 1)] + ["avg"])
    for r in rows:
        accs = [repr(a) for a in r.accuracies] + [""] * (n_tasks - len(r.accuracies))
        w.writerow([r.method, r.task] + accs + [repr(r.average_accuracy)])
    return buf.getvalue()


def read_metrics(path):
    rows = []
    with open(path) as f:
        for rec in csv.DictReader(f):
            accs = tuple(float(v) for k, v in rec.items() if k.startswith("acc_") and v != "")
            rows.append(MetricsRow(rec["method"], int(rec["task"]), accs))
    return rows


def state_to_arrays(state):
    out = {}
    q = state.variational
    if isinstance(q, (dist.DiagGaussian, dist.GaussMixture)):
        out.update(dist.to_checkpoint(q))
    else:
        out["theta"] = np.asarray(q)
    if state.prior is not None:
        out.update({f"prior.{k}": v for k, v in dist.to_checkpoint(state.prior).items()})
    out["coreset.inputs"] = state.coreset.inputs
    out["coreset.labels"] = state.coreset.labels
    out["coreset.task_ids"] = state.coreset.task_ids
    if state.importance is not None:
        out["importance"] = np.asarray(state.importance)
    if state.anchor is not None:
        out["anchor"] = np.asarray(state.anchor)
    out["task_index"] = np.array(state.task_index)
    return out


def state_from_arrays(arrays, spec, head):
    arrays = dict(arrays)
    if "theta" in arrays:
        q = jnp.asarray(arrays["theta"])
    else:
        q = dist.from_checkpoint({k: arrays[k] for k in arrays if k.split(".")[0] in ("lambda", "mu", "rho")})
    prior_keys = {k.removeprefix("prior."): v for k, v in arrays.items() if k.startswith("prior.")}
    prior = dist.from_checkpoint(prior_keys) if prior_keys else None
    coreset = Coreset(arrays["coreset.inputs"], arrays["coreset.labels"], arrays["coreset.task_ids"])
    return TrainerState(
        spec, head, q, prior, coreset, arrays.get("importance"), arrays.get("anchor"), int(arrays["task_index"])
    )


def save_checkpoint(state, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **state_to_arrays(state))


def load_checkpoint(path, spec, head):
    with np.load(path) as z:
        return state_from_arrays({k: z[k] for k in z.files}, spec, head)


def grid_rows(state, bounds, resolution, n_samples=64, key=None):
    """Lattice ``resolution x resolution`` over ``bounds``; returns ``(points, probabilities)``."""
    if state.spec.input_dim != 2:
        raise ContractError("prediction grids need a 2-D input space")
    if resolution < 1:
        raise ContractError("resolution must be at least 1")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    g1, g2 = np.meshgrid(np.linspace(lo[0], hi[0], resolution), np.linspace(lo[1], hi[1], resolution), indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    return pts, predict_proba(state, pts, n_samples, key)


def export_grid(state, bounds, resolution, path, n_samples=64, key=None, class_names=None):
    pts, probs = grid_rows(state, bounds, resolution, n_samples, key)
    names = class_names or [str(i + 1) for i in range(probs.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x1", "x2"] + [f"p_{n}" for n in names])
        for p, pr in zip(pts, probs):
            w.writerow([repr(float(v)) for v in p] + [repr(float(v)) for v in pr])
    return path


def run(config):
    """Execute one configured run and write its files; returns a :class:`RunResult`."""
    seq = load_sequence(config.sequence, config.seed, config.iris_path, **config.sequence_params)
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.trainer
    error = None
    try:
        rows, states = train_sequence(seq, cfg, config.hidden, config.eval.n_samples)
    except TrainingDivergence as e:
        rows, states, error = e.rows, e.states, str(e)
        log.error("%s", error)
    (out / "metrics.csv").write_text(metrics_csv(rows, len(seq)))
    for t, st in enumerate(states, start=1):
        save_checkpoint(st, out / "checkpoints" / f"{cfg.method}_task{t}.npz")
    if error is None:
        key = subkey(cfg.seed, STREAM_EVAL, len(seq) + 1)
        export_grid(
            states[-1], input_bounds(seq), config.eval.grid_resolution, out / "grid.csv",
            config.eval.n_samples, key, list(seq.class_universe) if seq.setting == "class-incremental" else None,
        )
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "sequence": {"name": seq.name, "setting": seq.setting, "params": seq.params},
        "metrics": [{"task": r.task, "accuracies": list(r.accuracies), "avg": r.average_accuracy} for r in rows],
        "final_average_accuracy": final_average_accuracy(rows) if rows and error is None else None,
        "error": error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return RunResult(config, rows, states, error)
