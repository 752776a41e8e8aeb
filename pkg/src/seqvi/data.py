"""Desk-scale task sequences: a synthetic sinusoid (domain-incremental) and split 2-D Iris (class-incremental)."""

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from seqvi._validation import ContractError

SPLITS = ("train", "validation", "test")
IRIS_CLASSES = ("setosa", "versicolor", "virginica")


class ParseError(ValueError):
    def __init__(self, message, row=None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractError("inputs must be 2-D with one label per row")
        if not np.all(np.isfinite(self.inputs)):
            raise ContractError("inputs must be finite")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class TaskSequence:
    name: str
    setting: str  # "class-incremental" or "domain-incremental"
    class_universe: tuple
    tasks: tuple  # of {"train": LabeledDataset, "validation": ..., "test": ...}
    input_dim: int
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)

    def split(self, name):
        return [t[name] for t in self.tasks]


def generate_sinusoid(seed=0, n_tasks=5, n_per_class=100, sigma=0.1, offset=0.5, spacing=np.pi / 2):
    """Five binary tasks with class means at ``(x_t, sin(x_t) -/+ offset)``, ``x_t = t * spacing``.

    Every ``(task, class, split)`` cell holds ``n_per_class`` draws from an
    isotropic Gaussian with standard deviation ``sigma``. Label 1 sits above
    the curve, label 0 below it.
    """
    rng = np.random.default_rng([int(seed), 0])
    tasks = []
    for t in range(n_tasks):
        x = t * spacing
        means = np.array([[x, np.sin(x) - offset], [x, np.sin(x) + offset]])
        task = {}
        for split in SPLITS:
            pts = [rng.normal(means[c], sigma, size=(n_per_class, 2)) for c in (0, 1)]
            labels = np.repeat([0, 1], n_per_class)
            task[split] = LabeledDataset(np.concatenate(pts), labels)
        tasks.append(task)
    params = dict(n_tasks=n_tasks, n_per_class=n_per_class, sigma=sigma, offset=offset, spacing=float(spacing))
    return TaskSequence("di-sinusoid", "domain-incremental", ("below", "above"), tuple(tasks), 2, params)


def read_iris_csv(path=None):
    """Parse ``sepal_len, sepal_wid, petal_len, petal_wid, species`` rows (no header)."""
    if path is None:
        text = resources.files("seqvi").joinpath("data/iris.csv").read_text()
    else:
        text = Path(path).read_text()
    rows, names = [], []
    for i, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", i)
        try:
            rows.append([float(v) for v in row[:4]])
        except ValueError:
            raise ParseError(f"non-numeric feature in {row[:4]}", i) from None
        name = row[4].strip().removeprefix("Iris-")
        if name not in IRIS_CLASSES:
            raise ParseError(f"unknown class {row[4]!r}", i)
        names.append(IRIS_CLASSES.index(name))
    return np.array(rows), np.array(names, dtype=np.int64)


def load_iris_2d(path=None, seed=0):
    """Petal length / width, split 64/16/20 stratified by class, then one task per class."""
    X, y = read_iris_csv(path)
    if X.shape != (150, 4) or set(y.tolist()) != {0, 1, 2}:
        raise ParseError(f"expected 150 rows of 3 classes, got {X.shape[0]} rows")
    X = X[:, 2:4]
    rs = int(seed)
    X_tv, X_te, y_tv, y_te = train_test_split(X, y, test_size=0.2, stratify=y, random_state=rs)
    X_tr, X_va, y_tr, y_va = train_test_split(X_tv, y_tv, test_size=0.2, stratify=y_tv, random_state=rs)
    parts = {"train": (X_tr, y_tr), "validation": (X_va, y_va), "test": (X_te, y_te)}
    tasks = []
    for c in range(3):
        tasks.append({s: LabeledDataset(Xs[ys == c], ys[ys == c]) for s, (Xs, ys) in parts.items()})
    return TaskSequence("ci-split-iris-2d", "class-incremental", IRIS_CLASSES, tuple(tasks), 2, {"seed": rs})


def load_sequence(name, seed=0, iris_path=None, **kwargs):
    if name in ("di-sinusoid", "sinusoid"):
        return generate_sinusoid(seed, **kwargs)
    if name in ("ci-split-iris-2d", "iris"):
        return load_iris_2d(iris_path, seed)
    raise ValueError(f"unknown task sequence {name!r}")


def input_bounds(seq):
    """Per-dimension ``(lo, hi)`` over the training inputs of every task."""
    X = np.concatenate([t["train"].inputs for t in seq.tasks])
    if X.shape[0] == 0:
        raise ContractError("no training inputs")
    return X.min(axis=0), X.max(axis=0)


def export_csv(seq, outdir):
    """Write ``task<t>_<split>.csv`` files with columns ``x1..xD,label``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    header = [f"x{i + 1}" for i in range(seq.input_dim)] + ["label"]
    for t, task in enumerate(seq.tasks, start=1):
        for split in SPLITS:
            ds = task[split]
            with open(outdir / f"task{t}_{split}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(header)
                for x, lab in zip(ds.inputs, ds.labels):
                    w.writerow([repr(float(v)) for v in x] + [int(lab)])
