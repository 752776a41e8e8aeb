"""scikit-learn facade over the trainers.

``partial_fit`` consumes one task of a sequence; ``fit`` starts over and
treats its input as a single task.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.multiclass import unique_labels

from seqvi._validation import check_2d
from seqvi.nn import FcnnSpec, decide
from seqvi.trainers import STREAM_EVAL, TrainerConfig, init_state, predict_proba, subkey, train_task


class ContinualClassifier(ClassifierMixin, BaseEstimator):
    """Single-head classifier trained task by task with a continual-learning method.

    Parameters
    ----------
    method : str
        One of :data:`seqvi.objectives.METHODS`, e.g. ``"l-gm-sfsvi"``.
    hidden : tuple of int
        Hidden layer widths of the swish MLP.
    n_components : int
        Mixture components for the ``gm`` methods.
    classes : array-like or None
        Label universe of the whole sequence. Required when the first task
        does not contain every class (class-incremental sequences).
    head : {"auto", "multiclass", "binary"}
        ``"auto"`` uses a single sigmoid logit when there are two classes.
    inducing_bounds : tuple of arrays or None
        Per-dimension ``(lo, hi)`` for uniformly generated inducing points.
        Defaults to the range of the first task's inputs.
    n_predict_samples : int
        Posterior draws averaged by ``predict_proba`` for variational methods.
    """

    def __init__(
        self,
        method="l-gm-sfsvi",
        hidden=(16, 16),
        n_components=3,
        base_lr=0.1,
        batch_size=16,
        epochs=100,
        coreset_per_task=16,
        n_inducing=16,
        temperature=0.1,
        kl_mode="bound",
        reg_strength=1.0,
        damping=1.0,
        classes=None,
        head="auto",
        inducing_bounds=None,
        n_predict_samples=64,
        random_state=0,
    ):
        self.method = method
        self.hidden = hidden
        self.n_components = n_components
        self.base_lr = base_lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.coreset_per_task = coreset_per_task
        self.n_inducing = n_inducing
        self.temperature = temperature
        self.kl_mode = kl_mode
        self.reg_strength = reg_strength
        self.damping = damping
        self.classes = classes
        self.head = head
        self.inducing_bounds = inducing_bounds
        self.n_predict_samples = n_predict_samples
        self.random_state = random_state

    def _config(self):
        return TrainerConfig(
            method=self.method,
            k=self.n_components,
            base_lr=self.base_lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            coreset_per_task=self.coreset_per_task,
            n_inducing=self.n_inducing,
            temperature=self.temperature,
            kl_mode=self.kl_mode,
            lambda_reg=self.reg_strength,
            xi=self.damping,
            seed=self.random_state,
        )

    def _setup(self, X, y):
        classes = self.classes if self.classes is not None else unique_labels(y)
        self.classes_ = np.asarray(classes)
        n_classes = len(self.classes_)
        head = self.head
        if head == "auto":
            head = "binary" if n_classes == 2 else "multiclass"
        self.head_ = head
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config()
        self.spec_ = FcnnSpec(X.shape[1], tuple(self.hidden), 1 if head == "binary" else n_classes)
        if self.inducing_bounds is not None:
            self.bounds_ = tuple(np.asarray(b, dtype=float) for b in self.inducing_bounds)
        else:
            self.bounds_ = (X.min(axis=0), X.max(axis=0))
        self.state_ = init_state(self.spec_, self.config_, head)

    def _encode(self, y):
        lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
        try:
            return np.array([lookup[v] for v in np.asarray(y).tolist()], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"label {e.args[0]!r} is not in classes {self.classes_.tolist()}") from None

    def partial_fit(self, X, y, classes=None):
        """Train on one more task."""
        X = check_2d(X)
        if classes is not None and self.classes is None:
            self.classes = classes
        if not hasattr(self, "state_"):
            self._setup(X, y)
        self.state_ = train_task(self.state_, X, self._encode(y), self.config_, self.bounds_)
        return self

    def fit(self, X, y):
        """Train from scratch with ``(X, y)`` as the only task."""
        for attr in ("state_", "classes_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X, y)

    @property
    def n_tasks_seen_(self):
        self._check_fitted()
        return self.state_.task_index

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit or partial_fit first")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_2d(X, self.n_features_in_)
        key = subkey(self.random_state, STREAM_EVAL, self.state_.task_index)
        return predict_proba(self.state_, X, self.n_predict_samples, key)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[decide(probs)]
