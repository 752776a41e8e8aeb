"""Input validation helpers and the error types raised across the package."""

import numpy as np


class ContractError(ValueError):
    """An argument violates a shape or arity contract."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class TrainingDivergence(RuntimeError):
    """A non-finite loss was produced during optimisation."""

    def __init__(self, message, step=None, terms=None):
        super().__init__(message)
        self.step = step
        self.terms = terms or {}


def is_concrete(x):
    """True when ``x`` holds actual values (not a tracer inside jit/grad)."""
    try:
        np.asarray(x)
    except Exception:
        return False
    return True


def check_same_length(a, b, what="arguments"):
    if np.shape(a) != np.shape(b):
        raise ContractError(f"{what} have mismatched shapes {np.shape(a)} and {np.shape(b)}")


def check_2d(X, n_features=None, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ContractError(f"{name} has {X.shape[1]} columns, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{name} contains non-finite values")
    return X


def check_labels(y, n_rows, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise ContractError(f"labels must be 1-D with {n_rows} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ContractError("labels must be integer class indices")
    y = y.astype(np.int64)
    if n_classes is not None and y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    return y


def check_positive(value, name):
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value}")
    return value
