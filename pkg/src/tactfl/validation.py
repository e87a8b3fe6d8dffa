"""Input checks shared by the estimator front end."""

import numpy as np

from .exceptions import DimensionError, InputError, ParameterError
from .synthdata import MODALITY_NAMES, MultiModalSample

UNLABELLED = -1


def check_sequences(X):
    """Coerce ``X`` to a finite float64 array of shape (n, T, D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DimensionError(f"expected sequences of shape (n, T, D), got {X.shape}")
    if min(X.shape) == 0:
        raise InputError(f"empty input of shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError("input contains NaN or infinite values")
    return X


def check_modality_dims(modality_dims, total):
    """Per-modality feature counts that tile the last axis; default one modality."""
    if modality_dims is None:
        return (total,)
    dims = tuple(int(d) for d in modality_dims)
    if not dims or any(d < 1 for d in dims):
        raise ParameterError(f"modality_dims must be positive, got {modality_dims}")
    if len(dims) > len(MODALITY_NAMES):
        raise ParameterError(f"at most {len(MODALITY_NAMES)} modalities are supported")
    if sum(dims) != total:
        raise DimensionError(f"modality_dims {dims} sum to {sum(dims)}, but inputs have {total} features")
    return dims


def check_partial_labels(y, n):
    """Integer labels with ``UNLABELLED`` (-1) marking unlabelled rows."""
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InputError("labels must be integers (use -1 for unlabelled)")
        y = y.astype(np.int64)
    if (y < UNLABELLED).any():
        raise InputError("labels must be >= 0, or -1 for unlabelled rows")
    return y


def to_samples(X, dims, labels=None, offset=0):
    """Wrap rows of ``X`` as MultiModalSample objects, splitting the feature axis."""
    bounds = np.cumsum((0,) + tuple(dims))
    out = []
    for i, row in enumerate(X):
        mods = {MODALITY_NAMES[m]: np.ascontiguousarray(row[:, bounds[m] : bounds[m + 1]]) for m in range(len(dims))}
        label = None if labels is None or labels[i] == UNLABELLED else int(labels[i])
        out.append(MultiModalSample(mods, label, offset + i))
    return out
