"""Dense float64 kernels and a finite-difference gradient checker.

Tensors are plain C-contiguous ``numpy.float64`` arrays; the shape tuple is
the manifest and ``arr.ravel()`` is the row-major payload.
"""

import logging

import numpy as np

from .exceptions import DimensionError, NumericError, ParameterError

logger = logging.getLogger(__name__)


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def cosine(u, v):
    """Cosine similarity clipped to [-1, 1]; 0 when either vector is zero."""
    u = as_tensor(u).ravel()
    v = as_tensor(v).ravel()
    if u.shape != v.shape or u.size == 0:
        raise DimensionError(f"cosine needs equal non-empty shapes, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("zero-norm vector in cosine similarity; returning 0")
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def normalize_rows(x):
    """Rows scaled to unit norm, plus the norms. Zero rows stay zero."""
    x = as_tensor(x)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe[:, None], norms


def cosine_matrix(a, b):
    """Pairwise cosine between rows of ``a`` and rows of ``b``."""
    a_hat, na = normalize_rows(a)
    b_hat, nb = normalize_rows(b)
    if (na == 0).any() or (nb == 0).any():
        logger.warning("zero-norm embedding in cosine matrix; its similarities are 0")
    return np.clip(a_hat @ b_hat.T, -1.0, 1.0)


def row_softmax(logits, tau=1.0):
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = as_tensor(logits) / tau
    if z.ndim == 1:
        z = z[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_row_softmax(logits, tau=1.0):
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = as_tensor(logits) / tau
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def check_gradient(f, x, analytic_grad, eps=1e-5):
    """Max relative error between ``analytic_grad`` and central differences.

    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    x = as_tensor(x).copy()
    analytic_grad = as_tensor(analytic_grad)
    if analytic_grad.shape != x.shape:
        raise DimensionError(
            f"gradient shape {analytic_grad.shape} does not match input {x.shape}"
        )
    flat = x.reshape(-1)
    ga = analytic_grad.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective is not finite near coordinate {i}")
        numeric = (fp - fm) / (2 * eps)
        err = abs(ga[i] - numeric) / max(1e-8, abs(ga[i]) + abs(numeric))
        worst = max(worst, err)
    return worst


def kahan_weighted_sum(vectors, weights):
    """sum_i weights[i] * vectors[i] with compensated summation, in index order."""
    total = np.zeros_like(as_tensor(vectors[0]))
    comp = np.zeros_like(total)
    for w, v in zip(weights, vectors):
        y = w * as_tensor(v) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total
