"""Server-side combination of client models: FedAvg, FedOpt and SMA.

SMA (similarity-guided model aggregation) weights each client by how well
its mean proxy-set embedding agrees with everyone else's::

    V_i    = mean over proxy samples of model_i's fused embedding
    S[i,j] = max(0, cos(V_i, V_j))
    W[i]   = sum_j S[i,j] / sum_{k,j} S[k,j]      (uniform if the total is 0)

All weighted sums run over clients in list order with compensated
summation so results do not depend on how client training was scheduled.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ParameterError, ProtocolError
from .model import embed_samples
from .numerics import cosine_matrix, kahan_weighted_sum

logger = logging.getLogger(__name__)


@dataclass
class ServerOptState:
    momentum: np.ndarray | None = None
    beta: float = 0.9
    server_lr: float = 1.0


def _check_compatible(models):
    if not models:
        raise ParameterError("no client models to aggregate")
    ref = models[0].manifest()
    for i, m in enumerate(models[1:], start=1):
        if m.manifest() != ref:
            raise FormatError(f"client model {i} has a different parameter manifest")


def _frozen_part(part):
    return {"all": None, "encoders": "head", "head": "encoders"}[part]


def _check_frozen_identical(models, part):
    frozen = _frozen_part(part)
    if frozen is None:
        return
    ref = models[0].flatten(frozen)
    for i, m in enumerate(models[1:], start=1):
        if not np.array_equal(m.flatten(frozen), ref):
            raise ProtocolError(f"client {i} uploaded a modified {frozen} block")


def check_weights(weights, tol=1e-9):
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any() or abs(weights.sum() - 1.0) > tol:
        raise ParameterError(f"aggregation weights must be nonnegative and sum to 1, got {weights}")
    return weights


def weighted_model(models, weights, part="all"):
    """sum_i weights[i] * models[i] over ``part``; the rest copied from model 0."""
    _check_compatible(models)
    if len(weights) != len(models):
        raise ParameterError(f"{len(weights)} weights for {len(models)} models")
    _check_frozen_identical(models, part)
    combined = kahan_weighted_sum([m.flatten(part) for m in models], weights)
    return models[0].with_flat(combined, part)


def size_weights(sizes):
    sizes = np.asarray(sizes, dtype=np.float64)
    if (sizes <= 0).any():
        raise ParameterError(f"client sizes must be positive, got {sizes}")
    return sizes / sizes.sum()


def fedavg(models, sizes, part="all"):
    return weighted_model(models, size_weights(sizes), part)


def fedopt(global_model, models, sizes, state, part="all"):
    """Server momentum on the size-weighted pseudo-gradient.

    ``delta = avg - global``, ``v = beta * v + delta``, and the new model is
    ``global + server_lr * v``. It is evaluated as ``avg + (server_lr * v -
    delta)``, which reduces to ``avg`` exactly when beta=0 and server_lr=1.
    """
    averaged = fedavg(models, sizes, part)
    avg = averaged.flatten(part)
    delta = avg - global_model.flatten(part)
    if state.momentum is None:
        state.momentum = np.zeros_like(delta)
    if state.momentum.shape != delta.shape:
        raise FormatError("momentum buffer does not match the model manifest")
    momentum = state.beta * state.momentum + delta
    new_state = ServerOptState(momentum, state.beta, state.server_lr)
    return averaged.with_flat(avg + (state.server_lr * momentum - delta), part), new_state


def summary_vectors(models, proxy, present=None):
    """Mean fused proxy embedding of every client model, shape (C, d_fused)."""
    if not proxy:
        raise ParameterError("similarity weighting needs a non-empty proxy set")
    return np.stack([embed_samples(m, proxy, present).mean(axis=0) for m in models])


def weights_from_similarity(sim, include_self=True):
    sim = np.array(sim, dtype=np.float64)
    if (sim < 0).any():
        logger.info("clamping %d negative client similarities to 0", int((sim < 0).sum()))
        sim = np.maximum(sim, 0.0)
    if not include_self:
        np.fill_diagonal(sim, 0.0)
    total = sim.sum()
    c = sim.shape[0]
    if total <= 0:
        logger.warning("all client similarities are zero; using uniform weights")
        return np.full(c, 1.0 / c)
    return sim.sum(axis=1) / total


def sma_weights(models, proxy, present=None, include_self=True):
    _check_compatible(models)
    vectors = summary_vectors(models, proxy, present)
    return weights_from_similarity(cosine_matrix(vectors, vectors), include_self)


def sma_aggregate(models, weights):
    """Similarity-weighted encoder average; heads must be identical."""
    return weighted_model(models, check_weights(weights), part="encoders")
