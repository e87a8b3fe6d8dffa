"""The federated round loop and its four ablation modes.

One round of ``full`` mode:

1. broadcast the global model to every client;
2. each client trains its encoders with the temporal contrastive loss, head
   frozen;
3. the server aggregates the uploaded encoders (SMA, FedAvg or FedOpt);
4. the server trains the head on the labelled proxy set, encoders frozen;
5. the new global model is evaluated on the test set.

``tct_only`` swaps SMA for the baseline aggregator, ``ssfl_only`` skips the
clients and trains the whole model on the proxy set, and ``supervised``
gives clients their labels back and runs plain supervised FedAvg/FedOpt.

Client work may run on a thread pool. Every client draws from its own
stream seeded by ``(seed, client_id, round)`` and results are reduced in
client order, so logs do not depend on the number of workers.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import f1_score

from . import aggregate
from .config import ExperimentConfig
from .contrastive import batch_loss_grad
from .exceptions import InputError, ProtocolError
from .model import (
    ModelParams,
    embed_samples,
    head_loss_grad,
    init_model,
    predict_logits,
    supervised_loss_grad,
)
from .partition import make_split
from .rng import SplitMix64, derive_seed
from .synthdata import DatasetSpec, generate, load_features

logger = logging.getLogger(__name__)


@dataclass
class RoundRecord:
    round: int
    client_losses: list
    weights: list
    head_loss: float
    accuracy: float
    f1: float
    ms: float = 0.0

    def as_dict(self, timing=False):
        out = {
            "round": self.round,
            "client_losses": self.client_losses,
            "weights": self.weights,
            "head_loss": self.head_loss,
            "accuracy": self.accuracy,
            "f1": self.f1,
        }
        if timing:
            out["ms"] = self.ms
        return out


@dataclass
class FederationState:
    model: ModelParams
    split: object
    labels: dict = field(default_factory=dict)
    opt_state: aggregate.ServerOptState | None = None
    round: int = 0


# --- data -------------------------------------------------------------------

def build_dataset(cfg):
    if cfg.feature_file:
        return load_features(cfg.feature_file)
    spec = DatasetSpec(
        num_classes=cfg.num_classes,
        samples_per_class=cfg.samples_per_class,
        timesteps=cfg.timesteps,
        modality_dims={"A": cfg.dim_a, "B": cfg.dim_b},
        latent_dim=cfg.latent_dim,
        noise_sigma=cfg.noise_sigma,
        sample_variation=cfg.sample_variation,
        private_dim=cfg.private_dim,
        private_scale=cfg.private_scale,
        seed=derive_seed(cfg.seed, "data"),
    )
    return generate(spec)


def build_split(cfg, samples):
    return make_split(
        samples,
        num_clients=cfg.num_clients,
        alpha=cfg.alpha,
        r_l=cfg.r_l,
        r_m=cfg.r_m,
        seed=derive_seed(cfg.seed, "split"),
        test_fraction=cfg.test_fraction,
        drop_on_server=cfg.drop_on_server,
    )


def init_state(cfg, samples=None, split=None):
    if samples is None:
        samples = build_dataset(cfg)
    if split is None:
        split = build_split(cfg, samples)
    dims = {}
    for s in samples:
        for m, x in s.modalities.items():
            dims.setdefault(m, x.shape[1])
    num_classes = max(s.label for s in samples if s.label is not None) + 1
    model = init_model(dims, num_classes, cfg.hidden, cfg.embed, seed=derive_seed(cfg.seed, "init"))
    labels = {s.sample_id: s.label for s in samples}
    opt = aggregate.ServerOptState(None, cfg.server_momentum, cfg.server_lr)
    return FederationState(model, split, labels, opt)


# --- local and server training ---------------------------------------------

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _sgd_step(params, grads, lr):
    for m, g in grads.items():
        enc = params.encoders[m]
        for block in enc.BLOCKS:
            setattr(enc, block, getattr(enc, block) - lr * getattr(g, block))


def local_train(client, global_model, cfg, rng):
    """Contrastive encoder training on one client; returns (model, mean loss).

    The head is never touched; this is checked bit-for-bit before returning.
    """
    if len(client) == 0:
        raise InputError(f"client {client.client_id} has no samples")
    model = global_model.copy()
    head_before = global_model.flatten("head")
    losses = []
    for _ in range(cfg.local_epochs):
        for idx in _batches(len(client), cfg.batch_size, rng):
            batch = [client.samples[i] for i in idx]
            loss, grads = batch_loss_grad(
                model.encoders, batch, client.modality_present, cfg.window_fraction,
                cfg.tau, rng=rng, pair_noise=cfg.pair_noise,
            )
            losses.append(loss)
            if cfg.local_lr > 0:
                _sgd_step(model, grads, cfg.local_lr)
    if not np.array_equal(model.flatten("head"), head_before):
        raise ProtocolError("local training modified the frozen head")
    return model, float(np.mean(losses)) if losses else float("nan")


def _supervised_sgd(model, samples, labels, present, cfg, rng, lr, epochs, train_encoders):
    losses = []
    labels = np.asarray(labels)
    for _ in range(epochs):
        losses = []
        for idx in _batches(len(samples), cfg.batch_size, rng):
            batch = [samples[i] for i in idx]
            loss, grad = supervised_loss_grad(model, batch, labels[idx], present, train_encoders)
            losses.append(loss)
            if train_encoders:
                _sgd_step(model, grad.encoders, lr)
            model.head.weight -= lr * grad.head.weight
            model.head.bias -= lr * grad.head.bias
    return float(np.mean(losses)) if losses else float("nan")


def local_supervised_train(client, global_model, labels, cfg, rng):
    """Full-model supervised training with restored client labels."""
    model = global_model.copy()
    y = [labels[s.sample_id] for s in client.samples]
    loss = _supervised_sgd(
        model, client.samples, y, client.modality_present, cfg, rng,
        cfg.local_lr, cfg.local_epochs, train_encoders=True,
    )
    return model, loss


def server_head_train(global_model, proxy, cfg, rng, present=None):
    """SGD on the head over frozen proxy embeddings; returns (model, last-epoch loss)."""
    if not proxy:
        raise InputError("server head training needs a non-empty proxy set")
    model = global_model.copy()
    encoders_before = global_model.flatten("encoders")
    fused = embed_samples(model, proxy, present)
    y = np.array([s.label for s in proxy])
    loss = float("nan")
    for _ in range(cfg.head_epochs):
        losses = []
        for idx in _batches(len(proxy), cfg.batch_size, rng):
            batch_loss, grad, _ = head_loss_grad(model.head, fused[idx], y[idx])
            losses.append(batch_loss)
            model.head.weight -= cfg.head_lr * grad.weight
            model.head.bias -= cfg.head_lr * grad.bias
        loss = float(np.mean(losses))
    if not np.array_equal(model.flatten("encoders"), encoders_before):
        raise ProtocolError("head training modified the frozen encoders")
    return model, loss


def server_supervised_train(global_model, proxy, cfg, rng, present=None):
    """Encoders and head trained together on the proxy set (``ssfl_only``)."""
    model = global_model.copy()
    y = [s.label for s in proxy]
    loss = _supervised_sgd(
        model, proxy, y, present, cfg, rng, cfg.head_lr, cfg.head_epochs, train_encoders=True
    )
    return model, loss


# --- evaluation -------------------------------------------------------------

def classification_scores(y_true, y_pred, num_classes):
    """(top-1 accuracy %, macro-F1 %); classes without support score F1 = 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    acc = 100.0 * float(np.mean(y_true == y_pred))
    f1 = 100.0 * float(
        f1_score(y_true, y_pred, labels=list(range(num_classes)), average="macro", zero_division=0)
    )
    return acc, f1


def evaluate(global_model, test, present=None):
    if not test:
        raise InputError("evaluation needs a non-empty test set")
    pred = np.argmax(predict_logits(global_model, test, present), axis=1)
    return classification_scores([s.label for s in test], pred, global_model.head.num_classes)


# --- rounds -----------------------------------------------------------------

def _client_rng(cfg, client_id, rnd):
    return SplitMix64(derive_seed(cfg.seed, "client", client_id, rnd))


def _run_clients(fn, clients, executor):
    if executor is None:
        return [fn(c) for c in clients]
    return list(executor.map(fn, clients))


def run_round(state, cfg, executor=None):
    """One broadcast / train / aggregate / head-train / evaluate cycle."""
    start = time.perf_counter()
    rnd = state.round
    split = state.split
    server_rng = SplitMix64(derive_seed(cfg.seed, "server", rnd))
    model = state.model
    client_losses, weights = [], []
    active = [c for c in split.clients if len(c) > 0]
    for c in split.clients:
        if len(c) == 0:
            logger.warning("client %d is empty; skipped in round %d", c.client_id, rnd)

    if cfg.mode == "ssfl_only":
        model, head_loss = server_supervised_train(
            model, split.server_labelled, cfg, server_rng, split.server_present
        )
    else:
        if cfg.mode == "supervised":
            def work(c):
                return local_supervised_train(c, model, state.labels, cfg, _client_rng(cfg, c.client_id, rnd))
            part = "all"
            aggregator = cfg.baseline
        else:
            def work(c):
                return local_train(c, model, cfg, _client_rng(cfg, c.client_id, rnd))
            part = "encoders"
            aggregator = cfg.aggregator if cfg.mode == "full" else cfg.baseline

        results = _run_clients(work, active, executor)
        uploads = [r[0] for r in results]
        client_losses = [r[1] for r in results]
        sizes = [len(c) for c in active]
        if not uploads:
            logger.warning("no client trained in round %d", rnd)
        elif aggregator == "sma":
            w = aggregate.sma_weights(
                uploads, split.server_labelled, split.server_present, cfg.sma_include_self
            )
            model = aggregate.sma_aggregate(uploads, w)
            weights = [float(x) for x in w]
        elif aggregator == "fedopt":
            model, state.opt_state = aggregate.fedopt(model, uploads, sizes, state.opt_state, part)
            weights = [float(x) for x in aggregate.size_weights(sizes)]
        else:
            model = aggregate.fedavg(uploads, sizes, part)
            weights = [float(x) for x in aggregate.size_weights(sizes)]

        if cfg.mode == "supervised":
            head_loss = float(np.mean(client_losses)) if client_losses else float("nan")
        else:
            model, head_loss = server_head_train(
                model, split.server_labelled, cfg, server_rng, split.server_present
            )

    acc, f1 = evaluate(model, split.test, split.test_present)
    state.model = model
    state.round = rnd + 1
    record = RoundRecord(
        round=rnd,
        client_losses=[float(x) for x in client_losses],
        weights=weights,
        head_loss=float(head_loss),
        accuracy=acc,
        f1=f1,
        ms=1000.0 * (time.perf_counter() - start),
    )
    return state, record


def run_experiment(cfg, samples=None, split=None, on_round=None):
    """Run ``cfg.rounds`` rounds and return the list of RoundRecords."""
    cfg.validate()
    state = init_state(cfg, samples, split)
    records = []
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for _ in range(cfg.rounds):
            state, record = run_round(state, cfg, executor)
            records.append(record)
            if on_round is not None:
                on_round(record, state)
    finally:
        if executor is not None:
            executor.shutdown()
    return records


def final_model(cfg, samples=None, split=None):
    """Run an experiment and return ``(records, state)``."""
    holder = {}

    def keep(record, state):
        holder["state"] = state

    records = run_experiment(cfg, samples, split, on_round=keep)
    return records, holder["state"]

