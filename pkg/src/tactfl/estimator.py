"""scikit-learn style front end for the federated trainer.

``TACTFLClassifier.fit(X, y)`` takes sequences of shape (n, T, D) and labels
where ``-1`` marks unlabelled rows, following the scikit-learn
semi-supervised convention. Labelled rows become the server proxy set;
unlabelled rows are dealt out to ``num_clients`` simulated clients, which
train the encoders contrastively. ``modality_dims`` says how the feature
axis splits into modalities; a single modality trains on pseudo-pairs.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import ExperimentConfig
from .exceptions import InputError
from .federation import final_model
from .model import embed_samples, predict_logits
from .numerics import row_softmax
from .partition import ClientDataset, FederatedSplit
from .rng import SplitMix64, derive_seed
from .validation import (
    UNLABELLED,
    check_modality_dims,
    check_partial_labels,
    check_sequences,
    to_samples,
)


class TACTFLClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised federated classifier for multi-modal sequences.

    Parameters mirror the experiment config keys of the same name;
    ``random_state`` plays the role of ``seed``.
    """

    def __init__(self, modality_dims=None, num_clients=4, rounds=20, local_epochs=1,
                 batch_size=16, window_fraction=0.6, tau=0.1, local_lr=0.1, head_lr=0.1,
                 head_epochs=5, aggregator="sma", hidden=32, embed=16, random_state=0):
        self.modality_dims = modality_dims
        self.num_clients = num_clients
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.window_fraction = window_fraction
        self.tau = tau
        self.local_lr = local_lr
        self.head_lr = head_lr
        self.head_epochs = head_epochs
        self.aggregator = aggregator
        self.hidden = hidden
        self.embed = embed
        self.random_state = random_state

    def _config(self):
        return ExperimentConfig(
            num_clients=self.num_clients, rounds=self.rounds, local_epochs=self.local_epochs,
            batch_size=self.batch_size, window_fraction=self.window_fraction, tau=self.tau,
            local_lr=self.local_lr, head_lr=self.head_lr, head_epochs=self.head_epochs,
            aggregator=self.aggregator, hidden=self.hidden, embed=self.embed,
            seed=int(self.random_state), mode="full",
        ).validate()

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_partial_labels(y, len(X))
        cfg = self._config()
        dims = check_modality_dims(self.modality_dims, X.shape[2])
        labelled = y != UNLABELLED
        if not labelled.any():
            raise InputError("at least one labelled row is needed to train the head")
        if labelled.all():
            raise InputError("no unlabelled rows for the clients; mark them with -1")
        self.classes_ = np.unique(y[labelled])
        if len(self.classes_) < 2:
            raise InputError("labelled rows must cover at least two classes")
        encoded = np.full(len(y), UNLABELLED)
        encoded[labelled] = np.searchsorted(self.classes_, y[labelled])
        samples = to_samples(X, dims, encoded)
        unlabelled = [s for s in samples if s.label is None]
        proxy = [s for s in samples if s.label is not None]

        # Unlabelled rows carry no class to skew by, so deal them out evenly.
        order = SplitMix64(derive_seed(cfg.seed, "estimator")).permutation(len(unlabelled))
        shards = np.array_split(order, min(cfg.num_clients, len(unlabelled)))
        modalities = [s for s in samples[0].modalities]
        clients = [
            ClientDataset(i, [unlabelled[j] for j in shard], {m: True for m in modalities})
            for i, shard in enumerate(shards)
        ]
        split = FederatedSplit(clients, proxy, proxy, modalities, alpha=float("inf"),
                               r_l=1 - len(proxy) / len(samples), r_m=0.0, seed=cfg.seed)
        records, state = final_model(cfg, samples, split)
        self.model_ = state.model
        self.modality_dims_ = dims
        self.history_ = [r.as_dict() for r in records]
        self.n_features_in_ = X.shape[2]
        return self

    def _samples(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X)
        if X.shape[2] != self.n_features_in_:
            raise InputError(f"fitted on {self.n_features_in_} features, got {X.shape[2]}")
        return to_samples(X, self.modality_dims_)

    def transform(self, X):
        """Fused embeddings, shape (n, num_modalities * embed)."""
        samples = self._samples(X)
        return embed_samples(self.model_, samples)

    def predict_proba(self, X):
        samples = self._samples(X)
        return row_softmax(predict_logits(self.model_, samples))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
