"""Non-IID client shards, the labelled server set and missing-modality masks."""

import hashlib
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError
from .rng import SplitMix64, derive_seed
from .synthdata import modality_names

logger = logging.getLogger(__name__)


@dataclass
class ClientDataset:
    client_id: int
    samples: list
    modality_present: dict

    @property
    def present_modalities(self):
        return [m for m, keep in self.modality_present.items() if keep]

    def __len__(self):
        return len(self.samples)


@dataclass
class FederatedSplit:
    clients: list
    server_labelled: list
    test: list
    modalities: list
    alpha: float
    r_l: float
    r_m: float
    seed: int
    server_present: dict = field(default_factory=dict)
    test_present: dict = field(default_factory=dict)

    def manifest(self):
        """CSV audit of every sample's shard. See :func:`write_manifest`."""
        buf = io.StringIO()
        write_manifest(self, buf)
        return buf.getvalue()

    def fingerprint(self):
        return hashlib.sha256(self.manifest().encode("utf-8")).hexdigest()


def _by_class(samples):
    groups = defaultdict(list)
    for s in samples:
        groups[s.label].append(s)
    return [groups[k] for k in sorted(groups)]


def _stratified_take(samples, fraction, rng):
    """Split off round(fraction * class size) samples of every class."""
    taken, rest = [], []
    for group in _by_class(samples):
        order = rng.permutation(len(group))
        n_take = int(round(fraction * len(group)))
        taken.extend(group[i] for i in order[:n_take])
        rest.extend(group[i] for i in order[n_take:])
    return taken, rest


def split_labels(samples, r_l, seed):
    """Stratified split into (labelled server set, client pool).

    A fraction ``1 - r_l`` of each class stays labelled on the server.
    """
    if not 0 <= r_l < 1:
        raise ParameterError(
            f"missing-label rate must lie in [0, 1), got {r_l}; r_l = 1 leaves no data to train the head"
        )
    rng = SplitMix64(derive_seed(seed, "labels"))
    return _stratified_take(samples, 1.0 - r_l, rng)


def _proportional_counts(p, n):
    # Largest-remainder rounding of p * n.
    raw = p * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(samples, num_clients, alpha, seed):
    """Per-class Dir(alpha) shares across ``num_clients``.

    Returns one sample list per client. An empty client receives one sample
    from the currently largest client.
    """
    if num_clients < 1:
        raise ParameterError(f"need at least one client, got {num_clients}")
    if not alpha > 0:
        raise ParameterError(f"Dirichlet concentration must be positive, got {alpha}")
    rng = SplitMix64(derive_seed(seed, "dirichlet"))
    shards = [[] for _ in range(num_clients)]
    for group in _by_class(samples):
        order = rng.permutation(len(group))
        p = rng.dirichlet(alpha, num_clients)
        counts = _proportional_counts(p, len(group))
        start = 0
        for c, n in enumerate(counts):
            shards[c].extend(group[i] for i in order[start : start + n])
            start += n
    if len(samples) >= num_clients:
        for c in range(num_clients):
            if not shards[c]:
                donor = max(range(num_clients), key=lambda i: (len(shards[i]), -i))
                shards[c].append(shards[donor].pop())
                logger.info("client %d was empty; moved one sample from client %d", c, donor)
    return shards


def bernoulli_masks(num_clients, modalities, r_m, rng):
    """Raw per-(client, modality) keep flags before any repair."""
    u = rng.random((num_clients, len(modalities)))
    return u >= r_m


def drop_modalities(clients, r_m, seed, modalities=None):
    """Set each client's ``modality_present`` by Bernoulli(r_m) dropout.

    A client that would lose every modality keeps one picked uniformly.
    """
    if not 0 <= r_m < 1:
        raise ParameterError(f"missing-modality rate must lie in [0, 1), got {r_m}")
    if modalities is None:
        modalities = modality_names([s for c in clients for s in c.samples])
    rng = SplitMix64(derive_seed(seed, "modalities"))
    keep = bernoulli_masks(len(clients), modalities, r_m, rng)
    repair = rng.integers(len(modalities), size=(len(clients),))
    for i, client in enumerate(clients):
        row = keep[i].copy()
        if not row.any():
            row[repair[i]] = True
        client.modality_present = {m: bool(row[j]) for j, m in enumerate(modalities)}
    return clients


def make_split(samples, num_clients, alpha, r_l, r_m, seed, test_fraction=0.1, drop_on_server=False):
    """Carve test set, then labelled server set, then client shards."""
    if not 0 <= test_fraction < 1:
        raise ParameterError(f"test fraction must lie in [0, 1), got {test_fraction}")
    modalities = modality_names(samples)
    test, rest = _stratified_take(samples, test_fraction, SplitMix64(derive_seed(seed, "test")))
    server, pool = split_labels(rest, r_l, seed)
    shards = dirichlet_partition(pool, num_clients, alpha, seed) if pool else [[] for _ in range(num_clients)]
    clients = [
        ClientDataset(c, [s.without_label() for s in shard], {m: True for m in modalities})
        for c, shard in enumerate(shards)
    ]
    drop_modalities(clients, r_m, seed, modalities)
    everywhere = {m: True for m in modalities}
    server_present = dict(everywhere)
    test_present = dict(everywhere)
    if drop_on_server:
        # Server and test sets get their own Bernoulli draws, same repair rule.
        extra = [ClientDataset(-1, [], {}), ClientDataset(-2, [], {})]
        drop_modalities(extra, r_m, derive_seed(seed, "server-test"), modalities)
        server_present, test_present = extra[0].modality_present, extra[1].modality_present
    return FederatedSplit(
        clients=clients,
        server_labelled=server,
        test=test,
        modalities=modalities,
        alpha=alpha,
        r_l=r_l,
        r_m=r_m,
        seed=seed,
        server_present=server_present,
        test_present=test_present,
    )


def _mask_text(mask):
    return ";".join(f"{m}={int(v)}" for m, v in mask.items())


def write_manifest(split, fh):
    """One line per sample: ``sample_id,shard,label,modalities``.

    ``shard`` is ``client:<id>``, ``server`` or ``test``; ``label`` is empty
    for client samples; ``modalities`` lists ``id=0|1`` presence flags.
    """
    fh.write("# sample_id,shard,label,modalities\n")
    rows = []
    for c in split.clients:
        for s in c.samples:
            rows.append((s.sample_id, f"client:{c.client_id}", "", _mask_text(c.modality_present)))
    for s in split.server_labelled:
        rows.append((s.sample_id, "server", str(s.label), _mask_text(split.server_present)))
    for s in split.test:
        rows.append((s.sample_id, "test", str(s.label), _mask_text(split.test_present)))
    for row in sorted(rows, key=lambda r: r[0]):
        fh.write(",".join(str(x) for x in row) + "\n")
