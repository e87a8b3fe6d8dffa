"""Temporal segmentation, tIoU soft targets and the cross-modal contrastive loss.

Each sample is cut into two windows covering a fraction ``w`` of its
timeline, ``[0, w)`` and ``[1 - w, 1)``. For segments ``i`` (modality A) and
``j`` (modality B) the soft target is the row-normalised tIoU, and the loss
is a soft-label cross-entropy over cosine similarities scaled by ``1/tau``,
taken in both directions (A->B rows and B->A rows) and averaged over the
``2 * 2N`` directed rows.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ParameterError
from .model import encode_backward, encode_pooled
from .numerics import log_row_softmax, normalize_rows, row_softmax


@dataclass(frozen=True)
class TemporalSegment:
    """Half-open window ``[start, end)`` in normalised time of one sample."""

    sample_id: int
    start: float
    end: float
    t0: int
    t1: int

    def __post_init__(self):
        if not (0.0 <= self.start < self.end <= 1.0) or self.t1 <= self.t0:
            raise InputError(f"invalid segment {self}")


def chunk_segments(sample_id, timesteps, window_fraction):
    """The two windows of one sample."""
    length = int(np.floor(window_fraction * timesteps))
    if length < 1:
        raise InputError(
            f"window of {window_fraction} x {timesteps} timesteps is shorter than one step"
        )
    return [
        TemporalSegment(sample_id, 0.0, window_fraction, 0, length),
        TemporalSegment(sample_id, 1.0 - window_fraction, 1.0, timesteps - length, timesteps),
    ]


def segment_batch(batch, window_fraction):
    """Per-modality lists of 2N segments, ordered sample-major then chunk.

    Every present modality of a sample is cut at the same positions, so the
    lists for different modalities are identical.
    """
    if not 0.5 <= window_fraction <= 1.0:
        raise ParameterError(f"window fraction must lie in [0.5, 1], got {window_fraction}")
    segments = []
    for s in batch:
        segments.extend(chunk_segments(s.sample_id, s.timesteps, window_fraction))
    modalities = sorted({m for s in batch for m in s.modalities})
    return {m: list(segments) for m in modalities}


def tiou(a, b):
    if a.sample_id != b.sample_id:
        return 0.0
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    if inter == 0.0:
        return 0.0
    # Overlapping intervals, so the union is their hull.
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def tiou_matrix(segs_a, segs_b):
    ids_a = np.array([s.sample_id for s in segs_a])
    ids_b = np.array([s.sample_id for s in segs_b])
    sa = np.array([s.start for s in segs_a])[:, None]
    ea = np.array([s.end for s in segs_a])[:, None]
    sb = np.array([s.start for s in segs_b])[None, :]
    eb = np.array([s.end for s in segs_b])[None, :]
    inter = np.maximum(0.0, np.minimum(ea, eb) - np.maximum(sa, sb))
    union = np.maximum(ea, eb) - np.minimum(sa, sb)
    out = np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    out[ids_a[:, None] != ids_b[None, :]] = 0.0
    return out


def soft_targets(segs_a, segs_b):
    """Row-normalised tIoU matrix: row ``i`` is a distribution over ``segs_b``."""
    if len(segs_a) != len(segs_b):
        raise InputError(f"segment counts differ: {len(segs_a)} vs {len(segs_b)}")
    raw = tiou_matrix(segs_a, segs_b)
    sums = raw.sum(axis=1)
    if (sums <= 0).any():
        bad = int(np.argmin(sums))
        raise RuntimeError(f"soft-target row {bad} has no overlapping segment; segmentation is broken")
    return raw / sums[:, None]


def segment_features(batch, modality, segments):
    """Raw (T', d) slices of ``modality`` for each segment (aligned with ``batch``)."""
    by_id = {s.sample_id: s for s in batch}
    return [by_id[seg.sample_id].modalities[modality][seg.t0 : seg.t1] for seg in segments]


def pool(slices):
    return np.stack([x.mean(axis=0) for x in slices])


def pseudo_pair(slices, rng, sigma=0.01):
    """Two independently noised copies of single-modality segment slices."""
    if sigma == 0:
        return list(slices), list(slices)
    a = [x + rng.normal(x.shape, scale=sigma) for x in slices]
    b = [x + rng.normal(x.shape, scale=sigma) for x in slices]
    return a, b


def embedding_loss_grad(emb_a, emb_b, targets, tau, targets_ba=None):
    """Symmetric soft contrastive loss on raw embeddings.

    Returns ``(loss, d_emb_a, d_emb_b)``. ``targets_ba`` defaults to
    ``targets``, which is exact whenever both sides share the same segments.
    """
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if targets_ba is None:
        targets_ba = targets
    n = emb_a.shape[0]
    a_hat, na = normalize_rows(emb_a)
    b_hat, nb = normalize_rows(emb_b)
    sim = np.clip(a_hat @ b_hat.T, -1.0, 1.0)
    scale = 1.0 / (2 * n)

    loss_ab = -(targets * log_row_softmax(sim, tau)).sum()
    loss_ba = -(targets_ba * log_row_softmax(sim.T, tau)).sum()
    loss = scale * (loss_ab + loss_ba)

    p = row_softmax(sim, tau)
    q = row_softmax(sim.T, tau)
    d_sim = (p * targets.sum(axis=1, keepdims=True) - targets) / tau
    d_sim += ((q * targets_ba.sum(axis=1, keepdims=True) - targets_ba) / tau).T
    d_sim *= scale

    d_a_hat = d_sim @ b_hat
    d_b_hat = d_sim.T @ a_hat
    return float(loss), _unnormalize_grad(a_hat, na, d_a_hat), _unnormalize_grad(b_hat, nb, d_b_hat)


def _unnormalize_grad(x_hat, norms, d_hat):
    # d/dx of x/|x| applied to d_hat; zero-norm rows carry no gradient.
    radial = (x_hat * d_hat).sum(axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)[:, None]
    grad = (d_hat - x_hat * radial) / safe
    grad[norms == 0] = 0.0
    return grad


def contrastive_loss_grad(enc_a, enc_b, pooled_a, pooled_b, targets, tau, targets_ba=None):
    """Loss and encoder gradients for time-pooled segment features.

    ``pooled_a[i]`` and ``pooled_b[j]`` are the temporal means of segments
    ``i`` and ``j``. Returns ``(loss, grad_enc_a, grad_enc_b)``.
    """
    emb_a, cache_a = encode_pooled(enc_a, pooled_a)
    emb_b, cache_b = encode_pooled(enc_b, pooled_b)
    loss, d_a, d_b = embedding_loss_grad(emb_a, emb_b, targets, tau, targets_ba)
    return loss, encode_backward(enc_a, cache_a, d_a), encode_backward(enc_b, cache_b, d_b)


def batch_loss_grad(encoders, batch, present, window_fraction, tau, rng=None, pair_noise=0.01):
    """Contrastive loss and per-modality gradients for one client mini-batch.

    With two or more present modalities the first two (in sorted order) form
    the cross-modal pair; with one, it is paired with a noisy copy of itself.
    Returns ``(loss, {modality: EncoderParams gradient})``.
    """
    mods = [m for m in sorted(encoders) if present.get(m, False)]
    if not mods:
        raise InputError("client has no modality to train on")
    segments = segment_batch(batch, window_fraction)[mods[0]]
    targets = soft_targets(segments, segments)
    if len(mods) >= 2:
        ma, mb = mods[0], mods[1]
        pa = pool(segment_features(batch, ma, segments))
        pb = pool(segment_features(batch, mb, segments))
        loss, ga, gb = contrastive_loss_grad(encoders[ma], encoders[mb], pa, pb, targets, tau)
        return loss, {ma: ga, mb: gb}
    m = mods[0]
    slices = segment_features(batch, m, segments)
    if rng is None and pair_noise > 0:
        raise InputError("pseudo-pairing with noise needs a random stream")
    sa, sb = pseudo_pair(slices, rng, pair_noise)
    loss, ga, gb = contrastive_loss_grad(encoders[m], encoders[m], pool(sa), pool(sb), targets, tau)
    total = ga.zeros_like()
    for block in total.BLOCKS:
        setattr(total, block, getattr(ga, block) + getattr(gb, block))
    return loss, {m: total}
