"""Per-modality encoders, concatenation fusion and a linear task head.

An encoder maps a (T', d_m) segment to an embedding::

    e = W_out.T @ relu(mean_t(W_in.T @ x_t + b_in)) + b_out

Since the pooling is linear, this equals applying the encoder to the
temporal mean of the segment, which is how batches are evaluated. All
gradients here are derived by hand and checked against finite differences
in the test suite.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, FormatError, InputError
from .numerics import as_tensor, log_row_softmax, row_softmax
from .rng import SplitMix64, derive_seed


@dataclass
class EncoderParams:
    w_in: np.ndarray   # (d_m, h)
    b_in: np.ndarray   # (h,)
    w_out: np.ndarray  # (h, d_e)
    b_out: np.ndarray  # (d_e,)

    BLOCKS = ("w_in", "b_in", "w_out", "b_out")

    @property
    def input_dim(self):
        return self.w_in.shape[0]

    @property
    def embed_dim(self):
        return self.w_out.shape[1]

    def copy(self):
        return EncoderParams(*(getattr(self, b).copy() for b in self.BLOCKS))

    def zeros_like(self):
        return EncoderParams(*(np.zeros_like(getattr(self, b)) for b in self.BLOCKS))


@dataclass
class HeadParams:
    weight: np.ndarray  # (d_fused, K)
    bias: np.ndarray    # (K,)

    BLOCKS = ("weight", "bias")

    @property
    def num_classes(self):
        return self.bias.shape[0]

    def copy(self):
        return HeadParams(self.weight.copy(), self.bias.copy())

    def zeros_like(self):
        return HeadParams(np.zeros_like(self.weight), np.zeros_like(self.bias))


@dataclass
class ModelParams:
    modalities: tuple
    encoders: dict
    head: HeadParams

    def blocks(self, part="all"):
        """(name, array) pairs in manifest order.

        ``part`` selects ``"all"``, ``"encoders"`` or ``"head"``.
        """
        out = []
        if part in ("all", "encoders"):
            for m in self.modalities:
                enc = self.encoders[m]
                out.extend((f"encoder.{m}.{b}", getattr(enc, b)) for b in EncoderParams.BLOCKS)
        if part in ("all", "head"):
            out.extend((f"head.{b}", getattr(self.head, b)) for b in HeadParams.BLOCKS)
        return out

    def manifest(self, part="all"):
        return [(name, tuple(arr.shape)) for name, arr in self.blocks(part)]

    def num_params(self, part="all"):
        return sum(int(np.prod(shape)) for _, shape in self.manifest(part))

    def flatten(self, part="all"):
        return np.concatenate([arr.ravel() for _, arr in self.blocks(part)])

    def with_flat(self, vector, part="all"):
        """New params with the ``part`` blocks replaced from ``vector``."""
        return unflatten(self, vector, part)

    def copy(self):
        return ModelParams(
            self.modalities,
            {m: self.encoders[m].copy() for m in self.modalities},
            self.head.copy(),
        )

    @property
    def embed_dim(self):
        return self.encoders[self.modalities[0]].embed_dim


def flatten(params, part="all"):
    return params.flatten(part)


def unflatten(template, vector, part="all", manifest=None):
    """Rebuild params shaped like ``template`` from a flat vector.

    If ``manifest`` is given it must equal the template's manifest.
    """
    expected = template.manifest(part)
    if manifest is not None and [(n, tuple(s)) for n, s in manifest] != expected:
        raise FormatError("parameter manifest does not match the model layout")
    vector = as_tensor(vector).ravel()
    total = sum(int(np.prod(s)) for _, s in expected)
    if vector.size != total:
        raise FormatError(f"flat vector has {vector.size} entries, manifest needs {total}")
    out = template.copy()
    pos = 0
    for name, shape in expected:
        n = int(np.prod(shape))
        block = vector[pos : pos + n].reshape(shape).copy()
        pos += n
        parts = name.split(".")
        if parts[0] == "head":
            setattr(out.head, parts[1], block)
        else:
            setattr(out.encoders[parts[1]], parts[2], block)
    return out


def _uniform_block(seed, name, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return SplitMix64(derive_seed(seed, name)).uniform(-bound, bound, shape)


def init_model(modality_dims, num_classes, hidden=32, embed=16, seed=0):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, one PRNG stream per block."""
    modalities = tuple(sorted(modality_dims))
    encoders = {}
    for m in modalities:
        d = int(modality_dims[m])
        encoders[m] = EncoderParams(
            _uniform_block(seed, f"encoder.{m}.w_in", (d, hidden), d),
            _uniform_block(seed, f"encoder.{m}.b_in", (hidden,), d),
            _uniform_block(seed, f"encoder.{m}.w_out", (hidden, embed), hidden),
            _uniform_block(seed, f"encoder.{m}.b_out", (embed,), hidden),
        )
    fused = embed * len(modalities)
    head = HeadParams(
        _uniform_block(seed, "head.weight", (fused, num_classes), fused),
        _uniform_block(seed, "head.bias", (num_classes,), fused),
    )
    return ModelParams(modalities, encoders, head)


# --- encoders ---------------------------------------------------------------

def encode_pooled(enc, pooled):
    """Embeddings for a batch of time-averaged segments, plus backward cache."""
    pooled = as_tensor(pooled)
    if pooled.ndim != 2 or pooled.shape[1] != enc.input_dim:
        raise DimensionError(
            f"encoder expects (n, {enc.input_dim}) pooled inputs, got {pooled.shape}"
        )
    pre = pooled @ enc.w_in + enc.b_in
    hidden = np.maximum(pre, 0.0)
    emb = hidden @ enc.w_out + enc.b_out
    return emb, (pooled, pre, hidden)


def encode_backward(enc, cache, d_emb):
    pooled, pre, hidden = cache
    grad = EncoderParams(
        w_in=None, b_in=None,
        w_out=hidden.T @ d_emb,
        b_out=d_emb.sum(axis=0),
    )
    d_pre = (d_emb @ enc.w_out.T) * (pre > 0)
    grad.w_in = pooled.T @ d_pre
    grad.b_in = d_pre.sum(axis=0)
    return grad


def encode(enc, segment):
    """Embedding of one (T', d_m) segment."""
    segment = as_tensor(segment)
    if segment.ndim != 2 or segment.shape[0] == 0:
        raise InputError(f"segment must be a non-empty (T', d) array, got shape {segment.shape}")
    if segment.shape[1] != enc.input_dim:
        raise DimensionError(
            f"segment dimension {segment.shape[1]} does not match encoder input {enc.input_dim}"
        )
    emb, _ = encode_pooled(enc, segment.mean(axis=0, keepdims=True))
    return emb[0]


# --- fusion and head --------------------------------------------------------

def fuse(embeddings, present, modalities):
    """Concatenate embeddings in ``modalities`` order; absent ones become zeros."""
    if not any(present.get(m, False) for m in modalities):
        raise InputError("cannot fuse: no modality present")
    ref_shape = next(np.shape(embeddings[m]) for m in modalities if present.get(m, False))
    parts = []
    for m in modalities:
        if present.get(m, False):
            parts.append(as_tensor(embeddings[m]))
        else:
            parts.append(np.zeros(ref_shape))
    return np.concatenate(parts, axis=-1)


def head_forward(head, fused):
    fused = as_tensor(fused)
    if fused.shape[-1] != head.weight.shape[0]:
        raise DimensionError(
            f"fused width {fused.shape[-1]} does not match head input {head.weight.shape[0]}"
        )
    return fused @ head.weight + head.bias


def head_loss_grad(head, fused, labels):
    """Mean softmax cross-entropy over a batch.

    Returns ``(loss, head_grad, fused_grad)``; ``fused_grad`` lets callers
    continue the backward pass into the encoders.
    """
    fused = as_tensor(fused)
    labels = np.asarray(labels, dtype=np.int64)
    if fused.ndim != 2 or fused.shape[0] == 0:
        raise InputError("head loss needs a non-empty (n, d_fused) batch")
    k = head.num_classes
    if labels.shape != (fused.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {fused.shape[0]} rows")
    if (labels < 0).any() or (labels >= k).any():
        raise InputError(f"labels must lie in [0, {k})")
    logits = head_forward(head, fused)
    n = fused.shape[0]
    logp = log_row_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    d_logits = row_softmax(logits)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    grad = HeadParams(fused.T @ d_logits, d_logits.sum(axis=0))
    return float(loss), grad, d_logits @ head.weight.T


# --- whole-sequence helpers -------------------------------------------------

def pooled_inputs(samples, modality, present=True):
    """(n, d) temporal means of one modality; zeros where absent."""
    rows = []
    for s in samples:
        x = s.modalities.get(modality)
        if x is None or not present:
            rows.append(None)
        else:
            rows.append(x.mean(axis=0))
    dim = next((r.shape[0] for r in rows if r is not None), None)
    if dim is None:
        return None
    return np.stack([r if r is not None else np.zeros(dim) for r in rows])


def embed_samples(params, samples, present=None):
    """Fused embeddings (n, d_fused) of full sequences."""
    present = present or {m: True for m in params.modalities}
    embs = {}
    for m in params.modalities:
        enc = params.encoders[m]
        pooled = pooled_inputs(samples, m, present.get(m, False))
        if pooled is None:
            pooled = np.zeros((len(samples), enc.input_dim))
        embs[m], _ = encode_pooled(enc, pooled)
    return fuse(embs, present, params.modalities)


def predict_logits(params, samples, present=None):
    return head_forward(params.head, embed_samples(params, samples, present))


def supervised_loss_grad(params, samples, labels, present=None, train_encoders=True):
    """Cross-entropy of the full model; gradient as a ModelParams."""
    present = present or {m: True for m in params.modalities}
    embs, caches = {}, {}
    for m in params.modalities:
        enc = params.encoders[m]
        pooled = pooled_inputs(samples, m, present.get(m, False))
        if pooled is None:
            pooled = np.zeros((len(samples), enc.input_dim))
        embs[m], caches[m] = encode_pooled(enc, pooled)
    fused = fuse(embs, present, params.modalities)
    loss, head_grad, d_fused = head_loss_grad(params.head, fused, labels)
    grads = {}
    d_e = params.embed_dim
    for idx, m in enumerate(params.modalities):
        if train_encoders and present.get(m, False):
            d_emb = d_fused[:, idx * d_e : (idx + 1) * d_e]
            grads[m] = encode_backward(params.encoders[m], caches[m], d_emb)
        else:
            grads[m] = params.encoders[m].zeros_like()
    return loss, ModelParams(params.modalities, grads, head_grad)


# --- checkpoint file --------------------------------------------------------
# b"TCTM" u32 version u32 num_blocks; per block: u16 name_len, name (utf-8),
# u32 ndim, u32 dims[ndim]; then all blocks as little-endian float64.

CKPT_MAGIC = b"TCTM"


def save_checkpoint(params, path):
    blocks = params.blocks()
    header = [CKPT_MAGIC, struct.pack("<II", 1, len(blocks))]
    for name, arr in blocks:
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
    payload = np.ascontiguousarray(params.flatten(), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"".join(header) + payload)


def load_checkpoint(path, template):
    """Load into the layout of ``template``; the stored manifest must match."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("not a model checkpoint", offset=0)
    pos = 4
    try:
        version, nblocks = struct.unpack_from("<II", buf, pos)
        pos += 8
        manifest = []
        for _ in range(nblocks):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            manifest.append((name, tuple(shape)))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}", offset=pos) from exc
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    total = sum(int(np.prod(s)) for _, s in manifest)
    if len(buf) - pos != 8 * total:
        raise FormatError("checkpoint payload size does not match its manifest", offset=pos)
    vector = np.frombuffer(buf, dtype="<f8", offset=pos).astype(np.float64)
    return unflatten(template, vector, manifest=manifest)
