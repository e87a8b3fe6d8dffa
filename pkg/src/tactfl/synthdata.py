"""Synthetic multi-modal temporal data and the binary feature-file format.

Each sample follows a latent trajectory ``z(t) = class_traj(t) +
sample_variation * own_traj(t)``. Both parts are smooth random Fourier
mixtures, so two overlapping windows of one sample carry similar content
while different samples do not. Modalities are views of ``z``: even-indexed
ones linear (``z @ W``), odd-indexed ones squashed (``tanh(z @ W)``), each
with additive Gaussian noise.

Optionally every modality also carries a private nuisance trajectory
``q_m(t)`` of ``private_dim`` dimensions, mixed in as ``private_scale * q_m
@ P_m`` after the squashing. It is drawn independently per sample and per
modality, so it carries neither label nor cross-modal information.

Feature file layout (little-endian)::

    b"TCTF"  u32 version(=1)  u32 num_samples  u32 num_modalities
    u32 dim[m]                       for each modality
    per sample:
        u32 sample_id  u32 label  u32 T
        per modality: u8 present, then T*dim float64 values if present

Modalities are named ``"A"``, ``"B"``, ... in file order. A label of
``0xFFFFFFFF`` marks an unlabelled sample.
"""

import string
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InputError, ParameterError
from .rng import SplitMix64

MAGIC = b"TCTF"
VERSION = 1
NO_LABEL = 0xFFFFFFFF
MODALITY_NAMES = string.ascii_uppercase


@dataclass(eq=False)
class MultiModalSample:
    """One recording: ``modalities`` maps id -> array of shape (T, d)."""

    modalities: dict
    label: int | None
    sample_id: int

    @property
    def timesteps(self):
        return next(iter(self.modalities.values())).shape[0]

    def without_label(self):
        return MultiModalSample(self.modalities, None, self.sample_id)

    def __eq__(self, other):
        if not isinstance(other, MultiModalSample):
            return NotImplemented
        if (self.sample_id, self.label) != (other.sample_id, other.label):
            return False
        if list(self.modalities) != list(other.modalities):
            return False
        return all(np.array_equal(self.modalities[m], other.modalities[m]) for m in self.modalities)


@dataclass
class DatasetSpec:
    num_classes: int = 4
    samples_per_class: int = 200
    timesteps: int = 16
    modality_dims: dict = field(default_factory=lambda: {"A": 24, "B": 24})
    latent_dim: int = 6
    noise_sigma: float = 1.0
    sample_variation: float = 1.0
    num_frequencies: int = 3
    private_dim: int = 0
    private_scale: float = 0.0
    seed: int = 0

    def validate(self):
        counts = {
            "num_classes": self.num_classes,
            "samples_per_class": self.samples_per_class,
            "timesteps": self.timesteps,
            "latent_dim": self.latent_dim,
            "num_frequencies": self.num_frequencies,
        }
        for name, value in counts.items():
            if int(value) < 1:
                raise ParameterError(f"{name} must be >= 1, got {value}")
        if not self.modality_dims:
            raise ParameterError("at least one modality is required")
        for m, d in self.modality_dims.items():
            if int(d) < 1:
                raise ParameterError(f"dimension of modality {m!r} must be >= 1, got {d}")
        if self.noise_sigma < 0 or self.sample_variation < 0 or self.private_scale < 0:
            raise ParameterError("noise_sigma, sample_variation and private_scale must be >= 0")
        if self.private_dim < 0:
            raise ParameterError(f"private_dim must be >= 0, got {self.private_dim}")


def _fourier_trajectory(rng, timesteps, latent_dim, num_freq):
    # Constant offset plus num_freq sinusoids over the normalised timeline.
    t = np.arange(timesteps) / timesteps
    offset = rng.normal((latent_dim,))
    amps = rng.normal((num_freq, latent_dim), scale=1.0 / np.sqrt(num_freq))
    phases = rng.uniform(0.0, 2 * np.pi, (num_freq, latent_dim))
    freqs = np.arange(1, num_freq + 1)[:, None, None]
    waves = np.sin(2 * np.pi * freqs * t[None, :, None] + phases[:, None, :])
    return offset[None, :] + (amps[:, None, :] * waves).sum(axis=0)


def generate(spec, return_latent=False):
    """Build ``num_classes * samples_per_class`` samples, class-major order.

    With ``return_latent`` also returns the (n, T, latent_dim) trajectories.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    mods = list(spec.modality_dims)
    proj_rng = rng.spawn("projections")
    projections = {
        m: proj_rng.normal((spec.latent_dim, spec.modality_dims[m]), scale=1.0 / np.sqrt(spec.latent_dim))
        for m in mods
    }
    private = {}
    if spec.private_dim > 0 and spec.private_scale > 0:
        private = {
            m: proj_rng.normal((spec.private_dim, spec.modality_dims[m]), scale=1.0 / np.sqrt(spec.private_dim))
            for m in mods
        }
    class_rng = rng.spawn("classes")
    class_traj = [
        _fourier_trajectory(class_rng, spec.timesteps, spec.latent_dim, spec.num_frequencies)
        for _ in range(spec.num_classes)
    ]
    sample_rng = rng.spawn("samples")
    noise_rng = rng.spawn("noise")
    private_rng = rng.spawn("private")
    samples, latents = [], []
    sid = 0
    for k in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            own = _fourier_trajectory(sample_rng, spec.timesteps, spec.latent_dim, spec.num_frequencies)
            z = class_traj[k] + spec.sample_variation * own
            views = {}
            for idx, m in enumerate(mods):
                x = z @ projections[m]
                if idx % 2 == 1:
                    x = np.tanh(x)
                if m in private:
                    q = _fourier_trajectory(private_rng, spec.timesteps, spec.private_dim, spec.num_frequencies)
                    x = x + spec.private_scale * (q @ private[m])
                if spec.noise_sigma > 0:
                    x = x + noise_rng.normal(x.shape, scale=spec.noise_sigma)
                views[m] = np.ascontiguousarray(x)
            samples.append(MultiModalSample(views, k, sid))
            latents.append(z)
            sid += 1
    if return_latent:
        return samples, np.stack(latents)
    return samples


def modality_names(samples):
    names = []
    for s in samples:
        for m in s.modalities:
            if m not in names:
                names.append(m)
    return sorted(names)


def save_features(samples, path):
    """Write samples in the feature-file format."""
    if not samples:
        raise InputError("refusing to write an empty dataset")
    mods = modality_names(samples)
    if mods != list(MODALITY_NAMES[: len(mods)]):
        raise InputError(f"modality ids must be consecutive letters from 'A', got {mods}")
    dims = {}
    for s in samples:
        for m, x in s.modalities.items():
            if dims.setdefault(m, x.shape[1]) != x.shape[1]:
                raise InputError(f"modality {m!r} has inconsistent dimension")
    chunks = [MAGIC, struct.pack("<III", VERSION, len(samples), len(mods))]
    chunks.append(struct.pack(f"<{len(mods)}I", *(dims[m] for m in mods)))
    for s in samples:
        label = NO_LABEL if s.label is None else int(s.label)
        chunks.append(struct.pack("<III", s.sample_id, label, s.timesteps))
        for m in mods:
            x = s.modalities.get(m)
            if x is None:
                chunks.append(b"\x00")
            else:
                chunks.append(b"\x01")
                chunks.append(np.ascontiguousarray(x, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated payload while reading {what}", offset=self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_features(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) == 0:
        raise FormatError("empty feature file", offset=0)
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'TCTF'", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    num_samples = r.u32("sample count")
    num_mods = r.u32("modality count")
    if num_mods < 1 or num_mods > len(MODALITY_NAMES):
        raise FormatError(f"invalid modality count {num_mods}", offset=12)
    mods = MODALITY_NAMES[:num_mods]
    dims = [r.u32(f"dimension of modality {m}") for m in mods]
    samples = []
    for i in range(num_samples):
        start = r.pos
        sid = r.u32(f"sample {i} id")
        label = r.u32(f"sample {i} label")
        timesteps = r.u32(f"sample {i} length")
        if timesteps < 1:
            raise FormatError(f"sample {i} has zero timesteps", offset=start + 8)
        views = {}
        for m, d in zip(mods, dims):
            flag = r.take(1, f"sample {i} presence flag")[0]
            if flag not in (0, 1):
                raise FormatError(f"bad presence flag {flag}", offset=r.pos - 1)
            if flag:
                raw = r.take(8 * timesteps * d, f"sample {i} modality {m}")
                views[m] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(timesteps, d)
        if not views:
            raise FormatError(f"sample {i} has no modality present", offset=start)
        samples.append(MultiModalSample(views, None if label == NO_LABEL else label, sid))
    if r.pos != len(buf):
        raise FormatError("trailing bytes after declared samples", offset=r.pos)
    return samples
