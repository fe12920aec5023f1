"""Synthetic regression data, MNIST IDX ingestion and error metrics.

Randomness: every sampler draws from ``numpy.random.default_rng([seed, stream])``
with a fixed stream id per purpose, so input points and label noise built
from the same seed are independent and changing ``sigma`` never moves the
inputs.
"""

import csv
import gzip
import pathlib
import struct
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import BadMagic, DimensionOverflow, EmptySelection, TruncatedFile

STREAM_POINTS = 0
STREAM_NOISE = 1

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803
IDX_MAX_BYTES = 1 << 34

DOMAINS = ("sphere", "cube", "external")


def rng_for(seed, stream):
    return np.random.default_rng([int(seed), int(stream)])


def sample_sphere(n, d, seed):
    if n < 1 or d < 2:
        raise ValueError("need n >= 1 and d >= 2")
    g = rng_for(seed, STREAM_POINTS).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_cube(n, d, seed):
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    return rng_for(seed, STREAM_POINTS).uniform(-1.0, 1.0, size=(n, d))


def sample_domain(domain, n, d, seed):
    if domain == "sphere":
        return sample_sphere(n, d, seed)
    if domain == "cube":
        return sample_cube(n, d, seed)
    raise ValueError(f"cannot sample from domain {domain!r}")


@dataclass(frozen=True)
class TargetSpec:
    id: str
    evaluate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, points):
        return self.evaluate(np.atleast_2d(np.asarray(points, dtype=np.float64)))


def _zero(points):
    return np.zeros(points.shape[0])


def _quadratic_norm(points):
    return np.einsum("ij,ij->i", points, points)


TARGETS = {
    "zero": TargetSpec("zero", _zero),
    "quadratic_norm": TargetSpec("quadratic_norm", _quadratic_norm),
}
# short names used in configs: f1 and f2 of the simulation study
TARGET_ALIASES = {"f1": "zero", "f2": "quadratic_norm"}


def get_target(name):
    name = TARGET_ALIASES.get(name, name)
    try:
        return TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown target {name!r}; expected one of {sorted(TARGETS)}") from None


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    noise_sigma: float = 0.0
    domain_tag: str = "external"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.clean_labels.shape != (n,) or self.noisy_labels.shape != (n,):
            raise ValueError("inputs and label vectors must have equal length")
        if self.domain_tag not in DOMAINS:
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return replace(
            self,
            inputs=self.inputs[index],
            clean_labels=self.clean_labels[index],
            noisy_labels=self.noisy_labels[index],
        )

    def unit_normalized(self):
        norms = np.linalg.norm(self.inputs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot normalize zero input vectors")
        return replace(self, inputs=self.inputs / norms)

    def to_csv(self, path):
        header = [f"x_{j}" for j in range(self.dim)] + ["y_clean", "y_noisy"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, yc, yn in zip(self.inputs, self.clean_labels, self.noisy_labels):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(yc)), repr(float(yn))])

    @classmethod
    def from_csv(cls, path, noise_sigma=0.0, domain_tag="external"):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64)
        d = len(header) - 2
        return cls(body[:, :d].copy(), body[:, d].copy(), body[:, d + 1].copy(), noise_sigma, domain_tag)


def add_noise(clean_labels, sigma, seed):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    clean_labels = np.asarray(clean_labels, dtype=np.float64)
    if sigma == 0:
        return clean_labels.copy()
    return clean_labels + sigma * rng_for(seed, STREAM_NOISE).standard_normal(clean_labels.shape[0])


def make_dataset(points, target, sigma, seed, domain_tag=None):
    """Labels ``y_i = f*(x_i) + eps_i`` with ``eps_i ~ N(0, sigma^2)``."""
    points = np.asarray(points, dtype=np.float64)
    if isinstance(target, str):
        target = get_target(target)
    clean = target(points)
    if domain_tag is None:
        on_sphere = points.shape[1] >= 2 and np.allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)
        domain_tag = "sphere" if on_sphere else "cube"
    return Dataset(points, clean, add_noise(clean, sigma, seed), float(sigma), domain_tag)


def with_noise(dataset, sigma, seed):
    return replace(dataset, noisy_labels=add_noise(dataset.clean_labels, sigma, seed), noise_sigma=float(sigma))


def l2_error(predictor, target, test_points):
    """Root mean squared distance to ``f*`` over noiseless test points.

    ``predictor`` maps an ``(N, d)`` array to ``N`` predictions.
    """
    test_points = np.atleast_2d(np.asarray(test_points, dtype=np.float64))
    if test_points.shape[0] == 0:
        raise ValueError("test_points must be nonempty")
    if isinstance(target, str):
        target = get_target(target)
    diff = np.asarray(predictor(test_points), dtype=np.float64) - target(test_points)
    return float(np.sqrt(np.mean(diff * diff)))


def misclassification_rate(predictor, dataset):
    """Fraction of sign errors; a prediction of exactly 0 counts as +1."""
    pred = np.asarray(predictor(dataset.inputs), dtype=np.float64)
    labels = np.where(pred >= 0, 1.0, -1.0)
    return float(np.mean(labels != dataset.clean_labels))


# ---------------------------------------------------------------- IDX files


def _open_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic):
    raw = _open_bytes(path)
    if len(raw) < 4:
        raise TruncatedFile("file shorter than the 4-byte magic", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagic(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedFile(f"header needs {header_end} bytes, file has {len(raw)}", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    total = 1
    for j, dim in enumerate(dims):
        total *= dim
        if total > IDX_MAX_BYTES:
            raise DimensionOverflow(f"payload of {total} bytes exceeds the {IDX_MAX_BYTES}-byte limit", offset=4 + 4 * j)
    if len(raw) < header_end + total:
        raise TruncatedFile(f"payload needs {total} bytes, file has {len(raw) - header_end}", offset=len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=total, offset=header_end)
    return data.reshape(dims)


def load_idx_images(path):
    """Images as flattened float vectors in [0, 1]."""
    images = read_idx(path, IDX_IMAGE_MAGIC)
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0


def load_idx_labels(path):
    return read_idx(path, IDX_LABEL_MAGIC).astype(np.int64)


def write_idx(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned byte payloads are supported")
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())


def relabel_5v8(images, labels, normalize=False):
    """Keep digits 5 and 8 only, relabeled -1 and +1. Pixels stay raw unless ``normalize``."""
    labels = np.asarray(labels)
    keep = (labels == 5) | (labels == 8)
    if not np.any(labels == 5) and not np.any(labels == 8):
        raise EmptySelection("no digits 5 or 8 in the input")
    inputs = np.asarray(images, dtype=np.float64)[keep]
    clean = np.where(labels[keep] == 8, 1.0, -1.0)
    ds = Dataset(inputs, clean, clean.copy(), 0.0, "external")
    return ds.unit_normalized() if normalize else ds


def load_mnist_5v8(directory, split="train", normalize=False):
    """Load ``{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`` from ``directory``."""
    prefix = "train" if split == "train" else "t10k"
    base = pathlib.Path(directory)

    def find(stem):
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (base / name).exists():
                return base / name
        raise FileNotFoundError(f"{stem} not found in {base}")

    images = load_idx_images(find(f"{prefix}-images-idx3-ubyte"))
    labels = load_idx_labels(find(f"{prefix}-labels-idx1-ubyte"))
    return relabel_5v8(images, labels, normalize=normalize)
