"""MNIST IDX parsing and noisy digit-pair generation.

A pair input is 1568 values: the left 28x28 image flattened row-wise,
followed by the right one. Each pixel gets independent additive noise
drawn from U[0, 0.7); nothing is clipped, so inputs lie in [0, 1.7).
"""

import enum
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
ROWS = COLS = 28
PIXELS = ROWS * COLS
PAIR_SIZE = 2 * PIXELS
NOISE_MAX = 0.7

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"
CANONICAL_FILES = (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS)


class FormatError(ValueError):
    """Malformed IDX payload."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class Side(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


class GoalClass(enum.IntEnum):
    PARITY = 0
    MAGNITUDE = 1


class GoalId(enum.IntEnum):
    EVEN = 0
    ODD = 1
    LOW = 2
    HIGH = 3

    @property
    def goal_class(self):
        return GoalClass(self // 2)

    @property
    def complement(self):
        """The other subgoal of the same class (Even<->Odd, Low<->High)."""
        return GoalId(self ^ 1)

    def matches(self, digit):
        if self.goal_class is GoalClass.PARITY:
            return (digit % 2 == 1) == (self is GoalId.ODD)
        return (digit >= 5) == (self is GoalId.HIGH)

    @classmethod
    def parse(cls, text):
        return cls[str(text).strip().upper()]


def parity(digit):
    return GoalId.EVEN if digit % 2 == 0 else GoalId.ODD


def magnitude(digit):
    return GoalId.LOW if digit <= 4 else GoalId.HIGH


def is_test_pair(left, right):
    """Opposite parity and opposite magnitude class."""
    return parity(left) != parity(right) and magnitude(left) != magnitude(right)


# --------------------------------------------------------------------- IDX

def _read_bytes(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    path = Path(source)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _header(buf, n_fields, magic, kind):
    need = 4 * n_fields
    if len(buf) < need:
        raise FormatError(f"truncated {kind} header: {len(buf)} bytes", len(buf))
    fields = struct.unpack(f">{n_fields}I", buf[:need])
    if fields[0] != magic:
        raise FormatError(f"bad {kind} magic 0x{fields[0]:08x}, "
                          f"expected 0x{magic:08x}", 0)
    return fields[1:]


def parse_idx_images(source):
    """Return a ``(count, 784)`` float64 array scaled to [0, 1].

    ``source`` is raw bytes or a path (``.gz`` decompressed transparently).
    """
    buf = _read_bytes(source)
    count, rows, cols = _header(buf, 4, IMAGE_MAGIC, "image")
    if (rows, cols) != (ROWS, COLS):
        raise FormatError(f"expected 28x28 images, got {rows}x{cols}", 8)
    end = 16 + count * rows * cols
    if len(buf) < end:
        raise FormatError(f"truncated image payload: need {end} bytes, "
                          f"have {len(buf)}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=count * PIXELS, offset=16)
    return raw.reshape(count, PIXELS).astype(np.float64) / 255.0


def parse_idx_labels(source):
    buf = _read_bytes(source)
    (count,) = _header(buf, 2, LABEL_MAGIC, "label")
    end = 8 + count
    if len(buf) < end:
        raise FormatError(f"truncated label payload: need {end} bytes, "
                          f"have {len(buf)}", len(buf))
    labels = np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} outside 0-9", 8 + int(bad[0]))
    return labels.astype(np.int64)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 784) in [0, 1]
    labels: np.ndarray  # (n,) digits

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        self._cells = None

    def __len__(self):
        return len(self.labels)

    def cell_indices(self):
        """Indices grouped by (parity, magnitude) cell, keyed by (GoalId, GoalId)."""
        if self._cells is None:
            par = self.labels % 2
            high = self.labels >= 5
            self._cells = {
                (GoalId(p), GoalId.HIGH if h else GoalId.LOW):
                    np.flatnonzero((par == p) & (high == h))
                for p in (0, 1) for h in (False, True)}
        return self._cells


def find_file(data_dir, name):
    """Locate ``name`` or ``name.gz`` under ``data_dir``."""
    data_dir = Path(data_dir)
    for candidate in (data_dir / name, data_dir / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"missing MNIST file {data_dir / name}[.gz]")


def load_split(data_dir, split):
    if split == "train":
        names = TRAIN_IMAGES, TRAIN_LABELS
    elif split == "test":
        names = TEST_IMAGES, TEST_LABELS
    else:
        raise ValueError(f"unknown split {split!r}")
    images = parse_idx_images(find_file(data_dir, names[0]))
    labels = parse_idx_labels(find_file(data_dir, names[1]))
    return Dataset(images, labels)


# ------------------------------------------------------------------- pairs

@dataclass
class NoisyPair:
    input: np.ndarray
    left_label: int
    right_label: int

    def label(self, side):
        return self.left_label if side == Side.LEFT else self.right_label


@dataclass
class PairBatch:
    """A stack of pairs: ``inputs`` is ``(n, 1568)``, ``labels`` is ``(n, 2)``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return NoisyPair(self.inputs[i], int(self.labels[i, 0]), int(self.labels[i, 1]))

    def subset(self, n):
        return PairBatch(self.inputs[:n], self.labels[:n])


def add_noise(image, rng):
    image = np.asarray(image, dtype=np.float64)
    return image + rng.random(image.shape) * NOISE_MAX


def _assemble(dataset, left_idx, right_idx, rng):
    clean = np.concatenate([dataset.images[left_idx], dataset.images[right_idx]], axis=1)
    labels = np.stack([dataset.labels[left_idx], dataset.labels[right_idx]], axis=1)
    return PairBatch(add_noise(clean, rng), labels)


def make_training_batch(dataset, rng, n):
    """``n`` unconstrained pairs, both sides drawn uniformly with replacement."""
    if len(dataset) == 0:
        raise ValueError("cannot draw pairs from an empty dataset")
    idx = rng.integers(0, len(dataset), size=(2, n))
    return _assemble(dataset, idx[0], idx[1], rng)


def make_training_pair(dataset, rng):
    return make_training_batch(dataset, rng, 1)[0]


def _complement_cell(cell):
    return cell[0].complement, cell[1].complement


def make_test_batch(dataset, rng, n):
    """``n`` pairs whose digits differ in both parity and magnitude.

    The first digit is drawn uniformly from the dataset, the second
    uniformly from the opposite (parity, magnitude) cell, and the two are
    placed left/right by a fair coin.
    """
    cells = dataset.cell_indices()
    for cell, members in cells.items():
        if members.size == 0:
            raise ValueError(f"dataset has no digits in cell {cell[0].name}/{cell[1].name}")
    first = rng.integers(0, len(dataset), size=n)
    second = np.empty(n, dtype=np.int64)
    u = rng.random(n)
    for cell, members in cells.items():
        mask = np.isin(dataset.labels[first], [d for d in range(10)
                                               if (parity(d), magnitude(d)) == cell])
        partners = cells[_complement_cell(cell)]
        k = (u[mask] * partners.size).astype(np.int64)
        second[mask] = partners[np.minimum(k, partners.size - 1)]
    swap = rng.random(n) < 0.5
    left = np.where(swap, second, first)
    right = np.where(swap, first, second)
    return _assemble(dataset, left, right, rng)


def make_test_pair(dataset, rng):
    return make_test_batch(dataset, rng, 1)[0]


class AmbiguousGoalError(ValueError):
    """Zero or both sides of a pair satisfy the goal."""


def goal_digit_of(pair, goal):
    """Return ``(digit, side)`` for the unique side that satisfies ``goal``."""
    goal = GoalId(goal)
    hits = [s for s in Side if goal.matches(pair.label(s))]
    if len(hits) != 1:
        raise AmbiguousGoalError(
            f"pair ({pair.left_label}, {pair.right_label}) has {len(hits)} "
            f"sides matching {goal.name}")
    return pair.label(hits[0]), hits[0]


def goal_digits(labels, goal):
    """Vectorised ``goal_digit_of`` over an ``(n, 2)`` label array."""
    goal = GoalId(goal)
    labels = np.asarray(labels)
    if goal.goal_class is GoalClass.PARITY:
        hit = (labels % 2 == 1) == (goal is GoalId.ODD)
    else:
        hit = (labels >= 5) == (goal is GoalId.HIGH)
    if not np.all(hit.sum(axis=1) == 1):
        raise AmbiguousGoalError(f"some pairs do not have exactly one {goal.name} side")
    side = np.where(hit[:, 0], 0, 1)
    return labels[np.arange(len(labels)), side], side


# --------------------------------------------------------------- pair dump

_RECORD = PAIR_SIZE * 4 + 2


def write_pair_dump(path, batch):
    """One record per pair: 1568 little-endian f32, then left/right label bytes."""
    with open(path, "wb") as f:
        for x, lab in zip(batch.inputs, batch.labels):
            f.write(np.asarray(x, dtype="<f4").tobytes())
            f.write(bytes([int(lab[0]), int(lab[1])]))


def read_pair_dump(path):
    buf = Path(path).read_bytes()
    if len(buf) % _RECORD:
        raise FormatError(f"pair dump length {len(buf)} is not a multiple of {_RECORD}",
                          len(buf) - len(buf) % _RECORD)
    n = len(buf) // _RECORD
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(n, _RECORD)
    inputs = rec[:, :PAIR_SIZE * 4].copy().view("<f4").astype(np.float64)
    labels = rec[:, PAIR_SIZE * 4:].astype(np.int64)
    return PairBatch(inputs.reshape(n, PAIR_SIZE), labels)
