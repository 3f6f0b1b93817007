"""Datasets for binary logistic regression.

Features are held as a CSR matrix (one row per sample, 0-based column
indices) and labels as a float array with values in {0, 1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp


class LibsvmFormatError(ValueError):
    """Raised when a LIBSVM text line cannot be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    features: sp.csr_matrix
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(indices, values)`` of sample ``i``."""
        A = self.features
        lo, hi = A.indptr[i], A.indptr[i + 1]
        return A.indices[lo:hi], A.data[lo:hi]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], name or self.name)


def _make_dataset(indptr, indices, values, labels, d, name) -> Dataset:
    A = sp.csr_matrix(
        (np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    return Dataset(A, np.asarray(labels, dtype=float), name)


def parse_libsvm(stream: TextIO | Iterable[str], d: int | None = None,
                 name: str = "libsvm") -> Dataset:
    """Parse LIBSVM sparse text (``label idx:val ...`` with 1-based indices).

    Labels may be given as {0, 1} or {-1, +1}; -1 is mapped to 0.  The
    feature dimension defaults to the largest index seen.
    """
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmFormatError(lineno, f"non-numeric label {tokens[0]!r}") from None
        if label == 1.0:
            labels.append(1.0)
        elif label in (0.0, -1.0):
            labels.append(0.0)
        else:
            raise LibsvmFormatError(lineno, f"label {tokens[0]!r} not in {{0,1}} or {{-1,+1}}")
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmFormatError(lineno, f"token {tok!r} is not idx:val")
            try:
                idx = int(key)
                v = float(val)
            except ValueError:
                raise LibsvmFormatError(lineno, f"non-numeric token {tok!r}") from None
            if not math.isfinite(v):
                raise LibsvmFormatError(lineno, f"non-finite value in {tok!r}")
            if idx < 1:
                raise LibsvmFormatError(lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibsvmFormatError(lineno, f"non-ascending index {idx} after {prev}")
            prev = idx
            indices.append(idx - 1)
            values.append(v)
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if d is None:
        d = max_index
    elif d < max_index:
        raise ValueError(f"explicit dimension {d} is smaller than max index {max_index}")
    return _make_dataset(indptr, indices, values, labels, d, name)


def load_libsvm(path, d: int | None = None) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8", newline=None) as fh:
        return parse_libsvm(fh, d=d, name=path.stem)


def format_libsvm(dataset: Dataset) -> str:
    """Serialize to LIBSVM text; floats use shortest round-trip repr."""
    lines = []
    for i in range(dataset.n):
        idx, val = dataset.row(i)
        parts = [str(int(dataset.labels[i]))]
        parts.extend(f"{j + 1}:{float(v)!r}" for j, v in zip(idx, val))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def save_libsvm(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_libsvm(dataset))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def synth_gaussian(n: int, d: int, sparsity: float = 1.0, seed: int = 0,
                   name: str | None = None) -> Dataset:
    """Gaussian features with labels from a planted logistic model.

    Each row has ``ceil(sparsity * d)`` nonzeros at distinct uniformly drawn
    positions, filled with standard normal values.  A planted weight vector
    with standard normal entries gives ``P(b_i = 1) = sigmoid(a_i @ x_true)``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    k = min(d, math.ceil(sparsity * d))
    if k == d:
        indices = np.tile(np.arange(d, dtype=np.int64), n)
    else:
        indices = np.concatenate(
            [np.sort(rng.choice(d, size=k, replace=False)) for _ in range(n)]
        )
    values = rng.standard_normal(n * k)
    indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
    x_true = rng.standard_normal(d)
    A = sp.csr_matrix((values, indices, indptr), shape=(n, d))
    prob = _sigmoid(A @ x_true)
    labels = (rng.random(n) < prob).astype(float)
    return Dataset(A, labels, name or f"synth-n{n}-d{d}-s{sparsity:g}")


def train_test_split(dataset: Dataset, test_fraction: float, seed: int = 0
                     ) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(math.floor(dataset.n * test_fraction))
    if n_test == 0 or n_test == dataset.n:
        raise ValueError(f"split of n={dataset.n} at {test_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return (dataset.subset(train_idx, dataset.name + "-train"),
            dataset.subset(test_idx, dataset.name + "-test"))


def normalize_rows(dataset: Dataset) -> Dataset:
    """Scale every nonzero row to unit Euclidean norm."""
    A = dataset.features.copy()
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    A = sp.diags(1.0 / norms) @ A
    return Dataset(sp.csr_matrix(A), dataset.labels.copy(), dataset.name)
