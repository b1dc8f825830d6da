"""Reader and writer for the LIBSVM sparse text format.

Each line is ``<label> <index>:<value> ...`` with 1-based indices in
strictly ascending order.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class LibsvmParseError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


def _parse_line(line: str, line_number: int) -> tuple[float, list[int], list[float]]:
    tokens = line.split()
    try:
        label = float(tokens[0])
    except ValueError:
        raise LibsvmParseError(f"label {tokens[0]!r} is not numeric", line_number) from None

    indices, values = [], []
    previous = 0
    for token in tokens[1:]:
        index_text, sep, value_text = token.partition(":")
        if not sep:
            raise LibsvmParseError(f"expected index:value, got {token!r}", line_number)
        try:
            index = int(index_text)
            value = float(value_text)
        except ValueError:
            raise LibsvmParseError(f"non-numeric feature {token!r}", line_number) from None
        if index < 1:
            raise LibsvmParseError(f"feature indices are 1-based, got {index}", line_number)
        if index <= previous:
            raise LibsvmParseError(f"feature index {index} does not ascend after {previous}", line_number)
        previous = index
        indices.append(index - 1)
        values.append(value)
    return label, indices, values


def parse_libsvm(
    path: str | Path,
    n_features: int | None = None,
    row_normalize: bool = False,
) -> tuple[sparse.csr_array, np.ndarray]:
    """
    Read a LIBSVM file into a sparse feature matrix and a label vector.

    Args:
        path: File to read
        n_features: Column count; defaults to the largest index seen
        row_normalize: Scale every nonzero row to unit Euclidean norm

    Returns:
        (csr_array of shape (m, n), labels of length m)

    Raises:
        LibsvmParseError: Malformed line, empty file, or an index above n_features
    """
    labels, data, indices, indptr = [], [], [], [0]
    max_index = 0
    with open(path, encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            label, cols, vals = _parse_line(line, line_number)
            if cols:
                max_index = max(max_index, cols[-1] + 1)
                if n_features is not None and cols[-1] >= n_features:
                    raise LibsvmParseError(
                        f"feature index {cols[-1] + 1} exceeds n_features = {n_features}", line_number
                    )
            labels.append(label)
            indices.extend(cols)
            data.extend(vals)
            indptr.append(len(indices))

    if not labels:
        raise LibsvmParseError(f"{path} holds no examples")

    n = max_index if n_features is None else n_features
    X = sparse.csr_array(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), n),
    )
    if row_normalize:
        norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        X = sparse.csr_array(sparse.diags_array(scale) @ X)

    logger.info("Read %s: %d examples, %d features, %d nonzeros", path, X.shape[0], X.shape[1], X.nnz)
    return X, np.array(labels)


def _format_label(label: float) -> str:
    return str(int(label)) if float(label).is_integer() else repr(float(label))


def write_libsvm(path: str | Path, X, labels=None) -> None:
    """Write rows of X in LIBSVM format, rendering values with repr so they read back exactly."""
    X = sparse.csr_array(X)
    labels = np.zeros(X.shape[0]) if labels is None else np.asarray(labels)
    with open(path, "w", encoding="utf-8") as f:
        for i in range(X.shape[0]):
            start, end = X.indptr[i], X.indptr[i + 1]
            features = " ".join(
                f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[start:end], X.data[start:end]) if v != 0
            )
            f.write(f"{_format_label(labels[i])} {features}".rstrip() + "\n")
