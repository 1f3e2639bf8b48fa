"""Dataset access for the sequential pass: strict CSV parsing and seeded shuffling.

A dataset is consumed in a randomized order, in chunks, without materializing
a shuffled copy.  Plain CSV files are indexed by byte offset and read through
seeks; gzip input (not seekable in practice) is parsed into memory up front.
Parsing is strict: any non-numeric cell is an error naming the row and column,
never a silent NaN.
"""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolationError, DataError, UsageError

PRNG_FAMILY = "numpy-pcg64"


def shuffled_indices(n: int, seed: int) -> np.ndarray:
    """Deterministic permutation of 0..n-1 from the package PRNG family."""
    if n < 1:
        raise ContractViolationError(f"need n >= 1, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.permutation(n)


@dataclass(frozen=True)
class DatasetSchema:
    """Column mapping: which column is the response, which are features.

    ``features=None`` selects every non-response column in file order.
    ``add_intercept`` prepends a constant 1 to every regressor vector.
    """

    response: str
    features: tuple[str, ...] | None = None
    add_intercept: bool = True

    def __post_init__(self):
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))
            if self.response in self.features:
                raise UsageError(f"response column {self.response!r} also listed as a feature")
            if len(set(self.features)) != len(self.features):
                raise UsageError("duplicate feature columns")
        if self.features is not None and len(self.features) == 0 and not self.add_intercept:
            raise UsageError("need at least one feature or an intercept")


class Dataset:
    """Common interface: sized, row-addressable numeric data."""

    n: int
    d: int
    feature_names: tuple[str, ...]
    response_name: str
    add_intercept: bool

    def read_rows(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def iter_chunks(self, order: np.ndarray, chunk_size: int = 1 << 15):
        """Yield (X, y) chunks following ``order``; together they cover it exactly."""
        order = np.asarray(order, dtype=np.int64)
        for start in range(0, len(order), chunk_size):
            yield self.read_rows(order[start : start + chunk_size])

    def x_names(self) -> tuple[str, ...]:
        names = self.feature_names
        return (("const",) + names) if self.add_intercept else names


class ArrayDataset(Dataset):
    """In-memory dataset; behaves exactly like a file-backed one."""

    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        add_intercept: bool = False,
        feature_names: tuple[str, ...] | None = None,
        response_name: str = "y",
    ):
        X = np.ascontiguousarray(np.asarray(X, dtype=float))
        y = np.ascontiguousarray(np.asarray(y, dtype=float))
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractViolationError(f"bad shapes: X {X.shape}, y {y.shape}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("non-finite value in dataset")
        self._X = X
        self._y = y
        self.n = X.shape[0]
        self.add_intercept = add_intercept
        self.d = X.shape[1] + (1 if add_intercept else 0)
        self.feature_names = feature_names or tuple(f"x{j}" for j in range(X.shape[1]))
        self.response_name = response_name

    def read_rows(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        X = self._X[indices]
        if self.add_intercept:
            X = np.hstack([np.ones((len(indices), 1)), X])
        return np.ascontiguousarray(X), self._y[indices].copy()


class CsvDataset(Dataset):
    """File-backed dataset over a header-ed, comma-separated, UTF-8 file.

    Plain files keep only an O(n) byte-offset index resident; ``.gz`` files
    are decompressed and parsed into memory once (documented limitation:
    random access into gzip streams is impractical).
    """

    def __init__(self, path: str | os.PathLike, schema: DatasetSchema):
        self.path = os.fspath(path)
        self.schema = schema
        if not os.path.exists(self.path):
            raise DataError(f"no such data file: {self.path}")
        self._gzipped = self.path.endswith(".gz")
        self._offsets: np.ndarray | None = None
        self._mem: tuple[np.ndarray, np.ndarray] | None = None
        self._stat_size = os.stat(self.path).st_size

        header = self._read_header()
        self._columns = header
        if schema.response not in header:
            raise DataError(f"response column {schema.response!r} not in header {header}")
        if schema.features is None:
            feats = tuple(c for c in header if c != schema.response)
        else:
            missing = [c for c in schema.features if c not in header]
            if missing:
                raise DataError(f"feature columns missing from header: {missing}")
            feats = schema.features
        if len(feats) == 0 and not schema.add_intercept:
            raise UsageError("need at least one feature or an intercept")
        self.feature_names = feats
        self.response_name = schema.response
        self.add_intercept = schema.add_intercept
        self._y_pos = header.index(schema.response)
        self._x_pos = [header.index(c) for c in feats]
        self.d = len(feats) + (1 if schema.add_intercept else 0)
        self._build_index()

    def _open_raw(self):
        if self._gzipped:
            return gzip.open(self.path, "rb")
        return open(self.path, "rb")

    def _read_header(self) -> tuple[str, ...]:
        with self._open_raw() as f:
            line = f.readline()
        if not line:
            raise DataError(f"empty file (no header): {self.path}")
        return tuple(s.strip() for s in line.decode("utf-8").rstrip("\r\n").split(","))

    def _parse_line(self, raw: bytes, row: int) -> tuple[np.ndarray, float]:
        parts = raw.decode("utf-8").rstrip("\r\n").split(",")
        if len(parts) != len(self._columns):
            raise DataError(
                f"ragged row {row}: expected {len(self._columns)} fields, got {len(parts)}",
                row=row,
            )
        try:
            yv = float(parts[self._y_pos])
        except ValueError:
            raise DataError(
                f"non-numeric cell at row {row}, column {self.response_name!r}: {parts[self._y_pos]!r}",
                row=row,
                column=self.response_name,
            ) from None
        x = np.empty(len(self._x_pos))
        for j, pos in enumerate(self._x_pos):
            try:
                x[j] = float(parts[pos])
            except ValueError:
                raise DataError(
                    f"non-numeric cell at row {row}, column {self.feature_names[j]!r}: {parts[pos]!r}",
                    row=row,
                    column=self.feature_names[j],
                ) from None
        if not np.all(np.isfinite(x)) or not np.isfinite(yv):
            raise DataError(f"non-finite value at row {row}", row=row)
        return x, yv

    def _build_index(self):
        if self._gzipped:
            xs, ys = [], []
            with self._open_raw() as f:
                f.readline()
                for row, raw in enumerate(f, start=1):
                    if not raw.strip():
                        continue
                    x, yv = self._parse_line(raw, row)
                    xs.append(x)
                    ys.append(yv)
            X = np.array(xs) if xs else np.empty((0, len(self._x_pos)))
            self._mem = (X, np.asarray(ys, dtype=float))
            self.n = len(ys)
            return
        offsets = []
        with open(self.path, "rb") as f:
            f.readline()
            pos = f.tell()
            while True:
                raw = f.readline()
                if not raw:
                    break
                if raw.strip():
                    offsets.append(pos)
                pos = f.tell()
        self._offsets = np.asarray(offsets, dtype=np.int64)
        self.n = len(offsets)

    def _check_unchanged(self):
        if os.stat(self.path).st_size != self._stat_size:
            raise DataError(f"data file changed since it was indexed: {self.path}")

    def read_rows(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) and (indices.min() < 0 or indices.max() >= self.n):
            raise ContractViolationError("row index out of range")
        if self._mem is not None:
            X = self._mem[0][indices]
            y = self._mem[1][indices]
        else:
            self._check_unchanged()
            X = np.empty((len(indices), len(self._x_pos)))
            y = np.empty(len(indices))
            with open(self.path, "rb") as f:
                for k, idx in enumerate(indices):
                    f.seek(self._offsets[idx])
                    X[k], y[k] = self._parse_line(f.readline(), int(idx) + 1)
        if self.add_intercept:
            X = np.hstack([np.ones((len(indices), 1)), X])
        return np.ascontiguousarray(X), np.ascontiguousarray(y)


def open_dataset(source, schema: DatasetSchema | None = None) -> Dataset:
    """Accept a path (CSV/CSV.gz) or an (X, y) array pair."""
    if isinstance(source, Dataset):
        return source
    if isinstance(source, (str, os.PathLike)):
        if schema is None:
            raise UsageError("a file source needs a DatasetSchema")
        return CsvDataset(source, schema)
    if isinstance(source, tuple) and len(source) == 2:
        add = schema.add_intercept if schema is not None else False
        return ArrayDataset(source[0], source[1], add_intercept=add)
    raise UsageError(f"unsupported data source {type(source).__name__}")


def shuffled_stream(source, schema: DatasetSchema | None, seed: int, chunk_size: int = 1 << 15):
    """Chunked single pass over the dataset in seeded shuffled order."""
    ds = open_dataset(source, schema)
    if ds.n < 1:
        return iter(())
    order = shuffled_indices(ds.n, seed)
    return ds.iter_chunks(order, chunk_size=chunk_size)


def write_csv(path: str | os.PathLike, X: np.ndarray, y: np.ndarray,
              feature_names: tuple[str, ...] | None = None, response_name: str = "y") -> None:
    """Write arrays in the accepted input format (mostly for fixtures and examples)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = feature_names or tuple(f"x{j}" for j in range(X.shape[1]))
    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8", newline="") as f:
        f.write(",".join((response_name,) + tuple(names)) + "\n")
        for i in range(X.shape[0]):
            f.write(",".join([repr(float(y[i]))] + [repr(float(v)) for v in X[i]]) + "\n")
