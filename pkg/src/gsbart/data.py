"""Tabular datasets: loading, validation and train/test masks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_kv

__all__ = ["SchemaError", "Schema", "Dataset", "load_dataset", "load_schema", "write_table", "random_split"]


class SchemaError(ValueError):
    """The data file does not match its schema."""


@dataclass
class Schema:
    """Column roles.  ``split`` marks training rows (1/true/train) against test rows."""

    response: str
    features: list
    offset: str | None = None
    split: str | None = None
    truth: str | None = None
    extra: list = field(default_factory=list)  # columns kept verbatim (e.g. graph bins)

    @classmethod
    def from_dict(cls, kv: dict) -> "Schema":
        unknown = set(kv) - {"response", "features", "offset", "split", "truth", "keep"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {', '.join(sorted(unknown))}")
        if "response" not in kv:
            raise SchemaError("schema must name the response column")
        feats = [f.strip() for f in kv.get("features", "").split(",") if f.strip()]
        keep = [f.strip() for f in kv.get("keep", "").split(",") if f.strip()]
        return cls(kv["response"], feats, kv.get("offset") or None, kv.get("split") or None,
                   kv.get("truth") or None, keep)


def load_schema(path) -> Schema:
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"schema file not found: {p}")
    try:
        return Schema.from_dict(parse_kv(p.read_text(), str(p)))
    except ConfigError as exc:
        raise SchemaError(str(exc)) from None


@dataclass
class Dataset:
    """Validated data.  ``y`` is float for numeric models and str for classes."""

    y: np.ndarray
    X: np.ndarray
    feature_names: list
    train_mask: np.ndarray
    offset: np.ndarray | None = None
    truth: np.ndarray | None = None
    columns: dict = field(default_factory=dict)  # raw text of every column

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def feature(self, name) -> np.ndarray:
        try:
            return self.X[:, self.feature_names.index(name)]
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def with_feature(self, name, values) -> "Dataset":
        X = self.X.copy()
        X[:, self.feature_names.index(name)] = values
        return Dataset(self.y, X, self.feature_names, self.train_mask, self.offset, self.truth, self.columns)


def _read_rows(path):
    p = Path(path)
    if not p.is_file():
        raise SchemaError(f"data file not found: {p}")
    text = p.read_text()
    if not text.strip():
        raise SchemaError(f"{p}: empty file")
    first = text.splitlines()[0]
    delim = "\t" if "\t" in first else ","
    rows = list(csv.reader(text.splitlines(), delimiter=delim))
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise SchemaError(f"{p}: no data rows")
    for i, r in enumerate(body, 2):
        if len(r) != len(header):
            raise SchemaError(f"{p}: line {i} has {len(r)} cells, header has {len(header)}")
    return header, body


def _numeric(path, header, body, name):
    j = header.index(name)
    out = np.empty(len(body))
    for i, r in enumerate(body):
        try:
            out[i] = float(r[j])
        except ValueError:
            raise SchemaError(f"{path}: row {i + 1}, column {name!r}: cannot parse {r[j]!r} as a number") from None
        if not np.isfinite(out[i]):
            raise SchemaError(f"{path}: row {i + 1}, column {name!r}: missing or non-finite value")
    return out


def random_split(n: int, test_fraction: float, seed) -> np.ndarray:
    """Training mask with ``round(n * test_fraction)`` randomly chosen test rows."""
    mask = np.ones(n, dtype=bool)
    k = int(round(n * test_fraction))
    if k:
        mask[np.random.default_rng(seed).choice(n, size=k, replace=False)] = False
    return mask


_TRAIN_TOKENS = {"1", "true", "train", "yes"}
_TEST_TOKENS = {"0", "false", "test", "no"}


def load_dataset(data_path, schema: Schema, model: str = "normal", test_fraction: float = 0.0,
                 seed=0, require_response: bool = True) -> Dataset:
    """Read a CSV/TSV file with a header row according to ``schema``.

    Without a split column, ``test_fraction`` of the rows are held out at
    random (seeded).  ``require_response=False`` lets prediction inputs
    omit the response.
    """
    header, body = _read_rows(data_path)
    needed = list(schema.features) + [c for c in (schema.offset, schema.split, schema.truth) if c]
    if require_response:
        needed.append(schema.response)
    for name in needed + list(schema.extra):
        if name not in header:
            raise SchemaError(f"{data_path}: missing column {name!r}")
    n = len(body)
    X = np.column_stack([_numeric(data_path, header, body, f) for f in schema.features]) \
        if schema.features else np.zeros((n, 0))
    if schema.response in header:
        j = header.index(schema.response)
        raw = [r[j].strip() for r in body]
        if model == "classification":
            if any(v == "" for v in raw):
                raise SchemaError(f"{data_path}: missing response value")
            y = np.array(raw, dtype=object)
        else:
            try:
                y = np.array([float(v) for v in raw])
            except ValueError:
                raise SchemaError(f"{data_path}: response {schema.response!r} is not numeric; "
                                  f"categorical responses need model = classification") from None
            if not np.all(np.isfinite(y)):
                raise SchemaError(f"{data_path}: response has missing or non-finite values")
            if model == "count" and (np.any(y < 0) or np.any(y != np.round(y))):
                raise SchemaError(f"{data_path}: count responses must be non-negative integers")
    else:
        y = np.full(n, np.nan) if model != "classification" else np.full(n, "", dtype=object)
    if schema.split:
        j = header.index(schema.split)
        tokens = [r[j].strip().lower() for r in body]
        bad = [t for t in tokens if t not in _TRAIN_TOKENS | _TEST_TOKENS]
        if bad:
            raise SchemaError(f"{data_path}: split column holds {bad[0]!r}; use 1/0 or train/test")
        train = np.array([t in _TRAIN_TOKENS for t in tokens])
    else:
        train = random_split(n, test_fraction, seed)
    offset = _numeric(data_path, header, body, schema.offset) if schema.offset else None
    truth = _numeric(data_path, header, body, schema.truth) if schema.truth else None
    columns = {h: [r[k] for r in body] for k, h in enumerate(header)}
    return Dataset(y, X, list(schema.features), train, offset, truth, columns)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header, rows) -> None:
    """TSV with a header row; ``path=None`` or ``'-'`` writes to stdout."""
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
