"""Datasets, splits, classification metrics and trace serialisation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, ParseError


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError("features and labels disagree on the number of points")
        if y.size == 0:
            raise ConfigurationError("empty dataset")
        if not np.all(np.abs(y) == 1):
            raise ConfigurationError("labels must be +1 or -1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx, name=None):
        return Dataset(self.features[idx], self.labels[idx], name or self.name)


# -- LIBSVM text format --------------------------------------------------------

def _parse_label(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno) from None


def parse_libsvm(path, n_features=None, name=None):
    """Read ``label idx:val ...`` lines (1-based ascending indices) into a dense Dataset.

    Labels 0/-1 map to -1 and 1/+1 to +1; any other pair of distinct labels
    maps the smaller one to -1.
    """
    raw_labels, rows = [], []
    width = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            raw_labels.append(_parse_label(toks[0], lineno))
            entries = []
            last = 0
            for tok in toks[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected idx:val, got {tok!r}", lineno)
                try:
                    idx = int(key)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"bad feature entry {tok!r}", lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index must be >= 1, got {idx}", lineno)
                if idx <= last:
                    raise ParseError("feature indices must be strictly ascending", lineno)
                last = idx
                entries.append((idx - 1, v))
            width = max(width, last)
            rows.append(entries)
    if not rows:
        raise ParseError("no data lines")
    if n_features is not None:
        if width > n_features:
            raise ParseError(f"feature index {width} exceeds n_features={n_features}")
        width = n_features
    X = np.zeros((len(rows), width))
    for r, entries in enumerate(rows):
        for c, v in entries:
            X[r, c] = v
    return Dataset(X, map_labels(raw_labels), name or str(path))


def map_labels(raw):
    raw = np.asarray(raw, dtype=float)
    distinct = np.unique(raw)
    if distinct.size > 2:
        raise ParseError(f"expected at most two classes, found {distinct.size}")
    if set(distinct) <= {-1.0, 0.0, 1.0}:
        return np.where(raw > 0, 1.0, -1.0)
    if distinct.size == 1:
        return np.ones_like(raw)
    return np.where(raw == distinct[0], -1.0, 1.0)


def write_libsvm(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row, lab in zip(dataset.features, dataset.labels):
            parts = ["+1" if lab > 0 else "-1"]
            parts += [f"{j + 1}:{float(v)!r}" for j, v in enumerate(row) if v != 0]
            fh.write(" ".join(parts) + "\n")


# -- synthetic data and splits -------------------------------------------------

def make_synthetic(n_pos, n_neg, d, rng, separation=1.0, flip_fraction=0.0, normalize=False, name="synthetic"):
    """Two Gaussian classes with means +/- (separation/2) * u along a random unit u.

    A bias feature (constant 1) is appended as the last column, and with
    ``normalize`` every row is then scaled to unit l2 norm. ``flip_fraction``
    corrupts labels of the whole set; use :func:`flip_labels` to corrupt a
    single split instead.
    """
    u = rng.normal(size=d - 1)
    u /= np.linalg.norm(u)
    Xp = rng.normal(size=(n_pos, d - 1)) + 0.5 * separation * u
    Xn = rng.normal(size=(n_neg, d - 1)) - 0.5 * separation * u
    X = np.vstack([Xp, Xn])
    X = np.hstack([X, np.ones((X.shape[0], 1))])
    if normalize:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    ds = Dataset(X, y, name)
    if flip_fraction:
        ds = flip_labels(ds, flip_fraction, rng)
    return ds


def flip_labels(dataset, fraction, rng):
    """Flip the labels of a uniformly chosen ``fraction`` of the points."""
    if not 0 <= fraction <= 1:
        raise ConfigurationError("flip fraction must lie in [0, 1]")
    k = int(round(fraction * dataset.n))
    idx = rng.choice(dataset.n, size=k, replace=False)
    y = dataset.labels.copy()
    y[idx] = -y[idx]
    return Dataset(dataset.features, y, dataset.name)


def imbalance_split(dataset, neg_keep_fraction, test_fraction, rng):
    """Balanced stratified test split, then thin the remaining negatives.

    The test set takes ``round(test_fraction * min(#pos, #neg))`` points of each
    class; of the remaining negatives only ``neg_keep_fraction`` stay in train.
    """
    if not 0 < neg_keep_fraction <= 1:
        raise ConfigurationError("neg_keep_fraction must lie in (0, 1]")
    if not 0 <= test_fraction < 1:
        raise ConfigurationError("test_fraction must lie in [0, 1)")
    pos = np.flatnonzero(dataset.labels > 0)
    neg = np.flatnonzero(dataset.labels < 0)
    if pos.size == 0 or neg.size == 0:
        raise ConfigurationError("both classes must be present")
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    k = int(round(test_fraction * min(pos.size, neg.size)))
    test_idx = np.concatenate([pos[:k], neg[:k]])
    rest_pos, rest_neg = pos[k:], neg[k:]
    keep = int(round(neg_keep_fraction * rest_neg.size))
    if rest_pos.size == 0 or keep == 0:
        raise ConfigurationError("a class would become empty in the training split")
    train_idx = np.sort(np.concatenate([rest_pos, rest_neg[:keep]]))
    test_idx = np.sort(test_idx)
    if test_idx.size and (not np.any(dataset.labels[test_idx] > 0) or not np.any(dataset.labels[test_idx] < 0)):
        raise ConfigurationError("a class would become empty in the test split")
    return dataset.subset(train_idx, dataset.name + "-train"), dataset.subset(test_idx, dataset.name + "-test")


# -- metrics --------------------------------------------------------------------

def metrics(scores, labels):
    """(error rate, F-score of the positive class) for predictions sign(score), 0 -> +1."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.shape != labels.shape:
        raise ConfigurationError("scores and labels must have equal length")
    pred = np.where(scores >= 0, 1.0, -1.0)
    err = float(np.mean(pred != labels)) if labels.size else 0.0
    tp = float(np.sum((pred > 0) & (labels > 0)))
    fp = float(np.sum((pred > 0) & (labels < 0)))
    fn = float(np.sum((pred < 0) & (labels > 0)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return err, f


# -- traces ---------------------------------------------------------------------

TRACE_HEADER = ["t", "data_passes", "psi", "moreau_grad_sq", "test_error", "f_score", "wall_ms"]


@dataclass
class TraceRow:
    t: int
    data_passes: float
    psi: float = math.nan
    moreau_grad_sq: float = math.nan
    test_error: float = math.nan
    f_score: float = math.nan
    wall_ms: float = math.nan


def format_float(v):
    """17 significant digits; NaN (or None) becomes the empty string."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def write_trace_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([str(int(r.t))] + [format_float(getattr(r, k)) for k in TRACE_HEADER[1:]])


def read_trace_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise ParseError(f"unexpected trace header {header!r}", 1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TRACE_HEADER):
                raise ParseError("wrong number of fields", lineno)
            vals = [math.nan if s == "" else float(s) for s in rec[1:]]
            rows.append(TraceRow(int(rec[0]), *vals))
    return rows
