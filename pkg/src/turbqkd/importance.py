"""Permutation feature importance for window forecasters.

A feature is corrupted by shuffling its whole input column across examples:
every example keeps a coherent 720-step history, it just belongs to some
other example.  Importance is the ratio of the corrupted error to the
original error, so a feature the model ignores scores exactly 1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .forecaster.training import rmse_report

logger = logging.getLogger(__name__)

METEO_GROUP = ("pressure", "temperature", "relative_humidity", "wind_speed")


class UnknownFeatureError(KeyError):
    pass


def _columns(features: Sequence[str], names: str | Sequence[str]) -> list[int]:
    names = (names,) if isinstance(names, str) else tuple(names)
    missing = [n for n in names if n not in features]
    if missing:
        raise UnknownFeatureError(f"unknown feature(s) {missing}; available: {list(features)}")
    return [list(features).index(n) for n in names]


def non_identity_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation of ``range(n)`` that is never the identity (for n > 1)."""
    perm = rng.permutation(n)
    while n > 1 and np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return perm


def permute_feature(inputs: np.ndarray, features: Sequence[str], feature_or_group, seed) -> np.ndarray:
    """Copy of ``inputs`` (N, T, F) with the named column(s) shuffled across examples.

    All columns of a group move under one shared permutation.  ``seed`` may
    be an int or a ``numpy.random.Generator``.
    """
    inputs = np.asarray(inputs)
    cols = _columns(features, feature_or_group)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = non_identity_permutation(len(inputs), rng)
    out = inputs.copy()
    out[:, :, cols] = inputs[perm][:, :, cols]
    return out


@dataclass
class ImportanceEntry:
    name: str
    members: tuple[str, ...]
    scores: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def std(self) -> float:
        return float(np.std(self.scores))


@dataclass
class ImportanceReport:
    entries: list[ImportanceEntry]
    baseline_rmse: float
    repeats: int
    subset_size: int
    seed: int

    def __getitem__(self, name: str) -> ImportanceEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def ranking(self) -> list[str]:
        return [e.name for e in sorted(self.entries, key=lambda e: -e.mean)]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature_or_group", "importance_mean", "importance_std", "repeats"])
            for e in self.entries:
                w.writerow([e.name, repr(e.mean), repr(e.std), self.repeats])


def _targets(names, features, groups):
    out: list[tuple[str, tuple[str, ...]]] = []
    for n in (features if names is None else names):
        out.append((n, (n,)))
    for g, members in (groups or {}).items():
        out.append((g, tuple(members)))
    return out


def feature_importance(model, dataset, features: Sequence[str] | None = None,
                       groups: Mapping[str, Sequence[str]] | None = None, repeats: int = 3,
                       subset: int = 1000, seed: int = 0) -> ImportanceReport:
    """Importance ``I = rmse_permuted / rmse_original`` per feature and per group.

    ``dataset`` is a normalized :class:`WindowedDataset`; the first ``subset``
    examples are used.  Repeat ``i`` draws its permutation from ``seed + i``;
    the same stream order is used for every feature so reports are
    reproducible.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if subset > n:
        logger.warning("subset of %d requested but only %d examples exist; using all", subset, n)
        subset = n
    idx = np.arange(subset)
    x, y = dataset.inputs(idx), dataset.targets(idx)
    base = rmse_report(model.predict(x), y).mean_rmse
    if base <= 0:
        raise ValueError("model reproduces the subset exactly; importance ratio undefined")
    entries = []
    for name, members in _targets(features, dataset.features, groups):
        _columns(dataset.features, members)
        scores = np.empty(repeats)
        for i in range(repeats):
            xp = permute_feature(x, dataset.features, members, seed + i)
            scores[i] = rmse_report(model.predict(xp), y).mean_rmse / base
        entries.append(ImportanceEntry(name, members, scores))
    return ImportanceReport(entries, base, repeats, subset, seed)
