"""Soft-sample aggregation and hybrid feature-matrix assembly.

Column order is fixed so serialized models stay portable: sorted hard-descriptor
names first, then soft means, then soft stds, both in the canonical dimension
order of ``domain.SOFT_DIMENSIONS``. Constant columns are judged over all rows
by exact equality; the z-score scaler is fitted on training rows only (population
standard deviation) and applied to every row.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import MECHANISM_DIMENSIONS, SOFT_DIMENSIONS, MoleculeRecord, SoftSample
from .errors import (
    AllColumnsConstantError,
    EmptyTrainingSetError,
    MissingFeatureError,
    MissingProfileError,
    NoParsedSamplesError,
    ValidationError,
)
from .oracle import OracleResponseRecord

logger = logging.getLogger(__name__)

REPRESENTATION_MODES = ("hard", "mech_soft", "full_soft", "hybrid")


@dataclass(frozen=True)
class SoftProfile:
    """Per-molecule mean and population std over the six judgment dimensions."""

    molecule_id: str
    mean: tuple[float, ...]
    std: tuple[float, ...]
    n_parsed: int

    def __post_init__(self) -> None:
        if len(self.mean) != len(SOFT_DIMENSIONS) or len(self.std) != len(SOFT_DIMENSIONS):
            raise ValidationError("profile vectors must cover all six dimensions")
        if self.n_parsed < 1:
            raise ValidationError("n_parsed must be >= 1")
        if any(not (0.0 <= m <= 1.0) for m in self.mean):
            raise ValidationError("profile means must lie in [0, 1]")
        if any(s < 0.0 for s in self.std):
            raise ValidationError("profile stds must be >= 0")

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "n_parsed": self.n_parsed}

    @classmethod
    def from_dict(cls, molecule_id: str, payload: Mapping) -> "SoftProfile":
        return cls(
            molecule_id=molecule_id,
            mean=tuple(payload["mean"]),
            std=tuple(payload["std"]),
            n_parsed=int(payload["n_parsed"]),
        )


def aggregate_soft(samples: Sequence[SoftSample]) -> SoftProfile:
    """Aggregate parsed samples of one molecule into mean/std descriptors."""
    if not samples:
        raise NoParsedSamplesError("cannot aggregate zero parsed samples")
    mol_ids = {s.molecule_id for s in samples}
    if len(mol_ids) != 1:
        raise ValidationError(f"samples span multiple molecules: {sorted(mol_ids)}")
    matrix = np.array([s.vector() for s in samples], dtype=float)
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)  # population (1/n) convention
    return SoftProfile(
        molecule_id=samples[0].molecule_id,
        mean=tuple(float(m) for m in mean),
        std=tuple(float(s) for s in std),
        n_parsed=len(samples),
    )


def aggregate_records(records: Sequence[OracleResponseRecord]) -> SoftProfile:
    """Aggregate oracle records, dropping unparsed samples (flagged via log)."""
    parsed = [r.parsed for r in records if r.parse_ok and r.parsed is not None]
    if not parsed:
        mol = records[0].molecule_id if records else "<unknown>"
        raise NoParsedSamplesError(f"molecule {mol!r}: no parsable oracle samples")
    if len(parsed) < len(records):
        logger.warning(
            "molecule %r: only %d/%d oracle samples parsed; aggregating over parsed subset",
            records[0].molecule_id, len(parsed), len(records),
        )
    return aggregate_soft(parsed)


def soft_feature_names(mode: str) -> list[str]:
    if mode == "hard":
        return []
    dims = MECHANISM_DIMENSIONS if mode == "mech_soft" else SOFT_DIMENSIONS
    return [f"soft_mean_{d}" for d in dims] + [f"soft_std_{d}" for d in dims]


@dataclass(frozen=True)
class FeatureMatrix:
    """Assembled, constant-pruned, z-scored feature table bound to a training set.

    ``values`` holds standardized rows for every molecule (training and pool);
    the scaler statistics come from training rows only.
    """

    molecule_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    dropped_constant: tuple[str, ...]
    dropped_train_constant: tuple[str, ...]
    representation_mode: str
    training_ids: tuple[str, ...]

    def row_index(self, molecule_id: str) -> int:
        try:
            return self.molecule_ids.index(molecule_id)
        except ValueError:
            raise MissingFeatureError(f"molecule {molecule_id!r} not in feature matrix") from None

    def rows(self, molecule_ids: Iterable[str]) -> np.ndarray:
        return self.values[[self.row_index(m) for m in molecule_ids], :]

    @property
    def training_rows(self) -> np.ndarray:
        return self.rows(self.training_ids)


def _raw_value(name: str, mol: MoleculeRecord, profile: SoftProfile | None) -> float:
    if name.startswith("soft_mean_") or name.startswith("soft_std_"):
        if profile is None:
            raise MissingProfileError(f"molecule {mol.id!r} has no soft profile")
        block, dim = ("mean", name[len("soft_mean_"):]) if name.startswith("soft_mean_") else ("std", name[len("soft_std_"):])
        idx = SOFT_DIMENSIONS.index(dim)
        return profile.mean[idx] if block == "mean" else profile.std[idx]
    try:
        return float(mol.hard[name])
    except KeyError:
        raise MissingFeatureError(f"molecule {mol.id!r} missing hard descriptor {name!r}") from None


def assemble(
    mols: Sequence[MoleculeRecord],
    profiles: Mapping[str, SoftProfile],
    mode: str,
    training_ids: Sequence[str],
) -> FeatureMatrix:
    """Build the standardized feature matrix for one representation mode.

    Columns constant over all rows are dropped and recorded; columns constant
    on the training rows only (scaler std would be zero) are dropped and
    recorded separately.
    """
    if mode not in REPRESENTATION_MODES:
        raise ValidationError(f"unknown representation mode {mode!r}")
    if not mols:
        raise ValidationError("no molecules to assemble")
    if not training_ids:
        raise EmptyTrainingSetError("training set is empty")
    ids = [m.id for m in mols]
    id_set = set(ids)
    missing_train = [t for t in training_ids if t not in id_set]
    if missing_train:
        raise ValidationError(f"training ids not among molecules: {missing_train}")

    hard_names = sorted(mols[0].hard) if mode in ("hard", "hybrid") else []
    names = hard_names + soft_feature_names(mode)
    if mode != "hard":
        for m in mols:
            if m.id not in profiles:
                raise MissingProfileError(f"molecule {m.id!r} has no soft profile")

    raw = np.empty((len(mols), len(names)), dtype=float)
    for i, m in enumerate(mols):
        prof = profiles.get(m.id)
        for j, name in enumerate(names):
            raw[i, j] = _raw_value(name, m, prof)

    constant = np.all(raw == raw[0, :], axis=0)
    dropped_constant = tuple(n for n, c in zip(names, constant) if c)
    keep = ~constant
    kept_names = [n for n, k in zip(names, keep) if k]
    raw = raw[:, keep]
    if raw.shape[1] == 0:
        raise AllColumnsConstantError("all feature columns are constant over the pool")

    train_rows = np.array([ids.index(t) for t in training_ids], dtype=int)
    scaler_mean = raw[train_rows, :].mean(axis=0)
    scaler_std = raw[train_rows, :].std(axis=0)  # population convention
    degenerate = scaler_std == 0.0
    dropped_train_constant = tuple(n for n, d in zip(kept_names, degenerate) if d)
    if np.any(degenerate):
        keep2 = ~degenerate
        kept_names = [n for n, k in zip(kept_names, keep2) if k]
        raw = raw[:, keep2]
        scaler_mean = scaler_mean[keep2]
        scaler_std = scaler_std[keep2]
    if raw.shape[1] == 0:
        raise AllColumnsConstantError("all feature columns are constant on the training set")

    values = (raw - scaler_mean) / scaler_std
    return FeatureMatrix(
        molecule_ids=tuple(ids),
        feature_names=tuple(kept_names),
        values=values,
        scaler_mean=scaler_mean,
        scaler_std=scaler_std,
        dropped_constant=dropped_constant,
        dropped_train_constant=dropped_train_constant,
        representation_mode=mode,
        training_ids=tuple(training_ids),
    )


def transform(fm: FeatureMatrix, mol: MoleculeRecord, profile: SoftProfile | None = None) -> np.ndarray:
    """Standardize one candidate with the matrix's fitted scaler.

    Uses the same elementwise arithmetic as assemble, so transforming a row
    that participated in assembly reproduces its matrix row exactly.
    """
    raw = np.array([_raw_value(name, mol, profile) for name in fm.feature_names], dtype=float)
    return (raw - fm.scaler_mean) / fm.scaler_std


def write_features_csv(fm: FeatureMatrix, path: str | Path) -> None:
    """Audit export: molecule_id plus the retained standardized columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["molecule_id", *fm.feature_names])
        for mol_id, row in zip(fm.molecule_ids, fm.values):
            writer.writerow([mol_id, *[repr(float(v)) for v in row]])
