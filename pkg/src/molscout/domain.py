"""Core data model: molecule libraries, soft-descriptor samples, device results,
and benchmark answer sheets, plus CSV ingestion with row-level diagnostics.

Hard descriptors are ingested as data (columns prefixed ``hf_``), never computed
from structure. SMILES strings are carried along and checked syntactically only:
balanced brackets, paired ring-closure digits, legal character set. No chemistry.

Row numbers in ingestion errors are 1-based over data rows (the header row is
row 0 and never reported).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DuplicateIdError,
    MissingColumnError,
    ParseError,
    RaggedRowError,
    ValidationError,
)

logger = logging.getLogger(__name__)

#: The six mechanistic judgment dimensions, in canonical column order.
SOFT_DIMENSIONS: tuple[str, ...] = (
    "binding",
    "interfacial_shielding",
    "hydrophobic_protection",
    "ion_interaction",
    "electronic_modulation",
    "predicted_effect",
)

#: The mechanism-only subset (drops the overall predicted-effect score).
MECHANISM_DIMENSIONS: tuple[str, ...] = SOFT_DIMENSIONS[:5]

HARD_PREFIX = "hf_"
_REQUIRED_COLUMNS = ("id", "smiles", "name")

# Charset-only SMILES alphabet: element letters, ring digits, branch/bond/charge
# punctuation. Deliberately permissive; semantics are out of scope.
_SMILES_CHARS = frozenset(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    "()[]=#$-+/\\.@%:*~"
)


def validate_smiles(s: str) -> bool:
    """Syntactic SMILES check: charset, balanced () and [], paired ring digits.

    Total function, never raises. Ring-closure labels (digits or %nn outside
    square brackets) must each occur an even number of times; digits inside
    brackets are isotope/charge/H counts and are ignored.
    """
    if not s or not set(s) <= _SMILES_CHARS:
        return False
    if not any(c.isalpha() or c == "*" for c in s):
        return False
    paren_depth = 0
    in_brackets = False
    ring_counts: dict[str, int] = {}
    i = 0
    while i < len(s):
        c = s[i]
        if c == "(":
            paren_depth += 1
        elif c == ")":
            paren_depth -= 1
            if paren_depth < 0:
                return False
        elif c == "[":
            if in_brackets:
                return False
            in_brackets = True
        elif c == "]":
            if not in_brackets:
                return False
            in_brackets = False
        elif not in_brackets and c == "%":
            if i + 2 >= len(s) or not s[i + 1 : i + 3].isdigit():
                return False
            label = s[i + 1 : i + 3]
            ring_counts[label] = ring_counts.get(label, 0) + 1
            i += 2
        elif not in_brackets and c.isdigit():
            ring_counts[c] = ring_counts.get(c, 0) + 1
        i += 1
    if paren_depth != 0 or in_brackets:
        return False
    return all(count % 2 == 0 for count in ring_counts.values())


@dataclass(frozen=True)
class MoleculeRecord:
    """One library entry: identity plus a named vector of hard descriptors."""

    id: str
    smiles: str
    name: str
    hard: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("molecule id must be non-empty")
        if not validate_smiles(self.smiles):
            raise ValidationError(f"molecule {self.id!r}: invalid SMILES {self.smiles!r}")
        for key, value in self.hard.items():
            if not math.isfinite(value):
                raise ValidationError(f"molecule {self.id!r}: non-finite hard value {key}={value!r}")


@dataclass(frozen=True)
class MoleculeLibrary:
    """A validated set of records sharing one hard-descriptor name set."""

    records: tuple[MoleculeRecord, ...]
    descriptor_names: tuple[str, ...]

    def __post_init__(self) -> None:
        expected = set(self.descriptor_names)
        for rec in self.records:
            if set(rec.hard) != expected:
                raise ValidationError(
                    f"molecule {rec.id!r} exposes descriptors {sorted(rec.hard)}, "
                    f"library expects {sorted(expected)}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, molecule_id: str) -> bool:
        return molecule_id in self._index

    @property
    def _index(self) -> dict[str, MoleculeRecord]:
        cached = getattr(self, "_index_cache", None)
        if cached is None:
            cached = {rec.id: rec for rec in self.records}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def get(self, molecule_id: str) -> MoleculeRecord:
        try:
            return self._index[molecule_id]
        except KeyError:
            raise ValidationError(f"unknown molecule id {molecule_id!r}") from None

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]


@dataclass(frozen=True)
class SoftSample:
    """One oracle reasoning trajectory for one molecule: six scores in [0, 1]."""

    molecule_id: str
    sample_idx: int
    scores: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.sample_idx < 0:
            raise ValidationError("sample_idx must be >= 0")
        missing = [d for d in SOFT_DIMENSIONS if d not in self.scores]
        if missing:
            raise ValidationError(f"soft sample missing dimensions {missing}")
        for dim in SOFT_DIMENSIONS:
            v = self.scores[dim]
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValidationError(f"soft score {dim}={v!r} outside [0, 1]")

    def vector(self) -> tuple[float, ...]:
        return tuple(float(self.scores[d]) for d in SOFT_DIMENSIONS)


@dataclass(frozen=True)
class ExperimentResult:
    """One device measurement: additive vs control PCE, both in percent.

    ``delta_rel`` is the dimensionless optimization target
    (pce_additive - pce_control) / pce_control and is always derived, never
    supplied independently.
    """

    molecule_id: str
    round: int
    pce_additive: float
    pce_control: float
    delta_rel: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if self.round < 0:
            raise ValidationError("round must be >= 0")
        if not (0.0 < self.pce_control < 100.0):
            raise ValidationError(f"pce_control={self.pce_control!r} outside (0, 100)")
        if not (0.0 < self.pce_additive < 100.0):
            raise ValidationError(f"pce_additive={self.pce_additive!r} outside (0, 100)")
        derived = (self.pce_additive - self.pce_control) / self.pce_control
        if math.isnan(self.delta_rel):
            object.__setattr__(self, "delta_rel", derived)
        elif self.delta_rel != derived:
            raise ValidationError("delta_rel does not match (pce_additive - pce_control) / pce_control")

    @classmethod
    def from_pce(cls, molecule_id: str, round: int, pce_additive: float, pce_control: float) -> "ExperimentResult":
        return cls(molecule_id=molecule_id, round=round, pce_additive=pce_additive, pce_control=pce_control)


@dataclass(frozen=True)
class BenchmarkSheet:
    """Per-model 0/1 correctness vectors aligned to one list of question ids."""

    question_ids: tuple[str, ...]
    outcomes: Mapping[str, tuple[int, ...]]

    def __post_init__(self) -> None:
        n = len(self.question_ids)
        for model, vec in self.outcomes.items():
            if len(vec) != n:
                raise ValidationError(f"model {model!r} has {len(vec)} entries, expected {n}")
            if any(v not in (0, 1) for v in vec):
                raise ValidationError(f"model {model!r} has entries outside {{0, 1}}")

    def models(self) -> list[str]:
        return list(self.outcomes)

    def accuracy(self, model: str) -> tuple[int, int]:
        """(correct count, question count) for one model."""
        vec = self.outcomes[model]
        return sum(vec), len(vec)

    def discordant(self, model_a: str, model_b: str) -> tuple[int, int]:
        """(b, c) discordant-pair counts: a-only-correct, b-only-correct."""
        va, vb = self.outcomes[model_a], self.outcomes[model_b]
        b = sum(1 for x, y in zip(va, vb) if x == 1 and y == 0)
        c = sum(1 for x, y in zip(va, vb) if x == 0 and y == 1)
        return b, c


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(f"{path}: empty file") from None
        rows = list(reader)
    return [h.strip() for h in header], rows


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"row {row}: column {column!r}: non-numeric value {raw!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column {column!r}: non-finite value {raw!r}", row=row, column=column)
    return value


def ingest_molecules(path: str | Path) -> MoleculeLibrary:
    """Load and validate a molecule library from ``molecules.csv``.

    Required columns: id, smiles, name. Columns prefixed ``hf_`` become hard
    descriptors; any other column is ignored with a warning.
    """
    header, rows = _read_rows(path)
    for col in _REQUIRED_COLUMNS:
        if col not in header:
            raise MissingColumnError(f"{path}: missing required column {col!r}")
    hard_cols = [h for h in header if h.startswith(HARD_PREFIX)]
    ignored = [h for h in header if h not in _REQUIRED_COLUMNS and h not in hard_cols]
    if ignored:
        logger.warning("%s: ignoring non-descriptor columns %s", path, ignored)
    col_index = {h: i for i, h in enumerate(header)}

    records: list[MoleculeRecord] = []
    seen: dict[str, int] = {}
    for rownum, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise RaggedRowError(f"row {rownum}: {len(row)} cells, header has {len(header)}", row=rownum)
        mol_id = row[col_index["id"]].strip()
        if mol_id in seen:
            raise DuplicateIdError(
                f"row {rownum}: duplicate id {mol_id!r} (first seen at row {seen[mol_id]})", row=rownum
            )
        seen[mol_id] = rownum
        hard = {c: _parse_float(row[col_index[c]], rownum, c) for c in hard_cols}
        try:
            records.append(
                MoleculeRecord(
                    id=mol_id,
                    smiles=row[col_index["smiles"]].strip(),
                    name=row[col_index["name"]].strip(),
                    hard=hard,
                )
            )
        except ValidationError as exc:
            raise ParseError(f"row {rownum}: {exc}", row=rownum) from exc
    return MoleculeLibrary(records=tuple(records), descriptor_names=tuple(sorted(hard_cols)))


def write_molecules(library: MoleculeLibrary, path: str | Path) -> None:
    """Serialize a library back to the ingestion format (round-trip safe)."""
    header = ["id", "smiles", "name", *library.descriptor_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in library.records:
            writer.writerow([rec.id, rec.smiles, rec.name] + [repr(rec.hard[c]) for c in library.descriptor_names])


def ingest_results(path: str | Path) -> list[ExperimentResult]:
    """Load device results from ``results.csv``."""
    header, rows = _read_rows(path)
    required = ("molecule_id", "round", "pce_additive", "pce_control")
    for col in required:
        if col not in header:
            raise MissingColumnError(f"{path}: missing required column {col!r}")
    col_index = {h: i for i, h in enumerate(header)}
    out: list[ExperimentResult] = []
    for rownum, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise RaggedRowError(f"row {rownum}: {len(row)} cells, header has {len(header)}", row=rownum)
        try:
            rnd = int(row[col_index["round"]])
        except ValueError:
            raise ParseError(f"row {rownum}: column 'round': non-integer", row=rownum, column="round") from None
        try:
            out.append(
                ExperimentResult.from_pce(
                    molecule_id=row[col_index["molecule_id"]].strip(),
                    round=rnd,
                    pce_additive=_parse_float(row[col_index["pce_additive"]], rownum, "pce_additive"),
                    pce_control=_parse_float(row[col_index["pce_control"]], rownum, "pce_control"),
                )
            )
        except ValidationError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"row {rownum}: {exc}", row=rownum) from exc
    return out


def ingest_soft_samples(path: str | Path) -> list[SoftSample]:
    """Load raw per-sample soft scores from ``soft_samples.csv``."""
    header, rows = _read_rows(path)
    required = ("molecule_id", "sample_idx", *SOFT_DIMENSIONS)
    for col in required:
        if col not in header:
            raise MissingColumnError(f"{path}: missing required column {col!r}")
    col_index = {h: i for i, h in enumerate(header)}
    out: list[SoftSample] = []
    seen: set[tuple[str, int]] = set()
    for rownum, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise RaggedRowError(f"row {rownum}: {len(row)} cells, header has {len(header)}", row=rownum)
        mol_id = row[col_index["molecule_id"]].strip()
        try:
            idx = int(row[col_index["sample_idx"]])
        except ValueError:
            raise ParseError(f"row {rownum}: column 'sample_idx': non-integer", row=rownum, column="sample_idx") from None
        if (mol_id, idx) in seen:
            raise DuplicateIdError(f"row {rownum}: duplicate (molecule_id, sample_idx) ({mol_id!r}, {idx})", row=rownum)
        seen.add((mol_id, idx))
        scores = {d: _parse_float(row[col_index[d]], rownum, d) for d in SOFT_DIMENSIONS}
        try:
            out.append(SoftSample(molecule_id=mol_id, sample_idx=idx, scores=scores))
        except ValidationError as exc:
            raise ParseError(f"row {rownum}: {exc}", row=rownum) from exc
    return out


def ingest_benchmark(path: str | Path) -> BenchmarkSheet:
    """Load a paired 0/1 answer sheet from ``benchmark.csv``."""
    header, rows = _read_rows(path)
    if not header or header[0] != "question_id":
        raise MissingColumnError(f"{path}: first column must be 'question_id'")
    models = header[1:]
    if not models:
        raise MissingColumnError(f"{path}: no model columns")
    question_ids: list[str] = []
    vectors: dict[str, list[int]] = {m: [] for m in models}
    for rownum, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise RaggedRowError(f"row {rownum}: {len(row)} cells, header has {len(header)}", row=rownum)
        question_ids.append(row[0].strip())
        for m, raw in zip(models, row[1:]):
            raw = raw.strip()
            if raw not in ("0", "1"):
                raise ParseError(f"row {rownum}: column {m!r}: expected 0 or 1, got {raw!r}", row=rownum, column=m)
            vectors[m].append(int(raw))
    return BenchmarkSheet(
        question_ids=tuple(question_ids),
        outcomes={m: tuple(v) for m, v in vectors.items()},
    )


def results_by_molecule(results: Iterable[ExperimentResult]) -> dict[str, list[ExperimentResult]]:
    grouped: dict[str, list[ExperimentResult]] = {}
    for r in results:
        grouped.setdefault(r.molecule_id, []).append(r)
    return grouped


def training_targets(results: Sequence[ExperimentResult]) -> dict[str, float]:
    """Per-molecule training target: mean delta_rel over that molecule's results."""
    grouped = results_by_molecule(results)
    return {mol: sum(r.delta_rel for r in rs) / len(rs) for mol, rs in grouped.items()}
