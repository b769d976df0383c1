"""Closed-loop campaign state machine with durable, replayable persistence.

State is a single versioned JSON document (``campaign.state``) plus an
append-only mutation log (``campaign.log``, one JSON event per line). Every
mutation bumps the state version; replaying the log against its initial event
reproduces the final state, because the only nondeterministic input (oracle
sampling) is captured as ``set_profiles`` events carrying their data, and
retraining is deterministic under the recorded seeds.

Timestamps never enter the state document, so identical operation sequences
produce byte-identical state files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .acquire import AcquisitionConfig, ScoredCandidate, score_pool, shortlist
from .domain import ExperimentResult, MoleculeLibrary, MoleculeRecord, training_targets
from .errors import (
    DuplicateResultError,
    InsufficientDataError,
    MissingProfileError,
    RoundSequenceError,
    UnknownMoleculeError,
    ValidationError,
)
from .featurize import SoftProfile, aggregate_records, assemble
from .oracle import DEFAULT_TEMPLATE, OracleConfig, sample_molecule
from .surrogate import FitConfig, GpPosterior, fit

logger = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1

ROUND_OPEN = "open"
ROUND_AWAITING = "awaiting_results"
ROUND_CLOSED = "closed"


@dataclass
class Round:
    index: int
    pool_ids: list[str]
    template_version: str
    prioritized_ids: list[str] | None = None
    scored: list[ScoredCandidate] = field(default_factory=list)
    tested: list[str] = field(default_factory=list)
    status: str = ROUND_OPEN

    @property
    def selection_pool(self) -> list[str]:
        return self.prioritized_ids if self.prioritized_ids is not None else self.pool_ids

    def to_dict(self, shortlist_size: int) -> dict:
        return {
            "index": self.index,
            "pool_ids": list(self.pool_ids),
            "prioritized_ids": list(self.prioritized_ids) if self.prioritized_ids is not None else None,
            "template_version": self.template_version,
            "scored": [c.to_dict() for c in self.scored],
            "shortlist": [c.to_dict() for c in (shortlist(self.scored, shortlist_size) if self.scored else [])],
            "tested": list(self.tested),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Round":
        return cls(
            index=int(payload["index"]),
            pool_ids=list(payload["pool_ids"]),
            prioritized_ids=list(payload["prioritized_ids"]) if payload["prioritized_ids"] is not None else None,
            template_version=payload["template_version"],
            scored=[ScoredCandidate.from_dict(c) for c in payload["scored"]],
            tested=list(payload["tested"]),
            status=payload["status"],
        )


@dataclass(frozen=True)
class CampaignConfig:
    oracle: OracleConfig = OracleConfig()
    acquisition: AcquisitionConfig = AcquisitionConfig()
    fit: FitConfig = FitConfig()
    representation_mode: str = "hybrid"

    def to_dict(self) -> dict:
        return {
            "oracle": self.oracle.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "fit": {
                "seed": self.fit.seed,
                "n_restarts": self.fit.n_restarts,
                "bounds": [list(b) for b in self.fit.bounds],
                "center_y": self.fit.center_y,
            },
            "representation_mode": self.representation_mode,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "CampaignConfig":
        fit_p = payload["fit"]
        return cls(
            oracle=OracleConfig(**payload["oracle"]),
            acquisition=AcquisitionConfig(**payload["acquisition"]),
            fit=FitConfig(
                seed=int(fit_p["seed"]),
                n_restarts=int(fit_p["n_restarts"]),
                bounds=tuple(tuple(b) for b in fit_p["bounds"]),
                center_y=bool(fit_p["center_y"]),
            ),
            representation_mode=payload["representation_mode"],
        )


@dataclass
class CampaignState:
    campaign_id: str
    version: int
    library: MoleculeLibrary
    results: list[ExperimentResult]
    rounds: list[Round]
    profiles: dict[str, dict[str, SoftProfile]]
    templates: dict[str, str]
    feasibility: dict[str, dict]
    current_gp: dict | None
    config: CampaignConfig
    rng_seed: int

    @property
    def current_round(self) -> Round | None:
        return self.rounds[-1] if self.rounds else None

    def feasibility_map(self) -> dict[str, bool]:
        return {mol: bool(flag["feasible"]) for mol, flag in self.feasibility.items()}

    def round_by_index(self, index: int) -> Round:
        if 1 <= index <= len(self.rounds):
            return self.rounds[index - 1]
        raise ValidationError(f"no round {index}")

    def current_shortlist(self, round_index: int | None = None) -> list[ScoredCandidate]:
        rnd = self.current_round if round_index is None else self.round_by_index(round_index)
        if rnd is None or not rnd.scored:
            return []
        return shortlist(rnd.scored, self.config.acquisition.shortlist_size)


def _bump(state: CampaignState) -> CampaignState:
    state.version += 1
    return state


def init_campaign(
    library: MoleculeLibrary,
    hot_start_results: Sequence[ExperimentResult],
    config: CampaignConfig = CampaignConfig(),
    campaign_id: str | None = None,
    rng_seed: int = 0,
) -> CampaignState:
    """Create a fresh campaign seeded with the already-measured hot-start set."""
    if len(hot_start_results) < 2:
        raise InsufficientDataError("a campaign needs at least 2 hot-start results")
    seen: set[tuple[str, int]] = set()
    for r in hot_start_results:
        if r.round != 0:
            raise ValidationError(f"hot-start result for {r.molecule_id!r} must carry round 0, got {r.round}")
        if r.molecule_id not in library:
            raise UnknownMoleculeError(f"hot-start molecule {r.molecule_id!r} not in library")
        key = (r.molecule_id, r.round)
        if key in seen:
            raise DuplicateResultError(f"duplicate hot-start result for {r.molecule_id!r}")
        seen.add(key)
    if campaign_id is None:
        digest = hashlib.sha256(
            ("|".join(sorted(r.molecule_id for r in hot_start_results)) + f"|{rng_seed}").encode()
        ).hexdigest()[:12]
        campaign_id = f"campaign-{digest}"
    return CampaignState(
        campaign_id=campaign_id,
        version=1,
        library=library,
        results=list(hot_start_results),
        rounds=[],
        profiles={},
        templates={},
        feasibility={},
        current_gp=None,
        config=config,
        rng_seed=rng_seed,
    )


def open_round(
    state: CampaignState,
    pool_ids: Sequence[str],
    template_version: str,
    template_text: str | None = None,
    prioritized_ids: Sequence[str] | None = None,
) -> CampaignState:
    """Append a new open round over a pool snapshot."""
    current = state.current_round
    if current is not None and current.status != ROUND_CLOSED:
        raise RoundSequenceError(f"round {current.index} is still {current.status}")
    if not pool_ids:
        raise ValidationError("round pool is empty")
    unknown = [m for m in pool_ids if m not in state.library]
    if unknown:
        raise UnknownMoleculeError(f"pool molecules not in library: {unknown[:5]}")
    if prioritized_ids is not None:
        stray = set(prioritized_ids) - set(pool_ids)
        if stray:
            raise ValidationError(f"prioritized ids outside pool: {sorted(stray)[:5]}")
    if template_text is not None:
        existing = state.templates.get(template_version)
        if existing is not None and existing != template_text:
            raise ValidationError(f"template version {template_version!r} already exists with different text")
        state.templates[template_version] = template_text
    elif template_version not in state.templates:
        state.templates[template_version] = DEFAULT_TEMPLATE
    state.rounds.append(
        Round(
            index=len(state.rounds) + 1,
            pool_ids=list(pool_ids),
            template_version=template_version,
            prioritized_ids=list(prioritized_ids) if prioritized_ids is not None else None,
        )
    )
    return _bump(state)


def _append_result(state: CampaignState, result: ExperimentResult) -> None:
    if result.molecule_id not in state.library:
        raise UnknownMoleculeError(f"unknown molecule {result.molecule_id!r}")
    current_index = len(state.rounds)
    if result.round > current_index:
        raise ValidationError(f"round {result.round} is ahead of current round {current_index}")
    if any(r.molecule_id == result.molecule_id and r.round == result.round for r in state.results):
        raise DuplicateResultError(f"duplicate result for {result.molecule_id!r} at round {result.round}")
    state.results.append(result)


def record_result(state: CampaignState, result: ExperimentResult) -> CampaignState:
    """Append one measured result; prior results are never modified."""
    _append_result(state, result)
    return _bump(state)


def set_profiles(state: CampaignState, template_version: str, profiles: Mapping[str, SoftProfile]) -> CampaignState:
    """Cache aggregated soft profiles under one template version."""
    if template_version not in state.templates:
        state.templates[template_version] = DEFAULT_TEMPLATE
    bucket = state.profiles.setdefault(template_version, {})
    bucket.update(profiles)
    return _bump(state)


def generate_profiles(
    state: CampaignState,
    template_version: str,
    molecule_ids: Sequence[str],
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, SoftProfile]:
    """Run the configured oracle for molecules lacking a cached profile.

    Pure with respect to state: returns only the newly generated profiles so
    the caller can log them before applying set_profiles.
    """
    template_text = state.templates.get(template_version, DEFAULT_TEMPLATE)
    cached = state.profiles.get(template_version, {})
    fresh: dict[str, SoftProfile] = {}
    for mol_id in molecule_ids:
        if mol_id in cached or mol_id in fresh:
            continue
        records = sample_molecule(state.config.oracle, state.library.get(mol_id), template_text, sleep)
        fresh[mol_id] = aggregate_records(records)
    return fresh


def _derived_seed(state: CampaignState, *tags: int) -> int:
    return int(np.random.SeedSequence([state.rng_seed & 0x7FFFFFFF, *tags]).generate_state(1)[0] % 2**31)


def training_molecule_ids(state: CampaignState) -> list[str]:
    targets = training_targets(state.results)
    return [rec.id for rec in state.library.records if rec.id in targets]


def profile_requirements(state: CampaignState) -> tuple[str, list[str]]:
    """(template_version, molecule ids needing profiles) for the open round."""
    rnd = state.current_round
    if rnd is None or rnd.status != ROUND_OPEN:
        raise RoundSequenceError("no open round")
    needed = list(dict.fromkeys(training_molecule_ids(state) + list(rnd.selection_pool)))
    return rnd.template_version, needed


def retrain_and_shortlist(state: CampaignState) -> CampaignState:
    """Refit the surrogate on all measured molecules and score the open round.

    Requires profiles for the training set and pool under the round's template
    version (unless the representation mode is hard). Deterministic given the
    state's seeds; moves the round to awaiting_results.
    """
    rnd = state.current_round
    if rnd is None or rnd.status != ROUND_OPEN:
        raise RoundSequenceError("retraining requires an open round")
    mode = state.config.representation_mode
    targets = training_targets(state.results)
    train_ids = training_molecule_ids(state)
    if len(train_ids) < 2:
        raise InsufficientDataError("need at least 2 measured molecules to retrain")
    pool = list(rnd.selection_pool)
    matrix_ids = list(dict.fromkeys(train_ids + pool))
    profiles = state.profiles.get(rnd.template_version, {})
    if mode != "hard":
        missing = [m for m in matrix_ids if m not in profiles]
        if missing:
            raise MissingProfileError(
                f"profiles missing for {len(missing)} molecules under template "
                f"{rnd.template_version!r} (first: {missing[:3]})"
            )
    mols = [state.library.get(m) for m in matrix_ids]
    fm = assemble(mols, profiles, mode, training_ids=train_ids)
    fit_cfg = replace(state.config.fit, seed=_derived_seed(state, 1, rnd.index, state.config.fit.seed))
    gp = fit(fm.rows(train_ids), np.array([targets[m] for m in train_ids]), fit_cfg)
    acq_cfg = state.config.acquisition
    if acq_cfg.policy == "random":
        acq_cfg = replace(acq_cfg, seed=_derived_seed(state, 2, rnd.index, acq_cfg.seed))
    scored = score_pool(gp, fm, pool, acq_cfg, feasibility=state.feasibility_map())
    if not any(c.feasible for c in scored):
        raise ValidationError("no feasible candidates in the round pool")
    rnd.scored = scored
    rnd.status = ROUND_AWAITING
    state.current_gp = gp.to_dict()
    return _bump(state)


def set_feasibility(state: CampaignState, molecule_id: str, feasible: bool, note: str = "") -> CampaignState:
    """Record an expert feasibility flag and re-rank the current shortlist."""
    if molecule_id not in state.library:
        raise UnknownMoleculeError(f"unknown molecule {molecule_id!r}")
    rnd = state.current_round
    if rnd is None or rnd.status == ROUND_CLOSED:
        raise RoundSequenceError("feasibility review requires an open or awaiting round")
    state.feasibility[molecule_id] = {"feasible": bool(feasible), "note": note}
    rnd.scored = [
        replace(c, feasible=feasible) if c.molecule_id == molecule_id else c for c in rnd.scored
    ]
    return _bump(state)


def close_round(
    state: CampaignState,
    tested_ids: Sequence[str],
    results: Sequence[ExperimentResult] = (),
) -> CampaignState:
    """Record the round's new measurements and freeze it.

    An empty tested set is allowed (the expert skipped the round). Results for
    molecules outside the tested set are rejected; molecules with results
    already recorded at this round index count as tested.
    """
    rnd = state.current_round
    if rnd is None or rnd.status != ROUND_AWAITING:
        raise RoundSequenceError("closing requires a round awaiting results")
    pool_set = set(rnd.pool_ids)
    stray = [m for m in tested_ids if m not in pool_set]
    if stray:
        raise ValidationError(f"tested molecules not in the round pool: {stray[:5]}")
    already = {r.molecule_id for r in state.results if r.round == rnd.index and r.molecule_id in pool_set}
    tested = sorted(set(tested_ids) | already)
    for r in results:
        if r.round != rnd.index:
            raise ValidationError(f"result for {r.molecule_id!r} carries round {r.round}, expected {rnd.index}")
        if r.molecule_id not in tested:
            raise ValidationError(f"result for untested molecule {r.molecule_id!r}")
        _append_result(state, r)
    rnd.tested = tested
    rnd.status = ROUND_CLOSED
    return _bump(state)


# --- serialization ---------------------------------------------------------


def _result_to_dict(r: ExperimentResult) -> dict:
    return {
        "molecule_id": r.molecule_id,
        "round": r.round,
        "pce_additive": r.pce_additive,
        "pce_control": r.pce_control,
        "delta_rel": r.delta_rel,
    }


def _result_from_dict(payload: Mapping) -> ExperimentResult:
    return ExperimentResult(
        molecule_id=payload["molecule_id"],
        round=int(payload["round"]),
        pce_additive=float(payload["pce_additive"]),
        pce_control=float(payload["pce_control"]),
        delta_rel=float(payload["delta_rel"]),
    )


def _library_to_dict(library: MoleculeLibrary) -> dict:
    return {
        "descriptor_names": list(library.descriptor_names),
        "records": [
            {"id": m.id, "smiles": m.smiles, "name": m.name, "hard": {k: m.hard[k] for k in sorted(m.hard)}}
            for m in library.records
        ],
    }


def _library_from_dict(payload: Mapping) -> MoleculeLibrary:
    return MoleculeLibrary(
        records=tuple(
            MoleculeRecord(id=r["id"], smiles=r["smiles"], name=r["name"], hard=dict(r["hard"]))
            for r in payload["records"]
        ),
        descriptor_names=tuple(payload["descriptor_names"]),
    )


def state_to_document(state: CampaignState) -> dict:
    size = state.config.acquisition.shortlist_size
    return {
        "format_version": STATE_FORMAT_VERSION,
        "campaign_id": state.campaign_id,
        "version": state.version,
        "rng_seed": state.rng_seed,
        "config": state.config.to_dict(),
        "library": _library_to_dict(state.library),
        "results": [_result_to_dict(r) for r in state.results],
        "rounds": [r.to_dict(size) for r in state.rounds],
        "profiles": {
            tv: {mol: prof.to_dict() for mol, prof in sorted(bucket.items())}
            for tv, bucket in sorted(state.profiles.items())
        },
        "templates": dict(sorted(state.templates.items())),
        "feasibility": dict(sorted(state.feasibility.items())),
        "current_gp": state.current_gp,
    }


def state_from_document(doc: Mapping) -> CampaignState:
    if doc.get("format_version") != STATE_FORMAT_VERSION:
        raise ValidationError(f"unsupported state format {doc.get('format_version')!r}")
    return CampaignState(
        campaign_id=doc["campaign_id"],
        version=int(doc["version"]),
        library=_library_from_dict(doc["library"]),
        results=[_result_from_dict(r) for r in doc["results"]],
        rounds=[Round.from_dict(r) for r in doc["rounds"]],
        profiles={
            tv: {mol: SoftProfile.from_dict(mol, p) for mol, p in bucket.items()}
            for tv, bucket in doc["profiles"].items()
        },
        templates=dict(doc["templates"]),
        feasibility={mol: dict(flag) for mol, flag in doc["feasibility"].items()},
        current_gp=doc["current_gp"],
        config=CampaignConfig.from_dict(doc["config"]),
        rng_seed=int(doc["rng_seed"]),
    )


def serialize_state(state: CampaignState) -> str:
    return json.dumps(state_to_document(state), sort_keys=True, indent=2) + "\n"


def state_hash(state: CampaignState) -> str:
    return hashlib.sha256(serialize_state(state).encode("utf-8")).hexdigest()


def current_gp(state: CampaignState) -> GpPosterior:
    if state.current_gp is None:
        raise ValidationError("campaign has no fitted surrogate yet")
    return GpPosterior.from_dict(state.current_gp)


# --- persistence and event log ---------------------------------------------


class CampaignStore:
    """Files on disk: the versioned state document and the append-only log."""

    def __init__(self, state_path: str | Path):
        self.state_path = Path(state_path)
        self.log_path = self.state_path.with_suffix(".log")

    def exists(self) -> bool:
        return self.state_path.exists()

    def save(self, state: CampaignState) -> None:
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(serialize_state(state), encoding="utf-8")

    def load(self) -> CampaignState:
        if not self.state_path.exists():
            raise ValidationError(f"no campaign state at {self.state_path}")
        return state_from_document(json.loads(self.state_path.read_text(encoding="utf-8")))

    def append_event(self, op: str, payload: dict, version: int, ts: str | None = None) -> None:
        event: dict = {"op": op, "version": version, "payload": payload}
        if ts is not None:
            event["ts"] = ts
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def read_events(self) -> list[dict]:
        if not self.log_path.exists():
            return []
        events = []
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                events.append(json.loads(line))
        return events

    def replay(self) -> CampaignState:
        """Rebuild the final state purely from the mutation log."""
        events = self.read_events()
        if not events or events[0]["op"] != "init":
            raise ValidationError("mutation log does not start with an init event")
        state = _apply_init(events[0]["payload"])
        for event in events[1:]:
            _apply_event(state, event["op"], event["payload"])
            if state.version != event["version"]:
                raise ValidationError(
                    f"replay version drift at op {event['op']!r}: {state.version} != {event['version']}"
                )
        return state


def _apply_init(payload: Mapping) -> CampaignState:
    return init_campaign(
        library=_library_from_dict(payload["library"]),
        hot_start_results=[_result_from_dict(r) for r in payload["hot_results"]],
        config=CampaignConfig.from_dict(payload["config"]),
        campaign_id=payload["campaign_id"],
        rng_seed=int(payload["rng_seed"]),
    )


def _apply_event(state: CampaignState, op: str, payload: Mapping) -> None:
    if op == "open_round":
        open_round(
            state,
            payload["pool_ids"],
            payload["template_version"],
            payload.get("template_text"),
            payload.get("prioritized_ids"),
        )
    elif op == "set_profiles":
        profiles = {
            mol: SoftProfile.from_dict(mol, p) for mol, p in payload["profiles"].items()
        }
        set_profiles(state, payload["template_version"], profiles)
    elif op == "retrain":
        retrain_and_shortlist(state)
    elif op == "record_result":
        record_result(state, _result_from_dict(payload["result"]))
    elif op == "set_feasibility":
        set_feasibility(state, payload["molecule_id"], payload["feasible"], payload.get("note", ""))
    elif op == "close_round":
        close_round(state, payload["tested_ids"], [_result_from_dict(r) for r in payload["results"]])
    else:
        raise ValidationError(f"unknown event op {op!r}")


class CampaignSession:
    """A store-backed campaign: every mutation is logged, applied, and saved."""

    def __init__(self, store: CampaignStore, state: CampaignState):
        self.store = store
        self.state = state

    @classmethod
    def create(
        cls,
        store: CampaignStore,
        library: MoleculeLibrary,
        hot_start_results: Sequence[ExperimentResult],
        config: CampaignConfig = CampaignConfig(),
        campaign_id: str | None = None,
        rng_seed: int = 0,
    ) -> "CampaignSession":
        state = init_campaign(library, hot_start_results, config, campaign_id, rng_seed)
        if store.log_path.exists():
            store.log_path.unlink()
        store.append_event(
            "init",
            {
                "campaign_id": state.campaign_id,
                "rng_seed": state.rng_seed,
                "config": state.config.to_dict(),
                "library": _library_to_dict(state.library),
                "hot_results": [_result_to_dict(r) for r in state.results],
            },
            version=state.version,
        )
        store.save(state)
        return cls(store, state)

    @classmethod
    def open(cls, store: CampaignStore) -> "CampaignSession":
        return cls(store, store.load())

    def _commit(self, op: str, payload: dict, ts: str | None = None) -> None:
        self.store.append_event(op, payload, version=self.state.version, ts=ts)
        self.store.save(self.state)

    def open_round(
        self,
        pool_ids: Sequence[str],
        template_version: str,
        template_text: str | None = None,
        prioritized_ids: Sequence[str] | None = None,
    ) -> None:
        open_round(self.state, pool_ids, template_version, template_text, prioritized_ids)
        self._commit(
            "open_round",
            {
                "pool_ids": list(pool_ids),
                "template_version": template_version,
                "template_text": template_text,
                "prioritized_ids": list(prioritized_ids) if prioritized_ids is not None else None,
            },
        )

    def set_profiles(self, template_version: str, profiles: Mapping[str, SoftProfile]) -> None:
        """Store externally supplied profiles (e.g. a released soft-sample file)."""
        set_profiles(self.state, template_version, profiles)
        self._commit(
            "set_profiles",
            {
                "template_version": template_version,
                "profiles": {mol: prof.to_dict() for mol, prof in sorted(profiles.items())},
            },
        )

    def ensure_profiles(self, sleep: Callable[[float], None] = time.sleep) -> int:
        """Generate and persist any missing profiles for the open round."""
        template_version, needed = profile_requirements(self.state)
        fresh = generate_profiles(self.state, template_version, needed, sleep)
        if fresh:
            set_profiles(self.state, template_version, fresh)
            self._commit(
                "set_profiles",
                {
                    "template_version": template_version,
                    "profiles": {mol: prof.to_dict() for mol, prof in sorted(fresh.items())},
                },
            )
        return len(fresh)

    def retrain(self, auto_profile: bool = True, sleep: Callable[[float], None] = time.sleep) -> None:
        if auto_profile and self.state.config.representation_mode != "hard":
            self.ensure_profiles(sleep)
        retrain_and_shortlist(self.state)
        self._commit("retrain", {})

    def record_result(self, result: ExperimentResult) -> None:
        record_result(self.state, result)
        self._commit("record_result", {"result": _result_to_dict(result)})

    def set_feasibility(self, molecule_id: str, feasible: bool, note: str = "", ts: str | None = None) -> None:
        set_feasibility(self.state, molecule_id, feasible, note)
        self._commit(
            "set_feasibility",
            {"molecule_id": molecule_id, "feasible": feasible, "note": note},
            ts=ts,
        )

    def close_round(self, tested_ids: Sequence[str], results: Sequence[ExperimentResult] = ()) -> None:
        close_round(self.state, tested_ids, results)
        self._commit(
            "close_round",
            {"tested_ids": list(tested_ids), "results": [_result_to_dict(r) for r in results]},
        )
