"""HTTP JSON API over one campaign: state summary, scored candidates,
feasibility review, result entry, and async retraining.

Single-writer discipline: every mutation funnels through one lock and is
persisted (state + log) before the response returns; reads are cheap snapshot
views under the same lock. Retrains run on a single background worker and are
exposed as jobs; optimistic concurrency uses the state version as an ETag and
as an optional compare-and-set field on mutations.

Every non-2xx response body is exactly one error object:
{"code", "message", "detail"} with code in
{not_found, conflict, validation, numerical, busy}.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .campaign import (
    ROUND_CLOSED,
    ROUND_OPEN,
    CampaignSession,
    CampaignStore,
    Round,
)
from .domain import ExperimentResult
from .errors import (
    BusyError,
    DuplicateResultError,
    MolscoutError,
    NumericalFailureError,
    RoundSequenceError,
    UnknownMoleculeError,
    ValidationError,
)

logger = logging.getLogger(__name__)

_SORT_KEYS = {"ei": lambda c: c.ei, "mu": lambda c: c.mu, "sigma": lambda c: c.sigma}


class FeasibilityBody(BaseModel):
    feasible: bool
    note: str = ""
    version: Optional[int] = None


class ResultBody(BaseModel):
    molecule_id: str
    round: int
    pce_additive: float
    pce_control: float
    version: Optional[int] = None


@dataclass
class ApiError(Exception):
    code: str
    message: str
    status: int
    detail: Optional[dict] = None

    def body(self) -> dict:
        return {"code": self.code, "message": self.message, "detail": self.detail}


def _map_error(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, UnknownMoleculeError):
        return ApiError("not_found", str(exc), 404)
    if isinstance(exc, (DuplicateResultError, RoundSequenceError)):
        return ApiError("conflict", str(exc), 409)
    if isinstance(exc, BusyError):
        return ApiError("busy", str(exc), 409)
    if isinstance(exc, NumericalFailureError):
        return ApiError("numerical", str(exc), 500)
    if isinstance(exc, ValidationError):
        return ApiError("validation", str(exc), 422)
    raise exc


@dataclass
class Job:
    id: str
    status: str = "pending"  # pending | done | failed
    error: Optional[dict] = None


class JobRunner:
    """One worker thread; at most one retrain in flight per campaign."""

    def __init__(self):
        self._queue: "queue.Queue" = queue.Queue()
        self._jobs: dict[str, Job] = {}
        self._active = False
        self._counter = 0
        self._lock = threading.Lock()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while True:
            job, fn = self._queue.get()
            try:
                fn()
                job.status = "done"
            except Exception as exc:  # surface every failure on the job
                err = _map_error(exc) if isinstance(exc, MolscoutError) else ApiError(
                    "numerical" if isinstance(exc, NumericalFailureError) else "validation",
                    str(exc),
                    500,
                )
                job.status = "failed"
                job.error = err.body()
            finally:
                with self._lock:
                    self._active = False
                self._queue.task_done()

    def submit(self, fn) -> Job:
        with self._lock:
            if self._active or not self._queue.empty():
                raise BusyError("a retrain job is already in flight")
            self._counter += 1
            job = Job(id=f"job-{self._counter}")
            self._jobs[job.id] = job
            self._active = True
        self._queue.put((job, fn))
        return job

    def get(self, job_id: str) -> Job:
        try:
            return self._jobs[job_id]
        except KeyError:
            raise ApiError("not_found", f"unknown job {job_id!r}", 404) from None

    def wait_idle(self, timeout: float = 30.0) -> None:
        self._queue.join()


class CampaignManager:
    """Serialized owner of one campaign session plus its job runner."""

    def __init__(self, session: CampaignSession):
        self.session = session
        self.lock = threading.RLock()
        self.jobs = JobRunner()

    @classmethod
    def from_state_file(cls, state_path: str | Path) -> "CampaignManager":
        return cls(CampaignSession.open(CampaignStore(state_path)))

    @property
    def state(self):
        return self.session.state

    def _round(self, index: int) -> Round:
        try:
            return self.state.round_by_index(index)
        except ValidationError:
            raise ApiError("not_found", f"no round {index}", 404) from None

    def _check_version(self, expected: Optional[int]) -> None:
        if expected is not None and expected != self.state.version:
            raise ApiError(
                "conflict",
                f"state version is {self.state.version}, expected {expected}",
                409,
                detail={"version": self.state.version},
            )

    def summary(self) -> dict:
        s = self.state
        return {
            "campaign_id": s.campaign_id,
            "version": s.version,
            "results": len(s.results),
            "molecules": len(s.library),
            "representation_mode": s.config.representation_mode,
            "shortlist_size": s.config.acquisition.shortlist_size,
            "rounds": [
                {
                    "index": rnd.index,
                    "status": rnd.status,
                    "pool_size": len(rnd.pool_ids),
                    "selection_pool_size": len(rnd.selection_pool),
                    "scored": bool(rnd.scored),
                    "tested": list(rnd.tested),
                    "template_version": rnd.template_version,
                }
                for rnd in s.rounds
            ],
        }

    def candidate_rows(
        self, round_index: int, sort: str, limit: int, offset: int, feasible_only: bool
    ) -> tuple[list[dict], int]:
        rnd = self._round(round_index)
        if not rnd.scored:
            raise ApiError("conflict", f"round {round_index} is not scored yet", 409)
        if sort not in _SORT_KEYS:
            raise ApiError("validation", f"sort must be one of {sorted(_SORT_KEYS)}", 422)
        state = self.state
        candidates = [c for c in rnd.scored if c.feasible] if feasible_only else list(rnd.scored)
        candidates.sort(key=lambda c: (-_SORT_KEYS[sort](c), c.molecule_id))
        total = len(candidates)
        page = candidates[offset : offset + limit] if limit >= 0 else candidates[offset:]
        profiles = state.profiles.get(rnd.template_version, {})
        results_here = {
            r.molecule_id: r.delta_rel for r in state.results if r.round == rnd.index
        }
        rows = []
        for c in page:
            mol = state.library.get(c.molecule_id)
            prof = profiles.get(c.molecule_id)
            rows.append(
                {
                    "molecule_id": c.molecule_id,
                    "name": mol.name,
                    "smiles": mol.smiles,
                    "mu": c.mu,
                    "sigma": c.sigma,
                    "ei": c.ei,
                    "rank": c.rank,
                    "feasible": c.feasible,
                    "tested": c.molecule_id in results_here,
                    "delta_rel": results_here.get(c.molecule_id),
                    "soft_means": list(prof.mean) if prof else None,
                    "soft_stds": list(prof.std) if prof else None,
                }
            )
        return rows, total

    def set_feasibility(self, molecule_id: str, feasible: bool, note: str, expected_version: Optional[int]) -> dict:
        self._check_version(expected_version)
        rnd = self.state.current_round
        if rnd is None or rnd.status == ROUND_CLOSED:
            raise ApiError("conflict", "no open or awaiting round to review", 409)
        if molecule_id not in self.state.library:
            raise ApiError("not_found", f"unknown molecule {molecule_id!r}", 404)
        ts = datetime.now(timezone.utc).isoformat()
        self.session.set_feasibility(molecule_id, feasible, note, ts=ts)
        candidate = next((c for c in rnd.scored if c.molecule_id == molecule_id), None)
        return {
            "molecule_id": molecule_id,
            "feasible": feasible,
            "note": note,
            "rank": candidate.rank if candidate else None,
            "version": self.state.version,
        }

    def record_result(self, molecule_id: str, round_index: int, pce_additive: float, pce_control: float,
                      expected_version: Optional[int]) -> dict:
        self._check_version(expected_version)
        rnd = self.state.rounds[round_index - 1] if 1 <= round_index <= len(self.state.rounds) else None
        if round_index != 0 and rnd is None:
            raise ApiError("not_found", f"no round {round_index}", 404)
        if rnd is not None and rnd.status == ROUND_CLOSED:
            raise ApiError("conflict", f"round {round_index} is closed", 409)
        result = ExperimentResult.from_pce(molecule_id, round_index, pce_additive, pce_control)
        self.session.record_result(result)
        return {
            "molecule_id": molecule_id,
            "round": round_index,
            "delta_rel": result.delta_rel,
            "version": self.state.version,
        }

    def start_retrain(self, round_index: int) -> Job:
        rnd = self._round(round_index)
        if rnd is not self.state.current_round or rnd.status != ROUND_OPEN:
            raise ApiError("conflict", f"round {round_index} is not open", 409)

        def work():
            with self.lock:
                self.session.retrain()

        return self.jobs.submit(work)


def create_app(manager: CampaignManager | None = None, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="molscout review service", docs_url=None, redoc_url=None)
    app.state.manager = manager

    def mgr() -> CampaignManager:
        m = app.state.manager
        if m is None:
            raise ApiError("not_found", "no campaign loaded", 404)
        return m

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(MolscoutError)
    async def on_domain_error(request: Request, exc: MolscoutError):
        mapped = _map_error(exc)
        return JSONResponse(status_code=mapped.status, content=mapped.body())

    @app.exception_handler(RequestValidationError)
    async def on_request_validation(request: Request, exc: RequestValidationError):
        err = ApiError("validation", "invalid request body or parameters", 422, detail={"errors": exc.errors()})
        return JSONResponse(status_code=err.status, content=err.body())

    @app.get("/api/campaign")
    def get_campaign(request: Request, response: Response):
        m = mgr()
        with m.lock:
            body = m.summary()
        etag = f'"{body["version"]}"'
        response.headers["ETag"] = etag
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304, headers={"ETag": etag})
        return body

    @app.get("/api/rounds/{round_index}/candidates")
    def get_candidates(
        round_index: int,
        response: Response,
        sort: str = "ei",
        limit: int = 50,
        offset: int = 0,
        feasible_only: bool = False,
    ):
        m = mgr()
        with m.lock:
            rows, total = m.candidate_rows(round_index, sort, limit, offset, feasible_only)
            version = m.state.version
        response.headers["X-Total-Count"] = str(total)
        response.headers["ETag"] = f'"{version}"'
        return {"round": round_index, "total": total, "candidates": rows, "version": version}

    @app.post("/api/candidates/{molecule_id}/feasibility")
    def post_feasibility(molecule_id: str, body: FeasibilityBody):
        m = mgr()
        with m.lock:
            return m.set_feasibility(molecule_id, body.feasible, body.note, body.version)

    @app.post("/api/results", status_code=201)
    def post_result(body: ResultBody):
        m = mgr()
        with m.lock:
            return m.record_result(body.molecule_id, body.round, body.pce_additive, body.pce_control, body.version)

    @app.get("/api/results/preview")
    def preview_result(pce_additive: float, pce_control: float):
        # dry run: validates and computes delta_rel without touching state
        result = ExperimentResult.from_pce("preview", 0, pce_additive, pce_control)
        return {"delta_rel": result.delta_rel}

    @app.post("/api/rounds/{round_index}/retrain", status_code=202)
    def post_retrain(round_index: int):
        m = mgr()
        with m.lock:
            job = m.start_retrain(round_index)
        return {"job_id": job.id, "status": job.status}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        m = mgr()
        job = m.jobs.get(job_id)
        body = {"job_id": job.id, "status": "pending" if job.status == "pending" else job.status}
        if job.error is not None:
            body["error"] = job.error
        return body

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
