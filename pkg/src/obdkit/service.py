"""HTTP facade for live trial conduct and simulation jobs.

Thin orchestration over the library: every decision returned by an endpoint
is computed by the same code paths the CLI and the test suite call, and all
trial state lives in the append-only event log. Payload schemas are the v1
JSON forms of the domain types.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse

from .core import DesignConfig, DomainError, DoseGrid, UtilitySpec, validate_utility_spec
from .decisions import (
    boin_boundaries,
    decision_table,
    randomization_weights,
    resolve_config,
    snapshot,
)
from .estimand import PatientRecord, StrategyMap, compare_strategies, default_strategy_map
from .sensitivity import prior_sensitivity, tipping_scan
from .session import TrialStore, TrialTerminated, UnknownTrial, decide
from .simulator import Scenario, operating_characteristics


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(data_dir: str | Path = "./data", max_parallelism: int = 1) -> FastAPI:
    app = FastAPI(title="obdkit", version="0.1.0")
    store = TrialStore(data_dir)
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()
    app.state.store = store

    @app.exception_handler(DomainError)
    async def _domain_error(request, exc):
        return _error(400, str(exc))

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        return _error(400, str(exc))

    @app.exception_handler(UnknownTrial)
    async def _unknown_trial(request, exc):
        return _error(404, f"unknown trial {exc.args[0]!r}")

    @app.exception_handler(TrialTerminated)
    async def _terminated(request, exc):
        return _error(409, str(exc))

    @app.post("/v1/trials", status_code=201)
    def create_trial(body: dict = Body(...)):
        config = DesignConfig.from_dict(body["config"])
        spec = UtilitySpec.from_dict(body["utility"])
        problems = validate_utility_spec(spec)
        if problems:
            raise DomainError("invalid utility spec: " + "; ".join(problems))
        grid = DoseGrid.from_dict(body["grid"])
        smap = (
            StrategyMap.from_dict(body["strategy_map"])
            if body.get("strategy_map")
            else default_strategy_map()
        )
        trial_id = str(body.get("trial_id") or f"t-{uuid.uuid4().hex[:12]}")
        session = store.create_trial(
            trial_id, config, spec, grid, smap, assignment_seed=int(body.get("assignment_seed", 0))
        )
        return {"trial_id": session.trial_id}

    @app.get("/v1/trials/{trial_id}")
    def get_trial(trial_id: str):
        return store.load(trial_id).state_document()

    @app.post("/v1/trials/{trial_id}/cohorts")
    def post_cohort(trial_id: str, body: dict = Body(...)):
        records = [PatientRecord.from_dict(r) for r in body.get("records", [])]
        outcomes, decision, session = store.enter_cohort(trial_id, records)
        return {
            "outcomes": [o.to_dict() for o in outcomes],
            "decision": decision.to_dict(),
            "enrolled": session.enrolled,
            "terminated": session.terminated,
        }

    @app.get("/v1/trials/{trial_id}/recommendation")
    def recommendation(trial_id: str):
        session = store.load(trial_id)
        snap = snapshot(session.dose_states(), session.spec, session.config)
        decision = session.last_decision or decide(session)
        weights = None
        if snap.admissible.dose_indices:
            weights = randomization_weights(snap.summaries, snap.admissible).to_dict()
        return {
            "trial_id": trial_id,
            "decision": decision.to_dict(),
            "summaries": [s.to_dict() for s in snap.summaries],
            "admissible": snap.admissible.to_dict(),
            "weights": weights,
            "terminated": session.terminated,
        }

    @app.post("/v1/trials/{trial_id}/whatif")
    def whatif(trial_id: str, body: dict = Body(default={})):
        session = store.load(trial_id)
        maps = [StrategyMap.from_dict(m) for m in body.get("maps", [])] or [session.smap]
        spec = (
            UtilitySpec.from_dict(body["utility"]) if body.get("utility") else session.spec
        )
        comparison = compare_strategies(
            session.records, maps, spec, session.config, n_doses=session.grid.J
        )
        return comparison.to_dict()

    @app.get("/v1/trials/{trial_id}/obd")
    def obd(trial_id: str):
        session = store.load(trial_id)
        snap = snapshot(session.dose_states(), session.spec, session.config)
        rationale = []
        if snap.obd is None:
            rationale.append("no admissible tested dose at or below the estimated MTD")
        else:
            rationale.append(
                f"dose {snap.obd} has the highest posterior mean utility among admissible "
                f"tested doses at or below the estimated MTD ({snap.mtd})"
            )
        return {
            "trial_id": trial_id,
            "obd": snap.obd,
            "mtd": snap.mtd,
            "rationale": rationale,
            "summaries": [s.to_dict() for s in snap.summaries],
            "admissible": snap.admissible.to_dict(),
        }

    @app.get("/v1/trials/{trial_id}/audit")
    def audit(trial_id: str):
        session = store.load(trial_id)
        return {"trial_id": trial_id, "events": session.events}

    @app.get("/v1/boundaries")
    def boundaries(phi: float, phi1: Optional[float] = None, phi2: Optional[float] = None):
        lam_e, lam_d = boin_boundaries(phi, phi1, phi2)
        return {"target_phi": phi, "lambda_e": lam_e, "lambda_d": lam_d}

    @app.post("/v1/trials/{trial_id}/sensitivity/prior")
    def prior(trial_id: str, body: dict = Body(default={})):
        session = store.load(trial_id)
        report = prior_sensitivity(
            session.records,
            session.smap,
            session.spec,
            session.config,
            epsilon=float(body.get("epsilon", 1e-6)),
            n_doses=session.grid.J,
        )
        return report.to_dict()

    @app.post("/v1/trials/{trial_id}/sensitivity/tipping")
    def tipping(trial_id: str, body: dict = Body(default={})):
        session = store.load(trial_id)
        report = tipping_scan(
            session.records,
            session.smap,
            session.spec,
            session.config,
            flip_to=body.get("flip_to"),
            mode=body.get("mode", "both"),
            n_doses=session.grid.J,
            exhaustive=bool(body.get("exhaustive", False)),
        )
        return report.to_dict()

    @app.post("/v1/trials/{trial_id}/notes")
    def add_note(trial_id: str, body: dict = Body(...)):
        store.add_note(trial_id, str(body.get("text", "")))
        return {"ok": True}

    @app.post("/v1/trials/{trial_id}/map")
    def amend_map(trial_id: str, body: dict = Body(...)):
        session = store.amend_map(trial_id, StrategyMap.from_dict(body["strategy_map"]))
        return {"ok": True, "strategy_map": session.smap.to_dict()}

    def _run_job(job_id: str, payload: dict) -> None:
        try:
            scenario = Scenario.from_dict(payload["scenario"])
            config = DesignConfig.from_dict(payload["config"])
            spec = (
                UtilitySpec.from_dict(payload["utility"])
                if payload.get("utility")
                else UtilitySpec.canonical()
            )
            smap = (
                StrategyMap.from_dict(payload["strategy_map"])
                if payload.get("strategy_map")
                else default_strategy_map()
            )
            oc = operating_characteristics(
                scenario,
                config,
                smap,
                spec,
                reps=int(payload.get("reps", 100)),
                master_seed=int(payload.get("seed", 0)),
                parallelism=min(int(payload.get("parallelism", 1)), max_parallelism),
                design=str(payload.get("design", "boin12")),
            )
            result = oc.to_dict()
            out = store.data_dir / "simulations" / f"{job_id}.json"
            out.write_text(oc.to_json(), encoding="utf-8")
            with jobs_lock:
                jobs[job_id] = {"status": "done", "result": result}
        except Exception as exc:  # surfaced via polling, not raised in-thread
            with jobs_lock:
                jobs[job_id] = {"status": "failed", "error": str(exc)}

    @app.post("/v1/simulations", status_code=202)
    def submit_simulation(body: dict = Body(...)):
        job_id = f"sim-{uuid.uuid4().hex[:12]}"
        with jobs_lock:
            jobs[job_id] = {"status": "running"}
        thread = threading.Thread(target=_run_job, args=(job_id, body), daemon=True)
        thread.start()
        return {"job_id": job_id}

    @app.get("/v1/simulations/{job_id}")
    def simulation_status(job_id: str):
        with jobs_lock:
            job = jobs.get(job_id)
        if job is None:
            path = store.data_dir / "simulations" / f"{job_id}.json"
            if path.exists():
                import json as _json

                return {"job_id": job_id, "status": "done", "result": _json.loads(path.read_text())}
            return _error(404, f"unknown simulation job {job_id!r}")
        return {"job_id": job_id, **job}

    @app.get("/v1/tables/decision")
    def table(
        n: int,
        trial_id: Optional[str] = None,
        format: str = "json",
    ):
        if trial_id is not None:
            session = store.load(trial_id)
            config, spec = session.config, session.spec
        else:
            config, spec = DesignConfig(), UtilitySpec.canonical()
        tbl = decision_table(resolve_config(config), spec, n)
        if format == "csv":
            return PlainTextResponse(tbl.to_csv(), media_type="text/csv")
        return {"columns": list(tbl.columns), "rows": [list(r) for r in tbl.rows]}

    return app
