"""Event-sourced live trial sessions.

A trial is an append-only JSON-lines log of events; everything shown to a
safety review committee is a pure fold of that log, so a restart followed
by replay reproduces every recommendation exactly, and the log doubles as
the audit trail. Event payloads carry all data needed by the fold; wall
clocks are recorded for the audit view but never enter the derived state.
"""

from __future__ import annotations

import datetime as _dt
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import DerivedOutcome, DesignConfig, DomainError, DoseGrid, DoseState, UtilitySpec, states_from_outcomes
from .decisions import Decision, next_dose, resolve_config, snapshot
from .estimand import PatientRecord, StrategyMap, derive_outcome
from .rng import replication_stream

EVENT_KINDS = ("trial_created", "cohort_entered", "decision_issued", "map_amended", "note")


class UnknownTrial(KeyError):
    """No trial with the requested id."""


class TrialTerminated(RuntimeError):
    """Cohorts cannot be entered after a terminate decision."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@dataclass
class TrialSession:
    """Materialized view of one trial's event log."""

    trial_id: str
    config: DesignConfig
    spec: UtilitySpec
    grid: DoseGrid
    smap: StrategyMap
    events: list[dict] = field(default_factory=list)
    records: list[PatientRecord] = field(default_factory=list)
    outcomes: list[DerivedOutcome] = field(default_factory=list)
    current_dose: int = 1
    last_cohort_dose: Optional[int] = None
    last_decision: Optional[Decision] = None
    assignment_seed: int = 0

    @property
    def terminated(self) -> bool:
        return self.last_decision is not None and self.last_decision.kind == "terminate"

    @property
    def termination_reason(self) -> Optional[str]:
        if not self.terminated:
            return None
        return "; ".join(self.last_decision.rationale)

    @property
    def enrolled(self) -> int:
        return len(self.records)

    def dose_states(self) -> list[DoseState]:
        return states_from_outcomes(self.outcomes, self.grid.J, self.spec.K)

    def max_grade_seen(self) -> int:
        grades = [
            e.grade or 0
            for r in self.records
            for e in r.events
            if e.kind == "toxicity"
        ]
        return max(grades, default=0)

    def titration_active(self, at_dose: Optional[int] = None) -> bool:
        tr = self.config.accelerated_titration
        if tr is None:
            return False
        dose = at_dose if at_dose is not None else self.current_dose
        return self.max_grade_seen() < tr.trigger_grade and dose < tr.trigger_dose_index

    def state_document(self) -> dict:
        """Portable snapshot of the session; the CLI consumes this format."""
        return {
            "schema_version": "v1",
            "trial_id": self.trial_id,
            "config": resolve_config(self.config).to_dict(),
            "utility": self.spec.to_dict(),
            "grid": self.grid.to_dict(),
            "strategy_map": self.smap.to_dict(),
            "current_dose": self.current_dose,
            "last_cohort_dose": self.last_cohort_dose,
            "enrolled": self.enrolled,
            "terminated": self.terminated,
            "termination_reason": self.termination_reason,
            "titration_active": self.titration_active(self.last_cohort_dose),
            "dose_states": [st.to_dict() for st in self.dose_states()],
            "last_decision": self.last_decision.to_dict() if self.last_decision else None,
            "records": [r.to_dict() for r in self.records],
        }


def fold(events: Sequence[dict]) -> TrialSession:
    """Rebuild a session from its event log; pure in the events."""
    if not events or events[0].get("kind") != "trial_created":
        raise DomainError("event log must start with trial_created")
    head = events[0]
    session = TrialSession(
        trial_id=str(head["trial_id"]),
        config=DesignConfig.from_dict(head["config"]),
        spec=UtilitySpec.from_dict(head["utility"]),
        grid=DoseGrid.from_dict(head["grid"]),
        smap=StrategyMap.from_dict(head["strategy_map"]),
        assignment_seed=int(head.get("assignment_seed", 0)),
    )
    session.events = list(events)
    for ev in events[1:]:
        kind = ev.get("kind")
        if kind == "cohort_entered":
            records = [PatientRecord.from_dict(r) for r in ev["records"]]
            session.records.extend(records)
            session.outcomes.extend(DerivedOutcome.from_dict(o) for o in ev["outcomes"])
            if records:
                session.last_cohort_dose = records[-1].dose_index
        elif kind == "decision_issued":
            session.last_decision = Decision.from_dict(ev["decision"])
            if session.last_decision.next_dose is not None:
                session.current_dose = session.last_decision.next_dose
        elif kind == "map_amended":
            session.smap = StrategyMap.from_dict(ev["strategy_map"])
        elif kind == "note":
            pass
        else:
            raise DomainError(f"unknown event kind {kind!r}")
    return session


def decide(session: TrialSession, at_dose: Optional[int] = None) -> Decision:
    """Library decision on the session's materialized state."""
    current = (
        at_dose
        if at_dose is not None
        else (session.last_cohort_dose or session.current_dose)
    )
    states = session.dose_states()
    snap = snapshot(states, session.spec, session.config)
    rng = None
    if session.config.assignment_mode != "deterministic":
        rng = replication_stream(session.assignment_seed, len(session.events))
    return next_dose(
        current,
        states,
        snap.summaries,
        session.config,
        rng=rng,
        titration_active=session.titration_active(current),
    )


class TrialStore:
    """JSON-lines persistence: one append-only file per trial plus an index.

    Writes to a trial are serialized behind a per-trial lock; reads replay
    the log into an immutable-in-spirit session snapshot.
    """

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        (self.data_dir / "simulations").mkdir(exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock(self, trial_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(trial_id, threading.Lock())

    def _log_path(self, trial_id: str) -> Path:
        return self.data_dir / f"{trial_id}.jsonl"

    def _index_path(self) -> Path:
        return self.data_dir / "index.json"

    def list_trials(self) -> list[dict]:
        path = self._index_path()
        if not path.exists():
            return []
        return json.loads(path.read_text(encoding="utf-8"))

    def _write_index(self, entries: list[dict]) -> None:
        self._index_path().write_text(
            json.dumps(entries, indent=2, sort_keys=True), encoding="utf-8"
        )

    def create_trial(
        self,
        trial_id: str,
        config: DesignConfig,
        spec: UtilitySpec,
        grid: DoseGrid,
        smap: StrategyMap,
        assignment_seed: int = 0,
    ) -> TrialSession:
        with self._registry_lock:
            if self._log_path(trial_id).exists():
                raise DomainError(f"trial {trial_id!r} already exists")
            event = {
                "seq": 0,
                "kind": "trial_created",
                "at": _now(),
                "trial_id": trial_id,
                "config": config.to_dict(),
                "utility": spec.to_dict(),
                "grid": grid.to_dict(),
                "strategy_map": smap.to_dict(),
                "assignment_seed": assignment_seed,
            }
            with open(self._log_path(trial_id), "w", encoding="utf-8") as fh:
                fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            entries = self.list_trials()
            entries.append({"trial_id": trial_id, "created_at": event["at"]})
            self._write_index(entries)
        return self.load(trial_id)

    def load(self, trial_id: str) -> TrialSession:
        path = self._log_path(trial_id)
        if not path.exists():
            raise UnknownTrial(trial_id)
        events = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        return fold(events)

    def _append(self, trial_id: str, event: dict) -> None:
        with open(self._log_path(trial_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")

    def enter_cohort(
        self, trial_id: str, records: Sequence[PatientRecord]
    ) -> tuple[list[DerivedOutcome], Decision, TrialSession]:
        """Derive, append, decide, append; the single write path for conduct."""
        if not records:
            raise DomainError("a cohort needs at least one patient record")
        doses = {r.dose_index for r in records}
        if len(doses) != 1:
            raise DomainError("all records in a cohort must share one dose")
        with self._lock(trial_id):
            session = self.load(trial_id)
            if session.terminated:
                raise TrialTerminated(session.termination_reason or "trial is terminated")
            dose = next(iter(doses))
            if not (1 <= dose <= session.grid.J):
                raise DomainError(f"dose {dose} outside the grid 1..{session.grid.J}")
            outcomes = [derive_outcome(r, session.smap, session.spec) for r in records]
            seq = len(session.events)
            self._append(
                trial_id,
                {
                    "seq": seq,
                    "kind": "cohort_entered",
                    "at": _now(),
                    "records": [r.to_dict() for r in records],
                    "outcomes": [o.to_dict() for o in outcomes],
                },
            )
            session = self.load(trial_id)
            decision = decide(session, at_dose=dose)
            self._append(
                trial_id,
                {
                    "seq": seq + 1,
                    "kind": "decision_issued",
                    "at": _now(),
                    "decision": decision.to_dict(),
                },
            )
            return outcomes, decision, self.load(trial_id)

    def amend_map(self, trial_id: str, smap: StrategyMap) -> TrialSession:
        with self._lock(trial_id):
            session = self.load(trial_id)
            self._append(
                trial_id,
                {
                    "seq": len(session.events),
                    "kind": "map_amended",
                    "at": _now(),
                    "strategy_map": smap.to_dict(),
                },
            )
            return self.load(trial_id)

    def add_note(self, trial_id: str, text: str) -> TrialSession:
        with self._lock(trial_id):
            session = self.load(trial_id)
            self._append(
                trial_id,
                {"seq": len(session.events), "kind": "note", "at": _now(), "text": text},
            )
            return self.load(trial_id)
