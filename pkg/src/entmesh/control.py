"""Software-defined controller: health assessment, failure diagnosis,
recovery planning, and verified execution.

The controller is single-threaded over an ordered event list; every cycle
appends events with monotone timestamps. Planning and execution are pure
functions from (topology, state) to a new state, so a failed verification
simply discards the candidate state (rollback).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .grid import AllocationPlan, FrequencySlot
from .topology import (
    Blocked,
    Lightpath,
    NetworkState,
    RouteOption,
    Topology,
    TopologyError,
    enumerate_routes,
    resolve_lightpath,
    set_device_state,
    set_wss_route,
)

UP = "up"
DOWN = "down"

LOSS_VERIFY_TOL_DB = 0.5


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class HealthPolicy:
    """Per-detector minimum singles thresholds with flap suppression."""

    thresholds_hz: Mapping[str, float]
    hysteresis: float = 1.2
    interval_s: float = 1.0
    revert_on_restore: bool = False

    def __post_init__(self) -> None:
        if self.hysteresis < 1:
            raise ControlError("hysteresis factor must be >= 1")
        for user, threshold in self.thresholds_hz.items():
            if threshold <= 0:
                raise ControlError(f"threshold for {user} must be positive")

    @classmethod
    def from_dark_rates(
        cls, dark_rates_hz: Mapping[str, float], factor: float = 3.0, **kwargs
    ) -> "HealthPolicy":
        return cls(
            thresholds_hz={u: factor * d for u, d in dark_rates_hz.items()}, **kwargs
        )

    def to_json_dict(self) -> dict:
        return {
            "thresholds": dict(self.thresholds_hz),
            "hysteresis": self.hysteresis,
            "interval_s": self.interval_s,
            "revert_on_restore": self.revert_on_restore,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HealthPolicy":
        return cls(
            thresholds_hz={str(k): float(v) for k, v in doc["thresholds"].items()},
            hysteresis=float(doc.get("hysteresis", 1.2)),
            interval_s=float(doc.get("interval_s", 1.0)),
            revert_on_restore=bool(doc.get("revert_on_restore", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "HealthPolicy":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LinkStatus:
    user: str
    state: str  # "up" | "down"
    reading_hz: float | None
    time_s: float


@dataclass(frozen=True)
class ControllerEvent:
    time_s: float
    kind: str  # reading | status-change | diagnosis | plan | execute | verify | alert
    payload: dict

    def to_json_dict(self) -> dict:
        return {"time_s": self.time_s, "kind": self.kind, "payload": self.payload}


def write_event_log(events: list[ControllerEvent], path: str | Path) -> None:
    """Append-only JSON-lines event log."""
    with open(path, "w") as fh:
        for event in events:
            fh.write(json.dumps(event.to_json_dict(), sort_keys=True) + "\n")


def assess(
    readings_hz: Mapping[str, float | None],
    policy: HealthPolicy,
    previous: Mapping[str, LinkStatus] | None,
    time_s: float = 0.0,
) -> tuple[dict[str, LinkStatus], list[ControllerEvent]]:
    """Threshold each monitored user's singles reading.

    Up-to-down transitions are immediate; down-to-up requires the reading to
    exceed hysteresis * threshold. A missing reading counts as down.
    """
    statuses: dict[str, LinkStatus] = {}
    events: list[ControllerEvent] = []
    for user in sorted(policy.thresholds_hz):
        threshold = policy.thresholds_hz[user]
        reading = readings_hz.get(user)
        prior = previous.get(user) if previous else None
        if reading is None:
            state = DOWN
            events.append(
                ControllerEvent(time_s, "alert", {"user": user, "reason": "missing reading"})
            )
        elif prior is not None and prior.state == DOWN:
            state = UP if reading > policy.hysteresis * threshold else DOWN
        else:
            state = UP if reading >= threshold else DOWN
        statuses[user] = LinkStatus(user, state, reading, time_s)
        events.append(
            ControllerEvent(
                time_s,
                "reading",
                {"user": user, "reading_hz": reading, "threshold_hz": threshold, "state": state},
            )
        )
        if prior is not None and prior.state != state:
            events.append(
                ControllerEvent(
                    time_s, "status-change", {"user": user, "from": prior.state, "to": state}
                )
            )
    return statuses, events


@dataclass(frozen=True)
class Diagnosis:
    span_id: str | None
    reason: str

    @property
    def conclusive(self) -> bool:
        return self.span_id is not None


def _affected_users(
    topo: Topology, state: NetworkState, plan: AllocationPlan, span_id: str
) -> set[str]:
    """Users with at least one slot whose active lightpath traverses the span."""
    affected = set()
    for slot, user in plan.entries:
        path = resolve_lightpath(topo, state, slot, user)
        if isinstance(path, Lightpath) and path.traverses(span_id):
            affected.add(user)
    return affected


def diagnose(
    statuses: Mapping[str, LinkStatus],
    topo: Topology,
    state: NetworkState,
    plan: AllocationPlan,
) -> Diagnosis:
    """Attribute the down pattern to a single protected span, if possible.

    The down set must equal exactly the users whose active lightpaths
    traverse the candidate span; any other pattern is inconclusive.
    Resolution runs against the pre-failure picture (all spans treated as
    up) because the failed span itself blocks traversal.
    """
    down = {u for u, s in statuses.items() if s.state == DOWN}
    if not down:
        return Diagnosis(None, "all links up")
    healthy_spans = NetworkState(
        mems=state.mems,
        wss_routing=state.wss_routing,
        span_status={s.id: "up" for s in topo.spans()},
    )
    matches = []
    for span in sorted(topo.spans(), key=lambda s: s.id):
        if not span.protected:
            continue
        affected = _affected_users(topo, healthy_spans, plan, span.id)
        if affected and affected == down:
            matches.append(span.id)
    if len(matches) == 1:
        return Diagnosis(matches[0], f"down users {sorted(down)} match span {matches[0]}")
    return Diagnosis(None, f"down users {sorted(down)} match no single protected span")


@dataclass(frozen=True)
class Command:
    kind: str  # "wss_route" | "mems_set"
    device: str
    slot: FrequencySlot | None = None
    port: str | None = None
    state: str | None = None

    def to_json_dict(self) -> dict:
        doc: dict = {"kind": self.kind, "device": self.device}
        if self.kind == "wss_route":
            doc["slot"] = self.slot.key if self.slot else None
            doc["port"] = self.port
        else:
            doc["state"] = self.state
        return doc


@dataclass(frozen=True)
class RecoveryPlan:
    failed_span: str
    commands: tuple[Command, ...]
    expected_loss_db: Mapping[str, float]  # slot key -> dB after execution
    affected_slots: tuple[FrequencySlot, ...]
    expected_user_loss_db: Mapping[str, float]

    def to_json_dict(self) -> dict:
        return {
            "failed_span": self.failed_span,
            "commands": [c.to_json_dict() for c in self.commands],
            "expected_loss_db": dict(self.expected_loss_db),
            "expected_user_loss_db": dict(self.expected_user_loss_db),
        }


@dataclass(frozen=True)
class NoRouteAvailable:
    failed_span: str
    detail: str


def plan_recovery(
    topo: Topology,
    state: NetworkState,
    plan: AllocationPlan,
    failed_span: str,
) -> RecoveryPlan | NoRouteAvailable:
    """Reroute every slot whose user is cut off by ``failed_span``.

    Candidate routes come from exhaustive MEMS-state enumeration with the
    failed span (and any other currently failed span) excluded; the least
    added loss wins. The emitted commands are WSS routing updates for all
    affected slots followed by the MEMS state sets of the chosen routes.
    """
    if failed_span not in {s.id for s in topo.spans()}:
        raise TopologyError(f"unknown span {failed_span!r}")

    healthy = NetworkState(
        mems=state.mems,
        wss_routing=state.wss_routing,
        span_status={s.id: "up" for s in topo.spans()},
    )
    affected_users = sorted(_affected_users(topo, healthy, plan, failed_span))
    affected_slots = tuple(
        slot for slot, user in plan.entries if user in affected_users
    )
    if not affected_slots:
        return RecoveryPlan(
            failed_span=failed_span,
            commands=(),
            expected_loss_db={},
            affected_slots=(),
            expected_user_loss_db={},
        )

    statuses = dict(state.span_status)
    statuses[failed_span] = "failed"
    surviving = NetworkState(
        mems=state.mems, wss_routing=state.wss_routing, span_status=statuses
    )

    chosen: dict[str, RouteOption] = {}
    mems_states: dict[str, str] = {}
    for user in affected_users:
        options = enumerate_routes(topo, user, slot=None, state=surviving)
        if not options:
            return NoRouteAvailable(failed_span, f"no surviving route for user {user}")
        # Stable minimum: loss, then hop count, then the MEMS combination key.
        options = sorted(
            options,
            key=lambda o: (
                o.path.total_loss_db,
                len(o.path.hops),
                tuple(sorted(o.mems_states.items())),
            ),
        )
        best = options[0]
        for device, required in sorted(best.mems_states.items()):
            if mems_states.get(device, required) != required:
                return NoRouteAvailable(
                    failed_span, f"conflicting MEMS requirements at {device}"
                )
            mems_states[device] = required
        chosen[user] = best

    commands: list[Command] = []
    expected: dict[str, float] = {}
    expected_user: dict[str, float] = {}
    for slot, user in plan.entries:
        if user not in chosen:
            continue
        route = chosen[user]
        for wss_id in sorted(route.wss_ports):
            commands.append(
                Command("wss_route", wss_id, slot=slot, port=route.wss_ports[wss_id])
            )
        loss = sum(
            topo.element(h.element).loss_for(slot)  # type: ignore[union-attr]
            if h.element in topo.wss_ids()
            else h.loss_db
            for h in route.path.hops
        )
        expected[slot.key] = loss
        expected_user[user] = loss
    for device in sorted(mems_states):
        commands.append(Command("mems_set", device, state=mems_states[device]))

    return RecoveryPlan(
        failed_span=failed_span,
        commands=tuple(commands),
        expected_loss_db=expected,
        affected_slots=affected_slots,
        expected_user_loss_db=expected_user,
    )


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    rolled_back: bool
    details: tuple[str, ...]


def execute_and_verify(
    plan: RecoveryPlan,
    topo: Topology,
    state: NetworkState,
    allocation: AllocationPlan,
) -> tuple[NetworkState, VerificationReport]:
    """Apply commands in order, then re-resolve every affected slot.

    Any command referencing an unknown device rejects the plan before any
    mutation. A loss or reachability mismatch rolls back to the pre-plan
    state. Re-executing an applied plan is idempotent.
    """
    for command in plan.commands:
        if command.device not in topo.elements:
            raise TopologyError(f"plan references unknown device {command.device!r}")
        if command.kind not in ("wss_route", "mems_set"):
            raise ControlError(f"unknown command kind {command.kind!r}")

    candidate = state
    for command in plan.commands:
        if command.kind == "wss_route":
            assert command.slot is not None and command.port is not None
            candidate = set_wss_route(candidate, command.device, command.slot, command.port)
        else:
            assert command.state is not None
            candidate = set_device_state(candidate, command.device, command.state)

    details: list[str] = []
    ok = True
    assigned = {s: u for s, u in allocation.entries}
    for slot in plan.affected_slots:
        user = assigned[slot]
        resolved = resolve_lightpath(topo, candidate, slot, user)
        if isinstance(resolved, Blocked):
            ok = False
            details.append(f"slot {slot} to {user}: {resolved}")
            continue
        want = plan.expected_loss_db[slot.key]
        got = resolved.total_loss_db
        if abs(got - want) > LOSS_VERIFY_TOL_DB:
            ok = False
            details.append(
                f"slot {slot} to {user}: loss {got:.2f} dB outside {want:.2f}"
                f" +- {LOSS_VERIFY_TOL_DB} dB"
            )
        else:
            details.append(f"slot {slot} to {user}: loss {got:.2f} dB ok")
    if not ok:
        return state, VerificationReport(ok=False, rolled_back=True, details=tuple(details))
    return candidate, VerificationReport(ok=True, rolled_back=False, details=tuple(details))


@dataclass
class CycleResult:
    state: NetworkState
    statuses: dict[str, LinkStatus]
    events: list[ControllerEvent]
    recovered: bool = False


def controller_cycle(
    topo: Topology,
    state: NetworkState,
    allocation: AllocationPlan,
    readings_hz: Mapping[str, float | None],
    policy: HealthPolicy,
    previous_statuses: Mapping[str, LinkStatus] | None = None,
    time_s: float = 0.0,
) -> CycleResult:
    """One assess -> diagnose -> plan -> execute -> verify pass.

    Quiescent (readings only, no commands) while all monitored links are up.
    """
    statuses, events = assess(readings_hz, policy, previous_statuses, time_s)
    result = CycleResult(state=state, statuses=statuses, events=events)

    if all(s.state == UP for s in statuses.values()):
        return result

    diagnosis = diagnose(statuses, topo, state, allocation)
    events.append(
        ControllerEvent(
            time_s, "diagnosis", {"span": diagnosis.span_id, "reason": diagnosis.reason}
        )
    )
    if not diagnosis.conclusive:
        events.append(
            ControllerEvent(time_s, "alert", {"reason": "diagnosis inconclusive"})
        )
        return result

    recovery = plan_recovery(topo, state, allocation, diagnosis.span_id)
    if isinstance(recovery, NoRouteAvailable):
        events.append(
            ControllerEvent(
                time_s,
                "alert",
                {
                    "reason": "NoRouteAvailable",
                    "span": recovery.failed_span,
                    "detail": recovery.detail,
                },
            )
        )
        return result
    events.append(ControllerEvent(time_s, "plan", recovery.to_json_dict()))

    new_state, report = execute_and_verify(recovery, topo, state, allocation)
    events.append(
        ControllerEvent(
            time_s, "execute", {"commands": [c.to_json_dict() for c in recovery.commands]}
        )
    )
    events.append(
        ControllerEvent(
            time_s,
            "verify",
            {"ok": report.ok, "rolled_back": report.rolled_back, "details": list(report.details)},
        )
    )
    result.state = new_state
    result.recovered = report.ok
    return result
