"""Scenario ingestion, the end-to-end simulation loop, and report generation.

A scenario drives the topology, photonics, and control plane through a
sorted timeline. Measurements synthesize per-setting timestamp streams,
count coincidences, and feed the Bayesian estimator. Everything downstream
of the scenario seed is deterministic, and the canonical JSON report is
byte-stable for a fixed input.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .control import ControllerEvent, HealthPolicy, controller_cycle, LinkStatus
from .grid import AllocationPlan, FrequencySlot, validate_plan
from .photonics import (
    DetectorModel,
    SourceModel,
    channel_pair_rate,
    coincidence_rates,
    effective_state,
    transmittance_from_db,
)
from .timetag import CoincidenceConfig, count_coincidences, generate_pair_streams
from .tomography import (
    PosteriorSummary,
    SamplerConfig,
    TomographyDataset,
    TomographyRow,
    all_settings,
    bayesian_estimate,
    projection_probability,
)
from .topology import (
    Blocked,
    NetworkState,
    Topology,
    build_topology,
    fail_span,
    initial_state,
    resolve_lightpath,
    restore_span,
    route_slot,
    set_wss_route,
)

logger = logging.getLogger("entmesh")

MEASUREMENT_JITTER_PS = 50.0


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    file: str
    path: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"{self.file}:{self.line}" if self.line else self.file
        return f"{where}: {self.path}: {self.message}"


@dataclass(frozen=True)
class PhotonicsConfig:
    source: SourceModel
    detectors: Mapping[str, DetectorModel]
    window_s: float
    anchor: Mapping[str, Any]

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PhotonicsConfig":
        detectors = {
            user: DetectorModel(
                efficiency=float(d["eta"]),
                dark_rate_hz=float(d.get("dark", 0.0)),
                dead_time_s=float(d.get("dead_time", 0.0)),
            )
            for user, d in doc["detectors"].items()
        }
        source = SourceModel(
            total_pair_rate_hz=float(doc["R0"]),
            spectral_fwhm_ghz=float(doc.get("fwhm_ghz", 310.0)),
            intrinsic_visibility=float(doc["V0"]),
        )
        return cls(
            source=source,
            detectors=detectors,
            window_s=float(doc.get("window_ns", 1.0)) * 1e-9,
            anchor=doc.get("calibration_anchor", {}),
        )


@dataclass(frozen=True)
class TimelineEvent:
    t_s: float
    kind: str
    params: Mapping[str, Any]


@dataclass(frozen=True)
class Scenario:
    label: str
    seed: int
    topology_doc: dict
    allocation: AllocationPlan
    policy: HealthPolicy
    timeline: tuple[TimelineEvent, ...]
    allocations_by_ref: Mapping[str, AllocationPlan]
    hashes: Mapping[str, str]


def packaged_fixture_path(name: str) -> Path:
    """Path of a fixture shipped inside the package."""
    return Path(resources.files("entmesh").joinpath("fixtures", name))  # type: ignore[arg-type]


def _resolve_ref(ref: str, base_dir: Path) -> Path:
    candidate = (base_dir / ref).resolve()
    if candidate.exists():
        return candidate
    packaged = packaged_fixture_path(ref)
    if packaged.exists():
        return packaged
    raise HarnessError(f"cannot resolve fixture reference {ref!r}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario and everything it references; raises on any defect."""
    diagnostics = validate_scenario_file(path)
    if diagnostics:
        raise HarnessError("; ".join(str(d) for d in diagnostics))
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    topo_path = _resolve_ref(doc["topology"], base)
    alloc_path = _resolve_ref(doc["allocation"], base)
    policy_path = _resolve_ref(doc["policy"], base)

    hashes = {
        "scenario": _sha256(path),
        "topology": _sha256(topo_path),
        "allocation": _sha256(alloc_path),
        "policy": _sha256(policy_path),
    }
    allocations: dict[str, AllocationPlan] = {}
    timeline = []
    for item in doc.get("timeline", []):
        params = {k: v for k, v in item.items() if k not in ("t", "event")}
        if item["event"] == "set_allocation":
            ref = item["allocation"]
            ref_path = _resolve_ref(ref, base)
            allocations[ref] = AllocationPlan.load(ref_path)
            hashes[f"allocation:{ref}"] = _sha256(ref_path)
        timeline.append(TimelineEvent(float(item["t"]), str(item["event"]), params))

    return Scenario(
        label=str(doc["label"]),
        seed=int(doc["seed"]),
        topology_doc=json.loads(topo_path.read_text()),
        allocation=AllocationPlan.load(alloc_path),
        policy=HealthPolicy.load(policy_path),
        timeline=tuple(timeline),
        allocations_by_ref=allocations,
        hashes=hashes,
    )


_EVENT_KINDS = {"fail_span", "restore_span", "set_allocation", "measure"}


def validate_scenario_file(path: str | Path) -> list[Diagnostic]:
    """Schema and cross-reference checks for one scenario file."""
    path = Path(path)
    out: list[Diagnostic] = []
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        return [Diagnostic(str(path), "/", f"unreadable: {exc}")]
    except json.JSONDecodeError as exc:
        return [Diagnostic(str(path), "/", exc.msg, line=exc.lineno)]

    def bad(pointer: str, message: str) -> None:
        out.append(Diagnostic(str(path), pointer, message))

    for key in ("label", "topology", "allocation", "policy", "seed", "timeline"):
        if key not in doc:
            bad("/", f"missing required key {key!r}")
    if out:
        return out

    base = path.parent
    topo = None
    try:
        topo_path = _resolve_ref(doc["topology"], base)
        topo = build_topology(json.loads(topo_path.read_text()))
        PhotonicsConfig.from_json_dict(json.loads(topo_path.read_text())["photonics"])
    except Exception as exc:
        bad("/topology", str(exc))
    allocation = None
    try:
        allocation = AllocationPlan.load(_resolve_ref(doc["allocation"], base))
    except Exception as exc:
        bad("/allocation", str(exc))
    try:
        HealthPolicy.load(_resolve_ref(doc["policy"], base))
    except Exception as exc:
        bad("/policy", str(exc))

    timeline = doc["timeline"]
    times = [item.get("t") for item in timeline]
    if any(t is None for t in times):
        bad("/timeline", "every event needs a time 't'")
        return out
    if any(b < a for a, b in zip(times, times[1:])):
        bad("/timeline", "timeline not sorted")

    current = allocation
    measured: set[frozenset] = set()
    for idx, item in enumerate(timeline):
        pointer = f"/timeline/{idx}"
        kind = item.get("event")
        if kind not in _EVENT_KINDS:
            bad(pointer, f"unknown event kind {kind!r}")
            continue
        if kind in ("fail_span", "restore_span"):
            span = item.get("span")
            if topo is not None and span not in {s.id for s in topo.spans()}:
                bad(pointer, f"unknown span {span!r}")
        elif kind == "set_allocation":
            try:
                current = AllocationPlan.load(_resolve_ref(item["allocation"], base))
            except Exception as exc:
                bad(pointer, str(exc))
        elif kind == "measure":
            pair = item.get("pair", [])
            if len(pair) != 2:
                bad(pointer, "measure needs a two-user pair")
                continue
            if item.get("duration_s", 0) <= 0:
                bad(pointer, "duration_s must be positive")
            if topo is not None:
                for user in pair:
                    if user not in topo.users():
                        bad(pointer, f"unknown user {user!r}")
            key = frozenset(pair)
            if key in measured:
                bad(pointer, f"pair {pair} measured more than once")
            measured.add(key)
            if current is not None:
                check = validate_plan(current, [tuple(pair)])
                if not check.ok:
                    bad(pointer, "; ".join(v.describe() for v in check.violations))
    return out


def validate(paths: list[str | Path]) -> list[Diagnostic]:
    """Validate several scenario files; empty result means clean."""
    out: list[Diagnostic] = []
    for p in paths:
        out.extend(validate_scenario_file(p))
    return out


def derive_routing(topo: Topology, state: NetworkState, plan: AllocationPlan) -> NetworkState:
    """Program every WSS so each assigned slot reaches its user under the
    current MEMS and span states. Unroutable slots are left unprogrammed."""
    cleared = NetworkState(mems=state.mems, wss_routing={}, span_status=state.span_status)
    out = cleared
    for slot, user in plan.entries:
        option = route_slot(topo, cleared, slot, user)
        if option is None:
            logger.warning("slot %s has no route to %s; left unrouted", slot, user)
            continue
        for wss_id, port in option.wss_ports.items():
            out = set_wss_route(out, wss_id, slot, port)
    return out


def analytic_singles(
    topo: Topology,
    state: NetworkState,
    plan: AllocationPlan,
    phot: PhotonicsConfig,
) -> dict[str, float]:
    """Reported singles rate per allocated user from the current lightpaths."""
    readings: dict[str, float] = {}
    for user in plan.users:
        detector = phot.detectors[user]
        raw = detector.dark_rate_hz
        for slot in plan.slots_for_user(user):
            path = resolve_lightpath(topo, state, slot, user)
            if isinstance(path, Blocked):
                continue
            t = transmittance_from_db(path.total_loss_db)
            raw += detector.efficiency * t * channel_pair_rate(phot.source, slot.channel)
        readings[user] = raw / (1.0 + raw * detector.dead_time_s)
    return readings


@dataclass(frozen=True)
class PairResult:
    pair: tuple[str, str]
    channels: tuple[int, ...]
    duration_s: float
    singles_hz: dict[str, float]
    true_rate_hz: float
    accidental_rate_hz: float
    accidental_multiplier: float
    path_loss_db: dict[str, float | None]
    total_counts: int
    posterior: PosteriorSummary

    def to_json_dict(self) -> dict:
        doc = {
            "pair": list(self.pair),
            "channels": list(self.channels),
            "duration_s": self.duration_s,
            "singles_hz": dict(self.singles_hz),
            "true_rate_hz": self.true_rate_hz,
            "accidental_rate_hz": self.accidental_rate_hz,
            "accidental_multiplier": self.accidental_multiplier,
            "path_loss_db": dict(self.path_loss_db),
            "total_counts": self.total_counts,
        }
        doc.update(self.posterior.to_json_dict())
        return doc


def measure_pair(
    topo: Topology,
    state: NetworkState,
    plan: AllocationPlan,
    phot: PhotonicsConfig,
    pair: tuple[str, str],
    duration_s: float,
    accidental_multiplier: float,
    rng: np.random.Generator,
    sampler: SamplerConfig | None = None,
) -> PairResult:
    """Simulate one 36-setting tomography acquisition for a user pair."""
    user_a, user_b = pair
    channels = plan.channels_for_pair(user_a, user_b)
    if not channels:
        raise HarnessError(f"allocation {plan.label!r} serves no conjugate pair for {pair}")

    singles = analytic_singles(topo, state, plan, phot)
    det_a, det_b = phot.detectors[user_a], phot.detectors[user_b]

    assigned = {slot: user for slot, user in plan.entries}
    losses: dict[str, float | None] = {user_a: None, user_b: None}
    true_total = 0.0
    for channel in channels:
        arm_t = {}
        for user in pair:
            slot = next(
                s
                for s in plan.slots_for_user(user)
                if s.channel == channel and assigned[s] == user
            )
            path = resolve_lightpath(topo, state, slot, user)
            if isinstance(path, Blocked):
                arm_t[user] = 0.0
            else:
                arm_t[user] = transmittance_from_db(path.total_loss_db)
                if losses[user] is None:
                    losses[user] = path.total_loss_db
        true, _ = coincidence_rates(
            channel_pair_rate(phot.source, channel),
            arm_t[user_a],
            det_a.efficiency,
            arm_t[user_b],
            det_b.efficiency,
            singles[user_a],
            singles[user_b],
            phot.window_s,
        )
        true_total += true
    accidental = singles[user_a] * singles[user_b] * phot.window_s
    accidental_eff = accidental_multiplier * accidental

    rho = effective_state(true_total, accidental_eff, phot.source.intrinsic_visibility)
    flux = true_total + accidental_eff

    window_ticks = max(int(round(phot.window_s * 1e12)), 1)
    rows = []
    total = 0
    for setting in all_settings():
        rate = flux * projection_probability(rho, setting)
        stream_a, stream_b = generate_pair_streams(
            pair_rate_hz=rate,
            detect_prob_a=1.0,
            detect_prob_b=1.0,
            dark_rate_a_hz=0.0,
            dark_rate_b_hz=0.0,
            duration_s=duration_s,
            jitter_ps=MEASUREMENT_JITTER_PS,
            offset_ps=0.0,
            seed=rng,
        )
        counts = count_coincidences(
            stream_a, stream_b, CoincidenceConfig(delay_ticks=0, window_ticks=window_ticks)
        )
        total += counts
        rows.append(TomographyRow(setting=setting, counts=counts, duration_s=duration_s))
    dataset = TomographyDataset(rows=tuple(rows))
    posterior = bayesian_estimate(dataset, sampler, rng)

    return PairResult(
        pair=pair,
        channels=channels,
        duration_s=duration_s,
        singles_hz={user_a: singles[user_a], user_b: singles[user_b]},
        true_rate_hz=true_total,
        accidental_rate_hz=accidental_eff,
        accidental_multiplier=accidental_multiplier,
        path_loss_db=losses,
        total_counts=total,
        posterior=posterior,
    )


@dataclass
class RunReport:
    label: str
    seed: int
    provenance: dict
    allocation_label: str
    allocation_assignments: list[dict]
    pairs: list[PairResult]
    controller_events: list[ControllerEvent]
    final_statuses: dict[str, str]

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "seed": self.seed,
            "provenance": self.provenance,
            "allocation": {
                "label": self.allocation_label,
                "assignments": self.allocation_assignments,
            },
            "pairs": [p.to_json_dict() for p in self.pairs],
            "controller_events": [e.to_json_dict() for e in self.controller_events],
            "final_statuses": self.final_statuses,
        }

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_canonical_json().encode()).hexdigest()

    def save(self, outdir: str | Path) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": outdir / "report.json",
            "csv": outdir / "report.csv",
            "events": outdir / "events.jsonl",
        }
        paths["json"].write_text(self.to_canonical_json())
        paths["csv"].write_text(report_csv(self.to_json_dict()))
        with open(paths["events"], "w") as fh:
            for event in self.controller_events:
                fh.write(json.dumps(event.to_json_dict(), sort_keys=True) + "\n")
        return paths


def report_csv(report: dict) -> str:
    """Delimited summary table: one row per measured pair."""
    lines = ["pair,rate,fidelity,fidelity_sd,E_N,E_N_sd,loss_a_db,loss_b_db"]
    for entry in report["pairs"]:
        pair = "-".join(entry["pair"])
        loss = entry["path_loss_db"]
        loss_a = loss.get(entry["pair"][0])
        loss_b = loss.get(entry["pair"][1])
        lines.append(
            ",".join(
                [
                    pair,
                    repr(entry["true_rate_hz"]),
                    repr(entry["fidelity"]["mean"]),
                    repr(entry["fidelity"]["sd"]),
                    repr(entry["log_negativity"]["mean"]),
                    repr(entry["log_negativity"]["sd"]),
                    "" if loss_a is None else repr(loss_a),
                    "" if loss_b is None else repr(loss_b),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def report_render(report_path: str | Path, fmt: str) -> str:
    """Render a stored report to the requested format ('json' or 'csv')."""
    doc = json.loads(Path(report_path).read_text())
    if fmt == "json":
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    if fmt == "csv":
        return report_csv(doc)
    raise HarnessError(f"unknown report format {fmt!r}")


def run(
    scenario: Scenario | str | Path,
    seed: int | None = None,
    sampler: SamplerConfig | None = None,
) -> RunReport:
    """Execute a scenario end to end; deterministic under the scenario seed."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    seed = scenario.seed if seed is None else seed

    topo = build_topology(scenario.topology_doc)
    phot = PhotonicsConfig.from_json_dict(scenario.topology_doc["photonics"])
    plan = scenario.allocation
    policy = scenario.policy
    state = derive_routing(topo, initial_state(topo), plan)

    seed_root = np.random.SeedSequence(seed)
    events: list[ControllerEvent] = []
    statuses: dict[str, LinkStatus] | None = None
    pairs: list[PairResult] = []

    def cycle(now: float) -> None:
        nonlocal state, statuses
        monitored = HealthPolicy(
            thresholds_hz={
                u: policy.thresholds_hz[u] for u in plan.users if u in policy.thresholds_hz
            },
            hysteresis=policy.hysteresis,
            interval_s=policy.interval_s,
            revert_on_restore=policy.revert_on_restore,
        )
        readings = analytic_singles(topo, state, plan, phot)
        result = controller_cycle(topo, state, plan, readings, monitored, statuses, now)
        state = result.state
        statuses = result.statuses
        events.extend(result.events)

    first_t = scenario.timeline[0].t_s if scenario.timeline else 0.0
    cycle(min(0.0, first_t))

    try:
        for event in scenario.timeline:
            if event.kind == "fail_span":
                state = fail_span(state, event.params["span"])
            elif event.kind == "restore_span":
                state = restore_span(state, event.params["span"])
            elif event.kind == "set_allocation":
                plan = scenario.allocations_by_ref[event.params["allocation"]]
                state = derive_routing(topo, state, plan)
            elif event.kind == "measure":
                child = np.random.default_rng(seed_root.spawn(1)[0])
                result = measure_pair(
                    topo,
                    state,
                    plan,
                    phot,
                    pair=tuple(event.params["pair"]),
                    duration_s=float(event.params["duration_s"]),
                    accidental_multiplier=float(
                        event.params.get("accidental_multiplier", 1.0)
                    ),
                    rng=child,
                    sampler=sampler,
                )
                pairs.append(result)
            else:
                raise HarnessError(f"unknown timeline event {event.kind!r}")
            cycle(event.t_s)
    except Exception as exc:
        # Abort with the partial controller log attached for post-mortems.
        fault = HarnessError(f"scenario {scenario.label!r} aborted: {exc}")
        fault.partial_events = events  # type: ignore[attr-defined]
        raise fault from exc

    provenance = {
        "seed": seed,
        "config_hashes": dict(scenario.hashes),
        "package_version": __version__,
    }
    return RunReport(
        label=scenario.label,
        seed=seed,
        provenance=provenance,
        allocation_label=scenario.allocation.label,
        allocation_assignments=scenario.allocation.to_json_dict()["assignments"],
        pairs=pairs,
        controller_events=events,
        final_statuses={u: s.state for u, s in (statuses or {}).items()},
    )
