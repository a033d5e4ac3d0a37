"""Flex-grid slot arithmetic and spectrum allocation plans.

Slot identity is exact: centers are stored as signed integer multiples of
half a slot width (12.5 GHz) relative to the grid center, so slot equality
and routing-table lookups never depend on floating point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

#: Grid center, THz (half the pump frequency).
CENTER_FREQUENCY_THZ = Fraction("192.3125")
#: Uniform slot width, GHz.
SLOT_WIDTH_GHZ = 25
#: Number of conjugate signal/idler channel pairs.
NUM_CHANNEL_PAIRS = 8

# One half-slot unit is 12.5 GHz = 1/80 THz.
_UNITS_PER_THZ = 80


class GridError(ValueError):
    """Invalid slot index, role, or malformed allocation plan document."""


class Role(str, Enum):
    SIGNAL = "signal"
    IDLER = "idler"

    @property
    def short(self) -> str:
        return "s" if self is Role.SIGNAL else "i"


@dataclass(frozen=True)
class GridConstants:
    """Fixed parameters of the flex grid."""

    center_frequency_thz: Fraction = CENTER_FREQUENCY_THZ
    slot_width_ghz: int = SLOT_WIDTH_GHZ
    num_channel_pairs: int = NUM_CHANNEL_PAIRS

    def __post_init__(self) -> None:
        if self.slot_width_ghz <= 0:
            raise GridError("slot width must be positive")
        if self.num_channel_pairs < 1:
            raise GridError("need at least one channel pair")


DEFAULT_GRID = GridConstants()


@dataclass(frozen=True, order=True)
class FrequencySlot:
    """One 25 GHz slot, identified by channel index and signal/idler role."""

    channel: int
    role: Role

    def __post_init__(self) -> None:
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role(self.role))
        if not 1 <= self.channel <= NUM_CHANNEL_PAIRS:
            raise GridError(f"channel index {self.channel} outside 1..{NUM_CHANNEL_PAIRS}")

    @property
    def offset_units(self) -> int:
        """Signed offset of the slot center from the grid center, in 12.5 GHz units."""
        sign = 1 if self.role is Role.SIGNAL else -1
        return sign * (2 * self.channel - 1)

    @property
    def center_thz(self) -> Fraction:
        return CENTER_FREQUENCY_THZ + Fraction(self.offset_units, _UNITS_PER_THZ)

    @property
    def width_ghz(self) -> int:
        return SLOT_WIDTH_GHZ

    @property
    def key(self) -> str:
        """Compact identifier used in routing tables and fixture files, e.g. ``s3``."""
        return f"{self.role.short}{self.channel}"

    def __str__(self) -> str:
        return self.key


def slot_from_key(key: str) -> FrequencySlot:
    """Inverse of :attr:`FrequencySlot.key`."""
    if len(key) < 2 or key[0] not in ("s", "i"):
        raise GridError(f"malformed slot key {key!r}")
    try:
        channel = int(key[1:])
    except ValueError as exc:
        raise GridError(f"malformed slot key {key!r}") from exc
    return FrequencySlot(channel, Role.SIGNAL if key[0] == "s" else Role.IDLER)


def slot_center(channel: int, role: Role | str) -> Fraction:
    """Exact center frequency in THz of the given channel/role slot."""
    return FrequencySlot(channel, Role(role)).center_thz


def conjugate(slot: FrequencySlot) -> FrequencySlot:
    """The frequency-correlated partner slot: same channel, role flipped."""
    other = Role.IDLER if slot.role is Role.SIGNAL else Role.SIGNAL
    return FrequencySlot(slot.channel, other)


def itu_channel_label(slot: FrequencySlot) -> float:
    """Decimal grid label, (center_THz - 190) * 10.

    All labels are multiples of 0.125 and therefore exact as floats.
    """
    label = (slot.center_thz - 190) * 10
    return float(label)


def all_slots() -> tuple[FrequencySlot, ...]:
    """All 16 slots in increasing center frequency."""
    idlers = [FrequencySlot(n, Role.IDLER) for n in range(NUM_CHANNEL_PAIRS, 0, -1)]
    signals = [FrequencySlot(n, Role.SIGNAL) for n in range(1, NUM_CHANNEL_PAIRS + 1)]
    return tuple(idlers + signals)


@dataclass(frozen=True)
class PlanViolation:
    """One structured reason an allocation plan fails validation."""

    kind: str  # "double_assignment" | "unserved_pair"
    slot: FrequencySlot | None = None
    users: tuple[str, ...] = ()

    def describe(self) -> str:
        if self.kind == "double_assignment":
            return f"slot {self.slot} assigned to multiple users {list(self.users)}"
        return f"pair {self.users[0]}-{self.users[1]} has no conjugate slot pair"


@dataclass(frozen=True)
class PlanValidation:
    ok: bool
    violations: tuple[PlanViolation, ...] = ()


@dataclass(frozen=True)
class AllocationPlan:
    """Slot-to-user assignments. Immutable; edits return a new plan."""

    label: str
    entries: tuple[tuple[FrequencySlot, str], ...]

    @property
    def users(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, user in self.entries:
            seen.setdefault(user, None)
        return tuple(seen)

    def user_for_slot(self, slot: FrequencySlot) -> str | None:
        for s, user in self.entries:
            if s == slot:
                return user
        return None

    def slots_for_user(self, user: str) -> tuple[FrequencySlot, ...]:
        return tuple(s for s, u in self.entries if u == user)

    def channels_for_pair(self, user_a: str, user_b: str) -> tuple[int, ...]:
        """Channel indices whose conjugate slots land on the two users (either orientation)."""
        assigned = {s: u for s, u in self.entries}
        channels = []
        for n in range(1, NUM_CHANNEL_PAIRS + 1):
            s, i = FrequencySlot(n, Role.SIGNAL), FrequencySlot(n, Role.IDLER)
            ends = {assigned.get(s), assigned.get(i)}
            if ends == {user_a, user_b}:
                channels.append(n)
        return tuple(channels)

    def with_assignment(self, slot: FrequencySlot, user: str) -> "AllocationPlan":
        return AllocationPlan(self.label, self.entries + ((slot, user),))

    def without_slot(self, slot: FrequencySlot) -> "AllocationPlan":
        return AllocationPlan(self.label, tuple((s, u) for s, u in self.entries if s != slot))

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "assignments": [
                {"channel": s.channel, "role": s.role.value, "user": u} for s, u in self.entries
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AllocationPlan":
        try:
            label = doc["label"]
            raw = doc["assignments"]
        except (KeyError, TypeError) as exc:
            raise GridError(f"allocation plan missing field: {exc}") from exc
        entries = []
        for item in raw:
            try:
                slot = FrequencySlot(int(item["channel"]), Role(item["role"]))
                entries.append((slot, str(item["user"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise GridError(f"bad assignment entry {item!r}: {exc}") from exc
        return cls(label=str(label), entries=tuple(entries))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AllocationPlan":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def validate_plan(
    plan: AllocationPlan, requested_pairs: Iterable[Sequence[str]]
) -> PlanValidation:
    """Check that no slot is double-assigned and every requested pair is served.

    Never raises for content problems; all findings come back as violations.
    """
    violations: list[PlanViolation] = []

    by_slot: dict[FrequencySlot, list[str]] = {}
    for slot, user in plan.entries:
        by_slot.setdefault(slot, []).append(user)
    for slot, users in sorted(by_slot.items()):
        if len(users) > 1:
            violations.append(
                PlanViolation("double_assignment", slot=slot, users=tuple(users))
            )

    assigned = {s: us[0] for s, us in by_slot.items()}
    for pair in requested_pairs:
        a, b = pair[0], pair[1]
        served = False
        for n in range(1, NUM_CHANNEL_PAIRS + 1):
            ends = {
                assigned.get(FrequencySlot(n, Role.SIGNAL)),
                assigned.get(FrequencySlot(n, Role.IDLER)),
            }
            if ends == {a, b}:
                served = True
                break
        if not served:
            violations.append(PlanViolation("unserved_pair", users=(a, b)))

    return PlanValidation(ok=not violations, violations=tuple(violations))
