"""Task catalog for the unified conditional generation model.

A task names one generation target (PPG, ECG or BP) plus a set of
condition signals. Three families exist:

* translation -- the target is absent; conditions are clean signals of
  the other modalities.
* denoising -- a noise-corrupted copy of the target is itself a
  condition, optionally joined by clean signals of other modalities.
* imputation -- same, but the corrupted copy has a masked-out gap.

The auxiliary modality slot (AM) is a scratch slot the network uses as
its writing surface for restoration tasks; it never acts as a condition
and never appears in task identifiers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum, IntEnum

from .errors import TaskError


class Modality(IntEnum):
    """Signal modalities; the integer value is the slot index."""

    PPG = 0
    ECG = 1
    BP = 2
    AM = 3


#: Modalities that carry physical signals (everything but the AM slot).
SIGNAL_MODALITIES = (Modality.PPG, Modality.ECG, Modality.BP)

#: Number of slots the network lays out side by side.
N_SLOTS = len(Modality)


class Degradation(Enum):
    """How a condition signal has been corrupted, if at all."""

    CLEAN = "clean"
    NOISY = "noise"
    MASKED = "mask"


class Family(Enum):
    TRANSLATION = "trans"
    DENOISING = "den"
    IMPUTATION = "imp"


class SlotRole(Enum):
    """What a slot does for one task."""

    CONDITION_CLEAN = "condition_clean"
    CONDITION_DEGRADED = "condition_degraded"
    GENERATION = "generation"
    BLOCKED = "blocked"


_FAMILY_OF_DEGRADATION = {
    Degradation.NOISY: Family.DENOISING,
    Degradation.MASKED: Family.IMPUTATION,
}


@dataclass(frozen=True)
class Condition:
    modality: Modality
    degradation: Degradation


@dataclass(frozen=True)
class TaskSpec:
    """One generation task: target plus an ordered condition tuple.

    Conditions are kept sorted by slot index so equal tasks compare
    equal and identifiers are canonical.
    """

    target: Modality
    conditions: tuple[Condition, ...]

    def __post_init__(self):
        if self.target not in SIGNAL_MODALITIES:
            raise TaskError(f"target must be a signal modality, got {self.target}")
        if not self.conditions:
            raise TaskError("a task needs at least one condition")
        mods = [c.modality for c in self.conditions]
        if len(set(mods)) != len(mods):
            raise TaskError(f"duplicate condition modalities: {mods}")
        if Modality.AM in mods:
            raise TaskError("the AM slot can never be a condition")
        if list(mods) != sorted(mods):
            raise TaskError("conditions must be sorted by slot index")
        degraded = [c for c in self.conditions if c.degradation is not Degradation.CLEAN]
        if len(degraded) > 1:
            raise TaskError("at most one condition may be degraded")
        if degraded and degraded[0].modality is not self.target:
            raise TaskError("only the target's own copy may be degraded")
        clean_target = any(
            c.modality is self.target and c.degradation is Degradation.CLEAN
            for c in self.conditions
        )
        if clean_target:
            raise TaskError("a clean copy of the target cannot be a condition")

    @property
    def family(self) -> Family:
        for c in self.conditions:
            if c.degradation is not Degradation.CLEAN:
                return _FAMILY_OF_DEGRADATION[c.degradation]
        return Family.TRANSLATION

    @property
    def n_conditions(self) -> int:
        return len(self.conditions)

    @property
    def generation_slot(self) -> Modality:
        """Where the network writes: the target slot for translation,
        the AM slot for restoration (the degraded target occupies the
        target's own slot)."""
        return self.target if self.family is Family.TRANSLATION else Modality.AM

    def name(self) -> str:
        parts = []
        for c in self.conditions:
            if c.degradation is Degradation.CLEAN:
                parts.append(c.modality.name)
            else:
                parts.append(f"{c.modality.name}~{c.degradation.value}")
        return f"{self.family.value}:{self.target.name}|cond:{','.join(parts)}"

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.name()


def make_translation(target: Modality, sources: tuple[Modality, ...]) -> TaskSpec:
    conds = tuple(
        Condition(m, Degradation.CLEAN) for m in sorted(sources, key=int)
    )
    return TaskSpec(target=target, conditions=conds)


def make_restoration(
    target: Modality,
    degradation: Degradation,
    extras: tuple[Modality, ...] = (),
) -> TaskSpec:
    if degradation not in (Degradation.NOISY, Degradation.MASKED):
        raise TaskError(f"restoration needs a noisy or masked target, got {degradation}")
    mods = [(target, degradation)] + [(m, Degradation.CLEAN) for m in extras]
    mods.sort(key=lambda pair: int(pair[0]))
    return TaskSpec(
        target=target,
        conditions=tuple(Condition(m, d) for m, d in mods),
    )


def enumerate_tasks() -> list[TaskSpec]:
    """All supported tasks in a deterministic order.

    Per target: every non-empty subset of the other two modalities as
    translation sources (3), and for each corruption kind every subset
    of the other two modalities as extra conditions (2 * 4), totalling
    11 per target and 33 overall.
    """
    out: list[TaskSpec] = []
    for target in SIGNAL_MODALITIES:
        others = tuple(m for m in SIGNAL_MODALITIES if m is not target)
        for n in (1, 2):
            for sub in itertools.combinations(others, n):
                out.append(make_translation(target, sub))
        for degradation in (Degradation.NOISY, Degradation.MASKED):
            for n in (0, 1, 2):
                for sub in itertools.combinations(others, n):
                    out.append(make_restoration(target, degradation, sub))
    return out


def parse_task(name: str) -> TaskSpec:
    """Inverse of :meth:`TaskSpec.name`."""
    try:
        head, cond_part = name.split("|cond:", 1)
        fam_str, target_str = head.split(":", 1)
    except ValueError:
        raise TaskError(f"malformed task identifier: {name!r}") from None
    try:
        family = Family(fam_str)
    except ValueError:
        raise TaskError(f"unknown task family {fam_str!r} in {name!r}") from None
    try:
        target = Modality[target_str]
    except KeyError:
        raise TaskError(f"unknown modality {target_str!r} in {name!r}") from None
    conds = []
    for token in cond_part.split(","):
        token = token.strip()
        if "~" in token:
            mod_str, deg_str = token.split("~", 1)
            try:
                deg = Degradation(deg_str)
            except ValueError:
                raise TaskError(f"unknown degradation {deg_str!r} in {name!r}") from None
            if deg is Degradation.CLEAN:
                raise TaskError(f"explicit clean marker not allowed: {token!r}")
        else:
            mod_str, deg = token, Degradation.CLEAN
        try:
            mod = Modality[mod_str]
        except KeyError:
            raise TaskError(f"unknown modality {mod_str!r} in {name!r}") from None
        conds.append(Condition(mod, deg))
    conds.sort(key=lambda c: int(c.modality))
    task = TaskSpec(target=target, conditions=tuple(conds))
    if task.family is not family:
        raise TaskError(
            f"family prefix {fam_str!r} does not match conditions in {name!r}"
        )
    return task


def assign_slots(task: TaskSpec) -> dict[Modality, SlotRole]:
    """Role of each of the four slots under ``task``.

    Unused signal slots are blocked (fed zeros, isolated by the
    attention mask), as is the AM slot for translation tasks.
    """
    roles = {m: SlotRole.BLOCKED for m in Modality}
    for c in task.conditions:
        if c.degradation is Degradation.CLEAN:
            roles[c.modality] = SlotRole.CONDITION_CLEAN
        else:
            roles[c.modality] = SlotRole.CONDITION_DEGRADED
    roles[task.generation_slot] = SlotRole.GENERATION
    return roles
