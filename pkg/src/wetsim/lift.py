"""Chamber lift state machine and the collar coupling check.

The lift re-homes against a top limit switch at the start of every
cycle; a self-locking actuator means a halted carriage never drifts.
Seating the chamber on a collar succeeds when the radial placement
error is at most 70 mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

SEAL_TOLERANCE = 0.070

UNHOMED = "unhomed"
HOMING = "homing"
RAISED = "raised"
LOWERING = "lowering"
SEATED = "seated"
RAISING = "raising"
FAULT = "fault"

PHASES = (UNHOMED, HOMING, RAISED, LOWERING, SEATED, RAISING, FAULT)
COMMANDS = ("home", "lower", "raise", "halt")


@dataclass(frozen=True)
class LiftParams:
    travel: float = 0.5   # meters between top switch and seated height
    speed: float = 0.05   # meters/second

    def __post_init__(self) -> None:
        if self.travel <= 0.0 or self.speed <= 0.0:
            raise ValueError("travel and speed must be positive")


@dataclass(frozen=True)
class LiftState:
    phase: str = UNHOMED
    height: float = 0.0   # meters below the top limit switch
    speed: float = 0.0    # signed, + lowering
    fault_reason: str = ""

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"unknown lift phase {self.phase!r}")


@dataclass(frozen=True)
class CouplingResult:
    radial_offset: float
    sealed: bool


def lift_step(state: LiftState, command: str | None, dt: float,
              params: LiftParams = LiftParams()) -> LiftState:
    """Apply a command (or None to coast) and integrate dt of motion."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if command is not None and command not in COMMANDS:
        raise ValueError(f"unknown lift command {command!r}")

    phase, speed = state.phase, state.speed
    if phase == FAULT:
        return state

    if command == "home":
        phase, speed = HOMING, -params.speed
    elif command == "lower":
        if phase == UNHOMED:
            return replace(state, phase=FAULT, speed=0.0, fault_reason="not homed")
        phase, speed = LOWERING, params.speed
    elif command == "raise":
        if phase == UNHOMED:
            return replace(state, phase=FAULT, speed=0.0, fault_reason="not homed")
        phase, speed = RAISING, -params.speed
    elif command == "halt":
        # self-locking screw: position holds exactly
        speed = 0.0
        if phase == HOMING:
            phase = UNHOMED  # homing must run to the switch to count

    height = min(max(state.height + speed * dt, 0.0), params.travel)
    if phase == HOMING and height == 0.0:
        phase, speed = RAISED, 0.0
    elif phase == LOWERING and height == params.travel:
        phase, speed = SEATED, 0.0
    elif phase == RAISING and height == 0.0:
        phase, speed = RAISED, 0.0
    return LiftState(phase=phase, height=height, speed=speed,
                     fault_reason=state.fault_reason)


def attempt_coupling(chamber_center, collar_center) -> CouplingResult:
    """Ground-truth seal check: radial offset at most 70 mm, inclusive."""
    dx = float(chamber_center[0]) - float(collar_center[0])
    dy = float(chamber_center[1]) - float(collar_center[1])
    offset = math.hypot(dx, dy)
    return CouplingResult(radial_offset=offset, sealed=offset <= SEAL_TOLERANCE)
