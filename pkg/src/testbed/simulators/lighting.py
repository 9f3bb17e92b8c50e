"""PIR smart-lighting simulator: Poisson motion arrivals drive a hold-timer
controller. A motion turns the light on if it was off; every motion pushes
the off-deadline to motion time + hold_seconds; the light turns off at
exactly the deadline when no further motion arrives.

Motions are generated per minute from a substream keyed by
(seed, location, minute), so the emitted event stream is independent of
how often the controller is stepped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

from testbed.model import LightingEvent, LightingEventKind
from testbed.simulators.rng import poisson_sample, substream

DEFAULT_HOLD_SECONDS = 180
DEFAULT_POWER_W = 40.0

# Expected motions/hour per hour of day; office-shaped default.
DEFAULT_MOTION_PROFILE = [
    0.2, 0.2, 0.2, 0.2, 0.2, 0.5, 2.0, 6.0, 12.0, 15.0, 14.0, 12.0,
    10.0, 12.0, 14.0, 13.0, 12.0, 8.0, 5.0, 3.0, 2.0, 1.0, 0.5, 0.3,
]


@dataclass(frozen=True)
class LocationSpec:
    id: str
    label: str = ""


@dataclass
class LightingSimConfig:
    seed: int = 7
    locations: list[LocationSpec] = field(default_factory=lambda: [LocationSpec("L01"), LocationSpec("L02")])
    motion_rate_profile: list[float] = field(default_factory=lambda: list(DEFAULT_MOTION_PROFILE))
    hold_seconds: int = DEFAULT_HOLD_SECONDS
    power_w: float = DEFAULT_POWER_W

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.locations:
            raise ValueError("lighting config needs at least one location")
        if self.hold_seconds <= 0:
            raise ValueError("hold_seconds must be > 0")
        if self.power_w <= 0:
            raise ValueError("power_w must be > 0")
        if len(self.motion_rate_profile) != 24:
            raise ValueError("motion_rate_profile must have 24 entries")
        if any(v < 0 for v in self.motion_rate_profile):
            raise ValueError("motion rates must be >= 0")


@dataclass
class LightingState:
    """Controller state for one location; created by lighting_step on first use."""

    cursor_minute: datetime  # next minute to draw motions for
    light_on: bool = False
    off_deadline: datetime | None = None
    pending: list[datetime] = field(default_factory=list)  # drawn motions not yet reached


def motions_in_minute(config: LightingSimConfig, location: str, minute_ts: datetime) -> list[datetime]:
    """Deterministic motion timestamps (second resolution) inside one minute."""
    minute_epoch = int(minute_ts.timestamp()) // 60
    rng = substream(config.seed, location, minute_epoch)
    rate_per_minute = config.motion_rate_profile[minute_ts.astimezone(timezone.utc).hour] / 60.0
    n = poisson_sample(rng, rate_per_minute)
    seconds = sorted({rng.randrange(60) for _ in range(n)})
    return [minute_ts + timedelta(seconds=s) for s in seconds]


def new_state(start: datetime) -> LightingState:
    return LightingState(cursor_minute=_floor_minute(start))


def lighting_step(
    config: LightingSimConfig,
    location: str,
    now: datetime,
    state: LightingState,
) -> tuple[LightingState, list[LightingEvent]]:
    """Advance the controller to ``now`` (monotone per state), emitting
    motion / light_on / light_off events in timestamp order."""
    while state.cursor_minute <= now:
        state.pending.extend(motions_in_minute(config, location, state.cursor_minute))
        state.cursor_minute += timedelta(minutes=1)

    events: list[LightingEvent] = []
    hold = timedelta(seconds=config.hold_seconds)
    consumed = 0
    for motion_ts in state.pending:
        if motion_ts > now:
            break
        # a deadline strictly before the next motion fires first; a motion at
        # exactly the deadline extends the interval instead (closed union)
        if state.off_deadline is not None and state.off_deadline < motion_ts:
            events.append(LightingEvent(location, state.off_deadline, LightingEventKind.light_off))
            state.light_on = False
            state.off_deadline = None
        events.append(LightingEvent(location, motion_ts, LightingEventKind.motion))
        if not state.light_on:
            events.append(LightingEvent(location, motion_ts, LightingEventKind.light_on))
            state.light_on = True
        state.off_deadline = motion_ts + hold
        consumed += 1
    del state.pending[:consumed]

    if state.off_deadline is not None and state.off_deadline <= now:
        events.append(LightingEvent(location, state.off_deadline, LightingEventKind.light_off))
        state.light_on = False
        state.off_deadline = None
    return state, events


def _floor_minute(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)
