"""Fixed-cycle traffic lights: green -> yellow -> red -> green."""

from __future__ import annotations

from dataclasses import dataclass

PHASES = ("green", "yellow", "red")
DURATIONS = {"green": 10.0, "yellow": 3.0, "red": 10.0}
CYCLE = sum(DURATIONS.values())
_EPS = 1e-9


@dataclass
class TrafficLight:
    junction: int
    group: int            # 0: east/west arms, 1: north/south arms
    phase: str = "green"
    timer: float = 0.0    # seconds spent in the current phase

    def advance(self, dt: float) -> None:
        self.timer += dt
        while self.timer >= DURATIONS[self.phase] - _EPS:
            self.timer = max(0.0, self.timer - DURATIONS[self.phase])
            self.phase = PHASES[(PHASES.index(self.phase) + 1) % 3]

    @property
    def remaining(self) -> float:
        return DURATIONS[self.phase] - self.timer


def light_at(t: float, junction: int = 0, group: int = 0) -> TrafficLight:
    """Light whose cycle started ``t`` seconds ago (in green)."""
    light = TrafficLight(junction, group)
    light.advance(t % CYCLE)
    return light


def light_tick(lights, dt: float):
    """Advance every light in ``lights`` by ``dt`` seconds (in place) and return them."""
    for light in lights:
        light.advance(dt)
    return lights


def junction_lights(junction: int, offset: float) -> list[TrafficLight]:
    """The two signal groups of one junction; group 1 turns green as group 0 turns red."""
    g0 = light_at(offset, junction, 0)
    g1 = light_at(offset + DURATIONS["red"], junction, 1)
    return [g0, g1]
