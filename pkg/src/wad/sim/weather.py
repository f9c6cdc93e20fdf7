"""Weather presets: road friction and observation noise."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class WeatherPreset:
    name: str
    friction: float
    noise: float
    split: str   # train | test


WEATHERS = {w.name: w for w in (
    WeatherPreset("clear_day", 1.0, 0.0, "train"),
    WeatherPreset("cloudy", 1.0, 0.01, "train"),
    WeatherPreset("day_rain", 0.85, 0.02, "train"),
    WeatherPreset("wet_cloudy_sunset", 0.9, 0.03, "test"),
    WeatherPreset("mid_rain", 0.8, 0.05, "test"),
)}

TRAIN_WEATHERS = tuple(n for n, w in WEATHERS.items() if w.split == "train")
TEST_WEATHERS = tuple(n for n, w in WEATHERS.items() if w.split == "test")


def get_weather(name: str) -> WeatherPreset:
    try:
        return WEATHERS[name]
    except KeyError:
        raise ValueError(f"unknown weather {name!r}; expected one of {sorted(WEATHERS)}") from None
