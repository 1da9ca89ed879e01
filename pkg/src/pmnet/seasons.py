"""Month to season mapping used for baselines, calibration and statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

SEASONS = ("monsoon", "winter", "summer")

DEFAULT_MONTHS = {
    "monsoon": (6, 7, 8, 9, 10),
    "winter": (11, 12, 1, 2),
    "summer": (3, 4, 5),
}


class ConfigError(ValueError):
    """Invalid configuration (scenario, calendar, deployment or model)."""


@dataclass(frozen=True)
class SeasonCalendar:
    months: dict = field(default_factory=lambda: dict(DEFAULT_MONTHS))

    def __post_init__(self):
        seen = {}
        for season, months in self.months.items():
            if season not in SEASONS:
                raise ConfigError(f"unknown season {season!r}")
            for m in months:
                if not 1 <= m <= 12:
                    raise ConfigError(f"bad month {m} in {season}")
                if m in seen:
                    raise ConfigError(f"month {m} mapped to both {seen[m]} and {season}")
                seen[m] = season
        missing = sorted(set(range(1, 13)) - set(seen))
        if missing:
            raise ConfigError(f"months not mapped to any season: {missing}")
        object.__setattr__(self, "_by_month", seen)

    def season_of_month(self, month: int) -> str:
        return self._by_month[month]

    def season_at(self, t: float) -> str:
        return self._by_month[datetime.fromtimestamp(int(t), tz=timezone.utc).month]

    def seasons_of(self, times) -> np.ndarray:
        """Season label for each epoch-second timestamp."""
        months = utc_months(times)
        lookup = np.array([""] + [self._by_month[m] for m in range(1, 13)], dtype=object)
        return lookup[months]

    def to_dict(self) -> dict:
        return {s: list(self.months[s]) for s in SEASONS if s in self.months}


def utc_months(times) -> np.ndarray:
    """Calendar month (1-12, UTC) of epoch-second timestamps."""
    t = np.asarray(times, dtype="int64").astype("datetime64[s]")
    return t.astype("datetime64[M]").astype("int64") % 12 + 1


def month_keys(times) -> np.ndarray:
    """Months since 1970-01, for grouping by calendar month."""
    t = np.asarray(times, dtype="int64").astype("datetime64[s]")
    return t.astype("datetime64[M]").astype("int64")
