"""Local solar-event times and the time-of-day feature.

Solar event times (dawn, sunrise, solar noon, sunset, dusk, solar
midnight) are computed from geolocation and date with the NOAA
low-precision formulation: a fractional-year harmonic fit for solar
declination and the equation of time, refined by re-evaluating both at
the event estimate. Accuracy is a couple of minutes, which is plenty
for a feature that divides time offsets by the length of a day.

The time feature itself is 12-dimensional: per event, the square root
of a linear closeness score 1 - |t_c - t_g| / 86400, plus a binary flag
marking whether the capture happened at or before the event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgumentError

SECONDS_PER_DAY = 86400.0

# Event order is fixed; it defines the layout of the 12-dim feature.
EVENTS = ("dawn", "sunrise", "noon", "sunset", "dusk", "midnight")

# Solar altitude thresholds, degrees. Sunrise/sunset include refraction
# plus the solar radius; dawn/dusk are civil twilight.
_ALT_SUNRISE = -0.833
_ALT_CIVIL = -6.0

_MAX_UTC_OFFSET = 14 * 3600.0


@dataclass(frozen=True)
class GeoTime:
    """A capture instant: where, when (UTC), and the local-time offset."""

    latitude: float
    longitude: float
    utc_timestamp: float
    utc_offset: float

    def __post_init__(self) -> None:
        vals = (self.latitude, self.longitude, self.utc_timestamp, self.utc_offset)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgumentError("GeoTime fields must be finite")
        if not -90.0 <= self.latitude <= 90.0:
            raise InvalidArgumentError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise InvalidArgumentError(f"longitude {self.longitude} outside [-180, 180]")
        if not -_MAX_UTC_OFFSET <= self.utc_offset <= _MAX_UTC_OFFSET:
            raise InvalidArgumentError(f"utc_offset {self.utc_offset} outside +/-14h")

    @property
    def local_seconds(self) -> float:
        """Seconds since local midnight of the local calendar date."""
        return (self.utc_timestamp + self.utc_offset) % SECONDS_PER_DAY


@dataclass(frozen=True)
class SolarEvents:
    """Local seconds-since-midnight per solar event plus validity flags.

    An event is invalid when the sun never crosses its altitude
    threshold on that date (polar day/night). Invalid events still carry
    a fallback time: solar noon for dawn/sunrise, solar noon + 12 h for
    sunset/dusk/midnight.
    """

    times: dict[str, float]
    valid: dict[str, bool]

    def __post_init__(self) -> None:
        for name in EVENTS:
            if name not in self.times or name not in self.valid:
                raise InvalidArgumentError(f"missing solar event {name!r}")
            t = self.times[name]
            if not (math.isfinite(t) and 0.0 <= t < SECONDS_PER_DAY):
                raise InvalidArgumentError(f"event {name!r} time {t} outside [0, 86400)")


@dataclass(frozen=True)
class TimeFeature:
    """sqrt closeness scores and before-event flags, one pair per event."""

    sqrt_probs: tuple[float, ...]
    before_flags: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.sqrt_probs) != 6 or len(self.before_flags) != 6:
            raise InvalidArgumentError("time feature needs 6 events")
        if any(not 0.0 <= p <= 1.0 for p in self.sqrt_probs):
            raise InvalidArgumentError("sqrt closeness scores must lie in [0, 1]")
        if any(b not in (0, 1) for b in self.before_flags):
            raise InvalidArgumentError("before-flags must be binary")

    def flatten(self) -> list[float]:
        """12 values: the six sqrt scores first, then the six flags."""
        return list(self.sqrt_probs) + [float(b) for b in self.before_flags]


def _civil_date_from_days(days: int) -> tuple[int, int, int]:
    """Proleptic Gregorian (year, month, day) for days since 1970-01-01."""
    # Howard Hinnant's civil_from_days.
    z = days + 719468
    era = (z if z >= 0 else z - 146096) // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    y = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    d = doy - (153 * mp + 2) // 5 + 1
    m = mp + 3 if mp < 10 else mp - 9
    return y + (1 if m <= 2 else 0), m, d


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


_CUM_DAYS = (0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334)


def _day_of_year(year: int, month: int, day: int) -> int:
    doy = _CUM_DAYS[month - 1] + day
    if month > 2 and _is_leap(year):
        doy += 1
    return doy


def _fractional_year(year: int, doy: int, hour_utc: float) -> float:
    """Orbital phase angle in radians for the NOAA harmonic fits."""
    days_in_year = 366.0 if _is_leap(year) else 365.0
    return 2.0 * math.pi / days_in_year * (doy - 1 + (hour_utc - 12.0) / 24.0)


def _declination(gamma: float) -> float:
    """Solar declination in radians (harmonic fit)."""
    return (
        0.006918
        - 0.399912 * math.cos(gamma)
        + 0.070257 * math.sin(gamma)
        - 0.006758 * math.cos(2 * gamma)
        + 0.000907 * math.sin(2 * gamma)
        - 0.002697 * math.cos(3 * gamma)
        + 0.00148 * math.sin(3 * gamma)
    )


def _equation_of_time_min(gamma: float) -> float:
    """Equation of time in minutes (harmonic fit)."""
    return 229.18 * (
        0.000075
        + 0.001868 * math.cos(gamma)
        - 0.032077 * math.sin(gamma)
        - 0.014615 * math.cos(2 * gamma)
        - 0.040849 * math.sin(2 * gamma)
    )


def _hour_angle_deg(lat_deg: float, decl_rad: float, altitude_deg: float) -> float | None:
    """Morning hour angle (degrees) at which the sun reaches the altitude.

    None when the sun never crosses the threshold on that date.
    """
    lat = math.radians(lat_deg)
    z = math.radians(90.0 - altitude_deg)
    cos_ha = (math.cos(z) - math.sin(lat) * math.sin(decl_rad)) / (
        math.cos(lat) * math.cos(decl_rad)
    )
    if cos_ha < -1.0 or cos_ha > 1.0:
        return None
    return math.degrees(math.acos(cos_ha))


def solar_events(geo: GeoTime) -> SolarEvents:
    """All six solar event times for the local calendar date of ``geo``.

    Noon is the solar transit; midnight is noon + 12 h (mod one day).
    Sunrise/sunset and dawn/dusk events that never occur (polar
    conditions) are flagged invalid and carry the fallback times
    documented on SolarEvents.
    """
    local_days = math.floor((geo.utc_timestamp + geo.utc_offset) / SECONDS_PER_DAY)
    year, month, day = _civil_date_from_days(int(local_days))
    doy = _day_of_year(year, month, day)
    offset_min = geo.utc_offset / 60.0

    def local_minutes(alt_deg: float | None, morning: bool, guess_min: float) -> float | None:
        """Local minutes past midnight of the event, refined twice.

        alt_deg None means solar transit.
        """
        est = guess_min
        for _ in range(3):
            hour_utc = (est - offset_min) / 60.0
            gamma = _fractional_year(year, doy, hour_utc)
            eqtime = _equation_of_time_min(gamma)
            decl = _declination(gamma)
            if alt_deg is None:
                ha = 0.0
            else:
                ha_deg = _hour_angle_deg(geo.latitude, decl, alt_deg)
                if ha_deg is None:
                    return None
                ha = -ha_deg if morning else ha_deg
            est = 720.0 - 4.0 * (geo.longitude - ha) - eqtime + offset_min
        return est

    noon = local_minutes(None, True, 720.0)
    assert noon is not None
    times: dict[str, float] = {"noon": noon % 1440.0}
    valid: dict[str, bool] = {"noon": True}

    fallback_am = noon
    fallback_pm = noon + 720.0
    for name, alt, morning, fallback in (
        ("dawn", _ALT_CIVIL, True, fallback_am),
        ("sunrise", _ALT_SUNRISE, True, fallback_am),
        ("sunset", _ALT_SUNRISE, False, fallback_pm),
        ("dusk", _ALT_CIVIL, False, fallback_pm),
    ):
        est = local_minutes(alt, morning, fallback)
        valid[name] = est is not None
        times[name] = (est if est is not None else fallback) % 1440.0

    times["midnight"] = (noon + 720.0) % 1440.0
    valid["midnight"] = True

    return SolarEvents(
        times={k: v * 60.0 for k, v in times.items()},
        valid=dict(valid),
    )


def time_feature(geo: GeoTime, events: SolarEvents) -> TimeFeature:
    """Per-event sqrt closeness scores and before-flags for the capture time.

    The closeness score is 1 - |t_c - t_g| / 86400 with the plain linear
    distance; invalid events already carry their fallback times, so the
    feature keeps its fixed 12-dim shape under polar conditions.
    """
    t_c = geo.local_seconds
    probs = []
    flags = []
    for name in EVENTS:
        t_g = events.times[name]
        p = 1.0 - abs(t_c - t_g) / SECONDS_PER_DAY
        probs.append(math.sqrt(min(max(p, 0.0), 1.0)))
        flags.append(1 if t_c <= t_g else 0)
    return TimeFeature(sqrt_probs=tuple(probs), before_flags=tuple(flags))


def utc_offset_from_longitude(longitude: float) -> float:
    """Crude whole-hour timezone estimate used when the manifest omits one."""
    return round(longitude / 15.0) * 3600.0
