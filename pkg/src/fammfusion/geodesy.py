"""Geodetic to ECEF conversion, local tangent frames and NMEA 0183 parsing.

Angles are radians everywhere in this module except inside NMEA text, where
the ``ddmm.mmmm`` notation is decoded at the parse boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ._validation import check_finite, wrap_angle

KNOTS_TO_MS = 1852.0 / 3600.0


@dataclass(frozen=True)
class Ellipsoid:
    """Reference ellipsoid given by equatorial radius and squared eccentricity."""

    a: float = 6378137.0
    e2: float = 6.69437999e-3

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError(f"equatorial radius must be positive, got {self.a}")
        if not 0 < self.e2 < 1:
            raise ValueError(f"squared eccentricity must lie in (0, 1), got {self.e2}")


WGS84 = Ellipsoid()


class GeodeticPosition(NamedTuple):
    lat: float  # radians, [-pi/2, pi/2]
    lon: float  # radians, (-pi, pi]
    alt: float  # meters above the ellipsoid


class EcefPosition(NamedTuple):
    x: float
    y: float
    z: float


def prime_vertical_radius(phi, ellipsoid: Ellipsoid = WGS84):
    """Radius of curvature in the prime vertical at geodetic latitude ``phi``.

    Accepts a scalar or an array of latitudes in radians.
    """
    phi_arr = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi_arr)):
        raise ValueError("latitude must be finite")
    if np.any(np.abs(phi_arr) > np.pi / 2 + 1e-12):
        raise ValueError("latitude must lie in [-pi/2, pi/2]")
    s = np.sin(phi_arr)
    n = ellipsoid.a / np.sqrt(1.0 - ellipsoid.e2 * s * s)
    return float(n) if n.ndim == 0 else n


def geodetic_to_ecef(position: GeodeticPosition, ellipsoid: Ellipsoid = WGS84) -> EcefPosition:
    """Convert one geodetic fix to Earth-centred Earth-fixed coordinates.

    Parameters
    ----------
    position : GeodeticPosition
        Latitude and longitude in radians, altitude in meters.
    ellipsoid : Ellipsoid, optional
        Defaults to WGS-84.

    Returns
    -------
    EcefPosition
    """
    lat = check_finite(position[0], "lat")
    lon = check_finite(position[1], "lon")
    alt = check_finite(position[2], "alt")
    xyz = geodetic_to_ecef_array(lat, lon, alt, ellipsoid)
    return EcefPosition(*(float(v) for v in xyz))


def geodetic_to_ecef_array(lat, lon, alt, ellipsoid: Ellipsoid = WGS84):
    """Vectorised conversion; returns an array with a trailing axis of 3."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    alt = np.asarray(alt, dtype=float)
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(alt))):
        raise ValueError("longitude and altitude must be finite")
    n = prime_vertical_radius(lat, ellipsoid)
    cos_lat = np.cos(lat)
    x = (n + alt) * cos_lat * np.cos(lon)
    y = (n + alt) * cos_lat * np.sin(lon)
    z = ((1.0 - ellipsoid.e2) * n + alt) * np.sin(lat)
    return np.stack([x, y, z], axis=-1)


def ecef_to_geodetic_array(xyz, ellipsoid: Ellipsoid = WGS84, iterations: int = 6):
    """Inverse conversion by Bowring's parametric-latitude iteration.

    Returns ``(lat, lon, alt)`` arrays. Converges to well below a micrometre
    for points near the surface after a handful of iterations.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    a, e2 = ellipsoid.a, ellipsoid.e2
    b = a * math.sqrt(1.0 - e2)
    ep2 = (a * a - b * b) / (b * b)
    p = np.hypot(x, y)
    lon = np.arctan2(y, x)
    flat = b / a
    beta = np.arctan2(z, flat * p)
    lat = beta
    for _ in range(iterations):
        sb, cb = np.sin(beta), np.cos(beta)
        lat = np.arctan2(z + ep2 * b * sb**3, p - e2 * a * cb**3)
        beta = np.arctan2(flat * np.sin(lat), np.cos(lat))
    n = a / np.sqrt(1.0 - e2 * np.sin(lat) ** 2)
    # the cos form loses precision near the poles, the sin form near the equator
    cos_lat, sin_lat = np.cos(lat), np.sin(lat)
    alt = np.where(
        np.abs(cos_lat) > 0.5,
        p / np.where(cos_lat == 0, 1.0, cos_lat) - n,
        z / np.where(sin_lat == 0, 1.0, sin_lat) - (1.0 - e2) * n,
    )
    return lat, lon, alt


def ecef_to_geodetic(position: EcefPosition, ellipsoid: Ellipsoid = WGS84) -> GeodeticPosition:
    lat, lon, alt = ecef_to_geodetic_array(np.asarray(position, dtype=float), ellipsoid)
    return GeodeticPosition(float(lat), float(wrap_angle(lon)), float(alt))


def enu_rotation(lat: float, lon: float):
    """Rotation taking ECEF deltas into the East-North-Up frame at (lat, lon)."""
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


class LocalFrame:
    """East-North-Up tangent frame anchored at a geodetic origin.

    Local coordinates are ECEF deltas from the origin expressed on the
    origin's East/North/Up axes.
    """

    def __init__(self, origin: GeodeticPosition, ellipsoid: Ellipsoid = WGS84):
        self.origin = GeodeticPosition(*(float(v) for v in origin))
        self.ellipsoid = ellipsoid
        self.origin_ecef = np.asarray(geodetic_to_ecef(self.origin, ellipsoid))
        self.rotation = enu_rotation(self.origin.lat, self.origin.lon)

    def ecef_to_local(self, ecef):
        return (np.asarray(ecef, dtype=float) - self.origin_ecef) @ self.rotation.T

    def local_to_ecef(self, local):
        return np.asarray(local, dtype=float) @ self.rotation + self.origin_ecef

    def geodetic_to_local(self, lat, lon, alt):
        return self.ecef_to_local(geodetic_to_ecef_array(lat, lon, alt, self.ellipsoid))

    def local_to_geodetic(self, local):
        lat, lon, alt = ecef_to_geodetic_array(self.local_to_ecef(local), self.ellipsoid)
        return lat, wrap_angle(lon), alt


# ---------------------------------------------------------------------------
# NMEA 0183


class NmeaError(ValueError):
    """Base class for recoverable NMEA parse failures."""


class ChecksumError(NmeaError):
    pass


class FieldError(NmeaError):
    pass


@dataclass(frozen=True)
class NmeaSentence:
    talker: str
    sentence_type: str  # "GGA", "RMC", "GSV" or "other"
    raw_fields: tuple
    checksum_valid: bool
    utc_seconds: Optional[float] = None
    position: Optional[GeodeticPosition] = None
    satellites: Optional[int] = None
    speed: Optional[float] = None  # m/s, RMC only
    heading: Optional[float] = None  # radians from true north, RMC only


def nmea_checksum(body: str) -> int:
    """XOR of all characters of the sentence body (between ``$`` and ``*``)."""
    value = 0
    for ch in body.encode("ascii"):
        value ^= ch
    return value


def _decode_angle(text: str, hemisphere: str, positive: str, negative: str, max_degrees: int):
    if not text or not hemisphere:
        raise FieldError(f"empty coordinate field {text!r}/{hemisphere!r}")
    if hemisphere not in (positive, negative):
        raise FieldError(f"bad hemisphere {hemisphere!r}")
    whole, _, frac = text.partition(".")
    if len(whole) < 3 or not whole.isdigit() or (frac and not frac.isdigit()):
        raise FieldError(f"malformed coordinate {text!r}")
    degrees = int(whole[:-2])
    minutes = float(whole[-2:] + "." + (frac or "0"))
    if minutes >= 60.0:
        raise FieldError(f"minutes out of range in {text!r}")
    value = degrees + minutes / 60.0
    if value > max_degrees:
        raise FieldError(f"coordinate out of range in {text!r}")
    if hemisphere == negative:
        value = -value
    return math.radians(value)


def _decode_time(text: str) -> Optional[float]:
    if not text:
        return None
    whole, _, frac = text.partition(".")
    if len(whole) != 6 or not whole.isdigit() or (frac and not frac.isdigit()):
        raise FieldError(f"malformed time {text!r}")
    hh, mm, ss = int(whole[:2]), int(whole[2:4]), int(whole[4:6])
    if hh > 23 or mm > 59 or ss > 60:
        raise FieldError(f"time out of range {text!r}")
    return hh * 3600.0 + mm * 60.0 + ss + (float("0." + frac) if frac else 0.0)


def _parse_float(text: str, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FieldError(f"malformed {name} field {text!r}") from None
    if not math.isfinite(value):
        raise FieldError(f"non-finite {name} field {text!r}")
    return value


def _position(fields, start: int) -> GeodeticPosition:
    lat = _decode_angle(fields[start], fields[start + 1], "N", "S", 90)
    lon = _decode_angle(fields[start + 2], fields[start + 3], "E", "W", 180)
    return lat, wrap_angle(lon)


def parse_nmea(line, strict: bool = True) -> NmeaSentence:
    """Parse one NMEA 0183 sentence.

    GGA and RMC sentences are decoded; every other sentence type is returned
    typed as ``"other"`` (GSV keeps its own tag) with its raw fields.

    Parameters
    ----------
    line : str or bytes
        A single sentence of the form ``$<address>,<fields>*hh``. Trailing
        whitespace and line terminators are ignored.
    strict : bool
        When true a checksum mismatch raises :class:`ChecksumError`;
        otherwise the sentence is returned with ``checksum_valid=False``.

    Raises
    ------
    NmeaError
        ``ChecksumError`` for a bad checksum, ``FieldError`` for malformed
        framing or field contents. No other exception escapes.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("ascii")
        except UnicodeDecodeError:
            raise FieldError("sentence is not ASCII") from None
    if not isinstance(line, str):
        raise FieldError(f"expected text, got {type(line).__name__}")
    line = line.strip()
    if not line.isascii():
        raise FieldError("sentence is not ASCII")
    if not line.startswith("$"):
        raise FieldError("sentence must start with '$'")
    star = line.rfind("*")
    if star < 0 or len(line) - star != 3:
        raise FieldError("missing '*hh' checksum suffix")
    body, suffix = line[1:star], line[star + 1 :]
    try:
        expected = int(suffix, 16)
    except ValueError:
        raise FieldError(f"checksum suffix {suffix!r} is not hex") from None
    valid = nmea_checksum(body) == expected
    if not valid and strict:
        raise ChecksumError(f"checksum mismatch: computed {nmea_checksum(body):02X}, got {suffix}")

    fields = tuple(body.split(","))
    address = fields[0]
    if len(address) < 3 or not address.isalnum():
        raise FieldError(f"bad address field {address!r}")
    talker, kind = address[:-3], address[-3:]

    if kind == "GGA":
        if len(fields) < 10:
            raise FieldError(f"GGA needs at least 10 fields, got {len(fields)}")
        utc = _decode_time(fields[1])
        quality = fields[6]
        if quality and not quality.isdigit():
            raise FieldError(f"malformed fix quality {quality!r}")
        sats = fields[7]
        if sats and not sats.isdigit():
            raise FieldError(f"malformed satellite count {sats!r}")
        satellites = int(sats) if sats else None
        if (not quality or int(quality) == 0) and not fields[2]:
            # receiver reports no fix
            return NmeaSentence(talker, "GGA", fields, valid, utc, None, satellites)
        lat, lon = _position(fields, 2)
        alt = _parse_float(fields[9], "altitude") if fields[9] else 0.0
        pos = GeodeticPosition(lat, lon, alt)
        return NmeaSentence(talker, "GGA", fields, valid, utc, pos, satellites)

    if kind == "RMC":
        if len(fields) < 9:
            raise FieldError(f"RMC needs at least 9 fields, got {len(fields)}")
        utc = _decode_time(fields[1])
        pos = None
        if fields[3]:
            lat, lon = _position(fields, 3)
            pos = GeodeticPosition(lat, lon, 0.0)
        speed = _parse_float(fields[7], "speed") * KNOTS_TO_MS if fields[7] else None
        heading = math.radians(_parse_float(fields[8], "course")) if fields[8] else None
        return NmeaSentence(talker, "RMC", fields, valid, utc, pos, None, speed, heading)

    kind = "GSV" if kind == "GSV" else "other"
    return NmeaSentence(talker, kind, fields, valid)


def _encode_angle(value_rad: float, degree_digits: int, decimals: int):
    deg = abs(math.degrees(value_rad))
    whole = int(deg)
    minutes = round((deg - whole) * 60.0, decimals)
    if minutes >= 60.0:
        whole += 1
        minutes -= 60.0
    return f"{whole:0{degree_digits}d}{minutes:0{decimals + 3}.{decimals}f}"


def format_gga(
    utc_seconds: float,
    position: GeodeticPosition,
    satellites: int = 8,
    hdop: float = 0.9,
    talker: str = "GP",
    decimals: int = 6,
) -> str:
    """Build a GGA sentence with a valid checksum.

    ``decimals`` sets the precision of the minutes field; six decimals keeps
    quantisation below 2 mm.
    """
    utc_seconds = utc_seconds % 86400.0
    hh = int(utc_seconds // 3600)
    mm = int((utc_seconds % 3600) // 60)
    ss = utc_seconds - hh * 3600 - mm * 60
    lat, lon, alt = position
    fields = [
        f"{talker}GGA",
        f"{hh:02d}{mm:02d}{ss:05.2f}",
        _encode_angle(lat, 2, decimals),
        "N" if lat >= 0 else "S",
        _encode_angle(lon, 3, decimals),
        "E" if lon >= 0 else "W",
        "1",
        f"{satellites:02d}",
        f"{hdop:.1f}",
        f"{alt:.3f}",
        "M",
        "0.0",
        "M",
        "",
        "",
    ]
    body = ",".join(fields)
    return f"${body}*{nmea_checksum(body):02X}"


def with_checksum(body: str) -> str:
    """Frame an arbitrary sentence body as ``$body*hh``."""
    return f"${body}*{nmea_checksum(body):02X}"
