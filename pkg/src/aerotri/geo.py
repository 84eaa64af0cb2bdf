"""Geodetic <-> Gauss-Krueger conversion and POS file ingestion.

The forward/inverse transverse Mercator mapping follows the Krueger
series in the third flattening n, truncated at n^6. Within +-3.5 deg of
the central meridian the truncation error is far below a millimeter.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Union

from .errors import DataError, NumericalError

# CGCS2000 / GRS80-style ellipsoid, common in Chinese survey practice.
DEFAULT_SEMI_MAJOR = 6378137.0
DEFAULT_INV_FLATTENING = 298.257222101

DEFAULT_HSIGMA = 0.01  # meters
DEFAULT_VSIGMA = 0.03  # meters

MAX_ZONE_OFFSET_DEG = 3.5


class OutOfZone(DataError):
    """Longitude too far from the configured central meridian."""


class NoConvergence(NumericalError):
    """Iterative inversion failed to converge."""


class ParseError(DataError):
    """Malformed POS file row."""


class DuplicateImageId(DataError):
    """Same image id appears twice in a POS file."""


@dataclass(frozen=True)
class GeodeticCoord:
    latitude: float   # degrees, [-90, 90]
    longitude: float  # degrees, (-180, 180]
    altitude: float   # meters, ellipsoidal

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of [-90, 90]")
        if not -180.0 < self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of (-180, 180]")


@dataclass(frozen=True)
class ProjectedCoord:
    easting: float   # meters
    northing: float  # meters
    altitude: float  # meters


@dataclass(frozen=True)
class Ellipsoid:
    semi_major_axis: float = DEFAULT_SEMI_MAJOR
    inverse_flattening: float = DEFAULT_INV_FLATTENING

    def __post_init__(self):
        if self.semi_major_axis <= 0:
            raise ValueError("semi_major_axis must be > 0")
        if self.inverse_flattening <= 1:
            raise ValueError("inverse_flattening must be > 1")

    @property
    def flattening(self) -> float:
        return 1.0 / self.inverse_flattening

    @property
    def e2(self) -> float:
        f = self.flattening
        return f * (2.0 - f)

    @property
    def third_flattening(self) -> float:
        f = self.flattening
        return f / (2.0 - f)


@dataclass(frozen=True)
class ZoneConfig:
    central_meridian: float  # degrees
    false_easting: float = 500_000.0
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be > 0")


@dataclass(frozen=True)
class PosRecord:
    image_id: str
    position: Union[GeodeticCoord, ProjectedCoord]
    horizontal_sigma: float = DEFAULT_HSIGMA
    vertical_sigma: float = DEFAULT_VSIGMA

    def __post_init__(self):
        if self.horizontal_sigma <= 0 or self.vertical_sigma <= 0:
            raise ValueError("sigmas must be > 0")


def _series_coefficients(n: float) -> tuple[list[float], list[float], float]:
    """Krueger alpha (forward) and beta (inverse) coefficients to n^6,
    plus the rectifying radius A."""
    n2, n3, n4, n5, n6 = n * n, n**3, n**4, n**5, n**6
    alpha = [
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288
        + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630
        - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880
        + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    ]
    beta = [
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512
        + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105
        - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    ]
    rect_radius_factor = 1 + n2 / 4 + n4 / 64 + n6 / 256
    return alpha, beta, rect_radius_factor


def geodetic_to_gauss_kruger(
    p: GeodeticCoord,
    e: Ellipsoid | None = None,
    z: ZoneConfig | None = None,
) -> ProjectedCoord:
    """Forward transverse Mercator mapping; altitude passes through."""
    e = e or Ellipsoid()
    if z is None:
        raise ValueError("ZoneConfig with explicit central meridian required")
    dlon = p.longitude - z.central_meridian
    if dlon > 180.0:
        dlon -= 360.0
    elif dlon <= -180.0:
        dlon += 360.0
    if abs(dlon) > MAX_ZONE_OFFSET_DEG:
        raise OutOfZone(
            f"longitude {p.longitude} is {abs(dlon):.3f} deg from central "
            f"meridian {z.central_meridian} (limit {MAX_ZONE_OFFSET_DEG})"
        )

    n = e.third_flattening
    alpha, _, rect = _series_coefficients(n)
    big_a = e.semi_major_axis / (1 + n) * rect
    ecc = math.sqrt(e.e2)

    phi = math.radians(p.latitude)
    lam = math.radians(dlon)

    # conformal latitude via Karney's tau' formulation
    tau = math.tan(phi)
    sigma = math.sinh(ecc * math.atanh(ecc * tau / math.hypot(1.0, tau)))
    taup = tau * math.hypot(1.0, sigma) - sigma * math.hypot(1.0, tau)

    xi_p = math.atan2(taup, math.cos(lam))
    eta_p = math.asinh(math.sin(lam) / math.hypot(taup, math.cos(lam)))

    xi = xi_p
    eta = eta_p
    for j, a in enumerate(alpha, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)

    easting = z.false_easting + z.scale_factor * big_a * eta
    northing = z.scale_factor * big_a * xi
    return ProjectedCoord(easting, northing, p.altitude)


def gauss_kruger_to_geodetic(
    p: ProjectedCoord,
    e: Ellipsoid | None = None,
    z: ZoneConfig | None = None,
    max_iterations: int = 50,
) -> GeodeticCoord:
    """Inverse transverse Mercator mapping; altitude passes through."""
    e = e or Ellipsoid()
    if z is None:
        raise ValueError("ZoneConfig with explicit central meridian required")
    if not (math.isfinite(p.easting) and math.isfinite(p.northing)):
        raise ValueError("non-finite projected coordinates")

    n = e.third_flattening
    _, beta, rect = _series_coefficients(n)
    big_a = e.semi_major_axis / (1 + n) * rect
    ecc = math.sqrt(e.e2)
    e2 = e.e2

    xi = p.northing / (z.scale_factor * big_a)
    eta = (p.easting - z.false_easting) / (z.scale_factor * big_a)

    xi_p = xi
    eta_p = eta
    for j, b in enumerate(beta, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)

    taup = math.sin(xi_p) / math.hypot(math.sinh(eta_p), math.cos(xi_p))
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))

    # Newton inversion of tau -> tau' (conformal latitude relation)
    tau = taup
    for _ in range(max_iterations):
        sigma = math.sinh(ecc * math.atanh(ecc * tau / math.hypot(1.0, tau)))
        f = tau * math.hypot(1.0, sigma) - sigma * math.hypot(1.0, tau) - taup
        df = (
            (math.hypot(1.0, sigma) * math.hypot(1.0, tau) - sigma * tau)
            * (1 - e2) * math.hypot(1.0, tau)
            / (1 + (1 - e2) * tau * tau)
        )
        dtau = f / df
        tau -= dtau
        if abs(dtau) < 1e-15 * max(1.0, abs(tau)):
            break
    else:
        raise NoConvergence(
            f"latitude Newton iteration did not converge in {max_iterations}"
        )

    lat = math.degrees(math.atan(tau))
    lon = z.central_meridian + math.degrees(lam)
    if lon > 180.0:
        lon -= 360.0
    elif lon <= -180.0:
        lon += 360.0
    return GeodeticCoord(lat, lon, p.altitude)


def _parse_float(token: str, name: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: bad {name} value {token!r}") from None


def parse_pos_file(content: bytes | str, projected: bool = False) -> list[PosRecord]:
    """Parse a POS CSV into records, in file order.

    Geodetic form: image_id,lat_deg,lon_deg,alt_m[,hsigma_m,vsigma_m]
    Projected form: image_id,easting_m,northing_m,alt_m[,hsigma_m,vsigma_m]
    Missing sigma columns default to 0.01 m / 0.03 m.
    """
    if isinstance(content, bytes):
        text = content.decode("utf-8")
    else:
        text = content

    records: list[PosRecord] = []
    seen: set[str] = set()
    lines = io.StringIO(text).read().splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if lineno == 1 and fields[0] == "image_id":
            continue  # header
        if len(fields) not in (4, 6):
            raise ParseError(
                f"line {lineno}: expected 4 or 6 fields, got {len(fields)}"
            )
        image_id = fields[0]
        if not image_id:
            raise ParseError(f"line {lineno}: empty image_id")
        if image_id in seen:
            raise DuplicateImageId(f"line {lineno}: duplicate image_id {image_id!r}")
        seen.add(image_id)

        a = _parse_float(fields[1], "coordinate", lineno)
        b = _parse_float(fields[2], "coordinate", lineno)
        alt = _parse_float(fields[3], "alt_m", lineno)
        if len(fields) == 6:
            hs = _parse_float(fields[4], "hsigma_m", lineno)
            vs = _parse_float(fields[5], "vsigma_m", lineno)
        else:
            hs, vs = DEFAULT_HSIGMA, DEFAULT_VSIGMA

        if projected:
            pos: Union[GeodeticCoord, ProjectedCoord] = ProjectedCoord(a, b, alt)
        else:
            try:
                pos = GeodeticCoord(a, b, alt)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
        try:
            records.append(PosRecord(image_id, pos, hs, vs))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
    return records


def write_pos_file(records: list[PosRecord]) -> str:
    """Serialize records to the projected or geodetic POS CSV."""
    if records and isinstance(records[0].position, ProjectedCoord):
        header = "image_id,easting_m,northing_m,alt_m,hsigma_m,vsigma_m"

        def row(r: PosRecord) -> str:
            p = r.position
            assert isinstance(p, ProjectedCoord)
            return (f"{r.image_id},{p.easting:.6f},{p.northing:.6f},"
                    f"{p.altitude:.6f},{r.horizontal_sigma},{r.vertical_sigma}")
    else:
        header = "image_id,lat_deg,lon_deg,alt_m,hsigma_m,vsigma_m"

        def row(r: PosRecord) -> str:
            p = r.position
            assert isinstance(p, GeodeticCoord)
            return (f"{r.image_id},{p.latitude:.10f},{p.longitude:.10f},"
                    f"{p.altitude:.6f},{r.horizontal_sigma},{r.vertical_sigma}")

    return "\n".join([header] + [row(r) for r in records]) + "\n"
