import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerotri import geo


ELL = geo.Ellipsoid()

# Frozen values from scripts/tm_oracle.py (independent 40-digit
# implementation: quadrature-derived series coefficients, Newton-inverted
# conformal latitude). Command lines shown next to each fixture.
ORACLE_FIXTURES = [
    # python3 scripts/tm_oracle.py 29.56 106.55 105
    (29.56, 106.55, 105.0, 650218.5386059991551, 3272342.512407085568),
    # python3 scripts/tm_oracle.py 44.1 117.9 120.5
    (44.10, 117.90, 120.5, 291812.12148629193873, 4888222.0815712505178),
]


class TestForward:
    @pytest.mark.parametrize("lat,lon,cm,east,north", ORACLE_FIXTURES)
    def test_matches_extended_precision_oracle(self, lat, lon, cm, east,
                                               north):
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(lat, lon, 0.0), ELL, geo.ZoneConfig(cm))
        assert abs(p.easting - east) < 1e-3
        assert abs(p.northing - north) < 1e-3

    def test_central_meridian_maps_to_false_easting(self):
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(40.0, 105.0, 0.0), ELL, geo.ZoneConfig(105.0))
        assert p.easting == pytest.approx(500_000.0, abs=1e-6)

    def test_equator_on_meridian_is_origin(self):
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(0.0, 105.0, 0.0), ELL, geo.ZoneConfig(105.0))
        assert p.northing == pytest.approx(0.0, abs=1e-6)

    def test_altitude_passes_through(self):
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(30.0, 106.0, 512.25), ELL,
            geo.ZoneConfig(105.0))
        assert p.altitude == 512.25

    def test_out_of_zone_rejected(self):
        with pytest.raises(geo.OutOfZone):
            geo.geodetic_to_gauss_kruger(
                geo.GeodeticCoord(30.0, 111.0, 0.0), ELL,
                geo.ZoneConfig(105.0))

    def test_meridian_arc_against_quadrature(self):
        # arc length to latitude 45 deg on the GRS80-like ellipsoid,
        # via direct numerical integration of the meridian integrand
        from scipy.integrate import quad
        a = ELL.semi_major_axis
        f = 1.0 / ELL.inverse_flattening
        e2 = f * (2 - f)

        def integrand(phi):
            return a * (1 - e2) / (1 - e2 * math.sin(phi) ** 2) ** 1.5

        arc, _ = quad(integrand, 0.0, math.radians(45.0), epsabs=1e-10)
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(45.0, 105.0, 0.0), ELL, geo.ZoneConfig(105.0))
        assert p.northing == pytest.approx(arc, abs=1e-6)


class TestRoundTrip:
    def test_thousand_random_in_zone_points(self):
        rng = np.random.default_rng(7)
        zone = geo.ZoneConfig(105.0)
        worst = 0.0
        for _ in range(1000):
            lat = rng.uniform(-80.0, 80.0)
            lon = rng.uniform(105.0 - 3.4, 105.0 + 3.4)
            p = geo.geodetic_to_gauss_kruger(
                geo.GeodeticCoord(lat, lon, 0.0), ELL, zone)
            g = geo.gauss_kruger_to_geodetic(p, ELL, zone)
            worst = max(worst, abs(g.latitude - lat), abs(g.longitude - lon))
        assert worst < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(lat=st.floats(-80, 80), dlon=st.floats(-3.4, 3.4),
           alt=st.floats(-100, 9000))
    def test_property_round_trip(self, lat, dlon, alt):
        zone = geo.ZoneConfig(117.0)
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(lat, 117.0 + dlon, alt), ELL, zone)
        g = geo.gauss_kruger_to_geodetic(p, ELL, zone)
        assert abs(g.latitude - lat) < 1e-9
        assert abs(g.longitude - (117.0 + dlon)) < 1e-9
        assert g.altitude == alt


class TestPosFile:
    def test_parse_geodetic(self):
        text = ("IMG_1,29.56,106.55,350.2\n"
                "IMG_2,29.57,106.56,351.0,0.02,0.05\n")
        recs = geo.parse_pos_file(text)
        assert [r.image_id for r in recs] == ["IMG_1", "IMG_2"]
        assert recs[0].horizontal_sigma == pytest.approx(0.01)
        assert recs[0].vertical_sigma == pytest.approx(0.03)
        assert recs[1].horizontal_sigma == pytest.approx(0.02)
        assert isinstance(recs[0].position, geo.GeodeticCoord)

    def test_parse_projected(self):
        recs = geo.parse_pos_file("A,650218.5,3272342.5,350.0\n",
                                  projected=True)
        assert isinstance(recs[0].position, geo.ProjectedCoord)

    def test_parse_error_names_line(self):
        with pytest.raises(geo.ParseError, match="line 2"):
            geo.parse_pos_file("A,29.5,106.5,0\nB,not_a_number,106.5,0\n")

    def test_wrong_field_count_names_line(self):
        with pytest.raises(geo.ParseError, match="line 1"):
            geo.parse_pos_file("A,29.5,106.5\n")

    def test_duplicate_image_id(self):
        with pytest.raises(geo.DuplicateImageId):
            geo.parse_pos_file("A,29.5,106.5,0\nA,29.6,106.5,0\n")

    def test_write_parse_round_trip(self):
        recs = geo.parse_pos_file("A,29.5,106.5,10.5,0.02,0.07\n")
        again = geo.parse_pos_file(geo.write_pos_file(recs))
        assert again[0].image_id == "A"
        assert again[0].position.latitude == pytest.approx(29.5, abs=1e-12)
        assert again[0].vertical_sigma == pytest.approx(0.07)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises((geo.ParseError, ValueError)):
            geo.parse_pos_file("A,29.5,106.5,0,0,0.03\n")


class TestValidation:
    def test_latitude_bounds(self):
        with pytest.raises(ValueError):
            geo.GeodeticCoord(91.0, 0.0, 0.0)

    def test_inverse_newton_converges_at_zone_edge(self):
        zone = geo.ZoneConfig(105.0)
        p = geo.geodetic_to_gauss_kruger(
            geo.GeodeticCoord(79.9, 108.4, 0.0), ELL, zone)
        g = geo.gauss_kruger_to_geodetic(p, ELL, zone)
        assert abs(g.latitude - 79.9) < 1e-9
