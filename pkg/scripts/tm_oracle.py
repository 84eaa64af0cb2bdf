#!/usr/bin/env python
"""High-precision transverse Mercator oracle.

Independent of the library implementation: the rectifying radius and the
conformal->rectifying trig-series coefficients are obtained by arbitrary
precision numerical quadrature (no hardcoded series), the conformal
latitude by its closed form, and the complex shift evaluated with mpmath.
Used once to freeze expected values into the test suite.

Usage: python scripts/tm_oracle.py lat_deg lon_deg central_meridian_deg
"""

import sys

import mpmath as mp


class TMOracle:
    def __init__(self, a=6378137.0, inv_f=298.257222101, n_terms=12, dps=40):
        mp.mp.dps = dps
        self.a = mp.mpf(a)
        f = 1 / mp.mpf(inv_f)
        self.e2 = f * (2 - f)
        self.e = mp.sqrt(self.e2)
        # rectifying radius from the quarter meridian, by quadrature
        self.A = 2 * self._meridian_arc(mp.pi / 2) / mp.pi
        self.alpha = [self._fourier_coeff(j) for j in range(1, n_terms + 1)]

    def _meridian_arc(self, phi):
        f = lambda t: (1 - self.e2 * mp.sin(t) ** 2) ** mp.mpf("-1.5")
        return self.a * (1 - self.e2) * mp.quad(f, [0, phi])

    def _conformal_lat(self, phi):
        return mp.atan(mp.sinh(
            mp.asinh(mp.tan(phi)) - self.e * mp.atanh(self.e * mp.sin(phi))
        ))

    def _phi_from_chi(self, chi):
        if abs(chi) < mp.mpf("1e-30"):
            return mp.mpf(0)
        return mp.findroot(lambda p: self._conformal_lat(p) - chi, chi)

    def _rectifying_lat(self, phi):
        return self._meridian_arc(phi) / self.A

    def _fourier_coeff(self, j):
        # mu(chi) - chi = sum_j alpha_j sin(2 j chi); sin(2j.) are
        # orthogonal on [0, pi/2] with norm pi/4
        g = lambda chi: (
            (self._rectifying_lat(self._phi_from_chi(chi)) - chi)
            * mp.sin(2 * j * chi)
        )
        return (4 / mp.pi) * mp.quad(g, [0, mp.pi / 2])

    def forward(self, lat_deg, lon_deg, cm_deg, scale=1, false_easting=500000):
        phi = mp.radians(mp.mpf(str(lat_deg)))
        lam = mp.radians(mp.mpf(str(lon_deg)) - mp.mpf(str(cm_deg)))
        chi = self._conformal_lat(phi)
        t = mp.tan(chi)
        xi = mp.atan2(t, mp.cos(lam))
        eta = mp.asinh(mp.sin(lam) / mp.sqrt(t ** 2 + mp.cos(lam) ** 2))
        z = mp.mpc(xi, eta)
        zeta = z
        for j, aj in enumerate(self.alpha, start=1):
            zeta += aj * mp.sin(2 * j * z)
        easting = mp.mpf(false_easting) + scale * self.A * zeta.imag
        northing = scale * self.A * zeta.real
        return easting, northing


if __name__ == "__main__":
    lat, lon, cm = (float(x) for x in sys.argv[1:4])
    oracle = TMOracle()
    e, n = oracle.forward(lat, lon, cm)
    print(f"lat={lat} lon={lon} cm={cm}")
    print(f"easting  = {mp.nstr(e, 20)}")
    print(f"northing = {mp.nstr(n, 20)}")
