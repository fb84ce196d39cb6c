import math

import numpy as np
import pytest

from leohap.geometry import (GM_EARTH, R_EARTH, OrbitalElements,
                             elevation_angle, propagate_satellite, visible_set)


def elements(inc=0.0, raan=0.0, omega=0.0, nu=0.0, alt=5e5):
    return OrbitalElements(inclination=inc, raan=raan, arg_perigee_init=omega,
                           true_anomaly=nu, altitude_m=alt)


class TestPropagate:
    def test_equatorial_at_zero(self):
        pos = propagate_satellite(elements(), 0.0)
        np.testing.assert_allclose(pos, [6.871e6, 0.0, 0.0], atol=1e-6)

    def test_quarter_period(self):
        e = elements()
        pos = propagate_satellite(e, e.period / 4.0)
        np.testing.assert_allclose(pos, [0.0, 6.871e6, 0.0], rtol=1e-6,
                                   atol=1e-3)

    def test_angular_rate_and_period(self):
        # Kepler third-law oracle for h = 500 km, frozen independently:
        # tau = 2*pi*sqrt(H^3/GM) = 5668.144369 s
        e = elements()
        assert e.angular_rate == pytest.approx(1.108508340308963e-3, rel=1e-9)
        assert e.period == pytest.approx(5668.144369061165, rel=1e-9)

    def test_radius_conserved(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            e = elements(inc=rng.uniform(-np.pi, np.pi),
                         raan=rng.uniform(0, 2 * np.pi),
                         omega=rng.uniform(0, 2 * np.pi),
                         nu=rng.uniform(0, 2 * np.pi),
                         alt=rng.uniform(3e5, 2e6))
            t = rng.uniform(0, 5 * e.period)
            assert np.linalg.norm(propagate_satellite(e, t)) == \
                pytest.approx(e.radius, rel=1e-9)

    def test_periodicity(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            e = elements(inc=rng.uniform(-np.pi, np.pi),
                         raan=rng.uniform(0, 2 * np.pi),
                         nu=rng.uniform(0, 2 * np.pi))
            t = rng.uniform(0, e.period)
            np.testing.assert_allclose(propagate_satellite(e, t),
                                       propagate_satellite(e, t + e.period),
                                       atol=1e-6)

    def test_equatorial_stays_in_plane(self):
        e = elements()
        for t in np.linspace(0, 2 * e.period, 37):
            assert propagate_satellite(e, t)[2] == 0.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            elements(alt=-1.0)
        with pytest.raises(ValueError):
            elements(inc=float("nan"))
        with pytest.raises(ValueError):
            propagate_satellite(elements(), -1.0)


class TestElevation:
    def test_zenith(self):
        assert elevation_angle([R_EARTH + 2e4, 0, 0], [R_EARTH + 5e5, 0, 0]) \
            == pytest.approx(math.pi / 2)

    def test_nadir(self):
        assert elevation_angle([R_EARTH + 2e4, 0, 0], [-R_EARTH, 0, 0]) \
            == pytest.approx(-math.pi / 2)

    def test_tangent(self):
        assert elevation_angle([R_EARTH, 0, 0], [R_EARTH, R_EARTH, 0]) \
            == pytest.approx(0.0, abs=1e-12)

    def test_zero_observer_rejected(self):
        with pytest.raises(ValueError):
            elevation_angle([0, 0, 0], [1, 0, 0])


class TestVisibleSet:
    HAP = np.array([R_EARTH + 2e4, 0.0, 0.0])

    def test_zenith_visible(self):
        m = visible_set([np.array([R_EARTH + 5e5, 0, 0])], self.HAP,
                        math.radians(10))
        assert m.flags.tolist() == [True]

    def test_antipodal_invisible(self):
        m = visible_set([np.array([-(R_EARTH + 5e5), 0, 0])], self.HAP,
                        math.radians(10))
        assert m.flags.tolist() == [False]

    def test_boundary_inclusive(self):
        theta = math.radians(30)
        # place target so its elevation is exactly theta
        d = np.array([math.cos(theta) * 0.0 + math.sin(theta),
                      math.cos(theta), 0.0])
        target = self.HAP + 1e6 * d
        m = visible_set([target], self.HAP, elevation_angle(self.HAP, target))
        assert m.flags.tolist() == [True]

    def test_empty_constellation(self):
        m = visible_set([], self.HAP, math.radians(10))
        assert len(m) == 0 and not m.any_visible()

    def test_mask_matches_elevations(self):
        rng = np.random.default_rng(3)
        sats = [propagate_satellite(elements(nu=rng.uniform(0, 2 * np.pi),
                                             inc=rng.uniform(0, np.pi)), 0.0)
                for _ in range(40)]
        theta = math.radians(10)
        m = visible_set(sats, self.HAP, theta)
        for i, s in enumerate(sats):
            assert m.flags[i] == (elevation_angle(self.HAP, s) >= theta)
