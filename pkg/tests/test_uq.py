from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import T0, rain, resid
from resdiffcast.errors import ConfigError, DataError
from resdiffcast.gridio import GridGeometry
from resdiffcast.uq import (IntensityBins, UqBounds, coverage_rate, covered_mask, disc_offsets,
                            fixed_bins, interval_error, make_scenarios, percentile_bins,
                            write_coverage_csv)

H = timedelta(hours=1)


def _members(prev, on, nxt, r, geom=None):
    geom = geom or GridGeometry(*np.shape(on))
    p = None if prev is None else rain(prev, geom, valid_time=T0)
    return make_scenarios(p, rain(on, geom, valid_time=T0 + H),
                          rain(nxt, geom, valid_time=T0 + 2 * H), resid(r, geom, T0 + H))


def _bounds(lo, mid, hi, geom):
    return UqBounds(rain(lo, geom), rain(mid, geom), rain(hi, geom))


def _disc_scan(lo, hi, t, geom, tol):
    """Exhaustive oracle: visit every pixel pair."""
    ny, nx = t.shape
    cov = np.zeros(t.shape, bool)
    for i in range(ny):
        for j in range(nx):
            for a in range(ny):
                for b in range(nx):
                    if np.hypot((a - i) * geom.dy_km, (b - j) * geom.dx_km) <= tol + 1e-9:
                        if lo[a, b] <= t[i, j] <= hi[a, b]:
                            cov[i, j] = True
    return cov


def test_members_ordering_example():
    b = _members([[1.0]], [[2.0]], [[4.0]], [[-1.5]])
    assert b.lower.values[0, 0] == 0.0
    assert b.middle.values[0, 0] == 0.5
    assert b.upper.values[0, 0] == 2.5


def test_lead_one_fallback():
    b = _members(None, [[2.0]], [[4.0]], [[0.0]])
    assert b.lower.values[0, 0] == 2.0 and b.upper.values[0, 0] == 4.0


def test_non_consecutive_rejected():
    g = GridGeometry(1, 1)
    with pytest.raises(DataError):
        make_scenarios(None, rain([[1.0]], g, valid_time=T0),
                       rain([[1.0]], g, valid_time=T0 + 3 * H), resid([[0.0]], g))


def test_bounds_validation():
    g = GridGeometry(1, 1)
    with pytest.raises(DataError):
        _bounds([[2.0]], [[1.0]], [[3.0]], g)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(0, 50)),
       arrays(np.float64, (3, 3), elements=st.floats(0, 50)),
       arrays(np.float64, (3, 3), elements=st.floats(0, 50)),
       arrays(np.float64, (3, 3), elements=st.floats(-60, 60)),
       st.booleans())
def test_ordering_property(prev, on, nxt, r, drop_prev):
    b = _members(None if drop_prev else prev, on, nxt, r)
    assert np.all(0 <= b.lower.values)
    assert np.all(b.lower.values <= b.middle.values)
    assert np.all(b.middle.values <= b.upper.values)


def test_disc_offsets():
    g = GridGeometry(5, 5, dy_km=3.0, dx_km=3.0)
    assert disc_offsets(g, 0) == [(0, 0)]
    assert len(disc_offsets(g, 3.0)) == 5
    assert len(disc_offsets(g, 3.0 * np.sqrt(2))) == 9
    with pytest.raises(ConfigError):
        disc_offsets(g, -1)


def test_tolerance_covers_neighbour():
    g = GridGeometry(1, 2, dy_km=3.0, dx_km=3.0)
    b = _bounds([[0.0, 5.0]], [[0.0, 6.0]], [[0.0, 7.0]], g)
    t = rain([[6.0, 0.0]], g)
    assert not covered_mask(b, t, 0.0)[0, 0]
    assert covered_mask(b, t, 3.0)[0, 0]


@pytest.mark.parametrize("shape,tol,dkm", [((12, 9), 0.0, 1.0), ((12, 9), 3.0, 1.0),
                                          ((10, 14), 7.5, 3.0), ((8, 8), 40.0, 3.0)])
def test_matches_disc_scan(rng, shape, tol, dkm):
    g = GridGeometry(*shape, dy_km=dkm, dx_km=dkm)
    mid = rng.gamma(0.8, 3.0, shape)
    lo = mid * rng.uniform(0.5, 1.0, shape)
    hi = mid * rng.uniform(1.0, 1.6, shape)
    t = rng.gamma(0.8, 3.0, shape)
    t[rng.random(shape) < 0.1] = np.nan
    cov = covered_mask(_bounds(lo, mid, hi, g), rain(t, g), tol)
    np.testing.assert_array_equal(cov, _disc_scan(lo, hi, t, g, tol))


def test_coverage_monotone_in_tolerance(rng):
    g = GridGeometry(40, 40, dy_km=3.0, dx_km=3.0)
    mid = rng.gamma(0.8, 3.0, g.shape)
    b = _bounds(mid * 0.8, mid, mid * 1.3, g)
    t = rain(rng.gamma(0.8, 3.0, g.shape), g)
    bins = percentile_bins(t.values)
    prev = None
    for tol in (0, 3, 6, 10, 20):
        rep = coverage_rate(b, t, tol, bins).by_label()
        if prev is not None:
            for k in rep:
                assert rep[k].coverage >= prev[k].coverage
        prev = rep


def test_percentile_bins():
    bins = percentile_bins(np.arange(0.0, 101.0))
    assert bins.labels == ("0-p50", "p50-p75", "p75-p90", "p90-p95", ">p95")
    assert bins.edges[1] == pytest.approx(50.5) and bins.edges[-1] == np.inf
    assert bins.index(np.array([0.0, 1.0, 50.5, 50.6, 1e9])).tolist() == [-1, 0, 0, 1, 4]


def test_percentile_bins_collapse_ties():
    bins = percentile_bins(np.ones(10))
    assert bins.labels == ("0-p50", ">p50")


def test_fixed_bins():
    b = fixed_bins([0, 1, 5, np.inf])
    assert b.labels == ("0-1", "1-5", ">5")
    with pytest.raises(ConfigError):
        fixed_bins([0, 0])


def test_interval_error_modes():
    g = GridGeometry(1, 3)
    b = _bounds([[1.0, 1.0, 1.0]], [[2.0, 2.0, 2.0]], [[3.0, 3.0, 3.0]], g)
    t = rain([[0.5, 2.5, 4.0]], g)
    bins = fixed_bins([0, np.inf])
    assert interval_error(b, t, bins)[">0"] == pytest.approx((1.5 + 0.5 + 2.0) / 3)
    assert interval_error(b, t, bins, "nearest_bound")[">0"] == pytest.approx((0.5 + 0 + 1) / 3)
    with pytest.raises(ConfigError):
        interval_error(b, t, bins, "bogus")


def test_report_and_csv(tmp_path):
    g = GridGeometry(1, 4)
    b = _bounds([[0.0, 1.0, 1.0, 1.0]], [[0.0, 2.0, 2.0, 2.0]], [[0.0, 3.0, 3.0, 3.0]], g)
    t = rain([[0.0, 2.0, 10.0, np.nan]], g)
    rep = coverage_rate(b, t, 0.0, fixed_bins([0, 5, np.inf]), nearest_bound=True)
    got = rep.by_label()
    assert got["0-5"].coverage == 1.0 and got["0-5"].n_pixels == 1
    assert got[">5"].coverage == 0.0 and got[">5"].nearest_bound_error == 7.0
    write_coverage_csv(tmp_path / "c.csv", rep)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("bin_label,bin_lo_mm") and lines[0].endswith("nearest_bound_error_mm")
    assert len(lines) == 3


def test_empty_bins_omitted():
    g = GridGeometry(1, 1)
    b = _bounds([[1.0]], [[1.0]], [[1.0]], g)
    rep = coverage_rate(b, rain([[1.0]], g), 0, IntensityBins((0.0, 2.0, 9.0), ("a", "b")))
    assert [x.label for x in rep.bins] == ["a"]
