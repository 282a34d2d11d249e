import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resdiffcast.errors import ConfigError, DataError, GeometryError
from resdiffcast.verify import (BootstrapCI, ContingencyCounts, MetricReport, ThresholdTable,
                                bootstrap_ci, box_sum, contingency, csi, fss, mae_nonzero,
                                mean_fss, pod, pooled_mae, pooled_score, write_reports_csv,
                                write_reports_json)

REGIONAL = {
    "CONUS": (1.02, 2.40, 5.26, 8.43), "PCST": (0.96, 1.89, 3.18, 4.21),
    "ROCK": (0.90, 1.92, 3.94, 6.13), "NGP": (1.14, 2.80, 6.33, 10.14),
    "MDWST": (1.33, 3.15, 6.66, 10.27), "NE": (0.88, 2.03, 4.71, 7.72),
    "SW": (0.72, 1.41, 2.52, 3.55), "SGP": (0.99, 2.17, 4.47, 7.04),
    "SE": (0.96, 2.04, 4.00, 5.90),
}


def fss_oracle(p, t, thr, n):
    """Window-by-window loops over non-missing pixels."""
    ok = np.isfinite(p) & np.isfinite(t)
    h, w = p.shape
    r = n // 2
    fs, os_ = [], []
    for i in range(h):
        for j in range(w):
            if not ok[i, j]:
                continue
            cnt = ef = eo = 0
            for a in range(max(0, i - r), min(h, i + r + 1)):
                for b in range(max(0, j - r), min(w, j + r + 1)):
                    if ok[a, b]:
                        cnt += 1
                        ef += p[a, b] >= thr
                        eo += t[a, b] >= thr
            fs.append(ef / cnt)
            os_.append(eo / cnt)
    f, o = np.array(fs), np.array(os_)
    ref = np.mean(f ** 2) + np.mean(o ** 2)
    return None if ref == 0 else 1 - np.mean((f - o) ** 2) / ref


class TestMae:
    def test_only_rainy_truth(self):
        assert mae_nonzero([[5.0, 1.0]], [[0.0, 3.0]]) == 2.0

    def test_missing_skipped(self):
        assert mae_nonzero([[np.nan, 1.0]], [[2.0, 2.0]]) == 1.0

    def test_all_dry(self):
        with pytest.raises(DataError):
            mae_nonzero([[1.0]], [[0.0]])

    def test_shape(self):
        with pytest.raises(GeometryError):
            mae_nonzero(np.zeros((2, 2)), np.zeros((2, 3)))


class TestContingency:
    def test_counts_and_boundary(self):
        c = contingency([[1.0, 1.0, 0.0, 0.0, 2.0]], [[1.0, 0.0, 1.0, 0.0, np.nan]], 1.0)
        assert c == ContingencyCounts(1, 1, 1, 1)

    def test_exclude_zero(self):
        c = contingency([[1.0, 1.0, 0.0]], [[0.0, 2.0, 0.5]], 1.0, exclude_zero=True)
        assert c == ContingencyCounts(1, 0, 0, 1)

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            contingency([[1.0]], [[1.0]], 0.0)

    def test_scores_undefined(self):
        c = ContingencyCounts(0, 0, 0, 5)
        assert pod(c) is None and csi(c) is None
        assert pod(ContingencyCounts(0, 3, 0, 1)) is None
        assert csi(ContingencyCounts(0, 3, 0, 1)) == 0.0

    def test_enumerated_tables(self):
        for tp, fp, fn, tn in itertools.product(range(4), repeat=4):
            c = ContingencyCounts(tp, fp, fn, tn)
            assert pod(c) == (tp / (tp + fn) if tp + fn else None)
            assert csi(c) == (tp / (tp + fp + fn) if tp + fp + fn else None)
            assert c.total == tp + fp + fn + tn

    def test_additive(self):
        assert ContingencyCounts(1, 2, 3, 4) + ContingencyCounts(1, 1, 1, 1) == \
            ContingencyCounts(2, 3, 4, 5)


class TestFss:
    @pytest.mark.parametrize("n", [1, 5, 27])
    def test_matches_oracle(self, rng, n):
        for _ in range(3):
            p = rng.gamma(0.6, 2.0, (48, 48))
            t = rng.gamma(0.6, 2.0, (48, 48))
            t[rng.random(t.shape) < 0.05] = np.nan
            assert fss(p, t, 1.0, n) == pytest.approx(fss_oracle(p, t, 1.0, n), abs=1e-12)

    def test_perfect_and_disjoint(self):
        a = np.zeros((10, 10))
        b = np.zeros((10, 10))
        a[2, 2] = b[7, 7] = 5.0
        assert fss(a, a, 1.0, 5) == 1.0
        assert fss(a, b, 1.0, 1) == 0.0

    def test_no_events(self):
        assert fss(np.zeros((5, 5)), np.zeros((5, 5)), 1.0, 3) is None

    def test_neighbourhood_validation(self):
        with pytest.raises(ConfigError):
            fss(np.zeros((5, 5)), np.zeros((5, 5)), 1.0, 4)
        with pytest.raises(ConfigError):
            fss(np.zeros((5, 5)), np.zeros((5, 5)), 1.0, 7)

    def test_box_sum_truncates(self):
        s = box_sum(np.ones((4, 4)), 3)
        assert s[0, 0] == 4 and s[1, 1] == 9 and s[0, 1] == 6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31), st.sampled_from([1, 3, 5]))
    def test_bounded(self, seed, n):
        r = np.random.default_rng(seed)
        p, t = r.gamma(0.5, 2, (9, 9)), r.gamma(0.5, 2, (9, 9))
        v = fss(p, t, 1.0, n)
        assert v is None or 0.0 <= v <= 1.0


class TestThresholds:
    def test_shipped_table_verbatim(self):
        tab = ThresholdTable.load()
        assert set(tab.regions) == set(REGIONAL)
        for region, vals in REGIONAL.items():
            for p, v in zip((50, 75, 90, 95), vals):
                assert tab.get(region, p) == v

    def test_unknown(self):
        with pytest.raises(ConfigError):
            ThresholdTable.load().get("MARS", 50)

    def test_custom_and_monotone(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("region,p50,p75,p90,p95\nX,1,2,3,4\n")
        assert ThresholdTable.load(p).get("X", 90) == 3.0
        with pytest.raises(ConfigError):
            ThresholdTable.from_csv_text("region,p50,p75,p90,p95\nX,1,5,3,4\n")
        with pytest.raises(ConfigError):
            ThresholdTable.from_csv_text("region,p50\nX,1\n")


def _units(rng, n, size=16, noise=1.0):
    out = []
    for _ in range(n):
        t = rng.gamma(0.7, 3.0, (size, size))
        p = np.maximum(t + rng.normal(0, noise, t.shape), 0)
        out.append((p, t))
    return out


class TestBootstrap:
    def test_defaults(self):
        import inspect
        sig = inspect.signature(bootstrap_ci)
        assert sig.parameters["n_boot"].default == 1000
        assert sig.parameters["level"].default == 0.95

    def test_deterministic(self, rng):
        units = _units(rng, 12)
        a = bootstrap_ci(pooled_mae, units, 200, rng=np.random.default_rng(5))
        b = bootstrap_ci(pooled_mae, units, 200, rng=np.random.default_rng(5))
        assert a == b

    def test_point_inside(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            vals = list(r.exponential(1.0, 30))
            ci = bootstrap_ci(lambda u: float(np.mean(u)), vals, 300, rng=r)
            assert ci.lo <= ci.point <= ci.hi

    def test_skips_undefined(self):
        units = [(np.ones((2, 2)), np.zeros((2, 2)))] * 3 + [(np.ones((2, 2)), np.ones((2, 2)))]
        ci = bootstrap_ci(pooled_mae, units, 300, rng=np.random.default_rng(0))
        assert ci.n_skipped > 0 and ci.point == 0.0

    def test_errors(self):
        with pytest.raises(DataError):
            bootstrap_ci(lambda u: 1.0, [1])
        with pytest.raises(ConfigError):
            bootstrap_ci(lambda u: 1.0, [1, 2], level=1.0)
        with pytest.raises(DataError):
            bootstrap_ci(lambda u: None, [1, 2])

    def test_pooled_scores(self, rng):
        units = _units(rng, 4)
        c = ContingencyCounts(0, 0, 0, 0)
        for p, t in units:
            c = c + contingency(p, t, 1.02)
        assert pooled_score(csi, 1.02)(units) == csi(c)
        v = mean_fss(1.02, 5)(units)
        assert v == pytest.approx(np.mean([fss(p, t, 1.02, 5) for p, t in units]))


def test_report_writers(tmp_path):
    reps = [MetricReport("mae_nonzero", 0.5, 0.4, 0.6, "2024-05", "CONUS", 1, None, None, 3),
            MetricReport("csi", None, threshold=1.02)]
    write_reports_csv(tmp_path / "m.csv", reps)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ("metric,value,ci_lo,ci_hi,month,region,lead_hours,threshold,"
                        "neighborhood,n")
    assert lines[1] == "mae_nonzero,0.500000,0.400000,0.600000,2024-05,CONUS,1,,,3"
    assert lines[2] == "csi,,,,,,0,1.020000,,0"
    write_reports_json(tmp_path / "m.json", reps)
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc[0]["value"] == 0.5 and doc[1]["value"] is None
    assert BootstrapCI(0, 1, 0.5).n_skipped == 0
