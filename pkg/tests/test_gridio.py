import struct

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import T0, rain
from resdiffcast.errors import DataError, GeometryError, GridFormatError
from resdiffcast.gridio import (QUIET_NAN_BITS, GridField, GridGeometry, NormStats, TileSpec,
                                bilinear_regrid, compute_stats, decode_grid, encode_grid,
                                extract_tile, inverse_zscore, mosaic, read_grid, tile_layout,
                                write_grid, zscore)


def _affine_src(geom, a=3.0, bx=0.5, by=0.25):
    y, x = geom.centers_km()
    return rain(a + bx * x[None, :] + by * y[:, None] - (by * y.min() + bx * x.min()) + 1,
                geom)


class TestGeometry:
    def test_rejects_empty_grid(self):
        with pytest.raises(GeometryError):
            GridGeometry(0, 4)

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(GeometryError):
            GridGeometry(2, 2, dx_km=0.0)

    def test_rows_run_south(self):
        y, x = GridGeometry(3, 3, dy_km=2.0).centers_km()
        assert np.all(np.diff(y) == -2.0) and np.all(np.diff(x) == 1.0)

    def test_subgrid_shares_plane(self):
        g = GridGeometry(10, 10, dy_km=3.0, dx_km=3.0)
        s = g.subgrid(2, 4, 3, 3)
        gy, gx = g.centers_km()
        sy, sx = s.centers_km()
        np.testing.assert_allclose(sy, gy[2:5], atol=1e-9)
        np.testing.assert_allclose(sx, gx[4:7], atol=1e-9)


class TestField:
    def test_negative_rain_rejected(self):
        with pytest.raises(DataError):
            rain([[0.0, -1.0]])

    def test_residual_may_be_negative(self):
        f = GridField(GridGeometry(1, 2), [[0.0, -1.0]], "residual_delta", "mm/h")
        assert f.is_residual and not f.is_rain

    def test_values_read_only(self):
        f = rain(np.ones((2, 2)))
        with pytest.raises(ValueError):
            f.values[0, 0] = 3.0

    def test_shape_must_match_geometry(self):
        with pytest.raises(GeometryError):
            GridField(GridGeometry(2, 3), np.zeros((3, 2)))


class TestFileFormat:
    def test_roundtrip(self, tmp_path):
        f = rain(np.arange(12.0).reshape(3, 4), variable="mrms_qpe", valid_time=T0)
        write_grid(f, tmp_path / "a.grd")
        assert read_grid(tmp_path / "a.grd").equals(f)

    def test_nan_becomes_missing(self, tmp_path):
        f = rain([[1.0, np.nan], [0.0, 2.0]])
        write_grid(f, tmp_path / "a.grd")
        g = read_grid(tmp_path / "a.grd")
        assert g.missing.tolist() == [[False, True], [False, False]]

    def test_missing_encoded_as_quiet_nan(self):
        f = rain([[np.nan, 0.0]])
        buf = encode_grid(f)
        words = struct.unpack("<2I", buf[-8:])
        assert words == (QUIET_NAN_BITS, 0)

    def test_zero_field_payload(self):
        buf = encode_grid(rain(np.zeros((3, 5))))
        assert buf[-60:] == bytes(60)

    def test_header_layout(self):
        f = rain(np.zeros((2, 3)), variable="mrms_qpe", valid_time=T0)
        buf = encode_grid(f)
        assert buf[:4] == b"GRDF"
        version, hlen = struct.unpack_from("<II", buf, 4)
        assert version == 1
        header = buf[12:12 + hlen].decode()
        assert header.startswith('{"dx_km":1.0,"dy_km":1.0,"lat0":')
        assert '"valid_time":"2024-05-01T00:00Z"' in header
        assert len(buf) == 12 + hlen + 4 * 6

    def test_shape_mismatch(self):
        buf = encode_grid(rain(np.zeros((4, 4))))
        with pytest.raises(GridFormatError, match="shape mismatch"):
            decode_grid(buf[:-16])

    def test_bad_magic(self):
        with pytest.raises(GridFormatError, match="magic"):
            decode_grid(b"XXXX" + bytes(20))

    def test_bad_version(self):
        buf = bytearray(encode_grid(rain(np.zeros((1, 1)))))
        buf[4:8] = struct.pack("<I", 2)
        with pytest.raises(GridFormatError, match="version"):
            decode_grid(bytes(buf))

    def test_malformed_header(self):
        hb = b'{"ny":1}'
        buf = b"GRDF" + struct.pack("<II", 1, len(hb)) + hb + bytes(4)
        with pytest.raises(GridFormatError, match="malformed"):
            decode_grid(buf)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_grid(tmp_path / "nope.grd")

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.one_of(st.floats(0, 1e6, width=32), st.just(np.nan))))
    def test_roundtrip_property(self, vals):
        f = rain(vals.astype(np.float64))
        buf = encode_grid(f)
        g = decode_grid(buf)
        assert g.equals(f)
        assert encode_grid(g) == buf


class TestStats:
    def test_constant_field_floor(self):
        s = compute_stats([rain(np.full((3, 3), 2.0))])
        assert s.mean == 2.0 and s.std == 1e-6

    def test_two_point(self):
        s = compute_stats([rain([[0.0, 2.0]])])
        assert s.mean == 1.0 and s.std == 1.0

    def test_ignores_missing(self):
        s = compute_stats([rain([[0.0, np.nan, 2.0]])])
        assert s.mean == 1.0

    def test_welford_oracle(self, rng):
        vals = rng.lognormal(0.0, 1.0, 100_000)
        fields = [rain(v.reshape(100, 100)) for v in vals.reshape(10, 10_000)]
        s = compute_stats(fields)
        # streaming (Welford) recomputation
        n, mean, m2 = 0, 0.0, 0.0
        for x in vals:
            n += 1
            d = x - mean
            mean += d / n
            m2 += d * (x - mean)
        assert s.mean == pytest.approx(mean, rel=1e-9)
        assert s.std == pytest.approx(np.sqrt(m2 / n), rel=1e-9)

    def test_empty_inputs(self):
        with pytest.raises(DataError):
            compute_stats([])
        with pytest.raises(DataError):
            compute_stats([rain([[np.nan]])])

    def test_zscore_points(self):
        st_ = NormStats(2.0, 4.0)
        z = zscore(rain([[2.0, 6.0, np.nan]]), st_)
        assert z.values[0, 0] == 0.0 and z.values[0, 1] == 1.0 and np.isnan(z.values[0, 2])
        assert z.units == "z"

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(0, 500)),
           st.floats(-5, 5), st.floats(0.01, 50))
    @example(np.zeros((4, 4)), 1.1686611514162319e-14, 49.710846536823034)
    def test_zscore_inverse(self, vals, mean, std):
        f = rain(vals)
        back = inverse_zscore(zscore(f, NormStats(mean, std)), NormStats(mean, std))
        np.testing.assert_allclose(back.values, vals, rtol=1e-6, atol=1e-9)
        assert back.units == "mm/h"


class TestRegrid:
    def test_identity(self, rng):
        f = rain(rng.random((5, 7)))
        out = bilinear_regrid(f, f.geom)
        np.testing.assert_array_equal(out.values, f.values)

    def test_center_of_two_by_two(self):
        f = rain([[0.0, 1.0], [2.0, 3.0]])
        g = GridGeometry(1, 1, lat0=f.geom.lat0 - 0.5 / 111.195,
                         lon0=f.geom.lon0 + 0.5 / (111.195 * np.cos(np.radians(38.5))))
        assert bilinear_regrid(f, g).values[0, 0] == pytest.approx(1.5, abs=1e-9)

    def test_affine_exact(self):
        src_geom = GridGeometry(20, 20, dy_km=3.0, dx_km=3.0)
        src = _affine_src(src_geom)
        tgt = src_geom.subgrid(1, 2, 40, 40)
        tgt = GridGeometry(40, 40, tgt.lat0 - 0.37 / 111.195, tgt.lon0, 1.0, 1.0)
        out = bilinear_regrid(src, tgt)
        want = _affine_src(tgt)  # same plane, evaluated on the target
        y, x = tgt.centers_km()
        sy, sx = src_geom.centers_km()
        plane = 3.0 + 0.5 * x[None, :] + 0.25 * y[:, None] - (0.25 * sy.min() + 0.5 * sx.min()) + 1
        np.testing.assert_allclose(out.values, plane, atol=1e-6)
        assert want.values.shape == out.values.shape

    def test_extrapolation_rejected(self):
        f = rain(np.ones((4, 4)))
        with pytest.raises(GeometryError):
            bilinear_regrid(f, GridGeometry(5, 4))

    def test_missing_contributor_propagates(self):
        f = rain([[1.0, np.nan], [1.0, 1.0]])
        g = GridGeometry(1, 1, lat0=f.geom.lat0 - 0.5 / 111.195,
                         lon0=f.geom.lon0 + 0.5 / (111.195 * np.cos(np.radians(38.5))))
        assert np.isnan(bilinear_regrid(f, g).values[0, 0])
        # a zero-weight missing neighbour does not poison an exact hit
        assert bilinear_regrid(f, f.geom).values[0, 0] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (6, 6), elements=st.floats(0, 100)),
           st.floats(0, 4.5), st.floats(0, 4.5))
    def test_within_contributor_range(self, vals, dy, dx):
        f = rain(vals)
        g = GridGeometry(1, 1, lat0=f.geom.lat0 - dy / 111.195,
                         lon0=f.geom.lon0 + dx / (111.195 * np.cos(np.radians(38.5))))
        v = bilinear_regrid(f, g).values[0, 0]
        r, c = int(min(np.floor(dy + 1e-9), 4)), int(min(np.floor(dx + 1e-9), 4))
        block = vals[r:r + 2, c:c + 2]
        assert block.min() - 1e-9 <= v <= block.max() + 1e-9


class TestTiles:
    def test_full_tile_is_identity(self, rng):
        f = rain(rng.random((4, 4)))
        t = extract_tile(f, TileSpec(0, 0, 4))
        assert t.equals(f)

    def test_top_left_block(self):
        f = rain(np.arange(16.0).reshape(4, 4))
        np.testing.assert_array_equal(extract_tile(f, TileSpec(0, 0, 2)).values,
                                      [[0, 1], [4, 5]])

    def test_disjoint_tiles_partition(self, rng):
        f = rain(rng.random((6, 6)))
        a = extract_tile(f, TileSpec(0, 0, 3))
        b = extract_tile(f, TileSpec(3, 3, 3))
        np.testing.assert_array_equal(a.values, f.values[:3, :3])
        np.testing.assert_array_equal(b.values, f.values[3:, 3:])

    def test_out_of_bounds(self):
        with pytest.raises(GeometryError):
            extract_tile(rain(np.zeros((4, 4))), TileSpec(3, 0, 2))

    def test_layout_covers_and_clamps(self):
        tiles = tile_layout(GridGeometry(100, 130), 40, 10)
        cover = np.zeros((100, 130), int)
        for t in tiles:
            cover[t.row0:t.row0 + 40, t.col0:t.col0 + 40] += 1
        assert cover.min() >= 1
        assert max(t.row0 for t in tiles) == 60 and max(t.col0 for t in tiles) == 90


def _sum_count_oracle(tiles, shape):
    per_pixel = [[[] for _ in range(shape[1])] for _ in range(shape[0])]
    for spec, f in tiles:
        for i in range(spec.size):
            for j in range(spec.size):
                v = f.values[i, j]
                if not np.isnan(v):
                    per_pixel[spec.row0 + i][spec.col0 + j].append(v)
    out = np.full(shape, np.nan)
    for i in range(shape[0]):
        for j in range(shape[1]):
            vals = sorted(per_pixel[i][j])
            if vals:
                s = 0.0
                for v in vals:
                    s += v
                out[i, j] = s / len(vals)
    return out


class TestMosaic:
    def test_constant(self):
        g = GridGeometry(30, 30)
        f = rain(np.full((30, 30), 2.5))
        tiles = [(t, extract_tile(f, t)) for t in tile_layout(g, 12, 5)]
        np.testing.assert_array_equal(mosaic(tiles, g).values, 2.5)

    def test_two_member_strip(self):
        g = GridGeometry(4, 6)
        a = (TileSpec(0, 0, 4), rain(np.ones((4, 4))))
        b = (TileSpec(0, 2, 4), rain(np.full((4, 4), 3.0)))
        out = mosaic([a, b], g).values
        assert np.all(out[:, 2:4] == 2.0) and np.all(out[:, :2] == 1.0)
        assert np.all(out[:, 4:] == 3.0)

    def test_uncovered_pixel_reported(self):
        with pytest.raises(GeometryError, match=r"pixel \(0, 3\)"):
            mosaic([(TileSpec(0, 0, 3), rain(np.ones((3, 3))))], GridGeometry(3, 4))

    def test_missing_excluded(self):
        g = GridGeometry(2, 3)
        a = (TileSpec(0, 0, 2), rain([[np.nan, 1.0], [1.0, 1.0]]))
        b = (TileSpec(0, 1, 2), rain(np.full((2, 2), 5.0)))
        out = mosaic([a, b], g).values
        assert np.isnan(out[0, 0]) and out[0, 1] == 3.0 and out[0, 2] == 5.0

    def test_sum_count_oracle_and_permutation(self, rng):
        g = GridGeometry(150, 170)
        tiles = []
        for spec in tile_layout(g, 64, 50):
            tiles.append((spec, rain(rng.gamma(0.7, 3.0, (64, 64)))))
        out = mosaic(tiles, g).values
        np.testing.assert_array_equal(out, _sum_count_oracle(tiles, g.shape))
        shuffled = [tiles[i] for i in rng.permutation(len(tiles))]
        np.testing.assert_array_equal(mosaic(shuffled, g).values, out)
