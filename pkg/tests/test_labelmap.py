import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cooccur.labelmap import (
    LabelMap,
    LabelMapError,
    LabelSet,
    NoRegionError,
    dump_label_map,
    labels_present,
    load_label_map,
    region_centroid,
    region_distance,
    region_size,
    region_stats,
)
from helpers import grid_map
from oracles import centroid_by_scan, sizes_by_scan


def lmap_text(body, h=2, w=2, c=2):
    return io.StringIO(f"LMAP v1\n{h} {w} {c}\n{body}")


@st.composite
def label_maps(draw, max_side=8, max_c=5):
    c = draw(st.integers(1, max_c))
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    px = draw(arrays(np.int64, (h, w), elements=st.integers(0, c - 1)))
    return LabelMap(px, c)


class TestLoad:
    def test_minimal(self):
        m = load_label_map(lmap_text("0 1\n1 0\n"))
        assert (m.height, m.width, m.num_classes) == (2, 2, 2)
        assert m.pixels.tolist() == [[0, 1], [1, 0]]

    def test_row_length_mismatch(self):
        with pytest.raises(LabelMapError, match="row length mismatch"):
            load_label_map(lmap_text("0 1\n1\n"))

    def test_class_id_out_of_range(self):
        with pytest.raises(LabelMapError, match="class id out of range"):
            load_label_map(lmap_text("0 1\n2 0\n"))

    @pytest.mark.parametrize(
        "text",
        ["", "LMAP v2\n1 1 1\n0\n", "LMAP v1\n1 x 1\n0\n", "LMAP v1\n"],
    )
    def test_malformed_header(self, text):
        with pytest.raises(LabelMapError, match="header"):
            load_label_map(io.StringIO(text))

    def test_empty_map(self):
        with pytest.raises(LabelMapError, match="empty map"):
            load_label_map(io.StringIO("LMAP v1\n0 3 2\n"))

    def test_wrong_row_count(self):
        with pytest.raises(LabelMapError, match="expected 2 rows"):
            load_label_map(lmap_text("0 1\n"))

    def test_error_names_line(self):
        with pytest.raises(LabelMapError, match=r"f\.lmap:4"):
            load_label_map(lmap_text("0 1\n0 0 0\n"), name="f.lmap")

    @given(label_maps())
    def test_round_trip(self, m):
        buf = io.StringIO()
        dump_label_map(m, buf)
        buf.seek(0)
        assert load_label_map(buf) == m

    def test_direct_construction_validates(self):
        with pytest.raises(LabelMapError, match="class id out of range"):
            LabelMap(np.array([[0, 3]]), 3)
        with pytest.raises(LabelMapError, match="empty map"):
            LabelMap(np.zeros((0, 2), dtype=int), 3)


class TestStats:
    def test_labels_present(self):
        m = grid_map([[0, 0, 2, 2]] * 2 + [[2, 0, 0, 2]] * 2, 4)
        assert labels_present(m).tolist() == [1, 0, 1, 0]
        assert labels_present(m, LabelSet(4)).tolist() == [1, 0, 1, 0]

    def test_labels_present_rejects_other_label_set(self):
        with pytest.raises(LabelMapError):
            labels_present(grid_map([[0]], 2), LabelSet(3))

    def test_single_class(self):
        y = labels_present(grid_map([[1] * 3] * 3, 4))
        assert y.sum() == 1 and y[1] == 1

    def test_region_size(self, half_split):
        assert region_size(half_split, 0) == 8
        assert region_size(half_split, 2) == 0
        assert sum(region_size(half_split, k) for k in range(3)) == 16

    def test_region_size_out_of_range(self, half_split):
        with pytest.raises(LabelMapError, match="out of range"):
            region_size(half_split, 3)

    def test_centroids(self, half_split):
        assert region_centroid(half_split, 0) == (1.5, 0.5)
        assert region_centroid(grid_map([[0, 1], [1, 1]], 2), 0) == (0.0, 0.0)
        assert region_centroid(grid_map([[0] * 4] * 4, 1), 0) == (1.5, 1.5)

    def test_centroid_absent(self, half_split):
        with pytest.raises(NoRegionError, match="no region"):
            region_centroid(half_split, 2)

    def test_distance_examples(self, half_split, corner_map):
        assert region_distance(half_split, 0, 1) == pytest.approx(2.0, abs=1e-12)
        assert region_distance(half_split, 1, 1) == 0.0
        assert region_distance(corner_map, 0, 1) == pytest.approx(1.6 * math.sqrt(2), abs=1e-12)
        assert region_distance(corner_map, 0, 1) == pytest.approx(2.262742, abs=1e-6)

    def test_distance_absent(self, half_split):
        with pytest.raises(NoRegionError):
            region_distance(half_split, 0, 2)

    def test_disconnected_region_uses_all_pixels(self):
        m = grid_map([[0, 1, 0]], 2)
        assert region_size(m, 0) == 2
        assert region_centroid(m, 0) == (0.0, 1.0)


@settings(max_examples=200)
@given(label_maps())
def test_partition_and_presence(m):
    sizes = [region_size(m, k) for k in range(m.num_classes)]
    assert sum(sizes) == m.height * m.width
    assert labels_present(m).tolist() == [int(s > 0) for s in sizes]
    assert sizes == sizes_by_scan(m.pixels.tolist(), m.num_classes)


@settings(max_examples=200)
@given(label_maps())
def test_distance_properties(m):
    present = [k for k in range(m.num_classes) if region_size(m, k)]
    bound = math.hypot(m.height - 1, m.width - 1)
    for p in present:
        assert region_distance(m, p, p) == 0.0
        r, c = region_centroid(m, p)
        assert 0 <= r <= m.height - 1 and 0 <= c <= m.width - 1
        for q in present:
            d = region_distance(m, p, q)
            assert d == region_distance(m, q, p)
            assert 0 <= d <= bound + 1e-12


@given(label_maps())
def test_region_stats_matches_scan(m):
    st_ = region_stats(m)
    grid = m.pixels.tolist()
    assert sum(st_.sizes.values()) == m.height * m.width
    for k, (r, c) in st_.centroids.items():
        rr, cc = centroid_by_scan(grid, k)
        assert r == pytest.approx(rr, abs=1e-12) and c == pytest.approx(cc, abs=1e-12)
