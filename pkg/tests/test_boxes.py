import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from evtrack.boxes import BBoxN, giou, iou

unit_box = st.builds(
    BBoxN,
    st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(0.05, 0.4), st.floats(0.05, 0.4),
)


def test_iou_of_identical_boxes_is_one():
    b = BBoxN(0.5, 0.5, 0.2, 0.3)
    assert iou(b, b) == 1.0
    assert giou(b, b) == 1.0


def test_half_shifted_boxes_have_iou_one_third():
    a = BBoxN(0.5, 0.5, 0.2, 0.2)
    b = BBoxN(0.6, 0.5, 0.2, 0.2)
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_disjoint_boxes():
    a = BBoxN(0.2, 0.5, 0.2, 0.2)
    b = BBoxN(0.6, 0.5, 0.2, 0.2)
    assert iou(a, b) == 0.0
    # enclosing box is 0.6 x 0.2, union 0.08 of 0.12
    assert giou(a, b) == pytest.approx(-1 / 3, abs=1e-12)


def test_zero_area_union_gives_zero_iou():
    z = BBoxN(0.5, 0.5, 0.0, 0.0)
    assert iou(z, z) == 0.0
    with pytest.raises(ValueError):
        giou(z, z)


def test_vectorised_inputs_match_scalar_calls(rng):
    a = np.column_stack([rng.uniform(0.2, 0.8, (20, 2)), rng.uniform(0.05, 0.4, (20, 2))])
    b = np.column_stack([rng.uniform(0.2, 0.8, (20, 2)), rng.uniform(0.05, 0.4, (20, 2))])
    vi, vg = iou(a, b), giou(a, b)
    for k in range(20):
        assert vi[k] == pytest.approx(iou(BBoxN.from_array(a[k]), BBoxN.from_array(b[k])), abs=1e-15)
        assert vg[k] == pytest.approx(giou(BBoxN.from_array(a[k]), BBoxN.from_array(b[k])), abs=1e-15)


def test_matches_raster_oracle(rng):
    for _ in range(50):
        a = BBoxN(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
        b = BBoxN(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
        ri, rg = oracles.raster_overlap(a.as_array(), b.as_array())
        assert abs(iou(a, b) - ri) < 2e-3
        assert abs(giou(a, b) - rg) < 2e-3


@given(unit_box, unit_box)
def test_overlap_ranges_and_symmetry(a, b):
    i, g = iou(a, b), giou(a, b)
    assert 0.0 <= i <= 1.0
    assert -1.0 <= g <= i + 1e-12
    assert i == pytest.approx(iou(b, a), abs=1e-15)
    assert g == pytest.approx(giou(b, a), abs=1e-15)


@given(unit_box, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_overlap_is_translation_invariant(b, dx, dy):
    a = BBoxN(0.5, 0.5, 0.3, 0.2)
    shifted = lambda x: BBoxN(x.cx + dx, x.cy + dy, x.w, x.h)  # noqa: E731
    assert iou(shifted(a), shifted(b)) == pytest.approx(iou(a, b), abs=1e-12)
    assert giou(shifted(a), shifted(b)) == pytest.approx(giou(a, b), abs=1e-12)


def test_raster_oracle_reproduces_hand_example():
    ri, rg = oracles.raster_overlap([0.25, 0.25, 0.5, 0.5], [0.5, 0.25, 0.5, 0.5])
    assert ri == pytest.approx(1 / 3, abs=1e-3) and rg == pytest.approx(1 / 3, abs=1e-3)
    assert iou(BBoxN(0.25, 0.25, 0.5, 0.5), BBoxN(0.5, 0.25, 0.5, 0.5)) == pytest.approx(1 / 3, abs=1e-12)
    assert giou(BBoxN(0.5, 0.5, 1, 1), BBoxN(2.5, 0.5, 1, 1)) == pytest.approx(-1 / 3, abs=1e-12)


def test_clipped_keeps_box_in_unit_square():
    b = BBoxN(0.95, 0.02, 0.3, 0.2).clipped()
    x0, y0, x1, y1 = b.xyxy()
    assert x0 >= 0 and y0 >= 0 and x1 <= 1 and y1 <= 1
    assert b.w == pytest.approx(0.2) and b.h == pytest.approx(0.12)
    far = BBoxN(3.0, 3.0, 0.1, 0.1).clipped()
    assert far.is_valid() and far.xyxy()[2] <= 1.0


def test_validity():
    assert BBoxN(0.5, 0.5, 0.1, 0.1).is_valid()
    assert not BBoxN(0.5, 0.5, 0.0, 0.1).is_valid()
    assert not BBoxN(float("nan"), 0.5, 0.1, 0.1).is_valid()
