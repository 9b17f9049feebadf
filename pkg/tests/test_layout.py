import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from msi_forge.coco import ImageMeta
from msi_forge.errors import ImageLoadFailure, ZeroSizeBox
from msi_forge.layout import (
    PALETTE,
    ImageDirLoader,
    LayoutMap,
    Placement,
    compose_layout,
    depth_rank,
    pixel_box,
    read_png,
    render_preview,
    resize_rgb,
    round_half_away,
)
from msi_forge.reference_pool import ReferenceEntry
from msi_forge.scene_filter import SalientSubject


def _subj(ann_id, area):
    return SalientSubject(ann_id, 1, float(area), 0.1, (0, 0, 1, 1))


def _ref(name, w=4, h=3, cat=1):
    return ReferenceEntry(name, cat, f"{name}.png", w, h)


class SolidSource:
    """Every reference is a single flat colour, so resampling cannot change it."""

    def __init__(self, colours):
        self.colours = colours

    def __call__(self, ref):
        arr = np.zeros((ref.height, ref.width, 3), dtype=np.uint8)
        arr[:] = self.colours[ref.ref_id]
        return arr


class TestDepthRank:
    def test_areas(self):
        assert depth_rank([_subj(1, 5000), _subj(2, 1200), _subj(3, 800)]) == [0, 1, 2]
        assert depth_rank([_subj(3, 800), _subj(1, 5000), _subj(2, 1200)]) == [2, 0, 1]

    def test_single(self):
        assert depth_rank([_subj(9, 10)]) == [0]

    def test_tie(self):
        assert depth_rank([_subj(7, 900), _subj(3, 900)]) == [1, 0]

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 10_000)), min_size=1, max_size=10, unique_by=lambda t: t[0]))
    def test_permutation_and_smaller_on_top(self, items):
        subs = [_subj(i, a) for i, a in items]
        ranks = depth_rank(subs)
        assert sorted(ranks) == list(range(len(subs)))
        for (s1, r1) in zip(subs, ranks):
            for (s2, r2) in zip(subs, ranks):
                if s1.area < s2.area:
                    assert r1 > r2


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, -0.5, -1.5, 2.49)] == [1, 2, 3, -1, -2, 2]


def test_pixel_box_clamps():
    assert pixel_box((-3.2, 2.5, 20, 3.4), 8, 8) == (0, 3, 8, 6)


def brute_force_layout(width, height, placements, colours):
    """Per pixel: walk placements in rank order and keep the last one covering it."""
    out = np.zeros((height, width, 3), dtype=np.uint8)
    for yy in range(height):
        for xx in range(width):
            for p in sorted(placements, key=lambda p: p.order):
                x, y, w, h = p.bbox
                if x <= xx < x + w and y <= yy < y + h:
                    out[yy, xx] = colours[p.ref.ref_id]
    return out


class TestCompose:
    def test_full_cover(self):
        rng = np.random.default_rng(1)
        src = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        scene = ImageMeta(1, 13, 9, "s.jpg")
        layout = compose_layout(scene, [Placement(_ref("a", 7, 5), (0, 0, 13, 9), 0, 10.0)], lambda r: src)
        assert np.array_equal(layout.raster, resize_rgb(src, 13, 9))

    def test_two_overlapping_8x8(self):
        colours = {"big": (200, 0, 0), "small": (0, 0, 200)}
        scene = ImageMeta(1, 8, 8, "s.jpg")
        placements = [
            Placement(_ref("big"), (0, 0, 6, 6), 0, 36.0),
            Placement(_ref("small"), (3, 3, 5, 4), 1, 20.0),
        ]
        layout = compose_layout(scene, placements, SolidSource(colours))
        oracle = brute_force_layout(8, 8, placements, colours)
        assert np.array_equal(layout.raster, oracle)
        assert tuple(layout.raster[4, 4]) == colours["small"]
        assert tuple(layout.raster[7, 0]) == (0, 0, 0)

    def test_empty(self):
        layout = compose_layout(ImageMeta(1, 5, 4, "s"), [], SolidSource({}))
        assert layout.raster.shape == (4, 5, 3) and not layout.raster.any()

    def test_dimensions_follow_scene(self):
        layout = compose_layout(ImageMeta(1, 31, 17, "s"), [Placement(_ref("a"), (2, 2, 5, 5), 0, 1.0)], SolidSource({"a": (1, 2, 3)}))
        assert (layout.width, layout.height) == (31, 17)
        assert layout.raster.shape == (17, 31, 3)

    def test_zero_size_box(self):
        with pytest.raises(ZeroSizeBox):
            compose_layout(ImageMeta(1, 8, 8, "s"), [Placement(_ref("a"), (3, 3, 0.2, 4), 0, 1.0)], SolidSource({"a": (1, 1, 1)}))

    def test_bad_order(self):
        p = Placement(_ref("a"), (0, 0, 2, 2), 1, 1.0)
        with pytest.raises(ValueError):
            compose_layout(ImageMeta(1, 8, 8, "s"), [p], SolidSource({"a": (1, 1, 1)}))

    def test_load_failure(self, tmp_path):
        with pytest.raises(ImageLoadFailure):
            compose_layout(ImageMeta(1, 8, 8, "s"), [Placement(_ref("a"), (0, 0, 2, 2), 0, 1.0)], ImageDirLoader(tmp_path))

    def test_letterbox(self):
        scene = ImageMeta(1, 20, 20, "s")
        p = Placement(_ref("wide", 10, 5), (0, 0, 20, 20), 0, 1.0)
        layout = compose_layout(scene, [p], SolidSource({"wide": (9, 9, 9)}), resize_mode="letterbox")
        filled = np.argwhere(layout.raster.any(axis=2))
        assert filled[:, 0].min() == 5 and filled[:, 0].max() == 14
        assert filled[:, 1].min() == 0 and filled[:, 1].max() == 19


boxes = st.tuples(st.integers(0, 10), st.integers(0, 10), st.integers(1, 8), st.integers(1, 8))


@settings(max_examples=80, deadline=None)
@given(st.lists(boxes, min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_compositing_properties(bxs, rnd):
    colours = {f"r{i}": ((37 * i + 20) % 256, (91 * i + 5) % 256, 200) for i in range(len(bxs))}
    scene = ImageMeta(1, 12, 12, "s")
    placements = [Placement(_ref(f"r{i}"), b, i, 1.0) for i, b in enumerate(bxs)]
    src = SolidSource(colours)
    raster = compose_layout(scene, placements, src).raster

    shuffled = placements[:]
    rnd.shuffle(shuffled)
    assert np.array_equal(compose_layout(scene, shuffled, src).raster, raster)

    oracle_boxes = []
    for p in placements:
        x0, y0, x1, y1 = pixel_box(p.bbox, 12, 12)
        oracle_boxes.append(Placement(p.ref, (x0, y0, x1 - x0, y1 - y0), p.order, 1.0))
    assert np.array_equal(raster, brute_force_layout(12, 12, oracle_boxes, colours))

    # dropping the top layer only changes pixels inside its box
    if len(placements) > 1:
        below = compose_layout(scene, placements[:-1], src).raster
        x0, y0, x1, y1 = pixel_box(placements[-1].bbox, 12, 12)
        outside = np.ones((12, 12), dtype=bool)
        outside[y0:y1, x0:x1] = False
        assert np.array_equal(raster[outside], below[outside])

    covered = np.zeros((12, 12), dtype=bool)
    for p in placements:
        x0, y0, x1, y1 = pixel_box(p.bbox, 12, 12)
        covered[y0:y1, x0:x1] = True
    assert not raster[~covered].any()


class TestPreview:
    def test_black(self, tmp_path):
        layout = LayoutMap(6, 4, np.zeros((4, 6, 3), dtype=np.uint8), ())
        render_preview(layout, tmp_path / "z.png")
        with Image.open(tmp_path / "z.png") as im:
            assert im.format == "PNG" and im.mode == "RGB" and im.size == (6, 4)
        assert not read_png(tmp_path / "z.png").any()

    def test_round_trip(self, tmp_path):
        raster = np.random.default_rng(3).integers(0, 256, size=(9, 11, 3), dtype=np.uint8)
        render_preview(LayoutMap(11, 9, raster, ()), tmp_path / "r.png")
        assert np.array_equal(read_png(tmp_path / "r.png"), raster)

    def test_annotate_outlines(self, tmp_path):
        scene = ImageMeta(1, 64, 48, "s")
        placements = [Placement(_ref("a"), (4, 4, 40, 30), 0, 1.0), Placement(_ref("b"), (30, 20, 30, 25), 1, 1.0)]
        layout = compose_layout(scene, placements, SolidSource({"a": (10, 10, 10), "b": (20, 20, 20)}))
        render_preview(layout, tmp_path / "a.png", annotate=True)
        img = read_png(tmp_path / "a.png")
        for p in placements:
            x0, y0, x1, y1 = pixel_box(p.bbox, 64, 48)
            colour = PALETTE[p.order]
            for xx, yy in [(x0, y0 + 10), (x1 - 1, y0 + 10), (x0 + 10, y1 - 1), (x0 + 20, y0)]:
                assert tuple(img[yy, xx]) == colour
        # interior away from borders and labels untouched
        assert tuple(img[20, 20]) == (10, 10, 10)
