"""
Test raster types, segmentation, masking, heatmaps and PGM/PPM files
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.utils.errors import DatasetError, DimensionError, InvalidInputError
from src.utils.imaging import (
    HEIGHT, WIDTH, AttributionMap, Image, SegmentMap, SegmentScores, grid_segmentation, mask_segments,
    masked_batch, quantize, read_pgm, read_ppm, render_heatmap, segment_means, slot_segmentation,
    stack_rasters, write_pgm, write_ppm,
)


class TestImage:
    def test_rejects_wrong_shape(self):
        with pytest.raises(DimensionError):
            Image(np.zeros((32, 64)))

    def test_rejects_out_of_range_and_nan(self):
        with pytest.raises(InvalidInputError):
            Image(np.full((HEIGHT, WIDTH), 1.5))
        bad = np.zeros((HEIGHT, WIDTH))
        bad[3, 4] = np.nan
        with pytest.raises(InvalidInputError):
            Image(bad)

    def test_data_is_read_only(self, random_image):
        with pytest.raises(ValueError):
            random_image.data[0, 0] = 0.5


class TestSegmentation:
    def test_grid_ids_are_row_major(self):
        seg = grid_segmentation(cell=8)
        assert seg.segment_count == 64
        assert seg.labels[0, 0] == 0
        assert seg.labels[0, 8] == 1
        assert seg.labels[8, 0] == 16
        assert seg.labels[31, 127] == 63
        assert np.all(seg.pixel_counts() == 64)

    def test_grid_cell_must_divide(self):
        with pytest.raises(DimensionError):
            grid_segmentation(cell=5)

    def test_slot_bands(self):
        seg = slot_segmentation()
        assert seg.segment_count == 8
        assert np.all(seg.labels[:, 15] == 0)
        assert np.all(seg.labels[:, 16] == 1)
        assert np.all(seg.labels[:, 127] == 7)

    def test_segment_map_rejects_gaps(self):
        labels = np.zeros((HEIGHT, WIDTH), dtype=int)
        labels[:, 64:] = 2
        with pytest.raises(InvalidInputError):
            SegmentMap(labels)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=8, max_size=8))
def test_segment_means_of_broadcast_scores(values):
    seg = slot_segmentation()
    attr = AttributionMap.from_segment_scores(SegmentScores(np.array(values)), seg)
    np.testing.assert_allclose(segment_means(attr, seg).scores, values, rtol=1e-12, atol=1e-12)


def test_segment_means_dim_mismatch():
    with pytest.raises(DimensionError):
        segment_means(AttributionMap(np.zeros((16, 16))), slot_segmentation())


class TestMasking:
    def test_removed_segments_take_baseline(self, random_image):
        seg = grid_segmentation(cell=8)
        masked = mask_segments(random_image, seg, [0, 17], baseline=0.25)
        removed = np.isin(seg.labels, [0, 17])
        assert np.all(masked.data[removed] == 0.25)
        assert np.array_equal(masked.data[~removed], random_image.data[~removed])

    def test_nothing_removed_is_identity(self, random_image):
        assert mask_segments(random_image, slot_segmentation(), []) == random_image

    def test_out_of_range_id(self, random_image):
        with pytest.raises(InvalidInputError):
            mask_segments(random_image, slot_segmentation(), [8])

    def test_batch_matches_single(self, random_image):
        seg = slot_segmentation()
        keep = np.ones((2, 8), dtype=bool)
        keep[1, [2, 5]] = False
        batch = masked_batch(random_image, seg, keep, baseline=0.0)
        assert np.array_equal(batch[0], random_image.data)
        assert np.array_equal(batch[1], mask_segments(random_image, seg, [2, 5]).data)

    def test_batch_shape_check(self, random_image):
        with pytest.raises(DimensionError):
            masked_batch(random_image, slot_segmentation(), np.ones((3, 7), dtype=bool))


class TestHeatmap:
    def test_zero_map_renders_grayscale(self, random_image):
        raster = render_heatmap(random_image, AttributionMap.zeros())
        expected = np.rint(random_image.data * 255).astype(np.uint8)
        for channel in range(3):
            assert np.array_equal(raster[:, :, channel], expected)

    def test_signed_colours(self):
        values = np.zeros((HEIGHT, WIDTH))
        values[0, 0] = 2.0
        values[0, 1] = -2.0
        raster = render_heatmap(Image.filled(0.0), AttributionMap(values))
        assert raster[0, 0].tolist() == [0, 255, 0]
        assert raster[0, 1].tolist() == [255, 0, 0]
        assert raster[5, 5].tolist() == [0, 0, 0]


class TestNetpbm:
    def test_pgm_round_trip_is_exact(self, tmp_path, random_image):
        img = Image(quantize(random_image.data))
        write_pgm(tmp_path / "a.pgm", img)
        assert read_pgm(tmp_path / "a.pgm") == img

    def test_truncated_pgm(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n128 32\n255\n" + bytes(100))
        with pytest.raises(DatasetError, match="truncated"):
            read_pgm(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n128 32\n255\n")
        with pytest.raises(DatasetError):
            read_pgm(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            read_pgm(tmp_path / "nope.pgm")

    def test_ppm_round_trip(self, tmp_path):
        raster = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
        write_ppm(tmp_path / "a.ppm", raster)
        assert np.array_equal(read_ppm(tmp_path / "a.ppm"), raster)


def test_stack_rasters_adds_gaps():
    a = np.zeros((4, 6, 3), dtype=np.uint8)
    stacked = stack_rasters([a, a, a], gap=2)
    assert stacked.shape == (4 * 3 + 2 * 2, 6, 3)
    assert np.all(stacked[4:6] == 255)
