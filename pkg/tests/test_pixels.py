import math
import warnings

import numpy as np
import pytest
from PIL import Image

from errors import (CodecError, DimensionMismatchError, ImageFormatError,
                    QuantizationError)
from pixels import (CompressionSpec, ImageBuffer, batch_psnr, codec_roundtrip,
                    list_images, load_image, psnr, quantize, save_image,
                    summarize_psnr)


def _float_image(values):
    arr = np.zeros((1, len(values), 3), dtype=np.float64)
    arr[0, :, :] = np.asarray(values, dtype=np.float64)[:, None]
    return ImageBuffer(arr)


def _constant(value, size=16, dtype=np.uint8):
    return ImageBuffer(np.full((size, size, 3), value, dtype=dtype))


class TestImageBuffer:
    def test_rejects_wrong_shapes(self):
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((4, 4, 4), dtype=np.uint8))
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_rejects_other_dtypes(self):
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((4, 4, 3), dtype=np.int16))

    def test_is_read_only_and_detached_from_source(self):
        src = np.zeros((4, 5, 3), dtype=np.uint8)
        img = ImageBuffer(src)
        src[0, 0, 0] = 99
        assert img.data[0, 0, 0] == 0
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1
        assert (img.width, img.height, img.channels) == (5, 4, 3)

    def test_transpose_swaps_dimensions(self, rng):
        img = ImageBuffer(rng.integers(0, 256, size=(3, 7, 3), dtype=np.uint8))
        t = img.transpose()
        assert (t.width, t.height) == (3, 7)
        assert t.transpose().same_pixels(img)


class TestQuantize:
    def test_plain_rounding_and_clamping(self):
        out = quantize(_float_image([23.4, 255.7, -3.0]))
        assert out.data[0, :, 0].tolist() == [23, 255, 0]
        assert out.is_uint8

    def test_half_to_even(self):
        out = quantize(_float_image([22.5, 23.5, 0.5, 254.5]))
        assert out.data[0, :, 0].tolist() == [22, 24, 0, 254]

    def test_non_finite_names_location(self):
        arr = np.full((3, 4, 3), 10.0)
        arr[2, 1, 0] = np.nan
        with pytest.raises(QuantizationError) as info:
            quantize(ImageBuffer(arr))
        assert info.value.location == (2, 1, 0)
        assert "row 2" in str(info.value)

    def test_rejects_uint8_input(self):
        with pytest.raises(ImageFormatError):
            quantize(_constant(3))

    def test_idempotent_and_in_range(self, rng):
        img = ImageBuffer(rng.normal(128.0, 120.0, size=(20, 20, 3)))
        once = quantize(img)
        twice = quantize(once.to_float())
        assert twice.same_pixels(once)
        assert once.data.min() >= 0 and once.data.max() <= 255


class TestCompressionSpec:
    @pytest.mark.parametrize("quality", [0, 101, -5])
    def test_quality_out_of_range(self, quality):
        with pytest.raises(CodecError):
            CompressionSpec.jpeg(quality)

    def test_quality_only_for_jpeg(self):
        with pytest.raises(CodecError):
            CompressionSpec(CompressionSpec.PNG, 90)
        with pytest.raises(CodecError):
            CompressionSpec(CompressionSpec.JPEG)

    def test_label_and_provenance(self):
        spec = CompressionSpec.jpeg(75)
        assert spec.label == "jpeg-75"
        assert spec.to_dict() == {"format": "jpeg", "quality": 75, "subsampling": "4:4:4"}
        assert CompressionSpec.png().to_dict() == {"format": "png-lossless"}


class TestCodecRoundtrip:
    def test_png_is_identity(self, rng):
        img = ImageBuffer(rng.integers(0, 256, size=(33, 17, 3), dtype=np.uint8))
        assert codec_roundtrip(img, CompressionSpec.png()).same_pixels(img)

    def test_constant_gray_survives_jpeg75(self):
        out = codec_roundtrip(_constant(128, 32), CompressionSpec.jpeg(75))
        assert np.abs(out.data.astype(int) - 128).max() <= 1

    def test_requires_uint8(self):
        with pytest.raises(ImageFormatError):
            codec_roundtrip(_constant(1.0, dtype=np.float32), CompressionSpec.png())

    def test_lower_quality_loses_more(self, small_corpus):
        img = small_corpus[0]
        high = psnr(img, codec_roundtrip(img, CompressionSpec.jpeg(95)))
        low = psnr(img, codec_roundtrip(img, CompressionSpec.jpeg(50)))
        assert math.isfinite(high) and high > low


class TestPsnr:
    def test_identical_is_infinite(self):
        assert psnr(_constant(7), _constant(7)) == math.inf

    def test_mse_one(self):
        a = np.zeros((8, 8, 3), dtype=np.uint8)
        b = a.copy()
        b[...] = 1
        assert psnr(ImageBuffer(a), ImageBuffer(b)) == pytest.approx(48.1308, abs=1e-3)

    def test_black_vs_white_is_zero(self):
        assert psnr(_constant(0), _constant(255)) == pytest.approx(0.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            psnr(_constant(0, 8), _constant(0, 9))

    def test_symmetric_and_decreasing_in_mse(self):
        base = np.full((10, 10, 3), 100, dtype=np.uint8)
        values = []
        for delta in (1, 2, 4, 8):
            other = base.copy()
            other[:5] += delta
            values.append(psnr(ImageBuffer(base), ImageBuffer(other)))
            assert values[-1] == psnr(ImageBuffer(other), ImageBuffer(base))
        assert values == sorted(values, reverse=True)
        assert len(set(values)) == len(values)


class TestBatchPsnr:
    def test_mean_of_psnrs(self):
        result = summarize_psnr([40.0, 50.0])
        assert result.mean_db == 45.0
        assert (result.finite, result.infinite) == (2, 0)

    def test_identical_sets(self, small_corpus):
        result = batch_psnr(small_corpus[:3], small_corpus[:3])
        assert result.mean_db == math.inf
        assert result.infinite == 3 and result.finite == 0

    def test_count_mismatch(self, small_corpus):
        with pytest.raises(DimensionMismatchError):
            batch_psnr(small_corpus[:3], small_corpus[:2])

    def test_jpeg100_copy_from_directories(self, small_corpus, temp_dir):
        dir_a, dir_b = temp_dir / "a", temp_dir / "b"
        dir_a.mkdir()
        dir_b.mkdir()
        for i, img in enumerate(small_corpus):
            save_image(img, dir_a / f"img_{i:03d}.png")
            save_image(codec_roundtrip(img, CompressionSpec.jpeg(100)), dir_b / f"img_{i:03d}.png")
        result = batch_psnr(dir_a, dir_b, workers=3)
        assert result.pairs == len(small_corpus)
        assert math.isfinite(result.mean_db) and result.mean_db >= 45.0


class TestImageIO:
    def test_grayscale_and_alpha_become_rgb(self, temp_dir):
        Image.new("L", (5, 4), 77).save(temp_dir / "gray.png")
        Image.new("RGBA", (5, 4), (10, 20, 30, 40)).save(temp_dir / "alpha.png")
        gray = load_image(temp_dir / "gray.png")
        alpha = load_image(temp_dir / "alpha.png")
        assert gray.data.shape == (4, 5, 3) and (gray.data == 77).all()
        assert alpha.data[0, 0].tolist() == [10, 20, 30]

    def test_unreadable_file(self, temp_dir):
        bad = temp_dir / "broken.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(ImageFormatError):
            load_image(bad)

    def test_list_images_sorted_and_filtered(self, temp_dir):
        for name in ("b.png", "a.jpg", "notes.txt", ".hidden.png"):
            (temp_dir / name).write_bytes(b"")
        assert [p.name for p in list_images(temp_dir)] == ["a.jpg", "b.png"]

    def test_save_requires_uint8(self, temp_dir):
        with pytest.raises(ImageFormatError):
            save_image(_constant(1.0, dtype=np.float64), temp_dir / "x.png")

    def test_writers_raise_no_deprecation_warnings(self, rng, temp_dir):
        img = ImageBuffer(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
        with warnings.catch_warnings():
            warnings.simplefilter("error", DeprecationWarning)
            codec_roundtrip(img, CompressionSpec.jpeg(90))
            save_image(img, temp_dir / "x.png")
        assert load_image(temp_dir / "x.png").same_pixels(img)
