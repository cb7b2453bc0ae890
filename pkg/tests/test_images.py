"""Image buffer semantics and PNG/PGM/PPM codec round trips."""

import numpy as np
import pytest

from patchformer.images import ImageBuffer, ImageFormatError, load_image, save_image


class TestImageBuffer:
    def test_2d_input_gains_channel_axis(self):
        img = ImageBuffer(np.zeros((4, 5)))
        assert img.pixels.shape == (4, 5, 1)
        assert (img.height, img.width, img.channels) == (4, 5, 1)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.array([[np.nan]]))

    def test_to_rgb_replicates_gray(self):
        img = ImageBuffer(np.linspace(0, 1, 6).reshape(2, 3, 1))
        rgb = img.to_rgb()
        assert rgb.channels == 3
        for c in range(3):
            np.testing.assert_array_equal(rgb.pixels[:, :, c], img.pixels[:, :, 0])

    def test_to_rgb_keeps_rgb(self):
        img = ImageBuffer(np.zeros((2, 2, 3)))
        assert img.to_rgb() is img


class TestPnm:
    def test_pgm_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(7, 5), dtype=np.uint8)
        img = ImageBuffer(raw.astype(np.float64)[..., None] / 255.0)
        path = tmp_path / "a.pgm"
        save_image(path, img)
        first = path.read_bytes()
        back = load_image(path)
        save_image(path, back)
        assert path.read_bytes() == first
        np.testing.assert_allclose(back.pixels[:, :, 0], raw / 255.0, atol=1e-12)

    def test_pgm_known_pixel_value(self, tmp_path):
        # maxval 255, pixel 128 -> 128/255
        path = tmp_path / "v.pgm"
        path.write_bytes(b"P5\n1 1\n255\n" + bytes([128]))
        img = load_image(path)
        assert img.pixels[0, 0, 0] == pytest.approx(128 / 255)

    def test_pgm_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([0, 255]))
        img = load_image(path)
        np.testing.assert_allclose(img.pixels[0, :, 0], [0.0, 1.0])

    def test_pgm_16bit(self, tmp_path):
        path = tmp_path / "w.pgm"
        value = 30000
        path.write_bytes(b"P5\n1 1\n65535\n" + value.to_bytes(2, "big"))
        img = load_image(path)
        assert img.pixels[0, 0, 0] == pytest.approx(value / 65535)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        raw = rng.integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
        path = tmp_path / "a.ppm"
        save_image(path, ImageBuffer(raw / 255.0))
        back = load_image(path)
        np.testing.assert_allclose(back.pixels, raw / 255.0, atol=1e-12)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P9\n1 1\n255\n\x00")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_values_clamped_on_write(self, tmp_path):
        img = ImageBuffer(np.array([[-0.5, 1.5]])[..., None])
        path = tmp_path / "clamp.pgm"
        save_image(path, img)
        back = load_image(path)
        np.testing.assert_allclose(back.pixels[0, :, 0], [0.0, 1.0])


class TestPng:
    def test_png_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8)
        path = tmp_path / "a.png"
        save_image(path, ImageBuffer(raw / 255.0))
        back = load_image(path)
        np.testing.assert_allclose(back.pixels, raw / 255.0, atol=1e-12)

    def test_png_grayscale(self, tmp_path):
        raw = np.arange(0, 250, 10, dtype=np.uint8).reshape(5, 5)
        path = tmp_path / "g.png"
        save_image(path, ImageBuffer(raw / 255.0))
        back = load_image(path)
        assert back.channels == 1
        np.testing.assert_allclose(back.pixels[:, :, 0], raw / 255.0, atol=1e-12)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(ImageFormatError):
            save_image(tmp_path / "x.bmp", ImageBuffer(np.zeros((2, 2))))
        (tmp_path / "x.tiff").write_bytes(b"II*\x00")
        with pytest.raises(ImageFormatError):
            load_image(tmp_path / "x.tiff")
