import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from irisim.errors import ConfigError, DomainError, ParseError
from irisim.imager import (
    FULL_SCALE,
    IrisImage,
    capture_tiles,
    derive_seed,
    illumination_field,
    load_image,
    psf_kernel,
    psf_sigma,
    quantize,
    render,
    save_image,
)
from irisim.layout import BlockKind, DieLayout, inject_trojan, uniform_layout
from irisim.optics import NoiseParams, OpticalConfig, signal_budget

QUIET = OpticalConfig(noise=NoiseParams(enabled=False))


def _fwhm(profile):
    """FWHM in samples of a centred, symmetric 1-D profile by linear interpolation."""
    half = profile.max() / 2
    c = int(np.argmax(profile))
    i = c
    while profile[i + 1] >= half:
        i += 1
    frac = (profile[i] - half) / (profile[i] - profile[i + 1])
    return 2 * (i - c + frac)


def test_psf_normalized():
    for na in (0.3, 0.58, 0.9):
        assert psf_kernel(QUIET.replace(numerical_aperture=na)).sum() == pytest.approx(1.0, abs=1e-9)


def test_psf_default_fwhm():
    k = psf_kernel(QUIET)
    fwhm = _fwhm(k[k.shape[0] // 2])
    assert fwhm == pytest.approx(1.1253 / 0.25, abs=0.35)
    assert fwhm * 0.25 == pytest.approx(1.13, rel=0.1)


def test_psf_fwhm_halves_with_double_na():
    k1 = psf_kernel(QUIET.replace(numerical_aperture=0.4))
    k2 = psf_kernel(QUIET.replace(numerical_aperture=0.8))
    f1 = _fwhm(k1[k1.shape[0] // 2])
    f2 = _fwhm(k2[k2.shape[0] // 2])
    assert abs(f1 / 2 - f2) <= 1.0


def test_illumination_uniform_at_normal_incidence():
    for az in (0, 45, 200):
        f = illumination_field(QUIET.replace(illumination_azimuth_deg=az), (20, 10))
        assert np.all(f == 1.0)


def test_illumination_brightest_toward_top_right():
    f = illumination_field(QUIET.replace(illumination_elevation_deg=30, illumination_azimuth_deg=45), (20, 20))
    assert np.unravel_index(np.argmax(f), f.shape) == (0, f.shape[1] - 1)
    assert f[0, -1] > 1 > f[-1, 0]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 60), st.floats(0, 360))
def test_illumination_mirror_symmetry(elev, az):
    a = illumination_field(QUIET.replace(illumination_elevation_deg=elev, illumination_azimuth_deg=az), (12, 8))
    b = illumination_field(QUIET.replace(illumination_elevation_deg=elev, illumination_azimuth_deg=az + 180), (12, 8))
    np.testing.assert_allclose(a, b[::-1, ::-1], rtol=0, atol=1e-12)
    assert a.min() >= 0.05


def test_illumination_rejects_steep_elevation():
    with pytest.raises(DomainError):
        illumination_field(QUIET.replace(illumination_elevation_deg=70), (10, 10))


def test_constant_field_is_fixed_point():
    lay = uniform_layout((50, 50), 0.5)
    combined = signal_budget(QUIET).combined
    cfg = QUIET.replace(gain=2.0 / combined, exposure_s=1.0)
    img = render(lay, cfg, quantized=False)
    np.testing.assert_allclose(img.pixels, 1.0, rtol=0, atol=1e-12)
    assert np.all(render(lay, cfg).pixels == FULL_SCALE)


def _oracle_render(layout, cfg):
    """Independent path: 2-D reflect convolution, then explicit area integration."""
    g = layout.grid_pitch
    k = psf_kernel(cfg, g)
    blurred = ndimage.convolve(np.asarray(layout.reflectance, float), k, mode="reflect")
    w, h = layout.die_size
    nx = round(w / cfg.microns_per_pixel)
    p = w / nx
    ny = round(h / p)
    out = np.zeros((ny, nx))
    rows, cols = blurred.shape

    def weights(k_out, n_in):
        a, b = k_out * p, (k_out + 1) * p
        ws = {}
        for j in range(n_in):
            ov = min(b, (j + 1) * g) - max(a, j * g)
            if ov > 0:
                ws[j] = ov
        tot = sum(ws.values())
        return {j: v / tot for j, v in ws.items()}

    wy = [weights(i, rows) for i in range(ny)]
    wx = [weights(i, cols) for i in range(nx)]
    for i in range(ny):
        for jx in range(nx):
            out[i, jx] = sum(vy * vx * blurred[a, b] for a, vy in wy[i].items() for b, vx in wx[jx].items())
    return cfg.gain * cfg.exposure_s * signal_budget(cfg).combined * out


def test_render_matches_independent_oracle(rng):
    refl = rng.uniform(0, 1, (60, 72))
    lay = DieLayout((18.0, 15.0), 0.25, refl)
    cfg = QUIET.replace(microns_per_pixel=1.67)
    fast = render(lay, cfg, quantized=False).pixels
    slow = _oracle_render(lay, cfg)
    assert fast.shape == slow.shape
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-13)


def test_render_integer_ratio_is_block_mean(rng):
    refl = rng.uniform(0, 1, (80, 80))
    lay = DieLayout((20.0, 20.0), 0.25, refl)
    cfg = QUIET.replace(microns_per_pixel=2.0)
    blurred = ndimage.convolve(refl, psf_kernel(cfg), mode="reflect")
    blocks = blurred.reshape(10, 8, 10, 8).mean(axis=(1, 3))
    scale = cfg.gain * signal_budget(cfg).combined
    np.testing.assert_allclose(render(lay, cfg, quantized=False).pixels, scale * blocks, rtol=1e-12)


def test_mean_preservation_on_padded_layout(rng):
    refl = np.full((400, 400), 0.3)
    refl[40:-40, 40:-40] = rng.uniform(0, 1, (320, 320))
    lay = DieLayout((100.0, 100.0), 0.25, refl)
    cfg = QUIET.replace(microns_per_pixel=2.0)
    img = render(lay, cfg, quantized=False).pixels
    expected = cfg.gain * cfg.exposure_s * signal_budget(cfg).combined * refl.mean()
    assert img.mean() == pytest.approx(expected, rel=1e-6)


def test_doubling_exposure_doubles_pixels(small_layout):
    a = render(small_layout, QUIET.replace(exposure_s=0.5), quantized=False).pixels
    b = render(small_layout, QUIET.replace(exposure_s=1.0), quantized=False).pixels
    assert np.array_equal(2 * a, b)


def test_quantization_saturates():
    q = quantize(np.array([2.0, 1.0, 0.5, -0.3, 1.0000001]))
    assert q.tolist() == [65535, 65535, 32768, 0, 65535]
    assert q.dtype == np.uint16


def test_blocks_distinguishable(fig12_512):
    img = render(fig12_512, OpticalConfig(), seed=derive_seed(1, "render"))
    assert img.shape == (512, 512)
    assert img.microns_per_pixel == pytest.approx(fig12_512.die_size[0] / 512, rel=1e-12)
    frac = img.as_fraction()
    assert frac.max() < 1.0  # no saturation at default gain
    stats = {}
    for kind in (BlockKind.RAM_MACRO, BlockKind.STANDARD_CELL):
        vals = []
        for reg in fig12_512.regions_of(kind):
            x0, y0, x1, y1 = (int(v / img.microns_per_pixel) for v in reg.bounds)
            vals.append(frac[y0 + 3 : y1 - 3, x0 + 3 : x1 - 3].ravel())
        vals = np.concatenate(vals)
        stats[kind] = (vals.mean(), vals.std())
    (m1, s1), (m2, s2) = stats[BlockKind.RAM_MACRO], stats[BlockKind.STANDARD_CELL]
    pooled = math.sqrt((s1**2 + s2**2) / 2)
    assert abs(m1 - m2) > 3 * pooled


def test_render_deterministic(small_layout):
    cfg = OpticalConfig()
    a = render(small_layout, cfg, seed=5)
    assert a == render(small_layout, cfg, seed=5)
    assert a != render(small_layout, cfg, seed=6)


def test_render_rejects_super_resolution(small_layout):
    with pytest.raises(ConfigError):
        render(small_layout, QUIET.replace(microns_per_pixel=0.1))


def test_trojan_changes_a_pixel_well_above_noise(small_layout):
    cfg = OpticalConfig()
    side = 2 * cfg.microns_per_pixel
    for delta in (0.3, -0.3):
        for center in ((60.0, 60.0), (140.0, 150.0), (101.3, 33.7)):
            mod = inject_trojan(small_layout, center, side**2, delta)
            a = render(small_layout, QUIET, quantized=False).pixels
            b = render(mod, QUIET, quantized=False).pixels
            assert np.abs(a - b).max() >= 5 * cfg.noise.read_noise_sigma


def test_capture_without_jitter(small_layout):
    tiles, frame = capture_tiles(small_layout, QUIET, 64, 16, 0, seed=1)
    assert all(t.true_offset == t.nominal_offset for t in tiles)
    for t in tiles:
        x, y = t.true_offset
        assert np.array_equal(t.image.pixels, frame.pixels[y : y + 64, x : x + 64])


def test_capture_2x2_covers_frame(quiet_config):
    lay = uniform_layout((160.3, 160.3), 0.4)
    for jitter in (0, 3):
        tiles, frame = capture_tiles(lay, quiet_config, 64, 32, jitter, seed=9)
        assert len(tiles) == 4 and frame.shape == (96, 96)
        covered = np.zeros(frame.shape, bool)
        for t in tiles:
            x, y = t.true_offset
            covered[y : y + 64, x : x + 64] = True
        # a jittered edge tile may pull inward from the frame border by up to the jitter
        inner = covered[jitter : 96 - jitter, jitter : 96 - jitter]
        assert inner.all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 7))
def test_capture_jitter_bounded(seed, jitter):
    lay = uniform_layout((200.4, 200.4), 0.4)
    tiles, _ = capture_tiles(lay, QUIET, 48, 16, jitter, seed=seed)
    for t in tiles:
        assert abs(t.true_offset[0] - t.nominal_offset[0]) <= jitter
        assert abs(t.true_offset[1] - t.nominal_offset[1]) <= jitter


def test_capture_errors(small_layout):
    with pytest.raises(ConfigError):
        capture_tiles(small_layout, QUIET, 500, 32)
    with pytest.raises(ConfigError):
        capture_tiles(small_layout, QUIET, 64, 16, jitter_px=8)


def test_capture_noise_differs_per_tile(small_layout):
    tiles, _ = capture_tiles(small_layout, OpticalConfig(), 64, 16, 0, seed=3)
    again, _ = capture_tiles(small_layout, OpticalConfig(), 64, 16, 0, seed=3)
    assert all(a.image == b.image for a, b in zip(tiles, again))
    assert tiles[0].image.metadata["seed"] != tiles[1].image.metadata["seed"]


def test_image_file_round_trip(tmp_path, small_layout):
    img = render(small_layout, OpticalConfig(), seed=2)
    save_image(img, tmp_path / "a.pgm")
    back = load_image(tmp_path / "a.pgm")
    assert back == img
    assert back.metadata["seed"] == 2
    (tmp_path / "a.json").unlink()
    with pytest.raises(ParseError):
        load_image(tmp_path / "a.pgm")
    assert load_image(tmp_path / "a.pgm", microns_per_pixel=1.67).shape == img.shape


def test_derive_seed_separates_labels():
    seeds = {derive_seed(0, "noise"), derive_seed(0, "jitter"), derive_seed(1, "noise"), derive_seed(0, "tile", 0, 1)}
    assert len(seeds) == 4
    assert derive_seed(3, "x") == derive_seed(3, "x")


def test_image_validation():
    with pytest.raises(ValueError):
        IrisImage(np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        IrisImage(np.zeros((2, 2)), 0.0)
