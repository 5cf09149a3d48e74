import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irisim.align import (
    feather_weights,
    ncc,
    ncc_surface,
    normalize_intensity,
    register,
    stitch,
)
from irisim.errors import CoverageError, DegenerateInputError, StitchQualityError, UnitError
from irisim.imager import IrisImage, capture_tiles, quantize, render
from irisim.optics import NoiseParams, OpticalConfig

QUIET = OpticalConfig(noise=NoiseParams(enabled=False))


def brute_force_register(ref, sample, radius):
    """Exhaustive NCC over every shift, plain loops, same tie-break rule."""
    ref = np.asarray(ref, float)
    sample = np.asarray(sample, float)
    h, w = sample.shape
    cands = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = range(max(0, dy), min(h, ref.shape[0] + dy))
            xs = range(max(0, dx), min(w, ref.shape[1] + dx))
            s = np.array([sample[y, x] for y in ys for x in xs])
            r = np.array([ref[y - dy, x - dx] for y in ys for x in xs])
            s0, r0 = s - s.mean(), r - r.mean()
            den = np.sqrt((s0 @ s0) * (r0 @ r0))
            cands.append((float(s0 @ r0 / den) if den > 1e-12 * len(s) else 0.0, dx, dy))
    best = max(c[0] for c in cands)
    ties = [c for c in cands if c[0] >= best - 1e-9]
    _, dx, dy = min(ties, key=lambda c: (abs(c[1]) + abs(c[2]), c[2], c[1]))
    return dx, dy


@pytest.fixture(scope="module")
def frame(small_layout):
    return render(small_layout, QUIET, quantized=False).pixels


def shifted_pair(frame, y0, x0, dx, dy, size=32):
    ref = frame[y0 : y0 + size, x0 : x0 + size]
    sample = frame[y0 - dy : y0 - dy + size, x0 - dx : x0 - dx + size]
    return ref, sample


def test_self_registration(frame):
    img = IrisImage(frame, 1.67)
    off = register(img, img, 8)
    assert (off.dx, off.dy) == (0, 0)
    assert off.score == pytest.approx(1.0, abs=1e-6)


def test_known_shift_exact(frame):
    ref, sample = shifted_pair(frame, 40, 40, 3, -2)
    off = register(ref, sample, 8)
    assert (off.dx, off.dy) == (3, -2)
    assert brute_force_register(ref, sample, 8) == (3, -2)
    # convention: sample[y, x] == ref[y - dy, x - dx]
    assert sample[10, 10] == ref[10 + 2, 10 - 3]


def test_noisy_shift(frame):
    ref, sample = shifted_pair(frame, 50, 30, 5, 4)
    rng = np.random.default_rng(7)
    span = frame.max() - frame.min()
    off = register(ref + rng.normal(0, 0.02 * span, ref.shape), sample + rng.normal(0, 0.02 * span, ref.shape), 8)
    assert (off.dx, off.dy) == (5, 4) and off.score > 0.9


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 80), st.integers(10, 80), st.integers(-8, 8), st.integers(-8, 8), st.integers(0, 3))
def test_matches_brute_force_oracle(frame, y0, x0, dx, dy, radius_extra):
    ref, sample = shifted_pair(frame, y0, x0, dx, dy)
    r = 8 - radius_extra if max(abs(dx), abs(dy)) <= 8 - radius_extra else 8
    assert tuple(register(ref, sample, r)) == brute_force_register(ref, sample, r)


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 80), st.integers(10, 80), st.integers(-6, 6), st.integers(-6, 6))
def test_antisymmetry(frame, y0, x0, dx, dy):
    ref, sample = shifted_pair(frame, y0, x0, dx, dy)
    a = register(ref, sample, 8)
    b = register(sample, ref, 8)
    assert (a.dx, a.dy) == (-b.dx, -b.dy) == (dx, dy)


@settings(max_examples=30)
@given(st.floats(0.1, 100), st.floats(-50, 50), st.integers(0, 2**31))
def test_ncc_affine_invariance(scale, shift, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert abs(ncc(a, b) - ncc(a * scale + shift, b)) < 1e-6
    assert abs(ncc(a, b) - ncc(a, b * scale + shift)) < 1e-6


def test_registration_affine_invariant(frame):
    ref, sample = shifted_pair(frame, 40, 60, -4, 6)
    a = register(ref, sample, 8)
    b = register(ref * 2 + 7, sample, 8)
    assert tuple(a) == tuple(b) and abs(a.score - b.score) < 1e-6


def test_surface_matches_direct_ncc(frame):
    ref, sample = shifted_pair(frame, 40, 40, 2, 1)
    surf = ncc_surface(ref, sample, 3)
    for dy in range(-3, 4):
        for dx in range(-3, 4):
            y0, y1, x0, x1 = max(0, dy), min(32, 32 + dy), max(0, dx), min(32, 32 + dx)
            direct = ncc(sample[y0:y1, x0:x1], ref[y0 - dy : y1 - dy, x0 - dx : x1 - dx])
            assert surf[dy + 3, dx + 3] == pytest.approx(direct, abs=1e-9)


def test_normalize_intensity():
    rng = np.random.default_rng(1)
    img = IrisImage(rng.random((20, 30)), 1.67)
    n = normalize_intensity(img)
    assert abs(n.pixels.mean()) < 1e-9 and abs(n.pixels.var() - 1) < 1e-9
    m = normalize_intensity(IrisImage(img.pixels * 2 + 7, 1.67))
    np.testing.assert_allclose(n.pixels, m.pixels, atol=1e-12)
    with pytest.raises(DegenerateInputError):
        normalize_intensity(IrisImage(np.full((4, 4), 3.0), 1.67))


def test_register_errors(frame):
    with pytest.raises(UnitError):
        register(IrisImage(frame, 1.67), IrisImage(frame, 1.86))
    with pytest.raises(CoverageError):
        register(frame[:10, :10], frame[:10, :10], 8)


def test_single_tile_unchanged(frame):
    img = IrisImage(quantize(frame), 1.67)
    out = stitch([(img, (0, 0))], 32)
    assert out == img


def test_stitch_exact_offsets_reproduce_frame(small_layout):
    tiles, frame = capture_tiles(small_layout, QUIET, 48, 16, 0, seed=0)
    mosaic = stitch(tiles, 16)
    assert mosaic.shape == frame.shape
    assert np.array_equal(mosaic.pixels, frame.pixels)


def test_stitch_jittered_recovers_true_offsets(small_layout):
    tiles, frame = capture_tiles(small_layout, OpticalConfig(), 48, 16, 3, seed=11)
    mosaic = stitch(tiles, 16)
    report = mosaic.metadata["stitch_report"]
    by_index = {t.index: t for t in tiles}
    for rec in report["pairs"]:
        a, b = by_index[tuple(rec["a"])], by_index[tuple(rec["b"])]
        true = [b.true_offset[0] - a.true_offset[0], b.true_offset[1] - a.true_offset[1]]
        assert rec["refined"] == true
    # place the mosaic back in frame coordinates
    t0 = by_index[(0, 0)].true_offset
    ox, oy = report["origin"]
    x0, y0 = t0[0] + ox - by_index[(0, 0)].nominal_offset[0], t0[1] + oy - by_index[(0, 0)].nominal_offset[1]
    h, w = mosaic.shape
    ref = frame.as_fraction()[y0 : y0 + h, x0 : x0 + w]
    m = 8
    err = np.abs(mosaic.as_fraction()[m:-m, m:-m] - ref[m:-m, m:-m]).mean()
    assert err < 0.01


def test_stitch_is_idempotent(small_layout):
    img = render(small_layout, QUIET)
    tiles = []
    assert img.shape == (120, 120)
    for y in (0, 32, 64):
        for x in (0, 32, 64):
            tiles.append((img.crop(y, x, 56, 56), (x, y)))
    mosaic = stitch(tiles, 24)
    assert np.array_equal(mosaic.pixels[4:-4, 4:-4], img.pixels[4:120 - 4, 4:120 - 4])


def test_stitch_quality_error():
    rng = np.random.default_rng(0)
    tiles = [(IrisImage(quantize(rng.random((48, 48))), 1.67), (x, 0)) for x in (0, 32)]
    with pytest.raises(StitchQualityError) as exc:
        stitch(tiles, 16)
    assert exc.value.pair == ((0, 0), (0, 1))


def test_feather_weights_shape():
    w = feather_weights((10, 20), 4)
    assert w.shape == (10, 20)
    assert w[5, 10] == 1.0 and 0 < w[0, 0] < w[1, 1]
