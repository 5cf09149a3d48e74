"""Translation registration and tile stitching.

Shift convention: ``register`` returns ``(dx, dy)`` such that
``sample[y, x]`` shows the same die location as ``reference[y - dy, x - dx]``;
i.e. the sample's content is the reference moved right by dx and down by dy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import CoverageError, DegenerateInputError, StitchQualityError, UnitError
from .imager import FULL_SCALE, IrisImage, Tile

MIN_OVERLAP_FRACTION = 0.25
MIN_STITCH_SCORE = 0.5
# scores closer than this are treated as ties
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Offset:
    dx: int
    dy: int
    score: float

    def __iter__(self):
        return iter((self.dx, self.dy))

    def to_dict(self):
        return {"dx": self.dx, "dy": self.dy, "score": self.score}


def normalize_intensity(image):
    """Zero-mean, unit-variance copy of ``image`` over its finite pixels."""
    px = image.pixels if isinstance(image, IrisImage) else image
    a = np.asarray(px, dtype=float)
    valid = np.isfinite(a)
    vals = a[valid]
    if vals.size < 2 or np.ptp(vals) == 0:
        raise DegenerateInputError("cannot normalize an image with fewer than 2 distinct values")
    mu = vals.mean()
    sd = np.sqrt(np.mean((vals - mu) ** 2))
    out = np.where(valid, (a - mu) / sd, np.nan)
    # second pass removes residual round-off in the mean
    out = out - np.nanmean(out)
    out = out / np.sqrt(np.nanmean(out**2))
    if not isinstance(image, IrisImage):
        return out
    return IrisImage(out, image.microns_per_pixel, dict(image.metadata, normalized=True))


def ncc(a, b):
    """Pearson correlation of two equally shaped arrays (0 if either is flat)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return 0.0
    return float(np.dot(a, b) / den)


def overlap_bounds(ref_shape, sample_shape, dx, dy):
    """Overlap rectangle in sample coordinates ``(y0, y1, x0, x1)`` for a shift."""
    hr, wr = ref_shape
    hs, ws = sample_shape
    return max(0, dy), min(hs, hr + dy), max(0, dx), min(ws, wr + dx)


def _window(radius, center=(0, 0)):
    cx, cy = center
    d = np.arange(-radius, radius + 1)
    return cx + d, cy + d


def _check_coverage(ref_shape, sample_shape, radius, center=(0, 0)):
    hs, ws = sample_shape
    dxs, dys = _window(radius, center)
    # overlap is separable, so the worst case is the product of the worst axes
    wx = min(max(0, min(ws, ref_shape[1] + dx) - max(0, dx)) for dx in dxs)
    wy = min(max(0, min(hs, ref_shape[0] + dy) - max(0, dy)) for dy in dys)
    frac = (wx * wy) / float(hs * ws)
    if frac < MIN_OVERLAP_FRACTION:
        raise CoverageError(
            f"overlap drops to {frac:.1%} of the sample within search radius {radius}; "
            f"at least {MIN_OVERLAP_FRACTION:.0%} is required"
        )


def _integral(a):
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    s[1:, 1:] = a.cumsum(0).cumsum(1)
    return s


def _box(s, y0, y1, x0, x1):
    return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]


def ncc_surface(reference, sample, radius, center=(0, 0)):
    """NCC for every integer shift in the window; ``out[dy - cy + r, dx - cx + r]``.

    Uses an FFT cross-correlation for the product term and summed-area
    tables for the per-overlap means and variances.
    """
    a = np.asarray(reference, dtype=float)
    b = np.asarray(sample, dtype=float)
    # global centring keeps the running sums well conditioned
    a = (a - a.mean()) / (a.std() or 1.0)
    b = (b - b.mean()) / (b.std() or 1.0)
    hr, wr = a.shape
    cross = fftconvolve(b, a[::-1, ::-1], mode="full")
    sa, saa = _integral(a), _integral(a * a)
    sb, sbb = _integral(b), _integral(b * b)
    dxs, dys = _window(radius, center)
    out = np.zeros((dys.size, dxs.size))
    for i, dy in enumerate(dys):
        for j, dx in enumerate(dxs):
            y0, y1, x0, x1 = overlap_bounds(a.shape, b.shape, dx, dy)
            n = (y1 - y0) * (x1 - x0)
            if n < 2:
                continue
            b_sum = _box(sb, y0, y1, x0, x1)
            b_sq = _box(sbb, y0, y1, x0, x1)
            a_sum = _box(sa, y0 - dy, y1 - dy, x0 - dx, x1 - dx)
            a_sq = _box(saa, y0 - dy, y1 - dy, x0 - dx, x1 - dx)
            ab = cross[hr - 1 + dy, wr - 1 + dx]
            va = a_sq - a_sum * a_sum / n
            vb = b_sq - b_sum * b_sum / n
            if va <= 1e-12 * n or vb <= 1e-12 * n:
                continue
            out[i, j] = (ab - a_sum * b_sum / n) / np.sqrt(va * vb)
    return np.clip(out, -1.0, 1.0)


def pick_shift(scores, radius, center=(0, 0)):
    """Best shift with ties broken by smallest |dx|+|dy|, then dy, then dx."""
    dxs, dys = _window(radius, center)
    best = scores.max()
    iy, ix = np.nonzero(scores >= best - TIE_TOLERANCE)
    cands = sorted(
        (abs(int(dxs[j])) + abs(int(dys[i])), int(dys[i]), int(dxs[j]), float(scores[i, j]))
        for i, j in zip(iy, ix)
    )
    _, dy, dx, score = cands[0]
    return Offset(dx, dy, score)


def _pixels(image):
    return image.as_fraction() if isinstance(image, IrisImage) else np.asarray(image, dtype=float)


def check_units(reference, sample, tolerance=0.01):
    if isinstance(reference, IrisImage) and isinstance(sample, IrisImage):
        a, b = reference.microns_per_pixel, sample.microns_per_pixel
        if abs(a - b) > tolerance * max(a, b):
            raise UnitError(f"pixel pitch mismatch: {a:g} vs {b:g} um/px")


def register(reference, sample, search_radius=8, center=(0, 0)):
    """Integer translation of ``sample`` relative to ``reference`` maximizing NCC.

    ``center`` offsets the search window (used when a nominal shift is known).
    """
    check_units(reference, sample)
    a, b = _pixels(reference), _pixels(sample)
    _check_coverage(a.shape, b.shape, search_radius, center)
    scores = ncc_surface(a, b, search_radius, center)
    return pick_shift(scores, search_radius, center)


# -- stitching -------------------------------------------------------------


def _as_tile_list(tiles):
    out = []
    for t in tiles:
        if isinstance(t, Tile):
            out.append((t.image, tuple(int(v) for v in t.nominal_offset)))
        else:
            img, off = t
            out.append((img, (int(off[0]), int(off[1]))))
    return out


def _grid(entries):
    xs = sorted({off[0] for _, off in entries})
    ys = sorted({off[1] for _, off in entries})
    grid = {}
    for k, (_, (x, y)) in enumerate(entries):
        key = (ys.index(y), xs.index(x))
        if key in grid:
            raise ValueError(f"two tiles share nominal grid position {key}")
        grid[key] = k
    if len(grid) != len(xs) * len(ys):
        raise ValueError("tiles do not form a complete rectangular grid")
    return grid, len(ys), len(xs)


def _pair_offset(img_a, off_a, img_b, off_b, radius):
    """Refined (x, y) position of tile b relative to tile a."""
    a, b = _pixels(img_a), _pixels(img_b)
    rx, ry = off_b[0] - off_a[0], off_b[1] - off_a[1]
    ha, wa = a.shape
    hb, wb = b.shape
    y0, y1 = max(0, ry), min(ha, ry + hb)
    x0, x1 = max(0, rx), min(wa, rx + wb)
    if y1 <= y0 or x1 <= x0:
        raise CoverageError(f"tiles at {off_a} and {off_b} do not overlap nominally")
    strip_a = a[y0:y1, x0:x1]
    strip_b = b[y0 - ry : y1 - ry, x0 - rx : x1 - rx]
    _check_coverage(strip_a.shape, strip_b.shape, radius)
    found = pick_shift(ncc_surface(strip_a, strip_b, radius), radius)
    return (rx - found.dx, ry - found.dy), found.score


def feather_weights(shape, ramp):
    """Separable linear ramp from the tile border to ``ramp`` px inside."""
    h, w = shape
    ramp = max(1, int(ramp))

    def axis(n):
        i = np.arange(n)
        d = np.minimum(i, n - 1 - i) + 1.0
        return np.minimum(d / (ramp + 1.0), 1.0)

    return axis(h)[:, None] * axis(w)[None, :]


def stitch(tiles, overlap_px, search_radius=8, min_score=MIN_STITCH_SCORE):
    """Assemble overlapping tiles into one mosaic.

    Every horizontally and vertically adjacent pair is registered on its
    nominal overlap strip. Global positions anchor tile (0, 0) at its nominal
    offset and accumulate refined pair offsets row by row (first column
    downwards, then along each row). Overlaps are blended with linear
    feathering ``overlap_px`` wide.

    The returned image carries a ``stitch_report`` entry in its metadata.
    """
    entries = _as_tile_list(tiles)
    if not entries:
        raise ValueError("no tiles to stitch")
    mpp = entries[0][0].microns_per_pixel
    for img, _ in entries[1:]:
        check_units(entries[0][0], img)
    if len(entries) == 1:
        img, off = entries[0]
        report = {"pairs": [], "positions": {"0,0": list(off)}, "origin": list(off)}
        return IrisImage(img.pixels, mpp, dict(img.metadata, stitch_report=report))

    grid, n_rows, n_cols = _grid(entries)
    pairs = {}
    records = []
    for r in range(n_rows):
        for c in range(n_cols):
            for nr, nc in ((r, c + 1), (r + 1, c)):
                if nr >= n_rows or nc >= n_cols:
                    continue
                ia, ib = grid[(r, c)], grid[(nr, nc)]
                (img_a, off_a), (img_b, off_b) = entries[ia], entries[ib]
                rel, score = _pair_offset(img_a, off_a, img_b, off_b, search_radius)
                pairs[((r, c), (nr, nc))] = rel
                records.append({
                    "a": [r, c], "b": [nr, nc],
                    "nominal": [off_b[0] - off_a[0], off_b[1] - off_a[1]],
                    "refined": list(rel), "score": score,
                })
    bad = [rec for rec in records if rec["score"] < min_score]
    if bad:
        worst = min(bad, key=lambda rec: rec["score"])
        raise StitchQualityError(
            f"pair {tuple(worst['a'])}-{tuple(worst['b'])} registered with score "
            f"{worst['score']:.3f} < {min_score}",
            pair=(tuple(worst["a"]), tuple(worst["b"])), score=worst["score"],
        )

    pos = {(0, 0): entries[grid[(0, 0)]][1]}
    for r in range(n_rows):
        for c in range(n_cols):
            if (r, c) == (0, 0):
                continue
            if c > 0:
                base, rel = pos[(r, c - 1)], pairs[((r, c - 1), (r, c))]
            else:
                base, rel = pos[(r - 1, 0)], pairs[((r - 1, 0), (r, 0))]
            pos[(r, c)] = (base[0] + rel[0], base[1] + rel[1])

    ox = min(p[0] for p in pos.values())
    oy = min(p[1] for p in pos.values())
    H = max(pos[k][1] + entries[grid[k]][0].shape[0] for k in pos) - oy
    W = max(pos[k][0] + entries[grid[k]][0].shape[1] for k in pos) - ox
    acc = np.zeros((H, W))
    wsum = np.zeros((H, W))
    quantized = all(img.quantized for img, _ in entries)
    for key, (x, y) in pos.items():
        img = entries[grid[key]][0]
        wgt = feather_weights(img.shape, overlap_px)
        h, w = img.shape
        acc[y - oy : y - oy + h, x - ox : x - ox + w] += wgt * img.as_fraction()
        wsum[y - oy : y - oy + h, x - ox : x - ox + w] += wgt
    covered = wsum > 0
    mosaic = np.where(covered, acc / np.where(covered, wsum, 1.0), 0.0)
    if quantized:
        mosaic = np.clip(np.round(mosaic * FULL_SCALE), 0, FULL_SCALE).astype(np.uint16)
    report = {
        "pairs": records,
        "positions": {f"{r},{c}": list(p) for (r, c), p in sorted(pos.items())},
        "origin": [ox, oy],
        "grid": [n_rows, n_cols],
        "uncovered_pixels": int((~covered).sum()),
    }
    meta = dict(entries[grid[(0, 0)]][0].metadata)
    for key in ("tile_index", "nominal_offset", "true_offset"):
        meta.pop(key, None)
    meta["stitch_report"] = report
    return IrisImage(mosaic, mpp, meta)
