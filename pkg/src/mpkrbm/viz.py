"""Filter mosaics and coupling-matrix analysis for export.

Filters live in whitened coordinates; for display they are mapped back to
the raw pixel domain through the whitening inverse and tiled into a grid
with per-tile min-max scaling.
"""

import numpy as np

from .energy import phase_coupling_matrix
from .errors import ShapeError


def as_tile(vec, patch_size, channels):
    if channels == 3:
        return vec.reshape(patch_size, patch_size, 3)
    return vec.reshape(patch_size, patch_size)


def _scale_tile(tile):
    lo, hi = tile.min(), tile.max()
    if hi - lo < 1e-30:
        return np.zeros_like(tile)
    return (tile - lo) / (hi - lo) * 255.0


def mosaic(tiles, n_columns=None, gap=1, gap_value=128.0):
    """Tile a list of equally-shaped images into one grid image with
    per-tile min-max scaling to 0..255."""
    if not tiles:
        raise ShapeError("mosaic needs at least one tile")
    tiles = [np.asarray(t, dtype=np.float64) for t in tiles]
    shape = tiles[0].shape
    if any(t.shape != shape for t in tiles):
        raise ShapeError("mosaic tiles must share one shape")
    n = len(tiles)
    cols = n_columns or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    th, tw = shape[0], shape[1]
    out_shape = (rows * (th + gap) + gap, cols * (tw + gap) + gap) + shape[2:]
    out = np.full(out_shape, gap_value)
    for idx, tile in enumerate(tiles):
        r, c = divmod(idx, cols)
        y = gap + r * (th + gap)
        x = gap + c * (tw + gap)
        out[y:y + th, x:x + tw] = _scale_tile(tile)
    return out


def filters_to_pixel_space(filters, whitening):
    """Map whitened-domain filter columns (rows of `filters`) to raw pixel
    vectors via the whitening inverse, without adding the mean."""
    return np.atleast_2d(filters) @ whitening.inverse.T


def subspace_tiles(params, whitening, kind="amplitude"):
    """One tile per subspace: either filter component, the per-pixel pair
    amplitude sqrt(c1^2 + c2^2), or the pair angle on a cyclic gray map."""
    D, F, L = params.C.shape
    ps, ch = whitening.patch_size, whitening.channels
    tiles = []
    for f in range(F):
        raw = filters_to_pixel_space(params.C[:, f, :].T, whitening)
        if kind == "component0":
            tile = raw[0]
        elif kind == "component1":
            tile = raw[1]
        elif kind == "amplitude":
            tile = np.sqrt(raw[0] ** 2 + raw[1] ** 2)
        elif kind == "phase":
            # cyclic gray map: continuous across the +/- pi seam
            tile = 0.5 * (1.0 + np.cos(np.arctan2(raw[1], raw[0])))
        else:
            raise ValueError(f"unknown subspace tile kind {kind!r}")
        tiles.append(as_tile(tile, ps, ch))
    return tiles


def top_weighted_subspaces(weights, n=6):
    """Indices of the n largest-|weight| rows of one column."""
    order = np.argsort(-np.abs(weights))
    return [int(i) for i in order[:n]]


def top_coupled_entries(K, n=6):
    """Walk couplings (i < j) by descending |K[i, j]| and collect the
    distinct coordinate indices they touch, first-seen order, up to n."""
    upper = np.triu_indices(K.shape[0], k=1)
    order = np.argsort(-np.abs(K[upper]))
    seen = []
    for idx in order:
        for entry in (int(upper[0][idx]), int(upper[1][idx])):
            if entry not in seen:
                seen.append(entry)
            if len(seen) == n:
                return seen
    return seen


def ranked_offblock_pairs(K, subspace_dim):
    """Subspace pairs (f1, f2), f1 < f2, ranked by the largest |K| entry
    found in their off-diagonal block; duplicates collapse to the first
    (largest) occurrence."""
    L = subspace_dim
    n = K.shape[0] // L
    entries = []
    for u in range(K.shape[0]):
        for w in range(u + 1, K.shape[0]):
            fu, fw = u // L, w // L
            if fu != fw:
                entries.append((abs(K[u, w]), (fu, fw)))
    entries.sort(key=lambda e: -e[0])
    ranked, seen = [], set()
    for value, pair in entries:
        if pair not in seen:
            seen.add(pair)
            ranked.append((pair, value))
    return ranked


def group_tiles(params, whitening, matrix, kind, n_top=6, max_columns=32):
    """Rows of tiles for grouped exports.

    kind 'P': per pooling column, amplitude tiles of its top subspaces.
    kind 'Q': per phase factor, tiles for the top-|Q| (f, l) filter vectors.
    kind 'R': per coupling column, tiles for the filters touched by the
              strongest K couplings (duplicates removed).
    """
    D, F, L = params.C.shape
    ps, ch = whitening.patch_size, whitening.channels
    rows = []
    n_cols = min(matrix.shape[1], max_columns)
    for col in range(n_cols):
        tiles = []
        if kind == "P":
            for f in top_weighted_subspaces(matrix[:, col], n_top):
                pair = filters_to_pixel_space(params.C[:, f, :].T, whitening)
                tiles.append(as_tile(np.sqrt(pair[0] ** 2 + pair[1] ** 2), ps, ch))
        elif kind == "Q":
            flat = matrix[:, col] if matrix.ndim == 2 else params.Q[:, :, col].reshape(-1)
            c_flat = params.C.reshape(D, F * L)
            for idx in top_weighted_subspaces(flat, n_top):
                raw = filters_to_pixel_space(c_flat[:, idx], whitening)
                tiles.append(as_tile(raw[0], ps, ch))
        elif kind == "R":
            h = np.zeros(params.R.shape[1])
            h[col] = 1.0
            K = phase_coupling_matrix(h, params)
            c_flat = params.C.reshape(D, F * L)
            for idx in top_coupled_entries(K, n_top):
                raw = filters_to_pixel_space(c_flat[:, idx], whitening)
                tiles.append(as_tile(raw[0], ps, ch))
        else:
            raise ValueError(f"unknown group kind {kind!r}")
        rows.append(tiles)
    return rows


def rows_to_mosaic(rows, gap=1):
    """Lay out per-column tile rows as one mosaic (one row per column)."""
    flat = [tile for row in rows for tile in row]
    return mosaic(flat, n_columns=max(len(r) for r in rows), gap=gap)
