import numpy as np

from mpkrbm.params import ModelShape, init_params
from mpkrbm.preprocess import WhiteningTransform
from mpkrbm.viz import (
    mosaic,
    ranked_offblock_pairs,
    subspace_tiles,
    top_coupled_entries,
    top_weighted_subspaces,
)


def identity_whitening(patch_size, channels=1):
    d = patch_size * patch_size * channels
    return WhiteningTransform(mean=np.zeros(d), forward=np.eye(d), inverse=np.eye(d),
                              variance_fraction=1.0, patch_size=patch_size,
                              channels=channels)


def test_delta_filters_give_single_bright_pixels():
    ps = 4
    wt = identity_whitening(ps)
    params = init_params(ModelShape(ps * ps, 2, 2, 2, 2, 2, 2), seed=0)
    params.C[:] = 0.0
    for f in range(2):
        for l in range(2):
            params.C[5 * f + 3 * l, f, l] = 1.0
    tiles = subspace_tiles(params, wt, kind="component0")
    for tile in tiles:
        flat = np.sort(tile.reshape(-1))
        assert flat[-1] > 0.99 and flat[-2] < 1e-9


def test_amplitude_tile_value():
    ps = 2
    wt = identity_whitening(ps)
    params = init_params(ModelShape(4, 1, 2, 1, 1, 1, 1), seed=0)
    params.C[:] = 0.0
    params.C[0, 0, 0] = 3.0
    params.C[0, 0, 1] = 4.0
    tile = subspace_tiles(params, wt, kind="amplitude")[0]
    assert np.isclose(tile.reshape(-1)[0], 5.0)


def test_mosaic_layout_and_scaling():
    tiles = [np.array([[0.0, 1.0], [2.0, 3.0]]), np.full((2, 2), 7.0)]
    img = mosaic(tiles, n_columns=2, gap=1, gap_value=128.0)
    assert img.shape == (4, 7)
    assert img[0, 0] == 128.0                 # border
    assert img[1, 1] == 0.0 and img[2, 2] == 255.0
    assert np.all(img[1:3, 4:6] == 0.0)       # constant tile maps to zero


def test_top_weighted_subspaces_order():
    weights = np.array([0.1, -5.0, 2.0, 0.5])
    assert top_weighted_subspaces(weights, 3) == [1, 2, 3]


def test_top_coupled_entries_against_direct_sort():
    rng = np.random.default_rng(0)
    K = rng.standard_normal((8, 8))
    K = K + K.T

    # independent oracle: enumerate couplings, sort, dedupe in order
    couplings = sorted(
        ((abs(K[i, j]), i, j) for i in range(8) for j in range(i + 1, 8)),
        key=lambda t: -t[0])
    expected = []
    for _, i, j in couplings:
        for e in (i, j):
            if e not in expected:
                expected.append(e)
        if len(expected) >= 6:
            break
    assert top_coupled_entries(K, 6) == expected[:6]


def test_ranked_offblock_pairs_excludes_same_subspace():
    K = np.zeros((6, 6))
    K[0, 1] = 99.0      # same subspace (block f=0), must be ignored
    K[0, 3] = 5.0       # subspaces (0, 1)
    K[2, 5] = -7.0      # subspaces (1, 2)
    K = K + K.T
    ranked = ranked_offblock_pairs(K, 2)
    assert ranked[0][0] == (1, 2) and np.isclose(ranked[0][1], 7.0)
    assert ranked[1][0] == (0, 1) and np.isclose(ranked[1][1], 5.0)
    assert all(pair != (0, 0) for pair, _ in ranked)
