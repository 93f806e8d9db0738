"""Backend twins must agree bitwise; brute-force oracles pin semantics."""

import numpy as np
import pytest

from roomsdf import backend, kernels


@pytest.fixture
def both_backends():
    """Yields a runner that evaluates a callable under numba and numpy."""
    def run(fn):
        prev = backend.use_numba()
        try:
            backend.set_use_numba(True)
            a = fn()
            backend.set_use_numba(False)
            b = fn()
        finally:
            backend.set_use_numba(prev)
        return a, b
    return run


def test_plane_gather_backends_identical(both_backends):
    rng = np.random.default_rng(0)
    plane = rng.normal(0, 1, (16, 16, 4))
    u = rng.uniform(-1, 16, 300)  # includes out-of-range, exercises clamping
    v = rng.uniform(-1, 16, 300)
    a, b = both_backends(lambda: kernels.plane_gather(plane, u, v))
    assert np.array_equal(a, b)


def test_plane_gather_matches_loop_oracle():
    rng = np.random.default_rng(1)
    plane = rng.normal(0, 1, (8, 8, 3))
    u = rng.uniform(0, 7, 50)
    v = rng.uniform(0, 7, 50)
    out = kernels.plane_gather(plane, u, v)
    for k in range(50):
        i0 = min(int(np.floor(u[k])), 6)
        j0 = min(int(np.floor(v[k])), 6)
        fu, fv = u[k] - i0, v[k] - j0
        ref = ((1 - fu) * (1 - fv) * plane[i0, j0]
               + (1 - fu) * fv * plane[i0, j0 + 1]
               + fu * (1 - fv) * plane[i0 + 1, j0]
               + fu * fv * plane[i0 + 1, j0 + 1])
        assert np.allclose(out[k], ref, atol=1e-12)


def test_plane_gather_cell_center_average():
    rng = np.random.default_rng(2)
    plane = rng.normal(0, 1, (4, 4, 2))
    out = kernels.plane_gather(plane, np.array([1.5]), np.array([2.5]))
    corners = (plane[1, 2] + plane[1, 3] + plane[2, 2] + plane[2, 3]) / 4.0
    assert np.allclose(out[0], corners, atol=1e-12)


def test_plane_scatter_backends_identical(both_backends):
    rng = np.random.default_rng(3)
    u = rng.uniform(0, 15, 500)
    v = rng.uniform(0, 15, 500)
    g = rng.normal(0, 1, (500, 4))

    def run():
        buf = np.zeros((16, 16, 4))
        kernels.plane_scatter(buf, u, v, g)
        return buf

    a, b = both_backends(run)
    assert np.array_equal(a, b)


def test_mc_backends_identical(both_backends):
    rng = np.random.default_rng(4)
    for _ in range(5):
        grid = rng.normal(0, 1, (9, 9, 9))
        a, b = both_backends(lambda: kernels.mc_triangle_keys(grid, 0.0))
        assert np.array_equal(a, b)


def test_mc_empty_grid():
    grid = np.ones((5, 5, 5))
    keys = kernels.mc_triangle_keys(grid, 0.0)
    assert keys.shape == (0, 3)


def test_median_backends_identical(both_backends):
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 1, (17, 23))
    for w in (3, 5):
        a, b = both_backends(lambda: kernels.median_filter2d(img, w))
        assert np.array_equal(a, b)


def test_median_matches_sort_oracle():
    rng = np.random.default_rng(6)
    img = rng.uniform(0, 1, (10, 12))
    out = kernels.median_filter2d(img, 3)
    h, w = img.shape
    for y in range(h):
        for x in range(w):
            vals = []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    vals.append(img[yy, xx])
            assert out[y, x] == sorted(vals)[4]


def test_median_rejects_even_window():
    with pytest.raises(ValueError):
        kernels.median_filter2d(np.zeros((4, 4)), 4)
