"""Parity between the compiled margin kernels and the numpy fallback."""

import numpy as np
import pytest

import pdtomo._kernels_py as pure
from pdtomo import kernels


def brute_margins(unit_fields, directions):
    n, J, _ = unit_fields.shape
    out = np.empty(n)
    for i in range(n):
        worst = np.empty(len(directions))
        for m, d in enumerate(directions):
            worst[m] = max(abs(2.0 * (unit_fields[i, j] @ d) ** 2 - 1.0) for j in range(J))
        out[i] = worst.min()
    return out


def random_family(rng, n, J, dim):
    f = rng.standard_normal((n, J, dim))
    return f / np.linalg.norm(f, axis=2, keepdims=True)


@pytest.mark.parametrize("dim", [2, 3])
def test_pure_kernel_matches_bruteforce(dim):
    rng = np.random.default_rng(4)
    fams = random_family(rng, 17, 3, dim)
    dirs = random_family(rng, 29, 1, dim)[:, 0, :]
    margins, idx = pure.field_margin_scan(fams, dirs)
    assert np.allclose(margins, brute_margins(fams, dirs), atol=1e-13)
    # reported index reproduces the margin
    for i in range(len(fams)):
        q = np.abs(2.0 * (fams[i] @ dirs[idx[i]]) ** 2 - 1.0).max()
        assert q == pytest.approx(margins[i], abs=1e-13)


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled extension not built")
@pytest.mark.parametrize("dim", [2, 3])
def test_compiled_matches_pure(dim):
    from pdtomo import _margin_kernels as compiled

    rng = np.random.default_rng(7)
    fams = np.ascontiguousarray(random_family(rng, 101, 2, dim))
    dirs = np.ascontiguousarray(random_family(rng, 257, 1, dim)[:, 0, :])
    m1, i1 = compiled.field_margin_scan(fams, dirs)
    m2, i2 = pure.field_margin_scan(fams, dirs)
    assert np.allclose(m1, m2, atol=1e-13)

    s1 = compiled.margin_scan(fams[0], dirs)
    s2 = pure.margin_scan(fams[0], dirs)
    assert s1[0] == pytest.approx(s2[0], abs=1e-13)


def test_selected_impl_exposed():
    rng = np.random.default_rng(9)
    fams = random_family(rng, 5, 2, 2)
    dirs = random_family(rng, 11, 1, 2)[:, 0, :]
    m, i = kernels.field_margin_scan(fams, dirs)
    assert m.shape == (5,)
    assert i.shape == (5,)
