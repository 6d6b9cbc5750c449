import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spx.diagnostics import gram, isometry_constants, normalized_operator, orthonormalize, spectrum
from spx.errors import DegenerateSubspace, ResourceLimit
from spx.patterns import SensingOperator, gen_hadamard, gen_speckle, select


def test_gram_diagonal():
    g = gram(np.diag([1.0, 2.0]), "rows")
    assert g.tolist() == [[1.0, 0.0], [0.0, 4.0]]


def test_gram_hadamard_rows():
    op = select(gen_hadamard(16, 4, 4), 16)
    assert np.array_equal(gram(op, "rows"), 16 * np.eye(16))


def _triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_gram_matches_naive_products():
    phi = np.random.default_rng(0).standard_normal((3, 5))
    assert np.max(np.abs(gram(phi, "rows") - _triple_loop(phi, phi.T))) <= 1e-12
    assert np.max(np.abs(gram(phi, "cols") - _triple_loop(phi.T, phi))) <= 1e-12


def test_gram_guard():
    phi = np.ones((1, 4097))
    with pytest.raises(ResourceLimit):
        gram(phi, "cols")
    assert gram(phi, "rows").shape == (1, 1)


def test_spectrum_diagonal():
    rep = spectrum(np.diag([1.0, 2.0]))
    assert np.allclose(rep.singular_values, [2.0, 1.0], rtol=0, atol=1e-14)
    assert rep.spectral_mass == 5.0
    assert rep.threshold_rank == 2


def test_spectrum_uniform_entropy_rank():
    op = select(gen_hadamard(16, 4, 4), 8)
    rep = spectrum(op)
    assert rep.entropy_rank == pytest.approx(8.0, rel=1e-12)


def test_spectral_mass_increases_with_nesting():
    lib = gen_speckle(64, 8, 8, seed=31)
    masses = [spectrum(select(lib, m)).spectral_mass for m in (16, 32, 64)]
    assert masses[0] < masses[1] < masses[2]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), m=st.integers(1, 30), h=st.integers(1, 5), w=st.integers(1, 5))
def test_spectrum_identities(seed, m, h, w):
    op = select(gen_speckle(m, h, w, seed=seed), m)
    rep = spectrum(op)
    phi = op.effective
    assert np.all(np.diff(rep.singular_values) <= 1e-12 * max(rep.singular_values[0], 1.0))
    assert rep.spectral_mass == pytest.approx(np.linalg.norm(phi) ** 2, rel=1e-10)
    svd = np.linalg.svd(phi, compute_uv=False)
    assert np.allclose(rep.singular_values[: svd.size] ** 2, svd**2, rtol=1e-8, atol=1e-8 * svd[0] ** 2)
    k = min(phi.shape)
    assert rep.threshold_rank <= k
    assert 1.0 <= rep.entropy_rank <= k


def test_isometry_scaled_identity():
    basis = np.random.default_rng(1).standard_normal((16, 3))
    rep = isometry_constants(3.0 * np.eye(16), basis, num_probes=200, seed=0)
    assert rep.c1_hat == pytest.approx(1.0, abs=1e-12)
    assert rep.c2_hat == pytest.approx(1.0, abs=1e-12)


def test_isometry_one_dimensional():
    op = select(gen_speckle(10, 4, 4, seed=2), 10)
    b = np.random.default_rng(3).standard_normal(16)
    rep = isometry_constants(op, b[:, None], num_probes=50, seed=1)
    unit = b / np.linalg.norm(b)
    expected = float(np.sum((normalized_operator(op.effective) @ unit) ** 2))
    assert rep.c1_hat == pytest.approx(expected, rel=1e-12)
    assert rep.c2_hat == pytest.approx(expected, rel=1e-12)


def test_normalized_pm1_operator_is_scaled():
    phi = select(gen_speckle(8, 3, 3, seed=2), 8).effective
    assert np.allclose(normalized_operator(phi), phi / np.sqrt(8), rtol=0, atol=1e-15)


def test_isometry_concentrates_with_more_rows():
    n, d = 256, 4
    ratios = {16: [], 128: []}
    for seed in range(10):
        lib = gen_speckle(128, 16, 16, seed=1000 + seed)
        basis = np.random.default_rng(seed).standard_normal((n, d))
        for m in ratios:
            ratios[m].append(isometry_constants(select(lib, m), basis, 1000, seed).ratio)
    assert np.median(ratios[128]) < np.median(ratios[16])


def test_isometry_reproducible_and_ordered():
    op = select(gen_speckle(20, 5, 5, seed=9), 20)
    basis = np.random.default_rng(0).standard_normal((25, 3))
    a = isometry_constants(op, basis, 100, seed=5)
    b = isometry_constants(op, basis, 100, seed=5)
    assert a == b
    assert a.c1_hat <= a.c2_hat


def test_degenerate_basis():
    v = np.random.default_rng(0).standard_normal(9)
    with pytest.raises(DegenerateSubspace):
        isometry_constants(np.eye(9), np.column_stack([v, 2 * v]))
    with pytest.raises(DegenerateSubspace):
        orthonormalize(np.zeros((4, 1)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 30), data=st.data())
def test_orthonormalize_property(seed, n, data):
    d = data.draw(st.integers(1, n))
    q = orthonormalize(np.random.default_rng(seed).standard_normal((n, d)))
    assert np.allclose(q.T @ q, np.eye(d), atol=1e-12)


def test_operator_object_and_array_agree():
    op = select(gen_speckle(6, 3, 3, seed=3), 6)
    assert np.array_equal(gram(op), gram(SensingOperator.from_matrix(op.effective, 3, 3)))
