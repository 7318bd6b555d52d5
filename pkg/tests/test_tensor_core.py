"""Contraction, factorizations and local exponentials."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tensorjump.tensor_core import contract, expm_apply, factorize_bond, svd_truncate

X = np.array([[0, 1], [1, 0]], dtype=complex)

complex_entries = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


def naive_contract(a, b, pairs):
    free_a = [i for i in range(a.ndim) if i not in {p[0] for p in pairs}]
    free_b = [i for i in range(b.ndim) if i not in {p[1] for p in pairs}]
    out = np.zeros([a.shape[i] for i in free_a] + [b.shape[i] for i in free_b], dtype=complex)
    for fa in itertools.product(*[range(a.shape[i]) for i in free_a]):
        for fb in itertools.product(*[range(b.shape[i]) for i in free_b]):
            total = 0
            for summed in itertools.product(*[range(a.shape[p[0]]) for p in pairs]):
                ia, ib = [0] * a.ndim, [0] * b.ndim
                for ax, v in zip(free_a, fa):
                    ia[ax] = v
                for ax, v in zip(free_b, fb):
                    ib[ax] = v
                for (pa, pb), v in zip(pairs, summed):
                    ia[pa], ib[pb] = v, v
                total += a[tuple(ia)] * b[tuple(ib)]
            out[fa + fb] = total
    return out


class TestContract:
    def test_identity_action(self):
        np.testing.assert_allclose(contract(np.eye(2), np.array([1.0, 0.0]), [(1, 0)]), [1, 0])

    def test_bit_flip(self):
        np.testing.assert_allclose(contract(X, np.array([1.0, 0.0]), [(1, 0)]), [0, 1])

    def test_matrix_product_against_loops(self, rng):
        a = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        np.testing.assert_allclose(contract(a, b, [(1, 0)]), naive_contract(a, b, [(1, 0)]), atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            contract(np.zeros((2, 3)), np.zeros((2, 3)), [(1, 0)])

    @given(st.data())
    def test_agrees_with_loops(self, data):
        nd_a = data.draw(st.integers(1, 3))
        nd_b = data.draw(st.integers(1, 3))
        shape_a = data.draw(st.lists(st.integers(1, 3), min_size=nd_a, max_size=nd_a))
        n_pairs = data.draw(st.integers(0, min(nd_a, nd_b)))
        axes_a = data.draw(st.permutations(range(nd_a)))[:n_pairs]
        axes_b = data.draw(st.permutations(range(nd_b)))[:n_pairs]
        shape_b = data.draw(st.lists(st.integers(1, 3), min_size=nd_b, max_size=nd_b))
        for pa, pb in zip(axes_a, axes_b):
            shape_b[pb] = shape_a[pa]
        a = data.draw(arrays(complex, shape_a, elements=complex_entries))
        b = data.draw(arrays(complex, shape_b, elements=complex_entries))
        pairs = list(zip(axes_a, axes_b))
        np.testing.assert_allclose(contract(a, b, pairs), naive_contract(a, b, pairs), atol=1e-9)

    @given(arrays(complex, (2, 3), elements=complex_entries), arrays(complex, (2, 3), elements=complex_entries),
           arrays(complex, (3,), elements=complex_entries), complex_entries)
    def test_bilinear(self, a1, a2, b, alpha):
        lhs = contract(a1 + alpha * a2, b, [(1, 0)])
        rhs = contract(a1, b, [(1, 0)]) + alpha * contract(a2, b, [(1, 0)])
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


class TestFactorizeBond:
    def test_identity_left(self):
        q, r = factorize_bond(np.eye(2, dtype=complex), 1, "left")
        np.testing.assert_allclose(np.abs(q), np.eye(2), atol=1e-14)
        np.testing.assert_allclose(np.abs(r), np.eye(2), atol=1e-14)

    def test_rank_one(self, rng):
        u, v = rng.normal(size=4), rng.normal(size=3)
        m = np.outer(u, v).astype(complex)
        q, r = factorize_bond(m, 1, "left")
        assert np.abs(q @ r - m).max() <= 1e-12

    @given(arrays(complex, (2, 2, 3), elements=complex_entries), st.sampled_from(["left", "right"]),
           st.integers(1, 2))
    def test_reconstructs_and_isometric(self, t, direction, split):
        a, b = factorize_bond(t, split, direction)
        rebuilt = np.tensordot(a, b, axes=(a.ndim - 1, 0))
        assert np.abs(rebuilt - t).max() <= 1e-12 * max(1.0, np.abs(t).max())
        if direction == "left":
            qm = a.reshape(-1, a.shape[-1])
            np.testing.assert_allclose(qm.conj().T @ qm, np.eye(qm.shape[1]), atol=1e-12)
        else:
            qm = b.reshape(b.shape[0], -1)
            np.testing.assert_allclose(qm @ qm.conj().T, np.eye(qm.shape[0]), atol=1e-12)


class TestSvdTruncate:
    def test_identity_tie(self):
        out = svd_truncate(np.eye(2, dtype=complex), 1, 1, 0.0)
        assert out.bond_dim == 1
        np.testing.assert_allclose(out.singular_values, [1.0])
        assert out.discarded_weight == pytest.approx(1.0)

    def test_rank_one_exact(self, rng):
        m = np.outer(rng.normal(size=4), rng.normal(size=4)).astype(complex)
        out = svd_truncate(m, 1, 1, 1e-10)
        assert out.discarded_weight <= 1e-24
        rebuilt = (out.left_isometry * out.singular_values) @ out.right_isometry
        assert np.abs(rebuilt - m).max() <= 1e-12

    def test_error_equals_discarded_weight(self, rng):
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        out = svd_truncate(m, 1, 2, 0.0)
        rebuilt = (out.left_isometry * out.singular_values) @ out.right_isometry
        assert abs(np.linalg.norm(rebuilt - m) ** 2 - out.discarded_weight) <= 1e-12

    def test_threshold_never_empties_bond(self):
        out = svd_truncate(np.diag([1e-30, 1e-31]).astype(complex), 1, 4, 0.9)
        assert out.bond_dim == 1

    @given(arrays(complex, (3, 2, 4), elements=complex_entries))
    def test_full_rank_is_lossless(self, t):
        out = svd_truncate(t, 2, 8, 0.0)
        assert out.discarded_weight <= 1e-24 * max(1.0, float(np.sum(np.abs(t) ** 2)))


class TestExpmApply:
    def test_zero_scale(self, rng):
        v = rng.normal(size=4) + 0j
        np.testing.assert_array_equal(expm_apply(np.diag([1.0, 2, 3, 4]).astype(complex), v, 0.0), v)

    def test_pauli_rotation(self):
        out = expm_apply(X, np.array([1.0, 0.0], dtype=complex), -0.3j)
        np.testing.assert_allclose(out, [np.cos(0.3), -1j * np.sin(0.3)], atol=1e-14)

    @pytest.mark.parametrize("dim", [6, 100])
    def test_unitary_norm_and_composition(self, rng, dim):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        h = a + a.conj().T
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        once = expm_apply(h, v, -0.01j)
        assert abs(np.linalg.norm(once) - np.linalg.norm(v)) <= 1e-10 * np.linalg.norm(v)
        twice = expm_apply(h, once, -0.01j)
        np.testing.assert_allclose(twice, expm_apply(h, v, -0.02j), atol=1e-10 * np.linalg.norm(v))

    def test_lanczos_matches_dense(self, rng):
        import scipy.linalg

        a = rng.normal(size=(80, 80))
        h = (a + a.T).astype(complex)
        v = rng.normal(size=80).astype(complex)
        np.testing.assert_allclose(expm_apply(h, v, -0.05j), scipy.linalg.expm(-0.05j * h) @ v, atol=1e-10)
