"""
Tests for the operator algebra: Pauli strings, generators, commutators,
decompositions and permutation operators.
"""
import itertools
from functools import reduce

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from spinlab.errors import CapExceededError, DimensionMismatchError, InvalidNetworkError, InvalidOperatorError, PermutationError
from spinlab.models import PauliString, SpinNetwork
from spinlab.operators import (
    all_pauli_strings,
    build_control,
    build_drift,
    commutator,
    commutator_strings,
    is_hermitian,
    is_skew_hermitian,
    multiply_strings,
    pauli,
    pauli_decompose,
    pauli_string,
    permutation_operator,
    realize,
    reconstruct,
    total_spin,
)


def random_network(n, rng, density=0.7):
    couplings = {(k, l): float(rng.uniform(-1.5, 1.5))
                 for k in range(1, n + 1) for l in range(k + 1, n + 1) if rng.random() < density}
    return SpinNetwork(n, couplings, tuple(rng.uniform(0.5, 2.5, size=n)))


def random_hermitian(dim, rng):
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (X + X.conj().T) / 2


def single(n, k, v):
    return realize(PauliString(n, ((k, v),)))


def test_pauli_matrices():
    assert_array_equal(pauli("z"), np.diag([0.5, -0.5]))
    assert_array_equal(pauli("x"), [[0, 0.5], [0.5, 0]])
    assert_array_equal(pauli("y"), [[0, -0.5j], [0.5j, 0]])
    with pytest.raises(InvalidOperatorError):
        pauli("w")


def test_realize_examples():
    assert_array_equal(realize(PauliString(1, ())), np.eye(2))
    assert_array_equal(realize(PauliString(2, ((1, "z"), (2, "z")))), np.diag([0.25, -0.25, -0.25, 0.25]))
    assert_array_equal(realize(PauliString(2, ((1, "x"),))), np.kron(pauli("x"), np.eye(2)))


def test_pauli_string_validation_and_labels():
    p = PauliString(3, ((3, "y"), (1, "x")))
    assert p.sites == ((1, "x"), (3, "y"))
    assert p.label == "1x 3y"
    assert PauliString.from_label(3, "1x 3y") == p
    assert PauliString(2, ()).label == "I"
    assert p.parity == "even" and PauliString(2, ((1, "z"),)).parity == "odd"
    with pytest.raises(InvalidNetworkError):
        PauliString(2, ((3, "x"),))
    with pytest.raises(InvalidNetworkError):
        PauliString(2, ((1, "x"), (1, "y")))
    assert pauli_string(3, [(3, "y"), (1, "x")]) == p
    assert pauli_string(2) == PauliString(2, ())
    with pytest.raises(InvalidNetworkError):
        pauli_string(2, iter([(2, "z"), (2, "z")]))


def test_pauli_string_enumeration():
    strings = list(all_pauli_strings(3))
    assert len(strings) == 64 and len(set(strings)) == 64
    assert strings[0] == PauliString(3, ())
    assert [p.site_count for p in strings] == sorted(p.site_count for p in strings)
    assert len(list(all_pauli_strings(3, max_sites=1))) == 1 + 9
    assert list(all_pauli_strings(3, max_sites=2)) == strings[:1 + 9 + 27]
    assert list(all_pauli_strings(2, max_sites=5)) == list(all_pauli_strings(2))
    assert list(all_pauli_strings(2, max_sites=0)) == [PauliString(2, ())]


def test_realize_cap():
    with pytest.raises(CapExceededError):
        realize(PauliString(11, ((1, "z"),)))


def test_total_spin_examples():
    assert_array_equal(total_spin(1, "z"), np.diag([0.5, -0.5]))
    assert_array_equal(total_spin(2, "z"), np.diag([1.0, 0.0, 0.0, -1.0]))
    Sx = total_spin(2, "x")
    assert abs(np.trace(Sx)) == 0
    assert is_hermitian(Sx)


def test_drift_examples():
    assert_array_equal(build_drift(SpinNetwork(2, {}, (1.0, 2.0))), np.zeros((4, 4)))
    A = build_drift(SpinNetwork(2, {(1, 2): 1.0}, (1.0, 2.0)))
    assert_allclose(np.linalg.eigvalsh(1j * A), [-0.75, 0.25, 0.25, 0.25], atol=1e-14)
    chain = build_drift(SpinNetwork(3, {(1, 2): 1.0, (2, 3): 1.0}, (1.0, 2.0, 3.0)))
    assert abs(np.trace(chain)) < 1e-14
    assert is_skew_hermitian(chain)


def test_drift_decomposition_has_exactly_the_exchange_strings():
    net = SpinNetwork(3, {(1, 2): 0.7, (2, 3): -1.2}, (1.0, 2.0, 3.0))
    coefficients = pauli_decompose(1j * build_drift(net))
    expected = {PauliString(3, ((k, v), (l, v))): J for (k, l), J in net.couplings.items() for v in "xyz"}
    assert {p for p, c in coefficients.items() if abs(c) > 1e-12} == set(expected)
    for string, J in expected.items():
        assert coefficients[string] == pytest.approx(J, abs=1e-12)


def test_control_examples():
    assert_array_equal(build_control(SpinNetwork(1, {}, (1.0,)), "z"), -1j * np.diag([0.5, -0.5]))
    assert_allclose(build_control(SpinNetwork(2, {}, (1.0, 2.0)), "z"), -1j * np.diag([1.5, -0.5, 0.5, -1.5]))
    assert_array_equal(build_control(SpinNetwork(3, {}, (0.0, 0.0, 0.0)), "x"), np.zeros((8, 8)))


def test_generators_are_skew_hermitian():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 4):
        net = random_network(n, rng)
        assert is_skew_hermitian(build_drift(net))
        for v in "xyz":
            assert is_skew_hermitian(build_control(net, v))


def test_commutator_examples():
    sx, sy, sz = (2 * pauli(v) for v in "xyz")
    assert_allclose(commutator(sx, sy), 2j * sz)
    X = np.arange(16.0).reshape(4, 4)
    assert_array_equal(commutator(X, X), np.zeros((4, 4)))
    left = realize(PauliString(2, ((1, "x"), (2, "x"))))
    expected = -1j * realize(PauliString(2, ((1, "y"), (2, "x"))))
    assert_allclose(commutator(left, single(2, 1, "z")), expected, atol=1e-15)
    with pytest.raises(DimensionMismatchError):
        commutator(np.eye(2), np.eye(4))


def test_half_pauli_algebra():
    assert_allclose(commutator(pauli("x"), pauli("y")), 1j * pauli("z"))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_symbolic_commutators_match_dense(n):
    strings = list(all_pauli_strings(n))
    for p, q in itertools.product(strings, repeat=2):
        dense = commutator(realize(p), realize(q))
        symbolic = commutator_strings(p, q)
        if symbolic is None:
            assert np.max(np.abs(dense)) < 1e-15
        else:
            coefficient, r = symbolic
            assert_allclose(dense, coefficient * realize(r), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_single_site_commutator_case_split(n):
    for p in all_pauli_strings(n):
        for k, v in itertools.product(range(1, n + 1), "xyz"):
            q = PauliString(n, ((k, v),))
            result = commutator_strings(p, q)
            if p.axis_at(k) in (None, v):
                assert result is None
            else:
                coefficient, r = result
                assert abs(abs(coefficient) - 1) < 1e-15
                assert coefficient.real == 0
                assert r.site_count == p.site_count


def test_multiply_strings_matches_dense():
    strings = list(all_pauli_strings(2))
    for p, q in itertools.product(strings, repeat=2):
        phase, r = multiply_strings(p, q)
        assert_allclose(realize(p) @ realize(q), phase * realize(r), atol=1e-15)


def test_orthogonality_and_norms():
    n = 4
    strings = list(all_pauli_strings(n))
    stack = np.array([realize(p).reshape(-1) for p in strings])
    gram = stack.conj() @ stack.T
    expected = np.diag([2 ** n / 4 ** p.site_count for p in strings])
    assert_allclose(gram, expected, atol=1e-12)


def test_decompose_examples():
    assert pauli_decompose(np.eye(2)) == {PauliString(1, ()): 1.0}
    assert pauli_decompose(2 * pauli("z")) == {PauliString(1, ((1, "z"),)): 2.0}
    with pytest.raises(InvalidOperatorError):
        pauli_decompose(np.array([[0, 1], [-1, 0]], dtype=complex))


def test_decomposition_roundtrip():
    rng = np.random.default_rng(11)
    for n in (1, 2, 3, 4):
        X = random_hermitian(2 ** n, rng)
        coefficients = pauli_decompose(X)
        assert all(isinstance(c, float) for c in coefficients.values())
        assert np.max(np.abs(reconstruct(coefficients, n) - X)) < 1e-10 * np.max(np.abs(X))


def test_double_commutator_identity():
    rng = np.random.default_rng(5)
    for n in (2, 3, 4):
        for _ in range(5):
            net = random_network(n, rng)
            A = build_drift(net)
            for k, l in itertools.combinations(range(1, n + 1), 2):
                inner = commutator(1j * single(n, k, "x"), A)
                outer = commutator(1j * single(n, l, "z"), inner)
                expected = net.coupling(k, l) * 1j * realize(PauliString(n, ((k, "z"), (l, "x"))))
                assert np.max(np.abs(outer - expected)) < 1e-12


def test_permutation_operator_examples():
    assert_array_equal(permutation_operator(3, (1, 2, 3)), np.eye(8))
    swap = permutation_operator(2, (2, 1))
    assert_array_equal(swap, [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    assert_array_equal(swap @ swap, np.eye(4))
    cycle = permutation_operator(3, (2, 3, 1))
    assert_array_equal(cycle @ cycle @ cycle, np.eye(8))
    assert_array_equal(cycle @ cycle.T, np.eye(8))
    with pytest.raises(PermutationError):
        permutation_operator(3, (1, 1, 2))


@pytest.mark.parametrize("perm", list(itertools.permutations((1, 2, 3))))
def test_permutation_conjugation(perm):
    rng = np.random.default_rng(17)
    factors = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(3)]
    P = permutation_operator(3, perm)
    conjugated = P @ reduce(np.kron, factors) @ P.T
    expected = reduce(np.kron, [factors[perm[j] - 1] for j in range(3)])
    assert np.max(np.abs(conjugated - expected)) < 1e-12
