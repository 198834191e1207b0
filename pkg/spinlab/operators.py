"""Operator algebra for spin-1/2 networks.

Dense complex matrices throughout (ħ = 1). Pauli matrices carry the factor 1/2,
so [I_x, I_y] = i I_z and Tr(P P) = 2^n / 4^r for an r-site string P.
"""
import itertools
import logging
from functools import lru_cache, reduce
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapExceededError, DimensionMismatchError, InvalidOperatorError, PermutationError
from .models import AXES, HERMITIAN_TOL, PauliString, SpinNetwork

logger = logging.getLogger(__name__)

REALIZE_CAP = 10
DECOMPOSE_TOL = 1e-10

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex) / 2,
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex) / 2,
    "z": np.array([[1, 0], [0, -1]], dtype=complex) / 2,
}
for _matrix in _PAULI.values():
    _matrix.setflags(write=False)

# epsilon_abc for the cyclic order x -> y -> z
_LEVI_CIVITA = {
    ("x", "y"): ("z", 1), ("y", "z"): ("x", 1), ("z", "x"): ("y", 1),
    ("y", "x"): ("z", -1), ("z", "y"): ("x", -1), ("x", "z"): ("y", -1),
}


def pauli(v: str) -> np.ndarray:
    """2x2 spin matrix sigma_v / 2 for v in {x, y, z}."""
    if v not in _PAULI:
        raise InvalidOperatorError(f"unknown axis '{v}'")
    return _PAULI[v].copy()


def pauli_string(n: int, sites: Iterable[Tuple[int, str]] = ()) -> PauliString:
    return PauliString(n, tuple(sites))


def is_hermitian(X: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    X = np.asarray(X)
    return X.ndim == 2 and X.shape[0] == X.shape[1] and float(np.max(np.abs(X - X.conj().T), initial=0.0)) < tol


def is_skew_hermitian(X: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    X = np.asarray(X)
    return X.ndim == 2 and X.shape[0] == X.shape[1] and float(np.max(np.abs(X + X.conj().T), initial=0.0)) < tol


def require_skew_hermitian(X: np.ndarray, name: str = "operator") -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if not is_skew_hermitian(X):
        raise InvalidOperatorError(f"{name} is not skew-Hermitian")
    return X


def spin_count(X: np.ndarray) -> int:
    """n such that X is 2^n x 2^n."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise InvalidOperatorError(f"operator must be square (got shape {X.shape})")
    dim = X.shape[0]
    if dim < 2 or dim & (dim - 1):
        raise InvalidOperatorError(f"operator dimension {dim} is not a power of two")
    return dim.bit_length() - 1


@lru_cache(maxsize=4096)
def _realize_cached(p: PauliString) -> np.ndarray:
    axes = {k: v for k, v in p.sites}
    factors = [_PAULI[axes[k]] if k in axes else np.eye(2, dtype=complex) for k in range(1, p.n + 1)]
    matrix = reduce(np.kron, factors)
    matrix.setflags(write=False)
    return matrix


def realize(p: PauliString, cap: int = REALIZE_CAP) -> np.ndarray:
    """Dense 2^n x 2^n realization of a Pauli string (read-only array)."""
    if p.n > cap:
        raise CapExceededError(p.n, cap, "dense realization")
    return _realize_cached(p)


def total_spin(n: int, v: str) -> np.ndarray:
    """S_v^TOT = sum_k I_kv."""
    return sum(realize(PauliString(n, ((k, v),))) for k in range(1, n + 1))


def build_drift(net: SpinNetwork) -> np.ndarray:
    """A = -i sum_{k<l} J_kl (I_kx,lx + I_ky,ly + I_kz,lz)."""
    H = np.zeros((net.dim, net.dim), dtype=complex)
    for (k, l), J in net.couplings.items():
        for v in AXES:
            H += J * realize(PauliString(net.n, ((k, v), (l, v))))
    return -1j * H


def build_control(net: SpinNetwork, v: str) -> np.ndarray:
    """B_v = -i sum_k gamma_k I_kv."""
    if v not in AXES:
        raise InvalidOperatorError(f"unknown axis '{v}'")
    H = np.zeros((net.dim, net.dim), dtype=complex)
    for k, gamma in enumerate(net.gamma, start=1):
        if gamma != 0.0:
            H += gamma * realize(PauliString(net.n, ((k, v),)))
    return -1j * H


def generators(net: SpinNetwork) -> List[np.ndarray]:
    """[A, B_x, B_y, B_z] in the bracket order B_0..B_3."""
    return [build_drift(net)] + [build_control(net, v) for v in AXES]


def commutator(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape or X.ndim != 2:
        raise DimensionMismatchError(f"cannot bracket shapes {X.shape} and {Y.shape}")
    return X @ Y - Y @ X


def all_pauli_strings(n: int, max_sites: Optional[int] = None) -> Iterator[PauliString]:
    """Every Pauli string on n spins, ordered by site count, then sites, then axes."""
    top = n if max_sites is None else min(n, max_sites)
    for r in range(top + 1):
        for positions in itertools.combinations(range(1, n + 1), r):
            for axes in itertools.product(AXES, repeat=r):
                yield PauliString(n, tuple(zip(positions, axes)))


def pauli_decompose(X: np.ndarray, tol: float = DECOMPOSE_TOL) -> Dict[PauliString, float]:
    """Expand a Hermitian operator in the Pauli-string basis.

    Args:
        X: Hermitian 2^n x 2^n matrix.
        tol: imaginary parts above ``tol`` (relative to the largest entry) reject the input.

    Returns:
        Mapping from PauliString to its real coefficient c_P = Tr(P X) / Tr(P P);
        coefficients that vanish to roundoff are omitted.
    """
    X = np.asarray(X, dtype=complex)
    n = spin_count(X)
    scale = max(1.0, float(np.max(np.abs(X))))
    coefficients: Dict[PauliString, float] = {}
    for p in all_pauli_strings(n):
        P = realize(p)
        c = np.sum(P.T * X) / (2 ** n / 4 ** p.site_count)
        if abs(c.imag) > tol * scale:
            raise InvalidOperatorError(
                f"operator is not Hermitian: coefficient of '{p.label}' has imaginary part {c.imag:.3e}")
        if abs(c.real) > 1e-15 * scale:
            coefficients[p] = float(c.real)
    return coefficients


def reconstruct(coefficients: Dict[PauliString, float], n: int) -> np.ndarray:
    """Sum c_P * P over a decomposition."""
    X = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for p, c in coefficients.items():
        if p.n != n:
            raise DimensionMismatchError(f"string '{p.label}' is on {p.n} spins, expected {n}")
        X += c * realize(p)
    return X


def multiply_strings(p: PauliString, q: PauliString) -> Tuple[complex, PauliString]:
    """Symbolic product p q = phase * r, using I_a I_b = delta_ab / 4 + (i/2) eps_abc I_c per site."""
    if p.n != q.n:
        raise DimensionMismatchError(f"strings on {p.n} and {q.n} spins")
    phase = 1.0 + 0j
    left = dict(p.sites)
    right = dict(q.sites)
    merged: List[Tuple[int, str]] = []
    for k in sorted(set(left) | set(right)):
        a, b = left.get(k), right.get(k)
        if a is None or b is None:
            merged.append((k, a or b))
        elif a == b:
            phase *= 0.25
        else:
            c, sign = _LEVI_CIVITA[(a, b)]
            phase *= 0.5j * sign
            merged.append((k, c))
    return phase, PauliString(p.n, tuple(merged))


def commutator_strings(p: PauliString, q: PauliString) -> Optional[Tuple[complex, PauliString]]:
    """Symbolic [p, q] as coefficient * string, or None when the strings commute."""
    anticommuting = sum(1 for k, a in p.sites if q.axis_at(k) not in (None, a))
    if anticommuting % 2 == 0:
        return None
    phase, r = multiply_strings(p, q)
    return 2 * phase, r


def permutation_operator(n: int, perm: Sequence[int]) -> np.ndarray:
    """Real orthogonal P with P (K_1 x ... x K_n) P^T = K_perm(1) x ... x K_perm(n).

    ``perm[k - 1]`` is the image of site k (1-based). For involutions P^T = P.
    """
    perm = validate_permutation(n, perm)
    dim = 2 ** n
    P = np.zeros((dim, dim))
    for b in range(dim):
        bits = [(b >> (n - k)) & 1 for k in range(1, n + 1)]
        c = 0
        for j in range(n):
            c = (c << 1) | bits[perm[j] - 1]
        P[c, b] = 1.0
    return P


def validate_permutation(n: int, perm: Sequence[int]) -> Tuple[int, ...]:
    perm = tuple(int(value) for value in perm)
    if len(perm) != n or sorted(perm) != list(range(1, n + 1)):
        raise PermutationError(f"{list(perm)} is not a permutation of 1..{n}")
    return perm
