"""Lie closures, controllability (LARC and graph criterion) and observability."""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import CapExceededError, DimensionMismatchError, InvalidOperatorError
from .models import AXES, AnalysisReport, LieBasis, SpinNetwork
from .operators import commutator, generators, is_skew_hermitian, spin_count, total_spin

logger = logging.getLogger(__name__)

CLOSURE_CAP = 5
RANK_TOL = 1e-10
RELATIVE_RANK_TOL = 1e-8
GAMMA_TOL = 1e-12


class _SpanBuilder:
    """Incremental Hilbert-Schmidt orthonormal basis over the reals.

    Candidates are orthogonalized twice against the current basis (classical
    Gram-Schmidt with re-orthogonalization). A candidate is kept when its raw
    norm exceeds the absolute floor and the residual keeps more than
    RELATIVE_RANK_TOL of that raw norm. With ``traceless`` the identity
    component is removed first and the span stops at dim^2 - 1.
    """

    def __init__(self, dim: int, threshold: float, traceless: bool = False):
        self.dim = dim
        self.threshold = threshold
        self.traceless = traceless
        self.limit = dim * dim - 1 if traceless else dim * dim
        self._stack = np.zeros((self.limit, dim * dim), dtype=complex)
        self._count = 0

    def __len__(self) -> int:
        return self._count

    @property
    def full(self) -> bool:
        return self._count == self.limit

    def add(self, X: np.ndarray) -> bool:
        if self.full:
            return False
        v = np.asarray(X, dtype=complex).reshape(-1)
        raw_norm = float(np.linalg.norm(v))
        if raw_norm <= self.threshold:
            return False
        if self.traceless:
            v = v.copy()
            v[::self.dim + 1] -= v[::self.dim + 1].sum() / self.dim
        basis = self._stack[:self._count]
        for _ in range(2):
            if self._count:
                v = v - np.real(basis.conj() @ v) @ basis
        norm = float(np.linalg.norm(v))
        if norm <= max(self.threshold, RELATIVE_RANK_TOL * raw_norm):
            return False
        self._stack[self._count] = v / norm
        self._count += 1
        return True

    def element(self, index: int) -> np.ndarray:
        return self._stack[index].reshape(self.dim, self.dim)

    def basis(self) -> LieBasis:
        return LieBasis(self._stack[:self._count].reshape(self._count, self.dim, self.dim).copy())


def _check_cap(n: int, cap: Optional[int]):
    cap = CLOSURE_CAP if cap is None else cap
    if n > cap:
        raise CapExceededError(n, cap)


def _closure(seeds: Sequence[np.ndarray], brackets: Sequence[np.ndarray], traceless: bool = False) -> LieBasis:
    dim = seeds[0].shape[0]
    scale = max(float(np.linalg.norm(seed)) for seed in seeds)
    builder = _SpanBuilder(dim, RANK_TOL * scale if scale > 0 else np.inf, traceless)
    for seed in seeds:
        builder.add(seed)
    # every basis element is bracketed once with every generator, in index order
    index = 0
    while index < len(builder) and not builder.full:
        element = builder.element(index)
        for generator in brackets:
            builder.add(commutator(element, generator))
        logger.debug(f"Closure pass at element {index}: dimension {len(builder)}")
        index += 1
    return builder.basis()


def span_closure(operators: Sequence[np.ndarray], cap: Optional[int] = None) -> LieBasis:
    """Smallest bracket-closed real subspace containing the given skew-Hermitian operators."""
    operators = [np.asarray(X, dtype=complex) for X in operators]
    if not operators:
        raise InvalidOperatorError("need at least one generator")
    shape = operators[0].shape
    for X in operators:
        if X.shape != shape:
            raise DimensionMismatchError(f"generator shapes {shape} and {X.shape} differ")
        if not is_skew_hermitian(X):
            raise InvalidOperatorError("generators must be skew-Hermitian")
    _check_cap(spin_count(operators[0]), cap)
    traceless = all(abs(np.trace(X)) <= RANK_TOL * max(1.0, float(np.linalg.norm(X))) for X in operators)
    return _closure(operators, operators, traceless)


def graph_components(net: SpinNetwork) -> Tuple[Tuple[int, ...], ...]:
    """Connected components of the coupling graph (edge iff J_kl != 0), sorted."""
    parent = list(range(net.n + 1))

    def find(k: int) -> int:
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for k, l in net.edges:
        parent[find(k)] = find(l)
    groups = {}
    for k in range(1, net.n + 1):
        groups.setdefault(find(k), []).append(k)
    return tuple(sorted(tuple(group) for group in groups.values()))


def graph_connected(net: SpinNetwork) -> bool:
    return len(graph_components(net)) == 1


def gamma_distinct(net: SpinNetwork, tol: float = GAMMA_TOL) -> bool:
    gamma = sorted(net.gamma)
    return all(b - a > tol for a, b in zip(gamma, gamma[1:]))


def dynamical_algebra(net: SpinNetwork, cap: Optional[int] = None) -> LieBasis:
    """Closure of {A, B_x, B_y, B_z}."""
    _check_cap(net.n, cap)
    basis = _closure(generators(net), generators(net), traceless=True)
    logger.info(f"Dynamical Lie algebra of n={net.n} network has dimension {basis.dimension}")
    return basis


def is_controllable(net: SpinNetwork, cap: Optional[int] = None, method: str = "larc") -> bool:
    """LARC check: {A, B_x, B_y, B_z} generate su(2^n).

    ``method="graph"`` applies the connectivity criterion instead (valid for
    distinct gyromagnetic ratios, any n); ``method="auto"`` uses the LARC within
    the cap and the graph criterion beyond it.
    """
    if method == "auto":
        cap_value = CLOSURE_CAP if cap is None else cap
        method = "larc" if net.n <= cap_value or not gamma_distinct(net) else "graph"
    if method == "graph":
        if not gamma_distinct(net):
            raise InvalidOperatorError("graph criterion requires distinct gyromagnetic ratios")
        return graph_connected(net)
    if method != "larc":
        raise InvalidOperatorError(f"unknown controllability method '{method}'")
    controllable = dynamical_algebra(net, cap).dimension >= 4 ** net.n - 1
    if gamma_distinct(net) and controllable != graph_connected(net):
        logger.warning(f"LARC ({controllable}) disagrees with the graph criterion for {net}")
    return controllable


def observability_space(net: SpinNetwork, cap: Optional[int] = None) -> LieBasis:
    """Span of ad_{B_j1}^k1 ... ad_{B_jr}^kr i S_v^TOT, j in {0, 1, 2, 3} with B_0 = A."""
    _check_cap(net.n, cap)
    seeds = [1j * total_spin(net.n, v) for v in AXES]
    basis = _closure(seeds, generators(net), traceless=True)
    logger.info(f"Observability space of n={net.n} network has dimension {basis.dimension}")
    return basis


def is_observable(net: SpinNetwork, cap: Optional[int] = None) -> bool:
    return observability_space(net, cap).dimension >= 4 ** net.n - 1


def bracket_word(word: Sequence[int], seed: np.ndarray, brackets: Sequence[np.ndarray]) -> np.ndarray:
    """ad_{B_j1} ad_{B_j2} ... ad_{B_jr} seed for word = (j1, ..., jr)."""
    result = np.asarray(seed, dtype=complex)
    for j in reversed(word):
        result = commutator(brackets[j], result)
    return result


def analyze(net: SpinNetwork, cap: Optional[int] = None) -> AnalysisReport:
    """Controllability and observability report; both closures are computed."""
    lie = dynamical_algebra(net, cap)
    observability = observability_space(net, cap)
    target = 4 ** net.n - 1
    report = AnalysisReport(
        n=net.n,
        controllable=lie.dimension >= target,
        observable=observability.dimension >= target,
        lie_dimension=lie.dimension,
        observability_dimension=observability.dimension,
        graph_connected=graph_connected(net),
        gamma_distinct=gamma_distinct(net),
        components=graph_components(net),
    )
    if report.controllable and not report.observable:
        logger.error(f"Controllable but unobservable model reported for {net}")
    return report
