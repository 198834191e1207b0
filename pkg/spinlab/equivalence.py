"""Equivalence classes of (model, initial state) pairs.

Two pairs are equivalent when every control schedule produces the same
magnetization traces. For controllable networks with distinct gyromagnetic
ratios a class holds exactly the spin relabelings of a pair and, for each of
those, the partner obtained by negating every coupling and the even part of
the initial state.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import DEFAULT_GRID, evolve, magnetization_trace, random_schedule, state_expectations
from .errors import CanonicalizationError, InvalidOperatorError, PartnerMismatchError
from .liealg import gamma_distinct, graph_connected
from .models import PSD_TOL, ControlSchedule, DensityMatrix, EquivalenceVerdict, ModelStatePair, ParitySplit, PauliString, SpinNetwork
from .operators import permutation_operator, realize, spin_count, validate_permutation

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_TRIALS = 20
TRIAL_SEGMENTS = 8
TRIAL_BOUND = 2.0

_SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)


def spin_flip(X: np.ndarray) -> np.ndarray:
    """Linear map sending every r-site Pauli string P to (-1)^r P.

    Realized as Y X^T Y with Y the n-fold Kronecker power of sigma_y, which
    flips the sign of each single-site spin operator and fixes the identity.
    """
    X = np.asarray(X, dtype=complex)
    Y = reduce(np.kron, [_SIGMA_Y] * spin_count(X))
    return Y @ X.T @ Y


def parity_component(X: np.ndarray, parity: str) -> np.ndarray:
    """Part of a Hermitian operator spanned by strings of the given parity.

    ``parity`` is "odd", "even" (site count >= 2) or "identity".
    """
    X = np.asarray(X, dtype=complex)
    dim = X.shape[0]
    scalar = np.trace(X) / dim * np.eye(dim)
    if parity == "identity":
        return scalar
    flipped = spin_flip(X)
    if parity == "odd":
        return (X - flipped) / 2
    if parity == "even":
        return (X + flipped) / 2 - scalar
    raise InvalidOperatorError(f"unknown parity '{parity}'")


def parity_split(rho: DensityMatrix) -> ParitySplit:
    """Split a state into its scalar part, odd strings and even strings with >= 2 sites."""
    X = rho.matrix
    return ParitySplit(
        scalar=float(np.trace(X).real) / rho.dim,
        rho1=parity_component(X, "odd"),
        rho2=parity_component(X, "even"),
    )


def permute_network(net: SpinNetwork, perm: Sequence[int]) -> SpinNetwork:
    """Relabel spin k as perm[k - 1]: gamma'_{pi(k)} = gamma_k, J'_{pi(k) pi(l)} = J_kl."""
    perm = validate_permutation(net.n, perm)
    gamma = [0.0] * net.n
    for k, value in enumerate(net.gamma, start=1):
        gamma[perm[k - 1] - 1] = value
    couplings = {}
    for (k, l), J in net.couplings.items():
        a, b = perm[k - 1], perm[l - 1]
        couplings[(min(a, b), max(a, b))] = J
    return SpinNetwork(net.n, couplings, tuple(gamma))


def apply_permutation(pair: ModelStatePair, perm: Sequence[int]) -> ModelStatePair:
    """Relabeled pair whose state satisfies P rho0' P^T = rho0."""
    net = permute_network(pair.net, perm)
    P = permutation_operator(pair.net.n, perm)
    rho = P.T @ pair.rho0.matrix @ P
    return ModelStatePair(net, DensityMatrix(rho, allow_indefinite=pair.rho0.allow_indefinite))


def partner_state(rho: np.ndarray) -> np.ndarray:
    """2^-n I + rho1 - rho2 for rho = 2^-n I + rho1 + rho2."""
    rho = np.asarray(rho, dtype=complex)
    dim = rho.shape[0]
    partner = 2 * np.trace(rho) / dim * np.eye(dim) - spin_flip(rho)
    return (partner + partner.conj().T) / 2


def partner_pair(pair: ModelStatePair) -> Tuple[ModelStatePair, bool]:
    """Negated couplings with the even part of the state negated.

    Returns:
        The partner pair and whether its state is positive semidefinite
        (minimum eigenvalue >= -1e-10). The partner is built either way.
    """
    rho = partner_state(pair.rho0.matrix)
    psd_ok = float(np.linalg.eigvalsh(rho).min()) >= -PSD_TOL
    if not psd_ok:
        logger.warning(f"Partner state of {pair.net} has a negative eigenvalue; it is not a physical state")
    partner = ModelStatePair(pair.net.negated(), DensityMatrix(rho, allow_indefinite=not psd_ok))
    return partner, psd_ok


def trial_schedules(count: int, seed: int = 0, n_segments: int = TRIAL_SEGMENTS,
                    bound: float = TRIAL_BOUND) -> List[ControlSchedule]:
    """Deterministic random schedules used to compare pairs; schedule i depends only on (seed, i)."""
    return [random_schedule(n_segments, bound, [seed, index]) for index in range(count)]


def _trace_deviation(pair_a: ModelStatePair, pair_b: ModelStatePair, schedule: ControlSchedule,
                     grid: float) -> float:
    trace_a = magnetization_trace(pair_a.net, schedule, pair_a.rho0, grid)
    trace_b = magnetization_trace(pair_b.net, schedule, pair_b.rho0, grid)
    return float(np.max(np.abs(trace_a.as_array() - trace_b.as_array())))


def equivalence_test(pair_a: ModelStatePair, pair_b: ModelStatePair, n_schedules: int = DEFAULT_TRIALS,
                     seed: int = 0, tol: float = DEFAULT_TOLERANCE, grid: float = DEFAULT_GRID,
                     workers: int = 1, schedules: Optional[Sequence[ControlSchedule]] = None) -> EquivalenceVerdict:
    """Numerical equivalence certificate over a finite set of random schedules.

    Args:
        pair_a, pair_b: pairs to compare.
        n_schedules: number of random schedules (ignored when ``schedules`` is given).
        seed: seed of the schedule family.
        tol: pairs are reported equivalent when the largest deviation is below it.
        grid: sample spacing.
        workers: thread count for simulating schedules concurrently.
        schedules: explicit schedules to use instead of random ones.

    Returns:
        EquivalenceVerdict with the largest |M_v - M'_v| over schedules, samples and axes.
    """
    n_a, n_b = pair_a.net.n, pair_b.net.n
    if n_a != n_b:
        reason = f"spin counts differ: {n_a} != {n_b}"
        logger.info(f"Pairs not comparable, {reason}")
        return EquivalenceVerdict(False, float("inf"), 0, tol, n_a, n_b, reason)
    if schedules is None:
        if n_schedules < 1:
            raise InvalidOperatorError(f"need at least one schedule (got {n_schedules})")
        schedules = trial_schedules(n_schedules, seed)

    def deviation(schedule: ControlSchedule) -> float:
        return _trace_deviation(pair_a, pair_b, schedule, grid)

    if workers > 1 and len(schedules) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            deviations = list(pool.map(deviation, schedules))
    else:
        deviations = [deviation(schedule) for schedule in schedules]

    worst = max(deviations)
    equivalent = worst < tol
    logger.info(f"Equivalence test over {len(schedules)} schedules: max deviation {worst:.3e} "
                f"({'equivalent' if equivalent else 'distinguishable'})")
    reason = None if equivalent else f"max deviation {worst:.3e} >= tolerance {tol:g}"
    return EquivalenceVerdict(equivalent, worst, len(schedules), tol, n_a, n_b, reason)


def sign_flip_trace_check(pair: ModelStatePair, partner: ModelStatePair, string: PauliString,
                          schedules: Sequence[ControlSchedule], grid: float = DEFAULT_GRID) -> float:
    """max_t |Tr(P rho(t)) - (-1)^(r-1) Tr(P rho'(t))| for an r-site string P, r >= 1."""
    if partner.net != pair.net.negated():
        raise PartnerMismatchError("partner couplings are not the negated couplings of the pair")
    if np.max(np.abs(partner.rho0.matrix - partner_state(pair.rho0.matrix))) > PSD_TOL:
        raise PartnerMismatchError("partner state is not the sign-flipped even part of the pair's state")
    if string.n != pair.net.n or string.site_count == 0:
        raise InvalidOperatorError("need a string with at least one site on the pair's spins")
    P = realize(string)
    sign = (-1) ** (string.site_count - 1)
    worst = 0.0
    for schedule in schedules:
        left = state_expectations(evolve(pair.net, schedule, pair.rho0.matrix, grid), P)
        right = state_expectations(evolve(partner.net, schedule, partner.rho0.matrix, grid), P)
        worst = max(worst, float(np.max(np.abs(left - sign * right))))
    logger.debug(f"Sign-flip residual for '{string.label}': {worst:.3e}")
    return worst


def canonicalize(pair: ModelStatePair) -> ModelStatePair:
    """Class representative: gamma strictly increasing, first nonzero coupling positive."""
    net = pair.net
    if not gamma_distinct(net):
        raise CanonicalizationError(f"gyromagnetic ratios {net.gamma} repeat; canonical spin order is undefined")
    if not graph_connected(net):
        raise CanonicalizationError("coupling graph is disconnected")
    ranks = np.argsort(np.argsort(net.gamma))
    canonical = apply_permutation(pair, [int(rank) + 1 for rank in ranks])
    couplings = canonical.net.couplings
    if couplings and next(iter(couplings.values())) < 0:
        canonical, _ = partner_pair(canonical)
    return canonical
