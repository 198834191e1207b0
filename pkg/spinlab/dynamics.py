"""Density-matrix propagation under piecewise-constant controls.

rho' = [A + u_x B_x + u_y B_y + u_z B_z, rho]; each constant segment is
propagated exactly through the eigendecomposition of the Hermitian matrix iL.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh

from .errors import DimensionMismatchError, InvalidOperatorError, InvalidScheduleError, InvalidStateError
from .models import AXES, HERMITIAN_TOL, ControlSchedule, DensityMatrix, PauliString, Segment, SpinNetwork, Trace
from .operators import build_control, build_drift, is_hermitian, realize, require_skew_hermitian, total_spin

logger = logging.getLogger(__name__)

DEFAULT_GRID = 0.01
TIME_TOL = 1e-12
DURATION_RANGE = (0.05, 0.5)


class SegmentPropagator:
    """Exact propagator exp(L t) for one constant generator L."""

    def __init__(self, L: np.ndarray):
        L = require_skew_hermitian(L, "segment generator")
        H = 1j * L
        self.eigenvalues, self.eigenvectors = eigh((H + H.conj().T) / 2)

    def unitary(self, dt: float) -> np.ndarray:
        phases = np.exp(-1j * self.eigenvalues * dt)
        return (self.eigenvectors * phases) @ self.eigenvectors.conj().T


def step_exponential(L: np.ndarray, dt: float) -> np.ndarray:
    """U = exp(L dt) for skew-Hermitian L, via eigendecomposition of iL."""
    return SegmentPropagator(L).unitary(dt)


def sample_times(schedule: ControlSchedule, grid: float) -> np.ndarray:
    """Uniform sample times 0, grid, 2 grid, ... up to the schedule's total duration."""
    if not grid > 0 or not math.isfinite(grid):
        raise InvalidScheduleError(f"sample spacing must be positive (got {grid})")
    count = int(math.floor(schedule.total_duration / grid + 1e-9)) + 1
    return np.arange(count) * grid


def _check_dimensions(net: SpinNetwork, rho0: DensityMatrix):
    if rho0.dim != net.dim:
        raise DimensionMismatchError(f"state is {rho0.dim}x{rho0.dim}, network needs {net.dim}x{net.dim}")


def _segment_propagators(net: SpinNetwork, schedule: ControlSchedule) -> List[SegmentPropagator]:
    A = build_drift(net)
    B = [build_control(net, v) for v in AXES]
    propagators = []
    for segment in schedule.segments:
        L = A + segment.ux * B[0] + segment.uy * B[1] + segment.uz * B[2]
        propagators.append(SegmentPropagator(L))
    return propagators


def evolve(net: SpinNetwork, schedule: ControlSchedule, rho0: np.ndarray, grid: float) -> np.ndarray:
    """Raw trajectory as a (samples, dim, dim) array; grid intervals crossing segment
    boundaries are split at the boundary so every piece has a constant generator."""
    rho = np.asarray(rho0, dtype=complex)
    if rho.shape != (net.dim, net.dim):
        raise DimensionMismatchError(f"state shape {rho.shape} does not match 2^{net.n}")
    times = sample_times(schedule, grid)
    propagators = _segment_propagators(net, schedule)
    boundaries = np.cumsum([segment.duration for segment in schedule.segments])
    last = len(boundaries) - 1

    states = np.empty((times.size, net.dim, net.dim), dtype=complex)
    states[0] = rho
    index = 0
    t = 0.0
    for j in range(1, times.size):
        target = times[j]
        U = np.eye(net.dim, dtype=complex)
        while target - t > TIME_TOL:
            # the last segment absorbs roundoff overshoot of the final sample time
            end = target if index == last else min(target, boundaries[index])
            U = propagators[index].unitary(end - t) @ U
            t = end
            if boundaries[index] - t <= TIME_TOL and index < last:
                index += 1
        t = target
        rho = U @ rho @ U.conj().T
        states[j] = rho
    return states


def propagate(net: SpinNetwork, schedule: ControlSchedule, rho0: DensityMatrix,
              grid: float = DEFAULT_GRID) -> List[DensityMatrix]:
    """Density matrices rho(t_j) at every sample time."""
    _check_dimensions(net, rho0)
    trajectory = evolve(net, schedule, rho0.matrix, grid)
    # unitary conjugation keeps the state valid; restore exact Hermiticity lost to roundoff
    return [DensityMatrix((rho + rho.conj().T) / 2, allow_indefinite=rho0.allow_indefinite) for rho in trajectory]


def state_expectations(states: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Tr(F rho_j) for a stack of states."""
    return np.einsum("ij,tji->t", np.asarray(F), np.asarray(states))


def magnetization_trace(net: SpinNetwork, schedule: ControlSchedule, rho0: DensityMatrix,
                        grid: float = DEFAULT_GRID) -> Trace:
    """M_v(t_j) = Tr(S_v^TOT rho(t_j)) for v in x, y, z."""
    _check_dimensions(net, rho0)
    trajectory = evolve(net, schedule, rho0.matrix, grid)
    channels = []
    for v in AXES:
        values = state_expectations(trajectory, total_spin(net.n, v))
        if np.max(np.abs(values.imag), initial=0.0) > HERMITIAN_TOL * max(1, net.n):
            logger.warning(f"Magnetization M_{v} has imaginary part {np.max(np.abs(values.imag)):.3e}")
        channels.append(values.real)
    return Trace(sample_times(schedule, grid), *channels)


def observable_trace(net: SpinNetwork, schedule: ControlSchedule, rho0: DensityMatrix,
                     F: np.ndarray, grid: float = DEFAULT_GRID) -> np.ndarray:
    """Tr(F rho(t_j)) for a Hermitian observable F."""
    _check_dimensions(net, rho0)
    F = np.asarray(F, dtype=complex)
    if F.shape != (net.dim, net.dim):
        raise DimensionMismatchError(f"observable shape {F.shape} does not match 2^{net.n}")
    if not is_hermitian(F, HERMITIAN_TOL * max(1.0, float(np.max(np.abs(F))))):
        raise InvalidOperatorError("observable must be Hermitian (pass i*X for skew-Hermitian X)")
    return state_expectations(evolve(net, schedule, rho0.matrix, grid), F).real


def random_schedule(n_segments: int, bound: float, seed: Union[None, int, Sequence[int]] = None,
                    duration_range: Tuple[float, float] = DURATION_RANGE) -> ControlSchedule:
    """Random schedule: durations uniform in [0.05, 0.5], amplitudes uniform in [-bound, bound]."""
    if n_segments < 1:
        raise InvalidScheduleError(f"need at least one segment (got {n_segments})")
    if bound < 0:
        raise InvalidScheduleError(f"amplitude bound must be non-negative (got {bound})")
    rng = np.random.default_rng(seed)
    segments = []
    for _ in range(n_segments):
        duration = float(rng.uniform(*duration_range))
        ux, uy, uz = (float(u) for u in rng.uniform(-bound, bound, size=3)) if bound > 0 else (0.0, 0.0, 0.0)
        segments.append(Segment(duration, ux, uy, uz))
    return ControlSchedule(tuple(segments))


def simulate_batch(net: SpinNetwork, schedules: Sequence[ControlSchedule], rho0: DensityMatrix,
                   grid: float = DEFAULT_GRID, workers: int = 1) -> List[Trace]:
    """Magnetization traces for many schedules; output order follows the input order."""
    if workers <= 1 or len(schedules) <= 1:
        return [magnetization_trace(net, schedule, rho0, grid) for schedule in schedules]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda schedule: magnetization_trace(net, schedule, rho0, grid), schedules))


def add_noise(trace: Trace, sigma: float, seed: Union[None, int, Sequence[int]] = None) -> Trace:
    """Additive Gaussian corruption of every channel (robustness experiments)."""
    if sigma < 0:
        raise InvalidScheduleError(f"noise level must be non-negative (got {sigma})")
    rng = np.random.default_rng(seed)
    noisy = trace.as_array() + rng.normal(0.0, sigma, size=(len(trace), 3))
    return Trace(trace.times, noisy[:, 0], noisy[:, 1], noisy[:, 2])


# --- state constructors -----------------------------------------------------

def maximally_mixed(n: int) -> DensityMatrix:
    return DensityMatrix(np.eye(2 ** n) / 2 ** n)


def pure_state(psi: Sequence[complex]) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex)
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise InvalidStateError("state vector is zero")
    psi = psi / norm
    return DensityMatrix(np.outer(psi, psi.conj()))


def singlet() -> DensityMatrix:
    """(|01> - |10>) / sqrt(2) on two spins."""
    return pure_state([0, 1, -1, 0])


def from_pauli(n: int, coefficients: Mapping[PauliString, float], allow_indefinite: bool = False) -> DensityMatrix:
    """2^-n I plus the listed strings (the identity string, if given, is ignored)."""
    rho = np.eye(2 ** n, dtype=complex) / 2 ** n
    for p, c in coefficients.items():
        if p.n != n:
            raise DimensionMismatchError(f"string {p} acts on {p.n} spins, state has {n}")
        if p.site_count:
            rho = rho + c * realize(p)
    return DensityMatrix(rho, allow_indefinite=allow_indefinite)


def random_traceless_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    dim = 2 ** n
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    H = (X + X.conj().T) / 2
    return H - np.trace(H).real / dim * np.eye(dim)


def random_perturbed_state(n: int, epsilon: float, rng: np.random.Generator) -> DensityMatrix:
    """2^-n I + epsilon H / ||H||_op with H random traceless Hermitian."""
    H = random_traceless_hermitian(n, rng)
    H = H / np.max(np.abs(np.linalg.eigvalsh(H)))
    return DensityMatrix(np.eye(2 ** n) / 2 ** n + epsilon * (H + H.conj().T) / 2)


def random_density_matrix(n: int, rng: np.random.Generator, rank: Optional[int] = None) -> DensityMatrix:
    """Random state G G^dagger / Tr(G G^dagger) with G of the given rank."""
    dim = 2 ** n
    rank = dim if rank is None else rank
    G = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = G @ G.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(rho / np.trace(rho).real)


def spectrum_drift(states: Sequence[DensityMatrix], reference: DensityMatrix) -> Dict[str, float]:
    """Largest trace and eigenvalue deviation of a trajectory from its initial state."""
    eigenvalues = reference.eigenvalues()
    trace_error = max(abs(np.trace(state.matrix) - 1.0) for state in states)
    spectrum_error = max(float(np.max(np.abs(state.eigenvalues() - eigenvalues))) for state in states)
    return {"trace": float(trace_error), "spectrum": spectrum_error}
