"""Estimate couplings, gyromagnetic ratios and optionally the initial state
from magnetization traces recorded under known control schedules."""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import DEFAULT_GRID, magnetization_trace, random_perturbed_state, random_schedule
from .equivalence import partner_state
from .errors import DimensionMismatchError, IdentificationError, InvalidStateError, SpinLabError
from .liealg import graph_connected
from .models import (
    ControlSchedule,
    Dataset,
    DatasetRecord,
    DensityMatrix,
    FitOptions,
    FitResult,
    Hypothesis,
    ParameterVector,
    SpinNetwork,
)

logger = logging.getLogger(__name__)

DRIFT_DURATION = 2.0
DESIGN_SEGMENTS = 6
DESIGN_BOUND = 2.0
GAMMA_SEPARATION = 1e-6
OBJECTIVE_FLOOR = 1e-26
DAMPING_CEILING = 1e12
FLAT_TOL = 1e-10
BRANCH_TOL = 1e-8
ZERO_DATA_TOL = 1e-14

Residuals = Callable[[np.ndarray], Optional[np.ndarray]]


def residual_vector(params: ParameterVector, data: Dataset, rho0: Optional[DensityMatrix] = None) -> np.ndarray:
    """Stacked model-minus-data misfits over records, samples and axes.

    The state comes from ``rho0`` when given, otherwise from the parameter vector.
    """
    if params.hypothesis != data.hypothesis:
        raise DimensionMismatchError("parameter vector and dataset use different hypotheses")
    state = rho0 if rho0 is not None else params.state()
    if state is None:
        raise IdentificationError("no initial state: pass rho0 or parameterize the state")
    net = params.network()
    pieces = []
    for index, record in enumerate(data.records):
        model = magnetization_trace(net, record.schedule, state, data.grid)
        if len(model) != len(record.trace) or np.max(np.abs(model.times - record.trace.times)) > 1e-9:
            raise DimensionMismatchError(f"record {index}: trace samples are inconsistent with grid {data.grid}")
        pieces.append((model.as_array() - record.trace.as_array()).ravel())
    return np.concatenate(pieces)


def objective(params: ParameterVector, data: Dataset, rho0: Optional[DensityMatrix] = None) -> float:
    """Sum of squared misfits sum (M_v^model - M_v^data)^2."""
    r = residual_vector(params, data, rho0)
    return float(r @ r)


def rms(objective_value: float, size: int) -> float:
    return math.sqrt(objective_value / size) if size else 0.0


def identifiability_preflight(hypothesis: Hypothesis, gamma: Sequence[float]) -> List[str]:
    """Warnings for hypotheses under which couplings cannot be pinned down."""
    warnings = []
    for (i, a), (j, b) in itertools.combinations(enumerate(gamma, start=1), 2):
        if abs(a - b) < GAMMA_SEPARATION:
            warnings.append(f"gyromagnetic ratios of spins {i} and {j} are nearly equal "
                            f"({a:g}, {b:g}); couplings may be unidentifiable")
    shape = SpinNetwork(hypothesis.n, {edge: 1.0 for edge in hypothesis.edges}, tuple(1.0 for _ in range(hypothesis.n)))
    if hypothesis.n > 1 and not graph_connected(shape):
        warnings.append("hypothesis coupling graph is disconnected; the model is not controllable")
    for message in warnings:
        logger.warning(message)
    return warnings


def flat_direction_check(params: ParameterVector, data: Dataset, rho0: Optional[DensityMatrix],
                         direction: Sequence[float], step: float = 1e-3) -> float:
    """Central-difference directional derivative of the objective along ``direction``."""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise IdentificationError("direction is zero")
    direction = direction / norm
    x = params.to_array()
    with_state = params.state_factor is not None
    if direction.size != x.size:
        raise DimensionMismatchError(f"direction has {direction.size} entries, parameters have {x.size}")
    ahead = ParameterVector.from_array(params.hypothesis, x + step * direction, with_state)
    behind = ParameterVector.from_array(params.hypothesis, x - step * direction, with_state)
    return (objective(ahead, data, rho0) - objective(behind, data, rho0)) / (2 * step)


def state_factor(rho: DensityMatrix) -> np.ndarray:
    """Lower-triangular T with real non-negative diagonal and T^dagger T = rho."""
    eigenvalues, eigenvectors = np.linalg.eigh(rho.matrix)
    M = np.sqrt(np.clip(eigenvalues, 0.0, None))[:, None] * eigenvectors.conj().T
    # QR of the axis-reversed matrix gives M = Q' T with T lower-triangular
    _, R = np.linalg.qr(M[::-1, ::-1])
    diagonal = np.diag(R)
    magnitude = np.abs(diagonal)
    phases = np.ones_like(diagonal)
    nonzero = magnitude > 0
    phases[nonzero] = diagonal[nonzero] / magnitude[nonzero]
    R = phases.conj()[:, None] * R
    return R[::-1, ::-1]


def design_schedules(n: int, count: int, seed: int = 0, n_segments: int = DESIGN_SEGMENTS,
                     bound: float = DESIGN_BOUND) -> List[ControlSchedule]:
    """count - 1 random schedules plus one drift-only schedule exposing A."""
    if n < 1:
        raise IdentificationError(f"spin count must be >= 1 (got {n})")
    if count < 1:
        raise IdentificationError(f"need at least one schedule (got {count})")
    schedules = [random_schedule(n_segments, bound, [seed, index]) for index in range(count - 1)]
    schedules.append(ControlSchedule.constant(DRIFT_DURATION))
    logger.debug(f"Designed {count} schedules for n={n} (seed {seed})")
    return schedules


def _jacobian(fun: Residuals, x: np.ndarray, r: np.ndarray, fd_step: float) -> np.ndarray:
    columns = []
    for i in range(x.size):
        h = fd_step * max(abs(x[i]), 1.0)
        shifted = x.copy()
        shifted[i] += h
        r_shifted = fun(shifted)
        if r_shifted is None:
            # step left the valid region; difference backwards instead
            shifted[i] = x[i] - h
            r_shifted = fun(shifted)
            if r_shifted is None:
                raise IdentificationError(f"residuals undefined around parameter {i}")
            h = -h
        columns.append((r_shifted - r) / h)
    return np.column_stack(columns)


def _levenberg_marquardt(fun: Residuals, x0: np.ndarray, options: FitOptions) -> Tuple[np.ndarray, float, int, bool]:
    """Damped Gauss-Newton iterations; returns (x, objective, iterations, converged)."""
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    if r is None:
        raise IdentificationError("residuals undefined at the starting point")
    f = float(r @ r)
    damping = options.damping
    for iteration in range(options.max_iter):
        if f <= OBJECTIVE_FLOOR:
            return x, f, iteration, True
        J = _jacobian(fun, x, r, options.fd_step)
        gradient = J.T @ r
        normal = J.T @ J
        while True:
            step = np.linalg.lstsq(normal + damping * np.eye(x.size), -gradient, rcond=None)[0]
            candidate = x + step
            r_candidate = fun(candidate)
            f_candidate = float(r_candidate @ r_candidate) if r_candidate is not None else math.inf
            if f_candidate < f:
                damping = max(damping / 10, 1e-15)
                break
            damping *= 10
            if damping > DAMPING_CEILING:
                logger.debug(f"Damping exceeded {DAMPING_CEILING:g} at iteration {iteration}; stationary point")
                return x, f, iteration, True
        decrease = (f - f_candidate) / f
        x, r, f = candidate, r_candidate, f_candidate
        if decrease < options.rel_tol:
            return x, f, iteration + 1, True
    return x, f, options.max_iter, f <= OBJECTIVE_FLOOR


def _start_points(x0: np.ndarray, n_model: int, options: FitOptions) -> List[np.ndarray]:
    points = [x0.copy()]
    for start in range(1, options.starts):
        rng = np.random.default_rng(options.seed + start)
        x = x0.copy()
        x[:n_model] *= 1 + options.perturbation * rng.uniform(-1.0, 1.0, size=n_model)
        points.append(x)
    return points


def _multi_start(fun: Residuals, x0: np.ndarray, n_model: int,
                 options: FitOptions) -> Tuple[int, Tuple[np.ndarray, float, int, bool]]:
    points = _start_points(x0, n_model, options)

    def run(x: np.ndarray):
        try:
            return _levenberg_marquardt(fun, x, options)
        except IdentificationError as exc:
            logger.warning(f"Start abandoned: {exc}")
            return x, math.inf, 0, False

    if options.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            outcomes = list(pool.map(run, points))
    else:
        outcomes = [run(x) for x in points]
    best = min(range(len(outcomes)), key=lambda index: (outcomes[index][1], index))
    if not math.isfinite(outcomes[best][1]):
        raise IdentificationError("every start failed to evaluate")
    logger.info(f"Best of {len(points)} starts is start {best} with objective {outcomes[best][1]:.3e}")
    return best, outcomes[best]


def _residual_function(hypothesis: Hypothesis, data: Dataset, rho0: Optional[DensityMatrix],
                       with_state: bool) -> Residuals:
    def fun(x: np.ndarray) -> Optional[np.ndarray]:
        try:
            params = ParameterVector.from_array(hypothesis, x, with_state)
            return residual_vector(params, data, rho0)
        except (SpinLabError, np.linalg.LinAlgError, FloatingPointError):
            return None
    return fun


def _data_size(data: Dataset) -> int:
    return sum(3 * len(record.trace) for record in data.records)


def _check_data(data: Dataset):
    if not data.records:
        raise IdentificationError("empty dataset")
    if max(float(np.max(np.abs(record.trace.as_array()))) for record in data.records) < ZERO_DATA_TOL:
        raise IdentificationError("scalar-state data: unidentifiable")


def _flat_coupling_warning(estimate: ParameterVector, data: Dataset, rho0: Optional[DensityMatrix]) -> Optional[str]:
    n_edges = len(estimate.hypothesis.edges)
    if not n_edges:
        return None
    direction = np.zeros(estimate.to_array().size)
    direction[:n_edges] = 1.0
    # step away from the minimum, where any coupling dependence shows as slope
    x = estimate.to_array() + 0.1 * direction / np.linalg.norm(direction)
    displaced = ParameterVector.from_array(estimate.hypothesis, x, estimate.state_factor is not None)
    slope = flat_direction_check(displaced, data, rho0, direction)
    if abs(slope) < FLAT_TOL:
        message = f"objective is flat along the couplings (slope {slope:.1e}); J is unconstrained by the data"
        logger.warning(message)
        return message
    return None


def fit_known_state(data: Dataset, rho0: DensityMatrix, initial_guess: ParameterVector,
                    options: Optional[FitOptions] = None) -> FitResult:
    """Least-squares estimate of J and gamma with the initial state known.

    Args:
        data: traces and the schedules that produced them.
        rho0: the common initial state; must not be a multiple of the identity.
        initial_guess: starting parameters (any state factor is ignored).
        options: optimizer settings.

    Returns:
        FitResult for the best start.
    """
    options = options or FitOptions()
    _check_data(data)
    if rho0.dim != 2 ** data.hypothesis.n:
        raise DimensionMismatchError(f"state dimension {rho0.dim} does not match n={data.hypothesis.n}")
    if rho0.is_scalar():
        raise IdentificationError("scalar-state data: unidentifiable")
    hypothesis = data.hypothesis
    guess = ParameterVector(hypothesis, initial_guess.J, initial_guess.gamma)
    warnings = identifiability_preflight(hypothesis, guess.gamma)

    fun = _residual_function(hypothesis, data, rho0, with_state=False)
    start, (x, f, iterations, converged) = _multi_start(fun, guess.to_array(), guess.model_size, options)
    estimate = ParameterVector.from_array(hypothesis, x, with_state=False)
    flat = _flat_coupling_warning(estimate, data, rho0)
    if flat:
        warnings.append(flat)
    residual = rms(f, _data_size(data))
    logger.info(f"Known-state fit finished after {iterations} iterations: rms residual {residual:.3e}")
    return FitResult(estimate, residual, "J", iterations, converged, tuple(warnings), f, start, rho0)


def fit_unknown_state(data: Dataset, initial_guess: ParameterVector,
                      options: Optional[FitOptions] = None) -> Tuple[FitResult, FitResult]:
    """Joint estimate of J, gamma and rho0, reported on both sign branches.

    The data cannot tell a pair from its partner (couplings negated, even part
    of the state negated); the fitted pair comes first, the partner second.
    """
    options = options or FitOptions()
    _check_data(data)
    hypothesis = data.hypothesis
    factor = initial_guess.state_factor
    if factor is None:
        rng = np.random.default_rng(options.seed)
        factor = state_factor(random_perturbed_state(hypothesis.n, 0.05, rng))
    guess = ParameterVector(hypothesis, initial_guess.J, initial_guess.gamma, factor)
    warnings = identifiability_preflight(hypothesis, guess.gamma)

    fun = _residual_function(hypothesis, data, None, with_state=True)
    start, (x, f, iterations, converged) = _multi_start(fun, guess.to_array(), guess.model_size, options)
    estimate = ParameterVector.from_array(hypothesis, x, with_state=True)
    state = estimate.state()
    if state.is_scalar():
        raise IdentificationError("scalar-state data: unidentifiable")
    size = _data_size(data)

    flipped = partner_state(state.matrix)
    psd_ok = float(np.linalg.eigvalsh(flipped).min()) >= -1e-10
    partner_rho = DensityMatrix(flipped, allow_indefinite=not psd_ok)
    partner_estimate = ParameterVector(hypothesis, tuple(-J for J in estimate.J), estimate.gamma,
                                       state_factor(partner_rho) if psd_ok else None)
    partner_f = objective(ParameterVector(hypothesis, partner_estimate.J, partner_estimate.gamma), data, partner_rho)
    partner_warnings = list(warnings)
    if not psd_ok:
        partner_warnings.append("partner state is not positive semidefinite")
    if abs(rms(partner_f, size) - rms(f, size)) > BRANCH_TOL:
        message = f"branch residuals differ: {rms(f, size):.3e} vs {rms(partner_f, size):.3e}"
        logger.warning(message)
        warnings.append(message)
        partner_warnings.append(message)

    logger.info(f"Unknown-state fit finished after {iterations} iterations: rms residual {rms(f, size):.3e}")
    fitted = FitResult(estimate, rms(f, size), "J", iterations, converged, tuple(warnings), f, start, state)
    partner = FitResult(partner_estimate, rms(partner_f, size), "-J", iterations, converged,
                        tuple(partner_warnings), partner_f, start, partner_rho)
    return fitted, partner


def simulate_dataset(net: SpinNetwork, rho0: DensityMatrix, schedules: Sequence[ControlSchedule],
                     hypothesis: Optional[Hypothesis] = None, grid: float = DEFAULT_GRID) -> Dataset:
    """Exact traces of a ground-truth pair, packaged for identification."""
    hypothesis = hypothesis or Hypothesis(net.n, tuple(net.edges), known_state=True)
    records = [DatasetRecord(schedule, magnetization_trace(net, schedule, rho0, grid)) for schedule in schedules]
    data = Dataset(tuple(records), grid, hypothesis)
    overshoot = data.out_of_bound_records()
    if overshoot:
        raise InvalidStateError(f"records {overshoot}: noiseless |M_v| exceeds n/2 = {net.n / 2}")
    return data
