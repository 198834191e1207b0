"""Immutable domain records shared by every module of the lab."""
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidNetworkError,
    InvalidScheduleError,
    InvalidStateError,
)

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

Edge = Tuple[int, int]
Site = Tuple[int, str]


def _frozen_array(values, dtype=None) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PauliString:
    """Kronecker product with factor-1/2 Pauli matrices at the listed sites.

    Sites are 1-based and kept sorted by index; an empty tuple is the identity.
    """
    n: int
    sites: Tuple[Site, ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise InvalidNetworkError(f"spin count must be >= 1 (got {self.n})")
        normalized = tuple(sorted((int(k), str(v)) for k, v in self.sites))
        seen = set()
        for k, v in normalized:
            if not 1 <= k <= self.n:
                raise InvalidNetworkError(f"site index {k} out of range 1..{self.n}")
            if v not in AXES:
                raise InvalidNetworkError(f"unknown axis '{v}'")
            if k in seen:
                raise InvalidNetworkError(f"site {k} listed twice")
            seen.add(k)
        object.__setattr__(self, "sites", normalized)

    @property
    def site_count(self) -> int:
        return len(self.sites)

    @property
    def parity(self) -> str:
        if not self.sites:
            return "identity"
        return "odd" if len(self.sites) % 2 else "even"

    @property
    def label(self) -> str:
        return " ".join(f"{k}{v}" for k, v in self.sites) or "I"

    @classmethod
    def from_label(cls, n: int, label: str) -> "PauliString":
        label = label.strip()
        if label in ("", "I"):
            return cls(n, ())
        return cls(n, tuple((int(token[:-1]), token[-1]) for token in label.split()))

    def axis_at(self, k: int) -> Optional[str]:
        for site, axis in self.sites:
            if site == k:
                return axis
        return None


@dataclass(frozen=True, eq=False)
class SpinNetwork:
    """Heisenberg network: n spins, exchange constants J_kl (k < l), ratios gamma_k."""
    n: int
    couplings: Mapping[Edge, float] = field(default_factory=dict)
    gamma: Tuple[float, ...] = ()

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidNetworkError(f"spin count must be a positive integer (got {self.n})")
        gamma = tuple(float(g) for g in self.gamma)
        if len(gamma) != self.n:
            raise InvalidNetworkError(f"expected {self.n} gyromagnetic ratios, got {len(gamma)}")
        if not all(math.isfinite(g) for g in gamma):
            raise InvalidNetworkError("gyromagnetic ratios must be finite")
        couplings: Dict[Edge, float] = {}
        for (k, l), value in dict(self.couplings).items():
            k, l = int(k), int(l)
            if k > l:
                k, l = l, k
            if k == l or not (1 <= k and l <= self.n):
                raise InvalidNetworkError(f"invalid coupling index ({k}, {l}) for n={self.n}")
            value = float(value)
            if not math.isfinite(value):
                raise InvalidNetworkError(f"coupling J_{k}{l} must be finite")
            if (k, l) in couplings:
                raise InvalidNetworkError(f"coupling ({k}, {l}) given twice")
            if value != 0.0:
                couplings[(k, l)] = value
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "couplings", MappingProxyType(dict(sorted(couplings.items()))))

    def coupling(self, k: int, l: int) -> float:
        if k > l:
            k, l = l, k
        return self.couplings.get((k, l), 0.0)

    @property
    def edges(self) -> List[Edge]:
        return list(self.couplings.keys())

    @property
    def dim(self) -> int:
        return 2 ** self.n

    def with_couplings(self, couplings: Mapping[Edge, float]) -> "SpinNetwork":
        return SpinNetwork(self.n, couplings, self.gamma)

    def negated(self) -> "SpinNetwork":
        return self.with_couplings({edge: -value for edge, value in self.couplings.items()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpinNetwork):
            return NotImplemented
        return (self.n == other.n and self.gamma == other.gamma
                and dict(self.couplings) == dict(other.couplings))

    def __repr__(self) -> str:
        return f"SpinNetwork(n={self.n}, couplings={dict(self.couplings)}, gamma={self.gamma})"


@dataclass(frozen=True)
class Segment:
    duration: float
    ux: float = 0.0
    uy: float = 0.0
    uz: float = 0.0

    @property
    def amplitudes(self) -> Tuple[float, float, float]:
        return (self.ux, self.uy, self.uz)


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant controls (u_x, u_y, u_z), one tuple per segment."""
    segments: Tuple[Segment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        if not segments:
            raise InvalidScheduleError("schedule needs at least one segment")
        for index, segment in enumerate(segments):
            if not segment.duration > 0 or not math.isfinite(segment.duration):
                raise InvalidScheduleError(f"segment {index} has non-positive duration {segment.duration}")
            if not all(math.isfinite(u) for u in segment.amplitudes):
                raise InvalidScheduleError(f"segment {index} has non-finite amplitude")
        object.__setattr__(self, "segments", segments)

    @property
    def total_duration(self) -> float:
        return float(sum(segment.duration for segment in self.segments))

    @classmethod
    def constant(cls, duration: float, ux: float = 0.0, uy: float = 0.0, uz: float = 0.0) -> "ControlSchedule":
        return cls((Segment(duration, ux, uy, uz),))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace 2^n x 2^n state.

    ``allow_indefinite`` keeps the Hermitian and trace checks but skips the
    eigenvalue check; partner constructions use it to carry states whose
    positivity is reported rather than assumed.
    """
    matrix: np.ndarray
    allow_indefinite: bool = False

    def __post_init__(self):
        rho = np.array(self.matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise InvalidStateError(f"density matrix must be square (got shape {rho.shape})")
        dim = rho.shape[0]
        if dim < 2 or dim & (dim - 1):
            raise InvalidStateError(f"density matrix dimension {dim} is not a power of two")
        if np.max(np.abs(rho - rho.conj().T)) >= HERMITIAN_TOL:
            raise InvalidStateError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) >= TRACE_TOL:
            raise InvalidStateError(f"density matrix trace is {np.trace(rho).real:.15g}, expected 1")
        min_eig = float(np.linalg.eigvalsh(rho).min())
        if min_eig < -PSD_TOL and not self.allow_indefinite:
            raise InvalidStateError(f"density matrix has negative eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "matrix", _frozen_array(rho))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.dim.bit_length() - 1

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def is_psd(self) -> bool:
        return float(self.eigenvalues().min()) >= -PSD_TOL

    def is_scalar(self, tol: float = PSD_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - np.eye(self.dim) / self.dim)) < tol)


@dataclass(frozen=True, eq=False)
class Trace:
    """Sampled total magnetization M_v(t_j) for v in x, y, z."""
    times: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray

    def __post_init__(self):
        times = _frozen_array(self.times, dtype=float)
        channels = [_frozen_array(values, dtype=float) for values in (self.mx, self.my, self.mz)]
        if times.ndim != 1 or any(channel.shape != times.shape for channel in channels):
            raise DimensionMismatchError("trace channels must match the sample times")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidScheduleError("trace sample times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "mx", channels[0])
        object.__setattr__(self, "my", channels[1])
        object.__setattr__(self, "mz", channels[2])

    def __len__(self) -> int:
        return int(self.times.size)

    def as_array(self) -> np.ndarray:
        """Samples as a (len, 3) array of (Mx, My, Mz)."""
        return np.stack([self.mx, self.my, self.mz], axis=1)


@dataclass(frozen=True, eq=False)
class LieBasis:
    """Hilbert-Schmidt orthonormal basis of a real span of skew-Hermitian operators."""
    elements: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.elements.shape[0])

    @property
    def dim(self) -> int:
        return int(self.elements.shape[1])

    def gram(self) -> np.ndarray:
        flat = self.elements.reshape(self.dimension, -1)
        return np.real(flat.conj() @ flat.T)

    def residual(self, operator: np.ndarray) -> np.ndarray:
        """Component of `operator` orthogonal to the span."""
        vector = np.asarray(operator, dtype=complex).reshape(-1)
        if self.dimension == 0:
            return vector.reshape(operator.shape)
        flat = self.elements.reshape(self.dimension, -1)
        coefficients = np.real(flat.conj() @ vector)
        return (vector - coefficients @ flat).reshape(operator.shape)

    def contains(self, operator: np.ndarray, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.linalg.norm(operator)))
        return float(np.linalg.norm(self.residual(operator))) <= tol * scale


@dataclass(frozen=True)
class AnalysisReport:
    n: int
    controllable: bool
    observable: bool
    lie_dimension: int
    observability_dimension: int
    graph_connected: bool
    gamma_distinct: bool
    components: Tuple[Tuple[int, ...], ...] = ()

    @property
    def target_dimension(self) -> int:
        return 4 ** self.n - 1

    def to_dict(self) -> Dict:
        return {
            "n": self.n,
            "controllable": self.controllable,
            "observable": self.observable,
            "lie_dimension": self.lie_dimension,
            "observability_dimension": self.observability_dimension,
            "target_dimension": self.target_dimension,
            "graph_connected": self.graph_connected,
            "gamma_distinct": self.gamma_distinct,
            "components": [list(component) for component in self.components],
        }


@dataclass(frozen=True, eq=False)
class ParitySplit:
    """rho = scalar * I + rho1 (odd strings) + rho2 (even strings with >= 2 sites)."""
    scalar: float
    rho1: np.ndarray
    rho2: np.ndarray

    def reconstruct(self) -> np.ndarray:
        dim = self.rho1.shape[0]
        return self.scalar * np.eye(dim) + self.rho1 + self.rho2


@dataclass(frozen=True, eq=False)
class ModelStatePair:
    net: SpinNetwork
    rho0: DensityMatrix

    def __post_init__(self):
        if self.rho0.dim != self.net.dim:
            raise DimensionMismatchError(
                f"state dimension {self.rho0.dim} does not match 2^{self.net.n} = {self.net.dim}")


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    max_deviation: float
    trials: int
    tolerance: float
    n_a: int = 0
    n_b: int = 0
    reason: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "equivalent": self.equivalent,
            "max_deviation": self.max_deviation if math.isfinite(self.max_deviation) else None,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class Hypothesis:
    """Model structure assumed by an identification run."""
    n: int
    edges: Tuple[Edge, ...]
    known_state: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise InvalidNetworkError(f"hypothesis spin count must be >= 1 (got {self.n})")
        edges = tuple(sorted({(min(k, l), max(k, l)) for k, l in self.edges}))
        for k, l in edges:
            if k == l or k < 1 or l > self.n:
                raise InvalidNetworkError(f"hypothesis edge ({k}, {l}) invalid for n={self.n}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def complete(cls, n: int, known_state: bool = True) -> "Hypothesis":
        return cls(n, tuple((k, l) for k in range(1, n + 1) for l in range(k + 1, n + 1)), known_state)


@dataclass(frozen=True)
class DatasetRecord:
    schedule: ControlSchedule
    trace: Trace


@dataclass(frozen=True)
class Dataset:
    records: Tuple[DatasetRecord, ...]
    grid: float
    hypothesis: Hypothesis

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for index, record in enumerate(self.records):
            expected = int(math.floor(record.schedule.total_duration / self.grid + 1e-9)) + 1
            if len(record.trace) != expected:
                raise DimensionMismatchError(
                    f"record {index}: trace has {len(record.trace)} samples, schedule implies {expected}")
        # measured or noisy traces may overshoot the spectral bound
        for index in self.out_of_bound_records():
            logger.warning(f"Record {index}: |M_v| exceeds n/2 = {self.hypothesis.n / 2}")

    def out_of_bound_records(self) -> List[int]:
        bound = self.hypothesis.n / 2 + 1e-9
        return [index for index, record in enumerate(self.records)
                if np.max(np.abs(record.trace.as_array()), initial=0.0) > bound]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Unknowns of an identification run: J on hypothesis edges, gamma, optional state factor."""
    hypothesis: Hypothesis
    J: Tuple[float, ...]
    gamma: Tuple[float, ...]
    state_factor: Optional[np.ndarray] = None

    def __post_init__(self):
        J = tuple(float(value) for value in self.J)
        gamma = tuple(float(value) for value in self.gamma)
        if len(J) != len(self.hypothesis.edges) or len(gamma) != self.hypothesis.n:
            raise DimensionMismatchError("parameter vector does not match the hypothesis layout")
        if not all(math.isfinite(value) for value in J + gamma):
            raise InvalidNetworkError("parameters must be finite")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "gamma", gamma)
        if self.state_factor is not None:
            factor = np.tril(np.array(self.state_factor, dtype=complex))
            if factor.shape != (2 ** self.hypothesis.n,) * 2:
                raise DimensionMismatchError("state factor must be 2^n x 2^n")
            object.__setattr__(self, "state_factor", _frozen_array(factor))

    @property
    def model_size(self) -> int:
        return len(self.J) + len(self.gamma)

    def network(self) -> SpinNetwork:
        return SpinNetwork(self.hypothesis.n, dict(zip(self.hypothesis.edges, self.J)), self.gamma)

    def state(self) -> Optional[DensityMatrix]:
        if self.state_factor is None:
            return None
        T = np.asarray(self.state_factor)
        gram = T.conj().T @ T
        gram = (gram + gram.conj().T) / 2
        norm = float(np.trace(gram).real)
        if not norm > 0 or not math.isfinite(norm):
            raise InvalidStateError("state factor is zero")
        return DensityMatrix(gram / norm)

    def to_array(self) -> np.ndarray:
        values: List[float] = list(self.J) + list(self.gamma)
        if self.state_factor is not None:
            values.extend(_pack_factor(np.asarray(self.state_factor)))
        return np.array(values, dtype=float)

    @classmethod
    def from_array(cls, hypothesis: Hypothesis, values: Sequence[float], with_state: bool) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        n_edges = len(hypothesis.edges)
        J = values[:n_edges]
        gamma = values[n_edges:n_edges + hypothesis.n]
        factor = None
        if with_state:
            factor = _unpack_factor(values[n_edges + hypothesis.n:], 2 ** hypothesis.n)
        return cls(hypothesis, tuple(J), tuple(gamma), factor)

    @classmethod
    def from_network(cls, hypothesis: Hypothesis, net: SpinNetwork,
                     state_factor: Optional[np.ndarray] = None) -> "ParameterVector":
        return cls(hypothesis, tuple(net.coupling(k, l) for k, l in hypothesis.edges), net.gamma, state_factor)


def _pack_factor(T: np.ndarray) -> List[float]:
    # real diagonal, then (re, im) of the strict lower triangle row by row
    dim = T.shape[0]
    values = [float(T[i, i].real) for i in range(dim)]
    for i in range(dim):
        for j in range(i):
            values.extend([float(T[i, j].real), float(T[i, j].imag)])
    return values


def _unpack_factor(values: np.ndarray, dim: int) -> np.ndarray:
    expected = dim * dim
    if len(values) != expected:
        raise DimensionMismatchError(f"state factor needs {expected} reals, got {len(values)}")
    T = np.zeros((dim, dim), dtype=complex)
    T[np.diag_indices(dim)] = values[:dim]
    cursor = dim
    for i in range(dim):
        for j in range(i):
            T[i, j] = values[cursor] + 1j * values[cursor + 1]
            cursor += 2
    return T


@dataclass(frozen=True, eq=False)
class FitResult:
    estimate: ParameterVector
    residual: float
    branch: str = "J"
    iterations: int = 0
    converged: bool = False
    warnings: Tuple[str, ...] = ()
    objective: float = 0.0
    start_index: int = 0
    state: Optional[DensityMatrix] = None

    def to_dict(self) -> Dict:
        estimate = self.estimate
        payload = {
            "branch": self.branch,
            "residual": self.residual,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "start_index": self.start_index,
            "warnings": list(self.warnings),
            "n": estimate.hypothesis.n,
            "gamma": list(estimate.gamma),
            "couplings": [{"k": k, "l": l, "J": J} for (k, l), J in zip(estimate.hypothesis.edges, estimate.J)],
        }
        state = self.state if self.state is not None else estimate.state()
        if state is not None:
            payload["state"] = [[[z.real, z.imag] for z in row] for row in state.matrix]
        return payload


@dataclass(frozen=True)
class FitOptions:
    starts: int = 1
    seed: int = 0
    max_iter: int = 200
    rel_tol: float = 1e-12
    fd_step: float = 1e-6
    damping: float = 1e-3
    perturbation: float = 0.2
    workers: int = 1
