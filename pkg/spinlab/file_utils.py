"""File formats: model/pair/schedule JSON, trace CSV and dataset directories."""
import csv
import io
import json
import logging
import os
import re
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .dynamics import from_pauli
from .errors import ParseError, SpinLabError
from .models import (
    ControlSchedule,
    Dataset,
    DatasetRecord,
    DensityMatrix,
    Hypothesis,
    ModelStatePair,
    Segment,
    SpinNetwork,
    Trace,
)
from .operators import pauli_decompose, pauli_string

logger = logging.getLogger(__name__)

TRACE_HEADER = ("t", "Mx", "My", "Mz")
STATE_FILE = "state.json"
HYPOTHESIS_FILE = "hypothesis.json"
_SCHEDULE_NAME = re.compile(r"^schedule_(\d+)\.json$")


def fmt(value: float) -> str:
    return f"{value:.15g}"


def _round(payload: Any) -> Any:
    """Round every float to 15 significant digits for stable output."""
    if isinstance(payload, float):
        return float(fmt(payload))
    if isinstance(payload, dict):
        return {key: _round(value) for key, value in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [_round(value) for value in payload]
    return payload


def write_atomic(path: str, text: str):
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(handle, "w", newline="") as temp:
            temp.write(text)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.info(f"Wrote {path}")


def json_text(payload: Dict, exact: bool = False) -> str:
    """Serialize a report; ``exact`` keeps full float precision for files that are read back."""
    return json.dumps(payload if exact else _round(payload), indent=2) + "\n"


def write_json(path: str, payload: Dict, exact: bool = False):
    write_atomic(path, json_text(payload, exact))


def read_json(path: str) -> Dict:
    if not os.path.exists(path):
        raise ParseError("file not found", path)
    try:
        with open(path) as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path)
    if not isinstance(payload, dict):
        raise ParseError("top-level value must be an object", path)
    return payload


def _check_keys(payload: Dict, required: Iterable[str], optional: Iterable[str], path: Optional[str],
                where: str = "file"):
    required = set(required)
    allowed = required | set(optional)
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ParseError(f"unknown keys in {where}: {', '.join(unknown)}", path)
    missing = sorted(required - set(payload))
    if missing:
        raise ParseError(f"missing keys in {where}: {', '.join(missing)}", path)


# --- models and states --------------------------------------------------------

def network_from_dict(payload: Dict, path: Optional[str] = None) -> SpinNetwork:
    try:
        couplings = {}
        for entry in payload.get("couplings", []):
            _check_keys(entry, ("k", "l", "J"), (), path, "coupling")
            edge = (int(entry["k"]), int(entry["l"]))
            if edge in couplings or edge[::-1] in couplings:
                raise ParseError(f"coupling ({edge[0]}, {edge[1]}) listed twice", path)
            couplings[edge] = float(entry["J"])
        return SpinNetwork(int(payload["n"]), couplings, tuple(float(g) for g in payload["gamma"]))
    except ParseError:
        raise
    except (SpinLabError, TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"invalid model: {exc}", path)


def network_to_dict(net: SpinNetwork) -> Dict:
    return {
        "n": net.n,
        "gamma": list(net.gamma),
        "couplings": [{"k": k, "l": l, "J": J} for (k, l), J in net.couplings.items()],
    }


def state_from_dict(payload: Dict, n: int, path: Optional[str] = None,
                    allow_indefinite: bool = False) -> DensityMatrix:
    """Parse a state given as Pauli coefficients over 2^-n I, or as a dense [re, im] matrix.

    Validation failures surface as InvalidStateError; structural problems as ParseError.
    """
    if not isinstance(payload, dict):
        raise ParseError("initial_state must be an object", path)
    if "strings" in payload:
        _check_keys(payload, ("strings",), (), path, "initial_state")
        coefficients = {}
        try:
            for entry in payload["strings"]:
                _check_keys(entry, ("sites", "coeff"), (), path, "string")
                string = pauli_string(n, ((int(k), str(v)) for k, v in entry["sites"]))
                if string.site_count == 0:
                    raise ParseError("identity string is fixed by the unit trace", path)
                coefficients[string] = coefficients.get(string, 0.0) + float(entry["coeff"])
        except ParseError:
            raise
        except (SpinLabError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid Pauli coefficients: {exc}", path)
        return from_pauli(n, coefficients, allow_indefinite)
    elif "matrix" in payload:
        _check_keys(payload, ("matrix",), (), path, "initial_state")
        try:
            entries = np.array(payload["matrix"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"invalid dense matrix: {exc}", path)
        if entries.shape != (2 ** n, 2 ** n, 2):
            raise ParseError(f"dense matrix must be {2 ** n}x{2 ** n} [re, im] pairs (got shape {entries.shape})", path)
        rho = entries[..., 0] + 1j * entries[..., 1]
    else:
        raise ParseError("initial_state needs 'strings' or 'matrix'", path)
    return DensityMatrix(rho, allow_indefinite=allow_indefinite)


def state_to_dict(rho: DensityMatrix, form: str = "matrix") -> Dict:
    if form == "strings":
        strings = []
        for string, coeff in pauli_decompose(rho.matrix).items():
            if string.site_count:
                strings.append({"sites": [[k, v] for k, v in string.sites], "coeff": coeff})
        return {"strings": strings}
    return {"matrix": [[[z.real, z.imag] for z in row] for row in rho.matrix]}


def load_model(path: str, allow_indefinite: bool = False) -> Tuple[SpinNetwork, Optional[DensityMatrix]]:
    """Model file, optionally carrying an initial state."""
    payload = read_json(path)
    _check_keys(payload, ("n", "gamma"), ("couplings", "initial_state"), path)
    net = network_from_dict(payload, path)
    rho0 = None
    if "initial_state" in payload:
        rho0 = state_from_dict(payload["initial_state"], net.n, path, allow_indefinite)
    return net, rho0


def load_pair(path: str, allow_indefinite: bool = False) -> ModelStatePair:
    net, rho0 = load_model(path, allow_indefinite)
    if rho0 is None:
        raise ParseError("pair file needs an initial_state", path)
    return ModelStatePair(net, rho0)


def save_pair(path: str, pair: ModelStatePair, state_form: str = "matrix"):
    payload = network_to_dict(pair.net)
    payload["initial_state"] = state_to_dict(pair.rho0, state_form)
    write_json(path, payload, exact=True)


def load_state(path: str, n: int) -> DensityMatrix:
    return state_from_dict(read_json(path), n, path)


def save_state(path: str, rho: DensityMatrix, form: str = "matrix"):
    write_json(path, state_to_dict(rho, form), exact=True)


# --- schedules and traces -----------------------------------------------------

def schedule_from_dict(payload: Dict, path: Optional[str] = None) -> ControlSchedule:
    _check_keys(payload, ("segments",), (), path)
    try:
        segments = []
        for entry in payload["segments"]:
            _check_keys(entry, ("duration",), ("ux", "uy", "uz"), path, "segment")
            segments.append(Segment(float(entry["duration"]), float(entry.get("ux", 0.0)),
                                    float(entry.get("uy", 0.0)), float(entry.get("uz", 0.0))))
        return ControlSchedule(tuple(segments))
    except ParseError:
        raise
    except (SpinLabError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid schedule: {exc}", path)


def schedule_to_dict(schedule: ControlSchedule) -> Dict:
    return {"segments": [{"duration": s.duration, "ux": s.ux, "uy": s.uy, "uz": s.uz} for s in schedule.segments]}


def load_schedule(path: str) -> ControlSchedule:
    return schedule_from_dict(read_json(path), path)


def save_schedule(path: str, schedule: ControlSchedule):
    write_json(path, schedule_to_dict(schedule), exact=True)


def trace_to_csv(trace: Trace) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for row in zip(trace.times, trace.mx, trace.my, trace.mz):
        writer.writerow([fmt(float(value)) for value in row])
    return buffer.getvalue()


def write_trace(path: str, trace: Trace):
    write_atomic(path, trace_to_csv(trace))


def read_trace(path: str) -> Trace:
    if not os.path.exists(path):
        raise ParseError("file not found", path)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or tuple(cell.strip() for cell in rows[0]) != TRACE_HEADER:
        raise ParseError(f"expected header {','.join(TRACE_HEADER)}", path)
    try:
        values = np.array([[float(cell) for cell in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise ParseError(f"non-numeric trace entry: {exc}", path)
    if values.ndim != 2 or values.shape[1] != 4:
        raise ParseError("every trace row needs 4 columns", path)
    try:
        return Trace(values[:, 0], values[:, 1], values[:, 2], values[:, 3])
    except SpinLabError as exc:
        raise ParseError(str(exc), path)


# --- dataset directories ------------------------------------------------------

def save_dataset(directory: str, dataset: Dataset, rho0: Optional[DensityMatrix] = None):
    """schedule_<i>.json + trace_<i>.csv per record, plus hypothesis.json (and state.json when known)."""
    os.makedirs(directory, exist_ok=True)
    for index, record in enumerate(dataset.records):
        save_schedule(os.path.join(directory, f"schedule_{index}.json"), record.schedule)
        write_trace(os.path.join(directory, f"trace_{index}.csv"), record.trace)
    hypothesis = dataset.hypothesis
    payload = {
        "n": hypothesis.n,
        "edges": [list(edge) for edge in hypothesis.edges],
        "known_state": hypothesis.known_state and rho0 is not None,
        "grid": dataset.grid,
    }
    if payload["known_state"]:
        save_state(os.path.join(directory, STATE_FILE), rho0)
        payload["state_file"] = STATE_FILE
    write_json(os.path.join(directory, HYPOTHESIS_FILE), payload, exact=True)
    logger.info(f"Saved dataset with {len(dataset)} records to {directory}")


def load_dataset(directory: str) -> Tuple[Dataset, Optional[DensityMatrix]]:
    """Dataset and, for known-state hypotheses, the initial state."""
    if not os.path.isdir(directory):
        raise ParseError("dataset directory not found", directory)
    hypothesis_path = os.path.join(directory, HYPOTHESIS_FILE)
    payload = read_json(hypothesis_path)
    _check_keys(payload, ("n", "edges", "known_state", "grid"), ("state_file",), hypothesis_path)
    try:
        hypothesis = Hypothesis(int(payload["n"]), tuple((int(k), int(l)) for k, l in payload["edges"]),
                                bool(payload["known_state"]))
        grid = float(payload["grid"])
    except (SpinLabError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid hypothesis: {exc}", hypothesis_path)

    indices = sorted(int(match.group(1)) for match in map(_SCHEDULE_NAME.match, os.listdir(directory)) if match)
    if not indices:
        raise ParseError("no schedule_<i>.json files", directory)
    if indices != list(range(len(indices))):
        raise ParseError(f"schedule indices must run 0..{len(indices) - 1}", directory)
    records: List[DatasetRecord] = []
    for index in indices:
        schedule = load_schedule(os.path.join(directory, f"schedule_{index}.json"))
        trace_path = os.path.join(directory, f"trace_{index}.csv")
        records.append(DatasetRecord(schedule, read_trace(trace_path)))
    try:
        dataset = Dataset(tuple(records), grid, hypothesis)
    except SpinLabError as exc:
        raise ParseError(str(exc), directory)

    rho0 = None
    if hypothesis.known_state:
        state_path = os.path.join(directory, payload.get("state_file", STATE_FILE))
        rho0 = load_state(state_path, hypothesis.n)
    logger.info(f"Loaded dataset with {len(dataset)} records from {directory}")
    return dataset, rho0
