"""Circuit descriptions, the layered random-circuit family, simulated device
profiles, and basis-gate transpilation.

Circuits are plain gate lists; all state evolution lives in ``qsim``. The
transpiler only rewrites single-qubit gates into the target basis and checks
CNOT endpoints against the coupling map; no routing is performed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import RoutingError
from .validation import as_rng, check_probability, check_qubits

ONE_QUBIT_KINDS = ("RX", "RY", "RZ", "SX", "X", "U1", "U2", "U3")
TWO_QUBIT_KINDS = ("CNOT",)
GATE_KINDS = ONE_QUBIT_KINDS + TWO_QUBIT_KINDS
# Wire markers used by the DAG encoding; never appear inside circuits.
MARKER_KINDS = ("INPUT", "OUTPUT")

_ANGLE_COUNT = {
    "RX": 1, "RY": 1, "RZ": 1, "U1": 1, "U2": 2, "U3": 3,
    "SX": 0, "X": 0, "CNOT": 0,
}

# Gate durations in microseconds used when mapping T1/T2 calibration to
# damping channels. Single-qubit gates share one slot; CNOT is slower.
SINGLE_QUBIT_GATE_DURATION_US = 0.05
CNOT_GATE_DURATION_US = 0.3


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unsupported gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        arity = 2 if self.kind in TWO_QUBIT_KINDS else 1
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} takes {arity} qubit(s), got {self.qubits}")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise ValueError(f"{self.kind} qubits must be distinct, got {self.qubits}")
        if len(self.angles) != _ANGLE_COUNT[self.kind]:
            raise ValueError(
                f"{self.kind} takes {_ANGLE_COUNT[self.kind]} angle(s), "
                f"got {len(self.angles)}"
            )
        if any(not math.isfinite(a) for a in self.angles):
            raise ValueError(f"non-finite angle in {self.angles}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "qubits": list(self.qubits), "angles": list(self.angles)}

    @classmethod
    def from_json(cls, obj: dict) -> "Gate":
        return cls(obj["kind"], tuple(obj["qubits"]), tuple(obj.get("angles", ())))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    layer_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            check_qubits(g.qubits, self.n_qubits)

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "layer_count": self.layer_count,
            "gates": [g.to_json() for g in self.gates],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Circuit":
        return cls(
            n_qubits=int(obj["n_qubits"]),
            gates=tuple(Gate.from_json(g) for g in obj["gates"]),
            layer_count=int(obj.get("layer_count", 0)),
        )


@dataclass(frozen=True)
class DepolarizingNoise:
    """Uniform two-qubit depolarizing noise of strength p after each CNOT."""

    p: float

    kind = "depolarizing"

    def to_json(self) -> dict:
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class DeviceNoise:
    """Per-qubit calibration data in the style of hardware backends.

    ``t1``/``t2`` are relaxation/dephasing times in microseconds (``None``
    disables the channel). ``gate_errors`` maps a single-qubit gate kind to a
    per-qubit list, and "CNOT" to a per-coupled-pair dict keyed "a-b" with
    a < b. ``readout`` holds per-qubit flip probabilities.
    """

    t1: tuple[float | None, ...]
    t2: tuple[float | None, ...]
    gate_errors: dict
    prob_meas0_prep1: tuple[float, ...]
    prob_meas1_prep0: tuple[float, ...]

    kind = "device"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "t1": list(self.t1),
            "t2": list(self.t2),
            "gate_errors": self.gate_errors,
            "prob_meas0_prep1": list(self.prob_meas0_prep1),
            "prob_meas1_prep0": list(self.prob_meas1_prep0),
        }

    def cnot_error(self, a: int, b: int) -> float:
        key = f"{min(a, b)}-{max(a, b)}"
        table = self.gate_errors.get("CNOT", {})
        if key not in table:
            raise KeyError(f"no CNOT calibration for pair {key}")
        return float(table[key])

    def single_error(self, kind: str, q: int) -> float:
        table = self.gate_errors.get(kind)
        if table is None or q >= len(table):
            raise KeyError(f"no {kind} calibration for qubit {q}")
        return float(table[q])


def _noise_from_json(obj: dict):
    if obj["kind"] == "depolarizing":
        return DepolarizingNoise(p=float(obj["p"]))
    if obj["kind"] == "device":
        return DeviceNoise(
            t1=tuple(None if v is None else float(v) for v in obj["t1"]),
            t2=tuple(None if v is None else float(v) for v in obj["t2"]),
            gate_errors=obj["gate_errors"],
            prob_meas0_prep1=tuple(float(v) for v in obj["prob_meas0_prep1"]),
            prob_meas1_prep0=tuple(float(v) for v in obj["prob_meas1_prep0"]),
        )
    raise ValueError(f"unknown noise kind {obj['kind']!r}")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    n_qubits: int
    basis_gates: frozenset[str]
    coupling_map: frozenset[tuple[int, int]]  # undirected, stored sorted
    noise: DepolarizingNoise | DeviceNoise

    def __post_init__(self):
        object.__setattr__(self, "basis_gates", frozenset(self.basis_gates))
        object.__setattr__(
            self,
            "coupling_map",
            frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.coupling_map),
        )

    def coupled(self, a: int, b: int) -> bool:
        return tuple(sorted((a, b))) in self.coupling_map

    def with_depolarizing(self, p: float) -> "DeviceProfile":
        """Same device with the depolarizing strength replaced."""
        if not isinstance(self.noise, DepolarizingNoise):
            raise ValueError("profile does not use depolarizing noise")
        return replace(self, noise=DepolarizingNoise(p=check_probability(p)))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n_qubits": self.n_qubits,
            "basis_gates": sorted(self.basis_gates),
            "coupling_map": sorted(list(pair) for pair in self.coupling_map),
            "noise": self.noise.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DeviceProfile":
        return cls(
            name=str(obj["name"]),
            n_qubits=int(obj["n_qubits"]),
            basis_gates=frozenset(obj["basis_gates"]),
            coupling_map=frozenset(tuple(p) for p in obj["coupling_map"]),
            noise=_noise_from_json(obj["noise"]),
        )

    @classmethod
    def load(cls, path) -> "DeviceProfile":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def validate_profile(profile: DeviceProfile) -> list[str]:
    """All invariant violations of a profile; an empty list means ok."""
    out: list[str] = []
    n = profile.n_qubits
    if n < 1:
        out.append(f"n_qubits must be positive, got {n}")
        return out
    for a, b in profile.coupling_map:
        if not (0 <= a < n and 0 <= b < n):
            out.append(f"coupling pair ({a},{b}) out of range for {n} qubits")
        if a == b:
            out.append(f"coupling pair ({a},{b}) is degenerate")
    unknown = {k for k in profile.basis_gates if k not in GATE_KINDS}
    if unknown:
        out.append(f"unknown basis gates {sorted(unknown)}")
    noise = profile.noise
    if isinstance(noise, DepolarizingNoise):
        if not (0.0 <= noise.p <= 1.0):
            out.append(f"depolarizing strength {noise.p} outside [0, 1]")
    elif isinstance(noise, DeviceNoise):
        for arr, label in ((noise.t1, "t1"), (noise.t2, "t2")):
            if len(arr) != n:
                out.append(f"{label} has {len(arr)} entries, expected {n}")
        for q, (t1, t2) in enumerate(zip(noise.t1, noise.t2)):
            if t1 is not None and t1 <= 0:
                out.append(f"t1[{q}] = {t1} must be positive")
            if t2 is not None and t2 <= 0:
                out.append(f"t2[{q}] = {t2} must be positive")
            if t1 is not None and t2 is not None and t2 > 2.0 * t1 + 1e-12:
                out.append(f"t2[{q}] = {t2} exceeds 2*t1 = {2 * t1}")
        for label, arr in (
            ("prob_meas0_prep1", noise.prob_meas0_prep1),
            ("prob_meas1_prep0", noise.prob_meas1_prep0),
        ):
            if len(arr) != n:
                out.append(f"{label} has {len(arr)} entries, expected {n}")
            for q, p in enumerate(arr):
                if not (0.0 <= p <= 1.0):
                    out.append(f"{label}[{q}] = {p} outside [0, 1]")
        for kind, table in noise.gate_errors.items():
            if kind == "CNOT":
                for key, p in table.items():
                    if not (0.0 <= float(p) <= 1.0):
                        out.append(f"CNOT error {key} = {p} outside [0, 1]")
            else:
                for q, p in enumerate(table):
                    if not (0.0 <= float(p) <= 1.0):
                        out.append(f"{kind} error[{q}] = {p} outside [0, 1]")
    else:
        out.append(f"unknown noise description {type(noise).__name__}")
    return out


# --------------------------------------------------------------------------
# Gate matrices


def gate_matrix(gate: Gate) -> np.ndarray:
    """Unitary of a gate: 2x2 for single-qubit kinds, 4x4 for CNOT.

    CNOT rows/columns are ordered (control, target) with the first qubit as
    the most significant bit.
    """
    return _kind_matrix(gate.kind, gate.angles)


def _kind_matrix(kind: str, angles: tuple[float, ...]) -> np.ndarray:
    if kind == "RX":
        (t,) = angles
        c, s = math.cos(t / 2), math.sin(t / 2)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RY":
        (t,) = angles
        c, s = math.cos(t / 2), math.sin(t / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        (t,) = angles
        return np.array(
            [[np.exp(-0.5j * t), 0.0], [0.0, np.exp(0.5j * t)]], dtype=complex
        )
    if kind == "SX":
        return 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex)
    if kind == "X":
        return np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    if kind == "U1":
        (lam,) = angles
        return np.array([[1.0, 0.0], [0.0, np.exp(1j * lam)]], dtype=complex)
    if kind == "U2":
        phi, lam = angles
        return _u3_matrix(math.pi / 2, phi, lam)
    if kind == "U3":
        return _u3_matrix(*angles)
    if kind == "CNOT":
        return np.array(
            [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
        )
    raise ValueError(f"unsupported gate kind {kind!r}")


def _u3_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [
            [c, -np.exp(1j * lam) * s],
            [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
        ],
        dtype=complex,
    )


def zyz_angles(u: np.ndarray) -> tuple[float, float, float]:
    """Euler angles (theta, phi, lam) with u ~ U3(theta, phi, lam) up to phase."""
    det = np.linalg.det(u)
    v = u / np.sqrt(det)
    c, s = abs(v[0, 0]), abs(v[1, 0])
    theta = 2.0 * math.atan2(s, c)
    if s < 1e-12:
        phi, lam = 0.0, 2.0 * float(np.angle(v[1, 1]))
    elif c < 1e-12:
        phi, lam = 2.0 * float(np.angle(v[1, 0])), 0.0
    else:
        plus = 2.0 * float(np.angle(v[1, 1]))
        minus = 2.0 * float(np.angle(v[1, 0]))
        phi, lam = (plus + minus) / 2.0, (plus - minus) / 2.0
    return theta, phi, lam


# --------------------------------------------------------------------------
# Circuit sampling


def sample_circuit(n_qubits: int, layers: int, rng) -> Circuit:
    """Draw one circuit from the layered random family.

    Each layer applies one rotation per qubit (the rotation axis is drawn
    uniformly from {X, Y, Z} once per layer, the angles independently from
    Unif(0, 2*pi)), followed by an entanglement block where every neighboring
    pair (q, q+1) independently receives a CNOT with probability 1/2 and a
    uniformly random control direction.
    """
    if n_qubits < 2:
        raise ValueError(f"n_qubits must be >= 2, got {n_qubits}")
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    rng = as_rng(rng)
    gates: list[Gate] = []
    for _ in range(layers):
        axis = ("RX", "RY", "RZ")[rng.integers(3)]
        for q in range(n_qubits):
            gates.append(Gate(axis, (q,), (float(rng.uniform(0.0, 2.0 * math.pi)),)))
        for q in range(n_qubits - 1):
            if rng.random() < 0.5:
                ctrl, tgt = (q, q + 1) if rng.random() < 0.5 else (q + 1, q)
                gates.append(Gate("CNOT", (ctrl, tgt)))
    return Circuit(n_qubits=n_qubits, gates=tuple(gates), layer_count=layers)


# --------------------------------------------------------------------------
# Transpilation


def _zsx_sequence(q: int, u: np.ndarray) -> list[Gate]:
    """Rewrite a single-qubit unitary as RZ/SX gates (applied left to right).

    Uses u ~ RZ(phi+pi) SX RZ(theta+pi) SX RZ(lam) up to global phase; a
    diagonal unitary collapses to a single RZ.
    """
    theta, phi, lam = zyz_angles(u)
    if abs(theta) < 1e-12:
        return [Gate("RZ", (q,), (phi + lam,))]
    return [
        Gate("RZ", (q,), (lam,)),
        Gate("SX", (q,)),
        Gate("RZ", (q,), (theta + math.pi,)),
        Gate("SX", (q,)),
        Gate("RZ", (q,), (phi + math.pi,)),
    ]


def _u_sequence(q: int, kind: str, angles: tuple[float, ...], u: np.ndarray) -> list[Gate]:
    if kind == "RZ":
        return [Gate("U1", (q,), angles)]
    if kind == "RX":
        return [Gate("U3", (q,), (angles[0], -math.pi / 2, math.pi / 2))]
    if kind == "RY":
        return [Gate("U3", (q,), (angles[0], 0.0, 0.0))]
    if kind == "X":
        return [Gate("U3", (q,), (math.pi, 0.0, math.pi))]
    if kind == "SX":
        return [Gate("U3", (q,), (math.pi / 2, -math.pi / 2, math.pi / 2))]
    theta, phi, lam = zyz_angles(u)
    return [Gate("U3", (q,), (theta, phi, lam))]


def transpile(circuit: Circuit, profile: DeviceProfile) -> Circuit:
    """Rewrite a circuit into the profile's basis gates.

    Single-qubit gates map to basis sequences that reproduce the original
    unitary up to global phase. CNOT endpoints must already respect the
    coupling map; a violation raises RoutingError rather than inserting
    SWAPs.
    """
    if circuit.n_qubits > profile.n_qubits:
        raise ValueError(
            f"circuit has {circuit.n_qubits} qubits but profile "
            f"{profile.name!r} only {profile.n_qubits}"
        )
    basis = profile.basis_gates
    out: list[Gate] = []
    for gate in circuit.gates:
        if gate.kind == "CNOT":
            if "CNOT" not in basis:
                raise ValueError(f"profile {profile.name!r} has no two-qubit basis gate")
            if not profile.coupled(*gate.qubits):
                raise RoutingError(
                    f"CNOT{gate.qubits} not in coupling map of {profile.name!r}; "
                    "routing is unsupported"
                )
            out.append(gate)
            continue
        if gate.kind in basis:
            out.append(gate)
            continue
        q = gate.qubits[0]
        u = gate_matrix(gate)
        if {"RZ", "SX"} <= basis:
            out.extend(_zsx_sequence(q, u))
        elif {"U1", "U3"} <= basis:
            out.extend(_u_sequence(q, gate.kind, gate.angles, u))
        else:
            raise ValueError(
                f"cannot express {gate.kind} in basis {sorted(basis)} "
                f"of {profile.name!r}"
            )
    return Circuit(n_qubits=circuit.n_qubits, gates=tuple(out), layer_count=circuit.layer_count)


# --------------------------------------------------------------------------
# Built-in synthetic device profiles

# Calibration ranges (min, median, max) for the two synthetic device styles.
# Style "a" exposes the RZ/SX/X/CNOT basis; style "b" the U1/U2/U3/CNOT basis.
_CALIB_RANGES = {
    "a": {
        "t1": (38.89, 71.86, 119.14),
        "t2": (14.55, 88.30, 142.49),
        "single": (0.0002, 0.0003, 0.0018),
        "cnot": (0.0068, 0.0101, 0.0199),
        "p01": (0.0186, 0.025, 0.09),
        "p10": (0.0016, 0.0057, 0.0298),
    },
    "b": {
        "t1": (24.11, 73.76, 98.44),
        "t2": (9.60, 79.06, 153.18),
        "single": (0.0005, 0.0010, 0.0029),
        "cnot": (0.0061, 0.0165, 0.0277),
        "p01": (0.0202, 0.0481, 0.2128),
        "p10": (0.0062, 0.0227, 0.2128),
    },
}

BUILTIN_PROFILES = ("linear_native", "synth_a", "synth_b")


def _draw(rng, lo_med_hi) -> float:
    lo, med, hi = lo_med_hi
    # Triangular around the median keeps draws inside the published range.
    return float(rng.triangular(lo, med, hi))


def builtin_profile(name: str, n_qubits: int, depolarizing_p: float = 0.05) -> DeviceProfile:
    """Construct one of the built-in profiles at the requested size.

    ``linear_native`` is an idealized linear-chain device with the full
    rotation basis and uniform two-qubit depolarizing noise. ``synth_a`` and
    ``synth_b`` are synthetic calibrated devices with restricted bases and
    per-qubit T1/T2/gate-error/readout values drawn deterministically from
    the ranges of their hardware archetypes.
    """
    if n_qubits < 2:
        raise ValueError("profiles need at least 2 qubits")
    chain = frozenset((q, q + 1) for q in range(n_qubits - 1))
    if name == "linear_native":
        return DeviceProfile(
            name=name,
            n_qubits=n_qubits,
            basis_gates=frozenset({"RX", "RY", "RZ", "CNOT"}),
            coupling_map=chain,
            noise=DepolarizingNoise(p=check_probability(depolarizing_p)),
        )
    if name not in ("synth_a", "synth_b"):
        raise ValueError(f"unknown builtin profile {name!r}; choose from {BUILTIN_PROFILES}")
    style = name[-1]
    ranges = _CALIB_RANGES[style]
    rng = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(ord(style), n_qubits)))
    t1 = []
    t2 = []
    for _ in range(n_qubits):
        a = _draw(rng, ranges["t1"])
        b = _draw(rng, ranges["t2"])
        t1.append(round(a, 2))
        t2.append(round(min(b, 2.0 * a), 2))
    singles = {
        kind: [round(_draw(rng, ranges["single"]), 6) for _ in range(n_qubits)]
        for kind in (("SX", "X") if style == "a" else ("U2", "U3"))
    }
    zero_kind = "RZ" if style == "a" else "U1"
    gate_errors = {zero_kind: [0.0] * n_qubits, **singles}
    gate_errors["CNOT"] = {
        f"{q}-{q + 1}": round(_draw(rng, ranges["cnot"]), 6) for q in range(n_qubits - 1)
    }
    noise = DeviceNoise(
        t1=tuple(t1),
        t2=tuple(t2),
        gate_errors=gate_errors,
        prob_meas0_prep1=tuple(round(_draw(rng, ranges["p01"]), 6) for _ in range(n_qubits)),
        prob_meas1_prep0=tuple(round(_draw(rng, ranges["p10"]), 6) for _ in range(n_qubits)),
    )
    basis = (
        frozenset({"RZ", "SX", "X", "CNOT"})
        if style == "a"
        else frozenset({"U1", "U2", "U3", "CNOT"})
    )
    return DeviceProfile(
        name=name, n_qubits=n_qubits, basis_gates=basis, coupling_map=chain, noise=noise
    )
