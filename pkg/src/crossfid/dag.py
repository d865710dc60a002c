"""Encoding of a (transpiled) circuit plus its device profile as a directed
acyclic graph with per-node feature vectors.

Nodes are gates plus one INPUT and one OUTPUT marker per wire; edges follow
execution order along each wire. A CNOT contributes a single node sitting on
both wires. Node features concatenate a gate-type one-hot over the global
gate vocabulary, a noise block whose layout depends on the profile's noise
model, a qubit one-hot (multi-hot for CNOT), and the node index normalized by
the node count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .circuits import (
    GATE_KINDS,
    MARKER_KINDS,
    Circuit,
    DepolarizingNoise,
    DeviceNoise,
    DeviceProfile,
)

NODE_VOCABULARY = GATE_KINDS + MARKER_KINDS  # one global table for all profiles

# T1/T2 are scaled into [0, 1] by a fixed reference time in microseconds.
TIME_SCALE_US = 150.0


@dataclass(frozen=True)
class CircuitDag:
    features: np.ndarray  # (n_nodes, feature_dim) float64
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=float)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edges", tuple((int(s), int(d)) for s, d in self.edges))
        n = feats.shape[0]
        for s, d in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise ValueError(f"edge ({s},{d}) out of range for {n} nodes")

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def in_neighbors(self) -> list[list[int]]:
        ins: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for s, d in self.edges:
            ins[d].append(s)
        return ins

    def topological_order(self) -> list[int]:
        """Kahn traversal; raises if the graph has a cycle."""
        indeg = [0] * self.n_nodes
        outs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for s, d in self.edges:
            indeg[d] += 1
            outs[s].append(d)
        queue = [v for v in range(self.n_nodes) if indeg[v] == 0]
        order = []
        while queue:
            v = queue.pop(0)
            order.append(v)
            for w in outs[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if len(order) != self.n_nodes:
            raise ValueError("graph contains a cycle")
        return order

    def mean_aggregation_matrix(self) -> np.ndarray:
        """Row-normalized operator averaging each node with its in-neighbors."""
        n = self.n_nodes
        mat = np.eye(n)
        for s, d in self.edges:
            mat[d, s] = 1.0
        return mat / mat.sum(axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {
            "nodes": [[float(v) for v in row] for row in self.features],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CircuitDag":
        return cls(
            features=np.asarray(obj["nodes"], dtype=float),
            edges=tuple(tuple(e) for e in obj["edges"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "CircuitDag":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def noise_block_length(profile: DeviceProfile) -> int:
    """Depolarizing profiles carry [p]; calibrated devices carry
    [t1, t2, gate error, prob_meas0_prep1, prob_meas1_prep0]."""
    return 1 if isinstance(profile.noise, DepolarizingNoise) else 5


def feature_dim(n_qubits: int, profile: DeviceProfile) -> int:
    return len(NODE_VOCABULARY) + noise_block_length(profile) + n_qubits + 1


def _noise_block(kind: str, qubits: tuple[int, ...], profile: DeviceProfile) -> list[float]:
    noise = profile.noise
    if isinstance(noise, DepolarizingNoise):
        return [noise.p if kind == "CNOT" else 0.0]
    assert isinstance(noise, DeviceNoise)
    block = [0.0] * 5
    if kind in MARKER_KINDS:
        if kind == "OUTPUT":
            q = qubits[0]
            block[3] = float(noise.prob_meas0_prep1[q])
            block[4] = float(noise.prob_meas1_prep0[q])
        return block
    t1s = [noise.t1[q] for q in qubits]
    t2s = [noise.t2[q] for q in qubits]
    if all(v is not None for v in t1s):
        block[0] = float(np.mean(t1s)) / TIME_SCALE_US
    if all(v is not None for v in t2s):
        block[1] = float(np.mean(t2s)) / TIME_SCALE_US
    if kind == "CNOT":
        block[2] = noise.cnot_error(*qubits)
    else:
        block[2] = noise.single_error(kind, qubits[0])
    return block


def node_feature(
    kind: str,
    qubits: tuple[int, ...],
    index: int,
    n_nodes: int,
    n_qubits: int,
    profile: DeviceProfile,
) -> np.ndarray:
    if kind not in NODE_VOCABULARY:
        raise ValueError(f"unknown node kind {kind!r}")
    one_hot = [0.0] * len(NODE_VOCABULARY)
    one_hot[NODE_VOCABULARY.index(kind)] = 1.0
    qubit_hot = [0.0] * n_qubits
    for q in qubits:
        qubit_hot[q] = 1.0
    return np.array(
        one_hot + _noise_block(kind, qubits, profile) + qubit_hot + [index / n_nodes],
        dtype=float,
    )


def circuit_to_dag(circuit: Circuit, profile: DeviceProfile) -> CircuitDag:
    """Build the wire-ordered gate graph of a circuit already in the
    profile's basis.

    Node ids: INPUT markers first (one per wire), then gates in circuit
    order, then OUTPUT markers. Node count is always gate count + 2 * n_qubits.
    """
    n = circuit.n_qubits
    for gate in circuit.gates:
        if gate.kind not in profile.basis_gates:
            raise ValueError(
                f"gate {gate.kind} outside basis {sorted(profile.basis_gates)}; "
                "transpile the circuit first"
            )
    n_nodes = len(circuit.gates) + 2 * n
    specs: list[tuple[str, tuple[int, ...]]] = [("INPUT", (q,)) for q in range(n)]
    edges: list[tuple[int, int]] = []
    last_on_wire = list(range(n))  # INPUT node ids
    for g_idx, gate in enumerate(circuit.gates):
        node_id = n + g_idx
        specs.append((gate.kind, gate.qubits))
        for q in gate.qubits:
            edges.append((last_on_wire[q], node_id))
            last_on_wire[q] = node_id
    for q in range(n):
        node_id = n + len(circuit.gates) + q
        specs.append(("OUTPUT", (q,)))
        edges.append((last_on_wire[q], node_id))
    features = np.stack(
        [
            node_feature(kind, qubits, idx, n_nodes, n, profile)
            for idx, (kind, qubits) in enumerate(specs)
        ]
    )
    return CircuitDag(features=features, edges=tuple(edges))
