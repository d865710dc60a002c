"""The multimodal fidelity network.

One Siamese encoder maps a device's data (random-measurement records and the
noise-annotated circuit graph) to a representation vector; the predicted
cross-platform fidelity of two devices is the cosine similarity of their
representations. The measurement branch is a permutation-invariant shared-
kernel network, the circuit branch a graph-convolution network, and the two
are combined by a configurable fusion module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .circuits import DepolarizingNoise, DeviceNoise, DeviceProfile
from .dag import CircuitDag
from .nn import MLP, BatchNorm1d, Conv1d, Module, Parameter, _kaiming_uniform
from .shadows import SnapshotSet, _LOCAL_SNAPSHOTS
from .validation import as_rng

AGGREGATION_MODES = ("lazy_average", "early_average")
FUSION_MODES = ("sum", "concat", "lrbp", "attention")
BRANCH_MODES = ("measurement", "circuit", "fused")


@dataclass
class ModelConfig:
    n_qubits: int
    dim: int = 256
    meas_aggregation: str = "lazy_average"
    fusion: str = "lrbp"
    conv_widths: list[int] = field(default_factory=list)
    mlp_widths: list[int] = field(default_factory=list)
    graph_widths: list[int] = field(default_factory=list)
    lrbp_rank: int = 0  # 0 means: equal to dim
    glimpses: int = 2
    use_batchnorm: bool = True
    include_noise_suffix: bool = True
    graph_activation: str = "tanh"  # bounded activation keeps cosine grads tame
    meas_in_features: int = 0  # resolved from data when 0
    graph_in_features: int = 0

    def __post_init__(self):
        if not self.conv_widths:
            self.conv_widths = [64, 128, self.dim]
        if not self.mlp_widths:
            self.mlp_widths = [self.dim, self.dim]
        if not self.graph_widths:
            self.graph_widths = [64, 128, self.dim]
        if self.meas_aggregation not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation {self.meas_aggregation!r}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.dim <= 0 or any(
            w <= 0 for w in self.conv_widths + self.mlp_widths + self.graph_widths
        ):
            raise ValueError("all widths must be positive")
        if self.mlp_widths[-1] != self.dim:
            raise ValueError(
                f"final MLP width {self.mlp_widths[-1]} must equal dim {self.dim}"
            )
        if self.lrbp_rank < 0 or self.lrbp_rank > self.dim:
            raise ValueError("lrbp_rank must lie in [0, dim]")
        if self.glimpses < 1:
            raise ValueError("need at least one glimpse")
        if self.graph_activation not in ("relu", "tanh"):
            raise ValueError(f"unknown graph activation {self.graph_activation!r}")

    @property
    def rank(self) -> int:
        return self.lrbp_rank or self.dim

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "dim": self.dim,
            "meas_aggregation": self.meas_aggregation,
            "fusion": self.fusion,
            "conv_widths": list(self.conv_widths),
            "mlp_widths": list(self.mlp_widths),
            "graph_widths": list(self.graph_widths),
            "lrbp_rank": self.lrbp_rank,
            "glimpses": self.glimpses,
            "use_batchnorm": self.use_batchnorm,
            "include_noise_suffix": self.include_noise_suffix,
            "graph_activation": self.graph_activation,
            "meas_in_features": self.meas_in_features,
            "graph_in_features": self.graph_in_features,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


# --------------------------------------------------------------------------
# Measurement features

_FLAT_SNAPSHOTS = np.empty((6, 8))
for _code in range(6):
    _mat = _LOCAL_SNAPSHOTS.reshape(6, 4)[_code]
    _FLAT_SNAPSHOTS[_code, 0::2] = _mat.real
    _FLAT_SNAPSHOTS[_code, 1::2] = _mat.imag


def noise_suffix(profile: DeviceProfile | None) -> np.ndarray:
    """Per-record noise descriptor appended to the measurement features."""
    if profile is None:
        return np.zeros(0)
    noise = profile.noise
    if isinstance(noise, DepolarizingNoise):
        return np.array([noise.p])
    assert isinstance(noise, DeviceNoise)
    from .dag import TIME_SCALE_US

    cols = []
    for q in range(profile.n_qubits):
        t1 = 0.0 if noise.t1[q] is None else noise.t1[q] / TIME_SCALE_US
        t2 = 0.0 if noise.t2[q] is None else noise.t2[q] / TIME_SCALE_US
        cols.extend([t1, t2, noise.prob_meas0_prep1[q], noise.prob_meas1_prep0[q]])
    return np.array(cols)


def build_measurement_features(
    snaps: SnapshotSet,
    profile: DeviceProfile | None = None,
    include_noise_suffix: bool = True,
) -> np.ndarray:
    """(M, F) feature matrix: per record, each qubit's 2x2 local snapshot
    flattened to 8 reals (real/imag interleaved), qubits concatenated, plus an
    optional noise-parameter suffix. F = 8 * n_qubits (+ suffix length)."""
    if snaps.n_records == 0:
        raise ValueError("empty snapshot set")
    base = _FLAT_SNAPSHOTS[snaps.codes()].reshape(snaps.n_records, 8 * snaps.n_qubits)
    if not include_noise_suffix or profile is None:
        return base
    suffix = noise_suffix(profile)
    if suffix.size == 0:
        return base
    return np.concatenate(
        [base, np.broadcast_to(suffix, (snaps.n_records, suffix.size))], axis=1
    )


# --------------------------------------------------------------------------
# Branches


class MeasurementBranch(Module):
    """Shared-kernel record encoder with order-insensitive pooling.

    In lazy mode every record runs through the shared width-1 conv blocks
    before the mean over records; permuting records leaves the output
    bit-identical. Early mode averages the raw records first and sends the
    mean through layers of the same shapes.
    """

    def __init__(self, config: ModelConfig, rng=None):
        rng = as_rng(rng)
        self.mode = config.meas_aggregation
        widths = [config.meas_in_features] + list(config.conv_widths)
        self.convs = [Conv1d(widths[i], widths[i + 1], rng=rng) for i in range(len(widths) - 1)]
        self.norms = (
            [BatchNorm1d(w) for w in config.conv_widths] if config.use_batchnorm else []
        )
        self.mlp = MLP([config.conv_widths[-1]] + list(config.mlp_widths), rng=rng)

    def _blocks(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs):
            x = ag.relu(conv(x))
            if self.norms:
                x = self.norms[i](x)
        return x

    def forward(self, features: Tensor) -> Tensor:
        """features: (B, M, F) constant tensor -> (B, dim) representations."""
        b, m, f = features.shape
        if m == 0:
            raise ValueError("need at least one measurement record")
        if self.mode == "lazy_average":
            z = self._blocks(features.reshape(b * m, f))
            pooled = ag.mean_pool(z.reshape(b, m, z.shape[1]), axis=1)
        else:
            pooled = self._blocks(ag.mean_pool(features, axis=1))
        return self.mlp(pooled)


class CircuitBranch(Module):
    """Graph-convolution encoder over the circuit DAG.

    Each round replaces a node's features with
    relu(W . mean({in-neighbors} + {self}) + b); node features are then
    mean-pooled and projected to the representation size.
    """

    def __init__(self, config: ModelConfig, rng=None):
        rng = as_rng(rng)
        widths = [config.graph_in_features] + list(config.graph_widths)
        self.weights = [
            Parameter(_kaiming_uniform(rng, widths[i], (widths[i], widths[i + 1])))
            for i in range(len(widths) - 1)
        ]
        self.biases = [Parameter(np.zeros(w)) for w in config.graph_widths]
        self.activation = ag.relu if config.graph_activation == "relu" else ag.tanh
        self.mlp = MLP([config.graph_widths[-1]] + list(config.mlp_widths), rng=rng)

    def node_embeddings(self, graph: tuple[Tensor, Tensor]) -> Tensor:
        agg, h = graph
        for w, b in zip(self.weights, self.biases):
            h = self.activation((agg @ h) @ w + b)
        return h

    def forward(self, graphs) -> Tensor:
        """graphs: list of (aggregation matrix, node features) -> (B, dim)."""
        if not graphs:
            raise ValueError("empty graph batch")
        pooled = []
        for graph in graphs:
            h = self.node_embeddings(graph)
            pooled.append(ag.mean_pool(h, axis=0).reshape(1, h.shape[1]))
        return self.mlp(ag.concat(pooled, axis=0))


def graph_tensors(dag: CircuitDag) -> tuple[Tensor, Tensor]:
    """Constant tensors (aggregation matrix, node features) for one DAG."""
    if dag.n_nodes == 0:
        raise ValueError("empty node list")
    return Tensor(dag.mean_aggregation_matrix()), Tensor(dag.features)


# --------------------------------------------------------------------------
# Fusion

class SumFusion(Module):
    def __init__(self, config: ModelConfig, rng=None):
        rng = as_rng(rng)
        d = config.dim
        self.w1 = Parameter(_kaiming_uniform(rng, d, (d, d)))
        self.w2 = Parameter(_kaiming_uniform(rng, d, (d, d)))
        self.proj = Parameter(_kaiming_uniform(rng, d, (d, d)))

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        return (x @ self.w1 + y @ self.w2) @ self.proj


class ConcatFusion(Module):
    def __init__(self, config: ModelConfig, rng=None):
        d = config.dim
        self.mlp = MLP([2 * d, 2 * d, d], rng=as_rng(rng))

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        return self.mlp(ag.concat([x, y], axis=1))


class LrbpFusion(Module):
    """Low-rank bilinear pooling: project both modalities to a shared rank
    space, gate elementwise through tanh, and project to the output size."""

    def __init__(self, config: ModelConfig, rng=None):
        rng = as_rng(rng)
        d, r = config.dim, config.rank
        self.a = Parameter(_kaiming_uniform(rng, d, (d, r)))
        self.b = Parameter(_kaiming_uniform(rng, d, (d, r)))
        self.proj = Parameter(_kaiming_uniform(rng, r, (r, d)))

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        return (ag.tanh(x @ self.a) * ag.tanh(y @ self.b)) @ self.proj


class AttentionFusion(Module):
    """Glimpse attention over circuit node features, conditioned on the
    measurement representation, followed by low-rank bilinear pooling."""

    def __init__(self, config: ModelConfig, rng=None):
        rng = as_rng(rng)
        d, r, g = config.dim, config.rank, config.glimpses
        node_d = config.graph_widths[-1]
        self.key = Parameter(_kaiming_uniform(rng, d, (d, r)))
        self.node_key = Parameter(_kaiming_uniform(rng, node_d, (node_d, r)))
        self.query = Parameter(_kaiming_uniform(rng, r, (r, g)))
        self.a = Parameter(_kaiming_uniform(rng, d, (d, r)))
        self.b = Parameter(_kaiming_uniform(rng, g * node_d, (g * node_d, r)))
        self.proj = Parameter(_kaiming_uniform(rng, r, (r, d)))
        self.glimpses = g

    def forward(self, x: Tensor, node_sets: list[Tensor]) -> Tensor:
        attended = [
            self._attend_one(_row(x, i), nodes) for i, nodes in enumerate(node_sets)
        ]
        y = ag.concat(attended, axis=0)
        return (ag.tanh(x @ self.a) * ag.tanh(y @ self.b)) @ self.proj

    def _attend_one(self, x_row: Tensor, nodes: Tensor) -> Tensor:
        scores = (ag.tanh(x_row @ self.key) * ag.tanh(nodes @ self.node_key)) @ self.query
        weights = ag.softmax(scores, axis=0)  # (S, G)
        glimpsed = weights.transpose() @ nodes  # (G, node_d)
        return glimpsed.reshape(1, self.glimpses * nodes.shape[1])


class _RowSelect(ag.Op):
    @staticmethod
    def forward(ctx, a, index):
        return Tensor(a.data[index : index + 1].copy())

    @staticmethod
    def backward(ctx, grad):
        (a,) = ctx.inputs
        index = ctx.kwargs["index"]
        out = np.zeros_like(a.data)
        out[index : index + 1] = grad
        return (out,)


def _row(x: Tensor, index: int) -> Tensor:
    return _RowSelect.apply(x, index=index)


def build_fusion(config: ModelConfig, rng=None) -> Module:
    cls = {
        "sum": SumFusion,
        "concat": ConcatFusion,
        "lrbp": LrbpFusion,
        "attention": AttentionFusion,
    }[config.fusion]
    return cls(config, rng=rng)


# --------------------------------------------------------------------------
# Heads


def fidelity_head(v_i: Tensor, v_j: Tensor) -> Tensor:
    """Cosine similarity of two representations; raw value in [-1, 1]."""
    return ag.cosine_similarity(v_i, v_j)


def purity_head(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Linear readout w^T v for purity prediction; v is (D,) or (B, D)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    if v.shape[-1] != w.size:
        raise ValueError(f"representation dim {v.shape[-1]} != head dim {w.size}")
    return v @ w


def fit_purity_head(reps: np.ndarray, purities: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Least-squares fit of the linear purity readout on frozen representations."""
    reps = np.asarray(reps, dtype=float)
    y = np.asarray(purities, dtype=float)
    gram = reps.T @ reps + ridge * np.eye(reps.shape[1])
    return np.linalg.solve(gram, reps.T @ y)


def kdevice_fidelity(reps) -> float:
    """Mean cosine similarity over all unordered representation pairs."""
    vs = [np.asarray(v, dtype=float).reshape(-1) for v in reps]
    if len(vs) < 2:
        raise ValueError("need at least two devices")
    total = 0.0
    count = 0
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            ni = math.sqrt(float(vs[i] @ vs[i]))
            nj = math.sqrt(float(vs[j] @ vs[j]))
            total += float(vs[i] @ vs[j]) / (ni * nj + ag.COSINE_EPS)
            count += 1
    return total / count


# --------------------------------------------------------------------------
# Full model


class FidelityModel(Module):
    """Siamese multimodal encoder plus cosine fidelity head.

    The same branch parameters process both devices' inputs; prediction for a
    pair is the cosine of the two fused representations.
    """

    def __init__(self, config: ModelConfig, rng=None):
        if config.meas_in_features <= 0 or config.graph_in_features <= 0:
            raise ValueError("config input feature sizes must be resolved first")
        rng = as_rng(rng)
        self.config = config
        self.measurement = MeasurementBranch(config, rng=rng)
        self.circuit = CircuitBranch(config, rng=rng)
        self.fusion = build_fusion(config, rng=rng)

    def encode(self, meas: Tensor | None, graphs, mode: str = "fused") -> Tensor:
        """Representations (B, dim) of one device batch.

        ``meas`` is a (B, M, F) constant tensor; ``graphs`` a list of
        (aggregation, features) tuples. Single-branch modes ignore the other
        modality.
        """
        if mode not in BRANCH_MODES:
            raise ValueError(f"unknown branch mode {mode!r}")
        if mode == "measurement":
            return self.measurement(meas)
        if mode == "circuit":
            return self.circuit(graphs)
        x = self.measurement(meas)
        if isinstance(self.fusion, AttentionFusion):
            node_sets = [self.circuit.node_embeddings(g) for g in graphs]
            return self.fusion(x, node_sets)
        y = self.circuit(graphs)
        return self.fusion(x, y)

    def predict_pairs(self, meas_i, graphs_i, meas_j, graphs_j, mode: str = "fused") -> Tensor:
        """Fidelity predictions for B pairs.

        Both sides run through one joint forward pass so batch statistics are
        shared, then the representation block is split back in half.
        """
        b = len(graphs_i)
        meas = None
        if mode != "circuit":
            meas = Tensor(np.concatenate([meas_i.data, meas_j.data], axis=0))
        reps = self.encode(meas, list(graphs_i) + list(graphs_j), mode=mode)
        v_i = ag.row_slice(reps, 0, b)
        v_j = ag.row_slice(reps, b, 2 * b)
        return fidelity_head(v_i, v_j)
