"""Estimator-style front doors.

These follow the scikit-learn protocol (constructor args are plain
hyperparameters, ``fit`` returns self, ``get_params``/``set_params`` round-
trip) without importing scikit-learn, so they clone and compose with that
ecosystem while keeping this package's dependencies to numpy.
"""

from __future__ import annotations

import inspect

import numpy as np

from .datapipe import Dataset, compute_metrics
from .model import ModelConfig
from .qsim import run_circuit
from .shadows import (
    ProbTable,
    SnapshotSet,
    cc_fidelity,
    draw_settings,
    exact_prob_table,
    measure_random_pauli,
    sample_prob_table,
    shadow_fidelity,
)
from .training import (
    TrainConfig,
    predict_records,
    prepare_states,
    train_two_stage,
)
from .validation import check_is_fitted, child_rng


class _ParamsMixin:
    def get_params(self, deep: bool = True) -> dict:
        sig = inspect.signature(type(self).__init__)
        return {
            name: getattr(self, name)
            for name in sig.parameters
            if name not in ("self", "args", "kwargs")
        }

    def set_params(self, **params):
        valid = self.get_params()
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.get_params().items()))
        return f"{type(self).__name__}({args})"


class MultimodalFidelityRegressor(_ParamsMixin):
    """Trainable cross-platform fidelity predictor over a Dataset.

    ``mode`` selects what to train and use at prediction time: the fused
    two-branch network (default, two-stage training) or a single branch
    (one-stage ablations).
    """

    def __init__(
        self,
        dim: int = 64,
        mode: str = "fused",
        fusion: str = "lrbp",
        meas_aggregation: str = "lazy_average",
        conv_widths: tuple = (),
        mlp_widths: tuple = (),
        graph_widths: tuple = (),
        use_batchnorm: bool = True,
        include_noise_suffix: bool = True,
        glimpses: int = 2,
        lr: float = 1e-3,
        finetune_lr_scale: float = 0.1,
        epochs_measurement: int = 60,
        epochs_circuit: int = 60,
        epochs_finetune: int = 40,
        batch_size: int = 32,
        test_fraction: float = 0.2,
        seed: int = 0,
    ):
        self.dim = dim
        self.mode = mode
        self.fusion = fusion
        self.meas_aggregation = meas_aggregation
        self.conv_widths = conv_widths
        self.mlp_widths = mlp_widths
        self.graph_widths = graph_widths
        self.use_batchnorm = use_batchnorm
        self.include_noise_suffix = include_noise_suffix
        self.glimpses = glimpses
        self.lr = lr
        self.finetune_lr_scale = finetune_lr_scale
        self.epochs_measurement = epochs_measurement
        self.epochs_circuit = epochs_circuit
        self.epochs_finetune = epochs_finetune
        self.batch_size = batch_size
        self.test_fraction = test_fraction
        self.seed = seed

    def _train_config(self, n_qubits: int) -> TrainConfig:
        model = ModelConfig(
            n_qubits=n_qubits,
            dim=self.dim,
            meas_aggregation=self.meas_aggregation,
            fusion=self.fusion,
            conv_widths=list(self.conv_widths),
            mlp_widths=list(self.mlp_widths),
            graph_widths=list(self.graph_widths),
            glimpses=self.glimpses,
            use_batchnorm=self.use_batchnorm,
            include_noise_suffix=self.include_noise_suffix,
        )
        return TrainConfig(
            model=model,
            lr_stage1=self.lr,
            lr_stage2=self.lr * self.finetune_lr_scale,
            epochs_measurement=self.epochs_measurement,
            epochs_circuit=self.epochs_circuit,
            epochs_finetune=self.epochs_finetune,
            batch_size=self.batch_size,
            test_fraction=self.test_fraction,
            seed=self.seed,
        )

    def fit(self, dataset: Dataset, y=None):
        if self.mode == "fused":
            stages = ("measurement", "circuit", "finetune")
        elif self.mode == "measurement":
            stages = ("measurement",)
        elif self.mode == "circuit":
            stages = ("circuit",)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        config = self._train_config(dataset.n_qubits)
        self.model_, self.history_ = train_two_stage(dataset, config, stages=stages)
        self.states_ = prepare_states(
            dataset, include_noise_suffix=self.include_noise_suffix
        )
        return self

    def predict(self, dataset: Dataset, records=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        records = dataset.records if records is None else records
        states = prepare_states(
            dataset, include_noise_suffix=self.include_noise_suffix
        )
        return predict_records(self.model_, states, records, mode=self.mode)

    def score(self, dataset: Dataset, records=None) -> float:
        records = dataset.records if records is None else records
        preds = self.predict(dataset, records)
        return compute_metrics(preds, dataset.record_labels(records)).r2


class ShadowFidelityEstimator(_ParamsMixin):
    """Training-free baseline: classical-shadow overlap of snapshot pairs.

    ``predict`` takes a list of (SnapshotSet, SnapshotSet) pairs.
    """

    def __init__(self, include_diagonal: bool = False):
        self.include_diagonal = include_diagonal

    def fit(self, X=None, y=None):
        return self

    def predict(self, pairs) -> np.ndarray:
        return np.array(
            [
                shadow_fidelity(si, sj, include_diagonal=self.include_diagonal)
                for si, sj in pairs
            ]
        )


class CrossCorrelationFidelityEstimator(_ParamsMixin):
    """Training-free baseline on shared-setting probability tables.

    ``predict`` takes a list of (ProbTable, ProbTable) pairs built with
    identical basis settings per pair.
    """

    def __init__(self):
        pass

    def fit(self, X=None, y=None):
        return self

    def predict(self, pairs) -> np.ndarray:
        return np.array([cc_fidelity(ti, tj) for ti, tj in pairs])


# --------------------------------------------------------------------------
# Dataset adapters for the baselines


def dataset_snapshot_pairs(
    dataset: Dataset,
    records=None,
    shots_override: int | None = None,
    seed: int = 0,
) -> list[tuple[SnapshotSet, SnapshotSet]]:
    """Snapshot pairs per record, optionally resampled at a different shot
    count by re-running the exact simulation."""
    records = dataset.records if records is None else records
    if shots_override is None:
        return [
            (dataset.load_snapshots(ki), dataset.load_snapshots(kj))
            for ki, kj in (r.state_keys() for r in records)
        ]
    cache: dict[str, SnapshotSet] = {}
    needed = sorted({k for r in records for k in r.state_keys()})
    for key in needed:
        cid, l_idx = key.rsplit("_l", 1)
        l_idx = int(l_idx)
        rho = run_circuit(dataset.circuits[cid], dataset.level_profile(l_idx))
        cache[key] = measure_random_pauli(
            rho, shots_override, child_rng(seed, 8, dataset.circuit_ids.index(cid), l_idx)
        )
    return [(cache[ki], cache[kj]) for ki, kj in (r.state_keys() for r in records)]


def dataset_prob_table_pairs(
    dataset: Dataset,
    records=None,
    n_settings: int = 100,
    shots_per_setting: int | None = None,
    seed: int = 0,
) -> list[tuple[ProbTable, ProbTable]]:
    """Shared-setting probability tables per record for the cross-correlation
    baseline; ``shots_per_setting=None`` yields exact distributions."""
    records = dataset.records if records is None else records
    state_rho = {}
    needed = sorted({k for r in records for k in r.state_keys()})
    for key in needed:
        cid, l_idx = key.rsplit("_l", 1)
        state_rho[key] = run_circuit(
            dataset.circuits[cid], dataset.level_profile(int(l_idx))
        )
    pairs = []
    for r_idx, rec in enumerate(records):
        ki, kj = rec.state_keys()
        settings = draw_settings(dataset.n_qubits, n_settings, child_rng(seed, 9, r_idx, 0))
        if shots_per_setting is None:
            ti = exact_prob_table(state_rho[ki], settings)
            tj = exact_prob_table(state_rho[kj], settings)
        else:
            ti = sample_prob_table(
                state_rho[ki], settings, shots_per_setting, child_rng(seed, 9, r_idx, 1)
            )
            tj = sample_prob_table(
                state_rho[kj], settings, shots_per_setting, child_rng(seed, 9, r_idx, 2)
            )
        pairs.append((ti, tj))
    return pairs
