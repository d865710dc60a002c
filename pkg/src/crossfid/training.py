"""Two-stage training of the multimodal fidelity model.

Stage one trains each branch alone, feeding its representation straight into
the cosine head; stage two fine-tunes the whole network plus a freshly
initialized fusion module at a ten-times smaller learning rate. All
randomness derives from one seed, so a rerun reproduces the loss curve
bit for bit in single-threaded mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .datapipe import Dataset, compute_metrics, split_by_circuit, split_records
from .model import (
    FidelityModel,
    ModelConfig,
    build_measurement_features,
    fit_purity_head,
    graph_tensors,
    purity_head,
)
from .nn import Adam, load_checkpoint, save_checkpoint
from .validation import child_rng


@dataclass
class TrainConfig:
    model: ModelConfig
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4  # fine-tuning runs 10x slower by default
    epochs_measurement: int = 60
    epochs_circuit: int = 60
    epochs_finetune: int = 40
    batch_size: int = 32
    test_fraction: float = 0.2
    seed: int = 0
    freeze_branches: bool = False
    # Fraction of measurement records fed per training step; drawing a fresh
    # random subset each step regularizes the measurement branch. Evaluation
    # always uses every record.
    record_subsample: float = 1.0

    def to_json(self) -> dict:
        out = {k: v for k, v in vars(self).items() if k != "model"}
        out["model"] = self.model.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        model = ModelConfig.from_json(obj.pop("model"))
        return cls(model=model, **obj)


@dataclass
class StateData:
    features: np.ndarray  # (M, F)
    graph: tuple[Tensor, Tensor]  # constant (aggregation, node features)
    purity: float


def prepare_states(dataset: Dataset, include_noise_suffix: bool = True) -> dict[str, StateData]:
    """Load every (circuit, level) state into trainer-ready arrays."""
    states: dict[str, StateData] = {}
    for cid in dataset.circuit_ids:
        for l_idx in range(len(dataset.levels)):
            key = f"{cid}_l{l_idx}"
            snaps = dataset.load_snapshots(key)
            profile_l = dataset.level_profile(l_idx)
            feats = build_measurement_features(
                snaps, profile_l, include_noise_suffix=include_noise_suffix
            )
            dag = dataset.load_dag(key)
            states[key] = StateData(
                features=feats,
                graph=graph_tensors(dag),
                purity=dataset.state_purity(key),
            )
    return states


def resolve_model_config(config: ModelConfig, states: dict[str, StateData]) -> ModelConfig:
    """Fill in the input feature sizes from assembled data."""
    any_state = next(iter(states.values()))
    return replace(
        config,
        meas_in_features=int(any_state.features.shape[1]),
        graph_in_features=int(any_state.graph[1].shape[1]),
    )


def _batch_inputs(states, records, idx, subsample_rng=None, record_fraction=1.0):
    keys_i = [records[k].state_keys()[0] for k in idx]
    keys_j = [records[k].state_keys()[1] for k in idx]

    def stack(keys):
        rows = [states[k].features for k in keys]
        if subsample_rng is not None and record_fraction < 1.0:
            m = rows[0].shape[0]
            take = max(1, int(round(m * record_fraction)))
            rows = [
                r[subsample_rng.choice(m, size=take, replace=False)] for r in rows
            ]
        return Tensor(np.stack(rows))

    graphs_i = [states[k].graph for k in keys_i]
    graphs_j = [states[k].graph for k in keys_j]
    return stack(keys_i), graphs_i, stack(keys_j), graphs_j


def predict_records(model: FidelityModel, states, records, mode: str = "fused",
                    batch_size: int = 64) -> np.ndarray:
    """Inference-mode predictions for a record list."""
    was_training = model.training
    model.eval()
    preds = []
    with ag.no_grad():
        for start in range(0, len(records), batch_size):
            idx = list(range(start, min(start + batch_size, len(records))))
            meas_i, graphs_i, meas_j, graphs_j = _batch_inputs(states, records, idx)
            out = model.predict_pairs(meas_i, graphs_i, meas_j, graphs_j, mode=mode)
            preds.append(out.data.reshape(-1))
    model.train(was_training)
    return np.concatenate(preds)


def encode_states(model: FidelityModel, states, mode: str = "fused",
                  batch_size: int = 64) -> dict[str, np.ndarray]:
    """Representation vector per state key (inference mode)."""
    model.eval()
    keys = list(states)
    out: dict[str, np.ndarray] = {}
    with ag.no_grad():
        for start in range(0, len(keys), batch_size):
            chunk = keys[start : start + batch_size]
            meas = Tensor(np.stack([states[k].features for k in chunk]))
            graphs = [states[k].graph for k in chunk]
            reps = model.encode(meas, graphs, mode=mode)
            for row, key in enumerate(chunk):
                out[key] = reps.data[row].copy()
    return out


def _run_stage(
    model: FidelityModel,
    states,
    train_records,
    test_records,
    labels_train: np.ndarray,
    labels_test: np.ndarray,
    mode: str,
    params,
    lr: float,
    epochs: int,
    batch_size: int,
    shuffle_rng,
    stage_name: str,
    history: list[dict],
    record_fraction: float = 1.0,
) -> None:
    optimizer = Adam(params, lr=lr)
    n = len(train_records)
    for epoch in range(epochs):
        model.train()
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size].tolist()
            meas_i, graphs_i, meas_j, graphs_j = _batch_inputs(
                states, train_records, idx,
                subsample_rng=shuffle_rng, record_fraction=record_fraction,
            )
            preds = model.predict_pairs(meas_i, graphs_i, meas_j, graphs_j, mode=mode)
            loss = ag.mse_loss(preds, Tensor(labels_train[idx]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        test_preds = predict_records(model, states, test_records, mode=mode)
        report = compute_metrics(test_preds, labels_test)
        history.append(
            {
                "stage": stage_name,
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "test_mse": report.mse,
                "test_r2": report.r2,
            }
        )


def train_two_stage(
    dataset: Dataset,
    config: TrainConfig,
    stages: tuple[str, ...] = ("measurement", "circuit", "finetune"),
    model: FidelityModel | None = None,
) -> tuple[FidelityModel, list[dict]]:
    """Train the branches separately, then fine-tune the fused network.

    Returns the model and per-epoch history rows. The dataset is split by
    circuit layout; test circuits never contribute training pairs.
    """
    states = prepare_states(dataset, include_noise_suffix=config.model.include_noise_suffix)
    model_config = resolve_model_config(config.model, states)
    train_ids, test_ids = split_by_circuit(
        dataset.circuit_ids, config.test_fraction, config.seed
    )
    train_records, test_records = split_records(dataset.records, train_ids, test_ids)
    if not train_records or not test_records:
        raise ValueError("dataset too small for the requested split")
    labels_train = dataset.record_labels(train_records)
    labels_test = dataset.record_labels(test_records)
    if model is None:
        model = FidelityModel(model_config, rng=child_rng(config.seed, 4))
    history: list[dict] = []

    stage_plan = {
        "measurement": (
            "measurement", model.measurement.parameters(), config.lr_stage1,
            config.epochs_measurement, 5,
        ),
        "circuit": (
            "circuit", model.circuit.parameters(), config.lr_stage1,
            config.epochs_circuit, 6,
        ),
        "finetune": (
            "fused",
            model.fusion.parameters()
            if config.freeze_branches
            else model.parameters(),
            config.lr_stage2, config.epochs_finetune, 7,
        ),
    }
    for stage in stages:
        mode, params, lr, epochs, stream = stage_plan[stage]
        _run_stage(
            model, states, train_records, test_records, labels_train, labels_test,
            mode=mode, params=params, lr=lr, epochs=epochs,
            batch_size=config.batch_size, shuffle_rng=child_rng(config.seed, stream),
            stage_name=stage, history=history,
            record_fraction=config.record_subsample if mode != "circuit" else 1.0,
        )
    return model, history


def save_history(path, history: list[dict]) -> None:
    from .datapipe import fmt

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "test_mse", "test_r2"])
        for row in history:
            writer.writerow(
                [row["epoch"], fmt(row["train_loss"]), fmt(row["test_mse"]), fmt(row["test_r2"])]
            )


def save_model(directory, model: FidelityModel, extra: dict | None = None) -> None:
    manifest = {"config": model.config.to_json()}
    if extra:
        manifest.update(extra)
    save_checkpoint(directory, model.state_arrays(), extra=manifest)


def load_model(directory) -> FidelityModel:
    arrays, manifest = load_checkpoint(directory)
    config = ModelConfig.from_json(manifest["config"])
    model = FidelityModel(config, rng=0)
    model.load_state_arrays(arrays)
    return model


def fit_purity_probe(
    model: FidelityModel,
    states: dict[str, StateData],
    train_keys,
    test_keys,
    mode: str = "fused",
) -> tuple[np.ndarray, float, float]:
    """Least-squares purity readout on frozen representations.

    Returns (weights, train MSE, test MSE) against the exact purities.
    """
    reps = encode_states(model, states, mode=mode)
    x_train = np.stack([reps[k] for k in train_keys])
    y_train = np.array([states[k].purity for k in train_keys])
    x_test = np.stack([reps[k] for k in test_keys])
    y_test = np.array([states[k].purity for k in test_keys])
    w = fit_purity_head(x_train, y_train)
    train_mse = float(np.mean((purity_head(x_train, w) - y_train) ** 2))
    test_mse = float(np.mean((purity_head(x_test, w) - y_test) ** 2))
    return w, train_mse, test_mse
