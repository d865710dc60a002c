import json

import numpy as np
import pytest

from crossfid.circuits import builtin_profile
from crossfid.datapipe import (
    Dataset,
    build_dataset,
    compute_metrics,
    export_representations,
    fmt,
    split_by_circuit,
    split_records,
)
from crossfid.errors import ResourceLimitError
from crossfid.qsim import cross_fidelity, run_circuit
from crossfid.training import TrainConfig, train_two_stage
from crossfid.model import ModelConfig


# --------------------------------------------------------------------------
# metrics


def test_metrics_perfect_predictions():
    report = compute_metrics([0.2, 0.5, 0.9], [0.2, 0.5, 0.9])
    assert report.mse == 0.0
    assert report.r2 == 1.0
    assert report.rmse == 0.0
    assert report.count == 3


def test_metrics_mean_predictor_has_zero_r2():
    labels = np.array([0.4, 0.6, 0.8])
    preds = np.full(3, labels.mean())
    assert compute_metrics(preds, labels).r2 == pytest.approx(0.0, abs=1e-12)


def test_metrics_hand_case():
    # hand arithmetic oracle: mse = (0.01+0.01)/2, rmse = ((0.1/1)^2+(0.1/0.5)^2)/2
    report = compute_metrics([0.9, 0.6], [1.0, 0.5])
    assert report.mse == pytest.approx(0.01, abs=1e-15)
    assert report.rmse == pytest.approx(0.025, abs=1e-15)


def test_metrics_error_conditions():
    with pytest.raises(ValueError):
        compute_metrics([0.5], [0.5, 0.6])
    with pytest.raises(ValueError):
        compute_metrics([], [])
    with pytest.raises(ValueError):
        compute_metrics([0.1, 0.2], [0.5, 0.5])  # zero label variance
    with pytest.raises(ValueError):
        compute_metrics([0.1, 0.2], [0.0, 0.5])  # zero label for rmse


# --------------------------------------------------------------------------
# dataset construction


def test_record_count_formula(tiny_dataset):
    # 6 circuits x C(3,2) level pairs
    assert len(tiny_dataset.records) == 6 * 3
    assert len(tiny_dataset.circuit_ids) == 6
    assert len(tiny_dataset.levels) == 3


def test_single_circuit_two_levels_single_pair(tmp_path):
    ds = build_dataset(
        tmp_path / "mini",
        n_qubits=2, n_circuits=1, noise_levels=2, m_shots=10, seed=3, layers=2,
    )
    assert len(ds.records) == 1


def test_labels_lie_in_unit_interval(tiny_dataset):
    labels = tiny_dataset.record_labels()
    assert (labels >= 0).all() and (labels <= 1).all()


def test_labels_reproducible_from_stored_circuit_and_profile(tiny_dataset):
    rec = tiny_dataset.records[4]
    circ = tiny_dataset.circuits[rec.circuit_id]
    rho_i = run_circuit(circ, tiny_dataset.level_profile(rec.level_i))
    rho_j = run_circuit(circ, tiny_dataset.level_profile(rec.level_j))
    recomputed = cross_fidelity(rho_i, rho_j)
    assert recomputed == pytest.approx(
        tiny_dataset.labels[rec.record_id]["fidelity"], abs=1e-10
    )
    pur = tiny_dataset.labels[rec.record_id]
    from crossfid.qsim import purity

    assert purity(rho_i) == pytest.approx(pur["purity_i"], abs=1e-10)
    assert purity(rho_j) == pytest.approx(pur["purity_j"], abs=1e-10)


def test_same_seed_reproduces_directory_byte_for_byte(tmp_path):
    kw = dict(n_qubits=2, n_circuits=3, noise_levels=2, m_shots=25, seed=9, layers=2)
    a = build_dataset(tmp_path / "a", **kw)
    b = build_dataset(tmp_path / "b", **kw)
    assert a.manifest["files"] == b.manifest["files"]
    for rel in a.manifest["files"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_threaded_build_matches_serial(tmp_path):
    kw = dict(n_qubits=2, n_circuits=4, noise_levels=2, m_shots=20, seed=13, layers=2)
    serial = build_dataset(tmp_path / "s", **kw, threads=1)
    threaded = build_dataset(tmp_path / "t", **kw, threads=3)
    assert serial.manifest["files"] == threaded.manifest["files"]


def test_verify_detects_corruption(tmp_path):
    ds = build_dataset(
        tmp_path / "v", n_qubits=2, n_circuits=2, noise_levels=2, m_shots=10,
        seed=1, layers=2,
    )
    ds.verify()
    target = next(iter(ds.manifest["files"]))
    path = tmp_path / "v" / target
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(ValueError, match="hash mismatch"):
        Dataset(tmp_path / "v", verify=True)


def test_build_rejects_bad_arguments(tmp_path):
    with pytest.raises(ResourceLimitError):
        build_dataset(tmp_path / "x", n_qubits=11, n_circuits=1, noise_levels=2,
                      m_shots=5, seed=0)
    with pytest.raises(ValueError):
        build_dataset(tmp_path / "y", n_qubits=2, n_circuits=1, noise_levels=1,
                      m_shots=5, seed=0)
    prof = builtin_profile("linear_native", 3)
    with pytest.raises(ValueError, match="expected 2"):
        build_dataset(tmp_path / "z", n_qubits=2, n_circuits=1, noise_levels=2,
                      m_shots=5, seed=0, profile=prof)


def test_snapshot_and_dag_files_load(tiny_dataset):
    key = tiny_dataset.state_keys()[0]
    snaps = tiny_dataset.load_snapshots(key)
    assert snaps.n_records == 60
    assert snaps.n_qubits == 3
    dag = tiny_dataset.load_dag(key)
    circ = tiny_dataset.circuits[key.rsplit("_l", 1)[0]]
    assert dag.n_nodes == len(circ.gates) + 2 * 3
    sidecar = json.loads(
        (tiny_dataset.root / "snapshots" / f"{key}.json").read_text()
    )
    assert set(sidecar) >= {"seed", "profile_name", "circuit_id"}


# --------------------------------------------------------------------------
# splits


def test_split_is_layout_disjoint(tiny_dataset):
    train_ids, test_ids = split_by_circuit(tiny_dataset.circuit_ids, 0.34, seed=0)
    assert not (set(train_ids) & set(test_ids))
    train, test = split_records(tiny_dataset.records, train_ids, test_ids)
    assert {r.circuit_id for r in train}.isdisjoint({r.circuit_id for r in test})
    assert len(train) + len(test) == len(tiny_dataset.records)
    assert len(test) == 2 * 3  # 2 held-out circuits, all their pairs


def test_split_deterministic_and_validated():
    ids = [f"c{i}" for i in range(10)]
    assert split_by_circuit(ids, 0.2, seed=5) == split_by_circuit(ids, 0.2, seed=5)
    assert split_by_circuit(ids, 0.2, seed=5) != split_by_circuit(ids, 0.2, seed=6)
    with pytest.raises(ValueError):
        split_by_circuit(ids, 0.0, seed=0)
    with pytest.raises(ValueError):
        split_by_circuit(["c0"], 0.5, seed=0)


# --------------------------------------------------------------------------
# representation export


def test_export_representations_shape_and_determinism(tiny_dataset, tmp_path):
    config = TrainConfig(
        model=ModelConfig(n_qubits=3, dim=8, conv_widths=[8, 8], mlp_widths=[8, 8],
                          graph_widths=[8, 8]),
        epochs_measurement=2, epochs_circuit=2, epochs_finetune=2,
        batch_size=8, test_fraction=0.34, seed=2,
    )
    model, _ = train_two_stage(tiny_dataset, config)
    out = tmp_path / "reps.csv"
    rows = export_representations(model, tiny_dataset, out)
    lines = out.read_text().strip().splitlines()
    assert rows == 2 * len(tiny_dataset.records)
    assert len(lines) == rows + 1
    header = lines[0].split(",")
    assert header[:2] == ["device_name", "circuit_id"]
    assert len(header) == 2 + 8
    rows2 = export_representations(model, tiny_dataset, tmp_path / "reps2.csv")
    assert (tmp_path / "reps2.csv").read_text() == out.read_text()


def test_fmt_uses_17_significant_digits():
    assert fmt(1 / 3) == "0.33333333333333331"
    assert fmt(1.0) == "1"
