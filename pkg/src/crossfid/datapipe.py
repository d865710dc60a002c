"""End-to-end dataset construction and persistence.

A dataset is a directory: one simulated state per (circuit, noise level) with
its snapshot file and DAG file, a labels table over all unordered level pairs
of each circuit, and a manifest whose hash index covers every file. Labels
are always exact density-matrix fidelities; nothing in a dataset depends on
wall-clock or filesystem ordering, so the same seed reproduces the directory
byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuits import (
    Circuit,
    DeviceProfile,
    builtin_profile,
    sample_circuit,
    transpile,
    validate_profile,
)
from .dag import CircuitDag, circuit_to_dag
from .errors import ResourceLimitError
from .qsim import MAX_QUBITS, cross_fidelity, purity, run_circuit
from .shadows import SnapshotSet, measure_random_pauli
from .validation import child_rng

MANIFEST_VERSION = 1


def fmt(x: float) -> str:
    """Locale-independent float formatting with 17 significant digits."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RecordRef:
    record_id: str
    circuit_id: str
    level_i: int
    level_j: int

    def state_keys(self) -> tuple[str, str]:
        return (f"{self.circuit_id}_l{self.level_i}", f"{self.circuit_id}_l{self.level_j}")


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    r2: float
    rmse: float
    count: int

    def to_json(self) -> dict:
        return {"mse": self.mse, "r2": self.r2, "rmse": self.rmse, "count": self.count}


def compute_metrics(preds, labels) -> MetricsReport:
    """MSE, coefficient of determination, and relative squared error.

    rmse here is the mean of ((F - F_hat) / F)^2, so labels must be nonzero;
    r2 needs nonconstant labels.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError(
            f"need matching nonempty 1-D arrays, got {preds.shape} and {labels.shape}"
        )
    mse = float(np.mean((labels - preds) ** 2))
    var = float(np.sum((labels - labels.mean()) ** 2))
    if var == 0.0:
        raise ValueError("labels have zero variance; r2 is undefined")
    r2 = 1.0 - float(np.sum((labels - preds) ** 2)) / var
    if np.any(labels == 0.0):
        raise ValueError("zero label encountered; relative squared error is undefined")
    rmse = float(np.mean(((labels - preds) / labels) ** 2))
    return MetricsReport(mse=mse, r2=r2, rmse=rmse, count=preds.size)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _simulate_circuit(args):
    """Simulate one circuit at every noise level; returns per-level artifacts."""
    cid, circuit, base_profile, levels, m_shots, seed, c_index = args
    out = {}
    rhos = []
    for l_idx, p in enumerate(levels):
        profile_l = base_profile.with_depolarizing(p)
        rho = run_circuit(circuit, profile_l)
        snaps = measure_random_pauli(
            rho, m_shots, child_rng(seed, 2, c_index, l_idx)
        )
        dag = circuit_to_dag(circuit, profile_l)
        out[l_idx] = (snaps, dag, purity(rho))
        rhos.append(rho)
    labels = {}
    for i in range(len(levels)):
        for j in range(i + 1, len(levels)):
            labels[(i, j)] = cross_fidelity(rhos[i], rhos[j])
    return cid, out, labels


def build_dataset(
    out_dir,
    n_qubits: int,
    n_circuits: int,
    noise_levels: int,
    m_shots: int,
    seed: int,
    profile: DeviceProfile | None = None,
    layers: int = 4,
    level_range: tuple[float, float] = (0.01, 0.1),
    threads: int = 1,
) -> "Dataset":
    """Sample circuits, simulate every noise level exactly, and emit all
    unordered level pairs per circuit: n_circuits * C(levels, 2) records."""
    if n_qubits > MAX_QUBITS:
        raise ResourceLimitError(f"{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit")
    if noise_levels < 2:
        raise ValueError("need at least 2 noise levels to form pairs")
    if n_circuits < 1 or m_shots < 1:
        raise ValueError("n_circuits and m_shots must be positive")
    if profile is None:
        profile = builtin_profile("linear_native", n_qubits)
    problems = validate_profile(profile)
    if problems:
        raise ValueError("invalid profile: " + "; ".join(problems))
    if profile.n_qubits != n_qubits:
        raise ValueError(
            f"profile {profile.name!r} has {profile.n_qubits} qubits, expected {n_qubits}"
        )

    out_dir = Path(out_dir)
    os.makedirs(out_dir / "snapshots", exist_ok=True)
    os.makedirs(out_dir / "dags", exist_ok=True)

    lo, hi = level_range
    levels = sorted(float(p) for p in child_rng(seed, 0).uniform(lo, hi, size=noise_levels))

    circuit_ids = [f"c{i:04d}" for i in range(n_circuits)]
    circuits = {}
    for c_index, cid in enumerate(circuit_ids):
        raw = sample_circuit(n_qubits, layers, child_rng(seed, 1, c_index))
        circuits[cid] = transpile(raw, profile)

    jobs = [
        (cid, circuits[cid], profile, levels, m_shots, seed, c_index)
        for c_index, cid in enumerate(circuit_ids)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_simulate_circuit, jobs))
    else:
        results = [_simulate_circuit(job) for job in jobs]

    label_rows = []
    record_index = []
    for cid, per_level, labels in sorted(results):
        for l_idx, (snaps, dag, _pur) in per_level.items():
            key = f"{cid}_l{l_idx}"
            snaps.save(out_dir / "snapshots" / f"{key}.bin")
            with open(out_dir / "snapshots" / f"{key}.json", "w", encoding="utf-8") as fh:
                json.dump(
                    {"seed": seed, "profile_name": profile.name, "circuit_id": cid,
                     "level_index": l_idx, "level": levels[l_idx]},
                    fh, sort_keys=True,
                )
            dag.save(out_dir / "dags" / f"{key}.json")
        for (i, j), fid in sorted(labels.items()):
            rid = f"{cid}_l{i}_l{j}"
            record_index.append(
                {"record_id": rid, "circuit_id": cid, "level_i": i, "level_j": j}
            )
            label_rows.append(
                (rid, cid, levels[i], levels[j], fid, per_level[i][2], per_level[j][2])
            )

    with open(out_dir / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["record_id", "circuit_id", "level_i", "level_j", "fidelity", "purity_i", "purity_j"]
        )
        for rid, cid, li, lj, fid, pi_, pj_ in label_rows:
            writer.writerow([rid, cid, fmt(li), fmt(lj), fmt(fid), fmt(pi_), fmt(pj_)])

    with open(out_dir / "circuits.json", "w", encoding="utf-8") as fh:
        json.dump({cid: c.to_json() for cid, c in circuits.items()}, fh, sort_keys=True)
    profile.save(out_dir / "profile.json")

    files = {}
    for rel in sorted(
        str(p.relative_to(out_dir)).replace(os.sep, "/")
        for p in out_dir.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    ):
        files[rel] = _sha256(out_dir / rel)
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "n_qubits": n_qubits,
        "m_shots": m_shots,
        "layers": layers,
        "profiles": [profile.name],
        "noise_levels": levels,
        "circuit_ids": circuit_ids,
        "record_index": record_index,
        "files": files,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return Dataset(out_dir)


class Dataset:
    """Read-side view of a dataset directory."""

    def __init__(self, root, verify: bool = False):
        self.root = Path(root)
        with open(self.root / "manifest.json", "r", encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        if verify:
            self.verify()
        self.profile = DeviceProfile.load(self.root / "profile.json")
        with open(self.root / "circuits.json", "r", encoding="utf-8") as fh:
            self.circuits = {
                cid: Circuit.from_json(obj) for cid, obj in json.load(fh).items()
            }
        self.levels: list[float] = list(self.manifest["noise_levels"])
        self.records = [
            RecordRef(
                record_id=e["record_id"],
                circuit_id=e["circuit_id"],
                level_i=e["level_i"],
                level_j=e["level_j"],
            )
            for e in self.manifest["record_index"]
        ]
        self.labels: dict[str, dict[str, float]] = {}
        with open(self.root / "labels.csv", "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                self.labels[row["record_id"]] = {
                    "fidelity": float(row["fidelity"]),
                    "purity_i": float(row["purity_i"]),
                    "purity_j": float(row["purity_j"]),
                }

    @property
    def n_qubits(self) -> int:
        return int(self.manifest["n_qubits"])

    @property
    def circuit_ids(self) -> list[str]:
        return list(self.manifest["circuit_ids"])

    def verify(self) -> None:
        for rel, digest in self.manifest["files"].items():
            actual = _sha256(self.root / rel)
            if actual != digest:
                raise ValueError(f"hash mismatch for {rel}: {actual} != {digest}")

    def state_keys(self) -> list[str]:
        return [
            f"{cid}_l{l}" for cid in self.circuit_ids for l in range(len(self.levels))
        ]

    def state_purity(self, key: str) -> float:
        cid, l_idx = key.rsplit("_l", 1)
        l_idx = int(l_idx)
        for rec in self.records:
            if rec.circuit_id != cid:
                continue
            if rec.level_i == l_idx:
                return self.labels[rec.record_id]["purity_i"]
            if rec.level_j == l_idx:
                return self.labels[rec.record_id]["purity_j"]
        raise KeyError(f"no record touches state {key}")

    def level_profile(self, l_idx: int) -> DeviceProfile:
        return self.profile.with_depolarizing(self.levels[l_idx])

    def load_snapshots(self, key: str) -> SnapshotSet:
        return SnapshotSet.load(self.root / "snapshots" / f"{key}.bin")

    def load_dag(self, key: str) -> CircuitDag:
        return CircuitDag.load(self.root / "dags" / f"{key}.json")

    def record_labels(self, records=None) -> np.ndarray:
        records = self.records if records is None else records
        return np.array([self.labels[r.record_id]["fidelity"] for r in records])


def split_by_circuit(circuit_ids, test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Layout-disjoint split: whole circuits are held out, never single pairs."""
    ids = list(circuit_ids)
    if len(ids) < 2:
        raise ValueError("need at least 2 circuits to split")
    n_test = int(round(len(ids) * test_fraction))
    if n_test < 1 or n_test >= len(ids):
        raise ValueError(
            f"test fraction {test_fraction} leaves an empty side for {len(ids)} circuits"
        )
    shuffled = list(ids)
    child_rng(seed, 3).shuffle(shuffled)
    test = sorted(shuffled[:n_test])
    train = sorted(shuffled[n_test:])
    return train, test


def split_records(records, train_ids, test_ids):
    train_set, test_set = set(train_ids), set(test_ids)
    train = [r for r in records if r.circuit_id in train_set]
    test = [r for r in records if r.circuit_id in test_set]
    return train, test


def export_representations(model, dataset: Dataset, path, mode: str = "fused") -> int:
    """One CSV row per record per device: device name, circuit id, then the
    representation vector. Returns the number of rows written."""
    from .training import encode_states, prepare_states

    states = prepare_states(dataset, include_noise_suffix=model.config.include_noise_suffix)
    reps = encode_states(model, states, mode=mode)
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        dim = model.config.dim
        writer.writerow(["device_name", "circuit_id"] + [f"v{i}" for i in range(dim)])
        for rec in dataset.records:
            for key, l_idx in zip(rec.state_keys(), (rec.level_i, rec.level_j)):
                device = f"{dataset.profile.name}#p={fmt(dataset.levels[l_idx])}"
                writer.writerow(
                    [device, rec.circuit_id] + [fmt(v) for v in reps[key]]
                )
                rows += 1
    return rows
