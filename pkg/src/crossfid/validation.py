"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

TRACE_ATOL = 1e-10
HERMITIAN_ATOL = 1e-10
PSD_ATOL = 1e-9


def as_rng(seed) -> np.random.Generator:
    """Accept a seed, a SeedSequence or a ready Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream derived from a root seed and an integer key path.

    Derivation is order-free: workers can draw their streams in any order
    and still reproduce the exact same bits.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0) or not np.isfinite(p):
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return p


def check_qubits(qubits, n_qubits: int) -> tuple[int, ...]:
    qs = tuple(int(q) for q in qubits)
    for q in qs:
        if q < 0 or q >= n_qubits:
            raise ValueError(f"qubit index {q} out of range for {n_qubits} qubits")
    if len(set(qs)) != len(qs):
        raise ValueError(f"qubit indices must be distinct, got {qs}")
    return qs


def density_matrix_violations(data: np.ndarray) -> list[str]:
    """All invariant violations of a candidate density matrix (empty = valid)."""
    out = []
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        return [f"not a square matrix: shape {data.shape}"]
    tr = complex(np.trace(data))
    if abs(tr - 1.0) > TRACE_ATOL:
        out.append(f"trace {tr} deviates from 1 by more than {TRACE_ATOL}")
    herm = np.max(np.abs(data - data.conj().T)) if data.size else 0.0
    if herm > HERMITIAN_ATOL:
        out.append(f"not Hermitian: max |rho - rho^dagger| = {herm:.3e}")
    else:
        evals = np.linalg.eigvalsh((data + data.conj().T) / 2.0)
        if evals.size and evals[0] < -PSD_ATOL:
            out.append(f"not PSD: min eigenvalue {evals[0]:.3e}")
    return out


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
