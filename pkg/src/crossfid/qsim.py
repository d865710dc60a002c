"""Exact density-matrix simulation of noisy circuit execution.

States are dense complex matrices; every channel is applied in closed form
(mixed-state formula or Kraus sum), never by trajectory sampling, so labels
derived here are exact and deterministic. System size is capped at 10 qubits
(memory grows as 4^N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuits import (
    CNOT_GATE_DURATION_US,
    SINGLE_QUBIT_GATE_DURATION_US,
    Circuit,
    DepolarizingNoise,
    DeviceNoise,
    DeviceProfile,
    Gate,
    gate_matrix,
)
from .errors import NumericError, ResourceLimitError
from .validation import (
    as_rng,
    check_probability,
    check_qubits,
    density_matrix_violations,
)

MAX_QUBITS = 10


@dataclass(frozen=True)
class DensityMatrix:
    n_qubits: int
    data: np.ndarray  # (2^n, 2^n) complex128

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("need at least one qubit")
        if self.n_qubits > MAX_QUBITS:
            raise ResourceLimitError(
                f"{self.n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit "
                f"(dense state would hold 4^{self.n_qubits} amplitudes)"
            )
        dim = 2 ** self.n_qubits
        if self.data.shape != (dim, dim):
            raise ValueError(f"data shape {self.data.shape} != ({dim}, {dim})")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=complex))

    @classmethod
    def zero_state(cls, n_qubits: int) -> "DensityMatrix":
        if n_qubits > MAX_QUBITS:
            raise ResourceLimitError(
                f"{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit"
            )
        dim = 2 ** n_qubits
        data = np.zeros((dim, dim), dtype=complex)
        data[0, 0] = 1.0
        return cls(n_qubits=n_qubits, data=data)

    @classmethod
    def from_statevector(cls, psi: np.ndarray) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        n = int(round(math.log2(psi.size)))
        if 2 ** n != psi.size:
            raise ValueError(f"statevector length {psi.size} is not a power of two")
        psi = psi / np.linalg.norm(psi)
        return cls(n_qubits=n, data=np.outer(psi, psi.conj()))

    def validate(self) -> list[str]:
        return density_matrix_violations(self.data)

    def tensor(self) -> np.ndarray:
        """View as a rank-2n tensor: row qubit axes first, then column axes."""
        return self.data.reshape((2,) * (2 * self.n_qubits))


def _apply_on_axes(tensor: np.ndarray, mat: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Contract ``mat`` (2^k x 2^k) into the given tensor axes."""
    k = len(axes)
    mat_t = mat.reshape((2,) * (2 * k))
    out = np.tensordot(mat_t, tensor, axes=(tuple(range(k, 2 * k)), axes))
    return np.moveaxis(out, tuple(range(k)), axes)


def _conjugate_unitary(state: DensityMatrix, u: np.ndarray, qubits: tuple[int, ...]) -> DensityMatrix:
    n = state.n_qubits
    t = state.tensor()
    t = _apply_on_axes(t, u, qubits)
    t = _apply_on_axes(t, u.conj(), tuple(n + q for q in qubits))
    dim = 2 ** n
    return DensityMatrix(n_qubits=n, data=t.reshape(dim, dim))


def apply_gate(state: DensityMatrix, gate: Gate) -> DensityMatrix:
    """Unitary conjugation rho -> U rho U^dagger."""
    qubits = check_qubits(gate.qubits, state.n_qubits)
    return _conjugate_unitary(state, gate_matrix(gate), qubits)


def apply_kraus(state: DensityMatrix, kraus_ops, qubits) -> DensityMatrix:
    """rho -> sum_k K_k rho K_k^dagger with local Kraus operators."""
    qubits = check_qubits(qubits, state.n_qubits)
    n = state.n_qubits
    t = state.tensor()
    acc = np.zeros_like(t)
    col_axes = tuple(n + q for q in qubits)
    for k in kraus_ops:
        term = _apply_on_axes(t, k, qubits)
        acc += _apply_on_axes(term, k.conj(), col_axes)
    dim = 2 ** n
    return DensityMatrix(n_qubits=n, data=acc.reshape(dim, dim))


def apply_depolarizing(state: DensityMatrix, qubits, p: float) -> DensityMatrix:
    """Local depolarizing channel in closed form.

    rho -> (1-p) rho + p * (Tr_q rho) (x) I/2^k on the given qubit(s);
    deterministic by construction rather than Kraus sampling.
    """
    p = check_probability(p)
    qubits = check_qubits(qubits, state.n_qubits)
    if p == 0.0:
        return state
    n = state.n_qubits
    t = state.tensor()
    # Partial trace over the target qubits, then re-insert I/2^k.
    reduced = t
    for q in sorted(qubits, reverse=True):
        reduced = np.trace(reduced, axis1=q, axis2=reduced.ndim // 2 + q)
    k = len(qubits)
    eye = np.eye(2 ** k, dtype=complex).reshape((2,) * (2 * k)) / (2 ** k)
    mixed = np.tensordot(eye, reduced, axes=0)
    # mixed axes: traced row axes, traced col axes, remaining row, remaining col.
    rest = [q for q in range(n) if q not in qubits]
    src_rows = list(range(k))
    src_cols = list(range(k, 2 * k))
    dst_rows = list(qubits)
    dst_cols = [n + q for q in qubits]
    cur_rest_rows = list(range(2 * k, 2 * k + len(rest)))
    cur_rest_cols = list(range(2 * k + len(rest), 2 * k + 2 * len(rest)))
    mixed = np.moveaxis(
        mixed,
        src_rows + src_cols + cur_rest_rows + cur_rest_cols,
        dst_rows + dst_cols + rest + [n + q for q in rest],
    )
    dim = 2 ** n
    out = (1.0 - p) * state.data + p * mixed.reshape(dim, dim)
    return DensityMatrix(n_qubits=n, data=out)


def apply_depolarizing2(state: DensityMatrix, qubits, p: float) -> DensityMatrix:
    """Two-qubit depolarizing channel (1-p) rho + p * I/4 on the pair."""
    qubits = check_qubits(qubits, state.n_qubits)
    if len(qubits) != 2:
        raise ValueError(f"expected a qubit pair, got {qubits}")
    return apply_depolarizing(state, qubits, p)


def amplitude_damping_kraus(gamma: float) -> list[np.ndarray]:
    gamma = check_probability(gamma, "gamma")
    return [
        np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - gamma)]], dtype=complex),
        np.array([[0.0, math.sqrt(gamma)], [0.0, 0.0]], dtype=complex),
    ]


def phase_damping_kraus(lam: float) -> list[np.ndarray]:
    lam = check_probability(lam, "lambda")
    return [
        np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - lam)]], dtype=complex),
        np.array([[0.0, 0.0], [0.0, math.sqrt(lam)]], dtype=complex),
    ]


def damping_parameters(t1, t2, duration_us: float) -> tuple[float, float]:
    """Map (T1, T2) calibration to (gamma, lambda) for one gate duration.

    gamma = 1 - exp(-t/T1). The pure-dephasing rate comes from
    1/T_phi = 1/T2 - 1/(2 T1), clamped at zero, and lambda = 1 - exp(-t/T_phi).
    ``None`` disables the corresponding channel.
    """
    gamma = 0.0 if t1 is None else 1.0 - math.exp(-duration_us / t1)
    if t2 is None:
        lam = 0.0
    else:
        inv_tphi = 1.0 / t2 - (0.0 if t1 is None else 1.0 / (2.0 * t1))
        lam = 0.0 if inv_tphi <= 0.0 else 1.0 - math.exp(-duration_us * inv_tphi)
    return gamma, lam


@dataclass(frozen=True)
class NoiseEvent:
    """One channel application scheduled after a gate."""

    kind: str  # depolarizing | amplitude_damping | phase_damping
    qubits: tuple[int, ...]
    param: float


def noise_events_for_gate(gate: Gate, profile: DeviceProfile) -> list[NoiseEvent]:
    """Channels a profile attaches to one gate, in application order."""
    noise = profile.noise
    if isinstance(noise, DepolarizingNoise):
        if gate.kind == "CNOT" and noise.p > 0.0:
            return [NoiseEvent("depolarizing", gate.qubits, noise.p)]
        return []
    assert isinstance(noise, DeviceNoise)
    events: list[NoiseEvent] = []
    if gate.kind == "CNOT":
        err = noise.cnot_error(*gate.qubits)
        duration = CNOT_GATE_DURATION_US
        if err > 0.0:
            events.append(NoiseEvent("depolarizing", gate.qubits, err))
    else:
        err = noise.single_error(gate.kind, gate.qubits[0])
        duration = SINGLE_QUBIT_GATE_DURATION_US
        if err > 0.0:
            events.append(NoiseEvent("depolarizing", gate.qubits, err))
    for q in gate.qubits:
        gamma, lam = damping_parameters(noise.t1[q], noise.t2[q], duration)
        if gamma > 0.0:
            events.append(NoiseEvent("amplitude_damping", (q,), gamma))
        if lam > 0.0:
            events.append(NoiseEvent("phase_damping", (q,), lam))
    return events


def apply_noise_event(state: DensityMatrix, event: NoiseEvent) -> DensityMatrix:
    if event.kind == "depolarizing":
        return apply_depolarizing(state, event.qubits, event.param)
    if event.kind == "amplitude_damping":
        return apply_kraus(state, amplitude_damping_kraus(event.param), event.qubits)
    if event.kind == "phase_damping":
        return apply_kraus(state, phase_damping_kraus(event.param), event.qubits)
    raise ValueError(f"unknown noise event kind {event.kind!r}")


def apply_device_noise(state: DensityMatrix, gate: Gate, profile: DeviceProfile) -> DensityMatrix:
    """All channels a profile attaches to one gate: depolarizing with the
    gate's error rate, then amplitude damping, then phase damping."""
    for event in noise_events_for_gate(gate, profile):
        state = apply_noise_event(state, event)
    return state


def run_circuit(circuit: Circuit, profile: DeviceProfile) -> DensityMatrix:
    """Evolve |0...0> through the circuit, applying each gate followed by its
    noise events in circuit order."""
    if circuit.n_qubits != profile.n_qubits:
        raise ValueError(
            f"circuit has {circuit.n_qubits} qubits, profile {profile.name!r} "
            f"has {profile.n_qubits}"
        )
    state = DensityMatrix.zero_state(circuit.n_qubits)
    for gate in circuit.gates:
        state = apply_gate(state, gate)
        state = apply_device_noise(state, gate, profile)
    return state


def apply_readout_error(bits: np.ndarray, profile: DeviceProfile, rng) -> np.ndarray:
    """Flip measured bits per the profile's readout calibration.

    ``bits`` is any array whose last axis runs over qubits. A measured 1 is
    reported as 0 with prob_meas0_prep1; a measured 0 as 1 with
    prob_meas1_prep0.
    """
    noise = profile.noise
    if not isinstance(noise, DeviceNoise):
        return bits
    rng = as_rng(rng)
    bits = np.asarray(bits, dtype=np.uint8)
    p01 = np.asarray(noise.prob_meas0_prep1, dtype=float)
    p10 = np.asarray(noise.prob_meas1_prep0, dtype=float)
    if bits.shape[-1] != p01.size:
        raise ValueError(f"expected {p01.size} bits per record, got {bits.shape[-1]}")
    flip_prob = np.where(bits == 1, p01, p10)
    flips = rng.random(bits.shape) < flip_prob
    return np.where(flips, 1 - bits, bits).astype(np.uint8)


# --------------------------------------------------------------------------
# State functionals


def purity(rho: DensityMatrix) -> float:
    """Tr(rho^2); equals 1 iff the state is pure."""
    return float(np.real(np.vdot(rho.data, rho.data)))


def cross_fidelity(rho_i: DensityMatrix, rho_j: DensityMatrix) -> float:
    """Normalized state overlap Tr(rho_i rho_j) / sqrt(Tr rho_i^2 * Tr rho_j^2)."""
    if rho_i.data.shape != rho_j.data.shape:
        raise ValueError(
            f"dimension mismatch: {rho_i.data.shape} vs {rho_j.data.shape}"
        )
    pi_, pj_ = purity(rho_i), purity(rho_j)
    if pi_ < 1e-12 or pj_ < 1e-12:
        raise NumericError(
            f"purity too small for a stable denominator ({pi_:.3e}, {pj_:.3e})"
        )
    overlap = float(np.real(np.vdot(rho_i.data, rho_j.data)))
    return overlap / math.sqrt(pi_ * pj_)


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Full 2^N unitary of a circuit (oracle helper; N <= 10 enforced)."""
    n = circuit.n_qubits
    if n > MAX_QUBITS:
        raise ResourceLimitError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit limit")
    dim = 2 ** n
    u = np.eye(dim, dtype=complex).reshape((2,) * (2 * n))
    # Treat the identity's row axes as the evolving side.
    for gate in circuit.gates:
        u = _apply_on_axes(u, gate_matrix(gate), gate.qubits)
    return u.reshape(dim, dim)
