"""Random-Pauli measurement records, classical-shadow snapshots, and the two
randomized-measurement fidelity baselines (shadow overlap and second-order
cross-correlations).
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .circuits import DeviceProfile
from .errors import ResourceLimitError, UnreliableEstimateWarning
from .qsim import MAX_QUBITS, DensityMatrix, apply_readout_error
from .validation import as_rng

BASIS_X, BASIS_Y, BASIS_Z = 0, 1, 2
BASIS_NAMES = ("X", "Y", "Z")

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)
_SDG = np.array([[1.0, 0.0], [0.0, -1.0j]], dtype=complex)

# Basis-change unitaries: measuring basis B equals applying U_B then reading Z.
BASIS_UNITARIES = (_H, _H @ _SDG, np.eye(2, dtype=complex))


@dataclass(frozen=True)
class SnapshotSet:
    """M random-Pauli measurement records of one state.

    ``bases``/``outcomes`` are (M, n_qubits) uint8 arrays; basis codes are
    0=X, 1=Y, 2=Z.
    """

    n_qubits: int
    bases: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        bases = np.ascontiguousarray(self.bases, dtype=np.uint8)
        outcomes = np.ascontiguousarray(self.outcomes, dtype=np.uint8)
        if bases.shape != outcomes.shape or bases.ndim != 2:
            raise ValueError(
                f"bases {bases.shape} and outcomes {outcomes.shape} must be "
                "matching (M, n_qubits) arrays"
            )
        if bases.shape[1] != self.n_qubits:
            raise ValueError(f"records carry {bases.shape[1]} qubits, expected {self.n_qubits}")
        if bases.size and (bases.max() > 2 or outcomes.max() > 1):
            raise ValueError("basis codes must be in {0,1,2} and outcomes in {0,1}")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def n_records(self) -> int:
        return self.bases.shape[0]

    def codes(self) -> np.ndarray:
        """Per-qubit (basis, outcome) fused into one code in 0..5."""
        return (self.bases * 2 + self.outcomes).astype(np.int64)

    # -- compact binary layout -------------------------------------------
    # header: <u32 n_qubits, u32 M>; per record: ceil(2n/8) bytes of 2-bit
    # basis codes then ceil(n/8) bytes of outcome bits, both little-endian
    # bit order, each section padded to a byte boundary.

    def to_bytes(self) -> bytes:
        n, m = self.n_qubits, self.n_records
        head = struct.pack("<II", n, m)
        basis_bits = np.zeros((m, 2 * n), dtype=np.uint8)
        basis_bits[:, 0::2] = self.bases & 1
        basis_bits[:, 1::2] = (self.bases >> 1) & 1
        basis_bytes = np.packbits(basis_bits, axis=1, bitorder="little")
        out_bytes = np.packbits(self.outcomes, axis=1, bitorder="little")
        body = np.concatenate([basis_bytes, out_bytes], axis=1)
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SnapshotSet":
        n, m = struct.unpack_from("<II", blob, 0)
        nb_basis = (2 * n + 7) // 8
        nb_out = (n + 7) // 8
        body = np.frombuffer(blob, dtype=np.uint8, offset=8)
        body = body.reshape(m, nb_basis + nb_out)
        basis_bits = np.unpackbits(body[:, :nb_basis], axis=1, bitorder="little")[:, : 2 * n]
        bases = (basis_bits[:, 0::2] | (basis_bits[:, 1::2] << 1)).astype(np.uint8)
        outcomes = np.unpackbits(body[:, nb_basis:], axis=1, bitorder="little")[:, :n]
        return cls(n_qubits=n, bases=bases, outcomes=outcomes)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SnapshotSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _rotated_diagonal(rho: DensityMatrix, setting: np.ndarray) -> np.ndarray:
    """Outcome distribution of measuring each qubit in the given basis."""
    n = rho.n_qubits
    t = rho.tensor()
    from .qsim import _apply_on_axes  # local import: private helper reuse

    for q in range(n):
        u = BASIS_UNITARIES[setting[q]]
        t = _apply_on_axes(t, u, (q,))
        t = _apply_on_axes(t, u.conj(), (n + q,))
    diag = np.real(np.diagonal(t.reshape(2 ** n, 2 ** n)).copy())
    diag = np.clip(diag, 0.0, None)
    total = diag.sum()
    if total <= 0.0:
        raise ValueError("state has no measurable weight")
    return diag / total


def measure_random_pauli(
    rho: DensityMatrix,
    m: int,
    rng,
    readout: DeviceProfile | None = None,
) -> SnapshotSet:
    """Sample M records, each with an independent uniform Pauli basis per
    qubit and an outcome bitstring from the exact rotated distribution.

    Shots sharing a basis setting are grouped so the rotated distribution is
    computed once per distinct setting; the joint law is unchanged. Readout
    flips are applied afterwards when a calibrated profile is given.
    """
    if m < 1:
        raise ValueError(f"need at least one measurement, got {m}")
    rng = as_rng(rng)
    n = rho.n_qubits
    bases = rng.integers(0, 3, size=(m, n), dtype=np.uint8)
    outcomes = np.zeros((m, n), dtype=np.uint8)
    settings, inverse = np.unique(bases, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bit_table = ((np.arange(2 ** n)[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)
    for s_idx in range(settings.shape[0]):
        rows = np.nonzero(inverse == s_idx)[0]
        probs = _rotated_diagonal(rho, settings[s_idx])
        drawn = rng.choice(2 ** n, size=rows.size, p=probs)
        outcomes[rows] = bit_table[drawn]
    if readout is not None:
        outcomes = apply_readout_error(outcomes, readout, rng)
    return SnapshotSet(n_qubits=n, bases=bases, outcomes=outcomes)


# --------------------------------------------------------------------------
# Classical-shadow estimators

_LOCAL_SNAPSHOTS = np.empty((3, 2, 2, 2), dtype=complex)
for _b in range(3):
    _u = BASIS_UNITARIES[_b]
    for _bit in range(2):
        _proj = np.zeros((2, 2), dtype=complex)
        _proj[_bit, _bit] = 1.0
        _LOCAL_SNAPSHOTS[_b, _bit] = 3.0 * (_u.conj().T @ _proj @ _u) - np.eye(2)


def snapshot_local(basis: int, bit: int) -> np.ndarray:
    """Single-qubit shadow term 3 U^dagger |b><b| U - I for one record."""
    return _LOCAL_SNAPSHOTS[basis, bit].copy()


def reconstruct_state(snaps: SnapshotSet) -> np.ndarray:
    """Average the per-record tensor products of local snapshots.

    The result has trace one but is generally not PSD: it is an unbiased
    estimator of the state, not a state itself.
    """
    if snaps.n_qubits > MAX_QUBITS:
        raise ResourceLimitError(f"{snaps.n_qubits} qubits exceeds {MAX_QUBITS}")
    if snaps.n_records == 0:
        raise ValueError("cannot reconstruct from an empty snapshot set")
    codes, counts = np.unique(snaps.codes(), axis=0, return_counts=True)
    dim = 2 ** snaps.n_qubits
    acc = np.zeros((dim, dim), dtype=complex)
    flat = _LOCAL_SNAPSHOTS.reshape(6, 2, 2)
    for row, count in zip(codes, counts):
        term = flat[row[0]]
        for q in range(1, snaps.n_qubits):
            term = np.kron(term, flat[row[q]])
        acc += count * term
    return acc / snaps.n_records


# Tr(rho_a rho_b) for local snapshots indexed by fused code (basis*2+bit):
# 5 for identical codes, -4 for same basis with opposite bits, 1/2 otherwise.
_PAIR_TRACE = np.full((6, 6), 0.5)
for _b in range(3):
    for _bit in range(2):
        _PAIR_TRACE[2 * _b + _bit, 2 * _b + _bit] = 5.0
        _PAIR_TRACE[2 * _b + _bit, 2 * _b + 1 - _bit] = -4.0


def _pair_sum(codes_a: np.ndarray, codes_b: np.ndarray, exclude_diagonal: bool) -> float:
    """Sum over record pairs of the per-qubit trace products, chunked to keep
    the (M_a, M_b) work matrix small."""
    n = codes_a.shape[1]
    total = 0.0
    diag_total = 0.0
    chunk = max(1, int(2e6) // max(1, codes_b.shape[0]))
    for start in range(0, codes_a.shape[0], chunk):
        block = codes_a[start : start + chunk]
        prod = np.ones((block.shape[0], codes_b.shape[0]))
        for q in range(n):
            prod *= _PAIR_TRACE[block[:, q][:, None], codes_b[None, :, q]]
        total += float(prod.sum())
        if exclude_diagonal:
            idx = np.arange(block.shape[0])
            cols = start + idx
            keep = cols < codes_b.shape[0]
            diag_total += float(prod[idx[keep], cols[keep]].sum())
    return total - diag_total if exclude_diagonal else total


def shadow_fidelity(
    snaps_i: SnapshotSet,
    snaps_j: SnapshotSet,
    include_diagonal: bool = False,
) -> float:
    """Fidelity estimate from two snapshot sets via the per-qubit product form.

    Self-overlaps exclude the m = m' diagonal by default (U-statistic), which
    removes the bias of squaring single-shot estimators; pass
    ``include_diagonal=True`` for the plain plug-in overlap. A non-positive
    self-overlap estimate triggers UnreliableEstimateWarning but the value is
    still returned.
    """
    if snaps_i.n_qubits != snaps_j.n_qubits:
        raise ValueError(
            f"qubit counts differ: {snaps_i.n_qubits} vs {snaps_j.n_qubits}"
        )
    if snaps_i.n_records < 2 or snaps_j.n_records < 2:
        raise ValueError("need at least 2 records per snapshot set")
    ci, cj = snaps_i.codes(), snaps_j.codes()
    mi, mj = ci.shape[0], cj.shape[0]
    cross = _pair_sum(ci, cj, exclude_diagonal=False) / (mi * mj)
    if include_diagonal:
        self_i = _pair_sum(ci, ci, exclude_diagonal=False) / (mi * mi)
        self_j = _pair_sum(cj, cj, exclude_diagonal=False) / (mj * mj)
    else:
        self_i = _pair_sum(ci, ci, exclude_diagonal=True) / (mi * (mi - 1))
        self_j = _pair_sum(cj, cj, exclude_diagonal=True) / (mj * (mj - 1))
    denom_sq = self_i * self_j
    if self_i <= 0.0 or self_j <= 0.0:
        warnings.warn(
            f"non-positive self-overlap estimate ({self_i:.3e}, {self_j:.3e}); "
            "fidelity estimate is unreliable",
            UnreliableEstimateWarning,
            stacklevel=2,
        )
        denom_sq = abs(denom_sq)
        if denom_sq == 0.0:
            return math.nan
    return cross / math.sqrt(denom_sq)


# --------------------------------------------------------------------------
# Cross-correlation protocol


@dataclass(frozen=True)
class ProbTable:
    """Per-setting outcome distributions under shared random local bases.

    ``settings`` is (n_settings, n_qubits) uint8; ``probs`` is
    (n_settings, 2^n_qubits) with each row summing to one.
    """

    n_qubits: int
    settings: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        settings = np.ascontiguousarray(self.settings, dtype=np.uint8)
        probs = np.ascontiguousarray(self.probs, dtype=float)
        if settings.ndim != 2 or settings.shape[1] != self.n_qubits:
            raise ValueError(f"settings shape {settings.shape} invalid")
        if probs.shape != (settings.shape[0], 2 ** self.n_qubits):
            raise ValueError(f"probs shape {probs.shape} invalid")
        sums = probs.sum(axis=1)
        if probs.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError("per-setting probabilities must sum to 1")
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "probs", probs)


def draw_settings(n_qubits: int, n_settings: int, rng) -> np.ndarray:
    rng = as_rng(rng)
    return rng.integers(0, 3, size=(n_settings, n_qubits), dtype=np.uint8)


def exact_prob_table(rho: DensityMatrix, settings: np.ndarray) -> ProbTable:
    """Infinite-shot outcome distributions for the given basis settings."""
    probs = np.stack([_rotated_diagonal(rho, s) for s in settings])
    return ProbTable(n_qubits=rho.n_qubits, settings=np.asarray(settings), probs=probs)


def sample_prob_table(
    rho: DensityMatrix,
    settings: np.ndarray,
    shots_per_setting: int,
    rng,
    readout: DeviceProfile | None = None,
) -> ProbTable:
    """Empirical outcome frequencies from finitely many shots per setting."""
    if shots_per_setting < 1:
        raise ValueError("need at least one shot per setting")
    rng = as_rng(rng)
    n = rho.n_qubits
    dim = 2 ** n
    bit_table = ((np.arange(dim)[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)
    weights = 1 << np.arange(n - 1, -1, -1)
    rows = []
    for s in np.asarray(settings):
        exact = _rotated_diagonal(rho, s)
        counts = rng.multinomial(shots_per_setting, exact)
        if readout is not None:
            bits = np.repeat(bit_table, counts, axis=0)
            bits = apply_readout_error(bits, readout, rng)
            counts = np.bincount(bits @ weights, minlength=dim)
        rows.append(counts / shots_per_setting)
    return ProbTable(n_qubits=n, settings=np.asarray(settings), probs=np.stack(rows))


def _hamming_kernel(n_qubits: int) -> np.ndarray:
    if n_qubits > MAX_QUBITS:
        raise ResourceLimitError(f"{n_qubits} qubits exceeds {MAX_QUBITS}")
    idx = np.arange(2 ** n_qubits)
    xor = idx[:, None] ^ idx[None, :]
    dist = np.array([bin(v).count("1") for v in range(2 ** n_qubits)])[xor]
    return (-2.0) ** (-dist.astype(float))


def cc_overlap(table_i: ProbTable, table_j: ProbTable) -> float:
    """Second-order cross-correlation estimate of Tr(rho_i rho_j).

    2^N * sum_{b,b'} (-2)^(-Hamming(b,b')) * P_i(b) P_j(b'), averaged over the
    shared basis settings.
    """
    if table_i.n_qubits != table_j.n_qubits:
        raise ValueError("tables have different qubit counts")
    if table_i.settings.shape != table_j.settings.shape or not np.array_equal(
        table_i.settings, table_j.settings
    ):
        raise ValueError("tables must share identical basis settings")
    kernel = _hamming_kernel(table_i.n_qubits)
    per_setting = np.einsum("sb,bc,sc->s", table_i.probs, kernel, table_j.probs)
    return float(2 ** table_i.n_qubits * per_setting.mean())


def cc_fidelity(table_i: ProbTable, table_j: ProbTable) -> float:
    """Cross-correlation fidelity: overlap normalized by the geometric mean of
    the self-overlaps (computed from the same tables)."""
    cross = cc_overlap(table_i, table_j)
    self_i = cc_overlap(table_i, table_i)
    self_j = cc_overlap(table_j, table_j)
    denom_sq = self_i * self_j
    if self_i <= 0.0 or self_j <= 0.0:
        warnings.warn(
            f"non-positive self-overlap ({self_i:.3e}, {self_j:.3e}); "
            "fidelity estimate is unreliable",
            UnreliableEstimateWarning,
            stacklevel=2,
        )
        denom_sq = abs(denom_sq)
        if denom_sq == 0.0:
            return math.nan
    return cross / math.sqrt(denom_sq)
