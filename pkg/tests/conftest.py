import numpy as np
import pytest

from crossfid.datapipe import Dataset, build_dataset
from crossfid.qsim import DensityMatrix


def random_density(rng, n_qubits: int, rank: int | None = None) -> DensityMatrix:
    """Random full-rank mixed state from a Wishart-style draw."""
    dim = 2 ** n_qubits
    rank = dim if rank is None else rank
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix(n_qubits=n_qubits, data=rho)


def random_pure(rng, n_qubits: int) -> DensityMatrix:
    dim = 2 ** n_qubits
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return DensityMatrix.from_statevector(psi)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Dataset:
    """Shared 3-qubit dataset: 6 circuits x 3 levels -> 18 records."""
    root = tmp_path_factory.mktemp("tiny_ds")
    return build_dataset(
        root / "ds",
        n_qubits=3,
        n_circuits=6,
        noise_levels=3,
        m_shots=60,
        seed=11,
        layers=4,
    )
