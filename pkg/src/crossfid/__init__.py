"""crossfid: a desk-scale lab for cross-platform fidelity of noisy quantum
simulators.

It simulates noisy devices exactly, collects random-measurement and
circuit-structure data, trains a multimodal neural predictor of the fidelity
between two devices running the same circuit, and benchmarks it against the
randomized-measurement baselines.
"""

from .circuits import (
    BUILTIN_PROFILES,
    Circuit,
    DepolarizingNoise,
    DeviceNoise,
    DeviceProfile,
    Gate,
    builtin_profile,
    sample_circuit,
    transpile,
    validate_profile,
)
from .dag import CircuitDag, circuit_to_dag
from .datapipe import (
    Dataset,
    MetricsReport,
    build_dataset,
    compute_metrics,
    export_representations,
    split_by_circuit,
)
from .errors import (
    NumericError,
    ResourceLimitError,
    RoutingError,
    UnreliableEstimateWarning,
)
from .estimators import (
    CrossCorrelationFidelityEstimator,
    MultimodalFidelityRegressor,
    ShadowFidelityEstimator,
)
from .model import (
    FidelityModel,
    ModelConfig,
    build_measurement_features,
    fidelity_head,
    fit_purity_head,
    kdevice_fidelity,
    purity_head,
)
from .qsim import (
    DensityMatrix,
    apply_depolarizing,
    apply_depolarizing2,
    apply_device_noise,
    apply_gate,
    apply_readout_error,
    cross_fidelity,
    purity,
    run_circuit,
)
from .shadows import (
    ProbTable,
    SnapshotSet,
    cc_fidelity,
    cc_overlap,
    exact_prob_table,
    measure_random_pauli,
    reconstruct_state,
    sample_prob_table,
    shadow_fidelity,
    snapshot_local,
)
from .training import TrainConfig, train_two_stage

__version__ = "0.1.0"
