"""fedtrace: a federated-learning simulator with record/replay debugging and
automated faulty-client localization."""

from .backend import backend_name
from .data import (
    LabeledDataset,
    PartitionMode,
    PartitionPlan,
    inject_label_noise,
    load_idx,
    partition,
    synthetic_blobs,
)
from .debugger import (
    Breakpoint,
    BreakpointRegistry,
    DebugCursor,
    DebugSession,
    Granularity,
    StateView,
    open_session,
)
from .faultloc import (
    FaultReport,
    LocalizationConfig,
    SelectionConfig,
    TestSuite,
    activation_sets,
    localize,
    localize_multi,
    localize_on_input,
    select_test_inputs,
    threshold_sweep,
)
from .model import (
    DEFAULT_ACTIVATION_THRESHOLD,
    ActivationProfile,
    ModelArch,
    ModelSnapshot,
    TrainConfig,
    forward,
    init_model,
    kaiming_random_input,
    load_snapshot,
    save_snapshot,
    train_local,
)
from .sim import (
    DataConfig,
    FaultSpec,
    SessionConfig,
    SessionRunner,
    evaluate,
    fedavg,
    run_round,
    run_session,
)
from .telemetry import ClientMetrics, RoundRecord, TelemetryStore

__version__ = "0.1.0"

__all__ = [
    "ActivationProfile",
    "Breakpoint",
    "BreakpointRegistry",
    "ClientMetrics",
    "DataConfig",
    "DebugCursor",
    "DebugSession",
    "DEFAULT_ACTIVATION_THRESHOLD",
    "FaultReport",
    "FaultSpec",
    "Granularity",
    "LabeledDataset",
    "LocalizationConfig",
    "ModelArch",
    "ModelSnapshot",
    "PartitionMode",
    "PartitionPlan",
    "RoundRecord",
    "SelectionConfig",
    "SessionConfig",
    "SessionRunner",
    "StateView",
    "TelemetryStore",
    "TestSuite",
    "TrainConfig",
    "activation_sets",
    "backend_name",
    "evaluate",
    "fedavg",
    "forward",
    "init_model",
    "inject_label_noise",
    "kaiming_random_input",
    "load_idx",
    "load_snapshot",
    "localize",
    "localize_multi",
    "localize_on_input",
    "open_session",
    "partition",
    "run_round",
    "run_session",
    "save_snapshot",
    "select_test_inputs",
    "synthetic_blobs",
    "threshold_sweep",
    "train_local",
    "__version__",
]
