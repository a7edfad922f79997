"""Graph-based missing-value imputation for windowed sensor streams."""

from .continuous import (
    ContinuousRun,
    ImportanceScores,
    Reservoir,
    WindowResult,
    data_update,
    importance_scores,
    model_state_selection,
    run_continuous,
    transfer_state,
)
from .errors import (
    ConfigurationError,
    IngestionError,
    ParseError,
    SchemaError,
    StreamfillError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .evaluation import (
    EvalMask,
    WindowRecord,
    generate_synthetic,
    knn_impute,
    mae,
    mask_random,
    mean_impute,
    mre,
)
from .graph import (
    SimilarityGraph,
    knn_graph,
    make_knn_builder,
    mean_fill,
    mean_fill_matrix,
    threshold_graph,
)
from .network import (
    ModelState,
    MsgPropLayerParams,
    TrainConfig,
    TrainResult,
    init_model_state,
    loss_and_gradients,
    mpin_forward,
    mpin_loss,
    msgprop_layer_forward,
    train_impute,
)
from .propagation import apply_bound, feaprop_impute, feaprop_iterate, feaprop_step
from .records import (
    ColumnSchema,
    DataChunk,
    DataInstance,
    MaskChunk,
    parse_records,
    tumbling_windows,
)
from .serialize import (
    load_model_state,
    load_reservoir,
    read_arrays,
    save_model_state,
    save_reservoir,
    write_arrays,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnSchema",
    "ConfigurationError",
    "ContinuousRun",
    "DataChunk",
    "DataInstance",
    "EvalMask",
    "ImportanceScores",
    "IngestionError",
    "MaskChunk",
    "ModelState",
    "MsgPropLayerParams",
    "ParseError",
    "Reservoir",
    "SchemaError",
    "SimilarityGraph",
    "StreamfillError",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "WindowRecord",
    "WindowResult",
    "apply_bound",
    "data_update",
    "feaprop_impute",
    "feaprop_iterate",
    "feaprop_step",
    "generate_synthetic",
    "importance_scores",
    "init_model_state",
    "knn_graph",
    "knn_impute",
    "load_model_state",
    "load_reservoir",
    "loss_and_gradients",
    "mae",
    "make_knn_builder",
    "mask_random",
    "mean_fill",
    "mean_fill_matrix",
    "mean_impute",
    "model_state_selection",
    "mpin_forward",
    "mpin_loss",
    "mre",
    "msgprop_layer_forward",
    "parse_records",
    "read_arrays",
    "run_continuous",
    "save_model_state",
    "save_reservoir",
    "threshold_graph",
    "train_impute",
    "transfer_state",
    "tumbling_windows",
    "write_arrays",
]
