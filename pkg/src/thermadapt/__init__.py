"""Cross-domain human activity recognition from 8x8 thermal frames."""

from .errors import (
    CheckpointFormatError,
    ConfigError,
    DatasetFormatError,
    ShapeError,
    ThermadaptError,
    TrainingDiverged,
    WireFormatError,
)
from .model import (
    ActivityLabel,
    CLASS_NAMES,
    ScdnnModel,
    build_model,
    classify_labels,
    discriminate_domain,
    extract_features,
    load_checkpoint,
    parameter_count,
    predict,
    predict_batch,
    save_checkpoint,
)
from .preprocess import (
    FilterSpec,
    RawFrame,
    SampleTensor,
    background_subtract,
    butterworth_filter,
    preprocess_stream,
    reshape_sample,
    segment,
)
from .synth import (
    ACTIVITY_MODELS,
    ActivityModel,
    DomainSpec,
    SOURCE_DOMAIN,
    TARGET_DOMAIN,
    generate_dataset,
    generate_frame,
    generate_stream,
)
from .train import (
    DataSplit,
    EpochRecord,
    TrainConfig,
    evaluate,
    grl_lambda_schedule,
    make_split,
    stack_samples,
    sweep_labeled,
    sweep_unlabeled,
    train_scdnn,
)
from .baselines import (
    KnnModel,
    fit_knn,
    knn_classify,
    knn_classify_batch,
    train_dann_mode,
    train_source_only,
)
from .metrics import (
    MetricsReport,
    compute_report,
    confusion,
    pr_ap,
    prf1,
    roc_auc,
)
from .wire import decode_wire_frame, encode_wire_frame, udp_listen
from .dataset_io import emit_heatmap, read_dataset, write_frames, write_samples

__version__ = "0.1.0"
