"""View-invariant driver action classification: disentangled features with
dual classification heads, triplet-contrastive training, and a
leave-one-camera-out evaluation harness. The heavy lifting lives in the C++
extension; this package re-exports its surface."""

from dbmnet._core import (  # noqa: F401
    Checkpoint,
    Dataset,
    DatasetManifest,
    DbmnetError,
    EpochRecord,
    EvalReport,
    FeatureMatrix,
    FeatureStage,
    GradCheckReport,
    LabelSpace,
    LocoSplit,
    LossBreakdown,
    LossWeights,
    ManifestEntry,
    Model,
    SampleabilityReport,
    SynthConfig,
    TrainConfig,
    TrainResult,
    TrainValSplit,
    ViewDropReport,
    __version__,
    augment_image,
    confusion_matrix,
    cross_entropy,
    euclidean_distance,
    evaluate,
    export_embeddings,
    export_png_dataset,
    extract_features,
    gradient_check_tiny,
    load_checkpoint,
    load_directory_dataset,
    probe_view_drop,
    sample_triplets,
    save_checkpoint,
    split_loco,
    split_train_val,
    synth_generate,
    topk_accuracy,
    train,
    validate_sampleability,
)
