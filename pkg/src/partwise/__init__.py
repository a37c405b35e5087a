"""Part-based, spatially aware vehicle classification.

Detections of semantically strong vehicle parts go through geometric
rectification, per-feature Gaussian-mixture spatial maps, and part-score
construction, then into either a softmax-regression head or a handcrafted
rule tree. Includes a synthetic scene generator, per-prediction explanation
reports, and a cross-validation / robustness-sweep harness.
"""

from ._backend import backend_name
from .classify import (
    SoftmaxModel,
    SvmModel,
    TrainConfig,
    TreeSpec,
    classify_tree,
    default_tree_spec,
    loss_and_gradient,
    predict_softmax,
    predict_svm,
    train_softmax,
    train_svm,
)
from .core import (
    Dataset,
    Detection,
    FeatureCatalog,
    FeatureSpec,
    PartClass,
    PartwiseError,
    Scene,
    VehicleCategory,
    default_catalog,
    load_catalog,
    load_scenes,
    save_scenes,
    validate_scene,
)
from .explain import ContributionReport, explain_softmax, render_report
from .geometry import (
    Correspondence,
    Homography,
    apply_homography,
    fit_homography,
    rectify_scene,
)
from .harness import (
    EvalReport,
    ModelBundle,
    PipelineConfig,
    SweepReport,
    evaluate_pipeline,
    kfold_split,
    load_model,
    robustness_sweep,
    save_model,
    train_bundle,
)
from .spatial import (
    GmmComponent,
    PartScoreVector,
    SpatialModel,
    build_spatial_model,
    fit_gmm,
    location_score,
    part_scores,
    select_modes_bic,
)
from .synth import (
    LayoutTemplate,
    NoiseConfig,
    default_mix,
    default_templates,
    emulate_threshold,
    generate_dataset,
    generate_scene,
)
from .treefeat import (
    TreeFeatureConfig,
    TreeFeatures,
    WheelSplit,
    artic_metrics,
    build_tree_features,
    front_elevation,
    split_wheels,
    tractor_metrics,
    wheelbase,
)

__version__ = "0.1.0"
