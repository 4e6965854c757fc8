"""cellsift: token-feature classification pipeline with explanations.

The pieces mirror the processing chain: a toy transformer encoder emits
class/image/all token tensors, mean pooling collapses them to one vector
per sample, three importance rankers select features, a class-weighted
feed-forward network classifies, and a Kernel SHAP explainer attributes
the trained model's outputs back to input features.
"""

from .tensors import (
    BOTH_CELLS,
    CLASS_NAMES,
    Dataset,
    ExtractionMode,
    HEALTHY,
    LabelVector,
    NUM_CLASSES,
    PooledFeatures,
    RUBBISH,
    SplitTag,
    TokenTensor,
    UNHEALTHY,
    merge_labels,
    read_labels_csv,
    read_tensor,
    read_tensor_file,
    write_labels_csv,
    write_tensor,
    write_tensor_file,
)
from .synthetic import (
    generate_synthetic,
    generate_xor,
    synthesize_token_tensors,
    toy_image_dataset,
)
from .pooling import pool_tokens
from .encoder import (
    EncoderConfig,
    EncoderState,
    ReduceOnPlateau,
    extract_tokens,
    fine_tune,
    forward,
    init_encoder,
    load_state,
    save_state,
)
from .rankers import (
    ImportanceRanking,
    SelectionMethod,
    SelectionRule,
    apply_selection,
    average_importance_across_classes,
    project_features,
    rank_features,
    train_gradient_boosting,
    train_logreg,
    train_random_forest,
)
from .ann import (
    ClassWeights,
    MLPParams,
    TrainReport,
    baseline_head,
    compute_class_weights,
    predict,
    stratified_split,
    train_mlp,
    weighted_cross_entropy,
)
from .metrics import ConfusionMatrix, F1Scores, confusion_matrix, macro_f1
from .explain import (
    GlobalImportance,
    ShapExplanation,
    exact_shapley,
    extreme_value_report,
    global_importance,
    kernel_shap,
    shapley_kernel_weight,
)
from .grid import ExperimentConfig, GridReport, run_grid

__version__ = "0.1.0"
