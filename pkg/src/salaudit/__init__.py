"""Dataset-level saliency auditing for artefact-induced classifier bias."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ArtefactMask,
    DatasetManifest,
    PredictionRecord,
    SaliencyMap,
    Tensor,
    load_manifest,
    load_predictions,
    load_tensor,
    save_manifest,
    save_predictions,
    save_tensor,
)
from .saliency import (  # noqa: F401
    GradientBundle,
    completeness_residual,
    compose_competitive,
    compose_gradcam,
    partition_sum_check,
)
from .aggregate import (  # noqa: F401
    GlobalSaliencyReport,
    ImageSaliencyStat,
    mean_artefact_saliency,
    peak_fraction,
    per_class_report,
    zscore_normalize,
)
from .metrics import (  # noqa: F401
    RRACurve,
    TestResult,
    aurrac,
    kendall_tau,
    levene_test,
    rra_curve,
    wilcoxon_signed_rank,
)
from .datasetops import (  # noqa: F401
    CooccurrenceTable,
    SamplingPlan,
    ablate,
    apply_plan,
    cooccurrence,
    ink_only_filter,
    prediction_invariance,
    unbiased_plan,
)
