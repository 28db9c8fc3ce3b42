"""Sequential rank-one editing of a linear key-value memory.

Simulates long streams of closed-form locate-and-edit updates on a
single weight matrix, tracks the exact squared-norm recursion the
updates obey, fits the affine recurrence that governs the expected norm
trajectory (exponential growth without norm control, bounded with the
anchor rescale), and evaluates desk-scale editing-quality metrics.
"""

__version__ = "0.1.0"

from .linalg import (  # noqa: F401
    EditDelta,
    MemoryMatrix,
    SpdMatrix,
    cholesky,
    frob_inner,
    frob_norm_sq,
    outer_product_norm_sq,
    random_spd,
    whiten,
)
from .keyvalues import (  # noqa: F401
    EditRequest,
    KeyModel,
    ValueModel,
    ValueModelConfig,
    sample_key,
    target_value_statistical,
    target_value_surrogate,
)
from .editor import (  # noqa: F401
    EditOutcome,
    EditorState,
    apply_edit,
    compute_delta,
    init_state,
    minimal_disturbance_check,
    pre_edit_value,
)
from .nas import AnchorSpec, estimate_anchor, rescale  # noqa: F401
from .dynamics import (  # noqa: F401
    FitResult,
    RecurrenceParams,
    TraceRecord,
    collapse_point,
    fit_log_rn,
    fit_value_norm_laws,
    predict_trajectory,
    verify_recursion,
)
from .metrics import (  # noqa: F401
    DriftReport,
    MetricsReport,
    ProbeSet,
    evaluate_edits,
    representation_drift,
)
from .config import RunConfig, load_config  # noqa: F401
