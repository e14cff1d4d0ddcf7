"""Microwave-free NV-diamond magnetometry via cross-relaxation PL maps.

Simulates photoluminescence maps from the analytical resonance-plane model
and inverts measured or synthetic maps for either the diamond crystal
orientation or the external magnetic-field vector, with full posterior
distributions and symmetry-degeneracy handling.
"""

__version__ = "0.1.0"

from .forward_model import (  # noqa: F401
    ExternalFieldParams,
    LineshapeConfig,
    MeasurementGrid,
    ModelParams,
    PLMap,
    lineshape,
    pl_map,
    pl_value,
    resonance_deltas,
    total_lab_field,
    field_in_sample_frame,
)
from .geometry import (  # noqa: F401
    THETA_C,
    Orientation,
    canonicalize,
    nv_axes,
    orientation_from_z_axis,
    orientation_matrix,
    orientations_equivalent,
    rotation_about_axis,
    symmetry_group,
)
from .inference import (  # noqa: F401
    InferenceOptions,
    Marginal,
    Mode,
    NoiseModel,
    ParamSpace,
    Posterior,
    effective_variance,
    evaluate_posterior,
    infer_field,
    infer_orientation,
    log_likelihood,
    scaling_study,
)
from .estimators import FieldEstimator, OrientationEstimator, as_pl_map  # noqa: F401
from .data_io import (  # noqa: F401
    ConfigError,
    PLMapFormatError,
    ResultsDocument,
    RunConfig,
    read_config,
    read_pl_map,
    read_results,
    synthesize_pl_map,
    write_pl_map,
    write_results,
)
from .spin_oracle import (  # noqa: F401
    OutOfRegimeError,
    SpinConstants,
    TransitionPair,
    hamiltonian_in_nv_frame,
    transition_energies,
    verify_resonance,
)
