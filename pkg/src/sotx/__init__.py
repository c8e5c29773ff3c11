"""Signed optimal transport with smooth, atomic, and fractal components.

The package solves four-block Kantorovich problems between signed measures,
extracts dual potentials and transport maps, partitions the source space by
sign routing, and numerically verifies the structure equations (coupled
Monge-Ampere residuals, the double Legendre system, cyclical monotonicity,
and fractal preservation) at desk scale.
"""

from sotx.measures import (
    AtomSet,
    AssumptionReport,
    FractalPart,
    GridDensity,
    SignedComponent,
    SignedMeasure,
    build_signed_measure,
    check_assumptions,
    discretize,
)
from sotx.fractalgeo import (
    AhlforsReport,
    DimensionFit,
    KernelSpec,
    ahlfors_constants,
    box_counting_dimension,
    fractal_smooth,
    generate_cantor,
    generate_sierpinski,
    kernel_eval,
    kernel_normalizer,
    local_measure,
)
from sotx.regularize import RegularizationParams, apply_Rn, mollify_ac, weak_error_check
from sotx.transport import (
    BlockPlan,
    CostSpec,
    DualPotentials,
    TransportMap,
    TransportProblem,
    build_block_problem,
    check_cyclical_monotonicity,
    duality_gap,
    extract_map,
    solve_exact,
    solve_entropic,
)
from sotx.partition import (
    AmbientPotentials,
    PartitionLabels,
    PartitionParams,
    assign_regions,
    build_potentials,
    inter_sign_ratio,
    regime_scan,
    signed_texture_distance,
)
from sotx.verify import (
    PreservationReport,
    ResidualField,
    fractal_preservation_report,
    legendre_system_residual,
    ma_residual_inter,
    ma_residual_intra,
    sign_condition,
)

__version__ = "0.1.0"
