"""berryfact: Born-Oppenheimer Berry phases vs exact electron-nuclear
factorization for a 2D three-ion / one-electron model.

The library scans Born-Oppenheimer surfaces of the model, locates the
conical intersections and the sign seams of the real electronic states,
evaluates discrete Wilson-loop phases, solves the full four-dimensional
eigenproblem, factorizes eigenstates into nuclear amplitude times
conditional electronic state, and compares exact against Born-Oppenheimer
surfaces across a nuclear mass sweep.
"""

__version__ = "0.1.0"

from .grid import (
    Grid,
    ScalarField,
    gradient,
    inner_product,
    integrate,
    laplacian_apply,
    norm,
    normalized,
)
from .gfld import read_gfld, write_gfld
from .model import (
    BOOperator,
    FullOperator,
    ModelParams,
    apply_bo_hamiltonian,
    apply_full_hamiltonian,
    nuclear_potential,
    potential_field,
)
from .eigensolve import (
    EigenPair,
    EigenRequest,
    EigenSolveError,
    dense_oracle,
    lowest_eigenpairs,
    materialize,
)
from .berry import (
    ConnectionField,
    LoopPath,
    LoopThroughDegeneracyError,
    StateFamily,
    connection_field,
    evaluate_loop,
    line_integral,
    wilson_loop_phase,
)
from .bo_surface import (
    BOScanResult,
    SeamReport,
    fix_gauge_real,
    generalized_bo_pes,
    polarization_field,
    polarization_vector,
    scan_bo,
    solve_bo_at,
)
from .exact_fact import (
    ClassificationError,
    FactorizedState,
    PLikeClassification,
    classify_p_like,
    current_identity_check,
    exact_pes,
    factorize,
    residual_eq10,
    residual_eq11,
    solve_full,
)

__all__ = [
    "Grid",
    "ScalarField",
    "gradient",
    "inner_product",
    "integrate",
    "laplacian_apply",
    "norm",
    "normalized",
    "read_gfld",
    "write_gfld",
    "ModelParams",
    "BOOperator",
    "FullOperator",
    "apply_bo_hamiltonian",
    "apply_full_hamiltonian",
    "nuclear_potential",
    "potential_field",
    "EigenPair",
    "EigenRequest",
    "EigenSolveError",
    "dense_oracle",
    "lowest_eigenpairs",
    "materialize",
    "ConnectionField",
    "LoopPath",
    "LoopThroughDegeneracyError",
    "StateFamily",
    "connection_field",
    "evaluate_loop",
    "line_integral",
    "wilson_loop_phase",
    "BOScanResult",
    "SeamReport",
    "fix_gauge_real",
    "generalized_bo_pes",
    "polarization_field",
    "polarization_vector",
    "scan_bo",
    "solve_bo_at",
    "ClassificationError",
    "FactorizedState",
    "PLikeClassification",
    "classify_p_like",
    "current_identity_check",
    "exact_pes",
    "factorize",
    "residual_eq10",
    "residual_eq11",
    "solve_full",
]
