"""Symmetric-stress mixed finite elements for Reissner-Mindlin plates.

A 2D numpy/scipy library built around a conforming symmetric H(div)
triangle element (polytopal template construction with fourth-order edge
transformations, curved-element capable), with primal, three-field and
quad-field plate formulations, curved disk and adaptive L-shape benchmark
studies.
"""

from .tensors import (
    Material,
    SymMatrix2,
    Tensor4,
    apply_compliance,
    apply_stiffness,
    compliance_matrix,
    double_contract,
    edge_transformation,
    stiffness_matrix,
)
from .polynomials import (
    PolyKernel,
    barycentric,
    integrated_legendre,
    legendre,
    scaled_integrated_legendre,
)
from .quadrature import QuadratureRule, gauss_rule_01, triangle_rule
from .mesh import (
    GeometryMap,
    Mesh,
    disk_mesh,
    geometry_eval,
    lshape_mesh,
    reference_edges,
    refine,
    square_mesh,
)
from .spaces import (
    BasisFunction,
    DGSpace,
    HZSpace,
    LagrangeSpace,
    RTSpace,
    build_dof_map,
    hz_cell_basis,
    hz_edge_kernel,
    hz_reference_basis,
)
from .assembly import (
    SparseSystem,
    apply_deflection_neumann,
    apply_hz_dirichlet,
    assemble_block,
    hz_dirichlet_values,
)
from .solver import FactoredSystem, factor, fit_slope, solve
from .formulations import (
    PlateProblem,
    SolutionFields,
    analytic_disk,
    analytic_square,
    disk_load,
    error_l2,
    postprocess_shear,
    solve_plate,
    solve_prm,
    solve_qfsrm,
    solve_tfsrm,
)
from .study import (
    ConvergenceRecord,
    StudyConfig,
    dorfler_mark,
    emit_results,
    recovery_estimate,
    run_adaptive,
    run_convergence,
)

__version__ = "0.1.0"
