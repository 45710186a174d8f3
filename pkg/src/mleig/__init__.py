"""Multilevel correction finite element solver for nonsymmetric PDE
eigenvalue clusters."""

from .mesh import (Mesh, generate_unit_square, generate_l_shape, refine_red,
                   refine_bisection, write_mesh_text)
from .fem import (FeSpace, Coefficients, FormPencil, ExactFunction,
                  build_space, assemble_pencil, build_prolongation,
                  solve_source, error_norms, convection_model,
                  rotational_model, h1_gram)
from .smalleig import (EigenTriple, ChainBasis, solve_dense_pencil,
                       select_cluster, compute_generalized_chain,
                       ClusterSelector)
from .correction import (EigenCluster, AugmentedBasis, initial_solve,
                         one_correction_step, multilevel_solve)
from .metrics import (GapReport, mean_eigenvalue, subspace_gap,
                      align_to_exact, fit_order)
from .adaptivity import (EstimateField, zz_recover, combine_estimators,
                         mark_dorfler, adaptive_multilevel)

__version__ = "0.1.0"
