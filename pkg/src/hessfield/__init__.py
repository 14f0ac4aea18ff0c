"""Continuous Hessenberg reduction of matrix fields over simplicial meshes."""

from .domain import (Domain, MatrixField, ToleranceField, audit_continuity, build_grid,
                     build_sphere, evaluate)
from .errors import (CertificationError, HessfieldError, HypothesisViolation,
                     InvariantViolation, PreconditionError)
from .avoidance import VectorField, avoid_k_maps, avoid_ray, avoid_zero, avoid_zero_operator
from .linalg import classify_BH, classify_H, householder_annihilate, givens_annihilate
from .reduction import (hessenberg_reduce_default, hessenberg_reduce_dim1, hessenberg_reduce_dim3,
                        hessenberg_summary, struc_decompose, strucdim3_classify)
from .spectra import (bott_field, interlacing_check, multiplicity_bounds_check, separate_default,
                      separate_dim2, separate_dim4, sturm_recurrence_check)
from .projections import ProjectionField, extract_section, projection_reduce, trivial_summand
from .operators import OperatorField, column_freeze_check, cyclic_to_hessenberg, operator_reduce

__version__ = "0.1.0"
