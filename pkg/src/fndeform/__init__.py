"""Nielsen deformations of tuples in compact Lie groups.

Group arithmetic, adjoint-span density tests, word nets, certified Nielsen
deformation to generating tuples, torsion-product witnesses and random
Nielsen walk statistics.
"""
from .algebra import (DensityCertificate, abelian_dense, brute_force_span_dim, dense_tuple_certificate,
                      find_integer_relation, generates_algebra, omega_test, omega_tilde_test, span_closure)
from .config import Tolerances, tolerances, use_tolerances
from .errors import (BudgetExhausted, CertificationFailed, CutLocusError, FnDeformError, InputError,
                     NetUnreachable, NoConvergence, NotRegularError, QmaxTooSmall, ReplayMismatch,
                     SpecMismatch, TargetTooFar)
from .ergodic import WalkConfig, WalkStats, haar_expectations, left_translation_walk, run_walk, y_membership
from .groups import (AdjointMatrix, AlgebraElement, GroupElement, GroupSpec, adjoint, decode_element, distance,
                     encode_element, exp_map, haar_sample, inverse, is_regular, is_torsion, log_map, multiply,
                     perturb, rationalize, torsion_order, torsion_project)
from .nielsen import (DeformationProblem, InvertEntry, LeftMultiply, MoveCertificate, SwapEntries, apply_move,
                      deform_to_generate, general_deform, replay, replay_residual)
from .torsion import (FAWitness, claim_check, fa_witness, is_product_map_open, product_differential,
                      solve_torsion_product, z2_example)
from .words import NetTable, Word, build_net, enumerate_words, evaluate, steer_to_target

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
