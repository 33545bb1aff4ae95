"""qlab: a desk-scale numerical laboratory for fourth-order conformal curvature."""

__version__ = "0.1.0"

from .conformal_ops import (ConformalExponents, CurvatureData, exponents,
                            equation_constant, laplacian, bilaplacian,
                            q_curvature_flatbg, q_curvature_tensorial,
                            scalar_curvature_flatbg, conformal_laplacian_flat,
                            paneitz_functional, paneitz_functional_radial)
from .grids import GridField, RadialField, radial_laplacian, radial_bilaplacian
from .stereographic import Bubble, bubble, unit_q_bubble, chart, project, unproject
from .mobius import (MobiusMap, SchottkyGroup, Sphere, similarity, inversion,
                     two_generator_group, cyclic_loxodromic_group,
                     enumerate_words, word_count, poincare_partial_sum,
                     estimate_poincare_exponent, automorphic_extend,
                     poincare_series_field, poincare_chart_field, orbit_integral)
from .radial_blowup import (spherical_average, integrate_radial_system,
                            sigma_sequence, iterate_lower_bounds, jensen_check)
from .moving_plane import (reflect, reflect_field, fit_far_field,
                           asymptotic_sign_region, find_lambda_star,
                           ball_convexity)
from .rescale import (RescaleJob, rescale_job, blowup_rescale, rescaled_field,
                      equation_invariance_check, bubble_match)
