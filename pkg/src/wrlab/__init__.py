"""wrlab: numerical laboratory for weighted parabolic regularity.

Weight calculus (Muckenhoupt characteristics, weighted BMO), weighted
parabolic cylinders, a lattice covering construction, a degenerate-parabolic
finite-difference solver, and experiment drivers that check the associated
explicit inequalities at desk scale.
"""

from .weights import (SINGULAR, Weight, WeightError, constant, eval_weight,
                      log_weight, mollify, parse_weight, power_weight,
                      product, truncate, weight_pow, weighted_sum)
from .quadrature import QuadratureError, QuadratureSpec, ball_volume
from .ball_calculus import (Ball, BallFamily, SeminormEstimate, ap_characteristic,
                            ball_average, bmo_q, bmo_weighted, make_family,
                            refine_family, weight_measure)
from .report import Check, FittedConstant, Report

__version__ = "0.1.0"
