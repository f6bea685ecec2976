"""Invariant curves of almost periodic twist maps.

Weighted-norm Fourier arithmetic over Diophantine frequency lattices,
small-divisor difference solves, the KAM step/iteration toward an invariant
curve with a verified conjugacy residual, and the forced-pendulum
application with its large-energy Poincare return map.
"""

from .apseries import AnalyticityWindow, APSeries1, APSeries2, compose, \
    invert_near_identity
from .frequency import (DiophantineParams, FrequencyContext, Lattice,
                        diophantine_check, rotation_check, sample_alpha,
                        sample_frequency, small_divisor_bound)
from .homological import solve_difference, solve_modified_system
from .kam import (InvariantCurve, KAMSchedule, KAMTransform, StepEstimates,
                  kam_iterate, kam_step, orbit_shadow_check, verify_conjugacy)
from .multiindex import MultiIndex, enumerate_up_to
from .pendulum import (PendulumSystem, PoincareState, boundedness_experiment,
                       forcing_primitives, integrate_ivp, poincare_map,
                       small_twist_chart)
from .twistmap import SmallTwistMap, TwistMap, to_standard

__version__ = "0.1.0"
