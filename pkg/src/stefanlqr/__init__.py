"""Riccati-feedback boundary control of a two-phase Stefan problem.

The package couples a moving-mesh P1 finite element discretization of the
two-phase Stefan problem with a low-rank solver for the resulting
non-autonomous generalized differential Riccati equation.  Feedback gains
are computed backwards in time and applied in a time-adaptive closed-loop
simulation.
"""

__version__ = "0.1.0"
