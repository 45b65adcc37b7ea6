"""Lavrentiev regularization for nonnegative operators.

Submodules
----------
operators
    Dense operators, builders, certificates and resolvent solves.
fractional
    Fractional powers through resolvent integrals.
core
    Bias, the error functionals and their brackets.
rules
    Parameter choice rules.
ratelab
    Rate fits, witnesses, saturation and converse probes.
"""

from . import core, errors, fractional, operators, ratelab, rules
from .core import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .fractional import *  # noqa: F401,F403
from .operators import *  # noqa: F401,F403
from .ratelab import *  # noqa: F401,F403
from .rules import *  # noqa: F401,F403

__version__ = "0.1.0"

__all__ = (
    core.__all__ + errors.__all__ + fractional.__all__ + operators.__all__
    + ratelab.__all__ + rules.__all__
)
