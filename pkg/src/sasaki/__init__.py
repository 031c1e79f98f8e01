"""Numerical comparison geometry on Sasakian model spaces.

Submodules: :mod:`~sasaki.comparison` (scalar comparison functions),
:mod:`~sasaki.models` (left-invariant model spaces), :mod:`~sasaki.geodesics`
(Hamiltonian flow and shooting), :mod:`~sasaki.transport` (parallel and mirror
maps), :mod:`~sasaki.jacobi` (Jacobi fields and index forms) and
:mod:`~sasaki.coupling` (coupled Brownian motions).
"""

__version__ = "0.1.0"

from .comparison import f_rie, f_sas, g_rie, g_sas, k_constants, s_k, c_k  # noqa: E402
from .errors import NumericError, PoleError  # noqa: E402
from .models import ModelSpace, load_model, make_model  # noqa: E402

__all__ = [
    "__version__",
    "f_rie",
    "f_sas",
    "g_rie",
    "g_sas",
    "k_constants",
    "s_k",
    "c_k",
    "NumericError",
    "PoleError",
    "ModelSpace",
    "load_model",
    "make_model",
]
