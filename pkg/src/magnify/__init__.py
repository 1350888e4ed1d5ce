"""Dilation expansions, invertibility certificates and local inversion for polynomial maps."""

__version__ = "0.1.0"

from .polymap import PolynomialMap, exact_expansion, format_map, load_map, parse_map  # noqa: E402
from .magnification import (  # noqa: E402
    DeltaLadder,
    DilationFrame,
    Expansion,
    almost_linearity_defect,
    dilated_eval,
    fit_expansion,
    nested_dilated_eval,
    remainder_slope,
)
from .symalg import (  # noqa: E402
    QuadDifferential,
    SymTensor2,
    kernel_basis,
    pencil_matrix,
    regularity_margin,
    segre_inverse,
    sym_product,
    transversal,
)
from .certify import (  # noqa: E402
    certify_first_order,
    certify_quadratic,
    falsify_injectivity,
    scale_sweep,
    uniform_diff_modulus,
)
from .solver import coverage_check, invert_degenerate, invert_quadratic, invert_regular  # noqa: E402
