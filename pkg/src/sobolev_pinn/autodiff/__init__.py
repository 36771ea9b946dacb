from .jet import JetValue, forward_jet, param_gradient, tanh_derivatives
from .multiindex import MAX_ORDER, MultiIndex, SumIndex, UnsupportedOrderError
from .tape import Tape, Var, sum_squares, value_of

__all__ = [
    "JetValue",
    "MAX_ORDER",
    "MultiIndex",
    "SumIndex",
    "Tape",
    "UnsupportedOrderError",
    "Var",
    "forward_jet",
    "param_gradient",
    "sum_squares",
    "tanh_derivatives",
    "value_of",
]
