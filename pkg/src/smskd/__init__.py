"""Sequential multi-stage knowledge distillation on a small numpy autodiff engine."""

from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    IntegrityError,
    NumericError,
    ParameterError,
    ShapeError,
    SMSKDError,
)
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
