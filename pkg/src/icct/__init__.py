"""Inter-class correlation transfer: losses, gradients, and a small MLP lab."""

from icct.errors import (
    ConfigError,
    DataError,
    IcctError,
    NumericError,
    RunError,
    UsageError,
)
from icct.icc import (
    IccLossMode,
    belief_weight_report,
    icc_loss,
    icc_loss_grad,
    icc_map_batch,
    icc_map_per_sample,
)
from icct.kd import KdConfig, kd_loss, kd_loss_grad, lt_loss, lt_loss_grad, soften

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "IcctError",
    "NumericError",
    "RunError",
    "UsageError",
    "IccLossMode",
    "belief_weight_report",
    "icc_loss",
    "icc_loss_grad",
    "icc_map_batch",
    "icc_map_per_sample",
    "KdConfig",
    "kd_loss",
    "kd_loss_grad",
    "lt_loss",
    "lt_loss_grad",
    "soften",
]
