"""Historical simulation with flexible probabilities.

State-conditioned scenario weights via minimum relative entropy, ensemble
combination, long-only max-Sharpe allocation, walk-forward backtests and
backtest-overfitting diagnostics.
"""
from hsfp.errors import ConfigError, DataError, HsfpError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "HsfpError", "NumericalError", "__version__"]
