"""Technical-expert online learning backtests with statistical-arbitrage and overfitting tests."""

__version__ = "0.1.0"
