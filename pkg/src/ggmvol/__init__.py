"""G-Wishart samplers, graph structure search and a graphical stochastic volatility model."""

__version__ = "0.1.0"
