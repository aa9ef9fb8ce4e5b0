"""Few-shot demand forecasting with feature-modulated first-order meta-learning."""

__version__ = "0.1.0"
