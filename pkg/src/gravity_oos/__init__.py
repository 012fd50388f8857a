"""Out-of-sample evaluation of gravity estimators and ML regressors on trade panels."""

__version__ = "0.1.0"
