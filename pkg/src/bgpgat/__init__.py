"""BGP anomaly detection with multi-view graph attention and LSTM."""

__version__ = "0.1.0"
