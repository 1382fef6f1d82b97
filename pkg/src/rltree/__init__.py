"""Tree LSTM sentence encoders whose composition order is learned with REINFORCE."""

__version__ = "0.1.0"
