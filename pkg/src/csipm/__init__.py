"""Self-trained CSI prediction for mmWave vehicular users.

A gNB overhears cooperative awareness messages (CAMs) from vehicles, pairs
them with the CSI feedback it already receives, and trains a small LSTM to
predict each vehicle's next CSI vector.
"""

__version__ = "0.1.0"
