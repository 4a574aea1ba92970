"""flowsieve: Tor/nonTor traffic classification toolkit.

Flow metering from packet records, correlation-based feature selection,
MLP (gradient-descent or damped-least-squares training) and SMO-trained
SVM classifiers, and a per-class detection-rate evaluation harness.
"""

__version__ = "0.1.0"
