"""Synthetic chief-complaint generation and evaluation toolkit.

Pipeline: coded ED visit records -> sparse binary vectors -> LSTM
encoder-decoder -> synthetic free-text chief complaints, plus the metric,
classifier, embedding, and epidemiology tooling used to judge the output.
"""

__version__ = "0.1.0"
