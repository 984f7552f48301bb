"""Sliding-window concatenation translation toolkit.

Trains and evaluates small encoder-decoder translation models over
windows of consecutive document sentences, with a context-discounted
training objective and segment-shifted position encodings.
"""

__version__ = "0.1.0"
