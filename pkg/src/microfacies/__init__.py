"""Thin-section microfacies image classification with numpy CNNs."""

__version__ = "0.1.0"
