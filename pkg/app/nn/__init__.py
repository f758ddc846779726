"""NumPy network kernels, the AttDiCNN model and its training loop."""
