"""Goal-driven perception on noisy MNIST pairs with contrastive excitation
backprop and an ACh/NE goal-inference loop."""

__version__ = "0.1.0"
