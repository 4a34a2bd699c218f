"""Small dense/convolutional network kit with exact reverse-mode gradients."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_grad, relative_error
from .layers import Conv2D, Dense, Flatten, MaxPool, xavier_bound, xavier_init
from .network import Sequential, cnn, fnn
from .optim import AdamState, LBFGSState, adam_step, lbfgs_minimize, lbfgs_step, strong_wolfe

__all__ = [
    "AdamState", "Conv2D", "Dense", "Flatten", "LBFGSState", "MaxPool", "Sequential",
    "adam_step", "cnn", "finite_diff_grad", "fnn", "lbfgs_minimize", "lbfgs_step",
    "load_checkpoint", "relative_error", "save_checkpoint", "strong_wolfe", "xavier_bound", "xavier_init",
]
