"""Semi-supervised multi-modal federated learning with temporal contrastive training."""

__version__ = "0.1.0"
