"""Self-training with progressive augmentation for unsupervised domain adaptation of embedders."""
