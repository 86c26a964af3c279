"""Training, evaluation, ablation and gradient checking."""
