"""Intermediate-domain blending for adversarial domain adaptation.

Subpackages/modules:
    schedule    -- training progress and dynamic mixing-weight curves
    imaging     -- pixel buffers, blending operators, fog translator, PNG I/O
    dataset     -- synthetic grid-detection benchmark, pairing, manifests
    autodiff    -- minimal reverse-mode tape with a gradient reversal layer
    optim       -- decoupled-weight-decay adaptive optimizer, checkpoints
    model       -- toy grid detector and the three-level discriminator bank
    losses      -- supervised and (soft-label) domain-adversarial losses
    training    -- pretrain / fine-tune loops
    evaluation  -- per-class average precision on held-out targets
    cli         -- command-line entry point
"""

__version__ = "0.1.0"
