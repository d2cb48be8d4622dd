"""cspm: complex subband phase-motion modulation classifier.

Submodules:
    signal_gen   synthetic I/Q datasets, channel model, container format
    frontend     learnable complex subband filter bank (free / Morlet)
    phase_motion amplitude-preserving phase-motion features
    layers       batchnorm, conv, bidirectional GRU, attention, linear
    model        CSPMNet assembly, parameter registry, checkpoints
    training     cross-entropy, Adam, training loop, gradient checker
    evaluation   accuracy metrics, SNR segments, parameter/FLOP counters
    cli          command-line interface
"""

__version__ = "0.1.0"
