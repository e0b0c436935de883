"""Input-fault tolerance characterization for image classifiers.

Trains a small all-convolutional digit classifier, injects input faults of
controlled strength (additive white Gaussian noise, iterative gradient
attacks, worst-case spatial transforms), and summarizes tolerance as curves
of prediction information and accuracy versus input SNR.
"""

__version__ = "0.1.0"
