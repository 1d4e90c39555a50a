"""Detection of simulation nodes sensitive to numerical dispersion.

Repeated deterministic runs of the same crash simulation can disagree in
the trajectories of individual mesh nodes. This package labels such nodes
from a small set of repeated runs, encodes single-run trajectory signals
in several ways (relative displacement, Fourier magnitude, db4 wavelet
coefficients, slope variations), and trains classifiers (a rank-reduction
autoencoder with an MLP head, and a random-forest baseline) that flag
dispersion-sensitive nodes from a single new simulation.
"""

__version__ = "0.1.0"
