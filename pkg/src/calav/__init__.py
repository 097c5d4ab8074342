"""calav: authorship verification with calibrated probabilistic scoring.

The pipeline maps a pair of documents to three nested posteriors for the
same-author hypothesis: a kernelized metric-learning similarity, a Bayes
factor score under a two-covariance Gaussian model, and a confusion-adapted
calibrated posterior. See README.md for the full tour.
"""

__version__ = "0.1.0"
