"""Topology-informed trajectory prediction with h-signatures.

Submodules:

- ``topology``: environments, ray-crossing words, h-signature reduction.
- ``vomp``: variable-order Markov model over h-signature words.
- ``gmm``: per-class Gaussian mixtures and measurement conditioning.
- ``data``: trajectory ingestion, resampling and synthetic generation.
- ``evaluation``: ADE / AMD / KLD metrics and the observation sweep.
- ``cli``: the ``topotraj`` command line.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
