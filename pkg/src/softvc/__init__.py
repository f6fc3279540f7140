"""Soft and discrete speech units for voice conversion, at desk scale.

Submodules
----------
core            tensor files, unit files, manifests, data types
dsp             WAV I/O, log-mel analysis, Griffin-Lim synthesis
units_discrete  speaker normalization, k-means, nearest-centroid encoding
units_soft      cosine-softmax soft content encoder and its training
acoustic        unit-to-mel MLP acoustic model and the conversion pipeline
metrics         WER/PER alignment, per-phoneme breakdown, EER, MOS
cli             the ``softvc`` command-line entry point
"""

from softvc.errors import ConfigError, DataError, FormatError, ParseError, SoftVCError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "ParseError",
    "SoftVCError",
    "__version__",
]
