"""Speech-based detection of individual MADRS depression symptoms.

Trains lightweight heads on frozen speech embeddings (or a CNN on
conventional features), evaluates with speaker-independent
cross-validation, majority voting, macro F-scores, and bootstrap model
comparison.
"""

__version__ = "0.1.0"
