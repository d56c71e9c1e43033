"""Reference-bound sketch video colorization, desk scale.

Synthetic cartoon clips with exact instance masks feed an automated
multi-reference curation pipeline; a minimal diffusion transformer consumes
the curated samples through temporal token concatenation, modality-disjoint
rotary indexing, and hard correspondence-masked attention.
"""

__version__ = "0.1.0"
