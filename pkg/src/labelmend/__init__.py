"""labelmend: detect clean pixels in noisy CAM pseudo-labels and correct the rest
with a per-image superpixel graph attention network."""

__version__ = "0.1.0"

UNLABELED = -1
"""In-memory marker for pixels without a label (written as 255 in PGM files)."""
