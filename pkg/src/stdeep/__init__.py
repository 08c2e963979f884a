"""stdeep: video-level fake-detection research framework.

Pieces: face-track filtering (`facepipe`), procedural labeled video corpus
(`synthcorpus`), clip sampling and augmentation (`clipper`), the three
encoder families (`encoders`), the balanced-batch training protocol
(`trainer`), class-level metrics and leave-one-method-out campaigns
(`evalkit`), and temporal/feature/activation probes (`probes`).  The
`stdeep` CLI exposes all of it as reproducible subcommands.
"""

__version__ = "0.1.0"
