"""flowsim: simulated image-flow training pairs for video salient object
detection, plus the two-stream network and evaluation suite."""

__version__ = "0.1.0"
