"""IKEv2-style key exchange variants for satellite links, with a link simulator
and a benchmark harness."""

__version__ = "0.1.0"
