"""Multi-act dialogue policy models: gCAS, CAS, attention seq2seq and pair classification."""

__version__ = "0.1.0"
