"""Festival attendance co-clustering and micro-group detection from proximity scans."""
from . import attendance, evaluation, ingest, irm, microgroups, synth
from .irm import IRMConfig, IRMState, run_inference

__all__ = ["attendance", "evaluation", "ingest", "irm", "microgroups", "synth",
           "IRMConfig", "IRMState", "run_inference"]
__version__ = "0.1.0"
