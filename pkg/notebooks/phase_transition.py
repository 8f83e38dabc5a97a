"""
Exact recovery phase transition
===============================

Fraction of edges recovered to 1e-6 degrees after one sweep, as the fraction
q of corrupted anchor edges grows, for complete graphs of increasing size.
Kept small so it runs in about a minute on one core.
"""

import os

import numpy as np

from tride.evaluation import PhaseSettings, crossover, default_phase_models, phase_sweep

qs = np.round(np.arange(0.5, 0.951, 0.05), 2)
for n in (20, 40):
    pts = phase_sweep(default_phase_models("complete", [n]), qs, range(8), PhaseSettings(), workers=os.cpu_count())
    fr = [p.fraction for p in pts]
    print(f"n={n:3d} crossover q*={crossover(qs, fr):.3f}  fractions", np.round(fr, 2))
