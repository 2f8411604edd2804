"""Nonlinear price dynamics on firm-by-day panels.

Factor construction, two-way fixed-effects estimation of cubic return
models, response-surface geometry, residual diagnostics and synthetic
panels with known ground truth.
"""

__version__ = "0.1.0"
