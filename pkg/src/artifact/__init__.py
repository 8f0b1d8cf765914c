"""Desk-scale laboratory for Lorentzian inverse problems with quartic nonlinearity.

Submodules
----------
lorgeo   causal geometry, null geodesics, transit records, boundary normal charts
beams    Gaussian beams: Fermi charts, Riccati flow, amplitudes, reflection
bdopt    boundary geometric optics and recovery of boundary metric jets
wavelab  finite-difference semilinear wave solver and DN-map experiments
recon    coefficient algebra, stationary-phase ratios, ray transform, arrivals
cli      configuration parsing and experiment runner
"""

__version__ = "0.1.0"
