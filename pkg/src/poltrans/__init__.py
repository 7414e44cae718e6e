"""Polarized wave transport in weakly scattering random media.

Modules
-------
medium     random-medium statistics (autocorrelation, power spectra)
geometry   polarization frames and coupling blocks
source     initial amplitudes and coherence from a source current
kernel     scattering matrices Q, S and mean free paths
transport  evolution of the 2x2 coherence matrix
hflimit    high-frequency limit and convergence checks
rtbridge   cross-checks against the radiative-transfer formulation
mcoracle   Monte Carlo ensemble oracle for the transport model
cli        command-line entry point
"""
__version__ = "0.1.0"
