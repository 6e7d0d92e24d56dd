"""Software model of a switched-beam mm-wave MIMO channel sounder.

Modules
-------
waveform     multi-tone sounding signal, crest-factor optimization, Zadoff-Chu reference
beamforming  array geometry, quantized-phase beam codebooks, far-field gains
scene        moving scatterers and blockers, ground-truth multipath components
sounder      sweep schedule, impairments and the capture simulator
calibration  system frequency response synthesis and removal
analysis     PDP/PADP/PAS, MPC extraction, spreads, Doppler, path-loss fits
storage      binary recordings, sidecars, text specs and CSV tables
cli          ``mmsounder`` command-line entry point
"""

__version__ = "0.1.0"
