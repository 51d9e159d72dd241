"""Diffusion-planned multi-agent resource-block allocation over MF-TDMA,
with the network simulator it is evaluated on and a verification lab
for the method's distribution-error bounds."""

__version__ = "0.1.0"
