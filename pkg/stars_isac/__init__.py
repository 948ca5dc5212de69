"""
Sensor deployment and joint beamforming for STARS-aided near-field
integrated sensing and communication.
"""

__version__ = "0.1.0"
