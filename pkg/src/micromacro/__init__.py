"""Secrecy-rate optimization for a UAV transmitter: movable antennas on a hovering
UAV versus trajectory design with a fixed array."""

__version__ = "0.1.0"
