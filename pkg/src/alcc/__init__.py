"""Adaptive leading cruise control: IDM calibration, DDPG training of a CAV ahead of an HDV, energy evaluation."""

__version__ = "0.1.0"
