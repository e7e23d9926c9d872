"""Interfaces of the contact-and-barrier and two-type contact processes:
exact graphical-construction simulation, patchwork sewing, renewal
statistics and verification suites."""

__version__ = "0.1.0"
