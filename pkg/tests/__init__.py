"""Tests package for Tennis Club Reservation System."""
