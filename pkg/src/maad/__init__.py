"""Imitation from observations with an inverse-dynamics regulariser."""
