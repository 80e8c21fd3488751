"""Attribute-privacy image toolkit: two-stage attribute inversion and
uncertainty-maximizing obfuscation, with training, evaluation, a CLI, and a
local inference service."""

__version__ = "0.1.0"
