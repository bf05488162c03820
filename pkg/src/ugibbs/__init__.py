"""Desk-scale numerics for generalized u-Gibbs measures of smooth torus maps:
exterior-power exponents, certified disk subdivision trees, selected-time
disk measures and their diagnostics."""

from .systems import SmoothSystem, TorusPoint, make_system

__all__ = ["SmoothSystem", "TorusPoint", "make_system"]
