"""Simulation and verification of anisotropic kinetic Brownian motion.

A unit-speed velocity process is integrated into a C^1 path, rescaled to
``X^sigma_t = sigma^-2 x_{sigma^4 t}``, lifted to level-2 rough increments and
developed onto manifolds. Estimators of the limiting covariance and
diagnostics of the diffusive limit are in :mod:`kinbm.stats`.
"""
__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .core import (CovarianceSpec, NumericalError, PathSample, RandomSource, RoughIncrement, chen_compose,
                   chen_inverse, rescale_to_sigma)
from .ensemble import Ensemble, simulate_chains, simulate_ensemble
from .geometry import (ConformalFlat, Euclidean, Frame, FramePath, Hyperbolic2, Sphere2, develop, develop_brownian,
                       develop_time_dependent, make_manifold)
from .roughpath import LiftedPath, levy_area, lift_piecewise_linear, moment_scaling_report
from .velocity import (ConstantVelocity, MarkovWalk, OrnsteinUhlenbeck, RandomFlight, SphereDiffusion, Spin2D,
                       VelocityModel, WalkInterp, make_model, sample_stationary, stationary_density,
                       step_euclidean_lift, step_sphere_velocity)

__all__ = [
    "BACKEND", "CovarianceSpec", "NumericalError", "PathSample", "RandomSource", "RoughIncrement", "chen_compose",
    "chen_inverse", "rescale_to_sigma", "Ensemble", "simulate_chains", "simulate_ensemble", "ConformalFlat",
    "Euclidean", "Frame", "FramePath", "Hyperbolic2", "Sphere2", "develop", "develop_brownian",
    "develop_time_dependent", "make_manifold", "LiftedPath", "levy_area", "lift_piecewise_linear",
    "moment_scaling_report", "ConstantVelocity", "MarkovWalk", "OrnsteinUhlenbeck", "RandomFlight",
    "SphereDiffusion", "Spin2D", "VelocityModel", "WalkInterp", "make_model", "sample_stationary",
    "stationary_density", "step_euclidean_lift", "step_sphere_velocity",
]
