"""Monte Carlo and quadrature toolkit for Green functions of stable-like
Levy processes on bounded Lipschitz domains."""

__version__ = "0.1.0"

from .geometry import (
    Ball, Box, Domain, Interval, Polygon, ReferencePoints,
    domain_from_dict, domain_from_json, interpolation_point, reference_points,
)
from .models import (
    LevyModel, SigmaStats, bump_perturbed_model, custom_model,
    model_from_dict, model_from_json, relativistic_model, stable_model,
    truncated_model,
)
from .stable import (
    GreenEnvelope, PhiProfile, StableDensity, ball_exit_sample, ball_green,
    ball_mean_exit, ball_poisson_kernel, green_envelope, interval_green,
    potential_kernel, stable_constant, stable_density,
)
