"""Numerical laboratory for templated output-feedback stabilization.

Core pieces: jet-based observability stacks (`jets`), analytic benchmark
systems and smooth saturation (`models`), control templates with grid
certification (`template`), a high-gain observer with numerical left
inversion (`observer`), hybrid closed-loop simulation (`hybrid`), decay
diagnostics (`analysis`), and a batch CLI (`cli`).
"""

from .analysis import DecayFit, arc_summary, containment, estimation_error, fit_rate
from .errors import CapabilityError, ConfigError, NumericalError, TemplabError
from .hybrid import (HybridArc, HybridState, IntegratorParams, initial_state,
                     jump_map, simulate, simulate_sample_hold,
                     simulate_state_feedback)
from .jets import MAX_JET_DEPTH, ObservabilityStack, calH, calH_jacobian, hk
from .models import (Benchmark, Box, CompactSpec, SatMap, SystemModel,
                     builtin_names, builtin_system, system_from_expressions)
from .observer import (ObserverConfig, PhiResult, hurwitz_gains, observer_rhs,
                       phi_invert)
from .template import (CertificationReport, ControlTemplate, GridParams,
                       SearchResult, certify_template, isometry_from,
                       isometry_update, normalize_template, search_template)

__version__ = "0.1.0"

__all__ = [
    "DecayFit", "arc_summary", "containment", "estimation_error", "fit_rate",
    "CapabilityError", "ConfigError", "NumericalError", "TemplabError",
    "HybridArc", "HybridState", "IntegratorParams", "initial_state",
    "jump_map", "simulate", "simulate_sample_hold", "simulate_state_feedback",
    "MAX_JET_DEPTH", "ObservabilityStack", "calH", "calH_jacobian", "hk",
    "Benchmark", "Box", "CompactSpec", "SatMap", "SystemModel",
    "builtin_names", "builtin_system", "system_from_expressions",
    "ObserverConfig", "PhiResult", "hurwitz_gains", "observer_rhs",
    "phi_invert",
    "CertificationReport", "ControlTemplate", "GridParams", "SearchResult",
    "certify_template", "isometry_from", "isometry_update",
    "normalize_template", "search_template",
]
