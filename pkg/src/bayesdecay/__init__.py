"""Bayesian model selection and classification for multi-exponential decay curves."""

from bayesdecay.config import FitConfig, RunConfig
from bayesdecay.model_space import ModelSpec, ParameterLayout, layout, neighbours
from bayesdecay.basis import TimeGrid, NonlinearParams, DesignMatrix, eval_basis, gram, project_data
from bayesdecay.evidence import (
    DecayCurveSet,
    EvidenceResult,
    SufficientStats,
    evaluate,
    sufficient_stats,
)
from bayesdecay.inference import LaplaceResult, fit_model
from bayesdecay.search import SearchTrace, posterior_over_models, search
from bayesdecay.classify import ClassificationResult, PosteriorSummary, classify
from bayesdecay.synth import Component, GeneratingSpec, default_grid, forward, simulate

__all__ = [
    "FitConfig",
    "RunConfig",
    "ModelSpec",
    "ParameterLayout",
    "layout",
    "neighbours",
    "TimeGrid",
    "NonlinearParams",
    "DesignMatrix",
    "eval_basis",
    "gram",
    "project_data",
    "DecayCurveSet",
    "EvidenceResult",
    "SufficientStats",
    "evaluate",
    "sufficient_stats",
    "LaplaceResult",
    "fit_model",
    "SearchTrace",
    "search",
    "posterior_over_models",
    "PosteriorSummary",
    "ClassificationResult",
    "classify",
    "Component",
    "GeneratingSpec",
    "default_grid",
    "forward",
    "simulate",
]
