"""Random-effects meta-analysis of study-level correlations.

Ingest coded effects, pool them on the Fisher-z scale, test heterogeneity and
publication bias, run subgroup and meta-regression moderator analyses, and
render report tables and funnel plots.
"""
import logging

from .bias import diagnose_bias, egger_test, failsafe_n, funnel_points
from .config import RunConfig
from .dataset import CodedDataset, StudyEffect, apply_mapping, group_by_factor, load_bundled, parse_dataset
from .moderators import meta_regression, subgroup_analysis
from .pooling import heterogeneity, pool, random_effects_pool
from .report import AnalysisReport, emit_funnel_svg, render_tables, run_pipeline
from .transforms import NormalizedEffect, beta_to_r, normalize, normalize_all, r_to_z, z_to_r

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "AnalysisReport", "CodedDataset", "NormalizedEffect", "RunConfig", "StudyEffect", "apply_mapping",
    "beta_to_r", "diagnose_bias", "egger_test", "emit_funnel_svg", "failsafe_n", "funnel_points",
    "group_by_factor", "heterogeneity", "load_bundled", "meta_regression", "normalize", "normalize_all",
    "parse_dataset", "pool", "r_to_z", "random_effects_pool", "render_tables", "run_pipeline",
    "subgroup_analysis", "z_to_r",
]
