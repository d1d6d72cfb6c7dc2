"""Deterministic budget-pacing simulator for guaranteed-display delivery.

Submodules: `quality` (beta quality laws and the percentile transform),
`pacing` (throttling and dual-update primitives), `streams` (request-stream
containers and CSV IO), `engine` (the delivery loops), `simulate` (scenario
configs and the experiment driver), `metrics` (evaluation metrics and the
exact hindsight optimum), `theory` (numeric distribution checks), `cli`
(operator entry point).
"""

from .engine import RUNNERS, DeliveryTrace, RunConfig, run_dmd, run_rcpacing, run_seed
from .metrics import (
    HindsightOptimum,
    MetricsReport,
    aggregate_rounds,
    average_ctr,
    build_report,
    delivery_rate,
    hindsight_optimum,
    regret,
    unsmoothness,
)
from .pacing import PacingHyperParams
from .quality import BetaQualityModel, BoxCoxFit, fit_boxcox
from .simulate import (
    CampaignSpec,
    ScenarioConfig,
    default_scenario,
    generate_stream,
    load_scenario_config,
    run_experiment,
    synth_campaigns,
)
from .streams import ImpressionStream, load_stream_csv, save_stream_csv

__version__ = "0.1.0"

__all__ = [
    "BetaQualityModel",
    "BoxCoxFit",
    "CampaignSpec",
    "DeliveryTrace",
    "HindsightOptimum",
    "ImpressionStream",
    "MetricsReport",
    "PacingHyperParams",
    "RunConfig",
    "RUNNERS",
    "ScenarioConfig",
    "aggregate_rounds",
    "average_ctr",
    "build_report",
    "default_scenario",
    "delivery_rate",
    "fit_boxcox",
    "generate_stream",
    "hindsight_optimum",
    "load_scenario_config",
    "load_stream_csv",
    "regret",
    "run_dmd",
    "run_experiment",
    "run_rcpacing",
    "run_seed",
    "save_stream_csv",
    "synth_campaigns",
    "unsmoothness",
    "__version__",
]
