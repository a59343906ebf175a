"""Bayesian joint longitudinal-multistate models with blockwise inference.

The package couples a linear mixed model for a repeatedly measured
marker with Weibull transition intensities of a clock-reset multistate
process, and estimates the joint posterior three ways: all at once, per
competing-risks block, or per single transition, with the blockwise
strategies running embarrassingly parallel.  A built-in No-U-Turn
sampler, cohort simulator and PSIS-LOO model comparison round out the
toolkit.
"""

__version__ = "0.1.0"

from .cohort import (  # noqa: F401
    CONCURRENT,
    HISTORICAL,
    BlockData,
    Cohort,
    EventHistory,
    LongitudinalRecord,
    Subject,
    block_event_data,
    block_risk_set,
    link_longitudinal,
    load_cohort_csv,
    load_cohort_json,
    save_cohort_csv,
    save_cohort_json,
)
from .diagnostics import diagnostics, ess_bulk, mcse_mean, split_rhat  # noqa: F401
from .engine import FitResult, FitSpec, fit, full_conditional_check, stable_seed, summarize  # noqa: F401
from .graph import CrBlock, StBlock, TransitionDiagram, build_diagram, decompose  # noqa: F401
from .loo import LooResult, PointwiseLogLik, compare_loo, gpd_fit_tail, psis_loo  # noqa: F401
from .nuts import ChainOutput, NutsConfig, sample, sample_chain  # noqa: F401
from .posterior import (  # noqa: F401
    ParameterVector,
    PriorSpec,
    Target,
    build_cr_target,
    build_msm_target,
    build_st_target,
    build_target,
    grad_log_posterior,
    log_posterior,
)
from .presets import make_sim_spec, preset_names  # noqa: F401
from .simulate import AgeMixture, SimSpec, simulate_cohort, simulate_event_history, simulate_visits  # noqa: F401
from .study import StudySpec, run_study, truth_table  # noqa: F401
from .submodels import (  # noqa: F401
    GL15_NODES,
    GL15_WEIGHTS,
    LongitudinalParams,
    RandomEffects,
    TransitionParams,
    cr_event_loglik,
    cumulative_hazard,
    event_loglik,
    longitudinal_loglik,
    msm_event_loglik,
    st_event_loglik,
    trajectory_value,
    transition_intensity,
)
