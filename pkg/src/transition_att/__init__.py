"""Treatment effects on the treated for discrete panel outcomes.

Counterfactual outcomes follow the control arm's transition laws given recent
outcome history, optionally within latent types of a Markov mixture.
"""

__version__ = "0.1.0"

from .data import OutcomeAlphabet, PanelDataset, HistoryKey, history_key, load_panel_csv, one_hot, write_panel_csv
from .effects import (
    EffectSeries,
    FlowDecomposition,
    PreTrendReport,
    conditional_counterfactual_mean,
    did_att,
    did_bias,
    flow_decomposition,
    history_contributions,
    placebo_att,
    pre_transition_differences,
    ti_att,
)
from .mixture import (
    EmFit,
    MarkovMixtureParams,
    Schedule,
    bic,
    e_step,
    log_likelihood,
    m_step,
    multistart_fit,
    n_params,
    relabel_ascending,
    run_em,
    select_num_types,
)
from .mixture_effects import att_aggregate, ltatt, mixture_effects, type_flow_decomposition, type_pre_transitions
from .inference import (
    BootstrapConfig,
    BootstrapDraws,
    ConfidenceBands,
    bootstrap_replicate,
    covariance,
    draw_weights,
    run_bootstrap,
    uniform_bands,
)
from .staggered import CohortEffectTable, aggregate_staggered, cohort_att, control_set, estimate_staggered
from .simulate import DgpSpec, StaggeredSpec, mr_example, simulate, simulate_staggered, true_att

__all__ = [
    "__version__",
    "OutcomeAlphabet",
    "PanelDataset",
    "HistoryKey",
    "history_key",
    "load_panel_csv",
    "one_hot",
    "write_panel_csv",
    "EffectSeries",
    "FlowDecomposition",
    "PreTrendReport",
    "conditional_counterfactual_mean",
    "did_att",
    "did_bias",
    "flow_decomposition",
    "history_contributions",
    "placebo_att",
    "pre_transition_differences",
    "ti_att",
    "EmFit",
    "MarkovMixtureParams",
    "Schedule",
    "bic",
    "e_step",
    "log_likelihood",
    "m_step",
    "multistart_fit",
    "n_params",
    "relabel_ascending",
    "run_em",
    "select_num_types",
    "att_aggregate",
    "ltatt",
    "mixture_effects",
    "type_flow_decomposition",
    "type_pre_transitions",
    "BootstrapConfig",
    "BootstrapDraws",
    "ConfidenceBands",
    "bootstrap_replicate",
    "covariance",
    "draw_weights",
    "run_bootstrap",
    "uniform_bands",
    "CohortEffectTable",
    "aggregate_staggered",
    "cohort_att",
    "control_set",
    "estimate_staggered",
    "DgpSpec",
    "StaggeredSpec",
    "mr_example",
    "simulate",
    "simulate_staggered",
    "true_att",
]
