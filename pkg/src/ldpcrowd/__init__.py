"""Locally differentially private collection of sparse crowdsourced answers."""

from ldpcrowd.audit import AuditResult, empirical_privacy_ratio
from ldpcrowd.bounds import (
    BoundInputs,
    BoundReport,
    baseline_bound,
    bound_for,
    lp_bound,
    mf_bound,
    rr_bound,
    rrlp_bound,
)
from ldpcrowd.core import (
    DEFAULT_DOMAIN,
    AnswerDomain,
    AnswerMatrix,
    GroundTruth,
    MechanismConfig,
    MechanismKind,
    MFConfig,
    ReplacementStrategy,
    sparsity_profile,
)
from ldpcrowd.data import Dataset, SyntheticSpec, generate_synthetic, load_answers_csv, load_truth_csv
from ldpcrowd.experiment import ExperimentConfig, run_experiment
from ldpcrowd.inference import InferenceResult, evaluate_mae_change, infer_truth, mae
from ldpcrowd.mechanisms import (
    lp_perturb,
    mf_closed_form_oracle,
    mf_fit_worker_profile,
    mf_generate_task_profile,
    mf_perturb,
    perturb_matrix,
    rr_perturb,
    rrlp_perturb,
)

__version__ = "0.1.0"
