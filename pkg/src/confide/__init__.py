"""Combine a classifier's probabilities with a categorical labeler's hard labels."""

__version__ = "0.1.0"

from .analysis import cmi_discrete, confidence_ratio_human, confidence_ratio_model, lemma1_check, theorem1_report, theorem2_report
from .calibration import (
    LogTempPrior,
    Temperature,
    TemperaturePosterior,
    bayes_calibrated_probs,
    fit_temperature_map,
    fit_temperature_ml,
    nll_of_temperature,
    posterior_temperature,
    temper,
)
from .combiner import CombinerParams, combine_ll, combine_pl, combine_sp, fit_lr, predict, predict_proba
from .confusion import ConfusionMatrix, DirichletPrior, estimate_map, estimate_mle, human_confidence, prior_from_accuracy
from .domain import CombinationDataset, Example, LabelSpace, load_dataset, save_dataset, split_dataset, validate_prob_vector
from .em import EmConfig, EmTrace, run_em
from .fitting import FitConfig, fit_combiner
from .metrics import MetricsReport, cw_ece, ece, error_rate, mce_l1, nll
from .simulate import SyntheticConfig, generate, learning_curve
