"""Fast Gaussian-process approximations for autocorrelated data via data thinning."""

from .dataset import CsvSchema, Dataset, Standardization, load_csv, standardize
from .errors import ConfigError, DataError, NumericalError, ThinGPError
from .kernels import (COMPACT, MATERN15, SQEXP, Hyperparameters, KernelSpec, cov_matrix,
                      cross_cov, kernel_eval, scaled_distance)
from .thinning import (BlockPartition, PacfTable, max_thinning_for, pacf, partition,
                       select_thinning, select_thinning_number)
from .conditioning import (ConditioningPlan, MaximinOrder, maximin_order, prediction_plan,
                           training_plan)
from .vecchia import (FitConfig, FitReport, PredictionResult, VecchiaModel, fit,
                      loglik_gradient, predict, training_residuals, vecchia_loglik)
from .blockmodels import (EnsemblePrediction, TwinBlendParams, TwinModel, ensemble_predict,
                          fit_twin_ensemble, lagp_single_block_predict, lagp_unthinned_predict,
                          twin_fit)
from .temporal import ResidualSeries, TemporalModel, combine, fit_g, predict_g, predict_g_series
from .bench import (ArmArSpec, MetricReport, ProtocolConfig, nlpd, rmse, robot_arm,
                    run_method, run_protocol, scenario_spec, simulate)

__version__ = "0.1.0"
