"""Distilled conditional randomization tests.

The package is organised bottom-up:

- :mod:`dcrt.data` datasets, covariate models and conditional laws
- :mod:`dcrt.lasso` penalized regression with cross-validation
- :mod:`dcrt.distill` the summaries d_y and d_x
- :mod:`dcrt.crt` p-value engines
- :mod:`dcrt.select` multiple-testing pipelines
- :mod:`dcrt.sim` simulation designs and the experiment harness
"""

from ._errors import ConvergenceError, DcrtError, NumericalError, ValidationError
from .crt import (TestOutcome, crt_p_value, d0_rf_p_value, d0_statistic, dI_rf_p_value,
                  dI_statistic, gauss_transform, gcm_p_value, hrt_p_value, imhof_tail,
                  ocrt_p_value, ocrt_statistic)
from .data import (ConditionalLaw, CovariateModel, DataSet, conditional_law,
                   conditional_laws, estimate_ledoit_wolf, estimate_nodewise_lasso,
                   load_csv, resample_column)
from .distill import Distillation, distill, distill_x, distill_y_d0, distill_y_dI
from .lasso import (CvLassoFit, LambdaGrid, LassoConfig, LassoFit, LossKind, SequentialRule,
                    cross_validate, default_grid, fit_path, sequential_select, soft_threshold)
from .select import (SelectionConfig, SelectionResult, bh, bonferroni, jaccard_stability,
                     recycle_distillations, screen, screened_p_values, select)

__version__ = "0.1.0"
