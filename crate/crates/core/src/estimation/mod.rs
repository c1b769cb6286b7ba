//! Numerics: logistic transforms, skeleton calibration, CRM posterior
//! quadrature and the fixed-intercept logistic MLE.

mod logistic;
mod posterior;
pub mod quadrature;
mod skeleton;

pub use logistic::{
    fit_fixed_intercept_logistic, fit_with, log_likelihood, lr_pvalue, score, wald_pvalue, FitOptions, FittedModel,
    LogisticRow, PValueMethod, COEF_CAP, GRADIENT_TOL, MAX_ITERATIONS,
};
pub use posterior::{posterior_dlt_probs, posterior_slope, CrmPrior, PosteriorSummary};
pub use skeleton::{calibrate_skeleton, dose_labels, expit, logit};
