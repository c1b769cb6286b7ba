use crate::error::{Error, Result};

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit of {p} is undefined")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standardized dose labels: `label_j = (logit(p0j) - intercept) / prior_slope`.
pub fn dose_labels(skeleton: &[f64], intercept: f64, prior_slope: f64) -> Result<Vec<f64>> {
    if !(prior_slope > 0.0) {
        return Err(Error::InvalidArgument(format!("prior slope must be positive, got {prior_slope}")));
    }
    skeleton.iter().map(|&p| logit(p).map(|l| (l - intercept) / prior_slope)).collect()
}

/// Indifference-interval skeleton for the one-parameter logistic CRM model
/// `psi(d, b) = expit(intercept + exp(b) * d)`.
///
/// Dose `nu` (1-based) is anchored at `target`. Moving outward, each boundary
/// `b` between neighbouring doses is the slope at which the lower dose sits at
/// `target - half_width` while the upper dose sits at `target + half_width`,
/// so every dose is recommended over an interval of true toxicity
/// `(target - half_width, target + half_width)`.
pub fn calibrate_skeleton(
    target: f64,
    n_doses: usize,
    nu: usize,
    half_width: f64,
    intercept: f64,
) -> Result<Vec<f64>> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target {target} must lie in (0, 1)")));
    }
    if n_doses == 0 || nu == 0 || nu > n_doses {
        return Err(Error::InvalidArgument(format!(
            "prior MTD {nu} must lie in 1..={n_doses}"
        )));
    }
    if !(half_width > 0.0 && half_width < target.min(1.0 - target)) {
        return Err(Error::InvalidArgument(format!(
            "half-width {half_width} must lie in (0, {})",
            target.min(1.0 - target)
        )));
    }
    let upper = logit(target + half_width)? - intercept;
    let lower = logit(target - half_width)? - intercept;

    let mut labels = vec![0.0; n_doses];
    labels[nu - 1] = logit(target)? - intercept;
    let log_slope = |numerator: f64, label: f64| -> Result<f64> {
        let ratio = numerator / label;
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Calibration(format!(
                "no slope maps label {label} to logit offset {numerator}"
            )));
        }
        Ok(ratio.ln())
    };
    for k in nu..n_doses {
        let b = log_slope(lower, labels[k - 1])?;
        labels[k] = upper / b.exp();
    }
    for k in (2..=nu).rev() {
        let b = log_slope(upper, labels[k - 1])?;
        labels[k - 2] = lower / b.exp();
    }

    let mut skeleton: Vec<f64> = labels.iter().map(|&d| expit(intercept + d)).collect();
    skeleton[nu - 1] = target;
    if skeleton.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || skeleton.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Calibration(format!("recursion left (0, 1): {skeleton:?}")));
    }
    Ok(skeleton)
}
