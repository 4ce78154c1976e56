//! Strength–duration model: threshold amplitude as a function of pulse
//! duration, following the hyperbolic law `I(t) = b * (1 + c / t)` with
//! rheobase `b` and chronaxie `c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysiologyError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("cannot fit model: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdModel {
    pub rheobase: f64,
    pub chronaxie_us: f64,
}

impl SdModel {
    pub fn new(rheobase: f64, chronaxie_us: f64) -> Result<Self, PhysiologyError> {
        let model = Self { rheobase, chronaxie_us };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), PhysiologyError> {
        if !(self.rheobase.is_finite() && self.rheobase > 0.0) {
            return Err(PhysiologyError::InvalidParameter {
                name: "rheobase",
                reason: format!("{} must be finite and > 0", self.rheobase),
            });
        }
        if !(self.chronaxie_us.is_finite() && self.chronaxie_us > 0.0) {
            return Err(PhysiologyError::InvalidParameter {
                name: "chronaxie_us",
                reason: format!("{} must be finite and > 0", self.chronaxie_us),
            });
        }
        Ok(())
    }
}

fn check_duration(duration_us: f64) -> Result<(), PhysiologyError> {
    if duration_us.is_finite() && duration_us > 0.0 {
        Ok(())
    } else {
        Err(PhysiologyError::InvalidParameter {
            name: "duration_us",
            reason: format!("{duration_us} must be finite and > 0"),
        })
    }
}

pub fn threshold_amplitude(duration_us: f64, model: &SdModel) -> Result<f64, PhysiologyError> {
    check_duration(duration_us)?;
    model.validate()?;
    Ok(model.rheobase * (1.0 + model.chronaxie_us / duration_us))
}

/// True when a pulse of this peak and width reaches threshold. Non-square
/// shapes are judged by their peak.
pub fn predicts_activation(
    pulse_amplitude: f64,
    pulse_width_us: f64,
    model: &SdModel,
) -> Result<bool, PhysiologyError> {
    Ok(pulse_amplitude >= threshold_amplitude(pulse_width_us, model)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdFit {
    pub model: SdModel,
    /// Sum of squared threshold residuals.
    pub sse: f64,
    pub rms_residual: f64,
}

/// Least-squares fit of rheobase and chronaxie to `(duration_us, threshold)`
/// points. The law is linear in the basis `(1, 1/t)`:
/// `threshold = b + (b c) / t`, so ordinary least squares on `x = 1/t`
/// recovers `b` as the intercept and `c` as slope / intercept.
pub fn fit_sd_model(points: &[(f64, f64)]) -> Result<SdFit, PhysiologyError> {
    if points.len() < 2 {
        return Err(PhysiologyError::Fit(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    for &(t, y) in points {
        check_duration(t)?;
        if !(y.is_finite() && y > 0.0) {
            return Err(PhysiologyError::Fit(format!("threshold {y} must be finite and > 0")));
        }
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(t, _)| 1.0 / t).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), (t, y)| {
        let dx = 1.0 / t - mean_x;
        (sxx + dx * dx, sxy + dx * (y - mean_y))
    });
    if sxx <= f64::EPSILON * mean_x * mean_x * n {
        return Err(PhysiologyError::Fit("durations are not distinct".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    if intercept <= 0.0 || slope <= 0.0 {
        return Err(PhysiologyError::Fit(format!(
            "data imply rheobase {intercept} and rheobase*chronaxie {slope}; both must be positive"
        )));
    }
    let model = SdModel::new(intercept, slope / intercept)?;
    let sse = points
        .iter()
        .map(|&(t, y)| {
            let r = y - (intercept + slope / t);
            r * r
        })
        .sum::<f64>();
    Ok(SdFit {
        model,
        sse,
        rms_residual: (sse / n).sqrt(),
    })
}

/// Log-spaced `(duration_us, threshold)` samples of the curve. The chronaxie
/// itself is always included so the 2x-rheobase point shows up.
pub fn sd_curve(model: &SdModel, from_us: f64, to_us: f64, points: usize) -> Result<Vec<(f64, f64)>, PhysiologyError> {
    check_duration(from_us)?;
    check_duration(to_us)?;
    if to_us < from_us || points < 2 {
        return Err(PhysiologyError::InvalidParameter {
            name: "points",
            reason: "need at least 2 points over a non-empty range".into(),
        });
    }
    let ratio = (to_us / from_us).ln() / (points - 1) as f64;
    let mut durations: Vec<f64> = (0..points).map(|i| from_us * (ratio * i as f64).exp()).collect();
    // exact endpoints
    durations[points - 1] = to_us;
    if (from_us..=to_us).contains(&model.chronaxie_us) {
        durations.push(model.chronaxie_us);
        durations.sort_by(f64::total_cmp);
        durations.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
    }
    durations
        .into_iter()
        .map(|t| Ok((t, threshold_amplitude(t, model)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chronaxie_doubles_rheobase() {
        let m = SdModel::new(5.0, 200.0).unwrap();
        assert_eq!(threshold_amplitude(200.0, &m).unwrap(), 10.0);
    }

    #[test]
    fn long_pulses_approach_rheobase() {
        let m = SdModel::new(5.0, 200.0).unwrap();
        let t = threshold_amplitude(1e9, &m).unwrap();
        assert!((t - 5.0).abs() / 5.0 < 1e-6);
    }

    #[test]
    fn worked_example() {
        let m = SdModel::new(5.0, 200.0).unwrap();
        assert_eq!(threshold_amplitude(100.0, &m).unwrap(), 15.0);
        assert!(!predicts_activation(10.0, 100.0, &m).unwrap());
        assert!(predicts_activation(16.0, 100.0, &m).unwrap());
        assert!(predicts_activation(15.0, 100.0, &m).unwrap());
    }

    #[test]
    fn bad_durations() {
        let m = SdModel::new(5.0, 200.0).unwrap();
        assert!(threshold_amplitude(0.0, &m).is_err());
        assert!(threshold_amplitude(-3.0, &m).is_err());
        assert!(predicts_activation(1.0, f64::NAN, &m).is_err());
        assert!(SdModel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let m = SdModel::new(2.0, 350.0).unwrap();
        let pts: Vec<_> = [100.0, 700.0]
            .iter()
            .map(|&t| (t, threshold_amplitude(t, &m).unwrap()))
            .collect();
        let fit = fit_sd_model(&pts).unwrap();
        assert!((fit.model.rheobase - 2.0).abs() < 1e-9);
        assert!((fit.model.chronaxie_us - 350.0).abs() < 1e-9);
        assert!(fit.sse < 1e-20);
    }

    #[test]
    fn degenerate_fits() {
        assert!(fit_sd_model(&[(100.0, 5.0)]).is_err());
        assert!(fit_sd_model(&[(100.0, 5.0), (100.0, 6.0)]).is_err());
        assert!(fit_sd_model(&[(100.0, 5.0), (200.0, -1.0)]).is_err());
        // thresholds rising with duration have no positive chronaxie
        assert!(fit_sd_model(&[(100.0, 5.0), (200.0, 6.0)]).is_err());
    }

    #[test]
    fn curve_includes_chronaxie() {
        let m = SdModel::new(5.0, 200.0).unwrap();
        let curve = sd_curve(&m, 10.0, 10_000.0, 20).unwrap();
        assert!(curve.iter().any(|&(t, y)| t == 200.0 && y == 10.0));
        assert!(curve.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 > w[1].1));
        assert_eq!(curve.first().unwrap().0, 10.0);
        assert_eq!(curve.last().unwrap().0, 10_000.0);
    }
}
