//! Accuracy measures shared by solver verification, training and inversion.

use crate::error::{Error, Result};

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    // A constant truth leaves only rounding noise in SS_tot.
    let scale: f64 = truth.iter().map(|t| t * t).sum();
    if ss_tot <= 1e-24 * scale || ss_tot == 0.0 {
        return Err(Error::Degenerate("R² undefined for constant truth (SS_tot = 0)".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn rel_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let den = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Degenerate("relative L² undefined for an all-zero truth".into()));
    }
    let num = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(format!("metric inputs have lengths {} and {}", pred.len(), truth.len())));
    }
    Ok(())
}
