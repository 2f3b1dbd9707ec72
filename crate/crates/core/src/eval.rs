//! Depth and normal error metrics against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::recon::{triangulate::mean_angular_error, DepthMap, NormalMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when no pixel is valid in both maps.
    pub mean_abs_depth_error: Option<f64>,
    pub median_abs_depth_error: Option<f64>,
    /// Degrees.
    pub mean_angular_error: Option<f64>,
    /// Fraction of valid ground-truth pixels that are also predicted.
    pub coverage: f64,
    pub compared: usize,
    pub warnings: Vec<String>,
}

pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    pred_normals: Option<&NormalMap>,
    gt_normals: Option<&NormalMap>,
) -> Result<EvalReport> {
    pred.same_dims(gt)?;
    let mut errors: Vec<f64> = pred
        .iter()
        .zip(gt.iter())
        .filter_map(|(p, g)| Some((p.as_ref()? - g.as_ref()?).abs()))
        .collect();
    let gt_valid = gt.iter().filter(|g| g.is_some()).count();
    let mut warnings = Vec::new();
    let compared = errors.len();
    let coverage = if gt_valid > 0 { compared as f64 / gt_valid as f64 } else { 0.0 };
    if compared == 0 {
        warnings.push("no pixel is valid in both depth maps".to_string());
    }
    errors.sort_by(f64::total_cmp);
    let mean = (compared > 0).then(|| errors.iter().sum::<f64>() / compared as f64);
    let median = (compared > 0).then(|| {
        let m = compared / 2;
        if compared % 2 == 1 {
            errors[m]
        } else {
            0.5 * (errors[m - 1] + errors[m])
        }
    });
    let angular = match (pred_normals, gt_normals) {
        (Some(a), Some(b)) => {
            a.same_dims(b)?;
            let (e, n) = mean_angular_error(a, b, |_, _| true);
            if n == 0 {
                warnings.push("no pixel has a normal in both maps".to_string());
            }
            (n > 0).then_some(e)
        }
        _ => None,
    };
    Ok(EvalReport {
        mean_abs_depth_error: mean,
        median_abs_depth_error: median,
        mean_angular_error: angular,
        coverage,
        compared,
        warnings,
    })
}
