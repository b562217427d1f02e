use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chi2::chi2_sf;
use crate::error::{Error, Result};
use crate::extraction::MpsRecord;

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Coefficient of the incorrect-classification indicator in
/// `area_ratio ~ intercept + model indicators + incorrect`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub coefficient: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub observations: usize,
    pub models: usize,
}

impl EffectEstimate {
    /// `coefficient ± z * std_error`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.coefficient - z * self.std_error, self.coefficient + z * self.std_error)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeObservation {
    pub model_id: String,
    pub area_ratio: f64,
    pub incorrect: bool,
}

/// Fits the fixed-effects size model over non-degenerate records with a
/// known correctness flag.
pub fn fit_size_model(records: &[MpsRecord]) -> Result<EffectEstimate> {
    let obs: Vec<SizeObservation> = records
        .iter()
        .filter(|r| !r.degenerate)
        .filter_map(|r| {
            r.correct.map(|c| SizeObservation {
                model_id: r.model_id.clone(),
                area_ratio: r.area_ratio,
                incorrect: !c,
            })
        })
        .collect();
    fit_size_observations(&obs)
}

pub fn fit_size_observations(obs: &[SizeObservation]) -> Result<EffectEstimate> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in obs {
        if !o.area_ratio.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite area ratio for model {}", o.model_id)));
        }
        let e = counts.entry(o.model_id.as_str()).or_default();
        if o.incorrect {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(format!("size model needs at least 2 models, got {}", counts.len())));
    }
    for (model, (correct, incorrect)) in &counts {
        if *correct == 0 || *incorrect == 0 {
            return Err(Error::RankDeficient(format!(
                "model {model} has {correct} correct and {incorrect} incorrect records; both are required"
            )));
        }
    }
    let index: BTreeMap<&str, usize> = counts.keys().enumerate().map(|(i, m)| (*m, i)).collect();
    let n = obs.len();
    let p = counts.len() + 1;
    if n <= p {
        return Err(Error::DegenerateSample(format!("{n} observations for {p} parameters")));
    }
    // column 0 intercept, 1..m-1 model indicators (first model is the reference), last the incorrect flag
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, o) in obs.iter().enumerate() {
        x[(i, 0)] = 1.0;
        let m = index[o.model_id.as_str()];
        if m > 0 {
            x[(i, m)] = 1.0;
        }
        x[(i, p - 1)] = f64::from(u8::from(o.incorrect));
        y[i] = o.area_ratio;
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(j) = (0..p).find(|&j| r[(j, j)].abs() <= 1e-10 * scale) {
        let what = match j {
            0 => "intercept".to_string(),
            j if j == p - 1 => "incorrect indicator".to_string(),
            j => format!("model {}", counts.keys().nth(j).expect("column maps to a model")),
        };
        return Err(Error::RankDeficient(format!("design is rank deficient at {what}")));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    let residuals = &y - &x * &beta;
    let sigma2 = residuals.norm_squared() / (n - p) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    // (X'X)^-1 = R^-1 R^-T, so its last diagonal entry is the squared norm of R^-1's last row
    let var = sigma2 * r_inv.row(p - 1).norm_squared();
    let coefficient = beta[p - 1];
    let std_error = var.sqrt();
    let p_value = if std_error > 0.0 {
        chi2_sf((coefficient / std_error).powi(2), 1)?
    } else if coefficient == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(EffectEstimate {
        coefficient,
        std_error,
        p_value,
        observations: n,
        models: counts.len(),
    })
}
