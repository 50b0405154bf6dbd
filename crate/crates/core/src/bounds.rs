//! Closed-form Bayesian regret bounds.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

fn nonneg(name: &str, x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        Err(Error::invalid(format!("{name} must be nonnegative, got {x}")))
    } else {
        Ok(())
    }
}

fn horizon(t: usize) -> Result<f64> {
    if t == 0 {
        Err(Error::invalid("horizon T must be at least 1"))
    } else {
        Ok(t as f64)
    }
}

fn dimension(d: usize) -> Result<f64> {
    if d == 0 {
        Err(Error::invalid("dimension d must be at least 1"))
    } else {
        Ok(d as f64)
    }
}

/// `√(Γ·T·H)`.
pub fn russo_bound(gamma: f64, t: usize, h: f64) -> Result<f64> {
    nonneg("Γ", gamma)?;
    nonneg("H", h)?;
    Ok((gamma * horizon(t)? * h).sqrt())
}

/// `√(Γ̃·T·H(A*_ε)) + ε·T`.
pub fn theorem1_bound(gamma: f64, t: usize, h_eps: f64, eps: f64) -> Result<f64> {
    nonneg("ε", eps)?;
    Ok(russo_bound(gamma, t, h_eps)? + eps * t as f64)
}

/// `√(Γ̃·T·log N) + L·ε·T`.
pub fn corollary1_bound(gamma: f64, t: usize, log_cov: f64, lipschitz: f64, eps_cover: f64) -> Result<f64> {
    nonneg("L", lipschitz)?;
    nonneg("ε", eps_cover)?;
    Ok(russo_bound(gamma, t, log_cov)? + lipschitz * eps_cover * t as f64)
}

/// `√(2·d·T·log N) + ε·T`.
pub fn linear_bandit_bound(d: usize, t: usize, log_cov: f64, eps: f64) -> Result<f64> {
    let d = dimension(d)?;
    theorem1_bound(2.0 * d, t, log_cov, eps)
}

/// `2·d·√(T·log(√2 + 4·√T/d))`.
pub fn final_corollary_bound(d: usize, t: usize) -> Result<f64> {
    let d = dimension(d)?;
    let t = horizon(t)?;
    Ok(2.0 * d * (t * (std::f64::consts::SQRT_2 + 4.0 * t.sqrt() / d).ln()).sqrt())
}

/// `d / (2√T)`.
pub fn optimal_epsilon(d: usize, t: usize) -> f64 {
    d as f64 / (2.0 * (t as f64).sqrt())
}

/// Inputs to [`BoundReport::evaluate`]; bounds whose inputs are missing are
/// left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundInputs {
    pub gamma: Option<f64>,
    pub t: usize,
    pub entropy: Option<f64>,
    pub eps: Option<f64>,
    pub lipschitz: Option<f64>,
    pub log_cov: Option<f64>,
    pub d: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub values: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn evaluate(inputs: BoundInputs) -> Result<Self> {
        let t = inputs.t;
        horizon(t)?;
        let mut values = BTreeMap::new();
        let eps = inputs.eps.unwrap_or(0.0);
        if let (Some(g), Some(h)) = (inputs.gamma, inputs.entropy) {
            values.insert("russo".to_string(), russo_bound(g, t, h)?);
            values.insert("theorem1".to_string(), theorem1_bound(g, t, h, eps)?);
        }
        if let (Some(g), Some(lc)) = (inputs.gamma, inputs.log_cov) {
            let l = inputs.lipschitz.unwrap_or(1.0);
            values.insert("corollary1".to_string(), corollary1_bound(g, t, lc, l, eps)?);
        }
        if let Some(d) = inputs.d {
            let lc = match inputs.log_cov {
                Some(lc) => lc,
                None => crate::action_space::covering_log_bound(d, inputs.eps.unwrap_or(optimal_epsilon(d, t)))?,
            };
            let e = inputs.eps.unwrap_or(optimal_epsilon(d, t));
            values.insert("linear_bandit".to_string(), linear_bandit_bound(d, t, lc, e)?);
            values.insert("final_corollary".to_string(), final_corollary_bound(d, t)?);
        }
        Ok(BoundReport { inputs, values })
    }

    /// Aligned `name value` lines.
    pub fn table(&self) -> String {
        let width = self.values.keys().map(String::len).max().unwrap_or(0);
        self.values
            .iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::covering_log_bound;

    #[test]
    fn reference_values() {
        assert_eq!(russo_bound(2.0, 100, 0.0).unwrap(), 0.0);
        assert!((russo_bound(2.0, 100, 4f64.ln()).unwrap() - 16.65).abs() < 5e-3);
        assert!((theorem1_bound(0.0, 100, 1.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(theorem1_bound(2.0, 100, 0.0, 0.0).unwrap(), 0.0);
        assert!((theorem1_bound(2.0, 100, 4f64.ln(), 0.1).unwrap() - 26.65).abs() < 5e-3);
        assert!((corollary1_bound(4.0, 400, 2.0 * 3f64.ln(), 1.0, 0.05).unwrap() - 79.3).abs() < 0.05);
        assert_eq!(corollary1_bound(4.0, 400, 1.0, 0.0, 0.05).unwrap(), russo_bound(4.0, 400, 1.0).unwrap());
        assert!((final_corollary_bound(1, 1).unwrap() - 2.599).abs() < 5e-4);
        assert!((final_corollary_bound(2, 200).unwrap() - 104.2).abs() < 0.05);
        assert_eq!(optimal_epsilon(2, 4), 0.5);
        assert_eq!(optimal_epsilon(1, 100), 0.05);
        assert!((optimal_epsilon(2, 200) - 0.0707).abs() < 1e-4);
        assert_eq!(linear_bandit_bound(3, 50, 0.0, 0.1).unwrap(), 0.1 * 50.0);
    }

    #[test]
    fn substitution_identities() {
        let (g, t, lc, l, e) = (3.0, 250, 2.5, 2.0, 0.03);
        let a = corollary1_bound(g, t, lc, l, e).unwrap();
        let b = theorem1_bound(g, t, lc, l * e).unwrap();
        assert!((a - b).abs() < 1e-12);
        let eps = optimal_epsilon(2, 200);
        let lc = covering_log_bound(2, eps).unwrap();
        let direct = (2.0 * 2.0 * 200.0 * lc).sqrt() + eps * 200.0;
        assert!((linear_bandit_bound(2, 200, lc, eps).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(russo_bound(-1.0, 10, 1.0).is_err());
        assert!(russo_bound(1.0, 0, 1.0).is_err());
        assert!(theorem1_bound(1.0, 10, 1.0, f64::NAN).is_err());
        assert!(final_corollary_bound(0, 10).is_err());
    }

    #[test]
    fn monotonicity() {
        let grid = [0.0, 0.5, 1.0, 2.0, 5.0];
        for w in grid.windows(2) {
            assert!(russo_bound(w[0], 10, 1.0).unwrap() <= russo_bound(w[1], 10, 1.0).unwrap());
            assert!(russo_bound(1.0, 10, w[0]).unwrap() <= russo_bound(1.0, 10, w[1]).unwrap());
        }
        for d in 1..=5 {
            for t in 1..200 {
                assert!(final_corollary_bound(d, t).unwrap() < final_corollary_bound(d, t + 1).unwrap());
                assert!(russo_bound(1.0, t, 1.0).unwrap() <= russo_bound(1.0, t + 1, 1.0).unwrap());
            }
        }
    }

    #[test]
    fn report_contents() {
        let r = BoundReport::evaluate(BoundInputs {
            gamma: Some(4.0),
            t: 200,
            entropy: Some(3.0),
            eps: Some(0.07),
            d: Some(2),
            ..BoundInputs::default()
        })
        .unwrap();
        assert_eq!(
            r.values.keys().map(String::as_str).collect::<Vec<_>>(),
            ["final_corollary", "linear_bandit", "russo", "theorem1"]
        );
        assert!(r.values.values().all(|v| *v >= 0.0));
        assert!(r.table().lines().count() == 4);
    }
}
