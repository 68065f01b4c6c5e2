//! Composite losses and the three weighting strategies.
//!
//! ```text
//! fixed     total = w_data·L_data + w_pde·L_pde + L_prev      (defaults w = 1)
//! relaxed   total = λ_d·L_data + w_pde·L_pde + L_prev        (λ_d stays at 1)
//! adaptive  total = λ_d·L_data + L_pde + λ_d·L_prev
//! ```
//!
//! Under the adaptive strategy `λ_d` is refreshed from gradient statistics:
//! `λ̂ = max|∇L_pde| / mean|∇L_data|`, then `λ_d ← (1−α)·λ_d + α·λ̂`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Physics-loss weighting constants swept by the relaxation study.
pub const RELAXATION_CONSTANTS: [f64; 5] = [1.0, 0.1, 0.01, 0.001, 0.0001];

/// Mean of squared differences.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::Empty("mse operands"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            what: "mse operand length",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fixed,
    Relaxed,
    Adaptive,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(Strategy::Fixed),
            "relaxed" => Ok(Strategy::Relaxed),
            "adaptive" => Ok(Strategy::Adaptive),
            o => Err(Error::config(format!(
                "unknown weighting strategy `{o}` (expected fixed, relaxed or adaptive)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::Relaxed => "relaxed",
            Strategy::Adaptive => "adaptive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightState {
    /// Running data weight λ_d; starts at 1.
    pub lambda_d: f64,
    /// Weight of the instantaneous estimate in the running average.
    pub alpha: f64,
    pub w_pde: f64,
    /// Data multiplier under the fixed strategy.
    pub w_data: f64,
    /// Iterations between adaptive refreshes.
    pub update_every: usize,
}

impl Default for WeightState {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            alpha: 0.9,
            w_pde: 1.0,
            w_data: 1.0,
            update_every: 10,
        }
    }
}

impl WeightState {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.w_pde >= 0.0 && self.w_pde.is_finite()) || !(self.w_data >= 0.0 && self.w_data.is_finite()) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        if self.update_every == 0 {
            return Err(Error::config("update frequency must be at least 1"));
        }
        Ok(())
    }
}

/// Multipliers applied to (data, pde, previous-segment) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
    pub prev: f64,
}

pub fn loss_weights(strategy: Strategy, w: &WeightState) -> LossWeights {
    match strategy {
        Strategy::Fixed => LossWeights {
            data: w.w_data,
            pde: w.w_pde,
            prev: 1.0,
        },
        Strategy::Relaxed => LossWeights {
            data: w.lambda_d,
            pde: w.w_pde,
            prev: 1.0,
        },
        Strategy::Adaptive => LossWeights {
            data: w.lambda_d,
            pde: 1.0,
            prev: w.lambda_d,
        },
    }
}

/// Every loss component with the weights that produced `total`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub data: Vec<(String, f64)>,
    pub pde: Vec<(String, f64)>,
    pub prevdata: Option<f64>,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub fn data_total(&self) -> f64 {
        self.data.iter().map(|(_, v)| v).sum()
    }

    pub fn pde_total(&self) -> f64 {
        self.pde.iter().map(|(_, v)| v).sum()
    }

    /// Weighted sum recomputed from the stored components.
    pub fn recompute_total(&self) -> f64 {
        combine(
            self.data_total(),
            self.pde_total(),
            self.prevdata,
            &self.weights,
        )
    }
}

fn combine(data: f64, pde: f64, prev: Option<f64>, w: &LossWeights) -> f64 {
    let mut t = w.data * data + w.pde * pde;
    if let Some(p) = prev {
        t += w.prev * p;
    }
    t
}

/// Weighted composite loss from named components.
pub fn assemble_loss(
    data_terms: &[(&str, f64)],
    pde_terms: &[(&str, f64)],
    prev: Option<f64>,
    weights: &WeightState,
    strategy: Strategy,
) -> Result<LossBreakdown> {
    let all = data_terms.iter().chain(pde_terms).map(|(_, v)| *v).chain(prev);
    for v in all {
        if !(v >= 0.0) {
            return Err(Error::config(format!("loss components must be non-negative, got {v}")));
        }
    }
    let w = loss_weights(strategy, weights);
    let own = |t: &[(&str, f64)]| t.iter().map(|(n, v)| (n.to_string(), *v)).collect::<Vec<_>>();
    let mut b = LossBreakdown {
        data: own(data_terms),
        pde: own(pde_terms),
        prevdata: prev,
        weights: w,
        total: 0.0,
    };
    b.total = b.recompute_total();
    Ok(b)
}

/// Magnitude statistics of a gradient vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradStats {
    pub max_abs: f64,
    pub mean_abs: f64,
}

impl GradStats {
    pub fn of(g: &[f64]) -> Self {
        let mut max_abs = 0.0f64;
        let mut sum = 0.0;
        for x in g {
            let a = x.abs();
            max_abs = max_abs.max(a);
            sum += a;
        }
        Self {
            max_abs,
            mean_abs: if g.is_empty() { 0.0 } else { sum / g.len() as f64 },
        }
    }
}

/// `max|∇L_pde| / mean|∇L_data|`.
pub fn instantaneous_lambda(grad_pde: &[f64], grad_data: &[f64]) -> Result<f64> {
    if grad_pde.is_empty() || grad_data.is_empty() {
        return Err(Error::Empty("gradient vector"));
    }
    let num = GradStats::of(grad_pde).max_abs;
    let den = GradStats::of(grad_data).mean_abs;
    if !(den > 0.0) {
        return Err(Error::DegenerateGradient(
            "mean |grad L_data| is zero; weight left unchanged".into(),
        ));
    }
    Ok(num / den)
}

/// Running-average update of λ_d with weight `alpha` on the new estimate.
pub fn update_lambda(state: &WeightState, lambda_hat: f64) -> WeightState {
    WeightState {
        lambda_d: (1.0 - state.alpha) * state.lambda_d + state.alpha * lambda_hat,
        ..state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(mse(&[-1.0], &[1.0]).unwrap(), 4.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn assemble_examples() {
        let w = WeightState::default();
        let b = assemble_loss(&[("u", 1.0)], &[("c", 2.0)], None, &w, Strategy::Fixed).unwrap();
        assert_eq!(b.total, 3.0);

        let w = WeightState {
            w_pde: 0.001,
            ..Default::default()
        };
        let b = assemble_loss(&[("u", 1.0)], &[("c", 2.0)], None, &w, Strategy::Relaxed).unwrap();
        assert!((b.total - 1.002).abs() < 1e-15);

        let w = WeightState {
            lambda_d: 10.0,
            ..Default::default()
        };
        let b = assemble_loss(&[("u", 0.5)], &[("c", 2.0)], None, &w, Strategy::Adaptive).unwrap();
        assert_eq!(b.total, 7.0);
        let b = assemble_loss(&[("u", 0.5)], &[("c", 2.0)], Some(0.1), &w, Strategy::Adaptive).unwrap();
        assert!((b.total - 8.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_strategy() {
        assert!(Strategy::parse("greedy").is_err());
        assert_eq!(Strategy::parse("Adaptive").unwrap(), Strategy::Adaptive);
    }

    #[test]
    fn negative_component_rejected() {
        let w = WeightState::default();
        assert!(assemble_loss(&[("u", -1.0)], &[], None, &w, Strategy::Fixed).is_err());
    }

    #[test]
    fn lambda_hat_examples() {
        assert_eq!(instantaneous_lambda(&[1.0, -2.0], &[0.5, 0.5]).unwrap(), 4.0);
        assert_eq!(instantaneous_lambda(&[1.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(instantaneous_lambda(&[0.0, 0.0], &[1.0]).unwrap(), 0.0);
        assert!(matches!(
            instantaneous_lambda(&[1.0], &[0.0, 0.0]),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn update_examples() {
        let st = |l| WeightState {
            lambda_d: l,
            ..Default::default()
        };
        assert_eq!(update_lambda(&st(5.0), 5.0).lambda_d, 5.0);
        assert!((update_lambda(&st(1.0), 11.0).lambda_d - 10.0).abs() < 1e-12);
        assert!((update_lambda(&st(0.0), 4.0).lambda_d - 3.6).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn lambda_hat_scale_covariance(
            gp in proptest::collection::vec(-10.0f64..10.0, 1..20),
            gd in proptest::collection::vec(0.1f64..10.0, 1..20),
            c in 0.01f64..100.0,
        ) {
            let base = instantaneous_lambda(&gp, &gd).unwrap();
            let gp_c: Vec<f64> = gp.iter().map(|x| x * c).collect();
            let gd_c: Vec<f64> = gd.iter().map(|x| x * c).collect();
            let a = instantaneous_lambda(&gp_c, &gd).unwrap();
            let b = instantaneous_lambda(&gp, &gd_c).unwrap();
            proptest::prop_assert!((a - c * base).abs() <= 1e-12 * (1.0 + a.abs()));
            proptest::prop_assert!((b - base / c).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn update_contracts(l0 in -50.0f64..50.0, hat in -50.0f64..50.0) {
            let s = WeightState { lambda_d: l0, ..Default::default() };
            let n = update_lambda(&s, hat);
            let before = (l0 - hat).abs();
            let after = (n.lambda_d - hat).abs();
            proptest::prop_assert!((after - 0.1 * before).abs() <= 1e-12 * (1.0 + before));
        }

        #[test]
        fn totals_resum(d in 0.0f64..10.0, p in 0.0f64..10.0, prev in 0.0f64..10.0, l in 0.1f64..50.0) {
            for strat in [Strategy::Fixed, Strategy::Relaxed, Strategy::Adaptive] {
                let w = WeightState { lambda_d: l, w_pde: 0.01, ..Default::default() };
                let b = assemble_loss(&[("u", d), ("v", d / 2.0)], &[("mx", p)], Some(prev), &w, strat).unwrap();
                proptest::prop_assert_eq!(b.total, b.recompute_total());
            }
        }
    }
}
