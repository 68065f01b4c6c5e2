//! Relative L2 evaluation on test splits and gradient histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::datagen::{FlowSample, Schema, TestSet};
use crate::error::{Error, Result};
use crate::io_util;
use crate::loss::GradStats;
use crate::mlp::{Mlp, NetworkParams};

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            what: "relative L2 operand length",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Per-step errors of one field and their mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldErrors {
    pub field: String,
    pub per_step: Vec<f64>,
    pub arelative_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub times: Vec<f64>,
    pub fields: Vec<FieldErrors>,
    pub meta: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn field(&self, name: &str) -> Option<&FieldErrors> {
        self.fields.iter().find(|f| f.field == name)
    }

    /// Mean aRelative L2 over the velocity components.
    pub fn velocity_arelative(&self) -> f64 {
        let v: Vec<f64> = self
            .fields
            .iter()
            .filter(|f| matches!(f.field.as_str(), "u" | "v" | "w"))
            .map(|f| f.arelative_l2)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// `field,timestep,epsilon` rows; `timestep` is the test instant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("field,timestep,epsilon\n");
        for f in &self.fields {
            for (t, e) in self.times.iter().zip(&f.per_step) {
                let _ = writeln!(s, "{},{t},{e:e}", f.field);
            }
        }
        s
    }

    /// Summary block: metadata as `# key = value` lines, then
    /// `field,arelative_l2,steps`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str("field,arelative_l2,steps\n");
        for f in &self.fields {
            let _ = writeln!(s, "{},{:e},{}", f.field, f.arelative_l2, f.per_step.len());
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io_util::write_atomic_str(&dir.join("errors.csv"), &self.to_csv())?;
        io_util::write_atomic_str(&dir.join("summary.csv"), &self.summary_csv())
    }
}

const CHUNK: usize = 4096;

/// Network outputs for `samples`, evaluated in row chunks.
pub fn predict(net: &Mlp, params: &NetworkParams, samples: &[FlowSample]) -> Result<Array2<f64>> {
    let n_in = net.config().n_inputs;
    let n_out = net.config().n_outputs;
    let mut out = Array2::zeros((samples.len(), n_out));
    for (c, chunk) in samples.chunks(CHUNK).enumerate() {
        let flat: Vec<f64> = chunk.iter().flat_map(|s| s.point.to_vec()).collect();
        let x = Array2::from_shape_vec((chunk.len(), n_in), flat)
            .map_err(|_| Error::config("sample dimension does not match network inputs"))?;
        let y = net.forward_batch(params, x.view())?;
        let r0 = c * CHUNK;
        out.slice_mut(ndarray::s![r0..r0 + chunk.len(), ..]).assign(&y);
    }
    Ok(out)
}

fn mean_removed(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| x - m).collect()
}

/// Relative L2 errors of the network against the test data, per test
/// instant. Fields are `u`, `v` (`w` in 3-D) and, when the test data carry
/// pressure, `p` (raw) and `p_aligned` (both fields shifted to zero mean at
/// each instant).
pub fn evaluate(net: &Mlp, params: &NetworkParams, test: &TestSet, schema: Schema) -> Result<EvalReport> {
    let (n_in, n_vel) = match schema {
        Schema::Flow2d => (3, 2),
        Schema::Flow3d => (4, 3),
    };
    let c = net.config();
    if c.n_inputs != n_in || c.n_outputs < n_vel + 1 {
        return Err(Error::config(format!(
            "network ({} inputs, {} outputs) does not match {} test data",
            c.n_inputs,
            c.n_outputs,
            schema.name()
        )));
    }
    net.check_params(params)?;
    let vel_names: &[&str] = if n_vel == 3 { &["u", "v", "w"] } else { &["u", "v"] };
    let mut names: Vec<String> = vel_names.iter().map(|s| s.to_string()).collect();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); n_vel];
    let mut times = Vec::new();
    let mut with_p: Option<bool> = None;
    test.for_each_step(|t, samples| {
        let y = predict(net, params, samples)?;
        for (k, s) in series.iter_mut().enumerate().take(n_vel) {
            let truth: Vec<f64> = samples.iter().map(|x| x.velocity()[k]).collect();
            let pred = y.column(k).to_vec();
            s.push(relative_l2(&pred, &truth)?);
        }
        let has_p = samples.iter().all(|s| s.p.is_some());
        match with_p {
            None => with_p = Some(has_p),
            Some(prev) if prev != has_p => {
                return Err(Error::config("pressure present at some test instants only"));
            }
            _ => {}
        }
        if has_p {
            if series.len() == n_vel {
                series.push(Vec::new());
                series.push(Vec::new());
            }
            let truth: Vec<f64> = samples.iter().map(|s| s.p.unwrap()).collect();
            let pred = y.column(n_vel).to_vec();
            series[n_vel].push(relative_l2(&pred, &truth)?);
            series[n_vel + 1].push(relative_l2(&mean_removed(&pred), &mean_removed(&truth))?);
        }
        times.push(t);
        Ok(())
    })?;
    if times.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if series.len() > n_vel {
        names.push("p".into());
        names.push("p_aligned".into());
    }
    let fields = names
        .into_iter()
        .zip(series)
        .map(|(field, per_step)| FieldErrors {
            arelative_l2: per_step.iter().sum::<f64>() / per_step.len() as f64,
            field,
            per_step,
        })
        .collect();
    Ok(EvalReport {
        times,
        fields,
        meta: BTreeMap::new(),
    })
}

/// Histogram of one loss component's parameter gradient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientHistogram {
    pub component: String,
    /// `counts.len() + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub non_finite: usize,
    pub stats: GradStats,
}

/// Default bin count: one central bin around zero plus 50 per sign.
pub const HISTOGRAM_BINS: usize = 101;
/// Decades spanned by the log-spaced bins below `max|g|`.
pub const HISTOGRAM_DECADES: f64 = 8.0;

/// Symmetric log-spaced edges on `[-m, m]`: a central bin `[-m·10^-D, m·10^-D]`
/// and `(bins-1)/2` geometric bins per sign. `bins` must be odd and ≥ 3.
pub fn symmetric_log_edges(m: f64, bins: usize) -> Result<Vec<f64>> {
    if bins < 3 || bins.is_multiple_of(2) {
        return Err(Error::config(format!("histogram bins must be odd and at least 3, got {bins}")));
    }
    let m = if m > 0.0 && m.is_finite() { m } else { 1.0 };
    let half = (bins - 1) / 2;
    let pos: Vec<f64> = (0..=half)
        .map(|k| {
            if k == half {
                m
            } else {
                m * 10f64.powf(-HISTOGRAM_DECADES * (1.0 - k as f64 / half as f64))
            }
        })
        .collect();
    let mut edges: Vec<f64> = pos.iter().rev().map(|e| -e).collect();
    edges.extend(pos);
    Ok(edges)
}

/// Bins one gradient vector. Non-finite entries are counted separately and
/// excluded from the bins and the summary statistics.
pub fn histogram(component: &str, grad: &[f64], bins: usize) -> Result<GradientHistogram> {
    let finite: Vec<f64> = grad.iter().copied().filter(|g| g.is_finite()).collect();
    let stats = GradStats::of(&finite);
    let edges = symmetric_log_edges(stats.max_abs, bins)?;
    let mut counts = vec![0usize; bins];
    for g in &finite {
        // index of the last edge ≤ g, clamped so the top edge is inclusive
        let i = edges.partition_point(|e| e <= g).saturating_sub(1).min(bins - 1);
        counts[i] += 1;
    }
    Ok(GradientHistogram {
        component: component.to_string(),
        edges,
        counts,
        non_finite: grad.len() - finite.len(),
        stats,
    })
}

/// One histogram per labelled gradient vector.
pub fn gradient_histograms(components: &[(&str, &[f64])], bins: usize) -> Result<Vec<GradientHistogram>> {
    components.iter().map(|(l, g)| histogram(l, g, bins)).collect()
}

/// `component,bin_lo,bin_hi,count` rows.
pub fn histograms_csv(hists: &[GradientHistogram]) -> String {
    let mut s = String::from("component,bin_lo,bin_hi,count\n");
    for h in hists {
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{:e},{:e},{c}", h.component, h.edges[i], h.edges[i + 1]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{taylor_green, SpatioTemporalPoint};
    use crate::mlp::MlpConfig;

    #[test]
    fn relative_l2_examples() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_l2(&[0.0, 0.0], &[3.0, -1.0]).unwrap(), 1.0);
        let e = relative_l2(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(relative_l2(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
        assert!(relative_l2(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn tiny_net() -> (Mlp, NetworkParams) {
        let mut c = MlpConfig::new(3, 2, 8, 3);
        c.seed = 4;
        let net = Mlp::new(c).unwrap();
        let p = net.init();
        (net, p)
    }

    fn self_truth(net: &Mlp, params: &NetworkParams, scale: f64) -> TestSet {
        let mut samples = Vec::new();
        for t in [0.5, 1.0] {
            for i in 0..20 {
                let pt = SpatioTemporalPoint::new2(0.3 * i as f64, 0.1 * i as f64, t);
                let y = net.forward(params, &pt.to_vec()).unwrap();
                samples.push(FlowSample {
                    point: pt,
                    u: scale * y[0],
                    v: scale * y[1],
                    w: None,
                    p: Some(scale * y[2]),
                });
            }
        }
        TestSet::Samples(samples)
    }

    #[test]
    fn self_consistent_evaluation_is_zero() {
        let (net, p) = tiny_net();
        let r = evaluate(&net, &p, &self_truth(&net, &p, 1.0), Schema::Flow2d).unwrap();
        assert_eq!(r.times, vec![0.5, 1.0]);
        for f in &r.fields {
            assert!(f.per_step.iter().all(|e| *e < 1e-12), "{}: {:?}", f.field, f.per_step);
        }
        assert_eq!(r.fields.len(), 4);
    }

    #[test]
    fn doubled_truth_gives_half() {
        let (net, p) = tiny_net();
        let r = evaluate(&net, &p, &self_truth(&net, &p, 2.0), Schema::Flow2d).unwrap();
        for f in &r.fields {
            for e in &f.per_step {
                assert!((e - 0.5).abs() < 1e-12);
            }
            let mean = f.per_step.iter().sum::<f64>() / f.per_step.len() as f64;
            assert!((mean - f.arelative_l2).abs() < 1e-15);
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let (net, p) = tiny_net();
        let pts = [SpatioTemporalPoint::new2(0.0, 1.0, 0.0)];
        let test = TestSet::Samples(taylor_green(&pts, 100.0).unwrap());
        assert!(evaluate(&net, &p, &test, Schema::Flow3d).is_err());
    }

    #[test]
    fn zero_gradient_lands_in_central_bin() {
        let h = histogram("pde", &[0.0; 17], HISTOGRAM_BINS).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 17);
        assert_eq!(h.counts[50], 17);
        assert_eq!(h.edges.len(), 102);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn non_finite_are_counted_apart() {
        let h = histogram("data", &[1.0, f64::NAN, -2.0, f64::INFINITY], HISTOGRAM_BINS).unwrap();
        assert_eq!(h.non_finite, 2);
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[51..].iter().sum::<usize>(), 1);
        assert_eq!(h.stats.max_abs, 2.0);
    }

    #[test]
    fn csv_layouts() {
        let h = histogram("prevdata", &[0.5, -0.25], 3).unwrap();
        let csv = histograms_csv(&[h]);
        assert!(csv.starts_with("component,bin_lo,bin_hi,count\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest::proptest! {
        #[test]
        fn histogram_is_total(g in proptest::collection::vec(-1e3f64..1e3, 1..300)) {
            let h = histogram("pde", &g, HISTOGRAM_BINS).unwrap();
            proptest::prop_assert_eq!(h.counts.iter().sum::<usize>(), g.len());
            let s = GradStats::of(&g);
            proptest::prop_assert_eq!(h.stats, s);
        }

        #[test]
        fn relative_l2_scale_covariant(
            truth in proptest::collection::vec(0.5f64..2.0, 1..50),
            c in -5.0f64..5.0,
        ) {
            let d: Vec<f64> = truth.iter().enumerate().map(|(i, _)| (i as f64).sin()).collect();
            let with = |k: f64| truth.iter().zip(&d).map(|(t, e)| t + k * e).collect::<Vec<_>>();
            let a = relative_l2(&with(c), &truth).unwrap();
            let b = relative_l2(&with(1.0), &truth).unwrap();
            proptest::prop_assert!((a - c.abs() * b).abs() < 1e-12 * (1.0 + a));
        }
    }
}
