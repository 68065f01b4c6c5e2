//! Training loops: data-driven baseline, standard PINN and BC-PINN
//! (sequential time segments), plus architecture and weighting sweeps.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::datagen::{DatasetSplit, FlowSample, SpatioTemporalPoint};
use crate::diffengine::{grad_params, JetLayout, Tape, Var};
use crate::error::{Error, Result};
use crate::eval;
use crate::loss::{self, assemble_loss, instantaneous_lambda, loss_weights, LossBreakdown, Strategy, WeightState};
use crate::mlp::{Checkpoint, Mlp, MlpConfig, NetworkParams, ParamVars};
use crate::optim::{adam_step, rate_at, sub_seed, AdamState, BatchStream, TrainingBudget};
use crate::physics::{residuals_on_tape, PhysicsRegime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainRegime {
    DataDriven,
    StandardPinn,
    BcPinn,
}

impl TrainRegime {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "data_driven" => Ok(TrainRegime::DataDriven),
            "standard_pinn" => Ok(TrainRegime::StandardPinn),
            "bc_pinn" => Ok(TrainRegime::BcPinn),
            o => Err(Error::config(format!(
                "unknown regime `{o}` (expected data_driven, standard_pinn or bc_pinn)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainRegime::DataDriven => "data_driven",
            TrainRegime::StandardPinn => "standard_pinn",
            TrainRegime::BcPinn => "bc_pinn",
        }
    }
}

/// Everything a trainer needs besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub regime: TrainRegime,
    pub physics: PhysicsRegime,
    /// Input normalization bounds, when unset, are taken from the bounding
    /// box of the training and collocation points.
    pub network: MlpConfig,
    pub budget: TrainingBudget,
    pub weights: WeightState,
    pub strategy: Strategy,
    pub n_segments: usize,
    /// Collocation points per iteration; `None` uses the data batch size.
    pub collocation_batch: Option<usize>,
    /// Data-driven regime only: fit pressure as well as velocity.
    pub pressure_targets: bool,
    /// Loss history stride in iterations.
    pub log_every: usize,
    /// Keep the component gradients behind every adaptive update.
    pub dump_gradients: bool,
}

impl RunConfig {
    /// Defaults: fixed weighting, one segment, pressure targets on, log every 100.
    pub fn new(regime: TrainRegime, physics: PhysicsRegime, network: MlpConfig, budget: TrainingBudget) -> Self {
        Self {
            regime,
            physics,
            network,
            budget,
            weights: WeightState::default(),
            strategy: Strategy::Fixed,
            n_segments: 1,
            collocation_batch: None,
            pressure_targets: true,
            log_every: 100,
            dump_gradients: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.weights.validate()?;
        self.network.validate()?;
        if self.n_segments == 0 {
            return Err(Error::config("segments.count must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("run.log_every must be at least 1"));
        }
        if self.collocation_batch == Some(0) {
            return Err(Error::config("budget.collocation_batch must be at least 1"));
        }
        if self.network.n_inputs != self.physics.n_inputs() || self.network.n_outputs != self.physics.n_outputs() {
            return Err(Error::config(format!(
                "network shape {}→{} does not match physics {} ({}→{})",
                self.network.n_inputs,
                self.network.n_outputs,
                self.physics.name(),
                self.physics.n_inputs(),
                self.physics.n_outputs()
            )));
        }
        if self.physics.needs_coefficient() != self.network.coefficient_init.is_some() {
            return Err(Error::config(format!(
                "physics {} {} a trainable coefficient",
                self.physics.name(),
                if self.physics.needs_coefficient() { "requires" } else { "does not use" }
            )));
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub segment: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

/// One adaptive-weight refresh.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightUpdate {
    pub iteration: usize,
    pub lambda_hat: f64,
    pub lambda_prev: f64,
    pub lambda_d: f64,
}

/// Component gradients (network weights and biases only) behind one update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientDump {
    pub iteration: usize,
    pub grad_pde: Vec<f64>,
    pub grad_data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentInfo {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub iterations: usize,
    pub n_data: usize,
    pub n_collocation: usize,
    pub n_prev: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub regime: String,
    pub physics: String,
    pub strategy: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub iterations: usize,
    pub loss_history: Vec<LossRecord>,
    pub weight_trajectory: Vec<WeightUpdate>,
    /// `(iteration, coefficient)` for inverse runs.
    pub lambda_trajectory: Vec<(usize, f64)>,
    pub segments: Vec<SegmentInfo>,
    pub events: Vec<String>,
    pub wall_clock_s: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gradient_dumps: Vec<GradientDump>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("report serialization: {e}")))
    }

    /// Loss totals in logging order.
    pub fn totals(&self) -> Vec<f64> {
        self.loss_history.iter().map(|r| r.loss.total).collect()
    }
}

pub struct TrainOutcome {
    pub net: Mlp,
    pub params: NetworkParams,
    pub report: TrainReport,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.net.config().clone(), self.params.clone());
        c.meta.insert("regime".into(), self.report.regime.clone());
        c.meta.insert("physics".into(), self.report.physics.clone());
        c.meta.insert("seed".into(), self.report.seed.to_string());
        c.meta.insert("iterations".into(), self.report.iterations.to_string());
        c
    }
}

/// Dispatches on `cfg.regime`.
pub fn train(cfg: &RunConfig, data: &DatasetSplit) -> Result<TrainOutcome> {
    match cfg.regime {
        TrainRegime::DataDriven => train_data_driven(cfg, data),
        TrainRegime::StandardPinn => train_standard_pinn(cfg, data),
        TrainRegime::BcPinn => train_bc_pinn(cfg, data),
    }
}

/// Pure data fit of velocity (and pressure when `pressure_targets`).
pub fn train_data_driven(cfg: &RunConfig, data: &DatasetSplit) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.regime = TrainRegime::DataDriven;
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if cfg.pressure_targets && data.train.iter().any(|s| s.p.is_none()) {
        return Err(Error::config(
            "data-driven training needs pressure targets (set data.pressure_targets = false to fit velocity only)",
        ));
    }
    let mut t = Trainer::new(&cfg, data)?;
    let problem = Problem {
        data: Some(Targets::new(&data.train, &cfg.physics, cfg.pressure_targets)?),
        colloc: None,
        prev: None,
    };
    t.run_segment(0, &problem, cfg.budget.total_iterations)?;
    t.report.segments.push(t.segment_info(0, data, &problem, cfg.budget.total_iterations));
    Ok(t.finish())
}

/// Data (velocity only) plus physics residuals over the whole time domain.
pub fn train_standard_pinn(cfg: &RunConfig, data: &DatasetSplit) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.regime = TrainRegime::StandardPinn;
    cfg.validate()?;
    if data.collocation.is_empty() {
        return Err(Error::config("physics-informed training needs collocation points"));
    }
    let mut t = Trainer::new(&cfg, data)?;
    let problem = Problem {
        data: Targets::new_opt(&data.train, &cfg.physics, false)?,
        colloc: Some(points_matrix(&data.collocation, cfg.physics.n_inputs())?),
        prev: None,
    };
    if problem.data.is_none() {
        t.report.events.push("no training data: physics-only run".into());
    }
    t.run_segment(0, &problem, cfg.budget.total_iterations)?;
    t.report.segments.push(t.segment_info(0, data, &problem, cfg.budget.total_iterations));
    Ok(t.finish())
}

/// A time interval of a segmented run with the points it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSegment {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub data: Vec<FlowSample>,
    pub collocation: Vec<SpatioTemporalPoint>,
}

/// `n + 1` uniform boundaries over `[t0, t1]`; the last equals `t1` exactly.
pub fn segment_boundaries(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| if k == n { t1 } else { t0 + (t1 - t0) * k as f64 / n as f64 })
        .collect()
}

/// Index of the segment owning time `t`. A boundary belongs to the later
/// segment; `t1` belongs to the last.
pub fn segment_of(t: f64, bounds: &[f64]) -> usize {
    let n = bounds.len() - 1;
    bounds[1..n].partition_point(|b| *b <= t)
}

/// Splits training samples and collocation points into `n` time segments
/// spanning their joint time range.
pub fn split_segments(train: &[FlowSample], colloc: &[SpatioTemporalPoint], n: usize) -> Result<Vec<TimeSegment>> {
    if n == 0 {
        return Err(Error::config("segments.count must be at least 1"));
    }
    let ts = train.iter().map(|s| s.point.t).chain(colloc.iter().map(|p| p.t));
    let (t0, t1) = ts.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    if !(t1 > t0) {
        return Err(Error::config("segmented training needs a time range of positive length"));
    }
    let bounds = segment_boundaries(t0, t1, n);
    let mut segs: Vec<TimeSegment> = (0..n)
        .map(|k| TimeSegment {
            index: k,
            t_start: bounds[k],
            t_end: bounds[k + 1],
            data: Vec::new(),
            collocation: Vec::new(),
        })
        .collect();
    for s in train {
        segs[segment_of(s.point.t, &bounds)].data.push(*s);
    }
    for p in colloc {
        segs[segment_of(p.t, &bounds)].collocation.push(*p);
    }
    Ok(segs)
}

/// Model outputs frozen at the end of earlier segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenStore {
    pub points: Vec<SpatioTemporalPoint>,
    /// One row of network outputs per point.
    pub outputs: Vec<Vec<f64>>,
}

impl FrozenStore {
    /// Records the model's current outputs at `points`.
    pub fn freeze(&mut self, net: &Mlp, params: &NetworkParams, points: &[SpatioTemporalPoint]) -> Result<()> {
        if points.is_empty() {
            return Ok(());
        }
        let x = points_matrix(points, net.config().n_inputs)?;
        let y = net.forward_batch(params, x.view())?;
        self.points.extend_from_slice(points);
        self.outputs.extend(y.rows().into_iter().map(|r| r.to_vec()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sequential training over time segments; later segments also fit the
/// model's own frozen predictions on all earlier segments.
pub fn train_bc_pinn(cfg: &RunConfig, data: &DatasetSplit) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.regime = TrainRegime::BcPinn;
    cfg.validate()?;
    if data.collocation.is_empty() {
        return Err(Error::config("physics-informed training needs collocation points"));
    }
    let n_in = cfg.physics.n_inputs();
    let n_vel = cfg.physics.n_velocity();
    let segs = split_segments(&data.train, &data.collocation, cfg.n_segments)?;
    let mut t = Trainer::new(&cfg, data)?;
    let mut store = FrozenStore::default();
    let mut carried: Vec<FlowSample> = Vec::new();
    let total = cfg.budget.total_iterations;
    let n = segs.len();
    for seg in &segs {
        let iters = total / n + usize::from(seg.index < total % n);
        let mut seg_data = carried.clone();
        seg_data.extend_from_slice(&seg.data);
        if seg_data.is_empty() {
            t.report
                .events
                .push(format!("segment {} has no data points: physics-only segment", seg.index));
        }
        let prev = if store.is_empty() {
            None
        } else {
            let x = points_matrix(&store.points, n_in)?;
            let y = Array2::from_shape_fn((store.len(), store.outputs[0].len()), |(r, c)| store.outputs[r][c]);
            Some((x, y))
        };
        let problem = Problem {
            data: Targets::new_opt(&seg_data, &cfg.physics, false)?,
            colloc: if seg.collocation.is_empty() {
                None
            } else {
                Some(points_matrix(&seg.collocation, n_in)?)
            },
            prev,
        };
        t.run_segment(seg.index, &problem, iters)?;
        let mut info = t.segment_info(seg.index, data, &problem, iters);
        info.t_start = seg.t_start;
        info.t_end = seg.t_end;
        t.report.segments.push(info);

        // freeze this segment's own points
        let mut pts: Vec<SpatioTemporalPoint> = seg.data.iter().map(|s| s.point).collect();
        pts.extend_from_slice(&seg.collocation);
        store.freeze(&t.net, &t.params, &pts)?;

        // predictions at the segment's last training instant become data
        // for the next segment
        carried.clear();
        if let Some(t_last) = seg.data.iter().map(|s| s.point.t).reduce(f64::max) {
            let at_last: Vec<SpatioTemporalPoint> = seg
                .data
                .iter()
                .filter(|s| s.point.t == t_last)
                .map(|s| s.point)
                .collect();
            let x = points_matrix(&at_last, n_in)?;
            let y = t.net.forward_batch(&t.params, x.view())?;
            for (p, row) in at_last.iter().zip(y.rows()) {
                carried.push(FlowSample {
                    point: *p,
                    u: row[0],
                    v: row[1],
                    w: (n_vel == 3).then(|| row[2]),
                    p: None,
                });
            }
        }
    }
    Ok(t.finish())
}

/// Rows of network inputs.
pub fn points_matrix(points: &[SpatioTemporalPoint], n_in: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = points.iter().flat_map(|p| p.to_vec()).collect();
    if flat.len() != points.len() * n_in {
        return Err(Error::Dimension {
            what: "point dimension",
            expected: n_in,
            got: points.first().map_or(0, |p| p.to_vec().len()),
        });
    }
    Array2::from_shape_vec((points.len(), n_in), flat).map_err(|e| Error::config(e.to_string()))
}

/// Bounding box of the training and collocation points, per input axis.
pub fn input_bounds_for(data: &DatasetSplit, n_in: usize) -> Option<Vec<(f64, f64)>> {
    let mut lo = vec![f64::INFINITY; n_in];
    let mut hi = vec![f64::NEG_INFINITY; n_in];
    let pts = data.train.iter().map(|s| s.point).chain(data.collocation.iter().copied());
    for p in pts {
        for (a, v) in p.to_vec().into_iter().enumerate().take(n_in) {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let b: Vec<(f64, f64)> = lo.into_iter().zip(hi).collect();
    b.iter().all(|(l, h)| h > l).then_some(b)
}

/// Supervised targets: input rows and the target value for output columns `0..y.ncols()`.
struct Targets {
    x: Array2<f64>,
    y: Array2<f64>,
    names: Vec<&'static str>,
}

impl Targets {
    fn new(samples: &[FlowSample], physics: &PhysicsRegime, with_p: bool) -> Result<Self> {
        let n_in = physics.n_inputs();
        let n_vel = physics.n_velocity();
        let mut names: Vec<&'static str> = ["u", "v", "w"][..n_vel].to_vec();
        if with_p {
            names.push("p");
        }
        let x = points_matrix(&samples.iter().map(|s| s.point).collect::<Vec<_>>(), n_in)?;
        let mut y = Array2::zeros((samples.len(), names.len()));
        for (r, s) in samples.iter().enumerate() {
            let vel = s.velocity();
            if vel.len() != n_vel {
                return Err(Error::Dimension {
                    what: "velocity components in sample",
                    expected: n_vel,
                    got: vel.len(),
                });
            }
            for k in 0..n_vel {
                y[[r, k]] = vel[k];
            }
            if with_p {
                y[[r, n_vel]] = s.p.ok_or_else(|| Error::config("sample lacks pressure"))?;
            }
        }
        Ok(Self { x, y, names })
    }

    fn new_opt(samples: &[FlowSample], physics: &PhysicsRegime, with_p: bool) -> Result<Option<Self>> {
        if samples.is_empty() {
            Ok(None)
        } else {
            Self::new(samples, physics, with_p).map(Some)
        }
    }
}

struct Problem {
    data: Option<Targets>,
    colloc: Option<Array2<f64>>,
    prev: Option<(Array2<f64>, Array2<f64>)>,
}

struct Streams {
    data: Option<BatchStream>,
    colloc: Option<BatchStream>,
    prev: Option<BatchStream>,
}

/// Named loss terms recorded on one tape.
struct Terms {
    data: Vec<(&'static str, Var)>,
    pde: Vec<(&'static str, Var)>,
    prev: Option<Var>,
}

const PDE_NAMES_2D: [&str; 3] = ["mx", "my", "c"];
const PDE_NAMES_3D: [&str; 4] = ["mx", "my", "mz", "c"];

struct Trainer<'a> {
    cfg: &'a RunConfig,
    net: Mlp,
    params: NetworkParams,
    weights: WeightState,
    report: TrainReport,
    iteration: usize,
    started: Instant,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a RunConfig, data: &DatasetSplit) -> Result<Self> {
        let mut nc = cfg.network.clone();
        if nc.input_bounds.is_none() {
            nc.input_bounds = input_bounds_for(data, nc.n_inputs);
        }
        let net = Mlp::new(nc)?;
        let params = net.init();
        Self::with_model(cfg, net, params)
    }

    fn with_model(cfg: &'a RunConfig, net: Mlp, params: NetworkParams) -> Result<Self> {
        if cfg.regime != TrainRegime::DataDriven {
            cfg.physics.check_network(&net)?;
        }
        net.check_params(&params)?;
        let mut echo = BTreeMap::new();
        echo.insert("layers".into(), cfg.network.hidden_layers.to_string());
        echo.insert("neurons".into(), cfg.network.neurons.to_string());
        echo.insert("activation".into(), cfg.network.activation.name().into());
        echo.insert("iterations".into(), cfg.budget.total_iterations.to_string());
        echo.insert("batch_size".into(), cfg.budget.batch_size.to_string());
        echo.insert(
            "learning_rates".into(),
            cfg.budget
                .learning_rates
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        echo.insert("segments".into(), cfg.n_segments.to_string());
        echo.insert("w_pde".into(), cfg.weights.w_pde.to_string());
        echo.insert("w_data".into(), cfg.weights.w_data.to_string());
        echo.insert("alpha".into(), cfg.weights.alpha.to_string());
        echo.insert("update_every".into(), cfg.weights.update_every.to_string());
        Ok(Self {
            weights: cfg.weights.clone(),
            report: TrainReport {
                regime: cfg.regime.name().into(),
                physics: cfg.physics.name().into(),
                strategy: cfg.strategy.name().into(),
                seed: cfg.budget.seed,
                config: echo,
                iterations: 0,
                loss_history: Vec::new(),
                weight_trajectory: Vec::new(),
                lambda_trajectory: Vec::new(),
                segments: Vec::new(),
                events: Vec::new(),
                wall_clock_s: 0.0,
                gradient_dumps: Vec::new(),
            },
            cfg,
            net,
            params,
            iteration: 0,
            started: Instant::now(),
        })
    }

    fn physics_on(&self) -> bool {
        self.cfg.regime != TrainRegime::DataDriven
    }

    fn streams(&self, seg: usize, p: &Problem) -> Result<Streams> {
        let seed = self.cfg.budget.seed;
        let bs = self.cfg.budget.batch_size;
        let cbs = self.cfg.collocation_batch.unwrap_or(bs);
        let stream = |n: usize, b: usize, name: &str| -> Result<BatchStream> {
            BatchStream::new(n, b, sub_seed(seed, &format!("batching.{name}.{seg}")))
        };
        Ok(Streams {
            data: p.data.as_ref().map(|d| stream(d.x.nrows(), bs, "data")).transpose()?,
            colloc: p.colloc.as_ref().map(|c| stream(c.nrows(), cbs, "collocation")).transpose()?,
            prev: p.prev.as_ref().map(|(x, _)| stream(x.nrows(), bs, "prev")).transpose()?,
        })
    }

    fn record_terms(&self, tape: &mut Tape, pv: &ParamVars, p: &Problem, s: &mut Streams) -> Result<Terms> {
        let n_in = self.net.config().n_inputs;
        let mut terms = Terms {
            data: Vec::new(),
            pde: Vec::new(),
            prev: None,
        };
        if let (Some(d), Some(st)) = (&p.data, s.data.as_mut()) {
            let idx = st.next().expect("endless stream");
            let xb = d.x.select(Axis(0), &idx);
            let layout = JetLayout::values_only(idx.len(), n_in);
            let out = self.net.record(tape, pv, xb.view(), &layout)?;
            for (c, name) in d.names.iter().enumerate() {
                let pred = tape.component(out, &layout, 0, c);
                let target = tape.constant(d.y.select(Axis(0), &idx).slice(ndarray::s![.., c..c + 1]).to_owned());
                let diff = tape.sub(pred, target);
                terms.data.push((name, tape.mean_square(diff)));
            }
        }
        if self.physics_on() {
            if let (Some(c), Some(st)) = (&p.colloc, s.colloc.as_mut()) {
                let idx = st.next().expect("endless stream");
                let xb = c.select(Axis(0), &idx);
                let layout = self.cfg.physics.layout(idx.len());
                let out = self.net.record(tape, pv, xb.view(), &layout)?;
                let res = residuals_on_tape(tape, out, &layout, &self.cfg.physics, pv)?;
                let names: &[&'static str] = if self.cfg.physics.is_3d() {
                    &PDE_NAMES_3D
                } else {
                    &PDE_NAMES_2D
                };
                for (name, r) in names.iter().zip(res.components()) {
                    terms.pde.push((name, tape.mean_square(r)));
                }
            }
        }
        if let (Some((x, y)), Some(st)) = (&p.prev, s.prev.as_mut()) {
            let idx = st.next().expect("endless stream");
            let xb = x.select(Axis(0), &idx);
            let layout = JetLayout::values_only(idx.len(), n_in);
            let out = self.net.record(tape, pv, xb.view(), &layout)?;
            let frozen = tape.constant(y.select(Axis(0), &idx));
            let diff = tape.sub(out, frozen);
            terms.prev = Some(tape.mean_square(diff));
        }
        Ok(terms)
    }

    fn adaptive_update(&mut self, tape: &mut Tape, pv: &ParamVars, terms: &Terms) -> Result<()> {
        if terms.data.is_empty() || terms.pde.is_empty() {
            self.report.events.push(format!(
                "iteration {}: adaptive update skipped (missing data or physics term)",
                self.iteration
            ));
            return Ok(());
        }
        let leaves = pv.network_leaves();
        let data_vars: Vec<Var> = terms.data.iter().map(|t| t.1).collect();
        let pde_vars: Vec<Var> = terms.pde.iter().map(|t| t.1).collect();
        let l_data = tape.sum(&data_vars);
        let l_pde = tape.sum(&pde_vars);
        let g_data = grad_params(tape, l_data, &leaves)?;
        let g_pde = grad_params(tape, l_pde, &leaves)?;
        match instantaneous_lambda(&g_pde, &g_data) {
            Ok(lh) => {
                let prev = self.weights.lambda_d;
                self.weights = loss::update_lambda(&self.weights, lh);
                self.report.weight_trajectory.push(WeightUpdate {
                    iteration: self.iteration,
                    lambda_hat: lh,
                    lambda_prev: prev,
                    lambda_d: self.weights.lambda_d,
                });
            }
            Err(Error::DegenerateGradient(m)) => {
                self.report.events.push(format!("iteration {}: {m}", self.iteration));
            }
            Err(e) => return Err(e),
        }
        if self.cfg.dump_gradients {
            self.report.gradient_dumps.push(GradientDump {
                iteration: self.iteration,
                grad_pde: g_pde,
                grad_data: g_data,
            });
        }
        Ok(())
    }

    fn run_segment(&mut self, seg: usize, p: &Problem, iterations: usize) -> Result<()> {
        if p.data.is_none() && p.colloc.is_none() && p.prev.is_none() {
            return Err(Error::Empty("segment with neither data nor collocation points"));
        }
        let mut streams = self.streams(seg, p)?;
        let mut adam = AdamState::new(self.params.count());
        for k in 0..iterations {
            let lr = rate_at(&self.cfg.budget.learning_rates, k, iterations);
            let mut tape = Tape::new();
            let pv = self.params.variables(&mut tape);
            let terms = self.record_terms(&mut tape, &pv, p, &mut streams)?;
            let adaptive = self.physics_on() && self.cfg.strategy == Strategy::Adaptive;
            if adaptive && self.iteration.is_multiple_of(self.weights.update_every) {
                self.adaptive_update(&mut tape, &pv, &terms)?;
            }
            let w = if self.physics_on() {
                loss_weights(self.cfg.strategy, &self.weights)
            } else {
                loss::LossWeights {
                    data: 1.0,
                    pde: 0.0,
                    prev: 0.0,
                }
            };
            let mut parts = Vec::new();
            for &(_, v) in &terms.data {
                parts.push(tape.scale(v, w.data));
            }
            for &(_, v) in &terms.pde {
                parts.push(tape.scale(v, w.pde));
            }
            if let Some(v) = terms.prev {
                parts.push(tape.scale(v, w.prev));
            }
            let total = tape.sum(&parts);
            let grad = grad_params(&tape, total, &pv.leaves()).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("iteration {}: {m}", self.iteration)),
                e => e,
            })?;
            let last = k + 1 == iterations;
            if self.iteration.is_multiple_of(self.cfg.log_every) || last {
                let vals = |ts: &[(&'static str, Var)]| ts.iter().map(|&(n, v)| (n, tape.scalar(v))).collect::<Vec<_>>();
                let mut b = assemble_loss(
                    &vals(&terms.data),
                    &vals(&terms.pde),
                    terms.prev.map(|v| tape.scalar(v)),
                    &self.weights,
                    self.cfg.strategy,
                )?;
                if !self.physics_on() {
                    b.weights = w;
                    b.total = b.recompute_total();
                }
                self.report.loss_history.push(LossRecord {
                    iteration: self.iteration,
                    segment: seg,
                    learning_rate: lr,
                    loss: b,
                });
                if let Some(c) = self.params.coefficient {
                    self.report.lambda_trajectory.push((self.iteration, c));
                }
            }
            adam_step(&mut self.params, &grad, &mut adam, lr).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("iteration {}: {m}", self.iteration)),
                e => e,
            })?;
            self.iteration += 1;
        }
        Ok(())
    }

    fn segment_info(&self, index: usize, data: &DatasetSplit, p: &Problem, iterations: usize) -> SegmentInfo {
        let ts = data.train.iter().map(|s| s.point.t).chain(data.collocation.iter().map(|c| c.t));
        let (t0, t1) = ts.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
        SegmentInfo {
            index,
            t_start: t0,
            t_end: t1,
            iterations,
            n_data: p.data.as_ref().map_or(0, |d| d.x.nrows()),
            n_collocation: p.colloc.as_ref().map_or(0, |c| c.nrows()),
            n_prev: p.prev.as_ref().map_or(0, |(x, _)| x.nrows()),
        }
    }

    fn finish(mut self) -> TrainOutcome {
        if let Some(c) = self.params.coefficient {
            if self.report.lambda_trajectory.last().map(|l| l.0) != Some(self.iteration) {
                self.report.lambda_trajectory.push((self.iteration, c));
            }
        }
        self.report.iterations = self.iteration;
        self.report.wall_clock_s = self.started.elapsed().as_secs_f64();
        TrainOutcome {
            net: self.net,
            params: self.params,
            report: self.report,
        }
    }
}

/// Parameter gradients (all leaves, flattening order) of each loss
/// component on one seeded batch: `data`, `pde` and, for BC-PINN,
/// `prevdata` against the model's own predictions on the first segment.
/// Data-driven runs have only `data`.
pub fn component_gradients(
    cfg: &RunConfig,
    net: &Mlp,
    params: &NetworkParams,
    data: &DatasetSplit,
) -> Result<Vec<(String, Vec<f64>)>> {
    cfg.validate()?;
    let t = Trainer::with_model(cfg, net.clone(), params.clone())?;
    let n_in = cfg.physics.n_inputs();
    let physics = cfg.regime != TrainRegime::DataDriven;
    let with_p = !physics && cfg.pressure_targets;
    let prev = if cfg.regime == TrainRegime::BcPinn {
        let seg = split_segments(&data.train, &data.collocation, cfg.n_segments)?;
        let mut pts: Vec<SpatioTemporalPoint> = seg[0].data.iter().map(|s| s.point).collect();
        pts.extend_from_slice(&seg[0].collocation);
        let mut store = FrozenStore::default();
        store.freeze(net, params, &pts)?;
        if store.is_empty() {
            None
        } else {
            let y = Array2::from_shape_fn((store.len(), store.outputs[0].len()), |(r, c)| store.outputs[r][c]);
            Some((points_matrix(&store.points, n_in)?, y))
        }
    } else {
        None
    };
    let problem = Problem {
        data: Targets::new_opt(&data.train, &cfg.physics, with_p)?,
        colloc: if physics && !data.collocation.is_empty() {
            Some(points_matrix(&data.collocation, n_in)?)
        } else {
            None
        },
        prev,
    };
    let mut streams = t.streams(0, &problem)?;
    let mut tape = Tape::new();
    let pv = t.params.variables(&mut tape);
    let terms = t.record_terms(&mut tape, &pv, &problem, &mut streams)?;
    let leaves = pv.leaves();
    let mut out = Vec::new();
    let mut push = |tape: &mut Tape, label: &str, vars: Vec<Var>| -> Result<()> {
        if vars.is_empty() {
            return Ok(());
        }
        let l = tape.sum(&vars);
        out.push((label.to_string(), grad_params(tape, l, &leaves)?));
        Ok(())
    };
    push(&mut tape, "data", terms.data.iter().map(|t| t.1).collect())?;
    if physics {
        push(&mut tape, "pde", terms.pde.iter().map(|t| t.1).collect())?;
    }
    if cfg.regime == TrainRegime::BcPinn {
        push(&mut tape, "prevdata", terms.prev.into_iter().collect())?;
    }
    Ok(out)
}

/// One sweep configuration's outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub layers: usize,
    pub neurons: usize,
    pub w_pde: f64,
    /// `(field, aRelative L2)`.
    pub errors: Vec<(String, f64)>,
    pub error: Option<String>,
}

fn train_and_evaluate(cfg: &RunConfig, data: &DatasetSplit) -> Result<Vec<(String, f64)>> {
    let out = train(cfg, data)?;
    let r = eval::evaluate(&out.net, &out.params, &data.test, data.schema)?;
    Ok(r.fields.into_iter().map(|f| (f.field, f.arelative_l2)).collect())
}

fn run_pool(cfgs: Vec<RunConfig>, data: &DatasetSplit, workers: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    use rayon::prelude::*;
    Ok(pool.install(|| {
        cfgs.par_iter()
            .map(|c| {
                let (errors, error) = match train_and_evaluate(c, data) {
                    Ok(e) => (e, None),
                    Err(e) => (Vec::new(), Some(e.to_string())),
                };
                SweepRow {
                    layers: c.network.hidden_layers,
                    neurons: c.network.neurons,
                    w_pde: c.weights.w_pde,
                    errors,
                    error,
                }
            })
            .collect()
    }))
}

/// Trains every `(layers, neurons)` combination with the base budget and
/// seed, evaluates each on the test split, and returns rows sorted by
/// `(layers, neurons)`. Failed runs are kept as rows carrying the error.
pub fn grid_search(layers: &[usize], neurons: &[usize], base: &RunConfig, data: &DatasetSplit, workers: usize) -> Result<Vec<SweepRow>> {
    if layers.is_empty() || neurons.is_empty() {
        return Err(Error::config("grid search needs at least one layer and one neuron option"));
    }
    let mut cfgs = Vec::new();
    for &l in layers {
        for &n in neurons {
            let mut c = base.clone();
            c.network.hidden_layers = l;
            c.network.neurons = n;
            cfgs.push(c);
        }
    }
    let mut rows = run_pool(cfgs, data, workers)?;
    rows.sort_by_key(|r| (r.layers, r.neurons));
    Ok(rows)
}

/// Trains one run per physics-loss weighting constant (relaxed strategy),
/// rows in the given order.
pub fn weighting_sweep(constants: &[f64], base: &RunConfig, data: &DatasetSplit, workers: usize) -> Result<Vec<SweepRow>> {
    if constants.is_empty() {
        return Err(Error::config("weighting sweep needs at least one constant"));
    }
    let cfgs = constants
        .iter()
        .map(|&w| {
            let mut c = base.clone();
            c.strategy = Strategy::Relaxed;
            c.weights.w_pde = w;
            c
        })
        .collect();
    run_pool(cfgs, data, workers)
}

/// Table text: `layers,neurons,w_pde,<field>...,error`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let fields: Vec<String> = rows
        .iter()
        .find(|r| r.error.is_none())
        .map(|r| r.errors.iter().map(|e| e.0.clone()).collect())
        .unwrap_or_default();
    let mut s = format!("layers,neurons,w_pde,{},error\n", fields.join(","));
    for r in rows {
        let vals: Vec<String> = fields
            .iter()
            .map(|f| {
                r.errors
                    .iter()
                    .find(|e| &e.0 == f)
                    .map_or(String::new(), |e| format!("{:e}", e.1))
            })
            .collect();
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layers,
            r.neurons,
            r.w_pde,
            vals.join(","),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    s
}
