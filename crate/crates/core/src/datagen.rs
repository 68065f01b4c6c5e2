//! Ground-truth flows, sparse sampling, temporal splits and CSV datasets.
//!
//! Generated data is nondimensional: lengths, velocities and time are in the
//! units of the manufactured solution and the Reynolds number enters as `1/Re`.
//! External CSV data must be nondimensionalized the same way before loading.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io_util;
use crate::physics::{ns2d_residuals, rans3d_residuals, FlowState2D, FlowState3D};

/// A space-time location; `z` is present for 3-D data only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatioTemporalPoint {
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
    pub t: f64,
}

impl SpatioTemporalPoint {
    pub fn new2(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, z: None, t }
    }

    pub fn new3(x: f64, y: f64, z: f64, t: f64) -> Self {
        Self { x, y, z: Some(z), t }
    }

    /// Network input vector: `(x, y, t)` or `(x, y, z, t)`.
    pub fn to_vec(&self) -> Vec<f64> {
        match self.z {
            Some(z) => vec![self.x, self.y, z, self.t],
            None => vec![self.x, self.y, self.t],
        }
    }

    pub fn from_slice(c: &[f64]) -> Result<Self> {
        match *c {
            [x, y, t] => Ok(Self::new2(x, y, t)),
            [x, y, z, t] => Ok(Self::new3(x, y, z, t)),
            _ => Err(Error::Dimension {
                what: "point width",
                expected: 3,
                got: c.len(),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite() && self.z.is_none_or(f64::is_finite)
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..*self }
    }
}

/// Observed flow at one point. Pressure is optional: it is withheld from
/// physics-informed training sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub point: SpatioTemporalPoint,
    pub u: f64,
    pub v: f64,
    pub w: Option<f64>,
    pub p: Option<f64>,
}

impl FlowSample {
    pub fn velocity(&self) -> Vec<f64> {
        let mut v = vec![self.u, self.v];
        v.extend(self.w);
        v
    }

    pub fn without_pressure(mut self) -> Self {
        self.p = None;
        self
    }
}

/// Drops pressure from every sample.
pub fn withhold_pressure(samples: &[FlowSample]) -> Vec<FlowSample> {
    samples.iter().map(|s| s.without_pressure()).collect()
}

/// Closed-form Taylor-Green fields and partials on the periodic square.
pub fn taylor_green_state(x: f64, y: f64, t: f64, re: f64) -> FlowState2D {
    let f = (-2.0 * t / re).exp();
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let u = -cx * sy * f;
    let v = sx * cy * f;
    FlowState2D {
        u,
        v,
        p: -0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * f * f,
        u_t: -2.0 / re * u,
        u_x: sx * sy * f,
        u_y: -cx * cy * f,
        u_xx: cx * sy * f,
        u_yy: cx * sy * f,
        v_t: -2.0 / re * v,
        v_x: cx * cy * f,
        v_y: -sx * sy * f,
        v_xx: -sx * cy * f,
        v_yy: -sx * cy * f,
        p_x: 0.5 * (2.0 * x).sin() * f * f,
        p_y: 0.5 * (2.0 * y).sin() * f * f,
    }
}

/// Taylor-Green vortex samples at 2-D points.
pub fn taylor_green(points: &[SpatioTemporalPoint], re: f64) -> Result<Vec<FlowSample>> {
    check_re(re)?;
    Ok(points
        .iter()
        .map(|p| {
            let s = taylor_green_state(p.x, p.y, p.t, re);
            FlowSample {
                point: *p,
                u: s.u,
                v: s.v,
                w: None,
                p: Some(s.p),
            }
        })
        .collect())
}

/// Beltrami flow parameters; both equal π/4.
pub const BELTRAMI_A: f64 = PI / 4.0;
pub const BELTRAMI_D: f64 = PI / 4.0;

/// Ethier–Steinman Beltrami flow: `(u, v, w, p)` at a point.
pub fn beltrami_fields(x: f64, y: f64, z: f64, t: f64, re: f64) -> [f64; 4] {
    let (a, d) = (BELTRAMI_A, BELTRAMI_D);
    let decay = (-d * d * t / re).exp();
    let u = -a * ((a * x).exp() * (a * y + d * z).sin() + (a * z).exp() * (a * x + d * y).cos());
    let v = -a * ((a * y).exp() * (a * z + d * x).sin() + (a * x).exp() * (a * y + d * z).cos());
    let w = -a * ((a * z).exp() * (a * x + d * y).sin() + (a * y).exp() * (a * z + d * x).cos());
    let p = -0.5
        * a
        * a
        * ((2.0 * a * x).exp()
            + (2.0 * a * y).exp()
            + (2.0 * a * z).exp()
            + 2.0 * (a * x + d * y).sin() * (a * z + d * x).cos() * (a * (y + z)).exp()
            + 2.0 * (a * y + d * z).sin() * (a * x + d * y).cos() * (a * (z + x)).exp()
            + 2.0 * (a * z + d * x).sin() * (a * y + d * z).cos() * (a * (x + y)).exp());
    [u * decay, v * decay, w * decay, p * decay * decay]
}

/// Beltrami samples at 3-D points.
pub fn beltrami_3d(points: &[SpatioTemporalPoint], re: f64) -> Result<Vec<FlowSample>> {
    check_re(re)?;
    points
        .iter()
        .map(|p| {
            let z = p
                .z
                .ok_or_else(|| Error::config("Beltrami flow needs 3-D points"))?;
            let [u, v, w, pr] = beltrami_fields(p.x, p.y, z, p.t, re);
            Ok(FlowSample {
                point: *p,
                u,
                v,
                w: Some(w),
                p: Some(pr),
            })
        })
        .collect()
}

/// Beltrami state with partials taken by central differences of the closed form.
pub fn beltrami_state_fd(x: f64, y: f64, z: f64, t: f64, re: f64) -> FlowState3D {
    let f = |c: [f64; 4]| beltrami_fields(c[0], c[1], c[2], c[3], re);
    let c0 = [x, y, z, t];
    let h1 = 1e-6;
    let h2 = 1e-4;
    let base = f(c0);
    let shifted = |axis: usize, h: f64| {
        let mut c = c0;
        c[axis] += h;
        f(c)
    };
    let d1 = |axis: usize| {
        let (p, m) = (shifted(axis, h1), shifted(axis, -h1));
        [0, 1, 2, 3].map(|k| (p[k] - m[k]) / (2.0 * h1))
    };
    let d2 = |axis: usize| {
        let (p, m) = (shifted(axis, h2), shifted(axis, -h2));
        [0, 1, 2, 3].map(|k| (p[k] - 2.0 * base[k] + m[k]) / (h2 * h2))
    };
    let g = [d1(0), d1(1), d1(2)];
    let s = [d2(0), d2(1), d2(2)];
    let gt = d1(3);
    FlowState3D {
        vel: [base[0], base[1], base[2]],
        p: base[3],
        vel_t: [gt[0], gt[1], gt[2]],
        grad: [0, 1, 2].map(|i| [0, 1, 2].map(|j| g[j][i])),
        second: [0, 1, 2].map(|i| [0, 1, 2].map(|j| s[j][i])),
        grad_p: [g[0][3], g[1][3], g[2][3]],
        stresses: None,
    }
}

fn check_re(re: f64) -> Result<()> {
    if !(re > 0.0 && re.is_finite()) {
        return Err(Error::config(format!("Reynolds number must be positive, got {re}")));
    }
    Ok(())
}

/// `n` evenly spaced values on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Tensor grid of `n × n` points over `[x0, x1] × [y0, y1]`, x fastest.
pub fn grid_2d(n: usize, x: (f64, f64), y: (f64, f64)) -> Vec<(f64, f64)> {
    let xs = linspace(x.0, x.1, n);
    let ys = linspace(y.0, y.1, n);
    ys.iter().flat_map(|&yv| xs.iter().map(move |&xv| (xv, yv))).collect()
}

/// `n` distinct entries of `grid`, drawn uniformly without replacement,
/// returned in grid order.
pub fn sample_sparse<T: Clone>(grid: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > grid.len() {
        return Err(Error::config(format!(
            "cannot draw {n} points from a grid of {}",
            grid.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, grid.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| grid[i].clone()).collect())
}

/// Training and test instants.
///
/// `initial` is `t0` (the initial condition, always part of the training
/// data); `train` holds the training steps `t0 + k·dt_train` for `k ≥ 1`
/// up to `t1`; `test` holds every multiple of `dt_test` strictly inside
/// `(t0, t1)` that is not a training instant.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSplit {
    pub initial: f64,
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

impl TimeSplit {
    /// Initial instant followed by all training steps.
    pub fn training_instants(&self) -> Vec<f64> {
        std::iter::once(self.initial).chain(self.train.iter().copied()).collect()
    }
}

const STEP_TOL: f64 = 1e-9;

pub fn split_train_test(t0: f64, t1: f64, dt_train: f64, dt_test: f64) -> Result<TimeSplit> {
    if !(t1 > t0) || !(dt_train > 0.0) || !(dt_test > 0.0) {
        return Err(Error::config("time split needs t1 > t0 and positive steps"));
    }
    let ratio = dt_train / dt_test;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > STEP_TOL * ratio.max(1.0) {
        return Err(Error::config(format!(
            "test step {dt_test} does not divide training step {dt_train}"
        )));
    }
    let m = m as usize;
    let n_train = ((t1 - t0) / dt_train + STEP_TOL).floor() as usize;
    let n_test = ((t1 - t0) / dt_test + STEP_TOL).floor() as usize;
    let train = (1..=n_train).map(|k| instant(t0, t1, dt_train, k)).collect();
    let exact = ((t1 - t0) / dt_test - n_test as f64).abs() < STEP_TOL;
    let span_end = if exact { n_test } else { n_test + 1 };
    let test = (1..span_end)
        .filter(|k| k % m != 0)
        .map(|k| instant(t0, t1, dt_test, k))
        .collect();
    Ok(TimeSplit {
        initial: t0,
        train,
        test,
    })
}

/// `t0 + k·dt`, computed as a fraction of the span when `dt` tiles it
/// exactly so that the last step lands on `t1`.
fn instant(t0: f64, t1: f64, dt: f64, k: usize) -> f64 {
    let n = ((t1 - t0) / dt).round();
    if ((t1 - t0) / dt - n).abs() < STEP_TOL {
        t0 + (t1 - t0) * k as f64 / n
    } else {
        t0 + k as f64 * dt
    }
}

/// Column layout of dataset CSV files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Flow2d,
    Flow3d,
}

impl Schema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            Schema::Flow2d => &["x", "y", "t", "u", "v", "p"],
            Schema::Flow3d => &["x", "y", "z", "t", "u", "v", "w", "p"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schema::Flow2d => "flow2d",
            Schema::Flow3d => "flow3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "flow2d" => Ok(Schema::Flow2d),
            "flow3d" => Ok(Schema::Flow3d),
            o => Err(Error::config(format!("unknown schema `{o}`"))),
        }
    }
}

/// Serializes samples as CSV text. Missing pressure is written as an empty cell.
pub fn samples_to_csv(schema: Schema, samples: &[FlowSample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::config(format!("csv write: {e}"));
    w.write_record(schema.header()).map_err(csv_err)?;
    for s in samples {
        let p = s.p.map(|v| v.to_string()).unwrap_or_default();
        let row: Vec<String> = match schema {
            Schema::Flow2d => vec![
                s.point.x.to_string(),
                s.point.y.to_string(),
                s.point.t.to_string(),
                s.u.to_string(),
                s.v.to_string(),
                p,
            ],
            Schema::Flow3d => vec![
                s.point.x.to_string(),
                s.point.y.to_string(),
                s.point.z.unwrap_or(0.0).to_string(),
                s.point.t.to_string(),
                s.u.to_string(),
                s.v.to_string(),
                s.w.unwrap_or(0.0).to_string(),
                p,
            ],
        };
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::config(format!("csv write: {e}")))
}

pub fn write_csv(path: &Path, schema: Schema, samples: &[FlowSample]) -> Result<()> {
    io_util::write_atomic(path, &samples_to_csv(schema, samples)?)
}

/// Parses dataset CSV text. The header must match `schema` exactly; rows
/// with malformed or non-finite numbers are rejected with their line number.
pub fn parse_csv(text: &str, schema: Schema, origin: &str) -> Result<Vec<FlowSample>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| perr(1, e.to_string()))?
        .clone();
    let got: Vec<&str> = header.iter().collect();
    if got != schema.header() {
        return Err(perr(
            1,
            format!(
                "header {:?} does not match {} schema {:?}",
                got,
                schema.name(),
                schema.header()
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize, name: &str| -> Result<f64> {
            let cell = rec.get(i).unwrap_or("");
            let v: f64 = cell
                .parse()
                .map_err(|_| perr(line, format!("column `{name}`: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(line, format!("column `{name}`: non-finite value `{cell}`")));
            }
            Ok(v)
        };
        let opt = |i: usize, name: &str| -> Result<Option<f64>> {
            if rec.get(i).unwrap_or("").is_empty() {
                Ok(None)
            } else {
                num(i, name).map(Some)
            }
        };
        let s = match schema {
            Schema::Flow2d => FlowSample {
                point: SpatioTemporalPoint::new2(num(0, "x")?, num(1, "y")?, num(2, "t")?),
                u: num(3, "u")?,
                v: num(4, "v")?,
                w: None,
                p: opt(5, "p")?,
            },
            Schema::Flow3d => FlowSample {
                point: SpatioTemporalPoint::new3(num(0, "x")?, num(1, "y")?, num(2, "z")?, num(3, "t")?),
                u: num(4, "u")?,
                v: num(5, "v")?,
                w: Some(num(6, "w")?),
                p: opt(7, "p")?,
            },
        };
        out.push(s);
    }
    Ok(out)
}

pub fn load_csv(path: &Path, schema: Schema) -> Result<Vec<FlowSample>> {
    let text = io_util::read_to_string(path)?;
    parse_csv(&text, schema, &path.display().to_string())
}

/// Analytic ground truth available to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    TaylorGreen,
    Beltrami,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::TaylorGreen => "taylor_green",
            Generator::Beltrami => "beltrami",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "taylor_green" | "taylor-green" => Ok(Generator::TaylorGreen),
            "beltrami" => Ok(Generator::Beltrami),
            o => Err(Error::config(format!("unknown generator `{o}`"))),
        }
    }

    pub fn schema(self) -> Schema {
        match self {
            Generator::TaylorGreen => Schema::Flow2d,
            Generator::Beltrami => Schema::Flow3d,
        }
    }

    pub fn sample(self, points: &[SpatioTemporalPoint], re: f64) -> Result<Vec<FlowSample>> {
        match self {
            Generator::TaylorGreen => taylor_green(points, re),
            Generator::Beltrami => beltrami_3d(points, re),
        }
    }

    /// Largest residual of the governing equations over `samples`, using
    /// closed-form partials (Taylor-Green) or central differences (Beltrami).
    pub fn max_residual(self, samples: &[FlowSample], re: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in samples {
            let p = s.point;
            let r = match self {
                Generator::TaylorGreen => ns2d_residuals(&taylor_green_state(p.x, p.y, p.t, re), re)?,
                Generator::Beltrami => {
                    let z = p.z.ok_or_else(|| Error::config("Beltrami sample without z"))?;
                    rans3d_residuals(&beltrami_state_fd(p.x, p.y, z, p.t, re), 1.0 / re)
                }
            };
            worst = worst.max(r.max_abs());
        }
        Ok(worst)
    }

    /// Acceptance threshold for [`max_residual`](Self::max_residual).
    pub fn residual_tolerance(self) -> f64 {
        match self {
            Generator::TaylorGreen => 1e-10,
            Generator::Beltrami => 1e-5,
        }
    }
}

/// Test data: either a spatial grid evaluated analytically at each test
/// instant, or explicit samples (e.g. loaded from CSV).
#[derive(Clone, Debug, PartialEq)]
pub enum TestSet {
    Grid {
        generator: Generator,
        re: f64,
        /// Spatial points; `z` is ignored for 2-D generators.
        points: Vec<[f64; 3]>,
        times: Vec<f64>,
    },
    Samples(Vec<FlowSample>),
}

impl TestSet {
    /// Test samples grouped by instant, in increasing time.
    pub fn steps(&self) -> Result<Vec<(f64, Vec<FlowSample>)>> {
        let mut out = Vec::new();
        self.for_each_step(|t, s| {
            out.push((t, s.to_vec()));
            Ok(())
        })?;
        Ok(out)
    }

    /// Visits each test instant without materializing the whole set.
    pub fn for_each_step(&self, mut f: impl FnMut(f64, &[FlowSample]) -> Result<()>) -> Result<()> {
        match self {
            TestSet::Grid {
                generator,
                re,
                points,
                times,
            } => {
                for &t in times {
                    let pts: Vec<SpatioTemporalPoint> = points
                        .iter()
                        .map(|c| match generator {
                            Generator::TaylorGreen => SpatioTemporalPoint::new2(c[0], c[1], t),
                            Generator::Beltrami => SpatioTemporalPoint::new3(c[0], c[1], c[2], t),
                        })
                        .collect();
                    f(t, &generator.sample(&pts, *re)?)?;
                }
                Ok(())
            }
            TestSet::Samples(samples) => {
                let mut groups: BTreeMap<u64, Vec<FlowSample>> = BTreeMap::new();
                for s in samples {
                    // total order on non-negative and negative finite times
                    let key = ordered_key(s.point.t);
                    groups.entry(key).or_default().push(*s);
                }
                for g in groups.values() {
                    f(g[0].point.t, g)?;
                }
                Ok(())
            }
        }
    }

    pub fn n_steps(&self) -> usize {
        match self {
            TestSet::Grid { times, .. } => times.len(),
            TestSet::Samples(s) => {
                let mut keys: Vec<u64> = s.iter().map(|x| ordered_key(x.point.t)).collect();
                keys.sort_unstable();
                keys.dedup();
                keys.len()
            }
        }
    }
}

fn ordered_key(t: f64) -> u64 {
    let b = t.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Plain-text `key = value` dataset metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetMeta(pub BTreeMap<String, String>);

impl DatasetMeta {
    pub fn set(&mut self, k: &str, v: impl ToString) {
        self.0.insert(k.to_string(), v.to_string());
    }

    pub fn get(&self, k: &str) -> Option<&str> {
        self.0.get(k).map(String::as_str)
    }

    pub fn require(&self, k: &str) -> Result<&str> {
        self.get(k)
            .ok_or_else(|| Error::config(format!("dataset metadata lacks `{k}`")))
    }

    pub fn require_f64(&self, k: &str) -> Result<f64> {
        let v = self.require(k)?;
        v.parse()
            .map_err(|_| Error::config(format!("metadata `{k}` is not a number: `{v}`")))
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "metadata".into(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            m.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(m))
    }
}

/// Training samples, test data, collocation points and their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub schema: Schema,
    pub train: Vec<FlowSample>,
    pub test: TestSet,
    pub collocation: Vec<SpatioTemporalPoint>,
    pub meta: DatasetMeta,
}

/// Parameters of a manufactured dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub generator: Generator,
    pub re: f64,
    /// Points per axis of the extraction grid (per plane in 3-D).
    pub grid: usize,
    /// Sparse training locations (per plane in 3-D).
    pub n_points: usize,
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// Planes sampled in 3-D.
    pub z_levels: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub dt_train: f64,
    pub dt_test: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Taylor-Green on `[0, 2π]²`, 100×100 grid, 96 sparse points, `[0, 7]`.
    pub fn taylor_green_default(seed: u64) -> Self {
        Self {
            generator: Generator::TaylorGreen,
            re: 100.0,
            grid: 100,
            n_points: 96,
            x: (0.0, 2.0 * PI),
            y: (0.0, 2.0 * PI),
            z_levels: Vec::new(),
            t0: 0.0,
            t1: 7.0,
            dt_train: 0.1,
            dt_test: 0.01,
            seed,
        }
    }

    /// Beltrami on `[-1, 1]³` sampled on three z-planes.
    pub fn beltrami_default(seed: u64) -> Self {
        Self {
            generator: Generator::Beltrami,
            re: 10.0,
            grid: 40,
            n_points: 64,
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
            z_levels: vec![-0.5, 0.0, 0.5],
            t0: 0.0,
            t1: 5.0,
            dt_train: 0.5,
            dt_test: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_re(self.re)?;
        if self.n_points == 0 {
            return Err(Error::config("data.n_points must be at least 1"));
        }
        if self.grid < 2 {
            return Err(Error::config("data.grid must be at least 2"));
        }
        if self.n_points > self.grid * self.grid {
            return Err(Error::config(format!(
                "data.n_points {} exceeds grid size {}",
                self.n_points,
                self.grid * self.grid
            )));
        }
        if self.generator == Generator::Beltrami && self.z_levels.is_empty() {
            return Err(Error::config("3-D data needs at least one z level"));
        }
        Ok(())
    }

    /// Spatial grid (2-D: one plane; 3-D: one plane per z level).
    pub fn full_grid(&self) -> Vec<[f64; 3]> {
        let plane = grid_2d(self.grid, self.x, self.y);
        match self.generator {
            Generator::TaylorGreen => plane.into_iter().map(|(x, y)| [x, y, 0.0]).collect(),
            Generator::Beltrami => self
                .z_levels
                .iter()
                .flat_map(|&z| plane.iter().map(move |&(x, y)| [x, y, z]))
                .collect(),
        }
    }

    /// Sparse locations: `n_points` of the plane grid (independently per z level in 3-D).
    pub fn sparse_locations(&self) -> Result<Vec<[f64; 3]>> {
        let plane = grid_2d(self.grid, self.x, self.y);
        let seed = crate::optim::sub_seed(self.seed, "sampling");
        match self.generator {
            Generator::TaylorGreen => Ok(sample_sparse(&plane, self.n_points, seed)?
                .into_iter()
                .map(|(x, y)| [x, y, 0.0])
                .collect()),
            Generator::Beltrami => {
                let mut out = Vec::new();
                for (i, &z) in self.z_levels.iter().enumerate() {
                    let pts = sample_sparse(&plane, self.n_points, seed.wrapping_add(i as u64))?;
                    out.extend(pts.into_iter().map(|(x, y)| [x, y, z]));
                }
                Ok(out)
            }
        }
    }

    fn point(&self, c: [f64; 3], t: f64) -> SpatioTemporalPoint {
        match self.generator {
            Generator::TaylorGreen => SpatioTemporalPoint::new2(c[0], c[1], t),
            Generator::Beltrami => SpatioTemporalPoint::new3(c[0], c[1], c[2], t),
        }
    }

    /// Builds the split and runs the residual-consistency check on the
    /// training samples. Collocation points are left empty (see
    /// [`default_collocation`]).
    pub fn generate(&self) -> Result<DatasetSplit> {
        self.validate()?;
        let times = split_train_test(self.t0, self.t1, self.dt_train, self.dt_test)?;
        let locs = self.sparse_locations()?;
        let pts: Vec<SpatioTemporalPoint> = times
            .training_instants()
            .iter()
            .flat_map(|&t| locs.iter().map(move |&c| (c, t)))
            .map(|(c, t)| self.point(c, t))
            .collect();
        let train = self.generator.sample(&pts, self.re)?;
        let max_res = self.generator.max_residual(&train, self.re)?;
        if max_res > self.generator.residual_tolerance() {
            return Err(Error::Validation(format!(
                "generated {} data has max residual {max_res:e} above {:e}",
                self.generator.name(),
                self.generator.residual_tolerance()
            )));
        }
        let mut meta = DatasetMeta::default();
        meta.set("generator", self.generator.name());
        meta.set("schema", self.generator.schema().name());
        meta.set("re", self.re);
        meta.set("seed", self.seed);
        meta.set("grid", self.grid);
        meta.set("n_points", self.n_points);
        meta.set("x_min", self.x.0);
        meta.set("x_max", self.x.1);
        meta.set("y_min", self.y.0);
        meta.set("y_max", self.y.1);
        meta.set(
            "z_levels",
            self.z_levels.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        meta.set("t0", self.t0);
        meta.set("t1", self.t1);
        meta.set("dt_train", self.dt_train);
        meta.set("dt_test", self.dt_test);
        meta.set("n_train_steps", times.train.len());
        meta.set("n_test_steps", times.test.len());
        meta.set("n_train_samples", train.len());
        meta.set("max_residual", format!("{max_res:e}"));
        Ok(DatasetSplit {
            schema: self.generator.schema(),
            train,
            test: TestSet::Grid {
                generator: self.generator,
                re: self.re,
                points: self.full_grid(),
                times: times.test,
            },
            collocation: Vec::new(),
            meta,
        })
    }

    /// Rebuilds generator parameters from dataset metadata.
    pub fn from_meta(meta: &DatasetMeta) -> Result<Self> {
        let z_levels = match meta.get("z_levels") {
            None | Some("") => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("bad z level `{v}`")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            generator: Generator::parse(meta.require("generator")?)?,
            re: meta.require_f64("re")?,
            grid: meta.require_f64("grid")? as usize,
            n_points: meta.require_f64("n_points")? as usize,
            x: (meta.require_f64("x_min")?, meta.require_f64("x_max")?),
            y: (meta.require_f64("y_min")?, meta.require_f64("y_max")?),
            z_levels,
            t0: meta.require_f64("t0")?,
            t1: meta.require_f64("t1")?,
            dt_train: meta.require_f64("dt_train")?,
            dt_test: meta.require_f64("dt_test")?,
            seed: meta.require_f64("seed")? as u64,
        })
    }
}

/// Default collocation set: every training sample location, plus an equal
/// number of uniform random points in the bounding box of the training data.
pub fn default_collocation(train: &[FlowSample], seed: u64) -> Vec<SpatioTemporalPoint> {
    collocation_set(train, train.len(), seed)
}

/// Training sample locations plus `n_uniform` uniform random points in their
/// space-time bounding box.
pub fn collocation_set(train: &[FlowSample], n_uniform: usize, seed: u64) -> Vec<SpatioTemporalPoint> {
    if train.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<SpatioTemporalPoint> = train.iter().map(|s| s.point).collect();
    let coords: Vec<Vec<f64>> = out.iter().map(SpatioTemporalPoint::to_vec).collect();
    let dim = coords[0].len();
    let lo: Vec<f64> = (0..dim)
        .map(|a| coords.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|a| coords.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_uniform {
        let c: Vec<f64> = (0..dim)
            .map(|a| lo[a] + (hi[a] - lo[a]) * rng.random::<f64>())
            .collect();
        out.push(SpatioTemporalPoint::from_slice(&c).expect("width 3 or 4"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_green_examples() {
        let s = taylor_green(&[SpatioTemporalPoint::new2(0.0, 0.0, 0.0)], 100.0).unwrap();
        assert_eq!((s[0].u, s[0].v, s[0].p), (-0.0, 0.0, Some(-0.5)));
        let s = taylor_green(&[SpatioTemporalPoint::new2(PI / 2.0, 0.0, 0.0)], 100.0).unwrap();
        assert!(s[0].u.abs() < 1e-15);
        assert!((s[0].v - 1.0).abs() < 1e-15);
        assert!(s[0].p.unwrap().abs() < 1e-15);
        assert!(taylor_green(&[], 0.0).is_err());
    }

    #[test]
    fn beltrami_decays() {
        let [u, v, w, _] = beltrami_fields(0.3, -0.2, 0.5, 1e4, 10.0);
        assert!(u.abs() < 1e-12 && v.abs() < 1e-12 && w.abs() < 1e-12);
    }

    #[test]
    fn sparse_sampling() {
        let grid = grid_2d(100, (0.0, 1.0), (0.0, 1.0));
        let a = sample_sparse(&grid, 96, 3).unwrap();
        let b = sample_sparse(&grid, 96, 3).unwrap();
        assert_eq!(a, b);
        let mut keys: Vec<(u64, u64)> = a.iter().map(|(x, y)| (x.to_bits(), y.to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 96);
        assert!((96.0 / grid.len() as f64) < 0.01);
        assert_eq!(sample_sparse(&grid, grid.len(), 1).unwrap(), grid);
        assert!(sample_sparse(&grid, grid.len() + 1, 1).is_err());
    }

    #[test]
    fn time_split_counts() {
        let s = split_train_test(0.0, 7.0, 0.1, 0.01).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.test.len(), 630);
        assert_eq!(s.training_instants().len(), 71);
        assert_eq!(*s.train.last().unwrap(), 7.0);
        assert_eq!(s.train[0], 0.1);
        let s = split_train_test(0.0, 1.0, 0.5, 0.25).unwrap();
        assert_eq!(s.test, vec![0.25, 0.75]);
        assert!(split_train_test(0.0, 1.0, 0.5, 0.3).is_err());
    }

    #[test]
    fn csv_header_only_and_rows() {
        let empty = parse_csv("x,y,t,u,v,p\n", Schema::Flow2d, "mem").unwrap();
        assert!(empty.is_empty());
        let txt = "x,y,t,u,v,p\n0,0,0,1,2,3\n0.5,1,0.1,-1,-2,-3\n1,1,1,0,0,\n";
        let s = parse_csv(txt, Schema::Flow2d, "mem").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].point, SpatioTemporalPoint::new2(0.5, 1.0, 0.1));
        assert_eq!((s[1].u, s[1].v, s[1].p), (-1.0, -2.0, Some(-3.0)));
        assert_eq!(s[2].p, None);
    }

    #[test]
    fn csv_rejects_nan_with_line() {
        let txt = "x,y,t,u,v,p\n0,0,0,1,2,3\n0,0,0,NaN,2,3\n";
        match parse_csv(txt, Schema::Flow2d, "d.csv") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("non-finite"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let txt = "x,y,t,u,v,p\n0,0,zero,1,2,3\n";
        assert!(matches!(parse_csv(txt, Schema::Flow2d, "d.csv"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_csv("x,y,t,u,v\n", Schema::Flow2d, "d.csv").is_err());
        assert!(parse_csv("x,y,t,u,v,p\n", Schema::Flow3d, "d.csv").is_err());
    }

    #[test]
    fn meta_round_trip() {
        let mut m = DatasetMeta::default();
        m.set("seed", 7);
        m.set("re", 100.0);
        let back = DatasetMeta::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn generated_split_counts() {
        let spec = GeneratorSpec::taylor_green_default(11);
        let d = spec.generate().unwrap();
        assert_eq!(d.train.len(), 96 * 71);
        assert_eq!(d.test.n_steps(), 630);
        assert_eq!(GeneratorSpec::from_meta(&d.meta).unwrap(), spec);
    }

    #[test]
    fn collocation_doubles_training_points() {
        let d = GeneratorSpec::taylor_green_default(1).generate().unwrap();
        let c = default_collocation(&d.train, 5);
        assert_eq!(c.len(), 2 * d.train.len());
        assert_eq!(c, default_collocation(&d.train, 5));
        assert!(c.iter().all(|p| p.t >= 0.0 && p.t <= 7.0 && p.x >= 0.0 && p.x <= 2.0 * PI));
    }

    proptest::proptest! {
        #[test]
        fn split_is_disjoint_and_covering(n in 1usize..40, m in 1usize..8) {
            let dt_test = 0.01;
            let dt_train = dt_test * m as f64;
            let t1 = dt_train * n as f64;
            let s = split_train_test(0.0, t1, dt_train, dt_test).unwrap();
            let key = |t: f64| (t / dt_test).round() as i64;
            let train: std::collections::BTreeSet<i64> = s.train.iter().map(|&t| key(t)).collect();
            let test: std::collections::BTreeSet<i64> = s.test.iter().map(|&t| key(t)).collect();
            proptest::prop_assert!(train.is_disjoint(&test));
            let interior: std::collections::BTreeSet<i64> = (1..(n * m) as i64).collect();
            let union: std::collections::BTreeSet<i64> = train.union(&test).copied().filter(|k| *k < (n * m) as i64).collect();
            proptest::prop_assert_eq!(union, interior);
        }
    }
}
