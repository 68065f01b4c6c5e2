//! Fully connected feed-forward network from space-time coordinates to flow fields.
//!
//! Hidden layers apply `h_i = ψ(h_{i-1} W_i + b_i)`; the output layer is
//! affine with no activation, so outputs (pressure in particular) are
//! unbounded. Weight matrices are stored `fan_in × fan_out`.
//!
//! An optional fixed affine map sends each input axis from `[lo, hi]` onto
//! `[-1, 1]` before the first layer. It has no trainable parameters and
//! derivatives are taken with respect to the raw coordinates.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::diffengine::{Activation, JetLayout, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Normal entries with variance `2 / (fan_in + fan_out)`.
    Xavier,
    /// Uniform entries on `±1/√fan_in`.
    Uniform,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Xavier => "xavier",
            InitScheme::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "xavier" => Ok(InitScheme::Xavier),
            "uniform" | "uniform-random" | "random" => Ok(InitScheme::Uniform),
            other => Err(Error::config(format!(
                "unknown init scheme `{other}` (expected xavier or uniform)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub n_inputs: usize,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub n_outputs: usize,
    pub activation: Activation,
    pub init: InitScheme,
    pub seed: u64,
    /// Per-axis `(lo, hi)` mapped onto `[-1, 1]`; `None` feeds raw inputs.
    pub input_bounds: Option<Vec<(f64, f64)>>,
    /// Initial value of the trainable PDE coefficient, when one is carried.
    pub coefficient_init: Option<f64>,
}

impl MlpConfig {
    pub fn new(n_inputs: usize, hidden_layers: usize, neurons: usize, n_outputs: usize) -> Self {
        Self {
            n_inputs,
            hidden_layers,
            neurons,
            n_outputs,
            activation: Activation::Tanh,
            init: InitScheme::Xavier,
            seed: 0,
            input_bounds: None,
            coefficient_init: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(Error::config("network needs at least one input and one output"));
        }
        if self.hidden_layers == 0 || self.neurons == 0 {
            return Err(Error::config("network needs at least one hidden layer with at least one neuron"));
        }
        if let Some(b) = &self.input_bounds {
            if b.len() != self.n_inputs {
                return Err(Error::Dimension {
                    what: "input bounds",
                    expected: self.n_inputs,
                    got: b.len(),
                });
            }
            if b.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
                return Err(Error::config("input bounds must be finite with hi > lo"));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.n_inputs;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.neurons));
            fan_in = self.neurons;
        }
        shapes.push((fan_in, self.n_outputs));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum::<usize>()
            + usize::from(self.coefficient_init.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable state: layer weights and biases, plus the optional PDE coefficient.
///
/// Flattening order: for each layer in order, the weight matrix row-major
/// then the bias; the coefficient (if present) last.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub coefficient: Option<f64>,
}

/// Tape handles for a [`NetworkParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
    pub coefficient: Option<Var>,
}

impl ParamVars {
    /// Every leaf in flattening order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = self.network_leaves();
        v.extend(self.coefficient);
        v
    }

    /// Weight and bias leaves only.
    pub fn network_leaves(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

impl NetworkParams {
    pub fn count(&self) -> usize {
        self.network_count() + usize::from(self.coefficient.is_some())
    }

    /// Number of weights and biases, excluding the coefficient.
    pub fn network_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out.extend(self.coefficient);
        out
    }

    /// Overwrites every entry from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: self.count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        if let Some(c) = &mut self.coefficient {
            *c = it.next().unwrap();
        }
        Ok(())
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut leaf = |a: Array2<f64>| {
            if trainable {
                tape.variable(a)
            } else {
                tape.constant(a)
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let n = l.bias.len();
                let w = leaf(l.weights.clone());
                let b = leaf(l.bias.clone().into_shape_with_order((1, n)).unwrap());
                (w, b)
            })
            .collect();
        let coefficient = self.coefficient.map(|c| leaf(Array2::from_elem((1, 1), c)));
        ParamVars {
            layers,
            coefficient,
        }
    }

    /// Registers every entry as a differentiable leaf.
    pub fn variables(&self, tape: &mut Tape) -> ParamVars {
        self.register(tape, true)
    }

    /// Registers every entry as a constant.
    pub fn constants(&self, tape: &mut Tape) -> ParamVars {
        self.register(tape, false)
    }
}

/// A network architecture; parameters live separately in [`NetworkParams`].
#[derive(Clone, Debug)]
pub struct Mlp {
    config: MlpConfig,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Mlp {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let (shift, scale) = match &config.input_bounds {
            Some(b) => b
                .iter()
                .map(|&(lo, hi)| (0.5 * (lo + hi), 2.0 / (hi - lo)))
                .unzip(),
            None => (vec![0.0; config.n_inputs], vec![1.0; config.n_inputs]),
        };
        Ok(Self {
            config,
            shift,
            scale,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// Fresh parameters drawn under the configured scheme and seed.
    pub fn init(&self) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let layers = self
            .config
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let weights = match self.config.init {
                    InitScheme::Xavier => {
                        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                        let d = Normal::new(0.0, std).expect("positive std");
                        Array2::from_shape_simple_fn((fan_in, fan_out), || d.sample(&mut rng))
                    }
                    InitScheme::Uniform => {
                        let a = 1.0 / (fan_in as f64).sqrt();
                        let d = Uniform::new(-a, a).expect("nonempty range");
                        Array2::from_shape_simple_fn((fan_in, fan_out), || d.sample(&mut rng))
                    }
                };
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        NetworkParams {
            layers,
            coefficient: self.config.coefficient_init,
        }
    }

    pub fn check_params(&self, params: &NetworkParams) -> Result<()> {
        let shapes = self.config.layer_shapes();
        if params.layers.len() != shapes.len() {
            return Err(Error::Dimension {
                what: "layer count",
                expected: shapes.len(),
                got: params.layers.len(),
            });
        }
        for (l, &(i, o)) in params.layers.iter().zip(&shapes) {
            if l.weights.dim() != (i, o) || l.bias.len() != o {
                return Err(Error::config(format!(
                    "layer shape {:?}/{} does not match expected {i}x{o}",
                    l.weights.dim(),
                    l.bias.len()
                )));
            }
        }
        Ok(())
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.config.n_inputs {
            return Err(Error::Dimension {
                what: "input width",
                expected: self.config.n_inputs,
                got,
            });
        }
        Ok(())
    }

    /// Output at one point, by direct evaluation of the layer recurrence.
    pub fn forward(&self, params: &NetworkParams, point: &[f64]) -> Result<Vec<f64>> {
        self.check_width(point.len())?;
        let mut h: Vec<f64> = point
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (c, s))| (x - c) * s)
            .collect();
        let last = params.layers.len() - 1;
        for (i, l) in params.layers.iter().enumerate() {
            let (fan_in, fan_out) = l.weights.dim();
            let mut z = l.bias.to_vec();
            for (o, zo) in z.iter_mut().enumerate().take(fan_out) {
                let mut acc = 0.0;
                for (k, hk) in h.iter().enumerate().take(fan_in) {
                    acc += hk * l.weights[[k, o]];
                }
                *zo += acc;
            }
            if i < last {
                z.iter_mut().for_each(|v| *v = self.config.activation.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Outputs for a batch of points (one row per point).
    pub fn forward_batch(&self, params: &NetworkParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let mut h = Array2::from_shape_fn(x.dim(), |(r, a)| (x[[r, a]] - self.shift[a]) * self.scale[a]);
        let last = params.layers.len() - 1;
        for (i, l) in params.layers.iter().enumerate() {
            let mut z = h.dot(&l.weights);
            for mut row in z.rows_mut() {
                row += &l.bias;
            }
            if i < last {
                let act = self.config.activation;
                z.mapv_inplace(|v| act.derivs(v)[0]);
            }
            h = z;
        }
        Ok(h)
    }

    /// Records the network on `tape` for inputs `x` (batch × n_inputs),
    /// propagating the derivative components requested by `layout`.
    /// Returns the output jet block (layout.rows() × n_outputs).
    pub fn record(&self, tape: &mut Tape, pv: &ParamVars, x: ArrayView2<f64>, layout: &JetLayout) -> Result<Var> {
        self.check_width(x.ncols())?;
        if layout.n_inputs != self.config.n_inputs || layout.batch != x.nrows() {
            return Err(Error::config("jet layout does not match network inputs"));
        }
        let mut h = tape.constant(layout.seed(x, &self.shift, &self.scale));
        let last = pv.layers.len() - 1;
        for (i, &(w, b)) in pv.layers.iter().enumerate() {
            let z = tape.matmul(h, w);
            let z = tape.add_bias(z, b, layout.batch);
            h = if i < last {
                tape.jet(z, layout, self.config.activation)
            } else {
                z
            };
        }
        Ok(h)
    }
}

const MAGIC: &[u8; 8] = b"PINNFLOW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A self-describing parameter snapshot.
///
/// Layout (all integers and floats little-endian):
/// `"PINNFLOW"`, `u32` format version, `u32` header length, UTF-8 header of
/// `key=value` lines (network config echo plus free-form metadata), then per
/// layer the weights row-major and the bias as `f64`, then a `u8` flag and,
/// when set, the coefficient as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: MlpConfig,
    pub params: NetworkParams,
    pub meta: BTreeMap<String, String>,
}

fn bounds_to_string(b: &Option<Vec<(f64, f64)>>) -> String {
    match b {
        None => "none".into(),
        Some(v) => v
            .iter()
            .map(|(lo, hi)| format!("{lo:?}:{hi:?}"))
            .collect::<Vec<_>>()
            .join(","),
    }
}

fn bounds_from_str(s: &str) -> Result<Option<Vec<(f64, f64)>>> {
    if s == "none" {
        return Ok(None);
    }
    s.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(format!("bad input bound `{pair}`")))?;
            Ok((parse_f64(lo)?, parse_f64(hi)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::config(format!("bad number `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::config(format!("bad count `{s}`")))
}

impl Checkpoint {
    pub fn new(config: MlpConfig, params: NetworkParams) -> Self {
        Self {
            config,
            params,
            meta: BTreeMap::new(),
        }
    }

    fn header(&self) -> String {
        let c = &self.config;
        let mut h = String::new();
        h.push_str(&format!("n_inputs={}\n", c.n_inputs));
        h.push_str(&format!("hidden_layers={}\n", c.hidden_layers));
        h.push_str(&format!("neurons={}\n", c.neurons));
        h.push_str(&format!("n_outputs={}\n", c.n_outputs));
        h.push_str(&format!("activation={}\n", c.activation.name()));
        h.push_str(&format!("init={}\n", c.init.name()));
        h.push_str(&format!("seed={}\n", c.seed));
        h.push_str(&format!("input_bounds={}\n", bounds_to_string(&c.input_bounds)));
        match c.coefficient_init {
            Some(v) => h.push_str(&format!("coefficient_init={v:?}\n")),
            None => h.push_str("coefficient_init=none\n"),
        }
        for (k, v) in &self.meta {
            h.push_str(&format!("meta.{k}={v}\n"));
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for l in &self.params.layers {
            for w in l.weights.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        match self.params.coefficient {
            Some(c) => {
                out.push(1);
                out.extend_from_slice(&c.to_le_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::config(format!("malformed checkpoint: {m}"));
        let mut cur = Cursor(bytes);
        if cur.take(8).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(cur.take(4).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(cur.take(4).ok_or_else(|| bad("truncated"))?.try_into().unwrap()) as usize;
        let header = std::str::from_utf8(cur.take(hlen).ok_or_else(|| bad("truncated"))?).map_err(|_| bad("header not UTF-8"))?;
        let mut kv = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("header line"))?;
            match k.strip_prefix("meta.") {
                Some(mk) => meta.insert(mk.to_string(), v.to_string()),
                None => kv.insert(k.to_string(), v.to_string()),
            };
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("missing `{k}`")));
        let config = MlpConfig {
            n_inputs: parse_usize(get("n_inputs")?)?,
            hidden_layers: parse_usize(get("hidden_layers")?)?,
            neurons: parse_usize(get("neurons")?)?,
            n_outputs: parse_usize(get("n_outputs")?)?,
            activation: Activation::parse(get("activation")?)?,
            init: InitScheme::parse(get("init")?)?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            input_bounds: bounds_from_str(get("input_bounds")?)?,
            coefficient_init: match get("coefficient_init")?.as_str() {
                "none" => None,
                v => Some(parse_f64(v)?),
            },
        };
        config.validate()?;
        let f64s = |cur: &mut Cursor, n: usize| -> Result<Vec<f64>> {
            let raw = cur.take(8 * n).ok_or_else(|| bad("truncated"))?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut layers = Vec::new();
        for (i, o) in config.layer_shapes() {
            let w = f64s(&mut cur, i * o)?;
            let b = f64s(&mut cur, o)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((i, o), w).unwrap(),
                bias: Array1::from(b),
            });
        }
        let flag = cur.take(1).ok_or_else(|| bad("truncated"))?[0];
        let coefficient = match flag {
            0 => None,
            1 => Some(f64s(&mut cur, 1)?[0]),
            _ => return Err(bad("coefficient flag")),
        };
        if !cur.0.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            config,
            params: NetworkParams {
                layers,
                coefficient,
            },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Writes to any sink; used by callers that manage their own files.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Some(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parameter_count_large_network() {
        let c = MlpConfig::new(3, 10, 100, 3);
        assert_eq!(c.parameter_count(), 91603);
        let net = Mlp::new(c).unwrap();
        assert_eq!(net.init().count(), 91603);
    }

    #[test]
    fn coefficient_adds_one_parameter() {
        let mut c = MlpConfig::new(4, 2, 8, 10);
        c.coefficient_init = Some(0.0);
        let p = Mlp::new(c.clone()).unwrap().init();
        assert_eq!(p.count(), c.parameter_count());
        assert_eq!(p.count(), p.network_count() + 1);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(Mlp::new(MlpConfig::new(3, 0, 10, 3)).is_err());
        assert!(Mlp::new(MlpConfig::new(3, 2, 0, 3)).is_err());
        assert!(Mlp::new(MlpConfig::new(0, 2, 5, 3)).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let mut c = MlpConfig::new(3, 3, 20, 3);
        c.seed = 42;
        let a = Mlp::new(c.clone()).unwrap().init();
        let b = Mlp::new(c.clone()).unwrap().init();
        assert_eq!(a.flatten(), b.flatten());
        c.seed = 43;
        assert_ne!(a.flatten(), Mlp::new(c).unwrap().init().flatten());
    }

    #[test]
    fn xavier_variance() {
        let mut all = Vec::new();
        for seed in 0..10 {
            let mut c = MlpConfig::new(100, 2, 100, 1);
            c.seed = seed;
            let p = Mlp::new(c).unwrap().init();
            all.extend(p.layers[1].weights.iter().copied());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.01).abs() < 0.002, "variance {var}");
    }

    fn single_neuron() -> (Mlp, NetworkParams) {
        let net = Mlp::new(MlpConfig::new(1, 1, 1, 1)).unwrap();
        let params = NetworkParams {
            layers: vec![
                Layer {
                    weights: array![[1.0]],
                    bias: array![0.0],
                },
                Layer {
                    weights: array![[1.0]],
                    bias: array![0.0],
                },
            ],
            coefficient: None,
        };
        (net, params)
    }

    #[test]
    fn forward_examples() {
        let (net, p) = single_neuron();
        assert_eq!(net.forward(&p, &[0.0]).unwrap(), vec![0.0]);
        assert!((net.forward(&p, &[1.0]).unwrap()[0] - 0.761594).abs() < 1e-6);
        assert!(net.forward(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = Mlp::new(MlpConfig::new(3, 2, 7, 3)).unwrap();
        let mut p = net.init();
        let z = vec![0.0; p.count()];
        p.assign_flat(&z).unwrap();
        assert_eq!(net.forward(&p, &[0.3, -2.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn batch_and_pointwise_forward_agree() {
        let mut c = MlpConfig::new(3, 3, 12, 2);
        c.input_bounds = Some(vec![(0.0, 6.0), (-1.0, 1.0), (0.0, 7.0)]);
        let net = Mlp::new(c).unwrap();
        let p = net.init();
        let x = array![[1.0, 0.2, 3.0], [5.5, -0.9, 0.1]];
        let b = net.forward_batch(&p, x.view()).unwrap();
        for r in 0..2 {
            let o = net.forward(&p, x.row(r).as_slice().unwrap()).unwrap();
            for k in 0..2 {
                assert!((o[k] - b[[r, k]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut c = MlpConfig::new(4, 2, 5, 10);
        c.input_bounds = Some(vec![(-1.0, 1.0), (0.1, 0.7), (-3.5, 2.0), (0.0, 10.0)]);
        c.coefficient_init = Some(0.0);
        c.seed = 9;
        let p = Mlp::new(c.clone()).unwrap().init();
        let mut ck = Checkpoint::new(c, p);
        ck.meta.insert("physics".into(), "rans3d_inverse".into());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
