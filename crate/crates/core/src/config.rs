//! INI experiment files.
//!
//! ```ini
//! [run]
//! regime = standard_pinn        ; data_driven | standard_pinn | bc_pinn
//! seed = 1
//! out = runs/tg
//!
//! [physics]
//! equations = ns2d              ; ns2d | rans3d | rans3d_inverse
//! re = 100
//!
//! [network]
//! layers = 4
//! neurons = 50
//!
//! [budget]
//! iterations = 25000
//! learning_rates = 1e-3, 1e-4
//! batch_size = 256
//!
//! [weighting]
//! strategy = adaptive
//!
//! [data]
//! generator = taylor_green      ; or: dir = <generated dataset>, or train_csv = ...
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! Every randomness source derives from `run.seed` through named sub-seeds:
//! `init` (network weights), `batching` (mini-batches), `sampling`
//! (sparse locations and collocation points).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::datagen::{
    collocation_set, load_csv, withhold_pressure, DatasetMeta, DatasetSplit, Generator, GeneratorSpec, Schema,
    TestSet,
};
use crate::diffengine::Activation;
use crate::error::{Error, Result};
use crate::io_util;
use crate::loss::{Strategy, WeightState, RELAXATION_CONSTANTS};
use crate::mlp::{InitScheme, MlpConfig};
use crate::optim::{sub_seed, TrainingBudget};
use crate::physics::{PhysicsRegime, StressModel};
use crate::trainers::{RunConfig, TrainRegime};

const KEYS: &[(&str, &[&str])] = &[
    ("run", &["regime", "seed", "out", "log_every", "dump_gradients"]),
    ("physics", &["equations", "re", "stresses", "coefficient_init"]),
    ("network", &["layers", "neurons", "activation", "init"]),
    ("budget", &["iterations", "learning_rates", "batch_size", "collocation_batch"]),
    ("weighting", &["strategy", "w_pde", "w_data", "alpha", "update_every"]),
    (
        "data",
        &[
            "generator", "dir", "train_csv", "test_csv", "schema", "re", "grid", "n_points", "x_min", "x_max",
            "y_min", "y_max", "z_levels", "t0", "t1", "dt_train", "dt_test", "write_test", "pressure_targets", "collocation_points",
        ],
    ),
    ("segments", &["count"]),
    ("sweep", &["axis", "layers", "neurons", "constants"]),
];

/// Where training and test data come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Manufactured in memory.
    Generate(GeneratorSpec),
    /// A directory written by `generate` (`train.csv`, `meta.txt`, optional `test.csv`).
    Dir(PathBuf),
    /// External CSV files in one of the dataset schemas.
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
        schema: Schema,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Weighting(Vec<f64>),
    Architecture { layers: Vec<usize>, neurons: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run: RunConfig,
    pub data: DataSource,
    pub out_dir: Option<PathBuf>,
    /// `generate` also writes the (large) test grid as CSV.
    pub write_test: bool,
    /// Uniform collocation points added to the data locations; `None` adds
    /// as many as there are training samples.
    pub collocation_points: Option<usize>,
    pub sweep: Option<SweepAxis>,
    /// Every recognized key with its effective value, for run reports.
    pub echo: BTreeMap<String, String>,
}

struct Reader<'a> {
    ini: &'a Ini,
    base: &'a Path,
    echo: BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&mut self, sec: &str, key: &str) -> Option<String> {
        let v = strip_comment(self.ini.get_from(Some(sec), key)?).to_string();
        self.echo.insert(format!("{sec}.{key}"), v.clone());
        Some(v)
    }

    fn bad(sec: &str, key: &str, v: &str, what: &str) -> Error {
        Error::config(format!("[{sec}] {key} = `{v}`: {what}"))
    }

    fn parse<T: std::str::FromStr>(&mut self, sec: &str, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Self::bad(sec, key, &v, what)),
        }
    }

    fn f64_or(&mut self, sec: &str, key: &str, d: f64) -> Result<f64> {
        let v = self.parse::<f64>(sec, key, "expected a number")?.unwrap_or(d);
        if !v.is_finite() {
            return Err(Self::bad(sec, key, &v.to_string(), "must be finite"));
        }
        Ok(v)
    }

    fn usize_or(&mut self, sec: &str, key: &str, d: usize) -> Result<usize> {
        Ok(self.parse(sec, key, "expected a non-negative integer")?.unwrap_or(d))
    }

    fn bool_or(&mut self, sec: &str, key: &str, d: bool) -> Result<bool> {
        match self.raw(sec, key) {
            None => Ok(d),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Self::bad(sec, key, &v, "expected true or false")),
            },
        }
    }

    fn list<T: std::str::FromStr>(&mut self, sec: &str, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Self::bad(sec, key, &v, what)))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Resolves a path key and requires it to exist.
    fn path(&mut self, sec: &str, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(v) => {
                let p = self.base.join(&v);
                if !p.exists() {
                    return Err(Self::bad(sec, key, &v, &format!("path {} does not exist", p.display())));
                }
                Ok(Some(p))
            }
        }
    }

    fn with<T>(&mut self, sec: &str, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(v) => f(&v).map(Some).map_err(|e| Self::bad(sec, key, &v, &e.to_string())),
        }
    }
}

/// Drops a trailing `# ...` or `; ...` comment (preceded by whitespace).
fn strip_comment(v: &str) -> &str {
    let cut = v
        .char_indices()
        .find(|&(i, c)| (c == '#' || c == ';') && v[..i].ends_with(char::is_whitespace))
        .map_or(v.len(), |(i, _)| i);
    v[..cut].trim()
}

fn check_keys(ini: &Ini) -> Result<()> {
    for (sec, props) in ini.iter() {
        let Some(sec) = sec else {
            if let Some((k, _)) = props.iter().next() {
                return Err(Error::config(format!("key `{k}` must be inside a section")));
            }
            continue;
        };
        let allowed = KEYS
            .iter()
            .find(|(s, _)| *s == sec)
            .ok_or_else(|| Error::config(format!("unknown section [{sec}]")))?
            .1;
        for (k, _) in props.iter() {
            if !allowed.contains(&k) {
                return Err(Error::config(format!("unknown key `{k}` in [{sec}]")));
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = io_util::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, seed_override).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            e => e,
        })
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            line: e.line,
            msg: e.msg.to_string(),
        })?;
        check_keys(&ini)?;
        let mut r = Reader {
            ini: &ini,
            base,
            echo: BTreeMap::new(),
        };

        let seed = match seed_override {
            Some(s) => s,
            None => r.parse("run", "seed", "expected a non-negative integer")?.unwrap_or(0),
        };
        let regime = r
            .with("run", "regime", TrainRegime::parse)?
            .unwrap_or(TrainRegime::StandardPinn);
        let out_dir = r.raw("run", "out").map(|v| base.join(v));
        let log_every = r.usize_or("run", "log_every", 100)?;
        let dump_gradients = r.bool_or("run", "dump_gradients", false)?;

        let re = r.f64_or("physics", "re", 100.0)?;
        let stresses = r
            .with("physics", "stresses", StressModel::parse)?
            .unwrap_or(StressModel::Learned);
        let physics = match r.raw("physics", "equations").as_deref().unwrap_or("ns2d") {
            "ns2d" => PhysicsRegime::Ns2d { re },
            "rans3d" => PhysicsRegime::Rans3d { re, stresses },
            "rans3d_inverse" => PhysicsRegime::Rans3dInverse { stresses },
            o => {
                return Err(Reader::bad(
                    "physics",
                    "equations",
                    o,
                    "expected ns2d, rans3d or rans3d_inverse",
                ))
            }
        };
        if !(re > 0.0) {
            return Err(Reader::bad("physics", "re", &re.to_string(), "must be positive"));
        }
        let coefficient_init = if physics.needs_coefficient() {
            Some(r.f64_or("physics", "coefficient_init", 0.0)?)
        } else {
            if r.raw("physics", "coefficient_init").is_some() {
                return Err(Error::config(
                    "[physics] coefficient_init only applies to equations = rans3d_inverse",
                ));
            }
            None
        };

        let mut network = MlpConfig::new(
            physics.n_inputs(),
            r.usize_or("network", "layers", 4)?,
            r.usize_or("network", "neurons", 50)?,
            physics.n_outputs(),
        );
        if let Some(a) = r.with("network", "activation", Activation::parse)? {
            network.activation = a;
        }
        if let Some(i) = r.with("network", "init", InitScheme::parse)? {
            network.init = i;
        }
        network.seed = sub_seed(seed, "init");
        network.coefficient_init = coefficient_init;
        network
            .validate()
            .map_err(|e| Error::config(format!("[network] {e}")))?;

        let budget = TrainingBudget::new(
            r.usize_or("budget", "iterations", 25_000)?,
            r.list("budget", "learning_rates", "expected comma-separated numbers")?
                .unwrap_or_else(|| vec![1e-3, 1e-4]),
            r.usize_or("budget", "batch_size", 256)?,
            sub_seed(seed, "batching"),
        );
        budget
            .validate()
            .map_err(|e| Error::config(format!("[budget] {e}")))?;
        let collocation_batch = r.parse("budget", "collocation_batch", "expected a positive integer")?;

        let strategy = r
            .with("weighting", "strategy", Strategy::parse)?
            .unwrap_or(Strategy::Fixed);
        let d = WeightState::default();
        let weights = WeightState {
            lambda_d: d.lambda_d,
            alpha: r.f64_or("weighting", "alpha", d.alpha)?,
            w_pde: r.f64_or("weighting", "w_pde", d.w_pde)?,
            w_data: r.f64_or("weighting", "w_data", d.w_data)?,
            update_every: r.usize_or("weighting", "update_every", d.update_every)?,
        };
        weights
            .validate()
            .map_err(|e| Error::config(format!("[weighting] {e}")))?;

        let default_segments = if regime == TrainRegime::BcPinn { 7 } else { 1 };
        let n_segments = r.usize_or("segments", "count", default_segments)?;
        if n_segments == 0 {
            return Err(Reader::bad("segments", "count", "0", "must be at least 1"));
        }

        let data = Self::data_source(&mut r, seed)?;
        let write_test = r.bool_or("data", "write_test", false)?;
        let collocation_points = r.parse("data", "collocation_points", "expected a non-negative integer")?;
        let pressure_targets = r.bool_or("data", "pressure_targets", true)?;

        let sweep = match r.raw("sweep", "axis").as_deref() {
            None => None,
            Some("weighting") => Some(SweepAxis::Weighting(
                r.list("sweep", "constants", "expected comma-separated numbers")?
                    .unwrap_or_else(|| RELAXATION_CONSTANTS.to_vec()),
            )),
            Some("architecture") => Some(SweepAxis::Architecture {
                layers: r
                    .list("sweep", "layers", "expected comma-separated integers")?
                    .unwrap_or_else(|| vec![5, 7, 8, 10]),
                neurons: r
                    .list("sweep", "neurons", "expected comma-separated integers")?
                    .unwrap_or_else(|| vec![50, 75, 100]),
            }),
            Some(o) => return Err(Reader::bad("sweep", "axis", o, "expected weighting or architecture")),
        };
        match &sweep {
            Some(SweepAxis::Weighting(c)) if c.is_empty() => {
                return Err(Error::config("[sweep] constants is empty"));
            }
            Some(SweepAxis::Architecture { layers, neurons }) if layers.is_empty() || neurons.is_empty() => {
                return Err(Error::config("[sweep] layers and neurons must both be non-empty"));
            }
            _ => {}
        }

        let mut run = RunConfig::new(regime, physics, network, budget);
        run.weights = weights;
        run.strategy = strategy;
        run.n_segments = n_segments;
        run.collocation_batch = collocation_batch;
        run.pressure_targets = pressure_targets;
        run.log_every = log_every;
        run.dump_gradients = dump_gradients;
        run.validate()?;

        r.echo.insert("run.seed".into(), seed.to_string());
        Ok(Self {
            seed,
            run,
            data,
            out_dir,
            write_test,
            collocation_points,
            sweep,
            echo: r.echo,
        })
    }

    fn data_source(r: &mut Reader, seed: u64) -> Result<DataSource> {
        let dir = r.path("data", "dir")?;
        let train = r.path("data", "train_csv")?;
        let test = r.path("data", "test_csv")?;
        let generator = r.with("data", "generator", Generator::parse)?;
        let n_sources = [dir.is_some(), train.is_some(), generator.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if n_sources > 1 {
            return Err(Error::config("[data] set only one of generator, dir and train_csv"));
        }
        if let Some(d) = dir {
            return Ok(DataSource::Dir(d));
        }
        if let Some(train) = train {
            let schema = r
                .with("data", "schema", Schema::parse)?
                .ok_or_else(|| Error::config("[data] schema is required with train_csv (flow2d or flow3d)"))?;
            return Ok(DataSource::Csv { train, test, schema });
        }
        if test.is_some() {
            return Err(Error::config("[data] test_csv needs train_csv"));
        }
        let g = generator.unwrap_or(Generator::TaylorGreen);
        let mut spec = match g {
            Generator::TaylorGreen => GeneratorSpec::taylor_green_default(seed),
            Generator::Beltrami => GeneratorSpec::beltrami_default(seed),
        };
        spec.re = r.f64_or("data", "re", spec.re)?;
        spec.grid = r.usize_or("data", "grid", spec.grid)?;
        spec.n_points = r.usize_or("data", "n_points", spec.n_points)?;
        spec.x = (r.f64_or("data", "x_min", spec.x.0)?, r.f64_or("data", "x_max", spec.x.1)?);
        spec.y = (r.f64_or("data", "y_min", spec.y.0)?, r.f64_or("data", "y_max", spec.y.1)?);
        if let Some(z) = r.list("data", "z_levels", "expected comma-separated numbers")? {
            spec.z_levels = z;
        }
        spec.t0 = r.f64_or("data", "t0", spec.t0)?;
        spec.t1 = r.f64_or("data", "t1", spec.t1)?;
        spec.dt_train = r.f64_or("data", "dt_train", spec.dt_train)?;
        spec.dt_test = r.f64_or("data", "dt_test", spec.dt_test)?;
        spec.validate().map_err(|e| Error::config(format!("[data] {e}")))?;
        Ok(DataSource::Generate(spec))
    }

    /// Materializes the dataset. Physics-informed regimes never see pressure.
    pub fn load_data(&self) -> Result<DatasetSplit> {
        let mut d = load_source(&self.data)?;
        if d.collocation.is_empty() {
            let n = self.collocation_points.unwrap_or(d.train.len());
            d.collocation = collocation_set(&d.train, n, sub_seed(self.seed, "sampling.collocation"));
        }
        if self.run.regime != TrainRegime::DataDriven {
            d.train = withhold_pressure(&d.train);
        }
        let want = if self.run.physics.is_3d() { Schema::Flow3d } else { Schema::Flow2d };
        if d.schema != want {
            return Err(Error::config(format!(
                "dataset schema {} does not match physics {}",
                d.schema.name(),
                self.run.physics.name()
            )));
        }
        Ok(d)
    }
}

/// Reads or generates the split described by `src` (no collocation points).
pub fn load_source(src: &DataSource) -> Result<DatasetSplit> {
    match src {
        DataSource::Generate(spec) => spec.generate(),
        DataSource::Dir(dir) => load_dataset_dir(dir),
        DataSource::Csv { train, test, schema } => Ok(DatasetSplit {
            schema: *schema,
            train: load_csv(train, *schema)?,
            test: TestSet::Samples(match test {
                Some(t) => load_csv(t, *schema)?,
                None => Vec::new(),
            }),
            collocation: Vec::new(),
            meta: DatasetMeta::default(),
        }),
    }
}

/// Loads a dataset directory written by `generate`. Without `test.csv` the
/// test grid is regenerated from the metadata.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetSplit> {
    let meta = DatasetMeta::from_text(&io_util::read_to_string(&dir.join("meta.txt"))?)?;
    let schema = Schema::parse(meta.require("schema")?)?;
    let train = load_csv(&dir.join("train.csv"), schema)?;
    let test_path = dir.join("test.csv");
    let test = if test_path.exists() {
        TestSet::Samples(load_csv(&test_path, schema)?)
    } else {
        let spec = GeneratorSpec::from_meta(&meta)?;
        let times = crate::datagen::split_train_test(spec.t0, spec.t1, spec.dt_train, spec.dt_test)?;
        TestSet::Grid {
            generator: spec.generator,
            re: spec.re,
            points: spec.full_grid(),
            times: times.test,
        }
    };
    Ok(DatasetSplit {
        schema,
        train,
        test,
        collocation: Vec::new(),
        meta,
    })
}
