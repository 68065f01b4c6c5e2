//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pinnflow::cli::{self, CommonArgs, SweepArgs};
use pinnflow::config::ExperimentConfig;
use pinnflow::datagen::{
    beltrami_state_fd, samples_to_csv, split_train_test, taylor_green_state, GeneratorSpec,
};
use pinnflow::diffengine::{grad_params, input_derivatives_batch, Activation, JetLayout, Tape};
use pinnflow::eval::{evaluate, EvalReport};
use pinnflow::mlp::{Checkpoint, Mlp, MlpConfig, NetworkParams};
use pinnflow::physics::{
    collocation_residuals, ns2d_residuals, rans3d_residuals, residuals_on_tape, PhysicsRegime, StressModel,
};
use pinnflow::trainers::{segment_boundaries, train, TrainOutcome};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Concatenates INI fragments; later keys override earlier ones and each
/// section appears once.
fn ini(parts: &[&str]) -> String {
    let mut secs: Vec<(String, Vec<(String, String)>)> = Vec::new();
    let mut cur = String::new();
    for line in parts.iter().flat_map(|p| p.lines()) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            cur = name.to_string();
            if !secs.iter().any(|s| s.0 == cur) {
                secs.push((cur.clone(), Vec::new()));
            }
            continue;
        }
        let (k, v) = line.split_once('=').expect("key = value");
        let sec = &mut secs.iter_mut().find(|s| s.0 == cur).expect("key before section").1;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        match sec.iter_mut().find(|e| e.0 == k) {
            Some(e) => e.1 = v,
            None => sec.push((k, v)),
        }
    }
    let mut out = String::new();
    for (name, kv) in secs {
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

fn parse_config(parts: &[&str]) -> Result<ExperimentConfig, String> {
    ExperimentConfig::parse(&ini(parts), Path::new("."), None).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

// fourth-order central differences
fn d1(f: &mut impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn d2(f: &mut impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h * h)
}

#[derive(Default)]
struct Worst {
    rel: f64,
    abs: f64,
    failures: usize,
    what: String,
}

impl Worst {
    /// Relative error against `b`, passing anything within the 1e-8 absolute floor.
    fn see(&mut self, a: f64, b: f64, what: impl FnOnce() -> String) {
        let d = (a - b).abs();
        self.abs = self.abs.max(d);
        let r = if b == 0.0 { 0.0 } else { d / b.abs() };
        if d > 1e-8 && r >= 1e-4 {
            self.failures += 1;
            if self.what.is_empty() {
                self.what = what();
            }
        }
        if d > 1e-8 || b.abs() > 1e-8 {
            self.rel = self.rel.max(r);
        }
    }
}

/// Data misfit plus residual mean squares, evaluated without the tape.
fn plain_loss(net: &Mlp, params: &NetworkParams, x: &[Vec<f64>], y: &Array2<f64>, regime: &PhysicsRegime) -> f64 {
    let mut data = 0.0;
    for (r, p) in x.iter().enumerate() {
        let o = net.forward(params, p).unwrap();
        for (c, v) in o.iter().enumerate() {
            data += (v - y[[r, c]]).powi(2);
        }
    }
    data /= y.len() as f64;
    let res = collocation_residuals(net, params, x, regime).unwrap();
    let k = res[0].components().len();
    let pde: f64 = (0..k)
        .map(|i| res.iter().map(|b| b.components()[i].powi(2)).sum::<f64>() / x.len() as f64)
        .sum();
    data + pde
}

fn taped_gradient(
    net: &Mlp,
    params: &NetworkParams,
    x: &[Vec<f64>],
    y: &Array2<f64>,
    regime: &PhysicsRegime,
) -> Vec<f64> {
    let n_in = x[0].len();
    let xm = Array2::from_shape_fn((x.len(), n_in), |(r, c)| x[r][c]);
    let mut tape = Tape::new();
    let pv = params.variables(&mut tape);
    let vl = JetLayout::values_only(x.len(), n_in);
    let out = net.record(&mut tape, &pv, xm.view(), &vl).unwrap();
    let target = tape.constant(y.clone());
    let diff = tape.sub(out, target);
    let mut terms = vec![tape.mean_square(diff)];
    let layout = regime.layout(x.len());
    let jet = net.record(&mut tape, &pv, xm.view(), &layout).unwrap();
    let res = residuals_on_tape(&mut tape, jet, &layout, regime, &pv).unwrap();
    for r in res.components() {
        terms.push(tape.mean_square(r));
    }
    let loss = tape.sum(&terms);
    grad_params(&tape, loss, &pv.leaves()).unwrap()
}

fn derivative_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = Worst::default();
    let (mut n_param, mut n_input) = (0usize, 0usize);
    for trial in 0..50 {
        let three_d = trial % 2 == 1;
        let regime = if three_d {
            PhysicsRegime::Rans3dInverse {
                stresses: if trial % 4 == 1 { StressModel::Zero } else { StressModel::Learned },
            }
        } else {
            PhysicsRegime::Ns2d {
                re: rng.random_range(1.0..200.0),
            }
        };
        let mut cfg = MlpConfig::new(
            regime.n_inputs(),
            rng.random_range(1..=3),
            rng.random_range(2..=20),
            regime.n_outputs(),
        );
        cfg.seed = rng.random();
        if trial % 3 == 2 {
            cfg.activation = Activation::Sin;
        }
        if three_d {
            cfg.coefficient_init = Some(rng.random_range(-0.5..0.5));
        }
        if trial % 5 == 0 {
            cfg.input_bounds = Some(
                (0..regime.n_inputs())
                    .map(|_| {
                        let lo = rng.random_range(-3.0..0.0);
                        (lo, lo + rng.random_range(0.5..8.0))
                    })
                    .collect(),
            );
        }
        let net = Mlp::new(cfg.clone()).map_err(|e| e.to_string())?;
        let params = net.init();
        let b = 3;
        let x: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..cfg.n_inputs).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = Array2::from_shape_fn((b, cfg.n_outputs), |_| rng.random_range(-1.0..1.0));

        // input derivatives
        let bundles = input_derivatives_batch(&net, &params, &x).map_err(|e| e.to_string())?;
        for (r, bun) in bundles.iter().enumerate() {
            for a in 0..cfg.n_inputs {
                for k in 0..cfg.n_outputs {
                    let mut f = |s: f64| {
                        let mut p = x[r].clone();
                        p[a] = s;
                        net.forward(&params, &p).unwrap()[k]
                    };
                    let fd1 = d1(&mut f, x[r][a], 1e-3);
                    let fd2 = d2(&mut f, x[r][a], 1e-3);
                    worst.see(bun.first[k][a], fd1, || format!("net {trial} d/dx{a} out {k}"));
                    worst.see(bun.second[k][a], fd2, || format!("net {trial} d2/dx{a}2 out {k}"));
                    n_input += 2;
                }
            }
        }

        // parameter gradient of a physics-informed loss, coefficient included
        let g = taped_gradient(&net, &params, &x, &y, &regime);
        let theta = params.flatten();
        for (i, &gi) in g.iter().enumerate() {
            let mut f = |s: f64| {
                let mut th = theta.clone();
                th[i] = s;
                let mut p = params.clone();
                p.assign_flat(&th).unwrap();
                plain_loss(&net, &p, &x, &y, &regime)
            };
            let fd = d1(&mut f, theta[i], 1e-4);
            worst.see(gi, fd, || format!("net {trial} parameter {i}"));
            n_param += 1;
        }
    }
    check(
        worst.failures == 0,
        format!("{} mismatches, first at {}", worst.failures, worst.what),
    )?;
    Ok(format!(
        "50 networks, {n_param} parameter and {n_input} input derivatives; \
         max relative error {:.1e} (entries above 1e-8), max absolute error {:.1e}",
        worst.rel, worst.abs
    ))
}

// ---------------------------------------------------------------- 2

fn residual_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tau = std::f64::consts::TAU;
    let mut tg = 0.0f64;
    for _ in 0..1000 {
        let (x, y, t) = (
            rng.random_range(0.0..tau),
            rng.random_range(0.0..tau),
            rng.random_range(0.0..7.0),
        );
        let r = ns2d_residuals(&taylor_green_state(x, y, t, 100.0), 100.0).map_err(|e| e.to_string())?;
        tg = tg.max(r.max_abs());
    }
    let mut bel = 0.0f64;
    for _ in 0..1000 {
        let c: [f64; 4] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..5.0),
        ];
        let r = rans3d_residuals(&beltrami_state_fd(c[0], c[1], c[2], c[3], 10.0), 0.1);
        bel = bel.max(r.max_abs());
    }
    check(tg < 1e-10, format!("Taylor-Green max |e| = {tg:.2e}"))?;
    check(bel < 1e-5, format!("Beltrami max |e| = {bel:.2e}"))?;
    Ok(format!("Taylor-Green max |e| {tg:.2e}; Beltrami (differenced) max |e| {bel:.2e}"))
}

// ---------------------------------------------------------------- 3, 4

const TG_RUN: &str = "\
[run]
seed = 1
log_every = 1000
[physics]
equations = ns2d
re = 100
[network]
layers = 4
neurons = 50
[budget]
iterations = 25000
learning_rates = 1e-3, 3e-4, 1e-4
batch_size = 256
collocation_batch = 256
[data]
generator = taylor_green
";

struct Trained {
    report: EvalReport,
    secs: f64,
}

fn train_tg(extra: &str) -> Result<Trained, String> {
    let cfg = parse_config(&[TG_RUN, extra])?;
    let data = cfg.load_data().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let out = train(&cfg.run, &data).map_err(|e| e.to_string())?;
    let report = evaluate(&out.net, &out.params, &data.test, data.schema).map_err(|e| e.to_string())?;
    Ok(Trained {
        report,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn pinn_run() -> &'static Result<Trained, String> {
    static RUN: OnceLock<Result<Trained, String>> = OnceLock::new();
    RUN.get_or_init(|| train_tg("[run]\nregime = standard_pinn\n[weighting]\nstrategy = adaptive\n"))
}

fn err(r: &EvalReport, f: &str) -> f64 {
    r.field(f).map_or(f64::NAN, |e| e.arelative_l2)
}

fn sparse_reconstruction() -> Outcome {
    let run = pinn_run().as_ref().map_err(Clone::clone)?;
    let r = &run.report;
    let (u, v, pa) = (err(r, "u"), err(r, "v"), err(r, "p_aligned"));
    let summary = format!(
        "u {u:.3e}, v {v:.3e}, aligned p {pa:.3e} over {} test steps in {:.0}s",
        r.times.len(),
        run.secs
    );
    check(r.times.len() == 630, format!("{} test steps", r.times.len()))?;
    check(u < 5e-2 && v < 5e-2 && pa < 1.5e-1, summary.clone())?;
    check(run.secs <= 1800.0, format!("took {:.0}s", run.secs))?;
    Ok(summary)
}

fn pinn_beats_baseline() -> Outcome {
    let pinn = pinn_run().as_ref().map_err(Clone::clone)?;
    let blind = train_tg("[run]\nregime = data_driven\n[data]\npressure_targets = false\n")?;
    let full = train_tg("[run]\nregime = data_driven\n")?;
    let pinn_pa = err(&pinn.report, "p_aligned");
    let blind_p = err(&blind.report, "p");
    let blind_pa = err(&blind.report, "p_aligned");
    let pinn_v = pinn.report.velocity_arelative();
    let full_v = full.report.velocity_arelative();
    let summary = format!(
        "PINN aligned p {pinn_pa:.3e} vs pressure-blind baseline p {blind_p:.3e} (aligned {blind_pa:.3e}); \
         velocity PINN {pinn_v:.3e} vs pressure-trained baseline {full_v:.3e}"
    );
    check(pinn_pa < blind_p && pinn_pa < blind_pa, summary.clone())?;
    check(pinn_v <= 2.0 * full_v, summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 5

fn small_tg(seed: u64) -> String {
    format!(
        "[run]\nseed = {seed}\n[physics]\nre = 100\n[network]\nlayers = 2\nneurons = 12\n\
         [data]\ngenerator = taylor_green\ngrid = 24\nn_points = 20\nt0 = 0\nt1 = 7\ndt_train = 0.5\ndt_test = 0.25\n"
    )
}

fn small_run(extra: &str) -> Result<(ExperimentConfig, TrainOutcome), String> {
    let cfg = parse_config(&[&small_tg(3), extra])?;
    let data = cfg.load_data().map_err(|e| e.to_string())?;
    let out = train(&cfg.run, &data).map_err(|e| e.to_string())?;
    Ok((cfg, out))
}

fn adaptive_oracle() -> Outcome {
    let (_, out) = small_run(
        "[run]\nregime = standard_pinn\ndump_gradients = true\n\
         [budget]\niterations = 300\nbatch_size = 32\ncollocation_batch = 32\n\
         [weighting]\nstrategy = adaptive\nalpha = 0.9\nupdate_every = 10\n",
    )?;
    let rep = &out.report;
    check(rep.weight_trajectory.len() == 30, format!("{} updates", rep.weight_trajectory.len()))?;
    check(
        rep.gradient_dumps.len() == rep.weight_trajectory.len(),
        "dump count differs from update count",
    )?;
    let mut worst_hat = 0.0f64;
    let mut worst_d = 0.0f64;
    let mut lambda = 1.0;
    for (w, g) in rep.weight_trajectory.iter().zip(&rep.gradient_dumps) {
        check(w.iteration == g.iteration, "dump and update iterations differ")?;
        let max = g.grad_pde.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mean = g.grad_data.iter().map(|x| x.abs()).sum::<f64>() / g.grad_data.len() as f64;
        let hat = max / mean;
        worst_hat = worst_hat.max(((w.lambda_hat - hat) / hat).abs());
        lambda = 0.1 * lambda + 0.9 * hat;
        worst_d = worst_d.max(((w.lambda_d - lambda) / lambda).abs());
    }
    check(worst_hat <= 1e-12, format!("lambda_hat relative error {worst_hat:.2e}"))?;
    check(worst_d <= 1e-12, format!("lambda_d relative error {worst_d:.2e}"))?;
    Ok(format!(
        "{} updates; max relative error lambda_hat {worst_hat:.1e}, lambda_d {worst_d:.1e}",
        rep.weight_trajectory.len()
    ))
}

// ---------------------------------------------------------------- 6

fn bc_pinn_structure() -> Outcome {
    let common = "[budget]\niterations = 120\nbatch_size = 32\ncollocation_batch = 32\n\
                  [run]\nlog_every = 1\n[weighting]\nstrategy = adaptive\n";
    let (_, std_run) = small_run(&ini(&[common, "[run]\nregime = standard_pinn\n"]))?;
    let (_, bc1) = small_run(&ini(&[common, "[run]\nregime = bc_pinn\n[segments]\ncount = 1\n"]))?;
    let a: Vec<u64> = std_run.report.loss_history.iter().map(|r| r.loss.total.to_bits()).collect();
    let b: Vec<u64> = bc1.report.loss_history.iter().map(|r| r.loss.total.to_bits()).collect();
    check(a.len() == 120 && a == b, "n_segments = 1 trajectory differs from standard PINN")?;
    check(
        std_run.params.flatten().iter().map(|x| x.to_bits()).eq(bc1.params.flatten().iter().map(|x| x.to_bits())),
        "final parameters differ",
    )?;

    let bounds = segment_boundaries(0.0, 7.0, 7);
    check(
        bounds == (0..=7).map(f64::from).collect::<Vec<_>>(),
        format!("boundaries {bounds:?}"),
    )?;

    let (_, bc7) = small_run(&ini(&[common, "[run]\nregime = bc_pinn\n[segments]\ncount = 7\n"]))?;
    let segs: Vec<_> = bc7.report.segments.iter().map(|s| (s.t_start, s.t_end)).collect();
    check(
        segs == (0..7).map(|k| (f64::from(k), f64::from(k + 1))).collect::<Vec<_>>(),
        format!("segments {segs:?}"),
    )?;
    let first = bc7
        .report
        .loss_history
        .iter()
        .find(|r| r.segment == 1)
        .ok_or("no record for segment 2")?;
    check(
        first.loss.prevdata == Some(0.0),
        format!("prevdata at start of segment 2 = {:?}", first.loss.prevdata),
    )?;
    Ok(format!(
        "n=1 matches standard PINN bitwise over {} iterations; boundaries 0..7; prevdata {:?} at iteration {}",
        a.len(),
        first.loss.prevdata.unwrap_or(f64::NAN),
        first.iteration
    ))
}

// ---------------------------------------------------------------- 7

const INVERSE_RUN: &str = "\
[run]
regime = standard_pinn
seed = 1
log_every = 1000
[physics]
equations = rans3d_inverse
stresses = zero
coefficient_init = 0
[network]
layers = 4
neurons = 50
[budget]
iterations = 50000
learning_rates = 1e-3, 3e-4, 1e-4
batch_size = 256
collocation_batch = 256
[weighting]
strategy = fixed
[data]
generator = beltrami
re = 10
";

fn inverse_recovery() -> Outcome {
    let cfg = parse_config(&[INVERSE_RUN])?;
    check(cfg.run.budget.total_iterations <= 50_000, "budget above 5e4")?;
    let data = cfg.load_data().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let out = train(&cfg.run, &data).map_err(|e| e.to_string())?;
    let traj = &out.report.lambda_trajectory;
    let fin = out.params.coefficient.ok_or("no coefficient")?;
    let q = &traj[traj.len() * 3 / 4..];
    let dev = q.iter().map(|(_, l)| (l - fin).abs()).fold(0.0f64, f64::max);
    let summary = format!(
        "lambda {fin:.5} (target 0.1) after {} iterations in {:.0}s; final-quartile max deviation {:.1}%",
        out.report.iterations,
        t.elapsed().as_secs_f64(),
        100.0 * dev / fin.abs()
    );
    check((fin - 0.1).abs() < 0.01, format!("not within 10% of 0.1: {summary}"))?;
    check(dev < 0.1 * fin.abs(), format!("final quartile unstable: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn table(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn protocol_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = "[run]\nregime = standard_pinn\n[network]\nlayers = 2\nneurons = 8\n\
                [budget]\niterations = 2\nbatch_size = 16\n\
                [data]\ngenerator = taylor_green\ngrid = 10\nn_points = 8\nt0 = 0\nt1 = 1\ndt_train = 0.5\ndt_test = 0.25\n";
    let sweep = |name: &str, axis: &str| -> Result<Vec<Vec<String>>, String> {
        let cfg = dir.path().join(format!("{name}.ini"));
        std::fs::write(&cfg, ini(&[base, &format!("[sweep]\naxis = {axis}\n")])).map_err(|e| e.to_string())?;
        let out = dir.path().join(name);
        cli::cmd_sweep(&SweepArgs {
            common: CommonArgs {
                config: cfg,
                seed: None,
                out: Some(out.clone()),
            },
            workers: 1,
        })
        .map_err(|e| e.to_string())?;
        table(&out.join("sweep.csv"))
    };

    let w = sweep("weighting", "weighting")?;
    let consts: Vec<f64> = w.iter().map(|r| r[2].parse().unwrap_or(f64::NAN)).collect();
    check(consts == [1.0, 0.1, 0.01, 0.001, 0.0001], format!("weighting rows {consts:?}"))?;
    check(w.iter().all(|r| r.last().is_some_and(String::is_empty)), "a weighting row failed")?;

    let g = sweep("grid", "architecture")?;
    let shapes: Vec<(String, String)> = g.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let want: Vec<(String, String)> = [5, 7, 8, 10]
        .iter()
        .flat_map(|l| [50, 75, 100].iter().map(move |n| (l.to_string(), n.to_string())))
        .collect();
    check(shapes == want, format!("architecture rows {shapes:?}"))?;
    check(g.iter().all(|r| r.last().is_some_and(String::is_empty)), "an architecture row failed")?;

    let s = split_train_test(0.0, 7.0, 0.1, 0.01).map_err(|e| e.to_string())?;
    check(
        s.train.len() == 70 && s.test.len() == 630,
        format!("{} train / {} test steps", s.train.len(), s.test.len()),
    )?;
    Ok(format!(
        "{} weighting rows, {} architecture rows, {} train / {} test steps",
        w.len(),
        g.len(),
        s.train.len(),
        s.test.len()
    ))
}

// ---------------------------------------------------------------- 9

fn determinism() -> Outcome {
    let extra = "[run]\nregime = standard_pinn\n[budget]\niterations = 60\nbatch_size = 32\n\
                 [weighting]\nstrategy = adaptive\n";
    let (_, a) = small_run(extra)?;
    let (_, b) = small_run(extra)?;
    let ba = a.checkpoint().to_bytes();
    check(ba == b.checkpoint().to_bytes(), "same seed gave different checkpoints")?;
    let (_, c) = small_run(&ini(&[extra, "[run]\nseed = 4\n"]))?;
    check(ba != c.checkpoint().to_bytes(), "different seeds gave the same checkpoint")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.bin");
    a.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    check(back.to_bytes() == ba, "checkpoint bytes changed on round trip")?;
    check(
        back.params.flatten().iter().map(|x| x.to_bits()).eq(a.params.flatten().iter().map(|x| x.to_bits())),
        "parameters changed on round trip",
    )?;
    check(back.config == *a.net.config(), "config changed on round trip")?;

    let mut files = 0;
    for spec in [GeneratorSpec::taylor_green_default(9), GeneratorSpec::beltrami_default(9)] {
        let x = spec.generate().map_err(|e| e.to_string())?;
        let y = spec.generate().map_err(|e| e.to_string())?;
        let cx = samples_to_csv(x.schema, &x.train).map_err(|e| e.to_string())?;
        let cy = samples_to_csv(y.schema, &y.train).map_err(|e| e.to_string())?;
        check(cx == cy, "generated CSV differs between runs")?;
        check(x.meta.to_text() == y.meta.to_text(), "metadata differs between runs")?;
        files += 1;
    }
    let gen = dir.path().join("gen.ini");
    std::fs::write(&gen, ini(&[&small_tg(5), "[data]\nwrite_test = true\n"])).map_err(|e| e.to_string())?;
    for out in ["g1", "g2"] {
        cli::cmd_generate(&CommonArgs {
            config: gen.clone(),
            seed: None,
            out: Some(dir.path().join(out)),
        })
        .map_err(|e| e.to_string())?;
    }
    for f in ["train.csv", "test.csv", "meta.txt"] {
        let x = std::fs::read(dir.path().join("g1").join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(dir.path().join("g2").join(f)).map_err(|e| e.to_string())?;
        check(x == y, format!("{f} differs between generate runs"))?;
        files += 1;
    }
    Ok(format!(
        "checkpoints bit-identical ({} bytes) and round-trip exact; {files} regenerated datasets/files byte-identical",
        ba.len()
    ))
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "derivative correctness", derivative_correctness),
        (2, "residual oracle", residual_oracle),
        (3, "sparse reconstruction", sparse_reconstruction),
        (4, "PINN vs data-driven pressure", pinn_beats_baseline),
        (5, "adaptive weighting oracle", adaptive_oracle),
        (6, "BC-PINN degeneracy and structure", bc_pinn_structure),
        (7, "inverse coefficient recovery", inverse_recovery),
        (8, "protocol fidelity", protocol_fidelity),
        (9, "determinism and persistence", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    // `cargo test <filter>` passes the filter through; run only when it names this suite
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("PASS criterion {n} ({name}): {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {msg} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
