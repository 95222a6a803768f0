//! Command-line front end. Every command writes its artifacts and a
//! `result.json` under the output directory and prints the same JSON.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::arrangements::{enumerate_arrangements, ArrangementSet};
use crate::baseline::{classify_runs, seed_sweep, tail_loss_std, LossRecord, RunClass, SweepSetup};
use crate::duality::{check_feasible, ActivationKind, DualConstraint};
use crate::error::{Error, Result};
use crate::games::solve_game;
use crate::numerics::{svd, DataMatrix};
use crate::procogan::{
    beta_schedule, histogram_match, load_manifest, run_pipeline, synthetic_blobs, write_image, PipelineConfig, Resolution,
};
use crate::rng::gaussian_matrix;
use crate::solvers::{generator_recovery, solve_1d_relu_program, svt_generator, GeneratorModel, OrthogonalChoice, Regularizer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "convex-wgan", version, about = "Convex WGAN solvers and experiments")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "CONVEX_WGAN_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "./out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-layer ReLU program on one-dimensional data, with generator recovery.
    Toy1d {
        /// Comma-separated real samples.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long)]
        beta: f64,
        /// `squared`, `l1` or `lp:P`.
        #[arg(long, default_value = "squared")]
        reg: String,
        #[arg(long, default_value_t = 1.0)]
        reg_weight: f64,
    },
    /// Singular value thresholding generator for a quadratic discriminator.
    Svt {
        #[arg(long)]
        x_file: PathBuf,
        #[arg(long)]
        beta: f64,
        /// `identity` or `u-aligned`.
        #[arg(long, default_value = "identity")]
        orientation: String,
    },
    /// Progressive pipeline of closed-form stages.
    Procogan {
        #[arg(long)]
        config: PathBuf,
        /// JSON list of PGM/PPM paths.
        #[arg(long)]
        data: PathBuf,
        /// Number of sample images to export.
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// Gradient descent-ascent seed sweep on one-dimensional data.
    Gda {
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        /// JSON sweep setup; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Feasibility certificate for a generated batch.
    Verify {
        #[arg(long)]
        x_file: PathBuf,
        #[arg(long)]
        g_file: PathBuf,
        /// `linear`, `quadratic`, `relu` or `poly:A,B,C`.
        #[arg(long)]
        activation: String,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        norm_constrained: bool,
        #[arg(long)]
        skip_connection: bool,
    },
    /// Primal-dual game between a ReLU discriminator and a linear generator.
    Game {
        #[arg(long)]
        x_file: PathBuf,
        #[arg(long)]
        z_file: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,1")]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 0.9)]
        step: f64,
        #[arg(long, default_value_t = 1.0)]
        reg_weight: f64,
    },
    /// Synthetic blob images plus a manifest and a matching pipeline config.
    Blobs {
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Final image side length (a power of two).
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Pipeline stages in the suggested config.
        #[arg(long, default_value_t = 3)]
        stages: usize,
        /// Directions kept per stage in the suggested config.
        #[arg(long, default_value_t = 3)]
        keep: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub command: String,
    pub config: Value,
    pub metrics: BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl ExperimentResult {
    fn new(command: &str, config: Value) -> Self {
        ExperimentResult {
            command: command.to_string(),
            config,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    fn metric(&mut self, key: &str, v: impl Into<Value>) {
        self.metrics.insert(key.to_string(), v.into());
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_IO,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Reads a matrix written as `# rows cols` followed by comma-separated rows.
pub fn read_matrix(path: &Path) -> Result<DataMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix(&text).map_err(|e| io_err(path, e))
}

pub fn parse_matrix(text: &str) -> std::result::Result<DataMatrix, String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or("empty matrix file")?;
    let dims: Vec<usize> = header
        .strip_prefix('#')
        .ok_or("missing `# rows cols` header")?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("bad header: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err("header must hold two integers".into());
    };
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for line in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("row {seen}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if row.len() != cols {
            return Err(format!("row {seen} has {} entries, expected {cols}", row.len()));
        }
        values.extend(row);
        seen += 1;
    }
    if seen != rows {
        return Err(format!("found {seen} rows, expected {rows}"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn format_matrix(m: &DataMatrix) -> String {
    let mut s = format!("# {} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.display().to_string());
        p
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, content).map_err(|e| io_err(&p, e))
    }

    fn matrix(&mut self, name: &str, m: &DataMatrix) -> Result<()> {
        self.text(name, &format_matrix(m))
    }
}

fn parse_regularizer(spec: &str, weight: f64) -> Result<Regularizer> {
    match spec {
        "squared" => Ok(Regularizer::squared_frobenius(weight)),
        "l1" => Regularizer::lp(1.0, weight),
        s => {
            let p = s
                .strip_prefix("lp:")
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| Error::invalid(format!("unknown regularizer `{s}`")))?;
            Regularizer::lp(p, weight)
        }
    }
}

fn parse_activation(spec: &str) -> Result<ActivationKind> {
    match spec {
        "linear" => Ok(ActivationKind::Linear),
        "quadratic" => Ok(ActivationKind::Quadratic),
        "relu" => Ok(ActivationKind::ReLU),
        s => {
            let coeffs: Vec<f64> = s
                .strip_prefix("poly:")
                .ok_or_else(|| Error::invalid(format!("unknown activation `{s}`")))?
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad coefficient: {e}"))))
                .collect::<Result<_>>()?;
            match coeffs[..] {
                [a, b, c] => Ok(ActivationKind::Polynomial { a, b, c }),
                _ => Err(Error::invalid("polynomial activation needs three coefficients")),
            }
        }
    }
}

fn column_of(values: &[f64]) -> DataMatrix {
    DMatrix::from_column_slice(values.len(), 1, values)
}

/// Points where rays from the data point `x` leave the feasible polygon of
/// a two-sample program.
fn polytope_boundary(x: &[f64], sys: &crate::solvers::AbsConstraintSystem, rays: usize) -> String {
    let mut s = String::from("w1,w2\n");
    for k in 0..rays {
        let th = 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
        let d = [th.cos(), th.sin()];
        let mut t_max = 10.0_f64;
        for r in &sys.rows {
            let base = r.coeffs[0] * x[0] + r.coeffs[1] * x[1] + r.offset;
            let slope = r.coeffs[0] * d[0] + r.coeffs[1] * d[1];
            if slope.abs() > 1e-15 {
                let lim = if slope > 0.0 {
                    (sys.bound - base) / slope
                } else {
                    (-sys.bound - base) / slope
                };
                t_max = t_max.min(lim);
            }
        }
        let _ = writeln!(s, "{},{}", x[0] + t_max * d[0], x[1] + t_max * d[1]);
    }
    s
}

pub fn cmd_toy1d(x: &[f64], beta: f64, reg: &str, reg_weight: f64, seed: u64, out_dir: &Path) -> Result<ExperimentResult> {
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid("toy1d needs at least two distinct samples"));
    }
    let regularizer = parse_regularizer(reg, reg_weight)?;
    let mut res = ExperimentResult::new(
        "toy1d",
        json!({"x": x, "beta_d": beta, "reg": reg, "reg_weight": reg_weight, "seed": seed}),
    );
    let sol = solve_1d_relu_program(x, beta, &regularizer, 1e-9)?;
    let w: Vec<f64> = sol.w.iter().copied().collect();
    let spread = w.iter().copied().fold(f64::NEG_INFINITY, f64::max) - w.iter().copied().fold(f64::INFINITY, f64::min);

    let n = w.len();
    let z = gaussian_matrix(n, 1, seed);
    let arr: ArrangementSet = enumerate_arrangements(&z, true, 16 * n)?;
    let recovery = generator_recovery(&z, &column_of(&w), &arr, 1e-6)?;

    let mut out = Outputs::new(out_dir)?;
    out.matrix("w_star.csv", &column_of(&w))?;
    out.matrix("sorted_x.csv", &column_of(&sol.sorted_x))?;
    out.matrix("latent.csv", &z)?;
    if let GeneratorModel::TwoLayerReLU { w1, w2, bias } = &recovery.model {
        out.matrix("recovered_w1.csv", w1)?;
        out.matrix("recovered_w2.csv", w2)?;
        if let Some(b) = bias {
            out.matrix("recovered_bias.csv", &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        }
    }
    let mut rows = String::from("coefficients,offset,bound\n");
    for r in &sol.system.rows {
        let c: Vec<String> = r.coeffs.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(rows, "{},{},{}", c.join(" "), r.offset, sol.system.bound);
    }
    out.text("constraints.csv", &rows)?;
    if n == 2 {
        out.text("polytope.csv", &polytope_boundary(&sol.sorted_x, &sol.system, 360))?;
    }

    res.metric("w_star", w.clone());
    res.metric("objective", sol.solution.objective);
    res.metric("max_violation", sol.solution.max_violation);
    res.metric("kkt_residual", sol.solution.kkt_residual);
    res.metric("mode_collapse", spread < 1e-6);
    res.metric("beta_warning", sol.beta_warning);
    res.metric("recovery_residual", recovery.residual);
    res.metric("recovered_neurons", recovery.model.neurons() as u64);
    res.metric("neuron_budget", (n + 1) as u64);
    res.artifacts = out.written;
    Ok(res)
}

pub fn cmd_svt(x_file: &Path, beta: f64, orientation: &str, out_dir: &Path) -> Result<ExperimentResult> {
    let x = read_matrix(x_file)?;
    let orient = match orientation {
        "identity" => OrthogonalChoice::Identity,
        "u-aligned" => OrthogonalChoice::UAligned,
        o => return Err(Error::invalid(format!("unknown orientation `{o}`"))),
    };
    let g = svt_generator(&x, beta, &orient)?;
    let report = check_feasible(&x, &g, &DualConstraint::new(ActivationKind::Quadratic, beta))?;
    let sx = svd(&x)?.singular_values;
    let mut spectra = String::from("index,sigma,thresholded\n");
    for (i, s) in sx.iter().enumerate() {
        let _ = writeln!(spectra, "{i},{s},{}", (s * s - beta).max(0.0).sqrt());
    }
    let mut out = Outputs::new(out_dir)?;
    out.matrix("g_star.csv", &g)?;
    out.text("spectra.csv", &spectra)?;
    let mut res = ExperimentResult::new("svt", json!({"x_file": x_file, "beta_d": beta, "orientation": orientation}));
    res.metric("gap", report.gap_value);
    res.metric("feasible", report.feasible);
    res.metric("frobenius_sq", g.norm_squared());
    res.metric("retained_rank", sx.iter().filter(|&&s| s * s > beta).count() as u64);
    res.artifacts = out.written;
    Ok(res)
}

pub fn cmd_procogan(config: &Path, data: &Path, samples: usize, out_dir: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(config).map_err(|e| io_err(config, e))?;
    let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| io_err(config, e))?;
    let (images, res_data) = load_manifest(data)?;
    let trained = run_pipeline(&cfg, &images, res_data)?;
    let matched = histogram_match(&trained.final_images(), &images, res_data.channels)?;

    let mut out = Outputs::new(out_dir)?;
    let ext = if res_data.channels == 1 { "pgm" } else { "ppm" };
    for i in 0..samples.min(matched.nrows()) {
        let px: Vec<f64> = matched.row(i).iter().copied().collect();
        let p = out.path(&format!("sample_{i:03}.{ext}"));
        write_image(&p, &px, res_data)?;
    }
    let metrics_json = serde_json::to_string_pretty(&trained.metrics).expect("metrics serialize");
    out.text("metrics.json", &metrics_json)?;
    for (i, w) in trained.weights.iter().enumerate() {
        out.matrix(&format!("stage_{i}_weights.csv"), w)?;
    }

    let mut res = ExperimentResult::new("procogan", json!({"config": cfg, "data": data}));
    res.metric("stages", cfg.stages.len() as u64);
    res.metric("all_feasible", trained.reports.iter().all(|r| r.feasible));
    res.metric("stage_gaps", trained.metrics.iter().map(|m| m.gap).collect::<Vec<_>>());
    res.metric(
        "stage_spectral_distance",
        trained.metrics.iter().map(|m| m.spectral_distance).collect::<Vec<_>>(),
    );
    res.metric("final_covariance_trace", trained.outputs.last().map_or(0.0, |g| g.norm_squared()));
    res.artifacts = out.written;
    Ok(res)
}

pub fn cmd_gda(x: &[f64], config: Option<&Path>, seeds: u64, base_seed: u64, out_dir: &Path) -> Result<ExperimentResult> {
    let setup: SweepSetup = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(p, e))?
        }
        None => SweepSetup::default(),
    };
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let xm = column_of(x);
    let seed_list: Vec<u64> = (base_seed..base_seed + seeds).collect();
    let runs = seed_sweep(&xm, &setup, &seed_list);
    let convex = solve_1d_relu_program(x, setup.train.beta_d, &Regularizer::squared_frobenius(1.0), 1e-9)?;

    let mut out = Outputs::new(out_dir)?;
    let ok: Vec<(u64, &[LossRecord])> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|t| (r.seed, t.losses.as_slice())))
        .collect();
    let classes = classify_runs(&ok.iter().map(|(_, l)| *l).collect::<Vec<_>>());
    let mut per_run = Vec::new();
    let mut best_distance = f64::INFINITY;
    for run in &runs {
        match &run.result {
            Ok(t) => {
                let mut csv = String::from("step,disc_loss,gen_loss\n");
                for l in &t.losses {
                    let _ = writeln!(csv, "{},{},{}", l.step, l.disc_loss, l.gen_loss);
                }
                out.text(&format!("losses_seed_{}.csv", run.seed), &csv)?;
                let mut g: Vec<f64> = t.generated.iter().copied().collect();
                g.sort_by(f64::total_cmp);
                let dist = g.iter().zip(convex.w.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                best_distance = best_distance.min(dist);
                let idx = ok.iter().position(|(s, _)| *s == run.seed).expect("successful run listed");
                per_run.push(json!({
                    "seed": run.seed,
                    "generated": g,
                    "distance_to_convex": dist,
                    "tail_loss_std": tail_loss_std(&t.losses),
                    "class": format!("{:?}", classes[idx]),
                }));
            }
            Err(e) => per_run.push(json!({"seed": run.seed, "error": e.to_string()})),
        }
    }
    let mut res = ExperimentResult::new("gda", json!({"x": x, "setup": setup, "seeds": seed_list}));
    res.metric("convex_solution", convex.w.iter().copied().collect::<Vec<_>>());
    res.metric("runs", Value::Array(per_run));
    res.metric("best_distance_to_convex", best_distance);
    res.metric(
        "oscillatory_runs",
        classes.iter().filter(|c| **c == RunClass::Oscillatory).count() as u64,
    );
    res.metric("diverged_runs", (runs.len() - ok.len()) as u64);
    res.artifacts = out.written;
    Ok(res)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_verify(
    x_file: &Path,
    g_file: &Path,
    activation: &str,
    beta: f64,
    samples: usize,
    norm_constrained: bool,
    skip_connection: bool,
    seed: u64,
    out_dir: &Path,
) -> Result<(ExperimentResult, i32)> {
    let x = read_matrix(x_file)?;
    let g = read_matrix(g_file)?;
    let mut c = DualConstraint::new(parse_activation(activation)?, beta);
    c.relu_samples = samples;
    c.seed = seed;
    if norm_constrained {
        c = c.norm_constrained();
    }
    if skip_connection {
        c = c.with_skip_connection();
    }
    let report = check_feasible(&x, &g, &c)?;
    let out = Outputs::new(out_dir)?;
    let mut res = ExperimentResult::new(
        "verify",
        json!({"x_file": x_file, "g_file": g_file, "activation": activation, "beta_d": beta,
               "samples": samples, "norm_constrained": norm_constrained, "skip_connection": skip_connection, "seed": seed}),
    );
    res.metric("gap", report.gap_value);
    res.metric("feasible", report.feasible);
    res.metric("margin", report.margin);
    if let Some(w) = &report.witness {
        res.metric("witness", w.iter().copied().collect::<Vec<_>>());
    }
    res.artifacts = out.written;
    let code = if report.feasible { EXIT_OK } else { EXIT_VIOLATION };
    Ok((res, code))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_game(
    x_file: &Path,
    z_file: &Path,
    beta: f64,
    lambdas: &[f64],
    iters: usize,
    step: f64,
    reg_weight: f64,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    let x = read_matrix(x_file)?;
    let z = read_matrix(z_file)?;
    let reg = Regularizer::squared_frobenius(reg_weight);
    let outcome = solve_game(&x, &z, beta, &reg, lambdas, iters, step, 1e-3)?;
    let best = outcome.best_run();
    let mut out = Outputs::new(out_dir)?;
    out.matrix("w.csv", &best.output.state.w)?;
    let mut csv = String::from("iteration,objective,saddle_residual\n");
    for (it, obj, r) in &best.output.trajectory {
        let _ = writeln!(csv, "{it},{obj},{r}");
    }
    out.text("trajectory.csv", &csv)?;

    let mut res = ExperimentResult::new(
        "game",
        json!({"x_file": x_file, "z_file": z_file, "beta_d": beta, "lambdas": lambdas, "iters": iters, "step": step, "reg_weight": reg_weight}),
    );
    res.metric("lambda", best.lambda);
    res.metric("objective", best.output.objective);
    res.metric("saddle_residual", best.output.saddle_residual);
    res.metric("stationary", best.stationary);
    res.metric("relu_gap", best.relu_gap);
    res.metric(
        "runs",
        outcome
            .runs
            .iter()
            .map(|r| {
                json!({"lambda": r.lambda, "objective": r.output.objective, "saddle_residual": r.output.saddle_residual,
                       "refreeze_shift": r.refreeze_shift, "relu_gap": r.relu_gap})
            })
            .collect::<Vec<_>>(),
    );
    res.artifacts = out.written;
    Ok(res)
}

pub fn cmd_blobs(
    count: usize,
    size: usize,
    channels: usize,
    stages: usize,
    keep: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    if count == 0 || stages == 0 {
        return Err(Error::invalid("count and stages must be positive"));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid("images need one or three channels"));
    }
    let res = Resolution::new(size, size, channels);
    let data = synthetic_blobs(count, res, seed);
    let mut out = Outputs::new(out_dir)?;
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("blob_{i:03}.{ext}");
        let px: Vec<f64> = data.row(i).iter().copied().collect();
        let p = out.path(&name);
        write_image(&p, &px, res)?;
        names.push(name);
    }
    out.text("manifest.json", &serde_json::to_string_pretty(&names).expect("names serialize"))?;
    // The suggested config is derived from the 8-bit images as they will be read back.
    let (stored, _) = load_manifest(&out_dir.join("manifest.json"))?;
    let cfg = beta_schedule(&stored, res, stages, keep, keep + 1, seed)?;
    out.text("procogan.json", &serde_json::to_string_pretty(&cfg).expect("config serialize"))?;
    let mut result = ExperimentResult::new(
        "blobs",
        json!({"count": count, "size": size, "channels": channels, "stages": stages, "keep": keep, "seed": seed}),
    );
    result.metric("images", count as u64);
    result.artifacts = out.written;
    Ok(result)
}

fn finish(mut res: ExperimentResult, started: Instant, out_dir: &Path) -> Result<()> {
    res.wall_clock_seconds = started.elapsed().as_secs_f64();
    let p = out_dir.join("result.json");
    res.artifacts.push(p.display().to_string());
    let text = serde_json::to_string_pretty(&res).expect("result serializes");
    std::fs::write(&p, &text).map_err(|e| io_err(&p, e))?;
    println!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    let started = Instant::now();
    let out = cli.out_dir.as_path();
    let (res, code) = match cli.command {
        Command::Toy1d { x, beta, reg, reg_weight } => (cmd_toy1d(&x, beta, &reg, reg_weight, cli.seed, out)?, EXIT_OK),
        Command::Svt { x_file, beta, orientation } => (cmd_svt(&x_file, beta, &orientation, out)?, EXIT_OK),
        Command::Procogan { config, data, samples } => (cmd_procogan(&config, &data, samples, out)?, EXIT_OK),
        Command::Gda { x, config, seeds } => (cmd_gda(&x, config.as_deref(), seeds, cli.seed, out)?, EXIT_OK),
        Command::Verify {
            x_file,
            g_file,
            activation,
            beta,
            samples,
            norm_constrained,
            skip_connection,
        } => cmd_verify(
            &x_file,
            &g_file,
            &activation,
            beta,
            samples,
            norm_constrained,
            skip_connection,
            cli.seed,
            out,
        )?,
        Command::Game {
            x_file,
            z_file,
            beta,
            lambdas,
            iters,
            step,
            reg_weight,
        } => (cmd_game(&x_file, &z_file, beta, &lambdas, iters, step, reg_weight, out)?, EXIT_OK),
        Command::Blobs {
            count,
            size,
            channels,
            stages,
            keep,
        } => (cmd_blobs(count, size, channels, stages, keep, cli.seed, out)?, EXIT_OK),
    };
    finish(res, started, out)?;
    Ok(code)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_text_round_trip() {
        let m = gaussian_matrix(3, 2, 1);
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        assert!(parse_matrix("1,2\n").is_err());
        assert!(parse_matrix("# 2 2\n1,2\n").is_err());
        assert!(parse_matrix("# 1 2\n1,2,3\n").is_err());
        assert!(parse_matrix("# 1 1\nabc\n").is_err());
    }

    #[test]
    fn parsers() {
        assert!(matches!(parse_activation("poly:1,2,3").unwrap(), ActivationKind::Polynomial { a, b, c } if (a, b, c) == (1.0, 2.0, 3.0)));
        assert!(parse_activation("tanh").is_err());
        assert!(parse_regularizer("lp:1.5", 1.0).is_ok());
        assert!(parse_regularizer("huber", 1.0).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Infeasible("x".into())), EXIT_INFEASIBLE);
        assert_eq!(exit_code(&Error::Diverged { iteration: 1, step: 1.0 }), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::Io("x".into())), EXIT_IO);
        let staged = Error::Stage {
            stage: 2,
            source: Box::new(Error::Infeasible("x".into())),
        };
        assert_eq!(exit_code(&staged), EXIT_INFEASIBLE);
    }
}
