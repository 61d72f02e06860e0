//! `hjflat`: effective Hamiltonians, flat pieces, correctors and oracle checks
//! from a JSON configuration.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjflat::correctors::{Recipe, RecipeTag, Setting, Side};
use hjflat::crossings::{build_ladder, Levels};
use hjflat::effective::{glue_symmetric, EffectiveCurve, EffectiveOptions, Model};
use hjflat::flatset::{flat_report, EventOptions, FlatOptions, InteriorMode};
use hjflat::pde_oracle::{compare_curve, curve_value_at, eps_sweep, SolverConfig};
use hjflat::potential::{PathRealization, PotentialProcess};
use hjflat::Error;
use serde_json::json;

use config::Loaded;
use output::{Cell, RunManifest, Writer};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
    Io(std::io::Error),
    /// The oracle and the curve disagree.
    Validation(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}
impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Validation(_) => 4,
            CliError::Core(e) => match e {
                Error::InvalidSpec(_) | Error::Structure(_) | Error::MismatchedParams(_) => 2,
                Error::InconsistentEvidence(_) => 4,
                Error::NonConvergence { .. } => 5,
                _ => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(s) => write!(f, "config error: {s}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Validation(s) => write!(f, "validation failed: {s}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hjflat", version, about = "Effective Hamiltonians for double-well G and stationary potentials")]
struct Cli {
    /// JSON configuration with sections hamiltonian, potential, run.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.output_dir).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window length for random processes.
    #[arg(long, global = true)]
    window: Option<f64>,
    /// Realizations per ensemble average.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble the effective Hamiltonian on a theta grid.
    Curve(CurveArgs),
    /// Classify the flat pieces.
    Flats(FlatsArgs),
    /// Compare the curve with the finite-difference oracle.
    Validate(ValidateArgs),
    /// Build a corrector and certify its sub/super levels.
    Corrector(CorrectorArgs),
    /// Export one sampled path of the potential.
    Path(PathArgs),
    /// Export the crossing ladder at one energy.
    Ladder(LadderArgs),
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Glue the curve for G (theta <= 0) with the one for p -> G(-p) (theta > 0).
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Debug)]
struct FlatsArgs {
    /// gap, event or both.
    #[arg(long)]
    mode: Option<String>,
    /// Replace the closed-form interior heights with this list.
    #[arg(long, value_delimiter = ',')]
    inject_closed_form: Option<Vec<f64>>,
    #[arg(long)]
    event_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    probes: Option<Vec<f64>>,
    #[arg(long)]
    tol: Option<f64>,
    /// Assemble the curve with this beta instead of the configured one.
    #[arg(long)]
    curve_beta: Option<f64>,
    /// Values of 1/eps for the rescaled convergence table.
    #[arg(long, value_delimiter = ',')]
    eps_sweep: Option<Vec<f64>>,
    /// Slope used for the eps table.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eps_theta: f64,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
}

#[derive(Args, Debug)]
struct CorrectorArgs {
    #[arg(long)]
    recipe: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    junction_from: Option<f64>,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[arg(long, allow_negative_numbers = true)]
    lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    hi: Option<f64>,
}

#[derive(Args, Debug)]
struct LadderArgs {
    #[arg(long)]
    lambda: f64,
}

struct Ctx {
    loaded: Loaded,
    config_path: PathBuf,
    out: PathBuf,
    seed: u64,
    window: Option<f64>,
    samples: Option<usize>,
}

impl Ctx {
    fn writer(&self, command: &str, mut options: Vec<String>) -> Result<Writer, CliError> {
        options.push(format!("beta={}", self.loaded.beta));
        if let Some(w) = self.window {
            options.push(format!("window={w}"));
        }
        if let Some(s) = self.samples {
            options.push(format!("samples={s}"));
        }
        let m = RunManifest::new(&self.config_path, &self.loaded.raw, command, options, self.seed, &self.out);
        Writer::new(&m)
    }

    fn model_opts(&self) -> EffectiveOptions {
        let d = EffectiveOptions::default();
        EffectiveOptions {
            window: self.window.unwrap_or(d.window),
            realizations: self.samples.unwrap_or(d.realizations),
            seed: self.seed,
            ..d
        }
    }

    fn model(&self, beta: f64) -> Result<Model, CliError> {
        Ok(Model::new(&self.loaded.spec, &self.loaded.process, beta, self.model_opts())?)
    }

    /// A path for corrector-level work, in the canonical frame of `G`.
    fn path(&self, half: f64) -> Result<(PotentialProcess, PathRealization), CliError> {
        let p = &self.loaded.process;
        let p = if self.loaded.spec.is_reflected() { p.reflected() } else { p.clone() };
        let path = match p.period() {
            Some(_) => p.sample_path_with_offset(-half, half, self.seed, 0.0)?,
            None => p.sample_path(-half, half, self.seed)?,
        };
        Ok((p, path))
    }
}

fn curve_rows(c: &EffectiveCurve) -> Vec<Vec<Cell>> {
    (0..c.theta.len())
        .map(|i| vec![Cell::F(c.theta[i]), Cell::F(c.hbar[i]), Cell::F(c.stderr[i]), Cell::S(c.labels[i].to_string())])
        .collect()
}

fn cmd_curve(ctx: &Ctx, a: &CurveArgs) -> Result<(), CliError> {
    let run = &ctx.loaded.config.run;
    let points = a.points.unwrap_or(run.curve.points).max(2);
    let md = ctx.model(ctx.loaded.beta)?;
    let grid = match &run.curve.theta {
        Some(t) => t.clone(),
        None => md.default_grid(points, run.curve.margin)?,
    };
    let mut curve = md.assemble_curve(&grid)?;
    if a.symmetric {
        let plus = Model::new(&ctx.loaded.spec.mirror(), &ctx.loaded.process, ctx.loaded.beta, ctx.model_opts())?;
        let mirrored: Vec<f64> = grid.iter().map(|t| -t).collect();
        let mut all = grid.clone();
        all.extend(mirrored);
        let minus = md.assemble_curve(&all)?;
        curve = glue_symmetric(&minus, &plus.assemble_curve(&all)?)?;
    }
    let w = ctx.writer("curve", vec![format!("points={points}"), format!("symmetric={}", a.symmetric)])?;
    w.csv("curve.csv", &["theta", "hbar", "stderr", "label"], &curve_rows(&curve))?;
    w.json(
        "breakpoints.json",
        &json!({
            "regime": curve.regime,
            "beta": curve.beta,
            "law_id": curve.law_id,
            "mirrored": curve.mirrored,
            "breakpoints": curve.breakpoints,
            "labels": curve.distinct_labels().iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        }),
    )?;
    println!("regime {:?}, {} grid points, {} pieces", curve.regime.tag, curve.theta.len(), curve.distinct_labels().len());
    Ok(())
}

fn cmd_flats(ctx: &Ctx, a: &FlatsArgs) -> Result<(), CliError> {
    let fs = &ctx.loaded.config.run.flats;
    let mode_s = a.mode.clone().unwrap_or_else(|| fs.mode.clone());
    let mode = match mode_s.as_str() {
        "gap" => InteriorMode::Gap,
        "event" => InteriorMode::Event,
        "both" => InteriorMode::Both,
        other => return Err(CliError::Config(format!("unknown mode {other:?}; use gap, event or both"))),
    };
    let opts = FlatOptions {
        mode,
        grid_points: fs.grid_points,
        event: EventOptions { samples: a.event_samples.unwrap_or(fs.event_samples), window: fs.event_window, seed: ctx.seed },
        closed_form_override: a.inject_closed_form.clone(),
    };
    let mut options = vec![format!("mode={mode_s}"), format!("event_samples={}", opts.event.samples)];
    if let Some(v) = &opts.closed_form_override {
        options.push(format!("inject_closed_form={v:?}"));
    }
    let md = ctx.model(ctx.loaded.beta)?;
    let report = flat_report(&md, &opts)?;
    let w = ctx.writer("flats", options)?;
    w.json("flats.json", &report)?;
    println!("flat heights {:?}", report.height_values());
    Ok(())
}

/// One probe per piece plus the outermost breakpoints.
fn default_probes(c: &EffectiveCurve) -> Vec<f64> {
    let mut b: Vec<f64> = c.breakpoints.iter().map(|b| b.theta).collect();
    b.sort_by(f64::total_cmp);
    b.dedup();
    let mut p = vec![b[0] - 0.4];
    p.extend(b.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    p.push(b[b.len() - 1] + 0.4);
    if b.len() > 2 {
        p.push(b[1]);
        p.push(b[b.len() - 2]);
    }
    p.sort_by(f64::total_cmp);
    p
}

fn cmd_validate(ctx: &Ctx, a: &ValidateArgs) -> Result<(), CliError> {
    let run = &ctx.loaded.config.run;
    let os = &run.oracle;
    let beta = ctx.loaded.beta;
    let curve_beta = a.curve_beta.unwrap_or(beta);
    let md = ctx.model(curve_beta)?;
    let probes = match a.probes.clone().or_else(|| os.probes.clone()) {
        Some(p) => p,
        None => default_probes(&md.assemble_curve(&md.default_grid(3, 0.5)?)?),
    };
    let mut grid = md.default_grid(run.curve.points, run.curve.margin)?;
    grid.extend(&probes);
    grid.push(a.eps_theta);
    let curve = md.assemble_curve(&grid)?;
    let cfg = SolverConfig {
        dx: a.dx.unwrap_or(os.dx),
        t_final: a.t_final.unwrap_or(os.t_final),
        cfl: os.cfl,
        ..Default::default()
    };
    let tol = a.tol.unwrap_or(os.tol);
    let reals = ctx.samples.unwrap_or(os.realizations);
    let mut options = vec![
        format!("probes={probes:?}"),
        format!("tol={tol}"),
        format!("curve_beta={curve_beta}"),
        format!("dx={}", cfg.dx),
        format!("t_final={}", cfg.t_final),
    ];
    if let Some(e) = &a.eps_sweep {
        options.push(format!("eps_sweep={e:?}"));
        options.push(format!("eps_theta={}", a.eps_theta));
    }
    let w = ctx.writer("validate", options)?;
    let table = compare_curve(&curve, &cfg, &ctx.loaded.spec, beta, &ctx.loaded.process, &probes, tol, ctx.seed, reals)?;
    let rows: Vec<Vec<Cell>> = table
        .rows
        .iter()
        .map(|r| vec![Cell::F(r.theta), Cell::F(r.curve_value), Cell::F(r.oracle), Cell::F(r.err), Cell::B(r.pass)])
        .collect();
    w.csv("validation.csv", &["theta", "curve_value", "oracle", "err", "pass"], &rows)?;
    for r in &table.rows {
        println!("theta {:>8.4}  curve {:.6}  oracle {:.6}  err {:.2e}  {}", r.theta, r.curve_value, r.oracle, r.err, if r.pass { "pass" } else { "FAIL" });
    }
    if let Some(inv) = &a.eps_sweep {
        let eps: Vec<f64> = inv.iter().map(|n| 1.0 / n).collect();
        let reference = curve_value_at(&curve, a.eps_theta).unwrap();
        let scfg = SolverConfig { theta: a.eps_theta, ..cfg.clone() };
        let (proc_, path) = match ctx.loaded.process.period() {
            Some(_) => (ctx.loaded.process.clone(), ctx.loaded.process.sample_path_with_offset(-1.0, 2.0, ctx.seed, 0.0)?),
            None => {
                let t = inv.iter().fold(0.0f64, |m, v| m.max(*v));
                let alpha = hjflat::pde_oracle::certified_alpha(&ctx.loaded.spec, beta, a.eps_theta)?;
                let reach = (t * alpha / (cfg.cfl * cfg.dx) + 8.0) * cfg.dx + 1.0;
                (ctx.loaded.process.clone(), ctx.loaded.process.sample_path(-reach, reach, ctx.seed)?)
            }
        };
        let _ = proc_;
        let sweep = eps_sweep(&scfg, &ctx.loaded.spec, beta, &path, &eps, reference)?;
        let rows: Vec<Vec<Cell>> = sweep
            .iter()
            .map(|r| vec![Cell::F(r.eps), Cell::F(r.value), Cell::F(r.raw), Cell::F(r.err)])
            .collect();
        w.csv("eps_sweep.csv", &["eps", "value", "raw", "err"], &rows)?;
        for r in &sweep {
            println!("eps 1/{:<6} eps*u {:.8}  err {:.3e}", (1.0 / r.eps).round(), r.value, r.err);
        }
    }
    println!("max-err {:.6e} (tol {tol})", table.max_err);
    if !table.all_pass {
        return Err(CliError::Validation(format!("max-err {:.6e} exceeds tol {tol}", table.max_err)));
    }
    Ok(())
}

fn fmt_level(l: Option<f64>) -> serde_json::Value {
    match l {
        Some(v) => json!(v),
        None => json!("absent"),
    }
}

fn cmd_corrector(ctx: &Ctx, a: &CorrectorArgs) -> Result<(), CliError> {
    let cs = &ctx.loaded.config.run.corrector;
    let name = a
        .recipe
        .clone()
        .or_else(|| cs.recipe.clone())
        .ok_or_else(|| CliError::Config("no recipe given".into()))?;
    let tag = RecipeTag::parse(&name).ok_or_else(|| CliError::Config(format!("unknown recipe {name:?}")))?;
    let half = ctx.window.map(|w| 0.5 * w).unwrap_or(cs.half_width);
    let (_, path) = ctx.path(half)?;
    let s = Setting::new(&ctx.loaded.spec, &path, ctx.loaded.beta)?;
    let lv: Levels = *s.levels();
    let mut r = Recipe::new(tag).junction_from(a.junction_from.unwrap_or(cs.junction_from));
    if let Some(l) = a.lambda.or(cs.lambda) {
        r = r.lambda(l);
    }
    let eps = a.epsilon.or(cs.epsilon).or_else(|| tag.default_epsilon(&lv));
    if let Some(e) = eps {
        r = r.epsilon(e);
    }
    let c = s.build(&r)?;
    let rep = s.verify(&c);
    let avg = s.slope_average(&c, Side::Both).ok();
    let w = ctx.writer(
        "corrector",
        vec![format!("recipe={}", tag.name()), format!("lambda={:?}", r.lambda), format!("epsilon={:?}", r.epsilon), format!("junction_from={}", r.junction_from), format!("half_width={half}")],
    )?;
    let rows: Vec<Vec<Cell>> = s
        .csv_rows(&c)?
        .into_iter()
        .map(|r| vec![Cell::F(r.x), Cell::F(r.f), Cell::F(r.slope), Cell::S(r.label)])
        .collect();
    w.csv("corrector.csv", &["x", "f", "slope", "label"], &rows)?;
    w.json(
        "viscosity.json",
        &json!({
            "recipe": tag.name(),
            "lambda": r.lambda,
            "epsilon": r.epsilon,
            "junction": c.junction,
            "sub": fmt_level(rep.sub_level),
            "super": fmt_level(rep.super_level),
            "max_residual": rep.max_residual,
            "kinks": rep.kinks,
            "slope_average": avg,
            "mirrored": ctx.loaded.spec.is_reflected(),
        }),
    )?;
    let show = |l: Option<f64>| l.map_or("absent".to_string(), |v| v.to_string());
    println!("{}: sub={} super={} residual={:.1e}", tag.name(), show(rep.sub_level), show(rep.super_level), rep.max_residual);
    Ok(())
}

fn cmd_path(ctx: &Ctx, a: &PathArgs) -> Result<(), CliError> {
    let half = ctx.window.map(|w| 0.5 * w).unwrap_or(10.0);
    let (lo, hi) = (a.lo.unwrap_or(-half), a.hi.unwrap_or(half));
    let p = &ctx.loaded.process;
    let path = match p.period() {
        Some(_) => p.sample_path_with_offset(lo, hi, ctx.seed, 0.0)?,
        None => p.sample_path(lo, hi, ctx.seed)?,
    };
    let w = ctx.writer("path", vec![format!("lo={lo}"), format!("hi={hi}")])?;
    let rows: Vec<Vec<Cell>> = path.to_csv_rows().into_iter().map(|(x, v)| vec![Cell::F(x), Cell::F(v)]).collect();
    w.csv("path.csv", &["x", "v"], &rows)?;
    println!("{} knots on [{lo}, {hi}]", rows.len());
    Ok(())
}

fn cmd_ladder(ctx: &Ctx, a: &LadderArgs) -> Result<(), CliError> {
    let half = ctx.window.map(|w| 0.5 * w).unwrap_or(10.0);
    let (_, path) = ctx.path(half)?;
    let lv = Levels::new(&ctx.loaded.spec.canonical(), ctx.loaded.beta);
    let l = build_ladder(&path, a.lambda, &lv)?;
    let mut rows = Vec::new();
    let seqs = [
        ("lower_x", &l.lower_x, l.lower_first),
        ("upper_y", &l.upper_y, l.lower_first),
        ("upper_x", &l.upper_x, l.upper_first),
        ("lower_y", &l.lower_y, l.upper_first),
    ];
    for (name, xs, first) in seqs {
        for (k, x) in xs.iter().enumerate() {
            rows.push(vec![Cell::S(name.into()), Cell::S((first + k as i64).to_string()), Cell::F(*x)]);
        }
    }
    let w = ctx.writer("ladder", vec![format!("lambda={}", a.lambda), format!("half_width={half}")])?;
    w.csv("ladder.csv", &["sequence", "index", "x"], &rows)?;
    w.json("ladder_flags.json", &json!({ "lambda": a.lambda, "flags": l.flags, "interleaving": l.interleaving_holds(), "containments": l.containments_hold() }))?;
    println!("{} crossing points", rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let config_path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let loaded = config::load(&config_path)?;
    let run = &loaded.config.run;
    let out = cli.out.or_else(|| run.output_dir.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx {
        seed: cli.seed.or(run.seed).unwrap_or(1),
        window: cli.window.or(run.window),
        samples: cli.samples.or(run.samples),
        loaded,
        config_path,
        out,
    };
    match &cli.command {
        Command::Curve(a) => cmd_curve(&ctx, a),
        Command::Flats(a) => cmd_flats(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Corrector(a) => cmd_corrector(&ctx, a),
        Command::Path(a) => cmd_path(&ctx, a),
        Command::Ladder(a) => cmd_ladder(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hjflat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
