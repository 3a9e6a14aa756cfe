//! `saltwalk`: gait synthesis, simulation, saltation reports and robustness
//! sweeps from the command line.
//!
//! Exit codes: 0 success, 2 bad input, 3 solver did not converge,
//! 4 gait/model mismatch, 5 numerical failure (singular, grazing, non-periodic).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use saltwalk::error::ErrorCategory;
use saltwalk::gait_opt::{self, GaitNlp, NlpOptions, SolveStatus};
use saltwalk::hybrid_sim::{simulate_gait, TerrainSpec};
use saltwalk::rigid_body::{check_schema, preset, preset_names};
use saltwalk::robustness::{self, log_spaced};
use saltwalk::saltation::{gait_saltation, passive_saltation, SaltationBundle};
use saltwalk::{Error, Gait, RobotModel, State};

#[derive(Parser)]
#[command(name = "saltwalk", version, about = "Robust periodic gait synthesis for planar walkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a periodic gait; writes `<name>.gait.toml` and `<name>.report.toml`.
    Optimize(OptimizeArgs),
    /// Walk a gait over a terrain; writes a trace CSV and an events CSV beside it.
    Simulate(SimulateArgs),
    /// Report the saltation matrices at a gait's impact or at a given pre-impact state.
    Saltation(SaltationArgs),
    /// Perturbed-guard sweep, return-map spectrum and phase portrait for a gait.
    Robustness(RobustnessArgs),
    /// List the built-in models.
    Models,
}

#[derive(Args)]
struct ModelArg {
    /// Model file, or the name of a built-in model.
    #[arg(long)]
    model: String,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Torque-effort weight.
    #[arg(long, default_value_t = 1.0)]
    w1: f64,
    /// Saltation weight.
    #[arg(long, default_value_t = 0.0)]
    w2: f64,
    /// Multiply `w2` by the factor that balances both cost terms at the
    /// torque-optimal gait (solving that gait first).
    #[arg(long)]
    balance: bool,
    /// TOML file with problem and solver options; flags override it.
    #[arg(long)]
    options: Option<PathBuf>,
    /// Collocation intervals [default: 20].
    #[arg(long)]
    intervals: Option<usize>,
    /// Outer iteration limit of the solver [default: 40].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Output file stem [default: <model>_w1=<w1>_w2=<w2>].
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long)]
    gait: PathBuf,
    /// `flat`, `slope:<deg>` or `step:<m>`.
    #[arg(long, default_value = "flat")]
    terrain: String,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Trace CSV path.
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SaltationArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Gait whose designed pre-impact state is used (closed loop).
    #[arg(long, conflicts_with = "state")]
    gait: Option<PathBuf>,
    /// Pre-impact state `q..,qd..` of the unactuated model, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    /// Override the model's coefficient of restitution.
    #[arg(long)]
    restitution: Option<f64>,
    /// Also write the report as TOML here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long)]
    gait: PathBuf,
    /// TOML file with `[[conditions]]` entries [default: flat, ±1° slope, ±2 cm step].
    #[arg(long)]
    conditions: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Skip the return-map spectrum.
    #[arg(long)]
    no_poincare: bool,
    /// Also run the first-order saltation check with this many random directions.
    #[arg(long)]
    first_order: Option<usize>,
    /// Seed for the random perturbation directions.
    #[arg(long, default_value_t = robustness::DEFAULT_SEED)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match e.category() {
            ErrorCategory::Input => (2, "input"),
            ErrorCategory::Mismatch => (4, "mismatch"),
            ErrorCategory::Numerical => (5, "numerical"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn input(message: impl Into<String>) -> Failure {
    Failure { code: 2, kind: "input", message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Simulate(a) => simulate(a),
        Command::Saltation(a) => saltation(a),
        Command::Robustness(a) => robustness_cmd(a),
        Command::Models => models(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_model(arg: &ModelArg) -> CliResult<RobotModel> {
    Ok(RobotModel::load(&arg.model)?)
}

fn load_gait(path: &Path, model: &RobotModel) -> CliResult<Gait> {
    if !path.exists() {
        return Err(input(format!("gait not found: {}", path.display())));
    }
    let gait = Gait::load(path)?;
    gait.check_model(model)?;
    Ok(gait)
}

fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))
}

fn optimize(a: OptimizeArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let mut opts = match &a.options {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input(format!("options file {}: {e}", p.display())))?;
            toml::from_str::<NlpOptions>(&text).map_err(|e| input(format!("options file {}: {e}", p.display())))?
        }
        None => NlpOptions::for_model(&model),
    };
    if let Some(n) = a.intervals {
        opts.intervals = n;
    }
    if let Some(n) = a.max_iter {
        opts.solver.max_outer = n;
    }
    let mut w2 = a.w2;
    let mut warm = None;
    if a.balance && w2 > 0.0 {
        let torque_only = gait_opt::synthesize(&model, &opts.clone().with_weights(1.0, 0.0), None)?;
        let nlp = GaitNlp::new(&model, opts.clone().with_weights(1.0, 0.0))?;
        let (_, k) = gait_opt::weight_scaling_hint(&nlp, &torque_only.solution.x)?;
        w2 *= k;
        warm = Some(torque_only.solution.x);
    }
    opts.weights = (a.w1, w2);
    let syn = gait_opt::synthesize(&model, &opts, warm.as_ref())?;

    ensure_dir(&a.out)?;
    let stem = a.name.unwrap_or_else(|| format!("{}_w1={}_w2={}", model.name, a.w1, a.w2));
    let report_path = a.out.join(format!("{stem}.report.toml"));
    std::fs::write(&report_path, syn.report.to_toml()).map_err(Error::from)?;
    let mut gait = syn.gait;
    gait.set_meta("id", stem.clone());
    if syn.report.status != SolveStatus::Converged {
        let partial = a.out.join(format!("{stem}.partial.gait.toml"));
        gait.save(&partial)?;
        return Err(Failure {
            code: 3,
            kind: "non_convergence",
            message: format!("solver stopped with status {}: {}; last iterate in {}", syn.report.status.as_str(), syn.report.message, partial.display()),
        });
    }
    let gait_path = a.out.join(format!("{stem}.gait.toml"));
    gait.save(&gait_path)?;
    println!(
        "converged in {:.1} s: cost {:.6e}, sigma_max {:.4}, step {:.3} m in {:.3} s\nwrote {} and {}",
        syn.report.wall_time_s,
        syn.report.cost,
        syn.report.sigma_max,
        syn.report.step_length,
        syn.report.step_duration,
        gait_path.display(),
        report_path.display()
    );
    Ok(())
}

fn parse_terrain(spec: &str) -> CliResult<TerrainSpec> {
    let bad = || input(format!("terrain `{spec}`: expected flat, slope:<deg> or step:<m>"));
    let terrain = match spec.split_once(':') {
        None if spec == "flat" => TerrainSpec::flat(),
        Some(("slope", v)) => TerrainSpec::slope(v.parse().map_err(|_| bad())?),
        Some(("step", v)) => TerrainSpec::step(v.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    };
    terrain.validate()?;
    Ok(terrain)
}

fn simulate(a: SimulateArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let terrain = parse_terrain(&a.terrain)?;
    let gait = load_gait(&a.gait, &model)?;
    let trace = simulate_gait(&model, &gait, &terrain, a.steps)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let events = trace.save(&a.out)?;
    println!("{} of {} steps on {}: {}", trace.steps(), a.steps, terrain.label(), trace.termination);
    if let Some(note) = &trace.note {
        println!("{note}");
    }
    println!("wrote {} and {}", a.out.display(), events.display());
    Ok(())
}

#[derive(Serialize)]
struct SaltationReport {
    schema_version: &'static str,
    model: String,
    pre_impact: Vec<f64>,
    sigma_max: f64,
    denominator: f64,
    saltation: Vec<Vec<f64>>,
    guard_saltation: Vec<f64>,
    extended: Vec<Vec<f64>>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn saltation(a: SaltationArgs) -> CliResult {
    let mut model = load_model(&a.model)?;
    if let Some(e) = a.restitution {
        if !(0.0..=1.0).contains(&e) {
            return Err(input("restitution must lie in [0, 1]"));
        }
        model.restitution = e;
    }
    let (x, bundle): (State, SaltationBundle) = match (&a.gait, &a.state) {
        (Some(path), None) => {
            let gait = load_gait(path, &model)?;
            let x = gait.pre_impact_state.clone().ok_or_else(|| input("gait has no pre-impact state"))?;
            let b = gait_saltation(&model, &gait, &x)?;
            (x, b)
        }
        (None, Some(s)) => {
            let values: Vec<f64> = s
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| input(format!("state `{s}` is not a comma-separated list of numbers")))?;
            if values.len() != 2 * model.n() {
                return Err(Failure { code: 4, kind: "mismatch", message: format!("state has {} entries, model needs {}", values.len(), 2 * model.n()) });
            }
            let x = State::from_vector(&DVector::from_vec(values));
            let b = passive_saltation(&model, &x)?;
            (x, b)
        }
        _ => return Err(input("give exactly one of --gait or --state")),
    };
    let report = SaltationReport {
        schema_version: "1.0",
        model: model.name.clone(),
        pre_impact: x.to_vector().iter().copied().collect(),
        sigma_max: bundle.sigma_max,
        denominator: bundle.denominator,
        saltation: rows(&bundle.s),
        guard_saltation: bundle.sg.iter().copied().collect(),
        extended: rows(&bundle.se),
    };
    let text = toml::to_string(&report).map_err(|e| input(e.to_string()))?;
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text).map_err(Error::from)?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    schema_version: String,
    conditions: Vec<TerrainSpec>,
}

fn robustness_cmd(a: RobustnessArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let gait = load_gait(&a.gait, &model)?;
    let conditions = match &a.conditions {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input(format!("conditions file {}: {e}", p.display())))?;
            let file: ConditionFile = toml::from_str(&text).map_err(|e| input(format!("conditions file {}: {e}", p.display())))?;
            check_schema(&file.schema_version)?;
            for c in &file.conditions {
                c.validate()?;
            }
            file.conditions
        }
        None => robustness::default_conditions(),
    };
    let mut report = robustness::guard_sweep(&model, &gait, &conditions, a.steps)?;
    if !a.no_poincare {
        report.poincare = Some(robustness::poincare_spectrum(&model, &gait)?.spectrum);
    }
    ensure_dir(&a.out)?;
    let id = report.gait_id.clone();
    let trace = simulate_gait(&model, &gait, &TerrainSpec::flat(), a.steps)?;
    if !trace.samples.is_empty() {
        let portrait_path = a.out.join(format!("{id}.portrait.csv"));
        robustness::phase_portrait(&model, &trace)?.save(&portrait_path)?;
        report.phase_portrait = Some(portrait_path.file_name().unwrap().to_string_lossy().into_owned());
    }
    let mut text = report.to_text();
    if let Some(dirs) = a.first_order {
        let walker = saltwalk::hybrid_sim::Walker::closed_loop(&model, &gait)?;
        let x = gait.pre_impact_state.as_ref().ok_or_else(|| input("gait has no pre-impact state"))?;
        let table = robustness::first_order_validation(&walker, &x.to_vector(), &log_spaced(1e-4, 1e-2, 5), dirs, a.seed)?;
        text += &format!("first-order check: slope {:.4} over {} directions (seed {}), {} samples dropped\n", table.slope, dirs, a.seed, table.dropped.len());
        std::fs::write(a.out.join(format!("{id}.first_order.toml")), toml::to_string(&table).map_err(|e| input(e.to_string()))?)
            .map_err(Error::from)?;
    }
    std::fs::write(a.out.join(format!("{id}.robustness.toml")), report.to_toml()).map_err(Error::from)?;
    std::fs::write(a.out.join(format!("{id}.robustness.txt")), &text).map_err(Error::from)?;
    report.write_csv(&a.out.join(format!("{id}.robustness.csv")))?;
    print!("{text}");
    Ok(())
}

fn models() -> CliResult {
    println!("{:<14} {:>4} {:>4} {:>8}  {}", "name", "n", "m", "leg (m)", "contact");
    for name in preset_names() {
        let m = preset(name)?;
        let base = if m.is_pinned() { "pinned stance foot" } else { "floating base" };
        println!("{:<14} {:>4} {:>4} {:>8.3}  {}", name, m.n(), m.m(), m.leg_length, base);
    }
    Ok(())
}
