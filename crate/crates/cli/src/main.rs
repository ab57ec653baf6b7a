use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rodctl_core::error::{Error, ErrorKind, Result};
use rodctl_core::scenario::{
    export_trajectory, load_scenario, plan_inputs, predicted_trajectory, run_comparison, simulate_scenario,
    MetricsReport, Scenario, SCHEMA,
};
use rodctl_core::verify::verification_suite;

#[derive(Parser)]
#[command(name = "rodctl", version, about = "Trajectory generation for segmented soft rods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario's inputs on the (perturbed) plant.
    Simulate(RunArgs),
    /// Write the states and inputs produced by one generator.
    Generate(RunArgs),
    /// Execute both generators' inputs and report tracking metrics.
    Compare(RunArgs),
    /// Run the model self-checks and print their residuals.
    Verify(VerifyArgs),
    /// Print the scenario file schema with its defaults.
    Schema,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Der,
    Pcc,
}

impl Model {
    fn name(self) -> &'static str {
        match self {
            Model::Der => "der",
            Model::Pcc => "pcc",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output path prefix for the exported tables.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "der")]
    model: Model,
    /// Override the simulator timestep (s).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the plant stiffness factor.
    #[arg(long)]
    perturb: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Rod and actuation to check; the fixture when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Schema => {
            print!("{SCHEMA}");
        }
        Command::Simulate(args) => {
            let scenario = load(&args)?;
            let run = simulate_scenario(&scenario, args.model.name())?;
            report(&format!("{} on plant", run.plan.generator), &run.metrics);
            if let Some(out) = &args.out {
                written(export_trajectory(&run.trajectory, &run.metrics, out)?);
            }
        }
        Command::Generate(args) => {
            let scenario = load(&args)?;
            let plan = plan_inputs(&scenario, args.model.name())?;
            let (trajectory, metrics) = predicted_trajectory(&plan)?;
            report(&format!("{} prediction", plan.generator), &metrics);
            if let Some(out) = &args.out {
                written(export_trajectory(&trajectory, &metrics, out)?);
            }
        }
        Command::Compare(args) => {
            let scenario = load(&args)?;
            let cmp = run_comparison(&scenario)?;
            report("der", &cmp.der.metrics);
            report("pcc", &cmp.pcc.metrics);
            if let Some(out) = &args.out {
                for (tag, run) in [("der", &cmp.der), ("pcc", &cmp.pcc)] {
                    written(export_trajectory(&run.trajectory, &run.metrics, &suffixed(out, tag))?);
                }
            }
        }
        Command::Verify(args) => {
            let (params, actuation) = match &args.scenario {
                Some(path) => {
                    let s = load_scenario(path)?;
                    let p = s.rod_params()?;
                    let a = s.actuation_model(&p)?;
                    (p, a)
                }
                None => {
                    let p = rodctl_core::elastic::RodParams::fixture();
                    let a = rodctl_core::actuation::ActuationModel::calibrated(&p);
                    (p, a)
                }
            };
            let checks = verification_suite(&params, &actuation, args.seed)?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed();
                println!(
                    "{:4}  {:.3e} (tol {:.0e})  {}",
                    if c.passed() { "ok" } else { "FAIL" },
                    c.value,
                    c.tolerance,
                    c.name
                );
            }
            if !ok {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load(args: &RunArgs) -> Result<Scenario> {
    let mut s = load_scenario(&args.scenario)?;
    if let Some(dt) = args.dt {
        s.dt = dt;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(f) = args.perturb {
        s.plant_perturbation.stiffness = f;
    }
    s.validate().map_err(|e| match e {
        Error::Validation { key, message } if key == "control_rate" && args.dt.is_some() => Error::Validation {
            key: "dt".into(),
            message,
        },
        other => other,
    })?;
    Ok(s)
}

fn suffixed(prefix: &Path, tag: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!("_{tag}"));
    PathBuf::from(s)
}

fn report(label: &str, m: &MetricsReport) {
    println!("{label}");
    println!("  mean error (total/x/y) [m]: {:.6e} {:.6e} {:.6e}", m.mean, m.mean_x, m.mean_y);
    println!("  std  error (total/x/y) [m]: {:.6e} {:.6e} {:.6e}", m.std, m.std_x, m.std_y);
    println!("  max  error (total)     [m]: {:.6e}", m.max);
    println!("  saturated control samples : {:.1}%", 100.0 * m.saturation_fraction);
}

fn written(paths: rodctl_core::scenario::ExportPaths) {
    println!("wrote {} and {}", paths.table.display(), paths.metrics.display());
}
