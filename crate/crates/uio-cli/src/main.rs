//! Command-line front end: observer existence checks, synthesis, the
//! model-based oracle, verdict comparison and closed-loop simulation.
//!
//! Exit codes: 0 when the requested check/design succeeded (or a verdict is
//! positive), 2 when a check ran cleanly but the verdict is negative, 1 on
//! any error.

mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Complex;

use uio_core::datamat::{build_data_matrices, check_assumption, read_trajectory, write_trajectory};
use uio_core::ddcheck::existence_data_driven;
use uio_core::ddsynth::{synthesize, synthesize_baseline};
use uio_core::numkit::Tolerance;
use uio_core::oracle::{
    design_model_based, existence_model_based, random_experiment, random_system, read_system,
    read_uio, simulate_system, write_uio, PoleSpec,
};
use uio_core::sim::{
    disturbance_gen, error_experiment, read_signal_csv, write_error_csv, SignalKind, SignalSpec,
};

#[derive(Parser)]
#[command(
    name = "uio",
    about = "Design, verify and simulate unknown-input observers for discrete-time LTI systems, from a model or from recorded data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TolArgs {
    /// Relative singular-value cutoff for rank decisions.
    #[arg(long, default_value_t = Tolerance::DEFAULT_RANK_TOL)]
    rank_tol: f64,
    /// Absolute residual-norm cutoff.
    #[arg(long, default_value_t = Tolerance::DEFAULT_RESIDUAL_TOL)]
    residual_tol: f64,
    /// Slack applied to the unit circle in stability decisions.
    #[arg(long, default_value_t = Tolerance::DEFAULT_STABILITY_MARGIN)]
    stability_margin: f64,
}

impl TolArgs {
    fn build(&self) -> uio_core::Result<Tolerance> {
        Tolerance::new(self.rank_tol, self.residual_tol, self.stability_margin)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decide from a recorded trajectory whether an unknown-input observer
    /// exists for the generating system.
    Check {
        /// Trajectory CSV (header t,u1..um,y1..yp,x1..xn[,d1..dr]).
        #[arg(long)]
        data: PathBuf,
        /// Size of the unknown input (never inferred from the data).
        #[arg(short, long)]
        r: usize,
        #[command(flatten)]
        tol: TolArgs,
        /// Emit the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Synthesize an observer from a recorded trajectory.
    Synth {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        r: usize,
        /// Comma-separated real observable poles; defaults to deadbeat
        /// (all poles at the origin).
        #[arg(long, value_delimiter = ',')]
        poles: Option<Vec<f64>>,
        /// Seed for the detectability search over the solution family.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random-draw budget of that search.
        #[arg(long, default_value_t = 64)]
        budget: usize,
        /// Also report the prior-style baseline observer (minimum-norm
        /// solution, no pole choice).
        #[arg(long)]
        baseline: bool,
        /// Where to write the observer (JSON).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long)]
        json: bool,
    },
    /// Model-based existence check (and optional design) for a system file.
    Oracle {
        /// System JSON with named matrices A, B, C, E.
        #[arg(long)]
        system: PathBuf,
        /// Also design an observer and write it to --out.
        #[arg(long)]
        design: bool,
        #[arg(long, value_delimiter = ',')]
        poles: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long)]
        json: bool,
    },
    /// Draw random systems, generate data and compare the data-driven
    /// verdict against the model-based one.
    Compare {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Dimensions n,m,p,r.
        #[arg(long, value_delimiter = ',', default_value = "3,1,2,1")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Simulate plant plus observer and write the estimation-error CSV.
    Simulate {
        /// Scenario JSON holding all settings below; explicit flags are
        /// ignored when this is given.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        system: Option<PathBuf>,
        /// Observer JSON produced by `synth` or `oracle --design`.
        #[arg(long, required_unless_present = "scenario")]
        uio: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        /// Disturbance: "zero", "uniform:lo:hi" or "file:path.csv".
        #[arg(long, default_value = "uniform:-10:10")]
        dist: String,
        /// Known input: same forms as --dist.
        #[arg(long, default_value = "zero")]
        input: String,
        /// Master seed; initial conditions and signals derive from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the disturbance seed alone, leaving initial conditions
        /// and the input pinned by --seed. The error trajectory of a valid
        /// observer does not depend on this.
        #[arg(long)]
        dist_seed: Option<u64>,
        /// Start the observer at z(0) = x(0) - D y(0) so the estimate is
        /// exact from the first step, instead of a random z(0).
        #[arg(long)]
        acceptor_init: bool,
        /// Where to write the error CSV (columns t,e1..en).
        #[arg(long, required_unless_present = "scenario")]
        out: Option<PathBuf>,
        /// Prepend a timestamp comment line to the output file.
        #[arg(long)]
        timestamp: bool,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Write a system JSON: the built-in worked example or a random draw.
    ExampleSystem {
        /// Draw a random system with these dimensions n,m,p,r instead of
        /// the built-in example.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Target verdict for the random draw: should an observer exist?
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        detectable: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic trajectory CSV from a system file.
    Generate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 20)]
        horizon: usize,
        #[arg(long, default_value = "uniform:-2:2")]
        dist: String,
        #[arg(long, default_value = "uniform:-1:1")]
        input: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        timestamp: bool,
    },
}

/// Simulation settings, also loadable from a JSON scenario file.
#[derive(serde::Deserialize)]
struct Scenario {
    system: PathBuf,
    uio: PathBuf,
    #[serde(default = "Scenario::default_horizon")]
    horizon: usize,
    #[serde(default = "Scenario::default_dist")]
    dist: String,
    #[serde(default = "Scenario::default_input")]
    input: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dist_seed: Option<u64>,
    #[serde(default)]
    acceptor_init: bool,
    out: PathBuf,
}

impl Scenario {
    fn default_horizon() -> usize {
        50
    }

    fn default_dist() -> String {
        "uniform:-10:10".into()
    }

    fn default_input() -> String {
        "zero".into()
    }

    fn read(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn parse_signal(spec: &str) -> Result<SignalKind, String> {
    if spec == "zero" {
        return Ok(SignalKind::Zero);
    }
    if let Some(rest) = spec.strip_prefix("uniform:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 2 {
            return Err(format!("expected uniform:lo:hi, got '{spec}'"));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|_| format!("bad lower bound '{}'", parts[0]))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|_| format!("bad upper bound '{}'", parts[1]))?;
        return Ok(SignalKind::Uniform { lo, hi });
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let samples = read_signal_csv(std::path::Path::new(path)).map_err(|e| e.to_string())?;
        return Ok(SignalKind::Samples(samples));
    }
    Err(format!(
        "unknown signal spec '{spec}'; use zero, uniform:lo:hi or file:path"
    ))
}

fn pole_spec(poles: &Option<Vec<f64>>) -> PoleSpec {
    match poles {
        None => PoleSpec::Deadbeat,
        Some(values) => PoleSpec::List(
            values
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .collect(),
        ),
    }
}

fn timestamp_line() -> String {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix {unix}")
}

fn run() -> Result<u8, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Check { data, r, tol, json } => {
            let tol = tol.build().map_err(|e| e.to_string())?;
            let traj = read_trajectory(&data).map_err(|e| e.to_string())?;
            let dm = build_data_matrices(&traj, r).map_err(|e| e.to_string())?;
            let assumption = check_assumption(&dm, &tol).map_err(|e| e.to_string())?;
            let report = existence_data_driven(&dm, r, &tol).map_err(|e| e.to_string())?;
            if json {
                println!("{}", render::check_json(&assumption, &report, &tol));
            } else {
                render::print_data_report(&dm, &assumption, &report, &tol);
            }
            Ok(if report.exists { 0 } else { 2 })
        }
        Command::Synth {
            data,
            r,
            poles,
            seed,
            budget,
            baseline,
            out,
            tol,
            json,
        } => {
            let tol = tol.build().map_err(|e| e.to_string())?;
            let traj = read_trajectory(&data).map_err(|e| e.to_string())?;
            let dm = build_data_matrices(&traj, r).map_err(|e| e.to_string())?;
            let spec = pole_spec(&poles);
            let outcome =
                synthesize(&dm, r, &spec, &tol, budget, seed).map_err(|e| e.to_string())?;
            if !json {
                render::print_synthesis(&outcome, &tol);
            }
            if baseline {
                match synthesize_baseline(&dm, r, &tol) {
                    Ok(b) => render::print_baseline(&b),
                    Err(e) => println!("baseline solution unavailable: {e}"),
                }
            }
            match &outcome.uio {
                Some(uio) => {
                    write_uio(&out, uio).map_err(|e| e.to_string())?;
                    if json {
                        println!("{}", render::check_json_synth(&outcome, &tol));
                    } else {
                        println!("observer written to {}", out.display());
                    }
                    Ok(0)
                }
                None => {
                    if json {
                        println!("{}", render::check_json_synth(&outcome, &tol));
                    } else {
                        println!("no observer exists for these data; nothing written");
                    }
                    Ok(2)
                }
            }
        }
        Command::Oracle {
            system,
            design,
            poles,
            seed,
            out,
            tol,
            json,
        } => {
            let tol = tol.build().map_err(|e| e.to_string())?;
            let model = read_system(&system).map_err(|e| e.to_string())?;
            let report = existence_model_based(&model, &tol).map_err(|e| e.to_string())?;
            if json {
                println!("{}", render::oracle_json(&report, &tol));
            } else {
                render::print_model_report(&model, &report, &tol);
            }
            if design {
                if !report.strong_star_detectable {
                    println!("design skipped: no observer exists for this system");
                    return Ok(2);
                }
                let spec = pole_spec(&poles);
                let uio =
                    design_model_based(&model, &spec, &tol, seed).map_err(|e| e.to_string())?;
                render::print_observer(&uio, &tol);
                if let Some(out) = out {
                    write_uio(&out, &uio).map_err(|e| e.to_string())?;
                    println!("observer written to {}", out.display());
                }
            }
            Ok(if report.strong_star_detectable { 0 } else { 2 })
        }
        Command::Compare {
            trials,
            dims,
            seed,
            tol,
        } => {
            let tol = tol.build().map_err(|e| e.to_string())?;
            let [n, m, p, r]: [usize; 4] = dims
                .clone()
                .try_into()
                .map_err(|_| "expected --dims n,m,p,r".to_string())?;
            if p < r {
                return Err(format!(
                    "infeasible dims: detectable targets need p >= r, got p = {p}, r = {r}"
                ));
            }
            let mut agree = 0usize;
            let mut mismatches = Vec::new();
            println!("trial  construction        model-based  data-driven");
            for trial in 0..trials {
                let want = trial % 2 == 0;
                let trial_seed = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(trial as u64);
                let generated = random_system(n, m, p, r, want, trial_seed, &tol)
                    .map_err(|e| e.to_string())?;
                let mb = existence_model_based(&generated.model, &tol)
                    .map_err(|e| e.to_string())?
                    .strong_star_detectable;
                let horizon = 2 * (n + m + r) + 4;
                let mut dd = None;
                for attempt in 0..8u64 {
                    let traj = random_experiment(
                        &generated.model,
                        horizon,
                        trial_seed ^ (0xD15E ^ attempt),
                        (-1.0, 1.0),
                    )
                    .map_err(|e| e.to_string())?;
                    let dm = build_data_matrices(&traj, r).map_err(|e| e.to_string())?;
                    let assumption = check_assumption(&dm, &tol).map_err(|e| e.to_string())?;
                    if assumption.verdict != uio_core::datamat::AssumptionVerdict::Holds {
                        continue;
                    }
                    dd = Some(
                        existence_data_driven(&dm, r, &tol)
                            .map_err(|e| e.to_string())?
                            .exists,
                    );
                    break;
                }
                let dd = dd.ok_or_else(|| {
                    format!("trial {trial}: could not generate assumption-satisfying data")
                })?;
                let label = render::construction_label(&generated.construction);
                println!(
                    "{trial:>5}  {label:<18} {mb:<12} {dd}",
                );
                if mb == dd {
                    agree += 1;
                } else {
                    mismatches.push(trial);
                }
            }
            println!("agreement: {agree}/{trials}");
            if !mismatches.is_empty() {
                println!("mismatching trials: {mismatches:?}");
                return Ok(2);
            }
            Ok(0)
        }
        Command::Simulate {
            scenario,
            system,
            uio,
            horizon,
            dist,
            input,
            seed,
            dist_seed,
            acceptor_init,
            out,
            timestamp,
            tol,
        } => {
            let tol = tol.build().map_err(|e| e.to_string())?;
            let settings = match scenario {
                Some(path) => Scenario::read(&path)?,
                None => Scenario {
                    system: system.expect("clap enforces --system"),
                    uio: uio.expect("clap enforces --uio"),
                    horizon,
                    dist,
                    input,
                    seed,
                    dist_seed,
                    acceptor_init,
                    out: out.expect("clap enforces --out"),
                },
            };
            let model = read_system(&settings.system).map_err(|e| e.to_string())?;
            let observer = read_uio(&settings.uio).map_err(|e| e.to_string())?;
            let d_kind = parse_signal(&settings.dist)?;
            let u_kind = parse_signal(&settings.input)?;
            let n = model.state_dim();
            // Sub-seeds for the initial conditions derive from the master
            // seed, so a run is reproducible from its flags alone.
            let seed = settings.seed;
            let x0_samples = disturbance_gen(
                &SignalKind::Uniform { lo: -1.0, hi: 1.0 },
                n,
                1,
                seed ^ 0x0A11,
            )
            .map_err(|e| e.to_string())?;
            let x0 = x0_samples[0].clone();
            let z0 = if settings.acceptor_init {
                let y0 = model.c() * &x0;
                &x0 - &observer.d * y0
            } else {
                disturbance_gen(
                    &SignalKind::Uniform { lo: -1.0, hi: 1.0 },
                    n,
                    1,
                    seed ^ 0x0B22,
                )
                .map_err(|e| e.to_string())?[0]
                    .clone()
            };
            let errors = error_experiment(
                &model,
                &observer,
                &x0,
                &z0,
                &SignalSpec {
                    kind: d_kind,
                    seed: settings.dist_seed.unwrap_or(seed ^ 0x0C33),
                },
                &SignalSpec {
                    kind: u_kind,
                    seed: seed ^ 0x0D44,
                },
                settings.horizon,
                &tol,
            )
            .map_err(|e| e.to_string())?;
            let ts = timestamp.then(timestamp_line);
            write_error_csv(&settings.out, &errors, ts.as_deref()).map_err(|e| e.to_string())?;
            let final_norm = errors.last().map_or(0.0, |e| e.norm());
            println!(
                "wrote {} steps to {}; final error norm {:.11e}",
                errors.len(),
                settings.out.display(),
                final_norm
            );
            Ok(0)
        }
        Command::ExampleSystem {
            dims,
            detectable,
            seed,
            out,
        } => {
            let model = match dims {
                None => uio_core::oracle::SystemModel::example(),
                Some(values) => {
                    let [n, m, p, r]: [usize; 4] = values
                        .try_into()
                        .map_err(|_| "expected --dims n,m,p,r".to_string())?;
                    random_system(n, m, p, r, detectable, seed, &Tolerance::default())
                        .map_err(|e| e.to_string())?
                        .model
                }
            };
            uio_core::oracle::write_system(&out, &model).map_err(|e| e.to_string())?;
            println!("system written to {}", out.display());
            Ok(0)
        }
        Command::Generate {
            system,
            horizon,
            dist,
            input,
            seed,
            out,
            timestamp,
        } => {
            let model = read_system(&system).map_err(|e| e.to_string())?;
            let d_kind = parse_signal(&dist)?;
            let u_kind = parse_signal(&input)?;
            let steps = horizon.saturating_sub(1);
            let d = disturbance_gen(&d_kind, model.disturbance_dim(), steps, seed ^ 0x0C33)
                .map_err(|e| e.to_string())?;
            let u = disturbance_gen(&u_kind, model.input_dim(), steps, seed ^ 0x0D44)
                .map_err(|e| e.to_string())?;
            let x0_samples = disturbance_gen(
                &SignalKind::Uniform { lo: -1.0, hi: 1.0 },
                model.state_dim(),
                1,
                seed ^ 0x0A11,
            )
            .map_err(|e| e.to_string())?;
            let traj = simulate_system(&model, &x0_samples[0], &u, &d, horizon)
                .map_err(|e| e.to_string())?;
            let ts = timestamp.then(timestamp_line);
            write_trajectory(&out, &traj, ts.as_deref()).map_err(|e| e.to_string())?;
            println!(
                "wrote trajectory with horizon {} to {}",
                traj.horizon(),
                out.display()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
