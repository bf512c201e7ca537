//! `liouville-reach`: runs scenario pipelines and writes CSV/JSON outputs.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, unreadable or
//! invalid scenario), 2 numerical failure during computation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use liouville_reach::montecarlo::{compare, write_timing_csv, CompareConfig};
use liouville_reach::scenario::{
    apply_override, read_scenario_text, run_with_options, scenario_from_value, RunOptions,
    Scenario, Sections,
};
use liouville_reach::Error;

#[derive(Parser)]
#[command(
    name = "liouville-reach",
    version,
    about = "Stochastic reachability by Liouville transport of sampled densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate every vehicle and write trajectories, marginals, collision
    /// curves and the barycentric trajectory.
    Run(Common),
    /// Propagate and write trajectories and marginals only.
    Marginals(Common),
    /// Propagate and write collision curves only.
    Collision(Common),
    /// Propagate and write the barycentric trajectory and its collision
    /// curves only.
    Barycenter(Common),
    /// Time the Liouville pipeline against Monte Carlo histograms for one
    /// vehicle; writes comparison_report.json and timing.csv.
    CompareMc {
        #[command(flatten)]
        common: Common,
        /// Index of the vehicle whose closed loop is compared.
        #[arg(long, default_value_t = 0)]
        vehicle: usize,
        /// Timed repetitions per pipeline (at least 3); medians are reported.
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Check a scenario against the schema without computing anything.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled preset.
    scenario: PathBuf,
    /// Output directory; nothing is written outside it.
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
    /// Thread cap; defaults to every core. Outputs do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Base seed; vehicle k uses seed + k.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Sample count for every vehicle.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated bin counts. compare-mc: one Monte Carlo resolution
    /// per entry (default 10,15). marginals/run: 1D bins, then 2D bins per
    /// dim. barycenter: grid bins per dim.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    /// Collision probability mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// `LEN_S,LEN_EY` for `--mode footprint`: a sample pair collides when
    /// |Δs| ≤ LEN_S and |Δe_y| ≤ LEN_EY.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    footprint: Option<Vec<f64>>,
    /// Entropic regularization of the barycenter.
    #[arg(long)]
    eps: Option<f64>,
    /// Scenario override `key=value`; dotted keys, numeric segments index
    /// arrays (e.g. `vehicles.0.samples=500`). Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    SupportProduct,
    Footprint,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn from_compute(e: Error) -> Self {
        Self {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIOUVILLE_REACH_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(c) => run_sections(&c, Sections::all(), Section::Run),
        Command::Marginals(c) => run_sections(
            &c,
            Sections {
                trajectories: true,
                marginals: true,
                ..Sections::none()
            },
            Section::Marginals,
        ),
        Command::Collision(c) => run_sections(
            &c,
            Sections {
                collisions: true,
                ..Sections::none()
            },
            Section::Other,
        ),
        Command::Barycenter(c) => run_sections(
            &c,
            Sections {
                barycenter: true,
                ..Sections::none()
            },
            Section::Barycenter,
        ),
        Command::CompareMc {
            common,
            vehicle,
            repetitions,
        } => compare_mc(&common, vehicle, repetitions),
        Command::Validate(c) => {
            let scenario = load(&c, Section::Other)?;
            println!(
                "{}: valid ({} vehicles)",
                scenario.name,
                scenario.vehicles.len()
            );
            Ok(())
        }
    }
}

/// How `--bins` is read.
#[derive(Clone, Copy, PartialEq)]
enum Section {
    Run,
    Marginals,
    Barycenter,
    Other,
}

fn set(doc: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    apply_override(doc, key, &value.to_string()).map_err(|e| Failure::validation(e.to_string()))
}

/// Reads the scenario, applies `--set` and the flag overrides, validates.
fn load(c: &Common, section: Section) -> Result<Scenario, Failure> {
    let text = read_scenario_text(&c.scenario).map_err(|e| Failure::validation(e.to_string()))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("{}: {e}", c.scenario.display())))?;
    for kv in &c.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        apply_override(&mut doc, key.trim(), value.trim())
            .map_err(|e| Failure::validation(e.to_string()))?;
    }
    let vehicles = doc
        .get("vehicles")
        .and_then(Value::as_array)
        .map_or(0, Vec::len);
    for k in 0..vehicles {
        if let Some(n) = c.n {
            set(&mut doc, &format!("vehicles.{k}.samples"), n.into())?;
        }
        if let Some(seed) = c.seed_override {
            let s = seed.checked_add(k as u64).ok_or_else(|| {
                Failure::validation("--seed-override overflows for the later vehicles")
            })?;
            set(&mut doc, &format!("vehicles.{k}.seed"), s.into())?;
        }
    }
    match c.mode {
        Some(ModeArg::SupportProduct) => {
            if c.footprint.is_some() {
                return Err(Failure::validation(
                    "--footprint only applies to --mode footprint",
                ));
            }
            set(
                &mut doc,
                "collision.mode",
                serde_json::json!({ "support_product": {} }),
            )?;
        }
        Some(ModeArg::Footprint) => {
            let lens = footprint_lengths(c, &doc)?;
            set(
                &mut doc,
                "collision.mode",
                serde_json::json!({ "footprint": { "len_s": lens[0], "len_ey": lens[1] } }),
            )?;
        }
        None if c.footprint.is_some() => {
            return Err(Failure::validation("--footprint requires --mode footprint"))
        }
        None => {}
    }
    if let Some(eps) = c.eps {
        if doc.get("barycenter").is_none_or(Value::is_null) {
            return Err(Failure::validation(
                "--eps given but the scenario has no barycenter section",
            ));
        }
        set(&mut doc, "barycenter.eps", eps.into())?;
    }
    if let Some(bins) = &c.bins {
        match section {
            Section::Run | Section::Marginals => {
                if bins.len() > 2 {
                    return Err(Failure::validation(
                        "--bins takes at most two counts here: 1D bins, then 2D bins",
                    ));
                }
                set(&mut doc, "marginals.bins_1d", bins[0].into())?;
                set(&mut doc, "marginals.bins_2d", bins[bins.len() - 1].into())?;
            }
            Section::Barycenter => {
                if bins.len() > 2 {
                    return Err(Failure::validation("--bins takes at most two counts here"));
                }
                if doc.get("barycenter").is_none_or(Value::is_null) {
                    return Err(Failure::validation(
                        "the scenario has no barycenter section",
                    ));
                }
                set(
                    &mut doc,
                    "barycenter.bins",
                    serde_json::json!([bins[0], bins[bins.len() - 1]]),
                )?;
            }
            Section::Other => {}
        }
    }
    scenario_from_value(doc).map_err(|e| Failure::validation(e.to_string()))
}

/// `--footprint`, or the lengths already in the scenario.
fn footprint_lengths(c: &Common, doc: &Value) -> Result<[f64; 2], Failure> {
    if let Some(v) = &c.footprint {
        return match v.as_slice() {
            [s, ey] => Ok([*s, *ey]),
            _ => Err(Failure::validation("--footprint expects LEN_S,LEN_EY")),
        };
    }
    let fp = doc.pointer("/collision/mode/footprint");
    match (
        fp.and_then(|f| f.get("len_s")).and_then(Value::as_f64),
        fp.and_then(|f| f.get("len_ey")).and_then(Value::as_f64),
    ) {
        (Some(s), Some(ey)) => Ok([s, ey]),
        _ => Err(Failure::validation(
            "--mode footprint needs --footprint LEN_S,LEN_EY",
        )),
    }
}

fn options(c: &Common, sections: Sections) -> RunOptions {
    RunOptions {
        workers: c.workers,
        sections,
        base_dir: policy_base(&c.scenario),
    }
}

fn policy_base(path: &Path) -> Option<PathBuf> {
    if path.is_file() {
        path.parent().map(Path::to_path_buf)
    } else {
        None
    }
}

fn check_workers(c: &Common) -> Result<(), Failure> {
    if c.workers == Some(0) {
        return Err(Failure::validation("--workers must be at least 1"));
    }
    Ok(())
}

fn run_sections(c: &Common, sections: Sections, section: Section) -> Result<(), Failure> {
    check_workers(c)?;
    let scenario = load(c, section)?;
    if section == Section::Barycenter && scenario.barycenter.is_none() {
        return Err(Failure::validation(
            "the scenario has no barycenter section",
        ));
    }
    let manifest = run_with_options(&scenario, &c.output, &options(c, sections))
        .map_err(Failure::from_compute)?;
    println!(
        "{}: {} artifacts in {}",
        manifest.scenario,
        manifest.artifacts.len(),
        c.output.join("manifest.json").display()
    );
    Ok(())
}

fn compare_mc(c: &Common, vehicle: usize, repetitions: usize) -> Result<(), Failure> {
    check_workers(c)?;
    let scenario = load(c, Section::Other)?;
    let spec = scenario.vehicles.get(vehicle).ok_or_else(|| {
        Failure::validation(format!(
            "--vehicle {vehicle} out of range for {} vehicles",
            scenario.vehicles.len()
        ))
    })?;
    let path = format!("vehicles[{vehicle}]");
    let compute = Failure::from_compute;
    let built = spec
        .build(
            &path,
            scenario.propagation.divergence,
            policy_base(&c.scenario).as_deref(),
        )
        .map_err(compute)?;
    let cloud = spec
        .initial_cloud(&built.init, scenario.t0)
        .map_err(compute)?;
    let settings = scenario.propagation_settings().map_err(compute)?;
    let config = CompareConfig {
        resolutions: c
            .bins
            .clone()
            .unwrap_or_else(|| CompareConfig::default().resolutions),
        repetitions,
        workers: c.workers,
    };
    let (report, rows) =
        compare(&cloud, &built.field, &settings, &config, None).map_err(compute)?;
    std::fs::create_dir_all(&c.output).map_err(|e| compute(e.into()))?;
    report
        .save_json(&c.output.join("comparison_report.json"))
        .map_err(compute)?;
    let file = std::fs::File::create(c.output.join("timing.csv")).map_err(|e| compute(e.into()))?;
    write_timing_csv(&rows, std::io::BufWriter::new(file)).map_err(compute)?;
    println!("liouville: {:.3} s", report.liouville_runtime);
    for r in &report.resolutions {
        println!("monte carlo, {} bins/dim: {:.3} s", r.bins, r.mc_runtime);
    }
    Ok(())
}
