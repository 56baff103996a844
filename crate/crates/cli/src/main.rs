mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lettuce_core::control::{ActuationSchedule, ControlPolicy};
use lettuce_core::field::{self, FieldTrajectory};
use lettuce_core::fitting::{self, FitResult, MassKind, SyntheticSpec};
use lettuce_core::metrics::{self, BinSpec, Histogram, ScenarioSummary};
use lettuce_core::model::{self, SamplingBox, PARAM_NAMES};
use lettuce_core::{stats, Error};

use config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "lettuce", version, about = "Lettuce growth simulation, control and calibration")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `field.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration override, e.g. `--set field.n_plants=25`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one field scenario and summarise it against the uncontrolled baseline.
    Simulate,
    /// Fit plant parameters to every series in a biomass CSV.
    Fit {
        /// CSV with columns plant_id,day,mass_g,kind.
        #[arg(long)]
        data: PathBuf,
    },
    /// Check the cooperativity sign conditions and dose-response monotonicity.
    VerifyMonotone {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Skip parameter admissibility checks (for diagnosing bad parameter sets).
        #[arg(long)]
        unchecked: bool,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Final biomass under constant nitrogen levels for perturbed parameter sets.
    Sweep {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Print the effective configuration after overrides.
    ShowConfig,
    /// Merge scenario summaries into one comparison table.
    Report {
        /// Summary JSON files; the first is the reference.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
    /// Write a synthetic biomass dataset together with the true parameters.
    GenerateData {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        min_obs: usize,
        #[arg(long, default_value_t = 12)]
        max_obs: usize,
        /// Relative standard deviation of multiplicative observation noise.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = Kind::Dry)]
        kind: Kind,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Number of perturbed parameter sets.
    #[arg(long, default_value_t = 10)]
    sets: usize,
    /// Points in the constant-nitrogen grid.
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 0.0)]
    u_min: f64,
    #[arg(long, default_value_t = 0.15)]
    u_max: f64,
    /// Evaluation day; defaults to the season length.
    #[arg(long)]
    day: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Dry,
    Fresh,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.common.threads {
        set_threads(n)?;
    }
    let mut overrides = cli.common.overrides.clone();
    if let Some(seed) = cli.common.seed {
        overrides.push(format!("field.seed={seed}"));
    }
    let cfg = ScenarioConfig::load(cli.common.config.as_deref(), &overrides)?;
    let out = &cli.common.out_dir;
    match cli.command {
        Command::Simulate => simulate(&cfg, out),
        Command::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Fit { data } => fit(&cfg, &data, out),
        Command::VerifyMonotone { samples, unchecked, sweep } => {
            verify_monotone(&cfg, samples, unchecked, &sweep, out)
        }
        Command::Sweep { sweep: args } => sweep(&cfg, &args, out),
        Command::Report { summaries } => report(&summaries, out),
        Command::GenerateData { count, min_obs, max_obs, noise, kind } => {
            generate_data(&cfg, count, min_obs, max_obs, noise, kind, out)
        }
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> CmdResult {
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("cannot configure thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: usize) -> CmdResult {
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    Ok(())
}

fn create(out_dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    fs::create_dir_all(out_dir)?;
    Ok(BufWriter::new(File::create(out_dir.join(name))?))
}

fn simulate(cfg: &ScenarioConfig, out: &Path) -> CmdResult {
    cfg.validate()?;
    let field_cfg = cfg.field_config()?;
    let policy = cfg.policy()?;
    let schedule = cfg.schedule()?;
    let stride = cfg.output_stride()?;

    let baseline_policy = ControlPolicy::constant(field_cfg.u_bar);
    let daily = ActuationSchedule::daily();
    let baseline = field::simulate_field(&field_cfg, &baseline_policy, &daily)?;
    let threshold = field::rejection_threshold(&baseline.final_outputs, field_cfg.rejection_percentile)?;
    let is_baseline = policy == baseline_policy && schedule == daily;
    let scenario_run;
    let run: &FieldTrajectory = if is_baseline {
        &baseline
    } else {
        scenario_run = field::simulate_field(&field_cfg, &policy, &schedule)?;
        &scenario_run
    };

    let bins = BinSpec::pooled(&[&run.final_outputs, &baseline.final_outputs], cfg.output.histogram_bins)?;
    let summary = metrics::summarize(&cfg.name, run, threshold, &bins)?;
    let base_summary = metrics::summarize("uncontrolled-baseline", &baseline, threshold, &bins)?;
    let comparison = metrics::compare(&base_summary, &summary);

    let name = &cfg.name;
    let mut w = create(out, &format!("{name}_trajectory.csv"))?;
    run.write_csv(&mut w, stride)?;
    w.flush()?;

    let mut w = create(out, &format!("{name}_summary.json"))?;
    summary.write_json(&mut w)?;
    w.flush()?;

    let mut w = create(out, &format!("{name}_summary.csv"))?;
    writeln!(w, "{}", ScenarioSummary::CSV_HEADER)?;
    writeln!(w, "{}", base_summary.csv_row())?;
    writeln!(w, "{}", summary.csv_row())?;
    w.flush()?;

    let mut w = create(out, &format!("{name}_comparison.csv"))?;
    writeln!(w, "{}", metrics::ComparisonReport::CSV_HEADER)?;
    writeln!(w, "{}", comparison.csv_row())?;
    w.flush()?;

    let mut w = create(out, &format!("{name}_histogram.csv"))?;
    write_histograms(&mut w, &[&base_summary, &summary])?;
    w.flush()?;

    println!("scenario {name}: {} plants, seed {}", summary.n_plants, field_cfg.seed);
    println!("  mean final shoot biomass  {:.3} g", summary.mean);
    println!("  variance                  {:.3} g^2 (baseline {:.3})", summary.variance, base_summary.variance);
    println!("  rejection threshold       {:.3} g", threshold);
    println!(
        "  fraction above threshold  {:.3} (baseline {:.3})",
        summary.fraction_above_threshold, base_summary.fraction_above_threshold
    );
    println!(
        "  total nitrogen            {:.4} g (ratio to baseline {:.4})",
        summary.total_nitrogen, comparison.nitrogen_ratio
    );
    Ok(())
}

fn write_histograms<W: Write>(w: &mut W, summaries: &[&ScenarioSummary]) -> std::io::Result<()> {
    writeln!(w, "scenario,bin_lo,bin_hi,count")?;
    for s in summaries {
        write_histogram_rows(w, &s.scenario, &s.histogram)?;
    }
    Ok(())
}

fn write_histogram_rows<W: Write>(w: &mut W, label: &str, h: &Histogram) -> std::io::Result<()> {
    for (k, count) in h.counts.iter().enumerate() {
        writeln!(w, "{label},{},{},{count}", h.edges[k], h.edges[k + 1])?;
    }
    Ok(())
}

fn fit(cfg: &ScenarioConfig, data: &Path, out: &Path) -> CmdResult {
    let spec = cfg.fit_spec()?;
    let file = File::open(data).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", data.display())))?;
    let groups = fitting::read_series_csv(file)?;

    let valid: Vec<_> = groups.iter().filter_map(|(_, s)| s.as_ref().ok().cloned()).collect();
    let mut fitted = fitting::fit_batch(&spec, &valid).into_iter();
    let results: Vec<(String, lettuce_core::Result<FitResult>)> = groups
        .into_iter()
        .map(|(id, parsed)| match parsed {
            Ok(_) => (id, fitted.next().expect("one fit per valid series")),
            Err(e) => (id, Err(e)),
        })
        .collect();

    let mut w = create(out, "fit_results.csv")?;
    fitting::write_fit_results_csv(&mut w, &results)?;
    w.flush()?;

    let nrmse: Vec<f64> = results.iter().filter_map(|(_, r)| r.as_ref().ok().map(|r| r.nrmse)).collect();
    let failed = results.len() - nrmse.len();
    for (id, r) in &results {
        if let Err(e) = r {
            eprintln!("warning: series {id}: {e}");
        }
    }
    if nrmse.is_empty() {
        return Err(Failure::Runtime("no series could be fitted".into()));
    }
    let bins = BinSpec::pooled(&[&nrmse], cfg.output.histogram_bins)?;
    let mut w = create(out, "nrmse_histogram.csv")?;
    writeln!(w, "bin_lo,bin_hi,count")?;
    let h = Histogram::build(&nrmse, &bins);
    for (k, count) in h.counts.iter().enumerate() {
        writeln!(w, "{},{},{count}", h.edges[k], h.edges[k + 1])?;
    }
    w.flush()?;

    let converged = results.iter().filter(|(_, r)| matches!(r, Ok(r) if r.converged)).count();
    println!("fitted {} series ({failed} failed, {converged} converged)", nrmse.len());
    println!("  median NRMSE {:.4}", stats::percentile(&nrmse, 50.0)?);
    Ok(())
}

fn sweep_table(
    cfg: &ScenarioConfig,
    args: &SweepArgs,
    nominal: &model::PlantParams,
) -> lettuce_core::Result<metrics::DoseResponseTable> {
    if args.points < 2 || !(args.u_max > args.u_min) {
        return Err(Error::config("sweep needs at least 2 points and u_max > u_min"));
    }
    let params = (0..args.sets)
        .map(|i| field::sample_params(nominal, cfg.field.perturbation_frac, cfg.field.seed, i))
        .collect::<lettuce_core::Result<Vec<_>>>()?;
    let grid = metrics::linspace(args.u_min, args.u_max, args.points);
    let day = args.day.unwrap_or(cfg.field.season_days);
    metrics::dose_response_sweep(&params, &grid, day, cfg.field.s0, &cfg.env.signal()?, cfg.field.dt)
}

fn sweep(cfg: &ScenarioConfig, args: &SweepArgs, out: &Path) -> CmdResult {
    let table = sweep_table(cfg, args, &cfg.params()?)?;
    let mut w = create(out, "dose_response.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let exceptions = table.monotonicity_exceptions();
    println!(
        "dose response: {} parameter sets x {} levels at day {}, {} monotonicity exceptions",
        table.rows.len(),
        table.u_grid.len(),
        table.day,
        exceptions.len()
    );
    Ok(())
}

fn verify_monotone(cfg: &ScenarioConfig, samples: usize, unchecked: bool, args: &SweepArgs, out: &Path) -> CmdResult {
    let p = if unchecked { cfg.params_unchecked()? } else { cfg.params()? };
    let env = cfg.env.signal()?.values()[0];
    let report = model::check_cooperativity(&p, &env, samples, cfg.field.seed, &SamplingBox::default())?;
    let mut w = create(out, "cooperativity.json")?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;

    println!("cooperativity: {} samples, {} violations", report.samples, report.violation_count);
    println!("  min off-diagonal entry  {:.6e}", report.min_off_diagonal);
    println!("  min input entry         {:.6e}", report.min_input_entry);
    println!("  output map nonnegative  {}", report.output_map_nonnegative);
    for v in &report.violations {
        println!(
            "  violation {} = {:.6e} at b={:.6e} c={:.6e} n={:.6e} u={:.6e}",
            v.entry, v.value, v.state.b, v.state.c, v.state.n, v.u
        );
    }

    let exceptions = match sweep_table(cfg, args, &p) {
        Ok(table) => {
            let mut w = create(out, "dose_response.csv")?;
            table.write_csv(&mut w)?;
            w.flush()?;
            let ex = table.monotonicity_exceptions();
            println!("dose response: {} rows x {} levels, {} exceptions", table.rows.len(), table.u_grid.len(), ex.len());
            for (row, col) in &ex {
                println!("  row {row} decreases between u[{}] and u[{col}]", col - 1);
            }
            ex.len()
        }
        Err(e) if e.is_usage() && !unchecked => return Err(e.into()),
        Err(e) => {
            println!("dose response: failed: {e}");
            1
        }
    };
    if report.is_cooperative() && exceptions == 0 {
        Ok(())
    } else {
        Err(Failure::Runtime("monotonicity verification failed".into()))
    }
}

fn report(paths: &[PathBuf], out: &Path) -> CmdResult {
    let summaries = paths
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", p.display())))?;
            ScenarioSummary::read_json(f).map_err(Failure::from)
        })
        .collect::<std::result::Result<Vec<_>, Failure>>()?;
    let base = &summaries[0];
    let mut w = create(out, "report.csv")?;
    let header = "scenario,n_plants,mean,variance,threshold,fraction_above_threshold,total_nitrogen,nitrogen_exposure,variance_ratio,fraction_delta,nitrogen_ratio";
    writeln!(w, "{header}")?;
    println!("{header}");
    for s in &summaries {
        let c = metrics::compare(base, s);
        if !c.plant_counts_match {
            eprintln!(
                "warning: {} has {} plants, reference {} has {}",
                s.scenario, s.n_plants, base.scenario, base.n_plants
            );
        }
        let row = format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.scenario,
            s.n_plants,
            s.mean,
            s.variance,
            s.threshold,
            s.fraction_above_threshold,
            s.total_nitrogen,
            s.nitrogen_exposure,
            c.variance_ratio,
            c.fraction_delta,
            c.nitrogen_ratio
        );
        writeln!(w, "{row}")?;
        println!("{row}");
    }
    w.flush()?;
    Ok(())
}

fn generate_data(
    cfg: &ScenarioConfig,
    count: usize,
    min_obs: usize,
    max_obs: usize,
    noise: f64,
    kind: Kind,
    out: &Path,
) -> CmdResult {
    let spec = SyntheticSpec {
        series_count: count,
        nominal: cfg.params()?,
        perturbation_frac: cfg.field.perturbation_frac,
        min_observations: min_obs,
        max_observations: max_obs,
        season_days: cfg.field.season_days,
        noise_frac: noise,
        kind: match kind {
            Kind::Dry => MassKind::Dry,
            Kind::Fresh => MassKind::Fresh,
        },
        seed: cfg.field.seed,
        env: cfg.env.signal()?,
        u: cfg.field.u_bar,
        s0: cfg.field.s0,
        dt: cfg.field.dt,
    };
    let data = fitting::generate_synthetic(&spec)?;
    let series: Vec<_> = data.iter().map(|d| d.series.clone()).collect();
    let mut w = create(out, "synthetic.csv")?;
    fitting::write_series_csv(&mut w, &series)?;
    w.flush()?;

    let mut w = create(out, "synthetic_truth.csv")?;
    writeln!(w, "plant_id,{}", PARAM_NAMES.join(","))?;
    for d in &data {
        let values: Vec<String> = d.truth.to_array().iter().map(f64::to_string).collect();
        writeln!(w, "{},{}", d.series.plant_id, values.join(","))?;
    }
    w.flush()?;
    println!("wrote {} series to {}", data.len(), out.join("synthetic.csv").display());
    Ok(())
}
