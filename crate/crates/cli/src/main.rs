use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ksns_core::diagnostics::{decay_fit, envelope_of_series};
use ksns_core::dynamics::{run_trajectory, Trajectory};
use ksns_core::experiments::{
    compare_trajectories, oracle_fd_run, restrict_trajectory, run_scaling_pair, threshold_sweep, DiffNorm,
    SweepParameter, SweepSettings,
};
use ksns_core::io::{self, RunConfig, Snapshot};
use ksns_core::KsnsError;

#[derive(Parser)]
#[command(name = "ksns", version, about = "Keller-Segel-fluid simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration, writing the diagnostics CSV and snapshots.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-diagnostic `t value` files.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Rescale an initial-data amplitude over a list of values and bracket the
    /// empirical stability threshold.
    Sweep {
        config: PathBuf,
        /// c0_linf, n0_l1 or n0_ld2.
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the critical space-time integral of a run and its rescaling.
    ScaleCheck {
        config: PathBuf,
        #[arg(long = "R", short = 'R')]
        r: f64,
    },
    /// Decay envelope and log-log slope of `linf_n` from a diagnostics CSV.
    Analyze {
        csv: PathBuf,
        #[arg(long)]
        decay_gamma: f64,
        #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
        window: Vec<f64>,
        #[arg(long)]
        emit_plot_data: Option<PathBuf>,
    },
    /// Run the spectral solver and the finite-difference oracle side by side.
    OracleCompare {
        config: PathBuf,
        /// Also run the oracle on a grid refined by this factor.
        #[arg(long, default_value_t = 2)]
        refine: usize,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Flagged(String),
}

impl From<KsnsError> for Failure {
    fn from(e: KsnsError) -> Self {
        match e {
            KsnsError::Config { .. } | KsnsError::InvalidConfig(_) | KsnsError::InvalidGrid(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    io::parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn io_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_run_outputs(tr: &Trajectory, dir: &Path, snapshots: bool, plot: bool) -> CmdResult {
    fs::create_dir_all(dir).map_err(io_err)?;
    let file = fs::File::create(dir.join("diagnostics.csv")).map_err(io_err)?;
    io::write_csv(&tr.records, std::io::BufWriter::new(file))?;
    let snap = |s| Snapshot { state: s, oxygen: tr.config.oxygen, fluid: tr.config.fluid };
    if snapshots {
        for (k, s) in tr.samples.iter().enumerate() {
            fs::write(dir.join(format!("snapshot_{k:05}.bin")), io::write_snapshot(&snap(s.clone()))).map_err(io_err)?;
        }
    }
    fs::write(dir.join("final.bin"), io::write_snapshot(&snap(tr.final_state.clone()))).map_err(io_err)?;
    if plot {
        io::write_plot_data(&dir.join("plot"), &tr.records)?;
    }
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, plot: bool) -> CmdResult {
    let cfg = load(config)?;
    let a = &cfg.assumptions;
    println!("chi_1 = {}  sup|chi - mu k| = {}", a.chi1_sup, a.sup_chi_minus_mu_k);
    for (p, v) in &a.smallness_products {
        println!("smallness p={p}: chi_1 |c0| 24p = {v:.6} ({})", if *v <= 1.0 { "ok" } else { "exceeded" });
    }
    let tr = run_trajectory(&cfg.model, &cfg.initial)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    write_run_outputs(&tr, &dir, cfg.output.snapshots, plot || cfg.output.plot_data)?;
    let (first, last) = (tr.records[0], tr.records[tr.records.len() - 1]);
    println!("steps: {}  t_final = {}", tr.records.len() - 1, last.t);
    println!("mass drift: {:e}", (last.mass - first.mass).abs() / first.mass.abs().max(f64::MIN_POSITIVE));
    println!("termination: {}", tr.termination.name());
    if !tr.completed() {
        return Err(Failure::Flagged(tr.note.unwrap_or_else(|| tr.termination.name().into())));
    }
    Ok(())
}

fn sweep(config: &Path, param: &str, values: &[f64], out: Option<PathBuf>) -> CmdResult {
    let cfg = load(config)?;
    let p = SweepParameter::parse(param)
        .ok_or_else(|| Failure::Config(format!("unknown sweep parameter `{param}`")))?;
    let rep = threshold_sweep(&cfg.model, &cfg.initial, p, values, &SweepSettings::default())?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.join("sweep"));
    let mut summary = format!("parameter = {}\n", p.name());
    for ((v, o), recs) in rep.values.iter().zip(&rep.outcomes).zip(&rep.records) {
        let sub = dir.join(format!("{}_{}", p.name(), io::fmt_f64(*v)));
        fs::create_dir_all(&sub).map_err(io_err)?;
        io::write_csv(recs, fs::File::create(sub.join("diagnostics.csv")).map_err(io_err)?)?;
        summary.push_str(&format!("{} {}\n", io::fmt_f64(*v), o.describe()));
    }
    summary.push_str(&format!("bracket = {:?}\n", rep.bracket));
    if !rep.anomalies.is_empty() {
        summary.push_str(&format!("anomalies = {:?}\n", rep.anomalies));
    }
    fs::write(dir.join("summary.txt"), &summary).map_err(io_err)?;
    print!("{summary}");
    Ok(())
}

fn scale_check(config: &Path, r: f64) -> CmdResult {
    let cfg = load(config)?;
    let rep = run_scaling_pair(&cfg.model, &cfg.initial, r).map_err(|e| match e {
        KsnsError::ScaledRunFailed(m) => Failure::Flagged(m),
        other => other.into(),
    })?;
    println!("R = {}", rep.r);
    println!("base   int ||n||_2^2 dt = {}", io::fmt_f64(rep.base_value));
    println!("scaled int ||n||_2^2 dt = {}", io::fmt_f64(rep.scaled_value));
    println!("relative difference = {:e}", rep.relative_difference);
    println!("mass base = {} scaled = {}", io::fmt_f64(rep.base_mass), io::fmt_f64(rep.scaled_mass));
    Ok(())
}

fn analyze(csv: &Path, gamma: f64, window: (f64, f64), plot: Option<PathBuf>) -> CmdResult {
    let text = fs::read_to_string(csv).map_err(|e| Failure::Config(format!("{}: {e}", csv.display())))?;
    let recs = io::read_csv(&text)?;
    let series: Vec<(f64, f64)> = recs.iter().map(|r| (r.t, r.linf_n)).collect();
    let slope = decay_fit(&series, window)?;
    let env = envelope_of_series(&series, gamma, window)?;
    let start = series
        .iter()
        .find(|(t, _)| *t >= window.0)
        .map(|&(t, y)| (1.0 + t).powf(gamma) * y)
        .ok_or_else(|| Failure::Runtime("no samples in window".into()))?;
    println!("slope = {slope}");
    println!("envelope = {env}");
    println!("envelope ratio = {}", env / start);
    if let Some(dir) = plot {
        io::write_plot_data(&dir, &recs)?;
    }
    Ok(())
}

fn oracle_compare(config: &Path, refine: usize) -> CmdResult {
    let cfg = load(config)?;
    let spectral = run_trajectory(&cfg.model, &cfg.initial)?;
    let oracle = oracle_fd_run(&cfg.model, &cfg.initial)?;
    let base = compare_trajectories(&spectral, &oracle, DiffNorm::Linf)?;
    let worst = base.iter().map(|d| d.max()).fold(0.0, f64::max);
    println!("t n c u");
    for d in &base {
        println!("{} {:e} {:e} {:e}", d.t, d.n, d.c, d.u);
    }
    println!("max difference = {worst:e}");
    if refine > 1 {
        let g = cfg.model.grid;
        let mut fine = cfg.model.clone();
        fine.grid = ksns_core::spectral::GridSpec::new(g.nx() * refine, g.ny() * refine, g.lx(), g.ly())?;
        let fine_tr = restrict_trajectory(&oracle_fd_run(&fine, &cfg.initial)?, &g)?;
        let refined = compare_trajectories(&spectral, &fine_tr, DiffNorm::Linf)?;
        let w = refined.iter().map(|d| d.max()).fold(0.0, f64::max);
        println!("refined oracle max difference = {w:e}  reduction = {}", worst / w);
    }
    if !spectral.completed() || !oracle.completed() {
        return Err(Failure::Flagged("a run ended early".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, emit_plot_data } => run(&config, out, emit_plot_data),
        Command::Sweep { config, param, values, out } => sweep(&config, &param, &values, out),
        Command::ScaleCheck { config, r } => scale_check(&config, r),
        Command::Analyze { csv, decay_gamma, window, emit_plot_data } => {
            analyze(&csv, decay_gamma, (window[0], window[1]), emit_plot_data)
        }
        Command::OracleCompare { config, refine } => oracle_compare(&config, refine),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Flagged(m)) => {
            eprintln!("flagged: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
    }
}
