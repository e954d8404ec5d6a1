use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use miso_ma::dof::{closed_form_dof, golden_table_csv, parse_rational, Metric};
use miso_ma::harness::{self, selftest, ExperimentConfig, VarianceMode};
use miso_ma::strategy::StrategySpec;
use miso_ma::{Error, Objective, Result};

#[derive(Parser)]
#[command(name = "miso-ma", version, about = "Downlink MISO multiple-access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo campaign; writes per-cell and summary CSV.
    Simulate(CampaignArgs),
    /// Fitted high-SNR slopes against the closed-form multiplexing gains.
    Slopes(CampaignArgs),
    /// Closed-form multiplexing gains.
    Dof(DofArgs),
    /// Seeded invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceArg {
    Equal,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sum,
    Maxmin,
}

#[derive(Args)]
struct CampaignArgs {
    /// TOML config file; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short = 'k', long)]
    users: Option<usize>,
    #[arg(short = 'm', long)]
    antennas: Option<usize>,
    /// Comma-separated, e.g. `noma:1,noma:3,mulp,rs1,oma`.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategySpec>>,
    /// Comma-separated SNR values in dB, or `start:stop:step`.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// CSIT quality exponent in [0, 1].
    #[arg(long, conflicts_with = "perfect")]
    alpha: Option<f64>,
    /// Perfect CSIT, overriding any `alpha` in the config file.
    #[arg(long)]
    perfect: bool,
    #[arg(long, value_enum)]
    variance_mode: Option<VarianceArg>,
    #[arg(long)]
    saa_samples: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    convergence_tol: Option<f64>,
    /// Per-cell CSV path; the summary goes next to it as `<stem>.summary.csv`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// 100 realizations and 1000 SAA samples.
    #[arg(long)]
    full_scale: bool,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct DofArgs {
    /// Sum and max-min tables for K=6, M=1..6.
    #[arg(long)]
    emit_golden_tables: bool,
    #[arg(long, default_value = "1")]
    alpha: String,
    #[arg(long, default_value_t = 6)]
    max_antennas: usize,
    /// Single query instead of tables; needs --users and --antennas.
    #[arg(long)]
    strategy: Option<StrategySpec>,
    #[arg(short = 'k', long)]
    users: Option<usize>,
    #[arg(short = 'm', long)]
    antennas: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One tenth of the default case counts.
    #[arg(long)]
    quick: bool,
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("bad SNR grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| start + i as f64 * step).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn resolve(a: &CampaignArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| Error::Parse(e.to_string()))?
        }
        None => {
            let strategies = a
                .strategies
                .clone()
                .ok_or_else(|| Error::Config("--strategies is required without --config".into()))?;
            let grid = a.snr.as_deref().ok_or_else(|| Error::Config("--snr is required without --config".into()))?;
            ExperimentConfig::new(
                a.users.ok_or_else(|| Error::Config("--users is required without --config".into()))?,
                a.antennas.ok_or_else(|| Error::Config("--antennas is required without --config".into()))?,
                strategies,
                parse_grid(grid)?,
            )
        }
    };
    if a.full_scale {
        cfg = cfg.full_scale();
    }
    if let Some(v) = a.users {
        cfg.num_users = v;
    }
    if let Some(v) = a.antennas {
        cfg.num_antennas = v;
    }
    if let Some(v) = &a.strategies {
        cfg.strategies = v.clone();
    }
    if let Some(v) = &a.snr {
        cfg.snr_grid_db = parse_grid(v)?;
    }
    if let Some(v) = a.realizations {
        cfg.n_realizations = v;
    }
    if a.perfect {
        cfg.alpha = None;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = Some(v);
    }
    if let Some(v) = a.variance_mode {
        cfg.variance_mode = match v {
            VarianceArg::Equal => VarianceMode::Equal,
            VarianceArg::Uniform => VarianceMode::Uniform,
        };
    }
    if let Some(v) = a.saa_samples {
        cfg.n_saa_samples = v;
    }
    if let Some(v) = a.eval_samples {
        cfg.n_eval_samples = Some(v);
    }
    if let Some(v) = a.objective {
        cfg.objective = match v {
            ObjectiveArg::Sum => Objective::Sum,
            ObjectiveArg::Maxmin => Objective::MaxMin,
        };
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = a.convergence_tol {
        cfg.convergence_tol = v;
    }
    if let Some(v) = &a.output {
        cfg.output_path = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_failures(result: &harness::ExperimentResult) -> ExitCode {
    let failed = result.failures();
    let violations = result.invariant_violations();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", result.rows.len());
    }
    if violations > 0 {
        eprintln!("{violations} invariant violations");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn simulate(a: &CampaignArgs) -> Result<ExitCode> {
    let cfg = resolve(a)?;
    if a.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(ExitCode::SUCCESS);
    }
    let result = harness::run_experiment(&cfg)?;
    match &cfg.output_path {
        Some(path) => eprintln!("wrote {} and {}", path.display(), harness::summary_path(path).display()),
        None => result.write_summary_csv(io::stdout().lock())?,
    }
    Ok(report_failures(&result))
}

fn slopes(a: &CampaignArgs) -> Result<ExitCode> {
    let cfg = resolve(a)?;
    if a.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(ExitCode::SUCCESS);
    }
    let (result, rows) = harness::slope_campaign(&cfg)?;
    harness::write_slopes_csv(&rows, io::stdout().lock())?;
    Ok(report_failures(&result))
}

fn dof(a: &DofArgs) -> Result<ExitCode> {
    let alpha = parse_rational(&a.alpha)?;
    let mut out = io::stdout().lock();
    if let Some(spec) = a.strategy {
        let k = a.users.ok_or_else(|| Error::Config("--users is required with --strategy".into()))?;
        let m = a.antennas.ok_or_else(|| Error::Config("--antennas is required with --strategy".into()))?;
        let label = spec.build(k)?.label();
        writeln!(out, "strategy,M,K,alpha,sum,mmf")?;
        writeln!(
            out,
            "{label},{m},{k},{alpha},{},{}",
            closed_form_dof(spec.kind, m, k, spec.groups, alpha, Metric::Sum)?,
            closed_form_dof(spec.kind, m, k, spec.groups, alpha, Metric::Mmf)?
        )?;
        return Ok(ExitCode::SUCCESS);
    }
    if !a.emit_golden_tables {
        eprintln!("no query given; printing the golden tables");
    }
    writeln!(out, "# sum multiplexing gain, K=6, alpha={alpha}")?;
    write!(out, "{}", golden_table_csv(Metric::Sum, a.max_antennas, alpha)?)?;
    writeln!(out, "# max-min multiplexing gain, K=6, alpha={alpha}")?;
    write!(out, "{}", golden_table_csv(Metric::Mmf, a.max_antennas, alpha)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run_selftest(a: &SelftestArgs) -> Result<ExitCode> {
    let reports = selftest::run_all(a.seed, a.quick)?;
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Slopes(a) => slopes(a),
        Command::Dof(a) => dof(a),
        Command::Selftest(a) => run_selftest(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invariant(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("5:35:10").unwrap(), vec![5.0, 15.0, 25.0, 35.0]);
        assert_eq!(parse_grid("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid("5:1:1").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn cli_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
