//! Command-line interface for the aggmix toolkit.
//!
//! Subcommands:
//! - `simulate`: one realization of the aggregated process (panel or
//!   synthesis route) as a series CSV
//! - `estimate`: mixture-density estimate from a series CSV, grid CSV plus
//!   JSON sidecar out
//! - `experiment`: Monte-Carlo study from a TOML spec, report JSON plus
//!   figure CSVs out
//! - `ma-coeffs`: Wold coefficients of a factorizable mixture, CSV plus
//!   JSON sidecar out
//! - `forward`: exact covariance and spectral-density tables of a mixture
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numeric failures (degenerate samples, quadrature breakdown, synthesis
//! failure). Timing goes to stderr; data files are the only stdout users.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aggmix::estimator::{estimate, EstimatorConfig};
use aggmix::harness::{
    run_experiment, variance_slope, write_fig1_boxplot, write_fig2_qq, write_fig3_loglog,
    CommonConfig, ExperimentSpec, MixtureSpec,
};
use aggmix::ma_repr::{tail_check, MACoefficients, MAX_J};
use aggmix::simulate::{aggregate, derive_seed, gaussian_synthesis, PanelConfig};
use aggmix::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aggmix",
    version,
    about = "Aggregation and disaggregation of random-coefficient AR(1) processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one realization of the aggregated process as a series CSV.
    Simulate {
        /// TOML config with mixture (or case), n, and optionally N, seed,
        /// sigma_eps2.
        #[arg(long)]
        config: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replication index; the series seed is derive_seed(seed, rep),
        /// matching what `experiment` uses for its rep-th replication.
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Estimate the mixture density from a series CSV.
    Estimate {
        /// Input series CSV (one value per line, # comments ignored).
        #[arg(long)]
        series: PathBuf,
        /// Basis exponent; omit to derive it from --d via alpha = 1 - 2d.
        #[arg(long)]
        alpha: Option<f64>,
        /// Truncation exponent for K_n = floor(gamma log n).
        #[arg(long, default_value_t = 0.41)]
        gamma: f64,
        /// Fixed truncation level overriding the K_n rule.
        #[arg(long)]
        kn: Option<usize>,
        /// Memory parameter; enables the alpha rule and admissibility
        /// warnings.
        #[arg(long)]
        d: Option<f64>,
        /// Output CSV with (x, phi_hat) on the 512-point grid; a JSON
        /// sidecar with the coefficients lands next to it.
        #[arg(long, default_value = "estimate_grid.csv")]
        grid_out: PathBuf,
        /// Clip the estimate at zero and renormalize (visualization aid;
        /// the raw estimator is signed).
        #[arg(long)]
        project: bool,
    },
    /// Run a Monte-Carlo experiment from a TOML spec.
    Experiment {
        /// Experiment spec (keys: case|mixture, n, N, M, alpha|d,
        /// gamma|kn, eval_points, grid, seed, n_grid, sigma_eps2).
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.json and the figure CSVs.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Wold coefficients (h, g, psi) of a factorizable mixture.
    MaCoeffs {
        /// TOML config whose mixture has family "farima" or "product".
        #[arg(long)]
        config: PathBuf,
        /// Highest coefficient index.
        #[arg(long, default_value_t = MAX_J)]
        j_max: usize,
        /// Output CSV; a JSON sidecar with the variances and tail checks
        /// lands next to it.
        #[arg(long, default_value = "ma_coeffs.csv")]
        out: PathBuf,
    },
    /// Exact covariance and spectral-density tables of a mixture.
    Forward {
        /// TOML config with mixture (or case) and optionally sigma_eps2.
        #[arg(long)]
        config: PathBuf,
        /// Highest covariance lag.
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        /// Number of spectral grid points on (0, pi].
        #[arg(long, default_value_t = 200)]
        spectral_points: usize,
        /// Covariance table output path.
        #[arg(long, default_value = "forward_cov.csv")]
        cov_out: PathBuf,
        /// Spectral table output path.
        #[arg(long, default_value = "forward_spectral.csv")]
        spectral_out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    match run(cli.command) {
        Ok(()) => {
            eprintln!("done in {:.2}s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => {
                    ExitCode::from(2)
                }
                Error::Quadrature(_)
                | Error::DegenerateSample(_)
                | Error::Synthesis(_)
                | Error::InsufficientData(_) => ExitCode::from(3),
            }
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::Io(format!("creating {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, s).map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out, rep } => cmd_simulate(&config, out.as_deref(), rep),
        Command::Estimate { series, alpha, gamma, kn, d, grid_out, project } => {
            cmd_estimate(&series, alpha, gamma, kn, d, &grid_out, project)
        }
        Command::Experiment { config, out_dir } => cmd_experiment(&config, &out_dir),
        Command::MaCoeffs { config, j_max, out } => cmd_ma_coeffs(&config, j_max, &out),
        Command::Forward { config, max_lag, spectral_points, cov_out, spectral_out } => {
            cmd_forward(&config, max_lag, spectral_points, &cov_out, &spectral_out)
        }
    }
}

fn cmd_simulate(config: &Path, out: Option<&Path>, rep: u64) -> Result<()> {
    let cfg = CommonConfig::from_toml_str(&read_to_string(config)?)?;
    let mixture = cfg.build_mixture()?;
    let n = cfg
        .n
        .ok_or_else(|| Error::Config("simulate needs n in the config".into()))?;
    let sigma_eps2 = cfg.sigma_eps2.unwrap_or(1.0);
    let seed = derive_seed(cfg.seed.unwrap_or(1), rep);
    let series = match cfg.n_members {
        None | Some(aggmix::harness::PanelSize::Word(_)) => {
            gaussian_synthesis(&mixture, n, sigma_eps2, seed)?
        }
        Some(aggmix::harness::PanelSize::Members(nm)) => {
            let pc = PanelConfig::new(nm as usize, n, sigma_eps2.sqrt(), seed);
            aggregate(&mixture, &pc)?
        }
    };
    match out {
        Some(p) => series.write_csv(&mut create(p)?),
        None => series.write_csv(&mut std::io::stdout().lock()),
    }
}

fn cmd_estimate(
    series_path: &Path,
    alpha: Option<f64>,
    gamma: f64,
    kn: Option<usize>,
    d: Option<f64>,
    grid_out: &Path,
    project: bool,
) -> Result<()> {
    let file = fs::File::open(series_path)
        .map_err(|e| Error::Io(format!("opening {}: {e}", series_path.display())))?;
    let series = aggmix::simulate::AggregatedSeries::read_csv(std::io::BufReader::new(file))?;
    let config = match (alpha, d) {
        (Some(a), _) => EstimatorConfig { alpha: a, gamma, kn_override: kn, d, use_alpha_rule: false },
        (None, Some(_)) => {
            EstimatorConfig { alpha: f64::NAN, gamma, kn_override: kn, d, use_alpha_rule: true }
        }
        (None, None) => {
            return Err(Error::Config("either --alpha or --d is required".into()));
        }
    };
    let est = estimate(&series.values, &config)?;
    let grid = if project { est.nonnegative_projection() } else { est.grid() };
    let mut out = create(grid_out)?;
    out.write_all(b"x,phi_hat\n")
        .map_err(|e| Error::Io(format!("writing {}: {e}", grid_out.display())))?;
    for (x, y) in &grid {
        out.write_all(format!("{x:.12e},{y:.12e}\n").as_bytes())
            .map_err(|e| Error::Io(format!("writing {}: {e}", grid_out.display())))?;
    }
    let sidecar = grid_out.with_extension("json");
    write_json(
        &sidecar,
        &serde_json::json!({
            "schema_version": "aggmix-estimate-v1",
            "n": series.values.len(),
            "alpha": est.alpha,
            "gamma": gamma,
            "kn": est.kn,
            "d": d,
            "alpha_rule_used": alpha.is_none(),
            "projected": project,
            "sigma_eps2_hat": est.sigma_eps2_hat,
            "zeta_hat": est.zeta_hat,
            "autocov": est.autocov,
            "mass": est.mass()?,
            "warnings": est.warnings,
            "series_mixture": series.mixture_descriptor,
        }),
    )?;
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "estimate: n = {}, Kn = {}, sigma_eps2_hat = {:.6}, grid -> {}, sidecar -> {}",
        series.values.len(),
        est.kn,
        est.sigma_eps2_hat,
        grid_out.display(),
        sidecar.display()
    );
    Ok(())
}

fn cmd_experiment(config: &Path, out_dir: &Path) -> Result<()> {
    let spec = ExperimentSpec::from_toml_str(&read_to_string(config)?)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("creating {}: {e}", out_dir.display())))?;
    let report = run_experiment(&spec)?;
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, report.to_canonical_json()?)
        .map_err(|e| Error::Io(format!("writing {}: {e}", report_path.display())))?;
    write_fig1_boxplot(&report, &mut create(&out_dir.join("fig1_boxplot.csv"))?)?;
    write_fig2_qq(&report, &mut create(&out_dir.join("fig2_qq.csv"))?)?;
    eprintln!(
        "experiment: route = {}, {} succeeded, {} failed ({} degenerate), MISE = {:.6e}, {:.2}s",
        report.route,
        report.succeeded,
        report.failed,
        report.degenerate,
        report.mise,
        report.elapsed_secs
    );
    for row in &report.normality {
        eprintln!(
            "  Shapiro-Wilk at x = {}: W = {:.6}, p = {:.6}",
            row.x, row.w, row.p_value
        );
    }
    if !spec.n_grid.is_empty() {
        let slope = variance_slope(&spec, &spec.n_grid)?;
        write_fig3_loglog(&slope, &mut create(&out_dir.join("fig3_loglog.csv"))?)?;
        eprintln!("  variance decay: gamma_hat = {:.4}", slope.gamma_hat);
    }
    Ok(())
}

fn cmd_ma_coeffs(config: &Path, j_max: usize, out: &Path) -> Result<()> {
    let cfg = CommonConfig::from_toml_str(&read_to_string(config)?)?;
    let ma = match &cfg.mixture {
        Some(MixtureSpec::Farima { d }) => MACoefficients::for_farima(*d, j_max)?,
        Some(MixtureSpec::Product { d, kappa, a_star }) => {
            MACoefficients::for_product(*d, *kappa, *a_star, j_max)?
        }
        Some(_) | None => {
            return Err(Error::Config(
                "ma-coeffs needs a mixture with family \"farima\" or \"product\" \
                 (the spectral factorization f = f_d G is only available there)"
                    .into(),
            ));
        }
    };
    let mut f = create(out)?;
    f.write_all(b"j,h_j,g_j,psi_j\n")
        .map_err(|e| Error::Io(format!("writing {}: {e}", out.display())))?;
    for j in 0..=j_max {
        f.write_all(
            format!("{j},{:.12e},{:.12e},{:.12e}\n", ma.h[j], ma.g[j], ma.psi[j]).as_bytes(),
        )
        .map_err(|e| Error::Io(format!("writing {}: {e}", out.display())))?;
    }
    let tail = if ma.psi.len() >= 100 {
        let t = tail_check(&ma.psi, ma.d)?;
        serde_json::json!({
            "psi_exponent": t.psi_exponent,
            "diff_exponent": t.diff_exponent,
            "psi_pass": t.psi_pass,
            "diff_pass": t.diff_pass,
        })
    } else {
        serde_json::Value::Null
    };
    let sidecar = out.with_extension("json");
    write_json(
        &sidecar,
        &serde_json::json!({
            "schema_version": "aggmix-ma-v1",
            "d": ma.d,
            "j_max": j_max,
            "sigma2": ma.sigma2,
            "sigma_g2": ma.sigma_g2,
            "g_sum": ma.g_sum(),
            "convolution_residual": ma.convolution_residual(),
            "tail_sq_increment": ma.tail_sq_increment(),
            "tail_check": tail,
        }),
    )?;
    eprintln!(
        "ma-coeffs: {} coefficients, sigma2 = {:.6}, coeffs -> {}, sidecar -> {}",
        j_max + 1,
        ma.sigma2,
        out.display(),
        sidecar.display()
    );
    Ok(())
}

fn cmd_forward(
    config: &Path,
    max_lag: usize,
    spectral_points: usize,
    cov_out: &Path,
    spectral_out: &Path,
) -> Result<()> {
    if spectral_points == 0 {
        return Err(Error::Config("spectral-points must be positive".into()));
    }
    let cfg = CommonConfig::from_toml_str(&read_to_string(config)?)?;
    let mixture = cfg.build_mixture()?;
    let sigma_eps2 = cfg.sigma_eps2.unwrap_or(1.0);
    let cov = mixture.covariance_table(max_lag, sigma_eps2)?;
    let mut f = create(cov_out)?;
    f.write_all(b"h,sigma_h\n")
        .map_err(|e| Error::Io(format!("writing {}: {e}", cov_out.display())))?;
    for (h, v) in cov.iter().enumerate() {
        f.write_all(format!("{h},{v:.12e}\n").as_bytes())
            .map_err(|e| Error::Io(format!("writing {}: {e}", cov_out.display())))?;
    }
    let mut f = create(spectral_out)?;
    f.write_all(b"lambda,f\n")
        .map_err(|e| Error::Io(format!("writing {}: {e}", spectral_out.display())))?;
    for k in 1..=spectral_points {
        let lambda = std::f64::consts::PI * k as f64 / spectral_points as f64;
        let v = mixture.spectral(lambda, sigma_eps2)?;
        f.write_all(format!("{lambda:.12e},{v:.12e}\n").as_bytes())
            .map_err(|e| Error::Io(format!("writing {}: {e}", spectral_out.display())))?;
    }
    eprintln!(
        "forward: {} covariance lags -> {}, {} spectral points -> {}",
        max_lag + 1,
        cov_out.display(),
        spectral_points,
        spectral_out.display()
    );
    Ok(())
}
