//! Monte-Carlo experiment runner.
//!
//! Reproduces the simulation study: repeated estimation of the mixture
//! density from independent realizations, box-plot quantile curves, MISE,
//! Shapiro-Wilk normality checks of the estimator at fixed points, QQ data,
//! and the variance-decay log-log regression. The module also owns the
//! experiment configuration format (TOML), the versioned report JSON, and
//! the plot-ready CSV exports.
//!
//! Layout:
//! - [`ExperimentSpec`] / [`MixtureSpec`]: declarative experiment configs
//!   with Table-1 presets
//! - [`run_experiment`]: seeded, replication-parallel driver with
//!   deterministic merge
//! - [`ReplicationReport`]: all per-run outputs plus canonical JSON
//! - [`normality_test`], [`qq_data`], [`mise`], [`variance_slope`]:
//!   the individual analyses

use crate::estimator::{estimate, EstimatorConfig};
use crate::mixture::{product_mixture, MixtureDensity};
use crate::simulate::{aggregate, derive_seed, GaussianSynthesizer, PanelConfig};
use crate::special::{normal_ppf, normal_sf};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::time::Instant;

/// Report schema identifier embedded in every JSON export.
pub const SCHEMA_VERSION: &str = "aggmix-report-v1";

/// Panel size: a literal member count, or the exact limit process via
/// Gaussian synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PanelSize {
    /// Aggregate this many AR(1) members.
    Members(u64),
    /// Sample the limiting Gaussian process directly.
    Word(LimitWord),
}

/// The single admissible keyword for the limit route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitWord {
    /// Marker value: `N = "limit"`.
    Limit,
}

impl PanelSize {
    fn is_limit(&self) -> bool {
        matches!(self, PanelSize::Word(LimitWord::Limit))
    }
}

fn default_panel() -> PanelSize {
    PanelSize::Word(LimitWord::Limit)
}

fn default_grid() -> usize {
    512
}

fn default_seed() -> u64 {
    1
}

fn default_sigma_eps2() -> f64 {
    1.0
}

fn default_eval_points() -> Vec<f64> {
    vec![-0.5]
}

/// Declarative mixture description for config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MixtureSpec {
    /// FARIMA-correspondence mixture with memory parameter d.
    Farima {
        /// Memory parameter in (0, 1/2).
        d: f64,
    },
    /// Compensator density (kappa + 1) a*^(-kappa-1) |x|^kappa on [-a*, 0].
    Compensator {
        /// Exponent kappa > 0.
        kappa: f64,
        /// Support edge a* in (0, 1).
        a_star: f64,
    },
    /// Two-component Beta mixture on (0, 1) and (-a*, 0).
    BetaTwoComponent {
        /// Weight of the positive component.
        w: f64,
        /// Negative support edge.
        a_star: f64,
        /// Positive-component Beta shapes.
        p1: f64,
        /// Second shape of the positive component.
        q1: f64,
        /// Negative-component Beta shapes.
        p2: f64,
        /// Second shape of the negative component.
        q2: f64,
    },
    /// Beta component on (0, 1) mixed with a uniform on (-a*, 0).
    BetaUniform {
        /// Weight of the Beta component.
        w: f64,
        /// Negative support edge.
        a_star: f64,
        /// Beta shapes of the positive component.
        p1: f64,
        /// Second shape of the positive component.
        q1: f64,
    },
    /// Product mixture built from a FARIMA factor and a compensator.
    Product {
        /// Memory parameter of the FARIMA factor.
        d: f64,
        /// Compensator exponent.
        kappa: f64,
        /// Compensator support edge.
        a_star: f64,
    },
    /// Piecewise-linear density loaded from a two-column CSV file.
    Tabulated {
        /// Path to the (x, phi) CSV.
        path: String,
    },
}

impl MixtureSpec {
    /// Construct the mixture density this spec describes.
    pub fn build(&self) -> Result<MixtureDensity> {
        match self {
            MixtureSpec::Farima { d } => MixtureDensity::farima(*d),
            MixtureSpec::Compensator { kappa, a_star } => {
                MixtureDensity::compensator(*kappa, *a_star)
            }
            MixtureSpec::BetaTwoComponent { w, a_star, p1, q1, p2, q2 } => {
                MixtureDensity::beta_two_component(*w, *a_star, (*p1, *q1), (*p2, *q2))
            }
            MixtureSpec::BetaUniform { w, a_star, p1, q1 } => {
                MixtureDensity::beta_uniform(*w, *a_star, (*p1, *q1))
            }
            MixtureSpec::Product { d, kappa, a_star } => {
                let fd = MixtureDensity::farima(*d)?;
                let fg = MixtureDensity::compensator(*kappa, *a_star)?;
                product_mixture(&fd, &fg)
            }
            MixtureSpec::Tabulated { path } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::Io(format!("opening {path}: {e}")))?;
                MixtureDensity::read_tabulated_csv(std::io::BufReader::new(f))
            }
        }
    }
}

/// A complete experiment description, readable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Table-1 preset id (1..=3); fills mixture, d, alpha, gamma defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<u8>,
    /// Explicit mixture, exclusive with `case`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    /// Series length per replication.
    pub n: usize,
    /// Panel size N, or "limit" for exact Gaussian synthesis.
    #[serde(rename = "N", default = "default_panel")]
    pub n_members: PanelSize,
    /// Number of replications.
    #[serde(rename = "M")]
    pub m: usize,
    /// Basis exponent; defaults to the alpha rule when `d` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Memory parameter, for the alpha rule and admissibility warnings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Truncation exponent for K_n = floor(gamma log n).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Fixed truncation level overriding the K_n rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kn: Option<usize>,
    /// Points at which per-replication estimates are recorded.
    #[serde(default = "default_eval_points")]
    pub eval_points: Vec<f64>,
    /// Evaluation grid size for box plots and MISE.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Master seed; replication r uses derive_seed(seed, r).
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Sample sizes for variance-slope runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_grid: Vec<usize>,
    /// Innovation variance of the panel members.
    #[serde(default = "default_sigma_eps2")]
    pub sigma_eps2: f64,
}

/// Subset of the experiment keys used by the single-series and forward-map
/// commands. Unknown keys are ignored so one experiment file can drive
/// every subcommand.
#[derive(Debug, Clone, Deserialize)]
pub struct CommonConfig {
    /// Table-1 preset id.
    pub case: Option<u8>,
    /// Explicit mixture, exclusive with `case`.
    pub mixture: Option<MixtureSpec>,
    /// Series length.
    pub n: Option<usize>,
    /// Panel size or "limit".
    #[serde(rename = "N", default)]
    pub n_members: Option<PanelSize>,
    /// Master seed.
    pub seed: Option<u64>,
    /// Innovation variance.
    pub sigma_eps2: Option<f64>,
    /// Memory parameter.
    pub d: Option<f64>,
}

impl CommonConfig {
    /// Parse from TOML, ignoring keys that belong to other subcommands.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Build the configured mixture (case preset or explicit table).
    pub fn build_mixture(&self) -> Result<MixtureDensity> {
        match (&self.case, &self.mixture) {
            (Some(_), Some(_)) => Err(Error::Config(
                "specify either case or mixture, not both".into(),
            )),
            (Some(c), None) => table1_case(*c).map(|(m, _, _)| m),
            (None, Some(ms)) => ms.build(),
            (None, None) => Err(Error::Config("either case or mixture is required".into())),
        }
    }
}

/// Table-1 mixture, memory parameter, and basis exponent for a case id.
pub fn table1_case(case: u8) -> Result<(MixtureDensity, f64, f64)> {
    match case {
        1 => Ok((
            MixtureDensity::beta_two_component(0.8, 0.95, (3.0, 1.5), (2.0, 1.0))?,
            0.25,
            0.5,
        )),
        2 => Ok((
            MixtureDensity::beta_two_component(0.8, 0.80, (1.2, 1.6), (1.3, 2.5))?,
            0.2,
            0.6,
        )),
        3 => Ok((MixtureDensity::beta_uniform(0.8, 0.90, (2.0, 1.2))?, 0.4, 0.2)),
        _ => Err(Error::Config(format!("case must be 1, 2, or 3, got {case}"))),
    }
}

impl ExperimentSpec {
    /// Preset reproducing a Table-1 row at the published scale
    /// (M = 500 replications of length n = 1500, synthesis route,
    /// gamma = 0.41, seed 1).
    pub fn case_preset(case: u8) -> Result<Self> {
        let (_, d, alpha) = table1_case(case)?;
        Ok(Self {
            case: Some(case),
            mixture: None,
            n: 1500,
            n_members: default_panel(),
            m: 500,
            alpha: Some(alpha),
            d: Some(d),
            gamma: Some(0.41),
            kn: None,
            eval_points: default_eval_points(),
            grid: default_grid(),
            seed: default_seed(),
            n_grid: Vec::new(),
            sigma_eps2: 1.0,
        })
    }

    /// Parse a TOML experiment file.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    /// Serialize to TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing experiment config: {e}")))
    }

    /// Resolve presets and defaults into runnable pieces: the mixture, the
    /// estimator configuration, and the memory parameter if known.
    pub fn resolve(&self) -> Result<(MixtureDensity, EstimatorConfig, Option<f64>)> {
        if self.m < 2 {
            return Err(Error::Config(format!("M must be >= 2, got {}", self.m)));
        }
        if self.n < 8 {
            return Err(Error::Config(format!("n must be >= 8, got {}", self.n)));
        }
        if self.grid < 8 {
            return Err(Error::Config(format!("grid must be >= 8, got {}", self.grid)));
        }
        if !(self.sigma_eps2 > 0.0) {
            return Err(Error::Config(format!(
                "sigma_eps2 must be positive, got {}",
                self.sigma_eps2
            )));
        }
        for &x in &self.eval_points {
            if !(x.abs() < 1.0) {
                return Err(Error::Config(format!(
                    "eval points must lie in (-1, 1), got {x}"
                )));
            }
        }
        let (mixture, case_d, case_alpha) = match (&self.case, &self.mixture) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "specify either case or mixture, not both".into(),
                ));
            }
            (Some(c), None) => {
                let (m, d, a) = table1_case(*c)?;
                (m, Some(d), Some(a))
            }
            (None, Some(ms)) => (ms.build()?, None, None),
            (None, None) => {
                return Err(Error::Config("either case or mixture is required".into()));
            }
        };
        let d = self.d.or(case_d);
        let alpha = match self.alpha.or(case_alpha) {
            Some(a) => a,
            None => match d {
                Some(dv) => crate::estimator::alpha_rule(dv)?,
                None => {
                    return Err(Error::Config(
                        "either alpha or d is required to fix the basis exponent".into(),
                    ));
                }
            },
        };
        if self.gamma.is_none() && self.kn.is_none() {
            return Err(Error::Config(
                "either gamma or kn is required to fix the truncation level".into(),
            ));
        }
        let config = EstimatorConfig {
            alpha,
            gamma: self.gamma.unwrap_or(0.41),
            kn_override: self.kn,
            d,
            use_alpha_rule: false,
        };
        config.validate()?;
        Ok((mixture, config, d))
    }
}

/// Box-plot quantiles of the replication estimates at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct BoxplotRow {
    /// Grid abscissa.
    pub x: f64,
    /// 5th percentile.
    pub q05: f64,
    /// Lower quartile.
    pub q25: f64,
    /// Median.
    pub q50: f64,
    /// Upper quartile.
    pub q75: f64,
    /// 95th percentile.
    pub q95: f64,
}

/// Shapiro-Wilk result at one evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct NormalityRow {
    /// Evaluation point.
    pub x: f64,
    /// Shapiro-Wilk W statistic.
    pub w: f64,
    /// Upper-tail p-value.
    pub p_value: f64,
}

/// QQ pairs of the replication estimates at one evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct QqSeries {
    /// Evaluation point.
    pub x: f64,
    /// (theoretical standard-normal quantile, standardized sample quantile).
    pub pairs: Vec<(f64, f64)>,
}

/// Everything a Monte-Carlo run produces.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    /// Report schema identifier.
    pub schema_version: String,
    /// The spec that produced this report (config echo).
    pub spec: ExperimentSpec,
    /// Series route actually used: "synthesis" or "panel(N)".
    pub route: String,
    /// Basis exponent used.
    pub alpha: f64,
    /// Truncation level used.
    pub kn: usize,
    /// Evaluation grid construction, for plot reproducibility.
    pub grid_kind: String,
    /// Ascending evaluation grid.
    pub grid: Vec<f64>,
    /// True mixture density on the grid.
    pub true_density: Vec<f64>,
    /// Quantile curves across replications, one row per grid point.
    pub boxplot: Vec<BoxplotRow>,
    /// Points with per-replication samples.
    pub eval_points: Vec<f64>,
    /// phi_hat samples across successful replications, one vector per
    /// evaluation point.
    pub samples: Vec<Vec<f64>>,
    /// Shapiro-Wilk results where computable.
    pub normality: Vec<NormalityRow>,
    /// QQ pairs per evaluation point.
    pub qq: Vec<QqSeries>,
    /// Monte-Carlo MISE against the true density.
    pub mise: f64,
    /// Replications that produced an estimate.
    pub succeeded: usize,
    /// Replications that failed (any error).
    pub failed: usize,
    /// Subset of failures with nonpositive innovation-variance estimate.
    pub degenerate: usize,
    /// Estimator admissibility warnings (identical across replications).
    pub warnings: Vec<String>,
    /// Per-replication grid curves; in-memory only, kept out of the JSON to
    /// bound report size.
    #[serde(skip)]
    pub rep_grids: Vec<Vec<f64>>,
    /// Wall-clock duration; excluded from the report so identical runs
    /// serialize to identical bytes. Reported on stderr by the CLI.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl ReplicationReport {
    /// Canonical JSON with every float rounded to 12 significant digits,
    /// so identical spec+seed runs serialize byte-identically across
    /// platforms that agree in arithmetic.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)
            .map_err(|e| Error::Io(format!("serializing report: {e}")))?;
        round_floats(&mut v)?;
        serde_json::to_string_pretty(&v)
            .map_err(|e| Error::Io(format!("serializing report: {e}")))
    }
}

fn round_floats(v: &mut serde_json::Value) -> Result<()> {
    match v {
        serde_json::Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().expect("checked is_f64");
                let r: f64 = format!("{f:.12e}").parse().expect("round-trip parse");
                *n = serde_json::Number::from_f64(r).ok_or_else(|| {
                    Error::Io(format!("non-finite value {f} cannot enter the report"))
                })?;
            }
            Ok(())
        }
        serde_json::Value::Array(a) => {
            for x in a {
                round_floats(x)?;
            }
            Ok(())
        }
        serde_json::Value::Object(o) => {
            for (_, x) in o.iter_mut() {
                round_floats(x)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Ascending Chebyshev-midpoint grid of the given size on (-1, 1).
pub fn chebyshev_grid(size: usize) -> Vec<f64> {
    (0..size)
        .map(|i| {
            (std::f64::consts::PI * ((size - 1 - i) as f64 + 0.5) / size as f64).cos()
        })
        .collect()
}

/// Linear interpolation quantile of an ascending sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ordinary least squares fit y = a + b x; returns (slope, intercept, r2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "linear fit needs two equal-length samples of size >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "linear fit needs at least two distinct abscissas".into(),
        ));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

struct RepOutcome {
    grid_vals: Vec<f64>,
    point_vals: Vec<f64>,
}

/// Run a Monte-Carlo experiment: M seeded replications, estimator applied
/// to each, all analyses assembled. Deterministic given the spec; the run
/// fails only when more than 20 percent of replications fail.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ReplicationReport> {
    let started = Instant::now();
    let (mixture, config, _) = spec.resolve()?;
    let warnings = config.validate()?;
    let grid = chebyshev_grid(spec.grid);
    let true_density: Vec<f64> = grid.iter().map(|&x| mixture.density(x)).collect();

    let synthesizer = if spec.n_members.is_limit() {
        Some(GaussianSynthesizer::new(&mixture, spec.n, spec.sigma_eps2)?)
    } else {
        None
    };
    let route = match spec.n_members {
        PanelSize::Word(LimitWord::Limit) => "synthesis".to_string(),
        PanelSize::Members(nm) => format!("panel({nm})"),
    };

    let outcomes: Vec<std::result::Result<RepOutcome, Error>> = (0..spec.m)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(spec.seed, rep as u64);
            let series = match (&synthesizer, spec.n_members) {
                (Some(s), _) => s.synthesize(rep_seed)?,
                (None, PanelSize::Members(nm)) => {
                    let pc = PanelConfig::new(
                        nm as usize,
                        spec.n,
                        spec.sigma_eps2.sqrt(),
                        rep_seed,
                    );
                    aggregate(&mixture, &pc)?
                }
                (None, PanelSize::Word(_)) => unreachable!("limit builds a synthesizer"),
            };
            let est = estimate(&series.values, &config)?;
            Ok(RepOutcome {
                grid_vals: grid.iter().map(|&x| est.density(x)).collect(),
                point_vals: spec.eval_points.iter().map(|&x| est.density(x)).collect(),
            })
        })
        .collect();

    let mut rep_grids = Vec::new();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); spec.eval_points.len()];
    let mut failed = 0usize;
    let mut degenerate = 0usize;
    for o in outcomes {
        match o {
            Ok(r) => {
                for (slot, v) in samples.iter_mut().zip(&r.point_vals) {
                    slot.push(*v);
                }
                rep_grids.push(r.grid_vals);
            }
            Err(e) => {
                failed += 1;
                if matches!(e, Error::DegenerateSample(_)) {
                    degenerate += 1;
                }
            }
        }
    }
    let succeeded = spec.m - failed;
    if failed * 5 > spec.m {
        return Err(Error::DegenerateSample(format!(
            "{failed} of {} replications failed (more than 20 percent); \
             {degenerate} had nonpositive innovation-variance estimates",
            spec.m
        )));
    }

    let mut boxplot = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; rep_grids.len()];
    for (i, &x) in grid.iter().enumerate() {
        for (r, g) in rep_grids.iter().enumerate() {
            column[r] = g[i];
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
        boxplot.push(BoxplotRow {
            x,
            q05: quantile(&column, 0.05),
            q25: quantile(&column, 0.25),
            q50: quantile(&column, 0.50),
            q75: quantile(&column, 0.75),
            q95: quantile(&column, 0.95),
        });
    }

    let mut normality = Vec::new();
    let mut qq = Vec::new();
    for (i, &x) in spec.eval_points.iter().enumerate() {
        match normality_test(&samples[i]) {
            Ok((w, p)) => normality.push(NormalityRow { x, w, p_value: p }),
            Err(_) => {}
        }
        if samples[i].len() >= 3 {
            qq.push(QqSeries { x, pairs: qq_data(&samples[i])? });
        }
    }

    let mut report = ReplicationReport {
        schema_version: SCHEMA_VERSION.to_string(),
        spec: spec.clone(),
        route,
        alpha: config.alpha,
        kn: config
            .kn_override
            .map(Ok)
            .unwrap_or_else(|| crate::estimator::truncation_kn(spec.n, config.gamma))?,
        grid_kind: format!("chebyshev-midpoint-{}", spec.grid),
        grid,
        true_density,
        boxplot,
        eval_points: spec.eval_points.clone(),
        samples,
        normality,
        qq,
        mise: 0.0,
        succeeded,
        failed,
        degenerate,
        warnings,
        rep_grids,
        elapsed_secs: 0.0,
    };
    report.mise = mise(&report, &mixture)?;
    report.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Monte-Carlo mean integrated squared error against a known density,
/// m^(-1) sum_m int (phi_hat^(m) - phi)^2 dx by trapezoid quadrature on the
/// report grid. Needs the in-memory replication curves of a fresh run.
pub fn mise(report: &ReplicationReport, truth: &MixtureDensity) -> Result<f64> {
    if report.rep_grids.is_empty() {
        return Err(Error::InsufficientData(
            "report carries no in-memory replication curves; MISE can only \
             be computed on a freshly run report"
                .into(),
        ));
    }
    let phi: Vec<f64> = report.grid.iter().map(|&x| truth.density(x)).collect();
    let mut acc = 0.0;
    for g in &report.rep_grids {
        let mut ise = 0.0;
        for i in 1..report.grid.len() {
            let e0 = g[i - 1] - phi[i - 1];
            let e1 = g[i] - phi[i];
            ise += 0.5 * (e0 * e0 + e1 * e1) * (report.grid[i] - report.grid[i - 1]);
        }
        acc += ise;
    }
    Ok(acc / report.rep_grids.len() as f64)
}

/// Fraction of grid points in [lo, hi] where the replication median is
/// within one interquartile range of the true density.
pub fn median_iqr_coverage(report: &ReplicationReport, lo: f64, hi: f64) -> Result<f64> {
    let mut inside = 0usize;
    let mut total = 0usize;
    for (row, &phi) in report.boxplot.iter().zip(&report.true_density) {
        if row.x < lo || row.x > hi {
            continue;
        }
        total += 1;
        if (row.q50 - phi).abs() <= row.q75 - row.q25 {
            inside += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidParameter(format!(
            "no grid points fall in [{lo}, {hi}]"
        )));
    }
    Ok(inside as f64 / total as f64)
}

// Royston (1995) AS R94 constants for the Shapiro-Wilk approximation.
const SW_C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const SW_C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const SW_C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const SW_C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const SW_C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const SW_C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const SW_G: [f64; 2] = [-2.273, 0.459];
const SW_PI6: f64 = 1.909859;
const SW_STQR: f64 = 1.047198;

fn poly(c: &[f64], x: f64) -> f64 {
    let mut v = 0.0;
    for &coef in c.iter().rev() {
        v = v * x + coef;
    }
    v
}

/// Shapiro-Wilk normality test, Royston's AS R94 approximation.
///
/// Returns (W, p) for 3 <= n <= 5000; p-values follow the published
/// three-regime approximation (arcsine at n = 3, log-gamma transform for
/// n <= 11, log-normal for larger n).
pub fn normality_test(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "Shapiro-Wilk supports 3 <= n <= 5000, got {n}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "Shapiro-Wilk input must be finite".into(),
        ));
    }
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite by the check above"));
    if x[n - 1] - x[0] < 1e-19 {
        return Err(Error::DegenerateSample(
            "Shapiro-Wilk is undefined for a constant sample".into(),
        ));
    }
    let an = n as f64;
    let n2 = n / 2;
    let mut a = vec![0.0; n2];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        // Blom scores for the lower half; a[0] is the most negative
        let an25 = an + 0.25;
        let mut summ2 = 0.0;
        for (i, slot) in a.iter_mut().enumerate() {
            *slot = normal_ppf(((i + 1) as f64 - 0.375) / an25);
            summ2 += *slot * *slot;
        }
        summ2 *= 2.0;
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&SW_C1, rsn) - a[0] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -a[1] / ssumm2 + poly(&SW_C2, rsn);
            let fac = ((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2usize, fac)
        } else {
            let fac = ((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1usize, fac)
        };
        a[0] = a1;
        for slot in a.iter_mut().skip(i1) {
            *slot = -*slot / fac;
        }
    }
    // W as squared correlation between order statistics and coefficients
    let xbar = x.iter().sum::<f64>() / an;
    let mut sax = 0.0;
    let mut ssa = 0.0;
    let mut ssx = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let j = n - 1 - i;
        let c = match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        };
        let xd = xi - xbar;
        sax += c * xd;
        ssa += c * c;
        ssx += xd * xd;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;
    if n == 3 {
        let p = (SW_PI6 * (w.sqrt().asin() - SW_STQR)).clamp(0.0, 1.0);
        return Ok((w, p));
    }
    if !(w1 > 0.0) {
        return Ok((1.0, 1.0));
    }
    let y = w1.ln();
    let z = if n <= 11 {
        let gam = poly(&SW_G, an);
        if y >= gam {
            return Ok((w, 1e-19));
        }
        let y2 = -(gam - y).ln();
        (y2 - poly(&SW_C3, an)) / poly(&SW_C4, an).exp()
    } else {
        let ln_n = an.ln();
        (y - poly(&SW_C5, ln_n)) / poly(&SW_C6, ln_n).exp()
    };
    Ok((w, normal_sf(z)))
}

/// QQ pairs: sorted standardized sample against standard-normal quantiles
/// of the Blom plotting positions (i - 3/8) / (n + 1/4).
pub fn qq_data(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "QQ data needs at least 3 samples, got {n}"
        )));
    }
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample(
            "QQ data is undefined for a constant sample".into(),
        ));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let pos = ((i + 1) as f64 - 0.375) / (n as f64 + 0.25);
            (normal_ppf(pos), (v - mean) / sd)
        })
        .collect())
}

/// Variance-decay regression result.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceSlope {
    /// Estimated decay exponent, minus the OLS slope of log variance on
    /// log n.
    pub gamma_hat: f64,
    /// OLS intercept.
    pub intercept: f64,
    /// (n, Monte-Carlo variance) per sample size.
    pub variances: Vec<(usize, f64)>,
    /// Evaluation point the variances were measured at.
    pub x: f64,
}

/// Monte-Carlo variance of phi_hat(x) across replications for each n, then
/// ordinary least squares of log variance on log n. The truncation level is
/// held fixed across n (the spec's kn, default 3) so the regression
/// measures pure variance decay rather than bandwidth growth.
pub fn variance_slope(spec: &ExperimentSpec, n_values: &[usize]) -> Result<VarianceSlope> {
    if n_values.len() < 4 {
        return Err(Error::Config(format!(
            "variance slope needs at least 4 sample sizes, got {}",
            n_values.len()
        )));
    }
    let mut seen = n_values.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(
            "variance slope sample sizes must be distinct".into(),
        ));
    }
    let x = *spec.eval_points.first().ok_or_else(|| {
        Error::Config("variance slope needs an evaluation point".into())
    })?;
    let kn = spec.kn.unwrap_or(3);
    let mut variances = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut sub = spec.clone();
        sub.n = n;
        sub.kn = Some(kn);
        sub.seed = derive_seed(spec.seed, n as u64);
        sub.eval_points = vec![x];
        sub.grid = 8; // boxplot grid unused here; keep the run light
        let report = run_experiment(&sub)?;
        let s = &report.samples[0];
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let var =
            s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s.len() as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::DegenerateSample(format!(
                "variance estimate at n = {n} is {var}; cannot take logs"
            )));
        }
        variances.push((n, var));
    }
    let lx: Vec<f64> = variances.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ly: Vec<f64> = variances.iter().map(|(_, v)| v.ln()).collect();
    let (slope, intercept, _) = linear_fit(&lx, &ly)?;
    Ok(VarianceSlope { gamma_hat: -slope, intercept, variances, x })
}

/// Write the box-plot figure CSV: per grid point, the quantile curves and
/// the true density.
pub fn write_fig1_boxplot<W: std::io::Write>(report: &ReplicationReport, out: &mut W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let emit = |w: &mut std::io::BufWriter<&mut W>, s: String| {
        w.write_all(s.as_bytes())
            .map_err(|e| Error::Io(format!("writing boxplot CSV: {e}")))
    };
    emit(&mut w, "x,q05,q25,q50,q75,q95,true_phi\n".to_string())?;
    for (row, t) in report.boxplot.iter().zip(&report.true_density) {
        emit(
            &mut w,
            format!(
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                row.x, row.q05, row.q25, row.q50, row.q75, row.q95, t
            ),
        )?;
    }
    w.flush().map_err(|e| Error::Io(format!("writing boxplot CSV: {e}")))
}

/// Write the QQ figure CSV: evaluation point, theoretical quantile,
/// standardized sample quantile.
pub fn write_fig2_qq<W: std::io::Write>(report: &ReplicationReport, out: &mut W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    w.write_all(b"x,theoretical,sample\n")
        .map_err(|e| Error::Io(format!("writing QQ CSV: {e}")))?;
    for series in &report.qq {
        for (t, s) in &series.pairs {
            w.write_all(format!("{:.12e},{t:.12e},{s:.12e}\n", series.x).as_bytes())
                .map_err(|e| Error::Io(format!("writing QQ CSV: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::Io(format!("writing QQ CSV: {e}")))
}

/// Write the variance-decay figure CSV with the fitted line in a comment
/// header.
pub fn write_fig3_loglog<W: std::io::Write>(slope: &VarianceSlope, out: &mut W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    w.write_all(
        format!(
            "# gamma_hat = {:.12e}, intercept = {:.12e}, x = {:.12e}\nn,variance,ln_n,ln_variance\n",
            slope.gamma_hat, slope.intercept, slope.x
        )
        .as_bytes(),
    )
    .map_err(|e| Error::Io(format!("writing loglog CSV: {e}")))?;
    for &(n, v) in &slope.variances {
        w.write_all(
            format!("{n},{v:.12e},{:.12e},{:.12e}\n", (n as f64).ln(), v.ln()).as_bytes(),
        )
        .map_err(|e| Error::Io(format!("writing loglog CSV: {e}")))?;
    }
    w.flush().map_err(|e| Error::Io(format!("writing loglog CSV: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn shapiro_wilk_reference_vectors() {
        // reference statistic/p-value pairs computed with the published
        // AS R94 approximation
        let cases: [(&[f64], f64, f64); 4] = [
            (&[1.0, 2.0, 3.0, 4.0, 5.0], 0.9867621552, 0.9671739350),
            (
                &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
                0.9701646111,
                0.8923673062,
            ),
            (
                &[
                    1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0,
                    13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0,
                ],
                0.9603751832,
                0.5513717458,
            ),
            // Royston's published worked example (n = 11 weights data)
            (
                &[
                    148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0,
                    195.0, 236.0,
                ],
                0.7888146949,
                0.0067038141,
            ),
        ];
        for (v, w_ref, p_ref) in cases {
            let (w, p) = normality_test(v).unwrap();
            assert!(
                (w - w_ref).abs() < 5e-6,
                "W for n = {}: {w} vs {w_ref}",
                v.len()
            );
            assert!(
                (p - p_ref).abs() < 5e-5,
                "p for n = {}: {p} vs {p_ref}",
                v.len()
            );
        }
    }

    #[test]
    fn shapiro_wilk_edge_cases() {
        assert!(normality_test(&[1.0, 2.0]).is_err(), "n < 3");
        assert!(normality_test(&vec![0.5; 2000]).is_err(), "constant sample");
        assert!(normality_test(&vec![0.0; 6000]).is_err(), "n > 5000");
        // exact normal scores of size 500: W near 1, p near 1
        let z: Vec<f64> = (1..=500)
            .map(|i| normal_ppf((i as f64 - 0.375) / 500.25))
            .collect();
        let (w, p) = normality_test(&z).unwrap();
        assert!((w - 0.9998101041).abs() < 1e-6, "norm-scores W = {w}");
        assert!(p > 0.999, "norm-scores p = {p}");
        // strongly lognormal data rejects hard
        let e: Vec<f64> = z.iter().step_by(7).map(|v| v.exp()).collect();
        let (w, p) = normality_test(&e).unwrap();
        assert!((w - 0.6585534352).abs() < 1e-5, "lognorm W = {w}");
        assert!(p < 1e-6, "lognorm p = {p}");
    }

    #[test]
    fn shapiro_wilk_size_calibration() {
        // at the 5 percent level, about 5 percent of Gaussian samples reject
        let mut rng = stream_rng(101, 0);
        let mut rejections = 0;
        for _ in 0..200 {
            let v: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (_, p) = normality_test(&v).unwrap();
            if p < 0.05 {
                rejections += 1;
            }
        }
        assert!(
            (2..=22).contains(&rejections),
            "expected about 10 of 200 rejections, got {rejections}"
        );
    }

    #[test]
    fn qq_data_shape() {
        let mut rng = stream_rng(7, 0);
        let v: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let pairs = qq_data(&v).unwrap();
        assert_eq!(pairs.len(), 500);
        for w in pairs.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1, "monotone in both axes");
        }
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys).unwrap();
        assert!(
            (0.9..=1.1).contains(&slope),
            "Gaussian QQ slope {slope} outside [0.9, 1.1]"
        );
        assert!(r2 > 0.98, "Gaussian QQ r2 = {r2}");
        assert!(qq_data(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn spec_toml_round_trip_and_validation() {
        let toml_src = r#"
            case = 1
            n = 1500
            N = "limit"
            M = 10
            gamma = 0.41
            eval_points = [-0.5, 0.3]
            seed = 7
        "#;
        let spec = ExperimentSpec::from_toml_str(toml_src).unwrap();
        assert_eq!(spec.case, Some(1));
        assert!(spec.n_members.is_limit());
        assert_eq!(spec.m, 10);
        let (_, config, d) = spec.resolve().unwrap();
        assert_eq!(config.alpha, 0.5, "case preset alpha");
        assert_eq!(d, Some(0.25));
        let back = ExperimentSpec::from_toml_str(&spec.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, spec);
        // integer N parses into the panel route
        let spec2 = ExperimentSpec::from_toml_str(
            "case = 2\nn = 64\nN = 12\nM = 2\ngamma = 0.41\n",
        )
        .unwrap();
        assert_eq!(spec2.n_members, PanelSize::Members(12));
        // invalid configs
        assert!(ExperimentSpec::from_toml_str("n = 64\nM = 2\n")
            .unwrap()
            .resolve()
            .is_err(), "mixture or case required");
        assert!(
            ExperimentSpec::from_toml_str("case = 1\nn = 64\nM = 1\ngamma = 0.41\n")
                .unwrap()
                .resolve()
                .is_err(),
            "M >= 2"
        );
        assert!(
            ExperimentSpec::from_toml_str(
                "case = 1\nn = 64\nM = 2\ngamma = 0.41\neval_points = [1.5]\n"
            )
            .unwrap()
            .resolve()
            .is_err(),
            "eval points inside (-1, 1)"
        );
        assert!(
            ExperimentSpec::from_toml_str("case = 1\nn = 64\nM = 2\n")
                .unwrap()
                .resolve()
                .is_err(),
            "gamma or kn required"
        );
        // explicit mixture table
        let spec3 = ExperimentSpec::from_toml_str(
            "n = 256\nM = 2\nkn = 3\nalpha = 0.5\n\n[mixture]\nfamily = \"farima\"\nd = 0.25\n",
        )
        .unwrap();
        let (m, _, _) = spec3.resolve().unwrap();
        assert!(m.descriptor().contains("farima"));
    }

    #[test]
    fn smoke_run_is_well_formed_and_deterministic() {
        let mut spec = ExperimentSpec::case_preset(1).unwrap();
        spec.n = 64;
        spec.m = 8;
        spec.grid = 32;
        spec.eval_points = vec![-0.5, 0.5];
        let report = run_experiment(&spec).unwrap();
        assert_eq!(report.succeeded + report.failed, 8, "counts sum to M");
        assert_eq!(report.boxplot.len(), 32);
        for row in &report.boxplot {
            assert!(
                row.q05 <= row.q25
                    && row.q25 <= row.q50
                    && row.q50 <= row.q75
                    && row.q75 <= row.q95,
                "quantiles monotone at x = {}",
                row.x
            );
        }
        assert!(report.mise >= 0.0);
        assert_eq!(report.samples.len(), 2);
        let again = run_experiment(&spec).unwrap();
        assert_eq!(
            report.to_canonical_json().unwrap(),
            again.to_canonical_json().unwrap(),
            "same spec and seed must serialize byte-identically"
        );
        // a different seed changes the samples
        let mut other = spec.clone();
        other.seed = 2;
        let shifted = run_experiment(&other).unwrap();
        assert_ne!(
            report.to_canonical_json().unwrap(),
            shifted.to_canonical_json().unwrap()
        );
    }

    #[test]
    fn panel_route_smoke() {
        let mut spec = ExperimentSpec::case_preset(1).unwrap();
        spec.n = 64;
        spec.m = 4;
        spec.grid = 16;
        spec.n_members = PanelSize::Members(25);
        let report = run_experiment(&spec).unwrap();
        assert_eq!(report.route, "panel(25)");
        assert_eq!(report.succeeded + report.failed, 4);
    }

    #[test]
    fn mise_zero_for_perfect_estimates() {
        let mut spec = ExperimentSpec::case_preset(1).unwrap();
        spec.n = 64;
        spec.m = 2;
        spec.grid = 64;
        let (mixture, _, _) = spec.resolve().unwrap();
        let mut report = run_experiment(&spec).unwrap();
        let truth: Vec<f64> = report.grid.iter().map(|&x| mixture.density(x)).collect();
        report.rep_grids = vec![truth.clone(), truth];
        let v = mise(&report, &mixture).unwrap();
        assert_eq!(v, 0.0, "identical curves give zero MISE");
    }

    #[test]
    fn variance_slope_iid_oracle() {
        // Monte-Carlo variance of the sample mean of n iid normals decays
        // exactly like 1/n; the regression must recover the exponent
        let ns = [500usize, 1000, 2000, 4000];
        let m = 800;
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for (k, &n) in ns.iter().enumerate() {
            let mut means = Vec::with_capacity(m);
            for rep in 0..m {
                let mut rng = stream_rng(derive_seed(11, k as u64), rep as u64);
                let s: f64 =
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).sum();
                means.push(s / n as f64);
            }
            let mean = means.iter().sum::<f64>() / m as f64;
            let var =
                means.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
            lx.push((n as f64).ln());
            ly.push(var.ln());
        }
        let (slope, _, _) = linear_fit(&lx, &ly).unwrap();
        let gamma_hat = -slope;
        assert!(
            (gamma_hat - 1.0).abs() < 0.05,
            "iid mean estimator must give gamma_hat near 1, got {gamma_hat}"
        );
    }

    #[test]
    fn variance_slope_rejects_duplicates() {
        let spec = ExperimentSpec::case_preset(1).unwrap();
        let e = variance_slope(&spec, &[500, 500, 1000, 2000]);
        assert!(e.is_err(), "duplicate sample sizes must be rejected");
        let e = variance_slope(&spec, &[500, 1000, 2000]);
        assert!(e.is_err(), "needs at least 4 sizes");
    }

    #[test]
    fn figure_csv_writers() {
        let mut spec = ExperimentSpec::case_preset(1).unwrap();
        spec.n = 64;
        spec.m = 6;
        spec.grid = 16;
        let report = run_experiment(&spec).unwrap();
        let mut buf = Vec::new();
        write_fig1_boxplot(&report, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,q05,q25,q50,q75,q95,true_phi\n"));
        assert_eq!(s.lines().count(), 17, "header plus one row per grid point");
        let mut buf = Vec::new();
        write_fig2_qq(&report, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 6, "header plus one row per replication");
        let slope = VarianceSlope {
            gamma_hat: 1.0,
            intercept: 0.5,
            variances: vec![(500, 1e-3), (1000, 5e-4)],
            x: -0.5,
        };
        let mut buf = Vec::new();
        write_fig3_loglog(&slope, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# gamma_hat = "));
        assert_eq!(s.lines().count(), 4);
    }

    #[test]
    fn chebyshev_grid_is_ascending_and_interior() {
        let g = chebyshev_grid(512);
        assert_eq!(g.len(), 512);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g[0] > -1.0 && g[511] < 1.0);
        assert!(g[0] < -0.99 && g[511] > 0.99, "grid spans nearly all of (-1, 1)");
    }
}
