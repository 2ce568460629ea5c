//! Gaussian-copula Monte Carlo design with a misclassified treatment, its
//! large-sample population objects, and coverage experiments.
//!
//! Latent structure per row:
//! `T* = 1{-3/4 + Z/2 + U1 >= 0}`, `Y = 2 T* + e2`,
//! `T = T* xor 1{U3 <= γ}`, `R = T* xor 1{U4 <= γ}`, `Z ~ Bernoulli(1/2)`,
//! where `U_k = Φ(x_k)` for equicorrelated standard normals `x`.

use std::io::Write;

use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::identify::{itt, regime_tv, wald, IdentifiedSet, Regime, ZERO_TOL};
use crate::inference::{multiplier_key, test_with_draws, TestResult};
use crate::moments::MomentSystem;
use crate::partition::{CellPartition, PartitionConfig, Spacing};
use crate::propensity::{PropensityModel, DEFAULT_ETA};
use crate::rng::StreamKey;
use crate::stats::norm_cdf;

/// The true LATE of the design: every complier gains 2.
pub const TRUE_LATE: f64 = 2.0;
pub const POPULATION_K_N: usize = 64;
pub const MIN_POPULATION_N: usize = 100_000;

/// How the latent normals are correlated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaMixing {
    /// `x = C e` standardised, with `C` the equicorrelation matrix itself;
    /// the resulting pairwise correlation is `effective_rho(rho, dim)`.
    #[default]
    CorrelationMatrix,
    /// `x = C^{1/2} e`: pairwise correlation exactly `rho`.
    SymmetricRoot,
}

/// Outcome noise `e2` as a function of the second latent coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeNoise {
    /// `Φ^{-1}(U2)`, i.e. the latent normal itself.
    #[default]
    NormalScore,
    /// `Φ(U2)` applied to the uniform `U2`.
    NormalCdf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub gamma: f64,
    pub rho: f64,
    pub with_r: bool,
    pub n: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub mixing: CopulaMixing,
    pub noise: OutcomeNoise,
}

impl DgpConfig {
    pub fn new(gamma: f64, n: usize, seed: u64) -> Self {
        DgpConfig {
            gamma,
            rho: 0.25,
            with_r: false,
            n,
            seed,
            latent_dim: 4,
            mixing: CopulaMixing::default(),
            noise: OutcomeNoise::default(),
        }
    }

    pub fn with_r(mut self, with_r: bool) -> Self {
        self.with_r = with_r;
        self
    }

    /// The reading where `(U1, U2, U3[, U4])` has copula correlation exactly
    /// `rho` and the outcome noise is `Φ(U2)`.
    pub fn literal(mut self) -> Self {
        self.mixing = CopulaMixing::SymmetricRoot;
        self.noise = OutcomeNoise::NormalCdf;
        self.latent_dim = if self.with_r { 4 } else { 3 };
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.latent_dim == 3 || self.latent_dim == 4) {
            return Err(Error::invalid("latent dimension must be 3 or 4"));
        }
        if self.with_r && self.latent_dim < 4 {
            return Err(Error::invalid("the repeated measurement needs a 4-dimensional latent draw"));
        }
        check_rho(self.rho, self.latent_dim)?;
        if self.n < 2 {
            return Err(Error::invalid("n must be at least 2"));
        }
        Ok(())
    }

    /// Pairwise correlation of the latent normals actually used.
    pub fn latent_rho(&self) -> f64 {
        match self.mixing {
            CopulaMixing::SymmetricRoot => self.rho,
            CopulaMixing::CorrelationMatrix => effective_rho(self.rho, self.latent_dim),
        }
    }
}

fn check_rho(rho: f64, dim: usize) -> Result<()> {
    let lo = -1.0 / (dim as f64 - 1.0);
    if !(rho > lo && rho < 1.0) {
        return Err(Error::invalid(format!(
            "rho = {rho} does not give a positive definite {dim}x{dim} equicorrelation matrix"
        )));
    }
    Ok(())
}

/// Correlation of `C e` (standardised) for the `dim`-dimensional
/// equicorrelation matrix `C` with off-diagonal `rho`.
pub fn effective_rho(rho: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let cross = 2.0 * rho * (1.0 - rho) + d * rho * rho;
    cross / ((1.0 - rho).powi(2) + 2.0 * rho * (1.0 - rho) + d * rho * rho)
}

/// Symmetric square root of the equicorrelation matrix,
/// `sqrt(1 - rho) I + c 11'`.
#[derive(Clone, Copy, Debug)]
struct EquicorrRoot {
    diag: f64,
    c: f64,
}

impl EquicorrRoot {
    fn new(rho: f64, dim: usize) -> Self {
        let d = dim as f64;
        let a = (1.0 - rho).sqrt();
        let c = ((1.0 - rho + d * rho).sqrt() - a) / d;
        EquicorrRoot { diag: a, c }
    }

    fn apply(&self, e: &[f64], out: &mut [f64]) {
        let s: f64 = e.iter().sum();
        for (o, x) in out.iter_mut().zip(e) {
            *o = self.diag * x + self.c * s;
        }
    }
}

fn latent_normals(key: StreamKey, rho: f64, dim: usize, out: &mut [f64]) -> crate::rng::CounterRng {
    let mut rng = key.rng();
    let mut e = [0.0; 8];
    for v in e.iter_mut().take(dim) {
        *v = StandardNormal.sample(&mut rng);
    }
    EquicorrRoot::new(rho, dim).apply(&e[..dim], out);
    rng
}

/// `n × dim` copula uniforms, row-major. Row `i` uses stream `root(seed).child(i)`.
pub fn gaussian_copula_sample(dim: usize, rho: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(1..=8).contains(&dim) {
        return Err(Error::invalid("copula dimension must lie in 1..=8"));
    }
    if dim > 1 {
        check_rho(rho, dim)?;
    }
    let root = StreamKey::root(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; dim];
            latent_normals(root.child(i as u64), rho, dim, &mut x);
            x.iter().map(|&v| norm_cdf(v)).collect()
        })
        .collect();
    Ok(rows.concat())
}

/// A simulated sample with its latent true treatment.
#[derive(Clone, Debug)]
pub struct SimulatedSample {
    pub table: ObservationTable,
    pub t_star: Vec<u8>,
}

struct Row {
    y: f64,
    t: u8,
    z: u8,
    r: u8,
    t_star: u8,
}

pub fn simulate_with_latent(config: &DgpConfig) -> Result<SimulatedSample> {
    config.validate()?;
    let root = StreamKey::root(config.seed);
    let rho = config.latent_rho();
    let dim = config.latent_dim;
    let gamma = config.gamma;
    let rows: Vec<Row> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut x = [0.0; 4];
            let mut rng = latent_normals(root.child(i as u64), rho, dim, &mut x[..dim]);
            let z = u8::from(rng.open01() < 0.5);
            let u1 = norm_cdf(x[0]);
            let t_star = u8::from(-0.75 + 0.5 * f64::from(z) + u1 >= 0.0);
            let noise = match config.noise {
                OutcomeNoise::NormalScore => x[1],
                OutcomeNoise::NormalCdf => norm_cdf(norm_cdf(x[1])),
            };
            let y = 2.0 * f64::from(t_star) + noise;
            let t = t_star ^ u8::from(norm_cdf(x[2]) <= gamma);
            let r = if dim == 4 {
                t_star ^ u8::from(norm_cdf(x[3]) <= gamma)
            } else {
                0
            };
            Row { y, t, z, r, t_star }
        })
        .collect();
    let y = rows.iter().map(|r| r.y).collect();
    let t = rows.iter().map(|r| r.t).collect();
    let z = rows.iter().map(|r| r.z).collect();
    let t_star = rows.iter().map(|r| r.t_star).collect();
    let mut table = ObservationTable::new(y, t, z)?;
    if config.with_r {
        table = table.with_r(rows.iter().map(|r| r.r).collect())?;
    }
    Ok(SimulatedSample { table, t_star })
}

pub fn simulate(config: &DgpConfig) -> Result<ObservationTable> {
    Ok(simulate_with_latent(config)?.table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationObjects {
    pub gamma: f64,
    pub regime: Regime,
    pub k_n: usize,
    pub late: f64,
    pub itt: f64,
    pub tv: f64,
    /// Both endpoints are `None` when TV is zero: the identified set is
    /// the whole parameter space and there is no finite upper bound.
    pub identified_lo: Option<f64>,
    pub identified_hi: Option<f64>,
    pub wald: f64,
}

impl PopulationObjects {
    pub fn unbounded_above(&self) -> bool {
        self.identified_hi.is_none()
    }
}

/// Plug-in population objects on an already simulated large sample, with
/// `k_n` equal-width outcome cells crossed per regime.
pub fn population_from_sample(
    table: &ObservationTable,
    gamma: f64,
    regime: Regime,
    k_n: usize,
) -> Result<PopulationObjects> {
    if regime == Regime::Conditional {
        return Err(Error::invalid("the simulation design has no covariates"));
    }
    let cfg = PartitionConfig::new(k_n, regime.variant())
        .spacing(Spacing::EqualWidth)
        .uncapped();
    let partition = CellPartition::build(table, &cfg)?;
    let tv = regime_tv(table, &partition, None, regime)?;
    let itt = itt(table, None)?;
    let wald = wald(table, None)?;
    let (lo, hi) = if tv <= ZERO_TOL {
        (None, None)
    } else {
        let set = IdentifiedSet::classify(itt, tv, None, ZERO_TOL)?;
        (Some(set.lo), Some(set.hi))
    };
    Ok(PopulationObjects {
        gamma,
        regime,
        k_n,
        late: TRUE_LATE,
        itt,
        tv,
        identified_lo: lo,
        identified_hi: hi,
        wald,
    })
}

/// Large-sample population objects for one design point.
pub fn population_objects(
    gamma: f64,
    regime: Regime,
    n_mc: usize,
    seed: u64,
) -> Result<PopulationObjects> {
    if n_mc < MIN_POPULATION_N {
        return Err(Error::invalid(format!(
            "n_mc = {n_mc} is below the minimum of {MIN_POPULATION_N}"
        )));
    }
    let dgp = DgpConfig::new(gamma, n_mc, seed).with_r(regime == Regime::WithR);
    let table = simulate(&dgp)?;
    population_from_sample(&table, gamma, regime, POPULATION_K_N)
}

#[derive(Clone, Debug)]
pub struct CoverageConfig {
    pub gamma: f64,
    pub regime: Regime,
    pub thetas: Vec<f64>,
    pub n: usize,
    pub sims: usize,
    pub b_reps: usize,
    pub k_n: usize,
    pub alpha: f64,
    pub seed: u64,
    pub pi: f64,
    pub mixing: CopulaMixing,
    pub noise: OutcomeNoise,
}

impl CoverageConfig {
    pub fn new(gamma: f64, regime: Regime, thetas: Vec<f64>, seed: u64) -> Self {
        CoverageConfig {
            gamma,
            regime,
            thetas,
            n: 500,
            sims: 500,
            b_reps: 500,
            k_n: 2,
            alpha: 0.05,
            seed,
            pi: 0.5,
            mixing: CopulaMixing::default(),
            noise: OutcomeNoise::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageRow {
    pub theta: f64,
    pub coverage: f64,
    pub sims: usize,
    pub n: usize,
    pub k_n: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub regime: Regime,
}

/// Tests of every θ on one replication's sample.
pub fn coverage_replication(cfg: &CoverageConfig, rep: usize) -> Result<Vec<TestResult>> {
    let key = StreamKey::root(cfg.seed).child(rep as u64);
    let mut dgp = DgpConfig::new(cfg.gamma, cfg.n, key.child(0).raw()).with_r(cfg.regime == Regime::WithR);
    dgp.mixing = cfg.mixing;
    dgp.noise = cfg.noise;
    let table = simulate(&dgp)?;
    let part_cfg = PartitionConfig::new(cfg.k_n, cfg.regime.variant()).spacing(Spacing::EqualWidth);
    let partition = CellPartition::build(&table, &part_cfg)?;
    let pi = PropensityModel::constant(cfg.pi, table.n(), DEFAULT_ETA)?;
    let sys = MomentSystem::new(&table, &pi, &partition)?;
    let draws = sys.draw_multipliers(multiplier_key(key.child(1).raw(), 0), cfg.b_reps);
    Ok(cfg
        .thetas
        .iter()
        .map(|&theta| test_with_draws(&sys, &draws, theta, cfg.alpha))
        .collect())
}

/// Fraction of replications whose test accepts each θ (π held fixed).
pub fn coverage_experiment(cfg: &CoverageConfig) -> Result<Vec<CoverageRow>> {
    if cfg.regime == Regime::Conditional {
        return Err(Error::invalid("the simulation design has no covariates"));
    }
    if cfg.sims == 0 || cfg.thetas.is_empty() {
        return Err(Error::invalid("need at least one simulation and one θ"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {}", cfg.alpha)));
    }
    let results: Vec<Vec<TestResult>> = (0..cfg.sims)
        .into_par_iter()
        .map(|s| coverage_replication(cfg, s))
        .collect::<Result<_>>()?;
    Ok(cfg
        .thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let accepted = results.iter().filter(|r| !r[k].reject).count();
            CoverageRow {
                theta,
                coverage: accepted as f64 / cfg.sims as f64,
                sims: cfg.sims,
                n: cfg.n,
                k_n: cfg.k_n,
                alpha: cfg.alpha,
                gamma: cfg.gamma,
                regime: cfg.regime,
            }
        })
        .collect())
}

pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "coverage", "sims", "n", "k_n", "alpha", "gamma", "regime"])?;
    for r in rows {
        w.write_record([
            format!("{:?}", r.theta),
            format!("{:?}", r.coverage),
            r.sims.to_string(),
            r.n.to_string(),
            r.k_n.to_string(),
            format!("{:?}", r.alpha),
            format!("{:?}", r.gamma),
            r.regime.name().to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Published population values with their acceptance tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TableTarget {
    pub regime: Regime,
    pub gamma: f64,
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub wald: Option<(f64, f64)>,
}

const fn target(regime: Regime, gamma: f64, hi: f64, wald: Option<(f64, f64)>) -> TableTarget {
    TableTarget {
        regime,
        gamma,
        lo: (1.0, 0.02),
        hi: (hi, 0.05),
        wald,
    }
}

pub const TABLE_TARGETS: [TableTarget; 9] = [
    target(Regime::Unconditional, 0.0, 2.00, Some((2.00, 0.05))),
    target(Regime::Unconditional, 0.2, 2.41, Some((3.01, 0.10))),
    target(Regime::Unconditional, 0.4, 2.64, Some((8.72, 0.5))),
    target(Regime::WithR, 0.0, 2.00, None),
    target(Regime::WithR, 0.2, 2.26, None),
    target(Regime::WithR, 0.4, 2.62, None),
    target(Regime::NoT, 0.0, 2.67, None),
    target(Regime::NoT, 0.2, 2.67, None),
    target(Regime::NoT, 0.4, 2.68, None),
];

/// One row of the replicated tables. Target columns are empty for sweep rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub objects: PopulationObjects,
    pub target: Option<TableTarget>,
}

impl ReplicationRow {
    /// `None` for sweep rows, otherwise whether every targeted value is
    /// within tolerance.
    pub fn within_tolerance(&self) -> Option<bool> {
        let t = self.target?;
        let near = |v: Option<f64>, (want, tol): (f64, f64)| v.is_some_and(|v| (v - want).abs() <= tol);
        let o = &self.objects;
        Some(
            near(o.identified_lo, t.lo)
                && near(o.identified_hi, t.hi)
                && t.wald.is_none_or(|w| near(Some(o.wald), w)),
        )
    }
}

/// Population objects for every reference design point at
/// [`POPULATION_K_N`] cells, followed by a sweep over `sweep_k` for each
/// regime and γ. One large sample per (γ, with R) is shared by the regimes.
pub fn replicate_tables(n_mc: usize, seed: u64, sweep_k: &[usize]) -> Result<Vec<ReplicationRow>> {
    if n_mc < MIN_POPULATION_N {
        return Err(Error::invalid(format!(
            "n_mc = {n_mc} is below the minimum of {MIN_POPULATION_N}"
        )));
    }
    let gammas = [0.0, 0.2, 0.4];
    let samples: Vec<(f64, bool, ObservationTable)> = gammas
        .iter()
        .flat_map(|&g| [(g, false), (g, true)])
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(g, r)| Ok((g, r, simulate(&DgpConfig::new(g, n_mc, seed).with_r(r))?)))
        .collect::<Result<_>>()?;
    let sample = |g: f64, regime: Regime| {
        let r = regime == Regime::WithR;
        &samples.iter().find(|(sg, sr, _)| *sg == g && *sr == r).expect("sample").2
    };
    let mut jobs: Vec<(Regime, f64, usize, Option<TableTarget>)> = TABLE_TARGETS
        .iter()
        .map(|t| (t.regime, t.gamma, POPULATION_K_N, Some(*t)))
        .collect();
    for regime in [Regime::Unconditional, Regime::WithR, Regime::NoT] {
        for &g in &gammas {
            for &k in sweep_k {
                jobs.push((regime, g, k, None));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(regime, g, k, target)| {
            Ok(ReplicationRow {
                objects: population_from_sample(sample(g, regime), g, regime, k)?,
                target,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_replication_csv<W: Write>(rows: &[ReplicationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "regime", "gamma", "k_n", "itt", "tv", "lower", "upper", "unbounded_above", "wald",
        "target_lower", "tol_lower", "target_upper", "tol_upper", "target_wald", "tol_wald", "within_tolerance",
    ])?;
    for r in rows {
        let o = &r.objects;
        let t = r.target;
        w.write_record([
            o.regime.name().to_string(),
            format!("{:.1}", o.gamma),
            o.k_n.to_string(),
            format!("{:.6}", o.itt),
            format!("{:.6}", o.tv),
            opt(o.identified_lo),
            opt(o.identified_hi),
            o.unbounded_above().to_string(),
            format!("{:.6}", o.wald),
            opt(t.map(|t| t.lo.0)),
            opt(t.map(|t| t.lo.1)),
            opt(t.map(|t| t.hi.0)),
            opt(t.map(|t| t.hi.1)),
            opt(t.and_then(|t| t.wald).map(|w| w.0)),
            opt(t.and_then(|t| t.wald).map(|w| w.1)),
            r.within_tolerance().map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
