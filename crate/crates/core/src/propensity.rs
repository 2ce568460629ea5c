//! Linear-probability propensity model for the instrument and a finite
//! candidate set standing in for its confidence region.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::stats::quantile_higher;

pub const DEFAULT_ETA: f64 = 0.01;
pub const RIDGE_PENALTY: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PropensityModel {
    beta: Vec<f64>,
    eta: f64,
    fitted: Vec<f64>,
    ridge: bool,
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::invalid(format!("eta must lie in (0, 0.5), got {eta}")));
    }
    Ok(())
}

impl PropensityModel {
    /// A known, constant propensity for `n` rows.
    pub fn constant(p: f64, n: usize, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("propensity must lie in (0, 1), got {p}")));
        }
        Ok(PropensityModel {
            beta: vec![p],
            eta,
            fitted: vec![p.clamp(eta, 1.0 - eta); n],
            ridge: false,
        })
    }

    /// Plug-in `mean(z)` without covariates.
    pub fn sample_share(data: &ObservationTable) -> Self {
        let p = data.mean_z();
        let eta = DEFAULT_ETA.min(p / 2.0).min((1.0 - p) / 2.0);
        PropensityModel {
            beta: vec![p],
            eta,
            fitted: vec![p.clamp(eta, 1.0 - eta); data.n()],
            ridge: false,
        }
    }

    /// Model with coefficients `beta` evaluated on the covariates of `data`.
    pub fn from_beta(data: &ObservationTable, beta: Vec<f64>, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let fitted = match data.covariates() {
            Some(v) => {
                if v.dim() != beta.len() {
                    return Err(Error::invalid("coefficient length does not match covariates"));
                }
                (0..data.n())
                    .map(|i| {
                        let raw: f64 = v.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
                        raw.clamp(eta, 1.0 - eta)
                    })
                    .collect()
            }
            None => {
                if beta.len() != 1 {
                    return Err(Error::invalid("without covariates beta has one entry"));
                }
                vec![beta[0].clamp(eta, 1.0 - eta); data.n()]
            }
        };
        Ok(PropensityModel {
            beta,
            eta,
            fitted,
            ridge: false,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn used_ridge(&self) -> bool {
        self.ridge
    }

    pub fn n(&self) -> usize {
        self.fitted.len()
    }

    /// Instrument weights `(z - pi) / (pi (1 - pi))`.
    pub fn weights(&self, data: &ObservationTable) -> Result<Vec<f64>> {
        if self.n() != data.n() {
            return Err(Error::invalid(format!(
                "propensity model has {} rows, table has {}",
                self.n(),
                data.n()
            )));
        }
        Ok(data
            .z()
            .iter()
            .zip(&self.fitted)
            .map(|(&z, &p)| (f64::from(z) - p) / (p * (1.0 - p)))
            .collect())
    }
}

fn design(data: &ObservationTable) -> DMatrix<f64> {
    match data.covariates() {
        Some(v) => DMatrix::from_fn(data.n(), v.dim(), |i, j| v.row(i)[j]),
        None => DMatrix::from_element(data.n(), 1, 1.0),
    }
}

/// Least squares on the normal equations; `None` when singular.
fn ols(x: &DMatrix<f64>, z: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut xtx = x.transpose() * x;
    for j in 0..xtx.nrows() {
        xtx[(j, j)] += ridge;
    }
    let xtz = x.transpose() * z;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&xtz);
    beta.iter().all(|b| b.is_finite()).then_some(beta)
}

fn well_conditioned(x: &DMatrix<f64>) -> bool {
    let xtx = x.transpose() * x;
    let ev = xtx.symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(0.0f64, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min > max * 1e-12
}

/// Least-squares regression of `z` on the covariates, fitted values clipped
/// to `[eta, 1 - eta]`. With `allow_ridge`, near-singular designs get a
/// tiny ridge penalty and the model is flagged.
pub fn fit_lpm(data: &ObservationTable, eta: f64, allow_ridge: bool) -> Result<PropensityModel> {
    check_eta(eta)?;
    let x = design(data);
    let z = DVector::from_iterator(data.n(), data.z().iter().map(|&z| f64::from(z)));
    let (beta, ridge) = if well_conditioned(&x) {
        (ols(&x, &z, 0.0).ok_or(Error::RankDeficient)?, false)
    } else if allow_ridge {
        (ols(&x, &z, RIDGE_PENALTY).ok_or(Error::RankDeficient)?, true)
    } else {
        return Err(Error::RankDeficient);
    };
    let mut model = PropensityModel::from_beta(data, beta.iter().copied().collect(), eta)?;
    model.ridge = ridge;
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct PropensityCandidateSet {
    /// The center fit is always first.
    pub candidates: Vec<PropensityModel>,
    pub delta: f64,
    pub retained_draws: usize,
    pub max_deviation: f64,
}

impl PropensityCandidateSet {
    pub fn single(center: PropensityModel) -> Self {
        PropensityCandidateSet {
            candidates: vec![center],
            delta: 0.0,
            retained_draws: 0,
            max_deviation: 0.0,
        }
    }

    pub fn center(&self) -> &PropensityModel {
        &self.candidates[0]
    }

    pub fn summary(&self) -> PropensitySummary {
        PropensitySummary {
            beta: self.center().beta().to_vec(),
            eta: self.center().eta(),
            delta: self.delta,
            candidate_count: self.candidates.len(),
            ridge: self.center().used_ridge(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PropensitySummary {
    pub beta: Vec<f64>,
    pub eta: f64,
    pub delta: f64,
    pub candidate_count: usize,
    pub ridge: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct RegionConfig {
    pub delta: f64,
    pub b_reps: usize,
    /// Defaults to `2d + 1`.
    pub m_candidates: Option<usize>,
    pub eta: f64,
    pub allow_ridge: bool,
    pub seed: u64,
}

impl RegionConfig {
    pub fn new(delta: f64, seed: u64) -> Self {
        RegionConfig {
            delta,
            b_reps: 200,
            m_candidates: None,
            eta: DEFAULT_ETA,
            allow_ridge: true,
            seed,
        }
    }
}

/// Nonparametric-bootstrap region for `beta`. Draws whose studentized
/// max-coordinate deviation from the center falls within the `(1 - delta)`
/// bootstrap quantile are retained; the candidates are the center plus the
/// retained draws attaining each coordinate's minimum and maximum.
/// `delta = 0` returns the center alone.
pub fn propensity_region(data: &ObservationTable, cfg: &RegionConfig) -> Result<PropensityCandidateSet> {
    let center = fit_lpm(data, cfg.eta, cfg.allow_ridge)?;
    if cfg.delta == 0.0 {
        return Ok(PropensityCandidateSet::single(center));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 0.5) {
        return Err(Error::invalid(format!("delta must lie in [0, 0.5), got {}", cfg.delta)));
    }
    if cfg.b_reps < 100 {
        return Err(Error::invalid(format!(
            "b_reps = {} is too few for the region quantile (need at least 100)",
            cfg.b_reps
        )));
    }
    let x = design(data);
    let z = DVector::from_iterator(data.n(), data.z().iter().map(|&z| f64::from(z)));
    let d = x.ncols();
    let n = data.n();
    let ridge = if center.used_ridge() { RIDGE_PENALTY } else { 0.0 };
    let root = StreamKey::root(cfg.seed);

    let draws: Vec<Option<Vec<f64>>> = (0..cfg.b_reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = root.child(b as u64).rng();
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xb = DMatrix::from_fn(n, d, |i, j| x[(idx[i], j)]);
            let zb = DVector::from_fn(n, |i, _| z[idx[i]]);
            ols(&xb, &zb, ridge).map(|b| b.iter().copied().collect())
        })
        .collect();
    let draws: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if draws.len() < 100 {
        return Err(Error::RankDeficient);
    }

    let beta = center.beta();
    let se: Vec<f64> = (0..d)
        .map(|j| {
            let m = draws.iter().map(|b| b[j]).sum::<f64>() / draws.len() as f64;
            let v = draws.iter().map(|b| (b[j] - m).powi(2)).sum::<f64>() / draws.len() as f64;
            v.sqrt().max(f64::MIN_POSITIVE)
        })
        .collect();
    let dev: Vec<f64> = draws
        .iter()
        .map(|b| {
            (0..d)
                .map(|j| (b[j] - beta[j]).abs() / se[j])
                .fold(0.0, f64::max)
        })
        .collect();
    let cut = quantile_higher(&dev, 1.0 - cfg.delta);
    let retained: Vec<&Vec<f64>> = draws
        .iter()
        .zip(&dev)
        .filter(|(_, &e)| e <= cut)
        .map(|(b, _)| b)
        .collect();

    let m = cfg.m_candidates.unwrap_or(2 * d + 1).max(1);
    let mut picks: Vec<Vec<f64>> = Vec::new();
    for j in 0..d {
        let lo = retained
            .iter()
            .min_by(|a, b| a[j].total_cmp(&b[j]))
            .expect("non-empty");
        let hi = retained
            .iter()
            .max_by(|a, b| a[j].total_cmp(&b[j]))
            .expect("non-empty");
        for b in [lo, hi] {
            if !picks.contains(b) {
                picks.push((*b).clone());
            }
        }
    }
    picks.truncate(m.saturating_sub(1));

    let mut candidates = vec![center.clone()];
    for b in picks {
        let mut model = PropensityModel::from_beta(data, b, cfg.eta)?;
        model.ridge = center.used_ridge();
        candidates.push(model);
    }
    Ok(PropensityCandidateSet {
        candidates,
        delta: cfg.delta,
        retained_draws: retained.len(),
        max_deviation: cut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;

    fn table_with_v(z: Vec<u8>, cols: Vec<Vec<f64>>) -> ObservationTable {
        let n = z.len();
        let names = (0..cols.len()).map(|j| format!("v{j}")).collect();
        ObservationTable::new(vec![0.0; n], vec![0; n], z)
            .unwrap()
            .with_covariates(Covariates::from_columns(names, cols).unwrap())
            .unwrap()
    }

    #[test]
    fn constant_design_gives_the_mean() {
        let z = vec![1, 0, 0, 1, 1, 0, 1, 1];
        let d = ObservationTable::new(vec![0.0; 8], vec![0; 8], z).unwrap();
        let m = fit_lpm(&d, 0.01, false).unwrap();
        assert!((m.beta()[0] - 5.0 / 8.0).abs() < 1e-14);
        assert!(m.fitted().iter().all(|&p| (p - 0.625).abs() < 1e-14));
    }

    #[test]
    fn saturated_discrete_design_matches_group_frequencies() {
        // v in {0,1}; P(Z=1|v=0)=1/4, P(Z=1|v=1)=2/3
        let v = vec![0., 0., 0., 0., 1., 1., 1.];
        let z = vec![1, 0, 0, 0, 1, 1, 0];
        let d = table_with_v(z, vec![v.clone()]);
        let m = fit_lpm(&d, 0.01, false).unwrap();
        for (i, &p) in m.fitted().iter().enumerate() {
            let want = if v[i] == 0.0 { 0.25 } else { 2.0 / 3.0 };
            assert!((p - want).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_caps_extreme_fits() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let z = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let d = table_with_v(z, vec![v]);
        let m = fit_lpm(&d, 0.05, false).unwrap();
        assert!(m.fitted().iter().all(|&p| (0.05..=0.95).contains(&p)));
        assert_eq!(m.fitted()[9], 0.95);
        assert_eq!(m.fitted()[0], 0.05);
    }

    #[test]
    fn collinear_design_needs_ridge() {
        let v1: Vec<f64> = (0..12).map(|i| f64::from(i % 3)).collect();
        let v2: Vec<f64> = v1.iter().map(|x| 2.0 * x).collect();
        let z = (0..12).map(|i| (i % 2) as u8).collect();
        let d = table_with_v(z, vec![v1, v2]);
        assert!(matches!(fit_lpm(&d, 0.01, false), Err(Error::RankDeficient)));
        let m = fit_lpm(&d, 0.01, true).unwrap();
        assert!(m.used_ridge());
    }

    #[test]
    fn constant_only_region_is_an_interval_around_the_mean() {
        let n = 200;
        let z = (0..n).map(|i| u8::from(i % 5 < 2)).collect();
        let d = ObservationTable::new(vec![0.0; n], vec![0; n], z).unwrap();
        let mut cfg = RegionConfig::new(0.05, 3);
        cfg.b_reps = 400;
        let set = propensity_region(&d, &cfg).unwrap();
        assert_eq!(set.candidates.len(), 3);
        let b: Vec<f64> = set.candidates.iter().map(|m| m.beta()[0]).collect();
        assert!(b[1] < b[0] && b[0] < b[2]);
        assert!((b[0] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn smaller_delta_gives_weakly_larger_region() {
        let n = 150;
        let z = (0..n).map(|i| u8::from((i * 7) % 11 < 5)).collect();
        let d = ObservationTable::new(vec![0.0; n], vec![0; n], z).unwrap();
        let mut wide = RegionConfig::new(0.01, 9);
        wide.b_reps = 300;
        let narrow = RegionConfig { delta: 0.45, ..wide };
        let a = propensity_region(&d, &wide).unwrap();
        let b = propensity_region(&d, &narrow).unwrap();
        assert!(a.max_deviation >= b.max_deviation);
    }

    #[test]
    fn region_refuses_few_draws() {
        let d = ObservationTable::new(vec![0.0; 4], vec![0; 4], vec![0, 1, 0, 1]).unwrap();
        let mut cfg = RegionConfig::new(0.05, 1);
        cfg.b_reps = 50;
        assert!(propensity_region(&d, &cfg).is_err());
        cfg.delta = 0.0;
        assert_eq!(propensity_region(&d, &cfg).unwrap().candidates.len(), 1);
    }
}
