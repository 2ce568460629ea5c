//! Max-statistic moment-inequality test with a Gaussian multiplier
//! bootstrap, and its inversion over a θ grid.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, ParameterSpace};
use crate::error::{Error, Result};
use crate::moments::{MomentEstimates, MomentStatus, MomentSystem, MultiplierDraws};
use crate::partition::CellPartition;
use crate::propensity::{PropensityCandidateSet, PropensityModel};
use crate::rng::StreamKey;
use crate::stats::quantile_higher;

pub const DEFAULT_GRID_POINTS: usize = 401;
pub const MIN_GRID_POINTS: usize = 50;
pub const MIN_B_REPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub theta: f64,
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    pub p_n_effective: usize,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    Ok(())
}

fn check_b_reps(b_reps: usize) -> Result<()> {
    if b_reps < MIN_B_REPS {
        return Err(Error::invalid(format!(
            "b_reps = {b_reps} is below the minimum of {MIN_B_REPS}"
        )));
    }
    Ok(())
}

/// `max_j √n m̂_j / σ̂_j` over non-degenerate moments; `+∞` when a
/// degenerate moment has positive mean. `None` when every moment is
/// degenerate and non-positive.
pub fn statistic_of(est: &MomentEstimates, n: usize) -> Option<f64> {
    if est.any_rejecting() {
        return Some(f64::INFINITY);
    }
    let rn = (n as f64).sqrt();
    est.m
        .iter()
        .zip(&est.sigma)
        .zip(&est.status)
        .filter(|(_, s)| matches!(s, MomentStatus::Active | MomentStatus::Deselected))
        .map(|((m, sd), _)| rn * m / sd)
        .reduce(f64::max)
}

pub fn test_statistic(
    data: &ObservationTable,
    theta: f64,
    pi: &PropensityModel,
    partition: &CellPartition,
) -> Result<f64> {
    let sys = MomentSystem::new(data, pi, partition)?;
    statistic_of(&sys.evaluate(theta), sys.n()).ok_or(Error::AllMomentsDegenerate)
}

/// Multiplier streams for candidate `k` under root `seed`.
pub fn multiplier_key(seed: u64, candidate: usize) -> StreamKey {
    StreamKey::root(seed).child(candidate as u64)
}

/// Tests θ with pre-drawn multipliers. When every moment is degenerate
/// and non-positive nothing can reject, so θ is accepted.
pub fn test_with_draws(sys: &MomentSystem, draws: &MultiplierDraws, theta: f64, alpha: f64) -> TestResult {
    let est = sys.evaluate(theta);
    let p_n_effective = est.effective();
    let statistic = statistic_of(&est, sys.n()).unwrap_or(f64::NEG_INFINITY);
    let critical = if p_n_effective == 0 {
        0.0
    } else {
        let maxima = sys.bootstrap_maxima(&est, draws);
        quantile_higher(&maxima, 1.0 - alpha)
    };
    TestResult {
        theta,
        statistic,
        critical,
        reject: statistic > critical,
        p_n_effective,
    }
}

/// Bootstrap `(1 - alpha)` critical value with the higher-order-statistic
/// quantile.
pub fn bootstrap_critical(
    data: &ObservationTable,
    theta: f64,
    pi: &PropensityModel,
    partition: &CellPartition,
    alpha: f64,
    b_reps: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_b_reps(b_reps)?;
    let sys = MomentSystem::new(data, pi, partition)?;
    let draws = sys.draw_multipliers(multiplier_key(seed, 0), b_reps);
    Ok(test_with_draws(&sys, &draws, theta, alpha).critical)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaGrid {
    /// Equally spaced over the parameter space, endpoints included.
    Even(usize),
    /// Explicit grid points.
    Points(Vec<f64>),
}

impl ThetaGrid {
    pub fn points(&self, space: &ParameterSpace) -> Result<Vec<f64>> {
        match self {
            ThetaGrid::Even(k) => {
                if *k < MIN_GRID_POINTS {
                    return Err(Error::invalid(format!(
                        "grid_points = {k} is below the minimum of {MIN_GRID_POINTS}"
                    )));
                }
                let step = (space.theta_hi - space.theta_lo) / (*k - 1) as f64;
                Ok((0..*k)
                    .map(|i| {
                        if i + 1 == *k {
                            space.theta_hi
                        } else {
                            space.theta_lo + step * i as f64
                        }
                    })
                    .collect())
            }
            ThetaGrid::Points(p) => {
                if p.is_empty() {
                    return Err(Error::invalid("explicit θ grid is empty"));
                }
                if let Some(x) = p.iter().find(|x| !space.contains(**x)) {
                    return Err(Error::invalid(format!("θ = {x} lies outside the parameter space")));
                }
                let mut p = p.clone();
                p.sort_by(f64::total_cmp);
                p.dedup();
                Ok(p)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CiConfig {
    pub alpha: f64,
    pub grid: ThetaGrid,
    pub b_reps: usize,
    pub seed: u64,
    pub preselect_beta: Option<f64>,
}

impl CiConfig {
    pub fn new(alpha: f64, b_reps: usize, seed: u64) -> Self {
        CiConfig {
            alpha,
            grid: ThetaGrid::Even(DEFAULT_GRID_POINTS),
            b_reps,
            seed,
            preselect_beta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub alpha: f64,
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
    pub unbounded_above: bool,
    pub grid: Vec<f64>,
    pub accepted_mask: Vec<bool>,
    pub b_reps: usize,
    pub seed: u64,
    /// Set when no grid point was accepted and the reported point is the
    /// one closest to acceptance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ConfidenceInterval {
    pub fn accepted(&self) -> Vec<f64> {
        self.grid
            .iter()
            .zip(&self.accepted_mask)
            .filter(|(_, a)| **a)
            .map(|(g, _)| *g)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.accepted_mask.iter().any(|a| *a)
    }
}

/// Union over candidate propensities of the θ grid points the test accepts.
pub fn confidence_interval(
    data: &ObservationTable,
    partition: &CellPartition,
    candidates: &PropensityCandidateSet,
    theta_space: &ParameterSpace,
    cfg: &CiConfig,
) -> Result<ConfidenceInterval> {
    check_alpha(cfg.alpha)?;
    check_b_reps(cfg.b_reps)?;
    let grid = cfg.grid.points(theta_space)?;
    let mut accepted = vec![false; grid.len()];
    let mut best_gap = (f64::INFINITY, grid[0]);

    for (k, pi) in candidates.candidates.iter().enumerate() {
        let sys = MomentSystem::new(data, pi, partition)?.with_preselection(cfg.preselect_beta)?;
        let draws = sys.draw_multipliers(multiplier_key(cfg.seed, k), cfg.b_reps);
        let results: Vec<TestResult> = grid
            .par_iter()
            .map(|&theta| test_with_draws(&sys, &draws, theta, cfg.alpha))
            .collect();
        for (g, r) in results.iter().enumerate() {
            accepted[g] |= !r.reject;
            let gap = r.statistic - r.critical;
            if gap < best_gap.0 {
                best_gap = (gap, r.theta);
            }
        }
    }

    let acc: Vec<f64> = grid
        .iter()
        .zip(&accepted)
        .filter(|(_, a)| **a)
        .map(|(g, _)| *g)
        .collect();
    let (lo, hi, warning) = match (acc.first(), acc.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi, None),
        _ => {
            let msg = format!(
                "no grid point accepted; reporting θ = {} with the smallest statistic-minus-critical gap",
                best_gap.1
            );
            warn!("{msg}");
            (best_gap.1, best_gap.1, Some(msg))
        }
    };
    let unbounded_above = *accepted.last().expect("non-empty grid");
    Ok(ConfidenceInterval {
        alpha: cfg.alpha,
        delta: candidates.delta,
        lo,
        hi,
        unbounded_above,
        grid,
        accepted_mask: accepted,
        b_reps: cfg.b_reps,
        seed: cfg.seed,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Variant;
    use crate::stats::norm_quantile;

    fn sample(n: usize, shift: f64) -> ObservationTable {
        let mut rng = StreamKey::root(11).rng();
        let (mut y, mut t, mut z) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let zi = u8::from(rng.open01() < 0.5);
            let ti = u8::from(rng.open01() < 0.3 + 0.4 * f64::from(zi));
            y.push(shift * f64::from(ti) + rng.open01());
            t.push(ti);
            z.push(zi);
        }
        ObservationTable::new(y, t, z).unwrap()
    }

    fn partition() -> CellPartition {
        CellPartition::from_edges(vec![0.5, 1.0, 1.5], Variant::WithT, vec![]).unwrap()
    }

    #[test]
    fn all_negative_moments_never_reject() {
        let est = MomentEstimates {
            theta: 1.0,
            m: vec![-0.3, -0.1, -2.0],
            sigma: vec![1.0, 0.5, 2.0],
            status: vec![MomentStatus::Active; 3],
        };
        let s = statistic_of(&est, 100).unwrap();
        assert!((s - (-2.0)).abs() < 1e-12);
        assert!(!(s > 0.5));
    }

    #[test]
    fn statistic_is_scale_invariant() {
        let d = sample(200, 2.0);
        let y2: Vec<f64> = d.y().iter().map(|y| 2.0 * y).collect();
        let d2 = ObservationTable::new(y2, d.t().to_vec(), d.z().to_vec()).unwrap();
        let pi = PropensityModel::constant(0.5, d.n(), 0.01).unwrap();
        let p = CellPartition::from_edges(vec![0.5], Variant::WithT, vec![]).unwrap();
        let p2 = CellPartition::from_edges(vec![1.0], Variant::WithT, vec![]).unwrap();
        for theta in [0.7, 1.5, 3.0] {
            let a = test_statistic(&d, theta, &pi, &p).unwrap();
            let b = test_statistic(&d2, 2.0 * theta, &pi, &p2).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn smaller_alpha_gives_larger_critical_value() {
        let d = sample(300, 2.0);
        let pi = PropensityModel::sample_share(&d);
        let p = partition();
        let c10 = bootstrap_critical(&d, 2.0, &pi, &p, 0.10, 400, 3).unwrap();
        let c05 = bootstrap_critical(&d, 2.0, &pi, &p, 0.05, 400, 3).unwrap();
        assert!(c05 >= c10);
    }

    #[test]
    fn single_active_moment_critical_is_normal_quantile() {
        // y-only partition with one cell and θ = 0: every moment equals ±w y,
        // so g_1 and the sign moments coincide and g_2 is their negative
        let n = 10_000;
        let d = sample(n, 0.0);
        let pi = PropensityModel::sample_share(&d);
        let p = CellPartition::from_edges(vec![], Variant::YOnly, vec![]).unwrap();
        let sys = MomentSystem::new(&d, &pi, &p).unwrap();
        let draws = sys.draw_multipliers(multiplier_key(1, 0), 5000);
        let r = test_with_draws(&sys, &draws, 0.0, 0.05);
        // max of Z and -Z (perfectly dependent duplicates) is |Z|
        let want = norm_quantile(1.0 - 0.025);
        assert!((r.critical - want).abs() < 0.08, "{} vs {want}", r.critical);
    }

    #[test]
    fn one_point_grid_inside_the_set_is_accepted() {
        let d = sample(400, 2.0);
        let pi = PropensityModel::sample_share(&d);
        let p = partition();
        let itt = crate::identify::itt(&d, None).unwrap();
        let tv = crate::identify::tv_distance(&d, &p, None).unwrap();
        let mid = 0.5 * (itt + itt / tv);
        let mut cfg = CiConfig::new(0.05, 300, 5);
        cfg.grid = ThetaGrid::Points(vec![mid]);
        let space = ParameterSpace::new(-10.0, 10.0).unwrap();
        let ci = confidence_interval(&d, &p, &PropensityCandidateSet::single(pi), &space, &cfg).unwrap();
        assert_eq!(ci.accepted(), vec![mid]);
        assert_eq!((ci.lo, ci.hi), (mid, mid));
    }

    #[test]
    fn ci_is_reproducible_and_widens_with_smaller_alpha() {
        let d = sample(300, 2.0);
        let pi = PropensityModel::sample_share(&d);
        let p = partition();
        let space = ParameterSpace::new(-2.0, 8.0).unwrap();
        let set = PropensityCandidateSet::single(pi);
        let mut cfg = CiConfig::new(0.10, 300, 17);
        cfg.grid = ThetaGrid::Even(101);
        let a = confidence_interval(&d, &p, &set, &space, &cfg).unwrap();
        let b = confidence_interval(&d, &p, &set, &space, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.alpha = 0.05;
        let c = confidence_interval(&d, &p, &set, &space, &cfg).unwrap();
        for (x, y) in a.accepted_mask.iter().zip(&c.accepted_mask) {
            assert!(!x || *y);
        }
        assert!(c.lo <= a.lo && c.hi >= a.hi);
    }

    #[test]
    fn preconditions_are_enforced() {
        let d = sample(100, 2.0);
        let pi = PropensityModel::sample_share(&d);
        let p = partition();
        assert!(bootstrap_critical(&d, 1.0, &pi, &p, 0.05, 100, 1).is_err());
        assert!(bootstrap_critical(&d, 1.0, &pi, &p, 0.6, 500, 1).is_err());
        let space = ParameterSpace::new(0.0, 1.0).unwrap();
        assert!(ThetaGrid::Even(10).points(&space).is_err());
        assert_eq!(ThetaGrid::Even(51).points(&space).unwrap().len(), 51);
    }
}
