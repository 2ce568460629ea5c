//! The moment system: `g_1 = -w sgn(θ) Y`, `g_2 = w sgn(θ) Y - |θ|` and
//! `g_{2+j} = w (|θ| h_j - sgn(θ) Y)` for every enumerated sign function
//! `h_j`, with instrument weight `w = (Z - π) / (π (1 - π))`.
//!
//! Because each `h_j` is constant on cells, every moment's mean and variance
//! is a function of per-cell sufficient statistics that do not depend on θ.
//! Likewise the bootstrap numerators only need per-cell multiplier sums, so
//! one pass over the rows serves every θ and every sign function.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::partition::{index_bit, CellPartition, CELL_CAP};
use crate::propensity::PropensityModel;
use crate::rng::StreamKey;
use crate::scalar::Scalar;

/// Sample mean of `w_i x_i`.
pub fn weighted_delta(data: &ObservationTable, pi: &PropensityModel, x: &[f64]) -> Result<f64> {
    if x.len() != data.n() {
        return Err(Error::invalid("x must have one entry per row"));
    }
    let w = pi.weights(data)?;
    let s = w.iter().zip(x).fold(0.0, |acc, (w, x)| acc + w * x);
    Ok(s / data.n() as f64)
}

/// Per-cell weight sums `S_c = n^{-1} Σ_{i in c} w_i`; `Σ_c h(c) S_c` is the
/// weighted delta of the sign function `h`.
pub fn cell_weight_sums(
    data: &ObservationTable,
    pi: &PropensityModel,
    partition: &CellPartition,
) -> Result<Vec<f64>> {
    let w = pi.weights(data)?;
    let cells = partition.assign(data)?;
    let mut s = vec![0.0; partition.cell_count()];
    for (c, w) in cells.iter().zip(&w) {
        s[*c] += w;
    }
    let n = data.n() as f64;
    Ok(s.into_iter().map(|x| x / n).collect())
}

/// `max_h Σ_c h(c) x_c` over sign functions, by enumeration.
pub fn max_over_sign_functions<S: Scalar>(x: &[S]) -> Result<S> {
    let cells = x.len();
    if cells > CELL_CAP {
        return Err(Error::CellCap { cells, cap: CELL_CAP });
    }
    let mut best: Option<S> = None;
    for j in 0..1usize << cells {
        let v = S::sum_iter(x.iter().enumerate().map(|(c, xc)| {
            if j & index_bit(c, cells) != 0 {
                xc.clone() * S::half()
            } else {
                -(xc.clone() * S::half())
            }
        }));
        best = Some(match best {
            Some(b) => S::max_of(b, v),
            None => v,
        });
    }
    Ok(best.expect("at least one sign function"))
}

#[derive(Clone, Copy, Debug, Default)]
struct CellStats {
    share: f64,
    w_mean: f64,
    b_mean: f64,
    // centered within-cell cross products divided by the full n
    sww: f64,
    swb: f64,
    sbb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentStatus {
    Active,
    /// σ̂ = 0 and m̂ ≤ 0: cannot reject, dropped.
    DroppedDegenerate,
    /// σ̂ = 0 and m̂ > 0: the moment rejects on its own.
    RejectingDegenerate,
    /// Removed by the optional pre-selection step (still counts towards
    /// the statistic, not towards the critical value).
    Deselected,
}

const DEGENERATE_REL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MomentEstimates {
    pub theta: f64,
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    pub status: Vec<MomentStatus>,
}

impl MomentEstimates {
    pub fn p_n(&self) -> usize {
        self.m.len()
    }

    pub fn effective(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == MomentStatus::Active)
            .count()
    }

    pub fn any_rejecting(&self) -> bool {
        self.status.contains(&MomentStatus::RejectingDegenerate)
    }

    pub fn degenerate_count(&self) -> usize {
        self.status
            .iter()
            .filter(|s| {
                matches!(
                    s,
                    MomentStatus::DroppedDegenerate | MomentStatus::RejectingDegenerate
                )
            })
            .count()
    }
}

/// Per-replicate multiplier sums, independent of θ.
#[derive(Clone, Debug)]
pub struct MultiplierDraws {
    reps: usize,
    cells: usize,
    /// `Σ_{i in c} ε_i w_i`, row-major `reps × cells`.
    e: Vec<f64>,
    /// `Σ ε_i w_i y_i`.
    by: Vec<f64>,
    /// `Σ ε_i`.
    s: Vec<f64>,
}

impl MultiplierDraws {
    pub fn reps(&self) -> usize {
        self.reps
    }
}

#[derive(Clone, Debug)]
pub struct MomentSystem {
    n: usize,
    cells: usize,
    stats: Vec<CellStats>,
    b_mean: f64,
    b_var: f64,
    cell_of: Vec<usize>,
    w: Vec<f64>,
    b: Vec<f64>,
    preselect_beta: Option<f64>,
}

impl MomentSystem {
    pub fn new(data: &ObservationTable, pi: &PropensityModel, partition: &CellPartition) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(Error::invalid("need at least two rows"));
        }
        let cells = partition.cell_count();
        if cells > CELL_CAP {
            return Err(Error::CellCap { cells, cap: CELL_CAP });
        }
        let w = pi.weights(data)?;
        let b: Vec<f64> = w.iter().zip(data.y()).map(|(w, y)| w * y).collect();
        let cell_of = partition.assign(data)?;

        let mut count = vec![0usize; cells];
        let mut sw = vec![0.0; cells];
        let mut sb = vec![0.0; cells];
        for i in 0..n {
            let c = cell_of[i];
            count[c] += 1;
            sw[c] += w[i];
            sb[c] += b[i];
        }
        let mut stats: Vec<CellStats> = (0..cells)
            .map(|c| {
                let k = count[c].max(1) as f64;
                CellStats {
                    share: count[c] as f64 / n as f64,
                    w_mean: sw[c] / k,
                    b_mean: sb[c] / k,
                    ..Default::default()
                }
            })
            .collect();
        for i in 0..n {
            let st = &mut stats[cell_of[i]];
            let dw = w[i] - st.w_mean;
            let db = b[i] - st.b_mean;
            st.sww += dw * dw;
            st.swb += dw * db;
            st.sbb += db * db;
        }
        let nf = n as f64;
        for st in &mut stats {
            st.sww /= nf;
            st.swb /= nf;
            st.sbb /= nf;
        }
        let b_mean = b.iter().sum::<f64>() / nf;
        let b_var = stats
            .iter()
            .map(|s| s.sbb + s.share * (s.b_mean - b_mean).powi(2))
            .sum();
        Ok(MomentSystem {
            n,
            cells,
            stats,
            b_mean,
            b_var,
            cell_of,
            w,
            b,
            preselect_beta: None,
        })
    }

    /// Enables moment pre-selection with tuning `beta` in (0, 1).
    pub fn with_preselection(mut self, beta: Option<f64>) -> Result<Self> {
        if let Some(b) = beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("pre-selection beta must lie in (0, 1), got {b}")));
            }
        }
        self.preselect_beta = beta;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn p_n(&self) -> usize {
        (1usize << self.cells) + 2
    }

    /// Mean and standard deviation (divisor n) of every moment at θ.
    pub fn evaluate(&self, theta: f64) -> MomentEstimates {
        let s = theta.sgn();
        let at = theta.abs();
        let p = self.p_n();
        let mut m = Vec::with_capacity(p);
        let mut sigma = Vec::with_capacity(p);

        let sd_b = self.b_var.max(0.0).sqrt();
        m.push(-s * self.b_mean);
        sigma.push(sd_b);
        m.push(s * self.b_mean - at);
        sigma.push(sd_b);

        let mut mu = vec![0.0; self.cells];
        for j in 0..1usize << self.cells {
            let mut mj = 0.0;
            let mut within = 0.0;
            for (c, st) in self.stats.iter().enumerate() {
                let h = if j & index_bit(c, self.cells) != 0 { 0.5 } else { -0.5 };
                mu[c] = at * h * st.w_mean - s * st.b_mean;
                mj += st.share * mu[c];
                within += at * at * 0.25 * st.sww - 2.0 * at * h * s * st.swb + st.sbb;
            }
            let between: f64 = self
                .stats
                .iter()
                .zip(&mu)
                .map(|(st, &u)| st.share * (u - mj) * (u - mj))
                .sum();
            m.push(mj);
            sigma.push((within.max(0.0) + between).sqrt());
        }

        let mut status: Vec<MomentStatus> = m
            .iter()
            .zip(&sigma)
            .map(|(&mj, &sj)| {
                let rms = (mj * mj + sj * sj).sqrt();
                if sj <= DEGENERATE_REL * rms || rms == 0.0 {
                    if mj > DEGENERATE_REL * rms.max(1.0) {
                        MomentStatus::RejectingDegenerate
                    } else {
                        MomentStatus::DroppedDegenerate
                    }
                } else {
                    MomentStatus::Active
                }
            })
            .collect();
        if let Some(beta) = self.preselect_beta {
            let cut = -2.0 * (2.0 * (p as f64 / beta).ln()).sqrt();
            let rn = (self.n as f64).sqrt();
            for j in 0..p {
                if status[j] == MomentStatus::Active && rn * m[j] / sigma[j] < cut {
                    status[j] = MomentStatus::Deselected;
                }
            }
        }
        MomentEstimates {
            theta,
            m,
            sigma,
            status,
        }
    }

    /// Draws `reps` multiplier vectors (one independent stream per
    /// replicate, derived from `key`) and stores their per-cell sums.
    pub fn draw_multipliers(&self, key: StreamKey, reps: usize) -> MultiplierDraws {
        let cells = self.cells;
        let rows: Vec<(Vec<f64>, f64, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = key.child(r as u64).rng();
                let mut e = vec![0.0; cells];
                let (mut by, mut s) = (0.0, 0.0);
                for i in 0..self.n {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    e[self.cell_of[i]] += eps * self.w[i];
                    by += eps * self.b[i];
                    s += eps;
                }
                (e, by, s)
            })
            .collect();
        let mut out = MultiplierDraws {
            reps,
            cells,
            e: Vec::with_capacity(reps * cells),
            by: Vec::with_capacity(reps),
            s: Vec::with_capacity(reps),
        };
        for (e, by, s) in rows {
            out.e.extend(e);
            out.by.push(by);
            out.s.push(s);
        }
        out
    }

    /// Bootstrap max-statistics `max_j n^{-1/2} Σ ε_i (g_ij - m̂_j) / σ̂_j`
    /// over the active moments, one per replicate.
    pub fn bootstrap_maxima(&self, est: &MomentEstimates, draws: &MultiplierDraws) -> Vec<f64> {
        assert_eq!(draws.cells, self.cells, "draws belong to another partition");
        let theta = est.theta;
        let s = theta.sgn();
        let at = theta.abs();
        let rn = (self.n as f64).sqrt();
        let scale: Vec<f64> = est
            .sigma
            .iter()
            .zip(&est.status)
            .map(|(sd, st)| {
                if *st == MomentStatus::Active {
                    1.0 / (rn * sd)
                } else {
                    f64::NAN
                }
            })
            .collect();
        let cells = self.cells;
        let size = 1usize << cells;
        (0..draws.reps)
            .into_par_iter()
            .map_init(
                || vec![0.0; size],
                |val, r| {
                    let e = &draws.e[r * cells..(r + 1) * cells];
                    let (by, sum) = (draws.by[r], draws.s[r]);
                    let mut best = f64::NEG_INFINITY;
                    let a = s * by;
                    if !scale[0].is_nan() {
                        best = best.max((-a - est.m[0] * sum) * scale[0]);
                    }
                    if !scale[1].is_nan() {
                        best = best.max((a - at * sum - est.m[1] * sum) * scale[1]);
                    }
                    val[0] = -0.5 * e.iter().sum::<f64>();
                    for j in 1..size {
                        let low = j.trailing_zeros() as usize;
                        val[j] = val[j & (j - 1)] + e[cells - 1 - low];
                    }
                    for j in 0..size {
                        let k = scale[j + 2];
                        if !k.is_nan() {
                            best = best.max((at * val[j] - a - est.m[j + 2] * sum) * k);
                        }
                    }
                    best
                },
            )
            .collect()
    }
}

/// Moment means and standard deviations at θ.
pub fn moment_values(
    data: &ObservationTable,
    theta: f64,
    pi: &PropensityModel,
    partition: &CellPartition,
) -> Result<MomentEstimates> {
    Ok(MomentSystem::new(data, pi, partition)?.evaluate(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{sign_functions, PartitionConfig, Variant};

    fn toy() -> (ObservationTable, CellPartition) {
        let y = vec![0.0, 1.0, 1.0, 2.0, 0.5, 3.0, 1.5, 2.5, 0.2, 0.9];
        let t = vec![0, 1, 0, 1, 1, 0, 1, 1, 0, 0];
        let z = vec![0, 1, 1, 0, 1, 0, 1, 1, 0, 0];
        let d = ObservationTable::new(y, t, z).unwrap();
        let p = CellPartition::from_edges(vec![1.0], Variant::WithT, vec![]).unwrap();
        (d, p)
    }

    /// Direct row-by-row evaluation of every moment.
    fn direct(d: &ObservationTable, theta: f64, pi: &PropensityModel, p: &CellPartition) -> (Vec<f64>, Vec<f64>) {
        let w = pi.weights(d).unwrap();
        let cells = p.assign(d).unwrap();
        let s = theta.sgn();
        let n = d.n() as f64;
        let mut rows: Vec<Vec<f64>> = vec![
            (0..d.n()).map(|i| -w[i] * s * d.y()[i]).collect(),
            (0..d.n()).map(|i| w[i] * s * d.y()[i] - theta.abs()).collect(),
        ];
        for h in sign_functions(p.cell_count()).unwrap() {
            rows.push(
                (0..d.n())
                    .map(|i| w[i] * (theta.abs() * h.value::<f64>(cells[i]) - s * d.y()[i]))
                    .collect(),
            );
        }
        let m: Vec<f64> = rows.iter().map(|g| g.iter().sum::<f64>() / n).collect();
        let sd = rows
            .iter()
            .zip(&m)
            .map(|(g, mj)| (g.iter().map(|x| (x - mj).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        (m, sd)
    }

    #[test]
    fn single_row_arithmetic() {
        // weight at z=1, pi=0.5 is 2
        let w: f64 = (1.0 - 0.5) / 0.25;
        assert_eq!(w, 2.0);
        let d = ObservationTable::new(vec![3.0, 3.0], vec![0, 0], vec![1, 0]).unwrap();
        let pi = PropensityModel::constant(0.5, 2, 0.01).unwrap();
        let p = CellPartition::from_edges(vec![], Variant::YOnly, vec![]).unwrap();
        let (m, _) = direct(&d, 1.0, &pi, &p);
        // row 1 gives g1 = -6, g2 = 5; row 2 gives g1 = 6, g2 = -7
        assert_eq!(m[0], 0.0);
        assert_eq!(m[1], -1.0);
    }

    #[test]
    fn sufficient_statistics_match_direct_summation() {
        let (d, p) = toy();
        let pi = PropensityModel::constant(0.5, d.n(), 0.01).unwrap();
        let sys = MomentSystem::new(&d, &pi, &p).unwrap();
        for theta in [-2.0, -0.3, 0.0, 0.7, 1.0, 4.5] {
            let est = sys.evaluate(theta);
            let (m, sd) = direct(&d, theta, &pi, &p);
            assert_eq!(est.p_n(), 18);
            for j in 0..est.p_n() {
                assert!((est.m[j] - m[j]).abs() < 1e-12, "m[{j}] at {theta}");
                assert!((est.sigma[j] - sd[j]).abs() < 1e-12, "sigma[{j}] at {theta}");
            }
        }
    }

    #[test]
    fn zero_theta_makes_sign_moments_identical() {
        let (d, p) = toy();
        let pi = PropensityModel::sample_share(&d);
        let est = moment_values(&d, 0.0, &pi, &p).unwrap();
        for j in 3..est.p_n() {
            assert!((est.m[j] - est.m[2]).abs() < 1e-15);
        }
        // g_{2+j} = -w y
        let wy: Vec<f64> = d.y().to_vec();
        let dlt = weighted_delta(&d, &pi, &wy).unwrap();
        assert!((est.m[2] + dlt).abs() < 1e-14);
    }

    #[test]
    fn weighted_delta_is_the_mean_difference() {
        let (d, _) = toy();
        let pi = PropensityModel::sample_share(&d);
        let got = weighted_delta(&d, &pi, d.y()).unwrap();
        let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..d.n() {
            if d.z()[i] == 1 {
                s1 += d.y()[i];
                n1 += 1.0;
            } else {
                s0 += d.y()[i];
                n0 += 1.0;
            }
        }
        assert!((got - (s1 / n1 - s0 / n0)).abs() < 1e-12);
        assert_eq!(weighted_delta(&d, &pi, &vec![0.0; d.n()]).unwrap(), 0.0);
    }

    #[test]
    fn max_over_sign_functions_is_half_l1() {
        let x = [0.3, -0.1, 0.05, -0.25];
        let got = max_over_sign_functions(&x).unwrap();
        let l1: f64 = x.iter().map(|v: &f64| v.abs()).sum::<f64>() / 2.0;
        assert!((got - l1).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_dp_matches_direct_sums() {
        let (d, p) = toy();
        let pi = PropensityModel::constant(0.5, d.n(), 0.01).unwrap();
        let sys = MomentSystem::new(&d, &pi, &p).unwrap();
        let key = StreamKey::root(5);
        let draws = sys.draw_multipliers(key, 3);
        let theta = 1.3;
        let est = sys.evaluate(theta);
        let maxima = sys.bootstrap_maxima(&est, &draws);

        let w = pi.weights(&d).unwrap();
        let cells = p.assign(&d).unwrap();
        let fs = sign_functions(p.cell_count()).unwrap();
        let n = d.n() as f64;
        for r in 0..3 {
            let mut rng = key.child(r as u64).rng();
            let eps: Vec<f64> = (0..d.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let g = |j: usize, i: usize| -> f64 {
                let y = d.y()[i];
                match j {
                    0 => -w[i] * y,
                    1 => w[i] * y - theta,
                    _ => w[i] * (theta * fs[j - 2].value::<f64>(cells[i]) - y),
                }
            };
            let mut best = f64::NEG_INFINITY;
            for j in 0..est.p_n() {
                let num: f64 = (0..d.n()).map(|i| eps[i] * (g(j, i) - est.m[j])).sum();
                best = best.max(num / (n.sqrt() * est.sigma[j]));
            }
            assert!((best - maxima[r]).abs() < 1e-10, "{best} vs {}", maxima[r]);
        }
    }

    #[test]
    fn moments_are_row_permutation_invariant() {
        let (d, _) = toy();
        let p = CellPartition::build(&d, &PartitionConfig::new(2, Variant::WithT)).unwrap();
        let order: Vec<usize> = (0..d.n()).rev().collect();
        let dp = d.permuted(&order).unwrap();
        let a = moment_values(&d, 1.1, &PropensityModel::sample_share(&d), &p).unwrap();
        let b = moment_values(&dp, 1.1, &PropensityModel::sample_share(&dp), &p).unwrap();
        for j in 0..a.p_n() {
            assert!((a.m[j] - b.m[j]).abs() < 1e-13);
            assert!((a.sigma[j] - b.sigma[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_outcome_zero_theta_is_degenerate_and_dropped() {
        let d = ObservationTable::new(vec![0.0; 6], vec![0, 1, 0, 1, 0, 1], vec![0, 0, 0, 1, 1, 1]).unwrap();
        let p = CellPartition::from_edges(vec![], Variant::WithT, vec![]).unwrap();
        let est = moment_values(&d, 0.0, &PropensityModel::sample_share(&d), &p).unwrap();
        assert!(est.status.iter().all(|s| *s == MomentStatus::DroppedDegenerate));
        let est = moment_values(&d, -1.0, &PropensityModel::sample_share(&d), &p).unwrap();
        // g_2 = -|θ| constant negative: dropped; sign moments vary with w
        assert_eq!(est.status[1], MomentStatus::DroppedDegenerate);
        assert_eq!(est.status[2], MomentStatus::Active);
    }
}
