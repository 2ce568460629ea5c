//! Plug-in ITT, Wald and total-variation estimands; the sharp identified set
//! under each assumption regime; the Wald-validity check; bounds under
//! exogenous measurement error.
//!
//! The cell-level math is generic over [`Scalar`] so that the finite-support
//! oracles can run it in exact arithmetic.

use serde::{Deserialize, Serialize};

use crate::data::{ObservationTable, ParameterSpace};
use crate::error::{Error, Result};
use crate::moments::{cell_weight_sums, weighted_delta};
use crate::partition::CellPartition;
use crate::propensity::PropensityModel;
use crate::scalar::Scalar;

/// Tolerance below which a plug-in TV or ITT counts as zero.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// TV over (Y, T).
    Unconditional,
    /// Expected conditional TV over (Y, T) given covariate cells.
    Conditional,
    /// TV over (R, Y, T).
    WithR,
    /// TV over Y alone.
    NoT,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unconditional" => Ok(Regime::Unconditional),
            "conditional" => Ok(Regime::Conditional),
            "with_r" => Ok(Regime::WithR),
            "no_t" => Ok(Regime::NoT),
            _ => Err(Error::invalid(format!("unknown regime `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Unconditional => "unconditional",
            Regime::Conditional => "conditional",
            Regime::WithR => "with_r",
            Regime::NoT => "no_t",
        }
    }

    /// Partition variant the regime's TV is computed on.
    pub fn variant(self) -> crate::partition::Variant {
        use crate::partition::Variant;
        match self {
            Regime::Unconditional | Regime::Conditional => Variant::WithT,
            Regime::WithR => Variant::WithTR,
            Regime::NoT => Variant::YOnly,
        }
    }
}

/// Arm-conditional cell probabilities on a `(Y-bin, T, R)` grid, cell index
/// `(y_bin * t_levels + t) * r_levels + r`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellDistribution<S> {
    pub f0: Vec<S>,
    pub f1: Vec<S>,
    pub y_bins: usize,
    pub t_levels: usize,
    pub r_levels: usize,
}

impl<S: Scalar> CellDistribution<S> {
    pub fn new(f0: Vec<S>, f1: Vec<S>, y_bins: usize, t_levels: usize, r_levels: usize) -> Result<Self> {
        let cells = y_bins * t_levels * r_levels;
        if f0.len() != cells || f1.len() != cells {
            return Err(Error::invalid("cell probability vectors have the wrong length"));
        }
        if !(t_levels == 1 || t_levels == 2) || r_levels == 0 || y_bins == 0 {
            return Err(Error::invalid("bad cell layout"));
        }
        Ok(CellDistribution {
            f0,
            f1,
            y_bins,
            t_levels,
            r_levels,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.f0.len()
    }

    pub fn index(&self, y_bin: usize, t: usize, r: usize) -> usize {
        (y_bin * self.t_levels + t) * self.r_levels + r
    }

    pub fn delta(&self, c: usize) -> S {
        self.f1[c].clone() - self.f0[c].clone()
    }

    /// `1/2 Σ_c |f1 - f0|`.
    pub fn tv(&self) -> S {
        S::sum_iter((0..self.cell_count()).map(|c| self.delta(c).abs())) * S::half()
    }

    fn collapse(&self, keep_t: bool, keep_r: bool) -> Self {
        let t_levels = if keep_t { self.t_levels } else { 1 };
        let r_levels = if keep_r { self.r_levels } else { 1 };
        let cells = self.y_bins * t_levels * r_levels;
        let (mut f0, mut f1) = (vec![S::zero(); cells], vec![S::zero(); cells]);
        for y in 0..self.y_bins {
            for t in 0..self.t_levels {
                for r in 0..self.r_levels {
                    let src = self.index(y, t, r);
                    let dst = (y * t_levels + if keep_t { t } else { 0 }) * r_levels
                        + if keep_r { r } else { 0 };
                    f0[dst] = f0[dst].clone() + self.f0[src].clone();
                    f1[dst] = f1[dst].clone() + self.f1[src].clone();
                }
            }
        }
        CellDistribution {
            f0,
            f1,
            y_bins: self.y_bins,
            t_levels,
            r_levels,
        }
    }

    /// Distribution over `(Y, T)` cells.
    pub fn marginal_yt(&self) -> Self {
        self.collapse(true, false)
    }

    /// Distribution over Y cells.
    pub fn marginal_y(&self) -> Self {
        self.collapse(false, false)
    }

    /// `ΔE[T | Z]` from the cells with `t = 1`.
    pub fn treatment_delta(&self) -> Option<S> {
        if self.t_levels != 2 {
            return None;
        }
        let m = self.marginal_yt();
        Some(S::sum_iter((0..m.y_bins).map(|y| m.delta(m.index(y, 1, 0)))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    WholeSpace,
    PointZero,
    Interval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiedSet<S> {
    pub kind: SetKind,
    pub lo: S,
    pub hi: S,
    pub itt: S,
    pub tv: S,
    pub wald: Option<S>,
}

impl<S: Scalar> IdentifiedSet<S> {
    /// Three-branch classification: Θ when `tv <= tol`, `{0}` when
    /// `|itt| <= tol`, otherwise the interval between `itt` and `itt / tv`.
    pub fn classify(itt: S, tv: S, space: Option<(S, S)>, tol: S) -> Result<Self> {
        if tv <= tol {
            let (lo, hi) = space.ok_or(Error::ParameterSpaceRequired)?;
            return Ok(IdentifiedSet {
                kind: SetKind::WholeSpace,
                lo,
                hi,
                itt,
                tv,
                wald: None,
            });
        }
        if itt.abs() <= tol {
            return Ok(IdentifiedSet {
                kind: SetKind::PointZero,
                lo: S::zero(),
                hi: S::zero(),
                itt,
                tv,
                wald: None,
            });
        }
        let far = itt.clone() / tv.clone();
        let (lo, hi) = if itt > S::zero() {
            (itt.clone(), far)
        } else {
            (far, itt.clone())
        };
        Ok(IdentifiedSet {
            kind: SetKind::Interval,
            lo,
            hi,
            itt,
            tv,
            wald: None,
        })
    }

    pub fn contains(&self, theta: &S) -> bool {
        *theta >= self.lo && *theta <= self.hi
    }

    /// Endpoint farthest from zero in absolute value.
    pub fn outer(&self) -> S {
        if self.itt >= S::zero() {
            self.hi.clone()
        } else {
            self.lo.clone()
        }
    }
}

/// JSON form of a bounds result.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundsReport {
    pub kind: SetKind,
    pub lo: f64,
    pub hi: f64,
    pub itt: f64,
    pub tv: f64,
    pub wald: Option<f64>,
    pub regime: Regime,
    pub k_n: usize,
    pub n: usize,
}

impl BoundsReport {
    pub fn new(set: &IdentifiedSet<f64>, regime: Regime, k_n: usize, n: usize) -> Self {
        BoundsReport {
            kind: set.kind,
            lo: set.lo,
            hi: set.hi,
            itt: set.itt,
            tv: set.tv,
            wald: set.wald,
            regime,
            k_n,
            n,
        }
    }
}

fn arm_mean(x: impl Iterator<Item = (f64, u8)>) -> (f64, f64) {
    let (mut s0, mut s1, mut n0, mut n1) = (0.0, 0.0, 0usize, 0usize);
    for (x, z) in x {
        if z == 1 {
            s1 += x;
            n1 += 1;
        } else {
            s0 += x;
            n0 += 1;
        }
    }
    (s0 / n0 as f64, s1 / n1 as f64)
}

/// `ΔE[Y | Z]`; with a propensity model, the weighted version.
pub fn itt(data: &ObservationTable, pi: Option<&PropensityModel>) -> Result<f64> {
    match pi {
        Some(pi) => weighted_delta(data, pi, data.y()),
        None => {
            let (m0, m1) = arm_mean(data.y().iter().copied().zip(data.z().iter().copied()));
            Ok(m1 - m0)
        }
    }
}

/// `ΔE[T | Z]`; with a propensity model, the weighted version.
pub fn treatment_delta(data: &ObservationTable, pi: Option<&PropensityModel>) -> Result<f64> {
    match pi {
        Some(pi) => {
            let t: Vec<f64> = data.t().iter().map(|&t| f64::from(t)).collect();
            weighted_delta(data, pi, &t)
        }
        None => {
            let (m0, m1) = arm_mean(data.t().iter().map(|&t| f64::from(t)).zip(data.z().iter().copied()));
            Ok(m1 - m0)
        }
    }
}

pub fn wald(data: &ObservationTable, pi: Option<&PropensityModel>) -> Result<f64> {
    let den = treatment_delta(data, pi)?;
    if den == 0.0 {
        return Err(Error::IrrelevantInstrument);
    }
    Ok(itt(data, pi)? / den)
}

/// Cell frequencies by instrument arm.
#[derive(Clone, Debug)]
pub struct SampleCells {
    pub dist: CellDistribution<f64>,
    pub n0c: Vec<usize>,
    pub n1c: Vec<usize>,
    pub n0: usize,
    pub n1: usize,
}

impl SampleCells {
    pub fn new(data: &ObservationTable, partition: &CellPartition) -> Result<Self> {
        let cells = partition.assign(data)?;
        let v = partition.v_count();
        let k = partition.cell_count() / v;
        let (mut n0c, mut n1c) = (vec![0usize; k], vec![0usize; k]);
        for (c, &z) in cells.iter().zip(data.z()) {
            if z == 1 {
                n1c[c / v] += 1;
            } else {
                n0c[c / v] += 1;
            }
        }
        let (n0, n1) = data.arm_counts();
        let f0 = n0c.iter().map(|&c| c as f64 / n0 as f64).collect();
        let f1 = n1c.iter().map(|&c| c as f64 / n1 as f64).collect();
        let dist = CellDistribution::new(
            f0,
            f1,
            partition.y_bins(),
            partition.t_levels(),
            partition.r_count(),
        )?;
        Ok(SampleCells {
            dist,
            n0c,
            n1c,
            n0,
            n1,
        })
    }

    /// Two-sample standard error of each cell's probability difference,
    /// scaled by `k`, using the pooled cell share.
    pub fn tau(&self, k: f64) -> Vec<f64> {
        let n = (self.n0 + self.n1) as f64;
        let inv = 1.0 / self.n0 as f64 + 1.0 / self.n1 as f64;
        self.n0c
            .iter()
            .zip(&self.n1c)
            .map(|(&a, &b)| {
                let p = (a + b) as f64 / n;
                k * (p * (1.0 - p) * inv).sqrt()
            })
            .collect()
    }

    /// Counts and tolerances collapsed to `(Y, T)` cells.
    fn marginal_yt(&self) -> SampleCells {
        let d = &self.dist;
        let m = d.marginal_yt();
        let (mut n0c, mut n1c) = (vec![0; m.cell_count()], vec![0; m.cell_count()]);
        for y in 0..d.y_bins {
            for t in 0..d.t_levels {
                for r in 0..d.r_levels {
                    let src = d.index(y, t, r);
                    let dst = m.index(y, t, 0);
                    n0c[dst] += self.n0c[src];
                    n1c[dst] += self.n1c[src];
                }
            }
        }
        SampleCells {
            dist: m,
            n0c,
            n1c,
            n0: self.n0,
            n1: self.n1,
        }
    }
}

/// TV distance on the partition's cells. With a propensity model, the
/// maximum over sign functions of the weighted delta, `1/2 Σ_c |S_c|`.
pub fn tv_distance(
    data: &ObservationTable,
    partition: &CellPartition,
    pi: Option<&PropensityModel>,
) -> Result<f64> {
    match pi {
        Some(pi) => {
            let s = cell_weight_sums(data, pi, partition)?;
            Ok(0.5 * s.iter().map(|x| x.abs()).sum::<f64>())
        }
        None => Ok(SampleCells::new(data, partition)?.dist.tv()),
    }
}

fn mismatch(regime: Regime, reason: &str) -> Error {
    Error::RegimeMismatch {
        regime: regime.name().to_string(),
        reason: reason.to_string(),
    }
}

/// TV for a regime, marginalising the partition where needed.
pub fn regime_tv(
    data: &ObservationTable,
    partition: &CellPartition,
    pi: Option<&PropensityModel>,
    regime: Regime,
) -> Result<f64> {
    match regime {
        Regime::Conditional => {
            let pi = pi.ok_or_else(|| mismatch(regime, "needs a fitted propensity model"))?;
            if !partition.split_by_t {
                return Err(mismatch(regime, "partition must cross outcome cells with T"));
            }
            tv_distance(data, partition, Some(pi))
        }
        Regime::Unconditional => {
            if !partition.split_by_t {
                return Err(mismatch(regime, "partition must cross outcome cells with T"));
            }
            Ok(SampleCells::new(data, partition)?.dist.marginal_yt().tv())
        }
        Regime::WithR => {
            if data.r().is_none() {
                return Err(mismatch(regime, "the table has no repeated measurement r"));
            }
            if !partition.split_by_r || !partition.split_by_t {
                return Err(mismatch(regime, "partition must cross outcome cells with T and R"));
            }
            Ok(SampleCells::new(data, partition)?.dist.tv())
        }
        Regime::NoT => Ok(SampleCells::new(data, partition)?.dist.marginal_y().tv()),
    }
}

/// Sharp identified set for the LATE under `regime`.
pub fn sharp_set(
    data: &ObservationTable,
    partition: &CellPartition,
    pi: Option<&PropensityModel>,
    theta_space: Option<ParameterSpace>,
    regime: Regime,
) -> Result<IdentifiedSet<f64>> {
    let weighting = if regime == Regime::Conditional { pi } else { None };
    if regime == Regime::Conditional && data.covariates().is_none() {
        return Err(mismatch(regime, "the table has no covariates"));
    }
    let tv = regime_tv(data, partition, pi, regime)?;
    let itt = itt(data, weighting)?;
    let mut set = IdentifiedSet::classify(
        itt,
        tv,
        theta_space.map(|s| (s.theta_lo, s.theta_hi)),
        ZERO_TOL,
    )?;
    set.wald = wald(data, weighting).ok();
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum CellTolerance {
    /// `k` two-sample standard errors of the cell probability difference.
    StandardErrors(f64),
    /// No slack; for exact discrete fixtures.
    Zero,
}

impl Default for CellTolerance {
    fn default() -> Self {
        CellTolerance::StandardErrors(2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellViolation {
    pub cell: usize,
    pub y_bin: usize,
    pub t: usize,
    pub delta: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidityReport {
    pub holds: bool,
    pub violating_cells: Vec<CellViolation>,
    pub wald_denominator: f64,
    pub tv: f64,
}

/// Cells breaking the Wald condition: `Δf(y,1) >= 0` and `Δf(y,0) <= 0`,
/// each within its tolerance. `dist` must be over `(Y, T)`.
pub fn wald_violations<S: Scalar>(dist: &CellDistribution<S>, tau: &[S]) -> Vec<usize> {
    assert_eq!(dist.t_levels, 2);
    assert_eq!(dist.r_levels, 1);
    (0..dist.cell_count())
        .filter(|&c| {
            let d = dist.delta(c);
            if c % 2 == 1 {
                d < -tau[c].clone()
            } else {
                d > tau[c].clone()
            }
        })
        .collect()
}

pub fn wald_validity_check(
    data: &ObservationTable,
    partition: &CellPartition,
    tolerance: CellTolerance,
) -> Result<ValidityReport> {
    if !partition.split_by_t {
        return Err(Error::invalid("the Wald check needs a partition crossed with T"));
    }
    let cells = SampleCells::new(data, partition)?.marginal_yt();
    let tau = match tolerance {
        CellTolerance::StandardErrors(k) => cells.tau(k),
        CellTolerance::Zero => vec![0.0; cells.dist.cell_count()],
    };
    let bad = wald_violations(&cells.dist, &tau);
    let violating_cells = bad
        .iter()
        .map(|&c| CellViolation {
            cell: c,
            y_bin: c / 2,
            t: c % 2,
            delta: cells.dist.delta(c),
            tau: tau[c],
        })
        .collect();
    Ok(ValidityReport {
        holds: bad.is_empty(),
        violating_cells,
        wald_denominator: cells.dist.treatment_delta().expect("split by t"),
        tv: cells.dist.tv(),
    })
}

/// Ω₁ = [lower, upper] for the false-positive odds `ω₁`; `upper = None`
/// means unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct Omega1<S> {
    pub lower: S,
    pub upper: Option<S>,
}

/// Ω₁ from a `(Y, T)` cell distribution. Per outcome bin, with
/// `a_tz = f_{(Y,T)|Z=z}(y,t)` and `D = a11 - a01 - a10 + a00`:
/// `ω₁ D >= -(a11 - a10)` and `ω₁ [a00 - a10]_+ <= a10`, with `ω₁ >= 0`.
/// `D < -tau` in any bin, or an empty interval, rejects the assumptions.
pub fn omega1<S: Scalar>(dist: &CellDistribution<S>, tau: &[S]) -> Result<Omega1<S>> {
    let m = if dist.r_levels > 1 { dist.marginal_yt() } else { dist.clone() };
    if m.t_levels != 2 {
        return Err(Error::invalid("exogenous-error bounds need a partition crossed with T"));
    }
    let mut lower = S::zero();
    let mut upper: Option<S> = None;
    for y in 0..m.y_bins {
        let (c0, c1) = (m.index(y, 0, 0), m.index(y, 1, 0));
        let (a00, a01) = (m.f0[c0].clone(), m.f1[c0].clone());
        let (a10, a11) = (m.f0[c1].clone(), m.f1[c1].clone());
        let d1 = a11.clone() - a10.clone();
        let d = d1.clone() - (a01 - a00.clone());
        let slack = tau[c0].clone() + tau[c1].clone();
        if d < -slack.clone() {
            return Err(Error::JointlyRejected(format!(
                "outcome bin {y}: Δf(y,1) - Δf(y,0) = {:.3e} < 0",
                d.to_f64_lossy()
            )));
        }
        if d > S::zero() {
            lower = S::max_of(lower, -d1 / d);
        } else if d1 < -tau[c1].clone() {
            return Err(Error::JointlyRejected(format!(
                "outcome bin {y}: Δf(y,1) < 0 with no offsetting Δf(y,0)"
            )));
        }
        let gap = a00 - a10.clone();
        if gap > S::zero() {
            let cap = a10 / gap;
            upper = Some(match upper {
                Some(u) => S::min_of(u, cap),
                None => cap,
            });
        }
    }
    if let Some(u) = &upper {
        if lower > *u {
            return Err(Error::JointlyRejected(format!(
                "Ω₁ is empty: lower {:.6} exceeds upper {:.6}",
                lower.to_f64_lossy(),
                u.to_f64_lossy()
            )));
        }
    }
    Ok(Omega1 { lower, upper })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExogenousMeSet {
    pub omega1_lo: f64,
    /// `None` when unbounded.
    pub omega1_hi: Option<f64>,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// The image is unbounded when the denominator changes sign on Ω₁.
    pub theta_unbounded: bool,
    pub itt: f64,
    pub treatment_delta: f64,
}

/// `θ(ω₁) = ITT / (ΔT + ω₁ (1 - 2ΔT))`.
pub fn theta_of_omega(itt: f64, dt: f64, omega: f64) -> f64 {
    itt / (dt + omega * (1.0 - 2.0 * dt))
}

pub fn exogenous_me_set(
    data: &ObservationTable,
    partition: &CellPartition,
    tolerance: CellTolerance,
) -> Result<ExogenousMeSet> {
    if !partition.split_by_t {
        return Err(Error::invalid("exogenous-error bounds need a partition crossed with T"));
    }
    let cells = SampleCells::new(data, partition)?.marginal_yt();
    if cells.dist.marginal_y().tv() <= ZERO_TOL {
        return Err(Error::ParameterSpaceRequired);
    }
    let tau = match tolerance {
        CellTolerance::StandardErrors(k) => cells.tau(k),
        CellTolerance::Zero => vec![0.0; cells.dist.cell_count()],
    };
    let om = omega1(&cells.dist, &tau)?;
    let itt = itt(data, None)?;
    let dt = treatment_delta(data, None)?;
    let slope = 1.0 - 2.0 * dt;
    let den_lo = dt + om.lower * slope;
    let den_hi = match om.upper {
        Some(u) => dt + u * slope,
        None if slope == 0.0 => dt,
        None => slope.signum() * f64::INFINITY,
    };
    let crosses = den_lo == 0.0 || den_hi == 0.0 || (den_lo > 0.0) != (den_hi > 0.0);
    let (a, b) = (itt / den_lo, itt / den_hi);
    let (theta_lo, theta_hi) = if crosses {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        (a.min(b), a.max(b))
    };
    Ok(ExogenousMeSet {
        omega1_lo: om.lower,
        omega1_hi: om.upper,
        theta_lo,
        theta_hi,
        theta_unbounded: crosses,
        itt,
        treatment_delta: dt,
    })
}
