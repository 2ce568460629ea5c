//! Finite-support verifiers: exhaustive sign-function TV, and the two extremal
//! latent distributions that attain the endpoints of the identified set.
//!
//! A latent atom carries the instrument value, the pair `(T*_0, T*_1)` and one
//! observable cell per potential true treatment. The observed cell is the one
//! indexed by `T*_Z`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::identify::CellDistribution;
use crate::partition::{sign_functions, CellPartition};
use crate::rng::StreamKey;
use crate::scalar::Scalar;

/// Tolerance for probability reconstruction in floating point.
pub const RECONSTRUCTION_TOL: f64 = 1e-12;

/// Observable distribution of `(Y, T, R, Z)` on a finite grid of cells.
///
/// `f0` and `f1` are the arm-conditional cell probabilities; cell `c` has
/// outcome value `y_values[c / (t_levels * r_levels)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint<S> {
    pub y_values: Vec<S>,
    pub t_levels: usize,
    pub r_levels: usize,
    pub pz: S,
    pub f0: Vec<S>,
    pub f1: Vec<S>,
}

impl<S: Scalar> DiscreteJoint<S> {
    pub fn new(y_values: Vec<S>, t_levels: usize, r_levels: usize, pz: S, f0: Vec<S>, f1: Vec<S>) -> Result<Self> {
        let j = DiscreteJoint {
            y_values,
            t_levels,
            r_levels,
            pz,
            f0,
            f1,
        };
        j.validate()?;
        Ok(j)
    }

    fn validate(&self) -> Result<()> {
        if self.t_levels == 0 || self.r_levels == 0 || self.y_values.is_empty() {
            return Err(Error::invalid("empty cell grid"));
        }
        let cells = self.cell_count();
        if self.f0.len() != cells || self.f1.len() != cells {
            return Err(Error::invalid("arm tables have the wrong length"));
        }
        if self.pz <= S::zero() || self.pz >= S::one() {
            return Err(Error::SingleArm);
        }
        let tol = S::from_f64_lossy(RECONSTRUCTION_TOL);
        for f in [&self.f0, &self.f1] {
            if f.iter().any(|p| *p < S::zero()) {
                return Err(Error::invalid("negative cell probability"));
            }
            if (S::sum_iter(f.iter().cloned()) - S::one()).abs() > tol {
                return Err(Error::invalid("arm table does not sum to one"));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.y_values.len() * self.t_levels * self.r_levels
    }

    pub fn y_bin(&self, cell: usize) -> usize {
        cell / (self.t_levels * self.r_levels)
    }

    pub fn y_of(&self, cell: usize) -> S {
        self.y_values[self.y_bin(cell)].clone()
    }

    /// `P(cell, Z = z)`.
    pub fn mass(&self, cell: usize, z: u8) -> S {
        if z == 1 {
            self.pz.clone() * self.f1[cell].clone()
        } else {
            (S::one() - self.pz.clone()) * self.f0[cell].clone()
        }
    }

    pub fn arm(&self, z: u8) -> &[S] {
        if z == 1 {
            &self.f1
        } else {
            &self.f0
        }
    }

    pub fn distribution(&self) -> CellDistribution<S> {
        CellDistribution {
            f0: self.f0.clone(),
            f1: self.f1.clone(),
            y_bins: self.y_values.len(),
            t_levels: self.t_levels,
            r_levels: self.r_levels,
        }
    }

    /// Same joint with `T` and `R` summed out.
    pub fn marginal_y(&self) -> Self {
        let d = self.distribution().marginal_y();
        DiscreteJoint {
            y_values: self.y_values.clone(),
            t_levels: 1,
            r_levels: 1,
            pz: self.pz.clone(),
            f0: d.f0,
            f1: d.f1,
        }
    }

    pub fn itt(&self) -> S {
        S::sum_iter((0..self.cell_count()).map(|c| self.y_of(c) * (self.f1[c].clone() - self.f0[c].clone())))
    }

    /// `1/2 Σ |f1 - f0|` over the joint's cells.
    pub fn tv(&self) -> S {
        self.distribution().tv()
    }

    /// Largest absolute difference between the two joints' cell masses.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.cell_count() != other.cell_count() {
            return Err(Error::invalid("joints live on different grids"));
        }
        let mut worst = (self.pz.clone() - other.pz.clone()).abs();
        for c in 0..self.cell_count() {
            for z in [0, 1] {
                worst = S::max_of(worst, (self.mass(c, z) - other.mass(c, z)).abs());
            }
        }
        Ok(worst)
    }
}

impl DiscreteJoint<f64> {
    /// Empirical joint of a sample on a partition. Covariate cells are summed
    /// out; each outcome interval is represented by its pooled sample mean
    /// (or its midpoint when empty).
    pub fn from_table(data: &ObservationTable, partition: &CellPartition) -> Result<Self> {
        let cells = partition.assign(data)?;
        let v = partition.v_count();
        let k = partition.cell_count() / v;
        let per_y = partition.t_levels() * partition.r_count();
        let (mut n0c, mut n1c) = (vec![0usize; k], vec![0usize; k]);
        let mut ysum = vec![0.0; partition.y_bins()];
        let mut ycount = vec![0usize; partition.y_bins()];
        for ((c, &z), &y) in cells.iter().zip(data.z()).zip(data.y()) {
            let c = c / v;
            if z == 1 {
                n1c[c] += 1;
            } else {
                n0c[c] += 1;
            }
            ysum[c / per_y] += y;
            ycount[c / per_y] += 1;
        }
        let (n0, n1) = data.arm_counts();
        let e = &partition.y_edges;
        let y_values = (0..partition.y_bins())
            .map(|b| {
                if ycount[b] > 0 {
                    ysum[b] / ycount[b] as f64
                } else {
                    let lo = if b == 0 { e.first().copied().unwrap_or(0.0) } else { e[b - 1] };
                    let hi = e.get(b).copied().unwrap_or(lo);
                    0.5 * (lo + hi)
                }
            })
            .collect();
        DiscreteJoint::new(
            y_values,
            partition.t_levels(),
            partition.r_count(),
            n1 as f64 / (n0 + n1) as f64,
            n0c.iter().map(|&c| c as f64 / n0 as f64).collect(),
            n1c.iter().map(|&c| c as f64 / n1 as f64).collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("joint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: Self = serde_json::from_str(s).map_err(|e| Error::invalid(format!("joint json: {e}")))?;
        j.validate()?;
        Ok(j)
    }
}

/// Random joint on a `y_bins × t_levels × r_levels` grid. Probabilities are
/// ratios of small integers (some cells empty), so the same draw is exact in
/// rational arithmetic.
pub fn random_joint<S: Scalar>(seed: u64, y_bins: usize, t_levels: usize, r_levels: usize) -> DiscreteJoint<S> {
    use rand::Rng;
    let mut rng = StreamKey::root(seed).rng();
    let cells = y_bins * t_levels * r_levels;
    let arm = |rng: &mut crate::rng::CounterRng| {
        loop {
            let w: Vec<i64> = (0..cells)
                .map(|_| if rng.random_bool(0.15) { 0 } else { rng.random_range(1..=20) })
                .collect();
            let total: i64 = w.iter().sum();
            if total > 0 {
                return w.into_iter().map(|x| S::from_ratio(x, total)).collect::<Vec<S>>();
            }
        }
    };
    let f0 = arm(&mut rng);
    let f1 = arm(&mut rng);
    let y_values = (0..y_bins).map(|_| S::from_ratio(rng.random_range(-40..=40), 8)).collect();
    let pz = S::from_ratio(rng.random_range(1..=9), 10);
    DiscreteJoint::new(y_values, t_levels, r_levels, pz, f0, f1).expect("random joint is valid")
}

/// `max_h Σ_c h(c) Δf(c)` over all `±1/2` sign functions on the joint's cells.
pub fn tv_bruteforce<S: Scalar>(joint: &DiscreteJoint<S>) -> Result<S> {
    let cells = joint.cell_count();
    let delta: Vec<S> = (0..cells).map(|c| joint.f1[c].clone() - joint.f0[c].clone()).collect();
    let mut best: Option<S> = None;
    for h in sign_functions(cells)? {
        let v = S::sum_iter((0..cells).map(|c| h.value::<S>(c) * delta[c].clone()));
        best = Some(match best {
            Some(b) => S::max_of(b, v),
            None => v,
        });
    }
    Ok(best.unwrap_or_else(S::zero))
}

/// Which independence condition the latent distribution is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Independence {
    /// `Z ⟂ (R_t, Y_t, T_t, T*_0, T*_1)` for each `t`.
    Full,
    /// `Z ⟂ (Y_t, T*_0, T*_1)` for each `t`; the measured treatment may depend on `Z`.
    OutcomeOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentAtom<S> {
    pub z: u8,
    pub ts0: u8,
    pub ts1: u8,
    /// Observable cell of the potentials under true treatment 0.
    pub c0: usize,
    /// Observable cell of the potentials under true treatment 1.
    pub c1: usize,
    pub mass: S,
}

impl<S> LatentAtom<S> {
    pub fn is_complier(&self) -> bool {
        self.ts0 == 0 && self.ts1 == 1
    }

    pub fn observed_cell(&self) -> usize {
        let ts = if self.z == 1 { self.ts1 } else { self.ts0 };
        if ts == 1 {
            self.c1
        } else {
            self.c0
        }
    }
}

/// Finite latent distribution of `(potentials, T*_0, T*_1, Z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDgp<S> {
    pub y_values: Vec<S>,
    pub t_levels: usize,
    pub r_levels: usize,
    pub atoms: Vec<LatentAtom<S>>,
}

impl<S: Scalar> LatentDgp<S> {
    fn empty_like(joint: &DiscreteJoint<S>) -> Self {
        LatentDgp {
            y_values: joint.y_values.clone(),
            t_levels: joint.t_levels,
            r_levels: joint.r_levels,
            atoms: Vec::new(),
        }
    }

    fn cell_count(&self) -> usize {
        self.y_values.len() * self.t_levels * self.r_levels
    }

    fn y_of(&self, cell: usize) -> S {
        self.y_values[cell / (self.t_levels * self.r_levels)].clone()
    }

    fn push(&mut self, z: u8, ts: (u8, u8), c0: usize, c1: usize, mass: S) -> Result<()> {
        let tol = S::from_f64_lossy(RECONSTRUCTION_TOL);
        if mass < -tol {
            return Err(Error::NegativeMass {
                atom: self.atoms.len(),
                value: mass.to_f64_lossy(),
            });
        }
        if mass > S::zero() {
            self.atoms.push(LatentAtom {
                z,
                ts0: ts.0,
                ts1: ts.1,
                c0,
                c1,
                mass,
            });
        }
        Ok(())
    }

    pub fn total_mass(&self) -> S {
        S::sum_iter(self.atoms.iter().map(|a| a.mass.clone()))
    }

    /// Observable distribution generated by the latent one.
    pub fn induced(&self) -> Result<DiscreteJoint<S>> {
        let cells = self.cell_count();
        let mut m = [vec![S::zero(); cells], vec![S::zero(); cells]];
        for a in &self.atoms {
            let c = a.observed_cell();
            m[a.z as usize][c] = m[a.z as usize][c].clone() + a.mass.clone();
        }
        let p1 = S::sum_iter(m[1].iter().cloned());
        let p0 = S::sum_iter(m[0].iter().cloned());
        if p0 <= S::zero() || p1 <= S::zero() {
            return Err(Error::SingleArm);
        }
        let total = p0.clone() + p1.clone();
        let [m0, m1] = m;
        Ok(DiscreteJoint {
            y_values: self.y_values.clone(),
            t_levels: self.t_levels,
            r_levels: self.r_levels,
            pz: p1.clone() / total,
            f0: m0.into_iter().map(|x| x / p0.clone()).collect(),
            f1: m1.into_iter().map(|x| x / p1.clone()).collect(),
        })
    }

    pub fn complier_share(&self) -> S {
        S::sum_iter(self.atoms.iter().filter(|a| a.is_complier()).map(|a| a.mass.clone()))
    }

    /// `E[Y_1 - Y_0 | T*_0 < T*_1]`; `None` without compliers.
    pub fn late(&self) -> Option<S> {
        let share = self.complier_share();
        if share <= S::zero() {
            return None;
        }
        let num = S::sum_iter(
            self.atoms
                .iter()
                .filter(|a| a.is_complier())
                .map(|a| a.mass.clone() * (self.y_of(a.c1) - self.y_of(a.c0))),
        );
        Some(num / share)
    }

    /// No defiers: `T*_1 ≥ T*_0` on every atom with positive mass.
    pub fn monotone(&self) -> bool {
        self.atoms.iter().all(|a| a.ts1 >= a.ts0)
    }

    /// Largest `|P(key, Z=z) - P(key) P(Z=z)|` over the finite support, where
    /// `key` is the potential block for each true treatment. Zero means the
    /// independence condition holds exactly.
    pub fn independence_gap(&self, kind: Independence) -> S {
        let per_y = self.t_levels * self.r_levels;
        let total = self.total_mass();
        let pz1 = S::sum_iter(self.atoms.iter().filter(|a| a.z == 1).map(|a| a.mass.clone())) / total.clone();
        let pz = [S::one() - pz1.clone(), pz1];
        let mut worst = S::zero();
        for t in 0..2u8 {
            let mut table: BTreeMap<(usize, u8, u8), [S; 2]> = BTreeMap::new();
            for a in &self.atoms {
                let c = if t == 1 { a.c1 } else { a.c0 };
                let c = match kind {
                    Independence::Full => c,
                    Independence::OutcomeOnly => c / per_y,
                };
                let e = table.entry((c, a.ts0, a.ts1)).or_insert_with(|| [S::zero(), S::zero()]);
                e[a.z as usize] = e[a.z as usize].clone() + a.mass.clone() / total.clone();
            }
            for [m0, m1] in table.into_values() {
                let key = m0.clone() + m1.clone();
                for (m, p) in [(m0, &pz[0]), (m1, &pz[1])] {
                    worst = S::max_of(worst, (m - key.clone() * p.clone()).abs());
                }
            }
        }
        worst
    }

    /// `λ·a + (1-λ)·b`.
    pub fn mixture(a: &Self, b: &Self, lambda: S) -> Result<Self> {
        if a.cell_count() != b.cell_count() || a.y_values != b.y_values {
            return Err(Error::invalid("mixture components live on different grids"));
        }
        if lambda < S::zero() || lambda > S::one() {
            return Err(Error::invalid("mixture weight outside [0, 1]"));
        }
        let mut out = LatentDgp {
            y_values: a.y_values.clone(),
            t_levels: a.t_levels,
            r_levels: a.r_levels,
            atoms: Vec::with_capacity(a.atoms.len() + b.atoms.len()),
        };
        let mu = S::one() - lambda.clone();
        for (src, w) in [(a, lambda), (b, mu)] {
            for at in &src.atoms {
                out.push(at.z, (at.ts0, at.ts1), at.c0, at.c1, at.mass.clone() * w.clone())?;
            }
        }
        Ok(out)
    }
}

fn z_mass<S: Scalar>(joint: &DiscreteJoint<S>, z: u8) -> S {
    if z == 1 {
        joint.pz.clone()
    } else {
        S::one() - joint.pz.clone()
    }
}

/// Everyone is a complier; potentials under true treatment `t` follow the
/// arm-`t` observable distribution, independently of each other and of `Z`.
/// The LATE equals the joint's ITT.
pub fn construct_extremal_lower<S: Scalar>(joint: &DiscreteJoint<S>) -> Result<LatentDgp<S>> {
    let mut out = LatentDgp::empty_like(joint);
    let cells = joint.cell_count();
    for z in [0u8, 1] {
        let pz = z_mass(joint, z);
        for c0 in 0..cells {
            for c1 in 0..cells {
                let m = pz.clone() * joint.f0[c0].clone() * joint.f1[c1].clone();
                out.push(z, (0, 1), c0, c1, m)?;
            }
        }
    }
    Ok(out)
}

/// Complier share equal to the TV distance: compliers take the positive part
/// of `Δf` under treatment and the negative part under control; never-takers
/// and always-takers absorb the remaining arm mass. The LATE equals
/// `ITT / TV`.
pub fn construct_extremal_upper<S: Scalar>(joint: &DiscreteJoint<S>) -> Result<LatentDgp<S>> {
    let cells = joint.cell_count();
    let delta: Vec<S> = (0..cells).map(|c| joint.f1[c].clone() - joint.f0[c].clone()).collect();
    let tv = joint.tv();
    if tv <= S::zero() {
        return Err(Error::ParameterSpaceRequired);
    }
    let pos: Vec<bool> = delta.iter().map(|d| d.sgn() > S::zero()).collect();
    let mut out = LatentDgp::empty_like(joint);
    for z in [0u8, 1] {
        let pz = z_mass(joint, z);
        for c0 in (0..cells).filter(|&c| !pos[c]) {
            for c1 in (0..cells).filter(|&c| pos[c]) {
                let m = pz.clone() * delta[c1].clone() * (-delta[c0].clone()) / tv.clone();
                out.push(z, (0, 1), c0, c1, m)?;
            }
        }
        for c in 0..cells {
            if pos[c] {
                out.push(z, (1, 1), c, c, pz.clone() * joint.f0[c].clone())?;
            } else {
                out.push(z, (0, 0), c, c, pz.clone() * joint.f1[c].clone())?;
            }
        }
    }
    Ok(out)
}

/// Upper construction when the measured treatment may depend on the
/// instrument: types are built from the outcome marginal, and the non-outcome
/// part of each potential cell is drawn from `f(T, R | Y, Z)`. The LATE equals
/// `ITT / TV_Y`.
pub fn construct_extremal_upper_no_t<S: Scalar>(joint: &DiscreteJoint<S>) -> Result<LatentDgp<S>> {
    let my = joint.marginal_y();
    let bins = my.y_values.len();
    let per_y = joint.t_levels * joint.r_levels;
    let delta: Vec<S> = (0..bins).map(|y| my.f1[y].clone() - my.f0[y].clone()).collect();
    let tv = my.tv();
    if tv <= S::zero() {
        return Err(Error::ParameterSpaceRequired);
    }
    let pos: Vec<bool> = delta.iter().map(|d| d.sgn() > S::zero()).collect();

    // f(T, R | Y = y, Z = z), falling back to the other arm where y has no mass.
    let cond = |y: usize, z: u8| -> Vec<S> {
        let pick = if my.arm(z)[y] > S::zero() { z } else { 1 - z };
        let py = my.arm(pick)[y].clone();
        (0..per_y)
            .map(|k| {
                if py > S::zero() {
                    joint.arm(pick)[y * per_y + k].clone() / py.clone()
                } else {
                    S::zero()
                }
            })
            .collect()
    };

    let mut out = LatentDgp::empty_like(joint);
    for z in [0u8, 1] {
        let pz = z_mass(joint, z);
        for y0 in (0..bins).filter(|&y| !pos[y]) {
            let g0 = cond(y0, z);
            for y1 in (0..bins).filter(|&y| pos[y]) {
                let g1 = cond(y1, z);
                let m = pz.clone() * delta[y1].clone() * (-delta[y0].clone()) / tv.clone();
                for k0 in 0..per_y {
                    for k1 in 0..per_y {
                        let mass = m.clone() * g0[k0].clone() * g1[k1].clone();
                        out.push(z, (0, 1), y0 * per_y + k0, y1 * per_y + k1, mass)?;
                    }
                }
            }
        }
        for y in 0..bins {
            let g = cond(y, z);
            let (ts, base) = if pos[y] {
                ((1, 1), my.f0[y].clone())
            } else {
                ((0, 0), my.f1[y].clone())
            };
            for k in 0..per_y {
                let c = y * per_y + k;
                out.push(z, ts, c, c, pz.clone() * base.clone() * g[k].clone())?;
            }
        }
    }
    Ok(out)
}

/// LATE of `λ·lower + (1-λ)·upper`: `itt / (λ + (1-λ) tv)`.
pub fn mixture_late<S: Scalar>(itt: S, tv: S, lambda: S) -> S {
    itt / (lambda.clone() + (S::one() - lambda) * tv)
}

/// Mixing weight whose LATE is `theta`, if `theta` lies between the endpoints.
pub fn mixture_weight<S: Scalar>(itt: S, tv: S, theta: S) -> Option<S> {
    if theta.is_zero() || tv >= S::one() {
        return if itt == theta { Some(S::one()) } else { None };
    }
    let lambda = (itt / theta - tv.clone()) / (S::one() - tv);
    (lambda >= S::zero() && lambda <= S::one()).then_some(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use num_traits::Zero;

    fn q(n: i64, d: i64) -> Exact {
        Exact::from_ratio(n, d)
    }

    fn binary() -> DiscreteJoint<f64> {
        // P(Y=1 | Z=1) = 0.8, P(Y=1 | Z=0) = 0.3
        DiscreteJoint::new(vec![0.0, 1.0], 1, 1, 0.5, vec![0.7, 0.3], vec![0.2, 0.8]).unwrap()
    }

    #[test]
    fn binary_example_tv_is_half() {
        let j = binary();
        assert!((tv_bruteforce(&j).unwrap() - 0.5).abs() < 1e-15);
        let best = sign_functions(2)
            .unwrap()
            .into_iter()
            .max_by(|a, b| {
                let v = |h: &crate::partition::SignFunction| h.value::<f64>(1) * 0.5 - h.value::<f64>(0) * 0.5;
                v(a).partial_cmp(&v(b)).unwrap()
            })
            .unwrap();
        assert!(best.is_positive(1) && !best.is_positive(0));
    }

    #[test]
    fn identical_arms_have_zero_tv() {
        let f = vec![q(1, 4), q(1, 4), q(1, 2)];
        let j = DiscreteJoint::new(vec![q(0, 1), q(1, 1), q(2, 1)], 1, 1, q(1, 3), f.clone(), f).unwrap();
        assert_eq!(tv_bruteforce(&j).unwrap(), q(0, 1));
        assert!(matches!(construct_extremal_upper(&j), Err(Error::ParameterSpaceRequired)));
    }

    #[test]
    fn bruteforce_matches_l1_exactly() {
        for seed in 0..30 {
            let j: DiscreteJoint<Exact> = random_joint(seed, 3, 2, 1);
            assert_eq!(tv_bruteforce(&j).unwrap(), j.tv());
        }
    }

    #[test]
    fn cap_is_enforced() {
        let j: DiscreteJoint<f64> = random_joint(1, 9, 2, 1);
        assert!(matches!(tv_bruteforce(&j), Err(Error::CellCap { .. })));
    }

    #[test]
    fn extremal_constructions_are_exact_in_rationals() {
        for seed in 0..20 {
            let j: DiscreteJoint<Exact> = random_joint(seed, 3, 2, 1);
            let tv = j.tv();
            if tv.is_zero() {
                continue;
            }
            let lo = construct_extremal_lower(&j).unwrap();
            let hi = construct_extremal_upper(&j).unwrap();
            for d in [&lo, &hi] {
                assert_eq!(d.induced().unwrap(), j);
                assert_eq!(d.total_mass(), q(1, 1));
                assert!(d.monotone());
                assert!(d.independence_gap(Independence::Full).is_zero());
            }
            assert_eq!(lo.late().unwrap(), j.itt());
            assert_eq!(lo.complier_share(), q(1, 1));
            assert_eq!(hi.late().unwrap(), j.itt() / tv.clone());
            assert_eq!(hi.complier_share(), tv);
        }
    }

    #[test]
    fn no_t_construction_reproduces_the_joint() {
        for seed in 0..20 {
            let j: DiscreteJoint<Exact> = random_joint(seed, 3, 2, 2);
            let tv_y = j.marginal_y().tv();
            if tv_y.is_zero() {
                continue;
            }
            let hi = construct_extremal_upper_no_t(&j).unwrap();
            assert_eq!(hi.induced().unwrap(), j);
            assert!(hi.monotone());
            assert!(hi.independence_gap(Independence::OutcomeOnly).is_zero());
            assert_eq!(hi.late().unwrap(), j.itt() / tv_y);
        }
    }

    #[test]
    fn zero_itt_gives_zero_lower_late() {
        let j = DiscreteJoint::new(
            vec![q(-1, 1), q(1, 1)],
            2,
            1,
            q(1, 2),
            vec![q(1, 4), q(1, 4), q(1, 4), q(1, 4)],
            vec![q(1, 2), q(0, 1), q(0, 1), q(1, 2)],
        )
        .unwrap();
        assert!(j.itt().is_zero());
        assert!(construct_extremal_lower(&j).unwrap().late().unwrap().is_zero());
    }

    #[test]
    fn dominating_arm_two_cells() {
        // T = 1 cell gains mass, T = 0 cell loses it: compliers are |ΔE[T|Z]|.
        let j = DiscreteJoint::new(vec![q(1, 1)], 2, 1, q(1, 2), vec![q(3, 4), q(1, 4)], vec![q(1, 4), q(3, 4)])
            .unwrap();
        let hi = construct_extremal_upper(&j).unwrap();
        let dt = j.distribution().treatment_delta().unwrap();
        assert_eq!(hi.complier_share(), dt);
        assert!(crate::identify::wald_violations(&j.distribution(), &[q(0, 1), q(0, 1)]).is_empty());
    }

    #[test]
    fn mixture_hits_requested_late() {
        let j: DiscreteJoint<Exact> = random_joint(4, 2, 2, 1);
        let (itt, tv) = (j.itt(), j.tv());
        let lo = construct_extremal_lower(&j).unwrap();
        let hi = construct_extremal_upper(&j).unwrap();
        let mid = (itt.clone() + itt.clone() / tv.clone()) * q(1, 2);
        let lambda = mixture_weight(itt.clone(), tv.clone(), mid.clone()).unwrap();
        let mix = LatentDgp::mixture(&lo, &hi, lambda).unwrap();
        assert_eq!(mix.induced().unwrap(), j);
        assert_eq!(mix.late().unwrap(), mid);
        assert!(mix.independence_gap(Independence::Full).is_zero());
    }

    #[test]
    fn json_roundtrip() {
        let j = binary();
        assert_eq!(DiscreteJoint::from_json(&j.to_json()).unwrap(), j);
        assert!(DiscreteJoint::from_json(r#"{"y_values":[0],"t_levels":1,"r_levels":1,"pz":1.0,"f0":[1],"f1":[1]}"#).is_err());
    }
}
