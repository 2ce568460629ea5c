//! Nested cell partitions of the outcome (crossed with T, R and covariate
//! bins) and the sign-function class they index.

use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::quantile_linear_sorted;

/// Largest number of cells for which all sign functions are enumerated.
pub const CELL_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Outcome intervals crossed with T.
    WithT,
    /// Outcome intervals crossed with T and the levels of R.
    WithTR,
    /// Outcome intervals only.
    YOnly,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "with_t" => Ok(Variant::WithT),
            "with_t_r" => Ok(Variant::WithTR),
            "y_only" => Ok(Variant::YOnly),
            _ => Err(Error::invalid(format!("unknown partition variant `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// Cut points at empirical quantiles for fractions k/K.
    #[default]
    Quantile,
    /// Equally spaced over the observed outcome range.
    EqualWidth,
}

/// How `k_n` is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSemantics {
    /// `k_n` counts outcome intervals; crossings multiply the cell count.
    #[default]
    OutcomeIntervals,
    /// `k_n` is the total number of cells (must be divisible by the
    /// crossing factor).
    TotalCells,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub k_n: usize,
    pub variant: Variant,
    pub spacing: Spacing,
    pub semantics: CellSemantics,
    /// Bins per varying covariate (quantile cut points).
    pub v_cells: Option<usize>,
    /// Refuse partitions with more than [`CELL_CAP`] cells. Population
    /// computations that never enumerate sign functions switch this off.
    pub enforce_cap: bool,
}

impl PartitionConfig {
    pub fn new(k_n: usize, variant: Variant) -> Self {
        PartitionConfig {
            k_n,
            variant,
            spacing: Spacing::Quantile,
            semantics: CellSemantics::OutcomeIntervals,
            v_cells: None,
            enforce_cap: true,
        }
    }

    pub fn uncapped(mut self) -> Self {
        self.enforce_cap = false;
        self
    }

    pub fn spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn semantics(mut self, semantics: CellSemantics) -> Self {
        self.semantics = semantics;
        self
    }

    pub fn v_cells(mut self, v_cells: Option<usize>) -> Self {
        self.v_cells = v_cells;
        self
    }
}

/// Cut points for one covariate column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateEdges {
    pub column: usize,
    pub edges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    /// Interior cut points; interval `k` is `(e[k-1], e[k]]`.
    pub y_edges: Vec<f64>,
    pub split_by_t: bool,
    pub split_by_r: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r_levels: Vec<u8>,
    pub v_edges: Option<Vec<CovariateEdges>>,
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| quantile_linear_sorted(&sorted, k as f64 / bins as f64))
        .collect();
    edges.dedup();
    // the top edge equal to the maximum would leave an empty last interval
    let max = sorted[sorted.len() - 1];
    edges.retain(|&e| e < max);
    edges
}

fn equal_width_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| lo + (hi - lo) * (k as f64 / bins as f64))
        .collect();
    edges.dedup();
    edges
}

impl CellPartition {
    /// Partition from explicit outcome cut points, crossed with T unless
    /// `YOnly`. The cell cap is checked when sign functions are enumerated.
    pub fn from_edges(y_edges: Vec<f64>, variant: Variant, r_levels: Vec<u8>) -> Result<Self> {
        if y_edges.windows(2).any(|w| !(w[0] < w[1])) || y_edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("outcome cut points must be finite and strictly increasing"));
        }
        let split_by_r = variant == Variant::WithTR;
        if split_by_r && r_levels.is_empty() {
            return Err(Error::invalid("with_t_r partition needs the levels of r"));
        }
        let p = CellPartition {
            y_edges,
            split_by_t: variant != Variant::YOnly,
            split_by_r,
            r_levels: if split_by_r { r_levels } else { Vec::new() },
            v_edges: None,
        };
        Ok(p)
    }

    pub fn build(data: &ObservationTable, config: &PartitionConfig) -> Result<Self> {
        if config.k_n == 0 {
            return Err(Error::invalid("k_n must be at least 1"));
        }
        let split_by_t = config.variant != Variant::YOnly;
        let split_by_r = config.variant == Variant::WithTR;
        let r_levels = if split_by_r {
            data.r_levels().ok_or_else(|| Error::RegimeMismatch {
                regime: "with_t_r".into(),
                reason: "the table has no repeated measurement r".into(),
            })?
        } else {
            Vec::new()
        };

        let mut v_edges = None;
        let mut v_factor = 1;
        if let Some(bins) = config.v_cells {
            let cov = data.covariates().ok_or_else(|| {
                Error::invalid("covariate cells requested but the table has no covariates")
            })?;
            let mut all = Vec::new();
            for j in cov.varying_columns() {
                let col: Vec<f64> = cov.column(j).collect();
                let edges = quantile_edges(&col, bins.max(1));
                v_factor *= edges.len() + 1;
                all.push(CovariateEdges { column: j, edges });
            }
            v_edges = Some(all);
        }

        let crossing = (if split_by_t { 2 } else { 1 })
            * r_levels.len().max(1)
            * v_factor;
        let outcome_bins = match config.semantics {
            CellSemantics::OutcomeIntervals => config.k_n,
            CellSemantics::TotalCells => {
                if !config.k_n.is_multiple_of(crossing) {
                    return Err(Error::invalid(format!(
                        "k_n = {} total cells is not a multiple of the crossing factor {crossing}",
                        config.k_n
                    )));
                }
                config.k_n / crossing
            }
        };
        let cells = outcome_bins.saturating_mul(crossing);
        if config.enforce_cap && cells > CELL_CAP {
            return Err(Error::CellCap { cells, cap: CELL_CAP });
        }

        let y = data.y();
        let degenerate = y.iter().all(|&v| v == y[0]);
        if degenerate && outcome_bins > 1 {
            return Err(Error::DegenerateOutcome { k_n: outcome_bins });
        }
        let y_edges = match config.spacing {
            Spacing::Quantile => quantile_edges(y, outcome_bins),
            Spacing::EqualWidth => equal_width_edges(y, outcome_bins),
        };
        Ok(CellPartition {
            y_edges,
            split_by_t,
            split_by_r,
            r_levels,
            v_edges,
        })
    }

    pub fn y_bins(&self) -> usize {
        self.y_edges.len() + 1
    }

    pub fn t_levels(&self) -> usize {
        if self.split_by_t {
            2
        } else {
            1
        }
    }

    pub fn r_count(&self) -> usize {
        if self.split_by_r {
            self.r_levels.len()
        } else {
            1
        }
    }

    pub fn v_count(&self) -> usize {
        self.v_edges
            .as_ref()
            .map_or(1, |v| v.iter().map(|c| c.edges.len() + 1).product())
    }

    pub fn cell_count(&self) -> usize {
        self.y_bins() * self.t_levels() * self.r_count() * self.v_count()
    }

    /// Number of moment inequalities: all sign functions plus the two
    /// ITT-side moments.
    pub fn p_n(&self) -> usize {
        (1usize << self.cell_count()) + 2
    }

    pub fn y_bin(&self, y: f64) -> usize {
        bin_of(&self.y_edges, y)
    }

    /// Mixed-radix index `((ybin * T + t) * R + r) * V + v`.
    pub fn cell_index(&self, y: f64, t: u8, r: Option<u8>, v: Option<&[f64]>) -> Result<usize> {
        let mut idx = self.y_bin(y);
        if self.split_by_t {
            idx = idx * 2 + usize::from(t);
        }
        if self.split_by_r {
            let r = r.ok_or_else(|| Error::invalid("partition splits by r but r is absent"))?;
            let pos = self
                .r_levels
                .binary_search(&r)
                .map_err(|_| Error::invalid(format!("r level {r} not in the partition")))?;
            idx = idx * self.r_levels.len() + pos;
        }
        if let Some(vs) = &self.v_edges {
            let row = v.ok_or_else(|| Error::invalid("partition splits by covariates but none given"))?;
            for c in vs {
                let x = *row
                    .get(c.column)
                    .ok_or_else(|| Error::invalid("covariate row too short for partition"))?;
                idx = idx * (c.edges.len() + 1) + bin_of(&c.edges, x);
            }
        }
        Ok(idx)
    }

    /// Cell of every row.
    pub fn assign(&self, data: &ObservationTable) -> Result<Vec<usize>> {
        let (y, t, r) = (data.y(), data.t(), data.r());
        if self.v_edges.is_some() && data.covariates().is_none() {
            return Err(Error::invalid("partition splits by covariates but the table has none"));
        }
        (0..data.n())
            .map(|i| {
                self.cell_index(
                    y[i],
                    t[i],
                    r.map(|r| r[i]),
                    data.covariates().map(|v| v.row(i)),
                )
            })
            .collect()
    }

    /// Decomposes a cell index into `(y_bin, t, r_pos, v_pos)`.
    pub fn decompose(&self, cell: usize) -> (usize, usize, usize, usize) {
        let v = self.v_count();
        let r = self.r_count();
        let t = self.t_levels();
        let v_pos = cell % v;
        let rest = cell / v;
        let r_pos = rest % r;
        let rest = rest / r;
        (rest / t, rest % t, r_pos, v_pos)
    }

    /// Whether every cut point of `coarser` is also a cut point here.
    pub fn refines(&self, coarser: &CellPartition) -> bool {
        coarser.y_edges.iter().all(|e| self.y_edges.contains(e))
            && (self.split_by_t || !coarser.split_by_t)
            && (self.split_by_r || !coarser.split_by_r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partition serializes")
    }
}

/// A function `h` constant on each cell with values in `{-1/2, +1/2}`,
/// stored as a bit mask (bit set means `+1/2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignFunction {
    mask: u32,
    cells: u8,
}

impl SignFunction {
    /// The `index`-th function in binary-counting order: cell 0 is the most
    /// significant digit.
    pub fn from_index(index: usize, cells: usize) -> Self {
        assert!(cells <= CELL_CAP && index < (1 << cells));
        let mut mask = 0u32;
        for c in 0..cells {
            if (index >> (cells - 1 - c)) & 1 == 1 {
                mask |= 1 << c;
            }
        }
        SignFunction {
            mask,
            cells: cells as u8,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cells as usize
    }

    pub fn is_positive(&self, cell: usize) -> bool {
        (self.mask >> cell) & 1 == 1
    }

    pub fn value<S: Scalar>(&self, cell: usize) -> S {
        if self.is_positive(cell) {
            S::half()
        } else {
            -S::half()
        }
    }

    pub fn signs<S: Scalar>(&self) -> Vec<S> {
        (0..self.cell_count()).map(|c| self.value(c)).collect()
    }
}

pub fn enumerate_sign_functions(partition: &CellPartition) -> Result<Vec<SignFunction>> {
    let cells = partition.cell_count();
    sign_functions(cells)
}

pub fn sign_functions(cells: usize) -> Result<Vec<SignFunction>> {
    if cells > CELL_CAP {
        return Err(Error::CellCap { cells, cap: CELL_CAP });
    }
    Ok((0..1usize << cells)
        .map(|j| SignFunction::from_index(j, cells))
        .collect())
}

/// Bit of cell `c` within the enumeration index for `cells` cells.
#[inline]
pub(crate) fn index_bit(c: usize, cells: usize) -> usize {
    1 << (cells - 1 - c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(y: Vec<f64>) -> ObservationTable {
        let n = y.len();
        let t = (0..n).map(|i| (i % 2) as u8).collect();
        let z = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        ObservationTable::new(y, t, z).unwrap()
    }

    #[test]
    fn single_interval_with_t_has_two_cells() {
        let d = table((0..10).map(f64::from).collect());
        let p = CellPartition::build(&d, &PartitionConfig::new(1, Variant::WithT)).unwrap();
        assert_eq!(p.cell_count(), 2);
        assert_eq!(p.cell_index(3.0, 0, None, None).unwrap(), 0);
        assert_eq!(p.cell_index(3.0, 1, None, None).unwrap(), 1);
        let p = CellPartition::build(&d, &PartitionConfig::new(1, Variant::YOnly)).unwrap();
        assert_eq!(p.cell_count(), 1);
        assert_eq!(p.p_n(), 4);
    }

    #[test]
    fn dyadic_levels_are_nested() {
        let d = table((0..37).map(|i| (i as f64 * 0.731).sin()).collect());
        for spacing in [Spacing::Quantile, Spacing::EqualWidth] {
            let mk = |k| {
                CellPartition::build(&d, &PartitionConfig::new(k, Variant::WithT).spacing(spacing))
                    .unwrap()
            };
            let (p2, p4, p8) = (mk(2), mk(4), mk(8));
            assert!(p4.refines(&p2) && p8.refines(&p4));
            assert_eq!(p4.y_bins(), 4);
        }
    }

    #[test]
    fn every_row_lands_in_one_cell() {
        let d = table((0..50).map(|i| ((i * 7) % 13) as f64).collect());
        let p = CellPartition::build(&d, &PartitionConfig::new(4, Variant::WithT)).unwrap();
        let cells = p.assign(&d).unwrap();
        assert!(cells.iter().all(|&c| c < p.cell_count()));
        for (i, &c) in cells.iter().enumerate() {
            let (yb, t, _, _) = p.decompose(c);
            assert_eq!(yb, p.y_bin(d.y()[i]));
            assert_eq!(t, d.t()[i] as usize);
        }
    }

    #[test]
    fn cap_and_degenerate_errors() {
        let d = table((0..40).map(f64::from).collect());
        let err = CellPartition::build(&d, &PartitionConfig::new(9, Variant::WithT)).unwrap_err();
        assert!(matches!(err, Error::CellCap { cells: 18, cap: 16 }));
        let flat = table(vec![1.0; 8]);
        assert!(matches!(
            CellPartition::build(&flat, &PartitionConfig::new(2, Variant::WithT)),
            Err(Error::DegenerateOutcome { .. })
        ));
        assert!(CellPartition::build(&flat, &PartitionConfig::new(1, Variant::WithT)).is_ok());
    }

    #[test]
    fn total_cells_reading() {
        let d = table((0..40).map(f64::from).collect());
        let cfg = PartitionConfig::new(4, Variant::WithT).semantics(CellSemantics::TotalCells);
        let p = CellPartition::build(&d, &cfg).unwrap();
        assert_eq!((p.y_bins(), p.cell_count()), (2, 4));
        let cfg = PartitionConfig::new(3, Variant::WithT).semantics(CellSemantics::TotalCells);
        assert!(CellPartition::build(&d, &cfg).is_err());
    }

    #[test]
    fn sign_functions_count_in_binary() {
        let fs = sign_functions(2).unwrap();
        let vals: Vec<Vec<f64>> = fs.iter().map(|f| f.signs()).collect();
        assert_eq!(
            vals,
            vec![
                vec![-0.5, -0.5],
                vec![-0.5, 0.5],
                vec![0.5, -0.5],
                vec![0.5, 0.5]
            ]
        );
        assert_eq!(sign_functions(1).unwrap().len(), 2);
        let three = sign_functions(3).unwrap();
        let distinct: std::collections::HashSet<_> = three.iter().collect();
        assert_eq!(distinct.len(), 8);
        for (j, f) in three.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(f.is_positive(c), j & index_bit(c, 3) != 0);
            }
        }
    }

    #[test]
    fn json_has_the_documented_fields() {
        let p = CellPartition::from_edges(vec![0.0, 1.0], Variant::WithT, vec![]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        for k in ["y_edges", "split_by_t", "split_by_r", "v_edges"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: CellPartition = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }
}
