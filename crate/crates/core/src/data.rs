//! Observation table, parameter space and CSV ingestion.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariate matrix (row-major, `n × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    names: Vec<String>,
    values: Vec<f64>,
    d: usize,
    auto_constant: bool,
}

impl Covariates {
    /// Builds from named columns. A constant column of ones is prepended when
    /// none of the supplied columns is identically 1.
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::invalid("covariate names and columns differ in count"));
        }
        if columns.is_empty() {
            return Err(Error::invalid("covariate matrix needs at least one column"));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("covariate columns differ in length"));
        }
        if columns.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite covariate value"));
        }
        let has_constant = columns.iter().any(|c| c.iter().all(|&x| x == 1.0));
        let mut names = names;
        let mut columns = columns;
        if !has_constant {
            names.insert(0, "(constant)".to_string());
            columns.insert(0, vec![1.0; n]);
        }
        let d = columns.len();
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            values.extend(columns.iter().map(|c| c[i]));
        }
        Ok(Covariates {
            names,
            values,
            d,
            auto_constant: !has_constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.d).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Whether the leading constant column was added automatically.
    pub fn has_auto_constant(&self) -> bool {
        self.auto_constant
    }

    /// Indices of columns that are not constant.
    pub fn varying_columns(&self) -> Vec<usize> {
        (0..self.d)
            .filter(|&j| {
                let mut it = self.column(j);
                let first = it.next().unwrap_or(0.0);
                it.any(|x| x != first)
            })
            .collect()
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Covariates {
            values,
            ..self.clone()
        }
    }
}

/// Immutable sample of `(Y, T, Z, R?, V?)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationTable {
    y: Vec<f64>,
    t: Vec<u8>,
    z: Vec<u8>,
    r: Option<Vec<u8>>,
    v: Option<Covariates>,
}

impl ObservationTable {
    pub fn new(y: Vec<f64>, t: Vec<u8>, z: Vec<u8>) -> Result<Self> {
        Self::build(y, t, z, None, None)
    }

    pub fn build(
        y: Vec<f64>,
        t: Vec<u8>,
        z: Vec<u8>,
        r: Option<Vec<u8>>,
        v: Option<Covariates>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if n < 2 {
            return Err(Error::invalid("need at least two rows"));
        }
        if t.len() != n || z.len() != n {
            return Err(Error::invalid("columns y, t, z differ in length"));
        }
        if let Some(r) = &r {
            if r.len() != n {
                return Err(Error::invalid("column r has the wrong length"));
            }
        }
        if let Some(v) = &v {
            if v.rows() != n {
                return Err(Error::invalid("covariate matrix has the wrong row count"));
            }
        }
        if let Some(i) = y.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("row {i}: non-finite outcome")));
        }
        for (name, col) in [("t", &t), ("z", &z)] {
            if let Some(i) = col.iter().position(|&x| x > 1) {
                return Err(Error::NonBinary {
                    row: i,
                    column: name.to_string(),
                    value: col[i].to_string(),
                });
            }
        }
        let ones = z.iter().filter(|&&x| x == 1).count();
        if ones == 0 || ones == n {
            return Err(Error::SingleArm);
        }
        Ok(ObservationTable { y, t, z, r, v })
    }

    pub fn with_r(self, r: Vec<u8>) -> Result<Self> {
        Self::build(self.y, self.t, self.z, Some(r), self.v)
    }

    pub fn with_covariates(self, v: Covariates) -> Result<Self> {
        Self::build(self.y, self.t, self.z, self.r, Some(v))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn r(&self) -> Option<&[u8]> {
        self.r.as_deref()
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.v.as_ref()
    }

    /// Sorted distinct values of `R`.
    pub fn r_levels(&self) -> Option<Vec<u8>> {
        self.r
            .as_ref()
            .map(|r| r.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.z.iter().filter(|&&z| z == 1).count();
        (self.n() - n1, n1)
    }

    pub fn mean_z(&self) -> f64 {
        self.arm_counts().1 as f64 / self.n() as f64
    }

    /// Rows reordered by `order` (a permutation of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::invalid("permutation has the wrong length"));
        }
        let pick_u8 = |c: &[u8]| order.iter().map(|&i| c[i]).collect::<Vec<_>>();
        Self::build(
            order.iter().map(|&i| self.y[i]).collect(),
            pick_u8(&self.t),
            pick_u8(&self.z),
            self.r.as_deref().map(pick_u8),
            self.v.as_ref().map(|v| v.permuted(order)),
        )
    }
}

/// Bounds of the parameter space Θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl ParameterSpace {
    pub fn new(theta_lo: f64, theta_hi: f64) -> Result<Self> {
        if !theta_lo.is_finite() || !theta_hi.is_finite() || theta_lo >= theta_hi {
            return Err(Error::invalid(format!(
                "parameter space needs finite theta_lo < theta_hi, got [{theta_lo}, {theta_hi}]"
            )));
        }
        Ok(ParameterSpace { theta_lo, theta_hi })
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.theta_lo && theta <= self.theta_hi
    }
}

/// Column-role mapping: `y=<col>,t=<col>,z=<col>[,r=<col>][,v=<c1;c2;...>]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub y: String,
    pub t: String,
    pub z: String,
    pub r: Option<String>,
    pub v: Vec<String>,
}

impl Schema {
    pub fn parse(spec: &str) -> Result<Self> {
        let (mut y, mut t, mut z, mut r, mut v) = (None, None, None, None, Vec::new());
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (role, col) = part
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("expected role=column, got `{part}`")))?;
            let col = col.trim().to_string();
            if col.is_empty() {
                return Err(Error::Schema(format!("empty column name for role `{role}`")));
            }
            match role.trim() {
                "y" => y = Some(col),
                "t" => t = Some(col),
                "z" => z = Some(col),
                "r" => r = Some(col),
                "v" => {
                    v = col
                        .split(';')
                        .map(str::trim)
                        .filter(|c| !c.is_empty())
                        .map(String::from)
                        .collect()
                }
                other => return Err(Error::Schema(format!("unknown role `{other}`"))),
            }
        }
        let need = |x: Option<String>, role: &str| {
            x.ok_or_else(|| Error::Schema(format!("role `{role}` is required")))
        };
        Ok(Schema {
            y: need(y, "y")?,
            t: need(t, "t")?,
            z: need(z, "z")?,
            r,
            v,
        })
    }

    /// Default role names `y,t,z` plus `r`/covariates as present in `table`.
    pub fn for_table(table: &ObservationTable) -> Self {
        let v = table
            .covariates()
            .map(|c| {
                let skip = usize::from(c.has_auto_constant());
                c.names()[skip..].to_vec()
            })
            .unwrap_or_default();
        Schema {
            y: "y".into(),
            t: "t".into(),
            z: "z".into(),
            r: table.r().map(|_| "r".into()),
            v,
        }
    }

    pub fn to_spec_string(&self) -> String {
        let mut s = format!("y={},t={},z={}", self.y, self.t, self.z);
        if let Some(r) = &self.r {
            let _ = write!(s, ",r={r}");
        }
        if !self.v.is_empty() {
            let _ = write!(s, ",v={}", self.v.join(";"));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Any missing mapped field is an error.
    #[default]
    Strict,
    /// Rows with a missing mapped field are dropped and counted.
    Lenient,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    policy: MissingPolicy,
) -> Result<(ObservationTable, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema, policy)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &Schema,
    policy: MissingPolicy,
) -> Result<(ObservationTable, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let iy = find(&schema.y)?;
    let it = find(&schema.t)?;
    let iz = find(&schema.z)?;
    let ir = schema.r.as_deref().map(find).transpose()?;
    let iv = schema.v.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let (mut y, mut t, mut z) = (Vec::new(), Vec::new(), Vec::new());
    let mut r = ir.map(|_| Vec::new());
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); iv.len()];

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let mapped = [Some(iy), Some(it), Some(iz), ir]
            .into_iter()
            .flatten()
            .chain(iv.iter().copied());
        let missing = mapped
            .into_iter()
            .find(|&c| rec.get(c).is_none_or(is_missing));
        if let Some(c) = missing {
            match policy {
                MissingPolicy::Strict => {
                    return Err(Error::MissingValue {
                        row,
                        column: headers.get(c).unwrap_or("?").to_string(),
                    })
                }
                MissingPolicy::Lenient => {
                    report.rows_dropped += 1;
                    continue;
                }
            }
        }
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let real = |c: usize| -> Result<f64> {
            let s = field(c);
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::BadNumber {
                    row,
                    column: headers[c].to_string(),
                    value: s.to_string(),
                })
        };
        let binary = |c: usize| -> Result<u8> {
            let s = field(c);
            match s.parse::<f64>() {
                Ok(x) if x == 0.0 => Ok(0),
                Ok(x) if x == 1.0 => Ok(1),
                _ => Err(Error::NonBinary {
                    row,
                    column: headers[c].to_string(),
                    value: s.to_string(),
                }),
            }
        };
        y.push(real(iy)?);
        t.push(binary(it)?);
        z.push(binary(iz)?);
        if let (Some(c), Some(col)) = (ir, r.as_mut()) {
            let s = field(c);
            let x = s.parse::<f64>().ok().filter(|x| {
                x.fract() == 0.0 && *x >= 0.0 && *x <= u8::MAX as f64
            });
            let x = x.ok_or_else(|| Error::BadNumber {
                row,
                column: headers[c].to_string(),
                value: s.to_string(),
            })?;
            col.push(x as u8);
        }
        for (k, &c) in iv.iter().enumerate() {
            v[k].push(real(c)?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyTable);
    }
    let cov = if iv.is_empty() {
        None
    } else {
        Some(Covariates::from_columns(schema.v.clone(), v)?)
    };
    let table = ObservationTable::build(y, t, z, r, cov)?;
    Ok((table, report))
}

/// Writes the table with header `y,t,z[,r][,covariates]`. Reals use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv<W: Write>(table: &ObservationTable, writer: W) -> Result<()> {
    let schema = Schema::for_table(table);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.y.clone(), schema.t.clone(), schema.z.clone()];
    header.extend(schema.r.clone());
    header.extend(schema.v.iter().cloned());
    w.write_record(&header)?;
    let skip = table
        .covariates()
        .map_or(0, |c| usize::from(c.has_auto_constant()));
    for i in 0..table.n() {
        let mut rec = vec![
            format!("{:?}", table.y[i]),
            table.t[i].to_string(),
            table.z[i].to_string(),
        ];
        if let Some(r) = table.r() {
            rec.push(r[i].to_string());
        }
        if let Some(v) = table.covariates() {
            rec.extend(v.row(i)[skip..].iter().map(|x| format!("{x:?}")));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_csv(table: &ObservationTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(table, file)
}
