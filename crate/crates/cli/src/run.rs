use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use late_bounds::data::{load_csv, write_csv, LoadReport};
use late_bounds::identify::{
    exogenous_me_set, sharp_set, wald_validity_check, BoundsReport, CellTolerance,
};
use late_bounds::inference::{confidence_interval, CiConfig, ThetaGrid};
use late_bounds::propensity::{fit_lpm, propensity_region, RegionConfig};
use late_bounds::simulation::{
    coverage_experiment, replicate_tables, simulate, write_coverage_csv, write_replication_csv,
    CoverageConfig, DgpConfig,
};
use late_bounds::{
    CellPartition, MissingPolicy, ObservationTable, ParameterSpace, PartitionConfig, PropensityCandidateSet,
    PropensityModel, Regime, Schema, Spacing, Variant,
};

use crate::args::*;
use crate::config::{preamble, resolved};
use crate::error::CliError;

/// Rendered output of one command.
pub struct Output {
    pub body: String,
}

fn regime(r: RegimeArg) -> Regime {
    match r {
        RegimeArg::Unconditional => Regime::Unconditional,
        RegimeArg::Conditional => Regime::Conditional,
        RegimeArg::WithR => Regime::WithR,
        RegimeArg::NoT => Regime::NoT,
    }
}

fn spacing(s: SpacingArg) -> Spacing {
    match s {
        SpacingArg::Quantile => Spacing::Quantile,
        SpacingArg::EqualWidth => Spacing::EqualWidth,
    }
}

fn load(d: &DataArgs) -> Result<(ObservationTable, LoadReport), CliError> {
    let schema = Schema::parse(&d.schema)?;
    let policy = if d.lenient { MissingPolicy::Lenient } else { MissingPolicy::Strict };
    Ok(load_csv(&d.input, &schema, policy)?)
}

fn partition(data: &ObservationTable, p: &PartitionArgs) -> Result<CellPartition, CliError> {
    let cfg = PartitionConfig::new(p.k_n, regime(p.regime).variant())
        .spacing(spacing(p.spacing))
        .v_cells(p.v_cells);
    Ok(CellPartition::build(data, &cfg)?)
}

fn space(lo: Option<f64>, hi: Option<f64>) -> Result<Option<ParameterSpace>, CliError> {
    match (lo, hi) {
        (Some(lo), Some(hi)) => Ok(Some(ParameterSpace::new(lo, hi)?)),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("give both --theta-lo and --theta-hi or neither".into())),
    }
}

fn report<A: Serialize, R: Serialize>(command: &str, args: &A, result: &R) -> Result<Output, CliError> {
    let config = resolved(args);
    let v = json!({ "command": command, "config": Value::Object(config), "result": result });
    let mut body = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
    body.push('\n');
    Ok(Output { body })
}

fn csv_output<A: Serialize>(
    command: &str,
    args: &A,
    write: impl FnOnce(&mut Vec<u8>) -> late_bounds::Result<()>,
) -> Result<Output, CliError> {
    let config: Map<String, Value> = resolved(args);
    let mut buf = preamble(command, &config).into_bytes();
    write(&mut buf)?;
    let body = String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(Output { body })
}

pub fn bounds(a: &BoundsArgs) -> Result<Output, CliError> {
    let (data, load) = load(&a.data)?;
    let part = partition(&data, &a.partition)?;
    let reg = regime(a.partition.regime);
    let pi = match reg {
        Regime::Conditional => Some(fit_lpm(&data, a.eta, true)?),
        _ => None,
    };
    let set = sharp_set(&data, &part, pi.as_ref(), space(a.theta_lo, a.theta_hi)?, reg)?;
    let bounds = BoundsReport::new(&set, reg, a.partition.k_n, data.n());
    report(
        "bounds",
        a,
        &json!({ "bounds": bounds, "cells": part.cell_count(), "load": load }),
    )
}

fn candidates(data: &ObservationTable, a: &CiArgs) -> Result<PropensityCandidateSet, CliError> {
    if a.delta > 0.0 || a.propensity == PropensityArg::Lpm {
        let mut cfg = RegionConfig::new(a.delta, a.seed);
        cfg.eta = a.eta;
        return Ok(propensity_region(data, &cfg)?);
    }
    let center = match a.propensity {
        PropensityArg::Fixed => {
            let p = a.pi.ok_or_else(|| CliError::Usage("--propensity fixed needs --pi".into()))?;
            PropensityModel::constant(p, data.n(), a.eta)?
        }
        _ => PropensityModel::sample_share(data),
    };
    Ok(PropensityCandidateSet::single(center))
}

pub fn ci(a: &CiArgs) -> Result<Output, CliError> {
    let (data, load) = load(&a.data)?;
    let part = partition(&data, &a.partition)?;
    let cands = candidates(&data, a)?;
    let theta_space = ParameterSpace::new(a.theta_lo, a.theta_hi)?;
    let mut cfg = CiConfig::new(a.alpha, a.b_reps, a.seed);
    cfg.preselect_beta = a.preselect_beta;
    cfg.grid = if a.grid.is_empty() {
        ThetaGrid::Even(a.grid_points)
    } else {
        ThetaGrid::Points(a.grid.clone())
    };
    let ci = confidence_interval(&data, &part, &cands, &theta_space, &cfg)?;
    report(
        "ci",
        a,
        &json!({
            "ci": ci,
            "propensity": cands.summary(),
            "cells": part.cell_count(),
            "load": load,
        }),
    )
}

pub fn check_wald(a: &CheckWaldArgs) -> Result<Output, CliError> {
    let (data, load) = load(&a.data)?;
    let cfg = PartitionConfig::new(a.k_n, Variant::WithT).spacing(spacing(a.spacing));
    let part = CellPartition::build(&data, &cfg)?;
    let tol = if a.exact {
        CellTolerance::Zero
    } else {
        CellTolerance::StandardErrors(a.tolerance_se)
    };
    let validity = wald_validity_check(&data, &part, tol)?;
    let exogenous = match exogenous_me_set(&data, &part, tol) {
        Ok(s) => json!({ "set": s }),
        Err(e) => json!({ "error": e.kind(), "message": e.to_string() }),
    };
    report(
        "check-wald",
        a,
        &json!({ "validity": validity, "exogenous_misclassification": exogenous, "load": load }),
    )
}

fn dgp(a: &SimulateArgs, seed: u64) -> DgpConfig {
    let d = DgpConfig::new(a.gamma, a.n, seed).with_r(a.regime == RegimeArg::WithR);
    if a.literal {
        d.literal()
    } else {
        d
    }
}

pub fn simulate_cmd(a: &SimulateArgs) -> Result<Output, CliError> {
    if a.sample_only {
        let table = simulate(&dgp(a, a.seed))?;
        return csv_output("simulate", a, |buf| write_csv(&table, buf));
    }
    let d = dgp(a, a.seed);
    let mut cfg = CoverageConfig::new(a.gamma, regime(a.regime), a.thetas.clone(), a.seed);
    cfg.n = a.n;
    cfg.sims = a.sims;
    cfg.b_reps = a.b_reps;
    cfg.k_n = a.k_n;
    cfg.alpha = a.alpha;
    cfg.pi = a.pi;
    cfg.mixing = d.mixing;
    cfg.noise = d.noise;
    let rows = coverage_experiment(&cfg)?;
    csv_output("simulate", a, |buf| write_coverage_csv(&rows, buf))
}

pub fn replicate(a: &ReplicateArgs) -> Result<Output, CliError> {
    let rows = replicate_tables(a.n_mc, a.seed, &a.k_sweep)?;
    csv_output("replicate-tables", a, |buf| write_replication_csv(&rows, buf))
}

pub fn dispatch(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Bounds(a) => bounds(a),
        Command::Ci(a) => ci(a),
        Command::CheckWald(a) => check_wald(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::ReplicateTables(a) => replicate(a),
    }
}

pub fn emit(out: &Output, path: Option<&Path>) -> Result<(), CliError> {
    let io = |p: &Path, source| {
        CliError::Core(late_bounds::Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    match path {
        Some(p) => std::fs::write(p, &out.body).map_err(|e| io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(out.body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| io(Path::new("<stdout>"), e))
        }
    }
}
