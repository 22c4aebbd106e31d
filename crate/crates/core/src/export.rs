//! CSV and JSON artifacts. Floats are written with 17 significant digits
//! so that a read-back reproduces the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::cell::CorrectorField;
use crate::effham::{EffectiveHamiltonianTable, EffectiveLagrangianTable};
use crate::epspde::EpsPdeSolution;
use crate::error::Result;
use crate::hj::{HJSolution, RateFunctionResult};
use crate::ldp::{ConvergenceStudy, LDPReport};
use crate::mc::MCEstimate;
use crate::measure::InvariantMeasureField;
use crate::model::ValidationReport;

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn axis_names(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=count).map(|k| format!("{prefix}{k}")).collect()
    }
}

/// Writes one header row and the data rows.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn validation_csv(report: &ValidationReport, path: &Path) -> Result<()> {
    let header: Vec<String> = ["check", "applicable", "pass", "worst_margin", "samples"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = report.checks.iter().map(|c| {
        vec![
            c.name.clone(),
            c.applicable.to_string(),
            c.pass.to_string(),
            fmt(c.worst_margin),
            c.samples.to_string(),
        ]
    });
    write_csv(path, &header, rows)
}

pub fn measure_csv(mu: &InvariantMeasureField, path: &Path) -> Result<()> {
    let m = mu.grid.dim();
    let mut header = axis_names("y", m);
    header.extend(["probability".to_string(), "density".to_string()]);
    let rows = (0..mu.grid.len()).map(|i| {
        let mut r: Vec<String> = mu.grid.point(i).into_iter().map(fmt).collect();
        r.push(fmt(mu.probabilities[i]));
        r.push(fmt(mu.density[i]));
        r
    });
    write_csv(path, &header, rows)
}

pub fn corrector_csv(c: &CorrectorField, path: &Path) -> Result<()> {
    let mut header = axis_names("y", c.grid.dim());
    header.push("w".into());
    let rows = (0..c.grid.len()).map(|i| {
        let mut r: Vec<String> = c.grid.point(i).into_iter().map(fmt).collect();
        r.push(fmt(c.w[i]));
        r
    });
    write_csv(path, &header, rows)
}

pub fn hamiltonian_csv(t: &EffectiveHamiltonianTable, path: &Path) -> Result<()> {
    let n = t.n();
    let mut header = axis_names("x", n);
    header.extend(axis_names("p", n));
    header.extend(["h_bar".to_string(), "diagnostic".to_string()]);
    let np = t.p_grid.len();
    let rows = (0..t.x_grid.len()).flat_map(|ix| {
        (0..np).map(move |ip| {
            let mut r: Vec<String> = t.x_grid.point(ix).into_iter().map(fmt).collect();
            r.extend(t.p_grid.point(ip).into_iter().map(fmt));
            let k = t.index(ix, ip);
            r.push(fmt(t.values[k]));
            r.push(fmt(t.diagnostics[k]));
            r
        })
    });
    write_csv(path, &header, rows)
}

pub fn lagrangian_csv(l: &EffectiveLagrangianTable, path: &Path) -> Result<()> {
    let n = l.q_grid.dims();
    let mut header = axis_names("x", n);
    header.extend(axis_names("q", n));
    header.extend(["l_bar".to_string(), "feasible".to_string()]);
    let nq = l.q_grid.len();
    let rows = (0..l.x_grid.len()).flat_map(|ix| {
        (0..nq).map(move |iq| {
            let mut r: Vec<String> = l.x_grid.point(ix).into_iter().map(fmt).collect();
            r.extend(l.q_grid.point(iq).into_iter().map(fmt));
            let k = l.index(ix, iq);
            r.push(fmt(l.values[k]));
            r.push(l.feasible[k].to_string());
            r
        })
    });
    write_csv(path, &header, rows)
}

pub fn hj_csv(s: &HJSolution, path: &Path) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(axis_names("x", s.x_grid.dims()));
    header.push("v".into());
    let rows = s.times.iter().zip(&s.snapshots).flat_map(|(t, v)| {
        (0..s.x_grid.len()).map(move |i| {
            let mut r = vec![fmt(*t)];
            r.extend(s.x_grid.point(i).into_iter().map(fmt));
            r.push(fmt(v[i]));
            r
        })
    });
    write_csv(path, &header, rows)
}

pub fn rate_path_csv(r: &RateFunctionResult, path: &Path) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(axis_names("x", r.x.len()));
    let rows = r.path.iter().map(|(t, x)| {
        let mut row = vec![fmt(*t)];
        row.extend(x.iter().copied().map(fmt));
        row
    });
    write_csv(path, &header, rows)
}

pub fn mc_csv(rows: &[(f64, MCEstimate)], path: &Path) -> Result<()> {
    let header: Vec<String> = ["eps", "estimate", "std_error", "ess", "n_paths", "seed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let data = rows.iter().map(|(eps, e)| {
        vec![
            fmt(*eps),
            fmt(e.value),
            fmt(e.std_error),
            fmt(e.effective_sample_size),
            e.n_paths.to_string(),
            e.seed.to_string(),
        ]
    });
    write_csv(path, &header, data)
}

pub fn pde_csv(s: &EpsPdeSolution, path: &Path) -> Result<()> {
    let header: Vec<String> = ["t", "x", "y", "v"].iter().map(|s| s.to_string()).collect();
    let ny = s.y.len();
    let rows = s.times.iter().zip(&s.snapshots).flat_map(|(t, v)| {
        s.x.iter().enumerate().flat_map(move |(i, x)| {
            s.y.iter()
                .enumerate()
                .map(move |(j, y)| vec![fmt(*t), fmt(*x), fmt(*y), fmt(v[i * ny + j])])
        })
    });
    write_csv(path, &header, rows)
}

pub fn convergence_csv(c: &ConvergenceStudy, path: &Path) -> Result<()> {
    let header: Vec<String> = ["eps", "source", "value", "std_error", "limit", "deviation", "usable"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = c.rows.iter().map(|r| {
        vec![
            fmt(r.eps),
            serde_json::to_value(r.source)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            fmt(r.value),
            fmt(r.std_error),
            fmt(c.limit),
            fmt(r.deviation),
            r.usable.to_string(),
        ]
    });
    write_csv(path, &header, rows)
}

pub fn ldp_csv(r: &LDPReport, path: &Path) -> Result<()> {
    let header: Vec<String> = ["eps", "prob", "std_error", "eps_log_prob", "hits", "n_paths", "usable"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = r.rows.iter().map(|row| {
        let t = &row.tail;
        vec![
            fmt(t.eps),
            fmt(t.prob),
            fmt(t.std_error),
            fmt(t.eps_log_prob),
            t.hits.to_string(),
            t.n_paths.to_string(),
            row.usable.to_string(),
        ]
    });
    write_csv(path, &header, rows)
}
