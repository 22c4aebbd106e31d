//! Convergence of `v^eps` to the limit solution and the large-deviations
//! slope check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effham::EffectiveLagrangianTable;
use crate::epspde::{solve_eps_pde, PdeGrid, PdeOptions};
use crate::error::{Error, Result};
use crate::grid::TensorGrid;
use crate::hj::rate_function;
use crate::mc::{estimate_tail_prob, estimate_v_eps, RegionSet, TailEstimate};
use crate::model::ModelSpec;
use crate::payoff::Payoff;

/// Relative band on the fitted slope.
pub const SLOPE_BAND: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeBudget {
    pub grid: PdeGrid,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mc,
    Pde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub source: Source,
    pub value: f64,
    pub std_error: f64,
    pub deviation: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub source: Source,
    /// Deviation at the smallest usable `eps` over the one at the largest.
    pub ratio: f64,
    pub inversions: usize,
    /// Inversions larger than twice the combined standard error.
    pub significant_inversions: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub limit: f64,
    pub rows: Vec<ConvergenceRow>,
    pub trends: Vec<TrendVerdict>,
    /// Required ratio between the last and first deviation.
    pub ratio_threshold: f64,
    pub pass: bool,
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.len() < 3 {
        return Err(Error::Precondition(format!(
            "eps list needs at least 3 values, got {}",
            eps_list.len()
        )));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::Precondition("eps list must be strictly decreasing inside (0, 1]".into()));
    }
    Ok(())
}

/// Trend verdict: the last deviation is at most `ratio_threshold` times the
/// first, and at most one increase along the sweep, itself within twice the
/// combined standard error.
pub fn trend_verdict(source: Source, rows: &[&ConvergenceRow], ratio_threshold: f64) -> TrendVerdict {
    let usable: Vec<&&ConvergenceRow> = rows.iter().filter(|r| r.usable).collect();
    if usable.len() < 2 {
        return TrendVerdict {
            source,
            ratio: f64::NAN,
            inversions: 0,
            significant_inversions: 0,
            pass: false,
        };
    }
    let mut inversions = 0;
    let mut significant = 0;
    for w in usable.windows(2) {
        let rise = w[1].deviation - w[0].deviation;
        if rise > 0.0 {
            inversions += 1;
            let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            if rise > 2.0 * se {
                significant += 1;
            }
        }
    }
    let first = usable[0].deviation;
    let last = usable[usable.len() - 1].deviation;
    let ratio = if first > 0.0 {
        last / first
    } else if last == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    TrendVerdict {
        source,
        ratio,
        inversions,
        significant_inversions: significant,
        pass: last <= ratio_threshold * first && inversions <= 1 && significant == 0,
    }
}

/// `|v^eps(t, x, y) - v(t, x)|` along `eps_list`, by Monte Carlo and, for
/// `n = m = 1` when a PDE budget is given, by the two-scale PDE.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    spec: &ModelSpec,
    h: &dyn Payoff,
    t: f64,
    x: &[f64],
    y: &[f64],
    eps_list: &[f64],
    limit: f64,
    mc: &McBudget,
    pde: Option<&PdeBudget>,
    ratio_threshold: f64,
) -> Result<ConvergenceStudy> {
    check_eps_list(eps_list)?;
    if !limit.is_finite() {
        return Err(Error::Precondition("limit value must be finite".into()));
    }
    let use_pde = pde.is_some() && spec.n == 1 && spec.m == 1;
    let per_eps: Vec<Vec<ConvergenceRow>> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut out = Vec::with_capacity(2);
            let est = estimate_v_eps(spec, eps, t, x, y, h, mc.dt, mc.n_paths, mc.seed)?;
            out.push(ConvergenceRow {
                eps,
                source: Source::Mc,
                value: est.value,
                std_error: est.std_error,
                deviation: (est.value - limit).abs(),
                usable: !est.degenerate,
            });
            if let (true, Some(p)) = (use_pde, pde) {
                let sol = solve_eps_pde(spec, eps, h, t, &p.grid, p.dt, &PdeOptions::default())?;
                let v = sol.value_at(x[0], y[0]);
                out.push(ConvergenceRow {
                    eps,
                    source: Source::Pde,
                    value: v,
                    std_error: 0.0,
                    deviation: (v - limit).abs(),
                    usable: true,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ConvergenceRow> = per_eps.into_iter().flatten().collect();
    let mut trends = Vec::new();
    for source in [Source::Mc, Source::Pde] {
        let sel: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.source == source).collect();
        if !sel.is_empty() {
            trends.push(trend_verdict(source, &sel, ratio_threshold));
        }
    }
    let pass = trends.iter().all(|t| t.pass);
    Ok(ConvergenceStudy {
        t,
        x: x.to_vec(),
        y: y.to_vec(),
        limit,
        rows,
        trends,
        ratio_threshold,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub tail: TailEstimate,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LDPReport {
    pub set: RegionSet,
    pub t: f64,
    pub x0: Vec<f64>,
    pub rows: Vec<LdpRow>,
    pub rate_inf: f64,
    pub argmin: Vec<f64>,
    /// True when the minimizing candidate lies on the boundary of the set.
    pub argmin_on_boundary: bool,
    pub candidates: usize,
    pub fit_slope: f64,
    pub fit_intercept: f64,
    pub band: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

/// Candidate points for the infimum over `set`: state-grid nodes inside it
/// plus the projections of outside nodes onto it (its boundary).
pub fn set_candidates(set: &RegionSet, grid: &TensorGrid) -> Vec<(Vec<f64>, bool)> {
    let lo = grid.lower();
    let hi = grid.upper();
    let mut out: Vec<(Vec<f64>, bool)> = Vec::new();
    for i in 0..grid.len() {
        let p = grid.point(i);
        if set.contains(&p) {
            out.push((p.clone(), on_boundary(set, &p)));
        }
        let q = project(set, &p);
        let inside_box = q.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| v >= a && v <= b);
        if inside_box && !out.iter().any(|(c, _)| c == &q) {
            out.push((q, true));
        }
    }
    out
}

fn on_boundary(set: &RegionSet, p: &[f64]) -> bool {
    match set {
        RegionSet::HalfSpace { normal, offset } => {
            let s: f64 = normal.iter().zip(p).map(|(a, b)| a * b).sum();
            (s - offset).abs() <= 1e-12 * (1.0 + offset.abs())
        }
        RegionSet::Box { lower, upper } => p
            .iter()
            .zip(lower.iter().zip(upper))
            .any(|(v, (l, u))| (v - l).abs() <= 1e-12 * (1.0 + l.abs()) || (v - u).abs() <= 1e-12 * (1.0 + u.abs())),
    }
}

fn project(set: &RegionSet, p: &[f64]) -> Vec<f64> {
    match set {
        RegionSet::HalfSpace { normal, offset } => {
            let nn: f64 = normal.iter().map(|v| v * v).sum();
            let s: f64 = normal.iter().zip(p).map(|(a, b)| a * b).sum();
            let shift = ((offset - s) / nn).max(0.0);
            let mut q: Vec<f64> = p.iter().zip(normal).map(|(v, a)| v + shift * a).collect();
            // axis-aligned faces: land exactly on the face
            let nonzero: Vec<usize> = (0..normal.len()).filter(|&k| normal[k] != 0.0).collect();
            if shift > 0.0 && nonzero.len() == 1 {
                q[nonzero[0]] = offset / normal[nonzero[0]];
            }
            q
        }
        RegionSet::Box { lower, upper } => p.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect(),
    }
}

/// Least-squares `(slope, intercept)` of `ys` against `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Compares the slope of `log P(X_t in B)` against `1/eps` with
/// `-inf_B I(.; x0, t)`.
#[allow(clippy::too_many_arguments)]
pub fn ldp_check(
    spec: &ModelSpec,
    set: &RegionSet,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    eps_list: &[f64],
    lag: &EffectiveLagrangianTable,
    state_grid: &TensorGrid,
    k_steps: usize,
    mc: &McBudget,
) -> Result<LDPReport> {
    check_eps_list(eps_list)?;
    set.validate(spec.n)?;
    if set.distance(x0) <= 0.0 {
        return Err(Error::Precondition("x0 must lie at positive distance from the target set".into()));
    }
    let candidates = set_candidates(set, state_grid);
    let rates: Vec<Option<(f64, Vec<f64>, bool)>> = candidates
        .par_iter()
        .map(|(p, bd)| match rate_function(lag, state_grid, x0, p, t, k_steps) {
            Ok(r) => Ok(Some((r.rate, p.clone(), *bd))),
            Err(Error::Unreachable(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let best = rates
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<f64>, bool)>, |acc, c| match acc {
            Some(a) if a.0 <= c.0 => Some(a),
            _ => Some(c),
        });
    let Some((rate_inf, argmin, argmin_on_boundary)) = best else {
        return Err(Error::Unreachable(
            "rate function is infinite on every candidate of the target set".into(),
        ));
    };

    let rows: Vec<LdpRow> = eps_list
        .par_iter()
        .map(|&eps| {
            let tail = estimate_tail_prob(spec, eps, t, x0, y0, set, mc.dt, mc.n_paths, mc.seed)?;
            let usable = !tail.zero_hits;
            Ok(LdpRow { tail, usable })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.usable)
        .map(|r| (1.0 / r.tail.eps, r.tail.prob.ln()))
        .unzip();
    let mut note = None;
    let (fit_slope, fit_intercept, verdict) = if xs.len() < 3 {
        if xs.is_empty() {
            note = Some("unresolvable at this budget: no hits at any eps".to_string());
        } else {
            note = Some(format!("only {} usable rows", xs.len()));
        }
        (f64::NAN, f64::NAN, Verdict::Inconclusive)
    } else {
        let (s, c) = least_squares(&xs, &ys);
        let v = if (s + rate_inf).abs() <= SLOPE_BAND * rate_inf {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        (s, c, v)
    };
    Ok(LDPReport {
        set: set.clone(),
        t,
        x0: x0.to_vec(),
        rows,
        rate_inf,
        argmin,
        argmin_on_boundary,
        candidates: candidates.len(),
        fit_slope,
        fit_intercept,
        band: SLOPE_BAND,
        verdict,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, dev: f64, se: f64) -> ConvergenceRow {
        ConvergenceRow {
            eps,
            source: Source::Mc,
            value: dev,
            std_error: se,
            deviation: dev,
            usable: true,
        }
    }

    #[test]
    fn trend_rules() {
        let rows = [row(0.4, 0.1, 0.001), row(0.2, 0.05, 0.001), row(0.1, 0.051, 0.001), row(0.05, 0.02, 0.001)];
        let refs: Vec<&ConvergenceRow> = rows.iter().collect();
        let v = trend_verdict(Source::Mc, &refs, 0.7);
        assert!(v.pass && v.inversions == 1);
        let rows = [row(0.4, 0.1, 0.001), row(0.2, 0.05, 0.001), row(0.1, 0.08, 0.001), row(0.05, 0.02, 0.001)];
        let refs: Vec<&ConvergenceRow> = rows.iter().collect();
        assert!(!trend_verdict(Source::Mc, &refs, 0.7).pass);
    }

    #[test]
    fn eps_list_rules() {
        assert!(check_eps_list(&[0.4, 0.2]).is_err());
        assert!(check_eps_list(&[0.4, 0.2, 0.3]).is_err());
        assert!(check_eps_list(&[0.4, 0.2, 0.1]).is_ok());
    }

    #[test]
    fn candidates_include_boundary() {
        let g = TensorGrid::uniform(1, -1.0, 3.0, 0.3).unwrap();
        let set = RegionSet::HalfSpace {
            normal: vec![1.0],
            offset: 1.0,
        };
        let c = set_candidates(&set, &g);
        assert!(c.iter().any(|(p, b)| *b && (p[0] - 1.0).abs() < 1e-15));
        assert!(c.iter().all(|(p, _)| p[0] >= 1.0));
        let (s, i) = least_squares(&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-14 && (i + 1.0).abs() < 1e-14);
    }
}
