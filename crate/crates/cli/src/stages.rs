use std::fs;
use std::path::{Path, PathBuf};

use twoscale_core::cell::{
    domain_doubling_check, hopf_cole_crosscheck, lipschitz_report, solve_cell, vanishing_discount, DEFAULT_DELTAS,
};
use twoscale_core::effham::{legendre_table, property_suite, tabulate_h, CheckOutcome, EffectiveHamiltonianTable};
use twoscale_core::epspde::{solve_eps_pde, PdeOptions, MIN_EPS};
use twoscale_core::export;
use twoscale_core::grid::TensorGrid;
use twoscale_core::hj::{hopf_lax_oracle, rate_function, solve_effective_hj, HJSolution};
use twoscale_core::ldp::{convergence_study, ldp_check, McBudget, PdeBudget, Verdict as LdpVerdict, SLOPE_BAND};
use twoscale_core::mc::{estimate_v_eps, MCEstimate, MIN_ESS};
use twoscale_core::measure::{effective_h_super, ou_analytic_measure, solve_stationary_fp};
use twoscale_core::model::{
    ball_samples, check_liapounov, liapounov_coefficient, validate_model, LiapounovSpec, ModelSpec, Regime,
};
use twoscale_core::payoff::StandardPayoff;

use crate::config::{AxisSpec, McConfig, RunConfig, Stage};
use crate::{CliError, Status, Summary, Verdict};

const TABLE_JSON: &str = "effham_table.json";
const HJ_JSON: &str = "hj_solution.json";

/// Holds the model, the output directory and results shared between stages.
pub struct Runner<'a> {
    cfg: &'a RunConfig,
    spec: ModelSpec,
    out: PathBuf,
    verdicts: Vec<Verdict>,
    artifacts: Vec<String>,
    table: Option<EffectiveHamiltonianTable>,
    hj: Option<HJSolution>,
    mc: Option<Vec<(f64, MCEstimate)>>,
}

fn status(pass: bool) -> Status {
    if pass {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn tag(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn axis_header(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|k| format!("{prefix}{k}")).collect()
    }
}

/// Nodes in the middle half of the box, where boundary effects of a bounded
/// domain do not reach.
fn inner_nodes(grid: &TensorGrid) -> Vec<usize> {
    let lo = grid.lower();
    let hi = grid.upper();
    (0..grid.len())
        .filter(|&i| {
            grid.point(i)
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(x, (a, b))| (x - 0.5 * (a + b)).abs() <= 0.25 * (b - a) + 1e-12)
        })
        .collect()
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a RunConfig, out: &Path) -> Result<Self, CliError> {
        let spec = cfg.model.build()?;
        fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self {
            cfg,
            spec,
            out: out.to_path_buf(),
            verdicts: Vec::new(),
            artifacts: Vec::new(),
            table: None,
            hj: None,
            mc: None,
        })
    }

    fn n(&self) -> usize {
        self.spec.n
    }

    fn artifact(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn verdict(&mut self, stage: Stage, name: impl Into<String>, measured: f64, threshold: f64, status: Status, detail: String) {
        let v = Verdict {
            stage,
            name: name.into(),
            measured,
            threshold,
            status,
            detail,
        };
        log::info!("{} {}: {:?} (measured {:.3e}, threshold {:.3e})", v.stage, v.name, v.status, measured, threshold);
        self.verdicts.push(v);
    }

    fn outcome(&mut self, stage: Stage, name: &str, c: &CheckOutcome) {
        let detail = match &c.witness {
            Some(w) => format!("{} of {} checks violated; worst margin {:.3e}; {w}", c.violations, c.checked, c.worst_margin),
            None => format!("{} checks; worst margin {:.3e}", c.checked, c.worst_margin),
        };
        self.verdict(stage, name, c.violations as f64, 0.0, status(c.pass), detail);
    }

    fn check_dim(&self, what: &str, v: &[f64], dim: usize) -> Result<(), CliError> {
        if v.len() != dim {
            return Err(CliError::Config(format!("{what} must have length {dim}, got {}", v.len())));
        }
        Ok(())
    }

    fn axis(&self, a: &AxisSpec) -> Result<TensorGrid, CliError> {
        a.grid(self.n())
    }

    /// `|sigma^T p|^2` for the constant family, whose effective Hamiltonian it is.
    fn constant_c(&self) -> Option<f64> {
        let (sigma, _) = self.cfg.model.constant_coefficients()?;
        if self.n() == 1 {
            Some(sigma.iter().map(|s| s * s).sum())
        } else {
            None
        }
    }

    pub fn run_stage(&mut self, s: Stage) -> Result<(), CliError> {
        match s {
            Stage::Validate => self.validate(),
            Stage::Cell => self.cell(),
            Stage::Measure => self.measure(),
            Stage::Effham => self.effham(),
            Stage::Hj => self.hj_stage(),
            Stage::Rate => self.rate(),
            Stage::Mc => self.mc_stage(),
            Stage::Pde2d => self.pde2d(),
            Stage::Ldp => self.ldp(),
        }
    }

    pub fn finish(mut self, stages: Vec<Stage>) -> Result<Summary, CliError> {
        let pass = self.verdicts.iter().all(|v| v.status == Status::Pass);
        let path = self.artifact("summary.json");
        let summary = Summary {
            name: self.cfg.name.clone().unwrap_or_else(|| "run".into()),
            seed: self.cfg.seed,
            model: self.cfg.model.family_name().into(),
            alpha: self.spec.alpha,
            stages,
            artifacts: self.artifacts,
            verdicts: self.verdicts,
            pass,
        };
        export::write_json(&path, &summary)?;
        Ok(summary)
    }

    fn validate(&mut self) -> Result<(), CliError> {
        let c = self.cfg.validate.as_ref().expect("checked by caller");
        let report = validate_model(&self.spec, c.budget, self.cfg.seed)?;
        let path = self.artifact("validation.csv");
        export::validation_csv(&report, &path)?;
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|k| k.applicable && !k.pass)
            .map(|k| k.name.as_str())
            .collect();
        let detail = if failed.is_empty() {
            format!("{} checks, budget {}", report.checks.len(), report.sample_budget)
        } else {
            format!("failed: {}", failed.join(", "))
        };
        self.verdict(Stage::Validate, "model_assumptions", failed.len() as f64, 0.0, status(report.pass), detail);

        // G[a |y|^2] growth for a across the admissible range, pbar in the unit ball
        let base = liapounov_coefficient(&self.spec)?;
        let sup = base.admissible_sup(self.spec.b_ergodic);
        let r = self.spec.r_ergodic.max(1.0);
        let radii: Vec<f64> = [1.5, 2.0, 3.0, 4.0, 6.0, 8.0].iter().map(|k| k * r).collect();
        let xbar = vec![0.0; self.n()];
        let pbars = ball_samples(self.n(), 1.0, 8, self.cfg.seed ^ 0x11a);
        let mut bad = 0usize;
        let mut total = 0usize;
        for frac in [0.1, 0.5, 0.9] {
            let lia = LiapounovSpec {
                a: frac * sup,
                t_tau: base.t_tau,
            };
            for p in &pbars {
                total += 1;
                if !check_liapounov(&self.spec, &lia, &xbar, p, &radii)?.pass {
                    bad += 1;
                }
            }
        }
        self.verdict(
            Stage::Validate,
            "liapounov_growth",
            bad as f64,
            0.0,
            status(bad == 0),
            format!("{bad} of {total} (a, pbar) pairs without growth"),
        );
        Ok(())
    }

    fn cell(&mut self) -> Result<(), CliError> {
        let c = self.cfg.cell.as_ref().expect("checked by caller");
        let grid = self.cfg.fast_grid(self.spec.m)?;
        let regime = self.spec.regime();
        let deltas = c.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
        let n = self.n();
        let mut head = vec!["point".to_string()];
        head.extend(axis_header("x", n));
        head.extend(axis_header("p", n));
        head.extend(header(&[
            "lambda",
            "cauchy_increment",
            "residual",
            "lipschitz_ratio",
            "c_bar",
            "c_bar_doubled",
            "lambda_doubled",
            "crosscheck",
        ]));
        let mut rows = Vec::new();
        for (k, pt) in c.points.iter().enumerate() {
            self.check_dim("cell point x", &pt.x, n)?;
            self.check_dim("cell point p", &pt.p, n)?;
            let label = format!("x={} p={}", tag(&pt.x), tag(&pt.p));
            let corr = vanishing_discount(&self.spec, &pt.x, &pt.p, regime, &deltas, &grid)?;
            let path = self.artifact(&format!("cell_{k}.csv"));
            export::corrector_csv(&corr, &path)?;
            // every solve above checked the discounted bounds; a violation aborts the run
            self.verdict(
                Stage::Cell,
                format!("cell_bounds[{k}]"),
                0.0,
                0.0,
                Status::Pass,
                format!("{label}: {} discounted solves within bounds", deltas.len()),
            );

            let sols = c
                .lipschitz_deltas
                .iter()
                .map(|&d| solve_cell(&self.spec, regime, &pt.x, &pt.p, d, &grid))
                .collect::<Result<Vec<_>, _>>()?;
            let lip = lipschitz_report(&sols)?;
            let spread = lip.ratio - 1.0;
            self.verdict(
                Stage::Cell,
                format!("lipschitz_uniform[{k}]"),
                spread,
                c.lipschitz_tol,
                status(spread <= c.lipschitz_tol),
                format!("{label}: max/min discrete gradient across delta = {:.6}", lip.ratio),
            );

            let dbl = domain_doubling_check(&self.spec, &pt.x, &pt.p, regime, &deltas, &grid)?;
            self.verdict(
                Stage::Cell,
                format!("log_growth_doubling[{k}]"),
                dbl.c_bar_change,
                c.doubling_tol,
                status(dbl.c_bar_change <= c.doubling_tol),
                format!("{label}: C = {:.6} -> {:.6}", dbl.c_bar, dbl.c_bar_doubled),
            );

            let cross = match regime {
                Regime::Critical if self.spec.m == 1 && self.spec.alpha == 2.0 => {
                    let hc = hopf_cole_crosscheck(&self.spec, &pt.x, &pt.p, &grid)?;
                    Some(("hopf_cole", hc))
                }
                Regime::Supercritical => {
                    let mu = solve_stationary_fp(&self.spec, &grid)?;
                    Some(("measure_integral", effective_h_super(&self.spec, &pt.x, &pt.p, &mu)?))
                }
                _ => None,
            };
            if let Some((what, other)) = cross {
                let diff = (other - corr.lambda).abs();
                self.verdict(
                    Stage::Cell,
                    format!("{what}_agreement[{k}]"),
                    diff,
                    c.crosscheck_tol,
                    status(diff <= c.crosscheck_tol),
                    format!("{label}: vanishing discount {:.8}, {what} {:.8}", corr.lambda, other),
                );
            }

            let mut row = vec![k.to_string()];
            row.extend(pt.x.iter().chain(&pt.p).copied().map(export::fmt));
            row.extend(
                [
                    corr.lambda,
                    corr.cauchy_increment,
                    corr.residual_inf,
                    lip.ratio,
                    dbl.c_bar,
                    dbl.c_bar_doubled,
                    dbl.lambda_doubled,
                    cross.map(|c| c.1).unwrap_or(f64::NAN),
                ]
                .into_iter()
                .map(export::fmt),
            );
            rows.push(row);
        }
        let path = self.artifact("cell.csv");
        export::write_csv(&path, &head, rows)?;
        Ok(())
    }

    fn measure(&mut self) -> Result<(), CliError> {
        let c = self.cfg.measure.as_ref().expect("checked by caller");
        let grid = self.cfg.fast_grid(self.spec.m)?;
        let mu = solve_stationary_fp(&self.spec, &grid)?;
        let path = self.artifact("measure.csv");
        export::measure_csv(&mu, &path)?;
        if self.spec.globally_ou {
            let g = ou_analytic_measure(&self.spec.b_far, &self.spec.tau_far)?;
            let l1 = mu.l1_distance(|y| g.pdf(y));
            self.verdict(
                Stage::Measure,
                "ou_measure_l1",
                l1,
                c.l1_tol,
                status(l1 <= c.l1_tol),
                format!("h_y = {}, y_max = {}", grid.spacing(), grid.y_max()),
            );
        } else {
            log::info!("fast process is not globally OU; no analytic measure to compare against");
        }
        Ok(())
    }

    fn effham(&mut self) -> Result<(), CliError> {
        let c = self.cfg.effham.as_ref().expect("checked by caller");
        let grid = self.cfg.fast_grid(self.spec.m)?;
        let xg = self.axis(&c.x)?;
        let pg = self.axis(&c.p)?;
        let deltas = c.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
        let table = tabulate_h(&self.spec, self.spec.regime(), &xg, &pg, &deltas, &grid)?;
        let path = self.artifact("effham_table.csv");
        export::hamiltonian_csv(&table, &path)?;
        let path = self.artifact(TABLE_JSON);
        export::write_json(&path, &table)?;

        let ym = grid.y_max();
        let k = c.y_sample.max(2);
        let ys_grid = TensorGrid::uniform(self.spec.m, -ym, ym, 2.0 * ym / (k - 1) as f64)?;
        let ys: Vec<Vec<f64>> = (0..ys_grid.len()).map(|i| ys_grid.point(i)).collect();
        let props = property_suite(&table, &self.spec, &ys)?;
        let path = self.artifact("effham_properties.json");
        export::write_json(&path, &props)?;
        self.outcome(Stage::Effham, "continuity", &props.continuity);
        self.outcome(Stage::Effham, "convexity", &props.convexity);
        self.outcome(Stage::Effham, "table_bounds", &props.bounds);
        self.outcome(Stage::Effham, "semi_homogeneity", &props.semi_homogeneity);

        if self.cfg.model.constant_coefficients().is_some() {
            let y0 = vec![0.0; self.spec.m];
            let mut worst: f64 = 0.0;
            for ix in 0..xg.len() {
                let x = xg.point(ix);
                for ip in 0..pg.len() {
                    let p = pg.point(ip);
                    let exact: f64 = self.spec.sigma_t_p(&x, &y0, &p).iter().map(|v| v * v).sum();
                    let err = (table.value(ix, ip) - exact).abs() / exact.max(1.0);
                    worst = worst.max(err);
                }
            }
            self.verdict(
                Stage::Effham,
                "constant_sigma_identity",
                worst,
                c.identity_tol,
                status(worst <= c.identity_tol),
                format!("max |H - |sigma^T p|^2| / max(1, |sigma^T p|^2) over {} nodes", table.values.len()),
            );
        }
        self.table = Some(table);
        Ok(())
    }

    fn load_table(&mut self) -> Result<EffectiveHamiltonianTable, CliError> {
        if let Some(t) = &self.table {
            return Ok(t.clone());
        }
        let path = self.out.join(TABLE_JSON);
        let text = fs::read_to_string(&path).map_err(|_| {
            CliError::Missing(format!("{} not found; run the effham stage first", path.display()))
        })?;
        let t: EffectiveHamiltonianTable = serde_json::from_str(&text)
            .map_err(|e| CliError::Missing(format!("{} is not a valid table: {e}", path.display())))?;
        if t.n() != self.n() {
            return Err(CliError::Missing(format!("{} has dimension {}, model has {}", path.display(), t.n(), self.n())));
        }
        self.table = Some(t.clone());
        Ok(t)
    }

    fn load_hj(&mut self) -> Result<HJSolution, CliError> {
        if let Some(s) = &self.hj {
            return Ok(s.clone());
        }
        let path = self.out.join(HJ_JSON);
        let text = fs::read_to_string(&path)
            .map_err(|_| CliError::Missing(format!("{} not found; run the hj stage first", path.display())))?;
        let s: HJSolution = serde_json::from_str(&text)
            .map_err(|e| CliError::Missing(format!("{} is not a valid solution: {e}", path.display())))?;
        self.hj = Some(s.clone());
        Ok(s)
    }

    fn hj_stage(&mut self) -> Result<(), CliError> {
        let c = self.cfg.hj.as_ref().expect("checked by caller");
        let table = self.load_table()?;
        c.payoff.validate(self.n())?;
        self.check_dim("hj.probe", &c.probe, self.n())?;
        let xg = self.axis(&c.x)?;
        let sol = solve_effective_hj(&table, &c.payoff, c.t, &xg, c.cfl)?;
        let path = self.artifact("hj_solution.csv");
        export::hj_csv(&sol, &path)?;
        let path = self.artifact(HJ_JSON);
        export::write_json(&path, &sol)?;
        let v = sol.value_at(&c.probe);
        log::info!("v({}, {}) = {v:.8}", c.t, tag(&c.probe));
        let mut head = vec!["t".to_string()];
        head.extend(axis_header("x", self.n()));
        head.push("v".into());
        let mut row = vec![export::fmt(c.t)];
        row.extend(c.probe.iter().copied().map(export::fmt));
        row.push(export::fmt(v));
        let path = self.artifact("hj_probe.csv");
        export::write_csv(&path, &head, [row])?;

        if let Some(cc) = self.constant_c() {
            let mut worst: f64 = 0.0;
            let fin = sol.final_values();
            for i in inner_nodes(&xg) {
                let x = xg.point(i)[0];
                let exact = hopf_lax_oracle(cc, &c.payoff, c.t, x)?;
                worst = worst.max((fin[i] - exact).abs());
            }
            self.verdict(
                Stage::Hj,
                "hopf_lax_sup_error",
                worst,
                c.oracle_tol,
                status(worst <= c.oracle_tol),
                format!("middle half of the x grid, h_x = {}, {} steps", c.x.step, sol.n_steps),
            );
        }
        self.hj = Some(sol);
        Ok(())
    }

    fn rate(&mut self) -> Result<(), CliError> {
        let c = self.cfg.rate.as_ref().expect("checked by caller");
        let table = self.load_table()?;
        let n = self.n();
        self.check_dim("rate.x0", &c.x0, n)?;
        let qg = self.axis(&c.q)?;
        let sg = self.axis(&c.state)?;
        let lag = legendre_table(&table, &qg)?;
        let path = self.artifact("lagrangian.csv");
        export::lagrangian_csv(&lag, &path)?;
        let mut head = vec!["target".to_string()];
        head.extend(axis_header("x0_", n));
        head.extend(axis_header("x", n));
        head.extend(header(&["t", "rate"]));
        let mut rows = Vec::new();
        for (k, target) in c.targets.iter().enumerate() {
            self.check_dim("rate target", target, n)?;
            let r = rate_function(&lag, &sg, &c.x0, target, c.t, c.k_steps)?;
            let path = self.artifact(&format!("rate_path_{k}.csv"));
            export::rate_path_csv(&r, &path)?;
            if let Some(cc) = self.constant_c() {
                let d = target[0] - c.x0[0];
                let exact = d * d / (4.0 * cc * c.t);
                let err = if exact > 0.0 { (r.rate - exact).abs() / exact } else { r.rate.abs() };
                self.verdict(
                    Stage::Rate,
                    format!("quadratic_rate[{k}]"),
                    err,
                    c.rel_tol,
                    status(err <= c.rel_tol),
                    format!("x0 = {}, x = {}, t = {}: I = {:.8}, oracle {:.8}", tag(&c.x0), tag(target), c.t, r.rate, exact),
                );
            }
            let mut row = vec![k.to_string()];
            row.extend(c.x0.iter().chain(target).copied().map(export::fmt));
            row.push(export::fmt(c.t));
            row.push(export::fmt(r.rate));
            rows.push(row);
        }
        let path = self.artifact("rate.csv");
        export::write_csv(&path, &head, rows)?;
        Ok(())
    }

    fn check_mc(&self, c: &McConfig) -> Result<(), CliError> {
        self.check_dim("mc.x0", &c.x0, self.n())?;
        self.check_dim("mc.y0", &c.y0, self.spec.m)?;
        c.payoff.validate(self.n())?;
        Ok(())
    }

    fn mc_estimates(&mut self) -> Result<Vec<(f64, MCEstimate)>, CliError> {
        if let Some(m) = &self.mc {
            return Ok(m.clone());
        }
        let c = self.cfg.mc.as_ref().ok_or_else(|| CliError::Config("an [mc] section is required".into()))?;
        self.check_mc(c)?;
        let mut out = Vec::with_capacity(c.eps.len());
        for &eps in &c.eps {
            let e = estimate_v_eps(&self.spec, eps, c.t, &c.x0, &c.y0, &c.payoff, c.dt, c.n_paths, self.cfg.seed)?;
            out.push((eps, e));
        }
        self.mc = Some(out.clone());
        Ok(out)
    }

    fn mc_stage(&mut self) -> Result<(), CliError> {
        let c = self.cfg.mc.as_ref().expect("checked by caller");
        let rows = self.mc_estimates()?;
        let path = self.artifact("mc.csv");
        export::mc_csv(&rows, &path)?;
        let closed_form = match (&c.payoff, self.cfg.model.constant_coefficients()) {
            (StandardPayoff::Linear { slope, offset, .. }, Some((_, phi))) => {
                let y0 = vec![0.0; self.spec.m];
                let q: f64 = self.spec.sigma_t_p(&c.x0, &y0, slope).iter().map(|v| v * v).sum();
                let px: f64 = slope.iter().zip(&c.x0).map(|(a, b)| a * b).sum();
                let pphi: f64 = slope.iter().zip(phi).map(|(a, b)| a * b).sum();
                Some(move |eps: f64| offset + px + eps * pphi * c.t + q * c.t)
            }
            _ => None,
        };
        for (eps, e) in rows {
            self.verdict(
                Stage::Mc,
                format!("effective_sample_size[eps={eps}]"),
                e.effective_sample_size,
                MIN_ESS,
                status(!e.degenerate),
                format!("{} paths, estimate {:.8} +- {:.2e}", e.n_paths, e.value, e.std_error),
            );
            if let Some(cf) = &closed_form {
                let exact = cf(eps);
                let dev = (e.value - exact).abs() / e.std_error;
                let st = if e.clamped > 0 {
                    Status::Inconclusive
                } else {
                    status(dev <= c.oracle_se)
                };
                self.verdict(
                    Stage::Mc,
                    format!("gaussian_mgf[eps={eps}]"),
                    dev,
                    c.oracle_se,
                    st,
                    format!("estimate {:.8}, closed form {:.8}, {} clamped paths", e.value, exact, e.clamped),
                );
            }
        }
        Ok(())
    }

    fn pde2d(&mut self) -> Result<(), CliError> {
        let c = self.cfg.pde2d.as_ref().expect("checked by caller");
        let mc = self.cfg.mc.as_ref().expect("checked by config");
        if self.spec.n != 1 || self.spec.m != 1 {
            return Err(CliError::Config("pde2d needs a model with n = m = 1".into()));
        }
        let rows = self.mc_estimates()?;
        let options = PdeOptions {
            snapshot_times: c.snapshot_times.clone(),
            slow_only: false,
        };
        for (k, (eps, e)) in rows.into_iter().enumerate() {
            if eps < MIN_EPS {
                self.verdict(
                    Stage::Pde2d,
                    format!("pde_vs_mc[eps={eps}]"),
                    f64::NAN,
                    c.abs_tol,
                    Status::Inconclusive,
                    format!("eps below the solver floor {MIN_EPS}"),
                );
                continue;
            }
            let sol = solve_eps_pde(&self.spec, eps, &mc.payoff, mc.t, &c.grid, c.dt, &options)?;
            let path = self.artifact(&format!("pde2d_{k}.csv"));
            export::pde_csv(&sol, &path)?;
            let v = sol.value_at(mc.x0[0], mc.y0[0]);
            let diff = (v - e.value).abs();
            let tol = c.se_factor * e.std_error + c.abs_tol;
            self.verdict(
                Stage::Pde2d,
                format!("pde_vs_mc[eps={eps}]"),
                diff,
                tol,
                status(diff <= tol),
                format!("pde {:.8}, mc {:.8} +- {:.2e}, {} steps", v, e.value, e.std_error, sol.n_steps),
            );
        }
        Ok(())
    }

    fn ldp(&mut self) -> Result<(), CliError> {
        let l = self.cfg.ldp.as_ref().expect("checked by caller");
        let n = self.n();
        if let Some(c) = &l.convergence {
            let hc = self
                .cfg
                .hj
                .as_ref()
                .ok_or_else(|| CliError::Config("ldp.convergence uses the [hj] payoff and horizon; add an [hj] section".into()))?;
            self.check_dim("ldp.convergence.x", &c.x, n)?;
            self.check_dim("ldp.convergence.y", &c.y, self.spec.m)?;
            let sol = self.load_hj()?;
            if (sol.horizon() - hc.t).abs() > 1e-12 {
                return Err(CliError::Missing(format!(
                    "stored limit solution has horizon {}, [hj] asks for {}",
                    sol.horizon(),
                    hc.t
                )));
            }
            let limit = sol.value_at(&c.x);
            let budget = McBudget {
                n_paths: c.n_paths,
                dt: c.dt,
                seed: self.cfg.seed,
            };
            let pde = match (&c.pde_grid, c.pde_dt) {
                (Some(grid), Some(dt)) => Some(PdeBudget { grid: grid.clone(), dt }),
                _ => None,
            };
            let study = convergence_study(&self.spec, &hc.payoff, hc.t, &c.x, &c.y, &c.eps, limit, &budget, pde.as_ref(), c.ratio)?;
            let path = self.artifact("convergence.csv");
            export::convergence_csv(&study, &path)?;
            for tr in &study.trends {
                let src = serde_json::to_value(tr.source).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                self.verdict(
                    Stage::Ldp,
                    format!("convergence_trend[{src}]"),
                    tr.ratio,
                    c.ratio,
                    status(tr.pass),
                    format!(
                        "limit {:.8}; {} inversions, {} beyond 2 SE",
                        limit, tr.inversions, tr.significant_inversions
                    ),
                );
            }
        }
        if let Some(c) = &l.tail {
            let table = self.load_table()?;
            self.check_dim("ldp.tail.x0", &c.x0, n)?;
            self.check_dim("ldp.tail.y0", &c.y0, self.spec.m)?;
            let qg = self.axis(&c.q)?;
            let sg = self.axis(&c.state)?;
            let lag = legendre_table(&table, &qg)?;
            let budget = McBudget {
                n_paths: c.n_paths,
                dt: c.dt,
                seed: self.cfg.seed,
            };
            let report = ldp_check(&self.spec, &c.set, c.t, &c.x0, &c.y0, &c.eps, &lag, &sg, c.k_steps, &budget)?;
            let path = self.artifact("ldp.csv");
            export::ldp_csv(&report, &path)?;
            let path = self.artifact("ldp_report.json");
            export::write_json(&path, &report)?;
            let rel = (report.fit_slope + report.rate_inf).abs() / report.rate_inf;
            let st = match report.verdict {
                LdpVerdict::Pass => Status::Pass,
                LdpVerdict::Fail => Status::Fail,
                LdpVerdict::Inconclusive => Status::Inconclusive,
            };
            self.verdict(
                Stage::Ldp,
                "ldp_slope",
                rel,
                SLOPE_BAND,
                st,
                format!(
                    "slope {:.6}, -inf I = {:.6} at {}{}",
                    report.fit_slope,
                    -report.rate_inf,
                    tag(&report.argmin),
                    report.note.as_ref().map(|s| format!("; {s}")).unwrap_or_default()
                ),
            );
        }
        Ok(())
    }
}
