//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p twoscale-cli --test acceptance`. A substring
//! argument restricts the run, e.g. `-- c09`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use twoscale_core::cell::{
    domain_doubling_check, hopf_cole_crosscheck, lipschitz_report, solve_cell, vanishing_discount, DEFAULT_DELTAS,
};
use twoscale_core::effham::{legendre_table, property_suite, tabulate_h, EffectiveHamiltonianTable};
use twoscale_core::epspde::{solve_eps_pde, PdeGrid, PdeOptions};
use twoscale_core::families::{BumpSigma, ConstantSigma, PerturbedOu};
use twoscale_core::grid::{FastGrid, TensorGrid};
use twoscale_core::hj::{hopf_lax_oracle, rate_function, solve_effective_hj};
use twoscale_core::ldp::{convergence_study, ldp_check, McBudget, PdeBudget, Source, Verdict};
use twoscale_core::mc::{estimate_v_eps, RegionSet};
use twoscale_core::measure::{effective_h_super, ou_analytic_measure, solve_stationary_fp};
use twoscale_core::model::{ModelSpec, Regime};
use twoscale_core::payoff::StandardPayoff;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bump_critical() -> ModelSpec {
    BumpSigma::one_d(1.0, 1.0).spec(2.0).unwrap()
}

fn bump_super() -> ModelSpec {
    BumpSigma::one_d(1.0, 1.0).spec(3.0).unwrap()
}

fn fast_grid() -> FastGrid {
    FastGrid::new(1, 8.0, 0.05).unwrap()
}

fn bump_table(spec: &ModelSpec) -> EffectiveHamiltonianTable {
    let xg = TensorGrid::uniform(1, -4.0, 4.0, 0.25).unwrap();
    let pg = TensorGrid::uniform(1, -1.5, 1.5, 0.05).unwrap();
    tabulate_h(spec, spec.regime(), &xg, &pg, &DEFAULT_DELTAS, &fast_grid()).unwrap()
}

fn y_sample() -> Vec<Vec<f64>> {
    let g = TensorGrid::uniform(1, -8.0, 8.0, 0.25).unwrap();
    (0..g.len()).map(|i| g.point(i)).collect()
}

fn tanh_payoff() -> StandardPayoff {
    StandardPayoff::Tanh {
        amplitude: 1.0,
        scale: 1.0,
        center: 0.0,
    }
}

const BUMP_POINTS: [(f64, f64); 3] = [(0.0, 1.0), (1.0, -0.5), (-2.0, 1.5)];

fn c01_constant_identity() -> Outcome {
    let sigma = 0.8;
    let grid = fast_grid();
    let points = [(0.0, 0.5), (1.0, 1.0), (-1.0, -2.0)];
    let sup = ConstantSigma::one_d(sigma, 0.0, 1.0).spec(3.0).unwrap();
    let mu = solve_stationary_fp(&sup, &grid).unwrap();
    let mut worst_sup: f64 = 0.0;
    for (x, p) in points {
        let h = effective_h_super(&sup, &[x], &[p], &mu).unwrap();
        worst_sup = worst_sup.max((h - sigma * sigma * p * p).abs());
    }
    let crit = ConstantSigma::one_d(sigma, 0.0, 1.0).spec(2.0).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    for (x, p) in points {
        let t0 = Instant::now();
        let c = vanishing_discount(&crit, &[x], &[p], Regime::Critical, &DEFAULT_DELTAS, &grid).unwrap();
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        let exact = sigma * sigma * p * p;
        worst_rel = worst_rel.max((c.lambda - exact).abs() / exact);
    }
    outcome(
        worst_sup <= 1e-6 && worst_rel <= 5e-3 && slowest <= 10.0,
        format!("supercritical abs err {worst_sup:.2e} (<= 1e-6), critical rel err {worst_rel:.2e} (<= 5e-3), {slowest:.2} s per point (<= 10 s)"),
    )
}

fn c02_ou_measure() -> Outcome {
    let spec = ConstantSigma::new(vec![1.0], vec![0.0], vec![0.8], vec![0.3]).unwrap().spec(2.0).unwrap();
    let g = ou_analytic_measure(&spec.b_far, &spec.tau_far).unwrap();
    let l1 = |h: f64| {
        let mu = solve_stationary_fp(&spec, &FastGrid::new(1, 8.0, h).unwrap()).unwrap();
        mu.l1_distance(|y| g.pdf(y))
    };
    let coarse = l1(0.02);
    let fine = l1(0.01);
    outcome(
        coarse <= 1e-3 && fine <= 0.5 * coarse,
        format!("L1 {coarse:.3e} at h_y = 0.02 (<= 1e-3), {fine:.3e} at 0.01 (ratio {:.2}, needs >= 2)", coarse / fine),
    )
}

fn c03_super_bump() -> Outcome {
    let spec = bump_super();
    let grid = fast_grid();
    let oracle = 1.0 + 3f64.sqrt().recip();
    let mu = solve_stationary_fp(&spec, &grid).unwrap();
    let by_measure = effective_h_super(&spec, &[0.0], &[1.0], &mu).unwrap();
    let by_discount = vanishing_discount(&spec, &[0.0], &[1.0], Regime::Supercritical, &DEFAULT_DELTAS, &grid).unwrap().lambda;
    let err = (by_measure - oracle).abs().max((by_discount - oracle).abs());
    outcome(
        err <= 1e-3,
        format!("measure {by_measure:.6}, vanishing discount {by_discount:.6}, oracle {oracle:.6}; max err {err:.2e} (<= 1e-3)"),
    )
}

fn c04_hopf_cole() -> Outcome {
    let spec = bump_critical();
    let grid = fast_grid();
    let mut worst: f64 = 0.0;
    for (x, p) in BUMP_POINTS {
        let vd = vanishing_discount(&spec, &[x], &[p], Regime::Critical, &DEFAULT_DELTAS, &grid).unwrap().lambda;
        let hc = hopf_cole_crosscheck(&spec, &[x], &[p], &grid).unwrap();
        worst = worst.max((vd - hc).abs());
    }
    outcome(worst <= 1e-3, format!("max |lambda_vd - lambda_hc| = {worst:.2e} over {} points (<= 1e-3)", BUMP_POINTS.len()))
}

fn c05_lipschitz() -> Outcome {
    let grid = fast_grid();
    let mut worst: f64 = 0.0;
    for spec in [bump_critical(), bump_super()] {
        for (x, p) in BUMP_POINTS {
            let sols: Vec<_> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&d| solve_cell(&spec, spec.regime(), &[x], &[p], d, &grid).unwrap())
                .collect();
            worst = worst.max(lipschitz_report(&sols).unwrap().ratio - 1.0);
        }
    }
    outcome(worst <= 0.1, format!("max gradient spread across delta {:.2}% (<= 10%)", 100.0 * worst))
}

fn c06_bounds(tables: &[(&str, &EffectiveHamiltonianTable, &ModelSpec)]) -> Outcome {
    // cell solves return an error on any node outside the discounted bounds;
    // tabulation ran every solve through that check
    let grid = fast_grid();
    let mut solves = 0usize;
    let mut cell_errors = 0usize;
    for (_, _, spec) in tables {
        for (x, p) in BUMP_POINTS {
            for d in DEFAULT_DELTAS {
                solves += 1;
                if solve_cell(spec, spec.regime(), &[x], &[p], d, &grid).is_err() {
                    cell_errors += 1;
                }
            }
        }
    }
    let mut table_violations = 0usize;
    let mut nodes = 0usize;
    for (_, t, spec) in tables {
        let r = property_suite(t, spec, &y_sample()).unwrap();
        table_violations += r.bounds.violations;
        nodes += r.bounds.checked;
    }
    outcome(
        cell_errors == 0 && table_violations == 0,
        format!("{cell_errors} of {solves} cell solves and {table_violations} of {nodes} table nodes out of bounds (0 allowed)"),
    )
}

fn c07_convexity(tables: &[(&str, &EffectiveHamiltonianTable, &ModelSpec)]) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, t, spec) in tables {
        let r = property_suite(t, spec, &y_sample()).unwrap();
        pass &= r.convexity.pass && r.semi_homogeneity.pass;
        parts.push(format!(
            "{name}: convexity {}/{} violations (worst {:.1e}), semi-homogeneity {}/{}",
            r.convexity.violations, r.convexity.checked, r.convexity.worst_margin, r.semi_homogeneity.violations, r.semi_homogeneity.checked
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c08_log_growth() -> Outcome {
    let grid = fast_grid();
    let mut worst: f64 = 0.0;
    for spec in [bump_critical(), bump_super()] {
        for (x, p) in BUMP_POINTS {
            let r = domain_doubling_check(&spec, &[x], &[p], spec.regime(), &DEFAULT_DELTAS, &grid).unwrap();
            worst = worst.max(r.c_bar_change);
        }
    }
    outcome(worst <= 0.2, format!("max relative change of C under doubling {:.2}% (<= 20%)", 100.0 * worst))
}

fn c09_hopf_lax() -> Outcome {
    let table = EffectiveHamiltonianTable::from_fn(
        Regime::Supercritical,
        TensorGrid::single_point(&[0.0]),
        TensorGrid::uniform(1, -8.0, 8.0, 0.05).unwrap(),
        |_, p| p[0] * p[0],
    )
    .unwrap();
    let h = StandardPayoff::Parabola {
        top: 1.0,
        curvature: 1.0,
    };
    let t = 0.25;
    let err = |hx: f64| {
        let xg = TensorGrid::uniform(1, -3.0, 3.0, hx).unwrap();
        let s = solve_effective_hj(&table, &h, t, &xg, 0.9).unwrap();
        (0..xg.len())
            .filter(|&i| xg.point(i)[0].abs() <= 2.0)
            .map(|i| (s.final_values()[i] - hopf_lax_oracle(1.0, &h, t, xg.point(i)[0]).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    let (a, b) = (err(0.02), err(0.01));
    outcome(
        a <= 2e-2 && a / b >= 1.7,
        format!("sup err {a:.3e} at h_x = 0.02 (<= 2e-2), {b:.3e} at 0.01; ratio {:.2} (>= 1.7)", a / b),
    )
}

fn c10_rate() -> Outcome {
    let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(3.0).unwrap();
    let xg = TensorGrid::uniform(1, -1.0, 3.0, 1.0).unwrap();
    let pg = TensorGrid::uniform(1, -4.0, 4.0, 0.05).unwrap();
    let table = tabulate_h(&spec, Regime::Supercritical, &xg, &pg, &DEFAULT_DELTAS, &fast_grid()).unwrap();
    let lag = legendre_table(&table, &TensorGrid::uniform(1, -8.0, 8.0, 0.05).unwrap()).unwrap();
    let sg = TensorGrid::uniform(1, -1.0, 3.0, 0.05).unwrap();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (d, t) in [(2.0, 1.0), (2.0, 0.5)] {
        let r = rate_function(&lag, &sg, &[0.0], &[d], t, 20).unwrap();
        let exact = d * d / (4.0 * t);
        let rel = (r.rate - exact).abs() / exact;
        worst = worst.max(rel);
        parts.push(format!("I({d}, {t}) = {:.6} vs {exact}", r.rate));
    }
    outcome(worst <= 1e-2, format!("{}; max rel err {worst:.2e} (<= 1e-2)", parts.join(", ")))
}

fn c11_mgf() -> Outcome {
    let spec = ConstantSigma::one_d(1.0, 1.0, 1.0).spec(2.0).unwrap();
    let (eps, t) = (0.1, 0.1);
    let h = StandardPayoff::linear_for_eps(vec![1.0], eps);
    let t0 = Instant::now();
    let e = estimate_v_eps(&spec, eps, t, &[0.0], &[0.0], &h, 0.01, 100_000, 2024).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    // p x0 + eps p phi t + |sigma p|^2 t
    let exact = eps * t + t;
    let dev = (e.value - exact).abs() / e.std_error;
    outcome(
        dev <= 3.0 && e.std_error <= 5e-3 && secs <= 30.0,
        format!(
            "estimate {:.6} vs {exact:.6}: {dev:.2} SE (<= 3), SE {:.2e} (<= 5e-3), {secs:.2} s (<= 30 s)",
            e.value, e.std_error
        ),
    )
}

fn c12_convergence(table: &EffectiveHamiltonianTable) -> Outcome {
    let spec = bump_critical();
    let h = tanh_payoff();
    let t = 0.5;
    let xg = TensorGrid::uniform(1, -4.0, 4.0, 0.02).unwrap();
    let limit = solve_effective_hj(table, &h, t, &xg, 0.9).unwrap().value_at(&[0.0]);
    let mc = McBudget {
        n_paths: 100_000,
        dt: 0.01,
        seed: 12,
    };
    let pde = PdeBudget {
        grid: PdeGrid {
            x_lo: -4.0,
            x_hi: 4.0,
            h_x: 0.05,
            y_max: 6.0,
            h_y: 0.1,
        },
        dt: 0.01,
    };
    let s = convergence_study(&spec, &h, t, &[0.0], &[0.0], &[0.4, 0.2, 0.1, 0.05], limit, &mc, Some(&pde), 0.7).unwrap();
    let trends: Vec<String> = s
        .trends
        .iter()
        .map(|tr| format!("{:?}: ratio {:.3}, {} inversions ({} beyond 2 SE)", tr.source, tr.ratio, tr.inversions, tr.significant_inversions))
        .collect();
    // the inversion allowance is stated in standard errors, so the verdict is the
    // Monte Carlo trend; the PDE trend is reported alongside
    let mc_pass = s.trends.iter().any(|tr| tr.source == Source::Mc && tr.pass);
    outcome(mc_pass, format!("limit {limit:.5}; {} (ratio <= 0.7, <= 1 inversion within 2 SE)", trends.join("; ")))
}

fn c13_pde_vs_mc() -> Outcome {
    let families: Vec<(&str, ModelSpec)> = vec![
        ("ou", ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap()),
        ("bump", bump_critical()),
        (
            "perturbed_ou",
            PerturbedOu::new(BumpSigma::one_d(1.0, 1.0), 0.5, 0.2, 1.5).unwrap().spec(2.0).unwrap(),
        ),
    ];
    let grid = PdeGrid {
        x_lo: -4.0,
        x_hi: 4.0,
        h_x: 0.05,
        y_max: 6.0,
        h_y: 0.1,
    };
    let h = tanh_payoff();
    let t = 0.5;
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    for (name, spec) in &families {
        for eps in [0.2, 0.1] {
            let p = solve_eps_pde(spec, eps, &h, t, &grid, 0.01, &PdeOptions::default()).unwrap().value_at(0.0, 0.0);
            let m = estimate_v_eps(spec, eps, t, &[0.0], &[0.0], &h, 0.01, 100_000, 13).unwrap();
            let margin = (p - m.value).abs() - (3.0 * m.std_error + 2e-2);
            if margin > 0.0 {
                pass = false;
                eprintln!("  {name} eps {eps}: pde {p:.5}, mc {:.5} +- {:.1e}", m.value, m.std_error);
            }
            worst = worst.max(margin);
        }
    }
    outcome(
        pass,
        format!("{} families x 2 eps; worst |pde - mc| - (3 SE + 2e-2) = {worst:.2e} (<= 0)", families.len()),
    )
}

fn c14_ldp() -> Outcome {
    let spec = ConstantSigma::one_d(1.0, 0.0, 1.0).spec(2.0).unwrap();
    let xg = TensorGrid::uniform(1, -2.0, 4.0, 1.0).unwrap();
    let pg = TensorGrid::uniform(1, -4.0, 4.0, 0.05).unwrap();
    let table = tabulate_h(&spec, Regime::Critical, &xg, &pg, &DEFAULT_DELTAS, &fast_grid()).unwrap();
    let lag = legendre_table(&table, &TensorGrid::uniform(1, -8.0, 8.0, 0.05).unwrap()).unwrap();
    let sg = TensorGrid::uniform(1, -2.0, 4.0, 0.05).unwrap();
    let set = RegionSet::HalfSpace {
        normal: vec![1.0],
        offset: 1.0,
    };
    let mc = McBudget {
        n_paths: 1_000_000,
        dt: 0.01,
        seed: 14,
    };
    let t0 = Instant::now();
    let r = ldp_check(&spec, &set, 1.0, &[0.0], &[0.0], &[0.4, 0.3, 0.2, 0.15, 0.1], &lag, &sg, 20, &mc).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let target = -0.25;
    let rel = (r.fit_slope - target).abs() / target.abs();
    outcome(
        r.verdict == Verdict::Pass && rel <= 0.15 && secs <= 300.0,
        format!(
            "slope {:.4} vs -1/4: {:.1}% off (<= 15%); computed inf I = {:.4}; {secs:.1} s (<= 300 s)",
            r.fit_slope,
            100.0 * rel,
            r.rate_inf
        ),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().and_then(|s| s.to_str()) == Some("csv"))
                .then(|| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        })
        .collect()
}

fn c15_determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bump_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_twoscale"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .stdout(Stdio::null())
            .status()
            .unwrap();
        if status.code() != Some(0) {
            return outcome(false, format!("run with {threads} threads exited with {status}"));
        }
        outputs.push(csv_files(&out));
    }
    let same = outputs[0] == outputs[1];
    outcome(
        same && !outputs[0].is_empty(),
        format!("{} CSV files byte-identical across 1 and 3 threads: {same}", outputs[0].len()),
    )
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |id: &str| filter.as_deref().is_none_or(|f| id.contains(f));
    let needs_tables = ["c06", "c07", "c12"].iter().any(|id| wanted(id));
    let (crit_spec, super_spec) = (bump_critical(), bump_super());
    let tables = needs_tables.then(|| (bump_table(&crit_spec), bump_table(&super_spec)));

    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut run = |id: &'static str, title: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            let t0 = Instant::now();
            let o = f();
            println!(
                "{id} {title}: {} ({}; {:.1} s)",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail,
                t0.elapsed().as_secs_f64()
            );
            results.push((id, title, o));
        }
    };
    run("c01", "constant-sigma identity", &c01_constant_identity);
    run("c02", "OU invariant measure", &c02_ou_measure);
    run("c03", "supercritical bump H", &c03_super_bump);
    run("c04", "critical Hopf-Cole cross-check", &c04_hopf_cole);
    run("c05", "delta-uniform Lipschitz", &c05_lipschitz);
    if let Some((tc, ts)) = &tables {
        let pairs = [("critical", tc, &crit_spec), ("supercritical", ts, &super_spec)];
        run("c06", "bounds", &|| c06_bounds(&pairs));
        run("c07", "convexity and semi-homogeneity", &|| c07_convexity(&pairs));
    }
    run("c08", "log-growth under doubling", &c08_log_growth);
    run("c09", "HJ vs Hopf-Lax", &c09_hopf_lax);
    run("c10", "rate function", &c10_rate);
    run("c11", "MC moment generating function", &c11_mgf);
    if let Some((tc, _)) = &tables {
        run("c12", "convergence chain", &|| c12_convergence(tc));
    }
    run("c13", "eps-PDE vs MC", &c13_pde_vs_mc);
    run("c14", "LDP slope", &c14_ldp);
    run("c15", "determinism across thread counts", &c15_determinism);

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} criteria, {} passed, {} failed", results.len(), results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        eprintln!("failing: {}", failed.join(", "));
        std::process::exit(1);
    }
}
