//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use imlab::geometry::{Diffeomorphism, Family, Grid, Interval};
use imlab::ghdist::{gh_between_sets, gh_bruteforce, FiniteMetricSpace, STRICTNESS_MARGIN};
use imlab::lab::{
    build_perturbed, build_reference, emit_report, run_sweep, ConvergenceReport, ExperimentConfig,
};
use imlab::manifold::{
    attraction_rate, invariance_residual, lyapunov_perron_solve, verify_lemma33, LPConfig,
    ManifoldGraph,
};
use imlab::semiflow::{FieldForcing, Nonlinearity};
use imlab::spectral::{eigenfunction_deviation, DirichletLaplacian, SpectralBasis};

const SWEEP: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[1] < w[0])
}

fn column(report: &ConvergenceReport, name: &str) -> Vec<f64> {
    report
        .rows
        .iter()
        .map(|r| r.column(name).unwrap())
        .collect()
}

fn decays_to_quarter(values: &[f64]) -> bool {
    strictly_decreasing(values) && values.last().unwrap() < &(0.25 * values[0])
}

fn spectral_oracle() -> Outcome {
    let n = 511;
    let basis = SpectralBasis::for_domain(&Diffeomorphism::identity(), n, 8).unwrap();
    let op = DirichletLaplacian::new(Grid::new(Interval::unit(), n).unwrap());
    let worst = (0..8)
        .map(|i| {
            let exact = op.closed_form_eigenvalue(i + 1);
            (basis.lambdas[i] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let first = (basis.lambdas[0] - PI * PI).abs();
    outcome(
        worst < 1e-8 && first < 1e-3,
        format!("max rel err {worst:.2e}, |λ₁ - π²| = {first:.2e}"),
    )
}

fn eigen_convergence() -> Outcome {
    let (n, k) = (127, 8);
    let b0 = SpectralBasis::for_domain(&Diffeomorphism::identity(), n, k).unwrap();
    let mut pass = true;
    let mut notes = Vec::new();
    for family in [Family::Affine, Family::Bump] {
        let bases: Vec<(f64, SpectralBasis)> = SWEEP
            .iter()
            .map(|&e| {
                let h = Diffeomorphism::new(family, e).unwrap();
                (e, SpectralBasis::for_domain(&h, n, k).unwrap())
            })
            .collect();
        for i in 0..2 {
            let dl: Vec<f64> = bases
                .iter()
                .map(|(_, b)| (b.lambdas[i] - b0.lambdas[i]).abs())
                .collect();
            let dphi: Vec<f64> = bases
                .iter()
                .map(|(_, b)| eigenfunction_deviation(&b0, b, i))
                .collect();
            pass &= strictly_decreasing(&dl) && strictly_decreasing(&dphi);
        }
        if family == Family::Affine {
            let err = bases
                .iter()
                .map(|(e, b)| (b.lambdas[0] - PI * PI / (1.0 + e).powi(2)).abs())
                .fold(0.0, f64::max);
            pass &= err < 1e-3;
            notes.push(format!("affine λ₁ err {err:.2e}"));
        }
    }
    outcome(
        pass,
        format!("monotone for both families, {}", notes.join(", ")),
    )
}

fn reference_basis() -> SpectralBasis {
    SpectralBasis::for_domain(&Diffeomorphism::identity(), 127, 32).unwrap()
}

fn kappa_one_graph(basis: &SpectralBasis) -> ManifoldGraph {
    lyapunov_perron_solve(basis, &Nonlinearity::sine(1.0), 1, &LPConfig::default()).unwrap()
}

fn lyapunov_perron() -> Outcome {
    let basis = reference_basis();
    let f = Nonlinearity::sine(1.0);
    let g = kappa_one_graph(&basis);
    let last = *g.changes.last().unwrap();
    let ratio = g.contraction_ratios.iter().copied().fold(0.0, f64::max);
    let lip = g.lipschitz_estimate();
    let bound = f.m_f(1.0) / basis.lambdas[1];
    let sup = g.sup_norm();

    let c = 2.0;
    let constant = FieldForcing {
        field: basis.modes[1].scale(c),
    };
    let gc = lyapunov_perron_solve(&basis, &constant, 1, &LPConfig::default()).unwrap();
    let expect = c / basis.lambdas[1];
    let closed = gc
        .q_values
        .iter()
        .map(|q| {
            q.iter()
                .enumerate()
                .map(|(k, v)| (v - if k == 0 { expect } else { 0.0 }).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let pass = g.iterations <= 50
        && last < 1e-6
        && ratio < 1.0
        && lip <= 1.05
        && sup < 1.02 * bound
        && closed < 1e-4;
    outcome(
        pass,
        format!(
            "{} sweeps, last change {last:.1e}, max ratio {ratio:.3}, Lip {lip:.4}, sup {sup:.3e} vs {bound:.3e}, constant err {closed:.1e}",
            g.iterations
        ),
    )
}

fn definition_checks() -> Outcome {
    let basis = reference_basis();
    let f = Nonlinearity::sine(1.0);
    let g = kappa_one_graph(&basis);
    let dt = 1e-3;
    let budget = 5.0 * (1e-6 + dt + basis.grid.dx * basis.grid.dx);
    let samples = imlab::lab::sample_coordinates(1, 2.0 * f.m_f(1.0) / basis.lambdas[0], 9);
    let residual = samples
        .iter()
        .map(|p| invariance_residual(&g, &f, p, 2.0, dt).unwrap().max())
        .fold(0.0, f64::max);

    let lambda2 = basis.lambdas[1];
    let zero = Nonlinearity::zero();
    let flat = lyapunov_perron_solve(&basis, &zero, 1, &LPConfig::default()).unwrap();
    let mut u0 = vec![0.0; basis.n_modes()];
    u0[0] = 0.3;
    u0[1] = 0.5;
    let heat = attraction_rate(&flat, &zero, &u0, 0.25, dt, 1e-12)
        .unwrap()
        .rate;

    let mut u1 = g.lift(&samples[4]);
    u1[1] += 0.5;
    let floor = (10.0 * residual).max(10.0 * g.tol_fix);
    let sine = attraction_rate(&g, &f, &u1, 0.25, dt, floor).unwrap().rate;
    let lower = lambda2 - 2.0 * f.lipschitz;
    let pass = residual <= budget
        && ((heat - lambda2) / lambda2).abs() < 0.05
        && lower > 0.0
        && sine >= lower;
    outcome(
        pass,
        format!(
            "residual {residual:.2e} <= {budget:.2e}, F=0 rate {heat:.3} vs λ₂ {lambda2:.3}, κ=1 rate {sine:.3} >= {lower:.3}"
        ),
    )
}

fn comparison_bound() -> Outcome {
    let cfg = ExperimentConfig {
        epsilons: vec![0.1],
        ..ExperimentConfig::default()
    };
    let reference = build_reference(&cfg).unwrap();
    let pert = build_perturbed(&cfg, reference.m, 0.1).unwrap();
    let mut worst = f64::INFINITY;
    let mut all = true;
    let mut count = 0;
    for p in &reference.samples {
        let rep = verify_lemma33(
            &pert.h,
            &reference.graph,
            &pert.graph,
            &reference.forcing,
            &pert.forcing,
            p,
            1.0,
            cfg.dt,
            0.05,
            &reference.probes,
        )
        .unwrap();
        all &= rep.ok && rep.times.len() == 41;
        count += rep.times.len();
        worst = worst.min(rep.min_margin);
    }
    outcome(
        all,
        format!("{count} (start, t) pairs, min margin {worst:.3e}"),
    )
}

fn semigroup_beta_jhat(report: &ConvergenceReport) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for name in ["lemma34_integral", "beta_sup", "jhat_dev"] {
        let v = column(report, name);
        pass &= decays_to_quarter(&v);
        notes.push(format!("{name} {:.2e} -> {:.2e}", v[0], v[v.len() - 1]));
    }
    outcome(pass, notes.join(", "))
}

fn set_convergence(strong: &ConvergenceReport, default: &ConvergenceReport) -> Outcome {
    let v = column(strong, "gh_set_eps");
    let d = column(default, "gh_set_eps");
    outcome(
        decays_to_quarter(&v),
        format!(
            "κ=3: {:.3e} -> {:.3e} ({:.1}%); κ=1 for reference: {:.4e} -> {:.4e} ({:.1}%, margin {STRICTNESS_MARGIN:e})",
            v[0],
            v[3],
            100.0 * v[3] / v[0],
            d[0],
            d[3],
            100.0 * d[3] / d[0]
        ),
    )
}

fn flow_convergence(report: &ConvergenceReport) -> Outcome {
    let v = column(report, "gh_flow_eps");
    let admissible = report
        .rows
        .iter()
        .filter(|r| r.row_ok)
        .all(|r| r.rep_admissible);
    let accepted = report.rows.iter().filter(|r| r.row_ok).count();
    outcome(
        strictly_decreasing(&v) && admissible && accepted == report.rows.len(),
        format!(
            "gh_flow_eps {}; {accepted}/{} rows accepted and admissible",
            v.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(" > "),
            report.rows.len()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let corpus = common::corpus();
    let mut pairs = 0;
    let mut witnesses = 0;
    let mut pass = true;
    for (a, x) in corpus.iter().enumerate() {
        for (b, y) in corpus.iter().enumerate() {
            let bf = gh_bruteforce(x, y).unwrap();
            pass &= bf.map_based >= bf.correspondence;
            pass &= bf.best.eps == bf.map_based;
            for i in common::heuristic_maps(x, y, (a * 31 + b) as u64) {
                for j in common::heuristic_maps(y, x, (b * 31 + a) as u64) {
                    pass &= gh_between_sets(x, y, &i, &j).eps >= bf.map_based;
                    witnesses += 1;
                }
            }
            pairs += 1;
        }
    }
    let two = gh_bruteforce(
        &FiniteMetricSpace::from_line(&[0.0, 1.0]).unwrap(),
        &FiniteMetricSpace::from_line(&[0.0, 1.4]).unwrap(),
    )
    .unwrap();
    let analytic = (two.map_based - STRICTNESS_MARGIN - 0.4).abs() < 1e-12
        && (two.correspondence - 0.2).abs() < 1e-12;
    outcome(
        pass && analytic,
        format!(
            "{pairs} pairs, {witnesses} witness pairs; two-point {:.6} / {:.6}",
            two.map_based - STRICTNESS_MARGIN,
            two.correspondence
        ),
    )
}

fn determinism(cfg: &ExperimentConfig, first: &ConvergenceReport) -> Outcome {
    let second = run_sweep(cfg).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let f1 = emit_report(first, d1.path()).unwrap();
    let f2 = emit_report(&second, d2.path()).unwrap();
    let same = |a: &std::path::Path, b: &std::path::Path| {
        std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
    };
    let csv = same(&f1.csv, &f2.csv);
    let json = same(&f1.summary, &f2.summary);
    outcome(
        csv && json,
        format!("sweep.csv identical: {csv}, summary.json identical: {json}"),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let value = f();
    (value, start.elapsed())
}

fn main() {
    let mut failures = 0;
    let mut report =
        |id: usize, name: &str, result: Outcome, took: Duration, limit: Option<f64>| {
            let secs = took.as_secs_f64();
            let in_time = limit.is_none_or(|l| secs < l);
            let pass = result.pass && in_time;
            if !pass {
                failures += 1;
            }
            let budget = limit.map_or(String::new(), |l| format!(" (limit {l} s)"));
            println!(
                "criterion {id:>2} {} {name}: {} [{secs:.2} s{budget}]",
                if pass { "PASS" } else { "FAIL" },
                result.detail
            );
        };

    let (r, t) = timed(spectral_oracle);
    report(1, "spectral oracle", r, t, Some(1.0));
    let (r, t) = timed(eigen_convergence);
    report(2, "eigenpair convergence", r, t, Some(5.0));
    let (r, t) = timed(lyapunov_perron);
    report(3, "Lyapunov-Perron graph", r, t, Some(30.0));
    let (r, t) = timed(definition_checks);
    report(4, "invariance and attraction", r, t, Some(30.0));
    let (r, t) = timed(comparison_bound);
    report(5, "slow-coordinate comparison bound", r, t, Some(30.0));

    let default = ExperimentConfig::default();
    let (sweep, sweep_time) = timed(|| run_sweep(&default).unwrap());
    let strong_cfg = ExperimentConfig {
        kappa: 3.0,
        ..ExperimentConfig::default()
    };
    let (strong, strong_time) = timed(|| run_sweep(&strong_cfg).unwrap());

    report(
        6,
        "semigroup, beta and jhat decay",
        semigroup_beta_jhat(&sweep),
        sweep_time,
        Some(120.0),
    );
    report(
        7,
        "set-level GH convergence",
        set_convergence(&strong, &sweep),
        strong_time,
        Some(120.0),
    );
    report(
        8,
        "flow-level GH convergence",
        flow_convergence(&sweep),
        sweep_time,
        Some(120.0),
    );
    let (r, t) = timed(oracle_equivalence);
    report(9, "GH oracle equivalence", r, t, Some(30.0));
    let (r, t) = timed(|| determinism(&default, &sweep));
    report(10, "determinism", r, t, None);

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
