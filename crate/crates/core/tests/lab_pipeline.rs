use std::fs;
use std::path::Path;

use imlab::geometry::{c1_distance, Diffeomorphism};
use imlab::ghdist::ReparamSearch;
use imlab::lab::{
    build_perturbed, build_reference, definition_checks, emit_report, flow_paths, gh_pair,
    run_sweep, ExperimentConfig, LpSettings, CSV_COLUMNS, MONOTONE_COLUMNS, Q_SEMIGROUP_STEPS,
};
use imlab::manifold::{beta, jhat_deviation, verify_lemma33, verify_q_semigroup};
use imlab::semiflow::rho;
use imlab::spectral::{alpha, gamma};

fn small(epsilons: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        epsilons,
        n_interior: 63,
        n_modes: 12,
        lp: LpSettings {
            tol_fix: 1e-8,
            ..LpSettings::default()
        },
        n_samples: 3,
        flow_times: 11,
        ..ExperimentConfig::default()
    }
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn csv_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&small(vec![])).unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    let text = fs::read_to_string(&files.csv).unwrap();
    assert_eq!(
        text,
        "epsilon,eps_dC1,alpha,gamma_T,rho,beta_sup,jhat_dev,gh_set_eps,gh_flow_eps,lemma33_ok,\
         lemma34_integral,invariance_residual,attraction_rate,rep_admissible,row_ok\n"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!(summary["n_rows"], 0);
    assert!(files.plot.exists());
    assert_eq!(CSV_COLUMNS.join(","), text.trim_end());
}

#[test]
fn unperturbed_row_has_solver_level_deviations() {
    let cfg = small(vec![0.0]);
    let report = run_sweep(&cfg).unwrap();
    let row = &report.rows[0];
    assert!(row.error.is_none(), "{:?}", row.error);
    let tol = 10.0 * cfg.lp.tol_fix;
    for v in [
        row.eps_dc1,
        row.alpha,
        row.gamma_t,
        row.rho,
        row.beta_sup,
        row.jhat_dev,
        row.lemma34_integral,
    ] {
        assert!(v <= tol, "{v}");
    }
    assert!(row.gh_set_eps <= 1e-9 + tol);
    assert!(row.lemma33_ok && row.rep_admissible && row.row_ok);
}

/// Every number in the CSV comes back when the module operations are called
/// directly with the same configuration.
#[test]
fn sweep_csv_is_recomputable() {
    let cfg = small(vec![0.2, 0.1]);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&run_sweep(&cfg).unwrap(), dir.path()).unwrap();
    let (header, rows) = read_rows(&files.csv);

    let reference = build_reference(&cfg).unwrap();
    let m = reference.m;
    let search = ReparamSearch::geometric().refined();
    let paths = flow_paths(
        &reference.graph,
        &reference.forcing,
        &reference.samples,
        cfg.horizon * search.c_max(),
        cfg.dt,
    )
    .unwrap();
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let pert = build_perturbed(&cfg, m, eps).unwrap();
        let (h, b0, bh, g0) = (&pert.h, &reference.basis, &pert.basis, &reference.graph);
        let (set, flow) = gh_pair(&cfg, &reference, &paths, &pert).unwrap();
        let lemma33 = reference.samples.iter().all(|p| {
            verify_lemma33(
                h,
                g0,
                &pert.graph,
                &reference.forcing,
                &pert.forcing,
                p,
                cfg.horizon,
                cfg.dt,
                cfg.lemma33_slack,
                &reference.probes,
            )
            .unwrap()
            .ok
        });
        let (residual, rate) =
            definition_checks(&cfg, &pert.graph, &pert.forcing, &reference.samples).unwrap();
        let expected: Vec<String> = vec![
            eps.to_string(),
            c1_distance(h, &Diffeomorphism::identity()).to_string(),
            alpha(h, b0, bh, m).to_string(),
            gamma(b0, bh, m, cfg.horizon).to_string(),
            rho(h, &reference.forcing, &pert.forcing, bh, &reference.probes).to_string(),
            beta(&pert.graph, g0, h, &reference.samples).to_string(),
            jhat_deviation(g0, &pert.graph, h, &reference.samples).to_string(),
            set.eps.to_string(),
            flow.eps.to_string(),
            lemma33.to_string(),
            verify_q_semigroup(h, b0, bh, m, &b0.modes[m], cfg.horizon, Q_SEMIGROUP_STEPS)
                .to_string(),
            residual.to_string(),
            rate.to_string(),
            flow.admissible.to_string(),
            (lemma33 && flow.admissible).to_string(),
        ];
        for (c, name) in header.iter().enumerate() {
            assert_eq!(rows[k][c], expected[c], "row {k} column {name}");
        }
    }
}

/// The pass flag is the conjunction of `lemma33_ok` and strict decrease of
/// the monotone columns, recomputed here from the CSV alone.
#[test]
fn summary_pass_flag_matches_csv() {
    for kappa in [1.0, 7.25] {
        let cfg = ExperimentConfig {
            kappa,
            ..small(vec![0.2, 0.1, 0.05])
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&run_sweep(&cfg).unwrap(), dir.path()).unwrap();
        let (header, rows) = read_rows(&files.csv);
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        let mut pass = rows.iter().all(|r| r[col("lemma33_ok")] == "true");
        for name in MONOTONE_COLUMNS {
            let values: Vec<f64> = rows.iter().map(|r| r[col(name)].parse().unwrap()).collect();
            pass &= values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[1] < w[0]);
        }
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&files.summary).unwrap()).unwrap();
        assert_eq!(summary["pass"].as_bool().unwrap(), pass, "kappa {kappa}");
        assert_eq!(summary["config"]["kappa"].as_f64().unwrap(), kappa);
        assert_eq!(summary["tool"], "imlab");
    }
}

#[test]
fn gap_failure_marks_only_that_row() {
    // At κ = 7.25 the gap condition holds on Ω₀ and at ε = 0.1 but not at ε = 0.2.
    let cfg = ExperimentConfig {
        kappa: 7.25,
        ..small(vec![0.2, 0.1])
    };
    let report = run_sweep(&cfg).unwrap();
    let failed = &report.rows[0];
    assert!(!failed.row_ok && failed.alpha.is_nan());
    assert!(
        failed.error.as_deref().unwrap().contains("gap"),
        "{:?}",
        failed.error
    );
    let kept = &report.rows[1];
    assert!(kept.error.is_none(), "{:?}", kept.error);
    assert!(kept.alpha.is_finite() && kept.gh_set_eps.is_finite());
    assert!(!report.summary().rows_ok);
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let cfg = small(vec![0.1, 0.05]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = emit_report(&run_sweep(&cfg).unwrap(), a.path()).unwrap();
    let fb = emit_report(&run_sweep(&cfg).unwrap(), b.path()).unwrap();
    assert_eq!(fs::read(&fa.csv).unwrap(), fs::read(&fb.csv).unwrap());
    assert_eq!(
        fs::read(&fa.summary).unwrap(),
        fs::read(&fb.summary).unwrap()
    );
}
