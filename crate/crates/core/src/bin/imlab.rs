use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use imlab::geometry::Diffeomorphism;
use imlab::lab::{
    build_perturbed, build_reference, definition_checks, emit_report, flow_paths, gh_pair,
    run_sweep, ExperimentConfig, Q_SEMIGROUP_STEPS,
};
use imlab::manifold::{gap_quantities, verify_lemma33, verify_q_semigroup};
use imlab::spectral::{check_gap, SpectralBasis};
use imlab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "imlab",
    version,
    about = "Inertial manifolds on perturbed intervals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dirichlet eigenvalues and eigenfunctions on Ω_h.
    Spectrum(Common),
    /// Spectral gap test for the configured nonlinearity.
    Gap(Common),
    /// Lyapunov–Perron graph on Ω_h and its comparison quantities.
    Manifold(Common),
    /// Set- and flow-level Gromov–Hausdorff distances between M₀ and M_h.
    Gh(Common),
    /// Full ε-sweep with report files.
    Sweep(Common),
    /// Invariance, attraction and comparison-lemma checks on Ω_h.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Perturbation size (repeatable; replaces the sweep list).
    #[arg(long = "epsilon")]
    epsilon: Vec<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.epsilon.is_empty() {
            cfg.epsilons = self.epsilon.clone();
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        } else {
            cfg.output_dir = cfg.resolved_output_dir();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The single ε a non-sweep command works at.
    fn epsilon(&self, cfg: &ExperimentConfig) -> f64 {
        self.epsilon
            .first()
            .copied()
            .unwrap_or_else(|| cfg.epsilons.first().copied().unwrap_or(0.0))
    }
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    print!("{text}");
    Ok(path)
}

fn spectrum(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let h = Diffeomorphism::new(cfg.family, args.epsilon(&cfg))?;
    let basis = SpectralBasis::for_domain(&h, cfg.n_interior, cfg.n_modes)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join("spectrum.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    basis.write_csv(file)?;
    for (i, l) in basis.lambdas.iter().enumerate() {
        println!("{}\t{l}", i + 1);
    }
    Ok(true)
}

fn gap(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let h = Diffeomorphism::new(cfg.family, args.epsilon(&cfg))?;
    let basis = SpectralBasis::for_domain(&h, cfg.n_interior, cfg.n_modes)?;
    let f = cfg.perturbed(&h)?;
    let report = check_gap(&basis, f.lipschitz);
    write_json(&cfg.output_dir, "gap.json", &serde_json::to_value(&report)?)?;
    Ok(report.passes())
}

fn manifold(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let reference = build_reference(&cfg)?;
    let pert = build_perturbed(&cfg, reference.m, args.epsilon(&cfg))?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join("graph.csv");
    pert.graph
        .write_csv(fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
    let q = gap_quantities(
        &pert.h,
        &reference.graph,
        &pert.graph,
        &reference.forcing,
        &pert.forcing,
        &reference.probes,
        &reference.samples,
        cfg.horizon,
    );
    write_json(
        &cfg.output_dir,
        "gap_quantities.json",
        &serde_json::to_value(&q)?,
    )?;
    Ok(true)
}

fn gh(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let reference = build_reference(&cfg)?;
    let span = cfg.horizon * 1.25;
    let paths = flow_paths(
        &reference.graph,
        &reference.forcing,
        &reference.samples,
        span,
        cfg.dt,
    )?;
    let pert = build_perturbed(&cfg, reference.m, args.epsilon(&cfg))?;
    let (set, flow) = gh_pair(&cfg, &reference, &paths, &pert)?;
    write_json(
        &cfg.output_dir,
        "gh.json",
        &json!({ "set": set, "flow": flow }),
    )?;
    Ok(flow.admissible)
}

fn verify(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let reference = build_reference(&cfg)?;
    let pert = build_perturbed(&cfg, reference.m, args.epsilon(&cfg))?;
    let (residual, rate) = definition_checks(&cfg, &pert.graph, &pert.forcing, &reference.samples)?;
    let mut lemma33 = Vec::new();
    for p in &reference.samples {
        lemma33.push(verify_lemma33(
            &pert.h,
            &reference.graph,
            &pert.graph,
            &reference.forcing,
            &pert.forcing,
            p,
            cfg.horizon,
            cfg.dt,
            cfg.lemma33_slack,
            &reference.probes,
        )?);
    }
    let m = reference.m;
    let integral = verify_q_semigroup(
        &pert.h,
        &reference.basis,
        &pert.basis,
        m,
        &reference.basis.modes[m],
        cfg.horizon,
        Q_SEMIGROUP_STEPS,
    );
    let ok = lemma33.iter().all(|r| r.ok);
    let out = json!({
        "epsilon": pert.h.epsilon,
        "invariance_residual": residual,
        "attraction_rate": rate,
        "lemma33_ok": ok,
        "lemma33": lemma33,
        "lemma34_integral": integral,
    });
    write_json(&cfg.output_dir, "verify.json", &out)?;
    Ok(ok)
}

fn sweep(args: &Common) -> Result<bool> {
    let cfg = args.config()?;
    let report = run_sweep(&cfg)?;
    let files = emit_report(&report, &cfg.output_dir)?;
    print!(
        "{}",
        fs::read_to_string(&files.csv).map_err(|e| Error::io(&files.csv, e))?
    );
    let summary = report.summary();
    for row in report.rows.iter().filter(|r| !r.row_ok) {
        eprintln!(
            "row epsilon = {} failed: {}",
            row.epsilon,
            row.error.as_deref().unwrap_or("checks failed")
        );
    }
    Ok(summary.rows_ok && summary.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum(a) => spectrum(a),
        Command::Gap(a) => gap(a),
        Command::Manifold(a) => manifold(a),
        Command::Gh(a) => gh(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Config(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
