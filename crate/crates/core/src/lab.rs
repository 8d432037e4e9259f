//! Experiment configuration, the ε-sweep pipeline and report emission.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Diffeomorphism, Family};
use crate::ghdist::{
    flow_gh_distance, gh_between_sets, FiniteMetricSpace, FlowSample, ReparamSearch,
};
use crate::manifold::{
    attraction_rate, beta, invariance_residual, jhat_deviation, lyapunov_perron_solve,
    verify_lemma33, verify_q_semigroup, LPConfig, ManifoldGraph,
};
use crate::semiflow::{
    default_probes, evolve_inertial_form, perturbed_nonlinearity, Nonlinearity, Trajectory,
};
use crate::spectral::{alpha, check_gap, check_gap_at, gamma, SpectralBasis};
use crate::{Error, Result};

/// Environment variable overriding [`ExperimentConfig::output_dir`].
pub const OUTPUT_DIR_ENV: &str = "IMLAB_OUT_DIR";

/// Horizon of the invariance check.
pub const INVARIANCE_HORIZON: f64 = 2.0;
/// Horizon of the attraction fit.
pub const ATTRACTION_HORIZON: f64 = 0.25;
/// Size of the `Q`-mode kick used to start off the graph.
pub const ATTRACTION_KICK: f64 = 0.5;
/// Quadrature intervals for the `Q`-semigroup integral.
pub const Q_SEMIGROUP_STEPS: usize = 200;

/// Lyapunov–Perron settings as they appear in the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpSettings {
    pub tol_fix: f64,
    pub max_iter: usize,
    pub dt: f64,
    pub n_col: usize,
    pub t_trunc: Option<f64>,
    pub box_radius: Option<f64>,
}

impl Default for LpSettings {
    fn default() -> Self {
        Self {
            tol_fix: 1e-9,
            max_iter: 50,
            dt: 2e-3,
            n_col: 21,
            t_trunc: None,
            box_radius: None,
        }
    }
}

impl From<&LpSettings> for LPConfig {
    fn from(s: &LpSettings) -> Self {
        LPConfig {
            t_trunc: s.t_trunc,
            tol_fix: s.tol_fix,
            max_iter: s.max_iter,
            dt: s.dt,
            n_col: s.n_col,
            box_radius: s.box_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub family: Family,
    /// Strictly decreasing perturbation sizes.
    pub epsilons: Vec<f64>,
    pub n_interior: usize,
    pub n_modes: usize,
    /// Manifold dimension; smallest admissible value when absent.
    pub m: Option<usize>,
    pub kappa: f64,
    pub perturb_nonlinearity: bool,
    /// Scale of the nonlinearity perturbation, in `[0, 1]`.
    pub kappa_g: f64,
    /// Flow horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub lp: LpSettings,
    pub seed: u64,
    /// Number of sample points in `B₀`.
    pub n_samples: usize,
    /// Points of the symmetric time grid on `[-T, T]` (odd).
    pub flow_times: usize,
    pub reparam_refine: bool,
    pub lemma33_slack: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::Affine,
            epsilons: vec![0.2, 0.1, 0.05, 0.025],
            n_interior: 127,
            n_modes: 32,
            m: None,
            kappa: 1.0,
            perturb_nonlinearity: true,
            kappa_g: 0.5,
            horizon: 1.0,
            dt: 1e-3,
            lp: LpSettings::default(),
            seed: 0,
            n_samples: 9,
            flow_times: 41,
            reparam_refine: true,
            lemma33_slack: 0.05,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epsilons.windows(2).any(|w| w[0] <= w[1]) {
            return bad("epsilons must be strictly decreasing".into());
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return bad("epsilons must be nonnegative".into());
        }
        let positive = [
            ("kappa", self.kappa),
            ("T", self.horizon),
            ("dt", self.dt),
            ("lp.tol_fix", self.lp.tol_fix),
            ("lp.dt", self.lp.dt),
            ("lemma33_slack", self.lemma33_slack),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if !(0.0..=1.0).contains(&self.kappa_g) {
            return bad(format!("kappa_g must lie in [0, 1] (got {})", self.kappa_g));
        }
        if self.n_modes < 2 || self.n_modes > self.n_interior {
            return bad(format!(
                "n_modes must lie in 2..=n_interior (got {} with n_interior {})",
                self.n_modes, self.n_interior
            ));
        }
        if let Some(m) = self.m {
            if m == 0 || m >= self.n_modes {
                return bad(format!("m must lie in 1..n_modes (got {m})"));
            }
        }
        if self.n_samples == 0 || self.lp.n_col < 2 || self.lp.max_iter == 0 {
            return bad("n_samples, lp.n_col and lp.max_iter must be positive (n_col >= 2)".into());
        }
        if self.flow_times < 3 || self.flow_times.is_multiple_of(2) {
            return bad(format!(
                "flow_times must be odd and >= 3 (got {})",
                self.flow_times
            ));
        }
        Ok(())
    }

    /// Output directory after applying [`OUTPUT_DIR_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        Nonlinearity::sine(self.kappa)
    }

    pub fn perturbed(&self, h: &Diffeomorphism) -> Result<Nonlinearity> {
        let f0 = self.nonlinearity();
        if self.perturb_nonlinearity {
            perturbed_nonlinearity(&f0, h, self.kappa_g)
        } else {
            Ok(f0)
        }
    }
}

/// One row of the sweep; deviation columns are `NaN` when the row failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub eps_dc1: f64,
    pub alpha: f64,
    pub gamma_t: f64,
    pub rho: f64,
    pub beta_sup: f64,
    pub jhat_dev: f64,
    pub gh_set_eps: f64,
    pub gh_flow_eps: f64,
    pub lemma33_ok: bool,
    pub lemma34_integral: f64,
    pub invariance_residual: f64,
    pub attraction_rate: f64,
    pub rep_admissible: bool,
    pub row_ok: bool,
    pub error: Option<String>,
}

pub const CSV_COLUMNS: [&str; 15] = [
    "epsilon",
    "eps_dC1",
    "alpha",
    "gamma_T",
    "rho",
    "beta_sup",
    "jhat_dev",
    "gh_set_eps",
    "gh_flow_eps",
    "lemma33_ok",
    "lemma34_integral",
    "invariance_residual",
    "attraction_rate",
    "rep_admissible",
    "row_ok",
];

/// Columns expected to decrease along the sweep.
pub const MONOTONE_COLUMNS: [&str; 6] = [
    "alpha",
    "beta_sup",
    "jhat_dev",
    "lemma34_integral",
    "gh_set_eps",
    "gh_flow_eps",
];

impl ConvergenceRow {
    fn failed(epsilon: f64, err: &Error) -> Self {
        Self {
            epsilon,
            eps_dc1: f64::NAN,
            alpha: f64::NAN,
            gamma_t: f64::NAN,
            rho: f64::NAN,
            beta_sup: f64::NAN,
            jhat_dev: f64::NAN,
            gh_set_eps: f64::NAN,
            gh_flow_eps: f64::NAN,
            lemma33_ok: false,
            lemma34_integral: f64::NAN,
            invariance_residual: f64::NAN,
            attraction_rate: f64::NAN,
            rep_admissible: false,
            row_ok: false,
            error: Some(err.to_string()),
        }
    }

    /// Value of a numeric column by its CSV name.
    pub fn column(&self, name: &str) -> Option<f64> {
        Some(match name {
            "epsilon" => self.epsilon,
            "eps_dC1" => self.eps_dc1,
            "alpha" => self.alpha,
            "gamma_T" => self.gamma_t,
            "rho" => self.rho,
            "beta_sup" => self.beta_sup,
            "jhat_dev" => self.jhat_dev,
            "gh_set_eps" => self.gh_set_eps,
            "gh_flow_eps" => self.gh_flow_eps,
            "lemma34_integral" => self.lemma34_integral,
            "invariance_residual" => self.invariance_residual,
            "attraction_rate" => self.attraction_rate,
            _ => return None,
        })
    }

    fn record(&self) -> Vec<String> {
        CSV_COLUMNS
            .iter()
            .map(|c| match *c {
                "lemma33_ok" => self.lemma33_ok.to_string(),
                "rep_admissible" => self.rep_admissible.to_string(),
                "row_ok" => self.row_ok.to_string(),
                name => self.column(name).expect("numeric column").to_string(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    pub m: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// `true` when the column is strictly decreasing over all rows.
    pub fn strictly_decreasing(&self, column: &str) -> bool {
        let values: Vec<f64> = self.rows.iter().filter_map(|r| r.column(column)).collect();
        values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[1] < w[0])
    }

    pub fn all_rows_ok(&self) -> bool {
        self.rows.iter().all(|r| r.row_ok)
    }

    pub fn summary(&self) -> Summary {
        let monotone: Vec<(String, bool)> = MONOTONE_COLUMNS
            .iter()
            .map(|c| (c.to_string(), self.strictly_decreasing(c)))
            .collect();
        let lemma33_all = self.rows.iter().all(|r| r.lemma33_ok);
        let pass = lemma33_all && monotone.iter().all(|(_, ok)| *ok);
        Summary {
            tool: "imlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.clone(),
            m: self.m,
            n_rows: self.rows.len(),
            rows_ok: self.all_rows_ok(),
            lemma33_all,
            rep_admissible_all: self.rows.iter().all(|r| r.rep_admissible),
            monotone,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub m: usize,
    pub n_rows: usize,
    pub rows_ok: bool,
    pub lemma33_all: bool,
    pub rep_admissible_all: bool,
    pub monotone: Vec<(String, bool)>,
    pub pass: bool,
}

/// The unperturbed problem shared by every row.
pub struct Reference {
    pub basis: SpectralBasis,
    pub forcing: Nonlinearity,
    pub graph: ManifoldGraph,
    pub m: usize,
    /// `ψ`-coordinates of `B₀`.
    pub samples: Vec<Vec<f64>>,
    pub probes: Vec<crate::geometry::GridFunction>,
}

/// `n` points uniform in `[-R/2, R/2]^m` (a lattice with `⌈n^{1/m}⌉` points
/// per axis, truncated to `n`).
pub fn sample_coordinates(m: usize, box_radius: f64, n: usize) -> Vec<Vec<f64>> {
    let per_axis = (n as f64).powf(1.0 / m as f64).ceil().max(1.0) as usize;
    let half = box_radius / 2.0;
    let axis = |k: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -half + 2.0 * half * k as f64 / (per_axis - 1) as f64
        }
    };
    (0..per_axis.pow(m as u32))
        .take(n)
        .map(|mut flat| {
            let mut p = vec![0.0; m];
            for d in (0..m).rev() {
                p[d] = axis(flat % per_axis);
                flat /= per_axis;
            }
            p
        })
        .collect()
}

pub fn build_reference(cfg: &ExperimentConfig) -> Result<Reference> {
    let id = Diffeomorphism::identity();
    let basis = SpectralBasis::for_domain(&id, cfg.n_interior, cfg.n_modes)?;
    let forcing = cfg.nonlinearity();
    let m = match cfg.m {
        Some(m) => m,
        None => check_gap(&basis, forcing.lipschitz)
            .smallest_m
            .ok_or_else(|| {
                Error::Config(format!(
                    "no m < {} satisfies the gap condition",
                    cfg.n_modes
                ))
            })?,
    };
    let gap = check_gap_at(&basis, forcing.lipschitz, m);
    if !gap.passes() {
        return Err(Error::GapViolation {
            m,
            gap: gap.gap,
            threshold: gap.threshold,
            lambda_m: basis.lambdas[m - 1],
            lipschitz: forcing.lipschitz,
        });
    }
    let lp = LPConfig {
        box_radius: Some(lattice_radius(cfg, m)?),
        ..LPConfig::from(&cfg.lp)
    };
    let graph = lyapunov_perron_solve(&basis, &forcing, m, &lp)?;
    let own_radius = 2.0 * forcing.m_f(1.0) / basis.lambdas[m - 1];
    let samples = sample_coordinates(m, own_radius, cfg.n_samples);
    let probes = default_probes(&basis, m, cfg.seed);
    Ok(Reference {
        basis,
        forcing,
        graph,
        m,
        samples,
        probes,
    })
}

/// Inertial-form paths through each sample point on `[-span, span]`.
pub fn flow_paths(
    graph: &ManifoldGraph,
    forcing: &Nonlinearity,
    samples: &[Vec<f64>],
    span: f64,
    dt: f64,
) -> Result<Vec<Trajectory>> {
    samples
        .iter()
        .map(|p| {
            let back = evolve_inertial_form(&graph.basis, forcing, graph, p, 0.0, -span, dt)?;
            let fwd = evolve_inertial_form(&graph.basis, forcing, graph, p, 0.0, span, dt)?;
            let mut merged = back;
            let rates = merged.rates.as_mut().expect("inertial paths carry rates");
            rates.extend(
                fwd.rates
                    .expect("inertial paths carry rates")
                    .into_iter()
                    .skip(1),
            );
            merged.times.extend(fwd.times.into_iter().skip(1));
            merged.states.extend(fwd.states.into_iter().skip(1));
            Ok(merged)
        })
        .collect()
}

/// Manifold on `Ω_h` for one perturbation size.
pub struct Perturbed {
    pub h: Diffeomorphism,
    pub basis: SpectralBasis,
    pub forcing: Nonlinearity,
    pub graph: ManifoldGraph,
}

/// Half-width of the collocation box shared by every manifold of a sweep:
/// the configured value, or the largest `2 M_F / λ_m` over `ε = 0` and the
/// sweep list, so that all graphs are tabulated on the same lattice.
pub fn lattice_radius(cfg: &ExperimentConfig, m: usize) -> Result<f64> {
    if let Some(r) = cfg.lp.box_radius {
        return Ok(r);
    }
    let mut radius = 0.0_f64;
    for &eps in std::iter::once(&0.0).chain(&cfg.epsilons) {
        let h = Diffeomorphism::new(cfg.family, eps)?;
        let basis = SpectralBasis::for_domain(&h, cfg.n_interior, cfg.n_modes)?;
        let f = cfg.perturbed(&h)?;
        radius = radius.max(2.0 * f.m_f(h.image().length()) / basis.lambdas[m - 1]);
    }
    Ok(if radius > 0.0 { radius } else { 1.0 })
}

pub fn build_perturbed(cfg: &ExperimentConfig, m: usize, epsilon: f64) -> Result<Perturbed> {
    let h = Diffeomorphism::new(cfg.family, epsilon)?;
    let basis = SpectralBasis::for_domain(&h, cfg.n_interior, cfg.n_modes)?;
    let forcing = cfg.perturbed(&h)?;
    let lp = LPConfig {
        box_radius: Some(lattice_radius(cfg, m)?),
        ..LPConfig::from(&cfg.lp)
    };
    let graph = lyapunov_perron_solve(&basis, &forcing, m, &lp)?;
    Ok(Perturbed {
        h,
        basis,
        forcing,
        graph,
    })
}

fn embedded_space(graph: &ManifoldGraph, samples: &[Vec<f64>]) -> Result<FiniteMetricSpace> {
    let points: Vec<Vec<f64>> = samples.iter().map(|p| graph.lift(p)).collect();
    FiniteMetricSpace::from_points(&points)
}

fn reparam_search(cfg: &ExperimentConfig) -> ReparamSearch {
    let search = ReparamSearch::geometric();
    if cfg.reparam_refine {
        search.refined()
    } else {
        search
    }
}

/// Set-level and flow-level distances between the matched samples of `M₀`
/// and `M_h`, with `ĵ`/`î` as witnesses.
pub fn gh_pair(
    cfg: &ExperimentConfig,
    reference: &Reference,
    reference_paths: &[Trajectory],
    perturbed: &Perturbed,
) -> Result<(crate::ghdist::GHReport, crate::ghdist::FlowGHReport)> {
    let search = reparam_search(cfg);
    let span = cfg.horizon * search.c_max();
    let identity: Vec<usize> = (0..reference.samples.len()).collect();
    let x = embedded_space(&reference.graph, &reference.samples)?;
    let y = embedded_space(&perturbed.graph, &reference.samples)?;
    let set = gh_between_sets(&x, &y, &identity, &identity);
    let paths_h = flow_paths(
        &perturbed.graph,
        &perturbed.forcing,
        &reference.samples,
        span,
        cfg.dt,
    )?;
    let s0 = FlowSample::new(
        &reference.graph,
        reference_paths.to_vec(),
        cfg.horizon,
        cfg.flow_times,
    )?;
    let sh = FlowSample::new(&perturbed.graph, paths_h, cfg.horizon, cfg.flow_times)?;
    let flow = flow_gh_distance(&s0, &sh, &identity, &identity, &search)?;
    Ok((set, flow))
}

/// Invariance residual (max over samples) and attraction rate on `M_h`.
pub fn definition_checks(
    cfg: &ExperimentConfig,
    graph: &ManifoldGraph,
    forcing: &Nonlinearity,
    samples: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let mut residual = 0.0_f64;
    for p in samples {
        residual =
            residual.max(invariance_residual(graph, forcing, p, INVARIANCE_HORIZON, cfg.dt)?.max());
    }
    let centre = &samples[samples.len() / 2];
    let mut u0 = graph.lift(centre);
    u0[graph.m] += ATTRACTION_KICK;
    let floor = (10.0 * residual).max(10.0 * graph.tol_fix);
    let fit = attraction_rate(graph, forcing, &u0, ATTRACTION_HORIZON, cfg.dt, floor)?;
    Ok((residual, fit.rate))
}

fn sweep_row(
    cfg: &ExperimentConfig,
    reference: &Reference,
    reference_paths: &[Trajectory],
    epsilon: f64,
) -> Result<ConvergenceRow> {
    let m = reference.m;
    let pert = build_perturbed(cfg, m, epsilon)?;
    let (h, b0, bh) = (&pert.h, &reference.basis, &pert.basis);
    let g0 = &reference.graph;
    let f0 = &reference.forcing;

    let (set, flow) = gh_pair(cfg, reference, reference_paths, &pert)?;
    let mut lemma33_ok = true;
    for p in &reference.samples {
        let rep = verify_lemma33(
            h,
            g0,
            &pert.graph,
            f0,
            &pert.forcing,
            p,
            cfg.horizon,
            cfg.dt,
            cfg.lemma33_slack,
            &reference.probes,
        )?;
        lemma33_ok &= rep.ok;
    }
    let (invariance, rate) =
        definition_checks(cfg, &pert.graph, &pert.forcing, &reference.samples)?;
    let u = b0.modes[m].clone();
    Ok(ConvergenceRow {
        epsilon,
        eps_dc1: crate::geometry::c1_distance(h, &Diffeomorphism::identity()),
        alpha: alpha(h, b0, bh, m),
        gamma_t: gamma(b0, bh, m, cfg.horizon),
        rho: crate::semiflow::rho(h, f0, &pert.forcing, bh, &reference.probes),
        beta_sup: beta(&pert.graph, g0, h, &reference.samples),
        jhat_dev: jhat_deviation(g0, &pert.graph, h, &reference.samples),
        gh_set_eps: set.eps,
        gh_flow_eps: flow.eps,
        lemma33_ok,
        lemma34_integral: verify_q_semigroup(h, b0, bh, m, &u, cfg.horizon, Q_SEMIGROUP_STEPS),
        invariance_residual: invariance,
        attraction_rate: rate,
        rep_admissible: flow.admissible,
        row_ok: lemma33_ok && flow.admissible,
        error: None,
    })
}

/// Runs every stage for each `ε` (concurrently) and assembles the rows in
/// configuration order. A failing row is recorded and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let reference = build_reference(cfg)?;
    let span = cfg.horizon * reparam_search(cfg).c_max();
    let reference_paths = flow_paths(
        &reference.graph,
        &reference.forcing,
        &reference.samples,
        span,
        cfg.dt,
    )?;
    let rows = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            sweep_row(cfg, &reference, &reference_paths, eps)
                .unwrap_or_else(|e| ConvergenceRow::failed(eps, &e))
        })
        .collect();
    Ok(ConvergenceReport {
        config: cfg.clone(),
        m: reference.m,
        rows,
    })
}

/// Paths of the files written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

pub fn write_csv(report: &ConvergenceReport, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_COLUMNS)?;
    for row in &report.rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const PLOT_SCRIPT: &str = r#"set datafile separator ","
set key autotitle columnhead left top
set logscale xy
set xlabel "epsilon"
set ylabel "deviation"
set terminal pngcairo size 900,600
set output "sweep.png"
plot for [col in "alpha beta_sup jhat_dev lemma34_integral gh_set_eps gh_flow_eps"] \
    "sweep.csv" using "epsilon":col with linespoints title col
"#;

/// Writes `sweep.csv`, `summary.json` and `plot.gp` into `dir`.
pub fn emit_report(report: &ConvergenceReport, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        csv: dir.join("sweep.csv"),
        summary: dir.join("summary.json"),
        plot: dir.join("plot.gp"),
    };
    write_csv(report, &files.csv)?;
    let json = serde_json::to_string_pretty(&report.summary())?;
    fs::write(&files.summary, json + "\n").map_err(|e| Error::io(&files.summary, e))?;
    fs::write(&files.plot, PLOT_SCRIPT).map_err(|e| Error::io(&files.plot, e))?;
    Ok(files)
}
