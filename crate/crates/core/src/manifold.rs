//! Lyapunov–Perron construction of the manifold graph `Φ_h`, the comparison
//! quantities between `M_h` and `M₀`, and the invariance / attraction checks.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{c1_distance, pushforward_j, Diffeomorphism, GridFunction};
use crate::ghdist::Embedding;
use crate::semiflow::{
    evolve_full_coeffs, evolve_inertial_form, rho, Forcing, GraphMap, InertialForm, Trajectory,
};
use crate::spectral::{alpha, check_gap_at, gamma, psi, SpectralBasis};
use crate::{Error, Result};

pub const DEFAULT_TOL_FIX: f64 = 1e-6;
pub const DEFAULT_TOL_LIP: f64 = 0.05;
/// Relative slack on the graph bound `M_F / λ_{m+1}`.
pub const DEFAULT_TOL_PHI_REL: f64 = 0.02;

/// Discretisation parameters of the Lyapunov–Perron scheme. `None` selects
/// the automatic value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LPConfig {
    /// Truncation of the backward integral; default `ln(10/tol_fix)/(λ_{m+1} - L)`.
    pub t_trunc: Option<f64>,
    pub tol_fix: f64,
    pub max_iter: usize,
    pub dt: f64,
    /// Lattice points per axis.
    pub n_col: usize,
    /// Half-width of the collocation box; default `2 M_F / λ_m`.
    pub box_radius: Option<f64>,
}

impl Default for LPConfig {
    fn default() -> Self {
        Self {
            t_trunc: None,
            tol_fix: DEFAULT_TOL_FIX,
            max_iter: 50,
            dt: 2e-3,
            n_col: 21,
            box_radius: None,
        }
    }
}

/// `Φ` tabulated on a regular lattice in `[-R, R]^m`, evaluated by
/// multilinear interpolation and clamped outside the box.
#[derive(Clone, Debug)]
pub struct ManifoldGraph {
    pub basis: SpectralBasis,
    pub m: usize,
    pub box_radius: f64,
    pub n_col: usize,
    /// `Q`-mode coefficients of `Φ` at each lattice point (row-major, last
    /// axis fastest).
    pub q_values: Vec<Vec<f64>>,
    pub t_trunc: f64,
    pub dt: f64,
    pub tol_fix: f64,
    pub iterations: usize,
    /// Sup-lattice change of each sweep.
    pub changes: Vec<f64>,
    /// Ratios of consecutive entries of `changes`.
    pub contraction_ratios: Vec<f64>,
}

impl ManifoldGraph {
    fn flat(
        basis: &SpectralBasis,
        m: usize,
        box_radius: f64,
        n_col: usize,
        t_trunc: f64,
        dt: f64,
        tol_fix: f64,
    ) -> Self {
        let q_len = basis.n_modes() - m;
        let points = n_col.pow(m as u32);
        Self {
            basis: basis.clone(),
            m,
            box_radius,
            n_col,
            q_values: vec![vec![0.0; q_len]; points],
            t_trunc,
            dt,
            tol_fix,
            iterations: 0,
            changes: Vec::new(),
            contraction_ratios: Vec::new(),
        }
    }

    pub fn lattice_len(&self) -> usize {
        self.q_values.len()
    }

    fn axis_node(&self, k: usize) -> f64 {
        if self.n_col == 1 {
            return 0.0;
        }
        -self.box_radius + 2.0 * self.box_radius * k as f64 / (self.n_col - 1) as f64
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.m];
        for d in (0..self.m).rev() {
            idx[d] = flat % self.n_col;
            flat /= self.n_col;
        }
        idx
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.n_col + k)
    }

    /// Coordinates of lattice point `flat`.
    pub fn lattice_point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .map(|k| self.axis_node(k))
            .collect()
    }

    /// `Φ(p)` as a function on the grid (`Q`-modes only).
    pub fn phi_function(&self, p: &[f64]) -> GridFunction {
        let mut coeffs = vec![0.0; self.basis.n_modes()];
        self.eval_into(p, &mut coeffs[self.m..]);
        self.basis.synthesize(&coeffs)
    }

    /// The point `ψ⁻¹p + Φ(p)` of the manifold.
    pub fn point(&self, p: &[f64]) -> GridFunction {
        self.basis.synthesize(&self.lift(p))
    }

    /// Modal coefficients `(p, Φ(p))`.
    pub fn lift(&self, p: &[f64]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.basis.n_modes()];
        coeffs[..self.m].copy_from_slice(p);
        self.eval_into(p, &mut coeffs[self.m..]);
        coeffs
    }

    /// `max_p ‖Φ(p)‖` over the lattice.
    pub fn sup_norm(&self) -> f64 {
        self.q_values.iter().map(|q| euclid(q)).fold(0.0, f64::max)
    }

    /// `max ‖Φ(p) - Φ(p')‖ / |p - p'|` over lattice neighbours along each axis.
    pub fn lipschitz_estimate(&self) -> f64 {
        if self.n_col < 2 || self.box_radius == 0.0 {
            return 0.0;
        }
        let step = 2.0 * self.box_radius / (self.n_col - 1) as f64;
        let mut lip = 0.0_f64;
        for flat in 0..self.lattice_len() {
            let idx = self.multi_index(flat);
            for d in 0..self.m {
                if idx[d] + 1 < self.n_col {
                    let mut next = idx.clone();
                    next[d] += 1;
                    let other = &self.q_values[self.flat_index(&next)];
                    lip = lip.max(distance(&self.q_values[flat], other) / step);
                }
            }
        }
        lip
    }

    /// CSV with columns `p_1 … p_m, q_{m+1} … q_{n_modes}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.m).map(|i| format!("p_{i}")).collect();
        header.extend((self.m + 1..=self.basis.n_modes()).map(|i| format!("q_{i}")));
        w.write_record(&header)?;
        for (flat, q) in self.q_values.iter().enumerate() {
            let mut row: Vec<String> = self
                .lattice_point(flat)
                .iter()
                .map(|v| v.to_string())
                .collect();
            row.extend(q.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<graph csv>", e))?;
        Ok(())
    }
}

impl GraphMap for ManifoldGraph {
    fn m(&self) -> usize {
        self.m
    }

    fn q_len(&self) -> usize {
        self.basis.n_modes() - self.m
    }

    fn eval_into(&self, p: &[f64], out: &mut [f64]) {
        assert_eq!(p.len(), self.m);
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.n_col == 1 || self.box_radius == 0.0 {
            out.copy_from_slice(&self.q_values[0]);
            return;
        }
        let cells = (self.n_col - 1) as f64;
        let mut base = vec![0usize; self.m];
        let mut frac = vec![0.0; self.m];
        for d in 0..self.m {
            let x = p[d].clamp(-self.box_radius, self.box_radius);
            let mut s = (x + self.box_radius) / (2.0 * self.box_radius) * cells;
            if (s - s.round()).abs() < 1e-9 {
                s = s.round();
            }
            let k = (s.floor() as usize).min(self.n_col - 2);
            base[d] = k;
            frac[d] = s - k as f64;
        }
        let mut corner = vec![0usize; self.m];
        for mask in 0..(1usize << self.m) {
            let mut weight = 1.0;
            for d in 0..self.m {
                let up = (mask >> d) & 1 == 1;
                corner[d] = base[d] + usize::from(up);
                weight *= if up { frac[d] } else { 1.0 - frac[d] };
            }
            if weight == 0.0 {
                continue;
            }
            let q = &self.q_values[self.flat_index(&corner)];
            for (o, v) in out.iter_mut().zip(q) {
                *o += weight * v;
            }
        }
    }
}

/// Embeds `ψ`-coordinates as the modal coefficients of the graph point, an
/// isometry onto the manifold with its `L²` metric.
impl Embedding for ManifoldGraph {
    fn embed(&self, coords: &[f64]) -> Vec<f64> {
        self.lift(coords)
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Weights of `∫_a^b e^{λ s} g(s) ds` for `g` linear on `[a, b]`, returned as
/// the factors multiplying `g(a)` and `g(b)`.
fn exponential_trapezoid(lambda: f64, a: f64, b: f64) -> (f64, f64) {
    let h = b - a;
    let x = lambda * h;
    let (i0, i1) = if x < 1e-3 {
        (
            h * (1.0 - x / 2.0 + x * x / 6.0),
            h * h * (0.5 - x / 3.0 + x * x / 8.0),
        )
    } else {
        let e = (-x).exp();
        (
            -(-x).exp_m1() / lambda,
            (1.0 - e * (1.0 + x)) / (lambda * lambda),
        )
    };
    let scale = (lambda * b).exp();
    (scale * i1 / h, scale * (i0 - i1 / h))
}

/// `Φ_new(p) = ∫_{-T}^0 e^{Λ_Q s} Q F(p(s) + Φ(p(s))) ds` with `p(·)` the
/// backward inertial-form solution from `p` under `current`.
fn lp_image(current: &ManifoldGraph, forcing: &dyn Forcing, p: &[f64]) -> Result<Vec<f64>> {
    let basis = &current.basis;
    let m = current.m;
    let n = basis.n_modes();
    let traj = evolve_inertial_form(
        basis,
        forcing,
        current,
        p,
        0.0,
        -current.t_trunc,
        current.dt,
    )?;
    let mut form = InertialForm::new(basis, forcing, current);
    let mut g_prev = vec![0.0; n];
    let mut g_next = vec![0.0; n];
    let mut out = vec![0.0; n - m];
    form.forcing_coefficients(&traj.states[0], &mut g_prev);
    for k in 0..traj.len() - 1 {
        let (a, b) = (traj.times[k], traj.times[k + 1]);
        form.forcing_coefficients(&traj.states[k + 1], &mut g_next);
        for i in m..n {
            let (wa, wb) = exponential_trapezoid(basis.lambdas[i], a, b);
            out[i - m] += wa * g_prev[i] + wb * g_next[i];
        }
        std::mem::swap(&mut g_prev, &mut g_next);
    }
    Ok(out)
}

/// One Lyapunov–Perron sweep over every lattice point.
pub fn lp_sweep(current: &ManifoldGraph, forcing: &dyn Forcing) -> Result<Vec<Vec<f64>>> {
    (0..current.lattice_len())
        .into_par_iter()
        .map(|flat| lp_image(current, forcing, &current.lattice_point(flat)))
        .collect()
}

fn sup_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| distance(x, y))
        .fold(0.0, f64::max)
}

/// Fixed point of the Lyapunov–Perron operator on the collocation lattice,
/// iterated from `Φ ≡ 0` until the sup-lattice change falls below `tol_fix`.
pub fn lyapunov_perron_solve(
    basis: &SpectralBasis,
    forcing: &dyn Forcing,
    m: usize,
    cfg: &LPConfig,
) -> Result<ManifoldGraph> {
    if m == 0 || m >= basis.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "m = {m} must satisfy 1 <= m < {}",
            basis.n_modes()
        )));
    }
    if !(cfg.tol_fix > 0.0) || cfg.n_col == 0 || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "LP tolerances and sizes must be positive".into(),
        ));
    }
    let lip = forcing.lipschitz();
    let report = check_gap_at(basis, lip, m);
    if !report.passes() {
        return Err(Error::GapViolation {
            m,
            gap: report.gap,
            threshold: report.threshold,
            lambda_m: basis.lambdas[m - 1],
            lipschitz: lip,
        });
    }
    let m_f = forcing.bound(basis.grid.domain.length());
    let auto_radius = 2.0 * m_f / basis.lambdas[m - 1];
    let box_radius = cfg
        .box_radius
        .unwrap_or(if auto_radius > 0.0 { auto_radius } else { 1.0 });
    let t_trunc = cfg
        .t_trunc
        .unwrap_or(((10.0 / cfg.tol_fix).ln() / (basis.lambdas[m] - lip)).max(cfg.dt));

    let mut graph = ManifoldGraph::flat(
        basis,
        m,
        box_radius,
        cfg.n_col,
        t_trunc,
        cfg.dt,
        cfg.tol_fix,
    );
    for iter in 1..=cfg.max_iter {
        let next = lp_sweep(&graph, forcing)?;
        let change = sup_change(&next, &graph.q_values);
        if let Some(prev) = graph.changes.last() {
            if *prev > 0.0 {
                graph.contraction_ratios.push(change / prev);
            }
        }
        graph.changes.push(change);
        graph.q_values = next;
        graph.iterations = iter;
        if change < cfg.tol_fix {
            return Ok(graph);
        }
    }
    Err(Error::NoContraction {
        iterations: cfg.max_iter,
        last_change: graph.changes.last().copied().unwrap_or(f64::NAN),
        ratios: graph.contraction_ratios,
    })
}

/// `Φ_h(p) - j_h Φ₀(p)` measured in `L²(Ω_h)`.
fn beta_at(graph_h: &ManifoldGraph, graph_0: &ManifoldGraph, h: &Diffeomorphism, p: &[f64]) -> f64 {
    let phi_h = graph_h.phi_function(p);
    let j_phi0 = pushforward_j(h, &graph_0.phi_function(p), &graph_h.basis.grid);
    (&phi_h - &j_phi0).norm()
}

/// `β_h(B) = sup_{p ∈ B} ‖Φ_h(p) - j_h Φ₀(p)‖_{L²(Ω_h)}`.
pub fn beta(
    graph_h: &ManifoldGraph,
    graph_0: &ManifoldGraph,
    h: &Diffeomorphism,
    coords: &[Vec<f64>],
) -> f64 {
    assert_eq!(graph_h.m, graph_0.m);
    coords
        .iter()
        .map(|p| beta_at(graph_h, graph_0, h, p))
        .fold(0.0, f64::max)
}

/// Transports a point of `graph(from)` to `graph(to)` by keeping its
/// `ψ`-coordinates.
pub fn transfer(from: &ManifoldGraph, to: &ManifoldGraph, u: &GridFunction) -> GridFunction {
    to.point(&psi(&from.basis, from.m, u))
}

/// `ĵ_h: M₀ → M_h`.
pub fn hat_j(graph_0: &ManifoldGraph, graph_h: &ManifoldGraph, u0: &GridFunction) -> GridFunction {
    transfer(graph_0, graph_h, u0)
}

/// `î_h: M_h → M₀`.
pub fn hat_i(graph_h: &ManifoldGraph, graph_0: &ManifoldGraph, uh: &GridFunction) -> GridFunction {
    transfer(graph_h, graph_0, uh)
}

/// `sup_{u ∈ B} ‖j_h u - ĵ_h u‖` over the graph points with the given
/// coordinates.
pub fn jhat_deviation(
    graph_0: &ManifoldGraph,
    graph_h: &ManifoldGraph,
    h: &Diffeomorphism,
    coords: &[Vec<f64>],
) -> f64 {
    coords
        .iter()
        .map(|p| {
            let u = graph_0.point(p);
            (&pushforward_j(h, &u, &graph_h.basis.grid) - &hat_j(graph_0, graph_h, &u)).norm()
        })
        .fold(0.0, f64::max)
}

/// The spectral and nonlinear comparison quantities between two problems.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapQuantities {
    pub alpha: f64,
    pub gamma_t: f64,
    pub rho: f64,
    pub beta_sup: f64,
    pub eps_dc1: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn gap_quantities(
    h: &Diffeomorphism,
    graph_0: &ManifoldGraph,
    graph_h: &ManifoldGraph,
    f0: &dyn Forcing,
    fh: &dyn Forcing,
    probes: &[GridFunction],
    coords: &[Vec<f64>],
    horizon: f64,
) -> GapQuantities {
    let m = graph_0.m;
    GapQuantities {
        alpha: alpha(h, &graph_0.basis, &graph_h.basis, m),
        gamma_t: gamma(&graph_0.basis, &graph_h.basis, m, horizon),
        rho: rho(h, f0, fh, &graph_h.basis, probes),
        beta_sup: beta(graph_h, graph_0, h, coords),
        eps_dc1: c1_distance(h, &Diffeomorphism::identity()),
    }
}

/// Distance of a full state (modal coefficients) from the graph:
/// `‖Q u - Φ(ψ P u)‖`.
pub fn graph_deviation(graph: &ManifoldGraph, coeffs: &[f64]) -> f64 {
    let phi = graph.eval(&coeffs[..graph.m]);
    distance(&coeffs[graph.m..], &phi)
}

/// Off-graph deviation along a full Galerkin trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationProfile {
    pub times: Vec<f64>,
    pub deviation: Vec<f64>,
}

impl DeviationProfile {
    pub fn max(&self) -> f64 {
        self.deviation.iter().copied().fold(0.0, f64::max)
    }

    /// Maximum over samples with `t ≤ t_max`.
    pub fn max_until(&self, t_max: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.deviation)
            .filter(|(t, _)| **t <= t_max)
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

fn deviation_profile(graph: &ManifoldGraph, traj: &Trajectory) -> DeviationProfile {
    DeviationProfile {
        times: traj.times.clone(),
        deviation: traj
            .states
            .iter()
            .map(|a| graph_deviation(graph, a))
            .collect(),
    }
}

/// Evolves the full Galerkin system from `ψ⁻¹p₀ + Φ(p₀)` and records
/// `‖Q u(t) - Φ(ψ P u(t))‖` on `[0, T]`.
pub fn invariance_residual(
    graph: &ManifoldGraph,
    forcing: &dyn Forcing,
    p0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<DeviationProfile> {
    let traj = evolve_full_coeffs(&graph.basis, forcing, &graph.lift(p0), horizon, dt)?;
    Ok(deviation_profile(graph, &traj))
}

/// Fitted exponential decay of the off-graph deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttractionFit {
    pub rate: f64,
    /// The deviation fell below the floor before `T/4`, so the fit used the
    /// samples above the floor instead of `[T/4, T]`.
    pub censored: bool,
    pub initial_deviation: f64,
    pub profile: DeviationProfile,
}

/// Least-squares slope `-k` of `log ‖Q u(t) - Φ(ψ P u(t))‖` over `[T/4, T]`
/// for a full trajectory started at `u0` (modal coefficients). Samples at or
/// below `floor` are ignored.
pub fn attraction_rate(
    graph: &ManifoldGraph,
    forcing: &dyn Forcing,
    u0: &[f64],
    horizon: f64,
    dt: f64,
    floor: f64,
) -> Result<AttractionFit> {
    let initial = graph_deviation(graph, u0);
    if !(initial > 10.0 * graph.tol_fix) {
        return Err(Error::Precondition(format!(
            "initial off-graph distance {initial:e} must exceed 10 tol_fix"
        )));
    }
    let traj = evolve_full_coeffs(&graph.basis, forcing, u0, horizon, dt)?;
    let profile = deviation_profile(graph, &traj);
    let select = |from: f64| -> Vec<(f64, f64)> {
        profile
            .times
            .iter()
            .zip(&profile.deviation)
            .filter(|(t, d)| **t >= from && **d > floor)
            .map(|(t, d)| (*t, d.ln()))
            .collect()
    };
    let mut censored = false;
    let mut window = select(horizon / 4.0);
    if window.len() < 3 {
        censored = true;
        window = select(0.0);
    }
    if window.len() < 2 {
        return Err(Error::Precondition(
            "too few samples above the floor".into(),
        ));
    }
    Ok(AttractionFit {
        rate: -least_squares_slope(&window),
        censored,
        initial_deviation: initial,
        profile,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Both sides of the slow-coordinate comparison bound at sampled times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma33Report {
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub slack: f64,
    pub ok: bool,
    /// `min_t (rhs·(1 + slack) - lhs)`.
    pub min_margin: f64,
    pub c: f64,
    pub r: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta_backward: f64,
    pub beta_forward: f64,
    pub lipschitz_h: f64,
    pub lambda_m: f64,
}

/// Constants and right-hand side of the comparison bound for
/// `‖p_h(t) - j_h p₀(t)‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma33Constants {
    pub c: f64,
    pub r: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta_backward: f64,
    pub beta_forward: f64,
    pub lipschitz_h: f64,
    pub lambda_m: f64,
    pub horizon: f64,
}

impl Lemma33Constants {
    pub fn rhs(&self, t: f64) -> f64 {
        let Self {
            c,
            r,
            alpha,
            gamma,
            rho,
            beta_backward,
            beta_forward,
            lipschitz_h: l,
            lambda_m,
            horizon,
        } = *self;
        if t <= 0.0 {
            let mu = lambda_m + 1.0;
            let grow = (mu * t).exp();
            (grow * c * gamma
                + c * alpha
                + l * beta_backward / mu
                + rho / mu
                + 2.0 * horizon * grow * c * gamma
                + c * (2.0 + l) * alpha / mu)
                * ((2.0 * l - mu) * t).exp()
        } else {
            let grow = (r * t).exp();
            (grow * c * gamma
                + c * alpha
                + grow * l * beta_forward / r
                + grow * rho / r
                + 2.0 * horizon * grow * c * gamma
                + grow * c * (2.0 + l) * alpha / r)
                * ((2.0 * l - r) * t).exp()
        }
    }
}

pub const LEMMA33_SAMPLES: usize = 41;

/// Integrates both inertial forms from the common coordinates `p` over
/// `[-T, T]` and compares `‖p_h(t) - j_h p₀(t)‖` with the bound at
/// [`LEMMA33_SAMPLES`] times.
#[allow(clippy::too_many_arguments)]
pub fn verify_lemma33(
    h: &Diffeomorphism,
    graph_0: &ManifoldGraph,
    graph_h: &ManifoldGraph,
    f0: &dyn Forcing,
    fh: &dyn Forcing,
    p: &[f64],
    horizon: f64,
    dt: f64,
    slack: f64,
    probes: &[GridFunction],
) -> Result<Lemma33Report> {
    let m = graph_0.m;
    let (b0, bh) = (&graph_0.basis, &graph_h.basis);
    let back0 = evolve_inertial_form(b0, f0, graph_0, p, 0.0, -horizon, dt)?;
    let fwd0 = evolve_inertial_form(b0, f0, graph_0, p, 0.0, horizon, dt)?;
    let backh = evolve_inertial_form(bh, fh, graph_h, p, 0.0, -horizon, dt)?;
    let fwdh = evolve_inertial_form(bh, fh, graph_h, p, 0.0, horizon, dt)?;

    let mut form = InertialForm::new(b0, f0, graph_0);
    let mut f_coeffs = vec![0.0; b0.n_modes()];
    let mut c = 0.0_f64;
    let mut tube = Vec::with_capacity(back0.len() + fwd0.len());
    for state in back0.states.iter().chain(&fwd0.states) {
        form.forcing_coefficients(state, &mut f_coeffs);
        let a: f64 = state.iter().map(|v| v.abs()).sum();
        let b: f64 = f_coeffs[..m].iter().map(|v| v.abs()).sum();
        c = c.max(a).max(b);
        tube.push(graph_0.point(state));
    }
    let mut rho_set: Vec<GridFunction> = probes.to_vec();
    rho_set.extend(tube);

    let consts = Lemma33Constants {
        c,
        r: 0.9 * b0.lambdas[0].min(bh.lambdas[0]),
        alpha: alpha(h, b0, bh, m),
        gamma: gamma(b0, bh, m, horizon),
        rho: rho(h, f0, fh, bh, &rho_set),
        beta_backward: beta(graph_h, graph_0, h, &back0.states),
        beta_forward: beta(graph_h, graph_0, h, &fwd0.states),
        lipschitz_h: fh.lipschitz(),
        lambda_m: b0.lambdas[m - 1],
        horizon,
    };

    let mut times = Vec::with_capacity(LEMMA33_SAMPLES);
    let mut lhs = Vec::with_capacity(LEMMA33_SAMPLES);
    let mut rhs = Vec::with_capacity(LEMMA33_SAMPLES);
    for k in 0..LEMMA33_SAMPLES {
        let t = -horizon + 2.0 * horizon * k as f64 / (LEMMA33_SAMPLES - 1) as f64;
        let (a0, ah) = if t <= 0.0 {
            (back0.sample(t), backh.sample(t))
        } else {
            (fwd0.sample(t), fwdh.sample(t))
        };
        let ph = bh.synthesize(&ah);
        let jp0 = pushforward_j(h, &b0.synthesize(&a0), &bh.grid);
        times.push(t);
        lhs.push((&ph - &jp0).norm());
        rhs.push(consts.rhs(t));
    }
    let min_margin = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| r * (1.0 + slack) - l)
        .fold(f64::INFINITY, f64::min);
    Ok(Lemma33Report {
        times,
        lhs,
        rhs,
        slack,
        ok: min_margin >= 0.0,
        min_margin,
        c: consts.c,
        r: consts.r,
        alpha: consts.alpha,
        gamma: consts.gamma,
        rho: consts.rho,
        beta_backward: consts.beta_backward,
        beta_forward: consts.beta_forward,
        lipschitz_h: consts.lipschitz_h,
        lambda_m: consts.lambda_m,
    })
}

/// `e^{-A t} Q_m u` on the retained modes, with the unresolved remainder
/// decaying at `λ_{n_modes+1}`.
fn q_semigroup(basis: &SpectralBasis, m: usize, u: &GridFunction, t: f64) -> GridFunction {
    let coeffs = basis.coefficients(&u.values);
    let mut remainder = u.clone();
    remainder.axpy(-1.0, &basis.synthesize(&coeffs));
    let tail = basis.next_lambda.map_or(0.0, |l| (-l * t).exp());
    let evolved: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i < m {
                0.0
            } else {
                c * (-basis.lambdas[i] * t).exp()
            }
        })
        .collect();
    let mut out = basis.synthesize(&evolved);
    out.axpy(tail, &remainder);
    out
}

/// Integrand `‖e^{-A_h t} Q_m^h j_h u - j_h e^{-A₀ t} Q_m⁰ u‖` at time `t`.
pub fn q_semigroup_integrand(
    h: &Diffeomorphism,
    basis0: &SpectralBasis,
    basis_h: &SpectralBasis,
    m: usize,
    u: &GridFunction,
    t: f64,
) -> f64 {
    let ju = pushforward_j(h, u, &basis_h.grid);
    let lhs = q_semigroup(basis_h, m, &ju, t);
    let rhs = pushforward_j(h, &q_semigroup(basis0, m, u, t), &basis_h.grid);
    (&lhs - &rhs).norm()
}

/// Trapezoid rule for `∫₀^T` of [`q_semigroup_integrand`] on `n_t + 1`
/// samples.
pub fn verify_q_semigroup(
    h: &Diffeomorphism,
    basis0: &SpectralBasis,
    basis_h: &SpectralBasis,
    m: usize,
    u: &GridFunction,
    horizon: f64,
    n_t: usize,
) -> f64 {
    assert!(horizon > 0.0 && n_t > 0);
    let step = horizon / n_t as f64;
    (0..=n_t)
        .map(|k| {
            let w = if k == 0 || k == n_t { 0.5 } else { 1.0 };
            w * q_semigroup_integrand(h, basis0, basis_h, m, u, k as f64 * step)
        })
        .sum::<f64>()
        * step
}
