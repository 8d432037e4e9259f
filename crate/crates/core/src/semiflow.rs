//! Nonlinearities and their Nemytskii operators, the spectral-Galerkin
//! semiflow of `u_t + A_h u = F_h(u)`, the inertial form on a manifold graph,
//! and the nonlinearity defect `ρ(h)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{c1_distance, pushforward_j, Diffeomorphism, GridFunction};
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

/// Coefficient magnitude beyond which a time stepper reports instability.
pub const OVERFLOW_GUARD: f64 = 1e12;

const NONLINEARITY_SAMPLES: usize = 10_001;
const SAMPLE_HALF_WIDTH: f64 = 2.0 * std::f64::consts::PI;

/// A forcing term `F: L²(Ω_h) → L²(Ω_h)` acting on nodal values.
pub trait Forcing: Sync {
    fn apply(&self, u: &[f64], out: &mut [f64]);

    /// Global Lipschitz constant of `F` on `L²`.
    fn lipschitz(&self) -> f64;

    /// `sup_u ‖F(u)‖_{L²}` on a domain of the given length.
    fn bound(&self, domain_length: f64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearityTag {
    /// `f(s) = κ sin s`.
    Sine,
    /// `f(s) = κ sin s + δ sin s`, a perturbation of [`Sine`](Self::Sine).
    Scaled,
    /// `f(s) = κ`.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Base {
    Sine,
    Constant,
}

/// A bounded C¹ scalar nonlinearity with its sampled constants
/// `L = sup |f'|` and `sup |f|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    pub tag: NonlinearityTag,
    pub kappa: f64,
    /// Amplitude of the added `sin s` term (zero for unperturbed `f`).
    pub perturbation: f64,
    pub lipschitz: f64,
    pub sup: f64,
    base: Base,
}

impl Nonlinearity {
    pub fn sine(kappa: f64) -> Self {
        Self::build(Base::Sine, kappa, 0.0)
    }

    pub fn constant(value: f64) -> Self {
        Self::build(Base::Constant, value, 0.0)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    fn build(base: Base, kappa: f64, perturbation: f64) -> Self {
        let tag = match (base, perturbation != 0.0) {
            (Base::Constant, false) => NonlinearityTag::Constant,
            (_, true) => NonlinearityTag::Scaled,
            (Base::Sine, false) => NonlinearityTag::Sine,
        };
        let mut f = Self {
            tag,
            kappa,
            perturbation,
            lipschitz: 0.0,
            sup: 0.0,
            base,
        };
        let (mut lip, mut sup) = (0.0_f64, 0.0_f64);
        for s in sample_line() {
            lip = lip.max(f.fprime(s).abs());
            sup = sup.max(f.f(s).abs());
        }
        f.lipschitz = lip;
        f.sup = sup;
        f
    }

    pub fn f(&self, s: f64) -> f64 {
        let base = match self.base {
            Base::Sine => self.kappa * s.sin(),
            Base::Constant => self.kappa,
        };
        base + self.perturbation * s.sin()
    }

    pub fn fprime(&self, s: f64) -> f64 {
        let base = match self.base {
            Base::Sine => self.kappa * s.cos(),
            Base::Constant => 0.0,
        };
        base + self.perturbation * s.cos()
    }

    /// `M_F = sup |f| · √|Ω|`, the `L²` bound of the Nemytskii operator.
    pub fn m_f(&self, domain_length: f64) -> f64 {
        self.sup * domain_length.sqrt()
    }
}

impl Forcing for Nonlinearity {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(u) {
            *o = self.f(*s);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn bound(&self, domain_length: f64) -> f64 {
        self.m_f(domain_length)
    }
}

/// A state-independent forcing `F(u) ≡ g`.
#[derive(Clone, Debug)]
pub struct FieldForcing {
    pub field: GridFunction,
}

impl Forcing for FieldForcing {
    fn apply(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.field.values);
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn bound(&self, _domain_length: f64) -> f64 {
        self.field.norm()
    }
}

fn sample_line() -> impl Iterator<Item = f64> {
    let last = (NONLINEARITY_SAMPLES - 1) as f64;
    (0..NONLINEARITY_SAMPLES)
        .map(move |k| -SAMPLE_HALF_WIDTH + 2.0 * SAMPLE_HALF_WIDTH * k as f64 / last)
}

/// `sup |f - g| + sup |f' - g'|` over a dense sample covering a full period.
pub fn nonlinearity_c1_distance(f: &Nonlinearity, g: &Nonlinearity) -> f64 {
    let (mut value, mut slope) = (0.0_f64, 0.0_f64);
    for s in sample_line() {
        value = value.max((f.f(s) - g.f(s)).abs());
        slope = slope.max((f.fprime(s) - g.fprime(s)).abs());
    }
    value + slope
}

/// Pointwise application `(F u)(x_k) = f(u(x_k))`.
pub fn nemytskii(f: &Nonlinearity, u: &GridFunction) -> GridFunction {
    let mut out = vec![0.0; u.values.len()];
    f.apply(&u.values, &mut out);
    GridFunction::new(u.grid, out)
}

/// `f_h = f₀ + min(d_C¹(h, id), 1) · (κ_g / 2) sin`, so that
/// `d̄_C¹(f_h, f₀) ≤ d_C¹(h, id)` whenever `κ_g ≤ 1`. With `κ_g = 0` or
/// `h = id` this returns `f₀` unchanged.
pub fn perturbed_nonlinearity(
    f0: &Nonlinearity,
    h: &Diffeomorphism,
    kappa_g: f64,
) -> Result<Nonlinearity> {
    if !(0.0..=1.0).contains(&kappa_g) {
        return Err(Error::InvalidArgument(format!(
            "kappa_g = {kappa_g} must lie in [0, 1]"
        )));
    }
    let budget = c1_distance(h, &Diffeomorphism::identity()).min(1.0);
    let delta = budget * 0.5 * kappa_g;
    if delta == 0.0 {
        return Ok(f0.clone());
    }
    Ok(Nonlinearity::build(
        f0.base,
        f0.kappa,
        f0.perturbation + delta,
    ))
}

/// Time samples with modal coefficient vectors, optionally with the time
/// derivative at each sample (enables cubic Hermite interpolation).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub rates: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("empty trajectory")
    }

    /// Reorders samples so that time is strictly increasing.
    fn into_increasing(mut self) -> Self {
        if self.times.len() > 1 && self.times[0] > self.times[1] {
            self.times.reverse();
            self.states.reverse();
            if let Some(r) = self.rates.as_mut() {
                r.reverse();
            }
        }
        self
    }

    /// State at time `t`, by cubic Hermite interpolation when rates are
    /// stored and linear interpolation otherwise. `t` is clamped to the
    /// sampled range. Times must be increasing.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        assert!(n > 0);
        if n == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = self
            .times
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(n - 2);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        match &self.rates {
            Some(rates) => {
                let (da, db) = (&rates[k], &rates[k + 1]);
                let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
                let h10 = s * (1.0 - s) * (1.0 - s);
                let h01 = s * s * (3.0 - 2.0 * s);
                let h11 = s * s * (s - 1.0);
                (0..a.len())
                    .map(|i| h00 * a[i] + h10 * h * da[i] + h01 * b[i] + h11 * h * db[i])
                    .collect()
            }
            None => a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect(),
        }
    }

    /// CSV with columns `t, a_1 … a_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=width).map(|i| format!("a_{i}")));
        w.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }
}

/// Projected Galerkin forcing `⟨F(Σ a_j φ_j), φ_i⟩` with reusable buffers.
pub(crate) struct GalerkinForcing<'a> {
    pub basis: &'a SpectralBasis,
    pub forcing: &'a dyn Forcing,
    field: Vec<f64>,
    image: Vec<f64>,
}

impl<'a> GalerkinForcing<'a> {
    pub fn new(basis: &'a SpectralBasis, forcing: &'a dyn Forcing) -> Self {
        let n = basis.grid.n_interior;
        Self {
            basis,
            forcing,
            field: vec![0.0; n],
            image: vec![0.0; n],
        }
    }

    /// Writes the first `out.len()` projected coefficients of `F(Σ a_j φ_j)`.
    pub fn project(&mut self, coeffs: &[f64], out: &mut [f64]) {
        self.basis.synthesize_into(coeffs, &mut self.field);
        self.forcing.apply(&self.field, &mut self.image);
        let dx = self.basis.grid.dx;
        for (o, mode) in out.iter_mut().zip(&self.basis.modes) {
            *o = dx * crate::geometry::dot(&mode.values, &self.image);
        }
    }
}

fn guard(t: f64, state: &[f64]) -> Result<()> {
    let magnitude = state.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(magnitude <= OVERFLOW_GUARD) {
        return Err(Error::Unstable { t, magnitude });
    }
    Ok(())
}

fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} must be positive"
        )));
    }
    Ok(((span.abs() / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Exponential-Euler integration of the full Galerkin system
/// `a_i' = -λ_i a_i + ⟨F(Σ a_j φ_j), φ_i⟩` over all retained modes.
pub fn evolve_full(
    basis: &SpectralBasis,
    forcing: &dyn Forcing,
    u0: &GridFunction,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    evolve_full_coeffs(basis, forcing, &basis.coefficients(&u0.values), t_end, dt)
}

/// [`evolve_full`] from modal coefficients.
pub fn evolve_full_coeffs(
    basis: &SpectralBasis,
    forcing: &dyn Forcing,
    a0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must be positive"
        )));
    }
    let n_modes = basis.n_modes();
    assert_eq!(a0.len(), n_modes);
    let steps = step_count(t_end, dt)?;
    let h = t_end / steps as f64;
    let decay: Vec<f64> = basis.lambdas.iter().map(|l| (-l * h).exp()).collect();
    let gain: Vec<f64> = basis
        .lambdas
        .iter()
        .map(|l| -(-l * h).exp_m1() / l)
        .collect();

    let mut galerkin = GalerkinForcing::new(basis, forcing);
    let mut a = a0.to_vec();
    let mut nonlinear = vec![0.0; n_modes];
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(a.clone());
    for k in 1..=steps {
        galerkin.project(&a, &mut nonlinear);
        for i in 0..n_modes {
            a[i] = decay[i] * a[i] + gain[i] * nonlinear[i];
        }
        let t = k as f64 * h;
        guard(t, &a)?;
        times.push(t);
        states.push(a.clone());
    }
    Ok(Trajectory {
        times,
        states,
        rates: None,
    })
}

/// A Lipschitz graph `Φ: ℝ^m → Q_m L²` given by its `Q`-mode coefficients.
pub trait GraphMap: Sync {
    fn m(&self) -> usize;

    /// Number of `Q` coefficients (`n_modes - m`).
    fn q_len(&self) -> usize;

    fn eval_into(&self, p: &[f64], out: &mut [f64]);

    fn eval(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q_len()];
        self.eval_into(p, &mut out);
        out
    }
}

/// `Φ ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct FlatGraph {
    pub m: usize,
    pub q_len: usize,
}

impl GraphMap for FlatGraph {
    fn m(&self) -> usize {
        self.m
    }

    fn q_len(&self) -> usize {
        self.q_len
    }

    fn eval_into(&self, _p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Right-hand side of the inertial form `p' = -Λ_m p + P_m F(p + Φ(ψp))` in
/// ψ-coordinates.
pub(crate) struct InertialForm<'a> {
    galerkin: GalerkinForcing<'a>,
    graph: &'a dyn GraphMap,
    coeffs: Vec<f64>,
}

impl<'a> InertialForm<'a> {
    pub fn new(
        basis: &'a SpectralBasis,
        forcing: &'a dyn Forcing,
        graph: &'a dyn GraphMap,
    ) -> Self {
        assert!(graph.m() + graph.q_len() <= basis.n_modes());
        Self {
            galerkin: GalerkinForcing::new(basis, forcing),
            graph,
            coeffs: vec![0.0; graph.m() + graph.q_len()],
        }
    }

    /// Full modal coefficient vector `(p, Φ(p))`.
    pub fn lift(&mut self, p: &[f64]) -> &[f64] {
        let m = self.graph.m();
        self.coeffs[..m].copy_from_slice(p);
        self.graph.eval_into(p, &mut self.coeffs[m..]);
        &self.coeffs
    }

    pub fn rate(&mut self, p: &[f64], out: &mut [f64]) {
        let m = self.graph.m();
        self.lift(p);
        self.galerkin.project(&self.coeffs, out);
        for i in 0..m {
            out[i] -= self.galerkin.basis.lambdas[i] * p[i];
        }
    }

    /// Projection of `F(p + Φ(p))` onto every retained mode.
    pub fn forcing_coefficients(&mut self, p: &[f64], out: &mut [f64]) {
        self.lift(p);
        self.galerkin.project(&self.coeffs, out);
    }
}

/// Classical RK4 integration of the inertial form from `t_from` to `t_to`
/// (either direction). The returned trajectory is ordered by increasing time
/// and carries the rate at each sample.
pub fn evolve_inertial_form(
    basis: &SpectralBasis,
    forcing: &dyn Forcing,
    graph: &dyn GraphMap,
    p0: &[f64],
    t_from: f64,
    t_to: f64,
    dt: f64,
) -> Result<Trajectory> {
    let m = graph.m();
    assert_eq!(p0.len(), m);
    let span = t_to - t_from;
    let steps = if span == 0.0 {
        0
    } else {
        step_count(span, dt)?
    };
    let h = if steps == 0 { 0.0 } else { span / steps as f64 };

    let mut form = InertialForm::new(basis, forcing, graph);
    let mut p = p0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut rates = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t_from + k as f64 * h;
        form.rate(&p, &mut k1);
        times.push(t);
        states.push(p.clone());
        rates.push(k1.clone());
        if k == steps {
            break;
        }
        for i in 0..m {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        form.rate(&tmp, &mut k2);
        for i in 0..m {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        form.rate(&tmp, &mut k3);
        for i in 0..m {
            tmp[i] = p[i] + h * k3[i];
        }
        form.rate(&tmp, &mut k4);
        for i in 0..m {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        guard(t + h, &p)?;
    }
    Ok(Trajectory {
        times,
        states,
        rates: Some(rates),
    }
    .into_increasing())
}

/// The probe set `{0, ±φ_i⁰ (i ≤ m), three seeded random combinations}` used
/// to estimate the operator sup in [`rho`].
pub fn default_probes(basis0: &SpectralBasis, m: usize, seed: u64) -> Vec<GridFunction> {
    let mut probes = vec![GridFunction::zeros(basis0.grid)];
    for mode in &basis0.modes[..m] {
        probes.push(mode.clone());
        probes.push(mode.scale(-1.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = basis0.n_modes().min(8);
    for _ in 0..3 {
        let coeffs: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        probes.push(basis0.synthesize(&coeffs));
    }
    probes
}

/// `‖F_h(j_h u) - j_h F₀(u)‖` for each probe `u`.
pub fn rho_per_probe(
    h: &Diffeomorphism,
    f0: &dyn Forcing,
    fh: &dyn Forcing,
    basis_h: &SpectralBasis,
    probes: &[GridFunction],
) -> Vec<f64> {
    let target = basis_h.grid;
    probes
        .iter()
        .map(|u| {
            let ju = pushforward_j(h, u, &target);
            let mut fh_ju = vec![0.0; ju.values.len()];
            fh.apply(&ju.values, &mut fh_ju);
            let mut f0u = vec![0.0; u.values.len()];
            f0.apply(&u.values, &mut f0u);
            let j_f0u = pushforward_j(h, &GridFunction::new(u.grid, f0u), &target);
            let mut diff = GridFunction::new(target, fh_ju);
            diff.axpy(-1.0, &j_f0u);
            diff.norm()
        })
        .collect()
}

/// Probe-set estimate (a lower bound) of
/// `ρ(h) = sup_u ‖F_h(j_h u) - j_h F₀(u)‖_{L²(Ω_h)}`.
pub fn rho(
    h: &Diffeomorphism,
    f0: &dyn Forcing,
    fh: &dyn Forcing,
    basis_h: &SpectralBasis,
    probes: &[GridFunction],
) -> f64 {
    assert!(!probes.is_empty(), "rho needs a nonempty probe set");
    rho_per_probe(h, f0, fh, basis_h, probes)
        .into_iter()
        .fold(0.0, f64::max)
}
