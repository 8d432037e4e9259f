//! The finite-difference Dirichlet Laplacian `A_h` on a domain's own uniform
//! grid, its truncated eigenbasis, the projections `P_m`/`Q_m`, the coordinate
//! map `ψ_h`, the spectral gap condition and the spectral perturbation
//! quantities `α(h)` and `γ_h(T)`.

use std::io::Write;

use serde::Serialize;

use crate::geometry::{
    assert_same_grid, dot, l2_inner, pushforward_j, zero_extended_distance, zero_extended_inner,
    Diffeomorphism, Grid, GridFunction,
};
use crate::tridiag::SymTridiagonal;
use crate::{Error, Result};

/// Number of time samples used for `γ_h(T)` on `[-T, T]`.
pub const GAMMA_SAMPLES: usize = 2001;

/// Default number of retained modes.
pub const DEFAULT_N_MODES: usize = 32;

/// `-d²/dx²` with homogeneous Dirichlet conditions, discretised by second
/// order central differences.
#[derive(Clone, Copy, Debug)]
pub struct DirichletLaplacian {
    pub grid: Grid,
    pub diag: f64,
    pub offdiag: f64,
}

impl DirichletLaplacian {
    pub fn new(grid: Grid) -> Self {
        let inv = 1.0 / (grid.dx * grid.dx);
        Self {
            grid,
            diag: 2.0 * inv,
            offdiag: -inv,
        }
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        assert_same_grid(&self.grid, &u.grid);
        let mut out = vec![0.0; u.values.len()];
        self.as_tridiagonal().matvec(&u.values, &mut out);
        GridFunction::new(self.grid, out)
    }

    fn as_tridiagonal(&self) -> SymTridiagonal {
        let n = self.grid.n_interior;
        SymTridiagonal::new(vec![self.diag; n], vec![self.offdiag; n - 1])
    }

    /// `(2/Δx²)(1 - cos(kπ/(n+1)))`, the exact `k`-th eigenvalue (1-based).
    pub fn closed_form_eigenvalue(&self, k: usize) -> f64 {
        let n = self.grid.n_interior;
        self.diag * (1.0 - (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos())
    }
}

/// Ascending eigenvalues and `L²`-orthonormal eigenfunctions of `A_h`,
/// truncated to `n_modes`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub grid: Grid,
    pub lambdas: Vec<f64>,
    pub modes: Vec<GridFunction>,
    /// `λ_{n_modes+1}` when the grid supports it.
    pub next_lambda: Option<f64>,
}

impl SpectralBasis {
    /// Eigenbasis of the Laplacian on `Ω_h` with `n_interior` nodes.
    pub fn for_domain(h: &Diffeomorphism, n_interior: usize, n_modes: usize) -> Result<Self> {
        let grid = Grid::on_image(h, n_interior)?;
        eigensystem(&DirichletLaplacian::new(grid), n_modes)
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Modal coefficients `⟨u, φ_i⟩` for all retained modes.
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_modes()];
        self.coefficients_into(values, &mut out);
        out
    }

    pub(crate) fn coefficients_into(&self, values: &[f64], out: &mut [f64]) {
        let dx = self.grid.dx;
        for (o, mode) in out.iter_mut().zip(&self.modes) {
            *o = dx * dot(&mode.values, values);
        }
    }

    /// `Σ c_i φ_i` for the leading `coeffs.len()` modes.
    pub fn synthesize(&self, coeffs: &[f64]) -> GridFunction {
        let mut out = vec![0.0; self.grid.n_interior];
        self.synthesize_into(coeffs, &mut out);
        GridFunction::new(self.grid, out)
    }

    pub(crate) fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        assert!(coeffs.len() <= self.n_modes());
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, mode) in coeffs.iter().zip(&self.modes) {
            if *c == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(&mode.values) {
                *o += c * m;
            }
        }
    }

    /// `e^{-λ_{n_modes+1} δ}`: the decay factor of the discarded tail after
    /// time `δ`.
    pub fn tail_bound(&self, delta: f64) -> Option<f64> {
        self.next_lambda.map(|l| (-l * delta).exp())
    }

    /// CSV with columns `i, lambda, node_1 … node_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["i".to_string(), "lambda".to_string()];
        header.extend((1..=self.grid.n_interior).map(|k| format!("node_{k}")));
        w.write_record(&header)?;
        for (i, (lambda, mode)) in self.lambdas.iter().zip(&self.modes).enumerate() {
            let mut row = vec![(i + 1).to_string(), lambda.to_string()];
            row.extend(mode.values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<basis csv>", e))?;
        Ok(())
    }
}

/// Full symmetric tridiagonal eigendecomposition of `op`, truncated to the
/// lowest `n_modes`. Each eigenvector is scaled to unit discrete `L²` norm
/// and its first nonzero component is made positive.
pub fn eigensystem(op: &DirichletLaplacian, n_modes: usize) -> Result<SpectralBasis> {
    let n = op.grid.n_interior;
    if n_modes == 0 || n_modes > n {
        return Err(Error::InvalidArgument(format!(
            "n_modes = {n_modes} must lie in 1..={n}"
        )));
    }
    let t = op.as_tridiagonal();
    let all = t.eigenvalues()?;
    let mut unit_vectors: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for &lambda in &all[..n_modes] {
        let mut v = t.eigenvector(lambda, &unit_vectors);
        let peak = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * peak) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        unit_vectors.push(v);
    }
    let scale = 1.0 / op.grid.dx.sqrt();
    let modes = unit_vectors
        .into_iter()
        .map(|v| GridFunction::new(op.grid, v.into_iter().map(|x| x * scale).collect()))
        .collect();
    Ok(SpectralBasis {
        grid: op.grid,
        lambdas: all[..n_modes].to_vec(),
        modes,
        next_lambda: all.get(n_modes).copied(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorKind {
    /// Onto the span of `φ_1 … φ_m`.
    P,
    /// Onto the span of `φ_{m+1} … φ_{n_modes}`.
    Q,
}

/// The spectral projection `P_m` or `Q_m` on the retained modes.
#[derive(Clone, Copy, Debug)]
pub struct Projector<'a> {
    pub basis: &'a SpectralBasis,
    pub m: usize,
    pub kind: ProjectorKind,
}

impl<'a> Projector<'a> {
    pub fn new(basis: &'a SpectralBasis, m: usize, kind: ProjectorKind) -> Result<Self> {
        if m == 0 || m >= basis.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "projector rank m = {m} must satisfy 1 <= m < {}",
                basis.n_modes()
            )));
        }
        Ok(Self { basis, m, kind })
    }

    fn range(&self) -> std::ops::Range<usize> {
        match self.kind {
            ProjectorKind::P => 0..self.m,
            ProjectorKind::Q => self.m..self.basis.n_modes(),
        }
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        assert_same_grid(&self.basis.grid, &u.grid);
        let mut coeffs = self.basis.coefficients(&u.values);
        let keep = self.range();
        for (i, c) in coeffs.iter_mut().enumerate() {
            if !keep.contains(&i) {
                *c = 0.0;
            }
        }
        self.basis.synthesize(&coeffs)
    }
}

/// Outcome of the spectral gap test `λ_{m+1} - λ_m > 2√2 L` and `λ_m > L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub m: usize,
    pub gap: f64,
    pub threshold: f64,
    pub gap_ok: bool,
    pub lowmode_ok: bool,
    pub smallest_m: Option<usize>,
}

impl GapReport {
    pub fn passes(&self) -> bool {
        self.gap_ok && self.lowmode_ok
    }
}

/// Both gap inequalities at a fixed `m` (1-based).
pub fn check_gap_at(basis: &SpectralBasis, lipschitz: f64, m: usize) -> GapReport {
    assert!(m >= 1 && m < basis.n_modes());
    let gap = basis.lambdas[m] - basis.lambdas[m - 1];
    let threshold = 2.0 * std::f64::consts::SQRT_2 * lipschitz;
    let gap_ok = gap > threshold;
    let lowmode_ok = basis.lambdas[m - 1] > lipschitz;
    GapReport {
        m,
        gap,
        threshold,
        gap_ok,
        lowmode_ok,
        smallest_m: (gap_ok && lowmode_ok).then_some(m),
    }
}

/// The smallest `m < n_modes` satisfying both gap inequalities. When none
/// exists the report describes `m = 1` and `smallest_m` is `None`.
pub fn check_gap(basis: &SpectralBasis, lipschitz: f64) -> GapReport {
    (1..basis.n_modes())
        .map(|m| check_gap_at(basis, lipschitz, m))
        .find(GapReport::passes)
        .unwrap_or_else(|| check_gap_at(basis, lipschitz, 1))
}

/// `ψ(u) = (⟨u, φ_1⟩, …, ⟨u, φ_m⟩)`.
pub fn psi(basis: &SpectralBasis, m: usize, u: &GridFunction) -> Vec<f64> {
    assert_same_grid(&basis.grid, &u.grid);
    let dx = basis.grid.dx;
    basis.modes[..m]
        .iter()
        .map(|mode| dx * dot(&mode.values, &u.values))
        .collect()
}

/// `ψ⁻¹(p) = Σ p_i φ_i`.
pub fn psi_inverse(basis: &SpectralBasis, p: &[f64]) -> GridFunction {
    basis.synthesize(p)
}

/// `max_{i≤m} ‖j_h φ_i⁰ - φ_i^h‖` with `φ_i^h` sign-aligned to `j_h φ_i⁰`.
pub fn alpha(h: &Diffeomorphism, basis0: &SpectralBasis, basis_h: &SpectralBasis, m: usize) -> f64 {
    (0..m)
        .map(|i| {
            let j_phi = pushforward_j(h, &basis0.modes[i], &basis_h.grid);
            let phi_h = &basis_h.modes[i];
            let sign = if l2_inner(&j_phi, phi_h) < 0.0 {
                -1.0
            } else {
                1.0
            };
            let mut diff = j_phi;
            diff.axpy(-sign, phi_h);
            diff.norm()
        })
        .fold(0.0, f64::max)
}

/// `sup { |e^{-λ_i^h t} - e^{-λ_i⁰ t}| : i ≤ m, -T ≤ t ≤ T }` on a uniform
/// sample of [`GAMMA_SAMPLES`] times.
pub fn gamma(basis0: &SpectralBasis, basis_h: &SpectralBasis, m: usize, horizon: f64) -> f64 {
    assert!(horizon > 0.0);
    let mut sup = 0.0_f64;
    for k in 0..GAMMA_SAMPLES {
        let t = -horizon + 2.0 * horizon * k as f64 / (GAMMA_SAMPLES - 1) as f64;
        for i in 0..m {
            let d = ((-basis_h.lambdas[i] * t).exp() - (-basis0.lambdas[i] * t).exp()).abs();
            sup = sup.max(d);
        }
    }
    sup
}

/// `max_i ‖j_h φ_i⁰‖` over the first `k` reference modes: a lower estimate of
/// the operator norm `‖j_h‖`.
pub fn j_norm_estimate(h: &Diffeomorphism, basis0: &SpectralBasis, target: &Grid, k: usize) -> f64 {
    basis0.modes[..k]
        .iter()
        .map(|phi| pushforward_j(h, phi, target).norm())
        .fold(0.0, f64::max)
}

/// `‖φ_i^h - φ_i⁰‖_{L²(ℝ)}` of the zero extensions, after sign alignment.
/// `i` is 0-based.
pub fn eigenfunction_deviation(basis0: &SpectralBasis, basis_h: &SpectralBasis, i: usize) -> f64 {
    let phi0 = &basis0.modes[i];
    let phi_h = &basis_h.modes[i];
    if zero_extended_inner(phi0, phi_h) < 0.0 {
        zero_extended_distance(&phi_h.scale(-1.0), phi0)
    } else {
        zero_extended_distance(phi_h, phi0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Family, Interval};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_basis(n: usize, n_modes: usize) -> SpectralBasis {
        SpectralBasis::for_domain(&Diffeomorphism::identity(), n, n_modes).unwrap()
    }

    #[test]
    fn three_node_first_eigenvalue() {
        let b = unit_basis(3, 3);
        assert_relative_eq!(
            b.lambdas[0],
            32.0 * (1.0 - (PI / 4.0).cos()),
            epsilon = 1e-12
        );
        assert_relative_eq!(b.lambdas[0], 9.372583, epsilon = 1e-6);
    }

    #[test]
    fn fine_grid_approaches_continuum() {
        let b = unit_basis(511, 4);
        assert!((b.lambdas[0] - PI * PI).abs() < 1e-3);
    }

    #[test]
    fn affine_scaling_of_spectrum() {
        let b0 = unit_basis(63, 8);
        let eps = 0.1;
        let h = Diffeomorphism::new(Family::Affine, eps).unwrap();
        let bh = SpectralBasis::for_domain(&h, 63, 8).unwrap();
        for (l0, lh) in b0.lambdas.iter().zip(&bh.lambdas) {
            assert_relative_eq!(*lh, l0 / (1.0 + eps).powi(2), max_relative = 1e-12);
        }
    }

    #[test]
    fn modes_are_orthonormal_eigenvectors() {
        let b = unit_basis(127, 16);
        let op = DirichletLaplacian::new(b.grid);
        for i in 0..16 {
            for j in 0..16 {
                let ip = l2_inner(&b.modes[i], &b.modes[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() <= 1e-10);
            }
            let mut r = op.apply(&b.modes[i]);
            r.axpy(-b.lambdas[i], &b.modes[i]);
            assert!(r.norm() <= 1e-8 * b.lambdas[i]);
            assert!(b.modes[i].values[0] > 0.0);
        }
    }

    #[test]
    fn eigensystem_is_bitwise_reproducible() {
        let a = unit_basis(95, 12);
        let b = unit_basis(95, 12);
        assert_eq!(a.lambdas, b.lambdas);
        for (x, y) in a.modes.iter().zip(&b.modes) {
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn too_many_modes_rejected() {
        let grid = Grid::new(Interval::unit(), 5).unwrap();
        assert!(eigensystem(&DirichletLaplacian::new(grid), 6).is_err());
        assert!(eigensystem(&DirichletLaplacian::new(grid), 0).is_err());
    }

    #[test]
    fn projectors_are_complementary() {
        let b = unit_basis(63, 10);
        let coeffs: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).sin()).collect();
        let u = b.synthesize(&coeffs);
        let p = Projector::new(&b, 3, ProjectorKind::P).unwrap().apply(&u);
        let q = Projector::new(&b, 3, ProjectorKind::Q).unwrap().apply(&u);
        let rest = &(&u - &p) - &q;
        assert!(rest.norm() <= 1e-10);
        assert!(Projector::new(&b, 10, ProjectorKind::P).is_err());
    }

    #[test]
    fn gap_examples() {
        // Continuum-like spectrum on a fine grid, L0 = 1: m = 1.
        let b = unit_basis(255, 8);
        let r = check_gap(&b, 1.0);
        assert_eq!(r.smallest_m, Some(1));
        assert!(r.gap_ok && r.lowmode_ok);
        assert!((r.gap - 3.0 * PI * PI).abs() < 0.01);

        let r = check_gap(&b, 1e6);
        assert_eq!(r.smallest_m, None);
        assert!((1..8).all(|m| !check_gap_at(&b, 1e6, m).gap_ok));
    }

    #[test]
    fn gap_equal_to_threshold_is_not_admissible() {
        let b = unit_basis(63, 4);
        let gap = b.lambdas[1] - b.lambdas[0];
        let mut l0 = gap / (2.0 * std::f64::consts::SQRT_2);
        // nudge until the product reproduces the gap exactly
        let mut tries = 0;
        while 2.0 * std::f64::consts::SQRT_2 * l0 != gap && tries < 64 {
            let t = 2.0 * std::f64::consts::SQRT_2 * l0;
            l0 = if t < gap {
                l0.next_up()
            } else {
                l0.next_down()
            };
            tries += 1;
        }
        let r = check_gap_at(&b, l0, 1);
        assert_eq!(r.threshold, r.gap);
        assert!(!r.gap_ok);
    }

    #[test]
    fn psi_examples() {
        let b = unit_basis(63, 8);
        let e1 = psi(&b, 3, &b.modes[0]);
        assert!((e1[0] - 1.0).abs() < 1e-12 && e1[1].abs() < 1e-12 && e1[2].abs() < 1e-12);
        assert_eq!(psi_inverse(&b, &[0.0, 0.0, 0.0]).norm(), 0.0);
        let p = [0.3, -1.2, 0.7];
        let u = psi_inverse(&b, &p);
        let back = psi(&b, 3, &u);
        for (a, c) in back.iter().zip(&p) {
            assert!((a - c).abs() < 1e-12);
        }
        let euclid = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((u.norm() - euclid).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        let b0 = unit_basis(127, 4);
        assert!(alpha(&Diffeomorphism::identity(), &b0, &b0, 2) < 1e-10);
        let h1 = Diffeomorphism::new(Family::Affine, 0.1).unwrap();
        let bh = SpectralBasis::for_domain(&h1, 127, 4).unwrap();
        let a1 = alpha(&h1, &b0, &bh, 1);
        assert_relative_eq!(a1, 1.1_f64.sqrt() - 1.0, epsilon = 1e-10);
        let h2 = Diffeomorphism::new(Family::Affine, 0.05).unwrap();
        let bh2 = SpectralBasis::for_domain(&h2, 127, 4).unwrap();
        assert!(alpha(&h2, &b0, &bh2, 1) < a1);
    }

    #[test]
    fn gamma_examples() {
        let b0 = unit_basis(31, 2);
        assert_eq!(gamma(&b0, &b0, 2, 1.0), 0.0);
        let mut bh = b0.clone();
        let mut bref = b0.clone();
        bref.lambdas[0] = PI * PI;
        bh.lambdas[0] = PI * PI / 1.21;
        let expect = (PI * PI).exp() - (PI * PI / 1.21).exp();
        assert_relative_eq!(gamma(&bref, &bh, 1, 1.0), expect, max_relative = 1e-12);
        assert_relative_eq!(expect, 1.5847e4, max_relative = 1e-4);
        assert!(gamma(&bref, &bh, 1, 0.5) <= gamma(&bref, &bh, 1, 1.0));
    }

    #[test]
    fn j_norm_estimate_affine() {
        let b0 = unit_basis(127, 5);
        let mut prev = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let h = Diffeomorphism::new(Family::Affine, eps).unwrap();
            let target = Grid::on_image(&h, 127).unwrap();
            let est = j_norm_estimate(&h, &b0, &target, 5);
            assert!((est - (1.0 + eps).sqrt()).abs() < 1e-2);
            assert!(est < prev && est < 2.0 && est > 1.0);
            prev = est;
        }
    }

    #[test]
    fn basis_csv_layout() {
        let b = unit_basis(3, 2);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "i,lambda,node_1,node_2,node_3");
        assert!(lines.next().unwrap().starts_with("1,9.37258"));
    }
}
