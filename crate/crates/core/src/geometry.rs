//! Domains, diffeomorphisms of the reference interval, uniform grids with the
//! discrete `L²` inner product, and the pushforward `j_h(u) = u ∘ h⁻¹`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of uniform samples used for every sup over `[0, 1]`.
pub const DENSE_SAMPLES: usize = 10_001;

/// An open interval `(left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        if !(left.is_finite() && right.is_finite() && left < right) {
            return Err(Error::InvalidInterval { left, right });
        }
        Ok(Self { left, right })
    }

    /// The reference domain `Ω₀ = (0, 1)`.
    pub const fn unit() -> Self {
        Self {
            left: 0.0,
            right: 1.0,
        }
    }

    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.left && x < self.right
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `h(x) = (1 + ε) x`.
    Affine,
    /// `h(x) = x + ε x² (3 - 2x) / 2`, so `h'(x) = 1 + 3ε x (1 - x)`.
    Bump,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Affine => "affine",
            Family::Bump => "bump",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An orientation-preserving C¹ diffeomorphism of `[0, 1]` onto `[0, h(1)]`
/// drawn from one of the parameterised families. `h(0) = 0` always and
/// `epsilon = 0` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diffeomorphism {
    pub family: Family,
    pub epsilon: f64,
}

impl Diffeomorphism {
    pub fn new(family: Family, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidDiffeomorphism(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        let h = Self { family, epsilon };
        if epsilon > 0.0 {
            let min_slope = sample_unit(DENSE_SAMPLES)
                .map(|x| h.derivative(x))
                .fold(f64::INFINITY, f64::min);
            if !(min_slope > 0.0) {
                return Err(Error::InvalidDiffeomorphism(format!(
                    "{family} with epsilon {epsilon} has min h' = {min_slope}"
                )));
            }
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Self {
            family: Family::Affine,
            epsilon: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.epsilon == 0.0
    }

    pub fn forward(&self, x: f64) -> f64 {
        let e = self.epsilon;
        if e == 0.0 {
            return x;
        }
        match self.family {
            Family::Affine => (1.0 + e) * x,
            Family::Bump => x + 0.5 * e * x * x * (3.0 - 2.0 * x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let e = self.epsilon;
        if e == 0.0 {
            return 1.0;
        }
        match self.family {
            Family::Affine => 1.0 + e,
            Family::Bump => 1.0 + 3.0 * e * x * (1.0 - x),
        }
    }

    /// `h⁻¹(y)` for `y ∈ [0, h(1)]`; outside that range `h` is extended
    /// linearly with its endpoint slopes.
    pub fn inverse(&self, y: f64) -> f64 {
        let e = self.epsilon;
        if e == 0.0 {
            return y;
        }
        match self.family {
            Family::Affine => y / (1.0 + e),
            Family::Bump => {
                let top = self.forward(1.0);
                if y <= 0.0 {
                    return y / self.derivative(0.0);
                }
                if y >= top {
                    return 1.0 + (y - top) / self.derivative(1.0);
                }
                // h is increasing and convex-concave on [0,1]; Newton from
                // the secant guess, safeguarded by bisection.
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                let mut x = y / top;
                for _ in 0..100 {
                    let r = self.forward(x) - y;
                    if r.abs() <= 1e-15 * top {
                        break;
                    }
                    if r > 0.0 {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    let step = x - r / self.derivative(x);
                    x = if step > lo && step < hi {
                        step
                    } else {
                        0.5 * (lo + hi)
                    };
                    if hi - lo <= f64::EPSILON {
                        break;
                    }
                }
                x
            }
        }
    }

    /// The perturbed domain `Ω_h = h(Ω₀)`.
    pub fn image(&self) -> Interval {
        Interval {
            left: 0.0,
            right: self.forward(1.0),
        }
    }
}

fn sample_unit(n: usize) -> impl Iterator<Item = f64> {
    let last = (n - 1) as f64;
    (0..n).map(move |k| k as f64 / last)
}

/// `sup |h - k| + sup |h' - k'|` over a dense uniform sample of `[0, 1]`.
pub fn c1_distance(h: &Diffeomorphism, k: &Diffeomorphism) -> f64 {
    let (mut value, mut slope) = (0.0_f64, 0.0_f64);
    for x in sample_unit(DENSE_SAMPLES) {
        value = value.max((h.forward(x) - k.forward(x)).abs());
        slope = slope.max((h.derivative(x) - k.derivative(x)).abs());
    }
    value + slope
}

/// Uniform grid of `n_interior` interior nodes; boundary values are zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Interval,
    pub n_interior: usize,
    pub dx: f64,
}

impl Grid {
    pub fn new(domain: Interval, n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one node".into(),
            ));
        }
        Ok(Self {
            domain,
            n_interior,
            dx: domain.length() / (n_interior + 1) as f64,
        })
    }

    /// The grid on `Ω_h` with the given node count.
    pub fn on_image(h: &Diffeomorphism, n_interior: usize) -> Result<Self> {
        Self::new(h.image(), n_interior)
    }

    pub fn len(&self) -> usize {
        self.n_interior
    }

    pub fn is_empty(&self) -> bool {
        self.n_interior == 0
    }

    pub fn node(&self, k: usize) -> f64 {
        self.domain.left + (k + 1) as f64 * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_interior).map(|k| self.node(k))
    }

    pub fn quad_weight(&self) -> f64 {
        self.dx
    }
}

/// A grid function: values at the interior nodes of `grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.n_interior,
            "grid function length does not match grid"
        );
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_interior],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &GridFunction) {
        assert_same_grid(&self.grid, &other.grid);
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    /// Piecewise-linear interpolant through the nodes and the zero boundary
    /// values, extended by zero outside the domain.
    pub fn sample(&self, x: f64) -> f64 {
        let g = &self.grid;
        let s = (x - g.domain.left) / g.dx;
        if !(s > 0.0 && s < (g.n_interior + 1) as f64) {
            return 0.0;
        }
        let cell = s.floor() as usize;
        let frac = s - cell as f64;
        let value_at = |i: usize| {
            if i == 0 || i > g.n_interior {
                0.0
            } else {
                self.values[i - 1]
            }
        };
        let a = value_at(cell);
        if frac == 0.0 {
            return a;
        }
        let b = value_at(cell + 1);
        a + frac * (b - a)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(self)
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

pub(crate) fn assert_same_grid(a: &Grid, b: &Grid) {
    assert!(a == b, "grid mismatch: {a:?} vs {b:?}");
}

/// Discrete `L²` inner product `Σ u_k v_k Δx`.
pub fn l2_inner(u: &GridFunction, v: &GridFunction) -> f64 {
    assert_same_grid(&u.grid, &v.grid);
    u.grid.dx * dot(&u.values, &v.values)
}

pub fn l2_norm(u: &GridFunction) -> f64 {
    l2_inner(u, u).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `j_h u = u ∘ h⁻¹` evaluated at the nodes of `target`.
pub fn pushforward_j(h: &Diffeomorphism, u: &GridFunction, target: &Grid) -> GridFunction {
    GridFunction::from_fn(*target, |y| u.sample(h.inverse(y)))
}

/// `‖u - v‖_{L²(ℝ)}` for the zero extensions of the piecewise-linear
/// interpolants of `u` and `v`, which may live on different domains. The
/// integral is exact: both interpolants are linear between merged breakpoints.
pub fn zero_extended_distance(u: &GridFunction, v: &GridFunction) -> f64 {
    let mut knots: Vec<f64> = Vec::with_capacity(u.grid.n_interior + v.grid.n_interior + 4);
    for g in [&u.grid, &v.grid] {
        knots.push(g.domain.left);
        knots.extend(g.nodes());
        knots.push(g.domain.right);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut acc = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = u.sample(a) - v.sample(a);
        let db = u.sample(b) - v.sample(b);
        acc += (b - a) * (da * da + da * db + db * db) / 3.0;
    }
    acc.sqrt()
}

/// `⟨u, v⟩_{L²(ℝ)}` for the zero extensions of the interpolants.
pub fn zero_extended_inner(u: &GridFunction, v: &GridFunction) -> f64 {
    let nu = zero_extended_distance(u, &GridFunction::zeros(u.grid));
    let nv = zero_extended_distance(v, &GridFunction::zeros(v.grid));
    let d = zero_extended_distance(u, v);
    0.5 * (nu * nu + nv * nv - d * d)
}
