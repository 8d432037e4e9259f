//! Gromov–Hausdorff distances in the two-map form: between finite metric
//! spaces, by exhaustive search on small spaces, and between sampled flows
//! with linear time reparametrisations.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::semiflow::Trajectory;
use crate::{Error, Result};

/// Added to every reported `ε` because the defining inequalities are strict.
pub const STRICTNESS_MARGIN: f64 = 1e-9;
/// Largest space size accepted by [`gh_bruteforce`].
pub const BRUTEFORCE_CAP: usize = 6;
const TRIANGLE_TOL: f64 = 1e-12;

/// A finite metric space given by its distance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricSpace {
    pub labels: Vec<String>,
    dist: Vec<Vec<f64>>,
}

impl FiniteMetricSpace {
    /// Validates symmetry, zero diagonal, nonnegativity and the triangle
    /// inequality (up to `10⁻¹²` relative to the diameter).
    pub fn new(labels: Vec<String>, dist: Vec<Vec<f64>>) -> Result<Self> {
        let n = dist.len();
        if labels.len() != n || dist.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidMetric(
                "distance matrix must be square and match labels".into(),
            ));
        }
        let mut diam = 0.0_f64;
        for i in 0..n {
            if dist[i][i] != 0.0 {
                return Err(Error::InvalidMetric(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let d = dist[i][j];
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::InvalidMetric(format!(
                        "invalid distance d({i},{j}) = {d}"
                    )));
                }
                if d != dist[j][i] {
                    return Err(Error::InvalidMetric(format!("asymmetric at ({i},{j})")));
                }
                diam = diam.max(d);
            }
        }
        let tol = TRIANGLE_TOL * diam.max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if dist[i][j] > dist[i][k] + dist[k][j] + tol {
                        return Err(Error::InvalidMetric(format!(
                            "triangle inequality fails for ({i},{j}) via {k}"
                        )));
                    }
                }
            }
        }
        Ok(Self { labels, dist })
    }

    /// Euclidean distances between the given points.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dist = points
            .iter()
            .map(|a| points.iter().map(|b| euclidean(a, b)).collect())
            .collect();
        Self::new(default_labels(points.len()), dist)
    }

    /// Points on the real line.
    pub fn from_line(xs: &[f64]) -> Result<Self> {
        let points: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        Self::from_points(&points)
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i][j]
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Appends a copy of point `k` (at distance zero from it).
    pub fn with_duplicate(&self, k: usize) -> Result<Self> {
        let mut dist = self.dist.clone();
        for (i, row) in dist.iter_mut().enumerate() {
            row.push(self.dist[i][k]);
        }
        let mut last = self.dist[k].clone();
        last.push(0.0);
        dist.push(last);
        let mut labels = self.labels.clone();
        labels.push(format!("{}'", self.labels[k]));
        Self::new(labels, dist)
    }

    /// CSV with a header row of labels and one row per point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.labels)?;
        for row in &self.dist {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<metric csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let labels: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut dist = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidMetric(format!("bad entry {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            dist.push(row);
        }
        Self::new(labels, dist)
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `max_{a,b ∈ subset} |d_Y(map a, map b) - d_X(a, b)|`.
pub fn distortion(
    x: &FiniteMetricSpace,
    y: &FiniteMetricSpace,
    map: &[usize],
    subset: &[usize],
) -> f64 {
    assert_eq!(map.len(), x.len(), "map must be total on X");
    let mut worst = 0.0_f64;
    for (k, &a) in subset.iter().enumerate() {
        for &b in &subset[k + 1..] {
            worst = worst.max((y.d(map[a], map[b]) - x.d(a, b)).abs());
        }
    }
    worst
}

/// `max_{y ∈ Y} min_{x ∈ X} d_Y(map x, y)`.
pub fn covering(y: &FiniteMetricSpace, map: &[usize]) -> f64 {
    (0..y.len())
        .map(|t| map.iter().map(|&s| y.d(s, t)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn all_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Smallest admissible `ε` for a pair of maps and its components.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GHReport {
    pub eps: f64,
    pub distortion_i: f64,
    pub distortion_j: f64,
    pub cover_i: f64,
    pub cover_j: f64,
    pub map_i: Vec<usize>,
    pub map_j: Vec<usize>,
}

impl GHReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `ε` making `i: X → Y` and `j: Y → X` both `ε`-isometries with `ε`-dense
/// images.
pub fn gh_between_sets(
    x: &FiniteMetricSpace,
    y: &FiniteMetricSpace,
    i: &[usize],
    j: &[usize],
) -> GHReport {
    let distortion_i = distortion(x, y, i, &all_indices(x.len()));
    let distortion_j = distortion(y, x, j, &all_indices(y.len()));
    let cover_i = covering(y, i);
    let cover_j = covering(x, j);
    GHReport {
        eps: distortion_i.max(distortion_j).max(cover_i).max(cover_j) + STRICTNESS_MARGIN,
        distortion_i,
        distortion_j,
        cover_i,
        cover_j,
        map_i: i.to_vec(),
        map_j: j.to_vec(),
    }
}

/// Exhaustive minima over all map pairs and all correspondences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BruteForceReport {
    /// `min_{i,j} gh_between_sets(X, Y, i, j).eps`.
    pub map_based: f64,
    /// `½ min_R dis(R)` over correspondences `R ⊂ X × Y`.
    pub correspondence: f64,
    pub best: GHReport,
}

/// All maps `{0..n} → {0..k}` in lexicographic order.
fn for_each_map(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut map = vec![0usize; n];
    loop {
        visit(&map);
        let mut d = n;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            map[d] += 1;
            if map[d] < k {
                break;
            }
            map[d] = 0;
        }
    }
}

/// `argmin_i max(dis i, cover i)` over all maps `X → Y`.
fn best_one_sided(x: &FiniteMetricSpace, y: &FiniteMetricSpace) -> (f64, Vec<usize>) {
    let subset = all_indices(x.len());
    let mut best = (f64::INFINITY, Vec::new());
    for_each_map(x.len(), y.len(), |map| {
        let value = distortion(x, y, map, &subset).max(covering(y, map));
        if value < best.0 {
            best = (value, map.to_vec());
        }
    });
    best
}

/// Branch-and-bound for `min dis(R)` over correspondences. Every
/// correspondence contains one of the form `graph f ∪ graph gᵀ`, and
/// distortion is monotone under inclusion, so searching those suffices.
struct CorrespondenceSearch<'a> {
    x: &'a FiniteMetricSpace,
    y: &'a FiniteMetricSpace,
    pairs: Vec<(usize, usize)>,
    best: f64,
}

impl CorrespondenceSearch<'_> {
    fn added_distortion(&self, a: usize, b: usize) -> f64 {
        self.pairs
            .iter()
            .map(|&(p, q)| (self.x.d(a, p) - self.y.d(b, q)).abs())
            .fold(0.0, f64::max)
    }

    fn descend(&mut self, step: usize, current: f64) {
        if current >= self.best {
            return;
        }
        let (nx, ny) = (self.x.len(), self.y.len());
        if step == nx + ny {
            self.best = current;
            return;
        }
        let choices: Vec<(usize, usize)> = if step < nx {
            (0..ny).map(|b| (step, b)).collect()
        } else {
            (0..nx).map(|a| (a, step - nx)).collect()
        };
        let mut scored: Vec<(f64, (usize, usize))> = choices
            .into_iter()
            .map(|(a, b)| (current.max(self.added_distortion(a, b)), (a, b)))
            .collect();
        scored.sort_by(|l, r| l.0.total_cmp(&r.0));
        for (value, pair) in scored {
            self.pairs.push(pair);
            self.descend(step + 1, value);
            self.pairs.pop();
        }
    }
}

fn correspondence_value(x: &FiniteMetricSpace, y: &FiniteMetricSpace) -> f64 {
    let mut search = CorrespondenceSearch {
        x,
        y,
        pairs: Vec::new(),
        best: f64::INFINITY,
    };
    search.descend(0, 0.0);
    0.5 * search.best
}

/// Exact map-based distance (and the classical correspondence value) for
/// spaces of at most [`BRUTEFORCE_CAP`] points.
pub fn gh_bruteforce(x: &FiniteMetricSpace, y: &FiniteMetricSpace) -> Result<BruteForceReport> {
    if x.len() > BRUTEFORCE_CAP || y.len() > BRUTEFORCE_CAP || x.is_empty() || y.is_empty() {
        return Err(Error::EnumerationCap {
            x: x.len(),
            y: y.len(),
            cap: BRUTEFORCE_CAP,
        });
    }
    // The objective splits into independent minimisations over i and j.
    let (_, i) = best_one_sided(x, y);
    let (_, j) = best_one_sided(y, x);
    let best = gh_between_sets(x, y, &i, &j);
    Ok(BruteForceReport {
        map_based: best.eps,
        correspondence: correspondence_value(x, y),
        best,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReparamKind {
    Identity,
    Linear,
}

/// A time reparametrisation `α(x, t) = c·t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Reparam {
    pub kind: ReparamKind,
    pub c: f64,
}

impl Reparam {
    pub fn identity() -> Self {
        Self {
            kind: ReparamKind::Identity,
            c: 1.0,
        }
    }

    pub fn linear(c: f64) -> Self {
        if c == 1.0 {
            Self::identity()
        } else {
            Self {
                kind: ReparamKind::Linear,
                c,
            }
        }
    }

    /// `|c - 1| < ε`.
    pub fn admissible(&self, eps: f64) -> bool {
        (self.c - 1.0).abs() < eps
    }
}

/// Candidate slopes, optionally refined by golden-section search between the
/// neighbours of the best grid value.
#[derive(Clone, Debug, PartialEq)]
pub struct ReparamSearch {
    pub grid: Vec<Reparam>,
    pub refine: bool,
}

pub const REPARAM_GRID_LEN: usize = 21;
pub const REPARAM_MIN: f64 = 0.8;
pub const REPARAM_MAX: f64 = 1.25;
const GOLDEN_ITERATIONS: usize = 40;

impl ReparamSearch {
    /// 21 geometrically spaced slopes in `[0.8, 1.25]`, including `1`.
    pub fn geometric() -> Self {
        let ratio = REPARAM_MAX / REPARAM_MIN;
        let last = (REPARAM_GRID_LEN - 1) as f64;
        let grid = (0..REPARAM_GRID_LEN)
            .map(|k| {
                if 2 * k == REPARAM_GRID_LEN - 1 {
                    Reparam::identity()
                } else {
                    Reparam::linear(REPARAM_MIN * ratio.powf(k as f64 / last))
                }
            })
            .collect();
        Self {
            grid,
            refine: false,
        }
    }

    pub fn identity_only() -> Self {
        Self {
            grid: vec![Reparam::identity()],
            refine: false,
        }
    }

    pub fn refined(mut self) -> Self {
        self.refine = true;
        self
    }

    pub fn c_max(&self) -> f64 {
        self.grid.iter().map(|r| r.c).fold(1.0, f64::max)
    }

    fn sorted_slopes(&self) -> Vec<f64> {
        let mut cs: Vec<f64> = self.grid.iter().map(|r| r.c).collect();
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        cs
    }

    /// Minimiser of `cost` over the grid, then refined if enabled.
    fn minimise(&self, cost: impl Fn(f64) -> f64) -> (f64, f64) {
        let cs = self.sorted_slopes();
        let values: Vec<f64> = cs.iter().map(|&c| cost(c)).collect();
        let (k, &best) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("empty reparam grid");
        let mut best = (cs[k], best);
        if self.refine && cs.len() > 1 {
            let lo = cs[k.saturating_sub(1)];
            let hi = cs[(k + 1).min(cs.len() - 1)];
            let c = golden_section(&cost, lo, hi);
            let value = cost(c);
            if value < best.1 {
                best = (c, value);
            }
        }
        best
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Isometric embedding of state coordinates into Euclidean space.
pub trait Embedding: Sync {
    fn embed(&self, coords: &[f64]) -> Vec<f64>;
}

/// The identity embedding of `ℝ^d`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Coordinates;

impl Embedding for Coordinates {
    fn embed(&self, coords: &[f64]) -> Vec<f64> {
        coords.to_vec()
    }
}

/// A flow restricted to finitely many base points: one dense path per point,
/// covering at least `[-c_max T, c_max T]`, and a symmetric time grid on
/// `[-T, T]`.
pub struct FlowSample<'a> {
    pub embedding: &'a dyn Embedding,
    pub coords: Vec<Vec<f64>>,
    pub space: FiniteMetricSpace,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub paths: Vec<Trajectory>,
}

impl<'a> FlowSample<'a> {
    /// `n_times` must be odd so that `t = 0` is on the grid.
    pub fn new(
        embedding: &'a dyn Embedding,
        paths: Vec<Trajectory>,
        horizon: f64,
        n_times: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) || n_times < 3 || n_times.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "flow sample needs T > 0 and an odd time count >= 3 (got {horizon}, {n_times})"
            )));
        }
        let coords: Vec<Vec<f64>> = paths.iter().map(|p| p.sample(0.0)).collect();
        let embedded: Vec<Vec<f64>> = coords.iter().map(|c| embedding.embed(c)).collect();
        let space = FiniteMetricSpace::from_points(&embedded)?;
        let half = (n_times / 2) as f64;
        let times = (0..n_times)
            .map(|k| horizon * (k as f64 - half) / half)
            .collect();
        Ok(Self {
            embedding,
            coords,
            space,
            horizon,
            times,
            paths,
        })
    }

    /// A flow with `S(x, t) = x` on `[-span, span]`.
    pub fn frozen(
        embedding: &'a dyn Embedding,
        coords: &[Vec<f64>],
        horizon: f64,
        span: f64,
        n_times: usize,
    ) -> Result<Self> {
        let paths = coords
            .iter()
            .map(|c| Trajectory {
                times: vec![-span, span],
                states: vec![c.clone(), c.clone()],
                rates: None,
            })
            .collect();
        Self::new(embedding, paths, horizon, n_times)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn covers(&self, span: f64) -> bool {
        self.paths.iter().all(|p| {
            p.times.first().is_some_and(|t| *t <= -span * (1.0 - 1e-12))
                && p.times.last().is_some_and(|t| *t >= span * (1.0 - 1e-12))
        })
    }
}

/// Flow-level distance with its components and the accepted slopes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowGHReport {
    pub eps: f64,
    pub set: GHReport,
    /// `max_x min_c sup_t d_Y(i S₁(x, c t), S₂(i x, t))`.
    pub deviation_i: f64,
    pub deviation_j: f64,
    /// The same deviations with the identity reparametrisation.
    pub identity_deviation_i: f64,
    pub identity_deviation_j: f64,
    pub slopes_i: Vec<f64>,
    pub slopes_j: Vec<f64>,
    /// Every accepted slope satisfies `|c - 1| < eps`.
    pub admissible: bool,
}

/// Per-point best slope and deviation of `map(S_from(x, c t))` against
/// `S_to(map x, t)`, measured in the target embedding. On the orbit of `x`
/// the witness is the coordinate translation carrying `x` to `map x`; for
/// matched samples this is the identity on coordinates.
fn directed_deviation(
    from: &FlowSample,
    to: &FlowSample,
    map: &[usize],
    search: &ReparamSearch,
) -> (Vec<f64>, Vec<f64>, f64) {
    let per_point: Vec<(f64, f64, f64)> = (0..from.len())
        .into_par_iter()
        .map(|x| {
            let target: Vec<Vec<f64>> = to
                .times
                .iter()
                .map(|&t| to.embedding.embed(&to.paths[map[x]].sample(t)))
                .collect();
            let shift: Vec<f64> = to.coords[map[x]]
                .iter()
                .zip(&from.coords[x])
                .map(|(a, b)| a - b)
                .collect();
            let cost = |c: f64| {
                from.times
                    .iter()
                    .zip(&target)
                    .map(|(&t, y)| {
                        let mut state = from.paths[x].sample(c * t);
                        state.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
                        euclidean(&to.embedding.embed(&state), y)
                    })
                    .fold(0.0, f64::max)
            };
            let (c, value) = search.minimise(cost);
            (c, value, cost(1.0))
        })
        .collect();
    let slopes = per_point.iter().map(|p| p.0).collect();
    let values = per_point.iter().map(|p| p.1).collect();
    let identity = per_point.iter().map(|p| p.2).fold(0.0, f64::max);
    (slopes, values, identity)
}

/// `ε` for which `(i, j)` witness the sampled flows being `ε`-close on
/// `[-T, T]`, searching slopes per point.
pub fn flow_gh_distance(
    s1: &FlowSample,
    s2: &FlowSample,
    i: &[usize],
    j: &[usize],
    search: &ReparamSearch,
) -> Result<FlowGHReport> {
    if s1.times != s2.times {
        return Err(Error::Precondition(
            "flow samples must share the time grid".into(),
        ));
    }
    let span = s1.horizon * search.c_max();
    if !s1.covers(span) || !s2.covers(span) {
        return Err(Error::Precondition(format!(
            "paths must cover [-{span}, {span}]"
        )));
    }
    let set = gh_between_sets(&s1.space, &s2.space, i, j);
    let (slopes_i, dev_i, identity_i) = directed_deviation(s1, s2, i, search);
    let (slopes_j, dev_j, identity_j) = directed_deviation(s2, s1, j, search);
    let deviation_i = dev_i.iter().copied().fold(0.0, f64::max);
    let deviation_j = dev_j.iter().copied().fold(0.0, f64::max);
    let eps = set
        .eps
        .max(deviation_i + STRICTNESS_MARGIN)
        .max(deviation_j + STRICTNESS_MARGIN);
    let admissible = slopes_i
        .iter()
        .chain(&slopes_j)
        .all(|&c| Reparam::linear(c).admissible(eps));
    Ok(FlowGHReport {
        eps,
        set,
        deviation_i,
        deviation_j,
        identity_deviation_i: identity_i,
        identity_deviation_j: identity_j,
        slopes_i,
        slopes_j,
        admissible,
    })
}
