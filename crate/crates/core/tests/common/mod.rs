#![allow(dead_code)]

use imlab::ghdist::FiniteMetricSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SEED: u64 = 20_240_601;

/// 20 seeded random planar spaces of 1 to 5 points.
pub fn random_spaces() -> Vec<FiniteMetricSpace> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    (0..20)
        .map(|_| {
            let n = rng.gen_range(1..=5);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            FiniteMetricSpace::from_points(&points).unwrap()
        })
        .collect()
}

pub fn handcrafted_spaces() -> Vec<FiniteMetricSpace> {
    let line = |xs: &[f64]| FiniteMetricSpace::from_line(xs).unwrap();
    let s3 = 3f64.sqrt() / 2.0;
    vec![
        line(&[0.0, 1.0]),
        line(&[0.0, 1.4]),
        FiniteMetricSpace::from_points(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, s3]]).unwrap(),
        FiniteMetricSpace::from_points(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap(),
        line(&[0.0, 0.0, 0.5, 2.0, 2.5]),
    ]
}

pub fn corpus() -> Vec<FiniteMetricSpace> {
    let mut all = random_spaces();
    all.extend(handcrafted_spaces());
    all
}

/// Witness maps that a heuristic might propose: index folding, nearest
/// neighbour by distance-to-first-point profile, and seeded random maps.
pub fn heuristic_maps(x: &FiniteMetricSpace, y: &FiniteMetricSpace, seed: u64) -> Vec<Vec<usize>> {
    let (nx, ny) = (x.len(), y.len());
    let mut maps = vec![(0..nx).map(|k| k % ny).collect::<Vec<_>>(), vec![0; nx]];
    let profile: Vec<usize> = (0..nx)
        .map(|a| {
            (0..ny)
                .min_by(|&b, &c| {
                    let db = (x.d(a, 0) - y.d(b, 0)).abs();
                    let dc = (x.d(a, 0) - y.d(c, 0)).abs();
                    db.total_cmp(&dc)
                })
                .unwrap()
        })
        .collect();
    maps.push(profile);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..4 {
        maps.push((0..nx).map(|_| rng.gen_range(0..ny)).collect());
    }
    maps
}
