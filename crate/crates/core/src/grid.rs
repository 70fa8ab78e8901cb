//! Deterministic sampling grids and seeded random direction generators.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Golden-angle spiral on the unit 2-sphere. Deterministic, roughly
/// equal-area; suitable both as a scan grid and as an equal-weight
/// quadrature rule with weight `4*pi/n` per node.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    assert!(n > 0);
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// `n` uniform angles on the circle, starting at 0. With the weight
/// `2*pi/n` this is the trapezoidal rule for periodic integrands.
pub fn circle_angles(n: usize) -> Vec<f64> {
    let step = std::f64::consts::TAU / n as f64;
    (0..n).map(|j| j as f64 * step).collect()
}

/// Unit circle directions in the plane.
pub fn circle_directions(n: usize) -> Vec<[f64; 2]> {
    circle_angles(n)
        .into_iter()
        .map(|t| [t.cos(), t.sin()])
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded uniform directions on the unit sphere of `R^dim`.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Grid of unit directions for a body of the given dimension: structured
/// where we have a structured rule, seeded-random in dimension 4.
pub fn unit_grid(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        2 => circle_directions(n).into_iter().map(|d| d.to_vec()).collect(),
        3 => fibonacci_sphere(n)
            .into_iter()
            .map(|v| vec![v.x, v.y, v.z])
            .collect(),
        _ => random_directions(dim, n, seed),
    }
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_nodes_are_unit() {
        for p in fibonacci_sphere(257) {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_quadrature_integrates_z_squared() {
        // int z^2 over S^2 = 4*pi/3
        let n = 4096;
        let w = 4.0 * std::f64::consts::PI / n as f64;
        let s: f64 = fibonacci_sphere(n).iter().map(|p| p.z * p.z * w).sum();
        assert!((s - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-3);
    }

    #[test]
    fn seeded_directions_are_reproducible() {
        assert_eq!(random_directions(4, 8, 7), random_directions(4, 8, 7));
    }
}
