//! Quadrature rules on triangles in barycentric form.
//!
//! Weights are normalised to sum to one; callers scale by the element area.
//! Low orders use classical symmetric rules. Degree 9 uses the 19-point
//! symmetric rule (all points interior, all weights positive). Anything
//! above that falls back to a collapsed (Duffy) Gauss–Legendre product rule,
//! which is exact to any requested degree and keeps every point strictly
//! inside the triangle.

use std::sync::OnceLock;

/// Highest degree served from the precomputed cache.
pub const MAX_CACHED_DEGREE: usize = 21;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub degree_exact: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    fn from_orbits(degree_exact: usize, orbits: &[(Orbit, f64)]) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(orbit, w) in orbits {
            for p in orbit.expand() {
                points.push(p);
                weights.push(w);
            }
        }
        Self { degree_exact, points, weights }
    }

    /// Collapsed Gauss–Legendre rule exact for polynomials of total degree
    /// `degree`.
    pub fn collapsed_gauss(degree: usize) -> Self {
        // the Duffy Jacobian adds one degree in the collapsed direction
        let n = (degree + 2).div_ceil(2).max(1);
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (xi, wi) in x.iter().zip(&w) {
            let s = 0.5 * (xi + 1.0);
            for (xj, wj) in x.iter().zip(&w) {
                let t = 0.5 * (xj + 1.0);
                let px = s;
                let py = t * (1.0 - s);
                // (1/4) from interval maps, (1-s) Jacobian, 2 = 1/|ref|
                weights.push(0.5 * wi * wj * (1.0 - s));
                points.push([1.0 - px - py, px, py]);
            }
        }
        Self { degree_exact: degree, points, weights }
    }
}

#[derive(Clone, Copy)]
enum Orbit {
    Centroid,
    /// (a, a, 1-2a) and permutations.
    Pair(f64),
    /// (a, b, 1-a-b) and all six permutations.
    Full(f64, f64),
}

impl Orbit {
    fn expand(self) -> Vec<[f64; 3]> {
        match self {
            Orbit::Centroid => vec![[1.0 / 3.0; 3]],
            Orbit::Pair(a) => {
                let b = 1.0 - 2.0 * a;
                vec![[b, a, a], [a, b, a], [a, a, b]]
            }
            Orbit::Full(a, b) => {
                let c = 1.0 - a - b;
                vec![[a, b, c], [b, a, c], [a, c, b], [c, a, b], [b, c, a], [c, b, a]]
            }
        }
    }
}

fn degree1() -> QuadratureRule {
    QuadratureRule::from_orbits(1, &[(Orbit::Centroid, 1.0)])
}

fn degree2() -> QuadratureRule {
    QuadratureRule::from_orbits(2, &[(Orbit::Pair(1.0 / 6.0), 1.0 / 3.0)])
}

// 7-point rule, closed form
fn degree5() -> QuadratureRule {
    let s15 = 15f64.sqrt();
    QuadratureRule::from_orbits(
        5,
        &[
            (Orbit::Centroid, 9.0 / 40.0),
            (Orbit::Pair((6.0 - s15) / 21.0), (155.0 - s15) / 1200.0),
            (Orbit::Pair((6.0 + s15) / 21.0), (155.0 + s15) / 1200.0),
        ],
    )
}

// 19-point symmetric rule, digits refined to full double precision against
// the monomial moment equations.
fn degree9() -> QuadratureRule {
    QuadratureRule::from_orbits(
        9,
        &[
            (Orbit::Centroid, 0.097_135_796_282_798_833_819),
            (Orbit::Pair(0.489_682_519_198_737_627_78), 0.031_334_700_227_139_070_537),
            (Orbit::Pair(0.437_089_591_492_936_637_27), 0.077_827_541_004_774_279_317),
            (Orbit::Pair(0.188_203_535_619_032_730_24), 0.079_647_738_927_210_253_033),
            (Orbit::Pair(0.044_729_513_394_452_709_865), 0.025_577_675_658_698_031_262),
            (
                Orbit::Full(0.221_962_989_160_765_695_68, 0.036_838_412_054_736_283_635),
                0.043_283_539_377_289_377_289,
            ),
        ],
    )
}

fn build(degree: usize) -> QuadratureRule {
    match degree {
        0 | 1 => degree1(),
        2 => degree2(),
        3..=5 => degree5(),
        6..=9 => degree9(),
        d => QuadratureRule::collapsed_gauss(d),
    }
}

/// The cached rule exact to at least `degree`.
pub fn rule(degree: usize) -> &'static QuadratureRule {
    static RULES: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (0..=MAX_CACHED_DEGREE).map(build).collect());
    assert!(degree <= MAX_CACHED_DEGREE, "no cached rule of degree {degree}");
    &rules[degree]
}

/// The rule used for error norms and forcing integrals.
pub fn order_nine() -> &'static QuadratureRule {
    rule(9)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Exact mean of `x^i y^j` over the reference triangle (0,0),(1,0),(0,1):
/// `2 i! j! / (i+j+2)!`.
pub fn reference_moment(i: usize, j: usize) -> f64 {
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    2.0 * fact(i) * fact(j) / fact(i + j + 2)
}

/// Largest absolute moment error over all monomials of total degree `<= degree`.
pub fn moment_error(rule: &QuadratureRule, degree: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=degree {
        for j in 0..=degree - i {
            let approx: f64 = rule
                .iter()
                .map(|(p, w)| w * p[1].powi(i as i32) * p[2].powi(j as i32))
                .sum();
            worst = worst.max((approx - reference_moment(i, j)).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for d in 0..=MAX_CACHED_DEGREE {
            let s: f64 = rule(d).weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "degree {d}: {s}");
        }
    }

    #[test]
    fn moments_are_exact() {
        for d in 0..=MAX_CACHED_DEGREE {
            let r = rule(d);
            assert!(r.degree_exact >= d);
            assert!(moment_error(r, d) < 1e-14, "degree {d}: {}", moment_error(r, d));
        }
    }

    #[test]
    fn order_nine_is_the_19_point_rule() {
        let r = order_nine();
        assert_eq!(r.len(), 19);
        assert!(r.weights.iter().all(|&w| w > 0.0));
        assert!(r.points.iter().flatten().all(|&l| l > 0.0 && l < 1.0));
    }

    #[test]
    fn collapsed_points_are_interior() {
        let r = rule(11);
        assert!(r.points.iter().flatten().all(|&l| l > 0.0 && l < 1.0));
        assert!(r.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn gauss_legendre_integrates_odd_and_even() {
        let (x, w) = gauss_legendre(5);
        let int = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((int(0) - 2.0).abs() < 1e-15);
        assert!((int(8) - 2.0 / 9.0).abs() < 1e-15);
        assert!(int(7).abs() < 1e-15);
    }
}
