#![allow(dead_code)]

use std::sync::Arc;

use oseen_core::characteristics::{build_linearized_velocity, LinearizedVelocity};
use oseen_core::fe_space::{eval_basis, ScalarSpace, VectorField};
use oseen_core::mesh::{build_unit_square_mesh, TriMesh};
use oseen_core::problems::{ManufacturedProblem, OseenProblem};
use oseen_core::quadrature;
use oseen_core::Point;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

pub fn mesh(n: usize) -> Arc<TriMesh> {
    Arc::new(build_unit_square_mesh(n).unwrap())
}

pub fn manufactured_w(t: f64, p1: &Arc<ScalarSpace>) -> LinearizedVelocity {
    let pb = ManufacturedProblem::new(1.0);
    build_linearized_velocity(|x, t| pb.convecting_velocity(x, t), t, p1).unwrap()
}

/// Random coefficients in [-1, 1], zero on boundary DOFs.
pub fn random_field(space: &Arc<ScalarSpace>, seed: u64) -> VectorField {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut f = VectorField::zeros(space);
    for c in 0..2 {
        for i in 0..space.dim() {
            if !space.is_boundary_dof(i) {
                f.components[c][i] = rng.random_range(-1.0..1.0);
            }
        }
    }
    f
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clips a convex polygon against a counter-clockwise triangle.
fn clip(subject: Vec<Point>, tri: [Point; 3]) -> Vec<Point> {
    let mut out = subject;
    for e in 0..3 {
        let (a, b) = (tri[e], tri[(e + 1) % 3]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        for i in 0..input.len() {
            let p = input[i];
            let q = input[(i + 1) % input.len()];
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let s = sp / (sp - sq);
                out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
            }
        }
    }
    out
}

fn bary(tri: [Point; 3], y: Point) -> [f64; 3] {
    let d = cross(tri[0], tri[1], tri[2]);
    let l1 = cross(y, tri[1], tri[2]) / d;
    let l2 = cross(tri[0], y, tri[2]) / d;
    [l1, l2, 1.0 - l1 - l2]
}

/// `∫_Ω (field ∘ X₁)·φ_i` by brute force: every source element is clipped
/// against every image triangle, and each piece is integrated with an
/// order-11 rule, evaluating the field and the test functions pointwise.
pub fn composed_oracle(field: &VectorField, wh: &LinearizedVelocity, dt: f64) -> [Vec<f64>; 2] {
    let space = &field.space;
    let mesh = space.mesh();
    let rule = quadrature::rule(11);
    let mut out = [vec![0.0; space.dim()], vec![0.0; space.dim()]];
    for k in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(k);
        let vs = mesh.triangles()[k];
        let image: [Point; 3] = std::array::from_fn(|i| {
            let w = [wh.field.components[0][vs[i]], wh.field.components[1][vs[i]]];
            [p[i][0] - dt * w[0], p[i][1] - dt * w[1]]
        });
        let jac = cross(image[0], image[1], image[2]) / cross(p[0], p[1], p[2]);
        assert!(jac > 0.0);
        let dofs = space.element_dofs(k);
        for src in 0..mesh.num_triangles() {
            let poly = clip(mesh.triangle_points(src).to_vec(), image);
            if poly.len() < 3 {
                continue;
            }
            for i in 1..poly.len() - 1 {
                let sub = [poly[0], poly[i], poly[i + 1]];
                let area = 0.5 * cross(sub[0], sub[1], sub[2]);
                if area <= 0.0 {
                    continue;
                }
                for (l, w) in rule.iter() {
                    let y = [
                        l[0] * sub[0][0] + l[1] * sub[1][0] + l[2] * sub[2][0],
                        l[0] * sub[0][1] + l[1] * sub[1][1] + l[2] * sub[2][1],
                    ];
                    let u = field.value_at(src, bary(mesh.triangle_points(src), y));
                    let basis = eval_basis(space, k, bary(image, y));
                    for (a, &dof) in dofs.iter().enumerate() {
                        for c in 0..2 {
                            out[c][dof] += w * area * u[c] * basis.values[a] / jac;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn max_relative_gap(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

/// `‖f − f_h‖₀` with the order-9 rule.
pub fn l2_error(space: &ScalarSpace, coefficients: &[f64], f: impl Fn(Point) -> f64) -> f64 {
    let mesh = space.mesh();
    let mut acc = 0.0;
    for k in 0..mesh.num_triangles() {
        let dofs = space.element_dofs(k);
        for (l, w) in quadrature::order_nine().iter() {
            let basis = eval_basis(space, k, *l);
            let uh: f64 = dofs.iter().zip(&basis.values).map(|(&d, v)| coefficients[d] * v).sum();
            acc += w * mesh.area(k) * (f(mesh.to_physical(k, *l)) - uh).powi(2);
        }
    }
    acc.sqrt()
}

pub fn eoc(hs: &[f64], es: &[f64]) -> Vec<f64> {
    (0..hs.len() - 1)
        .map(|i| (es[i] / es[i + 1]).ln() / (hs[i] / hs[i + 1]).ln())
        .collect()
}

/// Worst relative gap between the exact composed term and the brute-force
/// oracle over 10 random P2 fields and `t ∈ {0, 0.3}`, N = 8, Δt = 1/64.
pub fn random_field_gap() -> f64 {
    use oseen_core::characteristics::{integrate_composed_term, ComposedIntegration};
    use oseen_core::fe_space::{build_space, Constraint};
    let dt = 1.0 / 64.0;
    let m = mesh(8);
    let p1 = build_space(&m, 1, Constraint::ZeroBoundary).unwrap();
    let v = build_space(&m, 2, Constraint::ZeroBoundary).unwrap();
    let mut worst = 0.0f64;
    for t in [0.0, 0.3] {
        let wh = manufactured_w(t, &p1);
        for seed in 0..10 {
            let field = random_field(&v, seed);
            let exact = integrate_composed_term(&field, &wh, dt, ComposedIntegration::Exact).unwrap();
            let oracle = composed_oracle(&field, &wh, dt);
            worst = worst.max(max_relative_gap(&exact.rhs, &oracle));
        }
    }
    worst
}

/// Relative gap for a global quadratic field. The composed integrand
/// `g(x − Δt w_h(x)) φ_i(x)` is then a degree-4 polynomial on each test
/// element, so a single degree-6 rule there is exact without clipping.
pub fn quadratic_field_gap() -> f64 {
    use oseen_core::characteristics::{integrate_composed_term, ComposedIntegration};
    use oseen_core::fe_space::{build_space, interpolate_vector, Constraint};
    let dt = 1.0 / 64.0;
    let m = mesh(8);
    let p1 = build_space(&m, 1, Constraint::ZeroBoundary).unwrap();
    let v = build_space(&m, 2, Constraint::None).unwrap();
    let g = |x: Point| [1.0 + x[0] - 2.0 * x[1] + 3.0 * x[0] * x[1] - x[0] * x[0], 0.5 * x[1] * x[1] - x[0]];
    let field = interpolate_vector(&v, |x, _| g(x), 0.0).unwrap();
    let wh = manufactured_w(0.3, &p1);
    let exact = integrate_composed_term(&field, &wh, dt, ComposedIntegration::Exact).unwrap();
    let mut direct = [vec![0.0; v.dim()], vec![0.0; v.dim()]];
    for k in 0..m.num_triangles() {
        for (l, w) in quadrature::rule(6).iter() {
            let x = m.to_physical(k, *l);
            let wx = wh.field.value_at(k, *l);
            let gy = g([x[0] - dt * wx[0], x[1] - dt * wx[1]]);
            let basis = eval_basis(&v, k, *l);
            for (a, &dof) in v.element_dofs(k).iter().enumerate() {
                for c in 0..2 {
                    direct[c][dof] += w * m.area(k) * gy[c] * basis.values[a];
                }
            }
        }
    }
    max_relative_gap(&exact.rhs, &direct)
}
