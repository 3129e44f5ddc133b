//! Structural check suite, independent of any published error values.
//!
//! Every check builds its own small problem, so the suite runs standalone
//! (the `verify` subcommand) and in the test suite.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use crate::assembly::{assemble_mass, assemble_stabilization, assemble_stiffness};
use crate::characteristics::{build_linearized_velocity, clip_element, integrate_composed_term, ComposedIntegration};
use crate::fe_space::{build_space, interpolate_vector, shape_values, Constraint};
use crate::linalg::{cg_solve, norm, CgOptions, DeflationVector, SparseSym};
use crate::mesh::{build_unit_square_mesh, TriMesh};
use crate::problems::{ManufacturedProblem, OseenProblem, ZeroProblem};
use crate::quadrature::{moment_error, rule, MAX_CACHED_DEGREE};
use crate::scheme::{run, SchemeParams};
use crate::Result;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        outcome("matrix symmetry and semi-definiteness", symmetry_and_spsd()),
        outcome("stabilization kernel dimensions", stabilization_kernels()),
        outcome("partition of unity", partition_of_unity()),
        outcome("quadrature moments", quadrature_moments()),
        outcome("deflated CG constraint", deflated_cg()),
        outcome("zero-data fixed point", zero_fixed_point()),
        outcome("clipping area conservation", clipping_area()),
    ]
}

fn mesh(n: usize) -> Result<Arc<TriMesh>> {
    Ok(Arc::new(build_unit_square_mesh(n)?))
}

fn dense(a: &SparseSym) -> Vec<Vec<f64>> {
    let n = a.n();
    let mut d = vec![vec![0.0; n]; n];
    for (i, j, v) in a.csr().entries() {
        d[i][j] = v;
    }
    d
}

/// Numerical rank by Gaussian elimination with full pivoting, with pivots
/// below `rel_tol·max|a_ij|` counted as zero.
fn rank(mut a: Vec<Vec<f64>>, rel_tol: f64) -> usize {
    let n = a.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut r = 0;
    for step in 0..n {
        let (mut pi, mut pj, mut best) = (step, step, 0.0);
        for (i, row) in a.iter().enumerate().skip(step) {
            for (j, v) in row.iter().enumerate().skip(step) {
                if v.abs() > best {
                    (pi, pj, best) = (i, j, v.abs());
                }
            }
        }
        if best <= rel_tol * scale {
            break;
        }
        a.swap(step, pi);
        for row in a.iter_mut() {
            row.swap(step, pj);
        }
        let pivot_row = a[step].clone();
        for row in a.iter_mut().skip(step + 1) {
            let f = row[step] / pivot_row[step];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row).skip(step) {
                    *v -= f * p;
                }
            }
        }
        r += 1;
    }
    r
}

fn symmetry_and_spsd() -> Result<(bool, String)> {
    let m = mesh(4)?;
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut count = 0;
    for degree in [1, 2] {
        let space = build_space(&m, degree, Constraint::None)?;
        let mut mats = vec![assemble_mass(&space), assemble_stiffness(&space, 1.0)];
        for k in 1..=degree {
            mats.push(assemble_stabilization(&space, k)?);
        }
        for a in &mats {
            // `SparseSym` construction already rejects asymmetry; re-check.
            SparseSym::new(a.csr().clone())?;
            for _ in 0..20 {
                let x: Vec<f64> = (0..a.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let q = a.quadratic_form(&x);
                let size: f64 = a.csr().entries().map(|(i, j, v)| (v * x[i] * x[j]).abs()).sum();
                worst = worst.min(q / size.max(f64::MIN_POSITIVE));
                count += 1;
            }
        }
        // mass is definite
        let mass = &mats[0];
        for _ in 0..20 {
            let x: Vec<f64> = (0..mass.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
            if mass.quadratic_form(&x) <= 0.0 {
                return Ok((false, "mass matrix not positive definite".into()));
            }
        }
    }
    Ok((worst >= -1e-13, format!("{count} quadratic forms, worst relative value {worst:e}")))
}

fn stabilization_kernels() -> Result<(bool, String)> {
    let m = mesh(3)?;
    let p1 = build_space(&m, 1, Constraint::None)?;
    let p2 = build_space(&m, 2, Constraint::None)?;
    let kernel = |a: &SparseSym| a.n() - rank(dense(a), 1e-10);
    let k11 = kernel(&assemble_stabilization(&p1, 1)?);
    let k21 = kernel(&assemble_stabilization(&p2, 1)?);
    let k22 = kernel(&assemble_stabilization(&p2, 2)?);
    let nv = m.num_vertices();
    let ok = k11 == 1 && k21 == 1 && k22 == nv;
    Ok((
        ok,
        format!("dim ker: P1 first-order {k11} (want 1), P2 first-order {k21} (want 1), P2 second-order {k22} (want {nv})"),
    ))
}

fn partition_of_unity() -> Result<(bool, String)> {
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for degree in [1, 2] {
        let mut out = [0.0; 6];
        for _ in 0..200 {
            let a: f64 = rng.random();
            let b: f64 = rng.random::<f64>() * (1.0 - a);
            shape_values(degree, [a, b, 1.0 - a - b], &mut out);
            let n = if degree == 1 { 3 } else { 6 };
            worst = worst.max((out[..n].iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok((worst <= 1e-14, format!("max |Σφ − 1| = {worst:e}")))
}

fn quadrature_moments() -> Result<(bool, String)> {
    let worst = (1..=MAX_CACHED_DEGREE)
        .map(|d| moment_error(rule(d), d))
        .fold(0.0f64, f64::max);
    Ok((worst <= 1e-14, format!("degrees 1..={MAX_CACHED_DEGREE}, worst moment error {worst:e}")))
}

fn deflated_cg() -> Result<(bool, String)> {
    let m = mesh(8)?;
    let q = build_space(&m, 2, Constraint::ZeroMean)?;
    let a = assemble_stiffness(&q, 1.0);
    let defl = DeflationVector::new(q.dof_integrals().to_vec());
    let mut rng = StdRng::seed_from_u64(3);
    let b: Vec<f64> = (0..a.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = cg_solve(&a, &b, &CgOptions { deflate: Some(&defl), ..Default::default() })?;
    let c = defl.constraint_value(&out.x).abs() / norm(&out.x);
    Ok((c <= 1e-12, format!("{} iterations, |mᵀx|/‖x‖ = {c:e}", out.iterations)))
}

fn zero_fixed_point() -> Result<(bool, String)> {
    let m = mesh(4)?;
    let mut ok = true;
    for (k, l, d) in [(2, 1, 0.0), (2, 2, 0.01), (1, 1, 0.1)] {
        let out = run(&ZeroProblem { nu: 1.0 }, &SchemeParams::new(k, l, d, 1.0, 1.0 / 16.0, 0.25), &m)?;
        ok &= out.state.u_tilde.components.iter().flatten().all(|&v| v == 0.0);
        ok &= out.state.p_now.coefficients.iter().all(|&v| v == 0.0);
    }
    Ok((ok, "three schemes, four steps each".into()))
}

fn clipping_area() -> Result<(bool, String)> {
    let m = mesh(8)?;
    let p1 = build_space(&m, 1, Constraint::ZeroBoundary)?;
    let v = build_space(&m, 2, Constraint::ZeroBoundary)?;
    let pb = ManufacturedProblem::new(1.0);
    let dt = 1.0 / 64.0;
    let mut worst = 0.0f64;
    for t in [0.0, 0.3] {
        let wh = build_linearized_velocity(|x, t| pb.convecting_velocity(x, t), t, &p1)?;
        for tri in 0..m.num_triangles() {
            let pieces: f64 = clip_element(&wh, dt, tri).iter().map(|c| c.area()).sum();
            let image = m.area(tri) * wh.jacobian(tri, dt);
            worst = worst.max((pieces - image).abs() / image);
        }
        let field = interpolate_vector(&v, |x, t| pb.velocity(x, t), t)?;
        let term = integrate_composed_term(&field, &wh, dt, ComposedIntegration::Exact)?;
        worst = worst.max((term.mapped_area - 1.0).abs());
    }
    Ok((worst <= 1e-12, format!("worst relative area defect {worst:e}")))
}
