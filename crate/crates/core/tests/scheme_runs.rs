mod common;

use common::mesh;
use oseen_core::assembly::{assemble_load, assemble_mass, assemble_pressure_gradient, assemble_stiffness};
use oseen_core::problems::{level_norms, Convection, ManufacturedProblem, OseenProblem};
use oseen_core::scheme::{run, InitMode, Scheme, SchemeParams};

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn zero_convection_step_is_implicit_euler() {
    let m = mesh(4);
    let pb = ManufacturedProblem::with_convection(1.0, Convection::Zero);
    let dt = 0.01;
    let mut params = SchemeParams::new(2, 1, 0.0, 1.0, dt, dt);
    params.cg_tol = 1e-14;
    let scheme = Scheme::new(&m, params).unwrap();
    let s0 = scheme.initialize(&pb).unwrap();
    let (s1, _) = scheme.step(&s0, &pb).unwrap();

    let v = &scheme.spaces.velocity;
    let mass = assemble_mass(v);
    let stiff = assemble_stiffness(v, 1.0);
    let b = assemble_pressure_gradient(v, &scheme.spaces.pressure).unwrap();
    let load = assemble_load(v, |x| pb.forcing(x, dt));
    let free: Vec<usize> = (0..v.dim()).filter(|&i| !v.is_boundary_dof(i)).collect();
    let matrix: Vec<Vec<f64>> = free
        .iter()
        .map(|&i| free.iter().map(|&j| mass.get(i, j) / dt + stiff.get(i, j)).collect())
        .collect();
    for c in 0..2 {
        let mu = mass.apply_vec(&s0.u_tilde.components[c]);
        let bp = b[c].apply_vec(&s0.p_now.coefficients);
        let rhs: Vec<f64> = free.iter().map(|&i| mu[i] / dt - bp[i] + load[c][i]).collect();
        let x = dense_solve(matrix.clone(), rhs);
        for (r, &i) in free.iter().enumerate() {
            let gap = (x[r] - s1.u_tilde.components[c][i]).abs();
            assert!(gap <= 1e-12, "component {c}, dof {i}: gap {gap:e}");
        }
        for &i in v.boundary_dofs() {
            assert_eq!(s1.u_tilde.components[c][i], 0.0);
        }
    }
}

/// `‖ũ_h¹ − u(t¹)‖₀` for Scheme(2,1,0), N = 8, Δt = 1/64 from interpolated
/// initial data, recorded from a verified build.
const ONE_STEP_ERROR: f64 = 6.654_137_093_037_996e-3;

#[test]
fn one_step_regression() {
    let m = mesh(8);
    let pb = ManufacturedProblem::new(1.0);
    let dt = 1.0 / 64.0;
    let scheme = Scheme::new(&m, SchemeParams::new(2, 1, 0.0, 1.0, dt, dt)).unwrap();
    let s0 = scheme.initialize(&pb).unwrap();
    let (s1, _) = scheme.step(&s0, &pb).unwrap();
    let e = level_norms(&s1.u_tilde, &s1.p_now, &pb, dt).u_l2_error;
    println!("one-step velocity error {e:e}");
    assert!(e > 0.0 && e <= 10.0 * ONE_STEP_ERROR, "{e:e}");
}

#[test]
fn smoke_run_n8() {
    let m = mesh(8);
    let pb = ManufacturedProblem::new(1.0);
    let params = SchemeParams::new(2, 1, 0.0, 1.0, 1.0 / 64.0, 1.0);
    let out = run(&pb, &params, &m).unwrap();
    assert_eq!(out.state.n, 64);
    assert_eq!(out.diagnostics.len(), 64);
    assert!(out.violations.is_empty(), "{:?}", out.violations);
    assert!((out.state.t - 1.0).abs() <= 1e-15);
    for d in &out.diagnostics {
        assert!(d.cg_iters_s2a > 0 && d.cg_iters_s3 > 0);
        assert!(d.jac_min > 0.0 && d.u_l2.is_finite());
    }
    let r = out.report;
    for e in [r.e_linf_l2_u, r.e_l2_h10_u, r.e_l2_l2_p] {
        assert!(e.is_finite() && e > 0.0 && e < 1.0);
    }
    assert!(r.stab_seminorm.is_none());
}

#[test]
fn stability_probe() {
    let m = mesh(16);
    let pb = ManufacturedProblem::new(1e-4);
    let params = SchemeParams::new(1, 1, 0.1, 1e-4, 1.0 / 16.0, 1.0);
    let out = run(&pb, &params, &m).unwrap();
    assert_eq!(out.state.n, 16);
    assert!(out.max_u_l2 <= 10.0 * out.max_exact_u_l2, "{} vs {}", out.max_u_l2, out.max_exact_u_l2);
    assert!(out.report.stab_seminorm.unwrap().is_finite());
}

#[test]
fn stokes_projection_initial_data() {
    let m = mesh(8);
    let pb = ManufacturedProblem::new(1.0);
    let mut params = SchemeParams::new(2, 2, 1e-2, 1.0, 1.0 / 64.0, 1.0);
    let lagrange = Scheme::new(&m, params.clone()).unwrap().initialize(&pb).unwrap();
    params.init_mode = InitMode::StokesProjection;
    let stokes = Scheme::new(&m, params).unwrap().initialize(&pb).unwrap();
    let el = level_norms(&lagrange.u_tilde, &lagrange.p_now, &pb, 0.0);
    let es = level_norms(&stokes.u_tilde, &stokes.p_now, &pb, 0.0);
    assert!(es.u_l2_error <= 10.0 * el.u_l2_error, "{} vs {}", es.u_l2_error, el.u_l2_error);
    assert_eq!(stokes.p_prev.coefficients, stokes.p_now.coefficients);
    assert!(stokes.p_now.mean().abs() <= 1e-10);
}
