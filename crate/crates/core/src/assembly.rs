//! Bilinear forms of the scheme and the stabilized Stokes projection.
//!
//! Element matrices are computed in parallel and merged serially in element
//! order, so the result is bit-identical to a serial loop.

use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::fe_space::{
    shape_gradients, shape_hessians, shape_values, ScalarField, ScalarSpace, VectorField, MAX_LOCAL_DOFS,
};
use crate::linalg::{
    cg_solve, cg_solve_from, dot, norm, CgOptions, CsrMatrix, DeflationVector, LinearOperator, Preconditioner,
    SparseSym,
};
use crate::quadrature::{self, QuadratureRule};
use crate::{Error, Point, Result};

type LocalMatrix = [[f64; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];

fn assemble_with<F>(rows: &ScalarSpace, cols: &ScalarSpace, local: F) -> CsrMatrix
where
    F: Fn(usize) -> LocalMatrix + Sync,
{
    let mesh = rows.mesh();
    let nt = mesh.num_triangles();
    let locals: Vec<LocalMatrix> = (0..nt).into_par_iter().map(&local).collect();
    let mut m = CsrMatrix::from_element_pattern(
        rows.dim(),
        cols.dim(),
        (0..nt).map(|t| (rows.element_dofs(t), cols.element_dofs(t))),
    );
    for (t, lm) in locals.iter().enumerate() {
        for (a, &i) in rows.element_dofs(t).iter().enumerate() {
            for (b, &j) in cols.element_dofs(t).iter().enumerate() {
                m.add(i, j, lm[a][b]);
            }
        }
    }
    m
}

fn symmetric(m: CsrMatrix) -> SparseSym {
    SparseSym::new(m).expect("element matrices are symmetric by construction")
}

/// `(φ_j, φ_i)`.
pub fn assemble_mass(space: &ScalarSpace) -> SparseSym {
    let deg = space.degree();
    let n = space.local_dofs();
    let rule = quadrature::rule(2 * deg);
    symmetric(assemble_with(space, space, |t| {
        let area = space.mesh().area(t);
        let mut lm = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
        let mut v = [0.0; MAX_LOCAL_DOFS];
        for (p, w) in rule.iter() {
            shape_values(deg, *p, &mut v);
            for a in 0..n {
                for b in 0..n {
                    lm[a][b] += w * area * v[a] * v[b];
                }
            }
        }
        lm
    }))
}

fn local_stiffness(space: &ScalarSpace, t: usize, coefficient: f64, rule: &QuadratureRule) -> LocalMatrix {
    let deg = space.degree();
    let n = space.local_dofs();
    let geo = space.mesh().geometry(t);
    let mut lm = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
    let mut g = [[0.0; 2]; MAX_LOCAL_DOFS];
    for (p, w) in rule.iter() {
        shape_gradients(deg, *p, &geo.grad_lambda, &mut g);
        let s = coefficient * w * geo.area;
        for a in 0..n {
            for b in 0..n {
                lm[a][b] += s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    lm
}

/// `coefficient · (∇φ_j, ∇φ_i)`.
pub fn assemble_stiffness(space: &ScalarSpace, coefficient: f64) -> SparseSym {
    let rule = quadrature::rule(2 * (space.degree() - 1));
    symmetric(assemble_with(space, space, |t| local_stiffness(space, t, coefficient, rule)))
}

/// Per-component coupling matrices `B_a[i][j] = ∫ (∂q_j/∂x_a) φ_i`, rows on
/// the velocity space and columns on the pressure space. `B p` realises
/// `(∇p, v)` and `Bᵀ u` realises `(u, ∇q)`.
pub fn assemble_pressure_gradient(v_space: &ScalarSpace, q_space: &ScalarSpace) -> Result<[CsrMatrix; 2]> {
    if !v_space.same_mesh(q_space) {
        return Err(Error::MeshMismatch);
    }
    let (kv, kq) = (v_space.degree(), q_space.degree());
    let (nv, nq) = (v_space.local_dofs(), q_space.local_dofs());
    let rule = quadrature::rule(kv + kq - 1);
    let build = |comp: usize| {
        assemble_with(v_space, q_space, |t| {
            let geo = v_space.mesh().geometry(t);
            let mut lm = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
            let mut v = [0.0; MAX_LOCAL_DOFS];
            let mut g = [[0.0; 2]; MAX_LOCAL_DOFS];
            for (p, w) in rule.iter() {
                shape_values(kv, *p, &mut v);
                shape_gradients(kq, *p, &geo.grad_lambda, &mut g);
                for a in 0..nv {
                    for b in 0..nq {
                        lm[a][b] += w * geo.area * v[a] * g[b][comp];
                    }
                }
            }
            lm
        })
    };
    Ok([build(0), build(1)])
}

/// Pressure stabilization `s₀(p, q) = Σ_K h_K^{2k} Σ_{|α|=k} (D^α p, D^α q)_K`
/// with derivative order `k ∈ {1, 2}`.
///
/// For `k = 2` the multi-indices are (2,0), (1,1), (0,2), each counted once.
pub fn assemble_stabilization(q_space: &ScalarSpace, k: usize) -> Result<SparseSym> {
    let mesh = q_space.mesh();
    let deg = q_space.degree();
    let n = q_space.local_dofs();
    match k {
        1 => {
            let rule = quadrature::rule(2 * (deg - 1));
            Ok(symmetric(assemble_with(q_space, q_space, |t| {
                let h = mesh.element_diameters()[t];
                local_stiffness(q_space, t, h * h, rule)
            })))
        }
        2 => Ok(symmetric(assemble_with(q_space, q_space, |t| {
            let geo = mesh.geometry(t);
            let h2 = mesh.element_diameters()[t].powi(2);
            let mut hs = [[0.0; 3]; MAX_LOCAL_DOFS];
            shape_hessians(deg, &geo.grad_lambda, &mut hs);
            let s = h2 * h2 * geo.area;
            let mut lm = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
            for a in 0..n {
                for b in 0..n {
                    lm[a][b] = s * (hs[a][0] * hs[b][0] + hs[a][1] * hs[b][1] + hs[a][2] * hs[b][2]);
                }
            }
            lm
        }))),
        _ => Err(Error::UnsupportedDegree(k)),
    }
}

/// `(f, φ_i)` for a vector-valued `f`, integrated with the order-9 rule.
pub fn assemble_load(space: &ScalarSpace, f: impl Fn(Point) -> [f64; 2] + Sync) -> [Vec<f64>; 2] {
    let mesh = space.mesh();
    let deg = space.degree();
    let n = space.local_dofs();
    let rule = quadrature::order_nine();
    let locals: Vec<[[f64; MAX_LOCAL_DOFS]; 2]> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let area = mesh.area(t);
            let mut out = [[0.0; MAX_LOCAL_DOFS]; 2];
            let mut v = [0.0; MAX_LOCAL_DOFS];
            for (p, w) in rule.iter() {
                shape_values(deg, *p, &mut v);
                let fx = f(mesh.to_physical(t, *p));
                for a in 0..n {
                    out[0][a] += w * area * fx[0] * v[a];
                    out[1][a] += w * area * fx[1] * v[a];
                }
            }
            out
        })
        .collect();
    let mut rhs = [vec![0.0; space.dim()], vec![0.0; space.dim()]];
    for (t, l) in locals.iter().enumerate() {
        for (a, &d) in space.element_dofs(t).iter().enumerate() {
            rhs[0][d] += l[0][a];
            rhs[1][d] += l[1][a];
        }
    }
    rhs
}

/// Closed-form data for the Stokes projection.
pub trait StokesData: Sync {
    /// Rows are components, columns derivative directions.
    fn velocity_gradient(&self, x: Point) -> [[f64; 2]; 2];
    fn pressure_gradient(&self, x: Point) -> [f64; 2];
}

/// The zero pair `(u*, p*) = (0, 0)`.
pub struct ZeroStokesData;

impl StokesData for ZeroStokesData {
    fn velocity_gradient(&self, _: Point) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }

    fn pressure_gradient(&self, _: Point) -> [f64; 2] {
        [0.0; 2]
    }
}

#[derive(Clone, Debug)]
pub struct StokesProjection {
    pub velocity: VectorField,
    pub pressure: ScalarField,
    /// Relative residual of the assembled block system.
    pub residual: f64,
    pub outer_iterations: usize,
}

/// Inner solves of the Schur complement are run this tightly so the outer
/// iteration sees an (almost) exact operator.
const INNER_TOL: f64 = 1e-13;

struct SchurComplement<'a> {
    velocity_block: &'a SparseSym,
    coupling: &'a [CsrMatrix; 2],
    stabilization: Option<&'a SparseSym>,
    failure: Mutex<Option<Error>>,
}

impl SchurComplement<'_> {
    fn solve_velocity(&self, rhs: &[f64]) -> Vec<f64> {
        let opts = CgOptions { tol: INNER_TOL, ..Default::default() };
        match cg_solve(self.velocity_block, rhs, &opts) {
            Ok(out) => out.x,
            Err(e) => {
                self.failure.lock().unwrap().get_or_insert(e);
                vec![0.0; rhs.len()]
            }
        }
    }
}

impl LinearOperator for SchurComplement<'_> {
    fn dim(&self) -> usize {
        self.coupling[0].ncols()
    }

    fn apply(&self, p: &[f64], y: &mut [f64]) {
        match self.stabilization {
            Some(c) => c.apply(p, y),
            None => y.fill(0.0),
        }
        for b in self.coupling {
            let u = self.solve_velocity(&b.apply_vec(p));
            let bt = b.transpose_apply_vec(&u);
            y.iter_mut().zip(bt).for_each(|(y, v)| *y += v);
        }
    }
}

/// Solves the stabilized Stokes system
///
/// ```text
/// a(u_h, v) − (p_h, ∇·v)          = a(u*, v) − (p*, ∇·v)   ∀v ∈ V_h
/// −(∇·u_h, q) − δ₀ s₀(p_h, q)     = −(∇·u*, q)             ∀q ∈ Q_h
/// ```
///
/// by CG on the pressure Schur complement. Right-hand sides use the order-9
/// rule. `v_space` must carry the zero-boundary constraint.
pub fn solve_stokes_projection(
    data: &dyn StokesData,
    v_space: &Arc<ScalarSpace>,
    q_space: &Arc<ScalarSpace>,
    nu: f64,
    delta0: f64,
    tol: f64,
) -> Result<StokesProjection> {
    if nu <= 0.0 {
        return Err(Error::InvalidParams(format!("viscosity must be positive, got {nu}")));
    }
    if delta0 < 0.0 {
        return Err(Error::InvalidParams(format!("delta0 must be non-negative, got {delta0}")));
    }
    let vmap = v_space.dof_map();
    let qmap = q_space.dof_map();
    let stiffness = assemble_stiffness(v_space, nu).restrict(&vmap);
    let full_b = assemble_pressure_gradient(v_space, q_space)?;
    let b = [full_b[0].submatrix(&vmap, &qmap), full_b[1].submatrix(&vmap, &qmap)];
    let stab = if delta0 > 0.0 {
        Some(assemble_stabilization(q_space, v_space.degree())?.scaled(delta0))
    } else {
        None
    };

    // right-hand sides
    let (f, g) = stokes_rhs(data, v_space, q_space, nu);
    let f = [vmap.restrict(&f[0]), vmap.restrict(&f[1])];

    let schur = SchurComplement {
        velocity_block: &stiffness,
        coupling: &b,
        stabilization: stab.as_ref(),
        failure: Mutex::new(None),
    };
    let mut schur_rhs: Vec<f64> = g.iter().map(|v| -v).collect();
    for c in 0..2 {
        let kf = schur.solve_velocity(&f[c]);
        let bt = b[c].transpose_apply_vec(&kf);
        schur_rhs.iter_mut().zip(bt).for_each(|(s, v)| *s += v);
    }
    let deflation = DeflationVector::new(q_space.dof_integrals().to_vec());
    let outer = cg_solve(
        &schur,
        &schur_rhs,
        &CgOptions {
            tol,
            max_iter: None,
            precond: Preconditioner::None,
            deflate: Some(&deflation),
        },
    )?;
    if let Some(e) = schur.failure.lock().unwrap().take() {
        return Err(e);
    }
    let p = outer.x;

    let mut u = [Vec::new(), Vec::new()];
    for c in 0..2 {
        let bp = b[c].apply_vec(&p);
        let rhs: Vec<f64> = f[c].iter().zip(&bp).map(|(f, bp)| f - bp).collect();
        let opts = CgOptions { tol: INNER_TOL, ..Default::default() };
        u[c] = cg_solve_from(&stiffness, &rhs, None, &opts)?.x;
    }

    // residual of the full block system
    let mut res2 = 0.0;
    let mut rhs2 = dot(&g, &g);
    let mut div = match &stab {
        Some(c) => c.apply_vec(&p).iter().map(|v| -v).collect::<Vec<_>>(),
        None => vec![0.0; p.len()],
    };
    for c in 0..2 {
        let ku = stiffness.apply_vec(&u[c]);
        let bp = b[c].apply_vec(&p);
        for i in 0..ku.len() {
            res2 += (f[c][i] - ku[i] - bp[i]).powi(2);
        }
        rhs2 += dot(&f[c], &f[c]);
        let btu = b[c].transpose_apply_vec(&u[c]);
        div.iter_mut().zip(btu).for_each(|(d, v)| *d += v);
    }
    res2 += div.iter().zip(&g).map(|(d, g)| (g - d).powi(2)).sum::<f64>();
    let residual = if rhs2 > 0.0 { (res2 / rhs2).sqrt() } else { res2.sqrt() };

    let pressure = ScalarField {
        space: Arc::clone(q_space),
        coefficients: qmap.extend(&p),
    };
    Ok(StokesProjection {
        velocity: VectorField {
            space: Arc::clone(v_space),
            components: [vmap.extend(&u[0]), vmap.extend(&u[1])],
            time: None,
        },
        pressure,
        residual,
        outer_iterations: outer.iterations,
    })
}

/// Full-length right-hand sides `F_a(φ_i) = ν(∇u*_a, ∇φ_i) + (∂_a p*, φ_i)`
/// and `G(q_j) = −(∇·u*, q_j)`.
fn stokes_rhs(
    data: &dyn StokesData,
    v_space: &ScalarSpace,
    q_space: &ScalarSpace,
    nu: f64,
) -> ([Vec<f64>; 2], Vec<f64>) {
    let mesh = v_space.mesh();
    let rule = quadrature::order_nine();
    let (kv, kq) = (v_space.degree(), q_space.degree());
    let (nv, nq) = (v_space.local_dofs(), q_space.local_dofs());
    let mut f = [vec![0.0; v_space.dim()], vec![0.0; v_space.dim()]];
    let mut g = vec![0.0; q_space.dim()];
    let mut vals = [0.0; MAX_LOCAL_DOFS];
    let mut grads = [[0.0; 2]; MAX_LOCAL_DOFS];
    let mut qv = [0.0; MAX_LOCAL_DOFS];
    for t in 0..mesh.num_triangles() {
        let geo = mesh.geometry(t);
        for (p, w) in rule.iter() {
            let x = mesh.to_physical(t, *p);
            let gu = data.velocity_gradient(x);
            let gp = data.pressure_gradient(x);
            let s = w * geo.area;
            shape_values(kv, *p, &mut vals);
            shape_gradients(kv, *p, &geo.grad_lambda, &mut grads);
            for (a, &d) in v_space.element_dofs(t).iter().enumerate().take(nv) {
                for c in 0..2 {
                    f[c][d] += s * (nu * (gu[c][0] * grads[a][0] + gu[c][1] * grads[a][1]) + gp[c] * vals[a]);
                }
            }
            shape_values(kq, *p, &mut qv);
            let div = gu[0][0] + gu[1][1];
            for (a, &d) in q_space.element_dofs(t).iter().enumerate().take(nq) {
                g[d] -= s * div * qv[a];
            }
        }
    }
    (f, g)
}

/// Relative residual `‖b − Ax‖ / ‖b‖` helper used by tests and diagnostics.
pub fn relative_residual(a: &SparseSym, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.apply_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let bn = norm(b);
    if bn > 0.0 {
        norm(&r) / bn
    } else {
        norm(&r)
    }
}
