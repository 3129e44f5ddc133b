//! Continuous Lagrange P1/P2 spaces on a [`TriMesh`].
//!
//! P2 local DOF order is three vertices followed by the three edge midpoints,
//! midpoint `i` sitting on the edge opposite vertex `i`. Global numbering puts
//! all vertices first, then edges in order of first appearance.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mesh::TriMesh;
use crate::quadrature;
use crate::{Error, Point, Result};

pub const MAX_LOCAL_DOFS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Homogeneous Dirichlet data; boundary DOFs are eliminated from solves.
    ZeroBoundary,
    /// Zero mean, enforced by deflation and mean subtraction.
    ZeroMean,
}

#[derive(Debug)]
pub struct ScalarSpace {
    mesh: Arc<TriMesh>,
    degree: usize,
    dof_coordinates: Vec<Point>,
    element_dofs: Vec<[usize; MAX_LOCAL_DOFS]>,
    boundary_dofs: Vec<usize>,
    on_boundary: Vec<bool>,
    constraint: Constraint,
    dof_integrals: Vec<f64>,
}

pub fn local_dof_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

pub fn build_space(mesh: &Arc<TriMesh>, degree: usize, constraint: Constraint) -> Result<Arc<ScalarSpace>> {
    if !(1..=2).contains(&degree) {
        return Err(Error::UnsupportedDegree(degree));
    }
    let nv = mesh.num_vertices();
    let mut dof_coordinates: Vec<Point> = mesh.vertices().to_vec();
    let mut on_boundary: Vec<bool> = mesh.boundary_vertex_flags().to_vec();
    let mut element_dofs = Vec::with_capacity(mesh.num_triangles());

    if degree == 1 {
        for tri in mesh.triangles() {
            element_dofs.push([tri[0], tri[1], tri[2], 0, 0, 0]);
        }
    } else {
        let multiplicity = mesh.edge_multiplicities();
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in mesh.triangles() {
            let mut dofs = [tri[0], tri[1], tri[2], 0, 0, 0];
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let next = nv + edge_index.len();
                let id = *edge_index.entry(key).or_insert_with(|| {
                    let pa = mesh.vertices()[a];
                    let pb = mesh.vertices()[b];
                    dof_coordinates.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    on_boundary.push(multiplicity[&key] == 1);
                    next
                });
                dofs[3 + i] = id;
            }
            element_dofs.push(dofs);
        }
    }

    let boundary_dofs = on_boundary
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();

    let mut space = ScalarSpace {
        mesh: Arc::clone(mesh),
        degree,
        dof_coordinates,
        element_dofs,
        boundary_dofs,
        on_boundary,
        constraint,
        dof_integrals: Vec::new(),
    };
    space.dof_integrals = space.compute_dof_integrals();
    Ok(Arc::new(space))
}

impl ScalarSpace {
    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dof_coordinates.len()
    }

    pub fn local_dofs(&self) -> usize {
        local_dof_count(self.degree)
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn dof_coordinates(&self) -> &[Point] {
        &self.dof_coordinates
    }

    pub fn element_dofs(&self, tri: usize) -> &[usize] {
        &self.element_dofs[tri][..self.local_dofs()]
    }

    pub fn boundary_dofs(&self) -> &[usize] {
        &self.boundary_dofs
    }

    pub fn is_boundary_dof(&self, dof: usize) -> bool {
        self.on_boundary[dof]
    }

    /// `∫_Ω φ_i` for every basis function; these are the deflation weights.
    pub fn dof_integrals(&self) -> &[f64] {
        &self.dof_integrals
    }

    pub fn same_mesh(&self, other: &ScalarSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    /// DOFs that carry unknowns in a solve (boundary removed for
    /// `ZeroBoundary`).
    pub fn dof_map(&self) -> DofMap {
        match self.constraint {
            Constraint::ZeroBoundary => DofMap::new(self.dim(), |i| !self.on_boundary[i]),
            _ => DofMap::new(self.dim(), |_| true),
        }
    }

    fn compute_dof_integrals(&self) -> Vec<f64> {
        let rule = quadrature::rule(self.degree);
        let mut m = vec![0.0; self.dim()];
        let mut vals = [0.0; MAX_LOCAL_DOFS];
        for tri in 0..self.mesh.num_triangles() {
            let area = self.mesh.area(tri);
            let dofs = self.element_dofs(tri);
            for (p, w) in rule.iter() {
                shape_values(self.degree, *p, &mut vals);
                for (a, &d) in dofs.iter().enumerate() {
                    m[d] += w * area * vals[a];
                }
            }
        }
        m
    }

    /// `∫ c / |Ω|` for a coefficient vector on this space.
    pub fn mean(&self, coefficients: &[f64]) -> f64 {
        let total: f64 = self.dof_integrals.iter().sum();
        dot(&self.dof_integrals, coefficients) / total
    }

    /// `∫_Ω c`.
    pub fn integral(&self, coefficients: &[f64]) -> f64 {
        dot(&self.dof_integrals, coefficients)
    }

    /// Subtracts the mean; constants have all-ones coefficients.
    pub fn subtract_mean(&self, coefficients: &mut [f64]) {
        let m = self.mean(coefficients);
        for c in coefficients.iter_mut() {
            *c -= m;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index map between full DOF vectors and the reduced unknown vectors.
#[derive(Clone, Debug)]
pub struct DofMap {
    free: Vec<usize>,
    position: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(dim: usize, keep: impl Fn(usize) -> bool) -> Self {
        let mut free = Vec::new();
        let mut position = vec![None; dim];
        for (i, pos) in position.iter_mut().enumerate() {
            if keep(i) {
                *pos = Some(free.len());
                free.push(i);
            }
        }
        Self { free, position }
    }

    pub fn full_dim(&self) -> usize {
        self.position.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn position(&self, full: usize) -> Option<usize> {
        self.position[full]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Scatters a reduced vector; eliminated entries are zero.
    pub fn extend(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.full_dim()];
        for (r, &i) in reduced.iter().zip(&self.free) {
            out[i] = *r;
        }
        out
    }
}

/// Local shape function values at a barycentric point.
pub fn shape_values(degree: usize, l: [f64; 3], out: &mut [f64]) {
    match degree {
        1 => out[..3].copy_from_slice(&l),
        2 => {
            for i in 0..3 {
                out[i] = l[i] * (2.0 * l[i] - 1.0);
                out[3 + i] = 4.0 * l[(i + 1) % 3] * l[(i + 2) % 3];
            }
        }
        _ => unreachable!("degree checked at space construction"),
    }
}

/// Physical gradients of the local shape functions.
pub fn shape_gradients(degree: usize, l: [f64; 3], gl: &[[f64; 2]; 3], out: &mut [[f64; 2]]) {
    match degree {
        1 => out[..3].copy_from_slice(gl),
        2 => {
            for i in 0..3 {
                let s = 4.0 * l[i] - 1.0;
                out[i] = [s * gl[i][0], s * gl[i][1]];
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                out[3 + i] = [
                    4.0 * (l[j] * gl[k][0] + l[k] * gl[j][0]),
                    4.0 * (l[j] * gl[k][1] + l[k] * gl[j][1]),
                ];
            }
        }
        _ => unreachable!("degree checked at space construction"),
    }
}

/// Second derivatives `(∂xx, ∂xy, ∂yy)` of the local shape functions; they
/// are constant on each element for degree <= 2.
pub fn shape_hessians(degree: usize, gl: &[[f64; 2]; 3], out: &mut [[f64; 3]]) {
    let outer = |a: [f64; 2], b: [f64; 2]| [a[0] * b[0], 0.5 * (a[0] * b[1] + a[1] * b[0]), a[1] * b[1]];
    match degree {
        1 => out[..3].fill([0.0; 3]),
        2 => {
            for i in 0..3 {
                let h = outer(gl[i], gl[i]);
                out[i] = h.map(|v| 4.0 * v);
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                let h = outer(gl[j], gl[k]);
                out[3 + i] = h.map(|v| 8.0 * v);
            }
        }
        _ => unreachable!("degree checked at space construction"),
    }
}

/// Values and physical gradients of all local basis functions.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBasis {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
}

pub fn eval_basis(space: &ScalarSpace, tri: usize, bary: [f64; 3]) -> LocalBasis {
    let n = space.local_dofs();
    let mut values = vec![0.0; n];
    let mut gradients = vec![[0.0; 2]; n];
    shape_values(space.degree, bary, &mut values);
    let gl = &space.mesh.geometry(tri).grad_lambda;
    shape_gradients(space.degree, bary, gl, &mut gradients);
    LocalBasis { values, gradients }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub space: Arc<ScalarSpace>,
    pub coefficients: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(space: &Arc<ScalarSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            coefficients: vec![0.0; space.dim()],
        }
    }

    pub fn value_at(&self, tri: usize, bary: [f64; 3]) -> f64 {
        let mut vals = [0.0; MAX_LOCAL_DOFS];
        shape_values(self.space.degree, bary, &mut vals);
        self.space
            .element_dofs(tri)
            .iter()
            .zip(vals)
            .map(|(&d, v)| self.coefficients[d] * v)
            .sum()
    }

    pub fn gradient_at(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        let mut grads = [[0.0; 2]; MAX_LOCAL_DOFS];
        let gl = &self.space.mesh.geometry(tri).grad_lambda;
        shape_gradients(self.space.degree, bary, gl, &mut grads);
        let mut g = [0.0; 2];
        for (&d, gr) in self.space.element_dofs(tri).iter().zip(grads) {
            g[0] += self.coefficients[d] * gr[0];
            g[1] += self.coefficients[d] * gr[1];
        }
        g
    }

    pub fn mean(&self) -> f64 {
        self.space.mean(&self.coefficients)
    }
}

#[derive(Clone, Debug)]
pub struct VectorField {
    pub space: Arc<ScalarSpace>,
    pub components: [Vec<f64>; 2],
    pub time: Option<f64>,
}

impl VectorField {
    pub fn zeros(space: &Arc<ScalarSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            components: [vec![0.0; space.dim()], vec![0.0; space.dim()]],
            time: None,
        }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            space: Arc::clone(&self.space),
            coefficients: self.components[c].clone(),
        }
    }

    pub fn value_at(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        let mut vals = [0.0; MAX_LOCAL_DOFS];
        shape_values(self.space.degree, bary, &mut vals);
        let mut out = [0.0; 2];
        for (&d, v) in self.space.element_dofs(tri).iter().zip(vals) {
            out[0] += self.components[0][d] * v;
            out[1] += self.components[1][d] * v;
        }
        out
    }

    /// Rows are components, columns derivative directions.
    pub fn gradient_at(&self, tri: usize, bary: [f64; 3]) -> [[f64; 2]; 2] {
        let mut grads = [[0.0; 2]; MAX_LOCAL_DOFS];
        let gl = &self.space.mesh.geometry(tri).grad_lambda;
        shape_gradients(self.space.degree, bary, gl, &mut grads);
        let mut g = [[0.0; 2]; 2];
        for (&d, gr) in self.space.element_dofs(tri).iter().zip(grads) {
            for c in 0..2 {
                g[c][0] += self.components[c][d] * gr[0];
                g[c][1] += self.components[c][d] * gr[1];
            }
        }
        g
    }
}

/// Nodal interpolation of `f(·, t)`.
///
/// Zero-mean spaces get the discrete mean removed; zero-boundary spaces get
/// their boundary coefficients set to exactly zero.
pub fn lagrange_interpolate(
    space: &Arc<ScalarSpace>,
    f: impl Fn(Point, f64) -> f64,
    t: f64,
) -> Result<ScalarField> {
    let mut coefficients = Vec::with_capacity(space.dim());
    for (dof, &x) in space.dof_coordinates.iter().enumerate() {
        let value = f(x, t);
        if !value.is_finite() {
            return Err(Error::NonFinite { dof, x: x[0], y: x[1], value });
        }
        coefficients.push(value);
    }
    match space.constraint {
        Constraint::ZeroMean => space.subtract_mean(&mut coefficients),
        Constraint::ZeroBoundary => {
            for &b in &space.boundary_dofs {
                coefficients[b] = 0.0;
            }
        }
        Constraint::None => {}
    }
    Ok(ScalarField {
        space: Arc::clone(space),
        coefficients,
    })
}

pub fn interpolate_vector(
    space: &Arc<ScalarSpace>,
    f: impl Fn(Point, f64) -> [f64; 2],
    t: f64,
) -> Result<VectorField> {
    let c0 = lagrange_interpolate(space, |x, t| f(x, t)[0], t)?;
    let c1 = lagrange_interpolate(space, |x, t| f(x, t)[1], t)?;
    Ok(VectorField {
        space: Arc::clone(space),
        components: [c0.coefficients, c1.coefficients],
        time: Some(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn mesh(n: usize) -> Arc<TriMesh> {
        Arc::new(build_unit_square_mesh(n).unwrap())
    }

    #[test]
    fn dimensions() {
        let m = mesh(2);
        let p1 = build_space(&m, 1, Constraint::None).unwrap();
        assert_eq!(p1.dim(), 9);
        assert_eq!(p1.boundary_dofs().len(), 8);
        let p2 = build_space(&m, 2, Constraint::None).unwrap();
        assert_eq!(p2.dim(), 25);
        for n in [1, 3, 8] {
            let m = mesh(n);
            assert_eq!(build_space(&m, 2, Constraint::None).unwrap().dim(), (2 * n + 1).pow(2));
            assert_eq!(build_space(&m, 1, Constraint::None).unwrap().dim(), (n + 1).pow(2));
        }
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(
            build_space(&mesh(2), 3, Constraint::None),
            Err(Error::UnsupportedDegree(3))
        ));
    }

    #[test]
    fn degenerate_dirichlet_space_has_no_free_dofs() {
        let s = build_space(&mesh(1), 1, Constraint::ZeroBoundary).unwrap();
        assert_eq!(s.dof_map().reduced_dim(), 0);
    }

    #[test]
    fn boundary_dofs_are_exactly_those_on_the_boundary() {
        let m = mesh(5);
        for degree in [1, 2] {
            let s = build_space(&m, degree, Constraint::ZeroBoundary).unwrap();
            for (i, x) in s.dof_coordinates().iter().enumerate() {
                let geometric = x[0] == 0.0 || x[1] == 0.0 || x[0] == 1.0 || x[1] == 1.0;
                assert_eq!(s.is_boundary_dof(i), geometric, "dof {i} at {x:?}");
            }
        }
    }

    #[test]
    fn numbering_is_deterministic_and_conforming() {
        let m = mesh(4);
        let a = build_space(&m, 2, Constraint::None).unwrap();
        let b = build_space(&m, 2, Constraint::None).unwrap();
        for t in 0..m.num_triangles() {
            assert_eq!(a.element_dofs(t), b.element_dofs(t));
            // the midpoint DOF coordinate must match the local edge midpoint
            let pts = m.triangle_points(t);
            for i in 0..3 {
                let p = pts[(i + 1) % 3];
                let q = pts[(i + 2) % 3];
                let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                assert_eq!(a.dof_coordinates()[a.element_dofs(t)[3 + i]], mid);
            }
        }
    }

    #[test]
    fn nodal_basis_property() {
        let m = mesh(3);
        let s = build_space(&m, 2, Constraint::None).unwrap();
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ];
        for (i, node) in nodes.iter().enumerate() {
            let b = eval_basis(&s, 5, *node);
            for (j, v) in b.values.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-15);
            }
        }
        let s1 = build_space(&m, 1, Constraint::None).unwrap();
        for (i, node) in nodes[..3].iter().enumerate() {
            let b = eval_basis(&s1, 2, *node);
            for (j, v) in b.values.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let m = mesh(3);
        let mut rng = StdRng::seed_from_u64(7);
        for degree in [1, 2] {
            let s = build_space(&m, degree, Constraint::None).unwrap();
            for _ in 0..50 {
                let a: f64 = rng.random();
                let b: f64 = rng.random::<f64>() * (1.0 - a);
                let tri = rng.random_range(0..m.num_triangles());
                let basis = eval_basis(&s, tri, [a, b, 1.0 - a - b]);
                assert!((basis.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let g = basis.gradients.iter().fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
                assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_of_linears() {
        let m = mesh(2);
        let s = build_space(&m, 1, Constraint::None).unwrap();
        let f = lagrange_interpolate(&s, |x, _| x[0], 0.0).unwrap();
        for (c, x) in f.coefficients.iter().zip(s.dof_coordinates()) {
            assert_eq!(*c, x[0]);
        }
        let z = lagrange_interpolate(&s, |_, _| 0.0, 0.0).unwrap();
        assert!(z.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn non_finite_values_name_the_dof() {
        let s = build_space(&mesh(2), 1, Constraint::None).unwrap();
        let err = lagrange_interpolate(&s, |x, _| if x == [0.5, 0.5] { f64::NAN } else { 0.0 }, 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { dof: 4, .. }), "{err}");
    }

    #[test]
    fn zero_mean_interpolation() {
        let m = mesh(4);
        let s = build_space(&m, 2, Constraint::ZeroMean).unwrap();
        let f = lagrange_interpolate(&s, |x, _| 3.0 + x[0] * x[1], 0.0).unwrap();
        assert!(f.mean().abs() < 1e-14);
    }

    #[test]
    fn dof_integrals_sum_to_area() {
        let m = mesh(6);
        for degree in [1, 2] {
            let s = build_space(&m, degree, Constraint::ZeroMean).unwrap();
            assert!((s.dof_integrals().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monomials_are_reproduced() {
        let m = mesh(3);
        let rule = quadrature::order_nine();
        for degree in [1usize, 2] {
            let s = build_space(&m, degree, Constraint::None).unwrap();
            for i in 0..=degree {
                for j in 0..=degree - i {
                    let mono = |x: Point| x[0].powi(i as i32) * x[1].powi(j as i32);
                    let f = lagrange_interpolate(&s, |x, _| mono(x), 0.0).unwrap();
                    for tri in 0..m.num_triangles() {
                        for (p, _) in rule.iter() {
                            let x = m.to_physical(tri, *p);
                            assert!((f.value_at(tri, *p) - mono(x)).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_of_p2_reproduce_quadratics() {
        let m = mesh(2);
        let s = build_space(&m, 2, Constraint::None).unwrap();
        // f = x^2 + 3xy - 2y^2: f_xx = 2, f_xy = 3, f_yy = -4
        let f = lagrange_interpolate(&s, |x, _| x[0] * x[0] + 3.0 * x[0] * x[1] - 2.0 * x[1] * x[1], 0.0)
            .unwrap();
        let mut h = [[0.0; 3]; MAX_LOCAL_DOFS];
        for tri in 0..m.num_triangles() {
            shape_hessians(2, &m.geometry(tri).grad_lambda, &mut h);
            let mut acc = [0.0; 3];
            for (&d, hd) in s.element_dofs(tri).iter().zip(&h) {
                for c in 0..3 {
                    acc[c] += f.coefficients[d] * hd[c];
                }
            }
            assert!((acc[0] - 2.0).abs() < 1e-10);
            assert!((acc[1] - 3.0).abs() < 1e-10);
            assert!((acc[2] + 4.0).abs() < 1e-10);
        }
    }
}
