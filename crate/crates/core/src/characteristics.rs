//! Lagrange–Galerkin kernel: the linearized characteristic foot
//! `X₁(x) = x − Δt·w_h(x)` and integrals of composed fields `(g ∘ X₁, φ_i)`.
//!
//! With `w_h` piecewise linear, `X₁` is affine on every element `K`, so the
//! image `X₁(K)` is a straight-sided triangle. Clipping that image against
//! the mesh splits the integrand into polynomial pieces, each integrated
//! exactly after pulling quadrature points back to `K`. Pull-back is free:
//! barycentric coordinates of `y` in `X₁(K)` equal those of `X₁⁻¹(y)` in `K`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::fe_space::{shape_values, ScalarSpace, VectorField, MAX_LOCAL_DOFS};
use crate::mesh::{barycentric_in, TriMesh};
use crate::quadrature;
use crate::{Error, Point, Result};

/// Pieces below this area are dropped.
pub const SLIVER_AREA: f64 = 1e-16;
/// Allowed mismatch between clipped area and `|K|·J_K`.
pub const AREA_TOL: f64 = 1e-10;
/// Mapped points may leave the closed domain by this much before clamping.
pub const CLAMP_TOL: f64 = 1e-12;

/// P1 interpolant `w_h` of the convecting velocity.
#[derive(Clone, Debug)]
pub struct LinearizedVelocity {
    pub field: VectorField,
    /// `max_K |∇w_h|_F` (Frobenius norm of the constant element gradient).
    pub lipschitz_seminorm: f64,
    pub time: f64,
    element_gradients: Vec<[[f64; 2]; 2]>,
}

pub fn build_linearized_velocity(
    w: impl Fn(Point, f64) -> [f64; 2],
    t: f64,
    p1_space: &Arc<ScalarSpace>,
) -> Result<LinearizedVelocity> {
    if p1_space.degree() != 1 {
        return Err(Error::UnsupportedDegree(p1_space.degree()));
    }
    let mesh = p1_space.mesh();
    let mut components = [vec![0.0; p1_space.dim()], vec![0.0; p1_space.dim()]];
    for (v, &x) in p1_space.dof_coordinates().iter().enumerate() {
        let value = w(x, t);
        for (c, comp) in components.iter_mut().enumerate() {
            if !value[c].is_finite() {
                return Err(Error::NonFinite { dof: v, x: x[0], y: x[1], value: value[c] });
            }
            if p1_space.is_boundary_dof(v) {
                if value[c].abs() > 1e-12 {
                    return Err(Error::Hypothesis(format!(
                        "convecting velocity must vanish on the boundary, got {:e} at ({}, {})",
                        value[c], x[0], x[1]
                    )));
                }
                comp[v] = 0.0;
            } else {
                comp[v] = value[c];
            }
        }
    }
    let field = VectorField {
        space: Arc::clone(p1_space),
        components,
        time: Some(t),
    };
    let element_gradients: Vec<[[f64; 2]; 2]> = (0..mesh.num_triangles())
        .map(|tri| field.gradient_at(tri, [1.0 / 3.0; 3]))
        .collect();
    let lipschitz_seminorm = element_gradients
        .iter()
        .map(|g| (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2)).sqrt())
        .fold(0.0, f64::max);
    Ok(LinearizedVelocity {
        field,
        lipschitz_seminorm,
        time: t,
        element_gradients,
    })
}

impl LinearizedVelocity {
    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.field.space.mesh()
    }

    pub fn element_gradient(&self, tri: usize) -> [[f64; 2]; 2] {
        self.element_gradients[tri]
    }

    /// `det(I − Δt ∇w_h|_K)`.
    pub fn jacobian(&self, tri: usize, dt: f64) -> f64 {
        let g = self.element_gradients[tri];
        (1.0 - dt * g[0][0]) * (1.0 - dt * g[1][1]) - dt * dt * g[0][1] * g[1][0]
    }

    pub fn jacobians(&self, dt: f64) -> Vec<f64> {
        (0..self.element_gradients.len()).map(|t| self.jacobian(t, dt)).collect()
    }

    /// Image of mesh vertex `v`.
    pub fn map_vertex(&self, v: usize, dt: f64) -> Point {
        let x = self.mesh().vertices()[v];
        clamp_to_box(
            [x[0] - dt * self.field.components[0][v], x[1] - dt * self.field.components[1][v]],
            self.mesh(),
        )
    }

    pub fn element_image(&self, tri: usize, dt: f64) -> [Point; 3] {
        self.mesh().triangles()[tri].map(|v| self.map_vertex(v, dt))
    }
}

fn clamp_to_box(p: Point, mesh: &TriMesh) -> Point {
    let (lo, hi) = mesh.bounding_box();
    let mut q = p;
    for d in 0..2 {
        if q[d] < lo[d] && q[d] >= lo[d] - CLAMP_TOL {
            q[d] = lo[d];
        }
        if q[d] > hi[d] && q[d] <= hi[d] + CLAMP_TOL {
            q[d] = hi[d];
        }
    }
    q
}

/// Summary of the map `X₁(w_h)` for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapCheck {
    /// `Δt·|w_h|_{1,∞}`.
    pub cfl: f64,
    pub jac_min: f64,
    pub jac_max: f64,
}

impl MapCheck {
    /// Whether the margin `Δt·|w_h|_{1,∞} ≤ 1/4` under which the Jacobian is
    /// guaranteed to stay in `[1/2, 3/2]` holds.
    pub fn within_quarter(&self) -> bool {
        self.cfl <= 0.25
    }

    pub fn jacobian_within_bounds(&self) -> bool {
        self.jac_min >= 0.5 && self.jac_max <= 1.5
    }
}

/// Checks that `X₁(w_h)` is a bijection of the closed domain.
///
/// The map is continuous, piecewise affine and fixes the boundary, so it is
/// bijective exactly when it preserves orientation on every element. Loss of
/// that is a hard error; exceeding `Δt·|w_h|_{1,∞} ≥ 1` only warns since the
/// orientation test is sharper.
pub fn check_map(wh: &LinearizedVelocity, dt: f64) -> Result<MapCheck> {
    let jac = wh.jacobians(dt);
    let jac_min = jac.iter().cloned().fold(f64::INFINITY, f64::min);
    let jac_max = jac.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let check = MapCheck {
        cfl: dt * wh.lipschitz_seminorm,
        jac_min,
        jac_max,
    };
    if jac_min <= 0.0 {
        return Err(Error::Hypothesis(format!(
            "characteristic map folds over (min Jacobian {jac_min:e}, dt·|w_h|_1,inf = {})",
            check.cfl
        )));
    }
    if check.cfl >= 1.0 {
        log::warn!(
            "dt·|w_h|_1,inf = {:.3} >= 1 at t = {}; map still orientation preserving (J in [{:.3}, {:.3}])",
            check.cfl,
            wh.time,
            jac_min,
            jac_max
        );
    } else if !check.within_quarter() {
        log::warn!("dt·|w_h|_1,inf = {:.3} exceeds 1/4 at t = {}", check.cfl, wh.time);
    }
    Ok(check)
}

/// Maps arbitrary points and returns them with the per-element Jacobians.
pub fn map_x1(wh: &LinearizedVelocity, dt: f64, points: &[Point]) -> Result<(Vec<Point>, Vec<f64>)> {
    check_map(wh, dt)?;
    let mesh = wh.mesh();
    let mut mapped = Vec::with_capacity(points.len());
    for &x in points {
        let (tri, l) = mesh.locate_point(x)?;
        let w = wh.field.value_at(tri, l);
        let y = clamp_to_box([x[0] - dt * w[0], x[1] - dt * w[1]], mesh);
        mapped.push(y);
    }
    Ok((mapped, wh.jacobians(dt)))
}

/// One convex piece `X₁(K) ∩ K'`.
#[derive(Clone, Debug)]
pub struct ClippedCell {
    /// Test element `K`.
    pub parent: usize,
    /// Mesh element `K'` containing the piece.
    pub source: usize,
    pub polygon: Vec<Point>,
    pub sub_triangles: Vec<[Point; 3]>,
}

impl ClippedCell {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Sutherland–Hodgman clipping of a convex polygon against a CCW triangle.
pub fn clip_against_triangle(subject: &[Point], tri: [Point; 3]) -> Vec<Point> {
    let mut out: Vec<Point> = subject.to_vec();
    for e in 0..3 {
        if out.is_empty() {
            break;
        }
        let a = tri[e];
        let b = tri[(e + 1) % 3];
        let side = |p: Point| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn fan(poly: &[Point]) -> Vec<[Point; 3]> {
    (1..poly.len().saturating_sub(1))
        .map(|i| [poly[0], poly[i], poly[i + 1]])
        .collect()
}

/// All pieces of the image of element `parent`.
pub fn clip_element(wh: &LinearizedVelocity, dt: f64, parent: usize) -> Vec<ClippedCell> {
    let mesh = wh.mesh();
    let image = wh.element_image(parent, dt);
    let lo = [
        image[0][0].min(image[1][0]).min(image[2][0]),
        image[0][1].min(image[1][1]).min(image[2][1]),
    ];
    let hi = [
        image[0][0].max(image[1][0]).max(image[2][0]),
        image[0][1].max(image[1][1]).max(image[2][1]),
    ];
    let mut cells = Vec::new();
    for source in mesh.candidates_in_box(lo, hi) {
        let polygon = clip_against_triangle(&image, mesh.triangle_points(source));
        if polygon.len() < 3 || polygon_area(&polygon) < SLIVER_AREA {
            continue;
        }
        let sub_triangles = fan(&polygon);
        cells.push(ClippedCell { parent, source, polygon, sub_triangles });
    }
    cells
}

/// How the composed term is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposedIntegration {
    /// Clipping plus rules exact for the piecewise-polynomial integrand.
    Exact,
    /// A single rule of the given degree on each test element, with the
    /// composed field evaluated pointwise through point location.
    Quadrature { degree: usize },
}

#[derive(Clone, Debug)]
pub struct ComposedTerm {
    /// `∫ (g_c ∘ X₁) φ_i` for both components over all test DOFs.
    pub rhs: [Vec<f64>; 2],
    pub jac_min: f64,
    pub jac_max: f64,
    /// Total clipped area (exact mode) or `Σ |K| J_K` (quadrature mode).
    pub mapped_area: f64,
    /// Largest per-element `| Σ pieces − |K| J_K |`; zero in quadrature mode.
    pub max_area_defect: f64,
}

type LocalRhs = [[f64; MAX_LOCAL_DOFS]; 2];

/// Computes `((g ∘ X₁(w_h)), φ_i)` for the vector field `g`, tested against
/// the basis of `g`'s own space.
pub fn integrate_composed_term(
    field: &VectorField,
    wh: &LinearizedVelocity,
    dt: f64,
    mode: ComposedIntegration,
) -> Result<ComposedTerm> {
    let space = &field.space;
    if !Arc::ptr_eq(space.mesh(), wh.mesh()) {
        return Err(Error::MeshMismatch);
    }
    let check = check_map(wh, dt)?;
    let mesh = space.mesh();
    let nt = mesh.num_triangles();

    let locals: Vec<Result<(LocalRhs, f64, f64)>> = match mode {
        ComposedIntegration::Exact => (0..nt)
            .into_par_iter()
            .map(|k| exact_element(field, wh, dt, k))
            .collect(),
        ComposedIntegration::Quadrature { degree } => (0..nt)
            .into_par_iter()
            .map(|k| quadrature_element(field, wh, dt, k, degree))
            .collect(),
    };

    let mut rhs = [vec![0.0; space.dim()], vec![0.0; space.dim()]];
    let mut mapped_area = 0.0;
    let mut max_area_defect: f64 = 0.0;
    for (k, local) in locals.into_iter().enumerate() {
        let (lr, area, defect) = local?;
        mapped_area += area;
        max_area_defect = max_area_defect.max(defect);
        for (a, &d) in space.element_dofs(k).iter().enumerate() {
            rhs[0][d] += lr[0][a];
            rhs[1][d] += lr[1][a];
        }
    }
    Ok(ComposedTerm {
        rhs,
        jac_min: check.jac_min,
        jac_max: check.jac_max,
        mapped_area,
        max_area_defect,
    })
}

fn exact_element(field: &VectorField, wh: &LinearizedVelocity, dt: f64, k: usize) -> Result<(LocalRhs, f64, f64)> {
    let space = &field.space;
    let mesh = space.mesh();
    let deg = space.degree();
    let n = space.local_dofs();
    let rule = quadrature::rule(2 * deg);
    let jac = wh.jacobian(k, dt);
    let image = wh.element_image(k, dt);
    let mut out = [[0.0; MAX_LOCAL_DOFS]; 2];
    let mut area = 0.0;
    let mut phi = [0.0; MAX_LOCAL_DOFS];
    let mut psi = [0.0; MAX_LOCAL_DOFS];
    for cell in clip_element(wh, dt, k) {
        area += cell.area();
        let src_pts = mesh.triangle_points(cell.source);
        let src_dofs = space.element_dofs(cell.source);
        for sub in &cell.sub_triangles {
            let sub_area = polygon_area(sub);
            if sub_area <= 0.0 {
                continue;
            }
            for (l, w) in rule.iter() {
                let y = [
                    l[0] * sub[0][0] + l[1] * sub[1][0] + l[2] * sub[2][0],
                    l[0] * sub[0][1] + l[1] * sub[1][1] + l[2] * sub[2][1],
                ];
                shape_values(deg, barycentric_in(src_pts, y), &mut psi);
                let mut g = [0.0; 2];
                for (&d, v) in src_dofs.iter().zip(&psi[..n]) {
                    g[0] += field.components[0][d] * v;
                    g[1] += field.components[1][d] * v;
                }
                shape_values(deg, barycentric_in(image, y), &mut phi);
                let s = w * sub_area / jac;
                for a in 0..n {
                    out[0][a] += s * g[0] * phi[a];
                    out[1][a] += s * g[1] * phi[a];
                }
            }
        }
    }
    let expected = mesh.area(k) * jac;
    let defect = (area - expected).abs();
    if defect > AREA_TOL {
        return Err(Error::Geometry { element: k, clipped: area, expected });
    }
    Ok((out, area, defect))
}

fn quadrature_element(
    field: &VectorField,
    wh: &LinearizedVelocity,
    dt: f64,
    k: usize,
    degree: usize,
) -> Result<(LocalRhs, f64, f64)> {
    let space = &field.space;
    let mesh = space.mesh();
    let deg = space.degree();
    let n = space.local_dofs();
    let rule = quadrature::rule(degree);
    let area = mesh.area(k);
    let image = wh.element_image(k, dt);
    let mut out = [[0.0; MAX_LOCAL_DOFS]; 2];
    let mut phi = [0.0; MAX_LOCAL_DOFS];
    for (l, w) in rule.iter() {
        // X₁ is affine on K: the image point has the same barycentrics
        let y = [
            l[0] * image[0][0] + l[1] * image[1][0] + l[2] * image[2][0],
            l[0] * image[0][1] + l[1] * image[1][1] + l[2] * image[2][1],
        ];
        let (src, ls) = mesh.locate_point(y)?;
        let g = field.value_at(src, ls);
        shape_values(deg, *l, &mut phi);
        for a in 0..n {
            out[0][a] += w * area * g[0] * phi[a];
            out[1][a] += w * area * g[1] * phi[a];
        }
    }
    Ok((out, area * wh.jacobian(k, dt), 0.0))
}

/// Writes every clipped piece as one line:
/// `parent source x0 y0 x1 y1 ...`.
pub fn write_clipped_polygons<W: Write>(wh: &LinearizedVelocity, dt: f64, mut w: W) -> Result<()> {
    for k in 0..wh.mesh().num_triangles() {
        for cell in clip_element(wh, dt, k) {
            write!(w, "{} {}", cell.parent, cell.source)?;
            for p in &cell.polygon {
                write!(w, " {:e} {:e}", p[0], p[1])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_mass;
    use crate::fe_space::{build_space, interpolate_vector, Constraint};
    use crate::mesh::build_unit_square_mesh;

    fn setup(n: usize) -> (Arc<ScalarSpace>, Arc<ScalarSpace>) {
        let m = Arc::new(build_unit_square_mesh(n).unwrap());
        (
            build_space(&m, 1, Constraint::ZeroBoundary).unwrap(),
            build_space(&m, 2, Constraint::ZeroBoundary).unwrap(),
        )
    }

    fn bubble(x: Point, _: f64) -> [f64; 2] {
        let b = 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
        [b, -0.5 * b]
    }

    #[test]
    fn clip_square_by_triangle() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let square = [[0.25, 0.25], [2.0, 0.25], [2.0, 2.0], [0.25, 2.0]];
        let p = clip_against_triangle(&square, tri);
        // remaining region: triangle (0.25,0.25),(0.75,0.25),(0.25,0.75)
        assert!((polygon_area(&p) - 0.125).abs() < 1e-15);
        let disjoint = [[2.0, 2.0], [3.0, 2.0], [2.0, 3.0]];
        assert!(clip_against_triangle(&disjoint, tri).len() < 3 || polygon_area(&clip_against_triangle(&disjoint, tri)) == 0.0);
    }

    #[test]
    fn zero_velocity_is_the_identity_map() {
        let (p1, p2) = setup(4);
        let wh = build_linearized_velocity(|_, _| [0.0; 2], 0.0, &p1).unwrap();
        assert_eq!(wh.lipschitz_seminorm, 0.0);
        let pts = vec![[0.3, 0.7], [0.0, 1.0]];
        let (mapped, jac) = map_x1(&wh, 0.1, &pts).unwrap();
        assert_eq!(mapped, pts);
        assert!(jac.iter().all(|&j| j == 1.0));

        let g = interpolate_vector(&p2, |x, _| [x[0] * x[1], (3.0 * x[0]).sin()], 0.0).unwrap();
        let term = integrate_composed_term(&g, &wh, 0.1, ComposedIntegration::Exact).unwrap();
        let mass = assemble_mass(&p2);
        for c in 0..2 {
            let mg = mass.apply_vec(&g.components[c]);
            for (a, b) in term.rhs[c].iter().zip(&mg) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn boundary_values_must_vanish() {
        let (p1, _) = setup(2);
        let err = build_linearized_velocity(|_, _| [1.0, 0.0], 0.0, &p1).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn strain_jacobian() {
        let (p1, _) = setup(4);
        // gradient diag(a, -a) everywhere: w = (a x, -a y) has nonzero
        // boundary values, so build the field directly
        let a = 3.0;
        let dt = 0.05;
        let mesh = Arc::clone(p1.mesh());
        let comps = [
            mesh.vertices().iter().map(|x| a * x[0]).collect::<Vec<_>>(),
            mesh.vertices().iter().map(|x| -a * x[1]).collect::<Vec<_>>(),
        ];
        let field = VectorField { space: Arc::clone(&p1), components: comps, time: Some(0.0) };
        let grads: Vec<_> = (0..mesh.num_triangles()).map(|t| field.gradient_at(t, [1.0 / 3.0; 3])).collect();
        let wh = LinearizedVelocity { field, lipschitz_seminorm: a * 2f64.sqrt(), time: 0.0, element_gradients: grads };
        for j in wh.jacobians(dt) {
            assert!((j - (1.0 - a * a * dt * dt)).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_are_invariant() {
        let (p1, p2) = setup(6);
        let wh = build_linearized_velocity(bubble, 0.0, &p1).unwrap();
        // constants are not in V_h, but the composed integral does not care
        let g = VectorField {
            space: Arc::clone(&p2),
            components: [vec![2.0; p2.dim()], vec![-1.0; p2.dim()]],
            time: None,
        };
        let term = integrate_composed_term(&g, &wh, 0.05, ComposedIntegration::Exact).unwrap();
        for (i, m) in p2.dof_integrals().iter().enumerate() {
            assert!((term.rhs[0][i] - 2.0 * m).abs() < 1e-14);
            assert!((term.rhs[1][i] + m).abs() < 1e-14);
        }
        assert!((term.mapped_area - 1.0).abs() < 1e-12);
        assert!(term.max_area_defect < AREA_TOL);
    }

    #[test]
    fn folding_map_is_rejected() {
        let (p1, p2) = setup(4);
        let wh = build_linearized_velocity(bubble, 0.0, &p1).unwrap();
        let g = VectorField::zeros(&p2);
        let err = integrate_composed_term(&g, &wh, 10.0, ComposedIntegration::Exact).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)), "{err}");
    }

    #[test]
    fn polygon_dump_lists_pieces() {
        let (p1, _) = setup(2);
        let wh = build_linearized_velocity(bubble, 0.0, &p1).unwrap();
        let mut buf = Vec::new();
        write_clipped_polygons(&wh, 0.05, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().count() >= 8);
        for line in text.lines() {
            let n = line.split_whitespace().count();
            assert!(n >= 8 && n % 2 == 0, "{line}");
        }
    }
}
