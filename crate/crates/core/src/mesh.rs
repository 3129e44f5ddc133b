//! Conforming triangulations of the unit square.
//!
//! Meshes are immutable once built. Point location goes through a uniform
//! background grid whose cells list every triangle whose bounding box touches
//! them, so each query only tests a handful of candidates.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::{Error, Point, Result};

/// Absolute tolerance on barycentric coordinates for "inside" tests.
pub const INSIDE_TOL: f64 = 1e-12;

/// Per-triangle affine data.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    /// Physical gradients of the three barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

#[derive(Clone, Debug)]
struct BackgroundGrid {
    origin: Point,
    cell_size: [f64; 2],
    dims: [usize; 2],
    cells: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_vertex_flags: Vec<bool>,
    element_diameters: Vec<f64>,
    mesh_size: f64,
    vertex_to_triangles: Vec<Vec<usize>>,
    geometry: Vec<ElementGeometry>,
    grid: BackgroundGrid,
}

/// Structured triangulation of `[0,1]^2`: `n` divisions per side, every
/// sub-square cut along its lower-left to upper-right diagonal.
pub fn build_unit_square_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::EmptyMesh);
    }
    let np = n + 1;
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity(np * np);
    let mut boundary = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertices.push([i as f64 * h, j as f64 * h]);
            boundary.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    // exact lattice coordinates on the far edges
    for v in vertices.iter_mut() {
        for c in v.iter_mut() {
            if (*c - 1.0).abs() < 1e-14 {
                *c = 1.0;
            }
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = j * np + i;
            let b = a + 1;
            let c = b + np;
            let d = a + np;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriMesh::from_parts(vertices, triangles, boundary)
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl TriMesh {
    /// Builds a mesh from raw parts. Triangles must be CCW with positive area.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_vertex_flags: Vec<bool>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if boundary_vertex_flags.len() != vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: vertices.len(),
                got: boundary_vertex_flags.len(),
            });
        }
        let mut geometry = Vec::with_capacity(triangles.len());
        let mut element_diameters = Vec::with_capacity(triangles.len());
        let mut vertex_to_triangles = vec![Vec::new(); vertices.len()];
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Parse(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            if area <= 0.0 {
                return Err(Error::Parse(format!(
                    "triangle {t} is not counter-clockwise (signed area {area:e})"
                )));
            }
            // grad λ_i = rot(edge opposite i) / (2|K|)
            let p = [a, b, c];
            let mut grad_lambda = [[0.0; 2]; 3];
            for i in 0..3 {
                let pj = p[(i + 1) % 3];
                let pk = p[(i + 2) % 3];
                grad_lambda[i] = [(pj[1] - pk[1]) / (2.0 * area), (pk[0] - pj[0]) / (2.0 * area)];
            }
            geometry.push(ElementGeometry { area, grad_lambda });
            element_diameters.push(dist(a, b).max(dist(b, c)).max(dist(c, a)));
            for &v in tri {
                vertex_to_triangles[v].push(t);
            }
        }
        let mesh_size = element_diameters.iter().cloned().fold(0.0, f64::max);
        let grid = BackgroundGrid::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            boundary_vertex_flags,
            element_diameters,
            mesh_size,
            vertex_to_triangles,
            geometry,
            grid,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_vertex_flags(&self) -> &[bool] {
        &self.boundary_vertex_flags
    }

    pub fn element_diameters(&self) -> &[f64] {
        &self.element_diameters
    }

    /// `h = max_K h_K`.
    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn vertex_to_triangles(&self) -> &[Vec<usize>] {
        &self.vertex_to_triangles
    }

    pub fn geometry(&self, tri: usize) -> &ElementGeometry {
        &self.geometry[tri]
    }

    pub fn area(&self, tri: usize) -> f64 {
        self.geometry[tri].area
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn triangle_points(&self, tri: usize) -> [Point; 3] {
        self.triangles[tri].map(|v| self.vertices[v])
    }

    pub fn centroid(&self, tri: usize) -> Point {
        let [a, b, c] = self.triangle_points(tri);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Maps barycentric coordinates on `tri` to a physical point.
    pub fn to_physical(&self, tri: usize, bary: [f64; 3]) -> Point {
        let [a, b, c] = self.triangle_points(tri);
        [
            bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
            bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        ]
    }

    /// Barycentric coordinates of `x` with respect to `tri` (unclamped).
    pub fn barycentric(&self, tri: usize, x: Point) -> [f64; 3] {
        barycentric_in(self.triangle_points(tri), x)
    }

    /// Axis-aligned bounding box of the vertex set: `(min, max)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        bbox(&self.vertices)
    }

    /// Triangles whose bounding boxes touch the closed box `[lo, hi]`,
    /// in increasing index order.
    pub fn candidates_in_box(&self, lo: Point, hi: Point) -> Vec<usize> {
        self.grid.candidates(lo, hi)
    }

    /// Finds the triangle containing `x` together with its barycentric
    /// coordinates. Ties on shared edges and vertices go to the smallest
    /// triangle index.
    pub fn locate_point(&self, x: Point) -> Result<(usize, [f64; 3])> {
        let (lo, hi) = self.bounding_box();
        if !(x[0] >= lo[0] - INSIDE_TOL
            && x[0] <= hi[0] + INSIDE_TOL
            && x[1] >= lo[1] - INSIDE_TOL
            && x[1] <= hi[1] + INSIDE_TOL)
        {
            return Err(Error::DomainViolation { x: x[0], y: x[1] });
        }
        let xc = [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];
        let cell = self.grid.cell_of(xc);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.grid.cells[cell] {
            let l = self.barycentric(t, xc);
            let m = l[0].min(l[1]).min(l[2]);
            if m >= -INSIDE_TOL {
                return Ok((t, clamp_barycentric(l)));
            }
            if best.map_or(true, |(_, _, bm)| m > bm) {
                best = Some((t, l, m));
            }
        }
        // Rounding right at a hull edge can leave every candidate marginally
        // negative; accept the closest one if it is still near.
        match best {
            Some((t, l, m)) if m >= -1e-9 => Ok((t, clamp_barycentric(l))),
            _ => Err(Error::DomainViolation { x: x[0], y: x[1] }),
        }
    }

    /// Counts how many triangles share each undirected edge.
    pub fn edge_multiplicities(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for i in 0..3 {
                let a = tri[i];
                let b = tri[(i + 1) % 3];
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Writes the plain-text mesh format:
    /// `vertices <n> triangles <m>`, then `x y boundary_flag` per vertex,
    /// then three 0-based vertex indices per triangle.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "vertices {} triangles {}", self.vertices.len(), self.triangles.len())?;
        for (v, b) in self.vertices.iter().zip(&self.boundary_vertex_flags) {
            writeln!(w, "{:e} {:e} {}", v[0], v[1], u8::from(*b))?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mesh file".into()))??;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 4 || tok[0] != "vertices" || tok[2] != "triangles" {
            return Err(Error::Parse(format!("bad mesh header: {header:?}")));
        }
        let nv: usize = tok[1].parse().map_err(|e| Error::Parse(format!("{e}")))?;
        let nt: usize = tok[3].parse().map_err(|e| Error::Parse(format!("{e}")))?;
        let mut vertices = Vec::with_capacity(nv);
        let mut boundary = Vec::with_capacity(nv);
        let mut triangles = Vec::with_capacity(nt);
        let parse_err = |line: &str| Error::Parse(format!("bad mesh line: {line:?}"));
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated vertex list".into()))??;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(&line));
            }
            let x: f64 = f[0].parse().map_err(|_| parse_err(&line))?;
            let y: f64 = f[1].parse().map_err(|_| parse_err(&line))?;
            let b: u8 = f[2].parse().map_err(|_| parse_err(&line))?;
            vertices.push([x, y]);
            boundary.push(b != 0);
        }
        for _ in 0..nt {
            let line = lines.next().ok_or_else(|| Error::Parse("truncated triangle list".into()))??;
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| parse_err(&line)))
                .collect::<Result<_>>()?;
            if f.len() != 3 {
                return Err(parse_err(&line));
            }
            triangles.push([f[0], f[1], f[2]]);
        }
        Self::from_parts(vertices, triangles, boundary)
    }
}

pub(crate) fn barycentric_in(p: [Point; 3], x: Point) -> [f64; 3] {
    let [a, b, c] = p;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (x[1] - a[1]) * (c[0] - a[0])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0])) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn clamp_barycentric(l: [f64; 3]) -> [f64; 3] {
    let c = l.map(|v| v.max(0.0));
    let s = c[0] + c[1] + c[2];
    c.map(|v| v / s)
}

fn bbox(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

impl BackgroundGrid {
    fn build(vertices: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (lo, hi) = bbox(vertices);
        let side = ((triangles.len() as f64 / 2.0).sqrt().round() as usize).max(1);
        let dims = [side, side];
        let cell_size = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut grid = Self {
            origin: lo,
            cell_size,
            dims,
            cells: vec![Vec::new(); side * side],
        };
        for (t, tri) in triangles.iter().enumerate() {
            let (tlo, thi) = bbox(&tri.map(|v| vertices[v]));
            let (i0, j0) = grid.index_range_lo(tlo);
            let (i1, j1) = grid.index_range_hi(thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    grid.cells[j * dims[0] + i].push(t);
                }
            }
        }
        grid
    }

    fn coord(&self, x: f64, d: usize) -> f64 {
        (x - self.origin[d]) / self.cell_size[d]
    }

    // Cell ranges are padded so boxes that merely touch a cell boundary land
    // in both neighbours.
    fn index_range_lo(&self, p: Point) -> (usize, usize) {
        let f = |d: usize| {
            let c = self.coord(p[d], d) - 1e-9;
            (c.floor().max(0.0) as usize).min(self.dims[d] - 1)
        };
        (f(0), f(1))
    }

    fn index_range_hi(&self, p: Point) -> (usize, usize) {
        let f = |d: usize| {
            let c = self.coord(p[d], d) + 1e-9;
            (c.floor().max(0.0) as usize).min(self.dims[d] - 1)
        };
        (f(0), f(1))
    }

    fn cell_of(&self, p: Point) -> usize {
        let f = |d: usize| (self.coord(p[d], d).floor().max(0.0) as usize).min(self.dims[d] - 1);
        f(1) * self.dims[0] + f(0)
    }

    fn candidates(&self, lo: Point, hi: Point) -> Vec<usize> {
        let (i0, j0) = self.index_range_lo(lo);
        let (i1, j1) = self.index_range_hi(hi);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.extend_from_slice(&self.cells[j * self.dims[0] + i]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_divisions() {
        assert!(matches!(build_unit_square_mesh(0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn smallest_mesh() {
        let m = build_unit_square_mesh(1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        assert!(m.boundary_vertex_flags().iter().all(|&b| b));
    }

    #[test]
    fn counts_and_size_for_n16() {
        let m = build_unit_square_mesh(16).unwrap();
        // brute-force count of lattice points and sub-square halves
        let mut nv = 0;
        for _ in 0..=16 {
            for _ in 0..=16 {
                nv += 1;
            }
        }
        assert_eq!(m.num_vertices(), nv);
        assert_eq!(m.num_triangles(), 2 * 16 * 16);
        let hmax = m.element_diameters().iter().cloned().fold(0.0, f64::max);
        assert_eq!(m.mesh_size(), hmax);
        assert!((m.mesh_size() - 0.088_388_347_648_318_44).abs() < 1e-12);
    }

    #[test]
    fn centroid_of_first_triangle() {
        let m = build_unit_square_mesh(4).unwrap();
        let (t, l) = m.locate_point(m.centroid(0)).unwrap();
        assert_eq!(t, 0);
        for v in l {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_tie_break_takes_smallest_index() {
        let m = build_unit_square_mesh(2).unwrap();
        let x = [0.5, 0.5];
        let vid = m
            .vertices()
            .iter()
            .position(|v| (v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15)
            .unwrap();
        let expected = *m.vertex_to_triangles()[vid].iter().min().unwrap();
        let (t, l) = m.locate_point(x).unwrap();
        assert_eq!(t, expected);
        assert!(l.iter().all(|&v| v >= -1e-12));
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outside_point_is_rejected() {
        let m = build_unit_square_mesh(2).unwrap();
        match m.locate_point([1.5, 0.5]) {
            Err(Error::DomainViolation { x, y }) => assert_eq!((x, y), (1.5, 0.5)),
            other => panic!("unexpected {other:?}"),
        }
        // within tolerance is fine
        assert!(m.locate_point([1.0 + 5e-13, 0.5]).is_ok());
    }

    #[test]
    fn areas_sum_to_one() {
        for n in 1..=32 {
            let m = build_unit_square_mesh(n).unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn every_centroid_locates_its_triangle() {
        for n in 1..=16 {
            let m = build_unit_square_mesh(n).unwrap();
            for t in 0..m.num_triangles() {
                assert_eq!(m.locate_point(m.centroid(t)).unwrap().0, t);
            }
        }
    }

    #[test]
    fn conformity() {
        let m = build_unit_square_mesh(7).unwrap();
        let on_boundary = |v: usize| m.boundary_vertex_flags()[v];
        for ((a, b), count) in m.edge_multiplicities() {
            let pa = m.vertices()[a];
            let pb = m.vertices()[b];
            // an edge lies on the boundary iff both ends sit on the same side
            let boundary_edge = on_boundary(a)
                && on_boundary(b)
                && ((pa[0] == pb[0] && (pa[0] == 0.0 || pa[0] == 1.0))
                    || (pa[1] == pb[1] && (pa[1] == 0.0 || pa[1] == 1.0)));
            assert_eq!(count, if boundary_edge { 1 } else { 2 }, "edge {a}-{b}");
        }
    }

    #[test]
    fn text_round_trip() {
        let m = build_unit_square_mesh(3).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vertices 16 triangles 18\n"));
        let back = TriMesh::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.boundary_vertex_flags(), m.boundary_vertex_flags());
    }
}
