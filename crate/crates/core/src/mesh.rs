//! Triangle meshes of the 2D problem domain with boundary classification.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMark {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    marks: Vec<BoundaryMark>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl TriangleMesh {
    /// Builds a mesh, flipping clockwise triangles to counter-clockwise order.
    /// Boundary vertices are marked neumann.
    pub fn new(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Mesh(format!("need at least 3 vertices, got {}", vertices.len())));
        }
        if let Some(k) = vertices.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite { what: "vertex coordinates", index: k });
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle { index: t });
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area == 0.0 {
                return Err(Error::DegenerateTriangle { index: t });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mut mesh = Self { marks: vec![BoundaryMark::Interior; vertices.len()], vertices, triangles };
        for v in mesh.boundary_vertices() {
            mesh.marks[v] = BoundaryMark::Neumann;
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn marks(&self) -> &[BoundaryMark] {
        &self.marks
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle_coords(t);
                signed_area(a, b, c)
            })
            .sum()
    }

    /// Directed boundary edges `(a, b)` in counter-clockwise traversal order of
    /// their triangle; an edge is on the boundary iff exactly one triangle uses it.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |k| (tri[k], tri[(k + 1) % 3])))
            .filter(|&(a, b)| count[&(a.min(b), a.max(b))] == 1)
            .collect();
        edges.sort_unstable();
        edges
    }

    /// Sorted indices of vertices touching a boundary edge.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut on = vec![false; self.vertices.len()];
        for (a, b) in self.boundary_edges() {
            on[a] = true;
            on[b] = true;
        }
        (0..on.len()).filter(|&v| on[v]).collect()
    }

    /// Closed boundary loops, each an ordered vertex cycle, longest first.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let edges = self.boundary_edges();
        let mut next: HashMap<usize, usize> = HashMap::new();
        for &(a, b) in &edges {
            next.insert(a, b);
        }
        let mut starts: Vec<usize> = edges.iter().map(|e| e.0).collect();
        starts.sort_unstable();
        let mut visited = vec![false; self.vertices.len()];
        let mut loops = Vec::new();
        for s in starts {
            if visited[s] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut v = s;
            while !visited[v] {
                visited[v] = true;
                cycle.push(v);
                match next.get(&v) {
                    Some(&w) => v = w,
                    None => break,
                }
            }
            loops.push(cycle);
        }
        loops.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        loops
    }

    /// Re-marks boundary vertices satisfying `pred` as dirichlet. Interior
    /// vertices are never re-marked.
    pub fn mark_dirichlet(&self, pred: impl Fn([f64; 2]) -> bool) -> Result<TriangleMesh> {
        let mut out = self.clone();
        for (v, mark) in out.marks.iter_mut().enumerate() {
            if *mark != BoundaryMark::Interior && pred(self.vertices[v]) {
                *mark = BoundaryMark::Dirichlet;
            }
        }
        out.require_dirichlet()?;
        Ok(out)
    }

    /// Marks the given vertices dirichlet; all must be boundary vertices.
    pub fn mark_dirichlet_vertices(&self, vertices: &[usize]) -> Result<TriangleMesh> {
        let mut out = self.clone();
        for &v in vertices {
            match out.marks.get(v) {
                None => return Err(Error::Mesh(format!("vertex {v} out of range"))),
                Some(BoundaryMark::Interior) => {
                    return Err(Error::Mesh(format!("vertex {v} is not on the boundary")))
                }
                Some(_) => out.marks[v] = BoundaryMark::Dirichlet,
            }
        }
        out.require_dirichlet()?;
        Ok(out)
    }

    /// Marks a contiguous arc of the outer boundary loop as dirichlet, with
    /// random start and length a uniform fraction in `[min_frac, max_frac]` of
    /// the loop.
    pub fn mark_dirichlet_arc<R: Rng>(&self, rng: &mut R, min_frac: f64, max_frac: f64) -> Result<TriangleMesh> {
        if !(0.0 < min_frac && min_frac <= max_frac && max_frac <= 1.0) {
            return Err(Error::Config(format!("bad arc fraction range [{min_frac}, {max_frac}]")));
        }
        let loops = self.boundary_loops();
        let outer = loops.first().ok_or(Error::EmptyDirichlet)?;
        let frac = rng.gen_range(min_frac..=max_frac);
        let len = ((frac * outer.len() as f64).round() as usize).clamp(1, outer.len());
        let start = rng.gen_range(0..outer.len());
        let arc: Vec<usize> = (0..len).map(|k| outer[(start + k) % outer.len()]).collect();
        self.mark_dirichlet_vertices(&arc)
    }

    fn require_dirichlet(&self) -> Result<()> {
        if self.marks.contains(&BoundaryMark::Dirichlet) {
            Ok(())
        } else {
            Err(Error::EmptyDirichlet)
        }
    }

    pub fn dirichlet_vertices(&self) -> Vec<usize> {
        (0..self.marks.len()).filter(|&v| self.marks[v] == BoundaryMark::Dirichlet).collect()
    }

    /// Every undirected vertex adjacency `(a, b)`, `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |k| (tri[k].min(tri[(k + 1) % 3]), tri[k].max(tri[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    /// Wavefront OBJ with `z = 0` and 17 significant digits.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(48 * self.vertices.len() + 24 * self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} 0", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn load_obj_file(path: &Path) -> Result<TriangleMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        load_obj(&text)
    }
}

/// Parses `v x y [z]` and triangular `f` records; `z` is ignored. Face
/// entries may use the `v/vt/vn` form and negative (relative) indices.
pub fn load_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut it = l.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = [0.0; 2];
                for c in &mut coord {
                    *c = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Parse { line, msg: "bad vertex record".into() })?;
                }
                vertices.push(coord);
            }
            Some("f") => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(Error::NonTriangularFace { line });
                }
                let mut tri = [0usize; 3];
                for (slot, r) in tri.iter_mut().zip(&refs) {
                    let idx: i64 = r
                        .split('/')
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Parse { line, msg: format!("bad face index {r}") })?;
                    let resolved = if idx > 0 { idx - 1 } else { vertices.len() as i64 + idx };
                    if idx == 0 || resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::Parse { line, msg: format!("face index {idx} out of range") });
                    }
                    *slot = resolved as usize;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// `(k+1)²` vertices on a uniform grid over `[0,1]²`; each cell is split
/// along its `(x, y) → (x+1, y+1)` diagonal.
pub fn generate_unit_square(k: usize) -> Result<TriangleMesh> {
    if k == 0 {
        return Err(Error::Config("subdivision count must be at least 1".into()));
    }
    let h = 1.0 / k as f64;
    let idx = |x: usize, y: usize| y * (k + 1) + x;
    let mut vertices = Vec::with_capacity((k + 1) * (k + 1));
    for y in 0..=k {
        for x in 0..=k {
            // exact endpoints so boundary predicates like y == 0 behave
            let cx = if x == k { 1.0 } else { x as f64 * h };
            let cy = if y == k { 1.0 } else { y as f64 * h };
            vertices.push([cx, cy]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * k * k);
    for y in 0..k {
        for x in 0..k {
            triangles.push([idx(x, y), idx(x + 1, y), idx(x + 1, y + 1)]);
            triangles.push([idx(x, y), idx(x + 1, y + 1), idx(x, y + 1)]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Unit disk built from a center vertex and concentric rings with the given
/// vertex counts, consecutive rings stitched by angular sweep.
pub fn generate_disk(ring_counts: &[usize]) -> Result<TriangleMesh> {
    if ring_counts.is_empty() || ring_counts.iter().any(|&c| c < 3) {
        return Err(Error::Config("disk rings need at least 3 vertices each".into()));
    }
    let rings = ring_counts.len();
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = Vec::with_capacity(rings);
    let mut angles: Vec<Vec<f64>> = Vec::with_capacity(rings);
    for (r, &count) in ring_counts.iter().enumerate() {
        let radius = (r + 1) as f64 / rings as f64;
        // stagger alternate rings by half a step
        let offset = if r % 2 == 1 { 0.5 } else { 0.0 };
        ring_start.push(vertices.len());
        let a: Vec<f64> = (0..count)
            .map(|k| 2.0 * std::f64::consts::PI * (k as f64 + offset) / count as f64)
            .collect();
        for &t in &a {
            vertices.push([radius * t.cos(), radius * t.sin()]);
        }
        angles.push(a);
    }
    let mut triangles = Vec::new();
    let c0 = ring_counts[0];
    for k in 0..c0 {
        triangles.push([0, ring_start[0] + k, ring_start[0] + (k + 1) % c0]);
    }
    for r in 0..rings - 1 {
        let (inner, outer) = (&angles[r], &angles[r + 1]);
        let (ni, no) = (inner.len(), outer.len());
        let (si, so) = (ring_start[r], ring_start[r + 1]);
        let unwrap = |a: &Vec<f64>, k: usize| a[k % a.len()] + 2.0 * std::f64::consts::PI * (k / a.len()) as f64;
        let (mut i, mut o) = (0usize, 0usize);
        while i < ni || o < no {
            let next_inner = unwrap(inner, i + 1);
            let next_outer = unwrap(outer, o + 1);
            if o == no || (i < ni && next_inner < next_outer) {
                triangles.push([si + i % ni, so + o % no, si + (i + 1) % ni]);
                i += 1;
            } else {
                triangles.push([si + i % ni, so + o % no, so + (o + 1) % no]);
                o += 1;
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_counts() {
        let m1 = generate_unit_square(1).unwrap();
        assert_eq!((m1.n_vertices(), m1.triangles().len()), (4, 2));
        let m2 = generate_unit_square(2).unwrap();
        assert_eq!((m2.n_vertices(), m2.triangles().len()), (9, 8));
        assert_eq!(m2.boundary_vertices().len(), 8);
        let m10 = generate_unit_square(10).unwrap();
        assert_eq!((m10.n_vertices(), m10.triangles().len()), (121, 200));
        assert!(generate_unit_square(0).is_err());
    }

    #[test]
    fn square_area_sums_to_one() {
        for k in [1, 2, 3, 7, 16, 33, 64] {
            let m = generate_unit_square(k).unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn triangles_are_counter_clockwise() {
        let m = generate_disk(&[8, 16, 24]).unwrap();
        for t in 0..m.triangles().len() {
            let [a, b, c] = m.triangle_coords(t);
            assert!(signed_area(a, b, c) > 0.0);
        }
    }

    #[test]
    fn mark_dirichlet_bottom_edge() {
        let m = generate_unit_square(2).unwrap();
        let d = m.mark_dirichlet(|p| p[1] == 0.0).unwrap();
        assert_eq!(d.dirichlet_vertices(), vec![0, 1, 2]);
        let all = m.mark_dirichlet(|_| true).unwrap();
        assert_eq!(all.dirichlet_vertices().len(), 8);
        // the center vertex stays interior
        assert_eq!(all.marks()[4], BoundaryMark::Interior);
        assert!(matches!(m.mark_dirichlet(|_| false), Err(Error::EmptyDirichlet)));
    }

    #[test]
    fn obj_parsing() {
        let text = "# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n";
        let m = load_obj(text).unwrap();
        assert_eq!((m.n_vertices(), m.triangles().len()), (4, 2));
        assert_eq!(m.boundary_vertices().len(), 4);
        let quad = "v 0 0\nv 1 0\nv 1 1\nv 0 1\nf 1 2 3 4\n";
        assert!(matches!(load_obj(quad), Err(Error::NonTriangularFace { line: 5 })));
        assert!(load_obj("v 0 0\nv 1 0\nv 1 1\nf 1 2 9\n").is_err());
        assert!(load_obj("v 0 0\nv 1 0\n").is_err());
        let slashed = "v 0 0\nv 1 0\nv 0 1\nf 1/1/1 2/2/2 -1\n";
        assert_eq!(load_obj(slashed).unwrap().triangles().len(), 1);
    }

    #[test]
    fn clockwise_faces_are_flipped() {
        let m = load_obj("v 0 0\nv 1 0\nv 0 1\nf 1 3 2\n").unwrap();
        let [a, b, c] = m.triangle_coords(0);
        assert!(signed_area(a, b, c) > 0.0);
        assert!(load_obj("v 0 0\nv 1 0\nv 2 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn boundary_loop_of_square() {
        let m = generate_unit_square(3).unwrap();
        let loops = m.boundary_loops();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 12);
    }

    #[test]
    fn arc_marking_respects_fraction() {
        let m = generate_unit_square(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = m.mark_dirichlet_arc(&mut rng, 0.2, 0.6).unwrap();
            let count = d.dirichlet_vertices().len();
            assert!((8..=24).contains(&count), "{count}");
        }
    }
}
