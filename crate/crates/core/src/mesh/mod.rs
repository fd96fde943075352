//! Triangle-mesh data structure, boundary topology and discrete operators.
//!
//! A [`TriMesh`] owns one 3D vertex channel (the machined surface) plus
//! optional 2D channels holding the conformal slit domain and the optimized
//! domain. Connectivity is shared by all channels. After construction the
//! mesh is immutable except for channel attachment; every operator is a pure
//! function over it.

mod curvature;
mod io;
pub(crate) mod ops;

pub use curvature::{curvature_tensor, FaceFrame};
pub use io::{load_mesh, write_channel_ply, write_obj, MeshFormat};
pub(crate) use io::write_file;
pub use ops::{face_gradient, vertex_divergence, FaceGradients, VertexDivergence};

use std::collections::BTreeMap;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Extra per-vertex 2D position channels carried by a [`TriMesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Image of the conformal slit mapping (unit disk/annulus with slits).
    Slit,
    /// Radially re-embedded domain driving the scalar field.
    Optimized,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Slit => "slit_domain",
            Channel::Optimized => "optimized_domain",
        }
    }
}

/// Immutable triangle mesh with boundary topology and cached areas.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
    channels: BTreeMap<Channel, Vec<Point2<f64>>>,
    boundary_loops: Vec<Vec<u32>>,
    /// Loop id per vertex, -1 for interior vertices.
    vertex_loop: Vec<i32>,
    face_areas: Vec<f64>,
    dual_areas: Vec<f64>,
    /// CSR vertex -> incident faces.
    vf_offsets: Vec<u32>,
    vf_faces: Vec<u32>,
    bbox_diag: f64,
    avg_edge_len: f64,
}

impl TriMesh {
    /// Builds a mesh from raw vertices and faces, extracting boundary loops
    /// and validating manifoldness, orientation and genus 0.
    ///
    /// Closed meshes (no boundary) are accepted here; the pipeline loader
    /// [`load_mesh`] additionally requires at least one boundary loop.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if nv < 3 || faces.is_empty() {
            return Err(Error::Topology("mesh has fewer than 3 vertices or no faces".into()));
        }
        for f in &faces {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology("face with repeated vertex".into()));
            }
            for &v in f {
                if v as usize >= nv {
                    return Err(Error::Topology(format!("face index {v} out of range")));
                }
            }
        }

        // Edge map keyed on undirected edge; payload counts directed uses.
        let mut edges: BTreeMap<(u32, u32), [u32; 2]> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let dir = usize::from(a > b);
                let entry = edges.entry(key).or_insert([u32::MAX, u32::MAX]);
                if entry[dir] != u32::MAX {
                    // Same directed edge twice: inconsistent winding or >2 faces.
                    return Err(Error::NonManifold {
                        a: key.0 as usize,
                        b: key.1 as usize,
                        count: 3,
                    });
                }
                entry[dir] = fi as u32;
            }
        }

        // Boundary edges are those used in exactly one direction. Store the
        // directed boundary half-edge (a -> b) as it appears in its face so
        // loops inherit the surface orientation.
        let mut next_boundary: BTreeMap<u32, u32> = BTreeMap::new();
        for (&(a, b), &[fwd, bwd]) in &edges {
            let dir_count = usize::from(fwd != u32::MAX) + usize::from(bwd != u32::MAX);
            debug_assert!(dir_count >= 1);
            if dir_count == 1 {
                let (from, to) = if fwd != u32::MAX { (a, b) } else { (b, a) };
                if next_boundary.insert(from, to).is_some() {
                    return Err(Error::NonManifold {
                        a: from as usize,
                        b: to as usize,
                        count: 1,
                    });
                }
            }
        }

        // Walk boundary loops.
        let mut boundary_loops: Vec<Vec<u32>> = Vec::new();
        let mut visited: BTreeMap<u32, bool> = BTreeMap::new();
        for &start in next_boundary.keys() {
            if visited.contains_key(&start) {
                continue;
            }
            let mut cycle = Vec::new();
            let mut cur = start;
            loop {
                cycle.push(cur);
                visited.insert(cur, true);
                cur = *next_boundary.get(&cur).ok_or_else(|| {
                    Error::Topology("open boundary chain (non-manifold vertex)".into())
                })?;
                if cur == start {
                    break;
                }
                if cycle.len() > next_boundary.len() {
                    return Err(Error::Topology("boundary walk did not close".into()));
                }
            }
            boundary_loops.push(cycle);
        }

        // Genus check from the Euler characteristic.
        let chi = nv as i64 - edges.len() as i64 + faces.len() as i64;
        let b = boundary_loops.len() as i64;
        if chi != 2 - b {
            return Err(Error::Topology(format!(
                "genus/boundary requirements violated: chi = {chi}, boundary loops = {b}"
            )));
        }

        // Longest loop (3D arc length) becomes loop 0; ties broken by min index.
        let loop_len = |cycle: &Vec<u32>| -> f64 {
            let mut s = 0.0;
            for i in 0..cycle.len() {
                let a = vertices[cycle[i] as usize];
                let bpt = vertices[cycle[(i + 1) % cycle.len()] as usize];
                s += (bpt - a).norm();
            }
            s
        };
        let mut order: Vec<usize> = (0..boundary_loops.len()).collect();
        let lens: Vec<f64> = boundary_loops.iter().map(loop_len).collect();
        order.sort_by(|&i, &j| {
            lens[j]
                .partial_cmp(&lens[i])
                .unwrap()
                .then_with(|| boundary_loops[i].iter().min().cmp(&boundary_loops[j].iter().min()))
        });
        let boundary_loops: Vec<Vec<u32>> = order.into_iter().map(|i| boundary_loops[i].clone()).collect();

        let mut vertex_loop = vec![-1i32; nv];
        for (li, cycle) in boundary_loops.iter().enumerate() {
            for &v in cycle {
                vertex_loop[v as usize] = li as i32;
            }
        }

        // Areas; reject degenerate faces outright.
        let (mut lo, mut hi) = (vertices[0], vertices[0]);
        for p in &vertices {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let bbox_diag = (hi - lo).norm();
        let area_floor = 1e-12 * bbox_diag * bbox_diag;
        let mut face_areas = Vec::with_capacity(faces.len());
        let mut degenerate = 0usize;
        for f in &faces {
            let [a, b, c] = face_points(&vertices, f);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area < area_floor {
                degenerate += 1;
            }
            face_areas.push(area);
        }
        if degenerate > 0 {
            return Err(Error::DegenerateFaces { count: degenerate });
        }

        let mut dual_areas = vec![0.0; nv];
        for (fi, f) in faces.iter().enumerate() {
            let third = face_areas[fi] / 3.0;
            for &v in f {
                dual_areas[v as usize] += third;
            }
        }

        // Vertex -> faces CSR.
        let mut counts = vec![0u32; nv + 1];
        for f in &faces {
            for &v in f {
                counts[v as usize + 1] += 1;
            }
        }
        for i in 0..nv {
            counts[i + 1] += counts[i];
        }
        let vf_offsets = counts.clone();
        let mut cursor = counts;
        let mut vf_faces = vec![0u32; faces.len() * 3];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vf_faces[cursor[v as usize] as usize] = fi as u32;
                cursor[v as usize] += 1;
            }
        }

        let avg_edge_len = {
            let mut s = 0.0;
            for &(a, b) in edges.keys() {
                s += (vertices[b as usize] - vertices[a as usize]).norm();
            }
            s / edges.len() as f64
        };

        Ok(TriMesh {
            vertices,
            faces,
            channels: BTreeMap::new(),
            boundary_loops,
            vertex_loop,
            face_areas,
            dual_areas,
            vf_offsets,
            vf_faces,
            bbox_diag,
            avg_edge_len,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn position(&self, v: u32) -> Point3<f64> {
        self.vertices[v as usize]
    }

    pub fn face_area(&self, f: u32) -> f64 {
        self.face_areas[f as usize]
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    /// Barycentric dual-cell area per vertex (one third of incident faces).
    pub fn dual_areas(&self) -> &[f64] {
        &self.dual_areas
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn bbox_diag(&self) -> f64 {
        self.bbox_diag
    }

    pub fn avg_edge_length(&self) -> f64 {
        self.avg_edge_len
    }

    /// Boundary loops as ordered vertex cycles; loop 0 is the longest.
    pub fn boundary_loops(&self) -> &[Vec<u32>] {
        &self.boundary_loops
    }

    /// Loop id of a vertex, or `None` for interior vertices.
    pub fn vertex_loop(&self, v: u32) -> Option<usize> {
        let l = self.vertex_loop[v as usize];
        (l >= 0).then_some(l as usize)
    }

    pub fn is_boundary_vertex(&self, v: u32) -> bool {
        self.vertex_loop[v as usize] >= 0
    }

    /// Faces incident to a vertex, in construction order.
    pub fn vertex_faces(&self, v: u32) -> &[u32] {
        let (s, e) = (self.vf_offsets[v as usize] as usize, self.vf_offsets[v as usize + 1] as usize);
        &self.vf_faces[s..e]
    }

    /// One-ring fan around `v`, ordered by winding: returns the neighbor ring
    /// and the face between consecutive neighbors. For interior vertices the
    /// ring closes (`neighbors.len() == fan_faces.len()`); for boundary
    /// vertices it is an open chain (`neighbors.len() == fan_faces.len() + 1`).
    pub fn ordered_fan(&self, v: u32) -> Result<VertexFan> {
        let incident = self.vertex_faces(v);
        if incident.is_empty() {
            return Err(Error::Topology(format!("isolated vertex {v}")));
        }
        // Each incident face contributes a directed neighbor pair (a -> b)
        // such that the face winding reads (v, a, b).
        let mut pair_of_face: Vec<(u32, u32, u32)> = Vec::with_capacity(incident.len());
        for &fi in incident {
            let f = self.faces[fi as usize];
            let k = f.iter().position(|&x| x == v).unwrap();
            pair_of_face.push((f[(k + 1) % 3], f[(k + 2) % 3], fi));
        }
        let mut next: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
        for &(a, b, fi) in &pair_of_face {
            if next.insert(a, (b, fi)).is_some() {
                return Err(Error::NonManifold { a: v as usize, b: a as usize, count: 3 });
            }
        }
        // Find a start: a neighbor that is never a pair target (open fan), or
        // the smallest neighbor (closed fan).
        let mut is_target: BTreeMap<u32, bool> = BTreeMap::new();
        for &(_, b, _) in &pair_of_face {
            is_target.insert(b, true);
        }
        let start = next
            .keys()
            .find(|a| !is_target.contains_key(a))
            .copied()
            .unwrap_or_else(|| *next.keys().next().unwrap());
        let closed = next.keys().all(|a| is_target.contains_key(a));

        let mut neighbors = vec![start];
        let mut fan_faces = Vec::with_capacity(incident.len());
        let mut cur = start;
        for _ in 0..incident.len() {
            let &(b, fi) = next.get(&cur).ok_or(Error::NonManifold {
                a: v as usize,
                b: cur as usize,
                count: 1,
            })?;
            fan_faces.push(fi);
            if closed && b == start {
                break;
            }
            neighbors.push(b);
            cur = b;
        }
        if fan_faces.len() != incident.len() {
            return Err(Error::NonManifold { a: v as usize, b: v as usize, count: 1 });
        }
        Ok(VertexFan { neighbors, fan_faces, closed })
    }

    pub fn channel(&self, ch: Channel) -> Option<&[Point2<f64>]> {
        self.channels.get(&ch).map(|v| v.as_slice())
    }

    pub fn require_channel(&self, ch: Channel) -> Result<&[Point2<f64>]> {
        self.channel(ch).ok_or(Error::MissingChannel(ch))
    }

    /// Attaches or replaces a per-vertex 2D channel.
    pub fn set_channel(&mut self, ch: Channel, positions: Vec<Point2<f64>>) {
        assert_eq!(positions.len(), self.vertices.len());
        self.channels.insert(ch, positions);
    }

    /// Signed area of a face in a 2D channel (positive = preserved orientation).
    pub fn channel_signed_area(&self, ch: &[Point2<f64>], f: u32) -> f64 {
        let [a, b, c] = self.faces[f as usize];
        let (pa, pb, pc) = (ch[a as usize], ch[b as usize], ch[c as usize]);
        0.5 * ((pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x))
    }

    /// Number of faces with non-positive signed area in a 2D channel.
    pub fn channel_inverted_count(&self, ch: &[Point2<f64>]) -> usize {
        (0..self.faces.len() as u32)
            .filter(|&f| self.channel_signed_area(ch, f) <= 0.0)
            .count()
    }

    pub fn face_normal(&self, f: u32) -> Vector3<f64> {
        let [a, b, c] = face_points(&self.vertices, &self.faces[f as usize]);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Vertex normals with Max's edge-length weighting, which reproduces
    /// exact normals when a vertex and its neighbors lie on a sphere.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let pts = face_points(&self.vertices, f);
            for k in 0..3 {
                let e1 = pts[(k + 1) % 3] - pts[k];
                let e2 = pts[(k + 2) % 3] - pts[k];
                let w = 1.0 / (e1.norm_squared() * e2.norm_squared());
                normals[f[k] as usize] += w * e1.cross(&e2);
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Euclidean distance from a point to the nearest boundary vertex.
    pub fn distance_to_boundary(&self, p: Point3<f64>) -> f64 {
        self.boundary_loops
            .iter()
            .flatten()
            .map(|&v| (self.vertices[v as usize] - p).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Ordered one-ring fan returned by [`TriMesh::ordered_fan`].
#[derive(Debug, Clone)]
pub struct VertexFan {
    /// Neighbor vertices in winding order.
    pub neighbors: Vec<u32>,
    /// `fan_faces[i]` lies between `neighbors[i]` and `neighbors[i + 1]`
    /// (wrapping for closed fans).
    pub fan_faces: Vec<u32>,
    pub closed: bool,
}

pub(crate) fn face_points(vertices: &[Point3<f64>], f: &[u32; 3]) -> [Point3<f64>; 3] {
    [
        vertices[f[0] as usize],
        vertices[f[1] as usize],
        vertices[f[2] as usize],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn unit_square_two_triangles() {
        let mesh = fixtures::unit_square(1);
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.face_count(), 2);
        assert_eq!(mesh.boundary_loops().len(), 1);
        assert_eq!(mesh.boundary_loops()[0].len(), 4);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annulus_loops_and_longest_rule() {
        let mesh = fixtures::flat_annulus(1.0, 2.0, 8, 64);
        assert_eq!(mesh.boundary_loops().len(), 2);
        // Loop 0 must be the outer (longest) circle.
        let r0: f64 = mesh.boundary_loops()[0]
            .iter()
            .map(|&v| mesh.position(v).coords.norm())
            .sum::<f64>()
            / mesh.boundary_loops()[0].len() as f64;
        assert!((r0 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn torus_rejected() {
        let (vertices, faces) = fixtures::torus_raw(16, 8, 2.0, 0.5);
        let err = TriMesh::new(vertices, faces).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn dual_areas_sum_to_total() {
        let mesh = fixtures::flat_annulus(0.5, 1.0, 6, 48);
        let dual: f64 = mesh.dual_areas().iter().sum();
        assert!((dual - mesh.total_area()).abs() < 1e-10 * mesh.total_area());
    }

    #[test]
    fn ordered_fan_interior_and_boundary() {
        let mesh = fixtures::unit_square(4);
        let mut saw_closed = false;
        let mut saw_open = false;
        for v in 0..mesh.vertex_count() as u32 {
            let fan = mesh.ordered_fan(v).unwrap();
            assert_eq!(fan.fan_faces.len(), mesh.vertex_faces(v).len());
            if mesh.is_boundary_vertex(v) {
                assert!(!fan.closed);
                assert_eq!(fan.neighbors.len(), fan.fan_faces.len() + 1);
                saw_open = true;
            } else {
                assert!(fan.closed);
                assert_eq!(fan.neighbors.len(), fan.fan_faces.len());
                saw_closed = true;
            }
        }
        assert!(saw_closed && saw_open);
    }

    #[test]
    fn inverted_face_detection() {
        let mut mesh = fixtures::unit_square(1);
        let mut ch: Vec<nalgebra::Point2<f64>> = mesh
            .vertices()
            .iter()
            .map(|p| nalgebra::Point2::new(p.x, p.y))
            .collect();
        assert_eq!(mesh.channel_inverted_count(&ch), 0);
        ch.swap(0, 3);
        mesh.set_channel(Channel::Slit, ch);
        assert!(mesh.channel_inverted_count(mesh.channel(Channel::Slit).unwrap()) > 0);
    }
}
