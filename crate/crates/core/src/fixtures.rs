//! Deterministic procedural test meshes.
//!
//! Everything here is closed-form arithmetic (no RNG), so repeated calls
//! produce bit-identical meshes. The holed-disk generators are the bundled
//! benchmark surfaces used by the acceptance suite and the `fixtures` CLI
//! subcommand.

use std::collections::BTreeMap;

use nalgebra::{Point2, Point3};

use crate::mesh::TriMesh;

/// Unit square `[0,1]^2` split into `2 n^2` triangles.
pub fn unit_square(n: usize) -> TriMesh {
    plate(1.0, 1.0, n, n)
}

/// Flat rectangular plate `[0,w] x [0,h]` with an `nx` by `ny` grid.
pub fn plate(w: f64, h: f64, nx: usize, ny: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Point3::new(w * i as f64 / nx as f64, h * j as f64 / ny as f64, 0.0));
        }
    }
    let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces).expect("plate fixture is valid")
}

/// Flat concentric annulus in the z = 0 plane.
pub fn flat_annulus(r_in: f64, r_out: f64, n_rad: usize, n_ang: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity((n_rad + 1) * n_ang);
    for i in 0..=n_rad {
        let r = r_in + (r_out - r_in) * i as f64 / n_rad as f64;
        for j in 0..n_ang {
            let t = 2.0 * std::f64::consts::PI * j as f64 / n_ang as f64;
            vertices.push(Point3::new(r * t.cos(), r * t.sin(), 0.0));
        }
    }
    let idx = |i: usize, j: usize| (i * n_ang + j % n_ang) as u32;
    let mut faces = Vec::with_capacity(2 * n_rad * n_ang);
    for i in 0..n_rad {
        for j in 0..n_ang {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces).expect("annulus fixture is valid")
}

/// Open cylinder tube of radius `r` and height `h` (two boundary rims).
pub fn cylinder(r: f64, h: f64, n_ang: usize, n_h: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity((n_h + 1) * n_ang);
    for j in 0..=n_h {
        let z = h * j as f64 / n_h as f64;
        for i in 0..n_ang {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n_ang as f64;
            vertices.push(Point3::new(r * t.cos(), r * t.sin(), z));
        }
    }
    let idx = |i: usize, j: usize| (j * n_ang + i % n_ang) as u32;
    let mut faces = Vec::with_capacity(2 * n_h * n_ang);
    for j in 0..n_h {
        for i in 0..n_ang {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces).expect("cylinder fixture is valid")
}

/// Closed genus-1 torus as raw buffers; used to exercise topology rejection.
pub fn torus_raw(nu: usize, nv: usize, big_r: f64, small_r: f64) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            let ring = big_r + small_r * v.cos();
            vertices.push(Point3::new(ring * u.cos(), ring * u.sin(), small_r * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % nu) * nv + j % nv) as u32;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    (vertices, faces)
}

/// Icosphere of the given subdivision level; closed surface, outward normals.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| {
            let p = Point3::new(x, y, z);
            Point3::from(p.coords.normalize() * radius)
        })
        .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a as usize].coords + vertices[b as usize].coords) / 2.0;
                    vertices.push(Point3::from(m.normalize() * radius));
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces).expect("icosphere fixture is valid")
}

/// Spherical cap of a sphere with the given radius: all points within
/// `cap_angle` radians of the +z pole. Open boundary rim, outward normals.
pub fn sphere_cap(radius: f64, cap_angle: f64, n_rings: usize, n_ang: usize) -> TriMesh {
    let mut vertices = vec![Point3::new(0.0, 0.0, radius)];
    for i in 1..=n_rings {
        let theta = cap_angle * i as f64 / n_rings as f64;
        for j in 0..n_ang {
            let t = 2.0 * std::f64::consts::PI * j as f64 / n_ang as f64;
            vertices.push(Point3::new(
                radius * theta.sin() * t.cos(),
                radius * theta.sin() * t.sin(),
                radius * theta.cos(),
            ));
        }
    }
    let ring = |i: usize, j: usize| (1 + (i - 1) * n_ang + j % n_ang) as u32;
    let mut faces = Vec::new();
    for j in 0..n_ang {
        faces.push([0u32, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..n_rings {
        for j in 0..n_ang {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces).expect("sphere cap fixture is valid")
}

/// A circular hole description for [`holed_disk`].
#[derive(Debug, Clone, Copy)]
pub struct Hole {
    pub center: Point2<f64>,
    pub radius: f64,
}

/// Flat disk of radius `outer_radius` with circular holes, meshed on a
/// hexagonal lattice of the given pitch, hole/outer rims projected onto
/// their circles and relaxed by tangential smoothing.
pub fn holed_disk(outer_radius: f64, holes: &[Hole], pitch: f64) -> TriMesh {
    let margin = 0.35 * pitch;
    let row_h = pitch * 3.0f64.sqrt() / 2.0;
    let jmax = (outer_radius / row_h).ceil() as i64 + 1;
    let imax = (outer_radius / pitch).ceil() as i64 + 1;

    let keep = |p: Point2<f64>| -> bool {
        if p.coords.norm() > outer_radius - margin {
            return false;
        }
        holes.iter().all(|h| (p - h.center).norm() > h.radius + margin)
    };

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut index: BTreeMap<(i64, i64), u32> = BTreeMap::new();
    let pos = |i: i64, j: i64| -> Point2<f64> {
        let off = if j.rem_euclid(2) == 1 { 0.5 * pitch } else { 0.0 };
        Point2::new(i as f64 * pitch + off, j as f64 * row_h)
    };
    for j in -jmax..=jmax {
        for i in -imax..=imax {
            let p = pos(i, j);
            if keep(p) {
                index.insert((i, j), vertices.len() as u32);
                vertices.push(Point3::new(p.x, p.y, 0.0));
            }
        }
    }

    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut push_face = |a: Option<&u32>, b: Option<&u32>, c: Option<&u32>| {
        if let (Some(&a), Some(&b), Some(&c)) = (a, b, c) {
            faces.push([a, b, c]);
        }
    };
    for j in -jmax..jmax {
        for i in -imax..imax {
            if j.rem_euclid(2) == 0 {
                push_face(index.get(&(i, j)), index.get(&(i + 1, j)), index.get(&(i, j + 1)));
                push_face(index.get(&(i + 1, j)), index.get(&(i + 1, j + 1)), index.get(&(i, j + 1)));
            } else {
                push_face(index.get(&(i, j)), index.get(&(i + 1, j)), index.get(&(i + 1, j + 1)));
                push_face(index.get(&(i, j)), index.get(&(i + 1, j + 1)), index.get(&(i, j + 1)));
            }
        }
    }

    // Drop vertices that lost all their faces.
    let mut used = vec![false; vertices.len()];
    for f in &faces {
        for &v in f {
            used[v as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; vertices.len()];
    let mut compact = Vec::new();
    for (vi, &u) in used.iter().enumerate() {
        if u {
            remap[vi] = compact.len() as u32;
            compact.push(vertices[vi]);
        }
    }
    for f in &mut faces {
        for v in f.iter_mut() {
            *v = remap[*v as usize];
        }
    }

    let ragged = drop_boundary_caps(compact, faces);
    relax_onto_circles(&ragged, outer_radius, holes)
}

/// Removes faces whose three vertices all sit on the same boundary loop;
/// after projection onto a circle such faces would collapse to slivers.
fn drop_boundary_caps(mut vertices: Vec<Point3<f64>>, mut faces: Vec<[u32; 3]>) -> TriMesh {
    for _ in 0..10 {
        let mesh = TriMesh::new(vertices.clone(), faces.clone()).expect("holed disk stays manifold");
        let caps: Vec<bool> = mesh
            .faces()
            .iter()
            .map(|f| {
                let loops: Vec<Option<usize>> = f.iter().map(|&v| mesh.vertex_loop(v)).collect();
                loops[0].is_some() && loops[0] == loops[1] && loops[1] == loops[2]
            })
            .collect();
        if !caps.iter().any(|&c| c) {
            return mesh;
        }
        faces = faces
            .iter()
            .zip(&caps)
            .filter(|(_, &c)| !c)
            .map(|(f, _)| *f)
            .collect();
        // Compact away vertices that lost all faces.
        let mut used = vec![false; vertices.len()];
        for f in &faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; vertices.len()];
        let mut compact = Vec::new();
        for (vi, &u) in used.iter().enumerate() {
            if u {
                remap[vi] = compact.len() as u32;
                compact.push(vertices[vi]);
            }
        }
        for f in &mut faces {
            for v in f.iter_mut() {
                *v = remap[*v as usize];
            }
        }
        vertices = compact;
    }
    panic!("boundary cap removal did not converge");
}

/// Redistributes each ragged boundary loop uniformly along its circle
/// (preserving cyclic order) and places interior vertices by a harmonic
/// (graph Laplacian) solve with the boundary fixed.
fn relax_onto_circles(mesh: &TriMesh, outer_radius: f64, holes: &[Hole]) -> TriMesh {
    #[derive(Clone, Copy)]
    struct Circle {
        center: Point2<f64>,
        radius: f64,
    }
    let mut circles = vec![Circle { center: Point2::origin(), radius: outer_radius }];
    circles.extend(holes.iter().map(|h| Circle { center: h.center, radius: h.radius }));

    let mut pts: Vec<Point2<f64>> = mesh
        .vertices()
        .iter()
        .map(|p| Point2::new(p.x, p.y))
        .collect();

    for cycle in mesh.boundary_loops() {
        // Nearest circle over the whole loop.
        let circle = circles
            .iter()
            .min_by(|a, b| {
                let score = |c: &&Circle| -> f64 {
                    cycle.iter().map(|&v| ((pts[v as usize] - c.center).norm() - c.radius).abs()).sum()
                };
                score(a).partial_cmp(&score(b)).unwrap()
            })
            .copied()
            .unwrap();
        // Winding sign of the ragged loop around the circle center.
        let angle = |v: u32| -> f64 {
            let d = pts[v as usize] - circle.center;
            d.y.atan2(d.x)
        };
        let mut winding = 0.0;
        for i in 0..cycle.len() {
            let mut da = angle(cycle[(i + 1) % cycle.len()]) - angle(cycle[i]);
            while da > std::f64::consts::PI {
                da -= 2.0 * std::f64::consts::PI;
            }
            while da < -std::f64::consts::PI {
                da += 2.0 * std::f64::consts::PI;
            }
            winding += da;
        }
        let sign = winding.signum();
        let a0 = angle(cycle[0]);
        let step = sign * 2.0 * std::f64::consts::PI / cycle.len() as f64;
        for (k, &v) in cycle.iter().enumerate() {
            let a = a0 + step * k as f64;
            pts[v as usize] =
                circle.center + nalgebra::Vector2::new(circle.radius * a.cos(), circle.radius * a.sin());
        }
    }

    // Harmonic interior: one graph-Laplacian Dirichlet solve per coordinate.
    let mut interior: Vec<u32> = Vec::new();
    let mut dof = vec![u32::MAX; mesh.vertex_count()];
    for v in 0..mesh.vertex_count() as u32 {
        if !mesh.is_boundary_vertex(v) {
            dof[v as usize] = interior.len() as u32;
            interior.push(v);
        }
    }
    if !interior.is_empty() {
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertex_count()];
        for f in mesh.faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !neighbors[a as usize].contains(&b) {
                    neighbors[a as usize].push(b);
                }
                if !neighbors[b as usize].contains(&a) {
                    neighbors[b as usize].push(a);
                }
            }
        }
        let n = interior.len();
        let mut trips: Vec<(u32, u32, f64)> = Vec::new();
        let mut rhs_x = vec![0.0; n];
        let mut rhs_y = vec![0.0; n];
        for (i, &v) in interior.iter().enumerate() {
            let nbs = &neighbors[v as usize];
            trips.push((i as u32, i as u32, nbs.len() as f64));
            for &nb in nbs {
                if dof[nb as usize] != u32::MAX {
                    trips.push((i as u32, dof[nb as usize], -1.0));
                } else {
                    rhs_x[i] += pts[nb as usize].x;
                    rhs_y[i] += pts[nb as usize].y;
                }
            }
        }
        let lap = crate::sparse::SparseMatrix::from_triplets(n, &trips);
        let sol_x = crate::sparse::solve_cg(&lap, &rhs_x, 1e-12, 20 * n + 1000)
            .expect("fixture harmonic solve");
        let sol_y = crate::sparse::solve_cg(&lap, &rhs_y, 1e-12, 20 * n + 1000)
            .expect("fixture harmonic solve");
        for (i, &v) in interior.iter().enumerate() {
            pts[v as usize] = Point2::new(sol_x[i], sol_y[i]);
        }
    }

    let vertices: Vec<Point3<f64>> = pts.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
    let out = TriMesh::new(vertices, mesh.faces().to_vec()).expect("relaxed holed disk is valid");
    // A flat fixture must keep every face upright in the plane.
    let plan: Vec<Point2<f64>> = out.vertices().iter().map(|p| Point2::new(p.x, p.y)).collect();
    assert_eq!(out.channel_inverted_count(&plan), 0, "holed disk relaxation flipped a face");
    out
}

/// Bundled benchmark: flat disk of radius 50 mm with three 7 mm holes,
/// roughly 10k faces.
pub fn three_hole_disk() -> TriMesh {
    let d = 24.0;
    let holes: Vec<Hole> = [90.0f64, 210.0, 330.0]
        .iter()
        .map(|deg| {
            let a = deg.to_radians();
            Hole { center: Point2::new(d * a.cos(), d * a.sin()), radius: 7.0 }
        })
        .collect();
    holed_disk(50.0, &holes, 1.3)
}

/// Bundled benchmark: wavy freeform disk of radius 30 mm with two 5.5 mm
/// holes, a couple of thousand faces. Curvature stays well inside the
/// gouging-free regime for a 10 mm ball-end tool.
pub fn freeform_two_hole() -> TriMesh {
    let holes = [
        Hole { center: Point2::new(-12.0, 0.0), radius: 5.5 },
        Hole { center: Point2::new(12.0, 5.0), radius: 5.5 },
    ];
    let flat = holed_disk(30.0, &holes, 2.0);
    let vertices: Vec<Point3<f64>> = flat
        .vertices()
        .iter()
        .map(|p| {
            let z = 4.5 * (p.x / 9.0).sin() * (p.y / 11.0).cos();
            Point3::new(p.x, p.y, z)
        })
        .collect();
    TriMesh::new(vertices, flat.faces().to_vec()).expect("freeform fixture is valid")
}

/// Bundled benchmark: flat one-hole disk (annulus topology but meshed
/// unstructured), radius 25 mm with an off-center 6 mm hole.
pub fn one_hole_disk() -> TriMesh {
    let holes = [Hole { center: Point2::new(6.0, -3.0), radius: 6.0 }];
    holed_disk(25.0, &holes, 1.6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_hole_disk_shape() {
        let mesh = three_hole_disk();
        assert_eq!(mesh.boundary_loops().len(), 4);
        assert!(mesh.face_count() > 8000, "{} faces", mesh.face_count());
        assert!(mesh.face_count() < 14000, "{} faces", mesh.face_count());
        // Outer loop sits on the radius-50 circle after relaxation.
        for &v in &mesh.boundary_loops()[0] {
            let r = (mesh.position(v).x.powi(2) + mesh.position(v).y.powi(2)).sqrt();
            assert!((r - 50.0).abs() < 1e-9);
        }
        // Mesh quality: no tiny angles that would poison the solvers.
        let mut min_angle = f64::INFINITY;
        for f in mesh.faces() {
            for k in 0..3 {
                let p = mesh.position(f[k]);
                let a = mesh.position(f[(k + 1) % 3]);
                let b = mesh.position(f[(k + 2) % 3]);
                let u = (a - p).normalize();
                let w = (b - p).normalize();
                min_angle = min_angle.min(u.dot(&w).clamp(-1.0, 1.0).acos());
            }
        }
        assert!(min_angle.to_degrees() > 10.0, "min angle {}", min_angle.to_degrees());
    }

    #[test]
    fn freeform_has_two_holes() {
        let mesh = freeform_two_hole();
        assert_eq!(mesh.boundary_loops().len(), 3);
        assert!(mesh.face_count() > 800);
    }

    #[test]
    fn fixtures_are_deterministic() {
        let a = three_hole_disk();
        let b = three_hole_disk();
        assert_eq!(a.vertex_count(), b.vertex_count());
        for (pa, pb) in a.vertices().iter().zip(b.vertices()) {
            assert_eq!(pa, pb);
        }
    }
}
