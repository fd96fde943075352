//! Per-face curvature tensor estimation (Rusinkiewicz-style normal fitting).
//!
//! Each face fits a 2x2 second fundamental form to the variation of vertex
//! normals along its edges; face tensors are averaged into vertex tensors
//! and back into faces, which smooths the estimate one ring wide.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{face_points, TriMesh};

/// Per-face orthonormal tangent frames with symmetric curvature tensors.
#[derive(Debug, Clone)]
pub struct FaceFrame {
    pub basis_u: Vec<Vector3<f64>>,
    pub basis_v: Vec<Vector3<f64>>,
    /// Symmetric 2x2 tensor in the `(basis_u, basis_v)` frame; convex
    /// regions have positive eigenvalues when normals point outward.
    pub tensors: Vec<Matrix2<f64>>,
    /// False where the umbrella around the face was too degenerate.
    pub defined: Vec<bool>,
}

impl FaceFrame {
    /// Projects a 3D vector into the tangent frame of face `f`.
    pub fn project(&self, f: u32, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(v.dot(&self.basis_u[f as usize]), v.dot(&self.basis_v[f as usize]))
    }

    /// Directional normal curvature along a unit tangent direction.
    pub fn directional_curvature(&self, f: u32, unit_dir: Vector2<f64>) -> f64 {
        (unit_dir.transpose() * self.tensors[f as usize] * unit_dir).x
    }

    /// Principal curvatures of face `f`, largest first.
    pub fn principal_curvatures(&self, f: u32) -> (f64, f64) {
        let t = &self.tensors[f as usize];
        let mean = 0.5 * (t.m11 + t.m22);
        let det = t.m11 * t.m22 - t.m12 * t.m21;
        let disc = (mean * mean - det).max(0.0).sqrt();
        (mean + disc, mean - disc)
    }
}

/// Estimates per-face curvature tensors.
///
/// Degenerate umbrellas produce a zero tensor flagged in `defined`.
pub fn curvature_tensor(mesh: &TriMesh) -> FaceFrame {
    let normals = mesh.vertex_normals();
    let nf = mesh.face_count();

    // Face frames.
    let mut basis_u = Vec::with_capacity(nf);
    let mut basis_v = Vec::with_capacity(nf);
    for f in 0..nf as u32 {
        let pts = face_points(mesh.vertices(), &mesh.faces()[f as usize]);
        let n = mesh.face_normal(f);
        let t = (pts[1] - pts[0]).normalize();
        let b = n.cross(&t).normalize();
        basis_u.push(t);
        basis_v.push(b);
    }

    // Stage 1: raw per-face fit from normal differences along edges.
    let mut face_fit = vec![Matrix2::zeros(); nf];
    let mut face_ok = vec![false; nf];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let pts = face_points(mesh.vertices(), f);
        let (t, b) = (basis_u[fi], basis_v[fi]);
        let mut ata = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for j in 0..3 {
            let e = pts[(j + 2) % 3] - pts[(j + 1) % 3];
            let dn = normals[f[(j + 2) % 3] as usize] - normals[f[(j + 1) % 3] as usize];
            let (u, v) = (e.dot(&t), e.dot(&b));
            let (dnu, dnv) = (dn.dot(&t), dn.dot(&b));
            // Rows [u v 0; 0 u v] per edge, accumulated into normal equations.
            ata[(0, 0)] += u * u;
            ata[(0, 1)] += u * v;
            ata[(1, 1)] += u * u + v * v;
            ata[(1, 2)] += u * v;
            ata[(2, 2)] += v * v;
            rhs[0] += dnu * u;
            rhs[1] += dnu * v + dnv * u;
            rhs[2] += dnv * v;
        }
        ata[(1, 0)] = ata[(0, 1)];
        ata[(2, 1)] = ata[(1, 2)];
        ata[(2, 0)] = ata[(0, 2)];
        if let Some(sol) = ata.lu().solve(&rhs) {
            face_fit[fi] = Matrix2::new(sol[0], sol[1], sol[1], sol[2]);
            face_ok[fi] = true;
        }
    }

    // Stage 2: vertex tensors, barycentric-area weighted.
    let mut vert_frames: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::with_capacity(mesh.vertex_count());
    for n in &normals {
        vert_frames.push(tangent_frame(n));
    }
    let mut vert_tensors = vec![Matrix2::zeros(); mesh.vertex_count()];
    let mut vert_weight = vec![0.0; mesh.vertex_count()];
    for v in 0..mesh.vertex_count() as u32 {
        let (vu, vv) = vert_frames[v as usize];
        for &fi in mesh.vertex_faces(v) {
            if !face_ok[fi as usize] {
                continue;
            }
            let w = mesh.face_area(fi) / 3.0;
            let proj = project_tensor(
                basis_u[fi as usize],
                basis_v[fi as usize],
                &face_fit[fi as usize],
                vu,
                vv,
            );
            vert_tensors[v as usize] += w * proj;
            vert_weight[v as usize] += w;
        }
    }
    for v in 0..mesh.vertex_count() {
        if vert_weight[v] > 0.0 {
            vert_tensors[v] /= vert_weight[v];
        }
    }

    // Stage 3: average corner-vertex tensors back into the face frame.
    let mut tensors = vec![Matrix2::zeros(); nf];
    let mut defined = vec![false; nf];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let mut acc = Matrix2::zeros();
        let mut cnt = 0usize;
        for &v in f {
            if vert_weight[v as usize] > 0.0 {
                let (vu, vv) = vert_frames[v as usize];
                acc += project_tensor(vu, vv, &vert_tensors[v as usize], basis_u[fi], basis_v[fi]);
                cnt += 1;
            }
        }
        if cnt > 0 {
            tensors[fi] = acc / cnt as f64;
            defined[fi] = true;
        }
    }

    FaceFrame { basis_u, basis_v, tensors, defined }
}

fn tangent_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let pick = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = (pick - n * pick.dot(n)).normalize();
    (u, n.cross(&u))
}

/// Re-expresses a tensor from frame `(ou, ov)` in frame `(nu, nv)` after
/// rotating the target frame into the source plane.
fn project_tensor(
    ou: Vector3<f64>,
    ov: Vector3<f64>,
    tensor: &Matrix2<f64>,
    nu: Vector3<f64>,
    nv: Vector3<f64>,
) -> Matrix2<f64> {
    let old_n = ou.cross(&ov);
    let (ru, rv) = rotate_frame(nu, nv, old_n);
    let a = Vector2::new(ru.dot(&ou), ru.dot(&ov));
    let b = Vector2::new(rv.dot(&ou), rv.dot(&ov));
    let ku = (a.transpose() * tensor * a).x;
    let kuv = (a.transpose() * tensor * b).x;
    let kv = (b.transpose() * tensor * b).x;
    Matrix2::new(ku, kuv, kuv, kv)
}

/// Rotates the frame `(u, v)` so its normal aligns with `target_n`.
fn rotate_frame(
    u: Vector3<f64>,
    v: Vector3<f64>,
    target_n: Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let n = u.cross(&v);
    let ndot = n.dot(&target_n);
    if ndot <= -1.0 + 1e-12 {
        return (-u, -v);
    }
    let perp = target_n - ndot * n;
    let dperp = (n + target_n) / (1.0 + ndot);
    (u - dperp * u.dot(&perp), v - dperp * v.dot(&perp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn planar_mesh_zero_tensor() {
        let mesh = fixtures::unit_square(6);
        let frame = curvature_tensor(&mesh);
        for f in 0..mesh.face_count() as u32 {
            let (k1, k2) = frame.principal_curvatures(f);
            assert!(k1.abs() < 1e-10 && k2.abs() < 1e-10);
        }
    }

    #[test]
    fn unit_sphere_principal_curvatures() {
        let mesh = fixtures::icosphere(3, 1.0);
        let frame = curvature_tensor(&mesh);
        for f in 0..mesh.face_count() as u32 {
            let (k1, k2) = frame.principal_curvatures(f);
            assert!((k1 - 1.0).abs() < 0.05, "k1 = {k1}");
            assert!((k2 - 1.0).abs() < 0.05, "k2 = {k2}");
        }
    }

    #[test]
    fn cylinder_principal_curvatures() {
        let mesh = fixtures::cylinder(2.0, 4.0, 128, 32);
        let frame = curvature_tensor(&mesh);
        // Away from the open rims the estimate must hit {1/r, 0}.
        for (fi, f) in mesh.faces().iter().enumerate() {
            let interior = f.iter().all(|&v| !mesh.is_boundary_vertex(v));
            if !interior {
                continue;
            }
            let (k1, k2) = frame.principal_curvatures(fi as u32);
            assert!((k1 - 0.5).abs() < 0.025, "k1 = {k1}");
            assert!(k2.abs() < 0.025, "k2 = {k2}");
        }
    }

    #[test]
    fn wavy_graph_error_shrinks_under_refinement() {
        // Analytic principal curvatures of z = a sin(x/lx) cos(y/ly).
        let (a, lx, ly) = (3.0, 5.0, 7.0);
        let analytic = |x: f64, y: f64| -> (f64, f64) {
            let p = a / lx * (x / lx).cos() * (y / ly).cos();
            let q = -a / ly * (x / lx).sin() * (y / ly).sin();
            let r = -a / (lx * lx) * (x / lx).sin() * (y / ly).cos();
            let s = -a / (lx * ly) * (x / lx).cos() * (y / ly).sin();
            let t = -a / (ly * ly) * (x / lx).sin() * (y / ly).cos();
            let w = (1.0 + p * p + q * q).sqrt();
            let gauss = (r * t - s * s) / w.powi(4);
            let mean = ((1.0 + q * q) * r - 2.0 * p * q * s + (1.0 + p * p) * t) / (2.0 * w.powi(3));
            let disc = (mean * mean - gauss).max(0.0).sqrt();
            // Estimator sign convention: positive where the surface bends
            // away from the normal (sphere with outward normals is +1/R).
            (-mean + disc, -mean - disc)
        };
        let err_at = |n: usize| -> f64 {
            let flat = fixtures::plate(30.0, 30.0, n, n);
            let vertices: Vec<nalgebra::Point3<f64>> = flat
                .vertices()
                .iter()
                .map(|p| {
                    nalgebra::Point3::new(p.x, p.y, a * (p.x / lx).sin() * (p.y / ly).cos())
                })
                .collect();
            let mesh = crate::mesh::TriMesh::new(vertices, flat.faces().to_vec()).unwrap();
            let frame = curvature_tensor(&mesh);
            let mut sum_sq = 0.0;
            let mut area = 0.0;
            for (fi, f) in mesh.faces().iter().enumerate() {
                if f.iter().any(|&v| mesh.is_boundary_vertex(v)) {
                    continue;
                }
                let c = (mesh.position(f[0]).coords
                    + mesh.position(f[1]).coords
                    + mesh.position(f[2]).coords)
                    / 3.0;
                let (e1, e2) = analytic(c.x, c.y);
                let (k1, k2) = frame.principal_curvatures(fi as u32);
                let e = (k1 - e1).powi(2) + (k2 - e2).powi(2);
                sum_sq += mesh.face_area(fi as u32) * e;
                area += mesh.face_area(fi as u32);
            }
            (sum_sq / area).sqrt()
        };
        let coarse = err_at(30);
        let fine = err_at(60);
        assert!(
            fine < 0.6 * coarse,
            "halving the edge length should roughly halve the error: {coarse} -> {fine}"
        );
    }
}
