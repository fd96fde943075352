//! Discrete differential operators: face gradients and vertex divergence.

use nalgebra::Vector3;

use super::{face_points, TriMesh};

/// Per-face constant gradients of a piecewise-linear vertex field.
#[derive(Debug, Clone)]
pub struct FaceGradients {
    pub vectors: Vec<Vector3<f64>>,
    /// False where the face was too degenerate to carry a gradient.
    pub valid: Vec<bool>,
}

/// Gradient of the piecewise-linear interpolant of `field`, constant per face.
///
/// Faces with area below the scale-free floor are flagged invalid and get a
/// zero vector.
pub fn face_gradient(mesh: &TriMesh, field: &[f64]) -> FaceGradients {
    assert_eq!(field.len(), mesh.vertex_count());
    let area_floor = 1e-12 * mesh.bbox_diag() * mesh.bbox_diag();
    let mut vectors = Vec::with_capacity(mesh.face_count());
    let mut valid = Vec::with_capacity(mesh.face_count());
    for (fi, f) in mesh.faces().iter().enumerate() {
        let area = mesh.face_area(fi as u32);
        if area < area_floor {
            vectors.push(Vector3::zeros());
            valid.push(false);
            continue;
        }
        vectors.push(face_field_gradient(mesh, fi as u32, f, field, area));
        valid.push(true);
    }
    FaceGradients { vectors, valid }
}

/// Gradient on a single face; `area` must be the face area.
pub(crate) fn face_field_gradient(
    mesh: &TriMesh,
    fi: u32,
    f: &[u32; 3],
    field: &[f64],
    area: f64,
) -> Vector3<f64> {
    let pts = face_points(mesh.vertices(), f);
    let n = mesh.face_normal(fi);
    // grad T = 1/(2A) * sum_i T_i (n x e_i), e_i the edge opposite vertex i.
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let e = pts[(k + 2) % 3] - pts[(k + 1) % 3];
        g += field[f[k] as usize] * n.cross(&e);
    }
    g / (2.0 * area)
}

/// Per-vertex divergence of a per-face vector field.
#[derive(Debug, Clone)]
pub struct VertexDivergence {
    pub values: Vec<f64>,
    /// False where no valid incident face contributed.
    pub defined: Vec<bool>,
}

/// Cotangent-weight divergence of a face-constant field, normalized by twice
/// the dual-cell area:
///
/// `div(j) = 1/(2 C_j) * sum_{faces k at j} cot(t1) e1.X_k + cot(t2) e2.X_k`
///
/// where `e1`, `e2` are the edges of face `k` leaving `j` and `t1`, `t2` the
/// angles opposite them. Faces flagged invalid in `valid` are skipped.
pub fn vertex_divergence(mesh: &TriMesh, field: &[Vector3<f64>], valid: &[bool]) -> VertexDivergence {
    assert_eq!(field.len(), mesh.face_count());
    let mut values = vec![0.0; mesh.vertex_count()];
    let mut defined = vec![false; mesh.vertex_count()];
    for v in 0..mesh.vertex_count() as u32 {
        let (val, def) = divergence_at(mesh, v, |fi| {
            if valid[fi as usize] {
                Some(field[fi as usize])
            } else {
                None
            }
        });
        values[v as usize] = val;
        defined[v as usize] = def;
    }
    VertexDivergence { values, defined }
}

/// Divergence at one vertex with a caller-supplied per-face field lookup
/// (`None` skips the face). Used by the energy module to probe perturbed
/// gradients without materializing a full field.
pub(crate) fn divergence_at<F>(mesh: &TriMesh, v: u32, field_of: F) -> (f64, bool)
where
    F: Fn(u32) -> Option<Vector3<f64>>,
{
    let mut acc = 0.0;
    let mut any = false;
    for &fi in mesh.vertex_faces(v) {
        let x = match field_of(fi) {
            Some(x) => x,
            None => continue,
        };
        any = true;
        let f = mesh.faces()[fi as usize];
        let k = f.iter().position(|&x| x == v).unwrap();
        let pts = face_points(mesh.vertices(), &f);
        let p = pts[k];
        let pa = pts[(k + 1) % 3];
        let pb = pts[(k + 2) % 3];
        let e1 = pa - p;
        let e2 = pb - p;
        // Angle opposite e1 sits at pb; opposite e2 sits at pa.
        acc += cot_angle(pb, p, pa) * e1.dot(&x) + cot_angle(pa, p, pb) * e2.dot(&x);
    }
    let cj = mesh.dual_areas()[v as usize];
    if any && cj > 0.0 {
        (acc / (2.0 * cj), true)
    } else {
        (0.0, false)
    }
}

/// Cotangent of the angle at `apex` formed by rays to `a` and `b`.
pub(crate) fn cot_angle(
    apex: nalgebra::Point3<f64>,
    a: nalgebra::Point3<f64>,
    b: nalgebra::Point3<f64>,
) -> f64 {
    let u = a - apex;
    let w = b - apex;
    let cross = u.cross(&w).norm();
    if cross <= f64::MIN_POSITIVE {
        return 0.0;
    }
    u.dot(&w) / cross
}
