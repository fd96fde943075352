//! Composite toolpath quality energy `E = E_w + alpha * E_k`.
//!
//! `E_w` penalizes non-uniform modeled scallop height through the symmetric
//! ratio `(K_s + K_c)/(8 |grad T|^2)` plus its reciprocal, per face. The
//! smoothness part `E_k = E_n + E_g` integrates squared normal curvature of
//! the iso-curves (per face, along the iso-tangent) and squared geodesic
//! curvature (per interior vertex, as the divergence of the normalized
//! gradient).
//!
//! [`EnergyState`] keeps per-face and per-vertex terms cached so that local
//! probes (a handful of vertices changing) cost O(one-ring) instead of a
//! full re-evaluation; the optimizer's finite differences and the radial
//! profile search both lean on this.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::mesh::ops::{cot_angle, face_field_gradient};
use crate::mesh::{face_points, FaceFrame, TriMesh};
use crate::{Error, Result, ScalarField};

/// Ball-end cutter description. The curvature entering the scallop model is
/// the reciprocal of the tool radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutterSpec {
    /// Ball radius in mm.
    pub tool_radius: f64,
    /// Metadata only.
    pub flutes: u32,
    /// Metadata only (mm).
    pub overhang: f64,
}

impl CutterSpec {
    pub fn new(tool_radius: f64) -> Result<Self> {
        if !(tool_radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tool radius must be positive, got {tool_radius}"
            )));
        }
        Ok(CutterSpec { tool_radius, flutes: 2, overhang: 0.0 })
    }

    /// Cutter curvature `K_c = 1 / tool_radius` (1/mm).
    pub fn curvature(&self) -> f64 {
        1.0 / self.tool_radius
    }
}

/// Evaluation options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Smoothness weight `alpha`.
    pub alpha: f64,
    /// Compatibility switch: evaluate the normal-curvature term along the
    /// gradient direction and unsquared instead of the squared iso-tangent
    /// form.
    pub normal_term_printed_form: bool,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams { alpha: 10.0, normal_term_printed_form: false }
    }
}

/// Energy components of one field/mesh state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_w: f64,
    pub e_n: f64,
    pub e_g: f64,
    pub e_k: f64,
    pub e: f64,
    /// Mean of `(K_s + K_c)/(8 |grad T|^2)` over the surface.
    pub avg: f64,
    pub alpha: f64,
}

/// Frozen evaluation context: curvature tensors, cutter curvature and the
/// numeric floors. Floors are pinned at construction so that local energy
/// probes stay exactly local while vertices move.
pub struct EnergyContext<'a> {
    pub mesh: &'a TriMesh,
    pub frame: &'a FaceFrame,
    k_c: f64,
    alpha: f64,
    grad_floor: f64,
    curv_floor: f64,
    en_printed: bool,
}

impl<'a> EnergyContext<'a> {
    /// `field_range` is the span of the scalar field the context will see;
    /// it fixes the gradient floor `1e-8 * range / bbox_diag`.
    pub fn new(
        mesh: &'a TriMesh,
        frame: &'a FaceFrame,
        cutter: &CutterSpec,
        params: &EnergyParams,
        field_range: f64,
    ) -> Self {
        EnergyContext {
            mesh,
            frame,
            k_c: cutter.curvature(),
            alpha: params.alpha,
            grad_floor: 1e-8 * field_range.max(0.0) / mesh.bbox_diag(),
            curv_floor: 1e-6,
            en_printed: params.normal_term_printed_form,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Scallop ratio, smoothness density and validity for one face gradient.
    fn face_values(&self, fi: u32, grad: Vector3<f64>) -> FaceValues {
        let gn = grad.norm();
        if gn == 0.0 {
            let denom = self.k_c.max(self.curv_floor);
            let floor = self.grad_floor.max(f64::MIN_POSITIVE);
            let ratio = denom / (8.0 * floor * floor);
            return FaceValues {
                ratio,
                ew: ratio + 1.0 / ratio,
                en: 0.0,
                unit: Vector3::zeros(),
                valid_dir: false,
            };
        }
        let unit = grad / gn;
        let gdir = self.frame.project(fi, &unit);
        let k_s = self.frame.directional_curvature(fi, gdir);
        let denom = (k_s + self.k_c).max(self.curv_floor);
        let gn_eff = gn.max(self.grad_floor);
        let ratio = denom / (8.0 * gn_eff * gn_eff);
        let en = if self.en_printed {
            k_s
        } else {
            let iso = Vector2::new(-gdir.y, gdir.x);
            let kn = self.frame.directional_curvature(fi, iso);
            kn * kn
        };
        FaceValues { ratio, ew: ratio + 1.0 / ratio, en, unit, valid_dir: gn > self.grad_floor }
    }
}

struct FaceValues {
    ratio: f64,
    ew: f64,
    en: f64,
    unit: Vector3<f64>,
    valid_dir: bool,
}

/// Cached evaluation state for one scalar field on one context.
pub struct EnergyState<'a> {
    ctx: &'a EnergyContext<'a>,
    values: Vec<f64>,
    /// Per-face unit gradient (zero when invalid).
    units: Vec<Vector3<f64>>,
    valid: Vec<bool>,
    /// Per-face `A * (ew + alpha * en)`.
    face_terms: Vec<f64>,
    /// Per-face `A * ratio` (numerator of Avg).
    avg_terms: Vec<f64>,
    /// Per-vertex `alpha * C_j * div^2` (interior vertices only).
    div_terms: Vec<f64>,
}

impl<'a> EnergyState<'a> {
    pub fn new(ctx: &'a EnergyContext<'a>, field: &[f64]) -> Result<Self> {
        let mesh = ctx.mesh;
        assert_eq!(field.len(), mesh.vertex_count());
        let nf = mesh.face_count();
        let mut state = EnergyState {
            ctx,
            values: field.to_vec(),
            units: vec![Vector3::zeros(); nf],
            valid: vec![false; nf],
            face_terms: vec![0.0; nf],
            avg_terms: vec![0.0; nf],
            div_terms: vec![0.0; mesh.vertex_count()],
        };
        for fi in 0..nf as u32 {
            state.refresh_face(fi);
        }
        if !state.valid.iter().any(|&v| v) {
            return Err(Error::FieldConstant);
        }
        for v in 0..mesh.vertex_count() as u32 {
            state.div_terms[v as usize] = state.div_term(v, &[]);
        }
        Ok(state)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Faces whose gradient direction is unusable (degenerate field there).
    pub fn invalid_face_count(&self) -> usize {
        self.valid.iter().filter(|&&ok| !ok).count()
    }

    fn refresh_face(&mut self, fi: u32) {
        let mesh = self.ctx.mesh;
        let f = &mesh.faces()[fi as usize];
        let grad = face_field_gradient(mesh, fi, f, &self.values, mesh.face_area(fi));
        let fv = self.ctx.face_values(fi, grad);
        let area = mesh.face_area(fi);
        self.units[fi as usize] = fv.unit;
        self.valid[fi as usize] = fv.valid_dir;
        self.face_terms[fi as usize] = area * (fv.ew + self.ctx.alpha * fv.en);
        self.avg_terms[fi as usize] = area * fv.ratio;
    }

    /// `alpha * C_j * div^2` at an interior vertex, with per-face unit
    /// gradients optionally overridden (used while probing).
    fn div_term(&self, v: u32, overrides: &[(u32, Vector3<f64>, bool)]) -> f64 {
        let mesh = self.ctx.mesh;
        if mesh.is_boundary_vertex(v) {
            return 0.0;
        }
        let lookup = |fi: u32| -> Option<Vector3<f64>> {
            for &(of, unit, ok) in overrides {
                if of == fi {
                    return ok.then_some(unit);
                }
            }
            self.valid[fi as usize].then(|| self.units[fi as usize])
        };
        let mut acc = 0.0;
        let mut any = false;
        for &fi in mesh.vertex_faces(v) {
            let x = match lookup(fi) {
                Some(x) => x,
                None => continue,
            };
            any = true;
            let f = mesh.faces()[fi as usize];
            let k = f.iter().position(|&w| w == v).unwrap();
            let pts = face_points(mesh.vertices(), &f);
            let (p, pa, pb) = (pts[k], pts[(k + 1) % 3], pts[(k + 2) % 3]);
            acc += cot_angle(pb, p, pa) * (pa - p).dot(&x) + cot_angle(pa, p, pb) * (pb - p).dot(&x);
        }
        if !any {
            return 0.0;
        }
        let cj = mesh.dual_areas()[v as usize];
        let div = acc / (2.0 * cj);
        self.ctx.alpha * cj * div * div
    }

    /// Total energy, summed in fixed index order.
    pub fn total(&self) -> f64 {
        self.face_terms.iter().sum::<f64>() + self.div_terms.iter().sum::<f64>()
    }

    pub fn report(&self) -> EnergyReport {
        let mesh = self.ctx.mesh;
        let alpha = self.ctx.alpha;
        let mut e_w = 0.0;
        let mut e_n = 0.0;
        let mut avg_num = 0.0;
        for fi in 0..mesh.face_count() as u32 {
            let grad = face_field_gradient(
                mesh,
                fi,
                &mesh.faces()[fi as usize],
                &self.values,
                mesh.face_area(fi),
            );
            let fv = self.ctx.face_values(fi, grad);
            let area = mesh.face_area(fi);
            e_w += area * fv.ew;
            e_n += area * fv.en;
            avg_num += area * fv.ratio;
        }
        // div_terms carry the alpha weight; recompute the raw sum so E_g is
        // reported even when alpha is zero.
        let e_g: f64 = (0..mesh.vertex_count() as u32)
            .filter(|&v| !mesh.is_boundary_vertex(v))
            .map(|v| self.div_term_unweighted(v))
            .sum();
        let e_k = e_n + e_g;
        EnergyReport {
            e_w,
            e_n,
            e_g,
            e_k,
            e: e_w + alpha * e_k,
            avg: avg_num / mesh.total_area(),
            alpha,
        }
    }

    fn div_term_unweighted(&self, v: u32) -> f64 {
        let mesh = self.ctx.mesh;
        let mut acc = 0.0;
        let mut any = false;
        for &fi in mesh.vertex_faces(v) {
            if !self.valid[fi as usize] {
                continue;
            }
            any = true;
            let x = self.units[fi as usize];
            let f = mesh.faces()[fi as usize];
            let k = f.iter().position(|&w| w == v).unwrap();
            let pts = face_points(mesh.vertices(), &f);
            let (p, pa, pb) = (pts[k], pts[(k + 1) % 3], pts[(k + 2) % 3]);
            acc += cot_angle(pb, p, pa) * (pa - p).dot(&x) + cot_angle(pa, p, pb) * (pb - p).dot(&x);
        }
        if !any {
            return 0.0;
        }
        let cj = mesh.dual_areas()[v as usize];
        let div = acc / (2.0 * cj);
        cj * div * div
    }

    /// Faces incident to any changed vertex and the vertices of those
    /// faces, both sorted and deduplicated. Uses mark buffers above a small
    /// cutoff so large change sets stay linear.
    fn affected(&self, changes: &[(u32, f64)]) -> (Vec<u32>, Vec<u32>) {
        let mesh = self.ctx.mesh;
        let mut faces: Vec<u32> = Vec::new();
        if changes.len() <= 16 {
            for &(v, _) in changes {
                for &fi in mesh.vertex_faces(v) {
                    if !faces.contains(&fi) {
                        faces.push(fi);
                    }
                }
            }
            faces.sort_unstable();
            let mut verts: Vec<u32> = Vec::new();
            for &fi in &faces {
                for &v in &mesh.faces()[fi as usize] {
                    if !verts.contains(&v) {
                        verts.push(v);
                    }
                }
            }
            verts.sort_unstable();
            (faces, verts)
        } else {
            let mut face_mark = vec![false; mesh.face_count()];
            for &(v, _) in changes {
                for &fi in mesh.vertex_faces(v) {
                    face_mark[fi as usize] = true;
                }
            }
            let mut vert_mark = vec![false; mesh.vertex_count()];
            for (fi, &m) in face_mark.iter().enumerate() {
                if m {
                    faces.push(fi as u32);
                    for &v in &mesh.faces()[fi] {
                        vert_mark[v as usize] = true;
                    }
                }
            }
            let verts: Vec<u32> =
                (0..mesh.vertex_count() as u32).filter(|&v| vert_mark[v as usize]).collect();
            (faces, verts)
        }
    }

    /// Energy change if the listed vertices took the listed values.
    ///
    /// Exact: the returned delta equals `E(new) - E(old)` of full
    /// evaluations (the support of the change is the one-ring faces of the
    /// changed vertices plus divergence at their surrounding vertices).
    pub fn propose(&self, changes: &[(u32, f64)]) -> f64 {
        let mesh = self.ctx.mesh;
        let (faces, verts) = self.affected(changes);

        let dense: Option<Vec<f64>> = (changes.len() > 16).then(|| {
            let mut vals = self.values.clone();
            for &(v, val) in changes {
                vals[v as usize] = val;
            }
            vals
        });
        let value_of = |v: u32| -> f64 {
            if let Some(vals) = &dense {
                return vals[v as usize];
            }
            for &(cv, val) in changes {
                if cv == v {
                    return val;
                }
            }
            self.values[v as usize]
        };

        let mut delta = 0.0;
        let mut overrides: Vec<(u32, Vector3<f64>, bool)> = Vec::with_capacity(faces.len());
        for &fi in &faces {
            let f = &mesh.faces()[fi as usize];
            let vals = [value_of(f[0]), value_of(f[1]), value_of(f[2])];
            let grad = face_gradient_from_values(mesh, fi, f, vals);
            let fv = self.ctx.face_values(fi, grad);
            let area = mesh.face_area(fi);
            let term = area * (fv.ew + self.ctx.alpha * fv.en);
            delta += term - self.face_terms[fi as usize];
            overrides.push((fi, fv.unit, fv.valid_dir));
        }

        // Above the cutoff, look overrides up through a face-indexed table.
        let override_table: Option<Vec<i32>> = (overrides.len() > 16).then(|| {
            let mut table = vec![-1i32; mesh.face_count()];
            for (k, &(fi, _, _)) in overrides.iter().enumerate() {
                table[fi as usize] = k as i32;
            }
            table
        });
        for &v in &verts {
            let new_term = match &override_table {
                Some(table) => self.div_term_indexed(v, &overrides, table),
                None => self.div_term(v, &overrides),
            };
            delta += new_term - self.div_terms[v as usize];
        }
        delta
    }

    fn div_term_indexed(
        &self,
        v: u32,
        overrides: &[(u32, Vector3<f64>, bool)],
        table: &[i32],
    ) -> f64 {
        let mesh = self.ctx.mesh;
        if mesh.is_boundary_vertex(v) {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut any = false;
        for &fi in mesh.vertex_faces(v) {
            let x = if table[fi as usize] >= 0 {
                let (_, unit, ok) = overrides[table[fi as usize] as usize];
                if !ok {
                    continue;
                }
                unit
            } else if self.valid[fi as usize] {
                self.units[fi as usize]
            } else {
                continue;
            };
            any = true;
            let f = mesh.faces()[fi as usize];
            let k = f.iter().position(|&w| w == v).unwrap();
            let pts = face_points(mesh.vertices(), &f);
            let (p, pa, pb) = (pts[k], pts[(k + 1) % 3], pts[(k + 2) % 3]);
            acc += cot_angle(pb, p, pa) * (pa - p).dot(&x) + cot_angle(pa, p, pb) * (pb - p).dot(&x);
        }
        if !any {
            return 0.0;
        }
        let cj = mesh.dual_areas()[v as usize];
        let div = acc / (2.0 * cj);
        self.ctx.alpha * cj * div * div
    }

    /// Commits new values for the listed vertices and refreshes caches.
    pub fn apply(&mut self, changes: &[(u32, f64)]) {
        let (faces, verts) = self.affected(changes);
        for &(v, val) in changes {
            self.values[v as usize] = val;
        }
        for &fi in &faces {
            self.refresh_face(fi);
        }
        for &v in &verts {
            self.div_terms[v as usize] = self.div_term(v, &[]);
        }
    }

    /// Central finite difference of the energy with respect to one vertex
    /// value; exact up to rounding because both probes share the cached
    /// baseline.
    pub fn central_difference(&self, v: u32, h: f64) -> f64 {
        let t = self.values[v as usize];
        let up = self.propose(&[(v, t + h)]);
        let dn = self.propose(&[(v, t - h)]);
        (up - dn) / (2.0 * h)
    }

    /// Energy restricted to the terms that can change when `v` moves: its
    /// one-ring face terms plus divergence terms on the surrounding
    /// vertices (values there depend on the two-ring).
    pub fn local_energy(&self, v: u32) -> f64 {
        let mesh = self.ctx.mesh;
        let mut e = 0.0;
        for &fi in mesh.vertex_faces(v) {
            e += self.face_terms[fi as usize];
        }
        let mut verts: Vec<u32> = vec![v];
        for &fi in mesh.vertex_faces(v) {
            for &w in &mesh.faces()[fi as usize] {
                if !verts.contains(&w) {
                    verts.push(w);
                }
            }
        }
        for &w in &verts {
            e += self.div_terms[w as usize];
        }
        e
    }
}

fn face_gradient_from_values(
    mesh: &TriMesh,
    fi: u32,
    f: &[u32; 3],
    vals: [f64; 3],
) -> Vector3<f64> {
    let pts = face_points(mesh.vertices(), f);
    let n = mesh.face_normal(fi);
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let e = pts[(k + 2) % 3] - pts[(k + 1) % 3];
        g += vals[k] * n.cross(&e);
    }
    g / (2.0 * mesh.face_area(fi))
}

/// Evaluates all energy components of a field on a mesh.
///
/// `frame` must hold curvature tensors for the same mesh. Fails with
/// [`Error::FieldConstant`] when every face gradient is degenerate.
pub fn evaluate_energy(
    mesh: &TriMesh,
    frame: &FaceFrame,
    field: &ScalarField,
    cutter: &CutterSpec,
    params: &EnergyParams,
) -> Result<EnergyReport> {
    let range = field.max() - field.min();
    let ctx = EnergyContext::new(mesh, frame, cutter, params, range);
    let state = EnergyState::new(&ctx, &field.values)?;
    Ok(state.report())
}

/// Energy restricted to the two-ring neighborhood of a vertex; moving the
/// vertex value changes the global energy by exactly the change in this
/// local value.
pub fn local_energy(
    mesh: &TriMesh,
    frame: &FaceFrame,
    field: &ScalarField,
    vertex: u32,
    cutter: &CutterSpec,
    params: &EnergyParams,
) -> Result<f64> {
    let range = field.max() - field.min();
    let ctx = EnergyContext::new(mesh, frame, cutter, params, range);
    let state = EnergyState::new(&ctx, &field.values)?;
    Ok(state.local_energy(vertex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mesh::curvature_tensor;

    fn field_of(mesh: &TriMesh, f: impl Fn(f64, f64, f64) -> f64) -> ScalarField {
        let values: Vec<f64> = mesh.vertices().iter().map(|p| f(p.x, p.y, p.z)).collect();
        let isos = mesh
            .boundary_loops()
            .iter()
            .map(|c| values[c[0] as usize])
            .collect();
        ScalarField { values, boundary_isovalues: isos }
    }

    #[test]
    fn flat_square_linear_field_hand_value() {
        // T = x, K_c = 1: per-face density (0+1)/8 + 8/1 = 8.125 over unit area.
        let mesh = fixtures::unit_square(1);
        let frame = curvature_tensor(&mesh);
        let field = field_of(&mesh, |x, _, _| x);
        let cutter = CutterSpec::new(1.0).unwrap();
        let params = EnergyParams { alpha: 10.0, ..Default::default() };
        let rep = evaluate_energy(&mesh, &frame, &field, &cutter, &params).unwrap();
        assert!((rep.e_w - 8.125).abs() < 1e-9, "e_w = {}", rep.e_w);
        assert!(rep.e_n.abs() < 1e-12);
        assert!(rep.e_g.abs() < 1e-12);
        assert!((rep.e - 8.125).abs() < 1e-9);
        assert!((rep.avg - 0.125).abs() < 1e-12);
    }

    #[test]
    fn straight_parallel_level_lines_have_zero_eg() {
        let mesh = fixtures::plate(2.0, 1.0, 24, 12);
        let frame = curvature_tensor(&mesh);
        let field = field_of(&mesh, |x, y, _| 0.7 * x + 0.2 * y);
        let cutter = CutterSpec::new(2.0).unwrap();
        let rep =
            evaluate_energy(&mesh, &frame, &field, &cutter, &EnergyParams::default()).unwrap();
        assert!(rep.e_g.abs() < 1e-8, "e_g = {}", rep.e_g);
    }

    #[test]
    fn constant_field_is_an_error() {
        let mesh = fixtures::unit_square(3);
        let frame = curvature_tensor(&mesh);
        let field = field_of(&mesh, |_, _, _| 1.0);
        let cutter = CutterSpec::new(1.0).unwrap();
        let err = evaluate_energy(&mesh, &frame, &field, &cutter, &EnergyParams::default());
        assert!(matches!(err, Err(Error::FieldConstant)));
    }

    #[test]
    fn amgm_floor_on_ew() {
        let mesh = fixtures::freeform_two_hole();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        for scale in [0.02, 0.1, 1.0, 7.5] {
            let field = field_of(&mesh, |x, y, z| scale * (x + 0.3 * y + 0.1 * z));
            let rep =
                evaluate_energy(&mesh, &frame, &field, &cutter, &EnergyParams::default()).unwrap();
            assert!(
                rep.e_w >= 2.0 * mesh.total_area() - 1e-9,
                "E_w = {} < 2 area = {}",
                rep.e_w,
                2.0 * mesh.total_area()
            );
        }
    }

    #[test]
    fn scale_response() {
        let mesh = fixtures::freeform_two_hole();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let base = field_of(&mesh, |x, y, _| x + 0.5 * y);
        let s = 3.0;
        let scaled = ScalarField {
            values: base.values.iter().map(|v| s * v).collect(),
            boundary_isovalues: base.boundary_isovalues.iter().map(|v| s * v).collect(),
        };
        let r0 = evaluate_energy(&mesh, &frame, &base, &cutter, &params).unwrap();
        let r1 = evaluate_energy(&mesh, &frame, &scaled, &cutter, &params).unwrap();
        // Smoothness terms use only the normalized gradient.
        assert!((r0.e_n - r1.e_n).abs() < 1e-9 * r0.e_n.abs().max(1.0));
        assert!((r0.e_g - r1.e_g).abs() < 1e-9 * r0.e_g.abs().max(1.0));
        // Avg scales by 1/s^2.
        assert!((r1.avg - r0.avg / (s * s)).abs() < 1e-9 * r0.avg);
        assert!(r1.e_w > 2.0 * mesh.total_area());
    }

    #[test]
    fn local_and_global_finite_differences_agree() {
        let mesh = fixtures::freeform_two_hole();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let field = field_of(&mesh, |x, y, z| {
            ((x * x + y * y).sqrt() + 0.2 * z + 40.0) / 70.0
        });
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, field.max() - field.min());
        let state = EnergyState::new(&ctx, &field.values).unwrap();

        // Deterministic vertex sample.
        let step = (mesh.vertex_count() / 100).max(1);
        let h = 1e-6;
        let mut checked = 0;
        for v in (0..mesh.vertex_count() as u32).step_by(step) {
            // Global FD: full re-evaluation at shifted values.
            let mut up = field.values.clone();
            up[v as usize] += h;
            let mut dn = field.values.clone();
            dn[v as usize] -= h;
            let eu = EnergyState::new(&ctx, &up).unwrap().total();
            let ed = EnergyState::new(&ctx, &dn).unwrap().total();
            let global = (eu - ed) / (2.0 * h);
            let local = state.central_difference(v, h);
            let denom = global.abs().max(1e-9);
            assert!(
                (local - global).abs() / denom < 1e-6,
                "v = {v}: local {local} vs global {global}"
            );
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn local_energy_ignores_far_changes() {
        let mesh = fixtures::plate(1.0, 1.0, 10, 10);
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(5.0).unwrap();
        let params = EnergyParams::default();
        let field = field_of(&mesh, |x, y, _| x + 0.1 * y);
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 2.0);
        let mut state = EnergyState::new(&ctx, &field.values).unwrap();

        let center = (0..mesh.vertex_count() as u32)
            .find(|&v| {
                let p = mesh.position(v);
                (p.x - 0.5).abs() < 0.06 && (p.y - 0.5).abs() < 0.06
            })
            .unwrap();
        let local_before = state.local_energy(center);
        // Change a corner vertex far outside the two-ring of `center`.
        let far = (0..mesh.vertex_count() as u32)
            .find(|&v| {
                let p = mesh.position(v);
                p.x < 0.05 && p.y < 0.05
            })
            .unwrap();
        state.apply(&[(far, 5.0)]);
        assert_eq!(state.local_energy(center), local_before);
    }

    #[test]
    fn flat_two_ring_linear_field_zero_smoothness() {
        let mesh = fixtures::plate(1.0, 1.0, 8, 8);
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(1.0).unwrap();
        let field = field_of(&mesh, |x, _, _| x);
        let params = EnergyParams { alpha: 10.0, ..Default::default() };
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 1.0);
        let state = EnergyState::new(&ctx, &field.values).unwrap();
        let v = (0..mesh.vertex_count() as u32).find(|&v| !mesh.is_boundary_vertex(v)).unwrap();
        // E_k contribution: local energy minus the pure scallop part.
        let mut ew_local = 0.0;
        for &fi in mesh.vertex_faces(v) {
            let area = mesh.face_area(fi);
            ew_local += area * 8.125;
        }
        assert!((state.local_energy(v) - ew_local).abs() < 1e-9);
    }

    #[test]
    fn incremental_matches_scratch_after_apply() {
        let mesh = fixtures::plate(1.0, 1.0, 12, 12);
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(4.0).unwrap();
        let params = EnergyParams::default();
        let field = field_of(&mesh, |x, y, _| x + y * y * 0.3);
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 2.0);
        let mut state = EnergyState::new(&ctx, &field.values).unwrap();

        let v = (mesh.vertex_count() / 2) as u32;
        let delta = state.propose(&[(v, 0.77)]);
        let before = state.total();
        state.apply(&[(v, 0.77)]);
        let after = state.total();
        assert!((after - (before + delta)).abs() < 1e-9 * after.abs());

        let scratch = EnergyState::new(&ctx, state.values()).unwrap().total();
        assert!((after - scratch).abs() < 1e-9 * scratch.abs());
    }
}
