//! Topology-preserving variational optimization of the domain radii.
//!
//! Vertices of the optimized domain move only along their meridians, so
//! the scalar field stays `T(v) = ||V^H||` and boundary loops stay exactly
//! co-circular (one shared radius scalar per loop, moved synchronously).
//! Feasible radial intervals come from the angle-bisector hull of each
//! one-ring: the three bisector sectors of a triangle are pairwise
//! separated by the bisector lines, so even simultaneous moves keep every
//! face upright. Steps oppose finite-difference gradients of the local
//! energy and are squashed into the feasible intervals by a logistic
//! normalization; a global acceptance check with step halving makes the
//! accepted energy sequence non-increasing.

use std::time::Instant;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainEmbedding, ScalarField};
use crate::energy::{CutterSpec, EnergyContext, EnergyParams, EnergyReport, EnergyState};
use crate::mesh::{FaceFrame, TriMesh};
use crate::{Error, Result};

/// Safe radial displacement range of one vertex.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeasibleInterval {
    /// Outward limit, strictly positive.
    pub lambda_plus: f64,
    /// Inward limit, strictly negative.
    pub lambda_minus: f64,
    pub source: IntervalSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalSource {
    InteriorHull,
    BoundaryHullWithArcCap,
}

impl FeasibleInterval {
    pub fn tightness(&self) -> f64 {
        self.lambda_plus.min(-self.lambda_minus)
    }
}

/// Optimization knobs; defaults follow the step constant 0.9 and the
/// convergence window used throughout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeConfig {
    /// Step aggressiveness `C` in (0.5, 1): the steepest entry moves
    /// `2C - 1` of its feasible limit.
    pub step_constant: f64,
    pub max_iters: usize,
    /// Converged when the relative decrease stays below this...
    pub rel_tol: f64,
    /// ...for this many consecutive accepted iterations.
    pub tol_window: usize,
    pub max_halvings: usize,
    /// Finite-difference step as a fraction of the tighter interval side.
    pub fd_step_frac: f64,
    /// Applied steps are clipped to this fraction of the interval.
    pub interval_margin: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            step_constant: 0.9,
            max_iters: 2000,
            rel_tol: 1e-7,
            tol_window: 5,
            max_halvings: 10,
            fd_step_frac: 1e-4,
            interval_margin: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub e: f64,
    pub e_w: f64,
    pub e_k: f64,
    pub max_step: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIters,
    /// No descent step was accepted at the first iteration.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub embedding: DomainEmbedding,
    pub field: ScalarField,
    pub report: EnergyReport,
    pub trace: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Accepted iterations.
    pub iterations: usize,
}

/// One movable unknown: an interior vertex or a whole inner boundary loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEntry {
    Vertex(u32),
    Loop(usize),
}

/// Feasible radial interval of a vertex from the angle-bisector hull of
/// its one-ring in the current 2D embedding. Boundary vertices get an
/// additional arc cap (mean incident edge length) because their hulls can
/// be unbounded through the open side.
pub fn feasible_interval(
    mesh: &TriMesh,
    positions: &[Point2<f64>],
    v: u32,
) -> Result<FeasibleInterval> {
    let p = positions[v as usize];
    let radius = p.coords.norm();
    if radius == 0.0 {
        return Err(Error::MeshStateInvalid(format!("vertex {v} sits at the domain origin")));
    }
    let meridian = p.coords / radius;

    let mut lambda_plus = f64::INFINITY;
    let mut lambda_minus = f64::NEG_INFINITY;
    let mut edge_len_sum = 0.0;
    let mut edge_count = 0.0;

    for &fi in mesh.vertex_faces(v) {
        let f = mesh.faces()[fi as usize];
        let k = f.iter().position(|&w| w == v).unwrap();
        let a = positions[f[(k + 1) % 3] as usize];
        let b = positions[f[(k + 2) % 3] as usize];
        edge_len_sum += (a - p).norm() + (b - p).norm();
        edge_count += 2.0;

        // Interior-angle bisectors at the two corners not at v, keeping the
        // half-plane that contains v.
        for (corner, other) in [(a, b), (b, a)] {
            let to_v = p - corner;
            let to_other = other - corner;
            let (nv, no) = (to_v.norm(), to_other.norm());
            if nv <= f64::MIN_POSITIVE || no <= f64::MIN_POSITIVE {
                return Err(Error::MeshStateInvalid(format!(
                    "degenerate one-ring around vertex {v}"
                )));
            }
            let dir = to_v / nv + to_other / no;
            // Normal of the bisector line; orient it away from v.
            let mut normal = Vector2::new(-dir.y, dir.x);
            let side = normal.dot(&to_v);
            if side > 0.0 {
                normal = -normal;
            } else if side == 0.0 {
                return Err(Error::MeshStateInvalid(format!(
                    "vertex {v} sits on a bisector line"
                )));
            }
            // Constraint: normal . (x - corner) <= 0, with x = p + t * meridian.
            let slack = -normal.dot(&to_v); // -normal.(p - corner) > 0
            let denom = normal.dot(&meridian);
            if denom > 1e-300 {
                lambda_plus = lambda_plus.min(slack / denom);
            } else if denom < -1e-300 {
                lambda_minus = lambda_minus.max(slack / denom);
            }
        }
    }

    // Keep the radius positive: angles are frozen, so crossing the origin
    // would silently mirror the vertex.
    lambda_minus = lambda_minus.max(-0.999 * radius);

    let source = if mesh.is_boundary_vertex(v) {
        let cap = edge_len_sum / edge_count;
        lambda_plus = lambda_plus.min(cap);
        lambda_minus = lambda_minus.max(-cap);
        IntervalSource::BoundaryHullWithArcCap
    } else {
        IntervalSource::InteriorHull
    };

    if !(lambda_minus < 0.0 && lambda_plus > 0.0) {
        return Err(Error::MeshStateInvalid(format!(
            "vertex {v} is not strictly inside its feasibility hull"
        )));
    }
    Ok(FeasibleInterval { lambda_plus, lambda_minus, source })
}

/// Finite-difference energy gradient of one entry with respect to its
/// radial position. Boundary entries sum their member gradients.
pub fn radial_gradient(
    mesh: &TriMesh,
    state: &EnergyState,
    entry: GradientEntry,
    h: f64,
) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    match entry {
        GradientEntry::Vertex(v) => state.central_difference(v, h),
        GradientEntry::Loop(li) => mesh.boundary_loops()[li]
            .iter()
            .map(|&v| state.central_difference(v, h))
            .sum(),
    }
}

/// Logistic step normalization: the steepest entry moves `2C - 1` of its
/// feasible limit, everything else proportionally less, and every step
/// opposes its gradient.
pub fn step_lengths(gradients: &[f64], limits: &[(f64, f64)], c: f64) -> Vec<f64> {
    assert_eq!(gradients.len(), limits.len());
    assert!(c > 0.5 && c < 1.0, "step constant must lie in (0.5, 1)");
    let limit_of = |g: f64, lim: (f64, f64)| -> f64 {
        if g > 0.0 {
            lim.1.abs() // moving inward, toward lambda_minus
        } else {
            lim.0.abs()
        }
    };
    let g1: Vec<f64> = gradients
        .iter()
        .zip(limits)
        .map(|(&g, &lim)| {
            let l = limit_of(g, lim);
            if l > 0.0 {
                -g / l
            } else {
                0.0
            }
        })
        .collect();
    let max_g1 = g1.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max_g1 == 0.0 {
        return vec![0.0; gradients.len()];
    }
    let k = (1.0 / c - 1.0).ln();
    gradients
        .iter()
        .zip(limits)
        .zip(&g1)
        .map(|((&g, &lim), &g1i)| {
            let g2 = k * g1i / max_g1;
            (2.0 / (1.0 + g2.exp()) - 1.0) * limit_of(g, lim)
        })
        .collect()
}

/// Runs the variational loop until convergence, stall or the iteration cap.
///
/// The accepted energy sequence is non-increasing, every accepted state has
/// zero inverted faces, and boundary loops stay co-circular exactly.
pub fn optimize(
    mesh: &TriMesh,
    frame: &FaceFrame,
    embedding: DomainEmbedding,
    cutter: &CutterSpec,
    params: &EnergyParams,
    config: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let mut emb = embedding;
    let nv = mesh.vertex_count();
    assert_eq!(emb.radii.len(), nv);

    let trig: Vec<(f64, f64)> = emb.angles.iter().map(|&a| (a.cos(), a.sin())).collect();
    let positions_of = |radii: &[f64]| -> Vec<Point2<f64>> {
        radii
            .iter()
            .zip(&trig)
            .map(|(&r, &(c, s))| Point2::new(r * c, r * s))
            .collect()
    };
    let inverted_count = |radii: &[f64]| -> usize {
        let pos = positions_of(radii);
        mesh.channel_inverted_count(&pos)
    };

    if inverted_count(&emb.radii) > 0 {
        return Err(Error::MeshStateInvalid("initial domain has inverted faces".into()));
    }

    // Movable entries: interior vertices plus every inner boundary loop.
    let mut entries: Vec<GradientEntry> = Vec::new();
    for v in 0..nv as u32 {
        if !mesh.is_boundary_vertex(v) {
            entries.push(GradientEntry::Vertex(v));
        }
    }
    for li in 1..mesh.boundary_loops().len() {
        entries.push(GradientEntry::Loop(li));
    }

    let range = {
        let f = ScalarField::from_embedding(&emb);
        f.max() - f.min()
    };
    let ctx = EnergyContext::new(mesh, frame, cutter, params, range);
    let mut state = EnergyState::new(&ctx, &emb.radii)?;
    let mut energy = state.total();

    let mut trace: Vec<IterationRecord> = Vec::new();
    {
        let rep = state.report();
        trace.push(IterationRecord {
            iter: 0,
            e: energy,
            e_w: rep.e_w,
            e_k: rep.e_k,
            max_step: 0.0,
            wall_ms: 0.0,
        });
    }

    let scale = mesh.bbox_diag();
    let freeze_floor = 1e-12 * scale;
    let mut stop = StopReason::MaxIters;
    let mut accepted = 0usize;
    let mut calm_streak = 0usize;

    for iter in 1..=config.max_iters {
        let t0 = Instant::now();
        let positions = positions_of(&emb.radii);

        // Intervals and gradients per entry.
        let mut limits: Vec<(f64, f64)> = Vec::with_capacity(entries.len());
        let mut gradients: Vec<f64> = Vec::with_capacity(entries.len());
        for entry in &entries {
            let lim = match *entry {
                GradientEntry::Vertex(v) => {
                    let iv = feasible_interval(mesh, &positions, v)?;
                    (iv.lambda_plus, iv.lambda_minus)
                }
                GradientEntry::Loop(li) => {
                    let mut lo = f64::NEG_INFINITY;
                    let mut hi = f64::INFINITY;
                    for &v in &mesh.boundary_loops()[li] {
                        let iv = feasible_interval(mesh, &positions, v)?;
                        hi = hi.min(iv.lambda_plus);
                        lo = lo.max(iv.lambda_minus);
                    }
                    (hi, lo)
                }
            };
            let tight = lim.0.min(-lim.1);
            if tight < freeze_floor {
                limits.push(lim);
                gradients.push(0.0);
                continue;
            }
            let h = config.fd_step_frac * tight;
            limits.push(lim);
            gradients.push(radial_gradient(mesh, &state, *entry, h));
        }

        let mut lambdas = step_lengths(&gradients, &limits, config.step_constant);
        // Margin clip keeps strict feasibility under rounding.
        for (l, lim) in lambdas.iter_mut().zip(&limits) {
            *l = l.clamp(config.interval_margin * lim.1, config.interval_margin * lim.0);
        }
        if lambdas.iter().all(|&l| l == 0.0) {
            stop = StopReason::Converged;
            break;
        }

        // Backtracking acceptance: halve all steps until the energy drops
        // and no face inverts.
        let mut attempt = 0usize;
        let mut accepted_this = false;
        while attempt <= config.max_halvings {
            let mut changes: Vec<(u32, f64)> = Vec::new();
            let mut max_step = 0.0f64;
            for (entry, &l) in entries.iter().zip(&lambdas) {
                if l == 0.0 {
                    continue;
                }
                max_step = max_step.max(l.abs());
                match *entry {
                    GradientEntry::Vertex(v) => {
                        changes.push((v, emb.radii[v as usize] + l));
                    }
                    GradientEntry::Loop(li) => {
                        let r = emb.loop_radii[li] + l;
                        for &v in &mesh.boundary_loops()[li] {
                            changes.push((v, r));
                        }
                    }
                }
            }
            if changes.is_empty() {
                break;
            }
            let delta = state.propose(&changes);
            let ok = if delta < 0.0 {
                // Bisector sectors make simultaneous moves flip-free; the
                // acceptance contract still demands a verified state.
                let mut radii = emb.radii.clone();
                for &(v, r) in &changes {
                    radii[v as usize] = r;
                }
                inverted_count(&radii) == 0
            } else {
                false
            };
            if ok {
                state.apply(&changes);
                for (entry, &l) in entries.iter().zip(&lambdas) {
                    if l == 0.0 {
                        continue;
                    }
                    match *entry {
                        GradientEntry::Vertex(v) => {
                            emb.radii[v as usize] += l;
                        }
                        GradientEntry::Loop(li) => {
                            let r = emb.loop_radii[li] + l;
                            emb.set_loop_radius(mesh, li, r);
                        }
                    }
                }
                let new_energy = state.total();
                let rel_drop = (energy - new_energy) / energy.abs().max(f64::MIN_POSITIVE);
                energy = new_energy;
                accepted += 1;
                accepted_this = true;
                let rep = state.report();
                trace.push(IterationRecord {
                    iter,
                    e: energy,
                    e_w: rep.e_w,
                    e_k: rep.e_k,
                    max_step,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                });
                if rel_drop < config.rel_tol {
                    calm_streak += 1;
                } else {
                    calm_streak = 0;
                }
                break;
            }
            for l in &mut lambdas {
                *l *= 0.5;
            }
            attempt += 1;
        }

        if !accepted_this {
            stop = StopReason::Stalled;
            break;
        }
        if calm_streak >= config.tol_window {
            stop = StopReason::Converged;
            break;
        }
    }

    let field = ScalarField::from_embedding(&emb);
    let report = state.report();
    Ok(OptimizeResult { embedding: emb, field, report, trace, stop, iterations: accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScalarField;
    use crate::fixtures;
    use crate::mesh::{curvature_tensor, Channel, TriMesh};
    use crate::slitmap::{slit_map, AnchorSpec};

    /// Regular hexagon one-ring with the center vertex strictly interior;
    /// oriented so the meridian through the center points at ring vertex 0.
    fn hexagon_ring() -> (TriMesh, DomainEmbedding) {
        let center = nalgebra::Point2::new(3.0, 0.0);
        let mut pts2 = vec![center];
        for k in 0..6 {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            pts2.push(center + nalgebra::Vector2::new(a.cos(), a.sin()));
        }
        let vertices: Vec<nalgebra::Point3<f64>> =
            pts2.iter().map(|p| nalgebra::Point3::new(p.x, p.y, 0.0)).collect();
        let faces: Vec<[u32; 3]> =
            (0..6).map(|k| [0u32, 1 + k as u32, 1 + ((k + 1) % 6) as u32]).collect();
        let mesh = TriMesh::new(vertices, faces).unwrap();
        // Build the polar state directly: loop-radius averaging would
        // flatten the ring onto a circle and change the hull.
        let emb = DomainEmbedding {
            angles: pts2.iter().map(|p| p.y.atan2(p.x)).collect(),
            radii: pts2.iter().map(|p| p.coords.norm()).collect(),
            loop_radii: vec![0.0],
        };
        (mesh, emb)
    }

    #[test]
    fn hexagon_interval_symmetric_and_sharp() {
        let (mesh, emb) = hexagon_ring();
        let positions = emb.positions();
        let iv = feasible_interval(&mesh, &positions, 0).unwrap();
        assert_eq!(iv.source, IntervalSource::InteriorHull);
        assert!(
            (iv.lambda_plus + iv.lambda_minus).abs() < 1e-12,
            "centered hexagon must give a symmetric interval: {iv:?}"
        );

        // Brute force: no inversion anywhere strictly inside the interval...
        let trig: Vec<(f64, f64)> = emb.angles.iter().map(|&a| (a.cos(), a.sin())).collect();
        let inversions_at = |lambda: f64| -> usize {
            let mut radii = emb.radii.clone();
            radii[0] += lambda;
            let pos: Vec<nalgebra::Point2<f64>> = radii
                .iter()
                .zip(&trig)
                .map(|(&r, &(c, s))| nalgebra::Point2::new(r * c, r * s))
                .collect();
            mesh.channel_inverted_count(&pos)
        };
        for k in 0..1000 {
            let t = (k as f64 + 0.5) / 1000.0;
            let lambda = iv.lambda_minus * (1.0 - t) + iv.lambda_plus * t;
            let lambda = lambda * 0.999;
            assert_eq!(inversions_at(lambda), 0, "inversion inside interval at {lambda}");
        }
        // The hull is conservative by construction (that is what makes
        // simultaneous moves safe): along a vertex-aligned meridian it
        // reaches exactly halfway to the ring vertex, and the face flips
        // when the center crosses the vertex itself at twice the limit.
        assert!((iv.lambda_plus - 0.5).abs() < 1e-12, "hull limit {}", iv.lambda_plus);
        assert_eq!(inversions_at(1.99 * iv.lambda_plus), 0);
        assert!(inversions_at(2.01 * iv.lambda_plus) > 0);
    }

    #[test]
    fn boundary_vertex_interval_is_bounded() {
        let mesh = fixtures::flat_annulus(0.5, 1.0, 6, 24);
        let positions: Vec<nalgebra::Point2<f64>> =
            mesh.vertices().iter().map(|p| nalgebra::Point2::new(p.x, p.y)).collect();
        let v = mesh.boundary_loops()[0][0];
        let iv = feasible_interval(&mesh, &positions, v).unwrap();
        assert_eq!(iv.source, IntervalSource::BoundaryHullWithArcCap);
        assert!(iv.lambda_plus.is_finite() && iv.lambda_minus.is_finite());
        assert!(iv.lambda_minus < 0.0 && iv.lambda_plus > 0.0);
    }

    #[test]
    fn step_lengths_match_the_analytic_cases() {
        let limits = vec![(2.0, -1.0), (4.0, -4.0), (1.0, -3.0)];
        let gradients = vec![-5.0, 0.0, 2.5];
        let lambdas = step_lengths(&gradients, &limits, 0.9);
        // Entry 0 has the largest normalized gradient: it moves 2C - 1 of
        // its outward limit.
        assert!((lambdas[0] - 0.8 * 2.0).abs() < 1e-12, "{lambdas:?}");
        // Zero gradient sits still.
        assert_eq!(lambdas[1], 0.0);
        // Positive gradient moves inward.
        assert!(lambdas[2] < 0.0);
        assert!(lambdas[2] > -3.0);
    }

    fn annulus_state() -> (TriMesh, DomainEmbedding) {
        let mesh = fixtures::flat_annulus(0.5, 1.0, 10, 48);
        let slit = slit_map(&mesh, &AnchorSpec::Boundary { loop_index: 1 }).unwrap();
        (mesh, slit.embedding)
    }

    #[test]
    fn gradient_matches_global_finite_difference() {
        let (mesh, emb) = annulus_state();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 0.5);
        let state = EnergyState::new(&ctx, &emb.radii).unwrap();
        let positions = emb.positions();

        let interior: Vec<u32> =
            (0..mesh.vertex_count() as u32).filter(|&v| !mesh.is_boundary_vertex(v)).collect();
        let step = (interior.len() / 100).max(1);
        for &v in interior.iter().step_by(step) {
            let iv = feasible_interval(&mesh, &positions, v).unwrap();
            let h = 1e-4 * iv.tightness();
            let local = radial_gradient(&mesh, &state, GradientEntry::Vertex(v), h);
            // Oracle: central difference of a full fresh evaluation.
            let mut up = emb.radii.clone();
            up[v as usize] += h;
            let mut dn = emb.radii.clone();
            dn[v as usize] -= h;
            let eu = EnergyState::new(&ctx, &up).unwrap().total();
            let ed = EnergyState::new(&ctx, &dn).unwrap().total();
            let global = (eu - ed) / (2.0 * h);
            assert!(
                (local - global).abs() <= 1e-4 * global.abs().max(1e-12),
                "v {v}: local {local} vs global {global}"
            );
        }
    }

    #[test]
    fn boundary_gradient_is_member_sum() {
        let (mesh, emb) = annulus_state();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 0.5);
        let state = EnergyState::new(&ctx, &emb.radii).unwrap();
        let h = 1e-6;
        let lhs = radial_gradient(&mesh, &state, GradientEntry::Loop(1), h);
        let rhs: f64 = mesh.boundary_loops()[1]
            .iter()
            .map(|&v| radial_gradient(&mesh, &state, GradientEntry::Vertex(v), h))
            .sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn symmetric_state_has_symmetric_member_gradients() {
        let (mesh, emb) = annulus_state();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 0.5);
        let state = EnergyState::new(&ctx, &emb.radii).unwrap();
        let h = 1e-6;
        let grads: Vec<f64> = mesh.boundary_loops()[1]
            .iter()
            .map(|&v| radial_gradient(&mesh, &state, GradientEntry::Vertex(v), h))
            .collect();
        let mean = grads.iter().sum::<f64>() / grads.len() as f64;
        for g in &grads {
            assert!((g - mean).abs() < 1e-9 * mean.abs().max(1e-9), "{g} vs {mean}");
        }
    }

    #[test]
    fn optimize_descends_and_preserves_topology() {
        let (mesh, emb) = annulus_state();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = OptimizeConfig { max_iters: 60, ..Default::default() };
        let e0 = {
            let ctx = EnergyContext::new(&mesh, &frame, &cutter, &params, 0.5);
            EnergyState::new(&ctx, &emb.radii).unwrap().total()
        };
        let result = optimize(&mesh, &frame, emb, &cutter, &params, &config).unwrap();

        // Strict descent on this state and a non-increasing trace.
        assert!(result.report.e < e0);
        for w in result.trace.windows(2) {
            assert!(w[1].e <= w[0].e + 1e-12 * w[0].e.abs());
        }
        // Topology: no inverted faces, loops exactly co-circular.
        let mut mesh = mesh;
        mesh.set_channel(Channel::Optimized, result.embedding.positions());
        assert_eq!(
            mesh.channel_inverted_count(mesh.channel(Channel::Optimized).unwrap()),
            0
        );
        for (li, cycle) in mesh.boundary_loops().iter().enumerate() {
            for &v in cycle {
                assert_eq!(result.embedding.radii[v as usize], result.embedding.loop_radii[li]);
            }
        }
        // The energy reported must match a from-scratch evaluation.
        let scratch = crate::energy::evaluate_energy(
            &mesh,
            &frame,
            &ScalarField::from_embedding(&result.embedding),
            &cutter,
            &params,
        )
        .unwrap();
        assert!(
            (scratch.e - result.report.e).abs() <= 1e-9 * scratch.e.abs(),
            "trace {} vs scratch {}",
            result.report.e,
            scratch.e
        );
    }

    #[test]
    fn optimize_is_deterministic() {
        let (mesh, emb) = annulus_state();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = OptimizeConfig { max_iters: 25, ..Default::default() };
        let a = optimize(&mesh, &frame, emb.clone(), &cutter, &params, &config).unwrap();
        let b = optimize(&mesh, &frame, emb, &cutter, &params, &config).unwrap();
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.e.to_bits(), rb.e.to_bits());
            assert_eq!(ra.max_step.to_bits(), rb.max_step.to_bits());
        }
        for (x, y) in a.embedding.radii.iter().zip(&b.embedding.radii) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
