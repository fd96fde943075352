//! Discrete conformal slit mapping onto a unit disk or annulus.
//!
//! The log-radius `u` is a discrete harmonic function of the cotangent
//! Laplacian with `u = 0` on the outer loop. Every hole boundary is
//! collapsed to a single unknown constant, which makes the zero-flux
//! (period elimination) condition the stationarity condition of the
//! quadratic form, so hole images are exactly co-circular arcs. Disk mode
//! places a `-2 pi` logarithmic source on the anchor vertex; annulus mode
//! fixes the designated loop at `u = -1` and rescales `u` so the angle
//! period around it is exactly `2 pi`, which pins the inner radius `R_A`.
//!
//! The angle `v` is the conjugate field: a least-squares potential for the
//! rotated gradient `n x grad u`, solved on the mesh with a `2 pi` sheet
//! jump across a cut path from the anchor (or inner loop) to the outer
//! loop. The map is `w = exp(u + i v)`.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::domain::{Anchor, DomainEmbedding, SlitArc, SlitDomain, SlitMode};
use crate::mesh::ops::cot_angle;
use crate::mesh::{face_points, Channel, TriMesh};
use crate::sparse::{solve_cg, SparseMatrix};
use crate::{Error, Result};

/// Where to anchor the mapping.
#[derive(Debug, Clone, Copy)]
pub enum AnchorSpec {
    /// Disk mode: interior point as face index plus barycentric weights.
    /// The logarithmic source lands on the dominant vertex of the face.
    Interior { face: u32, barycentric: [f64; 3] },
    /// Annulus mode: this boundary loop becomes the inner circle.
    Boundary { loop_index: usize },
}

/// Output of [`slit_map`].
#[derive(Debug, Clone)]
pub struct SlitMapResult {
    pub domain: SlitDomain,
    /// Exact polar form of the image (loop radii shared bit-exactly).
    pub embedding: DomainEmbedding,
    /// Cartesian image positions, one per vertex.
    pub positions: Vec<Point2<f64>>,
}

/// Relative residual target for the harmonic solves.
const SOLVER_TOL: f64 = 1e-11;

/// Computes the conformal slit mapping of a genus-0 multiply connected
/// surface. See the module docs for the construction.
pub fn slit_map(mesh: &TriMesh, anchor: &AnchorSpec) -> Result<SlitMapResult> {
    let loops = mesh.boundary_loops();
    if loops.is_empty() {
        return Err(Error::Topology("slit map needs at least one boundary loop".into()));
    }

    let (mode, anchor_vertex, anchor_loop, anchor_meta) = match *anchor {
        AnchorSpec::Interior { face, barycentric } => {
            if face as usize >= mesh.face_count() {
                return Err(Error::InvalidParameter(format!("anchor face {face} out of range")));
            }
            let f = mesh.faces()[face as usize];
            let k = (0..3)
                .max_by(|&a, &b| barycentric[a].partial_cmp(&barycentric[b]).unwrap())
                .unwrap();
            let vertex = f[k];
            if mesh.is_boundary_vertex(vertex) {
                return Err(Error::AnchorOnBoundary);
            }
            let dist = mesh.distance_to_boundary(mesh.position(vertex));
            let min = 2.0 * mesh.avg_edge_length();
            if dist < min {
                return Err(Error::AnchorNearBoundary { dist, min });
            }
            (
                SlitMode::Disk,
                Some(vertex),
                None,
                Anchor::Interior { face, barycentric, vertex },
            )
        }
        AnchorSpec::Boundary { loop_index } => {
            if loop_index == 0 || loop_index >= loops.len() {
                return Err(Error::InvalidParameter(format!(
                    "annulus anchor must be an inner loop, got {loop_index} of {}",
                    loops.len()
                )));
            }
            (SlitMode::Annulus, None, Some(loop_index), Anchor::Boundary { loop_index })
        }
    };

    let weights = edge_weights(mesh);

    // ---- log-radius solve ----
    let u = solve_log_radius(mesh, &weights, mode, anchor_vertex, anchor_loop)?;

    // ---- conjugate angle solve ----
    let cut = cut_path(mesh, anchor_vertex, anchor_loop)?;
    let mut v = solve_angle(mesh, &weights, &u, &cut, mode, 1.0)?;
    if !angle_is_smooth(mesh, &v, &cut, mode, anchor_vertex) {
        v = solve_angle(mesh, &weights, &u, &cut, mode, -1.0)?;
        if !angle_is_smooth(mesh, &v, &cut, mode, anchor_vertex) {
            return Err(Error::Solve("conjugate angle has a seam off the cut".into()));
        }
    }

    // ---- assemble the embedding ----
    let mut radii: Vec<f64> = u.iter().map(|&ui| ui.exp()).collect();
    let mut loop_radii = Vec::with_capacity(loops.len());
    for cycle in loops {
        // u is bit-identical along a loop (shared DOF), so this is exact.
        let r = radii[cycle[0] as usize];
        for &vtx in cycle {
            radii[vtx as usize] = r;
        }
        loop_radii.push(r);
    }

    let mut embedding = DomainEmbedding { angles: v, radii, loop_radii };
    let positions = embedding.positions();
    // Mirror if the mesh orientation mapped with negative signed areas.
    let negative = count_negative(mesh, &positions);
    let (embedding, positions) = if negative * 2 > mesh.face_count() {
        for a in &mut embedding.angles {
            *a = -*a;
        }
        let positions = embedding.positions();
        (embedding, positions)
    } else {
        (embedding, positions)
    };

    let min_radius = embedding.radii.iter().copied().fold(f64::INFINITY, f64::min);
    let mut slits = Vec::new();
    for (li, cycle) in loops.iter().enumerate() {
        if li == 0 || Some(li) == anchor_loop {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &vtx in cycle {
            lo = lo.min(embedding.angles[vtx as usize]);
            hi = hi.max(embedding.angles[vtx as usize]);
        }
        slits.push(SlitArc {
            loop_index: li,
            radius: embedding.loop_radii[li],
            angle_start: lo,
            angle_end: hi,
        });
    }

    let domain = SlitDomain {
        mode,
        inner_radius: anchor_loop.map(|l| embedding.loop_radii[l]),
        slits,
        anchor: anchor_meta,
        loop_radii: embedding.loop_radii.clone(),
        min_radius,
    };

    Ok(SlitMapResult { domain, embedding, positions })
}

fn count_negative(mesh: &TriMesh, positions: &[Point2<f64>]) -> usize {
    (0..mesh.face_count() as u32)
        .filter(|&f| mesh.channel_signed_area(positions, f) < 0.0)
        .count()
}

/// Cotangent edge weights `(cot a + cot b)/2` keyed on undirected edges.
pub(crate) fn edge_weights(mesh: &TriMesh) -> BTreeMap<(u32, u32), f64> {
    let mut weights: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for f in mesh.faces() {
        let pts = face_points(mesh.vertices(), f);
        for k in 0..3 {
            let (a, b) = (f[(k + 1) % 3], f[(k + 2) % 3]);
            let w = 0.5 * cot_angle(pts[k], pts[(k + 1) % 3], pts[(k + 2) % 3]);
            *weights.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    weights
}

#[derive(Clone, Copy, PartialEq)]
enum Dof {
    Free(u32),
    Fixed(f64),
}

fn solve_log_radius(
    mesh: &TriMesh,
    weights: &BTreeMap<(u32, u32), f64>,
    mode: SlitMode,
    anchor_vertex: Option<u32>,
    anchor_loop: Option<usize>,
) -> Result<Vec<f64>> {
    let loops = mesh.boundary_loops();
    let nv = mesh.vertex_count();

    // DOF layout: interior vertices first, then one shared DOF per slit loop.
    let mut dof = vec![Dof::Fixed(0.0); nv];
    let mut n_free = 0u32;
    for vtx in 0..nv as u32 {
        if !mesh.is_boundary_vertex(vtx) {
            dof[vtx as usize] = Dof::Free(n_free);
            n_free += 1;
        }
    }
    for li in 1..loops.len() {
        if Some(li) == anchor_loop {
            for &vtx in &loops[li] {
                dof[vtx as usize] = Dof::Fixed(-1.0);
            }
        } else {
            let d = n_free;
            n_free += 1;
            for &vtx in &loops[li] {
                dof[vtx as usize] = Dof::Free(d);
            }
        }
    }

    let mut trips: Vec<(u32, u32, f64)> = Vec::with_capacity(weights.len() * 4);
    let mut rhs = vec![0.0f64; n_free as usize];
    for (&(i, j), &w) in weights {
        match (dof[i as usize], dof[j as usize]) {
            (Dof::Free(di), Dof::Free(dj)) => {
                if di != dj {
                    trips.push((di, di, w));
                    trips.push((dj, dj, w));
                    trips.push((di, dj, -w));
                    trips.push((dj, di, -w));
                }
            }
            (Dof::Free(di), Dof::Fixed(val)) => {
                trips.push((di, di, w));
                rhs[di as usize] += w * val;
            }
            (Dof::Fixed(val), Dof::Free(dj)) => {
                trips.push((dj, dj, w));
                rhs[dj as usize] += w * val;
            }
            (Dof::Fixed(_), Dof::Fixed(_)) => {}
        }
    }
    if mode == SlitMode::Disk {
        let a = anchor_vertex.expect("disk mode has an anchor vertex");
        match dof[a as usize] {
            Dof::Free(d) => rhs[d as usize] += -2.0 * std::f64::consts::PI,
            Dof::Fixed(_) => unreachable!("anchor is interior"),
        }
    }

    let lap = SparseMatrix::from_triplets(n_free as usize, &trips);
    let sol = solve_cg(&lap, &rhs, SOLVER_TOL, 60_000)?;

    let mut u = vec![0.0f64; nv];
    for vtx in 0..nv {
        u[vtx] = match dof[vtx] {
            Dof::Free(d) => sol[d as usize],
            Dof::Fixed(val) => val,
        };
    }

    // Annulus: rescale so the discrete angle period around the inner loop
    // is exactly 2 pi, which makes R_A = exp(u) there.
    if let Some(la) = anchor_loop {
        let period = loop_flux(mesh, weights, &u, &loops[la]);
        if period.abs() < 1e-30 {
            return Err(Error::Solve("vanishing period around the inner loop".into()));
        }
        let scale = 2.0 * std::f64::consts::PI / period.abs();
        for ui in &mut u {
            *ui *= scale;
        }
        // Keep the inner loop bit-identical after scaling.
        let val = -scale;
        for &vtx in &loops[la] {
            u[vtx as usize] = val;
        }
    }
    Ok(u)
}

/// Discrete flux of `u` through a boundary loop: the sum of Laplacian rows.
pub(crate) fn loop_flux(
    mesh: &TriMesh,
    weights: &BTreeMap<(u32, u32), f64>,
    u: &[f64],
    cycle: &[u32],
) -> f64 {
    let mut on_loop = vec![false; mesh.vertex_count()];
    for &vtx in cycle {
        on_loop[vtx as usize] = true;
    }
    let mut flux = 0.0;
    for (&(i, j), &w) in weights {
        let (bi, bj) = (on_loop[i as usize], on_loop[j as usize]);
        if bi && !bj {
            flux += w * (u[i as usize] - u[j as usize]);
        } else if bj && !bi {
            flux += w * (u[j as usize] - u[i as usize]);
        }
    }
    flux
}

/// Cut path from the anchor (disk) or the inner loop (annulus) to the outer
/// loop; BFS over edges avoiding every other boundary vertex.
fn cut_path(
    mesh: &TriMesh,
    anchor_vertex: Option<u32>,
    anchor_loop: Option<usize>,
) -> Result<Vec<u32>> {
    let loops = mesh.boundary_loops();
    let nv = mesh.vertex_count();
    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); nv];
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            if !adjacency[a as usize].contains(&b) {
                adjacency[a as usize].push(b);
            }
            if !adjacency[b as usize].contains(&a) {
                adjacency[b as usize].push(a);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }

    let is_target: Vec<bool> = {
        let mut t = vec![false; nv];
        match anchor_vertex {
            Some(a) => t[a as usize] = true,
            None => {
                for &vtx in &loops[anchor_loop.unwrap()] {
                    t[vtx as usize] = true;
                }
            }
        }
        t
    };
    // Interior path nodes must be interior vertices.
    let passable = |vtx: u32| -> bool { !mesh.is_boundary_vertex(vtx) };

    let mut prev: Vec<u32> = vec![u32::MAX; nv];
    let mut queue: std::collections::VecDeque<u32> = std::collections::VecDeque::new();
    let mut seen = vec![false; nv];
    for &vtx in &loops[0] {
        seen[vtx as usize] = true;
        queue.push_back(vtx);
    }
    let mut hit: Option<u32> = None;
    'bfs: while let Some(cur) = queue.pop_front() {
        for &nb in &adjacency[cur as usize] {
            if seen[nb as usize] {
                continue;
            }
            if is_target[nb as usize] {
                prev[nb as usize] = cur;
                hit = Some(nb);
                break 'bfs;
            }
            if !passable(nb) {
                continue;
            }
            seen[nb as usize] = true;
            prev[nb as usize] = cur;
            queue.push_back(nb);
        }
    }
    let hit =
        hit.ok_or_else(|| Error::Topology("no cut path from the anchor to the outer loop".into()))?;

    let mut path = vec![hit];
    let mut cur = hit;
    while prev[cur as usize] != u32::MAX {
        cur = prev[cur as usize];
        path.push(cur);
    }
    // path runs anchor/inner -> ... -> outer loop.
    debug_assert!(mesh.vertex_loop(*path.last().unwrap()) == Some(0));

    // Splice out chords: if two non-consecutive path vertices are adjacent,
    // shortcut between them to keep the cut geometrically simple.
    let mut changed = true;
    while changed {
        changed = false;
        'outer: for i in 0..path.len() {
            for j in (i + 2..path.len()).rev() {
                if adjacency[path[i] as usize].binary_search(&path[j]).is_ok() {
                    path.drain(i + 1..j);
                    changed = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(path)
}

/// Per-corner sheet shifts along the cut: faces on one side of the directed
/// path read `v + 2 pi * side` at their cut-vertex corners.
fn corner_shifts(
    mesh: &TriMesh,
    cut: &[u32],
    mode: SlitMode,
    side: f64,
) -> Result<BTreeMap<(u32, u32), f64>> {
    let mut shifts: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let two_pi = 2.0 * std::f64::consts::PI;
    for (pos, &c) in cut.iter().enumerate() {
        // In disk mode the first path vertex is the branch point; its corner
        // value is arbitrary modulo 2 pi and carries no shift.
        if pos == 0 && mode == SlitMode::Disk {
            continue;
        }
        let fan = mesh.ordered_fan(c)?;
        // The path runs inner -> outer: the vertex closer to the outer loop
        // is cut[pos + 1], the one closer to the anchor is cut[pos - 1].
        let toward_outer = (pos + 1 < cut.len()).then(|| cut[pos + 1]);
        let toward_inner = (pos > 0).then(|| cut[pos - 1]);

        // Face with winding (c, n_t, n_{t+1}) contains the directed edge
        // (c -> x) iff n_t == x, and (x -> c) iff n_{t+1} == x.
        let position_of = |x: u32| -> Option<usize> { fan.neighbors.iter().position(|&n| n == x) };
        let k = fan.fan_faces.len();

        let faces_in_arc: Vec<u32> = if fan.closed {
            let s = position_of(
                toward_outer.ok_or_else(|| Error::MeshStateInvalid("cut fan mismatch".into()))?,
            )
            .ok_or_else(|| Error::MeshStateInvalid("cut edge missing from fan".into()))?;
            let e = position_of(
                toward_inner.ok_or_else(|| Error::MeshStateInvalid("cut fan mismatch".into()))?,
            )
            .ok_or_else(|| Error::MeshStateInvalid("cut edge missing from fan".into()))?;
            // Cyclic arc of faces f_s .. f_{e-1}: from the outgoing edge
            // around to just before the incoming edge.
            let mut arc = Vec::new();
            let mut t = s;
            for _ in 0..k {
                if t == (e + k - 1) % k {
                    arc.push(fan.fan_faces[t]);
                    break;
                }
                arc.push(fan.fan_faces[t]);
                t = (t + 1) % k;
            }
            arc
        } else {
            match (toward_outer.and_then(position_of), toward_inner.and_then(position_of)) {
                // Start vertex on the inner loop: faces f_s .. fan end.
                (Some(s), None) => fan.fan_faces[s..].to_vec(),
                // Terminal vertex on the outer loop: faces f_0 .. f_{e-1}.
                (None, Some(e)) => fan.fan_faces[..e].to_vec(),
                _ => {
                    return Err(Error::MeshStateInvalid(
                        "cut path touches a boundary vertex mid-path".into(),
                    ))
                }
            }
        };
        for f in faces_in_arc {
            shifts.insert((f, c), side * two_pi);
        }
    }
    Ok(shifts)
}

fn solve_angle(
    mesh: &TriMesh,
    weights: &BTreeMap<(u32, u32), f64>,
    u: &[f64],
    cut: &[u32],
    mode: SlitMode,
    side: f64,
) -> Result<Vec<f64>> {
    let nv = mesh.vertex_count();
    let shifts = corner_shifts(mesh, cut, mode, side)?;

    // Pin the outer endpoint of the cut.
    let pin = *cut.last().unwrap();
    let mut dof = vec![u32::MAX; nv];
    let mut n_free = 0u32;
    for vtx in 0..nv as u32 {
        if vtx != pin {
            dof[vtx as usize] = n_free;
            n_free += 1;
        }
    }

    // Laplacian from the same cotangent weights.
    let mut trips: Vec<(u32, u32, f64)> = Vec::with_capacity(weights.len() * 4);
    let mut rhs = vec![0.0f64; n_free as usize];
    for (&(i, j), &w) in weights {
        let (di, dj) = (dof[i as usize], dof[j as usize]);
        if di != u32::MAX {
            trips.push((di, di, w));
        }
        if dj != u32::MAX {
            trips.push((dj, dj, w));
        }
        if di != u32::MAX && dj != u32::MAX {
            trips.push((di, dj, -w));
            trips.push((dj, di, -w));
        }
    }

    // Right-hand side: divergence of the rotated gradient, with the sheet
    // shifts folded into each face's target.
    for (fi, f) in mesh.faces().iter().enumerate() {
        let pts = face_points(mesh.vertices(), f);
        let n = mesh.face_normal(fi as u32);
        let area = mesh.face_area(fi as u32);
        let mut grad = Vector3::zeros();
        for k in 0..3 {
            let e = pts[(k + 2) % 3] - pts[(k + 1) % 3];
            grad += u[f[k] as usize] * n.cross(&e);
        }
        grad /= 2.0 * area;
        let mut target = n.cross(&grad);
        // Corner shifts subtract their own gradient from the face target.
        for k in 0..3 {
            if let Some(&s) = shifts.get(&(fi as u32, f[k])) {
                let e = pts[(k + 2) % 3] - pts[(k + 1) % 3];
                let grad_phi = n.cross(&e) / (2.0 * area);
                target -= s * grad_phi;
            }
        }
        // b_i += area * grad(phi_i) . target
        for k in 0..3 {
            let di = dof[f[k] as usize];
            if di == u32::MAX {
                continue;
            }
            let e = pts[(k + 2) % 3] - pts[(k + 1) % 3];
            rhs[di as usize] += 0.5 * n.cross(&e).dot(&target);
        }
    }

    let lap = SparseMatrix::from_triplets(n_free as usize, &trips);
    let sol = solve_cg(&lap, &rhs, SOLVER_TOL, 60_000)?;
    let mut v = vec![0.0f64; nv];
    for vtx in 0..nv {
        if dof[vtx] != u32::MAX {
            v[vtx] = sol[dof[vtx] as usize];
        }
    }
    // Reapply the sheet shifts as stored: the solved unknowns are the
    // low-side values; nothing else to do since exp(i v) ignores 2 pi.
    Ok(v)
}

/// Validates that `v` is continuous away from the cut: in every face not
/// touching the cut or the branch point, corner values stay within a
/// half-turn of each other.
fn angle_is_smooth(
    mesh: &TriMesh,
    v: &[f64],
    cut: &[u32],
    _mode: SlitMode,
    anchor_vertex: Option<u32>,
) -> bool {
    let mut on_cut = vec![false; mesh.vertex_count()];
    for &c in cut {
        on_cut[c as usize] = true;
    }
    for f in mesh.faces() {
        if f.iter().any(|&w| on_cut[w as usize]) {
            continue;
        }
        if let Some(a) = anchor_vertex {
            if f.contains(&a) {
                continue;
            }
        }
        let vals = [v[f[0] as usize], v[f[1] as usize], v[f[2] as usize]];
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if mx - mn > std::f64::consts::PI {
            return false;
        }
    }
    true
}

/// Diagnostics for a computed slit map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlitQuality {
    /// Max `| |w| - 1 |` over the outer loop.
    pub gamma0_radius_error: f64,
    /// Per inner loop: radius standard deviation over mean.
    pub slit_radius_spread: Vec<f64>,
    /// Per inner loop: discrete harmonic flux residual of `log |w|`.
    pub flux_residual: Vec<f64>,
    /// Quasi-conformal distortion (singular value ratio) statistics.
    pub distortion_mean: f64,
    pub distortion_max: f64,
    /// Faces whose distortion exceeds the flag threshold.
    pub flagged_faces: Vec<u32>,
    pub flag_threshold: f64,
    pub inverted_faces: usize,
}

/// Measures map quality from the `Slit` channel of the mesh.
pub fn slit_quality(mesh: &TriMesh, domain: &SlitDomain) -> Result<SlitQuality> {
    let pos = mesh.require_channel(Channel::Slit)?;
    let loops = mesh.boundary_loops();

    let mut gamma0 = 0.0f64;
    for &vtx in &loops[0] {
        gamma0 = gamma0.max((pos[vtx as usize].coords.norm() - 1.0).abs());
    }

    let mut spreads = Vec::new();
    for cycle in loops.iter().skip(1) {
        let radii: Vec<f64> = cycle.iter().map(|&vtx| pos[vtx as usize].coords.norm()).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let var = radii.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / radii.len() as f64;
        spreads.push(var.sqrt() / mean);
    }

    // Flux residuals of the log-radius field, loop values pinned to the
    // exact per-loop radii recorded in the domain.
    let weights = edge_weights(mesh);
    let mut u: Vec<f64> = pos.iter().map(|p| p.coords.norm().ln()).collect();
    for (li, cycle) in loops.iter().enumerate() {
        let exact = domain.loop_radii[li].ln();
        for &vtx in cycle {
            u[vtx as usize] = exact;
        }
    }
    let mut residuals = Vec::new();
    for (li, cycle) in loops.iter().enumerate().skip(1) {
        let flux = loop_flux(mesh, &weights, &u, cycle);
        let expected = match (&domain.mode, &domain.anchor) {
            (SlitMode::Annulus, Anchor::Boundary { loop_index }) if *loop_index == li => {
                // The inner loop carries the full 2 pi period by design.
                flux.abs() - 2.0 * std::f64::consts::PI
            }
            _ => flux,
        };
        residuals.push(expected.abs());
    }

    // Quasi-conformal distortion per face: singular values of the 3D -> 2D
    // differential in an orthonormal face basis.
    let threshold = 1.5;
    let mut flagged = Vec::new();
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let pts = face_points(mesh.vertices(), f);
        let e1 = pts[1] - pts[0];
        let e2 = pts[2] - pts[0];
        let n = e1.cross(&e2).normalize();
        let bu = e1.normalize();
        let bv = n.cross(&bu);
        let m3 = Matrix2::new(e1.dot(&bu), e2.dot(&bu), e1.dot(&bv), e2.dot(&bv));
        let q1 = pos[f[1] as usize] - pos[f[0] as usize];
        let q2 = pos[f[2] as usize] - pos[f[0] as usize];
        let m2 = Matrix2::new(q1.x, q2.x, q1.y, q2.y);
        let inv = match m3.try_inverse() {
            Some(inv) => inv,
            None => continue,
        };
        let j = m2 * inv;
        let a2 = (j.transpose() * j).trace();
        let det = j.determinant().abs();
        let disc = (a2 * a2 / 4.0 - det * det).max(0.0).sqrt();
        let s1 = (a2 / 2.0 + disc).sqrt();
        let s2 = (a2 / 2.0 - disc).max(0.0).sqrt();
        let ratio = if s2 > 0.0 { s1 / s2 } else { f64::INFINITY };
        sum += ratio;
        if ratio > max {
            max = ratio;
        }
        if ratio > threshold {
            flagged.push(fi as u32);
        }
    }

    Ok(SlitQuality {
        gamma0_radius_error: gamma0,
        slit_radius_spread: spreads,
        flux_residual: residuals,
        distortion_mean: sum / mesh.face_count() as f64,
        distortion_max: max,
        flagged_faces: flagged,
        flag_threshold: threshold,
        inverted_faces: mesh.channel_inverted_count(pos),
    })
}

/// Debug dump of a planar domain as SVG: mesh edges plus boundary loops.
pub fn write_domain_svg(
    mesh: &TriMesh,
    positions: &[Point2<f64>],
    path: &std::path::Path,
) -> Result<()> {
    let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
    for p in positions {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = 0.05 * (hi - lo).norm().max(1e-9);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">\n",
        lo.x - pad,
        lo.y - pad,
        hi.x - lo.x + 2.0 * pad,
        hi.y - lo.y + 2.0 * pad
    ));
    svg.push_str("<g stroke=\"#999\" stroke-width=\"0.15%\" fill=\"none\">\n");
    let mut seen: std::collections::BTreeSet<(u32, u32)> = std::collections::BTreeSet::new();
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                let (pa, pb) = (positions[a as usize], positions[b as usize]);
                svg.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n",
                    pa.x, pa.y, pb.x, pb.y
                ));
            }
        }
    }
    svg.push_str("</g>\n<g stroke=\"#c22\" stroke-width=\"0.4%\" fill=\"none\">\n");
    for cycle in mesh.boundary_loops() {
        svg.push_str("<polyline points=\"");
        for &vtx in cycle.iter().chain(cycle.first()) {
            let p = positions[vtx as usize];
            svg.push_str(&format!("{},{} ", p.x, p.y));
        }
        svg.push_str("\"/>\n");
    }
    svg.push_str("</g>\n</svg>\n");
    crate::mesh::write_file(path, svg.as_bytes())
}

/// Face whose centroid (in the xy plane) is nearest to a target point.
#[cfg(test)]
pub(crate) fn nearest_face(mesh: &TriMesh, target: Point2<f64>) -> u32 {
    let face_center = |f: u32| -> nalgebra::Vector2<f64> {
        let fc = mesh.faces()[f as usize];
        let c = (mesh.position(fc[0]).coords
            + mesh.position(fc[1]).coords
            + mesh.position(fc[2]).coords)
            / 3.0;
        nalgebra::Vector2::new(c.x, c.y)
    };
    (0..mesh.face_count() as u32)
        .min_by(|&a, &b| {
            let da = (face_center(a) - target.coords).norm();
            let db = (face_center(b) - target.coords).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn attach(mesh: &mut TriMesh, result: &SlitMapResult) {
        mesh.set_channel(Channel::Slit, result.positions.clone());
    }

    #[test]
    fn flat_annulus_maps_to_itself() {
        // Concentric annulus radii (0.5, 1): already canonical, so the map
        // is the identity up to rotation and R_A is pinned by the modulus.
        let mut mesh = fixtures::flat_annulus(0.5, 1.0, 24, 96);
        let result = slit_map(&mesh, &AnchorSpec::Boundary { loop_index: 1 }).unwrap();
        let ra = result.domain.inner_radius.unwrap();
        assert!((ra - 0.5).abs() < 1e-3, "R_A = {ra}");

        // Identity up to rotation (and possibly reflection): the angle
        // residual angles(v) -+ source(v) must be constant mod 2 pi.
        // Circular statistics pick the sign and the rotation.
        let source_angle = |v: u32| {
            let p = mesh.position(v);
            p.y.atan2(p.x)
        };
        let circ_mean = |sign: f64| -> (f64, f64) {
            let (mut cx, mut cy) = (0.0, 0.0);
            for v in 0..mesh.vertex_count() as u32 {
                let d = result.embedding.angles[v as usize] - sign * source_angle(v);
                cx += d.cos();
                cy += d.sin();
            }
            let n = mesh.vertex_count() as f64;
            let mag = (cx * cx + cy * cy).sqrt() / n;
            (mag, cy.atan2(cx))
        };
        let (mag_pos, rot_pos) = circ_mean(1.0);
        let (mag_neg, rot_neg) = circ_mean(-1.0);
        let (sign, rot) = if mag_pos >= mag_neg { (1.0, rot_pos) } else { (-1.0, rot_neg) };
        for v in 0..mesh.vertex_count() as u32 {
            let p = mesh.position(v);
            let expect_r = (p.x * p.x + p.y * p.y).sqrt();
            let got_r = result.embedding.radii[v as usize];
            assert!((got_r - expect_r).abs() < 4e-3, "radius {got_r} vs {expect_r}");
            let mut da = result.embedding.angles[v as usize] - rot - sign * source_angle(v);
            while da > std::f64::consts::PI {
                da -= 2.0 * std::f64::consts::PI;
            }
            while da < -std::f64::consts::PI {
                da += 2.0 * std::f64::consts::PI;
            }
            assert!(da.abs() < 4e-3, "angle offset {da} at vertex {v}");
        }

        attach(&mut mesh, &result);
        let q = slit_quality(&mesh, &result.domain).unwrap();
        assert_eq!(q.inverted_faces, 0);
        assert!(q.gamma0_radius_error < 1e-12);
        assert!(q.distortion_max < 1.05, "distortion {}", q.distortion_max);
    }

    #[test]
    fn flat_disk_without_holes() {
        let mesh = fixtures::holed_disk(10.0, &[], 0.8);
        let face = super::nearest_face(&mesh, Point2::origin());
        let result =
            slit_map(&mesh, &AnchorSpec::Interior { face, barycentric: [1.0 / 3.0; 3] }).unwrap();
        for &vtx in &mesh.boundary_loops()[0] {
            assert_eq!(result.embedding.radii[vtx as usize], 1.0);
        }
        assert_eq!(count_negative(&mesh, &result.positions), 0);
        // Radial monotonicity: image radius orders like the distance from
        // the anchor along mesh edges, away from the pole region.
        let anchor = match result.domain.anchor {
            Anchor::Interior { vertex, .. } => vertex,
            _ => unreachable!(),
        };
        let o = mesh.position(anchor);
        let mut violations = 0usize;
        let mut total = 0usize;
        for f in mesh.faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == anchor || b == anchor {
                    continue;
                }
                let sa = (mesh.position(a) - o).norm();
                let sb = (mesh.position(b) - o).norm();
                if (sa - sb).abs() < 0.4 {
                    continue;
                }
                let ra = result.embedding.radii[a as usize];
                let rb = result.embedding.radii[b as usize];
                total += 1;
                if (sa - sb) * (ra - rb) < 0.0 {
                    violations += 1;
                }
            }
        }
        assert!(violations * 100 < total, "radial monotonicity violations {violations}/{total}");
    }

    #[test]
    fn three_hole_disk_slit_map() {
        let mut mesh = fixtures::three_hole_disk();
        let face = super::nearest_face(&mesh, Point2::origin());
        let result =
            slit_map(&mesh, &AnchorSpec::Interior { face, barycentric: [1.0 / 3.0; 3] }).unwrap();
        assert_eq!(result.domain.slits.len(), 3);
        attach(&mut mesh, &result);
        let q = slit_quality(&mesh, &result.domain).unwrap();
        assert!(q.gamma0_radius_error < 1e-6, "gamma0 {}", q.gamma0_radius_error);
        for s in &q.slit_radius_spread {
            assert!(*s < 1e-3, "slit spread {s}");
        }
        for r in &q.flux_residual {
            assert!(*r < 1e-8, "flux residual {r}");
        }
        assert_eq!(q.inverted_faces, 0);
    }

    #[test]
    fn anchor_near_boundary_rejected() {
        let mesh = fixtures::three_hole_disk();
        let f = (0..mesh.face_count() as u32)
            .find(|&f| mesh.faces()[f as usize].iter().any(|&v| mesh.vertex_loop(v) == Some(0)))
            .unwrap();
        let err = slit_map(&mesh, &AnchorSpec::Interior { face: f, barycentric: [1.0 / 3.0; 3] });
        assert!(matches!(
            err,
            Err(Error::AnchorOnBoundary) | Err(Error::AnchorNearBoundary { .. })
        ));
    }

    #[test]
    fn fault_injection_flags_distorted_face() {
        let mut mesh = fixtures::flat_annulus(0.5, 1.0, 12, 48);
        let result = slit_map(&mesh, &AnchorSpec::Boundary { loop_index: 1 }).unwrap();
        let mut pos = result.positions.clone();
        let v = (0..mesh.vertex_count() as u32).find(|&v| !mesh.is_boundary_vertex(v)).unwrap();
        pos[v as usize].x += 0.05;
        pos[v as usize].y -= 0.04;
        mesh.set_channel(Channel::Slit, pos);
        let q = slit_quality(&mesh, &result.domain).unwrap();
        assert!(!q.flagged_faces.is_empty());
    }

}
