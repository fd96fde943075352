//! Scalar-field initialization: radial profile optimization over the slit
//! domain, the anchor search, and the re-embedding that turns the slit
//! domain into the initial optimization domain.
//!
//! The field is `T = f(||S^S||)` for a strictly increasing piecewise-linear
//! profile `f`. The profile is tuned by cyclic coordinate perturbation
//! (accept only energy decreases); the anchor element is picked by a
//! multi-candidate discrete descent over mesh vertices plus all boundary
//! loops, and the winning field is baked into new domain radii:
//! `S^H = dir(S^S) * f(||S^S||)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainEmbedding, ScalarField};
use crate::energy::{CutterSpec, EnergyContext, EnergyParams, EnergyState};
use crate::mesh::{curvature_tensor, FaceFrame, TriMesh};
use crate::slitmap::{slit_map, AnchorSpec, SlitMapResult};
use crate::{Error, Result};

/// Strictly increasing piecewise-linear radial profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    /// Sample radii, strictly increasing, `nodes[0] = min ||S^S||`,
    /// `nodes[last] = 1`.
    pub nodes: Vec<f64>,
    /// `f(nodes[k])`, strictly increasing; the first value is pinned.
    pub values: Vec<f64>,
}

impl RadialProfile {
    /// Identity profile on `[min_radius, 1]` with `n + 1` nodes.
    pub fn identity(min_radius: f64, n: usize) -> Self {
        assert!(min_radius < 1.0 && n >= 1);
        let nodes: Vec<f64> =
            (0..=n).map(|k| min_radius + (1.0 - min_radius) * k as f64 / n as f64).collect();
        RadialProfile { values: nodes.clone(), nodes }
    }

    /// Piecewise-linear evaluation, clamped to the node range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0];
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        // Uniform nodes: direct segment lookup.
        let span = self.nodes[n - 1] - self.nodes[0];
        let mut k = (((x - self.nodes[0]) / span) * (n - 1) as f64) as usize;
        k = k.min(n - 2);
        while x < self.nodes[k] {
            k -= 1;
        }
        while x > self.nodes[k + 1] {
            k += 1;
        }
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] > w[0])
    }
}

/// Knobs for the profile perturbation search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Number of segments (node count minus one).
    pub nodes: usize,
    pub max_sweeps: usize,
    /// Stop when the best relative improvement in a sweep drops below this.
    pub rel_tol: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { nodes: 64, max_sweeps: 200, rel_tol: 1e-6 }
    }
}

/// Result of [`optimize_radial_profile`].
#[derive(Debug, Clone)]
pub struct ProfileResult {
    pub profile: RadialProfile,
    pub e_min: f64,
    /// Accepted-energy trace, one entry per sweep (non-increasing).
    pub trace: Vec<f64>,
}

/// Optimizes the radial profile for a fixed slit mapping by cyclic
/// coordinate perturbation: each inner node moves by a per-node step that
/// halves on rejection; only energy decreases are accepted, so the trace is
/// non-increasing and monotonicity of `f` is preserved throughout.
pub fn optimize_radial_profile(
    mesh: &TriMesh,
    frame: &FaceFrame,
    slit: &DomainEmbedding,
    cutter: &CutterSpec,
    params: &EnergyParams,
    config: &ProfileConfig,
) -> Result<ProfileResult> {
    let min_radius = slit.radii.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_radius < 1.0) {
        return Err(Error::MeshStateInvalid(format!(
            "slit domain radii collapse: min radius {min_radius}"
        )));
    }
    let mut profile = RadialProfile::identity(min_radius, config.nodes.max(1));
    let n = profile.nodes.len();

    // Vertices grouped by profile segment; node k touches segments k-1, k.
    let mut segment_of = vec![0usize; mesh.vertex_count()];
    for (v, &r) in slit.radii.iter().enumerate() {
        let span = 1.0 - min_radius;
        let mut k = (((r - min_radius) / span) * (n - 1) as f64) as usize;
        k = k.min(n - 2);
        while r < profile.nodes[k] {
            k -= 1;
        }
        while r > profile.nodes[k + 1] {
            k += 1;
        }
        segment_of[v] = k;
    }
    let mut verts_by_segment: Vec<Vec<u32>> = vec![Vec::new(); n - 1];
    for (v, &s) in segment_of.iter().enumerate() {
        verts_by_segment[s].push(v as u32);
    }

    let field0: Vec<f64> = slit.radii.iter().map(|&r| profile.eval(r)).collect();
    let range = 1.0 - min_radius;
    let ctx = EnergyContext::new(mesh, frame, cutter, params, range);
    let mut state = EnergyState::new(&ctx, &field0)?;
    let initially_degenerate = state.invalid_face_count();
    let mut energy = state.total();
    let mut trace = vec![energy];

    // The field doubles as the radius of the re-embedded domain, so every
    // accepted move must keep the affected faces upright there.
    let trig: Vec<(f64, f64)> = slit.angles.iter().map(|&a| (a.cos(), a.sin())).collect();
    let keeps_faces_upright = |state: &EnergyState, changes: &[(u32, f64)]| -> bool {
        let value_of = |w: u32| -> f64 {
            for &(cv, val) in changes {
                if cv == w {
                    return val;
                }
            }
            state.values()[w as usize]
        };
        let mut faces: Vec<u32> = Vec::new();
        for &(v, _) in changes {
            for &fi in mesh.vertex_faces(v) {
                if !faces.contains(&fi) {
                    faces.push(fi);
                }
            }
        }
        for fi in faces {
            let f = mesh.faces()[fi as usize];
            let p: Vec<(f64, f64)> = f
                .iter()
                .map(|&w| {
                    let r = value_of(w);
                    let (c, s) = trig[w as usize];
                    (r * c, r * s)
                })
                .collect();
            let area =
                (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[1].1 - p[0].1) * (p[2].0 - p[0].0);
            if area <= 0.0 {
                return false;
            }
        }
        true
    };

    // Per-node perturbation steps: 5% of the local node gap to start,
    // doubled on acceptance (capped by the local gap) and halved on
    // rejection, floored to keep the loop finite.
    let margin = 1e-9 * range;
    let mut steps: Vec<f64> = (0..n)
        .map(|k| {
            let lo = if k > 0 { profile.values[k - 1] } else { profile.values[0] };
            let hi = if k + 1 < n { profile.values[k + 1] } else { profile.values[n - 1] };
            0.05 * (hi - lo) / 2.0
        })
        .collect();
    let step_floor = 1e-14 * range;

    let mut accepted_any_ever = false;
    let mut scale_step = 0.25f64;
    for _sweep in 0..config.max_sweeps {
        let mut best_rel = 0.0f64;

        // Collective scale perturbation about the pinned first value; the
        // per-node sweep alone crawls when the optimum needs a large
        // uniform compression or expansion of the range.
        if scale_step > 1e-12 {
            let pivot = profile.values[0];
            let mut improved = false;
            for s in [1.0 - scale_step, 1.0 + scale_step] {
                let candidate: Vec<f64> =
                    profile.values.iter().map(|&f| pivot + s * (f - pivot)).collect();
                let changes: Vec<(u32, f64)> = (0..mesh.vertex_count() as u32)
                    .map(|v| {
                        let r = slit.radii[v as usize];
                        let t = state.values()[v as usize];
                        let _ = r;
                        (v, pivot + s * (t - pivot))
                    })
                    .filter(|&(v, t)| t != state.values()[v as usize])
                    .collect();
                if changes.is_empty() || !keeps_faces_upright(&state, &changes) {
                    continue;
                }
                let delta = state.propose(&changes);
                if delta < 0.0 {
                    state.apply(&changes);
                    profile.values = candidate;
                    best_rel = best_rel.max(-delta / energy.abs().max(f64::MIN_POSITIVE));
                    energy += delta;
                    improved = true;
                    accepted_any_ever = true;
                    break;
                }
            }
            if improved {
                scale_step = (scale_step * 2.0).min(0.5);
            } else {
                scale_step *= 0.5;
            }
        }

        for k in 1..n {
            if steps[k] < step_floor {
                continue;
            }
            let mut improved = false;
            for dir in [1.0f64, -1.0] {
                let mut candidate = profile.values[k] + dir * steps[k];
                // Project into the strictly monotone band.
                let lo = profile.values[k - 1] + margin;
                candidate = candidate.max(lo);
                if k + 1 < n {
                    let hi = profile.values[k + 1] - margin;
                    candidate = candidate.min(hi);
                }
                if (candidate - profile.values[k]).abs() < step_floor {
                    continue;
                }
                let changes = node_changes(&profile, &verts_by_segment, slit, k, candidate, n);
                if !keeps_faces_upright(&state, &changes) {
                    continue;
                }
                let delta = state.propose(&changes);
                if delta < 0.0 {
                    state.apply(&changes);
                    profile.values[k] = candidate;
                    best_rel = best_rel.max(-delta / energy.abs().max(f64::MIN_POSITIVE));
                    energy += delta;
                    improved = true;
                    accepted_any_ever = true;
                    break;
                }
            }
            if improved {
                let lo = profile.values[k - 1];
                let hi = if k + 1 < n { profile.values[k + 1] } else { f64::INFINITY };
                let cap = 0.45 * (hi - lo).min(range);
                steps[k] = (steps[k] * 2.0).min(cap);
            } else {
                steps[k] *= 0.5;
            }
        }
        // Re-anchor the running total against drift.
        energy = state.total();
        trace.push(energy);
        if best_rel < config.rel_tol {
            break;
        }
    }

    if !accepted_any_ever && initially_degenerate > 0 {
        return Err(Error::InfeasibleProfile(format!(
            "{initially_degenerate} degenerate faces and no accepted perturbation"
        )));
    }
    debug_assert!(profile.is_strictly_increasing());

    // Scratch re-evaluation pins the reported minimum.
    let final_field: Vec<f64> = slit.radii.iter().map(|&r| profile.eval(r)).collect();
    let e_min = EnergyState::new(&ctx, &final_field)?.total();
    Ok(ProfileResult { profile, e_min, trace })
}

/// Field updates caused by moving node `k` to `value`: every vertex whose
/// radius falls in the two adjacent segments re-interpolates.
fn node_changes(
    profile: &RadialProfile,
    verts_by_segment: &[Vec<u32>],
    slit: &DomainEmbedding,
    k: usize,
    value: f64,
    n: usize,
) -> Vec<(u32, f64)> {
    let mut changes = Vec::new();
    let mut push_segment = |seg: usize| {
        let (x0, x1) = (profile.nodes[seg], profile.nodes[seg + 1]);
        let f0 = if seg == k { value } else { profile.values[seg] };
        let f1 = if seg + 1 == k { value } else { profile.values[seg + 1] };
        for &v in &verts_by_segment[seg] {
            let r = slit.radii[v as usize];
            let t = (r - x0) / (x1 - x0);
            changes.push((v, f0 + t * (f1 - f0)));
        }
    };
    if k > 0 {
        push_segment(k - 1);
    }
    if k < n - 1 {
        push_segment(k);
    }
    changes
}

/// The element the scalar field is anchored on, plus the inward offset used
/// when descent has to leave a boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaElement {
    pub kind: ThetaKind,
    /// Offset of the fallback ring, in average edge lengths.
    pub offset_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ThetaKind {
    InteriorPoint { face: u32, barycentric: [f64; 3] },
    Boundary { loop_index: usize },
}

/// Which mapping branches the search may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeSelect {
    Auto,
    DiskOnly,
    AnnulusOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaConfig {
    pub mode: ModeSelect,
    /// Farthest-point interior seed count.
    pub seeds: usize,
    pub max_descent_steps: usize,
    /// Offset ring distance in average edge lengths.
    pub offset_fraction: f64,
    /// Offset ring subsample size for the relocation rule.
    pub offset_samples: usize,
    pub profile: ProfileConfig,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        ThetaConfig {
            mode: ModeSelect::Auto,
            seeds: 8,
            max_descent_steps: 8,
            offset_fraction: 2.0,
            offset_samples: 8,
            profile: ProfileConfig::default(),
        }
    }
}

/// Winner of the anchor search.
#[derive(Debug)]
pub struct ThetaSearchResult {
    pub theta: ThetaElement,
    pub slit: SlitMapResult,
    pub profile: RadialProfile,
    pub e_min: f64,
    /// Number of full (slit map + profile) evaluations spent.
    pub evaluations: usize,
}

/// Searches for the anchor element minimizing the profile-optimized energy.
///
/// Candidates are all inner boundary loops (annulus branch) plus interior
/// vertices seeded by farthest-point sampling (disk branch); the best
/// interior seed is refined by one-ring discrete descent. A descent step
/// that would leave through a boundary is relocated to the minimizing
/// sample on that loop's inward offset ring.
pub fn search_theta(
    mesh: &TriMesh,
    cutter: &CutterSpec,
    params: &EnergyParams,
    config: &ThetaConfig,
) -> Result<ThetaSearchResult> {
    let frame = curvature_tensor(mesh);
    let mut evaluations = 0usize;
    let mut cache: BTreeMap<CandidateKey, f64> = BTreeMap::new();
    let mut best: Option<(CandidateKey, f64)> = None;

    let eval = |key: CandidateKey,
                    cache: &mut BTreeMap<CandidateKey, f64>,
                    evaluations: &mut usize|
     -> f64 {
        if let Some(&e) = cache.get(&key) {
            return e;
        }
        *evaluations += 1;
        let e = match evaluate_candidate(mesh, &frame, cutter, params, &config.profile, key) {
            Ok((e, _, _)) => e,
            Err(_) => f64::INFINITY,
        };
        cache.insert(key, e);
        e
    };

    // Annulus branch: every inner loop.
    if config.mode != ModeSelect::DiskOnly {
        for li in 1..mesh.boundary_loops().len() {
            let key = CandidateKey::Loop(li);
            let e = eval(key, &mut cache, &mut evaluations);
            if best.as_ref().map_or(true, |(_, be)| e < *be) {
                best = Some((key, e));
            }
        }
    }

    // Disk branch: farthest-point seeds plus discrete descent.
    if config.mode != ModeSelect::AnnulusOnly {
        let geometry = InteriorGeometry::build(mesh, config.offset_fraction);
        let seeds = geometry.farthest_point_seeds(config.seeds);
        if seeds.is_empty() && config.mode == ModeSelect::DiskOnly {
            return Err(Error::InfeasibleProfile(
                "no eligible interior anchor candidates (thin sliver mesh)".into(),
            ));
        }
        let mut best_seed: Option<(u32, f64)> = None;
        for &s in &seeds {
            let e = eval(CandidateKey::Vertex(s), &mut cache, &mut evaluations);
            if best_seed.map_or(true, |(_, be)| e < be) {
                best_seed = Some((s, e));
            }
        }
        if let Some((seed, _)) = best_seed {
            let outcome = discrete_descent(
                mesh,
                seed,
                &geometry,
                config.max_descent_steps,
                config.offset_samples,
                &mut |v| eval(CandidateKey::Vertex(v), &mut cache, &mut evaluations),
            );
            let key = CandidateKey::Vertex(outcome.vertex);
            let e = cache[&key];
            if best.as_ref().map_or(true, |(_, be)| e < *be) {
                best = Some((key, e));
            }
        }
    }

    let (key, _) = best.ok_or_else(|| {
        Error::InfeasibleProfile("anchor search found no feasible candidate".into())
    })?;
    let (e_min, slit, profile) =
        evaluate_candidate(mesh, &frame, cutter, params, &config.profile, key)?;
    let theta = match key {
        CandidateKey::Loop(li) => ThetaElement {
            kind: ThetaKind::Boundary { loop_index: li },
            offset_fraction: config.offset_fraction,
        },
        CandidateKey::Vertex(v) => {
            let face = mesh.vertex_faces(v)[0];
            let mut bary = [0.0; 3];
            let pos = mesh.faces()[face as usize].iter().position(|&w| w == v).unwrap();
            bary[pos] = 1.0;
            ThetaElement {
                kind: ThetaKind::InteriorPoint { face, barycentric: bary },
                offset_fraction: config.offset_fraction,
            }
        }
    };
    Ok(ThetaSearchResult { theta, slit, profile, e_min, evaluations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CandidateKey {
    Vertex(u32),
    Loop(usize),
}

fn evaluate_candidate(
    mesh: &TriMesh,
    frame: &FaceFrame,
    cutter: &CutterSpec,
    params: &EnergyParams,
    profile_cfg: &ProfileConfig,
    key: CandidateKey,
) -> Result<(f64, SlitMapResult, RadialProfile)> {
    let anchor = match key {
        CandidateKey::Loop(li) => AnchorSpec::Boundary { loop_index: li },
        CandidateKey::Vertex(v) => {
            let face = mesh.vertex_faces(v)[0];
            let mut bary = [0.0; 3];
            let pos = mesh.faces()[face as usize].iter().position(|&w| w == v).unwrap();
            bary[pos] = 1.0;
            AnchorSpec::Interior { face, barycentric: bary }
        }
    };
    let slit = slit_map(mesh, &anchor)?;
    let result = optimize_radial_profile(mesh, frame, &slit.embedding, cutter, params, profile_cfg)?;
    Ok((result.e_min, slit, result.profile))
}

/// Distances to each boundary loop, anchor eligibility and offset rings.
pub(crate) struct InteriorGeometry {
    pub eligible: Vec<bool>,
    /// Per loop: subsampleable inward offset ring (sorted vertex ids).
    pub offset_rings: Vec<Vec<u32>>,
    /// Graph distance to the nearest boundary vertex.
    pub boundary_distance: Vec<f64>,
    /// Loop id of the nearest boundary vertex.
    pub nearest_loop: Vec<usize>,
    adjacency: Vec<Vec<u32>>,
}

impl InteriorGeometry {
    pub fn build(mesh: &TriMesh, offset_fraction: f64) -> Self {
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

        // One Dijkstra per boundary loop (loop counts are tiny).
        let loops = mesh.boundary_loops();
        let mut per_loop_dist: Vec<Vec<f64>> = Vec::with_capacity(loops.len());
        for cycle in loops {
            per_loop_dist.push(dijkstra(mesh, &adjacency, cycle));
        }
        let mut boundary_distance = vec![f64::INFINITY; nv];
        let mut nearest_loop = vec![0usize; nv];
        for v in 0..nv {
            for (li, dist) in per_loop_dist.iter().enumerate() {
                if dist[v] < boundary_distance[v] {
                    boundary_distance[v] = dist[v];
                    nearest_loop[v] = li;
                }
            }
        }

        let avg = mesh.avg_edge_length();
        let eligible: Vec<bool> = (0..nv)
            .map(|v| !mesh.is_boundary_vertex(v as u32) && boundary_distance[v] >= 2.0 * avg + 1e-12)
            .collect();

        let lo = offset_fraction * avg;
        let hi = (offset_fraction + 1.0) * avg;
        let mut offset_rings: Vec<Vec<u32>> = Vec::with_capacity(loops.len());
        for dist in &per_loop_dist {
            let mut ring: Vec<u32> = (0..nv as u32)
                .filter(|&v| eligible[v as usize] && dist[v as usize] >= lo && dist[v as usize] < hi)
                .collect();
            if ring.is_empty() {
                // Widen until something qualifies.
                ring = (0..nv as u32)
                    .filter(|&v| eligible[v as usize] && dist[v as usize] >= lo)
                    .collect();
            }
            ring.sort_unstable();
            offset_rings.push(ring);
        }

        InteriorGeometry { eligible, offset_rings, boundary_distance, nearest_loop, adjacency }
    }

    /// Deterministic farthest-point sampling of eligible interior vertices,
    /// seeded with the vertex deepest inside the surface.
    pub fn farthest_point_seeds(&self, count: usize) -> Vec<u32> {
        let nv = self.eligible.len();
        let mut seeds: Vec<u32> = Vec::new();
        let mut min_dist = self.boundary_distance.clone();
        for _ in 0..count {
            let next = (0..nv as u32)
                .filter(|&v| self.eligible[v as usize] && !seeds.contains(&v))
                .max_by(|&a, &b| {
                    min_dist[a as usize]
                        .partial_cmp(&min_dist[b as usize])
                        .unwrap()
                        .then(b.cmp(&a))
                });
            let next = match next {
                Some(v) if min_dist[v as usize] > 0.0 => v,
                _ => break,
            };
            seeds.push(next);
            // Fold the new seed into the distance field.
            let from = vec![next];
            let d = dijkstra_from(&self.adjacency, &from, nv, |a, b| {
                let _ = (a, b);
                1.0
            });
            for v in 0..nv {
                min_dist[v] = min_dist[v].min(d[v]);
            }
        }
        seeds
    }
}

fn dijkstra(mesh: &TriMesh, adjacency: &[Vec<u32>], sources: &[u32]) -> Vec<f64> {
    dijkstra_from(adjacency, sources, mesh.vertex_count(), |a, b| {
        (mesh.position(a) - mesh.position(b)).norm()
    })
}

fn dijkstra_from(
    adjacency: &[Vec<u32>],
    sources: &[u32],
    nv: usize,
    edge_len: impl Fn(u32, u32) -> f64,
) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry(f64, u32);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.partial_cmp(&other.0).unwrap().then(self.1.cmp(&other.1))
        }
    }

    let mut dist = vec![f64::INFINITY; nv];
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
    for &s in sources {
        dist[s as usize] = 0.0;
        heap.push(Reverse(Entry(0.0, s)));
    }
    while let Some(Reverse(Entry(d, v))) = heap.pop() {
        if d > dist[v as usize] {
            continue;
        }
        for &nb in &adjacency[v as usize] {
            let nd = d + edge_len(v, nb);
            if nd < dist[nb as usize] {
                dist[nb as usize] = nd;
                heap.push(Reverse(Entry(nd, nb)));
            }
        }
    }
    dist
}

/// Outcome of the one-ring discrete descent.
pub(crate) struct DescentOutcome {
    pub vertex: u32,
    /// Relocations taken: (blocking loop, landing vertex on its offset ring).
    pub relocations: Vec<(usize, u32)>,
}

/// Moves to the best improving eligible neighbor until no neighbor
/// improves. If progress is blocked because the descent leads into a
/// boundary exclusion zone, the iterate jumps to the best sample on that
/// loop's inward offset ring and the walk continues there.
pub(crate) fn discrete_descent(
    mesh: &TriMesh,
    start: u32,
    geometry: &InteriorGeometry,
    max_steps: usize,
    offset_samples: usize,
    eval: &mut impl FnMut(u32) -> f64,
) -> DescentOutcome {
    let mut current = start;
    let mut current_e = eval(current);
    let mut relocations = Vec::new();
    for _ in 0..max_steps {
        let mut ring: Vec<u32> = Vec::new();
        for &fi in mesh.vertex_faces(current) {
            for &w in &mesh.faces()[fi as usize] {
                if w != current && !ring.contains(&w) {
                    ring.push(w);
                }
            }
        }
        ring.sort_unstable();

        let mut best_nb: Option<(u32, f64)> = None;
        let mut blocked_near: Option<usize> = None;
        for &nb in &ring {
            if geometry.eligible[nb as usize] {
                let e = eval(nb);
                if e < current_e && best_nb.map_or(true, |(_, be)| e < be) {
                    best_nb = Some((nb, e));
                }
            } else {
                blocked_near = Some(geometry.nearest_loop[nb as usize]);
            }
        }
        match best_nb {
            Some((nb, e)) => {
                current = nb;
                current_e = e;
            }
            None => {
                // No eligible improvement; if boundary territory borders the
                // iterate, probe that loop's offset ring (relocation rule).
                let li = match blocked_near {
                    Some(li) => li,
                    None => break,
                };
                let ring = &geometry.offset_rings[li];
                if ring.is_empty() {
                    break;
                }
                let stride = (ring.len() / offset_samples.max(1)).max(1);
                let mut best_off: Option<(u32, f64)> = None;
                for &v in ring.iter().step_by(stride) {
                    if v == current {
                        continue;
                    }
                    let e = eval(v);
                    if best_off.map_or(true, |(_, be)| e < be) {
                        best_off = Some((v, e));
                    }
                }
                match best_off {
                    Some((v, e)) if e < current_e => {
                        relocations.push((li, v));
                        current = v;
                        current_e = e;
                    }
                    _ => break,
                }
            }
        }
    }
    DescentOutcome { vertex: current, relocations }
}

/// Re-embeds the slit domain through the optimized profile and reads off
/// the initial scalar field: `S^H = dir(S^S) f(||S^S||)`, `T = ||S^H||`.
pub fn initialize_domain(
    mesh: &TriMesh,
    slit: &DomainEmbedding,
    profile: &RadialProfile,
) -> Result<(DomainEmbedding, ScalarField)> {
    if !profile.is_strictly_increasing() {
        return Err(Error::InfeasibleProfile("profile values are not strictly increasing".into()));
    }
    let radii: Vec<f64> = slit.radii.iter().map(|&r| profile.eval(r)).collect();
    let loop_radii: Vec<f64> = slit.loop_radii.iter().map(|&r| profile.eval(r)).collect();
    let embedding = DomainEmbedding { angles: slit.angles.clone(), radii, loop_radii };
    let positions = embedding.positions();
    let inverted = mesh.channel_inverted_count(&positions);
    if inverted > 0 {
        return Err(Error::ProfileInversion { count: inverted });
    }
    let field = ScalarField::from_embedding(&embedding);
    Ok((embedding, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mesh::Channel;

    fn annulus_setup() -> (TriMesh, SlitMapResult) {
        let mesh = fixtures::flat_annulus(0.5, 1.0, 16, 72);
        let slit = slit_map(&mesh, &AnchorSpec::Boundary { loop_index: 1 }).unwrap();
        (mesh, slit)
    }

    #[test]
    fn optimal_profile_on_flat_annulus_is_linear() {
        // On a flat identity-mapped annulus the smoothness terms do not
        // depend on f, so the optimum balances K_c/(8 f'^2) against its
        // reciprocal pointwise: f' constant, i.e. f linear. The mesh packs
        // two rings per profile segment so every node value is observable.
        let mesh = fixtures::flat_annulus(0.5, 1.0, 48, 72);
        let slit = slit_map(&mesh, &AnchorSpec::Boundary { loop_index: 1 }).unwrap();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = ProfileConfig { nodes: 24, max_sweeps: 600, rel_tol: 1e-10 };
        let result =
            optimize_radial_profile(&mesh, &frame, &slit.embedding, &cutter, &params, &config)
                .unwrap();
        assert!(result.profile.is_strictly_increasing());

        // Non-increasing trace.
        for w in result.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }

        // Least-squares line through the optimized nodes.
        let xs = &result.profile.nodes;
        let ys = &result.profile.values;
        let n = xs.len() as f64;
        let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let icept = (sy - slope * sx) / n;
        let range = ys.last().unwrap() - ys[0];
        let max_dev = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - (slope * x + icept)).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_dev < 0.01 * range,
            "profile deviates from linearity: {max_dev} vs 1% of {range}"
        );

        // Brute force: no random monotone profile beats the optimizer.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ctxframe = curvature_tensor(&mesh);
        let ctx = EnergyContext::new(&mesh, &ctxframe, &cutter, &params, 0.5);
        let mut best_random = f64::INFINITY;
        for _ in 0..60 {
            let mut vals = vec![0.5];
            let mut acc: f64 = 0.5;
            for _ in 0..24 {
                acc += rng.random_range(1e-4..0.03);
                vals.push(acc);
            }
            let prof = RadialProfile {
                nodes: result.profile.nodes.clone(),
                values: vals,
            };
            let field: Vec<f64> = slit.embedding.radii.iter().map(|&r| prof.eval(r)).collect();
            let e = EnergyState::new(&ctx, &field).unwrap().total();
            best_random = best_random.min(e);
        }
        assert!(
            result.e_min <= best_random * (1.0 + 1e-6),
            "random profile beat the optimizer: {} < {}",
            best_random,
            result.e_min
        );
    }

    #[test]
    fn initialize_domain_identity_profile_is_identity() {
        let (mesh, slit) = annulus_setup();
        let min_r = slit.domain.min_radius;
        let profile = RadialProfile::identity(min_r, 16);
        let (emb, field) = initialize_domain(&mesh, &slit.embedding, &profile).unwrap();
        for v in 0..mesh.vertex_count() {
            assert!((emb.radii[v] - slit.embedding.radii[v]).abs() < 1e-12);
            assert_eq!(field.values[v], emb.radii[v]);
        }
    }

    #[test]
    fn initialize_domain_keeps_loops_cocircular_and_upright() {
        let mesh = fixtures::three_hole_disk();
        let face = crate::slitmap::nearest_face(&mesh, nalgebra::Point2::origin());
        let slit =
            slit_map(&mesh, &AnchorSpec::Interior { face, barycentric: [1.0 / 3.0; 3] }).unwrap();
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = ProfileConfig { nodes: 48, max_sweeps: 60, rel_tol: 1e-7 };
        let result =
            optimize_radial_profile(&mesh, &frame, &slit.embedding, &cutter, &params, &config)
                .unwrap();
        let (emb, field) = initialize_domain(&mesh, &slit.embedding, &result.profile).unwrap();
        // Boundary isovalues are exact by construction.
        for (li, cycle) in mesh.boundary_loops().iter().enumerate() {
            for &v in cycle {
                assert_eq!(emb.radii[v as usize], emb.loop_radii[li]);
                assert_eq!(field.values[v as usize], field.boundary_isovalues[li]);
            }
        }
        // Optimized initialization is no worse than the identity profile.
        let id = RadialProfile::identity(slit.domain.min_radius, 48);
        let (_, field_id) = initialize_domain(&mesh, &slit.embedding, &id).unwrap();
        let rep_opt =
            crate::energy::evaluate_energy(&mesh, &frame, &field, &cutter, &params).unwrap();
        let rep_id =
            crate::energy::evaluate_energy(&mesh, &frame, &field_id, &cutter, &params).unwrap();
        assert!(rep_opt.e <= rep_id.e + 1e-9 * rep_id.e);
    }

    #[test]
    fn initial_field_has_no_interior_critical_vertex() {
        let mesh = fixtures::three_hole_disk();
        let face = crate::slitmap::nearest_face(&mesh, nalgebra::Point2::origin());
        let slit =
            slit_map(&mesh, &AnchorSpec::Interior { face, barycentric: [1.0 / 3.0; 3] }).unwrap();
        let anchor_vertex = match slit.domain.anchor {
            crate::domain::Anchor::Interior { vertex, .. } => vertex,
            _ => unreachable!(),
        };
        let field = ScalarField::from_embedding(&slit.embedding);
        for v in 0..mesh.vertex_count() as u32 {
            if mesh.is_boundary_vertex(v) || v == anchor_vertex {
                continue;
            }
            let tv = field.values[v as usize];
            let mut lower = false;
            let mut higher = false;
            for &fi in mesh.vertex_faces(v) {
                for &w in &mesh.faces()[fi as usize] {
                    if w == v {
                        continue;
                    }
                    let tw = field.values[w as usize];
                    lower |= tw < tv;
                    higher |= tw > tv;
                }
            }
            assert!(lower && higher, "interior critical vertex {v}");
        }
    }

    #[test]
    fn non_monotone_profile_rejected() {
        let (mesh, slit) = annulus_setup();
        let mut profile = RadialProfile::identity(0.5, 8);
        profile.values[3] = profile.values[5];
        let err = initialize_domain(&mesh, &slit.embedding, &profile);
        assert!(matches!(err, Err(Error::InfeasibleProfile(_))));
    }

    #[test]
    fn annulus_beats_disk_on_symmetric_annulus() {
        // Rotationally symmetric flat annulus: the annulus branch on the
        // inner loop cannot be worse than any interior disk anchor.
        let mesh = fixtures::flat_annulus(0.5, 1.0, 8, 36);
        let frame = curvature_tensor(&mesh);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let cfg = ProfileConfig { nodes: 24, max_sweeps: 80, rel_tol: 1e-7 };

        let (e_annulus, _, _) =
            evaluate_candidate(&mesh, &frame, &cutter, &params, &cfg, CandidateKey::Loop(1))
                .unwrap();
        // Exhaustive over every eligible interior vertex.
        let geometry = InteriorGeometry::build(&mesh, 2.0);
        let mut best_disk = f64::INFINITY;
        let mut tried = 0;
        for v in 0..mesh.vertex_count() as u32 {
            if !geometry.eligible[v as usize] {
                continue;
            }
            if let Ok((e, _, _)) =
                evaluate_candidate(&mesh, &frame, &cutter, &params, &cfg, CandidateKey::Vertex(v))
            {
                best_disk = best_disk.min(e);
                tried += 1;
            }
        }
        assert!(tried > 10, "exhaustive disk sweep evaluated {tried} anchors");
        assert!(
            e_annulus <= best_disk,
            "annulus branch {e_annulus} must not lose to best disk {best_disk}"
        );
    }

    #[test]
    fn search_theta_picks_annulus_on_annulus() {
        let mesh = fixtures::flat_annulus(0.5, 1.0, 8, 36);
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = ThetaConfig {
            seeds: 3,
            max_descent_steps: 2,
            profile: ProfileConfig { nodes: 24, max_sweeps: 40, rel_tol: 1e-6 },
            ..Default::default()
        };
        let result = search_theta(&mesh, &cutter, &params, &config).unwrap();
        assert!(matches!(result.theta.kind, ThetaKind::Boundary { loop_index: 1 }));
        assert!(result.evaluations >= 4);
    }

    #[test]
    fn descent_never_accepts_an_increase() {
        let mesh = fixtures::one_hole_disk();
        let geometry = InteriorGeometry::build(&mesh, 2.0);
        // Synthetic objective: distance to a fixed interior point.
        let target = nalgebra::Point3::new(-8.0, 6.0, 0.0);
        let mut trace: Vec<f64> = Vec::new();
        let mut eval = |v: u32| -> f64 {
            let e = (mesh.position(v) - target).norm();
            trace.push(e);
            e
        };
        let seeds = geometry.farthest_point_seeds(4);
        for &s in &seeds {
            let out = discrete_descent(&mesh, s, &geometry, 200, 8, &mut eval);
            let end = (mesh.position(out.vertex) - target).norm();
            let start = (mesh.position(s) - target).norm();
            assert!(end <= start);
        }
    }

    #[test]
    fn descent_relocates_through_boundary() {
        // Objective pulls the iterate into the hole of a one-hole disk: the
        // minimizing point lies behind the inner boundary, so the descent
        // must relocate onto that loop's offset ring.
        let mesh = fixtures::one_hole_disk();
        let geometry = InteriorGeometry::build(&mesh, 2.0);
        // The hole is centered at (6, -3); target inside it.
        let target = nalgebra::Point3::new(6.0, -3.0, 0.0);
        let mut eval = |v: u32| -> f64 { (mesh.position(v) - target).norm() };
        // Start far from the hole.
        let start = (0..mesh.vertex_count() as u32)
            .filter(|&v| geometry.eligible[v as usize])
            .max_by(|&a, &b| {
                let da = (mesh.position(a) - target).norm();
                let db = (mesh.position(b) - target).norm();
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        let out = discrete_descent(&mesh, start, &geometry, 500, 8, &mut eval);
        assert!(!out.relocations.is_empty(), "descent should have relocated");
        let (li, landing) = out.relocations[0];
        assert!(li > 0, "relocation must target an inner loop");
        assert!(
            geometry.offset_rings[li].contains(&landing),
            "landing vertex must be on the offset ring"
        );
    }

    #[test]
    fn search_theta_runs_on_three_hole_disk() {
        let mesh = fixtures::three_hole_disk();
        let cutter = CutterSpec::new(10.0).unwrap();
        let params = EnergyParams::default();
        let config = ThetaConfig {
            seeds: 2,
            max_descent_steps: 1,
            profile: ProfileConfig { nodes: 24, max_sweeps: 20, rel_tol: 1e-5 },
            ..Default::default()
        };
        let result = search_theta(&mesh, &cutter, &params, &config).unwrap();
        assert!(result.e_min.is_finite());
        // The winning field must be attachable and valid.
        let (emb, field) = initialize_domain(&mesh, &result.slit.embedding, &result.profile).unwrap();
        let mut mesh = mesh;
        mesh.set_channel(Channel::Optimized, emb.positions());
        assert_eq!(
            mesh.channel_inverted_count(mesh.channel(Channel::Optimized).unwrap()),
            0
        );
        assert_eq!(field.values.len(), mesh.vertex_count());
    }
}
