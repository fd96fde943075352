//! Canonical planar domain state: slit-domain metadata, the polar embedding
//! the optimizer mutates, and the scalar field read off it.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::mesh::TriMesh;

/// Which canonical domain the slit mapping targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlitMode {
    /// Unit disk; the anchor point maps to the center.
    Disk,
    /// Unit annulus; a designated boundary maps to the inner circle.
    Annulus,
}

/// Where the mapping is anchored.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Anchor {
    /// Interior point given on a face; the construction resolves it to the
    /// dominant vertex of that face.
    Interior {
        face: u32,
        barycentric: [f64; 3],
        /// Vertex the logarithmic source was placed on.
        vertex: u32,
    },
    /// Boundary loop mapped to the annulus inner circle.
    Boundary { loop_index: usize },
}

/// One hole image: a concentric circular-arc slit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlitArc {
    pub loop_index: usize,
    pub radius: f64,
    pub angle_start: f64,
    pub angle_end: f64,
}

/// Canonical planar domain produced by the slit mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlitDomain {
    pub mode: SlitMode,
    /// Inner-circle radius `R_A`; only in annulus mode.
    pub inner_radius: Option<f64>,
    pub slits: Vec<SlitArc>,
    pub anchor: Anchor,
    /// Image radius per boundary loop (loop 0 is exactly 1).
    pub loop_radii: Vec<f64>,
    /// Smallest image radius over all vertices.
    pub min_radius: f64,
}

/// Polar per-vertex embedding of a planar domain.
///
/// The optimizer only ever moves vertices radially, so angles are fixed at
/// construction and boundary loops carry one shared radius scalar; this
/// keeps boundary co-circularity exact by representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainEmbedding {
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
    /// Shared radius per boundary loop (indexed like `mesh.boundary_loops()`).
    pub loop_radii: Vec<f64>,
}

impl DomainEmbedding {
    /// Builds the polar state from per-vertex 2D positions. Boundary-loop
    /// radii are averaged over members and written back to the members so
    /// co-circularity holds exactly.
    pub fn from_positions(mesh: &TriMesh, positions: &[Point2<f64>]) -> Self {
        assert_eq!(positions.len(), mesh.vertex_count());
        let mut angles = Vec::with_capacity(positions.len());
        let mut radii = Vec::with_capacity(positions.len());
        for p in positions {
            angles.push(p.y.atan2(p.x));
            radii.push(p.coords.norm());
        }
        let mut loop_radii = Vec::with_capacity(mesh.boundary_loops().len());
        for cycle in mesh.boundary_loops() {
            let mean = cycle.iter().map(|&v| radii[v as usize]).sum::<f64>() / cycle.len() as f64;
            for &v in cycle {
                radii[v as usize] = mean;
            }
            loop_radii.push(mean);
        }
        DomainEmbedding { angles, radii, loop_radii }
    }

    pub fn position(&self, v: u32) -> Point2<f64> {
        let (r, a) = (self.radii[v as usize], self.angles[v as usize]);
        Point2::new(r * a.cos(), r * a.sin())
    }

    pub fn positions(&self) -> Vec<Point2<f64>> {
        (0..self.radii.len() as u32).map(|v| self.position(v)).collect()
    }

    /// Moves one interior vertex radially.
    pub fn set_vertex_radius(&mut self, v: u32, r: f64) {
        self.radii[v as usize] = r;
    }

    /// Moves an entire boundary loop radially, keeping members in lockstep.
    pub fn set_loop_radius(&mut self, mesh: &TriMesh, loop_index: usize, r: f64) {
        self.loop_radii[loop_index] = r;
        for &v in &mesh.boundary_loops()[loop_index] {
            self.radii[v as usize] = r;
        }
    }
}

/// Per-vertex scalar field with one isovalue per boundary loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
    /// `boundary_isovalues[i]` is the constant value on loop i.
    pub boundary_isovalues: Vec<f64>,
}

impl ScalarField {
    /// Field induced by a domain embedding: `T(v) = ||V^H||`.
    pub fn from_embedding(embedding: &DomainEmbedding) -> Self {
        ScalarField {
            values: embedding.radii.clone(),
            boundary_isovalues: embedding.loop_radii.clone(),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
