//! Meshes on the compact models and circle-averaged fields on them.
//!
//! Circle averages of the eigenmodes are tabulated once per mesh row: the
//! regularization circle about `(u, v)` is the rotation by `v` of the circle
//! about `(u, 0)`, which is symmetric under `v ↦ −v`. A field sample then
//! costs one pass over the modes per row and one trigonometric sum per cell.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{GffSample, SpectralBasis};
use crate::surfaces::{SurfaceKind, SurfaceModel, SurfacePoint, DEFAULT_CIRCLE_POINTS};

/// A set of cells with centers and measures (area or length).
#[derive(Debug, Clone, PartialEq)]
pub struct Cells {
    pub centers: Vec<SurfacePoint>,
    pub measures: Vec<f64>,
}

impl Cells {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        crate::mc::pairwise_sum(&self.measures)
    }
}

/// Uniform chart mesh: bulk rows at cell midpoints, boundary rows on ∂Σ.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub surface: SurfaceModel,
    pub bulk_rows: Vec<f64>,
    pub bulk_row_measure: Vec<f64>,
    pub boundary_rows: Vec<f64>,
    pub cols: usize,
    pub du: f64,
    pub dv: f64,
    /// Largest cell side in the background metric.
    pub cell_size: f64,
}

impl Mesh {
    /// Mesh whose cells have side at most `cell_size`.
    pub fn new(surface: &SurfaceModel, cell_size: f64) -> Result<Self> {
        if !surface.is_compact() {
            return Err(Error::Unsupported("chart meshes of the DOZZ half-plane".into()));
        }
        if !(cell_size > 0.0) {
            return Err(Error::param("cell_size", "must be positive"));
        }
        let ext = surface.transverse_extent();
        let per = surface.azimuth_period();
        // Longest azimuthal circle: the cylinder's unit circle or the equator.
        let circ = match surface.kind {
            SurfaceKind::Hemisphere => 2.0 * PI,
            _ => per,
        };
        let rows = (ext / cell_size).ceil().max(1.0) as usize;
        let cols = (circ / cell_size).ceil().max(8.0) as usize;
        let du = ext / rows as f64;
        let dv = per / cols as f64;
        let sphere = matches!(surface.kind, SurfaceKind::Hemisphere);
        let bulk_rows: Vec<f64> = (0..rows).map(|r| (r as f64 + 0.5) * du).collect();
        let bulk_row_measure = (0..rows)
            .map(|r| {
                if sphere {
                    ((r as f64 * du).cos() - ((r + 1) as f64 * du).cos()) * dv
                } else {
                    du * dv
                }
            })
            .collect();
        let boundary_rows = match surface.kind {
            SurfaceKind::FlatCylinder { height } => vec![0.0, height],
            _ => vec![ext],
        };
        Ok(Mesh {
            surface: surface.clone(),
            bulk_rows,
            bulk_row_measure,
            boundary_rows,
            cols,
            du,
            dv,
            cell_size: du.max(circ / cols as f64),
        })
    }

    /// The coarsest mesh resolving `eps` (cell size `eps / 2`).
    pub fn for_eps(surface: &SurfaceModel, eps: f64) -> Result<Self> {
        Mesh::new(surface, 0.5 * eps)
    }

    pub fn col_v(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.dv
    }

    pub fn bulk_cells(&self) -> Cells {
        let mut centers = Vec::with_capacity(self.bulk_rows.len() * self.cols);
        let mut measures = Vec::with_capacity(centers.capacity());
        for (u, m) in self.bulk_rows.iter().zip(&self.bulk_row_measure) {
            for c in 0..self.cols {
                centers.push(SurfacePoint::new(*u, self.col_v(c)));
                measures.push(*m);
            }
        }
        Cells { centers, measures }
    }

    pub fn boundary_cells(&self) -> Cells {
        let mut centers = Vec::new();
        let mut measures = Vec::new();
        for u in &self.boundary_rows {
            for c in 0..self.cols {
                centers.push(SurfacePoint::new(*u, self.col_v(c)));
                // dv is a length on both models: ∂Σ has unit speed in v.
                measures.push(self.dv);
            }
        }
        Cells { centers, measures }
    }
}

/// Circle averages of every mode around `z`.
pub fn circle_mode_averages(
    basis: &SpectralBasis,
    z: &SurfacePoint,
    eps: f64,
    circle_points: usize,
) -> Result<Vec<f64>> {
    let sample = basis.surface.geodesic_circle_sample(z, eps, circle_points)?;
    let mut acc = vec![0.0; basis.len()];
    for (p, w) in sample.points.iter().zip(&sample.weights) {
        for (a, e) in acc.iter_mut().zip(basis.eval_all(p)) {
            *a += w * e;
        }
    }
    Ok(acc)
}

fn row_table(basis: &SpectralBasis, u: f64, eps: f64, n: usize) -> Result<Vec<f64>> {
    let sample = basis.surface.geodesic_circle_sample(&SurfacePoint::new(u, 0.0), eps, n)?;
    let mut acc = vec![0.0; basis.len()];
    for (p, w) in sample.points.iter().zip(&sample.weights) {
        for (a, e) in acc.iter_mut().zip(basis.eval_all_cos(p)) {
            *a += w * e;
        }
    }
    Ok(acc)
}

/// Circle-averaged field values on a mesh at one regularization radius.
#[derive(Debug, Clone)]
pub struct RegularizedField {
    pub eps: f64,
    /// Row-major bulk values, aligned with `bulk_cells`.
    pub bulk: Vec<f64>,
    pub boundary: Vec<f64>,
    pub bulk_cells: Arc<Cells>,
    pub boundary_cells: Arc<Cells>,
    /// `E[X_ε²]` per bulk cell.
    pub bulk_variance: Arc<Vec<f64>>,
    pub boundary_variance: Arc<Vec<f64>>,
}

impl RegularizedField {
    pub fn add_constant(&mut self, c: f64) {
        self.bulk.iter_mut().chain(self.boundary.iter_mut()).for_each(|x| *x += c);
    }

    /// Average of the bulk values under the weight `w` per cell.
    pub fn weighted_mean(&self, w: &[f64]) -> f64 {
        let num: Vec<f64> = self
            .bulk
            .iter()
            .zip(w)
            .zip(&self.bulk_cells.measures)
            .map(|((x, w), m)| x * w * m)
            .collect();
        let den: Vec<f64> = w.iter().zip(&self.bulk_cells.measures).map(|(w, m)| w * m).collect();
        crate::mc::pairwise_sum(&num) / crate::mc::pairwise_sum(&den)
    }
}

/// Precomputed circle-average tables for one `(basis, mesh, ε)`.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    pub eps: f64,
    pub mesh: Mesh,
    modes_k: Vec<usize>,
    modes_sine: Vec<bool>,
    kmax: usize,
    bulk_table: Vec<Vec<f64>>,
    boundary_table: Vec<Vec<f64>>,
    /// `(cos, sin)(k ω v_c)` per column, `kmax + 1` entries each.
    trig: Vec<Vec<(f64, f64)>>,
    bulk_cells: Arc<Cells>,
    boundary_cells: Arc<Cells>,
    bulk_variance: Arc<Vec<f64>>,
    boundary_variance: Arc<Vec<f64>>,
}

impl FieldEvaluator {
    pub fn new(basis: &SpectralBasis, mesh: &Mesh, eps: f64, circle_points: usize) -> Result<Self> {
        if mesh.cell_size > 0.5 * eps * (1.0 + 1e-9) {
            return Err(Error::MeshTooCoarse { cell: mesh.cell_size, eps });
        }
        let bulk_table = mesh
            .bulk_rows
            .iter()
            .map(|&u| row_table(basis, u, eps, circle_points))
            .collect::<Result<Vec<_>>>()?;
        let boundary_table = mesh
            .boundary_rows
            .iter()
            .map(|&u| row_table(basis, u, eps, circle_points))
            .collect::<Result<Vec<_>>>()?;
        let omega = basis.surface.azimuth_frequency();
        let kmax = basis.max_k() as usize;
        let trig = (0..mesh.cols)
            .map(|c| {
                let v = mesh.col_v(c);
                (0..=kmax).map(|k| {
                    let (s, co) = (k as f64 * omega * v).sin_cos();
                    (co, s)
                }).collect()
            })
            .collect();
        let row_var = |a: &Vec<f64>| -> f64 {
            basis
                .modes
                .iter()
                .zip(a)
                .filter(|(m, _)| !m.sine)
                .map(|(m, x)| 2.0 * PI * x * x / m.lambda)
                .sum()
        };
        let expand = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter().flat_map(|a| std::iter::repeat_n(row_var(a), mesh.cols)).collect()
        };
        Ok(FieldEvaluator {
            eps,
            mesh: mesh.clone(),
            modes_k: basis.modes.iter().map(|m| m.k as usize).collect(),
            modes_sine: basis.modes.iter().map(|m| m.sine).collect(),
            kmax,
            bulk_variance: Arc::new(expand(&bulk_table)),
            boundary_variance: Arc::new(expand(&boundary_table)),
            bulk_table,
            boundary_table,
            trig,
            bulk_cells: Arc::new(mesh.bulk_cells()),
            boundary_cells: Arc::new(mesh.boundary_cells()),
        })
    }

    pub fn with_default_circle(basis: &SpectralBasis, eps: f64) -> Result<Self> {
        let mesh = Mesh::for_eps(&basis.surface, eps)?;
        FieldEvaluator::new(basis, &mesh, eps, DEFAULT_CIRCLE_POINTS)
    }

    fn rows(&self, table: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(table.len() * self.mesh.cols);
        let mut cs = vec![(0.0, 0.0); self.kmax + 1];
        for a in table {
            cs.iter_mut().for_each(|x| *x = (0.0, 0.0));
            for (i, (&ai, &b)) in a.iter().zip(coeffs).enumerate() {
                let slot = &mut cs[self.modes_k[i]];
                if self.modes_sine[i] {
                    slot.1 += ai * b;
                } else {
                    slot.0 += ai * b;
                }
            }
            for trig in &self.trig {
                out.push(cs.iter().zip(trig).map(|(s, t)| s.0 * t.0 + s.1 * t.1).sum());
            }
        }
        out
    }

    /// Field with mode coefficients `coeffs` (e.g. `√(2π/λ_j) α_j`) on the mesh.
    pub fn evaluate(&self, coeffs: &[f64]) -> RegularizedField {
        RegularizedField {
            eps: self.eps,
            bulk: self.rows(&self.bulk_table, coeffs),
            boundary: self.rows(&self.boundary_table, coeffs),
            bulk_cells: Arc::clone(&self.bulk_cells),
            boundary_cells: Arc::clone(&self.boundary_cells),
            bulk_variance: Arc::clone(&self.bulk_variance),
            boundary_variance: Arc::clone(&self.boundary_variance),
        }
    }

    pub fn bulk_cells(&self) -> &Cells {
        &self.bulk_cells
    }

    pub fn boundary_cells(&self) -> &Cells {
        &self.boundary_cells
    }

    pub fn bulk_variance(&self) -> &[f64] {
        &self.bulk_variance
    }

    pub fn boundary_variance(&self) -> &[f64] {
        &self.boundary_variance
    }
}

/// Circle-averaged free-field sample on a mesh.
pub fn regularize_field(
    sample: &GffSample,
    basis: &SpectralBasis,
    mesh: &Mesh,
    eps: f64,
) -> Result<RegularizedField> {
    let ev = FieldEvaluator::new(basis, mesh, eps, DEFAULT_CIRCLE_POINTS)?;
    Ok(ev.evaluate(&sample.field_coefficients(basis)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::StreamFamily;
    use crate::spectral::{build_basis, sample_gff, BoundaryCondition};

    #[test]
    fn mesh_measures_add_up() {
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let m = Mesh::for_eps(&c, 0.1).unwrap();
        assert!((m.bulk_cells().total_measure() - 1.0).abs() < 1e-12);
        assert!((m.boundary_cells().total_measure() - 2.0).abs() < 1e-12);
        assert!(m.cell_size <= 0.05);
        let h = SurfaceModel::hemisphere();
        let m = Mesh::for_eps(&h, 0.1).unwrap();
        assert!((m.bulk_cells().total_measure() - 2.0 * PI).abs() < 1e-12);
        assert!((m.boundary_cells().total_measure() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn coarse_mesh_is_rejected() {
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let b = build_basis(&c, BoundaryCondition::Neumann, 64).unwrap();
        let m = Mesh::new(&c, 0.1).unwrap();
        assert!(matches!(FieldEvaluator::new(&b, &m, 0.1, 32), Err(Error::MeshTooCoarse { .. })));
    }

    #[test]
    fn tabulated_field_matches_direct_circle_average() {
        for s in [SurfaceModel::cylinder(1.0).unwrap(), SurfaceModel::hemisphere()] {
            let b = build_basis(&s, BoundaryCondition::Neumann, 200).unwrap();
            let eps = 0.2;
            let ev = FieldEvaluator::with_default_circle(&b, eps).unwrap();
            let sample = sample_gff(&b, &StreamFamily::new(3), 0);
            let coeffs = sample.field_coefficients(&b);
            let f = ev.evaluate(&coeffs);
            let cells = ev.bulk_cells();
            for idx in [0, 7, cells.len() / 2, cells.len() - 3] {
                let z = cells.centers[idx];
                let avg = circle_mode_averages(&b, &z, eps, DEFAULT_CIRCLE_POINTS).unwrap();
                let direct: f64 = avg.iter().zip(&coeffs).map(|(a, c)| a * c).sum();
                assert!((direct - f.bulk[idx]).abs() < 1e-10, "{:?} cell {idx}", s.kind);
                let var: f64 = avg.iter().zip(&b.modes).map(|(a, m)| 2.0 * PI * a * a / m.lambda).sum();
                assert!((var - ev.bulk_variance()[idx]).abs() < 1e-10);
            }
            let bc = ev.boundary_cells();
            let z = bc.centers[3];
            let avg = circle_mode_averages(&b, &z, eps, DEFAULT_CIRCLE_POINTS).unwrap();
            let direct: f64 = avg.iter().zip(&coeffs).map(|(a, c)| a * c).sum();
            assert!((direct - f.boundary[3]).abs() < 1e-10);
        }
    }

    #[test]
    fn constants_are_preserved() {
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let b = build_basis(&c, BoundaryCondition::Neumann, 16).unwrap();
        let ev = FieldEvaluator::with_default_circle(&b, 0.25).unwrap();
        let mut f = ev.evaluate(&vec![0.0; b.len()]);
        f.add_constant(1.5);
        assert!(f.bulk.iter().chain(&f.boundary).all(|&x| x == 1.5));
    }

    #[test]
    fn boundary_variance_is_twice_the_double_variance() {
        // X^Σ(s) = √2 X^dΣ(s): the half-circle average of the Neumann field at
        // a boundary point equals √2 times the full-circle average of the
        // closed field.
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let lam = 2000.0;
        let n = crate::spectral::build_basis_cutoff(&c, BoundaryCondition::Neumann, lam).unwrap();
        let d = crate::spectral::build_basis_cutoff(&c, BoundaryCondition::Closed, lam).unwrap();
        let s = SurfacePoint::new(0.0, 0.3);
        let eps = 0.1;
        let an = circle_mode_averages(&n, &s, eps, 64).unwrap();
        let mut ad = vec![0.0; d.len()];
        for k in 0..64 {
            let p = c.circle_point(&s, eps, 2.0 * PI * k as f64 / 64.0);
            for (a, e) in ad.iter_mut().zip(d.eval_all(&p)) {
                *a += e / 64.0;
            }
        }
        let vn: f64 = an.iter().zip(&n.modes).map(|(a, m)| 2.0 * PI * a * a / m.lambda).sum();
        let vd: f64 = ad.iter().zip(&d.modes).map(|(a, m)| 2.0 * PI * a * a / m.lambda).sum();
        assert!((vn - 2.0 * vd).abs() < 1e-9 * vn);
    }
}
