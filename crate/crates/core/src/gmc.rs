//! Regularized Gaussian multiplicative chaos on the compact models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Cells, FieldEvaluator, RegularizedField};
use crate::mc::{pairwise_sum, replicates, MeanEstimate, StreamFamily};
use crate::spectral::{build_basis, sample_gff, BoundaryCondition};
use crate::surfaces::SurfaceModel;

/// `Q = 2/γ + γ/2`
pub fn background_charge(gamma: f64) -> f64 {
    2.0 / gamma + gamma / 2.0
}

/// `ε_k = 2^{−k} ε₀`, `k = 0..levels`.
pub fn dyadic_ladder(eps0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| eps0 * 0.5f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Bulk,
    Boundary,
}

impl MeasureKind {
    /// Charge multiplying the field in the exponent: `γ` or `γ/2`.
    fn field_factor(self, gamma: f64) -> f64 {
        match self {
            MeasureKind::Bulk => gamma,
            MeasureKind::Boundary => 0.5 * gamma,
        }
    }

    /// Power of `ε`: `γ²/2` or `γ²/4`.
    fn eps_power(self, gamma: f64) -> f64 {
        match self {
            MeasureKind::Bulk => 0.5 * gamma * gamma,
            MeasureKind::Boundary => 0.25 * gamma * gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmcMeasure {
    pub kind: MeasureKind,
    pub gamma: f64,
    pub eps: f64,
    pub critical: bool,
    pub weights: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 2.0 {
        Ok(())
    } else {
        Err(Error::param("gamma", format!("must lie in (0, 2], got {gamma}")))
    }
}

fn critical_factor(gamma: f64, eps: f64) -> f64 {
    if gamma == 2.0 {
        (1.0 / eps).ln().sqrt()
    } else {
        1.0
    }
}

fn build(kind: MeasureKind, values: &[f64], cells: &Cells, gamma: f64, eps: f64) -> Result<GmcMeasure> {
    check_gamma(gamma)?;
    let a = kind.field_factor(gamma);
    let scale = eps.powf(kind.eps_power(gamma)) * critical_factor(gamma, eps);
    let weights = values
        .iter()
        .zip(&cells.measures)
        .map(|(x, m)| scale * (a * x).exp() * m)
        .collect();
    Ok(GmcMeasure { kind, gamma, eps, critical: gamma == 2.0, weights })
}

/// Cells weighted by `ε^{γ²/2} e^{γX_ε} dv`, times `√ln(1/ε)` at `γ = 2`.
pub fn bulk_measure(field: &RegularizedField, gamma: f64) -> Result<GmcMeasure> {
    build(MeasureKind::Bulk, &field.bulk, &field.bulk_cells, gamma, field.eps)
}

/// Boundary cells weighted by `ε^{γ²/4} e^{γX_ε/2} dλ`, times `√ln(1/ε)` at `γ = 2`.
pub fn boundary_measure(field: &RegularizedField, gamma: f64) -> Result<GmcMeasure> {
    build(MeasureKind::Boundary, &field.boundary, &field.boundary_cells, gamma, field.eps)
}

/// Gaussian-moment expectation of each cell weight given `E[X_ε²]`.
pub fn expected_weights(kind: MeasureKind, gamma: f64, eps: f64, variances: &[f64], measures: &[f64]) -> Vec<f64> {
    let a = kind.field_factor(gamma);
    let scale = eps.powf(kind.eps_power(gamma)) * critical_factor(gamma, eps);
    variances
        .iter()
        .zip(measures)
        .map(|(v, m)| scale * (0.5 * a * a * v).exp() * m)
        .collect()
}

impl GmcMeasure {
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    pub fn mass_of(&self, cells: &[usize]) -> f64 {
        let w: Vec<f64> = cells.iter().map(|&i| self.weights[i]).collect();
        pairwise_sum(&w)
    }

    /// CSV with columns `cell_id,u,v,weight`.
    pub fn write_csv<W: Write>(&self, cells: &Cells, mut out: W) -> Result<()> {
        writeln!(out, "cell_id,u,v,weight")?;
        for (i, (p, w)) in cells.centers.iter().zip(&self.weights).enumerate() {
            writeln!(out, "{i},{:.12e},{:.12e},{:.12e}", p.u, p.v, w)?;
        }
        Ok(())
    }
}

/// Weights for the metric `e^φ g₀`: bulk `× e^{γ(Qφ/2 − m_g X)}`, boundary
/// `× e^{(γ/2)(Qφ/2 − m_g X)}`, with `phi` the factor at each cell center.
pub fn measure_change(measure: &GmcMeasure, phi: &[f64], field_mean: f64) -> Result<GmcMeasure> {
    if phi.len() != measure.weights.len() {
        return Err(Error::param("phi", "one value per cell required"));
    }
    let q = background_charge(measure.gamma);
    let a = measure.kind.field_factor(measure.gamma);
    let weights = measure
        .weights
        .iter()
        .zip(phi)
        .map(|(w, f)| w * (a * (0.5 * q * f - field_mean)).exp())
        .collect();
    Ok(GmcMeasure { weights, ..measure.clone() })
}

/// `E[M^{−p}]` from sampled total masses.
pub fn negative_moment(masses: &[f64], p: f64) -> Result<MeanEstimate> {
    if !(p > 0.0) {
        return Err(Error::param("p", "must be positive"));
    }
    if masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::ZeroMass);
    }
    let xs: Vec<f64> = masses.iter().map(|m| m.powf(-p)).collect();
    Ok(MeanEstimate::from_samples(&xs))
}

/// Total-mass experiment across a dyadic ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassExperiment {
    pub gamma: f64,
    pub ladder: Vec<f64>,
    pub samples: usize,
    pub modes: usize,
    pub circle_points: usize,
    pub negative_moment_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub eps: f64,
    pub bulk: MeanEstimate,
    pub bulk_expected: f64,
    pub boundary: MeanEstimate,
    pub boundary_expected: f64,
    pub bulk_negative_moment: Option<MeanEstimate>,
    pub min_bulk_mass: f64,
    pub min_boundary_mass: f64,
}

impl LevelSummary {
    pub fn bulk_z(&self) -> f64 {
        self.bulk.z_against(self.bulk_expected)
    }

    pub fn boundary_z(&self) -> f64 {
        self.boundary.z_against(self.boundary_expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSummary {
    pub gamma: f64,
    pub levels: Vec<LevelSummary>,
    /// `E[(M_{ε_k} − M_{ε_{k+1}})²]` for consecutive levels.
    pub bulk_cauchy: Vec<MeanEstimate>,
    pub boundary_cauchy: Vec<MeanEstimate>,
}

impl MassSummary {
    pub fn cauchy_monotone(&self) -> bool {
        let dec = |v: &[MeanEstimate]| v.windows(2).all(|w| w[1].mean < w[0].mean);
        dec(&self.bulk_cauchy) && dec(&self.boundary_cauchy)
    }
}

pub fn run_mass_experiment(
    surface: &SurfaceModel,
    exp: &MassExperiment,
    family: &StreamFamily,
) -> Result<MassSummary> {
    check_gamma(exp.gamma)?;
    if exp.samples < 2 || exp.ladder.is_empty() {
        return Err(Error::param("samples", "need at least two samples and one ladder level"));
    }
    let basis = build_basis(surface, BoundaryCondition::Neumann, exp.modes)?;
    let evaluators = exp
        .ladder
        .iter()
        .map(|&eps| {
            let mesh = crate::field::Mesh::for_eps(surface, eps)?;
            FieldEvaluator::new(&basis, &mesh, eps, exp.circle_points)
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma = exp.gamma;
    let per_sample: Vec<Vec<(f64, f64)>> = replicates(exp.samples, |i| {
        let coeffs = sample_gff(&basis, family, i as u64).field_coefficients(&basis);
        evaluators
            .iter()
            .map(|ev| {
                let f = ev.evaluate(&coeffs);
                let b = bulk_measure(&f, gamma).map(|m| m.total_mass()).unwrap_or(f64::NAN);
                let d = boundary_measure(&f, gamma).map(|m| m.total_mass()).unwrap_or(f64::NAN);
                (b, d)
            })
            .collect()
    });
    let mut levels = Vec::new();
    for (k, ev) in evaluators.iter().enumerate() {
        let bulk: Vec<f64> = per_sample.iter().map(|s| s[k].0).collect();
        let bdry: Vec<f64> = per_sample.iter().map(|s| s[k].1).collect();
        let eb = pairwise_sum(&expected_weights(
            MeasureKind::Bulk,
            gamma,
            ev.eps,
            ev.bulk_variance(),
            &ev.bulk_cells().measures,
        ));
        let ed = pairwise_sum(&expected_weights(
            MeasureKind::Boundary,
            gamma,
            ev.eps,
            ev.boundary_variance(),
            &ev.boundary_cells().measures,
        ));
        levels.push(LevelSummary {
            eps: ev.eps,
            bulk: MeanEstimate::from_samples(&bulk),
            bulk_expected: eb,
            boundary: MeanEstimate::from_samples(&bdry),
            boundary_expected: ed,
            bulk_negative_moment: negative_moment(&bulk, exp.negative_moment_p).ok(),
            min_bulk_mass: bulk.iter().copied().fold(f64::INFINITY, f64::min),
            min_boundary_mass: bdry.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    let cauchy = |pick: fn(&(f64, f64)) -> f64| -> Vec<MeanEstimate> {
        (0..evaluators.len().saturating_sub(1))
            .map(|k| {
                let d: Vec<f64> = per_sample
                    .iter()
                    .map(|s| (pick(&s[k]) - pick(&s[k + 1])).powi(2))
                    .collect();
                MeanEstimate::from_samples(&d)
            })
            .collect()
    };
    Ok(MassSummary {
        gamma,
        levels,
        bulk_cauchy: cauchy(|x| x.0),
        boundary_cauchy: cauchy(|x| x.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Mesh;
    use crate::spectral::build_basis;

    fn small_setup(eps: f64) -> (crate::spectral::SpectralBasis, FieldEvaluator) {
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let b = build_basis(&c, BoundaryCondition::Neumann, 128).unwrap();
        let m = Mesh::for_eps(&c, eps).unwrap();
        let ev = FieldEvaluator::new(&b, &m, eps, 32).unwrap();
        (b, ev)
    }

    #[test]
    fn charge_values() {
        assert_eq!(background_charge(1.0), 2.5);
        assert_eq!(background_charge(2.0), 2.0);
    }

    #[test]
    fn small_gamma_recovers_volume() {
        let (b, ev) = small_setup(0.125);
        let f = ev.evaluate(&sample_gff(&b, &StreamFamily::new(1), 0).field_coefficients(&b));
        let m = bulk_measure(&f, 1e-9).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-6);
        let d = boundary_measure(&f, 1e-9).unwrap();
        assert!((d.total_mass() - 2.0).abs() < 1e-6);
        assert!(bulk_measure(&f, 0.0).is_err());
        assert!(bulk_measure(&f, 2.5).is_err());
    }

    #[test]
    fn weights_are_nonnegative_and_additive() {
        let (b, ev) = small_setup(0.125);
        let f = ev.evaluate(&sample_gff(&b, &StreamFamily::new(2), 0).field_coefficients(&b));
        let m = bulk_measure(&f, 1.0).unwrap();
        assert!(m.weights.iter().all(|&w| w >= 0.0));
        let n = m.weights.len();
        let (lo, hi): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % 3 == 0);
        let sum = m.mass_of(&lo) + m.mass_of(&hi);
        assert!((sum - m.total_mass()).abs() < 1e-12 * sum);
        assert_eq!(m.mass_of(&[]), 0.0);
    }

    #[test]
    fn critical_normalization() {
        let (b, ev) = small_setup(0.125);
        let f = ev.evaluate(&vec![0.0; b.len()]);
        let m = bulk_measure(&f, 2.0).unwrap();
        assert!(m.critical);
        let expected = 0.125f64.powi(2) * (8.0f64).ln().sqrt();
        assert!((m.total_mass() - expected).abs() < 1e-12);
    }

    #[test]
    fn measure_change_identity_and_constant() {
        let (b, ev) = small_setup(0.125);
        let f = ev.evaluate(&sample_gff(&b, &StreamFamily::new(4), 0).field_coefficients(&b));
        let m = bulk_measure(&f, 1.0).unwrap();
        let zero = vec![0.0; m.weights.len()];
        assert_eq!(measure_change(&m, &zero, 0.0).unwrap(), m);
        let a = 0.3;
        let cst = vec![a; m.weights.len()];
        let changed = measure_change(&m, &cst, 0.0).unwrap();
        let ratio = changed.total_mass() / m.total_mass();
        assert!((ratio - (1.0 * 2.5 * a / 2.0).exp()).abs() < 1e-12);
        let bd = boundary_measure(&f, 1.0).unwrap();
        let cst = vec![a; bd.weights.len()];
        let r = measure_change(&bd, &cst, 0.1).unwrap().total_mass() / bd.total_mass();
        assert!((r - (0.5 * (2.5 * a / 2.0 - 0.1)).exp()).abs() < 1e-12);
    }

    #[test]
    fn negative_moments() {
        let ones = vec![1.0; 10];
        let e = negative_moment(&ones, 1e-9).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-12);
        assert!(matches!(negative_moment(&[1.0, 0.0], 0.5), Err(Error::ZeroMass)));
        let big = vec![4.0; 3];
        let small = vec![0.25; 3];
        assert!(negative_moment(&big, 1.0).unwrap().mean < negative_moment(&big, 0.5).unwrap().mean);
        assert!(negative_moment(&small, 1.0).unwrap().mean > negative_moment(&small, 0.5).unwrap().mean);
    }

    #[test]
    fn expectation_identity_small_run() {
        let c = SurfaceModel::cylinder(1.0).unwrap();
        let exp = MassExperiment {
            gamma: 1.0,
            ladder: dyadic_ladder(0.125, 2),
            samples: 400,
            modes: 256,
            circle_points: 32,
            negative_moment_p: 0.5,
        };
        let s = run_mass_experiment(&c, &exp, &StreamFamily::new(17)).unwrap();
        for l in &s.levels {
            assert!(l.bulk_z() < 3.5 && l.boundary_z() < 3.5, "{l:?}");
            assert!(l.bulk_negative_moment.is_some());
        }
    }

    #[test]
    fn csv_layout() {
        let (b, ev) = small_setup(0.25);
        let f = ev.evaluate(&vec![0.0; b.len()]);
        let m = bulk_measure(&f, 1.0).unwrap();
        let mut buf = Vec::new();
        m.write_csv(ev.bulk_cells(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cell_id,u,v,weight\n0,"));
        assert_eq!(text.lines().count(), m.weights.len() + 1);
    }
}
