//! Girsanov-reduced Monte Carlo for correlations.
//!
//! At finite `(ε, N)` the insertions are absorbed exactly: the shifted field
//! `X_ε + H_ε` with `H_ε(x) = Cov(X_ε(x), Σ w_i X_ε(z_i))` replaces the
//! vertex operators, and the zero mode is integrated per sample.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{
    anomaly_factor, liouville_action_integral, prefactor_limit, sbar, seiberg_check, zero_mode_integral,
    zgff_ratio, InsertionSet, LiouvilleParams,
};
use crate::error::{Error, Result};
use crate::field::{circle_mode_averages, FieldEvaluator, Mesh, RegularizedField};
use crate::gmc::{boundary_measure, bulk_measure, expected_weights, MeasureKind};
use crate::mc::{pairwise_sum, replicates, MeanEstimate, StreamFamily};
use crate::spectral::{build_basis, sample_gff, BoundaryCondition, SpectralBasis};
use crate::surfaces::{ConformalFactor, SurfaceKind, SurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub samples: usize,
    pub modes: usize,
    pub eps: f64,
    pub circle_points: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig { samples: 2000, modes: 1024, eps: 0.05, circle_points: 32 }
    }
}

impl CorrelationConfig {
    fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::param("samples", "need at least 2"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::param("eps", "must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    /// `None` when the correlation diverges.
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub diverged: bool,
    pub sbar: f64,
    pub prefactor_limit: Option<f64>,
    pub prefactor_regularized: Option<f64>,
    /// `E[zero-mode integral]` of the shifted field, without prefactor.
    pub reduced: Option<MeanEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Data for evaluating on `e^φ g₀` with samples of the `g₀` field.
struct Weyl {
    bulk: Vec<f64>,
    boundary: Vec<f64>,
    /// `Y(X) = Σ y_m c_m` for field coefficients `c_m`.
    y: Vec<f64>,
    log_const: f64,
}

struct Engine {
    params: LiouvilleParams,
    sbar: f64,
    basis: SpectralBasis,
    ev: FieldEvaluator,
    /// Circle averages of the modes at each insertion, and the field charge.
    tables: Vec<(Vec<f64>, f64)>,
    h_bulk: Vec<f64>,
    h_boundary: Vec<f64>,
    h_coeffs: Vec<f64>,
    log_c_reg: f64,
    c_limit: f64,
}

impl Engine {
    fn new(surface: &SurfaceModel, params: &LiouvilleParams, ins: &InsertionSet, cfg: &CorrelationConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = build_basis(surface, BoundaryCondition::Neumann, cfg.modes)?;
        let mesh = Mesh::for_eps(surface, cfg.eps)?;
        let ev = FieldEvaluator::new(&basis, &mesh, cfg.eps, cfg.circle_points)?;
        let tables = ins
            .field_charges()
            .iter()
            .map(|(p, w)| circle_mode_averages(&basis, p, cfg.eps, cfg.circle_points).map(|a| (a, *w)))
            .collect::<Result<Vec<_>>>()?;
        let h_coeffs: Vec<f64> = basis
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| 2.0 * PI / mode.lambda * tables.iter().map(|(a, w)| w * a[m]).sum::<f64>())
            .collect();
        let h = ev.evaluate(&h_coeffs);
        // ½ Var(Σ w_i X_ε(z_i)) = ½ Σ_m (Σ_i w_i a_im)² 2π/λ_m.
        let half_var: f64 = basis
            .modes
            .iter()
            .enumerate()
            .map(|(m, mode)| {
                let s: f64 = tables.iter().map(|(a, w)| w * a[m]).sum();
                PI * s * s / mode.lambda
            })
            .sum();
        let ln_eps = cfg.eps.ln();
        let eps_power: f64 = ins.bulk.iter().map(|b| 0.5 * b.alpha * b.alpha).sum::<f64>()
            + ins.boundary.iter().map(|b| 0.25 * b.beta * b.beta).sum::<f64>();
        Ok(Engine {
            params: *params,
            sbar: sbar(ins, params, surface.euler_char),
            basis,
            ev,
            tables,
            h_bulk: h.bulk,
            h_boundary: h.boundary,
            h_coeffs,
            log_c_reg: half_var + eps_power * ln_eps,
            c_limit: prefactor_limit(surface, ins)?,
        })
    }

    fn weyl(&self, surface: &SurfaceModel, ins: &InsertionSet, phi: &ConformalFactor) -> Result<Option<Weyl>> {
        phi.validate(surface)?;
        let mean = match phi {
            ConformalFactor::Zero => return Ok(None),
            ConformalFactor::Constant { value } => *value,
            ConformalFactor::CosAzimuth { .. } if matches!(surface.kind, SurfaceKind::FlatCylinder { .. }) => 0.0,
            _ => {
                return Err(Error::Unsupported(format!(
                    "Monte Carlo on e^φ g₀ needs ∂_n φ = 0 and Δ₀φ = 0 where R₀ ≠ 0; got {phi:?}"
                )))
            }
        };
        let q = self.params.q;
        let g = self.params.gamma;
        let proj = if matches!(phi, ConformalFactor::Constant { .. }) {
            vec![0.0; self.basis.len()]
        } else {
            self.basis.project(|p| phi.eval(surface, p), 64, 256)
        };
        let mut smooth = self.ev.evaluate(&proj);
        smooth.add_constant(mean);
        let y: Vec<f64> = self
            .basis
            .modes
            .iter()
            .zip(&proj)
            .map(|(m, p)| -q / (4.0 * PI) * m.lambda * p)
            .collect();
        let y_h: f64 = y.iter().zip(&self.h_coeffs).map(|(a, b)| a * b).sum();
        let vertex: f64 = ins.bulk.iter().map(|b| 0.25 * b.alpha * b.alpha * phi.eval(surface, &b.point)).sum::<f64>()
            + ins.boundary.iter().map(|b| 0.125 * b.beta * b.beta * phi.eval(surface, &b.point)).sum::<f64>();
        Ok(Some(Weyl {
            bulk: smooth.bulk.iter().map(|f| (0.5 * g * q * f).exp()).collect(),
            boundary: smooth.boundary.iter().map(|f| (0.25 * g * q * f).exp()).collect(),
            y,
            log_const: y_h + vertex,
        }))
    }

    /// `(A, L, log-weight)` for sample `id`: the masses of the shifted field
    /// and, on `e^φ g₀`, the curvature and vertex factors.
    fn masses(&self, family: &StreamFamily, id: usize, weyl: Option<&Weyl>) -> Result<(f64, f64, f64)> {
        let coeffs = sample_gff(&self.basis, family, id as u64).field_coefficients(&self.basis);
        let f = self.ev.evaluate(&coeffs);
        let g = self.params.gamma;
        let bulk = bulk_measure(&f, g)?;
        let bdry = boundary_measure(&f, g)?;
        let a: Vec<f64> = bulk
            .weights
            .iter()
            .zip(&self.h_bulk)
            .enumerate()
            .map(|(c, (w, h))| w * (g * h).exp() * weyl.map_or(1.0, |p| p.bulk[c]))
            .collect();
        let l: Vec<f64> = bdry
            .weights
            .iter()
            .zip(&self.h_boundary)
            .enumerate()
            .map(|(c, (w, h))| w * (0.5 * g * h).exp() * weyl.map_or(1.0, |p| p.boundary[c]))
            .collect();
        let log_w = weyl.map_or(0.0, |p| {
            p.log_const + p.y.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>()
        });
        Ok((pairwise_sum(&a), pairwise_sum(&l), log_w))
    }

    /// Masses of sample `id` with an extra shift `x` added to `H`.
    fn shifted_masses(&self, family: &StreamFamily, id: usize, x: &RegularizedField) -> Result<(f64, f64)> {
        let coeffs = sample_gff(&self.basis, family, id as u64).field_coefficients(&self.basis);
        let f = self.ev.evaluate(&coeffs);
        let g = self.params.gamma;
        let bulk = bulk_measure(&f, g)?;
        let bdry = boundary_measure(&f, g)?;
        let a: Vec<f64> = (0..bulk.weights.len())
            .map(|c| bulk.weights[c] * (g * (self.h_bulk[c] + x.bulk[c])).exp())
            .collect();
        let l: Vec<f64> = (0..bdry.weights.len())
            .map(|c| bdry.weights[c] * (0.5 * g * (self.h_boundary[c] + x.boundary[c])).exp())
            .collect();
        Ok((pairwise_sum(&a), pairwise_sum(&l)))
    }

    fn values(&self, family: &StreamFamily, n: usize, weyl: Option<&Weyl>) -> Result<Vec<f64>> {
        replicates(n, |i| {
            let (a, l, lw) = self.masses(family, i, weyl)?;
            Ok(lw.exp() * zero_mode_integral(a, l, self.sbar, &self.params)?)
        })
        .into_iter()
        .collect()
    }
}

fn diverged(sbar: f64, cfg: &CorrelationConfig, family: &StreamFamily) -> CorrelationEstimate {
    CorrelationEstimate {
        value: None,
        stderr: None,
        samples: cfg.samples,
        seed: family.seed,
        diverged: true,
        sbar,
        prefactor_limit: None,
        prefactor_regularized: None,
        reduced: None,
        config_hash: None,
    }
}

/// `⟨Π V_α(z) Π V_β(s)⟩` on `e^φ g₀` (Weyl factor `φ`, `Zero` for `g₀`),
/// without the free-field partition function.
pub fn correlation_estimate(
    surface: &SurfaceModel,
    params: &LiouvilleParams,
    insertions: &InsertionSet,
    phi: &ConformalFactor,
    cfg: &CorrelationConfig,
    family: &StreamFamily,
) -> Result<CorrelationEstimate> {
    insertions.validate(surface)?;
    let ins = insertions.canonical();
    let report = seiberg_check(&ins, params.mu, params.mu_boundary, params.gamma, surface.euler_char)?;
    let s = sbar(&ins, params, surface.euler_char);
    if !report.admissible || s <= 0.0 {
        return Ok(diverged(s, cfg, family));
    }
    let engine = Engine::new(surface, params, &ins, cfg)?;
    let weyl = engine.weyl(surface, &ins, phi)?;
    let vals = engine.values(family, cfg.samples, weyl.as_ref())?;
    let reduced = MeanEstimate::from_samples(&vals);
    Ok(CorrelationEstimate {
        value: Some(engine.c_limit * reduced.mean),
        stderr: Some(engine.c_limit * reduced.stderr),
        samples: cfg.samples,
        seed: family.seed,
        diverged: false,
        sbar: s,
        prefactor_limit: Some(engine.c_limit),
        prefactor_regularized: Some(engine.log_c_reg.exp()),
        reduced: Some(reduced),
        config_hash: None,
    })
}

/// Unreduced estimator: `E[Π ε^{w²…} e^{w X_ε(z)} · zero-mode(M, M^∂)]` at
/// the same `(ε, N)`. Agrees with `prefactor_regularized · reduced`.
pub fn direct_estimate(
    surface: &SurfaceModel,
    params: &LiouvilleParams,
    insertions: &InsertionSet,
    cfg: &CorrelationConfig,
    family: &StreamFamily,
) -> Result<MeanEstimate> {
    insertions.validate(surface)?;
    let ins = insertions.canonical();
    let engine = Engine::new(surface, params, &ins, cfg)?;
    if engine.sbar <= 0.0 {
        return Err(Error::Divergent { sbar: engine.sbar });
    }
    let ln_eps = cfg.eps.ln();
    let g = params.gamma;
    let vals: Result<Vec<f64>> = replicates(cfg.samples, |i| {
        let coeffs = sample_gff(&engine.basis, family, i as u64).field_coefficients(&engine.basis);
        let f = engine.ev.evaluate(&coeffs);
        let mut log_v = 0.0;
        for (a, w) in &engine.tables {
            let x: f64 = a.iter().zip(&coeffs).map(|(p, q)| p * q).sum();
            log_v += w * x + w * w * ln_eps / 2.0;
        }
        // Boundary vertex: ε^{β²/4} = ε^{(β/2)²}, i.e. w² not w²/2.
        for b in &ins.boundary {
            let w = 0.5 * b.beta;
            log_v += w * w * ln_eps / 2.0;
        }
        let a_mass = bulk_measure(&f, g)?.total_mass();
        let l_mass = boundary_measure(&f, g)?.total_mass();
        Ok(log_v.exp() * zero_mode_integral(a_mass, l_mass, engine.sbar, params)?)
    })
    .into_iter()
    .collect();
    Ok(MeanEstimate::from_samples(&vals?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub sbar: f64,
    /// `μγ∫⟨V_γ(x)Π V⟩dv + μ∂(γ/2)∫⟨V^∂_γ(y)Π V⟩dλ`
    pub lhs: MeanEstimate,
    /// `s̄ ⟨Π V⟩`
    pub rhs: MeanEstimate,
    /// `|lhs − rhs|` in units of the combined standard error.
    pub residual_z: f64,
}

/// The KPZ-type scaling identity. The right side uses the plain estimator;
/// the left side inserts `V_γ` (resp. `V^∂_γ`) at a cell drawn in
/// proportion to its expected shifted weight, on independent streams.
pub fn scaling_residual(
    surface: &SurfaceModel,
    params: &LiouvilleParams,
    insertions: &InsertionSet,
    cfg: &CorrelationConfig,
    family: &StreamFamily,
) -> Result<ScalingReport> {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    insertions.validate(surface)?;
    let ins = insertions.canonical();
    let engine = Engine::new(surface, params, &ins, cfg)?;
    let s = engine.sbar;
    if s <= 0.0 {
        return Err(Error::Divergent { sbar: s });
    }
    let g = params.gamma;
    let c = engine.c_limit;
    let rhs: Vec<f64> = engine.values(family, cfg.samples, None)?.iter().map(|v| c * s * v).collect();
    let ev = &engine.ev;
    let tilt = |kind, cells: &crate::field::Cells, var: &[f64], h: &[f64], a: f64| -> Vec<f64> {
        expected_weights(kind, g, cfg.eps, var, &cells.measures)
            .iter()
            .zip(h)
            .map(|(w, h)| w * (a * h).exp())
            .collect()
    };
    let qb = tilt(MeasureKind::Bulk, ev.bulk_cells(), ev.bulk_variance(), &engine.h_bulk, g);
    let qd = tilt(MeasureKind::Boundary, ev.boundary_cells(), ev.boundary_variance(), &engine.h_boundary, 0.5 * g);
    let (tb, td) = (pairwise_sum(&qb), pairwise_sum(&qd));
    let pick_b = WeightedIndex::new(&qb).map_err(|e| Error::Quadrature(e.to_string()))?;
    let pick_d = WeightedIndex::new(&qd).map_err(|e| Error::Quadrature(e.to_string()))?;
    let lhs_family = family.fork(0x5ca1e);
    let pick_family = family.fork(0x91c4);
    let shift = |p: &crate::surfaces::SurfacePoint, w: f64| -> Result<crate::field::RegularizedField> {
        let a = circle_mode_averages(&engine.basis, p, cfg.eps, cfg.circle_points)?;
        let coeffs: Vec<f64> = engine.basis.modes.iter().zip(&a).map(|(m, x)| 2.0 * PI / m.lambda * w * x).collect();
        Ok(ev.evaluate(&coeffs))
    };
    let lhs: Result<Vec<f64>> = replicates(cfg.samples, |i| {
        let mut rng = pick_family.stream(i as u64);
        let mut total = 0.0;
        if params.mu > 0.0 {
            let x = shift(&ev.bulk_cells().centers[pick_b.sample(&mut rng)], g)?;
            let (a, l) = engine.shifted_masses(&lhs_family, i, &x)?;
            total += params.mu * g * tb * zero_mode_integral(a, l, s + g, params)?;
        }
        if params.mu_boundary > 0.0 {
            let y = shift(&ev.boundary_cells().centers[pick_d.sample(&mut rng)], 0.5 * g)?;
            let (a, l) = engine.shifted_masses(&lhs_family, i, &y)?;
            total += params.mu_boundary * 0.5 * g * td * zero_mode_integral(a, l, s + 0.5 * g, params)?;
        }
        Ok(c * total)
    })
    .into_iter()
    .collect();
    let lhs = MeanEstimate::from_samples(&lhs?);
    let rhs = MeanEstimate::from_samples(&rhs);
    let se = lhs.stderr.hypot(rhs.stderr);
    let diff = (lhs.mean - rhs.mean).abs();
    let residual_z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(ScalingReport { sbar: s, lhs, rhs, residual_z })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    /// Paired ratio of the estimates on `e^φ g₀` and on `g₀`, extrapolated
    /// in `ε²` from cutoffs `ε` and `ε/2` on common random numbers.
    pub mc_ratio: MeanEstimate,
    /// The same ratio at cutoff `ε` alone.
    pub coarse_ratio: f64,
    /// The Monte Carlo ratio implied by the Polyakov partition function
    /// ratio `exp(∫…/96π)`: `anomaly_factor · exp(−∫…/96π)`.
    pub expected_mc_ratio: f64,
    pub anomaly_factor: f64,
    /// Partition-function ratio as stated (`exp(∫…/48π)`).
    pub zgff_ratio: f64,
    /// `mc_ratio · zgff_ratio / anomaly_factor`, ideally 1.
    pub normalized: MeanEstimate,
    pub z: f64,
}

/// End-to-end Weyl anomaly: the correlation on `e^φ g₀` against the one on `g₀`.
pub fn anomaly_check(
    surface: &SurfaceModel,
    params: &LiouvilleParams,
    insertions: &InsertionSet,
    phi: &ConformalFactor,
    cfg: &CorrelationConfig,
    family: &StreamFamily,
) -> Result<AnomalyReport> {
    insertions.validate(surface)?;
    let ins = insertions.canonical();
    let engine = Engine::new(surface, params, &ins, cfg)?;
    if engine.sbar <= 0.0 {
        return Err(Error::Divergent { sbar: engine.sbar });
    }
    let fine_cfg = CorrelationConfig { eps: 0.5 * cfg.eps, ..*cfg };
    let fine = Engine::new(surface, params, &ins, &fine_cfg)?;
    let mut logs = Vec::with_capacity(2);
    let mut influence = vec![0.0; cfg.samples];
    for (e, coef) in [(&engine, -1.0 / 3.0), (&fine, 4.0 / 3.0)] {
        let weyl = e.weyl(surface, &ins, phi)?;
        let base = e.values(family, cfg.samples, None)?;
        let moved = e.values(family, cfg.samples, weyl.as_ref())?;
        let mb = MeanEstimate::from_samples(&base).mean;
        let mm = MeanEstimate::from_samples(&moved).mean;
        for (acc, (b, m)) in influence.iter_mut().zip(base.iter().zip(&moved)) {
            *acc += coef * (m / mm - b / mb);
        }
        logs.push((mm / mb).ln());
    }
    let log_ratio = (4.0 * logs[1] - logs[0]) / 3.0;
    let spread = MeanEstimate::from_samples(&influence);
    let mc_ratio = MeanEstimate {
        mean: log_ratio.exp(),
        stderr: log_ratio.exp() * spread.stderr,
        n: cfg.samples,
    };
    let coarse_ratio = logs[0].exp();
    let factor = anomaly_factor(surface, params, &ins, phi)?;
    let z_ratio = zgff_ratio(surface, phi);
    let expected_mc_ratio = factor * (-liouville_action_integral(surface, phi) / (96.0 * PI)).exp();
    let scale = z_ratio / factor;
    let normalized = MeanEstimate {
        mean: mc_ratio.mean * scale,
        stderr: mc_ratio.stderr * scale,
        n: mc_ratio.n,
    };
    let z = normalized.z_against(1.0);
    Ok(AnomalyReport { mc_ratio, coarse_ratio, expected_mc_ratio, anomaly_factor: factor, zgff_ratio: z_ratio, normalized, z })
}
