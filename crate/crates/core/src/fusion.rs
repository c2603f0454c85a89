//! Fusion on the half-plane with the DOZZ metric `|z|₊^{-4}|dz|²`.
//!
//! Fields are sampled exactly from the covariance of circle averages at the
//! nodes of a mesh graded towards the collision point; each cell is smoothed
//! at its own size, the insertions at `ε`. Within the unit half-disk window
//! the metric is Euclidean and `ln|·|₊` vanishes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmc::background_charge;
use crate::lcft::conformal_weight;
use crate::mc::{pairwise_sum, replicates, MeanEstimate, StreamFamily};
use crate::quadrature::adaptive_gk;
use crate::surfaces::SurfacePoint;

fn z_of(p: &SurfacePoint) -> Complex64 {
    Complex64::new(p.v, p.u)
}

fn ln_plus(z: Complex64) -> f64 {
    z.norm().max(1.0).ln()
}

/// `ln(1/(|x−y||x−ȳ|)) + 2ln|x|₊ + 2ln|y|₊`.
pub fn dozz_covariance(x: &SurfacePoint, y: &SurfacePoint) -> Result<f64> {
    if x.u < 0.0 || y.u < 0.0 {
        return Err(Error::OutsideDomain("DOZZ covariance needs points in the closed upper half-plane".into()));
    }
    let (a, b) = (z_of(x), z_of(y));
    if (a - b).norm() < 1e-14 {
        return Err(Error::CoincidentPoints);
    }
    Ok(-(a - b).norm().ln() - (a - b.conj()).norm().ln() + 2.0 * ln_plus(a) + 2.0 * ln_plus(b))
}

fn circle_mean<F: Fn(Complex64) -> f64>(center: Complex64, r: f64, f: F) -> f64 {
    let g = |t: f64| f(center + Complex64::from_polar(r, t));
    adaptive_gk(g, 0.0, 2.0 * PI, 1e-12, 1e-14, 4000).expect("smooth periodic integrand") / (2.0 * PI)
}

/// Average of `ln|a|₊` over the circle of radius `r` about `x`.
fn ln_plus_mean(x: Complex64, r: f64) -> f64 {
    let m = x.norm();
    if m + r <= 1.0 {
        0.0
    } else if m - r >= 1.0 {
        m.ln()
    } else {
        circle_mean(x, r, ln_plus)
    }
}

/// `E[X_{rx}(x) X_{ry}(y)]` for circle averages of radii `rx`, `ry`; the
/// field is extended to the lower half-plane by reflection.
pub fn smoothed_covariance(x: &SurfacePoint, rx: f64, y: &SurfacePoint, ry: f64) -> f64 {
    let (a, b) = (z_of(x), z_of(y));
    // Averaging −ln|a − w| over a ∈ C_rx(x) gives −ln max(|x − w|, rx).
    let term = |w: Complex64, conj: bool| -> f64 {
        let centre = if conj { w.conj() } else { w };
        if (a - centre).norm() >= rx + ry {
            -(a - centre).norm().ln()
        } else {
            circle_mean(w, ry, |q| {
                let q = if conj { q.conj() } else { q };
                -(a - q).norm().max(rx).ln()
            })
        }
    };
    term(b, false) + term(b, true) + 2.0 * ln_plus_mean(a, rx) + 2.0 * ln_plus_mean(b, ry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FusionCase {
    BulkBulk { alpha1: f64, alpha2: f64 },
    /// A bulk insertion approaching its own reflection: `z → z̄`.
    BulkReflection { alpha: f64 },
    BoundaryBoundary { beta1: f64, beta2: f64 },
}

fn capped_weight(a: f64, q: f64) -> f64 {
    conformal_weight(a.min(q), q)
}

/// Predicted fusion exponent of the case at coupling `γ`.
pub fn fusion_predicted_exponent(case: &FusionCase, gamma: f64) -> f64 {
    let q = background_charge(gamma);
    let d = |a: f64| conformal_weight(a, q);
    match *case {
        FusionCase::BulkBulk { alpha1, alpha2 } => 2.0 * (capped_weight(alpha1 + alpha2, q) - d(alpha1) - d(alpha2)),
        FusionCase::BulkReflection { alpha } => capped_weight(2.0 * alpha, q) - 2.0 * d(alpha),
        FusionCase::BoundaryBoundary { beta1, beta2 } => capped_weight(beta1 + beta2, q) - d(beta1) - d(beta2),
    }
}

impl FusionCase {
    /// Insertions at collision distance `d`: `(point, field charge, is boundary)`.
    fn insertions(&self, d: f64, centre: f64) -> Vec<(SurfacePoint, f64, bool)> {
        match *self {
            FusionCase::BulkBulk { alpha1, alpha2 } => vec![
                (SurfacePoint::new(centre, -0.5 * d), alpha1, false),
                (SurfacePoint::new(centre, 0.5 * d), alpha2, false),
            ],
            FusionCase::BulkReflection { alpha } => vec![(SurfacePoint::new(0.5 * d, 0.0), alpha, false)],
            FusionCase::BoundaryBoundary { beta1, beta2 } => vec![
                (SurfacePoint::new(0.0, -0.5 * d), 0.5 * beta1, true),
                (SurfacePoint::new(0.0, 0.5 * d), 0.5 * beta2, true),
            ],
        }
    }

    fn collides_at_boundary(&self) -> bool {
        !matches!(self, FusionCase::BulkBulk { .. })
    }

    fn weights(&self) -> Vec<f64> {
        match *self {
            FusionCase::BulkBulk { alpha1, alpha2 } => vec![alpha1, alpha2],
            FusionCase::BulkReflection { alpha } => vec![alpha],
            FusionCase::BoundaryBoundary { beta1, beta2 } => vec![beta1, beta2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub gamma: f64,
    pub mu: f64,
    pub mu_boundary: f64,
    pub samples: usize,
    /// Smoothing radius of the insertions and innermost cells.
    pub eps: f64,
    /// Ratio of consecutive ring radii of the graded mesh.
    pub ring_ratio: f64,
    /// Cells per ring (full rings; half rings use half as many).
    pub angular: usize,
    /// Outer radius of the graded region.
    pub graded_radius: f64,
    /// Cell side away from the collision.
    pub coarse: f64,
    /// Height of a bulk-bulk collision point.
    pub centre_height: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            gamma: 1.0,
            mu: 1.0,
            mu_boundary: 1.0,
            samples: 100_000,
            eps: 0.01,
            ring_ratio: 1.25,
            angular: 16,
            graded_radius: 0.45,
            coarse: 0.1,
            centre_height: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::param("gamma", format!("must lie in (0, 2], got {}", self.gamma)));
        }
        if !(self.mu >= 0.0 && self.mu_boundary >= 0.0) || self.mu + self.mu_boundary == 0.0 {
            return Err(Error::param("mu", "need μ, μ∂ ≥ 0, not both zero"));
        }
        if self.samples < 2 || !(self.eps > 0.0) || !(self.ring_ratio > 1.0) || self.angular < 4 {
            return Err(Error::param("fusion mesh", "need samples ≥ 2, ε > 0, ratio > 1, ≥ 4 cells per ring"));
        }
        if !(self.graded_radius < self.centre_height && self.centre_height + self.graded_radius < 1.0) {
            return Err(Error::param("graded_radius", "graded disk must stay inside the unit half-disk"));
        }
        Ok(())
    }
}

/// Cells with centers, measures and smoothing radii.
#[derive(Debug, Clone, Default)]
pub struct FusionMesh {
    pub bulk: Vec<(SurfacePoint, f64, f64)>,
    pub boundary: Vec<(SurfacePoint, f64, f64)>,
}

impl FusionMesh {
    /// Rings about the collision point, a uniform grid elsewhere in the
    /// unit half-disk, and boundary segments on `[−1, 1]`.
    pub fn graded(cfg: &FusionConfig, at_boundary: bool) -> FusionMesh {
        let centre = if at_boundary { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, cfg.centre_height) };
        let (theta_span, cells) = if at_boundary { (PI, cfg.angular / 2) } else { (2.0 * PI, cfg.angular) };
        let radius = |area: f64| (0.5 * area.sqrt()).max(cfg.eps);
        let mut mesh = FusionMesh::default();
        let r0 = cfg.eps;
        let centre_area = 0.5 * theta_span * r0 * r0;
        let c0 = if at_boundary { centre + Complex64::new(0.0, 4.0 * r0 / (3.0 * PI)) } else { centre };
        mesh.bulk.push((SurfacePoint::new(c0.im, c0.re), centre_area, radius(centre_area)));
        let mut rings = vec![r0];
        while *rings.last().unwrap() < cfg.graded_radius {
            let next = (rings.last().unwrap() * cfg.ring_ratio).min(cfg.graded_radius);
            rings.push(next);
        }
        let dth = theta_span / cells as f64;
        for w in rings.windows(2) {
            let (a, b) = (w[0], w[1]);
            let rho = (0.5 * (a * a + b * b)).sqrt();
            let area = 0.5 * (b * b - a * a) * dth;
            for k in 0..cells {
                let z = centre + Complex64::from_polar(rho, (k as f64 + 0.5) * dth);
                mesh.bulk.push((SurfacePoint::new(z.im, z.re), area, radius(area)));
            }
            if at_boundary {
                for s in [-1.0, 1.0] {
                    let p = SurfacePoint::new(0.0, s * 0.5 * (a + b));
                    mesh.boundary.push((p, b - a, (0.5 * (b - a)).max(cfg.eps)));
                }
            }
        }
        if at_boundary {
            mesh.boundary.push((SurfacePoint::new(0.0, 0.0), 2.0 * r0, r0));
        }
        let h = cfg.coarse;
        let n = (1.0 / h).ceil() as i64;
        for i in -n..n {
            for j in 0..n {
                let z = Complex64::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if z.norm() <= 1.0 && (z - centre).norm() > cfg.graded_radius {
                    mesh.bulk.push((SurfacePoint::new(z.im, z.re), h * h, 0.5 * h));
                }
            }
            let x = (i as f64 + 0.5) * h;
            if !at_boundary || x.abs() > cfg.graded_radius {
                mesh.boundary.push((SurfacePoint::new(0.0, x), h, 0.5 * h));
            }
        }
        mesh
    }

    fn nodes(&self) -> Vec<(SurfacePoint, f64)> {
        self.bulk.iter().chain(&self.boundary).map(|(p, _, r)| (*p, *r)).collect()
    }
}

/// Lower factor `L` with `L Lᵀ = C`; a clipped eigen-factor if Cholesky fails.
fn factor(cov: DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = cov.symmetric_eigen();
            let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            eig.eigenvectors * s
        }
    }
}

/// Geometric ladder `d_max, d_max·r, …` with `n` rungs, `0 < r < 1`.
pub fn geometric_ladder(d_max: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| d_max * ratio.powi(k as i32)).collect()
}

fn validate_ladder(distances: &[f64], cfg: &FusionConfig) -> Result<()> {
    let bad = |why: &str| Err(Error::param("distances", why.to_string()));
    if distances.len() < 3 {
        return bad("need at least three rungs");
    }
    let r0 = distances[1] / distances[0];
    for w in distances.windows(2) {
        if !(w[1] < w[0]) {
            return bad("must be strictly decreasing");
        }
        if ((w[1] / w[0]) / r0 - 1.0).abs() > 1e-6 {
            return bad("must be geometric");
        }
    }
    if distances[distances.len() - 1] < 2.0 * cfg.eps {
        return bad("smallest distance must be at least 2ε");
    }
    if 0.5 * distances[0] > 0.8 * cfg.graded_radius {
        return bad("largest distance leaves the graded region");
    }
    Ok(())
}

/// Joint sampler of the mesh field and the Girsanov shifts for a ladder.
struct Sampler {
    factor: DMatrix<f64>,
    n_bulk: usize,
    bulk_base: Vec<f64>,
    boundary_base: Vec<f64>,
    /// Per distance: `γH` at the bulk nodes then `γH/2` at the boundary nodes.
    shifts: Vec<Vec<f64>>,
    log_prefactor: Vec<f64>,
    gamma: f64,
    mu: f64,
    mu_boundary: f64,
}

impl Sampler {
    fn new(case: &FusionCase, distances: &[f64], cfg: &FusionConfig) -> Sampler {
        let mesh = FusionMesh::graded(cfg, case.collides_at_boundary());
        let nodes = mesh.nodes();
        let n = nodes.len();
        let g = cfg.gamma;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            smoothed_covariance(&nodes[a].0, nodes[a].1, &nodes[b].0, nodes[b].1)
        });
        let n_bulk = mesh.bulk.len();
        let bulk_base = mesh.bulk.iter().map(|(_, m, r)| m * r.powf(0.5 * g * g)).collect();
        let boundary_base = mesh.boundary.iter().map(|(_, m, r)| m * r.powf(0.25 * g * g)).collect();
        let mut shifts = Vec::new();
        let mut log_prefactor = Vec::new();
        for &d in distances {
            let ins = case.insertions(d, cfg.centre_height);
            let shift = nodes
                .iter()
                .enumerate()
                .map(|(k, (p, r))| {
                    let h: f64 = ins.iter().map(|(z, w, _)| w * smoothed_covariance(p, *r, z, cfg.eps)).sum();
                    if k < n_bulk { g * h } else { 0.5 * g * h }
                })
                .collect();
            shifts.push(shift);
            let mut lc = 0.0;
            for (z, w, bdry) in &ins {
                for (y, v, _) in &ins {
                    lc += 0.5 * w * v * smoothed_covariance(z, cfg.eps, y, cfg.eps);
                }
                lc += if *bdry { w * w } else { 0.5 * w * w } * cfg.eps.ln();
            }
            log_prefactor.push(lc);
        }
        Sampler {
            factor: factor(cov),
            n_bulk,
            bulk_base,
            boundary_base,
            shifts,
            log_prefactor,
            gamma: g,
            mu: cfg.mu,
            mu_boundary: cfg.mu_boundary,
        }
    }

    /// Shifted masses `(A_H, L_H)` for each distance of one sample.
    fn masses(&self, family: &StreamFamily, id: usize) -> Vec<(f64, f64)> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = family.stream(id as u64);
        let xi = DVector::from_fn(self.factor.ncols(), |_, _| StandardNormal.sample(&mut rng));
        let x = &self.factor * xi;
        let g = self.gamma;
        let nb = self.n_bulk;
        self.shifts
            .iter()
            .map(|h| {
                let a: Vec<f64> = (0..nb).map(|k| self.bulk_base[k] * (g * x[k] + h[k]).exp()).collect();
                let l: Vec<f64> = (nb..x.len())
                    .map(|k| self.boundary_base[k - nb] * (0.5 * g * x[k] + h[k]).exp())
                    .collect();
                (pairwise_sum(&a), pairwise_sum(&l))
            })
            .collect()
    }

    fn log_weight(&self, (a, l): (f64, f64)) -> f64 {
        -self.mu * a - self.mu_boundary * l
    }
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (pairwise_sum(&xs.iter().map(|x| (x - hi).exp()).collect::<Vec<_>>()) / xs.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub distance: f64,
    pub statistic: f64,
    pub stderr: f64,
    pub log_prefactor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionScan {
    pub case: FusionCase,
    pub gamma: f64,
    pub predicted: f64,
    pub slope: f64,
    pub stderr: f64,
    /// `predicted − slope`: how far the measured singularity exceeds the bound.
    pub excess: f64,
    pub violation: bool,
    pub samples: usize,
    pub rows: Vec<ScanRow>,
}

impl FusionScan {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "distance,statistic,stderr")?;
        for r in &self.rows {
            writeln!(out, "{:.12e},{:.12e},{:.12e}", r.distance, r.statistic, r.stderr)?;
        }
        Ok(())
    }
}

/// Scan of `S(d) = C_ε(d)·E[exp(−μA_H − μ∂L_H)]` down a geometric ladder,
/// with common random numbers across rungs. The bound `S(d) ≲ d^p` is
/// violated when the fitted log-log slope falls more than three standard
/// errors below `p`.
pub fn fusion_scan(case: &FusionCase, distances: &[f64], cfg: &FusionConfig, family: &StreamFamily) -> Result<FusionScan> {
    cfg.validate()?;
    validate_ladder(distances, cfg)?;
    for w in case.weights() {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::param("weight", format!("must be finite and non-negative, got {w}")));
        }
    }
    let sampler = Sampler::new(case, distances, cfg);
    let logs: Vec<Vec<f64>> = replicates(cfg.samples, |i| {
        sampler.masses(family, i).into_iter().map(|m| sampler.log_weight(m)).collect()
    });
    let k = distances.len();
    let columns: Vec<Vec<f64>> = (0..k).map(|j| logs.iter().map(|r| r[j]).collect()).collect();
    let log_means: Vec<f64> = columns.iter().map(|c| log_mean_exp(c)).collect();
    let xs: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let w: Vec<f64> = xs.iter().map(|x| (x - xbar) / sxx).collect();
    let ys: Vec<f64> = (0..k).map(|j| sampler.log_prefactor[j] + log_means[j]).collect();
    let slope: f64 = w.iter().zip(&ys).map(|(a, b)| a * b).sum();
    // Delta method on the joint sample means.
    let lin: Vec<f64> = logs.iter().map(|r| (0..k).map(|j| w[j] * (r[j] - log_means[j]).exp()).sum()).collect();
    let stderr = MeanEstimate::from_samples(&lin).stderr;
    let rows = (0..k)
        .map(|j| {
            let rel: Vec<f64> = columns[j].iter().map(|l| (l - log_means[j]).exp()).collect();
            let statistic = ys[j].exp();
            ScanRow {
                distance: distances[j],
                statistic,
                stderr: statistic * MeanEstimate::from_samples(&rel).stderr,
                log_prefactor: sampler.log_prefactor[j],
            }
        })
        .collect();
    let predicted = fusion_predicted_exponent(case, cfg.gamma);
    let excess = predicted - slope;
    Ok(FusionScan {
        case: *case,
        gamma: cfg.gamma,
        predicted,
        slope,
        stderr,
        excess,
        violation: excess > 3.0 * stderr,
        samples: cfg.samples,
        rows,
    })
}

/// `E[exp(−μA_H − μ∂L_H)]` at collision distance `d`.
pub fn reduced_statistic(case: &FusionCase, d: f64, cfg: &FusionConfig, family: &StreamFamily) -> Result<MeanEstimate> {
    cfg.validate()?;
    let sampler = Sampler::new(case, &[d], cfg);
    let xs = replicates(cfg.samples, |i| sampler.log_weight(sampler.masses(family, i)[0]).exp());
    Ok(MeanEstimate::from_samples(&xs))
}

/// `⟨Aⁿ Lᵐ ∏V e^{−μA−μ∂L}⟩` at zero mode `c = 0` and distance `d`.
pub fn moment_bound(case: &FusionCase, d: f64, n: i32, m: i32, cfg: &FusionConfig, family: &StreamFamily) -> Result<MeanEstimate> {
    cfg.validate()?;
    let sampler = Sampler::new(case, &[d], cfg);
    let c = sampler.log_prefactor[0].exp();
    let xs = replicates(cfg.samples, |i| {
        let (a, l) = sampler.masses(family, i)[0];
        c * a.powi(n) * l.powi(m) * sampler.log_weight((a, l)).exp()
    });
    Ok(MeanEstimate::from_samples(&xs))
}

/// Blow-up diagnostic for a bulk insertion colliding with the boundary,
/// seen through the boundary weight `β` it fuses into.
pub fn bulk_boundary_integrability(beta: f64, gamma: f64, depth: usize, paths: usize, family: &StreamFamily) -> crate::lcft::IntegrabilityReport {
    crate::lcft::integrability_diagnostic(beta, gamma, true, depth, paths, family)
}
