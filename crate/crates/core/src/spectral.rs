//! Laplacian eigenbases on the doubles and on Σ, and truncated free fields.
//!
//! Bases are products of a transverse profile in `u` and an azimuthal factor
//! `1`, `√2 cos(kωv)` or `√2 sin(kωv)`. On the cylinder the profiles are
//! cosines/sines in `t`; on the hemisphere they are normalized associated
//! Legendre functions, and the Neumann/Dirichlet modes are the sphere
//! harmonics that are even/odd under `θ ↦ π − θ`, rescaled by `√2`.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::StreamFamily;
use crate::quadrature::GaussLegendre;
use crate::surfaces::{SurfaceKind, SurfaceModel, SurfacePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryCondition {
    Neumann,
    Dirichlet,
    /// The closed double, without boundary.
    Closed,
}

/// Transverse profile of a mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `norm · cos(freq · u)`
    Cos { freq: f64, norm: f64 },
    /// `norm · sin(freq · u)`
    Sin { freq: f64, norm: f64 },
    /// `scale · P̄_l^m(cos u)`
    Legendre { l: u32, m: u32, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub lambda: f64,
    pub profile: Profile,
    /// Azimuthal frequency.
    pub k: u32,
    /// Azimuthal factor is `sin` rather than `cos`.
    pub sine: bool,
    /// Transverse quantum number (`j` on the cylinder, `l` on the sphere).
    pub j: u32,
}

impl Mode {
    pub fn angular_norm(&self) -> f64 {
        if self.k == 0 {
            1.0
        } else {
            std::f64::consts::SQRT_2
        }
    }

    pub fn profile_value(&self, u: f64) -> f64 {
        match self.profile {
            Profile::Cos { freq, norm } => norm * (freq * u).cos(),
            Profile::Sin { freq, norm } => norm * (freq * u).sin(),
            Profile::Legendre { l, m, scale } => {
                scale * normalized_legendre(l as usize, m as usize, u.cos(), u.sin().abs())
            }
        }
    }

    fn profile_order(&self) -> u8 {
        match self.profile {
            Profile::Sin { .. } => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub condition: BoundaryCondition,
    pub surface: SurfaceModel,
    /// Modes in ascending eigenvalue order; ties by `(j, k)`, cosine first.
    pub modes: Vec<Mode>,
    /// Requested truncation; `modes` may be longer by a completed degenerate shell.
    pub truncation: usize,
}

/// Normalized associated Legendre function `P̄_l^m(x)` with `x = cos θ`, `s = sin θ`,
/// so that `P̄_l^m(cos θ) e^{imφ}` is orthonormal on the unit sphere.
pub fn normalized_legendre(l: usize, m: usize, x: f64, s: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for i in 1..=m {
        let fi = i as f64;
        pmm *= ((2.0 * fi + 1.0) / (2.0 * fi)).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mf = m as f64;
    let mut p_prev = pmm;
    let mut p = (2.0 * mf + 3.0).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
        let next = a * (x * p - b * p_prev);
        p_prev = p;
        p = next;
    }
    p
}

/// All `P̄_l^m(x)` for `0 ≤ m ≤ l ≤ lmax`, indexed by [`legendre_index`].
pub fn legendre_table(lmax: usize, x: f64, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; (lmax + 1) * (lmax + 2) / 2];
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            let fm = m as f64;
            pmm *= ((2.0 * fm + 1.0) / (2.0 * fm)).sqrt() * s;
        }
        out[legendre_index(m, m)] = pmm;
        if m == lmax {
            break;
        }
        let mf = m as f64;
        let mut p_prev = pmm;
        let mut p = (2.0 * mf + 3.0).sqrt() * x * pmm;
        out[legendre_index(m + 1, m)] = p;
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            let next = a * (x * p - b * p_prev);
            p_prev = p;
            p = next;
            out[legendre_index(l, m)] = p;
        }
    }
    out
}

pub fn legendre_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

fn enumerate_modes(
    surface: &SurfaceModel,
    condition: BoundaryCondition,
    lambda_max: f64,
) -> Result<Vec<Mode>> {
    let mut modes = Vec::new();
    match surface.kind {
        SurfaceKind::FlatCylinder { height } => {
            let jmax = (lambda_max.sqrt() * height / PI).floor() as u32;
            for j in 0..=jmax {
                let freq = PI * j as f64 / height;
                let rest = lambda_max - freq * freq;
                if rest < 0.0 {
                    break;
                }
                let kmax = (rest.sqrt() / (2.0 * PI)).floor() as u32;
                let profiles: Vec<Profile> = match condition {
                    BoundaryCondition::Neumann => {
                        let norm = if j == 0 { (1.0 / height).sqrt() } else { (2.0 / height).sqrt() };
                        vec![Profile::Cos { freq, norm }]
                    }
                    BoundaryCondition::Dirichlet if j == 0 => vec![],
                    BoundaryCondition::Dirichlet => {
                        vec![Profile::Sin { freq, norm: (2.0 / height).sqrt() }]
                    }
                    BoundaryCondition::Closed if j == 0 => {
                        vec![Profile::Cos { freq, norm: (0.5 / height).sqrt() }]
                    }
                    BoundaryCondition::Closed => {
                        let norm = (1.0 / height).sqrt();
                        vec![Profile::Cos { freq, norm }, Profile::Sin { freq, norm }]
                    }
                };
                for k in 0..=kmax {
                    if j == 0 && k == 0 {
                        continue;
                    }
                    let w = 2.0 * PI * k as f64;
                    let lambda = PI * PI * ((j as f64 / height).powi(2) + 4.0 * (k as f64).powi(2));
                    debug_assert!((lambda - (freq * freq + w * w)).abs() <= 1e-9 * lambda);
                    for &profile in &profiles {
                        for sine in [false, true] {
                            if k == 0 && sine {
                                continue;
                            }
                            modes.push(Mode { lambda, profile, k, sine, j });
                        }
                    }
                }
            }
        }
        SurfaceKind::Hemisphere => {
            let lmax = ((-1.0 + (1.0 + 4.0 * lambda_max).sqrt()) / 2.0).floor() as u32;
            for l in 1..=lmax {
                let lambda = (l * (l + 1)) as f64;
                for m in 0..=l {
                    let even = (l + m) % 2 == 0;
                    let scale = match condition {
                        BoundaryCondition::Closed => 1.0,
                        BoundaryCondition::Neumann if even => std::f64::consts::SQRT_2,
                        BoundaryCondition::Dirichlet if !even => std::f64::consts::SQRT_2,
                        _ => continue,
                    };
                    let profile = Profile::Legendre { l, m, scale };
                    for sine in [false, true] {
                        if m == 0 && sine {
                            continue;
                        }
                        modes.push(Mode { lambda, profile, k: m, sine, j: l });
                    }
                }
            }
        }
        SurfaceKind::HalfPlaneDozz { .. } => {
            return Err(Error::Unsupported(
                "the DOZZ half-plane uses its exact covariance, not a spectral basis".into(),
            ))
        }
    }
    modes.sort_by(|a, b| {
        a.lambda
            .total_cmp(&b.lambda)
            .then(a.j.cmp(&b.j))
            .then(a.k.cmp(&b.k))
            .then(a.profile_order().cmp(&b.profile_order()))
            .then(a.sine.cmp(&b.sine))
    });
    Ok(modes)
}

/// The `n` lowest nonzero modes, completed to a full degenerate shell.
pub fn build_basis(
    surface: &SurfaceModel,
    condition: BoundaryCondition,
    n: usize,
) -> Result<SpectralBasis> {
    if n == 0 {
        return Err(Error::param("N", "truncation must be at least 1"));
    }
    // Weyl: about A λ / 4π modes below λ.
    let mut lambda_max = 8.0 * PI * n as f64 / surface.volume + 50.0;
    let mut modes = loop {
        let modes = enumerate_modes(surface, condition, lambda_max)?;
        if modes.len() > n {
            break modes;
        }
        lambda_max *= 2.0;
    };
    let last = modes[n - 1].lambda;
    let keep = modes
        .iter()
        .take_while(|m| m.lambda <= last * (1.0 + 1e-12))
        .count();
    modes.truncate(keep);
    Ok(SpectralBasis { condition, surface: surface.clone(), modes, truncation: n })
}

/// All nonzero modes with eigenvalue at most `lambda_max`.
pub fn build_basis_cutoff(
    surface: &SurfaceModel,
    condition: BoundaryCondition,
    lambda_max: f64,
) -> Result<SpectralBasis> {
    let modes = enumerate_modes(surface, condition, lambda_max * (1.0 + 1e-12))?;
    if modes.is_empty() {
        return Err(Error::param("lambda_max", "no eigenvalue below the cutoff"));
    }
    let n = modes.len();
    Ok(SpectralBasis { condition, surface: surface.clone(), modes, truncation: n })
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn max_k(&self) -> u32 {
        self.modes.iter().map(|m| m.k).max().unwrap_or(0)
    }

    pub fn max_j(&self) -> u32 {
        self.modes.iter().map(|m| m.j).max().unwrap_or(0)
    }

    /// Value of mode `i` at a chart point of the double.
    pub fn eval(&self, i: usize, p: &SurfacePoint) -> f64 {
        let m = &self.modes[i];
        let a = m.k as f64 * self.surface.azimuth_frequency() * p.v;
        let ang = if m.sine { a.sin() } else { a.cos() };
        m.profile_value(p.u) * m.angular_norm() * ang
    }

    /// Values of every mode at `p`, sharing trigonometric and Legendre tables.
    pub fn eval_all(&self, p: &SurfacePoint) -> Vec<f64> {
        self.eval_all_impl(p, false)
    }

    /// As [`Self::eval_all`] with every azimuthal factor replaced by its cosine.
    pub fn eval_all_cos(&self, p: &SurfacePoint) -> Vec<f64> {
        self.eval_all_impl(p, true)
    }

    fn eval_all_impl(&self, p: &SurfacePoint, force_cos: bool) -> Vec<f64> {
        let kmax = self.max_k() as usize;
        let w = self.surface.azimuth_frequency() * p.v;
        let trig: Vec<(f64, f64)> = (0..=kmax).map(|k| (k as f64 * w).sin_cos()).collect();
        let legendre = match self.surface.kind {
            SurfaceKind::Hemisphere => {
                legendre_table(self.max_j() as usize, p.u.cos(), p.u.sin().abs())
            }
            _ => Vec::new(),
        };
        let mut cyl_cache: Vec<Option<(f64, f64)>> = vec![None; self.max_j() as usize + 1];
        self.modes
            .iter()
            .map(|m| {
                let prof = match m.profile {
                    Profile::Legendre { l, m: mm, scale } => {
                        scale * legendre[legendre_index(l as usize, mm as usize)]
                    }
                    Profile::Cos { freq, norm } => {
                        let cs = *cyl_cache[m.j as usize].get_or_insert_with(|| (freq * p.u).sin_cos());
                        norm * cs.1
                    }
                    Profile::Sin { freq, norm } => {
                        let cs = *cyl_cache[m.j as usize].get_or_insert_with(|| (freq * p.u).sin_cos());
                        norm * cs.0
                    }
                };
                let (s, c) = trig[m.k as usize];
                prof * m.angular_norm() * if m.sine && !force_cos { s } else { c }
            })
            .collect()
    }

    /// `2π Σ φ_j(x) φ_j(y) / λ_j`
    pub fn truncated_covariance(&self, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
        let a = self.eval_all(x);
        let b = self.eval_all(y);
        2.0 * PI
            * self
                .modes
                .iter()
                .zip(a.iter().zip(&b))
                .map(|(m, (p, q))| p * q / m.lambda)
                .sum::<f64>()
    }

    pub fn truncated_variance(&self, x: &SurfacePoint) -> f64 {
        self.truncated_covariance(x, x)
    }

    /// Inner products `∫ f φ_j dv₀` by Gauss-Legendre in `u` and trapezoid in `v`.
    pub fn project<F: Fn(&SurfacePoint) -> f64>(&self, f: F, nu: usize, nv: usize) -> Vec<f64> {
        let gl = GaussLegendre::new(nu);
        let (hi, jac_sphere) = match self.surface.kind {
            SurfaceKind::Hemisphere => (
                if self.condition == BoundaryCondition::Closed { PI } else { PI / 2.0 },
                true,
            ),
            _ => {
                let t = self.surface.transverse_extent();
                (if self.condition == BoundaryCondition::Closed { 2.0 * t } else { t }, false)
            }
        };
        let per = self.surface.azimuth_period();
        let dv = per / nv as f64;
        let mut acc = vec![0.0; self.len()];
        for (u, wu) in gl.mapped(0.0, hi) {
            let jac = if jac_sphere { u.sin() } else { 1.0 };
            for c in 0..nv {
                let p = SurfacePoint::new(u, c as f64 * dv);
                let fv = f(&p) * wu * jac * dv;
                if fv == 0.0 {
                    continue;
                }
                for (a, e) in acc.iter_mut().zip(self.eval_all(&p)) {
                    *a += fv * e;
                }
            }
        }
        acc
    }
}

/// Least-squares slope of `λ_n` against `n` over the upper half of the spectrum.
pub fn weyl_slope(basis: &SpectralBasis) -> Result<f64> {
    let n = basis.len();
    if n < 100 {
        return Err(Error::param("N", format!("Weyl slope needs at least 100 modes, got {n}")));
    }
    let pts: Vec<(f64, f64)> = basis
        .modes
        .iter()
        .enumerate()
        .skip(n / 2)
        .map(|(i, m)| ((i + 1) as f64, m.lambda))
        .collect();
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// A truncated free field `X_N = √(2π) Σ α_j φ_j / √λ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GffSample {
    pub coefficients: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
}

pub fn sample_gff(basis: &SpectralBasis, family: &StreamFamily, stream_id: u64) -> GffSample {
    let mut rng = family.stream(stream_id);
    let coefficients = (0..basis.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    GffSample { coefficients, seed: family.seed, stream_id }
}

impl GffSample {
    /// Coefficients of `X_N` in the eigenbasis: `√(2π/λ_j) α_j`.
    pub fn field_coefficients(&self, basis: &SpectralBasis) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&basis.modes)
            .map(|(a, m)| (2.0 * PI / m.lambda).sqrt() * a)
            .collect()
    }

    pub fn eval(&self, basis: &SpectralBasis, p: &SurfacePoint) -> f64 {
        basis
            .eval_all(p)
            .iter()
            .zip(self.field_coefficients(basis))
            .map(|(e, c)| e * c)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::MeanEstimate;
    use proptest::prelude::*;

    fn cyl() -> SurfaceModel {
        SurfaceModel::cylinder(1.0).unwrap()
    }

    /// Eigenvalues by brute-force separation of variables.
    fn cylinder_oracle(t: f64, dirichlet: bool, n: usize) -> Vec<f64> {
        let mut v = Vec::new();
        for j in 0..60i64 {
            if dirichlet && j == 0 {
                continue;
            }
            for k in -60i64..=60 {
                if j == 0 && k == 0 {
                    continue;
                }
                v.push((PI * j as f64 / t).powi(2) + (2.0 * PI * k as f64).powi(2));
            }
        }
        v.sort_by(f64::total_cmp);
        v.truncate(n);
        v
    }

    #[test]
    fn cylinder_spectrum_matches_separation_of_variables() {
        for (cond, dir) in [(BoundaryCondition::Neumann, false), (BoundaryCondition::Dirichlet, true)] {
            let b = build_basis(&cyl(), cond, 200).unwrap();
            let oracle = cylinder_oracle(1.0, dir, 200);
            for (a, o) in b.eigenvalues().iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-9 * o, "{cond:?}: {a} vs {o}");
            }
            assert!((b.modes[0].lambda - PI * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn hemisphere_neumann_is_even_harmonics() {
        let b = build_basis(&SurfaceModel::hemisphere(), BoundaryCondition::Neumann, 50).unwrap();
        let mut oracle = Vec::new();
        for l in 1..20u32 {
            for m in -(l as i64)..=(l as i64) {
                if (l as i64 + m).rem_euclid(2) == 0 {
                    oracle.push((l * (l + 1)) as f64);
                }
            }
        }
        oracle.sort_by(f64::total_cmp);
        for (a, o) in b.eigenvalues().iter().zip(&oracle) {
            assert_eq!(a, o);
        }
        assert_eq!(b.modes[0].lambda, 2.0);
    }

    #[test]
    fn half_plane_rejected_and_zero_truncation_rejected() {
        let hp = SurfaceModel::half_plane_dozz();
        assert!(build_basis(&hp, BoundaryCondition::Neumann, 10).is_err());
        assert!(build_basis(&cyl(), BoundaryCondition::Neumann, 0).is_err());
    }

    #[test]
    fn legendre_table_matches_single_evaluation() {
        let (x, s) = (0.3f64.cos(), 0.3f64.sin());
        let t = legendre_table(30, x, s);
        for l in 0..=30 {
            for m in 0..=l {
                let a = normalized_legendre(l, m, x, s);
                assert!((t[legendre_index(l, m)] - a).abs() < 1e-13);
            }
        }
        // P̄_2^0 = √(5/4π)(3x²−1)/2
        let p20 = (5.0 / (4.0 * PI)).sqrt() * (3.0 * x * x - 1.0) / 2.0;
        assert!((t[legendre_index(2, 0)] - p20).abs() < 1e-14);
    }

    fn gram_error(b: &SpectralBasis, nu: usize, nv: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let n = b.len();
        for i in 0..n {
            let g = b.project(|p| b.eval(i, p), nu, nv);
            for (j, v) in g.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    #[test]
    fn bases_are_orthonormal() {
        for cond in [BoundaryCondition::Neumann, BoundaryCondition::Dirichlet, BoundaryCondition::Closed] {
            let b = build_basis(&cyl(), cond, 30).unwrap();
            assert!(gram_error(&b, 40, 32) < 1e-8, "cylinder {cond:?}");
            let h = build_basis(&SurfaceModel::hemisphere(), cond, 30).unwrap();
            assert!(gram_error(&h, 40, 32) < 1e-8, "hemisphere {cond:?}");
        }
    }

    #[test]
    fn boundary_conditions_hold() {
        let c = cyl();
        let d = build_basis(&c, BoundaryCondition::Dirichlet, 100).unwrap();
        for &t in &[0.0, 1.0] {
            let v = d.eval_all(&SurfacePoint::new(t, 0.37));
            assert!(v.iter().all(|x| x.abs() < 1e-12));
        }
        let n = build_basis(&c, BoundaryCondition::Neumann, 100).unwrap();
        let h = 1e-5;
        for &t in &[0.0, 1.0] {
            let up = n.eval_all(&SurfacePoint::new(t + h, 0.37));
            let dn = n.eval_all(&SurfacePoint::new(t - h, 0.37));
            assert!(up.iter().zip(&dn).all(|(a, b)| (a - b).abs() / (2.0 * h) < 1e-5 * (1.0 + a.abs())));
        }
        let hs = build_basis(&SurfaceModel::hemisphere(), BoundaryCondition::Dirichlet, 100).unwrap();
        let v = hs.eval_all(&SurfacePoint::new(PI / 2.0, 1.1));
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn weyl_slopes() {
        let b = build_basis(&cyl(), BoundaryCondition::Neumann, 2000).unwrap();
        let s = weyl_slope(&b).unwrap();
        assert!((s / (4.0 * PI) - 1.0).abs() < 0.05, "cylinder slope {s}");
        let h = build_basis(&SurfaceModel::hemisphere(), BoundaryCondition::Neumann, 2000).unwrap();
        let s = weyl_slope(&h).unwrap();
        assert!((s / 2.0 - 1.0).abs() < 0.05, "hemisphere slope {s}");
        let small = build_basis(&cyl(), BoundaryCondition::Neumann, 20).unwrap();
        assert!(weyl_slope(&small).is_err());
    }

    #[test]
    fn gff_average_vanishes_and_variance_matches() {
        let c = cyl();
        let b = build_basis(&c, BoundaryCondition::Neumann, 64).unwrap();
        let fam = StreamFamily::new(5);
        let s = sample_gff(&b, &fam, 0);
        let avg = crate::quadrature::GaussLegendre::new(24)
            .integrate(0.0, 1.0, |t| crate::quadrature::periodic_mean(1.0, 64, |y| s.eval(&b, &SurfacePoint::new(t, y))));
        assert!(avg.abs() < 1e-10, "average {avg}");

        let x = SurfacePoint::new(0.3, 0.6);
        let draws: Vec<f64> = (0..10_000).map(|i| sample_gff(&b, &fam, i).eval(&b, &x)).collect();
        let sq: Vec<f64> = draws.iter().map(|v| v * v).collect();
        let est = MeanEstimate::from_samples(&sq);
        assert!(est.z_against(b.truncated_variance(&x)) < 3.0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let b = build_basis(&cyl(), BoundaryCondition::Neumann, 32).unwrap();
        let fam = StreamFamily::new(9);
        assert_eq!(sample_gff(&b, &fam, 4), sample_gff(&b, &fam, 4));
        assert_ne!(sample_gff(&b, &fam, 4), sample_gff(&b, &fam, 5));
    }

    proptest! {
        #[test]
        fn symmetrized_modes_have_parity(u in 0.0..std::f64::consts::PI, v in 0.0..std::f64::consts::TAU, tt in 0.0..2.0f64) {
            let c = cyl();
            let h = SurfaceModel::hemisphere();
            for (s, p) in [(&c, SurfacePoint::new(tt, v / std::f64::consts::TAU)), (&h, SurfacePoint::new(u, v))] {
                let sp = s.involution_map(&p).unwrap();
                for (cond, sign) in [(BoundaryCondition::Neumann, 1.0), (BoundaryCondition::Dirichlet, -1.0)] {
                    let b = build_basis(s, cond, 60).unwrap();
                    let a = b.eval_all(&p);
                    let r = b.eval_all(&sp);
                    for (x, y) in a.iter().zip(&r) {
                        prop_assert!((y - sign * x).abs() < 1e-10);
                    }
                }
            }
        }

        #[test]
        fn eval_all_agrees_with_eval(u in 0.0..1.5f64, v in 0.0..1.0f64) {
            let b = build_basis(&SurfaceModel::hemisphere(), BoundaryCondition::Closed, 80).unwrap();
            let p = SurfacePoint::new(u, v);
            let all = b.eval_all(&p);
            for (i, a) in all.iter().enumerate() {
                prop_assert!((a - b.eval(i, &p)).abs() < 1e-12);
            }
        }
    }
}
