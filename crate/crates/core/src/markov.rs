//! Markov decomposition of the Neumann free field across a cut.
//!
//! A cut `𝒞` splits Σ into two pieces. Up to the global centering, the
//! Neumann field is the sum of independent mixed fields on the pieces
//! (Dirichlet on `𝒞`, Neumann on the outer boundary) and the harmonic
//! extension of its trace on `𝒞`. The covariance check is deterministic:
//! mixed kernels by images, the trace covariance from the Neumann kernel,
//! extensions by separation of variables, and centering integrals in closed
//! form.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::{green_bordered, sphere_kernel, torus_kernel, GreenKernel, KernelMode};
use crate::mc::{replicates, StreamFamily};
use crate::quadrature::GaussLegendre;
use crate::spectral::BoundaryCondition;
use crate::surfaces::{ConformalFactor, SurfaceKind, SurfaceModel, SurfacePoint};

/// Largest trace resolution on the cut.
pub const MAX_TRACE_MODES: usize = 64;

const ON_CUT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CutSpec {
    /// Cylinder: the full circle `t = height`.
    Circle { height: f64 },
    /// Hemisphere: the meridian arc through the pole at azimuth `longitude`
    /// and `longitude + π`, with endpoints on the equator.
    HalfCircle { longitude: f64 },
}

/// A cut with its two pieces. Piece 0 is `t < c` on the cylinder and the
/// lune `sin(φ − φ₀) > 0` on the hemisphere.
#[derive(Debug, Clone)]
pub struct Cut {
    pub surface: SurfaceModel,
    pub spec: CutSpec,
    /// Cylinder: the mixed-piece lengths `(c, T − c)`.
    lengths: [f64; 2],
    /// Hemisphere: `e₀` (equator endpoint) and `n` (normal into piece 0).
    frame: [[f64; 3]; 2],
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Cut {
    pub fn new(surface: &SurfaceModel, spec: CutSpec) -> Result<Self> {
        match (spec, surface.kind) {
            (CutSpec::Circle { height: c }, SurfaceKind::FlatCylinder { height }) => {
                if !(c > 0.0 && c < height) {
                    return Err(Error::param("cut height", format!("must lie in (0, {height})")));
                }
                Ok(Cut { surface: surface.clone(), spec, lengths: [c, height - c], frame: [[0.0; 3]; 2] })
            }
            (CutSpec::HalfCircle { longitude }, SurfaceKind::Hemisphere) => {
                let (s, c) = longitude.sin_cos();
                Ok(Cut {
                    surface: surface.clone(),
                    spec,
                    lengths: [0.0; 2],
                    frame: [[c, s, 0.0], [-s, c, 0.0]],
                })
            }
            _ => Err(Error::Unsupported(format!("cut {spec:?} on {:?}", surface.kind))),
        }
    }

    fn cylinder(&self) -> bool {
        matches!(self.spec, CutSpec::Circle { .. })
    }

    /// Signed transverse coordinate: `t − c` or `x·n`.
    fn side(&self, x: &SurfacePoint) -> f64 {
        match self.spec {
            CutSpec::Circle { height } => x.u - height,
            CutSpec::HalfCircle { .. } => dot(&SurfaceModel::sphere_vector(x), &self.frame[1]),
        }
    }

    /// The piece containing `x`, or `None` on the cut.
    pub fn piece_of(&self, x: &SurfacePoint) -> Option<usize> {
        let s = self.side(x);
        if s.abs() < ON_CUT {
            None
        } else if (s < 0.0) == self.cylinder() {
            Some(0)
        } else {
            Some(1)
        }
    }

    pub fn piece_volume(&self, piece: usize) -> f64 {
        if self.cylinder() {
            self.lengths[piece]
        } else {
            PI
        }
    }

    /// Cylinder: distance to the Neumann end of the piece.
    fn local_t(&self, piece: usize, x: &SurfacePoint) -> f64 {
        if piece == 0 {
            x.u
        } else {
            self.surface.transverse_extent() - x.u
        }
    }

    /// Hemisphere: pole of the doubled piece and angles `(θ', ψ)` about it.
    fn disk_angles(&self, piece: usize, x: &SurfacePoint) -> (f64, f64) {
        let v = SurfaceModel::sphere_vector(x);
        let sign = if piece == 0 { 1.0 } else { -1.0 };
        let c = (sign * dot(&v, &self.frame[1])).clamp(-1.0, 1.0);
        let psi = v[2].atan2(dot(&v, &self.frame[0]));
        (c.acos(), psi)
    }

    /// Mixed kernel `2πG` on one piece: Dirichlet on `𝒞`, Neumann outside.
    ///
    /// Cylinder pieces of length `L` are folded from the torus of period
    /// `4L` by four images; hemisphere lunes from the sphere by the
    /// reflections in the cut plane and the equator.
    pub fn mixed_green(&self, x: &SurfacePoint, y: &SurfacePoint) -> Result<f64> {
        for p in [x, y] {
            if !self.surface.contains(p) {
                return Err(Error::OutsideDomain(format!("{p:?}")));
            }
        }
        if self.surface.double_distance(x, y) < 1e-12 {
            return Err(Error::CoincidentPoints);
        }
        let (px, py) = (self.piece_of(x), self.piece_of(y));
        match (px, py) {
            (None, _) | (_, None) => Ok(0.0),
            (Some(a), Some(b)) if a != b => {
                Err(Error::OutsideDomain("mixed kernel arguments lie in different pieces".into()))
            }
            (Some(a), _) => Ok(self.mixed_unchecked(a, x, y)),
        }
    }

    fn mixed_unchecked(&self, piece: usize, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
        if self.cylinder() {
            let l = self.lengths[piece];
            let (a, b) = (self.local_t(piece, x), self.local_t(piece, y));
            let dy = x.v - y.v;
            let k = |dt: f64| torus_kernel(2.0 * l, dy, dt);
            k(a - b) - k(a + b - 2.0 * l) + k(a + b) - k(a - b - 2.0 * l)
        } else {
            let n = self.frame[1];
            let v = SurfaceModel::sphere_vector(y);
            let d = 2.0 * dot(&v, &n);
            let rho = [v[0] - d * n[0], v[1] - d * n[1], v[2] - d * n[2]];
            let k = |w: [f64; 3]| sphere_kernel(x, &SurfaceModel::sphere_point(w));
            k(v) - k(rho) + k([v[0], v[1], -v[2]]) - k([rho[0], rho[1], -rho[2]])
        }
    }

    /// Lowest eigenvalue of the mixed problem on a piece.
    pub fn mixed_ground_eigenvalue(&self, piece: usize) -> f64 {
        if self.cylinder() {
            (PI / (2.0 * self.lengths[piece])).powi(2)
        } else {
            // The doubled lune is a hemisphere with Dirichlet data: l = 1.
            2.0
        }
    }

    /// Number of real trace basis functions at resolution `modes`.
    pub fn trace_dim(&self, modes: usize) -> usize {
        if self.cylinder() {
            2 * modes + 1
        } else {
            modes + 1
        }
    }

    /// Trace basis on `𝒞` at a cut point: `1, cos 2πky, sin 2πky` on the
    /// cylinder, `cos kψ` on the half-circle.
    fn trace_basis(&self, x: &SurfacePoint, modes: usize) -> Vec<f64> {
        self.extension_basis(0, x, modes)
    }

    /// Harmonic extensions of the trace basis into `piece`, at `x`.
    fn extension_basis(&self, piece: usize, x: &SurfacePoint, modes: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trace_dim(modes));
        out.push(1.0);
        if self.cylinder() {
            let (t, l) = (self.local_t(piece, x), self.lengths[piece]);
            for k in 1..=modes {
                let w = 2.0 * PI * k as f64;
                // cosh(wt)/cosh(wl) without overflow
                let h = (w * (t - l)).exp() * (1.0 + (-2.0 * w * t).exp()) / (1.0 + (-2.0 * w * l).exp());
                let (s, c) = (w * x.v).sin_cos();
                out.push(h * c);
                out.push(h * s);
            }
        } else {
            let (theta, psi) = self.disk_angles(piece, x);
            let r = (0.5 * theta).tan();
            let mut rk = 1.0;
            for k in 1..=modes {
                rk *= r;
                out.push(rk * (k as f64 * psi).cos());
            }
        }
        out
    }

    /// Values of the extension basis at `x`; a cut point uses the trace.
    fn extension_at(&self, x: &SurfacePoint, modes: usize) -> Vec<f64> {
        match self.piece_of(x) {
            Some(p) => self.extension_basis(p, x, modes),
            None => self.trace_basis(x, modes),
        }
    }
}

/// A trace on `𝒞` as coefficients of the real trace basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSeries {
    /// `cos` coefficients, index 0 the constant.
    pub cos: Vec<f64>,
    /// `sin` coefficients from `k = 1` (cylinder only).
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TraceSeries {
    fn to_basis(&self, cut: &Cut) -> Result<(Vec<f64>, usize)> {
        let modes = self.cos.len().saturating_sub(1).max(self.sin.len());
        if modes > MAX_TRACE_MODES {
            return Err(Error::param("trace", format!("{modes} modes exceed the resolution {MAX_TRACE_MODES}")));
        }
        if !cut.cylinder() && !self.sin.is_empty() {
            return Err(Error::param("trace", "the half-circle trace has a cosine series only"));
        }
        let mut v = vec![0.0; cut.trace_dim(modes)];
        v[0] = self.cos.first().copied().unwrap_or(0.0);
        for k in 1..=modes {
            let c = self.cos.get(k).copied().unwrap_or(0.0);
            if cut.cylinder() {
                v[2 * k - 1] = c;
                v[2 * k] = self.sin.get(k - 1).copied().unwrap_or(0.0);
            } else {
                v[k] = c;
            }
        }
        Ok((v, modes))
    }
}

/// `P φ(x)`: harmonic in each piece, equal to `φ` on `𝒞`, Neumann outside.
pub fn harmonic_extension(cut: &Cut, trace: &TraceSeries, x: &SurfacePoint) -> Result<f64> {
    if !cut.surface.contains(x) {
        return Err(Error::OutsideDomain(format!("{x:?}")));
    }
    let (coeffs, modes) = trace.to_basis(cut)?;
    Ok(cut.extension_at(x, modes).iter().zip(&coeffs).map(|(a, b)| a * b).sum())
}

/// Centering data for `m_g` with `g = e^φ g₀`.
#[derive(Debug, Clone)]
enum Centering {
    /// Cylinder, `e^φ` depending on `y` only: its Fourier coefficients.
    Cylinder { a: Vec<f64>, b: Vec<f64> },
    Hemisphere,
}

/// All the deterministic pieces of the right-hand side covariance.
#[derive(Debug, Clone)]
pub struct MarkovDecomposition {
    pub cut: Cut,
    pub modes: usize,
    /// Covariance of the trace coefficients of `X^Σ` on `𝒞`.
    pub trace_cov: DMatrix<f64>,
    centering: Centering,
    /// `∫_Σ e_a e^φ dv₀` for the extension basis.
    nu: DVector<f64>,
    volume_g: f64,
    /// `m_g ⊗ m_g` of the right-hand side covariance.
    double_mean: f64,
    phi: ConformalFactor,
}

fn neumann(surface: &SurfaceModel, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
    green_bordered(surface, BoundaryCondition::Neumann, x, y).expect("distinct points in Σ")
}

fn trace_covariance(cut: &Cut, modes: usize) -> DMatrix<f64> {
    let s = &cut.surface;
    match cut.spec {
        CutSpec::Circle { height } => {
            // Subtract −ln|2 sin πy| = Σ_{k≥1} cos(2πky)/k, transform the smooth rest.
            let m = 1024;
            let rest: Vec<(f64, f64)> = (0..m)
                .map(|j| {
                    let y = (j as f64 + 0.5) / m as f64;
                    let k = neumann(s, &SurfacePoint::new(height, y), &SurfacePoint::new(height, 0.0));
                    (y, k + (2.0 * (PI * y).sin()).abs().ln())
                })
                .collect();
            let mut cov = DMatrix::zeros(2 * modes + 1, 2 * modes + 1);
            for k in 0..=modes {
                let r: f64 = rest.iter().map(|(y, v)| v * (2.0 * PI * k as f64 * y).cos()).sum::<f64>() / m as f64;
                if k == 0 {
                    cov[(0, 0)] = r;
                } else {
                    let kappa = r + 0.5 / k as f64;
                    cov[(2 * k - 1, 2 * k - 1)] = 2.0 * kappa;
                    cov[(2 * k, 2 * k)] = 2.0 * kappa;
                }
            }
            cov
        }
        CutSpec::HalfCircle { .. } => {
            // Subtract Σ_{k≥1} (2/k) cos kψ₁ cos kψ₂, the logarithms of the
            // chords to q and to its mirror image under the equator.
            let m = 128;
            let h = PI / m as f64;
            let point = |psi: f64| {
                let (e, z) = (cut.frame[0], psi.sin());
                let c = psi.cos();
                SurfaceModel::sphere_point([c * e[0], c * e[1], z])
            };
            let mut rest = DMatrix::zeros(m, m + 1);
            for i in 0..m {
                let p1 = (i as f64 + 0.5) * h;
                for j in 0..=m {
                    let p2 = j as f64 * h;
                    let sing = -(2.0 * (0.5 * (p1 - p2)).sin()).abs().ln() - (2.0 * (0.5 * (p1 + p2)).sin()).abs().ln();
                    rest[(i, j)] = neumann(s, &point(p1), &point(p2)) - sing;
                }
            }
            let c = |k: usize| if k == 0 { 1.0 / PI } else { 2.0 / PI };
            let mut cov = DMatrix::zeros(modes + 1, modes + 1);
            for k in 0..=modes {
                for l in 0..=modes {
                    let mut acc = 0.0;
                    for i in 0..m {
                        let ck = (k as f64 * (i as f64 + 0.5) * h).cos();
                        for j in 0..=m {
                            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                            acc += w * rest[(i, j)] * ck * (l as f64 * j as f64 * h).cos();
                        }
                    }
                    cov[(k, l)] = c(k) * c(l) * acc * h * h;
                }
                if k > 0 {
                    cov[(k, k)] += 2.0 / k as f64;
                }
            }
            cov
        }
    }
}

/// `∫₀^L u_k` for `u_k = (1 − cosh(ωs)/cosh(ωL))/ω²`, `u_0 = (L² − s²)/2`.
fn u_mode(k: usize, l: f64, s: f64) -> f64 {
    if k == 0 {
        0.5 * (l * l - s * s)
    } else {
        let w = 2.0 * PI * k as f64;
        let ratio = (w * (s - l)).exp() * (1.0 + (-2.0 * w * s).exp()) / (1.0 + (-2.0 * w * l).exp());
        (1.0 - ratio) / (w * w)
    }
}

fn u_mode_integral(k: usize, l: f64) -> f64 {
    if k == 0 {
        l * l * l / 3.0
    } else {
        let w = 2.0 * PI * k as f64;
        (l - (w * l).tanh() / w) / (w * w)
    }
}

/// Hemisphere lune: `∫ 2πG_mix(x, y) dv(x) = 4π ln cos(θ'/2) + 2π ln 2`.
fn lune_potential(theta: f64) -> f64 {
    4.0 * PI * (0.5 * theta).cos().ln() + 2.0 * PI * LN_2
}

impl MarkovDecomposition {
    /// Decomposition for `g = e^φ g₀` (`φ = 0` for the background metric).
    pub fn new(cut: &Cut, modes: usize, phi: ConformalFactor) -> Result<Self> {
        if modes == 0 || modes > MAX_TRACE_MODES {
            return Err(Error::param("modes", format!("must lie in 1..={MAX_TRACE_MODES}")));
        }
        phi.validate(&cut.surface)?;
        let trace_cov = trace_covariance(cut, modes);
        let dim = cut.trace_dim(modes);
        let mut nu = DVector::zeros(dim);
        let (centering, volume_g, mixed_double) = match cut.spec {
            CutSpec::Circle { .. } => {
                if !matches!(phi, ConformalFactor::Zero | ConformalFactor::Constant { .. } | ConformalFactor::CosAzimuth { .. }) {
                    return Err(Error::Unsupported(format!("cut centering for {phi:?}")));
                }
                let n = 1024;
                let w: Vec<(f64, f64)> = (0..n)
                    .map(|j| {
                        let y = j as f64 / n as f64;
                        (y, phi.eval(&cut.surface, &SurfacePoint::new(0.5 * cut.lengths[0], y)).exp())
                    })
                    .collect();
                let coef = |k: usize, sin: bool| -> f64 {
                    let f = if k == 0 { 1.0 } else { 2.0 };
                    f * w
                        .iter()
                        .map(|(y, v)| {
                            let a = 2.0 * PI * k as f64 * y;
                            v * if sin { a.sin() } else { a.cos() }
                        })
                        .sum::<f64>()
                        / n as f64
                };
                let a: Vec<f64> = (0..=modes).map(|k| coef(k, false)).collect();
                let b: Vec<f64> = (0..=modes).map(|k| if k == 0 { 0.0 } else { coef(k, true) }).collect();
                let t = cut.surface.transverse_extent();
                nu[0] = a[0] * t;
                for k in 1..=modes {
                    let om = 2.0 * PI * k as f64;
                    let hk: f64 = cut.lengths.iter().map(|l| (om * l).tanh() / om).sum();
                    nu[2 * k - 1] = 0.5 * a[k] * hk;
                    nu[2 * k] = 0.5 * b[k] * hk;
                }
                let mixed: f64 = cut
                    .lengths
                    .iter()
                    .map(|&l| {
                        2.0 * PI
                            * (a[0] * a[0] * u_mode_integral(0, l)
                                + (1..=modes)
                                    .map(|k| 0.5 * (a[k] * a[k] + b[k] * b[k]) * u_mode_integral(k, l))
                                    .sum::<f64>())
                    })
                    .sum();
                (Centering::Cylinder { a: a.clone(), b }, a[0] * t, mixed)
            }
            CutSpec::HalfCircle { .. } => {
                if !matches!(phi, ConformalFactor::Zero | ConformalFactor::Constant { .. }) {
                    return Err(Error::Unsupported(format!("half-circle centering for {phi:?}")));
                }
                // A constant Weyl factor leaves every normalized mean unchanged.
                nu[0] = 2.0 * PI;
                let lune = PI * GaussLegendre::new(64).integrate(0.0, PI / 2.0, |t| lune_potential(t) * t.sin());
                (Centering::Hemisphere, 2.0 * PI, 2.0 * lune)
            }
        };
        let double_mean = (mixed_double + (nu.transpose() * &trace_cov * &nu)[(0, 0)]) / (volume_g * volume_g);
        Ok(MarkovDecomposition { cut: cut.clone(), modes, trace_cov, centering, nu, volume_g, double_mean, phi })
    }

    /// `∫_{piece(y)} 2πG_mix(x, y) e^φ(x) dv₀(x)`.
    fn mixed_mean(&self, y: &SurfacePoint) -> f64 {
        let Some(piece) = self.cut.piece_of(y) else { return 0.0 };
        match &self.centering {
            Centering::Cylinder { a, b } => {
                let (l, t) = (self.cut.lengths[piece], self.cut.local_t(piece, y));
                let mut acc = a[0] * u_mode(0, l, t);
                for k in 1..=self.modes {
                    let (s, c) = (2.0 * PI * k as f64 * y.v).sin_cos();
                    acc += (a[k] * c + b[k] * s) * u_mode(k, l, t);
                }
                2.0 * PI * acc
            }
            Centering::Hemisphere => lune_potential(self.cut.disk_angles(piece, y).0),
        }
    }

    /// `m_g` in the first slot of the right-hand side covariance, at `y`.
    fn mean_against(&self, y: &SurfacePoint) -> f64 {
        let e = DVector::from_vec(self.cut.extension_at(y, self.modes));
        (self.mixed_mean(y) + (self.nu.transpose() * &self.trace_cov * e)[(0, 0)]) / self.volume_g
    }

    /// Covariance of `X₁ + X₂ + Pφ` before centering.
    pub fn uncentered(&self, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
        let mixed = match (self.cut.piece_of(x), self.cut.piece_of(y)) {
            (Some(a), Some(b)) if a == b => self.cut.mixed_unchecked(a, x, y),
            _ => 0.0,
        };
        let ex = DVector::from_vec(self.cut.extension_at(x, self.modes));
        let ey = DVector::from_vec(self.cut.extension_at(y, self.modes));
        mixed + (ex.transpose() * &self.trace_cov * ey)[(0, 0)]
    }

    /// Covariance of `X₁ + X₂ + Pφ − m_g(X₁ + X₂ + Pφ)`.
    pub fn covariance(&self, x: &SurfacePoint, y: &SurfacePoint) -> Result<f64> {
        if self.cut.surface.double_distance(x, y) < 1e-12 {
            return Err(Error::CoincidentPoints);
        }
        Ok(self.uncentered(x, y) - self.mean_against(x) - self.mean_against(y) + self.double_mean)
    }

    /// The Neumann kernel of `e^φ g₀` the decomposition should reproduce.
    pub fn target_kernel(&self) -> Result<GreenKernel> {
        let k = GreenKernel::new(&self.cut.surface, BoundaryCondition::Neumann, KernelMode::ClosedForm)?;
        match self.phi {
            ConformalFactor::Zero | ConformalFactor::Constant { .. } => Ok(k),
            phi => k.with_conformal(phi),
        }
    }
}

/// `max |2πG_Neumann(x, y) − Cov_RHS(x, y)|` over the given pairs.
pub fn markov_covariance_residual(
    cut: &Cut,
    phi: ConformalFactor,
    pairs: &[(SurfacePoint, SurfacePoint)],
) -> Result<f64> {
    let dec = MarkovDecomposition::new(cut, MAX_TRACE_MODES, phi)?;
    let target = dec.target_kernel()?;
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        worst = worst.max((target.eval(x, y)? - dec.covariance(x, y)?).abs());
    }
    Ok(worst)
}

/// A grid of `n` points staying at least `margin` away from the cut, and
/// all ordered pairs of distinct points from it. On the half-circle the
/// extensions decay like `tan(θ'/2)^k`, so 64 trace modes need a margin of
/// about 0.2 for a residual below `1e-6`.
pub fn test_pairs(cut: &Cut, n: usize, margin: f64) -> Vec<(SurfacePoint, SurfacePoint)> {
    let golden = 0.618_033_988_749_895;
    let pts: Vec<SurfacePoint> = match cut.spec {
        CutSpec::Circle { height: c } => {
            let t = cut.surface.transverse_extent();
            (0..n)
                .map(|i| {
                    let f = (i as f64 + 0.5) / n as f64;
                    let u = if i % 2 == 0 { f * (c - margin) } else { c + margin + f * (t - c - margin) };
                    SurfacePoint::new(u, (i as f64 * golden).fract())
                })
                .collect()
        }
        CutSpec::HalfCircle { longitude } => (0..n)
            .map(|i| {
                let f = (i as f64 + 0.5) / n as f64;
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                let off = margin + (PI - 2.0 * margin) * (i as f64 * golden).fract();
                SurfacePoint::new(0.1 + 1.4 * f, (longitude + side * off).rem_euclid(2.0 * PI))
            })
            .collect(),
    };
    let mut pairs = Vec::new();
    for (i, x) in pts.iter().enumerate() {
        for (j, y) in pts.iter().enumerate() {
            if i != j {
                pairs.push((*x, *y));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPair {
    pub x: SurfacePoint,
    pub y: SurfacePoint,
    pub empirical: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledReport {
    pub samples: usize,
    pub pairs: Vec<SampledPair>,
    pub max_z: f64,
}

/// Mixed eigenmodes of a cylinder piece: `(λ, j, k, sine)`.
fn mixed_modes(l: f64, jmax: usize, kmax: usize) -> Vec<(f64, usize, usize, bool)> {
    let mut out = Vec::new();
    for j in 0..jmax {
        let a = (j as f64 + 0.5) * PI / l;
        for k in 0..=kmax {
            let lam = a * a + (2.0 * PI * k as f64).powi(2);
            out.push((lam, j, k, false));
            if k > 0 {
                out.push((lam, j, k, true));
            }
        }
    }
    out
}

/// Statistical twin of the covariance check on the cylinder: independent
/// mixed fields, an independent trace with the Neumann trace law, the
/// harmonic extension, and the centering, sampled at `points`.
pub fn sampled_decomposition(
    cut: &Cut,
    points: &[SurfacePoint],
    samples: usize,
    family: &StreamFamily,
) -> Result<SampledReport> {
    use rand_distr::{Distribution, StandardNormal};
    if !cut.cylinder() {
        return Err(Error::Unsupported("sampled decomposition on the half-circle cut".into()));
    }
    if samples < 2 {
        return Err(Error::param("samples", "need at least 2"));
    }
    let (jmax, kmax, trace_modes) = (96, 48, 32);
    let dec = MarkovDecomposition::new(cut, trace_modes, ConformalFactor::Zero)?;
    let chol = dec
        .trace_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Quadrature("trace covariance is not positive definite".into()))?
        .l();
    let modes: Vec<_> = cut.lengths.iter().map(|&l| mixed_modes(l, jmax, kmax)).collect();
    let value = |piece: usize, m: &(f64, usize, usize, bool), x: &SurfacePoint| {
        let l = cut.lengths[piece];
        let t = cut.local_t(piece, x);
        let prof = (2.0 / l).sqrt() * ((m.1 as f64 + 0.5) * PI * t / l).cos();
        let ang = if m.2 == 0 {
            1.0
        } else if m.3 {
            2f64.sqrt() * (2.0 * PI * m.2 as f64 * x.v).sin()
        } else {
            2f64.sqrt() * (2.0 * PI * m.2 as f64 * x.v).cos()
        };
        (2.0 * PI / m.0).sqrt() * prof * ang
    };
    // Integral of each scaled mode over its piece.
    let means: Vec<Vec<f64>> = (0..2)
        .map(|p| {
            let l = cut.lengths[p];
            modes[p]
                .iter()
                .map(|m| {
                    if m.2 != 0 {
                        0.0
                    } else {
                        let sign = if m.1 % 2 == 0 { 1.0 } else { -1.0 };
                        (2.0 * PI / m.0).sqrt() * (2.0 / l).sqrt() * l * sign / ((m.1 as f64 + 0.5) * PI)
                    }
                })
                .collect()
        })
        .collect();
    let table: Vec<(Option<usize>, Vec<f64>, DVector<f64>)> = points
        .iter()
        .map(|x| {
            let p = cut.piece_of(x);
            let vals = p.map_or_else(Vec::new, |p| modes[p].iter().map(|m| value(p, m, x)).collect());
            (p, vals, DVector::from_vec(cut.extension_at(x, trace_modes)))
        })
        .collect();
    let volume = cut.surface.volume;
    let fields: Vec<Vec<f64>> = replicates(samples, |i| {
        let mut rng = family.stream(i as u64);
        let mut normals = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let xi = [normals(modes[0].len()), normals(modes[1].len())];
        let trace = &chol * DVector::from_vec(normals(dec.trace_cov.nrows()));
        let mut mean = dec.nu.dot(&trace);
        for p in 0..2 {
            mean += xi[p].iter().zip(&means[p]).map(|(a, b)| a * b).sum::<f64>();
        }
        mean /= volume;
        table
            .iter()
            .map(|(p, vals, ext)| {
                let mixed = p.map_or(0.0, |p| xi[p].iter().zip(vals).map(|(a, b)| a * b).sum());
                mixed + ext.dot(&trace) - mean
            })
            .collect()
    });
    let mut pairs = Vec::new();
    for i in 0..points.len() {
        for j in 0..i {
            let prods: Vec<f64> = fields.iter().map(|f| f[i] * f[j]).collect();
            let est = crate::mc::MeanEstimate::from_samples(&prods);
            let exact = green_bordered(&cut.surface, BoundaryCondition::Neumann, &points[i], &points[j])?;
            pairs.push(SampledPair {
                x: points[i],
                y: points[j],
                empirical: est.mean,
                stderr: est.stderr,
                exact,
                z: est.z_against(exact),
            });
        }
    }
    let max_z = pairs.iter().map(|p| p.z).fold(0.0, f64::max);
    Ok(SampledReport { samples, pairs, max_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::fd_laplacian_of;

    fn cyl_cut() -> Cut {
        Cut::new(&SurfaceModel::cylinder(1.0).unwrap(), CutSpec::Circle { height: 0.5 }).unwrap()
    }

    fn hemi_cut() -> Cut {
        Cut::new(&SurfaceModel::hemisphere(), CutSpec::HalfCircle { longitude: 0.3 }).unwrap()
    }

    /// `2π Σ_k g_k(τ, s) e^{2πik Δy}` with the Neumann–Dirichlet interval Green functions.
    fn mixed_series(l: f64, a: f64, b: f64, dy: f64) -> f64 {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut acc = l - hi;
        for k in 1..400 {
            let w = 2.0 * PI * k as f64;
            // cosh(w lo) sinh(w (l − hi)) / (w cosh(w l)), scaled to avoid overflow
            let g = (w * (lo - hi)).exp() * (1.0 + (-2.0 * w * lo).exp()) * (1.0 - (-2.0 * w * (l - hi)).exp())
                / (2.0 * w * (1.0 + (-2.0 * w * l).exp()));
            acc += 2.0 * g * (w * dy).cos();
        }
        2.0 * PI * acc
    }

    #[test]
    fn cylinder_mixed_kernel_matches_mode_series() {
        let cut = cyl_cut();
        for (x, y) in [((0.1, 0.2), (0.3, 0.7)), ((0.8, 0.1), (0.6, 0.3)), ((0.0, 0.0), (0.4, 0.5))] {
            let (x, y) = (SurfacePoint::new(x.0, x.1), SurfacePoint::new(y.0, y.1));
            let got = cut.mixed_green(&x, &y).unwrap();
            let p = cut.piece_of(&x).unwrap();
            let want = mixed_series(0.5, cut.local_t(p, &x), cut.local_t(p, &y), x.v - y.v);
            assert!((got - want).abs() < 1e-9, "{got} {want}");
        }
        assert!(cut.mixed_ground_eigenvalue(0) > 0.0 && hemi_cut().mixed_ground_eigenvalue(1) > 0.0);
    }

    #[test]
    fn mixed_kernel_boundary_conditions() {
        for cut in [cyl_cut(), hemi_cut()] {
            let (y, on_cut, outer) = match cut.spec {
                CutSpec::Circle { .. } => (SurfacePoint::new(0.2, 0.4), SurfacePoint::new(0.5, 0.1), SurfacePoint::new(0.0, 0.9)),
                CutSpec::HalfCircle { longitude } => (
                    SurfacePoint::new(0.7, longitude + 1.0),
                    SurfacePoint::new(0.4, longitude),
                    SurfacePoint::new(PI / 2.0, longitude + 2.0),
                ),
            };
            assert_eq!(cut.mixed_green(&on_cut, &y).unwrap(), 0.0);
            let h = 1e-3;
            let f = |k: f64| {
                let p = match cut.spec {
                    CutSpec::Circle { .. } => SurfacePoint::new(outer.u + k * h, outer.v),
                    CutSpec::HalfCircle { .. } => SurfacePoint::new(outer.u - k * h, outer.v),
                };
                cut.mixed_green(&p, &y).unwrap() / (2.0 * PI)
            };
            let d = (-25.0 * f(0.0) + 48.0 * f(1.0) - 36.0 * f(2.0) + 16.0 * f(3.0) - 3.0 * f(4.0)) / (12.0 * h);
            assert!(d.abs() < 1e-5, "{:?} {d}", cut.spec);
            let lap = fd_laplacian_of(&cut.surface, |p| cut.mixed_green(p, &y).unwrap(), &SurfacePoint::new(y.u + 0.15, y.v + 0.1), 1e-3);
            assert!(lap.abs() < 1e-6, "{lap}");
        }
    }

    #[test]
    fn trace_covariance_matches_interval_greens() {
        let cut = cyl_cut();
        let cov = trace_covariance(&cut, 8);
        let (c, t) = (0.5, 1.0);
        assert!((cov[(0, 0)] - 2.0 * PI * (c * c / t - c + t / 3.0)).abs() < 1e-10);
        for k in 1..=8 {
            let w = 2.0 * PI * k as f64;
            let kappa = 2.0 * PI * (w * c).cosh() * (w * (t - c)).cosh() / (w * (w * t).sinh());
            assert!((cov[(2 * k, 2 * k)] - 2.0 * kappa).abs() < 1e-10, "k={k}");
        }
        let cov = trace_covariance(&hemi_cut(), 6);
        assert!((cov[(0, 0)] - (2.0 * LN_2 - 1.0)).abs() < 1e-10);
        for k in 1..=6 {
            assert!((cov[(k, k)] - 2.0 / k as f64).abs() < 1e-10);
            assert!(cov[(k, 0)].abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_extension_examples() {
        let cut = cyl_cut();
        let one = TraceSeries { cos: vec![2.5], sin: vec![] };
        assert_eq!(harmonic_extension(&cut, &one, &SurfacePoint::new(0.1, 0.3)).unwrap(), 2.5);
        let k1 = TraceSeries { cos: vec![0.0, 1.0], sin: vec![] };
        let x = SurfacePoint::new(0.2, 0.15);
        let want = (2.0 * PI * 0.2f64).cosh() / (PI).cosh() * (2.0 * PI * 0.15f64).cos();
        assert!((harmonic_extension(&cut, &k1, &x).unwrap() - want).abs() < 1e-12);
        let wild = TraceSeries { cos: vec![0.3, -0.2, 0.1], sin: vec![0.4, 0.05] };
        for x in [SurfacePoint::new(0.2, 0.3), SurfacePoint::new(0.8, 0.6)] {
            let lap = fd_laplacian_of(&cut.surface, |p| harmonic_extension(&cut, &wild, p).unwrap(), &x, 1e-3);
            assert!(lap.abs() < 1e-6, "{lap}");
        }
        let on = SurfacePoint::new(0.5, 0.37);
        let direct = 0.3 - 0.2 * (2.0 * PI * 0.37f64).cos() + 0.1 * (4.0 * PI * 0.37f64).cos()
            + 0.4 * (2.0 * PI * 0.37f64).sin() + 0.05 * (4.0 * PI * 0.37f64).sin();
        assert!((harmonic_extension(&cut, &wild, &on).unwrap() - direct).abs() < 1e-12);
        let too_many = TraceSeries { cos: vec![0.0; MAX_TRACE_MODES + 2], sin: vec![] };
        assert!(harmonic_extension(&cut, &too_many, &on).is_err());

        let hc = hemi_cut();
        let tr = TraceSeries { cos: vec![0.1, 0.5, -0.3, 0.2], sin: vec![] };
        for x in [SurfacePoint::new(0.6, 1.2), SurfacePoint::new(1.1, 4.0)] {
            let lap = fd_laplacian_of(&hc.surface, |p| harmonic_extension(&hc, &tr, p).unwrap(), &x, 1e-3);
            assert!(lap.abs() < 1e-6, "{lap}");
        }
        let psi: f64 = 0.9;
        let e = hc.frame[0];
        let p = SurfaceModel::sphere_point([psi.cos() * e[0], psi.cos() * e[1], psi.sin()]);
        let direct = 0.1 + 0.5 * psi.cos() - 0.3 * (2.0 * psi).cos() + 0.2 * (3.0 * psi).cos();
        assert!((harmonic_extension(&hc, &tr, &p).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn covariance_residuals_are_small() {
        let cut = cyl_cut();
        let pairs = test_pairs(&cut, 20, 0.05);
        assert_eq!(pairs.len(), 380);
        let r = markov_covariance_residual(&cut, ConformalFactor::Zero, &pairs).unwrap();
        assert!(r < 1e-6, "cylinder {r}");
        let hc = hemi_cut();
        let r = markov_covariance_residual(&hc, ConformalFactor::Zero, &test_pairs(&hc, 20, 0.2)).unwrap();
        assert!(r < 1e-6, "hemisphere {r}");
    }

    #[test]
    fn conformal_centering_keeps_the_residual_small() {
        let cut = cyl_cut();
        let phi = ConformalFactor::CosAzimuth { amplitude: 0.3, k: 1 };
        let r = markov_covariance_residual(&cut, phi, &test_pairs(&cut, 8, 0.05)).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn pieces_are_independent_before_extension() {
        let cut = cyl_cut();
        let dec = MarkovDecomposition::new(&cut, 16, ConformalFactor::Zero).unwrap();
        let (x, y) = (SurfacePoint::new(0.1, 0.2), SurfacePoint::new(0.9, 0.3));
        let ex = DVector::from_vec(cut.extension_at(&x, 16));
        let ey = DVector::from_vec(cut.extension_at(&y, 16));
        let ext = (ex.transpose() * &dec.trace_cov * ey)[(0, 0)];
        assert_eq!(dec.uncentered(&x, &y), ext);
        assert!(cut.mixed_green(&x, &y).is_err());
    }

    #[test]
    fn sampled_twin_reproduces_covariance() {
        let cut = cyl_cut();
        let pts = [
            SurfacePoint::new(0.1, 0.0),
            SurfacePoint::new(0.3, 0.45),
            SurfacePoint::new(0.75, 0.2),
            SurfacePoint::new(0.95, 0.7),
        ];
        let rep = sampled_decomposition(&cut, &pts, 2000, &StreamFamily::new(21)).unwrap();
        assert!(rep.max_z < 3.5, "{rep:?}");
    }
}
