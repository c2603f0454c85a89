//! Bordered model surfaces, their closed doubles, and clipped geodesic circles.
//!
//! Chart conventions, with `u` the coordinate transverse to the boundary and
//! `v` the coordinate along it:
//!
//! | model            | `u`                 | `v`                 | boundary         |
//! |------------------|---------------------|---------------------|------------------|
//! | flat cylinder    | `t ∈ [0, T]`        | `y ∈ [0, 1)`        | `t = 0`, `t = T` |
//! | hemisphere       | colatitude `θ ≤ π/2`| longitude `φ`       | equator          |
//! | DOZZ half-plane  | `Im z ≥ 0`          | `Re z`              | real axis        |
//!
//! On the double the cylinder becomes the torus `ℝ/2Tℤ × ℝ/ℤ`, the hemisphere
//! the round unit sphere, and the half-plane the full plane.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BOUNDARY_TOL: f64 = 1e-12;

/// Default number of points on a regularization circle.
pub const DEFAULT_CIRCLE_POINTS: usize = 32;

/// Surface description as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceSpec {
    FlatCylinder { height: f64 },
    Hemisphere,
    HalfPlaneDozz {
        #[serde(default = "default_window")]
        window_radius: f64,
    },
}

fn default_window() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceKind {
    FlatCylinder { height: f64 },
    Hemisphere,
    HalfPlaneDozz { window_radius: f64 },
}

/// A bordered surface in its uniform background metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceModel {
    pub kind: SurfaceKind,
    pub euler_char: i32,
    pub volume: f64,
    pub boundary_length: f64,
    /// Constant scalar curvature of the background metric.
    pub scalar_curvature: f64,
    /// Constant geodesic curvature of the boundary.
    pub geodesic_curvature: f64,
}

/// A point in the model chart (see module docs for the meaning of `u`, `v`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub u: f64,
    pub v: f64,
}

impl SurfacePoint {
    pub fn new(u: f64, v: f64) -> Self {
        SurfacePoint { u, v }
    }

    /// Half-plane point from `z = x + iy`.
    pub fn from_complex(x: f64, y: f64) -> Self {
        SurfacePoint { u: y, v: x }
    }
}

pub fn build_surface(spec: &SurfaceSpec) -> Result<SurfaceModel> {
    match *spec {
        SurfaceSpec::FlatCylinder { height } => {
            if !(height > 0.0 && height.is_finite()) {
                return Err(Error::param("height", format!("modulus must be positive, got {height}")));
            }
            Ok(SurfaceModel {
                kind: SurfaceKind::FlatCylinder { height },
                euler_char: 0,
                volume: height,
                boundary_length: 2.0,
                scalar_curvature: 0.0,
                geodesic_curvature: 0.0,
            })
        }
        SurfaceSpec::Hemisphere => Ok(SurfaceModel {
            kind: SurfaceKind::Hemisphere,
            euler_char: 1,
            volume: 2.0 * PI,
            boundary_length: 2.0 * PI,
            scalar_curvature: 2.0,
            geodesic_curvature: 0.0,
        }),
        SurfaceSpec::HalfPlaneDozz { window_radius } => {
            if !(window_radius > 0.0 && window_radius.is_finite()) {
                return Err(Error::param("window_radius", "must be positive"));
            }
            // ∫_ℍ |x|₊⁻⁴ d²x = π/2 + π/2, ∫_ℝ |x|₊⁻² dx = 2 + 2.
            // The metric is flat on both sides of |x| = 1; its curvature is
            // carried by that circle and is not represented by a constant.
            Ok(SurfaceModel {
                kind: SurfaceKind::HalfPlaneDozz { window_radius },
                euler_char: 1,
                volume: PI,
                boundary_length: 4.0,
                scalar_curvature: 0.0,
                geodesic_curvature: 0.0,
            })
        }
    }
}

impl SurfaceModel {
    pub fn cylinder(height: f64) -> Result<Self> {
        build_surface(&SurfaceSpec::FlatCylinder { height })
    }

    pub fn hemisphere() -> Self {
        build_surface(&SurfaceSpec::Hemisphere).expect("hemisphere is always valid")
    }

    pub fn half_plane_dozz() -> Self {
        build_surface(&SurfaceSpec::HalfPlaneDozz { window_radius: 4.0 }).expect("valid")
    }

    pub fn height(&self) -> Option<f64> {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => Some(height),
            _ => None,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self.kind, SurfaceKind::HalfPlaneDozz { .. })
    }

    /// Extent of the transverse coordinate `u` on Σ.
    pub fn transverse_extent(&self) -> f64 {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => height,
            SurfaceKind::Hemisphere => FRAC_PI_2,
            SurfaceKind::HalfPlaneDozz { window_radius } => window_radius,
        }
    }

    /// Period of the azimuthal coordinate `v` (compact models).
    pub fn azimuth_period(&self) -> f64 {
        match self.kind {
            SurfaceKind::FlatCylinder { .. } => 1.0,
            _ => 2.0 * PI,
        }
    }

    /// Conversion from azimuth to angle: `v ↦ ω v` is `2π`-periodic.
    pub fn azimuth_frequency(&self) -> f64 {
        2.0 * PI / self.azimuth_period()
    }

    pub fn contains(&self, p: &SurfacePoint) -> bool {
        let ok = p.u.is_finite() && p.v.is_finite();
        ok && match self.kind {
            SurfaceKind::FlatCylinder { height } => {
                p.u >= -BOUNDARY_TOL && p.u <= height + BOUNDARY_TOL
            }
            SurfaceKind::Hemisphere => p.u >= -BOUNDARY_TOL && p.u <= FRAC_PI_2 + BOUNDARY_TOL,
            SurfaceKind::HalfPlaneDozz { .. } => p.u >= -BOUNDARY_TOL,
        }
    }

    pub fn on_boundary(&self, p: &SurfacePoint) -> bool {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => {
                p.u.abs() <= BOUNDARY_TOL || (p.u - height).abs() <= BOUNDARY_TOL
            }
            SurfaceKind::Hemisphere => (p.u - FRAC_PI_2).abs() <= BOUNDARY_TOL,
            SurfaceKind::HalfPlaneDozz { .. } => p.u.abs() <= BOUNDARY_TOL,
        }
    }

    /// Distance from an interior point to ∂Σ in the background metric.
    pub fn distance_to_boundary(&self, p: &SurfacePoint) -> f64 {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => p.u.min(height - p.u).max(0.0),
            SurfaceKind::Hemisphere => (FRAC_PI_2 - p.u).max(0.0),
            SurfaceKind::HalfPlaneDozz { .. } => p.u.max(0.0),
        }
    }

    fn double_contains(&self, p: &SurfacePoint) -> bool {
        let ok = p.u.is_finite() && p.v.is_finite();
        ok && match self.kind {
            SurfaceKind::FlatCylinder { height } => {
                p.u >= -BOUNDARY_TOL && p.u < 2.0 * height + BOUNDARY_TOL
            }
            SurfaceKind::Hemisphere => p.u >= -BOUNDARY_TOL && p.u <= PI + BOUNDARY_TOL,
            SurfaceKind::HalfPlaneDozz { .. } => true,
        }
    }

    /// Canonical chart representative of a point on the double.
    pub fn normalize_double(&self, p: &SurfacePoint) -> SurfacePoint {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => SurfacePoint {
                u: p.u.rem_euclid(2.0 * height),
                v: p.v.rem_euclid(1.0),
            },
            SurfaceKind::Hemisphere => SurfacePoint {
                u: p.u,
                v: p.v.rem_euclid(2.0 * PI),
            },
            SurfaceKind::HalfPlaneDozz { .. } => *p,
        }
    }

    /// Unit vector in ℝ³ for a sphere chart point.
    pub fn sphere_vector(p: &SurfacePoint) -> [f64; 3] {
        let (st, ct) = p.u.sin_cos();
        let (sp, cp) = p.v.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn sphere_point(x: [f64; 3]) -> SurfacePoint {
        let z = x[2].clamp(-1.0, 1.0);
        SurfacePoint {
            u: z.acos(),
            v: x[1].atan2(x[0]).rem_euclid(2.0 * PI),
        }
    }

    /// Geodesic distance on the double.
    pub fn double_distance(&self, p: &SurfacePoint, q: &SurfacePoint) -> f64 {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => {
                let period = 2.0 * height;
                let dt = (p.u - q.u).rem_euclid(period);
                let dt = dt.min(period - dt);
                let dy = (p.v - q.v).rem_euclid(1.0);
                let dy = dy.min(1.0 - dy);
                dt.hypot(dy)
            }
            SurfaceKind::Hemisphere => {
                let a = Self::sphere_vector(p);
                let b = Self::sphere_vector(q);
                // atan2 form is accurate for nearby and antipodal pairs alike.
                let cross = [
                    a[1] * b[2] - a[2] * b[1],
                    a[2] * b[0] - a[0] * b[2],
                    a[0] * b[1] - a[1] * b[0],
                ];
                let s = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
                let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                s.atan2(c)
            }
            SurfaceKind::HalfPlaneDozz { .. } => (p.u - q.u).hypot(p.v - q.v),
        }
    }

    /// The involution σ of the double fixing ∂Σ pointwise.
    pub fn involution_map(&self, p: &SurfacePoint) -> Result<SurfacePoint> {
        if !self.double_contains(p) {
            return Err(Error::OutsideDomain(format!("({}, {})", p.u, p.v)));
        }
        Ok(self.reflect(p))
    }

    /// σ without the chart check, for internal hot paths.
    pub(crate) fn reflect(&self, p: &SurfacePoint) -> SurfacePoint {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => SurfacePoint {
                u: (-p.u).rem_euclid(2.0 * height),
                v: p.v,
            },
            SurfaceKind::Hemisphere => SurfacePoint { u: PI - p.u, v: p.v },
            SurfaceKind::HalfPlaneDozz { .. } => SurfacePoint { u: -p.u, v: p.v },
        }
    }

    /// Largest admissible regularization radius.
    pub fn injectivity_bound(&self) -> f64 {
        match self.kind {
            SurfaceKind::FlatCylinder { height } => (0.5 * height).min(0.5),
            SurfaceKind::Hemisphere => FRAC_PI_2,
            SurfaceKind::HalfPlaneDozz { window_radius } => window_radius,
        }
    }

    /// Points on the geodesic circle `C_ε(x)` clipped to Σ, with equal
    /// quadrature weights over the retained arc.
    pub fn geodesic_circle_sample(
        &self,
        x: &SurfacePoint,
        eps: f64,
        n: usize,
    ) -> Result<CircleSample> {
        if !(eps > 0.0) {
            return Err(Error::param("eps", "must be positive"));
        }
        if n < 8 {
            return Err(Error::param("n", format!("need at least 8 circle points, got {n}")));
        }
        if eps >= self.injectivity_bound() {
            return Err(Error::param(
                "eps",
                format!("{eps} exceeds the injectivity bound {}", self.injectivity_bound()),
            ));
        }
        if !self.contains(x) {
            return Err(Error::OutsideDomain(format!("({}, {})", x.u, x.v)));
        }
        let arc = self.retained_arc(x, eps);
        let angles: Vec<f64> = if arc.half_width >= PI {
            (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
        } else {
            let step = 2.0 * arc.half_width / n as f64;
            (0..n)
                .map(|k| arc.center - arc.half_width + (k as f64 + 0.5) * step)
                .collect()
        };
        let points = angles.iter().map(|&a| self.circle_point(x, eps, a)).collect();
        Ok(CircleSample {
            points,
            weights: vec![1.0 / n as f64; n],
            arc_fraction: arc.half_width.min(PI) / PI,
            arc,
        })
    }

    /// The retained arc, in the circle angle used by [`Self::circle_point`].
    pub fn retained_arc(&self, x: &SurfacePoint, eps: f64) -> Arc {
        // Angle 0 points away from the nearest boundary component.
        let (center, c) = match self.kind {
            SurfaceKind::FlatCylinder { height } => {
                if x.u <= 0.5 * height {
                    (0.0, -x.u / eps)
                } else {
                    (PI, -(height - x.u) / eps)
                }
            }
            SurfaceKind::Hemisphere => {
                let st = x.u.sin();
                if st < 1e-15 {
                    (0.0, -2.0)
                } else {
                    (0.0, -(x.u.cos() / st) / eps.tan())
                }
            }
            SurfaceKind::HalfPlaneDozz { .. } => (0.0, -x.u / eps),
        };
        let half_width = if c <= -1.0 { PI } else { c.min(1.0).acos() };
        Arc { center, half_width }
    }

    /// Point at angle `a` on the geodesic circle of radius `eps` about `x`.
    pub fn circle_point(&self, x: &SurfacePoint, eps: f64, a: f64) -> SurfacePoint {
        let (sa, ca) = a.sin_cos();
        match self.kind {
            SurfaceKind::FlatCylinder { .. } => SurfacePoint {
                u: x.u + eps * ca,
                v: (x.v + eps * sa).rem_euclid(1.0),
            },
            SurfaceKind::Hemisphere => {
                let p = Self::sphere_vector(x);
                let (st, ct) = x.u.sin_cos();
                let (sp, cp) = x.v.sin_cos();
                let north = [-ct * cp, -ct * sp, st];
                let east = [-sp, cp, 0.0];
                let (se, ce) = eps.sin_cos();
                let q = [
                    ce * p[0] + se * (ca * north[0] + sa * east[0]),
                    ce * p[1] + se * (ca * north[1] + sa * east[1]),
                    ce * p[2] + se * (ca * north[2] + sa * east[2]),
                ];
                Self::sphere_point(q)
            }
            SurfaceKind::HalfPlaneDozz { .. } => SurfacePoint {
                u: x.u + eps * ca,
                v: x.v + eps * sa,
            },
        }
    }
}

/// An arc `[center - half_width, center + half_width]` of circle angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub center: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone)]
pub struct CircleSample {
    pub points: Vec<SurfacePoint>,
    pub weights: Vec<f64>,
    /// Retained fraction of the full circle.
    pub arc_fraction: f64,
    pub arc: Arc,
}

/// A smooth conformal factor `φ`, for metrics `g = e^φ g₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConformalFactor {
    Zero,
    Constant { value: f64 },
    /// `a cos(k ω v)`, with `ω v` the azimuth angle (cylinder only: `k ≥ 1`).
    CosAzimuth { amplitude: f64, k: u32 },
    /// Cylinder: `a cos(π k t / (2T))`.
    CosTransverse { amplitude: f64, k: u32 },
    /// Hemisphere: `a cos θ`.
    Height { amplitude: f64 },
}

/// Closed-form integrals of a conformal factor against the background data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorIntegrals {
    /// `∫ ‖dφ‖² dv₀`
    pub gradient_norm: f64,
    /// `∫ R₀ φ dv₀`
    pub curvature: f64,
    /// `∫ k₀ φ dλ₀`
    pub boundary_curvature: f64,
}

impl ConformalFactor {
    pub fn validate(&self, surface: &SurfaceModel) -> Result<()> {
        let ok = match (self, surface.kind) {
            (ConformalFactor::Zero | ConformalFactor::Constant { .. }, _) => true,
            (ConformalFactor::CosAzimuth { k, .. }, SurfaceKind::FlatCylinder { .. }) => *k >= 1,
            (ConformalFactor::CosTransverse { .. }, SurfaceKind::FlatCylinder { .. }) => true,
            (ConformalFactor::Height { .. }, SurfaceKind::Hemisphere) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("conformal factor {self:?} on {:?}", surface.kind)))
        }
    }

    pub fn eval(&self, surface: &SurfaceModel, p: &SurfacePoint) -> f64 {
        match *self {
            ConformalFactor::Zero => 0.0,
            ConformalFactor::Constant { value } => value,
            ConformalFactor::CosAzimuth { amplitude, k } => {
                amplitude * (k as f64 * surface.azimuth_frequency() * p.v).cos()
            }
            ConformalFactor::CosTransverse { amplitude, k } => {
                let t_len = surface.transverse_extent();
                amplitude * (PI * k as f64 * p.u / (2.0 * t_len)).cos()
            }
            ConformalFactor::Height { amplitude } => amplitude * p.u.cos(),
        }
    }

    /// `‖dφ‖²_{g₀}` at `p`.
    pub fn gradient_norm_sq(&self, surface: &SurfaceModel, p: &SurfacePoint) -> f64 {
        match *self {
            ConformalFactor::Zero | ConformalFactor::Constant { .. } => 0.0,
            ConformalFactor::CosAzimuth { amplitude, k } => {
                let w = k as f64 * surface.azimuth_frequency();
                (amplitude * w * (w * p.v).sin()).powi(2)
            }
            ConformalFactor::CosTransverse { amplitude, k } => {
                let w = PI * k as f64 / (2.0 * surface.transverse_extent());
                (amplitude * w * (w * p.u).sin()).powi(2)
            }
            ConformalFactor::Height { amplitude } => (amplitude * p.u.sin()).powi(2),
        }
    }

    /// Closed-form integrals over the model.
    pub fn integrals(&self, surface: &SurfaceModel) -> FactorIntegrals {
        let r0 = surface.scalar_curvature;
        let k0 = surface.geodesic_curvature;
        let (grad, mean_phi, boundary_phi) = match (*self, surface.kind) {
            (ConformalFactor::Zero, _) => (0.0, 0.0, 0.0),
            (ConformalFactor::Constant { value }, _) => {
                (0.0, value * surface.volume, value * surface.boundary_length)
            }
            (ConformalFactor::CosAzimuth { amplitude, k }, SurfaceKind::FlatCylinder { height }) => {
                let w = 2.0 * PI * k as f64;
                (amplitude * amplitude * w * w * height / 2.0, 0.0, 0.0)
            }
            (ConformalFactor::CosTransverse { amplitude, k }, SurfaceKind::FlatCylinder { height }) => {
                let kf = k as f64;
                let w = PI * kf / (2.0 * height);
                let grad = amplitude * amplitude * w * w * height / 2.0;
                // ∫₀ᵀ cos(w t) dt and the boundary values at t = 0, T.
                let int = if k == 0 { height } else { amplitude * (w * height).sin() / w };
                let int = if k == 0 { amplitude * int } else { int };
                (grad, int, amplitude * (1.0 + (w * height).cos()))
            }
            (ConformalFactor::Height { amplitude }, SurfaceKind::Hemisphere) => {
                (4.0 * PI * amplitude * amplitude / 3.0, PI * amplitude, 0.0)
            }
            _ => (f64::NAN, f64::NAN, f64::NAN),
        };
        FactorIntegrals {
            gradient_norm: grad,
            curvature: r0 * mean_phi,
            boundary_curvature: k0 * boundary_phi,
        }
    }

    /// The same integrals recomputed by tensor-product midpoint quadrature.
    pub fn quadrature_integrals(&self, surface: &SurfaceModel, n: usize) -> FactorIntegrals {
        let ext = surface.transverse_extent();
        let per = surface.azimuth_period();
        let (du, dv) = (ext / n as f64, per / n as f64);
        let mut grad = 0.0;
        let mut phi = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) * du;
            let jac = match surface.kind {
                SurfaceKind::Hemisphere => u.sin(),
                _ => 1.0,
            };
            for j in 0..n {
                let p = SurfacePoint::new(u, (j as f64 + 0.5) * dv);
                grad += self.gradient_norm_sq(surface, &p) * jac * du * dv;
                phi += self.eval(surface, &p) * jac * du * dv;
            }
        }
        let mut bphi = 0.0;
        let boundary_rows: Vec<f64> = match surface.kind {
            SurfaceKind::FlatCylinder { height } => vec![0.0, height],
            _ => vec![ext],
        };
        for u in boundary_rows {
            for j in 0..n {
                bphi += self.eval(surface, &SurfacePoint::new(u, (j as f64 + 0.5) * dv)) * dv;
            }
        }
        FactorIntegrals {
            gradient_norm: grad,
            curvature: surface.scalar_curvature * phi,
            boundary_curvature: surface.geodesic_curvature * bphi,
        }
    }
}
