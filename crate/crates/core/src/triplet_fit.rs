//! Stage 2: multiple-scattering helix fit.
//!
//! A triplet is modelled as two circular arcs of common curvature `kappa`
//! joined at the middle hit; the only free parameter is `kappa`. The fit
//! minimizes the two scattering angles at the middle hit, weighted by the
//! Highland expectation:
//!
//! ```text
//! chi2(kappa) = phi_ms^2 / sigma_phi^2 + theta_ms^2 / sigma_theta^2
//! ```
//!
//! starting from the exact circle solution (where `phi_ms = 0`) and taking
//! damped Gauss-Newton steps with finite-difference derivatives. A track
//! candidate is two such triplets sharing an edge (layers 0-1-2 and 1-2-3)
//! combined through the inverse-variance mean of their curvatures.

use serde::{Deserialize, Serialize};

use crate::cuts::TripletCandidate;
use crate::geometry::{
    circle_intersections, circle_radius_3pt, wrap_angle, Circle2D, DetectorGeometry,
    PhysicsConstants, Vec2, Vec3,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig<F> {
    /// Acceptance bound on the combined two-triplet objective.
    pub chi2_max: F,
    /// Cap on accepted tracks per frame; one more marks the frame as
    /// overflowed and keeps it for offline processing.
    pub max_tracks: usize,
    /// Scatterer thickness per layer for the Highland angle entering the
    /// fit weights.
    pub x_over_x0: F,
}

impl<F: Scalar> Default for FitConfig<F> {
    fn default() -> Self {
        Self {
            chi2_max: F::of(32.0),
            max_tracks: 64,
            x_over_x0: F::of(0.00115),
        }
    }
}

impl<F: Scalar> FitConfig<F> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.chi2_max > F::zero()) {
            return Err("fit.chi2_max must be positive".into());
        }
        if self.max_tracks == 0 {
            return Err("fit.max_tracks must be positive".into());
        }
        if !(self.x_over_x0 > F::zero()) {
            return Err("fit.x_over_x0 must be positive".into());
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> FitConfig<T> {
        FitConfig {
            chi2_max: T::of(self.chi2_max.to_f64().unwrap()),
            max_tracks: self.max_tracks,
            x_over_x0: T::of(self.x_over_x0.to_f64().unwrap()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TripletFitResult<F> {
    /// Fitted signed curvature, 1/mm (positive = counter-clockwise).
    pub kappa: F,
    pub sigma_kappa: F,
    pub chi2: F,
    /// Residual scattering angles at the fitted curvature.
    pub phi_ms: F,
    pub theta_ms: F,
    /// Dip angle of the first segment at the fitted curvature.
    pub lambda01: F,
    /// Weights used by the fit; kept so a combined-curvature objective can
    /// be re-evaluated without re-deriving them.
    pub sigma_phi: F,
    pub sigma_theta: F,
}

/// Track accepted by the two-triplet fit, ready for the vertex stage.
#[derive(Clone, Copy, Debug)]
pub struct TrackCandidate<F> {
    /// Hit index per layer.
    pub hits: [u32; 4],
    pub kappa_bar: F,
    pub chi2_global: F,
    /// +1 (counter-clockwise) or -1.
    pub charge: i8,
    /// Dip angle near the innermost hit.
    pub lambda: F,
    /// Transverse circle through the two innermost hits at the combined
    /// curvature; the radius carries the travel sense in its sign.
    pub circle: Circle2D<F>,
    /// Innermost hit, anchor for projections back towards the target.
    pub h0: Vec3<F>,
    /// Transverse momentum, MeV/c.
    pub pt: F,
    pub energy: F,
    /// Highland angle of the inner triplet, reused as the track's
    /// scattering weight downstream.
    pub sigma_ms: F,
}

impl<F: Scalar> TrackCandidate<F> {
    /// Momentum vector assuming the particle passes through `point`
    /// (which should lie on the track circle) in its travel direction.
    pub fn momentum_at(&self, point: Vec2<F>) -> Vec3<F> {
        let tangent = match point.sub(self.circle.center).normalized() {
            Some(radial) => radial.rot90().scale(self.circle.sense()),
            None => Vec2::new(F::zero(), F::zero()),
        };
        Vec3::new(
            self.pt * tangent.x,
            self.pt * tangent.y,
            self.pt * self.lambda.tan(),
        )
    }

    pub fn tan_lambda(&self) -> F {
        self.lambda.tan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackReject {
    /// Collinear or zero-length chord geometry.
    Degenerate,
    /// Track too close to the cylinder axis direction for a transverse fit.
    SteepDip,
    /// Curvature left the branch where both chords fit on the circle.
    OutOfBranch,
    /// Frame has no layer-3 hits to attach.
    NoLayer3Hit,
    /// Fitted helix never reaches the outer layer.
    NoReach,
    /// The two triplets disagree on the rotation sense.
    InconsistentCharge,
    HighChi2,
}

/// Half opening angle of the chord `d` on a circle of curvature `kappa`,
/// signed like `kappa`. `None` when the chord does not fit on the circle.
fn half_arc_angle<F: Scalar>(kappa: F, d: F) -> Option<F> {
    let x = kappa * d / F::of(2.0);
    if x.abs() > F::one() + F::of(1e-9) {
        return None;
    }
    Some(x.min(F::one()).max(F::of(-1.0)).asin())
}

/// Arc length joining two points a chord `d` apart at curvature `kappa`.
fn arc_length<F: Scalar>(kappa: F, d: F) -> Option<F> {
    if kappa.abs() < F::of(1e-300) {
        return Some(d);
    }
    let alpha = half_arc_angle(kappa.abs(), d)?;
    Some(F::of(2.0) * alpha / kappa.abs())
}

/// Scattering angles at the middle hit for arcs of curvature `kappa`.
///
/// `phi_ms` is the transverse kink between the tangent of arc(h0,h1) and
/// the tangent of arc(h1,h2) at h1; `theta_ms` is the kink of the dip
/// angle with the arc length as abscissa. `None` outside the curvature
/// branch where both chords fit.
pub fn scattering_angles<F: Scalar>(
    h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    kappa: F,
) -> Option<(F, F)> {
    let c01 = h1.xy().sub(h0.xy());
    let c12 = h2.xy().sub(h1.xy());
    let d01 = c01.norm();
    let d12 = c12.norm();
    if d01 <= F::zero() || d12 <= F::zero() {
        return None;
    }
    let psi = wrap_angle(c12.azimuth() - c01.azimuth());
    let a01 = half_arc_angle(kappa, d01)?;
    let a12 = half_arc_angle(kappa, d12)?;
    let phi_ms = wrap_angle(psi - a01 - a12);
    let s01 = arc_length(kappa, d01)?;
    let s12 = arc_length(kappa, d12)?;
    let lambda01 = (h1.z - h0.z).atan2(s01);
    let lambda12 = (h2.z - h1.z).atan2(s12);
    Some((phi_ms, lambda12 - lambda01))
}

/// The fit objective at a given curvature, using externally fixed weights.
pub fn triplet_chi2_at<F: Scalar>(
    h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    kappa: F,
    sigma_phi: F,
    sigma_theta: F,
) -> Option<F> {
    let (phi, theta) = scattering_angles(h0, h1, h2, kappa)?;
    Some(phi * phi / (sigma_phi * sigma_phi) + theta * theta / (sigma_theta * sigma_theta))
}

struct Derivatives<F> {
    d_phi: F,
    d_theta: F,
    /// Gauss-Newton normal-matrix entry; also the inverse curvature variance.
    denom: F,
}

fn derivatives_at<F: Scalar>(
    h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    kappa: F,
    delta: F,
    sigma_phi2: F,
    sigma_theta2: F,
) -> Option<Derivatives<F>> {
    let (phi_p, theta_p) = scattering_angles(h0, h1, h2, kappa + delta)?;
    let (phi_m, theta_m) = scattering_angles(h0, h1, h2, kappa - delta)?;
    let two_delta = F::of(2.0) * delta;
    let d_phi = (phi_p - phi_m) / two_delta;
    let d_theta = (theta_p - theta_m) / two_delta;
    let denom = d_phi * d_phi / sigma_phi2 + d_theta * d_theta / sigma_theta2;
    if !(denom > F::zero()) {
        return None;
    }
    Some(Derivatives {
        d_phi,
        d_theta,
        denom,
    })
}

/// Fits the curvature of one triplet starting from its circle solution.
///
/// `rt_cached` is the signed circle radius from the selection stage (or a
/// fresh `circle_radius_3pt` for the outer triplet).
pub fn fit_triplet<F: Scalar>(
    h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    rt_cached: F,
    cfg: &FitConfig<F>,
    consts: &PhysicsConstants<F>,
    b_field: F,
) -> Result<TripletFitResult<F>, TrackReject> {
    if !(rt_cached.abs() > F::zero()) || !rt_cached.is_finite() {
        return Err(TrackReject::Degenerate);
    }
    let kappa0 = rt_cached.recip();
    let d01 = h1.xy().sub(h0.xy()).norm();

    let s01 = arc_length(kappa0, d01).ok_or(TrackReject::OutOfBranch)?;
    let lambda0 = (h1.z - h0.z).atan2(s01);
    let cos_l = lambda0.cos().abs();
    if cos_l < F::of(1e-6) {
        return Err(TrackReject::SteepDip);
    }

    // Highland weights at the circle-solution momentum.
    let pt = consts.pt_conversion * b_field * rt_cached.abs();
    let p = pt / cos_l;
    let sigma_ms = consts.highland_sigma(p, cfg.x_over_x0);
    let sigma_theta = sigma_ms;
    let sigma_phi = sigma_ms / cos_l;
    let (sigma_phi2, sigma_theta2) = (sigma_phi * sigma_phi, sigma_theta * sigma_theta);

    // Below ~1e-6 relative the central difference drowns in rounding for
    // f64; shorter mantissas need a wider stencil.
    let delta = kappa0.abs() * F::of(1e-6).max(F::epsilon().sqrt());

    let mut kappa = kappa0;
    for _ in 0..3 {
        let (phi, theta) = scattering_angles(h0, h1, h2, kappa).ok_or(TrackReject::OutOfBranch)?;
        let der = derivatives_at(h0, h1, h2, kappa, delta, sigma_phi2, sigma_theta2)
            .ok_or(TrackReject::Degenerate)?;
        let mut step =
            -(phi * der.d_phi / sigma_phi2 + theta * der.d_theta / sigma_theta2) / der.denom;
        // stay on the branch and on the starting rotation sense
        let mut tries = 0;
        loop {
            let next = kappa + step;
            let in_branch =
                next.signum() == kappa0.signum() && scattering_angles(h0, h1, h2, next).is_some();
            if in_branch {
                break;
            }
            step = step / F::of(2.0);
            tries += 1;
            if tries > 8 {
                step = F::zero();
                break;
            }
        }
        kappa = kappa + step;
        if (step / kappa).abs() < F::of(1e-9) {
            break;
        }
    }

    let (phi_ms, theta_ms) =
        scattering_angles(h0, h1, h2, kappa).ok_or(TrackReject::OutOfBranch)?;
    let der = derivatives_at(h0, h1, h2, kappa, delta, sigma_phi2, sigma_theta2)
        .ok_or(TrackReject::Degenerate)?;
    let chi2 = phi_ms * phi_ms / sigma_phi2 + theta_ms * theta_ms / sigma_theta2;
    let s01_hat = arc_length(kappa, d01).ok_or(TrackReject::OutOfBranch)?;
    Ok(TripletFitResult {
        kappa,
        sigma_kappa: der.denom.recip().sqrt(),
        chi2,
        phi_ms,
        theta_ms,
        lambda01: (h1.z - h0.z).atan2(s01_hat),
        sigma_phi,
        sigma_theta,
    })
}

/// Inverse-variance mean of the two triplet curvatures.
pub fn combined_curvature<F: Scalar>(a: &TripletFitResult<F>, b: &TripletFitResult<F>) -> (F, F) {
    let wa = (a.sigma_kappa * a.sigma_kappa).recip();
    let wb = (b.sigma_kappa * b.sigma_kappa).recip();
    ((a.kappa * wa + b.kappa * wb) / (wa + wb), (wa + wb).recip())
}

/// First crossing of a directed circle with a layer cylinder, walking from
/// `from` (on the track circle) in the travel sense given by the signed
/// radius. Returns the crossing point and the positive turn angle to it.
fn first_crossing_along<F: Scalar>(
    track: &Circle2D<F>,
    from: Vec2<F>,
    layer: &Circle2D<F>,
) -> Option<(Vec2<F>, F)> {
    let (a, b) = circle_intersections(track, layer)?;
    let theta_from = from.sub(track.center).azimuth();
    let tau = F::PI() * F::of(2.0);
    let turn_to = |p: Vec2<F>| -> F {
        let raw = track.sense() * (p.sub(track.center).azimuth() - theta_from);
        let mut t = raw % tau;
        if t < F::zero() {
            t = t + tau;
        }
        if t < F::of(1e-12) {
            tau
        } else {
            t
        }
    };
    let (ta, tb) = (turn_to(a), turn_to(b));
    Some(if ta <= tb { (a, ta) } else { (b, tb) })
}

/// Continues the fitted helix from `h2` to its first crossing of layer 3.
pub fn extrapolate_to_layer3<F: Scalar>(
    fit: &TripletFitResult<F>,
    _h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    geom: &DetectorGeometry<F>,
) -> Option<Vec3<F>> {
    let kappa = fit.kappa;
    let chord = h2.xy().sub(h1.xy());
    let d12 = chord.norm();
    let alpha = half_arc_angle(kappa, d12)?;
    let u = chord.normalized()?;
    // tangent at the chord's end: chord direction rotated onward by alpha
    let (sin_a, cos_a) = alpha.sin_cos();
    let tangent = Vec2::new(u.x * cos_a - u.y * sin_a, u.x * sin_a + u.y * cos_a);
    let rt = kappa.recip();
    let center = h2.xy().add(tangent.rot90().scale(rt));
    let track = Circle2D::new(center, rt);
    let layer = Circle2D::new(Vec2::new(F::zero(), F::zero()), geom.layer_radii[3]);
    let (point, turn) = first_crossing_along(&track, h2.xy(), &layer)?;
    let s12 = arc_length(kappa, d12)?;
    let lambda12 = (h2.z - h1.z).atan2(s12);
    let z = h2.z + turn * rt.abs() * lambda12.tan();
    Some(Vec3::new(point.x, point.y, z))
}

/// Full stage-2 treatment of one selected triplet: fit, extend to layer 3,
/// refit the outer triplet and combine.
pub fn fit_track<F: Scalar>(
    cand: &TripletCandidate<F>,
    layers: [&[Vec3<F>]; 4],
    cfg: &FitConfig<F>,
    geom: &DetectorGeometry<F>,
    consts: &PhysicsConstants<F>,
) -> Result<TrackCandidate<F>, TrackReject> {
    let h0 = layers[0][cand.i0 as usize];
    let h1 = layers[1][cand.i1 as usize];
    let h2 = layers[2][cand.i2 as usize];

    let inner = fit_triplet(h0, h1, h2, cand.rt, cfg, consts, geom.b_field)?;
    if layers[3].is_empty() {
        return Err(TrackReject::NoLayer3Hit);
    }
    let predicted = extrapolate_to_layer3(&inner, h0, h1, h2, geom).ok_or(TrackReject::NoReach)?;

    let mut best = (F::infinity(), 0usize);
    for (i, hit) in layers[3].iter().enumerate() {
        let d = Vec3::new(hit.x, hit.y, hit.z).distance(predicted);
        if d < best.0 {
            best = (d, i);
        }
    }
    let i3 = best.1;
    let h3 = layers[3][i3];

    let rt_outer = circle_radius_3pt(h1.xy(), h2.xy(), h3.xy()).ok_or(TrackReject::Degenerate)?;
    let outer = fit_triplet(h1, h2, h3, rt_outer, cfg, consts, geom.b_field)?;

    if inner.kappa.signum() != outer.kappa.signum() {
        return Err(TrackReject::InconsistentCharge);
    }
    let (kappa_bar, _var) = combined_curvature(&inner, &outer);
    let chi2_global = triplet_chi2_at(h0, h1, h2, kappa_bar, inner.sigma_phi, inner.sigma_theta)
        .and_then(|a| {
            triplet_chi2_at(h1, h2, h3, kappa_bar, outer.sigma_phi, outer.sigma_theta)
                .map(|b| a + b)
        })
        .ok_or(TrackReject::OutOfBranch)?;
    if !(chi2_global < cfg.chi2_max) {
        return Err(TrackReject::HighChi2);
    }

    let rt_abs = kappa_bar.recip().abs();
    let lambda = inner.lambda01;
    let pt = consts.pt_conversion * geom.b_field * rt_abs;
    let p = pt / lambda.cos();
    let energy = (p * p + consts.electron_mass * consts.electron_mass).sqrt();

    // transverse circle anchored on the two innermost hits
    let chord = h1.xy().sub(h0.xy());
    let mid = h0.xy().add(h1.xy()).scale(F::of(0.5));
    let half = chord.norm() / F::of(2.0);
    let leg = (rt_abs * rt_abs - half * half).max(F::zero()).sqrt();
    let u = chord.normalized().ok_or(TrackReject::Degenerate)?;
    let center = mid.add(u.rot90().scale(kappa_bar.signum() * leg));

    Ok(TrackCandidate {
        hits: [cand.i0, cand.i1, cand.i2, i3 as u32],
        kappa_bar,
        chi2_global,
        charge: if kappa_bar > F::zero() { 1 } else { -1 },
        lambda,
        circle: Circle2D::new(center, kappa_bar.signum() * rt_abs),
        h0,
        pt,
        energy,
        sigma_ms: inner.sigma_ms(),
    })
}

impl<F: Scalar> TripletFitResult<F> {
    /// The Highland angle behind the fit weights.
    pub fn sigma_ms(&self) -> F {
        self.sigma_theta
    }
}
