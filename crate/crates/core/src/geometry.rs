//! Transverse-plane and helix geometry shared by all filter stages.
//!
//! Units are millimetres, MeV and Tesla throughout. The magnetic field
//! points along +z. Sign convention for curved quantities: a positive
//! signed radius (or curvature) means counter-clockwise motion in the
//! transverse plane seen from +z, which this code assigns to charge +1.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Momentum from bending radius: p_t [MeV/c] = 0.299792458 * B [T] * r [mm].
pub const PT_CONVERSION: f64 = 0.299792458;

// ---------------------------------------------------------------------------
// vectors
// ---------------------------------------------------------------------------

/// Point or direction in the transverse plane, mm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2<F> {
    pub x: F,
    pub y: F,
}

/// Point or direction in detector coordinates, mm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<F> {
    pub x: F,
    pub y: F,
    pub z: F,
}

impl<F: Scalar> Vec2<F> {
    pub fn new(x: F, y: F) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product of the embedded vectors.
    pub fn cross(self, o: Self) -> F {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> F {
        self.dot(self).sqrt()
    }

    // Method-call chains read better than operators next to dot/cross/norm,
    // so these stay inherent methods.
    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: F) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    /// Rotation by +90 degrees; left-hand normal of a direction of travel.
    pub fn rot90(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > F::zero() {
            Some(self.scale(F::one() / n))
        } else {
            None
        }
    }

    pub fn distance(self, o: Self) -> F {
        self.sub(o).norm()
    }

    /// Azimuth in (-pi, pi].
    pub fn azimuth(self) -> F {
        self.y.atan2(self.x)
    }

    pub fn cast<T: Scalar>(self) -> Vec2<T>
    where
        F: Scalar,
    {
        Vec2::new(
            T::of(self.x.to_f64().unwrap()),
            T::of(self.y.to_f64().unwrap()),
        )
    }
}

impl<F: Scalar> Vec3<F> {
    pub fn new(x: F, y: F, z: F) -> Self {
        Self { x, y, z }
    }

    pub fn xy(self) -> Vec2<F> {
        Vec2::new(self.x, self.y)
    }

    /// Distance from the beam axis.
    pub fn rt(self) -> F {
        self.xy().norm()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: F) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> F {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> F {
        self.sub(o).norm()
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn cast<T: Scalar>(self) -> Vec3<T>
    where
        F: Scalar,
    {
        Vec3::new(
            T::of(self.x.to_f64().unwrap()),
            T::of(self.y.to_f64().unwrap()),
            T::of(self.z.to_f64().unwrap()),
        )
    }
}

/// Circle in the transverse plane. The radius is signed: positive means the
/// track runs counter-clockwise (charge +1 by our convention).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle2D<F> {
    pub center: Vec2<F>,
    pub radius: F,
}

impl<F: Scalar> Circle2D<F> {
    pub fn new(center: Vec2<F>, radius: F) -> Self {
        Self { center, radius }
    }

    pub fn abs_radius(&self) -> F {
        self.radius.abs()
    }

    /// +1 for counter-clockwise travel, -1 for clockwise.
    pub fn sense(&self) -> F {
        if self.radius >= F::zero() {
            F::one()
        } else {
            -F::one()
        }
    }
}

// ---------------------------------------------------------------------------
// angles
// ---------------------------------------------------------------------------

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle<F: Scalar>(a: F) -> F {
    let two_pi = F::PI() + F::PI();
    let mut a = a % two_pi;
    if a > F::PI() {
        a = a - two_pi;
    } else if a <= -F::PI() {
        a = a + two_pi;
    }
    a
}

// ---------------------------------------------------------------------------
// triplet geometry primitives
// ---------------------------------------------------------------------------

/// Longitudinal slope (z_out - z_in) / (rt_out - rt_in) between two hits.
///
/// Radii are taken from the hit positions themselves. `None` when both hits
/// sit at the same distance from the axis, which cannot happen for hits on
/// two different layers and therefore marks a degenerate combination.
pub fn tan_lambda<F: Scalar>(inner: Vec3<F>, outer: Vec3<F>) -> Option<F> {
    let dr = outer.rt() - inner.rt();
    if dr == F::zero() {
        return None;
    }
    Some((outer.z - inner.z) / dr)
}

/// Cosine of the transverse opening angle between two hit position vectors,
/// clamped into [-1, 1]. `None` for a zero-length vector.
pub fn cos_phi<F: Scalar>(a: Vec2<F>, b: Vec2<F>) -> Option<F> {
    let na = a.norm();
    let nb = b.norm();
    if na == F::zero() || nb == F::zero() {
        return None;
    }
    let c = a.dot(b) / (na * nb);
    Some(c.min(F::one()).max(-F::one()))
}

/// Signed radius of the circle through three transverse points, traversed
/// in the order given.
///
/// The magnitude is d01*d12*d20 / (2*|cross|); the sign is positive when
/// h0 -> h1 -> h2 bends counter-clockwise, so it carries the charge of the
/// corresponding track. `None` for collinear points (infinite radius).
pub fn circle_radius_3pt<F: Scalar>(h0: Vec2<F>, h1: Vec2<F>, h2: Vec2<F>) -> Option<F> {
    let cross = h1.sub(h0).cross(h2.sub(h1));
    if cross == F::zero() || !cross.is_finite() {
        return None;
    }
    let d01 = h0.distance(h1);
    let d12 = h1.distance(h2);
    let d20 = h2.distance(h0);
    Some(d01 * d12 * d20 / (cross + cross))
}

/// Center of the circle through three transverse points, `None` if collinear.
pub fn circumcenter<F: Scalar>(a: Vec2<F>, b: Vec2<F>, c: Vec2<F>) -> Option<Vec2<F>> {
    let two = F::of(2.0);
    let d = two * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    if d == F::zero() || !d.is_finite() {
        return None;
    }
    let a2 = a.dot(a);
    let b2 = b.dot(b);
    let c2 = c.dot(c);
    let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    Some(Vec2::new(ux, uy))
}

/// Circle through three transverse points with travel-signed radius.
pub fn circle_through<F: Scalar>(h0: Vec2<F>, h1: Vec2<F>, h2: Vec2<F>) -> Option<Circle2D<F>> {
    let center = circumcenter(h0, h1, h2)?;
    let radius = circle_radius_3pt(h0, h1, h2)?;
    Some(Circle2D::new(center, radius))
}

/// Transverse momentum of a track bending with radius `rt` in field `b`.
pub fn pt_from_radius<F: Scalar>(rt: F, b: F) -> F {
    F::of(PT_CONVERSION) * b * rt.abs()
}

/// Intersection points of two circles, or `None` when they do not cross.
///
/// Radii signs are ignored. Tangent circles (gap below 1e-9 mm) yield two
/// coincident points. The two points come in a deterministic order: left
/// then right of the center-to-center axis.
pub fn circle_intersections<F: Scalar>(
    a: &Circle2D<F>,
    b: &Circle2D<F>,
) -> Option<(Vec2<F>, Vec2<F>)> {
    let r1 = a.abs_radius();
    let r2 = b.abs_radius();
    let axis = b.center.sub(a.center);
    let d = axis.norm();
    if d == F::zero() {
        // Concentric circles intersect nowhere or everywhere; neither case
        // yields usable points.
        return None;
    }
    let along = (d * d + r1 * r1 - r2 * r2) / (d + d);
    let h2 = r1 * r1 - along * along;
    let h = if h2 >= F::zero() {
        h2.sqrt()
    } else {
        let tangent_gap = (d - (r1 + r2)).abs().min((d - (r1 - r2).abs()).abs());
        if tangent_gap <= F::of(1e-9) {
            F::zero()
        } else {
            return None;
        }
    };
    let dir = axis.scale(F::one() / d);
    let foot = a.center.add(dir.scale(along));
    let n = dir.rot90();
    Some((foot.add(n.scale(h)), foot.sub(n.scale(h))))
}

// ---------------------------------------------------------------------------
// detector description
// ---------------------------------------------------------------------------

pub const NUM_LAYERS: usize = 4;

/// Four concentric barrel pixel layers around a target disk on the beam axis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorGeometry<F> {
    /// Layer radii in mm, strictly increasing.
    pub layer_radii: [F; NUM_LAYERS],
    /// Half-length of each layer along z, mm.
    pub half_lengths: [F; NUM_LAYERS],
    /// Radius of the stopping-target disk, mm.
    pub target_radius: F,
    /// Solenoid field along +z, Tesla.
    pub b_field: F,
}

impl<F: Scalar> Default for DetectorGeometry<F> {
    fn default() -> Self {
        Self {
            layer_radii: [F::of(23.3), F::of(29.8), F::of(73.9), F::of(86.3)],
            half_lengths: [F::of(60.0), F::of(60.0), F::of(170.0), F::of(180.0)],
            target_radius: F::of(19.0),
            b_field: F::one(),
        }
    }
}

impl<F: Scalar> DetectorGeometry<F> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.b_field > F::zero()) {
            return Err("geometry.b_field must be positive".into());
        }
        if !(self.target_radius > F::zero()) {
            return Err("geometry.target_radius must be positive".into());
        }
        let mut prev = F::zero();
        for (i, &r) in self.layer_radii.iter().enumerate() {
            if !(r > prev) {
                return Err(format!(
                    "geometry.layer_radii must be positive and strictly increasing (layer {i})"
                ));
            }
            prev = r;
        }
        if !(self.target_radius < self.layer_radii[0]) {
            return Err("geometry.target_radius must lie inside the first layer".into());
        }
        for (i, &h) in self.half_lengths.iter().enumerate() {
            if !(h > F::zero()) {
                return Err(format!(
                    "geometry.half_lengths must be positive (layer {i})"
                ));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DetectorGeometry<T> {
        DetectorGeometry {
            layer_radii: self.layer_radii.map(|v| T::of(v.to_f64().unwrap())),
            half_lengths: self.half_lengths.map(|v| T::of(v.to_f64().unwrap())),
            target_radius: T::of(self.target_radius.to_f64().unwrap()),
            b_field: T::of(self.b_field.to_f64().unwrap()),
        }
    }
}

/// Particle-physics constants the toy and the fits agree on.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConstants<F> {
    /// Rest energy of the decaying parent, MeV.
    pub muon_rest_energy: F,
    /// Electron mass, MeV.
    pub electron_mass: F,
    /// MeV/c per Tesla-millimetre of bending radius.
    pub pt_conversion: F,
}

impl<F: Scalar> Default for PhysicsConstants<F> {
    fn default() -> Self {
        Self {
            muon_rest_energy: F::of(105.6583745),
            electron_mass: F::of(0.51099895),
            pt_conversion: F::of(PT_CONVERSION),
        }
    }
}

impl<F: Scalar> PhysicsConstants<F> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.muon_rest_energy > F::zero())
            || !(self.electron_mass > F::zero())
            || !(self.pt_conversion > F::zero())
        {
            return Err("physics constants must be positive".into());
        }
        if !(self.electron_mass < self.muon_rest_energy) {
            return Err("physics.electron_mass must be below the parent rest energy".into());
        }
        Ok(())
    }

    /// Endpoint energy of the single-positron background spectrum, MeV.
    pub fn michel_endpoint_energy(&self) -> F {
        let m = self.muon_rest_energy;
        let me = self.electron_mass;
        (m * m + me * me) / (m + m)
    }

    /// Endpoint momentum of the single-positron background spectrum, MeV/c.
    pub fn michel_endpoint_momentum(&self) -> F {
        let e = self.michel_endpoint_energy();
        (e * e - self.electron_mass * self.electron_mass).sqrt()
    }

    /// Highland multiple-scattering angle for a relativistic electron
    /// crossing `x_over_x0` radiation lengths with momentum `p` MeV/c.
    pub fn highland_sigma(&self, p: F, x_over_x0: F) -> F {
        let me = self.electron_mass;
        let e = (p * p + me * me).sqrt();
        let beta = p / e;
        let x = x_over_x0;
        F::of(13.6) / (beta * p) * x.sqrt() * (F::one() + F::of(0.038) * x.ln())
    }

    pub fn cast<T: Scalar>(&self) -> PhysicsConstants<T> {
        PhysicsConstants {
            muon_rest_energy: T::of(self.muon_rest_energy.to_f64().unwrap()),
            electron_mass: T::of(self.electron_mass.to_f64().unwrap()),
            pt_conversion: T::of(self.pt_conversion.to_f64().unwrap()),
        }
    }
}
