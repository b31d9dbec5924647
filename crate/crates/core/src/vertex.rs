//! Stage 3: vertex estimate for (e+, e+, e-) track triples.
//!
//! Tracks are circles in the transverse plane. For a candidate triple the
//! pairwise circle intersections near the target give up to eight ways to
//! pick one point per pair; each choice is collapsed into a weighted mean,
//! projected onto each helix (point of closest approach plus the helix z
//! at that turn angle) and scored with a chi-square against the combined
//! 3D vertex. A frame is kept as soon as one estimate passes the signal
//! checks: vertex chi-square, distance from the beam axis, and total
//! momentum balance.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    circle_intersections, wrap_angle, Circle2D, DetectorGeometry, PhysicsConstants, Vec2, Vec3,
};
use crate::scalar::Scalar;
use crate::toygen::default_pixel_sigma;
use crate::triplet_fit::TrackCandidate;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VertexConfig<F> {
    /// Allowed |sum E - muon rest energy|, MeV.
    pub energy_window: F,
    /// Acceptance bound on the vertex chi-square.
    pub chi2_vertex_max: F,
    /// Intersections and vertices beyond target_radius + margin from the
    /// beam axis are dismissed, mm.
    pub target_margin: F,
    /// Bound on |sum of track momenta| at the vertex, MeV/c.
    pub p_total_max: F,
    /// Cap on energy-compatible triples per frame; more marks the frame
    /// as overflowed and keeps it for offline processing.
    pub max_track_combs: usize,
    /// Hit resolution entering the per-point variances, mm.
    pub pixel_sigma: F,
}

impl<F: Scalar> Default for VertexConfig<F> {
    fn default() -> Self {
        Self {
            energy_window: F::of(10.0),
            chi2_vertex_max: F::of(15.0),
            target_margin: F::of(3.0),
            p_total_max: F::of(15.0),
            max_track_combs: 32,
            pixel_sigma: F::of(default_pixel_sigma()),
        }
    }
}

impl<F: Scalar> VertexConfig<F> {
    pub fn validate(&self) -> Result<(), String> {
        for (key, v) in [
            ("vertex.energy_window", self.energy_window),
            ("vertex.chi2_vertex_max", self.chi2_vertex_max),
            ("vertex.target_margin", self.target_margin),
            ("vertex.p_total_max", self.p_total_max),
        ] {
            if !(v > F::zero()) {
                return Err(format!("{key} must be positive"));
            }
        }
        if self.max_track_combs == 0 {
            return Err("vertex.max_track_combs must be positive".into());
        }
        if !(self.pixel_sigma >= F::zero()) {
            return Err("vertex.pixel_sigma must be >= 0".into());
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> VertexConfig<T> {
        VertexConfig {
            energy_window: T::of(self.energy_window.to_f64().unwrap()),
            chi2_vertex_max: T::of(self.chi2_vertex_max.to_f64().unwrap()),
            target_margin: T::of(self.target_margin.to_f64().unwrap()),
            p_total_max: T::of(self.p_total_max.to_f64().unwrap()),
            max_track_combs: self.max_track_combs,
            pixel_sigma: T::of(self.pixel_sigma.to_f64().unwrap()),
        }
    }
}

/// Indices into the frame's accepted-track list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackTriple {
    pub positron_a: usize,
    pub positron_b: usize,
    pub electron: usize,
}

impl TrackTriple {
    fn members(&self) -> [usize; 3] {
        [self.positron_a, self.positron_b, self.electron]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VertexCandidate<F> {
    pub position: Vec3<F>,
    pub chi2: F,
    pub triple: TrackTriple,
    pub pca_points: [Vec3<F>; 3],
}

#[derive(Clone, Debug)]
pub struct VertexOutcome<F> {
    /// Some vertex passed all signal checks.
    pub keep: bool,
    /// More energy-compatible triples than max_track_combs.
    pub comb_overflow: bool,
    /// Triples passing the energy precheck.
    pub n_triples: u64,
    /// Lowest-chi2 estimate among everything evaluated.
    pub best: Option<VertexCandidate<F>>,
}

pub fn energy_precheck<F: Scalar>(
    tracks: [&TrackCandidate<F>; 3],
    cfg: &VertexConfig<F>,
    consts: &PhysicsConstants<F>,
) -> bool {
    let sum = tracks[0].energy + tracks[1].energy + tracks[2].energy;
    (sum - consts.muon_rest_energy).abs() <= cfg.energy_window
}

/// Inverse-variance weighted mean of the three chosen intersection points.
pub fn vertex_2d<F: Scalar>(points: [Vec2<F>; 3], sigma2: [F; 3]) -> Vec2<F> {
    let mut acc = Vec2::new(F::zero(), F::zero());
    let mut wsum = F::zero();
    for (p, s2) in points.iter().zip(sigma2) {
        let w = s2.recip();
        acc = acc.add(p.scale(w));
        wsum = wsum + w;
    }
    acc.scale(wsum.recip())
}

/// Closest point on the circle to `mu_t`; `None` when `mu_t` sits at the
/// center and no direction is preferred.
pub fn point_of_closest_approach<F: Scalar>(
    circle: &Circle2D<F>,
    mu_t: Vec2<F>,
) -> Option<Vec2<F>> {
    let dir = mu_t.sub(circle.center).normalized()?;
    Some(circle.center.add(dir.scale(circle.abs_radius())))
}

/// Helix z at the track's turn angle of `pca_t`, plus the transverse arc
/// length walked from the innermost hit (for the variance model).
///
/// The turn angle is signed along the travel direction, so a point of
/// closest approach behind the first hit (the usual case for a vertex in
/// the target) ends up below it for a rising helix.
pub fn project_to_z<F: Scalar>(track: &TrackCandidate<F>, pca_t: Vec2<F>) -> (F, F) {
    let center = track.circle.center;
    let theta_h0 = track.h0.xy().sub(center).azimuth();
    let theta_pca = pca_t.sub(center).azimuth();
    let dphi = wrap_angle(track.circle.sense() * (theta_pca - theta_h0));
    let r = track.circle.abs_radius();
    (track.h0.z + dphi * r * track.tan_lambda(), dphi.abs() * r)
}

pub fn vertex_chi2<F: Scalar>(pca_3d: &[Vec3<F>; 3], mu: Vec3<F>, sigma2: [F; 3]) -> F {
    let mut chi2 = F::zero();
    for (p, s2) in pca_3d.iter().zip(sigma2) {
        let d = p.sub(mu);
        chi2 = chi2 + d.dot(d) / s2;
    }
    chi2
}

/// One intersection point of a track pair with the quantities needed to
/// weight it: path lengths from the point back to each track's first hit.
#[derive(Clone, Copy)]
struct PairPoint<F> {
    point: Vec2<F>,
    /// Combined transverse variance from both tracks' scattering plus the
    /// pixel term.
    sigma2: F,
}

fn pair_points<F: Scalar>(
    a: &TrackCandidate<F>,
    b: &TrackCandidate<F>,
    r_accept: F,
    pixel_sigma2: F,
) -> Vec<PairPoint<F>> {
    let Some((p1, p2)) = circle_intersections(&a.circle, &b.circle) else {
        return Vec::new();
    };
    [p1, p2]
        .into_iter()
        .filter(|p| p.norm() <= r_accept)
        .map(|p| {
            let (_, s_a) = project_to_z(a, p);
            let (_, s_b) = project_to_z(b, p);
            let var = a.sigma_ms * a.sigma_ms * s_a * s_a
                + b.sigma_ms * b.sigma_ms * s_b * s_b
                + pixel_sigma2;
            PairPoint {
                point: p,
                sigma2: var,
            }
        })
        .collect()
}

/// Full stage-3 decision for one frame's accepted tracks.
pub fn evaluate_frame<F: Scalar>(
    tracks: &[TrackCandidate<F>],
    cfg: &VertexConfig<F>,
    geom: &DetectorGeometry<F>,
    consts: &PhysicsConstants<F>,
) -> VertexOutcome<F> {
    let mut out = VertexOutcome {
        keep: false,
        comb_overflow: false,
        n_triples: 0,
        best: None,
    };

    let positrons: Vec<usize> = (0..tracks.len())
        .filter(|i| tracks[*i].charge > 0)
        .collect();
    let electrons: Vec<usize> = (0..tracks.len())
        .filter(|i| tracks[*i].charge < 0)
        .collect();

    // phase 1: collect energy-compatible triples
    let mut triples = Vec::new();
    for (ai, a) in positrons.iter().enumerate() {
        for b in positrons.iter().skip(ai + 1) {
            for e in &electrons {
                let triple = TrackTriple {
                    positron_a: *a,
                    positron_b: *b,
                    electron: *e,
                };
                if energy_precheck([&tracks[*a], &tracks[*b], &tracks[*e]], cfg, consts) {
                    triples.push(triple);
                }
            }
        }
    }
    out.n_triples = triples.len() as u64;
    if triples.len() > cfg.max_track_combs {
        out.comb_overflow = true;
        out.keep = true;
        return out;
    }

    // phase 2: per triple, reduce all intersection choices to the triple's
    // own best estimate; the first triple whose best passes the signal
    // checks decides the frame and the rest are skipped
    let r_accept = geom.target_radius + cfg.target_margin;
    let pixel_sigma2 = cfg.pixel_sigma * cfg.pixel_sigma;
    for triple in triples {
        let [ta, tb, te] = triple.members().map(|i| &tracks[i]);
        let pairs = [
            pair_points(ta, tb, r_accept, pixel_sigma2),
            pair_points(ta, te, r_accept, pixel_sigma2),
            pair_points(tb, te, r_accept, pixel_sigma2),
        ];
        if pairs.iter().any(|p| p.is_empty()) {
            continue; // a pair never meets near the target
        }
        let mut triple_best: Option<(VertexCandidate<F>, F)> = None;
        for pa in &pairs[0] {
            for pb in &pairs[1] {
                for pe in &pairs[2] {
                    let mu_t = vertex_2d(
                        [pa.point, pb.point, pe.point],
                        [pa.sigma2, pb.sigma2, pe.sigma2],
                    );
                    if mu_t.norm() > r_accept {
                        continue;
                    }
                    let members = triple.members();
                    let mut pca_3d = [Vec3::<F>::default(); 3];
                    let mut sigma2_z = [F::one(); 3];
                    let mut p_sum = Vec3::<F>::default();
                    let mut ok = true;
                    for (slot, i) in members.iter().enumerate() {
                        let track = &tracks[*i];
                        let Some(pca_t) = point_of_closest_approach(&track.circle, mu_t) else {
                            ok = false;
                            break;
                        };
                        let (z, s) = project_to_z(track, pca_t);
                        pca_3d[slot] = Vec3::new(pca_t.x, pca_t.y, z);
                        sigma2_z[slot] = track.sigma_ms * track.sigma_ms * s * s + pixel_sigma2;
                        p_sum = p_sum.add(track.momentum_at(pca_t));
                    }
                    if !ok {
                        continue;
                    }
                    let mut mu_z = F::zero();
                    let mut wsum = F::zero();
                    for (p, s2) in pca_3d.iter().zip(sigma2_z) {
                        let w = s2.recip();
                        mu_z = mu_z + p.z * w;
                        wsum = wsum + w;
                    }
                    mu_z = mu_z / wsum;
                    let mu = Vec3::new(mu_t.x, mu_t.y, mu_z);
                    let chi2 = vertex_chi2(&pca_3d, mu, sigma2_z);
                    if triple_best.as_ref().is_none_or(|(b, _)| chi2 < b.chi2) {
                        triple_best = Some((
                            VertexCandidate {
                                position: mu,
                                chi2,
                                triple,
                                pca_points: pca_3d,
                            },
                            p_sum.norm(),
                        ));
                    }
                }
            }
        }
        let Some((candidate, p_norm)) = triple_best else {
            continue;
        };
        let passes = candidate.chi2 <= cfg.chi2_vertex_max && p_norm <= cfg.p_total_max;
        if out.best.as_ref().is_none_or(|b| candidate.chi2 < b.chi2) {
            out.best = Some(candidate);
        }
        if passes {
            out.keep = true;
            break;
        }
    }
    out
}
