//! Stage 1: cheap geometric pre-selection of hit triplets from the three
//! inner layers.
//!
//! Four tests run in a fixed order (dip-slope consistency, two transverse
//! opening angles, circle radius window); each test only sees survivors of
//! the previous one, so the per-test pass counters form a monotone funnel.
//! Enumeration is row-major over (i0, i1, i2), which pins down which
//! candidates survive when a frame hits the `cuts_max` cap.

use serde::{Deserialize, Serialize};

use crate::geometry::{circle_radius_3pt, cos_phi, tan_lambda, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CutConfig<F> {
    /// Max |tan lambda_12 - tan lambda_01| between the two segments.
    pub delta_lambda_max: F,
    /// Min cosine of the transverse opening angle between layer-0 and
    /// layer-1 hit positions.
    pub phi01_min_cos: F,
    /// Same for layers 1 and 2.
    pub phi12_min_cos: F,
    /// Accepted circle-radius magnitude window, mm.
    pub rt_min: F,
    pub rt_max: F,
    /// Cap on survivors per frame; one more survivor marks the frame as
    /// overflowed and stops the enumeration.
    pub cuts_max: usize,
}

impl<F: Scalar> Default for CutConfig<F> {
    fn default() -> Self {
        // Wide placeholder windows; real thresholds come from the tuner.
        Self {
            delta_lambda_max: F::of(10.0),
            phi01_min_cos: F::of(-1.0),
            phi12_min_cos: F::of(-1.0),
            rt_min: F::of(5.0),
            rt_max: F::of(500.0),
            cuts_max: 768,
        }
    }
}

impl<F: Scalar> CutConfig<F> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rt_min < self.rt_max) {
            return Err("cuts.rt_min must be below cuts.rt_max".into());
        }
        if self.cuts_max == 0 {
            return Err("cuts.cuts_max must be positive".into());
        }
        if !(self.delta_lambda_max >= F::zero()) {
            return Err("cuts.delta_lambda_max must be >= 0".into());
        }
        for (key, v) in [
            ("cuts.phi01_min_cos", self.phi01_min_cos),
            ("cuts.phi12_min_cos", self.phi12_min_cos),
        ] {
            if !(F::of(-1.0)..=F::of(1.0)).contains(&v) {
                return Err(format!("{key} must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    /// Thresholds that reject nothing; useful as a tuning baseline.
    pub fn vacuous(cuts_max: usize) -> Self {
        Self {
            delta_lambda_max: F::infinity(),
            phi01_min_cos: F::of(-1.0),
            phi12_min_cos: F::of(-1.0),
            rt_min: F::zero(),
            rt_max: F::infinity(),
            cuts_max,
        }
    }

    pub fn cast<T: Scalar>(&self) -> CutConfig<T> {
        CutConfig {
            delta_lambda_max: T::of(self.delta_lambda_max.to_f64().unwrap()),
            phi01_min_cos: T::of(self.phi01_min_cos.to_f64().unwrap()),
            phi12_min_cos: T::of(self.phi12_min_cos.to_f64().unwrap()),
            rt_min: T::of(self.rt_min.to_f64().unwrap()),
            rt_max: T::of(self.rt_max.to_f64().unwrap()),
            cuts_max: self.cuts_max,
        }
    }
}

/// A triplet that survived all four tests, with its circle radius cached
/// for the fit stage (signed: positive = counter-clockwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletCandidate<F> {
    pub i0: u32,
    pub i1: u32,
    pub i2: u32,
    pub rt: F,
}

/// Per-test pass counts; each test only sees the previous test's survivors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutCounters {
    pub enumerated: u64,
    pub pass_delta_lambda: u64,
    pub pass_phi01: u64,
    pub pass_phi12: u64,
    pub pass_rt: u64,
}

impl CutCounters {
    pub fn is_monotone(&self) -> bool {
        self.enumerated >= self.pass_delta_lambda
            && self.pass_delta_lambda >= self.pass_phi01
            && self.pass_phi01 >= self.pass_phi12
            && self.pass_phi12 >= self.pass_rt
    }

    pub fn add(&mut self, other: &CutCounters) {
        self.enumerated += other.enumerated;
        self.pass_delta_lambda += other.pass_delta_lambda;
        self.pass_phi01 += other.pass_phi01;
        self.pass_phi12 += other.pass_phi12;
        self.pass_rt += other.pass_rt;
    }
}

#[derive(Clone, Debug, Default)]
pub struct Selection<F> {
    pub candidates: Vec<TripletCandidate<F>>,
    pub counters: CutCounters,
    /// A survivor had to be dropped because the candidate list was full.
    pub overflow: bool,
}

pub fn pass_delta_lambda<F: Scalar>(
    h0: Vec3<F>,
    h1: Vec3<F>,
    h2: Vec3<F>,
    cfg: &CutConfig<F>,
) -> bool {
    match (tan_lambda(h0, h1), tan_lambda(h1, h2)) {
        (Some(t01), Some(t12)) => (t12 - t01).abs() <= cfg.delta_lambda_max,
        _ => false,
    }
}

pub fn pass_phi<F: Scalar>(
    ht_i: crate::geometry::Vec2<F>,
    ht_j: crate::geometry::Vec2<F>,
    min_cos: F,
) -> bool {
    match cos_phi(ht_i, ht_j) {
        Some(c) => c >= min_cos,
        None => false,
    }
}

/// Radius-window test; returns the signed radius so the caller can cache it.
pub fn pass_rt<F: Scalar>(h0: Vec3<F>, h1: Vec3<F>, h2: Vec3<F>, cfg: &CutConfig<F>) -> (bool, F) {
    match circle_radius_3pt(h0.xy(), h1.xy(), h2.xy()) {
        Some(rt) => (rt.abs() >= cfg.rt_min && rt.abs() <= cfg.rt_max, rt),
        None => (false, F::zero()),
    }
}

/// Runs the four-test funnel over every (i0, i1, i2) combination of the
/// inner three layers, in row-major order.
pub fn select_triplets<F: Scalar>(layers: [&[Vec3<F>]; 3], cfg: &CutConfig<F>) -> Selection<F> {
    let mut out = Selection::<F>::default();
    'enumeration: for (i0, h0) in layers[0].iter().enumerate() {
        for (i1, h1) in layers[1].iter().enumerate() {
            for (i2, h2) in layers[2].iter().enumerate() {
                out.counters.enumerated += 1;
                if !pass_delta_lambda(*h0, *h1, *h2, cfg) {
                    continue;
                }
                out.counters.pass_delta_lambda += 1;
                if !pass_phi(h0.xy(), h1.xy(), cfg.phi01_min_cos) {
                    continue;
                }
                out.counters.pass_phi01 += 1;
                if !pass_phi(h1.xy(), h2.xy(), cfg.phi12_min_cos) {
                    continue;
                }
                out.counters.pass_phi12 += 1;
                let (ok, rt) = pass_rt(*h0, *h1, *h2, cfg);
                if !ok {
                    continue;
                }
                out.counters.pass_rt += 1;
                if out.candidates.len() == cfg.cuts_max {
                    out.overflow = true;
                    break 'enumeration;
                }
                out.candidates.push(TripletCandidate {
                    i0: i0 as u32,
                    i1: i1 as u32,
                    i2: i2 as u32,
                    rt,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;

    fn cfg() -> CutConfig<f64> {
        CutConfig::default()
    }

    fn on_circle(center: Vec2<f64>, r: f64, theta: f64, z: f64) -> Vec3<f64> {
        Vec3::new(center.x + r * theta.cos(), center.y + r * theta.sin(), z)
    }

    #[test]
    fn straight_rz_line_has_zero_kink() {
        // radii 10, 20, 30 with z = 2 * rt: both slopes are exactly 2
        let h0 = Vec3::new(10.0, 0.0, 20.0);
        let h1 = Vec3::new(0.0, 20.0, 40.0);
        let h2 = Vec3::new(-30.0, 0.0, 60.0);
        let mut c = cfg();
        c.delta_lambda_max = 1e-12;
        assert!(pass_delta_lambda(h0, h1, h2, &c));
        c.delta_lambda_max = 0.0;
        let kinked = Vec3::new(-30.0, 0.0, 61.0);
        assert!(!pass_delta_lambda(h0, h1, kinked, &c));
    }

    #[test]
    fn equal_radius_segment_fails_closed() {
        let h0 = Vec3::new(10.0, 0.0, 0.0);
        let h1 = Vec3::new(0.0, 10.0, 5.0);
        let h2 = Vec3::new(0.0, 20.0, 10.0);
        assert!(!pass_delta_lambda(h0, h1, h2, &cfg()));
    }

    #[test]
    fn phi_cut_brackets() {
        let a = Vec2::new(3.0, 4.0);
        assert!(pass_phi(a, a.scale(2.5), 1.0 - 1e-12));
        assert!(!pass_phi(a, a.scale(-1.0), 0.0));
        assert!(
            pass_phi(a, a.scale(-1.0), -1.0),
            "vacuous threshold passes everything"
        );
        assert!(
            !pass_phi(Vec2::new(0.0, 0.0), a, -1.0),
            "zero vector fails closed"
        );
    }

    #[test]
    fn rt_cut_reports_signed_radius() {
        let center = Vec2::new(4.0, -2.0);
        let ccw: Vec<Vec3<f64>> = [0.3, 0.9, 1.4]
            .iter()
            .map(|t| on_circle(center, 50.0, *t, 0.0))
            .collect();
        let mut c = cfg();
        c.rt_min = 10.0;
        c.rt_max = 200.0;
        let (ok, rt) = pass_rt(ccw[0], ccw[1], ccw[2], &c);
        assert!(ok);
        assert!(
            (rt - 50.0).abs() < 1e-9,
            "counter-clockwise order gives +50, got {rt}"
        );
        let (ok, rt) = pass_rt(ccw[2], ccw[1], ccw[0], &c);
        assert!(ok);
        assert!(
            (rt + 50.0).abs() < 1e-9,
            "reversed order flips the sign, got {rt}"
        );
        c.rt_max = 40.0;
        assert!(
            !pass_rt(ccw[0], ccw[1], ccw[2], &c).0,
            "radius above window"
        );
        let collinear = [
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(2.0, 2.0, 0.0),
            Vec3::new(3.0, 3.0, 1.0),
        ];
        assert!(!pass_rt(collinear[0], collinear[1], collinear[2], &cfg()).0);
    }

    #[test]
    fn empty_layer_yields_empty_selection() {
        let l0 = [Vec3::new(23.0, 0.0, 1.0)];
        let l2 = [Vec3::new(74.0, 0.0, 3.0)];
        let sel = select_triplets([&l0, &[], &l2], &cfg());
        assert!(sel.candidates.is_empty());
        assert!(!sel.overflow);
        assert_eq!(sel.counters.enumerated, 0);
    }

    #[test]
    fn single_clean_track_gives_exactly_one_candidate() {
        // circle of radius 60 through the origin region, one hit per layer
        let center = Vec2::new(0.0, 60.0);
        let radii = [23.3, 29.8, 73.9];
        let hits: Vec<Vec3<f64>> = radii
            .iter()
            .enumerate()
            .map(|(i, r)| {
                // intersection of the track circle with the layer cylinder
                let d = center.norm();
                let along: f64 = (d * d + 60.0 * 60.0 - r * r) / (2.0 * d);
                let h = (60.0 * 60.0 - along * along).sqrt();
                let dir = center.scale(1.0 / d);
                let foot = center.sub(dir.scale(along));
                let p = foot.add(dir.rot90().scale(h));
                Vec3::new(p.x, p.y, 3.0 * i as f64)
            })
            .collect();
        let sel = select_triplets([&hits[0..1], &hits[1..2], &hits[2..3]], &cfg());
        assert_eq!(sel.candidates.len(), 1);
        assert_eq!(
            (
                sel.candidates[0].i0,
                sel.candidates[0].i1,
                sel.candidates[0].i2
            ),
            (0, 0, 0)
        );
        assert!((sel.candidates[0].rt.abs() - 60.0).abs() < 1e-9);
        assert!(sel.counters.is_monotone());
        assert_eq!(sel.counters.pass_rt, 1);
    }

    #[test]
    fn vacuous_thresholds_keep_everything_in_row_major_order() {
        let mk = |r: f64, n: usize| -> Vec<Vec3<f64>> {
            (0..n)
                .map(|i| {
                    let t = 0.3 + 0.11 * i as f64;
                    Vec3::new(r * t.cos(), r * t.sin(), i as f64 - 1.0)
                })
                .collect()
        };
        let (l0, l1, l2) = (mk(23.3, 3), mk(29.8, 2), mk(73.9, 4));
        let sel = select_triplets([&l0, &l1, &l2], &CutConfig::vacuous(10_000));
        assert_eq!(sel.candidates.len(), 3 * 2 * 4);
        assert!(!sel.overflow);
        let order: Vec<(u32, u32, u32)> =
            sel.candidates.iter().map(|c| (c.i0, c.i1, c.i2)).collect();
        let mut expect = Vec::new();
        for i0 in 0..3u32 {
            for i1 in 0..2u32 {
                for i2 in 0..4u32 {
                    expect.push((i0, i1, i2));
                }
            }
        }
        assert_eq!(order, expect);
        assert_eq!(sel.counters.enumerated, 24);
        assert_eq!(sel.counters.pass_rt, 24);
    }

    #[test]
    fn overflow_truncates_and_flags() {
        let mk = |r: f64, n: usize| -> Vec<Vec3<f64>> {
            (0..n)
                .map(|i| {
                    let t = 0.2 + 0.07 * i as f64;
                    Vec3::new(r * t.cos(), r * t.sin(), i as f64)
                })
                .collect()
        };
        let (l0, l1, l2) = (mk(23.3, 4), mk(29.8, 4), mk(73.9, 4));
        let full = select_triplets([&l0, &l1, &l2], &CutConfig::vacuous(10_000));
        assert_eq!(full.candidates.len(), 64);

        let capped = select_triplets([&l0, &l1, &l2], &CutConfig::vacuous(10));
        assert!(capped.overflow);
        assert_eq!(capped.candidates.len(), 10);
        assert_eq!(capped.candidates[..], full.candidates[..10]);

        // exactly at the cap: full set retained, no overflow
        let exact = select_triplets([&l0, &l1, &l2], &CutConfig::vacuous(64));
        assert!(!exact.overflow);
        assert_eq!(exact.candidates.len(), 64);
    }

    #[test]
    fn config_validation_catches_bad_windows() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.rt_min = c.rt_max;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.cuts_max = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.phi01_min_cos = 1.5;
        assert!(c.validate().is_err());
    }
}
