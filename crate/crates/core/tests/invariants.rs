//! Property tests for the geometric and statistical invariants the filter
//! stages rely on: frame transforms that must not change a fit, symmetry of
//! the cut quantities, funnel bookkeeping and threshold monotonicity.

use std::f64::consts::TAU;

use proptest::prelude::*;

use m3sel_core::cuts::{select_triplets, CutConfig};
use m3sel_core::geometry::{
    circle_radius_3pt, cos_phi, DetectorGeometry, PhysicsConstants, Vec2, Vec3,
};
use m3sel_core::toygen::{GenConfig, ToyGenerator};
use m3sel_core::triplet_fit::{fit_track, fit_triplet, triplet_chi2_at, FitConfig, TrackCandidate};
use m3sel_core::vertex::{evaluate_frame, vertex_2d, VertexConfig};

fn rotate(v: Vec2<f64>, angle: f64) -> Vec2<f64> {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn rotate3(v: Vec3<f64>, angle: f64) -> Vec3<f64> {
    let t = rotate(v.xy(), angle);
    Vec3::new(t.x, t.y, v.z)
}

/// Three distinct points on a circle of radius `r` around `center`.
fn on_circle(center: Vec2<f64>, r: f64, angles: [f64; 3]) -> [Vec2<f64>; 3] {
    angles.map(|a| Vec2::new(center.x + r * a.cos(), center.y + r * a.sin()))
}

fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-30)
}

proptest! {
    #[test]
    fn circle_radius_is_rotation_and_translation_invariant(
        cx in -300.0..300.0f64,
        cy in -300.0..300.0f64,
        r in 1.0..200.0f64,
        a0 in 0.0..TAU,
        d1 in 0.05..2.0f64,
        d2 in 0.05..2.0f64,
        angle in 0.0..TAU,
        tx in -500.0..500.0f64,
        ty in -500.0..500.0f64,
    ) {
        let pts = on_circle(Vec2::new(cx, cy), r, [a0, a0 + d1, a0 + d1 + d2]);
        let base = circle_radius_3pt(pts[0], pts[1], pts[2]).unwrap();
        prop_assert!(rel_eq(base.abs(), r, 1e-9), "radius {} vs {}", base, r);

        let t = Vec2::new(tx, ty);
        let moved = pts.map(|p| rotate(p, angle).add(t));
        let after = circle_radius_3pt(moved[0], moved[1], moved[2]).unwrap();
        prop_assert!(rel_eq(base, after, 1e-9), "rotated+translated {} vs {}", after, base);
    }

    #[test]
    fn swapping_endpoints_flips_the_signed_radius(
        cx in -50.0..50.0f64,
        cy in -50.0..50.0f64,
        r in 1.0..200.0f64,
        a0 in 0.0..TAU,
        d1 in 0.05..2.0f64,
        d2 in 0.05..2.0f64,
    ) {
        let p = on_circle(Vec2::new(cx, cy), r, [a0, a0 + d1, a0 + d1 + d2]);
        let fwd = circle_radius_3pt(p[0], p[1], p[2]).unwrap();
        let rev = circle_radius_3pt(p[2], p[1], p[0]).unwrap();
        prop_assert!(rel_eq(fwd, -rev, 1e-12), "signed radius {} vs {}", fwd, rev);
    }

    #[test]
    fn cos_phi_is_symmetric_and_scale_invariant(
        ax in -10.0..10.0f64,
        ay in -10.0..10.0f64,
        bx in -10.0..10.0f64,
        by in -10.0..10.0f64,
        sa in 0.01..100.0f64,
        sb in 0.01..100.0f64,
    ) {
        let a = Vec2::new(ax, ay);
        let b = Vec2::new(bx, by);
        prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
        let ab = cos_phi(a, b).unwrap();
        let ba = cos_phi(b, a).unwrap();
        let scaled = cos_phi(a.scale(sa), b.scale(sb)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
        prop_assert!((ab - scaled).abs() < 1e-9, "{} vs {}", ab, scaled);
    }
}

/// A perturbed three-hit arc with the geometry of a plausible track.
fn arc_hits(
    center: Vec2<f64>,
    r: f64,
    a0: f64,
    steps: [f64; 2],
    tan_l: f64,
    z0: f64,
    jitter: [f64; 6],
) -> [Vec3<f64>; 3] {
    let angles = [a0, a0 + steps[0], a0 + steps[0] + steps[1]];
    let mut out = [Vec3::new(0.0, 0.0, 0.0); 3];
    for (i, a) in angles.iter().enumerate() {
        let t = Vec2::new(center.x + r * a.cos(), center.y + r * a.sin());
        let z = z0 + r * (a - a0) * tan_l;
        out[i] = Vec3::new(t.x + jitter[2 * i], t.y + jitter[2 * i + 1], z);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_fit_is_invariant_under_rotation_and_z_shift(
        r in 25.0..150.0f64,
        a0 in 0.0..TAU,
        s0 in 0.15..0.8f64,
        s1 in 0.15..0.8f64,
        tan_l in -1.0..1.0f64,
        z0 in -30.0..30.0f64,
        jitter in prop::array::uniform6(-0.2..0.2f64),
        angle in 0.0..TAU,
        dz in -100.0..100.0f64,
    ) {
        let cfg = FitConfig { chi2_max: f64::INFINITY, ..FitConfig::default() };
        let consts = PhysicsConstants::<f64>::default();
        let hits = arc_hits(Vec2::new(30.0, -10.0), r, a0, [s0, s1], tan_l, z0, jitter);
        let rt = circle_radius_3pt(hits[0].xy(), hits[1].xy(), hits[2].xy()).unwrap();
        let base = fit_triplet(hits[0], hits[1], hits[2], rt, &cfg, &consts, 1.0).unwrap();

        let moved: Vec<Vec3<f64>> =
            hits.iter().map(|h| rotate3(*h, angle).add(Vec3::new(0.0, 0.0, dz))).collect();
        let rt_m = circle_radius_3pt(moved[0].xy(), moved[1].xy(), moved[2].xy()).unwrap();
        let same = fit_triplet(moved[0], moved[1], moved[2], rt_m, &cfg, &consts, 1.0).unwrap();

        prop_assert!(rel_eq(base.kappa, same.kappa, 1e-9), "kappa {} vs {}", base.kappa, same.kappa);
        prop_assert!(
            (base.chi2 - same.chi2).abs() <= 1e-9 * base.chi2.abs().max(1.0),
            "chi2 {} vs {}", base.chi2, same.chi2
        );

        // Mirroring y reverses the sense of travel: curvature flips sign.
        let mirrored: Vec<Vec3<f64>> =
            hits.iter().map(|h| Vec3::new(h.x, -h.y, h.z)).collect();
        let rt_f = circle_radius_3pt(mirrored[0].xy(), mirrored[1].xy(), mirrored[2].xy()).unwrap();
        let flip = fit_triplet(mirrored[0], mirrored[1], mirrored[2], rt_f, &cfg, &consts, 1.0).unwrap();
        prop_assert!(rel_eq(base.kappa, -flip.kappa, 1e-9), "kappa {} vs {}", base.kappa, flip.kappa);
        prop_assert!((base.chi2 - flip.chi2).abs() <= 1e-9 * base.chi2.abs().max(1.0));
    }

    #[test]
    fn reported_fit_chi2_matches_independent_recomputation(
        r in 25.0..150.0f64,
        a0 in 0.0..TAU,
        s0 in 0.15..0.8f64,
        s1 in 0.15..0.8f64,
        tan_l in -1.0..1.0f64,
        jitter in prop::array::uniform6(-0.2..0.2f64),
    ) {
        let cfg = FitConfig { chi2_max: f64::INFINITY, ..FitConfig::default() };
        let consts = PhysicsConstants::<f64>::default();
        let hits = arc_hits(Vec2::new(-5.0, 12.0), r, a0, [s0, s1], tan_l, 0.0, jitter);
        let rt = circle_radius_3pt(hits[0].xy(), hits[1].xy(), hits[2].xy()).unwrap();
        let fit = fit_triplet(hits[0], hits[1], hits[2], rt, &cfg, &consts, 1.0).unwrap();
        let again =
            triplet_chi2_at(hits[0], hits[1], hits[2], fit.kappa, fit.sigma_phi, fit.sigma_theta)
                .unwrap();
        prop_assert!(
            (fit.chi2 - again).abs() <= 1e-9 * fit.chi2.max(1.0),
            "chi2 {} vs recomputed {}", fit.chi2, again
        );
    }
}

fn layer_hits(seed: u64, per_layer: [usize; 3]) -> [Vec<Vec3<f64>>; 3] {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let radii = [23.3, 29.8, 73.9];
    std::array::from_fn(|l| {
        (0..per_layer[l])
            .map(|_| {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-60.0..60.0);
                Vec3::new(radii[l] * a.cos(), radii[l] * a.sin(), z)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cut_funnel_counts_stay_monotone_and_complete(
        seed in 0u64..1u64 << 48,
        n0 in 0usize..6,
        n1 in 0usize..6,
        n2 in 0usize..6,
        cuts_max in 1usize..40,
    ) {
        let hits = layer_hits(seed, [n0, n1, n2]);
        let layers = [hits[0].as_slice(), hits[1].as_slice(), hits[2].as_slice()];

        let cfg = CutConfig { cuts_max, ..CutConfig::default() };
        let sel = select_triplets(layers, &cfg);
        prop_assert!(sel.counters.is_monotone());
        if !sel.overflow {
            prop_assert_eq!(sel.counters.enumerated, (n0 * n1 * n2) as u64);
            prop_assert_eq!(sel.candidates.len() as u64, sel.counters.pass_rt);
        } else {
            prop_assert_eq!(sel.candidates.len(), cuts_max);
        }

        // Vacuous thresholds keep the full row-major grid, truncated at cuts_max.
        let all = select_triplets(layers, &CutConfig::vacuous(cuts_max));
        let total = n0 * n1 * n2;
        prop_assert_eq!(all.candidates.len(), total.min(cuts_max));
        prop_assert_eq!(all.overflow, total > cuts_max);
        let ordered = all.candidates.windows(2).all(|w| {
            (w[0].i0, w[0].i1, w[0].i2) < (w[1].i0, w[1].i1, w[1].i2)
        });
        prop_assert!(ordered, "row-major enumeration order");
    }

    #[test]
    fn vertex_2d_is_translation_equivariant(
        pts in prop::array::uniform6(-40.0..40.0f64),
        sig in prop::array::uniform3(0.001..5.0f64),
        tx in -100.0..100.0f64,
        ty in -100.0..100.0f64,
    ) {
        let p = [
            Vec2::new(pts[0], pts[1]),
            Vec2::new(pts[2], pts[3]),
            Vec2::new(pts[4], pts[5]),
        ];
        let t = Vec2::new(tx, ty);
        let base = vertex_2d(p, sig);
        let moved = vertex_2d(p.map(|q| q.add(t)), sig);
        prop_assert!(moved.sub(base.add(t)).norm() < 1e-9, "{:?} vs {:?}", moved, base.add(t));
    }
}

fn signal_frame_tracks(seed: u64) -> Vec<TrackCandidate<f64>> {
    let cfg = GenConfig {
        signal_fraction: 1.0,
        muon_rate: 1.0,
        noise_hits_per_frame: 0.0,
        ..GenConfig::default()
    };
    let mut gen = ToyGenerator::new(
        cfg,
        DetectorGeometry::default(),
        PhysicsConstants::default(),
        seed,
    );
    let frame = gen.next_frame();
    let hits: Vec<Vec<Vec3<f64>>> = frame
        .layers
        .iter()
        .map(|l| {
            l.iter()
                .map(|h| Vec3::new(h[0] as f64, h[1] as f64, h[2] as f64))
                .collect()
        })
        .collect();
    let sel = select_triplets([&hits[0], &hits[1], &hits[2]], &CutConfig::default());
    let mut tracks = Vec::new();
    for cand in &sel.candidates {
        if let Ok(t) = fit_track(
            cand,
            [&hits[0], &hits[1], &hits[2], &hits[3]],
            &FitConfig::default(),
            &DetectorGeometry::default(),
            &PhysicsConstants::default(),
        ) {
            tracks.push(t);
        }
    }
    tracks
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frame_verdict_survives_track_reordering(seed in 0u64..1u64 << 48, rot in 0usize..5) {
        let geom = DetectorGeometry::default();
        let consts = PhysicsConstants::<f64>::default();
        let cfg = VertexConfig::default();

        let tracks = signal_frame_tracks(seed);
        let base = evaluate_frame(&tracks, &cfg, &geom, &consts);

        let mut shuffled = tracks.clone();
        shuffled.rotate_left(rot.min(tracks.len().saturating_sub(1)));
        shuffled.reverse();
        let same = evaluate_frame(&shuffled, &cfg, &geom, &consts);

        prop_assert_eq!(base.keep, same.keep);
        prop_assert_eq!(base.comb_overflow, same.comb_overflow);
        prop_assert_eq!(base.n_triples, same.n_triples);
        // The first passing triple decides the frame, so reordering may select
        // a different vertex; only its existence is order-independent.
        prop_assert_eq!(base.best.is_some(), same.best.is_some());
    }

    #[test]
    fn momentum_at_pca_is_tangent_with_helix_magnitude(seed in 0u64..1u64 << 48) {
        let geom = DetectorGeometry::default();
        let consts = PhysicsConstants::<f64>::default();
        let cfg = VertexConfig::default();

        let tracks = signal_frame_tracks(seed);
        let out = evaluate_frame(&tracks, &cfg, &geom, &consts);
        prop_assume!(out.best.is_some());
        let best = out.best.unwrap();

        let members = [best.triple.positron_a, best.triple.positron_b, best.triple.electron];
        for (slot, &ti) in members.iter().enumerate() {
            let track = &tracks[ti];
            let pca = best.pca_points[slot].xy();
            let p = track.momentum_at(pca);
            let radial = pca.sub(track.circle.center);
            prop_assert!(
                radial.dot(p.xy()).abs() <= 1e-9 * radial.norm() * track.pt,
                "transverse momentum must be tangent to the circle"
            );
            prop_assert!(rel_eq(p.xy().norm(), track.pt, 1e-9));
            let expected = track.pt / track.lambda.cos();
            prop_assert!(rel_eq(p.norm(), expected.abs(), 1e-9), "|p| {} vs {}", p.norm(), expected);
        }
    }

    #[test]
    fn loosening_vertex_thresholds_never_drops_a_kept_frame(
        seed in 0u64..1u64 << 48,
        widen in 1.0..10.0f64,
    ) {
        let geom = DetectorGeometry::default();
        let consts = PhysicsConstants::<f64>::default();
        let tight = VertexConfig::default();

        let tracks = signal_frame_tracks(seed);
        let before = evaluate_frame(&tracks, &tight, &geom, &consts);
        prop_assume!(before.keep && !before.comb_overflow);

        for loose in [
            VertexConfig { energy_window: tight.energy_window * widen, ..tight },
            VertexConfig { chi2_vertex_max: tight.chi2_vertex_max * widen, ..tight },
            VertexConfig { target_margin: tight.target_margin * widen, ..tight },
            VertexConfig { p_total_max: tight.p_total_max * widen, ..tight },
        ] {
            let after = evaluate_frame(&tracks, &loose, &geom, &consts);
            prop_assert!(after.keep, "kept frame lost after loosening a threshold");
        }
    }
}
