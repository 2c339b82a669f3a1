//! Property checks over randomized inputs.

use proptest::prelude::*;

use arraytac::analysis::{kendall_tau, sus_score};
use arraytac::control::{PenaltyOrder, StiffnessLaw};
use arraytac::plant::{hall_forward, hall_inverse, PlantParams, STROKE_MM};
use arraytac::scene::{sample_window, SampleMode, SampleWindow, Scene, TactileMap};
use arraytac::shore::DEFAULT_SHORE_REGRESSION;
use arraytac::teletouch::wire::{Frame, PoseFrame, Role, TactileFrame};

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("finite", |v| v.is_finite())
}

fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        (any::<u32>(), any::<u64>(), finite_f32(), finite_f32(), finite_f32())
            .prop_map(|(seq, t_us, x, y, z)| Frame::Pose(PoseFrame { seq, t_us, x, y, z })),
        (
            (any::<u32>(), any::<u64>(), any::<u32>()),
            prop::array::uniform16(finite_f32()),
            prop::array::uniform16(finite_f32()),
            (finite_f32(), finite_f32(), any::<u8>()),
        )
            .prop_map(|((seq, t_us, echo_seq), heights, k, (normal_force, indentation, flags))| {
                Frame::Tactile(TactileFrame { seq, t_us, echo_seq, heights, k, normal_force, indentation, flags })
            }),
        any::<u64>().prop_map(|t_us| Frame::Ping { t_us }),
        any::<u64>().prop_map(|t_us| Frame::Pong { t_us }),
        any::<bool>().prop_map(|b| Frame::Hello(if b { Role::Local } else { Role::Remote })),
    ]
}

/// Distinct values in random order.
fn ranking(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| Just((0..n).map(|i| i as f64).collect::<Vec<_>>()).prop_shuffle())
}

proptest! {
    #[test]
    fn wire_round_trip(frames in prop::collection::vec(frame(), 1..8)) {
        let stream: Vec<u8> = frames.iter().flat_map(|f| f.encode()).collect();
        let mut rest = stream.as_slice();
        for f in &frames {
            let (back, used) = Frame::decode_prefix(rest).unwrap();
            prop_assert_eq!(&back, f);
            rest = &rest[used..];
        }
        prop_assert!(rest.is_empty());
    }

    #[test]
    fn truncated_frames_never_decode(f in frame(), cut in 1usize..8) {
        let bytes = f.encode();
        let cut = cut.min(bytes.len());
        prop_assert!(Frame::decode_prefix(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn tau_symmetric_bounded_and_antisymmetric(a in ranking(2..12), seed in any::<u64>()) {
        let mut b = a.clone();
        // Cheap deterministic shuffle of b from the seed.
        let mut s = seed;
        for i in (1..b.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            b.swap(i, (s >> 33) as usize % (i + 1));
        }
        let t = kendall_tau(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&t));
        prop_assert_eq!(t, kendall_tau(&b, &a).unwrap());
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        prop_assert!((kendall_tau(&a, &neg).unwrap() + t).abs() < 1e-12);
    }

    #[test]
    fn sus_monotone_in_each_item(r in prop::collection::vec(1u8..=5, 10), item in 0usize..10) {
        prop_assume!(r[item] < 5);
        let mut up = r.clone();
        up[item] += 1;
        let (before, after) = (sus_score(&r).unwrap(), sus_score(&up).unwrap());
        // Odd-numbered items are positive statements, even-numbered negative.
        if item % 2 == 0 {
            prop_assert_eq!(after - before, 2.5);
        } else {
            prop_assert_eq!(before - after, 2.5);
        }
        prop_assert!((0.0..=100.0).contains(&after));
    }

    #[test]
    fn penalty_non_increasing_and_bounded(k in 0.5f64..=1.0, n in 1u8..=3, a in 0.0f64..200.0, b in 0.0f64..200.0) {
        let p = PlantParams::default();
        let law = StiffnessLaw::new(&p, k, PenaltyOrder::try_from(n).unwrap(), 3.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(law.penalty(hi) <= law.penalty(lo));
        prop_assert!((0.0..=1.0).contains(&law.penalty(hi)));
    }

    #[test]
    fn hall_inverse_recovers_height(x in 0.0f64..=STROKE_MM) {
        let p = PlantParams::default();
        let back = hall_inverse(&p, hall_forward(&p, x).unwrap());
        prop_assert!((back - x).abs() < 1e-6);
    }

    #[test]
    fn sampling_commutes_with_translation(
        seed in any::<u64>(),
        x in 5.0f64..30.0,
        y in 5.0f64..30.0,
        dx in 0u32..40,
        dy in 0u32..40,
        patch in any::<bool>(),
    ) {
        let (w, h, cell) = (80usize, 80usize, 0.5f32);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        };
        let n = w * h;
        let depth: Vec<f32> = (0..n).map(|_| next() * 5.0).collect();
        let shore: Vec<f32> = (0..n).map(|_| next() * 90.0).collect();
        let friction: Vec<f32> = (0..n).map(|_| next()).collect();
        let (ox, oy) = (dx as f32 * cell, dy as f32 * cell);
        let here = Scene::map("a", TactileMap::new(w, h, cell, (0.0, 0.0), depth.clone(), shore.clone(), friction.clone()).unwrap());
        let there = Scene::map("b", TactileMap::new(w, h, cell, (ox, oy), depth, shore, friction).unwrap());
        let mode = if patch { SampleMode::PatchAverage } else { SampleMode::Point };
        let a = sample_window(&here.source, &SampleWindow::at(x, y), 0.0, &DEFAULT_SHORE_REGRESSION, mode);
        let b = sample_window(
            &there.source,
            &SampleWindow::at(x + ox as f64, y + oy as f64),
            0.0,
            &DEFAULT_SHORE_REGRESSION,
            mode,
        );
        prop_assert_eq!(a, b);
    }
}
