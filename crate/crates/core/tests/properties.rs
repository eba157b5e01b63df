use ohpl::agent::{AgentNetwork, Experience, NetworkSpec, ReplayBuffer};
use ohpl::autodiff::{Tape, Tensor};
use ohpl::env::{reward_for_jaccard, EnvConfig};
use ohpl::geometry::{jaccard, transition, Action, BoundingBox, TransitionConfig};
use ohpl::imaging::{crop_resize, Frame};
use ohpl::rng::seeded;
use proptest::prelude::*;

fn legal_box() -> impl Strategy<Value = BoundingBox> {
    (20.0f64..=360.0).prop_flat_map(|w| (0.0..=360.0 - w, 0.0..=360.0 - w).prop_map(move |(x, y)| BoundingBox::new(x, y, w)))
}

fn action() -> impl Strategy<Value = Action> {
    (0usize..7).prop_map(|i| Action::from_index(i).unwrap())
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in legal_box(), b in legal_box()) {
        let ab = jaccard(&a, &b).unwrap();
        prop_assert_eq!(ab, jaccard(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let disjoint = a.right() <= b.x || b.right() <= a.x || a.bottom() <= b.y || b.bottom() <= a.y;
        prop_assert_eq!(ab == 0.0, disjoint);
    }

    #[test]
    fn transition_stays_legal(b in legal_box(), a in action(), sigma in 0.05f64..=0.15) {
        let cfg = TransitionConfig::default();
        let out = transition(&b, a, sigma, &cfg).unwrap();
        prop_assert!(out.is_legal(&cfg) || out == b);
        prop_assert!(out.w >= cfg.w_min && out.w <= cfg.w_max);
        prop_assert_eq!(out, transition(&b, a, sigma, &cfg).unwrap());
        prop_assert_eq!(transition(&b, Action::NoOp, sigma, &cfg).unwrap(), b);
    }

    #[test]
    fn reward_is_monotone_in_overlap(j1 in 0.0f64..=1.0, j2 in 0.0f64..=1.0) {
        let cfg = EnvConfig::default();
        let (lo, hi) = if j1 <= j2 { (j1, j2) } else { (j2, j1) };
        let (r_lo, r_hi) = (reward_for_jaccard(lo, &cfg), reward_for_jaccard(hi, &cfg));
        prop_assert!(r_lo <= r_hi);
        for r in [r_lo, r_hi] {
            prop_assert!(r == -1.0 || r == 1.0 || (r > -0.5 && r <= -0.1));
        }
    }

    #[test]
    fn crop_resize_is_convex(seed in any::<u64>(), x in 0.0f64..30.0, y in 0.0f64..30.0, w in 2.0f64..30.0, out in 1usize..24) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let frame = Frame::from_fn(64, 64, |_, _| [rng.random(), rng.random(), rng.random()]);
        let b = BoundingBox::new(x, y, w);
        let crop = crop_resize(&frame, &b, out).unwrap();
        // Bilinear taps reach at most one pixel beyond the box.
        let (r0, c0) = ((y.floor() as usize).saturating_sub(1), (x.floor() as usize).saturating_sub(1));
        let (r1, c1) = (((y + w).ceil() as usize + 1).min(64), ((x + w).ceil() as usize + 1).min(64));
        for ch in 0..3 {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for r in r0..r1 {
                for c in c0..c1 {
                    lo = lo.min(frame.get(r, c, ch));
                    hi = hi.max(frame.get(r, c, ch));
                }
            }
            for r in 0..out {
                for c in 0..out {
                    let v = crop.get(r, c, ch);
                    prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                }
            }
        }
    }

    #[test]
    fn replay_never_exceeds_capacity(capacity in 1usize..64, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..pushes {
            buf.push(Experience { state: i, action: Action::NoOp, reward: 0.0, next_state: i + 1, terminal: false });
            prop_assert!(buf.len() <= capacity);
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let oldest = pushes.saturating_sub(capacity);
        prop_assert!(buf.iter().map(|e| e.state).eq(oldest..pushes));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gate_never_amplifies(seed in any::<u64>(), scale in 0.1f32..4.0) {
        use rand::Rng;
        let net = AgentNetwork::<f32>::new(NetworkSpec::default(), &mut seeded(seed));
        let mut rng = seeded(seed ^ 1);
        let data: Vec<f32> = (0..3 * 84 * 84).map(|_| scale * (rng.random::<f32>() - 0.5)).collect();
        let mut tape = Tape::<f32>::no_grad();
        let x = tape.constant(Tensor::new(vec![1, 3, 84, 84], data.clone()).unwrap());
        let g = net.gated_input(&mut tape, x).unwrap();
        for (out, inp) in tape.value(g).data().iter().zip(&data) {
            prop_assert!(out.abs() <= inp.abs());
        }
    }
}
