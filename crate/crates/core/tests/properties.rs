//! Property tests for the numerical core and the pair/metric invariants.

use idlive_core::*;
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn finite_vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0..10.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_its_input(
        xs in finite_vals(2 * 5 * 5),
        ys in finite_vals(2 * 5 * 5),
        ks in finite_vals(3 * 2 * 3 * 3),
        alpha in -3.0..3.0f64,
    ) {
        let x = Tensor::new(vec![2, 5, 5], xs).unwrap();
        let y = Tensor::new(vec![2, 5, 5], ys).unwrap();
        let k = Tensor::new(vec![3, 2, 3, 3], ks).unwrap();
        let zero_bias = Tensor::zeros(vec![3]);

        let conv = |t: &Tensor| conv2d_forward(t, &k, &zero_bias, 1, 1).unwrap();

        let scaled_input = Tensor::new(
            vec![2, 5, 5],
            x.values().iter().map(|v| alpha * v).collect(),
        ).unwrap();
        for (a, b) in conv(&scaled_input).values().iter().zip(conv(&x).values()) {
            prop_assert!(rel_close(*a, alpha * b, 1e-12), "{a} vs {}", alpha * b);
        }

        let sum_input = Tensor::new(
            vec![2, 5, 5],
            x.values().iter().zip(y.values()).map(|(a, b)| a + b).collect(),
        ).unwrap();
        let lhs = conv(&sum_input);
        for ((s, a), b) in lhs.values().iter().zip(conv(&x).values()).zip(conv(&y).values()) {
            prop_assert!(rel_close(*s, a + b, 1e-12), "{s} vs {}", a + b);
        }
    }

    #[test]
    fn maxpool_commutes_with_constant_shift(
        xs in finite_vals(2 * 6 * 6),
        c in -5.0..5.0f64,
    ) {
        let x = Tensor::new(vec![2, 6, 6], xs).unwrap();
        let shifted = Tensor::new(
            vec![2, 6, 6],
            x.values().iter().map(|v| v + c).collect(),
        ).unwrap();
        let (base, _) = maxpool2d_forward(&x, 2, 2).unwrap();
        let (moved, _) = maxpool2d_forward(&shifted, 2, 2).unwrap();
        for (m, b) in moved.values().iter().zip(base.values()) {
            prop_assert!((m - (b + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_loss_is_nonnegative_and_zero_only_when_satisfied(
        ds in proptest::collection::vec(0.0..3.0f64, 1..20),
        ys in proptest::collection::vec(proptest::bool::ANY, 1..20),
        margin in 0.1..2.0f64,
    ) {
        let n = ds.len().min(ys.len());
        let distances = &ds[..n];
        let labels: Vec<PairLabel> = ys[..n]
            .iter()
            .map(|&b| if b { PairLabel::Positive } else { PairLabel::Negative })
            .collect();
        let loss = contrastive_loss(distances, &labels, margin).unwrap();
        prop_assert!(loss >= 0.0);

        let satisfied = distances.iter().zip(&labels).all(|(&d, &y)| match y {
            PairLabel::Positive => d == 0.0,
            PairLabel::Negative => d >= margin,
        });
        prop_assert_eq!(loss == 0.0, satisfied);
    }

    #[test]
    fn loss_ignores_order_within_a_pair(vals in finite_vals(12)) {
        let a = Tensor::from_vec(vals[..6].to_vec());
        let b = Tensor::from_vec(vals[6..].to_vec());
        prop_assert_eq!(
            pair_distance(&a, &b).unwrap(),
            pair_distance(&b, &a).unwrap()
        );
    }

    #[test]
    fn sweep_is_monotone_and_ends_at_half(
        dists in proptest::collection::vec(0.01..4.0f64, 2..40),
    ) {
        // Alternate truths so both classes are present.
        let truths: Vec<Liveness> = (0..dists.len())
            .map(|i| if i % 2 == 0 { Liveness::Real } else { Liveness::Fake })
            .collect();
        let sweep = threshold_sweep(&dists, &truths).unwrap();
        prop_assert_eq!(sweep.first().unwrap().hter, 0.5);
        prop_assert_eq!(sweep.last().unwrap().hter, 0.5);
        for w in sweep.windows(2) {
            prop_assert!(w[1].frr <= w[0].frr);
            prop_assert!(w[1].far >= w[0].far);
            prop_assert!(w[1].tau > w[0].tau);
        }
        for p in &sweep {
            prop_assert_eq!(p.hter, hter(p.frr, p.far).unwrap());
            prop_assert_eq!(p.hter, hter(p.far, p.frr).unwrap());
        }
    }

    #[test]
    fn forward_and_backward_stay_finite(seed in 0u64..1000) {
        let arch = Architecture::parse(
            "in:1x6x6 conv:2x3x3:s1:p1 relu pool:2:s2 flatten dense:4"
        ).unwrap();
        let mut net = Network::new(arch, seed).unwrap();
        let x = Tensor::new(
            vec![1, 6, 6],
            (0..36).map(|i| ((seed + i) as f64 * 0.618).sin()).collect(),
        ).unwrap();
        let trace = net.forward_traced(&x).unwrap();
        prop_assert!(trace.output().is_all_finite());
        let g = Tensor::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let gi = net.backward(&trace, &g).unwrap();
        prop_assert!(gi.is_all_finite());
        prop_assert!(net.store().grads_flat().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decode_preprocess_is_deterministic(samples in proptest::collection::vec(0u8..=255, 16)) {
        let bytes = encode_pgm(4, 4, &samples);
        let t1 = preprocess(&decode_image(&bytes).unwrap(), 8, 8);
        let t2 = preprocess(&decode_image(&bytes).unwrap(), 8, 8);
        prop_assert_eq!(t1.values(), t2.values());
        prop_assert!(t1.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn loss_is_monotone_in_distance_per_label() {
    let margin = 1.0;
    let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.02).collect();
    let mut prev_pos = -1.0;
    let mut prev_neg = f64::INFINITY;
    for &d in &grid {
        let pos = contrastive_loss(&[d], &[PairLabel::Positive], margin).unwrap();
        let neg = contrastive_loss(&[d], &[PairLabel::Negative], margin).unwrap();
        assert!(pos >= prev_pos, "positive loss decreased at d={d}");
        assert!(neg <= prev_neg, "negative loss increased at d={d}");
        if d >= margin {
            assert_eq!(neg, 0.0, "hinge active beyond margin at d={d}");
        }
        prev_pos = pos;
        prev_neg = neg;
    }
}

#[test]
fn batch_loss_equals_mean_of_single_pair_losses() {
    let distances: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).fract() * 2.0).collect();
    let labels: Vec<PairLabel> = (0..17)
        .map(|i| if i % 3 == 0 { PairLabel::Negative } else { PairLabel::Positive })
        .collect();
    for margin in [0.5, 1.0, 1.75] {
        let batch = contrastive_loss(&distances, &labels, margin).unwrap();
        let mean = distances
            .iter()
            .zip(&labels)
            .map(|(&d, &y)| contrastive_loss(&[d], &[y], margin).unwrap())
            .sum::<f64>()
            / distances.len() as f64;
        assert!((batch - mean).abs() < 1e-12);
    }
}

#[test]
fn verify_is_monotone_in_threshold() {
    let arch = Architecture::parse("in:1x4x4 conv:2x3x3:s1:p1 relu pool:2:s2 flatten dense:3")
        .unwrap();
    let model = SiameseModel::new(arch, 3).unwrap();
    let mut gallery = Gallery::new(&model);
    let reference = ImageRecord {
        pixels: Tensor::new(vec![1, 4, 4], (0..16).map(|i| i as f64 / 16.0).collect()).unwrap(),
        source: "ref.pgm".into(),
        client_id: "a".into(),
        label: Liveness::Real,
    };
    gallery.enroll("a", &reference, &model).unwrap();
    let probe =
        Tensor::new(vec![1, 4, 4], (0..16).map(|i| 1.0 - i as f64 / 16.0).collect()).unwrap();
    let d = verify(&model, &gallery, "a", &probe, 1.0).unwrap().distance;
    let taus: Vec<f64> = (1..40).map(|i| d * i as f64 / 20.0).collect();
    let mut seen_real = false;
    for tau in taus {
        let v = verify(&model, &gallery, "a", &probe, tau).unwrap();
        if seen_real {
            assert_eq!(v.verdict, Verdict::Real, "verdict flipped back at tau={tau}");
        }
        if v.verdict == Verdict::Real {
            seen_real = true;
        }
    }
    assert!(seen_real);
}

/// Confusion tallies agree with an independent recount over random decisions.
#[test]
fn confusion_counts_match_independent_recount() {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for _ in 0..200 {
        let n = (next() % 50 + 2) as usize;
        let truths: Vec<Liveness> = (0..n)
            .map(|i| {
                // Force both classes to be present.
                if i == 0 {
                    Liveness::Real
                } else if i == 1 {
                    Liveness::Fake
                } else if next() % 2 == 0 {
                    Liveness::Real
                } else {
                    Liveness::Fake
                }
            })
            .collect();
        let decisions: Vec<Decision> = (0..n)
            .map(|i| Decision {
                verdict: if next() % 2 == 0 { Verdict::Real } else { Verdict::Fake },
                distance: 0.0,
                threshold: 1.0,
                client_id: format!("c{i}"),
            })
            .collect();
        let counts = confusion_counts(&decisions, &truths).unwrap();

        let mut ra = 0;
        let mut rr = 0;
        let mut fa = 0;
        let mut fr = 0;
        for (d, t) in decisions.iter().zip(&truths) {
            match (t, d.verdict) {
                (Liveness::Real, Verdict::Real) => ra += 1,
                (Liveness::Real, Verdict::Fake) => rr += 1,
                (Liveness::Fake, Verdict::Real) => fa += 1,
                (Liveness::Fake, Verdict::Fake) => fr += 1,
            }
        }
        assert_eq!(
            (counts.real_accepted, counts.real_rejected, counts.fake_accepted, counts.fake_rejected),
            (ra, rr, fa, fr)
        );
        let frr = rr as f64 / (ra + rr) as f64;
        let far = fa as f64 / (fa + fr) as f64;
        assert_eq!(hter(counts.frr(), counts.far()).unwrap(), (frr + far) / 2.0);
    }
}
