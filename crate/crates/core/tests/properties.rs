use moore_core::baselines::{baseline_trace, gram_schmidt, softmax, top2_indices, AdapterKind, AdapterSpec};
use moore_core::linalg::dot;
use moore_core::moore::MooreConfig;
use moore_core::{Matrix, MooreLayer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec_in(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, n)
}

/// Random layer with every learnable tensor pushed off its init.
fn seeded_layer(d_out: usize, d: usize, l: usize, seed: u64) -> MooreLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::random_uniform(d_out, d, -1.0, 1.0, &mut rng);
    let mut layer = MooreLayer::moeize(&w, MooreConfig { d_t: 3, d_s: 2, l, k: 3 }, seed).unwrap();
    for m in layer.learnable_mut() {
        for v in m.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    layer.sync().unwrap();
    layer
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in vec_in(1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_ignores_shifts(z in vec_in(1..12), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn top2_picks_the_largest(z in vec_in(2..10)) {
        let p = softmax(&z);
        let idx = top2_indices(&p);
        prop_assert_eq!(idx.len(), 2);
        prop_assert!(idx[0] != idx[1]);
        let kept = p[idx[0]].min(p[idx[1]]);
        let dropped = (0..p.len()).filter(|i| !idx.contains(i)).map(|i| p[i]).fold(f64::MIN, f64::max);
        prop_assert!(kept >= dropped);
    }

    #[test]
    fn mixlora_gates_are_two_sparse(m in 2usize..6, seed in 0u64..1000, renorm in any::<bool>()) {
        let (d, d_out) = (5, 7);
        let mut spec = AdapterSpec::init(AdapterKind::MixLoRA, m, 2, 2, d, d_out, seed).unwrap();
        spec.renormalize_top2 = renorm;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::random_uniform(d_out, d, -1.0, 1.0, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = baseline_trace(&spec, &w, &x, 1, None).unwrap();
        prop_assert_eq!(t.gates.iter().filter(|&&g| g != 0.0).count(), 2);
        if renorm {
            prop_assert!((t.gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_schmidt_outputs_are_orthogonal(seed in 0u64..1000, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<Vec<f64>> = (0..m).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let gs = gram_schmidt(&vs, None);
        for i in 0..m {
            for j in 0..i {
                let (a, b) = (&gs.vectors[i], &gs.vectors[j]);
                let scale = dot(a, a).sqrt() * dot(b, b).sqrt();
                prop_assert!(dot(a, b).abs() <= 1e-10 * scale.max(1e-300));
            }
        }
    }

    #[test]
    fn repeated_vector_is_flagged_degenerate(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gs = gram_schmidt(&[v.clone(), v], None);
        prop_assert_eq!(gs.degenerate_count(), 1);
        prop_assert!(gs.vectors[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn layer_invariants(seed in 0u64..500, d in 2usize..7, extra in 0usize..4, half_l in 0usize..4) {
        let d_out = d + extra;
        let layer = seeded_layer(d_out, d, 2 * half_l, seed);
        let h = layer.chain().matrix();
        prop_assert!(h.orthonormality_error() < 1e-12);
        prop_assert!((layer.chain().determinant() - 1.0).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let merged = layer.merge();
        for k in 0..3 {
            let y = layer.forward(&x, k, None).unwrap();
            let ys = layer.forward_expert_sum(&x, k).unwrap();
            let ym = merged.forward(&x, k, None).unwrap();
            for i in 0..d_out {
                prop_assert!((y[i] - ys[i]).abs() < 1e-12);
                prop_assert!((y[i] - ym[i]).abs() < 1e-10);
            }
            prop_assert!(layer.range_residual(&y).unwrap() < 1e-8);
        }
    }

    #[test]
    fn expert_inner_products_vanish(seed in 0u64..300, d in 2usize..6) {
        let layer = seeded_layer(d + 1, d, 2, seed);
        for a in 0..d {
            let ea = layer.expert(a).unwrap();
            for b in 0..a {
                let eb = layer.expert(b).unwrap();
                let rel = ea.frobenius_inner(&eb).unwrap().abs() / (ea.frobenius_norm() * eb.frobenius_norm());
                prop_assert!(rel < 1e-10);
            }
        }
    }
}
