use agentattn_core::attention::agent_attention_pure;
use agentattn_core::flops::{FlopModel, Kernel};
use agentattn_core::ops::row_softmax;
use agentattn_core::verify::{composed_matrix, composed_matrix_oracle, random_inputs};
use agentattn_core::{AgentBiasParams, AttentionInputs, Model, ModelPreset, ParamReport, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, tokens: usize, agents: usize, d: usize) -> (AttentionInputs<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inp = random_inputs(tokens, agents, d, &mut rng).unwrap();
    (inp, rng)
}

fn perm(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(rng);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_f64(rows in prop::collection::vec(prop::collection::vec(-400.0f64..400.0, 1..40), 1..6)) {
        let p = rows.iter().map(Vec::len).min().unwrap();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r[..p].iter().copied()).collect();
        let a = Tensor::new([rows.len(), p], flat).unwrap();
        let s = row_softmax(&a, 1.0).unwrap();
        for i in 0..rows.len() {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 8.0 * f64::EPSILON * p as f64, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_f32(rows in prop::collection::vec(prop::collection::vec(-80.0f32..80.0, 1..40), 1..6)) {
        let p = rows.iter().map(Vec::len).min().unwrap();
        let flat: Vec<f32> = rows.iter().flat_map(|r| r[..p].iter().copied()).collect();
        let a = Tensor::new([rows.len(), p], flat).unwrap();
        let s = row_softmax(&a, 1.0).unwrap();
        for i in 0..rows.len() {
            let sum: f32 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 8.0 * f32::EPSILON * p as f32, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn agent_matches_quadratic_oracle(seed: u64, tokens in 1usize..40, agents in 1usize..12, d in 1usize..10) {
        let (inp, _) = instance(seed, tokens, agents, d);
        let fast = agent_attention_pure(&inp).unwrap();
        let slow = composed_matrix_oracle(&inp).unwrap();
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }

    #[test]
    fn composed_matrix_is_row_stochastic(seed: u64, tokens in 1usize..30, agents in 1usize..10, d in 1usize..8) {
        let (inp, _) = instance(seed, tokens, agents, d);
        let m = composed_matrix(&inp).unwrap();
        for i in 0..tokens {
            let row = m.row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 8.0 * f64::EPSILON * tokens as f64);
        }
    }

    #[test]
    fn joint_kv_permutation_leaves_output_unchanged(seed: u64, tokens in 2usize..30, agents in 1usize..8, d in 1usize..8) {
        let (inp, mut rng) = instance(seed, tokens, agents, d);
        let p = perm(tokens, &mut rng);
        let moved = AttentionInputs {
            k: inp.k.permute_rows(&p).unwrap(),
            v: inp.v.permute_rows(&p).unwrap(),
            ..inp.clone()
        };
        let a = agent_attention_pure(&inp).unwrap();
        let b = agent_attention_pure(&moved).unwrap();
        let tol = 4.0 * f64::EPSILON * inp.v.max_abs().max(1.0);
        prop_assert!(a.max_abs_diff(&b).unwrap() <= tol);
    }

    #[test]
    fn query_permutation_permutes_output(seed: u64, tokens in 2usize..30, agents in 1usize..8, d in 1usize..8) {
        let (inp, mut rng) = instance(seed, tokens, agents, d);
        let p = perm(tokens, &mut rng);
        let moved = AttentionInputs { q: inp.q.permute_rows(&p).unwrap(), ..inp.clone() };
        let a = agent_attention_pure(&inp).unwrap().permute_rows(&p).unwrap();
        let b = agent_attention_pure(&moved).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 4.0 * f64::EPSILON * inp.v.max_abs().max(1.0));
    }

    #[test]
    fn mac_ratio_is_two_n_over_big_n(tokens in 1usize..5000, agents in 1usize..200, d in 1usize..256, heads in 1usize..16) {
        let agent = FlopModel::new(Kernel::Agent, tokens, agents, d, heads).unwrap().mac_count;
        let soft = FlopModel::new(Kernel::Softmax, tokens, agents, d, heads).unwrap().mac_count;
        prop_assert_eq!(agent * tokens as u64, soft * 2 * agents as u64);
    }

    #[test]
    fn bias_resize_to_same_size_is_identity(seed: u64, side in 1usize..5, h in 1usize..10, w in 1usize..10, block in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h0, w0) = (block.min(h), block.min(w));
        let b = AgentBiasParams::<f64>::trunc_normal(side * side, h, w, h0, w0, &mut rng).unwrap();
        let r = b.resize_bias_for(side * side, h, w).unwrap();
        prop_assert_eq!(r, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn param_count_is_seed_invariant(s1: u64, s2: u64, depth in 0usize..3, heads in 1usize..3, side in 1usize..3) {
        let p = ModelPreset::uniform("p", 16, 4, depth, 8 * heads, heads, side * side);
        let a = Model::<f32>::build(&p, s1).unwrap().count_params();
        let b = Model::<f32>::build(&p, s2).unwrap().count_params();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a, ParamReport::for_preset(&p).unwrap());
    }
}
