use agentattn_core::ops::matmul;
use agentattn_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Triple loop with compensated summation.
fn kahan_matmul(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for l in 0..k {
                let y = a[i * k + l] * b[l * p + j] - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            out[i * p + j] = sum;
        }
    }
    out
}

fn seeded() -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = Tensor::randn([3, 4], 1.0, &mut rng).unwrap();
    let b = Tensor::randn([4, 2], 1.0, &mut rng).unwrap();
    (a, b)
}

/// Product of the seed-42 operands, computed once by `kahan_matmul` and
/// cross-checked against an exactly rounded sum.
const FROZEN: [f64; 6] = [
    1.6638134898778734,
    -1.2100849801372537,
    -1.886971520325739,
    0.37965291073397633,
    3.883427726414153,
    0.4954090954359517,
];

#[test]
fn oracle_matches_frozen_values() {
    let (a, b) = seeded();
    assert_eq!(kahan_matmul(a.data(), b.data(), 3, 4, 2), FROZEN);
}

#[test]
fn matmul_agrees_with_oracle() {
    let (a, b) = seeded();
    let c = matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[3, 2]);
    for (x, y) in c.data().iter().zip(FROZEN) {
        assert!((x - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0), "{x} vs {y}");
    }
    let c32 = matmul(&a.cast::<f32>(), &b.cast::<f32>()).unwrap();
    for (x, y) in c32.data().iter().zip(FROZEN) {
        assert!((*x as f64 - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let (a, _) = seeded();
    assert!(matches!(matmul(&a, &a), Err(agentattn_core::Error::Dimension(_))));
}
