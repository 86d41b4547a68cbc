//! Every differentiable op against central finite differences.

use dispatcher_tensor::gradcheck::check_gradients;
use dispatcher_tensor::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::param(shape, random(rng, shape)).unwrap()
}

/// Fixed random weights turn any tensor into a scalar with a non-trivial
/// gradient everywhere.
fn probe(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(t.shape(), random(&mut rng, t.shape()))?;
    Ok(t.mul(&w)?.sum())
}

fn assert_close(name: &str, params: &[Tensor], loss: impl FnMut() -> Result<Tensor>) {
    let report = check_gradients(params, loss, STEP).unwrap();
    assert!(report.checked > 0);
    assert!(
        report.max_rel_error() < TOLERANCE,
        "{name}: worst entry {:?}",
        report.worst
    );
}

#[test]
fn matmul_plain_and_batched() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = param(&mut rng, &[2, 3, 4]);
    let b = param(&mut rng, &[4, 5]);
    assert_close("matmul shared right", &[a.clone(), b.clone()], || probe(&a.matmul(&b)?, 9));

    let c = param(&mut rng, &[2, 4, 3]);
    assert_close("matmul paired", &[a.clone(), c.clone()], || probe(&a.matmul(&c)?, 9));

    let left = param(&mut rng, &[3, 4]);
    assert_close("matmul shared left", &[left.clone(), c.clone()], || {
        probe(&left.matmul(&c)?, 9)
    });
}

#[test]
fn affine_all_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = param(&mut rng, &[2, 3, 4]);
    let w = param(&mut rng, &[4, 5]);
    let b = param(&mut rng, &[5]);
    assert_close("affine", &[x.clone(), w.clone(), b.clone()], || probe(&x.affine(&w, &b)?, 3));
}

#[test]
fn matmul_bt_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = param(&mut rng, &[2, 3, 4]);
    let w = param(&mut rng, &[6, 4]);
    assert_close("matmul_bt shared", &[a.clone(), w.clone()], || probe(&a.matmul_bt(&w)?, 3));
    let b = param(&mut rng, &[2, 5, 4]);
    assert_close("matmul_bt paired", &[a.clone(), b.clone()], || probe(&a.matmul_bt(&b)?, 3));
}

#[test]
fn pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = param(&mut rng, &[3, 4]);
    let y = param(&mut rng, &[3, 4]);
    let row = param(&mut rng, &[4]);
    let col = param(&mut rng, &[3, 1]);
    assert_close("add", &[x.clone(), row.clone()], || probe(&x.add(&row)?, 1));
    assert_close("sub", &[x.clone(), col.clone()], || probe(&x.sub(&col)?, 1));
    assert_close("mul", &[x.clone(), y.clone()], || probe(&x.mul(&y)?, 1));
    assert_close("mul broadcast", &[x.clone(), col.clone()], || probe(&x.mul(&col)?, 1));
    assert_close("scale", std::slice::from_ref(&x), || probe(&x.scale(-2.5), 1));
    assert_close("sigmoid", std::slice::from_ref(&x), || probe(&x.scale(3.0).sigmoid(), 1));
    assert_close("gelu", std::slice::from_ref(&x), || probe(&x.scale(2.0).gelu(), 1));
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = param(&mut rng, &[2, 5, 3]);
    assert_close("roll_right", std::slice::from_ref(&x), || probe(&x.roll_right(3), 2));
    assert_close("narrow", std::slice::from_ref(&x), || probe(&x.narrow(2, 1, 2)?, 2));
    assert_close("reshape", std::slice::from_ref(&x), || probe(&x.reshape(&[5, 6])?, 2));
    assert_close("mean", std::slice::from_ref(&x), || Ok(x.mul(&x)?.mean()));
}

#[test]
fn normalisation_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = param(&mut rng, &[4, 6]);
    let gain = param(&mut rng, &[6]);
    let bias = param(&mut rng, &[6]);
    assert_close("softmax", std::slice::from_ref(&x), || probe(&x.scale(2.0).softmax(), 4));
    assert_close("layer_norm", &[x.clone(), gain.clone(), bias.clone()], || {
        probe(&x.layer_norm(&gain, &bias, 1e-5)?, 4)
    });
}

#[test]
fn embedding_and_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let table = param(&mut rng, &[7, 3]);
    let ids = [1, 4, 4, 0, 6, 2];
    assert_close("embedding", std::slice::from_ref(&table), || {
        probe(&Tensor::embedding(&table, &ids, &[2, 3])?, 5)
    });
    let logits = param(&mut rng, &[2, 3, 7]);
    assert_close("cross_entropy", std::slice::from_ref(&logits), || {
        logits.scale(3.0).cross_entropy(&[0, 6, 2, 2, 5, 1])
    });
}

#[test]
fn attention_all_operands() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = param(&mut rng, &[2, 5, 6]);
    let k = param(&mut rng, &[2, 5, 6]);
    let v = param(&mut rng, &[2, 5, 6]);
    for heads in [1, 2, 3] {
        assert_close("causal_attention", &[q.clone(), k.clone(), v.clone()], || {
            probe(&Tensor::causal_attention(&q, &k, &v, heads)?, 8)
        });
    }
}

#[test]
fn dropout_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = param(&mut rng, &[4, 4]);
    assert_close("dropout", std::slice::from_ref(&x), || {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(11);
        probe(&x.dropout(0.3, &mut mask_rng)?, 6)
    });
}
