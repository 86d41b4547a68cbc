//! Row dropout skips whole shift-and-sum rows: fewer multiply-adds per step,
//! and with every row dropped the layer is a per-token map.

use dispatcher::dispatcher::{dispatcher_forward, sample_row_mask, DispatcherParams};
use dispatcher_tensor::{counters, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dispatcher::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n, d) = (1024, 32);
    let layer = DispatcherParams::new(d, 1, n, &mut rng)?;
    let x = Tensor::new(&[n, d], (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect())?;

    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut total = 0;
        for _ in 0..20 {
            counters::reset();
            dispatcher_forward(&x, &layer, true, p, &mut rng)?;
            total += counters::snapshot().mixing;
        }
        println!("p={p:<4} mean mixing multiply-adds per call: {}", total / 20);
    }
    let mask = sample_row_mask(10_000, 0.5, &mut rng)?;
    println!("keep rate over 10000 rows at p=0.5: {:.4}", mask.kept() as f64 / 10_000.0);
    Ok(())
}
