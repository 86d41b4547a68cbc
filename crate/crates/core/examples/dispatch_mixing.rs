//! The shift-and-sum loop on a toy sequence: the causal mask, the prefix
//! sums produced by saturated gates, and the multiply-add count.

use dispatcher::dispatcher::{dispatch_mix, num_rows, CausalShiftMask, RowDropoutMask};
use dispatcher_tensor::{counters, Tensor};

fn main() -> dispatcher::Result<()> {
    let n = 8;
    let rows = num_rows(n)?;
    let mask = CausalShiftMask::for_len(n)?;
    println!("N = {n} needs {rows} rows; mask (row r allows positions >= 2^r):");
    for (r, row) in mask.to_rows().iter().enumerate() {
        println!("  r={r} shift={:<2} {row:?}", 1 << r);
    }

    let v = Tensor::new(&[n, 1], (1..=n).map(|x| x as f64).collect())?;
    let ones = mask.gate_tensor(rows, 1);
    counters::reset();
    let out = dispatch_mix(&v, &ones, &mask, 1, &RowDropoutMask::keep_all(rows))?;
    println!("unit gates turn {:?} into {:?}", v.to_vec(), out.to_vec());
    println!("mixing multiply-adds: {} (R * N * d = {})", counters::snapshot().mixing, rows * n);

    let half = ones.scale(0.5);
    let out = dispatch_mix(&v, &half, &mask, 1, &RowDropoutMask::keep_all(rows))?;
    println!("gates of 0.5 give {:?}", out.to_vec());
    Ok(())
}
