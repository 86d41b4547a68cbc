//! Step time and counted multiply-adds of both layer kinds over a range of
//! sequence lengths, with fitted log-log exponents.
//!
//! `cargo run --release --example scaling_sweep -- 128,256,512,1024`

use dispatcher::bench::{bench_step_time, fit_scaling_exponent, write_csv, BenchOptions};
use dispatcher::{LayerKind, ModelConfig};

fn main() -> dispatcher::Result<()> {
    let ns: Vec<usize> = std::env::args()
        .nth(1)
        .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_else(|| vec![64, 128, 256, 512, 1024]);
    let mut all = Vec::new();
    for kind in [LayerKind::Dispatcher, LayerKind::Msa] {
        let cfg = ModelConfig {
            layer_kind: kind,
            d_model: 64,
            d_inner: 64,
            n_layers: 2,
            max_seq: *ns.iter().max().expect("lengths"),
            vocab_size: 64,
            dropout_p: 0.0,
            ..ModelConfig::default()
        };
        let records = bench_step_time(&cfg, &ns, &BenchOptions::default())?;
        match fit_scaling_exponent(&records) {
            Ok(slope) => eprintln!("{kind}: time exponent {slope:.3}"),
            Err(e) => eprintln!("{kind}: {e}"),
        }
        all.extend(records);
    }
    write_csv(&all, std::io::stdout()).map_err(|e| dispatcher::Error::Data(e.to_string()))
}
