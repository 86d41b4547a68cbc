//! Peak live tensor bytes of one forward and backward pass against sequence
//! length, with a straight-line fit for the dispatcher.

use dispatcher::bench::{fit_log_log, linear_fit, memory_report};
use dispatcher::{LayerKind, ModelConfig};

fn main() -> dispatcher::Result<()> {
    let ns = [128, 256, 512, 1024, 2048];
    for kind in [LayerKind::Dispatcher, LayerKind::Msa] {
        let cfg = ModelConfig {
            layer_kind: kind,
            n_layers: 2,
            max_seq: 2048,
            vocab_size: 64,
            ..ModelConfig::default()
        };
        let records = memory_report(&cfg, &ns, 2, 0)?;
        let points: Vec<(f64, f64)> = records.iter().map(|r| (r.n as f64, r.peak_tensor_bytes as f64)).collect();
        for r in &records {
            println!("{kind:>10} N={:<5} {:>8.2} MB", r.n, r.peak_tensor_bytes as f64 / 1e6);
        }
        let fit = linear_fit(&points)?;
        println!(
            "{kind:>10} exponent {:.3}; linear fit {:.0} + {:.0}·N bytes, worst residual {:.1}%",
            fit_log_log(&points)?,
            fit.intercept,
            fit.slope,
            100.0 * fit.max_rel_residual
        );
    }
    Ok(())
}
