//! Central finite differences against backpropagation for every parameter
//! of a tiny two-layer dispatcher model.

use dispatcher::trainer::TokenBatch;
use dispatcher::{LayerKind, LmModel, ModelConfig};
use dispatcher_tensor::gradcheck::check_gradients;
use dispatcher_tensor::TensorError;

fn main() -> dispatcher::Result<()> {
    let model = LmModel::new(ModelConfig {
        layer_kind: LayerKind::Dispatcher,
        d_model: 8,
        d_inner: 8,
        n_layers: 2,
        n_heads: 2,
        max_seq: 8,
        vocab_size: 11,
        dropout_p: 0.0,
        ..ModelConfig::default()
    })?;
    let batch = TokenBatch::new(1, 6, vec![1, 5, 2, 9, 3, 3], vec![5, 2, 9, 3, 3, 0])?;
    let params = model.named_parameters();
    for (name, t) in &params {
        let report = check_gradients(
            std::slice::from_ref(t),
            || model.loss(&batch, None).map_err(|e| TensorError::contract("loss", e.to_string())),
            1e-5,
        )?;
        println!("{name:<36} {:>4} entries, max relative error {:.2e}", report.checked, report.max_rel_error());
    }
    Ok(())
}
