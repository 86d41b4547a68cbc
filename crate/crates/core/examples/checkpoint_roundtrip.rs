//! Writes a checkpoint, prints its manifest and checks that the restored
//! model produces identical logits.

use dispatcher::checkpoint::{self, read_manifest};
use dispatcher::{LayerKind, LmModel, ModelConfig};

fn main() -> dispatcher::Result<()> {
    let model = LmModel::new(ModelConfig {
        layer_kind: LayerKind::Dispatcher,
        d_model: 16,
        d_inner: 32,
        n_layers: 2,
        n_heads: 2,
        max_seq: 32,
        vocab_size: 10,
        ..ModelConfig::default()
    })?;
    let path = std::env::temp_dir().join("dispatcher-example.ckpt");
    checkpoint::save(&model, &path)?;
    let bytes = std::fs::read(&path).map_err(|e| dispatcher::Error::Data(e.to_string()))?;
    let (manifest, blobs) = read_manifest(&bytes)?;
    println!("{} bytes, format {}, {} parameter bytes", bytes.len(), manifest.format_version, blobs.len());
    for p in manifest.params.iter().take(6) {
        println!("  {:<36} {:?} @ {}", p.name, p.shape, p.offset);
    }

    let restored = checkpoint::load(&path)?;
    let ids = [1, 4, 2, 7, 7, 3];
    let a = model.logits(&ids, 1, ids.len(), None)?.to_vec();
    let b = restored.logits(&ids, 1, ids.len(), None)?.to_vec();
    println!("restored logits identical: {}", a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    Ok(())
}
