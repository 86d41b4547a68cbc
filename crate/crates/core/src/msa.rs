//! Masked multi-head self-attention, the quadratic baseline.

use dispatcher_tensor::Tensor;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Linear;

#[derive(Debug, Clone)]
pub struct MsaParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MsaParams {
    pub fn new<R: Rng + ?Sized>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::config("n_heads", format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(width, width, rng),
            key: Linear::new(width, width, rng),
            value: Linear::new(width, width, rng),
            output: Linear::new(width, width, rng),
            heads,
        })
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.query.collect(&format!("{prefix}.query"), out);
        self.key.collect(&format!("{prefix}.key"), out);
        self.value.collect(&format!("{prefix}.value"), out);
        self.output.collect(&format!("{prefix}.output"), out);
    }

    /// Attention weights `[.., H, N, N]`; row `i` is zero beyond column `i`.
    pub fn attention_weights(&self, input: &Tensor) -> Result<Tensor> {
        let q = self.query.forward(input)?;
        let k = self.key.forward(input)?;
        Ok(Tensor::causal_attention_weights(&q, &k, self.heads)?)
    }
}

/// Causal scaled dot-product attention over `[.., N, d]`, heads
/// concatenated and projected.
pub fn msa_forward(input: &Tensor, params: &MsaParams) -> Result<Tensor> {
    let q = params.query.forward(input)?;
    let k = params.key.forward(input)?;
    let v = params.value.forward(input)?;
    params.output.forward(&Tensor::causal_attention(&q, &k, &v, params.heads)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = MsaParams::new(4, 2, &mut rng).unwrap();
        let x = Tensor::new(&[1, 4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        assert_eq!(params.attention_weights(&x).unwrap().to_vec(), vec![1.0, 1.0]);
        let out = msa_forward(&x, &params).unwrap();
        let direct = params.output.forward(&params.value.forward(&x).unwrap()).unwrap();
        for (a, b) in out.to_vec().iter().zip(direct.to_vec()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(MsaParams::new(6, 4, &mut rng).is_err());
    }
}
