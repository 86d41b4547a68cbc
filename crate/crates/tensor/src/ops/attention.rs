//! Scaled dot-product attention with a causal mask, as a single op.
//!
//! Only the normalised weights are kept for the backward pass; the raw
//! scores never outlive the forward call.

use crate::buffer::Buffer;
use crate::counters;
use crate::error::{Result, TensorError};
use crate::ops::linalg::{gemm, MatView};
use crate::tensor::Tensor;

struct Geometry {
    batches: usize,
    len: usize,
    width: usize,
    heads: usize,
    head_width: usize,
}

impl Geometry {
    fn of(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Self> {
        let shape = q.shape();
        if k.shape() != shape || v.shape() != shape {
            return Err(TensorError::shape("causal_attention", shape, k.shape()));
        }
        if shape.len() < 2 {
            return Err(TensorError::shape("causal_attention", shape, &[]));
        }
        let (len, width) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::contract(
                "causal_attention",
                format!("width {width} not divisible into {heads} heads"),
            ));
        }
        Ok(Self {
            batches: q.numel() / (len * width),
            len,
            width,
            heads,
            head_width: width / heads,
        })
    }

    /// View of head `h` of sequence `b`, plus its offset.
    fn head(&self, b: usize, h: usize) -> (usize, MatView) {
        (
            b * self.len * self.width + h * self.head_width,
            MatView {
                rows: self.len,
                cols: self.head_width,
                rs: self.width,
                cs: 1,
            },
        )
    }
}

/// Forward pass; returns the head outputs and the attention weights
/// `[batches, heads, len, len]`.
fn attend(q: &[f64], k: &[f64], v: &[f64], geo: &Geometry) -> (Buffer, Buffer) {
    let n = geo.len;
    let scale = 1.0 / (geo.head_width as f64).sqrt();
    let mut probs = Buffer::zeros(geo.batches * geo.heads * n * n);
    let mut out = Buffer::zeros(geo.batches * n * geo.width);
    for b in 0..geo.batches {
        for h in 0..geo.heads {
            let (off, view) = geo.head(b, h);
            let p = &mut probs[(b * geo.heads + h) * n * n..][..n * n];
            gemm(&q[off..], view, &k[off..], view.t(), p, n, 0.0);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let max = row[..=i].iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
                let mut total = 0.0;
                for s in row[..=i].iter_mut() {
                    *s = (*s * scale - max).exp();
                    total += *s;
                }
                row[..=i].iter_mut().for_each(|s| *s /= total);
                row[i + 1..].iter_mut().for_each(|s| *s = 0.0);
            }
            gemm(p, MatView::dense(n, n), &v[off..], view, &mut out[off..], geo.width, 0.0);
        }
    }
    counters::add_mixing((2 * geo.batches * n * n * geo.width) as u64);
    (out, probs)
}

impl Tensor {
    /// Multi-head causal self-attention over `[.., N, d]` projections.
    ///
    /// Head `h` reads channels `h*d/H .. (h+1)*d/H` of each operand and
    /// writes the same channel slice of the output. Position `i` attends to
    /// positions `0..=i` with weights `softmax(q·kᵀ / sqrt(d/H))`.
    pub fn causal_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
        let geo = Geometry::of(q, k, v, heads)?;
        let (out, probs) = attend(&q.data(), &k.data(), &v.data(), &geo);
        let (tq, tk, tv) = (q.clone(), k.clone(), v.clone());
        Ok(Tensor::from_op(
            q.shape().to_vec(),
            out,
            &[q, k, v],
            Box::new(move |g, needs| {
                let n = geo.len;
                let scale = 1.0 / (geo.head_width as f64).sqrt();
                let (q, k, v) = (tq.data(), tk.data(), tv.data());
                let size = q.len();
                let mut dq = needs[0].then(|| Buffer::zeros(size));
                let mut dk = needs[1].then(|| Buffer::zeros(size));
                let mut dv = needs[2].then(|| Buffer::zeros(size));
                let mut scratch = Buffer::zeros(n * n);
                for b in 0..geo.batches {
                    for h in 0..geo.heads {
                        let (off, view) = geo.head(b, h);
                        let p = &probs[(b * geo.heads + h) * n * n..][..n * n];
                        let pv = MatView::dense(n, n);
                        if let Some(dv) = dv.as_mut() {
                            gemm(p, pv.t(), &g[off..], view, &mut dv[off..], geo.width, 0.0);
                        }
                        if dq.is_none() && dk.is_none() {
                            continue;
                        }
                        // dP = dO · vᵀ, then the softmax Jacobian in place.
                        gemm(&g[off..], view, &v[off..], view.t(), &mut scratch, n, 0.0);
                        for i in 0..n {
                            let (pr, dr) = (&p[i * n..(i + 1) * n], &mut scratch[i * n..(i + 1) * n]);
                            let dot: f64 = pr[..=i].iter().zip(dr[..=i].iter()).map(|(a, b)| a * b).sum();
                            for j in 0..=i {
                                dr[j] = pr[j] * (dr[j] - dot) * scale;
                            }
                            dr[i + 1..].iter_mut().for_each(|d| *d = 0.0);
                        }
                        if let Some(dq) = dq.as_mut() {
                            gemm(&scratch, pv, &k[off..], view, &mut dq[off..], geo.width, 0.0);
                        }
                        if let Some(dk) = dk.as_mut() {
                            gemm(&scratch, pv.t(), &q[off..], view, &mut dk[off..], geo.width, 0.0);
                        }
                    }
                }
                vec![dq, dk, dv]
            }),
        ))
    }

    /// Attention weights `[.., H, N, N]` that [`Tensor::causal_attention`]
    /// would apply. Not differentiable.
    pub fn causal_attention_weights(q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor> {
        let geo = Geometry::of(q, k, k, heads)?;
        let (_, probs) = attend(&q.data(), &k.data(), &k.data(), &geo);
        let mut shape = q.shape()[..q.rank() - 2].to_vec();
        shape.extend([heads, geo.len, geo.len]);
        Tensor::new(&shape, probs.into_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_attends_to_itself() {
        let q = Tensor::new(&[1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let w = Tensor::causal_attention_weights(&q, &q, 2).unwrap();
        assert_eq!(w.shape(), &[2, 1, 1]);
        assert_eq!(w.to_vec(), vec![1.0, 1.0]);
        let out = Tensor::causal_attention(&q, &q, &q, 2).unwrap();
        assert_eq!(out.to_vec(), q.to_vec());
    }

    #[test]
    fn rows_are_normalised_and_causal() {
        let data: Vec<f64> = (0..2 * 5 * 6).map(|i| ((i * 37) % 17) as f64 / 5.0 - 1.5).collect();
        let q = Tensor::new(&[2, 5, 6], data.clone()).unwrap();
        let k = Tensor::new(&[2, 5, 6], data.iter().rev().copied().collect()).unwrap();
        let w = Tensor::causal_attention_weights(&q, &k, 3).unwrap().to_vec();
        for (r, row) in w.chunks(5).enumerate() {
            let i = r % 5;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn counts_mixing_work() {
        counters::reset();
        let q = Tensor::zeros(&[3, 8, 4]);
        Tensor::causal_attention(&q, &q, &q, 1).unwrap();
        assert_eq!(counters::snapshot().mixing, 2 * 3 * 64 * 4);
    }

    #[test]
    fn rejects_bad_heads() {
        let q = Tensor::zeros(&[4, 6]);
        assert!(Tensor::causal_attention(&q, &q, &q, 4).is_err());
    }
}
