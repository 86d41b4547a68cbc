use rand::Rng;

use crate::buffer::Buffer;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

fn last_axis(t: &Tensor) -> (usize, usize) {
    let width = *t.shape().last().expect("tensors have rank >= 1");
    (t.numel() / width, width)
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

impl Tensor {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let (rows, width) = last_axis(self);
        let mut out = Buffer::zeros(self.numel());
        {
            let x = self.data();
            for r in 0..rows {
                softmax_row(&x[r * width..(r + 1) * width], &mut out[r * width..(r + 1) * width]);
            }
        }
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                let mut grad = Buffer::zeros(g.len());
                for r in 0..rows {
                    let span = r * width..(r + 1) * width;
                    let (y, gy) = (&saved[span.clone()], &g[span.clone()]);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((dst, &y), &gy) in grad[span].iter_mut().zip(y).zip(gy) {
                        *dst = y * (gy - dot);
                    }
                }
                vec![Some(grad)]
            }),
        )
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, width) = last_axis(self);
        if gain.shape() != [width] || bias.shape() != [width] {
            return Err(TensorError::shape("layer_norm", self.shape(), gain.shape()));
        }
        let mut normed = Buffer::zeros(self.numel());
        let mut rstd = Buffer::zeros(rows);
        let mut out = Buffer::zeros(self.numel());
        {
            let (x, g, b) = (self.data(), gain.data(), bias.data());
            for r in 0..rows {
                let row = &x[r * width..(r + 1) * width];
                let mean = row.iter().sum::<f64>() / width as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
                let inv = 1.0 / (var + eps).sqrt();
                rstd[r] = inv;
                for j in 0..width {
                    let h = (row[j] - mean) * inv;
                    normed[r * width + j] = h;
                    out[r * width + j] = h * g[j] + b[j];
                }
            }
        }
        let gain_t = gain.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self, gain, bias],
            Box::new(move |dy, needs| {
                let g = gain_t.data();
                let mut dx = needs[0].then(|| Buffer::zeros(rows * width));
                let mut dg = needs[1].then(|| Buffer::zeros(width));
                let mut db = needs[2].then(|| Buffer::zeros(width));
                for r in 0..rows {
                    let span = r * width..(r + 1) * width;
                    let (h, d) = (&normed[span.clone()], &dy[span.clone()]);
                    if let Some(dg) = dg.as_mut() {
                        dg.iter_mut().zip(d.iter().zip(h)).for_each(|(acc, (d, h))| *acc += d * h);
                    }
                    if let Some(db) = db.as_mut() {
                        db.iter_mut().zip(d).for_each(|(acc, d)| *acc += d);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..width {
                            let dh = d[j] * g[j];
                            mean_dh += dh;
                            mean_dh_h += dh * h[j];
                        }
                        mean_dh /= width as f64;
                        mean_dh_h /= width as f64;
                        for j in 0..width {
                            dx[r * width + j] = rstd[r] * (d[j] * g[j] - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                }
                vec![dx, dg, db]
            }),
        ))
    }

    /// Gather rows of `table` (`[rows, width]`) for each id; output shape is
    /// `shape + [width]`.
    pub fn embedding(table: &Tensor, ids: &[usize], shape: &[usize]) -> Result<Tensor> {
        if table.rank() != 2 || numel(shape) != ids.len() || ids.is_empty() {
            return Err(TensorError::shape("embedding", table.shape(), shape));
        }
        let (limit, width) = (table.shape()[0], table.shape()[1]);
        if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= limit) {
            return Err(TensorError::Index { position, id, limit });
        }
        let mut out = Buffer::zeros(ids.len() * width);
        {
            let t = table.data();
            for (i, &id) in ids.iter().enumerate() {
                out[i * width..(i + 1) * width].copy_from_slice(&t[id * width..(id + 1) * width]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.push(width);
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            out_shape,
            out,
            &[table],
            Box::new(move |g, _| {
                let mut grad = Buffer::zeros(limit * width);
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut grad[id * width..(id + 1) * width];
                    dst.iter_mut().zip(&g[i * width..(i + 1) * width]).for_each(|(d, s)| *d += s);
                }
                vec![Some(grad)]
            }),
        ))
    }

    /// Mean negative log-likelihood of `targets` under the softmax of the
    /// last axis. One target per row.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        let (rows, width) = last_axis(self);
        if targets.len() != rows {
            return Err(TensorError::shape("cross_entropy", self.shape(), &[targets.len()]));
        }
        if let Some((position, &id)) = targets.iter().enumerate().find(|(_, &t)| t >= width) {
            return Err(TensorError::Index {
                position,
                id,
                limit: width,
            });
        }
        let mut total = 0.0;
        {
            let x = self.data();
            for (r, &t) in targets.iter().enumerate() {
                let row = &x[r * width..(r + 1) * width];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
        }
        let logits = self.clone();
        let targets = targets.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            Buffer::from_vec(vec![total / rows as f64]),
            &[self],
            Box::new(move |g, _| {
                let x = logits.data();
                let scale = g[0] / rows as f64;
                let mut grad = Buffer::zeros(rows * width);
                for (r, &t) in targets.iter().enumerate() {
                    let span = r * width..(r + 1) * width;
                    softmax_row(&x[span.clone()], &mut grad[span.clone()]);
                    grad[r * width + t] -= 1.0;
                    grad[span].iter_mut().for_each(|v| *v *= scale);
                }
                vec![Some(grad)]
            }),
        ))
    }

    /// Inverted dropout: zero each entry with probability `p`, scale the
    /// survivors by `1 / (1 - p)`. `p = 1` zeroes everything.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..=1.0).contains(&p) {
            return Err(TensorError::contract("dropout", format!("probability {p} outside [0, 1]")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
        let mask: Buffer = Buffer::from_vec(
            (0..self.numel())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                .collect(),
        );
        let out = Buffer::from_vec(self.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                vec![Some(Buffer::from_vec(g.iter().zip(mask.iter()).map(|(g, m)| g * m).collect()))]
            }),
        ))
    }
}
