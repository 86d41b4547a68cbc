use crate::buffer::Buffer;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

/// Split a shape around the sequence axis (second to last; the only axis
/// for rank 1) into `(outer, seq, inner)`.
fn sequence_split(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        1 => (1, shape[0], 1),
        r => (numel(&shape[..r - 2]), shape[r - 2], shape[r - 1]),
    }
}

/// Circular shift of `len` rows of width `inner` by `shift` towards higher
/// positions: `dst[p] = src[(p - shift) mod len]`.
pub fn rotate_rows(src: &[f64], dst: &mut [f64], len: usize, inner: usize, shift: usize) {
    let s = shift % len;
    let split = (len - s) * inner;
    dst[s * inner..].copy_from_slice(&src[..split]);
    dst[..s * inner].copy_from_slice(&src[split..]);
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        let out = self.data().clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            &[self],
            Box::new(|g, _| vec![Some(Buffer::from_slice(g))]),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::contract(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let full = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = Buffer::zeros(numel(&out_shape));
        {
            let src = self.data();
            for o in 0..outer {
                let from = (o * full + start) * inner;
                out[o * len * inner..(o + 1) * len * inner].copy_from_slice(&src[from..from + len * inner]);
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            out,
            &[self],
            Box::new(move |g, _| {
                let mut grad = Buffer::zeros(total);
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    grad[to..to + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(grad)]
            }),
        ))
    }

    /// Circular rotation along the sequence axis towards higher positions:
    /// `out[p] = self[(p - shift) mod N]`. The sequence axis is the second
    /// to last one (the only one for vectors).
    pub fn roll_right(&self, shift: usize) -> Tensor {
        let (outer, len, inner) = sequence_split(self.shape());
        let mut out = Buffer::zeros(self.numel());
        {
            let src = self.data();
            let block = len * inner;
            for o in 0..outer {
                rotate_rows(&src[o * block..(o + 1) * block], &mut out[o * block..(o + 1) * block], len, inner, shift);
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                // Rolling right by `len - shift` undoes the forward rotation.
                let back = len - shift % len;
                let mut grad = Buffer::zeros(g.len());
                let block = len * inner;
                for o in 0..outer {
                    rotate_rows(&g[o * block..(o + 1) * block], &mut grad[o * block..(o + 1) * block], len, inner, back);
                }
                vec![Some(grad)]
            }),
        )
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            Buffer::from_vec(vec![total]),
            &[self],
            Box::new(move |g, _| vec![Some(Buffer::filled(n, g[0]))]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }
}
