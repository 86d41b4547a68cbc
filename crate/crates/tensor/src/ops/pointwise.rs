//! Elementwise arithmetic with right-aligned broadcasting.

use crate::buffer::Buffer;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Element strides of `shape` read through the broadcast `out` shape.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

#[derive(Clone, Copy)]
enum Layout {
    Same,
    /// `b` repeats every `n` elements of `a`.
    SuffixB(usize),
    SuffixA(usize),
    General,
}

fn layout(a: &[usize], b: &[usize], out: &[usize]) -> Layout {
    let trimmed = |s: &[usize]| -> Vec<usize> {
        let lead = s.iter().take_while(|&&e| e == 1).count();
        s[lead.min(s.len().saturating_sub(1))..].to_vec()
    };
    if a == b {
        return Layout::Same;
    }
    let (ta, tb) = (trimmed(a), trimmed(b));
    if a == out && out.ends_with(&tb) {
        return Layout::SuffixB(numel(&tb));
    }
    if b == out && out.ends_with(&ta) {
        return Layout::SuffixA(numel(&ta));
    }
    Layout::General
}

/// Visit every output element with the matching offsets into both inputs.
fn for_each_pair(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    kind: Layout,
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out);
    match kind {
        Layout::Same => (0..n).for_each(|i| f(i, i, i)),
        Layout::SuffixB(m) => (0..n).for_each(|i| f(i, i, i % m)),
        Layout::SuffixA(m) => (0..n).for_each(|i| f(i, i % m, i)),
        Layout::General => {
            let sa = broadcast_strides(a, out);
            let sb = broadcast_strides(b, out);
            let rank = out.len();
            let mut idx = vec![0usize; rank];
            let (mut oa, mut ob) = (0usize, 0usize);
            for i in 0..n {
                f(i, oa, ob);
                for ax in (0..rank).rev() {
                    idx[ax] += 1;
                    oa += sa[ax];
                    ob += sb[ax];
                    if idx[ax] < out[ax] {
                        break;
                    }
                    oa -= sa[ax] * out[ax];
                    ob -= sb[ax] * out[ax];
                    idx[ax] = 0;
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn binary(a: &Tensor, b: &Tensor, op: Binary) -> Result<Tensor> {
    let name = match op {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    };
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let kind = layout(a.shape(), b.shape(), &out_shape);
    let mut out = Buffer::zeros(numel(&out_shape));
    {
        let (da, db) = (a.data(), b.data());
        match op {
            Binary::Add => for_each_pair(&out_shape, a.shape(), b.shape(), kind, |i, x, y| {
                out[i] = da[x] + db[y]
            }),
            Binary::Sub => for_each_pair(&out_shape, a.shape(), b.shape(), kind, |i, x, y| {
                out[i] = da[x] - db[y]
            }),
            Binary::Mul => for_each_pair(&out_shape, a.shape(), b.shape(), kind, |i, x, y| {
                out[i] = da[x] * db[y]
            }),
        }
    }
    let (ta, tb) = (a.clone(), b.clone());
    let shape = out_shape.clone();
    Ok(Tensor::from_op(
        out_shape,
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
            let mut ga = needs[0].then(|| Buffer::zeros(ta.numel()));
            let mut gb = needs[1].then(|| Buffer::zeros(tb.numel()));
            match op {
                Binary::Add | Binary::Sub => {
                    let sign = if matches!(op, Binary::Sub) { -1.0 } else { 1.0 };
                    for_each_pair(&shape, &sa, &sb, kind, |i, x, y| {
                        if let Some(ga) = ga.as_mut() {
                            ga[x] += g[i];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[y] += sign * g[i];
                        }
                    });
                }
                Binary::Mul => {
                    let (da, db) = (ta.data(), tb.data());
                    for_each_pair(&shape, &sa, &sb, kind, |i, x, y| {
                        if let Some(ga) = ga.as_mut() {
                            ga[x] += g[i] * db[y];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[y] += g[i] * da[x];
                        }
                    });
                }
            }
            vec![ga, gb]
        }),
    ))
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_slope(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Binary::Mul)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let out = Buffer::from_vec(self.data().iter().map(|v| v * factor).collect());
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                vec![Some(Buffer::from_vec(g.iter().map(|v| v * factor).collect()))]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let out = Buffer::from_vec(self.data().iter().map(|&v| stable_sigmoid(v)).collect());
        let saved = out.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                let grad = g.iter().zip(saved.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
                vec![Some(Buffer::from_vec(grad))]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        let out = Buffer::from_vec(self.data().iter().map(|&v| gelu_value(v)).collect());
        let input = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            &[self],
            Box::new(move |g, _| {
                let x = input.data();
                let grad = g.iter().zip(x.iter()).map(|(g, &x)| g * gelu_slope(x)).collect();
                vec![Some(Buffer::from_vec(grad))]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_reference_points() {
        let y = t(&[4], &[0.0, 1.0, 50.0, -800.0]).sigmoid().to_vec();
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 0.731_058_578_6).abs() < 1e-10);
        assert!((y[2] - 1.0).abs() < 1e-12);
        assert!(y[3] >= 0.0 && y[3].is_finite());
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn suffix_and_general_broadcast_agree() {
        let a = t(&[2, 2, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        let bias = t(&[3], &[10., 20., 30.]);
        let y = a.add(&bias).unwrap().to_vec();
        assert_eq!(&y[..3], &[11., 22., 33.]);
        assert_eq!(&y[9..], &[20., 31., 42.]);

        let col = t(&[2, 1], &[2., 3.]);
        let z = t(&[2, 3], &[1., 1., 1., 1., 1., 1.]).mul(&col).unwrap().to_vec();
        assert_eq!(z, vec![2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let a = Tensor::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let col = Tensor::param(&[2, 1], vec![2., 3.]).unwrap();
        a.mul(&col).unwrap().sum().backward().unwrap();
        assert_eq!(col.grad().unwrap(), vec![6., 15.]);
        assert_eq!(a.grad().unwrap(), vec![2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn mismatched_shapes_name_both() {
        let err = t(&[2, 3], &[0.; 6]).add(&t(&[2], &[0.; 2])).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "add",
                lhs: vec![2, 3],
                rhs: vec![2]
            }
        );
    }
}
