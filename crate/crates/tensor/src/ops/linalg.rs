use crate::buffer::Buffer;
use crate::counters;
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

/// Strided view of a row-major matrix: `(rows, cols, row stride, col stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatView {
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = beta * c + a * b`, with `c` dense row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(a: &[f64], av: MatView, b: &[f64], bv: MatView, c: &mut [f64], ldc: usize, beta: f64) {
    assert_eq!(av.cols, bv.rows);
    assert!(a.len() >= av.span() && b.len() >= bv.span());
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    assert!(m == 0 || n == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: spans checked above; strides fit in isize for any
    // allocation that exists.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

enum Batching {
    /// Right operand is a plain matrix; the left one is flattened.
    SharedRight { rows: usize },
    /// Left operand is a plain matrix reused against each right batch.
    SharedLeft { batches: usize },
    Paired { batches: usize },
}

fn matmul_impl(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
    let op = if transpose_b { "matmul_bt" } else { "matmul" };
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(TensorError::shape(op, &sa, &sb));
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = if transpose_b {
        (sb[sb.len() - 1], sb[sb.len() - 2])
    } else {
        (sb[sb.len() - 2], sb[sb.len() - 1])
    };
    if k != kb {
        return Err(TensorError::shape(op, &sa, &sb));
    }
    let (batch_a, batch_b) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
    let (batching, mut out_shape) = if batch_b.is_empty() {
        (
            Batching::SharedRight {
                rows: numel(batch_a) * m,
            },
            batch_a.to_vec(),
        )
    } else if batch_a.is_empty() {
        (
            Batching::SharedLeft {
                batches: numel(batch_b),
            },
            batch_b.to_vec(),
        )
    } else if batch_a == batch_b {
        (
            Batching::Paired {
                batches: numel(batch_a),
            },
            batch_a.to_vec(),
        )
    } else {
        return Err(TensorError::shape(op, &sa, &sb));
    };
    out_shape.extend([m, n]);

    let b_view = if transpose_b { MatView::dense(n, k).t() } else { MatView::dense(k, n) };
    let mut out = Buffer::zeros(numel(&out_shape));
    {
        let (da, db) = (a.data(), b.data());
        match batching {
            Batching::SharedRight { rows } => {
                gemm(&da, MatView::dense(rows, k), &db, b_view, &mut out, n, 0.0);
            }
            Batching::SharedLeft { batches } | Batching::Paired { batches } => {
                let a_step = if matches!(batching, Batching::SharedLeft { .. }) { 0 } else { m * k };
                for i in 0..batches {
                    gemm(
                        &da[i * a_step..],
                        MatView::dense(m, k),
                        &db[i * k * n..],
                        b_view,
                        &mut out[i * m * n..],
                        n,
                        0.0,
                    );
                }
            }
        }
    }
    counters::add_dense((numel(&out_shape) * k) as u64);

    let (ta, tb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out_shape,
        out,
        &[a, b],
        Box::new(move |g, needs| {
            let (da, db) = (ta.data(), tb.data());
            // Views of op(b)^T ([n, k]) and of a^T ([k, m]).
            let opb_t = if transpose_b { MatView::dense(n, k) } else { MatView::dense(k, n).t() };
            let mut ga = needs[0].then(|| Buffer::zeros(ta.numel()));
            let mut gb = needs[1].then(|| Buffer::zeros(tb.numel()));
            // grad of op(b) is a^T g ([k, n]); stored transposed when op(b) = b^T.
            let grad_b = |a: &[f64], av: MatView, g: &[f64], gv: MatView, gb: &mut [f64], beta: f64| {
                if transpose_b {
                    gemm(g, gv.t(), a, av, gb, k, beta);
                } else {
                    gemm(a, av.t(), g, gv, gb, n, beta);
                }
            };
            match batching {
                Batching::SharedRight { rows } => {
                    if let Some(ga) = ga.as_mut() {
                        gemm(g, MatView::dense(rows, n), &db, opb_t, ga, k, 0.0);
                    }
                    if let Some(gb) = gb.as_mut() {
                        grad_b(&da, MatView::dense(rows, k), g, MatView::dense(rows, n), gb, 0.0);
                    }
                }
                Batching::SharedLeft { batches } | Batching::Paired { batches } => {
                    let shared = matches!(batching, Batching::SharedLeft { .. });
                    let a_step = if shared { 0 } else { m * k };
                    for i in 0..batches {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        if let Some(ga) = ga.as_mut() {
                            let beta = if shared && i > 0 { 1.0 } else { 0.0 };
                            gemm(gi, MatView::dense(m, n), &db[i * k * n..], opb_t, &mut ga[i * a_step..], k, beta);
                        }
                        if let Some(gb) = gb.as_mut() {
                            grad_b(
                                &da[i * a_step..],
                                MatView::dense(m, k),
                                gi,
                                MatView::dense(m, n),
                                &mut gb[i * k * n..],
                                0.0,
                            );
                        }
                    }
                }
            }
            vec![ga, gb]
        }),
    ))
}

fn affine_impl(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] || b.shape() != [sw[1]] {
        return Err(TensorError::shape("affine", sx, sw));
    }
    let (k, n) = (sw[0], sw[1]);
    let rows = x.numel() / k;
    let mut out_shape = sx.to_vec();
    *out_shape.last_mut().expect("rank >= 1") = n;
    let mut out = Buffer::zeros(rows * n);
    {
        let bias = b.data();
        out.chunks_exact_mut(n).for_each(|row| row.copy_from_slice(&bias));
        gemm(&x.data(), MatView::dense(rows, k), &w.data(), MatView::dense(k, n), &mut out, n, 1.0);
    }
    counters::add_dense((rows * k * n) as u64);
    let (tx, tw) = (x.clone(), w.clone());
    Ok(Tensor::from_op(
        out_shape,
        out,
        &[x, w, b],
        Box::new(move |g, needs| {
            let gv = MatView::dense(rows, n);
            let gx = needs[0].then(|| {
                let mut gx = Buffer::zeros(rows * k);
                gemm(g, gv, &tw.data(), MatView::dense(k, n).t(), &mut gx, k, 0.0);
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = Buffer::zeros(k * n);
                gemm(&tx.data(), MatView::dense(rows, k).t(), g, gv, &mut gw, n, 0.0);
                gw
            });
            let gb = needs[2].then(|| {
                let mut gb = Buffer::zeros(n);
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}

impl Tensor {
    /// Matrix product over the last two axes.
    ///
    /// Leading (batch) axes must either match exactly or be absent on one
    /// side, in which case that operand is shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_impl(self, other, false)
    }

    /// `self · otherᵀ` over the last two axes, without materialising the
    /// transpose.
    pub fn matmul_bt(&self, other: &Tensor) -> Result<Tensor> {
        matmul_impl(self, other, true)
    }

    /// `self · weight + bias` for `self` of shape `[.., k]`, `weight`
    /// `[k, n]` and `bias` `[n]`, as one op.
    pub fn affine(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        affine_impl(self, weight, bias)
    }
}
