//! The dispatcher layer: gated shift-and-sum mixing over power-of-two
//! offsets.
//!
//! Row `r` adds to every position `p` a gated copy of the state at
//! `p - 2^r`. After rows `0..R` position `p` has received contributions from
//! every earlier position along the binary decomposition of the gap, in
//! `R = ceil(log2 N)` rows and `O(N d log N)` work.

use dispatcher_tensor::{counters, Buffer, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Linear;

/// Number of shift-and-sum rows for a sequence of `n` tokens: rows run
/// while `2^r < n`.
pub fn num_rows(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::contract("num_rows", "sequence length must be at least 1"));
    }
    Ok((usize::BITS - (n - 1).leading_zeros()) as usize)
}

/// Constant gate mask: `mask[r][p] = 1` iff `p >= 2^r`, which zeroes exactly
/// the positions whose rotation source wrapped around the sequence end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalShiftMask {
    rows: usize,
    len: usize,
}

impl CausalShiftMask {
    /// `rows` must equal `num_rows(len)`.
    pub fn new(len: usize, rows: usize) -> Result<Self> {
        let expected = num_rows(len)?;
        if rows != expected {
            return Err(Error::contract(
                "build_causal_mask",
                format!("{rows} rows given for length {len}, expected {expected}"),
            ));
        }
        Ok(Self { rows, len })
    }

    pub fn for_len(len: usize) -> Result<Self> {
        Self::new(len, num_rows(len)?)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn get(&self, row: usize, position: usize) -> bool {
        row < self.rows && position < self.len && position >= 1 << row
    }

    /// The mask as `[R][N]` zeros and ones.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|r| (0..self.len).map(|p| u8::from(self.get(r, p))).collect())
            .collect()
    }

    /// The mask in gate layout `[N, capacity * heads]`, column `r * heads + h`.
    /// Rows at or beyond `self.rows()` are zero.
    pub fn gate_tensor(&self, capacity: usize, heads: usize) -> Tensor {
        let width = capacity * heads;
        let mut data = vec![0.0; self.len * width];
        for p in 0..self.len {
            for r in 0..self.rows.min(capacity) {
                if self.get(r, p) {
                    data[p * width + r * heads..][..heads].fill(1.0);
                }
            }
        }
        Tensor::new(&[self.len, width], data).expect("non-empty mask")
    }
}

/// Which rows run on a given step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDropoutMask {
    keep: Vec<bool>,
}

impl RowDropoutMask {
    /// Every row kept, as in evaluation.
    pub fn keep_all(rows: usize) -> Self {
        Self { keep: vec![true; rows] }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Drop each of `rows` rows independently with probability `p`.
pub fn sample_row_mask<R: Rng + ?Sized>(rows: usize, p: f64, rng: &mut R) -> Result<RowDropoutMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract("sample_row_mask", format!("probability {p} outside [0, 1]")));
    }
    Ok(RowDropoutMask {
        keep: (0..rows).map(|_| rng.random::<f64>() >= p).collect(),
    })
}

struct MixGeometry {
    batches: usize,
    len: usize,
    width: usize,
    heads: usize,
    head_width: usize,
    gate_width: usize,
}

fn mix_geometry(v: &Tensor, gates: &Tensor, mask: &CausalShiftMask, heads: usize, keep: &RowDropoutMask) -> Result<MixGeometry> {
    let shape = v.shape();
    let mismatch = || {
        Error::Tensor(dispatcher_tensor::TensorError::Shape {
            op: "dispatch_mix",
            lhs: shape.to_vec(),
            rhs: gates.shape().to_vec(),
        })
    };
    if shape.len() < 2 || gates.rank() != shape.len() || gates.shape()[..shape.len() - 1] != shape[..shape.len() - 1] {
        return Err(mismatch());
    }
    let (len, width) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let gate_width = gates.shape()[shape.len() - 1];
    if heads == 0 || !width.is_multiple_of(heads) || !gate_width.is_multiple_of(heads) || gate_width / heads < mask.rows() {
        return Err(mismatch());
    }
    if mask.len() != len || keep.keep().len() != mask.rows() {
        return Err(Error::contract(
            "dispatch_mix",
            format!(
                "mask covers {} positions and {} rows, keep has {} rows, sequence has {len} positions",
                mask.len(),
                mask.rows(),
                keep.keep().len()
            ),
        ));
    }
    Ok(MixGeometry {
        batches: v.numel() / (len * width),
        len,
        width,
        heads,
        head_width: width / heads,
        gate_width,
    })
}

/// The shift-and-sum loop: for each kept row `r` in ascending order,
/// `v <- v + c[r] ⊙ roll_right(v, 2^r)`.
///
/// `gates` has shape `[.., N, G]` with the gate for row `r`, head `h` in
/// column `r * heads + h`; it must already be sigmoid-activated and masked.
/// Head `h` gates the channel slice `h*d/H .. (h+1)*d/H` of `v`.
///
/// Records `R_kept * N * d` mixing multiply-adds per sequence. When every
/// wrapped gate is zero (the masked case) the backward pass keeps only the
/// final state and recovers earlier ones by forward substitution, so memory
/// stays `O(N d)`; otherwise it keeps one state per kept row.
pub fn dispatch_mix(v: &Tensor, gates: &Tensor, mask: &CausalShiftMask, heads: usize, keep: &RowDropoutMask) -> Result<Tensor> {
    let geo = mix_geometry(v, gates, mask, heads, keep)?;
    let rows: Vec<usize> = (0..mask.rows()).filter(|&r| keep.keep()[r]).collect();
    let mut state = v.data().clone();
    let saved = {
        let g = gates.data();
        if rows.iter().all(|&r| wrapped_gates_are_zero(&g, &geo, r)) {
            for &r in &rows {
                shift_add_in_place(&mut state, &g, &geo, r);
            }
            Saved::Final(state.clone())
        } else {
            let mut history = Vec::with_capacity(rows.len());
            for &r in &rows {
                let prev = state.clone();
                shift_add(&mut state, &prev, &g, &geo, r);
                history.push(prev);
            }
            Saved::History(history)
        }
    };
    counters::add_mixing((rows.len() * geo.batches * geo.len * geo.width) as u64);
    let gates_saved = gates.clone();
    Ok(Tensor::from_op(
        v.shape().to_vec(),
        state,
        &[v, gates],
        Box::new(move |dout, needs| {
            let g = gates_saved.data();
            let mut d = Buffer::from_slice(dout);
            let mut dgates = needs[1].then(|| Buffer::zeros(g.len()));
            match saved {
                Saved::Final(mut cur) => {
                    for &r in rows.iter().rev() {
                        if let Some(dg) = dgates.as_mut() {
                            unshift_in_place(&mut cur, &g, &geo, r);
                            gate_grad(dg, &d, &cur, &geo, r);
                        }
                        shift_add_transposed(&mut d, &g, &geo, r);
                    }
                }
                Saved::History(history) => {
                    for (&r, prev) in rows.iter().zip(history).rev() {
                        if let Some(dg) = dgates.as_mut() {
                            gate_grad(dg, &d, &prev, &geo, r);
                        }
                        drop(prev);
                        shift_add_transposed(&mut d, &g, &geo, r);
                    }
                }
            }
            vec![needs[0].then_some(d), dgates]
        }),
    ))
}

enum Saved {
    Final(Buffer),
    History(Vec<Buffer>),
}

fn gate_row<'a>(gates: &'a [f64], geo: &MixGeometry, b: usize, p: usize, r: usize) -> &'a [f64] {
    &gates[(b * geo.len + p) * geo.gate_width + r * geo.heads..][..geo.heads]
}

/// Whether row `r` has zero gates at every position whose source wraps.
fn wrapped_gates_are_zero(gates: &[f64], geo: &MixGeometry, r: usize) -> bool {
    (0..geo.batches).all(|b| (0..(1 << r).min(geo.len)).all(|p| gate_row(gates, geo, b, p, r).iter().all(|&c| c == 0.0)))
}

/// Row `r` in place, sweeping positions downwards so every source is read
/// before it is updated. Requires zero wrapped gates.
fn shift_add_in_place(state: &mut [f64], gates: &[f64], geo: &MixGeometry, r: usize) {
    let (n, w, hw) = (geo.len, geo.width, geo.head_width);
    let shift = 1 << r;
    for b in 0..geo.batches {
        let block = &mut state[b * n * w..(b + 1) * n * w];
        for p in (shift..n).rev() {
            let (lo, hi) = block.split_at_mut(p * w);
            let src = &lo[(p - shift) * w..];
            for (h, &c) in gate_row(gates, geo, b, p, r).iter().enumerate() {
                if c != 0.0 {
                    hi[h * hw..(h + 1) * hw].iter_mut().zip(&src[h * hw..(h + 1) * hw]).for_each(|(t, s)| *t += c * s);
                }
            }
        }
    }
}

/// Inverse of [`shift_add_in_place`]: sweeping upwards, each source has
/// already been restored when it is subtracted.
fn unshift_in_place(state: &mut [f64], gates: &[f64], geo: &MixGeometry, r: usize) {
    let (n, w, hw) = (geo.len, geo.width, geo.head_width);
    let shift = 1 << r;
    for b in 0..geo.batches {
        let block = &mut state[b * n * w..(b + 1) * n * w];
        for p in shift..n {
            let (lo, hi) = block.split_at_mut(p * w);
            let src = &lo[(p - shift) * w..];
            for (h, &c) in gate_row(gates, geo, b, p, r).iter().enumerate() {
                if c != 0.0 {
                    hi[h * hw..(h + 1) * hw].iter_mut().zip(&src[h * hw..(h + 1) * hw]).for_each(|(t, s)| *t -= c * s);
                }
            }
        }
    }
}

/// `state[p] += c[p, r] ⊙ prev[p - 2^r]`, circular.
fn shift_add(state: &mut [f64], prev: &[f64], gates: &[f64], geo: &MixGeometry, r: usize) {
    let (n, w, hw) = (geo.len, geo.width, geo.head_width);
    let shift = 1 << r;
    for b in 0..geo.batches {
        let base = b * n * w;
        for p in 0..n {
            let src = base + (p + n - shift) % n * w;
            let dst = base + p * w;
            let row_gates = gate_row(gates, geo, b, p, r);
            for (h, &c) in row_gates.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (s, t) = (&prev[src + h * hw..][..hw], &mut state[dst + h * hw..][..hw]);
                t.iter_mut().zip(s).for_each(|(t, s)| *t += c * s);
            }
        }
    }
}

/// Adjoint of one row: `d[q] += c[q + 2^r, r] ⊙ d[q + 2^r]`, reading the
/// incoming `d` throughout.
fn shift_add_transposed(d: &mut [f64], gates: &[f64], geo: &MixGeometry, r: usize) {
    let (n, w, hw) = (geo.len, geo.width, geo.head_width);
    let shift = 1 << r;
    let mut head = vec![0.0; shift.min(n) * w];
    for b in 0..geo.batches {
        let base = b * n * w;
        // Targets at q >= n - shift read positions 0..shift, which are
        // overwritten earlier in the ascending sweep.
        head.copy_from_slice(&d[base..base + shift.min(n) * w]);
        for q in 0..n {
            let p = (q + shift) % n;
            let row_gates = gate_row(gates, geo, b, p, r);
            for (h, &c) in row_gates.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let dst = base + q * w + h * hw;
                let src = p * w + h * hw;
                if p < shift {
                    let s = &head[src..src + hw];
                    d[dst..dst + hw].iter_mut().zip(s).for_each(|(t, s)| *t += c * s);
                } else {
                    let (lo, hi) = d.split_at_mut(base + src);
                    lo[dst..dst + hw].iter_mut().zip(&hi[..hw]).for_each(|(t, s)| *t += c * s);
                }
            }
        }
    }
}

/// `dc[p, r, h] += Σ_{channels of h} d[p] · prev[p - 2^r]`.
fn gate_grad(dg: &mut [f64], d: &[f64], prev: &[f64], geo: &MixGeometry, r: usize) {
    let (n, w, hw) = (geo.len, geo.width, geo.head_width);
    let shift = 1 << r;
    for b in 0..geo.batches {
        let base = b * n * w;
        for p in 0..n {
            let src = base + (p + n - shift) % n * w;
            let dst = base + p * w;
            for h in 0..geo.heads {
                let dot: f64 = d[dst + h * hw..][..hw].iter().zip(&prev[src + h * hw..][..hw]).map(|(a, b)| a * b).sum();
                dg[(b * n + p) * geo.gate_width + r * geo.heads + h] += dot;
            }
        }
    }
}

/// The same loop written with generic tensor ops (roll, slice, broadcast
/// multiply, add). Slower and memory hungrier than [`dispatch_mix`]; kept
/// as a cross-check.
pub fn dispatch_mix_reference(v: &Tensor, gates: &Tensor, mask: &CausalShiftMask, heads: usize, keep: &RowDropoutMask) -> Result<Tensor> {
    let geo = mix_geometry(v, gates, mask, heads, keep)?;
    let lead = &v.shape()[..v.rank() - 1];
    let mut state = v.clone();
    for r in (0..mask.rows()).filter(|&r| keep.keep()[r]) {
        let gate = gates.narrow(gates.rank() - 1, r * heads, heads)?;
        let mut split = lead.to_vec();
        split.extend([heads, geo.head_width]);
        let mut gate_shape = lead.to_vec();
        gate_shape.extend([heads, 1]);
        let rolled = state.roll_right(1 << r).reshape(&split)?;
        let update = rolled.mul(&gate.reshape(&gate_shape)?)?.reshape(v.shape())?;
        state = state.add(&update)?;
    }
    Ok(state)
}

/// The three maps of one dispatcher layer.
#[derive(Debug, Clone)]
pub struct DispatcherParams {
    /// `d -> R_max * H` gate logits.
    pub linear1: Linear,
    /// `d -> d` value projection.
    pub linear2: Linear,
    /// `d -> d` output projection.
    pub linear3: Linear,
    pub heads: usize,
    pub max_rows: usize,
    pub max_seq: usize,
}

impl DispatcherParams {
    pub fn new<R: Rng + ?Sized>(width: usize, heads: usize, max_seq: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::config("n_heads", format!("width {width} is not divisible by {heads} heads")));
        }
        let max_rows = num_rows(max_seq)?;
        Ok(Self {
            linear1: Linear::new(width, (max_rows * heads).max(1), rng),
            linear2: Linear::new(width, width, rng),
            linear3: Linear::new(width, width, rng),
            heads,
            max_rows,
            max_seq,
        })
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.linear1.collect(&format!("{prefix}.linear1"), out);
        self.linear2.collect(&format!("{prefix}.linear2"), out);
        self.linear3.collect(&format!("{prefix}.linear3"), out);
    }

    /// Sigmoid gates with the causal mask applied, `[.., N, R_max * H]`.
    pub fn gates(&self, input: &Tensor) -> Result<Tensor> {
        let len = input.shape()[input.rank() - 2];
        let mask = CausalShiftMask::for_len(len)?;
        let capacity = self.linear1.outputs() / self.heads;
        Ok(self.linear1.forward(input)?.sigmoid().mul(&mask.gate_tensor(capacity, self.heads))?)
    }

    /// Layer output with the given rows kept.
    pub fn forward_with(&self, input: &Tensor, keep: &RowDropoutMask) -> Result<Tensor> {
        let len = sequence_len(input)?;
        if len > self.max_seq {
            return Err(Error::Capacity { len, max: self.max_seq });
        }
        let mask = CausalShiftMask::for_len(len)?;
        let gates = self.gates(input)?;
        let v = self.linear2.forward(input)?;
        self.linear3.forward(&dispatch_mix(&v, &gates, &mask, self.heads, keep)?)
    }
}

fn sequence_len(input: &Tensor) -> Result<usize> {
    if input.rank() < 2 {
        return Err(Error::contract("dispatcher_forward", format!("input of shape {:?} has no sequence axis", input.shape())));
    }
    Ok(input.shape()[input.rank() - 2])
}

/// One dispatcher layer over `[.., N, d]`. In training mode a fresh row
/// mask is drawn from `rng` and shared by every sequence in the batch; kept
/// rows are not rescaled.
pub fn dispatcher_forward<R: Rng + ?Sized>(input: &Tensor, params: &DispatcherParams, training: bool, dropout_p: f64, rng: &mut R) -> Result<Tensor> {
    let rows = num_rows(sequence_len(input)?)?;
    let keep = if training {
        sample_row_mask(rows, dropout_p, rng)?
    } else {
        RowDropoutMask::keep_all(rows)
    };
    params.forward_with(input, &keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn row_counts() {
        assert!(num_rows(0).is_err());
        let expected = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (512, 9), (513, 10)];
        for (n, r) in expected {
            assert_eq!(num_rows(n).unwrap(), r, "n = {n}");
        }
    }

    #[test]
    fn mask_rows() {
        assert_eq!(CausalShiftMask::for_len(2).unwrap().to_rows(), vec![vec![0, 1]]);
        assert_eq!(
            CausalShiftMask::for_len(4).unwrap().to_rows(),
            vec![vec![0, 1, 1, 1], vec![0, 0, 1, 1]]
        );
        assert!(CausalShiftMask::new(4, 3).is_err());
        let gate = CausalShiftMask::for_len(3).unwrap().gate_tensor(3, 2).to_vec();
        #[rustfmt::skip]
        let expected = vec![
            0., 0., 0., 0., 0., 0.,
            1., 1., 0., 0., 0., 0.,
            1., 1., 1., 1., 0., 0.,
        ];
        assert_eq!(gate, expected);
    }

    #[test]
    fn zero_gates_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random(&mut rng, &[6, 4]);
        let mask = CausalShiftMask::for_len(6).unwrap();
        let out = dispatch_mix(&v, &Tensor::zeros(&[6, 3]), &mask, 1, &RowDropoutMask::keep_all(3)).unwrap();
        assert_eq!(out.to_vec(), v.to_vec());
    }

    #[test]
    fn unit_gates_give_prefix_sums() {
        let v = Tensor::new(&[4, 1], vec![1., 2., 3., 4.]).unwrap();
        let mask = CausalShiftMask::for_len(4).unwrap();
        let gates = mask.gate_tensor(2, 1);
        let out = dispatch_mix(&v, &gates, &mask, 1, &RowDropoutMask::keep_all(2)).unwrap();
        assert_eq!(out.to_vec(), vec![1., 3., 6., 10.]);
    }

    #[test]
    fn fused_matches_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (len, heads, keep) in [(7, 1, vec![true, true, true]), (8, 2, vec![true, false, true]), (5, 3, vec![false, true, true])] {
            let v = random(&mut rng, &[2, len, 6]);
            let mask = CausalShiftMask::for_len(len).unwrap();
            let gates = random(&mut rng, &[2, len, 4 * heads]).mul(&mask.gate_tensor(4, heads)).unwrap();
            let keep = RowDropoutMask::from_keep(keep);
            let fused = dispatch_mix(&v, &gates, &mask, heads, &keep).unwrap().to_vec();
            let composed = dispatch_mix_reference(&v, &gates, &mask, heads, &keep).unwrap().to_vec();
            for (a, b) in fused.iter().zip(&composed) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_gradients_match_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let len = 6;
        let mask = CausalShiftMask::for_len(len).unwrap();
        let raw_gates = random(&mut rng, &[2, len, 6]);
        let masked_gates = raw_gates.mul(&mask.gate_tensor(3, 2)).unwrap();
        let v_data = random(&mut rng, &[2, len, 4]).to_vec();
        let weights = random(&mut rng, &[2, len, 4]);
        // Unmasked gates take the stored-history path and the wrap-around
        // branch of the adjoint; masked ones take the reconstruction path.
        for gates in [raw_gates, masked_gates] {
            for keep in [vec![true, true, true], vec![true, false, true]] {
                let keep = RowDropoutMask::from_keep(keep);
                let run = |fused: bool| {
                    let v = Tensor::param(&[2, len, 4], v_data.clone()).unwrap();
                    let g = Tensor::param(&[2, len, 6], gates.to_vec()).unwrap();
                    let out = if fused {
                        dispatch_mix(&v, &g, &mask, 2, &keep)
                    } else {
                        dispatch_mix_reference(&v, &g, &mask, 2, &keep)
                    }
                    .unwrap();
                    out.mul(&weights).unwrap().sum().backward().unwrap();
                    (v.grad().unwrap(), g.grad().unwrap())
                };
                let (a, b) = (run(true), run(false));
                for (x, y) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn counts_mixing_work() {
        let mask = CausalShiftMask::for_len(10).unwrap();
        let v = Tensor::zeros(&[3, 10, 4]);
        let gates = Tensor::zeros(&[3, 10, 4]);
        counters::reset();
        dispatch_mix(&v, &gates, &mask, 1, &RowDropoutMask::from_keep(vec![true, false, true, true])).unwrap();
        assert_eq!(counters::snapshot().mixing, 3 * 3 * 10 * 4);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mask = CausalShiftMask::for_len(4).unwrap();
        let keep = RowDropoutMask::keep_all(2);
        let v = Tensor::zeros(&[4, 6]);
        assert!(dispatch_mix(&v, &Tensor::zeros(&[3, 2]), &mask, 1, &keep).is_err());
        assert!(dispatch_mix(&v, &Tensor::zeros(&[4, 1]), &mask, 1, &keep).is_err());
        assert!(dispatch_mix(&v, &Tensor::zeros(&[4, 4]), &mask, 4, &keep).is_err());
        assert!(dispatch_mix(&v, &Tensor::zeros(&[4, 2]), &mask, 1, &RowDropoutMask::keep_all(3)).is_err());
    }

    #[test]
    fn row_mask_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_row_mask(5, 0.0, &mut rng).unwrap().kept(), 5);
        assert_eq!(sample_row_mask(5, 1.0, &mut rng).unwrap().kept(), 0);
        assert!(sample_row_mask(5, -0.1, &mut rng).is_err());
        let kept = sample_row_mask(10_000, 0.5, &mut rng).unwrap().kept();
        assert!((kept as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    #[test]
    fn single_token_is_a_per_token_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = DispatcherParams::new(4, 2, 16, &mut rng).unwrap();
        let x = random(&mut rng, &[1, 4]);
        let out = dispatcher_forward(&x, &params, false, 0.0, &mut rng).unwrap();
        let direct = params.linear3.forward(&params.linear2.forward(&x).unwrap()).unwrap();
        assert_eq!(out.to_vec(), direct.to_vec());
        let long = random(&mut rng, &[17, 4]);
        assert!(matches!(
            dispatcher_forward(&long, &params, false, 0.0, &mut rng),
            Err(Error::Capacity { len: 17, max: 16 })
        ));
    }
}
