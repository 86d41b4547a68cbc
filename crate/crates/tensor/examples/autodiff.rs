//! Reverse-mode differentiation of a small expression, checked against the
//! hand-derived gradient.

use dispatcher_tensor::Tensor;

fn main() -> dispatcher_tensor::Result<()> {
    // loss = sum(sigmoid(x W) * x W)
    let x = Tensor::param(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?;
    let w = Tensor::param(&[3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6])?;
    let h = x.matmul(&w)?;
    let loss = h.sigmoid().mul(&h)?.sum();
    loss.backward()?;

    let hv = x.matmul(&w)?.to_vec();
    // d/dh [σ(h) h] = σ(h) + h σ(h)(1 - σ(h))
    let dh: Vec<f64> = hv
        .iter()
        .map(|&h| {
            let s = 1.0 / (1.0 + (-h).exp());
            s + h * s * (1.0 - s)
        })
        .collect();
    // dL/dx = dL/dh · Wᵀ
    let wv = w.to_vec();
    let dx: Vec<f64> = (0..6).map(|i| (0..2).map(|k| dh[(i / 3) * 2 + k] * wv[(i % 3) * 2 + k]).sum()).collect();
    println!("loss = {:.6}", loss.item());
    println!("dL/dx by hand   = {dx:.6?}");
    println!("dL/dx from tape = {:.6?}", x.grad().expect("x is a parameter"));
    println!("dL/dW from tape = {:.6?}", w.grad().expect("W is a parameter"));
    Ok(())
}
