//! Reverse-mode gradients on a small tape, checked against central
//! differences.
//!
//! cargo run --example autodiff

use gstvqa::autograd::{Graph, Matrix, Reduce};
use ndarray::array;

fn loss(g: &mut Graph, x: &Matrix, w: &Matrix, track: bool) -> gstvqa::Result<(f64, Option<Matrix>)> {
    let xv = g.constant(x.clone())?;
    let wv = if track { g.variable(w.clone())? } else { g.constant(w.clone())? };
    let h = g.matmul(xv, wv)?;
    let h = g.tanh(h)?;
    let h = g.square(h)?;
    let l = g.mean(h, Reduce::All)?;
    let value = g.scalar(l);
    if !track {
        return Ok((value, None));
    }
    let grads = g.backward(l)?;
    Ok((value, grads.get(wv)))
}

fn main() -> gstvqa::Result<()> {
    let x = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
    let w = array![[0.1, -0.3], [0.7, 0.2], [-0.4, 0.9]];

    let (value, grad) = loss(&mut Graph::new(), &x, &w, true)?;
    let grad = grad.expect("w is tracked");
    println!("loss = {value:.6}");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for ((i, j), &analytic) in grad.indexed_iter() {
        let mut up = w.clone();
        up[[i, j]] += h;
        let mut down = w.clone();
        down[[i, j]] -= h;
        let numeric = (loss(&mut Graph::new(), &x, &up, false)?.0
            - loss(&mut Graph::new(), &x, &down, false)?.0)
            / (2.0 * h);
        worst = worst.max((analytic - numeric).abs());
        println!("dL/dw[{i},{j}] = {analytic:+.8}  finite difference {numeric:+.8}");
    }
    println!("largest absolute difference {worst:.2e}");
    Ok(())
}
