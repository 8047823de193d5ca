//! Reverse-mode tape and network tangents: the derivative of a small tanh
//! network along its input, checked against central differences, and the
//! parameter gradient of a squared tangent.
//!
//! `cargo run --example autodiff_network`

use nlpinn::autodiff::{
    accumulate_gradient, forward, forward_with_tangents, init_params, Activation, NetworkSpec, Tape,
};

fn main() -> nlpinn::Result<()> {
    // scalar tape
    let tape = Tape::new();
    let x = tape.var(0.7);
    let y = tape.var(-1.2);
    let f = (x * y).tanh() + x.square().sqrt() * y.exp();
    let g = tape.gradient(f)?;
    println!(
        "f = {:.6}, df/dx = {:.6}, df/dy = {:.6}",
        f.value(),
        g.wrt(x),
        g.wrt(y)
    );

    // network with two inputs and one output
    let spec = NetworkSpec::new(vec![2, 20, 20, 1], Activation::Tanh, 5)?;
    let params = init_params(&spec)?;
    let input = [0.3, -0.4];
    let rec = forward_with_tangents(&params, &input, &[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let h = 1e-6;
    let fd_x = (forward(&params, &[0.3 + h, -0.4])?.outputs[0]
        - forward(&params, &[0.3 - h, -0.4])?.outputs[0])
        / (2.0 * h);
    println!(
        "N = {:.6}, dN/dx = {:.8} (difference quotient {:.8})",
        rec.outputs[0], rec.tangents[0][0], fd_x
    );

    // gradient of (dN/dx)^2 with respect to every weight and bias
    let mut grad = vec![0.0; params.len()];
    let t = rec.tangents[0][0];
    accumulate_gradient(
        &params,
        &rec,
        &[0.0],
        &[vec![2.0 * t], vec![0.0]],
        &mut grad,
    )?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!(
        "{} parameters, |d (dN/dx)^2 / d theta| = {norm:.6e}",
        params.len()
    );
    Ok(())
}
