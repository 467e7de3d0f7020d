use rand::Rng;

use crate::layer::{Layer, PoolAxis};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// Layer types covered by [`random_layer_case`].
pub const LAYER_KINDS: [&str; 7] = ["affine", "conv2d", "silu", "temporal-mix", "mean-pool-spatial", "mean-pool-rows", "concat"];

/// Central-difference gradient of a scalar function, evaluated in `f64`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// A randomly shaped `f64` network exercising one layer type, with extents
/// drawn from `1..=8` per axis, and a random input for it.
pub fn random_layer_case<R: Rng + ?Sized>(kind: &str, rng: &mut R) -> Result<(Network<f64>, Tensor<f64>)> {
    let mut ext = |hi: usize| rng.random_range(1..=hi);
    let shape = vec![ext(8), ext(8), ext(8), ext(8)];
    let layers = match kind {
        "affine" => {
            let out = if ext(2) == 1 { vec![ext(8)] } else { vec![ext(8), ext(8), ext(8)] };
            vec![Layer::Affine { out_shape: out }]
        }
        "conv2d" => vec![Layer::Conv2d {
            out_channels: ext(8),
            kernel: [1, 3, 5][ext(3) - 1],
            stride: ext(2),
        }],
        "silu" => vec![Layer::Silu],
        "temporal-mix" => vec![Layer::TemporalMix],
        "mean-pool-spatial" => vec![Layer::MeanPool(PoolAxis::Spatial)],
        "mean-pool-rows" => vec![Layer::MeanPool(PoolAxis::Rows)],
        // The skip source goes through a nonlinearity so both concat inputs
        // carry distinct gradients back to the network input.
        "concat" => vec![Layer::Silu, Layer::Concat { with: 0 }],
        other => panic!("unknown layer kind {other}"),
    };
    let net = Network::new(layers, &shape, &mut *rng)?;
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
    Ok((net, x))
}

/// Compare backward-pass gradients of `sum(r * net(x))` for a random `r`
/// against central differences; returns the largest relative error over all
/// parameters and the input.
pub fn check_network<R: Rng + ?Sized>(net: &Network<f64>, x: &Tensor<f64>, rng: &mut R) -> Result<f64> {
    let out_n: usize = net.output_shape().iter().product();
    let r = Tensor::from_vec(net.output_shape(), (0..out_n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let loss = |n: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = n.forward(x)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    let mut tape = net.tape();
    tape.forward(x)?;
    let grads = tape.backward(&r)?;

    let eps = 1e-5;
    let floor = 1e-4;
    let mut worst = max_relative_error(&grads.input, &finite_diff_grad(|t| loss(net, t), x, eps)?, floor);
    for (i, g) in grads.params.iter().enumerate() {
        let mut probe = net.clone();
        let p0 = net.params()[i].value.clone();
        let numeric = finite_diff_grad(
            |t| {
                probe.params_mut()[i].value = t.clone();
                loss(&probe, x)
            },
            &p0,
            eps,
        )?;
        worst = worst.max(max_relative_error(g, &numeric, floor));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64_slice(&[2], &[1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum_sq_f64()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6 && (g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn product() {
        let x = Tensor::from_f64_slice(&[2], &[3.0, 5.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[1]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 5.0).abs() < 1e-6 && (g.data()[1] - 3.0).abs() < 1e-6);
    }
}
