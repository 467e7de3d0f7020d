use rand::Rng;

use crate::layer::{self, Layer};
use crate::tensor::{Scalar, Tensor};
use crate::{NnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F = f32> {
    pub name: String,
    pub value: Tensor<F>,
}

/// A layer list over a fixed input shape, with its parameters.
///
/// The activation list has one entry per layer plus the input, so activation
/// `i` is the input of layer `i` and activation `i + 1` is its output.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F = f32> {
    layers: Vec<Layer>,
    params: Vec<Param<F>>,
    /// Index of the layer's first parameter in `params`.
    param_offset: Vec<usize>,
    act_shapes: Vec<Vec<usize>>,
}

/// Parameter and input gradients from one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F = f32> {
    /// Aligned with [`Network::params`].
    pub params: Vec<Tensor<F>>,
    pub input: Tensor<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        Self {
            params: net.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            input: Tensor::zeros(net.input_shape()),
        }
    }
}

impl<F: Scalar> Network<F> {
    /// Build a network and draw every parameter uniformly from
    /// `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(layers: Vec<Layer>, input_shape: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::with_zero_params(layers, input_shape)?;
        let fans = net.fan_ins();
        for (p, fan) in net.params.iter_mut().zip(fans) {
            let bound = (1.0 / fan.max(1) as f64).sqrt();
            for v in p.value.data_mut() {
                *v = F::from_f64(rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    pub fn with_zero_params(layers: Vec<Layer>, input_shape: &[usize]) -> Result<Self> {
        if input_shape.is_empty() || input_shape.len() > 4 {
            return Err(NnError::Shape(format!("unsupported input shape {input_shape:?}")));
        }
        let mut act_shapes = vec![input_shape.to_vec()];
        let mut params = Vec::new();
        let mut param_offset = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let (out, pshapes, _) = l.infer(i, &act_shapes[i], &act_shapes)?;
            param_offset.push(params.len());
            for (j, s) in pshapes.iter().enumerate() {
                let suffix = if j == 0 { "weight" } else { "bias" };
                params.push(Param {
                    name: format!("{i}.{suffix}"),
                    value: Tensor::zeros(s),
                });
            }
            act_shapes.push(out);
        }
        Ok(Self {
            layers,
            params,
            param_offset,
            act_shapes,
        })
    }

    fn fan_ins(&self) -> Vec<usize> {
        let mut fans = Vec::with_capacity(self.params.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (_, pshapes, fan) = l.infer(i, &self.act_shapes[i], &self.act_shapes).expect("validated at construction");
            fans.extend(std::iter::repeat_n(fan, pshapes.len()));
        }
        fans
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.act_shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.act_shapes.last().expect("input shape always present")
    }

    /// Zero the parameters of layer `index` (used for zero-initialized heads).
    pub fn zero_layer(&mut self, index: usize) {
        let start = self.param_offset[index];
        let end = self.param_offset.get(index + 1).copied().unwrap_or(self.params.len());
        for p in &mut self.params[start..end] {
            p.value.data_mut().fill(F::zero());
        }
    }

    /// Convert every parameter to another element type.
    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            param_offset: self.param_offset.clone(),
            act_shapes: self.act_shapes.clone(),
        }
    }

    /// Replace parameter values, matching by name and shape.
    pub fn load_params(&mut self, values: &[(String, Tensor<F>)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(values) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter `{}` {:?} does not match record `{name}` {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    fn layer_params(&self, i: usize) -> &[Param<F>] {
        let start = self.param_offset[i];
        let end = self.param_offset.get(i + 1).copied().unwrap_or(self.params.len());
        &self.params[start..end]
    }

    fn run(&self, x: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        if x.shape() != self.input_shape() {
            return Err(NnError::Layer {
                layer: 0,
                kind: self.layers.first().map(Layer::kind).unwrap_or("input"),
                detail: format!("expected input {:?}, got {:?}", self.input_shape(), x.shape()),
            });
        }
        let mut acts: Vec<Tensor<F>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let a = &acts[i];
            let p = self.layer_params(i);
            let y = match l {
                Layer::Affine { .. } => layer::affine_forward(a, &p[0].value, &p[1].value, &self.act_shapes[i + 1]),
                Layer::Conv2d { stride, .. } => layer::conv_forward(a, &p[0].value, &p[1].value, *stride),
                Layer::Silu => layer::silu_forward(a),
                Layer::TemporalMix => layer::temporal_forward(a, &p[0].value, &p[1].value),
                Layer::MeanPool(axis) => layer::pool_forward(a, *axis),
                Layer::Concat { with } => a.concat_channels(&acts[*with])?,
            };
            acts.push(y);
        }
        Ok(acts)
    }

    /// Inference forward pass.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut acts = self.run(x)?;
        let y = acts.pop().expect("at least the input");
        if !y.is_finite() {
            return Err(NnError::NonFinite("forward".into()));
        }
        Ok(y)
    }

    /// Output of the last `n` layers removed, i.e. activation `len - n`.
    pub fn forward_truncated(&self, x: &Tensor<F>, drop_last: usize) -> Result<Tensor<F>> {
        let mut acts = self.run(x)?;
        let keep = acts.len() - drop_last.min(self.layers.len());
        acts.truncate(keep);
        Ok(acts.pop().expect("at least the input"))
    }

    pub fn tape(&self) -> Tape<'_, F> {
        Tape { net: self, acts: None }
    }

    fn backward_from(&self, acts: &[Tensor<F>], upstream: &Tensor<F>) -> Result<Gradients<F>> {
        if upstream.shape() != self.output_shape() {
            return Err(NnError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                self.output_shape()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut act_grads: Vec<Option<Tensor<F>>> = vec![None; acts.len()];
        act_grads[acts.len() - 1] = Some(upstream.clone());

        for i in (0..self.layers.len()).rev() {
            let g = match act_grads[i + 1].take() {
                Some(g) => g,
                None => continue,
            };
            let x = &acts[i];
            let off = self.param_offset[i];
            let p = self.layer_params(i);
            let dx = match &self.layers[i] {
                Layer::Affine { .. } => {
                    let (dw, rest) = grads.params[off..].split_first_mut().expect("weight");
                    layer::affine_backward(x, &p[0].value, &g, dw, &mut rest[0])
                }
                Layer::Conv2d { stride, .. } => {
                    let (dw, rest) = grads.params[off..].split_first_mut().expect("weight");
                    layer::conv_backward(x, &p[0].value, &g, *stride, dw, &mut rest[0])
                }
                Layer::Silu => layer::silu_backward(x, &g),
                Layer::TemporalMix => {
                    let (dw, rest) = grads.params[off..].split_first_mut().expect("weight");
                    layer::temporal_backward(x, &p[0].value, &g, dw, &mut rest[0])
                }
                Layer::MeanPool(axis) => layer::pool_backward(x.shape(), &g, *axis),
                Layer::Concat { with } => {
                    let (ga, gb) = layer::concat_backward(&g, x.shape(), acts[*with].shape());
                    accumulate(&mut act_grads[*with], gb)?;
                    ga
                }
            };
            accumulate(&mut act_grads[i], dx)?;
        }
        grads.input = act_grads[0].take().unwrap_or_else(|| Tensor::zeros(self.input_shape()));
        Ok(grads)
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Activation cache for one forward/backward invocation.
///
/// Each tape owns its cache, so distinct tapes over the same network can run
/// on different threads.
pub struct Tape<'n, F: Scalar = f32> {
    net: &'n Network<F>,
    acts: Option<Vec<Tensor<F>>>,
}

impl<F: Scalar> Tape<'_, F> {
    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let acts = self.net.run(x)?;
        let y = acts.last().expect("at least the input").clone();
        if !y.is_finite() {
            return Err(NnError::NonFinite("forward".into()));
        }
        self.acts = Some(acts);
        Ok(y)
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<Gradients<F>> {
        let acts = self.acts.as_ref().ok_or(NnError::Protocol("backward called before forward"))?;
        self.net.backward_from(acts, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::PoolAxis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine_net(w: &[f64], b: &[f64], din: usize, dout: usize) -> Network<f64> {
        let mut net = Network::with_zero_params(vec![Layer::Affine { out_shape: vec![dout] }], &[1, din]).unwrap();
        net.params_mut()[0].value = Tensor::from_f64_slice(&[dout, din], w).unwrap();
        net.params_mut()[1].value = Tensor::from_f64_slice(&[dout], b).unwrap();
        net
    }

    #[test]
    fn identity_affine() {
        let net = affine_net(&[1., 0., 0., 0., 1., 0., 0., 0., 1.], &[0.; 3], 3, 3);
        let x = Tensor::from_f64_slice(&[1, 3], &[1., 2., 3.]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let layers = vec![
            Layer::Conv2d {
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
            Layer::Silu,
            Layer::MeanPool(PoolAxis::Spatial),
            Layer::Affine { out_shape: vec![5] },
        ];
        let net = Network::<f32>::with_zero_params(layers, &[2, 1, 6, 6]).unwrap();
        let x = Tensor::full(&[2, 1, 6, 6], 0.7);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_matches_hand_product() {
        // y = W2 (W1 x + b1) + b2 with W1 = [[1,2],[3,4]], b1 = [1,-1],
        // W2 = [[0.5,-1],[2,0]], b2 = [0,1], x = [1,-2]:
        // W1 x + b1 = [-3+1, -5-1] = [-2, -6]
        // W2 h + b2 = [-1+6, -4+1] = [5, -3]
        let layers = vec![Layer::Affine { out_shape: vec![2] }, Layer::Affine { out_shape: vec![2] }];
        let mut net = Network::<f64>::with_zero_params(layers, &[1, 2]).unwrap();
        let vals = [
            ("0.weight", vec![2, 2], vec![1., 2., 3., 4.]),
            ("0.bias", vec![2], vec![1., -1.]),
            ("1.weight", vec![2, 2], vec![0.5, -1., 2., 0.]),
            ("1.bias", vec![2], vec![0., 1.]),
        ];
        let recs: Vec<_> = vals.iter().map(|(n, s, d)| (n.to_string(), Tensor::from_f64_slice(s, d).unwrap())).collect();
        net.load_params(&recs).unwrap();
        let y = net.forward(&Tensor::from_f64_slice(&[1, 2], &[1., -2.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[5., -3.]);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let net = affine_net(&[1., 2., 3., 4.], &[0., 0.], 2, 2);
        let mut tape = net.tape();
        tape.forward(&Tensor::from_f64_slice(&[1, 2], &[3., 5.]).unwrap()).unwrap();
        let g = tape.backward(&Tensor::from_f64_slice(&[1, 2], &[1., -2.]).unwrap()).unwrap();
        assert_eq!(g.params[0].data(), &[3., 5., -6., -10.]);
        assert_eq!(g.params[1].data(), &[1., -2.]);
        // dx = W^T u = [1 - 6, 2 - 8]
        assert_eq!(g.input.data(), &[-5., -6.]);
    }

    #[test]
    fn backward_before_forward_is_rejected() {
        let net = affine_net(&[1.], &[0.], 1, 1);
        let tape = net.tape();
        let err = tape.backward(&Tensor::zeros(&[1, 1])).unwrap_err();
        assert!(matches!(err, NnError::Protocol(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layers = vec![
            Layer::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
            },
            Layer::Silu,
            Layer::TemporalMix,
            Layer::Concat { with: 0 },
            Layer::Affine { out_shape: vec![3] },
        ];
        let net = Network::<f64>::new(layers, &[3, 2, 4, 4], &mut rng).unwrap();
        let x = Tensor::full(&[3, 2, 4, 4], 0.3);
        let mut tape = net.tape();
        tape.forward(&x).unwrap();
        let g = tape.backward(&Tensor::zeros(&[3, 3])).unwrap();
        assert!(g.params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let net = Network::<f32>::with_zero_params(
            vec![Layer::Conv2d {
                out_channels: 1,
                kernel: 3,
                stride: 1,
            }],
            &[1, 1, 4, 4],
        )
        .unwrap();
        let msg = net.forward(&Tensor::zeros(&[1, 2, 4, 4])).unwrap_err().to_string();
        assert!(msg.contains("conv2d"), "{msg}");
        let bad = Network::<f32>::with_zero_params(vec![Layer::Silu, Layer::Concat { with: 5 }], &[1, 1, 2, 2]);
        assert!(bad.unwrap_err().to_string().contains("layer 1 (concat)"));
    }

    #[test]
    fn composition_equals_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = vec![
            Layer::Conv2d {
                out_channels: 4,
                kernel: 3,
                stride: 2,
            },
            Layer::Silu,
        ];
        let b = vec![Layer::TemporalMix, Layer::MeanPool(PoolAxis::Spatial), Layer::Affine { out_shape: vec![2] }];
        let mut all = a.clone();
        all.extend(b.clone());
        let full = Network::<f64>::new(all, &[3, 2, 6, 6], &mut rng).unwrap();
        let mut na = Network::<f64>::with_zero_params(a, &[3, 2, 6, 6]).unwrap();
        let mid = na.output_shape().to_vec();
        let mut nb = Network::<f64>::with_zero_params(b, &mid).unwrap();
        let recs: Vec<_> = full.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        na.load_params(&recs[..2]).unwrap();
        let renamed: Vec<_> = recs[2..]
            .iter()
            .map(|(n, t)| {
                let (idx, rest) = n.split_once('.').unwrap();
                (format!("{}.{rest}", idx.parse::<usize>().unwrap() - 2), t.clone())
            })
            .collect();
        nb.load_params(&renamed).unwrap();
        let x = Tensor::from_vec(&[3, 2, 6, 6], (0..216).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(full.forward(&x).unwrap(), nb.forward(&na.forward(&x).unwrap()).unwrap());
    }
}
