use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{check_dim, Error, Result};

/// Pre-normalization norms below this are treated as degenerate.
pub const NORM_EPSILON: f64 = 1e-8;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// L2-normalize the final layer output onto the unit sphere.
    pub normalize_output: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Elu,
            normalize_output: false,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize_output = true;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "network dimensions must be >= 1, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// (fan_in, fan_out) for every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn num_layer_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

fn layer_shapes(spec: &MlpSpec) -> Vec<LayerShape> {
    let mut offset = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let shape = LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            shape
        })
        .collect()
}

/// Dense ELU network with a flat parameter vector.
///
/// Layout: for each layer the row-major `out x in` weight matrix followed by
/// its bias, then (policy networks only) a trailing per-dimension log-std.
#[derive(Debug)]
pub struct Mlp {
    spec: MlpSpec,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    log_std_dim: usize,
    id: u64,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self.params.clone(),
            log_std_dim: self.log_std_dim,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

/// Activation record from [`Mlp::forward_cached`], sufficient for an exact backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    pre_norm_norm: f64,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Deliberate gradient bugs used to check that the gradient checker can catch them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    FlipEluDerivative,
}

impl Mlp {
    /// Scaled-uniform init: weights in `±gain·sqrt(3/fan_in)`, zero biases.
    /// Hidden layers use gain `sqrt(2)`; the output layer uses `output_gain`.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Result<Self> {
        Self::build(spec, output_gain, 0, rng)
    }

    /// Network with a trailing state-independent log-std block initialized to `log(1.0)`.
    pub fn new_policy<R: Rng + ?Sized>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Result<Self> {
        let dim = spec.output_dim;
        Self::build(spec, output_gain, dim, rng)
    }

    fn build<R: Rng + ?Sized>(
        spec: MlpSpec,
        output_gain: f64,
        log_std_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let shapes = layer_shapes(&spec);
        let mut params = vec![0.0; spec.num_layer_params() + log_std_dim];
        let n_layers = shapes.len();
        for (l, shape) in shapes.iter().enumerate() {
            let gain = if l + 1 == n_layers {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let bound = gain * (3.0 / shape.fan_in as f64).sqrt();
            for w in &mut params[shape.weight_offset..shape.bias_offset] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(Self::assemble(spec, shapes, params, log_std_dim))
    }

    /// Wraps an existing parameter vector (e.g. loaded from a checkpoint).
    pub fn from_params(spec: MlpSpec, params: Vec<f64>, log_std_dim: usize) -> Result<Self> {
        spec.validate()?;
        check_dim(
            "network parameter vector",
            spec.num_layer_params() + log_std_dim,
            params.len(),
        )?;
        let shapes = layer_shapes(&spec);
        Ok(Self::assemble(spec, shapes, params, log_std_dim))
    }

    fn assemble(spec: MlpSpec, shapes: Vec<LayerShape>, params: Vec<f64>, log_std_dim: usize) -> Self {
        Self {
            spec,
            shapes,
            params,
            log_std_dim,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn log_std_dim(&self) -> usize {
        self.log_std_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access invalidates every outstanding [`ForwardCache`].
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.params.len() - self.log_std_dim..]
    }

    /// Offset of the log-std block inside the flat parameter/gradient vector.
    pub fn log_std_offset(&self) -> usize {
        self.params.len() - self.log_std_dim
    }

    /// Parameter index range `(weights, biases)` of layer `l`.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let s = self.shapes[l];
        (
            s.weight_offset..s.bias_offset,
            s.bias_offset..s.bias_offset + s.fan_out,
        )
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    /// Forward pass without keeping an activation record.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.spec.input_dim, input.len())?;
        let mut x = input.to_vec();
        let n_layers = self.shapes.len();
        for (l, shape) in self.shapes.iter().enumerate() {
            let mut y = self.affine(shape, &x);
            if l + 1 < n_layers {
                for v in &mut y {
                    *v = self.spec.activation.apply(*v);
                }
            }
            x = y;
        }
        if self.spec.normalize_output {
            normalize_in_place(&mut x);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        check_dim("mlp input", self.spec.input_dim, input.len())?;
        let n_layers = self.shapes.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut x = input.to_vec();
        for (l, shape) in self.shapes.iter().enumerate() {
            let pre = self.affine(shape, &x);
            let next = if l + 1 < n_layers {
                pre.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                pre.clone()
            };
            inputs.push(x);
            pre_activations.push(pre);
            x = next;
        }
        let mut pre_norm_norm = 0.0;
        if self.spec.normalize_output {
            pre_norm_norm = normalize_in_place(&mut x);
        }
        Ok(ForwardCache {
            net_id: self.id,
            version: self.version,
            inputs,
            pre_activations,
            pre_norm_norm,
            output: x,
        })
    }

    /// Gradients of `<output_grad, output>` with respect to parameters and input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let input_grad = self.backward_into(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but accumulates parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.backward_impl(cache, output_grad, grads, None)
    }

    #[doc(hidden)]
    pub fn backward_with_fault(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
        fault: Option<BackwardFault>,
    ) -> Result<Vec<f64>> {
        self.backward_impl(cache, output_grad, grads, fault)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
        fault: Option<BackwardFault>,
    ) -> Result<Vec<f64>> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::Usage(
                "activation record is stale or belongs to another network".into(),
            ));
        }
        if cache.inputs.len() != self.shapes.len() {
            return Err(Error::Usage("activation record is incomplete".into()));
        }
        check_dim("mlp output gradient", self.spec.output_dim, output_grad.len())?;
        check_dim("mlp gradient buffer", self.params.len(), grads.len())?;

        let mut delta = if self.spec.normalize_output {
            normalization_backward(&cache.output, cache.pre_norm_norm, output_grad)
        } else {
            output_grad.to_vec()
        };

        for l in (0..self.shapes.len()).rev() {
            let shape = self.shapes[l];
            let x = &cache.inputs[l];
            let w = &self.params[shape.weight_offset..shape.bias_offset];
            let mut input_grad = vec![0.0; shape.fan_in];
            {
                let (gw, gb) = grads[shape.weight_offset..shape.bias_offset + shape.fan_out]
                    .split_at_mut(shape.fan_in * shape.fan_out);
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
                    let grow = &mut gw[o * shape.fan_in..(o + 1) * shape.fan_in];
                    for (g, &xi) in grow.iter_mut().zip(x.iter()) {
                        *g += d * xi;
                    }
                    for (ig, &wi) in input_grad.iter_mut().zip(row.iter()) {
                        *ig += d * wi;
                    }
                }
            }
            if l > 0 {
                let pre = &cache.pre_activations[l - 1];
                for (g, &p) in input_grad.iter_mut().zip(pre.iter()) {
                    let mut deriv = self.spec.activation.derivative(p);
                    if fault == Some(BackwardFault::FlipEluDerivative)
                        && self.spec.activation == Activation::Elu
                    {
                        deriv = -deriv;
                    }
                    *g *= deriv;
                }
            }
            delta = input_grad;
        }
        Ok(delta)
    }

    fn affine(&self, shape: &LayerShape, x: &[f64]) -> Vec<f64> {
        let w = &self.params[shape.weight_offset..shape.bias_offset];
        let b = &self.params[shape.bias_offset..shape.bias_offset + shape.fan_out];
        w.chunks_exact(shape.fan_in)
            .zip(b.iter())
            .map(|(row, &bias)| dot(row, x) + bias)
            .collect()
    }
}

/// Four-lane dot product with a fixed summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Projects `v` onto the unit sphere and returns the original norm.
/// Degenerate vectors map to the first basis vector.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < NORM_EPSILON {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Applies the normalization Jacobian `(I - z z^T) / ||u||` to `grad`.
pub fn normalization_backward(z: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    if norm < NORM_EPSILON {
        return vec![0.0; grad.len()];
    }
    let proj = dot(z, grad);
    z.iter()
        .zip(grad.iter())
        .map(|(&zi, &gi)| (gi - zi * proj) / norm)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(normalize: bool) -> Mlp {
        let mut spec = MlpSpec::new(2, &[], 2).with_activation(Activation::Identity);
        spec.normalize_output = normalize;
        Mlp::from_params(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0).unwrap()
    }

    #[test]
    fn identity_forward() {
        assert_eq!(identity_layer(false).forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn normalized_identity_forward() {
        let out = identity_layer(true).forward(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalization_input_gradient() {
        let net = identity_layer(true);
        let cache = net.forward_cached(&[3.0, 4.0]).unwrap();
        let (_, dx) = net.backward(&cache, &[1.0, 0.0]).unwrap();
        assert!((dx[0] - 0.128).abs() < 1e-15);
        assert!((dx[1] + 0.096).abs() < 1e-15);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let spec = MlpSpec::new(3, &[], 2).with_activation(Activation::Identity);
        let params = vec![0.5, -1.0, 2.0, 0.25, 0.0, 1.5, 0.1, -0.2];
        let net = Mlp::from_params(spec, params, 0).unwrap();
        let x = [1.0, 2.0, -3.0];
        let g = [0.7, -1.1];
        let cache = net.forward_cached(&x).unwrap();
        let (grads, _) = net.backward(&cache, &g).unwrap();
        let expected_w: Vec<f64> = g.iter().flat_map(|gi| x.iter().map(move |xi| gi * xi)).collect();
        assert_eq!(&grads[..6], expected_w.as_slice());
        assert_eq!(&grads[6..], &g);
    }

    #[test]
    fn degenerate_norm_yields_basis_vector_and_zero_gradient() {
        let spec = MlpSpec::new(2, &[], 3).normalized();
        let net = Mlp::from_params(spec, vec![0.0; 9], 0).unwrap();
        let cache = net.forward_cached(&[1.0, 1.0]).unwrap();
        assert_eq!(cache.output(), &[1.0, 0.0, 0.0]);
        let (grads, dx) = net.backward(&cache, &[1.0, 2.0, 3.0]).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(MlpSpec::new(2, &[4], 1), 1.0, &mut rng).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Usage(_))));
        let other = net.clone();
        let cache = other.forward_cached(&[0.1, 0.2]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(MlpSpec::new(2, &[4], 1), 1.0, &mut rng).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(MlpSpec::new(0, &[4], 1).validate().is_err());
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(MlpSpec::new(5, &[16, 8], 4).normalized(), 1.0, &mut rng).unwrap();
        let x = [0.3, -0.1, 2.0, 0.0, -5.0];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        let c = net.forward_cached(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_slice(), c.output());
    }
}
