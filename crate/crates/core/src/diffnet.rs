//! Minimal differentiable feed-forward networks.
//!
//! Everything is double precision. Batches are row-major: one sample per
//! row. [`Mlp::backward`] returns parameter gradients averaged over the
//! batch and per-row input gradients, both for the scalar objective
//! `sum(output * upstream)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply_inplace(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the activation derivative. `pre` is the
    /// pre-activation and `post` the activation output. ReLU'(0) = 0.
    fn scale_by_derivative(self, grad: &mut Array2<f64>, pre: &Array2<f64>, post: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(pre).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad)
                .and(post)
                .for_each(|g, &a| *g *= 1.0 - a * a),
        }
    }
}

/// One affine layer. `weights` has shape `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.ncols(), l.weights.nrows()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    inputs: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("network has at least one layer")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.post.pop().expect("network has at least one layer")
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(
            "an mlp needs at least an input and an output width".into(),
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive".into()));
    }
    Ok(())
}

impl Mlp {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
                Dense { weights, bias }
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation,
            output_activation,
            layers,
        })
    }

    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation,
            output_activation,
            layers: layer_sizes
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Assembles a network from explicit layers, checking shapes.
    pub fn from_layers(
        layers: Vec<Dense>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("an mlp needs at least one layer".into()))?;
        let mut layer_sizes = vec![first.weights.ncols()];
        for layer in &layers {
            check_dim("layer input width", *layer_sizes.last().unwrap(), layer.weights.ncols())?;
            check_dim("bias length", layer.weights.nrows(), layer.bias.len())?;
            layer_sizes.push(layer.weights.nrows());
        }
        validate_sizes(&layer_sizes)?;
        Ok(Mlp {
            layer_sizes,
            hidden_activation,
            output_activation,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("mlp input width", self.input_dim(), inputs.ncols())?;
        let mut x = self.affine(0, inputs);
        self.activation_of(0).apply_inplace(&mut x);
        for i in 1..self.layers.len() {
            let mut z = self.affine(i, x.view());
            self.activation_of(i).apply_inplace(&mut z);
            x = z;
        }
        Ok(x)
    }

    /// Single-sample convenience wrapper around [`Mlp::forward`].
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_trace(&self, inputs: ArrayView2<f64>) -> Result<ForwardTrace> {
        check_dim("mlp input width", self.input_dim(), inputs.ncols())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let z = match post.last() {
                Some(prev) => self.affine(i, prev.view()),
                None => self.affine(i, inputs),
            };
            let mut a = z.clone();
            self.activation_of(i).apply_inplace(&mut a);
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace {
            inputs: inputs.to_owned(),
            pre,
            post,
        })
    }

    fn affine(&self, layer: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let l = &self.layers[layer];
        let mut z = x.dot(&l.weights.t());
        z += &l.bias;
        z
    }

    /// Backprop through a recorded forward pass.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = trace.output();
        check_dim("upstream rows", out.nrows(), upstream.nrows())?;
        check_dim("upstream width", out.ncols(), upstream.ncols())?;
        let batch = upstream.nrows().max(1) as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            self.activation_of(i)
                .scale_by_derivative(&mut delta, &trace.pre[i], &trace.post[i]);
            let layer_input = if i == 0 {
                trace.inputs.view()
            } else {
                trace.post[i - 1].view()
            };
            let mut weights = delta.t().dot(&layer_input);
            weights /= batch;
            let mut bias = delta.sum_axis(Axis(0));
            bias /= batch;
            grads.push(Dense { weights, bias });
            delta = delta.dot(&self.layers[i].weights);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Forward then backward in one call.
    pub fn gradients(
        &self,
        inputs: ArrayView2<f64>,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let trace = self.forward_trace(inputs)?;
        self.backward(&trace, upstream)
    }

    /// Smallest |pre-activation| over every hidden unit. Gradient checks of
    /// ReLU nets need this to stay clear of kinks.
    pub fn min_abs_hidden_preactivation(&self, inputs: ArrayView2<f64>) -> Result<f64> {
        let trace = self.forward_trace(inputs)?;
        Ok(trace.pre[..trace.pre.len() - 1]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// `self <- tau * self + (1 - tau) * main`, elementwise.
    pub fn polyak_from(&mut self, main: &Mlp, tau: f64) -> Result<()> {
        if !self.same_shape(main) {
            return Err(Error::InvalidArgument(format!(
                "polyak shape mismatch: {:?} vs {:?}",
                self.layer_sizes, main.layer_sizes
            )));
        }
        for (t, m) in self.layers.iter_mut().zip(&main.layers) {
            Zip::from(&mut t.weights)
                .and(&m.weights)
                .for_each(|t, &m| *t = tau * *t + (1.0 - tau) * m);
            Zip::from(&mut t.bias)
                .and(&m.bias)
                .for_each(|t, &m| *t = tau * *t + (1.0 - tau) * m);
        }
        Ok(())
    }
}

/// Adam optimizer state for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Dense>,
    pub second_moment: Vec<Dense>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.first_moment.len() == net.layers.len()
            && self
                .first_moment
                .iter()
                .zip(&net.layers)
                .all(|(m, l)| m.weights.dim() == l.weights.dim() && m.bias.len() == l.bias.len())
    }
}

/// One bias-corrected Adam step. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_update(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    check_dim("gradient layer count", net.layers.len(), grads.layers.len())?;
    if !state.matches(net) {
        return Err(Error::InvalidArgument(
            "adam state does not match network shape".into(),
        ));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
        if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient shape mismatch in layer {i}"
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { layer: i });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias_fix1 = 1.0 - b1.powi(t);
    let bias_fix2 = 1.0 - b2.powi(t);

    let step = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias_fix1;
        let v_hat = *v / bias_fix2;
        *p -= state.learning_rate * m_hat / (v_hat.sqrt() + eps);
    };

    for (((layer, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        Zip::from(&mut layer.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(|p, m, v, &g| step(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| step(p, m, v, g));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_param_rel_error: f64,
    pub max_input_rel_error: f64,
    pub params_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_param_rel_error.max(self.max_input_rel_error)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so that gradients that
/// are zero on both sides compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    diff / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Fixed, non-symmetric upstream weights so the checked objective does not
/// cancel across outputs.
pub fn probe_upstream(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 7 + j * 3 + 1) as f64).sin() + 0.5
    })
}

/// Compares [`Mlp::backward`] against central finite differences of the
/// objective `mean_rows(sum(output * probe_upstream))` over every parameter
/// and every input element.
pub fn gradient_check(net: &Mlp, inputs: ArrayView2<f64>, tolerance: f64) -> Result<GradCheckReport> {
    let rows = inputs.nrows();
    let upstream = probe_upstream(rows, net.output_dim());
    let objective = |n: &Mlp, x: ArrayView2<f64>| -> Result<f64> {
        let out = n.forward(x)?;
        Ok((&out * &upstream).sum() / rows.max(1) as f64)
    };
    let (grads, input_grads) = net.gradients(inputs, upstream.view())?;

    let mut probe = net.clone();
    let mut max_param = 0.0f64;
    let mut checked = 0;
    for li in 0..net.layers.len() {
        let (r, c) = net.layers[li].weights.dim();
        for i in 0..r {
            for j in 0..c {
                let orig = net.layers[li].weights[[i, j]];
                probe.layers[li].weights[[i, j]] = orig + FD_STEP;
                let plus = objective(&probe, inputs)?;
                probe.layers[li].weights[[i, j]] = orig - FD_STEP;
                let minus = objective(&probe, inputs)?;
                probe.layers[li].weights[[i, j]] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                max_param = max_param.max(relative_error(grads.layers[li].weights[[i, j]], numeric));
                checked += 1;
            }
        }
        for i in 0..r {
            let orig = net.layers[li].bias[i];
            probe.layers[li].bias[i] = orig + FD_STEP;
            let plus = objective(&probe, inputs)?;
            probe.layers[li].bias[i] = orig - FD_STEP;
            let minus = objective(&probe, inputs)?;
            probe.layers[li].bias[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_param = max_param.max(relative_error(grads.layers[li].bias[i], numeric));
            checked += 1;
        }
    }

    // Input gradients are per row and not averaged, so undo the 1/rows.
    let mut x = inputs.to_owned();
    let mut max_input = 0.0f64;
    for i in 0..rows {
        for j in 0..x.ncols() {
            let orig = x[[i, j]];
            x[[i, j]] = orig + FD_STEP;
            let plus = objective(net, x.view())?;
            x[[i, j]] = orig - FD_STEP;
            let minus = objective(net, x.view())?;
            x[[i, j]] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP) * rows as f64;
            max_input = max_input.max(relative_error(input_grads[[i, j]], numeric));
        }
    }

    Ok(GradCheckReport {
        max_param_rel_error: max_param,
        max_input_rel_error: max_input,
        params_checked: checked,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Relu, Activation::Identity).unwrap();
        let out = net.forward(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_layer() {
        let layer = Dense {
            weights: array![[2.0]],
            bias: array![1.0],
        };
        let net = Mlp::from_layers(vec![layer], Activation::Relu, Activation::Identity).unwrap();
        assert_eq!(net.forward_one(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = seeded_rng(1);
        let net = Mlp::new(&[4, 8, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let err = net.forward(Array2::zeros((2, 3)).view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = seeded_rng(2);
        let net = Mlp::new(&[3, 6, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3]];
        let (g, dx) = net.gradients(x.view(), Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let w = 1.7;
        let x = 0.4;
        let net = Mlp::from_layers(
            vec![Dense {
                weights: array![[w]],
                bias: array![0.3],
            }],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        let (g, dx) = net.gradients(array![[x]].view(), array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights[[0, 0]], x);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(dx[[0, 0]], w);
    }

    #[test]
    fn upstream_shape_mismatch_is_rejected() {
        let mut rng = seeded_rng(3);
        let net = Mlp::new(&[2, 4, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let trace = net.forward_trace(Array2::zeros((2, 2)).view()).unwrap();
        assert!(net.backward(&trace, Array2::zeros((2, 2)).view()).is_err());
        assert!(net.backward(&trace, Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = seeded_rng(4);
        let net = Mlp::new(&[16, 9, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= 0.25));
        assert!(net.layers[1].weights.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert_eq!(net.layers[0].weights.dim(), (9, 16));
        assert_eq!(net.layers[1].bias.len(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut rng = seeded_rng(5);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net, 0.01);
        state.first_moment[0].bias[0] = 1.0;
        let zero = Gradients::zeros_like(&net);
        adam_update(&mut net, &zero, &mut state).unwrap();
        assert_eq!(net.layers[1], before.layers[1]);
        assert_eq!(state.step_count, 1);
        assert!((state.first_moment[0].bias[0] - 0.9).abs() < 1e-15);
        // the decayed moment still moves that one bias
        assert_ne!(net.layers[0].bias[0], before.layers[0].bias[0]);
    }

    fn scalar_net(p: f64) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                weights: array![[0.0]],
                bias: array![p],
            }],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap()
    }

    fn bias_only_grads(g: f64) -> Gradients {
        Gradients {
            layers: vec![Dense {
                weights: array![[0.0]],
                bias: array![g],
            }],
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net, 0.1);
        adam_update(&mut net, &bias_only_grads(1.0), &mut state).unwrap();
        // m_hat = 1, v_hat = 1 => step = 0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((net.layers[0].bias[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net, 0.1);
        for _ in 0..1000 {
            let p = net.layers[0].bias[0];
            adam_update(&mut net, &bias_only_grads(2.0 * (p - 3.0)), &mut state).unwrap();
        }
        assert!((net.layers[0].bias[0] - 3.0).abs() < 0.01);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut rng = seeded_rng(6);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net, 0.01);
        let mut g = Gradients::zeros_like(&net);
        g.layers[1].weights[[0, 2]] = f64::NAN;
        let err = adam_update(&mut net, &g, &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 1 }));
        assert_eq!(net, before);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn adam_is_bit_reproducible() {
        let mut rng = seeded_rng(7);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.7]];
        let (g, _) = net.gradients(x.view(), probe_upstream(2, 2).view()).unwrap();
        let run = || {
            let mut n = net.clone();
            let mut s = AdamState::new(&n, 1e-3);
            for _ in 0..5 {
                adam_update(&mut n, &g, &mut s).unwrap();
            }
            (n, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn linear_net_gradient_check_is_exact() {
        let mut rng = seeded_rng(8);
        let net = Mlp::new(&[3, 4, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let x = array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.7]];
        let report = gradient_check(&net, x.view(), 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tanh_output_gradient_check() {
        let mut rng = seeded_rng(0);
        let net = Mlp::new(&[3, 8, 8, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let x = array![[0.3, -0.2, 0.9], [0.1, 0.4, -0.7], [-0.5, 0.5, 0.0]];
        let report = gradient_check(&net, x.view(), 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn polyak_edge_cases() {
        let main = scalar_net(1.0);
        let mut target = scalar_net(0.0);
        target.polyak_from(&main, 1.0).unwrap();
        assert_eq!(target.layers[0].bias[0], 0.0);
        target.polyak_from(&main, 0.95).unwrap();
        assert!((target.layers[0].bias[0] - 0.05).abs() < 1e-15);
        target.polyak_from(&main, 0.0).unwrap();
        assert_eq!(target, main);
        let other = Mlp::zeros(&[1, 2, 1], Activation::Relu, Activation::Identity).unwrap();
        assert!(target.polyak_from(&other, 0.5).is_err());
    }
}
