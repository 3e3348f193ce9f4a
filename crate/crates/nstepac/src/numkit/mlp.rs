use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::matrix::Matrix;
use super::{ensure_finite, NumKitError};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Tanh,
}

/// Output-head activation. Actors use `Tanh` (scaled to action bounds by
/// the caller), critics use `Identity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    // Derivative expressed in terms of the post-activation value.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl OutputActivation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Tanh => 1.0 - y * y,
        }
    }
}

/// Parameters of a dense feed-forward network.
///
/// `weights[i]` has shape `(layer_sizes[i+1], layer_sizes[i])` and
/// `biases[i]` has length `layer_sizes[i+1]`.
#[derive(Debug, Clone)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    output_activation: OutputActivation,
    // Identity of the logical network plus a mutation counter; together they
    // let the backward pass reject caches from another net or an older
    // parameter state.
    net_id: u64,
    version: u64,
}

impl MlpParams {
    /// All-zero network. Layer sizes run input, hidden..., output.
    pub fn zeros(
        layer_sizes: &[usize],
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self, NumKitError> {
        if layer_sizes.len() < 2 {
            return Err(NumKitError::Config(
                "a network needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NumKitError::Config("layer sizes must be positive".into()));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            weights.push(Matrix::zeros(w[1], w[0]));
            biases.push(vec![0.0; w[1]]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            output_activation,
            net_id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    /// Random init: hidden layers uniform in +-1/sqrt(fan_in), final layer
    /// uniform in +-3e-3 so the initial head output stays near zero.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self, NumKitError> {
        let mut params = Self::zeros(layer_sizes, activation, output_activation)?;
        let last = params.weights.len() - 1;
        for (i, (w, b)) in params.weights.iter_mut().zip(params.biases.iter_mut()).enumerate() {
            let bound = if i == last {
                3e-3
            } else {
                1.0 / (w.cols() as f64).sqrt()
            };
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
            for v in b.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        Ok(params)
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

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Mutable weight access for surgical edits; invalidates caches.
    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        self.version += 1;
        &mut self.weights
    }

    /// Mutable bias access for surgical edits; invalidates caches.
    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        self.version += 1;
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Visit every parameter in declaration order (all weights, then all
    /// biases), mutably. Bumps the version: callers are mutating.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                f(v);
            }
        }
        for b in &mut self.biases {
            for v in b {
                f(v);
            }
        }
        self.version += 1;
    }

    /// Visit every parameter in declaration order, read-only.
    pub fn for_each_param(&self, mut f: impl FnMut(f64)) {
        for w in &self.weights {
            for v in w.data() {
                f(*v);
            }
        }
        for b in &self.biases {
            for v in b {
                f(*v);
            }
        }
    }

    pub(crate) fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Self {
        Self {
            layer_sizes,
            weights,
            biases,
            activation,
            output_activation,
            net_id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    fn bump(&mut self) {
        self.version += 1;
    }
}

/// Parameter gradients, shape-congruent with an `MlpParams`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v *= s;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for w in &self.weights {
            for v in w.data() {
                acc += v * v;
            }
        }
        for b in &self.biases {
            for v in b {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        for w in &self.weights {
            for v in w.data() {
                f(*v);
            }
        }
        for b in &self.biases {
            for v in b {
                f(*v);
            }
        }
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }
}

/// Activation record produced by [`mlp_forward`], consumed by
/// [`mlp_backward`]. Tied to the exact parameter state that produced it.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    input: Vec<f64>,
    // Post-activation output of every layer; the last entry is the network
    // output. Post-activations are enough to reconstruct the local
    // derivatives of ReLU, Tanh and Identity.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Forward pass. Returns the output and a cache sufficient for an exact
/// backward pass.
pub fn mlp_forward(
    params: &MlpParams,
    input: &[f64],
) -> Result<(Vec<f64>, ForwardCache), NumKitError> {
    if input.len() != params.input_dim() {
        return Err(NumKitError::Dimension(format!(
            "input length {} does not match network input size {}",
            input.len(),
            params.input_dim()
        )));
    }
    ensure_finite(input, "mlp_forward input")?;

    let n_layers = params.weights.len();
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut cur: &[f64] = input;
    for l in 0..n_layers {
        let w = &params.weights[l];
        let b = &params.biases[l];
        let mut z = vec![0.0; w.rows()];
        w.matvec(cur, &mut z);
        let last = l == n_layers - 1;
        for (zv, bv) in z.iter_mut().zip(b.iter()) {
            let pre = *zv + bv;
            *zv = if last {
                params.output_activation.apply(pre)
            } else {
                params.activation.apply(pre)
            };
        }
        activations.push(z);
        cur = activations.last().unwrap();
    }

    let output = activations.last().unwrap().clone();
    ensure_finite(&output, "mlp_forward output")?;
    Ok((
        output,
        ForwardCache {
            net_id: params.net_id,
            version: params.version,
            input: input.to_vec(),
            activations,
        },
    ))
}

/// Backward pass. Given the upstream gradient d(scalar)/d(output), returns
/// the exact analytic gradients w.r.t. all parameters plus the gradient
/// w.r.t. the network input (needed for the deterministic policy-gradient
/// chain rule through a critic).
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<(Gradients, Vec<f64>), NumKitError> {
    if cache.net_id != params.net_id || cache.version != params.version {
        return Err(NumKitError::StaleCache);
    }
    if output_grad.len() != params.output_dim() {
        return Err(NumKitError::Dimension(format!(
            "output_grad length {} does not match network output size {}",
            output_grad.len(),
            params.output_dim()
        )));
    }

    let n_layers = params.weights.len();
    let mut grads = Gradients::zeros_like(params);

    // delta = d(scalar)/d(pre-activation of the current layer)
    let out = cache.activations.last().unwrap();
    let mut delta: Vec<f64> = output_grad
        .iter()
        .zip(out.iter())
        .map(|(g, y)| g * params.output_activation.grad_from_output(*y))
        .collect();

    for l in (0..n_layers).rev() {
        let layer_input: &[f64] = if l == 0 {
            &cache.input
        } else {
            &cache.activations[l - 1]
        };
        let gw = &mut grads.weights[l];
        let cols = gw.cols();
        for (r, &d) in delta.iter().enumerate() {
            grads.biases[l][r] = d;
            let row = &mut gw.data_mut()[r * cols..(r + 1) * cols];
            for (gv, x) in row.iter_mut().zip(layer_input.iter()) {
                *gv = d * x;
            }
        }
        let mut down = vec![0.0; params.weights[l].cols()];
        params.weights[l].matvec_transpose_accum(&delta, &mut down);
        if l > 0 {
            for (dv, y) in down.iter_mut().zip(cache.activations[l - 1].iter()) {
                *dv *= params.activation.grad_from_output(*y);
            }
        }
        delta = down;
    }

    ensure_finite(&delta, "mlp_backward input gradient")?;
    Ok((grads, delta))
}

/// Polyak interpolation: every target parameter moves to
/// `(1 - tau) * target + tau * online`, elementwise.
pub fn soft_update(
    target: &mut MlpParams,
    online: &MlpParams,
    tau: f64,
) -> Result<(), NumKitError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NumKitError::Config(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    if !target.same_shape(online) {
        return Err(NumKitError::Dimension(
            "soft_update shapes do not match".into(),
        ));
    }
    for (tw, ow) in target.weights.iter_mut().zip(&online.weights) {
        for (t, o) in tw.data_mut().iter_mut().zip(ow.data()) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    for (tb, ob) in target.biases.iter_mut().zip(&online.biases) {
        for (t, o) in tb.iter_mut().zip(ob) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    target.bump();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn forward_zero_net_gives_zero_output() {
        let p = MlpParams::zeros(&[3, 4, 2], Activation::ReLU, OutputActivation::Identity)
            .unwrap();
        let (out, _) = mlp_forward(&p, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_single_layer() {
        // 1-1 net, weight 1, bias 0, identity head: f(x) = x.
        let mut p =
            MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity).unwrap();
        p.for_each_param_mut(|v| *v = 0.0);
        p.weights[0].set(0, 0, 1.0);
        let (out, _) = mlp_forward(&p, &[2.5]).unwrap();
        assert_eq!(out, vec![2.5]);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        // 2-3-1 ReLU net evaluated scalar by scalar, independently of the
        // matvec path.
        let w0 = Matrix::from_vec(3, 2, vec![0.4, -0.3, 0.1, 0.9, -0.7, 0.2]).unwrap();
        let b0 = vec![0.05, -0.1, 0.3];
        let w1 = Matrix::from_vec(1, 3, vec![1.5, -0.5, 0.25]).unwrap();
        let b1 = vec![-0.2];
        let p = MlpParams::from_parts(
            vec![2, 3, 1],
            vec![w0, w1],
            vec![b0, b1],
            Activation::ReLU,
            OutputActivation::Identity,
        );
        let x = [0.6, -1.2];

        let relu = |z: f64| if z > 0.0 { z } else { 0.0 };
        let h0 = relu(0.4 * x[0] + (-0.3) * x[1] + 0.05);
        let h1 = relu(0.1 * x[0] + 0.9 * x[1] + (-0.1));
        let h2 = relu(-0.7 * x[0] + 0.2 * x[1] + 0.3);
        let expected = 1.5 * h0 + (-0.5) * h1 + 0.25 * h2 - 0.2;

        let (out, _) = mlp_forward(&p, &x).unwrap();
        assert!((out[0] - expected).abs() < 1e-15, "{} vs {}", out[0], expected);
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let p = MlpParams::zeros(&[3, 2], Activation::ReLU, OutputActivation::Identity).unwrap();
        assert!(matches!(
            mlp_forward(&p, &[1.0]),
            Err(NumKitError::Dimension(_))
        ));
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let p = MlpParams::zeros(&[2, 2], Activation::ReLU, OutputActivation::Identity).unwrap();
        assert!(matches!(
            mlp_forward(&p, &[f64::NAN, 0.0]),
            Err(NumKitError::NonFinite(_))
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = MlpParams::init_uniform(
            &[4, 8, 2],
            Activation::Tanh,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let (_, cache) = mlp_forward(&p, &[0.1, -0.2, 0.3, 0.4]).unwrap();
        let (grads, dx) = mlp_backward(&p, &cache, &[0.0, 0.0]).unwrap();
        grads.for_each(|g| assert_eq!(g, 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_linear_net_gradients() {
        // 1-1 identity net: d out/d w = x, d out/d b = 1.
        let mut p =
            MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity).unwrap();
        p.for_each_param_mut(|v| *v = 0.0);
        p.weights[0].set(0, 0, 0.7);
        let x = 1.9;
        let (_, cache) = mlp_forward(&p, &[x]).unwrap();
        let (grads, dx) = mlp_backward(&p, &cache, &[1.0]).unwrap();
        assert_eq!(grads.weights[0].get(0, 0), x);
        assert_eq!(grads.biases[0][0], 1.0);
        assert_eq!(dx[0], 0.7);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = MlpParams::init_uniform(
            &[2, 3, 1],
            Activation::ReLU,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let (_, cache) = mlp_forward(&p, &[0.2, 0.4]).unwrap();
        p.for_each_param_mut(|v| *v += 0.01);
        assert!(matches!(
            mlp_backward(&p, &cache, &[1.0]),
            Err(NumKitError::StaleCache)
        ));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init_uniform(
            &[2, 3, 1],
            Activation::ReLU,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let q = p.clone();
        let other = MlpParams::init_uniform(
            &[2, 3, 1],
            Activation::ReLU,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let (_, cache) = mlp_forward(&other, &[0.2, 0.4]).unwrap();
        assert!(matches!(
            mlp_backward(&p, &cache, &[1.0]),
            Err(NumKitError::StaleCache)
        ));
        // A clone is the same logical network; its cache stays valid.
        let (_, cache2) = mlp_forward(&q, &[0.2, 0.4]).unwrap();
        assert!(mlp_backward(&p, &cache2, &[1.0]).is_ok());
    }

    // Central finite differences of scalar = sum(output * output_grad).
    fn finite_diff_check(layer_sizes: &[usize], act: Activation, out_act: OutputActivation, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::init_uniform(layer_sizes, act, out_act, &mut rng).unwrap();
        let input: Vec<f64> = (0..layer_sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ograd: Vec<f64> = (0..*layer_sizes.last().unwrap())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();

        let (_, cache) = mlp_forward(&p, &input).unwrap();
        let (grads, dx) = mlp_backward(&p, &cache, &ograd).unwrap();

        let scalar = |p: &MlpParams, input: &[f64]| -> f64 {
            let (out, _) = mlp_forward(p, input).unwrap();
            out.iter().zip(&ograd).map(|(o, g)| o * g).sum()
        };

        let h = 1e-5;
        let mut analytic: Vec<f64> = Vec::new();
        grads.for_each(|g| analytic.push(g));

        let mut idx = 0;
        let n = p.param_count();
        let mut numeric = vec![0.0; n];
        for k in 0..n {
            let mut plus = 0.0;
            let mut minus = 0.0;
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v += h;
                }
                idx += 1;
            });
            idx = 0;
            plus += scalar(&p, &input);
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v -= 2.0 * h;
                }
                idx += 1;
            });
            idx = 0;
            minus += scalar(&p, &input);
            p.for_each_param_mut(|v| {
                if idx == k {
                    *v += h;
                }
                idx += 1;
            });
            idx = 0;
            numeric[k] = (plus - minus) / (2.0 * h);
        }
        for (a, nm) in analytic.iter().zip(&numeric) {
            assert!(close(*a, *nm, 1e-4), "param grad {a} vs fd {nm}");
        }

        // Input gradient against finite differences too.
        let mut input = input;
        for i in 0..input.len() {
            let orig = input[i];
            input[i] = orig + h;
            let plus = scalar(&p, &input);
            input[i] = orig - h;
            let minus = scalar(&p, &input);
            input[i] = orig;
            let nm = (plus - minus) / (2.0 * h);
            assert!(close(dx[i], nm, 1e-4), "input grad {} vs fd {nm}", dx[i]);
        }
    }

    #[test]
    fn backward_matches_finite_differences_4_8_8_2() {
        finite_diff_check(&[4, 8, 8, 2], Activation::Tanh, OutputActivation::Identity, 11);
        finite_diff_check(&[4, 8, 8, 2], Activation::ReLU, OutputActivation::Identity, 12);
        finite_diff_check(&[3, 6, 1], Activation::Tanh, OutputActivation::Tanh, 13);
    }

    #[test]
    fn soft_update_tau_one_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = MlpParams::init_uniform(
            &[2, 4, 1],
            Activation::ReLU,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let mut target =
            MlpParams::zeros(&[2, 4, 1], Activation::ReLU, OutputActivation::Identity).unwrap();
        soft_update(&mut target, &online, 1.0).unwrap();
        let mut pairs = Vec::new();
        online.for_each_param(|v| pairs.push(v));
        let mut i = 0;
        target.for_each_param(|v| {
            assert_eq!(v, pairs[i]);
            i += 1;
        });
    }

    #[test]
    fn soft_update_direct_formula() {
        let mut target =
            MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity).unwrap();
        let mut online =
            MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity).unwrap();
        online.for_each_param_mut(|v| *v = 1.0);
        soft_update(&mut target, &online, 0.005).unwrap();
        target.for_each_param(|v| assert!((v - 0.005).abs() < 1e-15));
    }

    #[test]
    fn soft_update_twice_geometric() {
        // p- starts at 0, p = 1, tau = 0.3 applied twice: 1 - 0.7^2 = 0.51.
        let mut target =
            MlpParams::zeros(&[2, 2], Activation::ReLU, OutputActivation::Identity).unwrap();
        let mut online =
            MlpParams::zeros(&[2, 2], Activation::ReLU, OutputActivation::Identity).unwrap();
        online.for_each_param_mut(|v| *v = 1.0);
        soft_update(&mut target, &online, 0.3).unwrap();
        soft_update(&mut target, &online, 0.3).unwrap();
        target.for_each_param(|v| assert!((v - 0.51).abs() < 1e-15, "{v}"));
    }

    #[test]
    fn soft_update_rejects_bad_tau() {
        let mut a = MlpParams::zeros(&[1, 1], Activation::ReLU, OutputActivation::Identity)
            .unwrap();
        let b = a.clone();
        assert!(matches!(
            soft_update(&mut a, &b, 0.0),
            Err(NumKitError::Config(_))
        ));
        assert!(matches!(
            soft_update(&mut a, &b, 1.5),
            Err(NumKitError::Config(_))
        ));
    }

    #[test]
    fn soft_update_is_elementwise_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let online = MlpParams::init_uniform(
                &[3, 5, 2],
                Activation::Tanh,
                OutputActivation::Identity,
                &mut rng,
            )
            .unwrap();
            let mut target = MlpParams::init_uniform(
                &[3, 5, 2],
                Activation::Tanh,
                OutputActivation::Identity,
                &mut rng,
            )
            .unwrap();
            let tau = rng.gen_range(0.01..1.0);
            let mut before = Vec::new();
            {
                let mut o = Vec::new();
                online.for_each_param(|v| o.push(v));
                let mut i = 0;
                target.for_each_param(|v| {
                    before.push((v - o[i]).abs());
                    i += 1;
                });
            }
            soft_update(&mut target, &online, tau).unwrap();
            let mut o = Vec::new();
            online.for_each_param(|v| o.push(v));
            let mut i = 0;
            target.for_each_param(|v| {
                let after = (v - o[i]).abs();
                let expected = (1.0 - tau) * before[i];
                assert!(
                    (after - expected).abs() <= 1e-14 * expected.max(1.0),
                    "contraction violated: {after} vs {expected}"
                );
                i += 1;
            });
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::init_uniform(
            &[5, 16, 16, 3],
            Activation::ReLU,
            OutputActivation::Tanh,
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (a, _) = mlp_forward(&p, &x).unwrap();
        let (b, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(a, b);
    }
}
