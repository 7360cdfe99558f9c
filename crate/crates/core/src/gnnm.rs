//! The generic network module: a reusable sequence-in, sequence-or-vector-out
//! unit built from three stages.
//!
//! 1. **Chronological convolution masking** ([`f_conv`]): a per-row 3-tap
//!    convolution along time, softmaxed over the time axis and applied to
//!    the input as a Hadamard mask. Rows (feature components) never mix.
//! 2. **Feature-component attention** ([`f_atten`]): self-attention with
//!    a halved projection width. Two shape-consistent readings exist and
//!    both are provided: the *component* variant attends over the d
//!    time-series of individual vector components (projections along the
//!    time axis, d x d map); the *temporal* variant projects the feature
//!    axis (n x n map) and is the one whose parameter count is
//!    independent of sequence length.
//! 3. **Blended attention** ([`f_hybrid_atten`]): attention conditioned
//!    on an external context vector concatenated under every time step,
//!    optionally aggregating the sequence into a single vector.
//!
//! The composition ([`gnnm_forward`]) wraps each stage in a pre-function
//! LayerNorm + activation with a residual connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{SoftmaxAxis, Tape, ValueId};

/// Which reading of the reduced self-attention stage to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    /// Attend over component variation sequences; projections are
    /// (n/2) x n, the attention map is d x d. Requires even n.
    Component,
    /// Project the feature axis; projections are (d/2) x d, the attention
    /// map is n x n. Requires even d. Parameter count is 7d^2 + 6d + 3
    /// for every n.
    Temporal,
}

/// Activation used inside the pre-function LayerNorm + activation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
}

/// Static description of one module instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnmConfig {
    /// Feature dimension d.
    pub d: usize,
    /// Sequence length n.
    pub n: usize,
    pub attention_variant: AttentionVariant,
    /// Collapse the output sequence to a single d-vector.
    pub aggregate_output: bool,
    pub activation: Activation,
    /// LayerNorm variance epsilon.
    pub epsilon: f64,
}

impl GnnmConfig {
    pub fn new(d: usize, n: usize, variant: AttentionVariant) -> Self {
        GnnmConfig {
            d,
            n,
            attention_variant: variant,
            aggregate_output: false,
            activation: Activation::Elu,
            epsilon: 1e-5,
        }
    }

    pub fn aggregating(mut self) -> Self {
        self.aggregate_output = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "module dimensions must be positive, got d={} n={}",
                self.d, self.n
            )));
        }
        match self.attention_variant {
            AttentionVariant::Component if self.n % 2 != 0 => Err(Error::Config(format!(
                "component attention needs even n for the n/2 reduction, got n={}",
                self.n
            ))),
            AttentionVariant::Temporal if self.d % 2 != 0 => Err(Error::Config(format!(
                "temporal attention needs even d for the d/2 reduction, got d={}",
                self.d
            ))),
            _ => {
                if self.epsilon <= 0.0 {
                    Err(Error::Config(format!(
                        "layer norm epsilon must be positive, got {}",
                        self.epsilon
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// (rows, cols) of the three reduced projections.
    fn proj_shape(&self) -> (usize, usize) {
        match self.attention_variant {
            AttentionVariant::Component => (self.n / 2, self.n),
            AttentionVariant::Temporal => (self.d / 2, self.d),
        }
    }
}

/// Scale and shift of one LayerNorm site, both d x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    fn identity(d: usize) -> Self {
        LayerNormParams {
            gamma: Matrix::filled(d, 1, T::one()),
            beta: Matrix::zeros(d, 1),
        }
    }
}

/// All trainable weights of one module instance. No bias terms anywhere:
/// the convolution and every linear map are bias-free; LayerNorm carries
/// the only additive parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnmParameters<T> {
    /// 3 x 1 chronological convolution kernel.
    pub conv_kernel: Matrix<T>,
    pub attn_q: Matrix<T>,
    pub attn_k: Matrix<T>,
    pub attn_v: Matrix<T>,
    /// Maps the reduced attention output back to full width.
    pub attn_out: Matrix<T>,
    /// d x 2d query projection of the context-augmented sequence.
    pub hyb_q: Matrix<T>,
    /// d x d key projection of the plain sequence.
    pub hyb_k: Matrix<T>,
    /// d x 2d value projection of the context-augmented sequence.
    pub hyb_v: Matrix<T>,
    pub ln1: LayerNormParams<T>,
    pub ln2: LayerNormParams<T>,
    pub ln3: LayerNormParams<T>,
}

/// Draw from the uniform init range [-1/sqrt(fan_in), 1/sqrt(fan_in)].
fn init_weight<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let u: f64 = rng.gen();
        data.push(T::from_f64((2.0 * u - 1.0) * bound));
    }
    Matrix::from_vec(rows, cols, data)
}

impl<T: Scalar> GnnmParameters<T> {
    /// Fresh parameters: uniform weights, identity convolution kernel
    /// (0, 1, 0), unit LayerNorm scales. The kernel starts as the
    /// identity so the mask is a plain time softmax of the input early on.
    pub fn init(config: &GnnmConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let (pr, pc) = config.proj_shape();
        Ok(GnnmParameters {
            conv_kernel: Matrix::column(&[T::zero(), T::one(), T::zero()]),
            attn_q: init_weight(pr, pc, rng),
            attn_k: init_weight(pr, pc, rng),
            attn_v: init_weight(pr, pc, rng),
            attn_out: init_weight(pc, pr, rng),
            hyb_q: init_weight(d, 2 * d, rng),
            hyb_k: init_weight(d, d, rng),
            hyb_v: init_weight(d, 2 * d, rng),
            ln1: LayerNormParams::identity(d),
            ln2: LayerNormParams::identity(d),
            ln3: LayerNormParams::identity(d),
        })
    }

    /// All-zero weights with unit LayerNorm scales; test scaffolding.
    pub fn zeros(config: &GnnmConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let (pr, pc) = config.proj_shape();
        Ok(GnnmParameters {
            conv_kernel: Matrix::zeros(3, 1),
            attn_q: Matrix::zeros(pr, pc),
            attn_k: Matrix::zeros(pr, pc),
            attn_v: Matrix::zeros(pr, pc),
            attn_out: Matrix::zeros(pc, pr),
            hyb_q: Matrix::zeros(d, 2 * d),
            hyb_k: Matrix::zeros(d, d),
            hyb_v: Matrix::zeros(d, 2 * d),
            ln1: LayerNormParams::identity(d),
            ln2: LayerNormParams::identity(d),
            ln3: LayerNormParams::identity(d),
        })
    }

    /// Tensors in canonical order; this order is shared by counting,
    /// optimizer state, and checkpoints.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix<T>)> {
        vec![
            ("conv_kernel", &self.conv_kernel),
            ("attn_q", &self.attn_q),
            ("attn_k", &self.attn_k),
            ("attn_v", &self.attn_v),
            ("attn_out", &self.attn_out),
            ("hyb_q", &self.hyb_q),
            ("hyb_k", &self.hyb_k),
            ("hyb_v", &self.hyb_v),
            ("ln1.gamma", &self.ln1.gamma),
            ("ln1.beta", &self.ln1.beta),
            ("ln2.gamma", &self.ln2.gamma),
            ("ln2.beta", &self.ln2.beta),
            ("ln3.gamma", &self.ln3.gamma),
            ("ln3.beta", &self.ln3.beta),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix<T>)> {
        vec![
            ("conv_kernel", &mut self.conv_kernel),
            ("attn_q", &mut self.attn_q),
            ("attn_k", &mut self.attn_k),
            ("attn_v", &mut self.attn_v),
            ("attn_out", &mut self.attn_out),
            ("hyb_q", &mut self.hyb_q),
            ("hyb_k", &mut self.hyb_k),
            ("hyb_v", &mut self.hyb_v),
            ("ln1.gamma", &mut self.ln1.gamma),
            ("ln1.beta", &mut self.ln1.beta),
            ("ln2.gamma", &mut self.ln2.gamma),
            ("ln2.beta", &mut self.ln2.beta),
            ("ln3.gamma", &mut self.ln3.gamma),
            ("ln3.beta", &mut self.ln3.beta),
        ]
    }

    /// Exact number of trainable scalars, by enumeration.
    pub fn num_scalars(&self) -> u64 {
        self.named_tensors()
            .iter()
            .map(|(_, m)| m.len() as u64)
            .sum()
    }

    pub fn convert<U: Scalar>(&self) -> GnnmParameters<U> {
        GnnmParameters {
            conv_kernel: self.conv_kernel.convert(),
            attn_q: self.attn_q.convert(),
            attn_k: self.attn_k.convert(),
            attn_v: self.attn_v.convert(),
            attn_out: self.attn_out.convert(),
            hyb_q: self.hyb_q.convert(),
            hyb_k: self.hyb_k.convert(),
            hyb_v: self.hyb_v.convert(),
            ln1: LayerNormParams {
                gamma: self.ln1.gamma.convert(),
                beta: self.ln1.beta.convert(),
            },
            ln2: LayerNormParams {
                gamma: self.ln2.gamma.convert(),
                beta: self.ln2.beta.convert(),
            },
            ln3: LayerNormParams {
                gamma: self.ln3.gamma.convert(),
                beta: self.ln3.beta.convert(),
            },
        }
    }

    /// Record every tensor as a leaf on `tape`.
    pub fn insert(&self, tape: &mut Tape<T>) -> TapedGnnm {
        TapedGnnm {
            conv_kernel: tape.leaf(self.conv_kernel.clone()),
            attn_q: tape.leaf(self.attn_q.clone()),
            attn_k: tape.leaf(self.attn_k.clone()),
            attn_v: tape.leaf(self.attn_v.clone()),
            attn_out: tape.leaf(self.attn_out.clone()),
            hyb_q: tape.leaf(self.hyb_q.clone()),
            hyb_k: tape.leaf(self.hyb_k.clone()),
            hyb_v: tape.leaf(self.hyb_v.clone()),
            ln1: (tape.leaf(self.ln1.gamma.clone()), tape.leaf(self.ln1.beta.clone())),
            ln2: (tape.leaf(self.ln2.gamma.clone()), tape.leaf(self.ln2.beta.clone())),
            ln3: (tape.leaf(self.ln3.gamma.clone()), tape.leaf(self.ln3.beta.clone())),
        }
    }
}

/// Tape handles of one parameter set, in the same layout as
/// [`GnnmParameters`]. Inserting a set once and reusing the handles at
/// several call sites is what makes parameter sharing accumulate
/// gradients across sites.
#[derive(Debug, Clone, Copy)]
pub struct TapedGnnm {
    pub conv_kernel: ValueId,
    pub attn_q: ValueId,
    pub attn_k: ValueId,
    pub attn_v: ValueId,
    pub attn_out: ValueId,
    pub hyb_q: ValueId,
    pub hyb_k: ValueId,
    pub hyb_v: ValueId,
    pub ln1: (ValueId, ValueId),
    pub ln2: (ValueId, ValueId),
    pub ln3: (ValueId, ValueId),
}

impl TapedGnnm {
    /// Handles in canonical tensor order.
    pub fn ids(&self) -> Vec<ValueId> {
        vec![
            self.conv_kernel,
            self.attn_q,
            self.attn_k,
            self.attn_v,
            self.attn_out,
            self.hyb_q,
            self.hyb_k,
            self.hyb_v,
            self.ln1.0,
            self.ln1.1,
            self.ln2.0,
            self.ln2.1,
            self.ln3.0,
            self.ln3.1,
        ]
    }
}

/// Everything a module forward exposes: the output itself plus the
/// intermediates the invariants talk about.
#[derive(Debug, Clone, Copy)]
pub struct GnnmForward {
    /// d x n sequence, or d x 1 vector when aggregated.
    pub output: ValueId,
    pub aggregated: bool,
    /// Post-softmax blended-attention map, n x n; columns sum to 1.
    pub attention_map: ValueId,
    /// Post-softmax map of the reduced self-attention stage
    /// (d x d component / n x n temporal).
    pub component_map: ValueId,
    /// Blended-attention value projection, d x n.
    pub v_hat: ValueId,
    /// Aggregation weights over time positions (n x 1), present iff
    /// aggregated.
    pub aggregation_weights: Option<ValueId>,
}

/// Chronological convolution mask: softmax the 3-tap convolution response
/// along time within each feature row and gate the input with it.
/// Row j of the output depends only on row j of `x`.
pub fn f_conv<T: Scalar>(tape: &mut Tape<T>, x: ValueId, kernel: ValueId) -> Result<ValueId> {
    let response = tape.conv1d_time(x, kernel)?;
    let mask = tape.softmax(response, SoftmaxAxis::PerRow);
    tape.hadamard(mask, x)
}

/// Reduced self-attention stage. Output keeps the d x n input shape.
pub fn f_atten<T: Scalar>(
    tape: &mut Tape<T>,
    y1: ValueId,
    params: &TapedGnnm,
    config: &GnnmConfig,
) -> Result<(ValueId, ValueId)> {
    config.validate()?;
    let scale = 1.0 / (config.d as f64).sqrt();
    match config.attention_variant {
        AttentionVariant::Component => {
            // Projections act on Y1^T (n x d): Q, K, V are (n/2) x d.
            let z = tape.transpose(y1);
            let q = tape.matmul(params.attn_q, z)?;
            let k = tape.matmul(params.attn_k, z)?;
            let v = tape.matmul(params.attn_v, z)?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(kt, q)?; // d x d
            let scaled = tape.scale(logits, scale);
            let map = tape.softmax(scaled, SoftmaxAxis::PerColumn);
            let h = tape.matmul(v, map)?; // (n/2) x d
            let lifted = tape.matmul(params.attn_out, h)?; // n x d
            Ok((tape.transpose(lifted), map))
        }
        AttentionVariant::Temporal => {
            // Projections act on Y1 directly: Q, K, V are (d/2) x n.
            let q = tape.matmul(params.attn_q, y1)?;
            let k = tape.matmul(params.attn_k, y1)?;
            let v = tape.matmul(params.attn_v, y1)?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(kt, q)?; // n x n
            let scaled = tape.scale(logits, scale);
            let map = tape.softmax(scaled, SoftmaxAxis::PerColumn);
            let h = tape.matmul(v, map)?; // (d/2) x n
            Ok((tape.matmul(params.attn_out, h)?, map))
        }
    }
}

/// Output of the blended-attention stage.
#[derive(Debug, Clone, Copy)]
pub struct HybridOutput {
    pub output: ValueId,
    pub attention_map: ValueId,
    pub v_hat: ValueId,
    pub aggregation_weights: Option<ValueId>,
}

/// Blended attention: the context vector is concatenated under every
/// time step for the query/value projections, while keys come from the
/// plain sequence (projecting the augmented sequence twice would only
/// recompute the shared context block).
///
/// When aggregating, the per-position sums of the post-softmax map are
/// softmaxed once more and used to mix the columns of the value
/// projection into a single d-vector.
pub fn f_hybrid_atten<T: Scalar>(
    tape: &mut Tape<T>,
    y2: ValueId,
    context: ValueId,
    params: &TapedGnnm,
    d: usize,
    aggregate: bool,
) -> Result<HybridOutput> {
    let ctx = tape.value(context);
    if ctx.rows() != d || ctx.cols() != 1 {
        return Err(Error::shape(
            "f_hybrid_atten context",
            format!("{d}x1"),
            ctx.shape_string(),
        ));
    }
    let n = tape.value(y2).cols();
    let tiled = tape.tile_cols(context, n)?;
    let augmented = tape.vconcat(y2, tiled)?; // 2d x n
    let q_hat = tape.matmul(params.hyb_q, augmented)?; // d x n
    let k_hat = tape.matmul(params.hyb_k, y2)?; // d x n
    let v_hat = tape.matmul(params.hyb_v, augmented)?; // d x n
    let kt = tape.transpose(k_hat);
    let logits = tape.matmul(kt, q_hat)?; // n x n
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let map = tape.softmax(scaled, SoftmaxAxis::PerColumn);

    if aggregate {
        let sums = tape.col_sums(map); // n x 1
        let weights = tape.softmax(sums, SoftmaxAxis::PerColumn);
        let output = tape.matmul(v_hat, weights)?; // d x 1
        Ok(HybridOutput {
            output,
            attention_map: map,
            v_hat,
            aggregation_weights: Some(weights),
        })
    } else {
        let output = tape.matmul(v_hat, map)?; // d x n
        Ok(HybridOutput {
            output,
            attention_map: map,
            v_hat,
            aggregation_weights: None,
        })
    }
}

/// Pre-function block: LayerNorm over the d features of each time step,
/// then the configured activation.
fn phi<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    ln: (ValueId, ValueId),
    config: &GnnmConfig,
) -> Result<ValueId> {
    let normed = tape.layer_norm_cols(x, ln.0, ln.1, config.epsilon)?;
    Ok(match config.activation {
        Activation::Elu => tape.elu(normed),
        Activation::Relu => tape.relu(normed),
    })
}

/// Full module forward: each stage consumes `phi(input) + input`.
pub fn gnnm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    context: ValueId,
    params: &TapedGnnm,
    config: &GnnmConfig,
) -> Result<GnnmForward> {
    config.validate()?;
    let xm = tape.value(x);
    if xm.rows() != config.d || xm.cols() != config.n {
        return Err(Error::shape(
            "gnnm_forward input",
            format!("{}x{}", config.d, config.n),
            xm.shape_string(),
        ));
    }

    let p1 = phi(tape, x, params.ln1, config)?;
    let r1 = tape.add(p1, x)?;
    let y1 = f_conv(tape, r1, params.conv_kernel)?;

    let p2 = phi(tape, y1, params.ln2, config)?;
    let r2 = tape.add(p2, y1)?;
    let (y2, component_map) = f_atten(tape, r2, params, config)?;

    let p3 = phi(tape, y2, params.ln3, config)?;
    let r3 = tape.add(p3, y2)?;
    let hybrid = f_hybrid_atten(tape, r3, context, params, config.d, config.aggregate_output)?;

    Ok(GnnmForward {
        output: hybrid.output,
        aggregated: config.aggregate_output,
        attention_map: hybrid.attention_map,
        component_map,
        v_hat: hybrid.v_hat,
        aggregation_weights: hybrid.aggregation_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn f_conv_zero_kernel_gives_uniform_mask() {
        // Zero logits -> uniform softmax -> every entry becomes x / n.
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(
            2,
            4,
            vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0],
        ));
        let k = t.leaf(Matrix::column(&[0.0, 0.0, 0.0]));
        let out = f_conv(&mut t, x, k).unwrap();
        let xv = t.value(x).clone();
        let ov = t.value(out);
        for i in 0..2 {
            for j in 0..4 {
                assert!(close(ov[(i, j)], xv[(i, j)] / 4.0, 1e-12));
            }
        }
    }

    #[test]
    fn f_conv_constant_row_collapses_to_row_over_n() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(2, 3, vec![5.0, 5.0, 5.0, 1.0, 2.0, 4.0]));
        let k = t.leaf(Matrix::column(&[0.0, 1.0, 0.0]));
        let out = f_conv(&mut t, x, k).unwrap();
        let ov = t.value(out);
        // Constant row: identity kernel response is the row itself, but
        // softmax of a constant row is uniform only at interior ties;
        // here the response row is (5,5,5), so the mask is uniform.
        for j in 0..3 {
            assert!(close(ov[(0, j)], 5.0 / 3.0, 1e-12));
        }
    }

    #[test]
    fn f_conv_box_kernel_expected_values() {
        // mask = softmax(3, 6, 5) applied elementwise to (1, 2, 3);
        // expected values computed from the softmax directly.
        let e3 = 3.0f64.exp();
        let e6 = 6.0f64.exp();
        let e5 = 5.0f64.exp();
        let z = e3 + e6 + e5;
        let expected = [e3 / z * 1.0, e6 / z * 2.0, e5 / z * 3.0];

        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let k = t.leaf(Matrix::column(&[1.0, 1.0, 1.0]));
        let out = f_conv(&mut t, x, k).unwrap();
        for (got, want) in t.value(out).as_slice().iter().zip(&expected) {
            assert!(close(*got, *want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn f_conv_mask_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(4, 5, data));
        let k = t.leaf(Matrix::column(&[0.3, -0.2, 0.9]));
        let response = t.conv1d_time(x, k).unwrap();
        let mask = t.softmax(response, SoftmaxAxis::PerRow);
        let mv = t.value(mask);
        for i in 0..4 {
            let s: f64 = mv.row(i).iter().sum();
            assert!(close(s, 1.0, 1e-12));
        }
    }

    #[test]
    fn f_conv_rows_are_independent() {
        // Perturbing row 1 of x must leave row 0 of the output untouched.
        let base = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut perturbed = base.clone();
        perturbed[(1, 1)] += 10.0;

        let run = |m: Matrix<f64>| {
            let mut t = Tape::new();
            let x = t.leaf(m);
            let k = t.leaf(Matrix::column(&[0.5, 1.0, -0.5]));
            let out = f_conv(&mut t, x, k).unwrap();
            t.value(out).clone()
        };
        let a = run(base);
        let b = run(perturbed);
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn f_atten_all_zero_weights_give_zero_output() {
        let config = GnnmConfig::new(3, 4, AttentionVariant::Component);
        let params = GnnmParameters::<f64>::zeros(&config).unwrap();
        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let x = t.leaf(Matrix::filled(3, 4, 1.5));
        let (out, _) = f_atten(&mut t, x, &taped, &config).unwrap();
        assert!(t.value(out).as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.value(out).shape_string(), "3x4");
    }

    #[test]
    fn f_atten_zero_keys_give_uniform_attention() {
        // With attn_k = 0 the d x d map is uniform (1/d each); the output
        // must equal (attn_out . V . (1/d ones))^T computed directly.
        let config = GnnmConfig::new(3, 4, AttentionVariant::Component);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = GnnmParameters::<f64>::init(&config, &mut rng).unwrap();
        params.attn_k = Matrix::zeros(2, 4);

        let xdata: Vec<f64> = (0..12).map(|k| (k as f64 * 0.31).sin()).collect();
        let x = Matrix::from_vec(3, 4, xdata);

        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let xid = t.leaf(x.clone());
        let (out, map) = f_atten(&mut t, xid, &taped, &config).unwrap();

        let mv = t.value(map);
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(mv[(i, j)], 1.0 / 3.0, 1e-12));
            }
        }

        // Straight-line evaluation with the uniform map.
        let z = x.transposed();
        let v = mul(&params.attn_v, &z); // V = attn_v Z, (n/2) x d
        let uniform = Matrix::filled(3, 3, 1.0 / 3.0);
        let h = mul(&v, &uniform);
        let lifted = mul(&params.attn_out, &h);
        let expected = lifted.transposed();
        for (got, want) in t.value(out).as_slice().iter().zip(expected.as_slice()) {
            assert!(close(*got, *want, 1e-12));
        }
    }

    fn mul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn f_atten_rejects_odd_n_for_component() {
        let config = GnnmConfig::new(4, 5, AttentionVariant::Component);
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hybrid_single_position_returns_v_hat_column() {
        // n = 1: the map is [[1]], the aggregation weight is (1), and the
        // aggregated output is exactly the single column of V_hat.
        let config = GnnmConfig::new(4, 1, AttentionVariant::Temporal);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = GnnmParameters::<f64>::init(&config, &mut rng).unwrap();
        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let y2 = t.leaf(Matrix::column(&[0.2, -0.4, 0.8, 1.0]));
        let c = t.leaf(Matrix::column(&[1.0, 0.0, -1.0, 2.0]));
        let hy = f_hybrid_atten(&mut t, y2, c, &taped, 4, true).unwrap();
        assert_eq!(t.value(hy.attention_map).as_slice(), &[1.0]);
        let vhat = t.value(hy.v_hat).clone();
        let out = t.value(hy.output);
        for i in 0..4 {
            assert!(close(out[(i, 0)], vhat[(i, 0)], 1e-15));
        }
    }

    #[test]
    fn hybrid_zero_keys_average_v_hat_columns() {
        let config = GnnmConfig::new(4, 5, AttentionVariant::Temporal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = GnnmParameters::<f64>::init(&config, &mut rng).unwrap();
        params.hyb_k = Matrix::zeros(4, 4);

        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let data: Vec<f64> = (0..20).map(|k| (k as f64 * 0.7).cos()).collect();
        let y2 = t.leaf(Matrix::from_vec(4, 5, data));
        let c = t.leaf(Matrix::column(&[0.5, -0.5, 1.5, 0.25]));

        let non_agg = f_hybrid_atten(&mut t, y2, c, &taped, 4, false).unwrap();
        let vhat = t.value(non_agg.v_hat).clone();
        let mean_col: Vec<f64> = (0..4)
            .map(|i| (0..5).map(|j| vhat[(i, j)]).sum::<f64>() / 5.0)
            .collect();
        let out = t.value(non_agg.output);
        for i in 0..4 {
            for j in 0..5 {
                assert!(close(out[(i, j)], mean_col[i], 1e-12));
            }
        }

        let agg = f_hybrid_atten(&mut t, y2, c, &taped, 4, true).unwrap();
        let w = t.value(agg.aggregation_weights.unwrap());
        for j in 0..5 {
            assert!(close(w[(j, 0)], 0.2, 1e-12));
        }
        let av = t.value(agg.output);
        for i in 0..4 {
            assert!(close(av[(i, 0)], mean_col[i], 1e-12));
        }
    }

    #[test]
    fn hybrid_rejects_wrong_context_length() {
        let config = GnnmConfig::new(4, 2, AttentionVariant::Temporal);
        let params = GnnmParameters::<f64>::zeros(&config).unwrap();
        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let y2 = t.leaf(Matrix::zeros(4, 2));
        let c = t.leaf(Matrix::column(&[1.0, 2.0, 3.0]));
        let err = f_hybrid_atten(&mut t, y2, c, &taped, 4, false).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn forward_shapes_follow_the_aggregate_flag() {
        for (aggregate, expected) in [(false, "6x4"), (true, "6x1")] {
            let mut config = GnnmConfig::new(6, 4, AttentionVariant::Component);
            config.aggregate_output = aggregate;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let params = GnnmParameters::<f64>::init(&config, &mut rng).unwrap();
            let mut t = Tape::new();
            let taped = params.insert(&mut t);
            let x = t.leaf(Matrix::from_fn(6, 4, |i, j| {
                ((i * 4 + j) as f64 * 0.17).sin()
            }));
            let c = t.leaf(Matrix::from_fn(6, 1, |i, _| (i as f64 * 0.4).cos()));
            let fwd = gnnm_forward(&mut t, x, c, &taped, &config).unwrap();
            assert_eq!(t.value(fwd.output).shape_string(), expected);
            assert_eq!(fwd.aggregated, aggregate);

            // Attention columns sum to 1.
            let map = t.value(fwd.attention_map);
            for j in 0..map.cols() {
                let s: f64 = (0..map.rows()).map(|i| map[(i, j)]).sum();
                assert!(close(s, 1.0, 1e-6));
            }
        }
    }

    #[test]
    fn aggregated_output_is_v_hat_times_weights() {
        let mut config = GnnmConfig::new(4, 6, AttentionVariant::Component);
        config.aggregate_output = true;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = GnnmParameters::<f64>::init(&config, &mut rng).unwrap();
        let mut t = Tape::new();
        let taped = params.insert(&mut t);
        let x = t.leaf(Matrix::from_fn(4, 6, |i, j| ((i + 2 * j) as f64 * 0.23).sin()));
        let c = t.leaf(Matrix::from_fn(4, 1, |i, _| 0.3 * i as f64 - 0.5));
        let fwd = gnnm_forward(&mut t, x, c, &taped, &config).unwrap();

        let vhat = t.value(fwd.v_hat).clone();
        let w = t.value(fwd.aggregation_weights.unwrap()).clone();
        let out = t.value(fwd.output);
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += vhat[(i, j)] * w[(j, 0)];
            }
            assert!(close(out[(i, 0)], acc, 1e-12));
        }
    }

    #[test]
    fn parameter_shapes_depend_on_variant() {
        let comp = GnnmConfig::new(6, 4, AttentionVariant::Component);
        let p = GnnmParameters::<f64>::zeros(&comp).unwrap();
        assert_eq!(p.attn_q.shape_string(), "2x4");
        assert_eq!(p.attn_out.shape_string(), "4x2");

        let temp = GnnmConfig::new(6, 4, AttentionVariant::Temporal);
        let p = GnnmParameters::<f64>::zeros(&temp).unwrap();
        assert_eq!(p.attn_q.shape_string(), "3x6");
        assert_eq!(p.attn_out.shape_string(), "6x3");
    }
}
