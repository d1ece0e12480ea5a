use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::{sigmoid, softplus, GradError};

/// Layout of a two-headed ReLU perceptron.
///
/// The last layer fans out to `2 * state_dim` values: the first half is the
/// mean head, the second half the raw variance head (softplus applied).
/// Parameters are stored layer by layer, each layer as a row-major
/// `fan_out x fan_in` weight block followed by `fan_out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    input_dim: usize,
    hidden: Vec<usize>,
    state_dim: usize,
}

impl NetArch {
    pub fn new(input_dim: usize, hidden: Vec<usize>, state_dim: usize) -> Result<Self, GradError> {
        if hidden.is_empty() {
            return Err(GradError::Arch("at least one hidden layer is required".into()));
        }
        if input_dim == 0 || state_dim == 0 || hidden.contains(&0) {
            return Err(GradError::Arch("all layer widths must be >= 1".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            state_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.state_dim
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim());
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Flat parameter vector for a [`NetArch`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(arch: &NetArch) -> Self {
        Self(vec![0.0; arch.num_params()])
    }

    /// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &NetArch, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(arch.num_params());
        for (fan_in, fan_out) in arch.layers() {
            let limit = (6.0 / fan_in as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            values.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self(values)
    }

    pub fn check(&self, arch: &NetArch) -> Result<(), GradError> {
        if self.0.len() != arch.num_params() {
            return Err(GradError::Dimension {
                what: "parameter vector",
                expected: arch.num_params(),
                got: self.0.len(),
            });
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(GradError::NonFiniteParam(i));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpOutput {
    pub mean: Vec<f64>,
    /// Softplus of the raw variance head, strictly positive.
    pub var: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    /// `layer_in[l]` is the input to layer `l` (the network input for `l = 0`,
    /// the ReLU output of the previous layer afterwards).
    layer_in: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last entry is the raw output.
    pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn raw_output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let fan_in = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(j, bj)| {
        let row = &w[j * fan_in..(j + 1) * fan_in];
        bj + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
    }));
}

fn forward_trace(params: &[f64], arch: &NetArch, x: &[f64]) -> MlpTrace {
    let layers = arch.layers();
    let mut trace = MlpTrace {
        layer_in: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    let mut offset = 0;
    let mut input = x.to_vec();
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        offset += (fan_in + 1) * fan_out;
        let mut z = Vec::with_capacity(fan_out);
        affine(w, b, &input, &mut z);
        let next = if l + 1 < layers.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            Vec::new()
        };
        trace.layer_in.push(std::mem::replace(&mut input, next));
        trace.pre.push(z);
    }
    trace
}

fn split_heads(raw: &[f64], state_dim: usize) -> MlpOutput {
    MlpOutput {
        mean: raw[..state_dim].to_vec(),
        var: raw[state_dim..].iter().map(|&r| softplus(r)).collect(),
    }
}

fn check_input(arch: &NetArch, x: &[f64]) -> Result<(), GradError> {
    if x.len() != arch.input_dim() {
        return Err(GradError::Dimension {
            what: "network input",
            expected: arch.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Forward pass returning the mean head and the (positive) variance head.
pub fn mlp_forward(params: &ParamVector, arch: &NetArch, x: &[f64]) -> Result<MlpOutput, GradError> {
    params.check(arch)?;
    check_input(arch, x)?;
    Ok(mlp_forward_unchecked(params.as_slice(), arch, x))
}

/// [`mlp_forward`] without validation, for hot loops whose inputs have been
/// checked once up front.
pub fn mlp_forward_unchecked(params: &[f64], arch: &NetArch, x: &[f64]) -> MlpOutput {
    let trace = forward_trace(params, arch, x);
    split_heads(trace.raw_output(), arch.state_dim())
}

/// Record of consecutive forward passes sharing one parameter vector.
///
/// Each call to [`GradTape::forward`] appends a step; [`GradTape::backward_step`]
/// accumulates the parameter gradient for one step given the loss adjoints of
/// its two heads, and returns the adjoint of that step's input vector so a
/// caller can chain recursive rollouts backwards in time.
pub struct GradTape<'a> {
    params: &'a [f64],
    arch: &'a NetArch,
    steps: Vec<MlpTrace>,
}

impl<'a> GradTape<'a> {
    pub fn new(params: &'a [f64], arch: &'a NetArch) -> Self {
        Self {
            params,
            arch,
            steps: Vec::new(),
        }
    }

    pub fn arch(&self) -> &NetArch {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forward(&mut self, x: &[f64]) -> MlpOutput {
        debug_assert_eq!(x.len(), self.arch.input_dim());
        let trace = forward_trace(self.params, self.arch, x);
        let out = split_heads(trace.raw_output(), self.arch.state_dim());
        self.steps.push(trace);
        out
    }

    /// Backpropagates one recorded step.
    ///
    /// `d_mean` and `d_var` are d(loss)/d(mean head) and d(loss)/d(variance
    /// head, after softplus). Parameter adjoints are added into `grad`.
    pub fn backward_step(&self, step: usize, d_mean: &[f64], d_var: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let trace = &self.steps[step];
        let sd = self.arch.state_dim();
        let raw = trace.raw_output();
        let mut delta: Vec<f64> = Vec::with_capacity(2 * sd);
        delta.extend_from_slice(d_mean);
        delta.extend(d_var.iter().zip(&raw[sd..]).map(|(dv, &r)| dv * sigmoid(r)));

        let layers = self.arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += (i + 1) * o;
        }

        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let w_off = offsets[l];
            let b_off = w_off + fan_in * fan_out;
            let input = &trace.layer_in[l];
            let w = &self.params[w_off..b_off];
            let mut d_in = vec![0.0; fan_in];
            for j in 0..fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                grad[b_off + j] += dj;
                let gw = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                for (g, x) in gw.iter_mut().zip(input) {
                    *g += dj * x;
                }
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for (d, wv) in d_in.iter_mut().zip(row) {
                    *d += dj * wv;
                }
            }
            if l > 0 {
                let pre = &trace.pre[l - 1];
                for (d, z) in d_in.iter_mut().zip(pre) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// The same network expressed on the scalar tape. Slow; used to cross-check
/// [`GradTape`] and for small hand-built objectives.
pub fn mlp_forward_tape<'t>(
    params: &[Var<'t>],
    arch: &NetArch,
    x: &[Var<'t>],
) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
    let layers = arch.layers();
    let mut offset = 0;
    let mut input: Vec<Var<'t>> = x.to_vec();
    let tape: &Tape = x[0].tape();
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let mut out = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let terms: Vec<Var<'t>> = (0..fan_in)
                .map(|i| params[offset + j * fan_in + i] * input[i])
                .collect();
            let z = tape.sum(&terms) + params[offset + fan_in * fan_out + j];
            out.push(if l + 1 < layers.len() { z.relu() } else { z });
        }
        offset += (fan_in + 1) * fan_out;
        input = out;
    }
    let sd = arch.state_dim();
    let mean = input[..sd].to_vec();
    let var = input[sd..].iter().map(|v| v.softplus()).collect();
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::tape::grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layer_sum() {
        let arch = NetArch::new(9, vec![110, 110], 3).unwrap();
        assert_eq!(arch.num_params(), 10 * 110 + 111 * 110 + 111 * 6);
        assert!(NetArch::new(3, vec![], 3).is_err());
        assert!(NetArch::new(3, vec![4, 0], 3).is_err());
    }

    #[test]
    fn zero_network_outputs_log_two_variance() {
        let arch = NetArch::new(4, vec![5, 3], 2).unwrap();
        let out = mlp_forward(&ParamVector::zeros(&arch), &arch, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(out.mean, vec![0.0, 0.0]);
        for v in out.var {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_forward_one_one_two() {
        // 1 -> 1 hidden -> 2 outputs (state_dim 1), all weights and biases 1.
        // h = relu(1*1 + 1) = 2; mean = 1*2 + 1 = 3; raw = 3; var = ln(1 + e^3).
        let arch = NetArch::new(1, vec![1], 1).unwrap();
        let params = ParamVector::new(vec![1.0; arch.num_params()]);
        let out = mlp_forward(&params, &arch, &[1.0]).unwrap();
        assert_eq!(out.mean, vec![3.0]);
        assert!((out.var[0] - 3.048_587_351_573_742).abs() < 1e-14);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let arch = NetArch::new(3, vec![8, 8], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ParamVector::init(&arch, &mut rng);
        let a = mlp_forward(&p, &arch, &[0.1, 0.2, 0.3]).unwrap();
        let b = mlp_forward(&p, &arch, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let arch = NetArch::new(3, vec![4], 2).unwrap();
        let p = ParamVector::zeros(&arch);
        assert!(matches!(
            mlp_forward(&p, &arch, &[1.0]),
            Err(GradError::Dimension { .. })
        ));
        let short = ParamVector::new(vec![0.0; 3]);
        assert!(mlp_forward(&short, &arch, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fused_backward_matches_scalar_tape() {
        let arch = NetArch::new(3, vec![4, 5], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParamVector::init(&arch, &mut rng);
        let x = [0.4, -0.7, 1.1];
        let target = [0.2, -0.1];
        // loss = sum_c (mean_c - target_c)^2 + 0.3 * var_c
        let tape_grad = grad(
            |t, b| {
                let xv: Vec<_> = x.iter().map(|&v| t.constant(v)).collect();
                let (m, v) = mlp_forward_tape(b, &arch, &xv);
                let terms: Vec<_> = (0..2).map(|c| (m[c] - target[c]).square() + v[c] * 0.3).collect();
                t.sum(&terms)
            },
            p.as_slice(),
        )
        .unwrap();
        let mut gt = GradTape::new(p.as_slice(), &arch);
        let out = gt.forward(&x);
        let d_mean: Vec<f64> = (0..2).map(|c| 2.0 * (out.mean[c] - target[c])).collect();
        let mut g = vec![0.0; arch.num_params()];
        gt.backward_step(0, &d_mean, &[0.3, 0.3], &mut g);
        for (a, b) in g.iter().zip(&tape_grad) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
