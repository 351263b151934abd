//! Small dense networks with hand-written backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Multi-layer perceptron; every layer but the last uses `hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer outputs kept for the backward pass; `values[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace {
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("layer sizes {sizes:?} need two or more positive entries")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| {
                let limit = (6.0 / (p[0] + p[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                Dense {
                    inputs: p[0],
                    outputs: p[1],
                    weights: (0..p[0] * p[1]).map(|_| dist.sample(rng)).collect(),
                    biases: vec![0.0; p[1]],
                }
            })
            .collect();
        Ok(Self { layers, hidden, output })
    }

    /// Single linear layer computing the identity map.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        Self {
            layers: vec![Dense { inputs: n, outputs: n, weights, biases: vec![0.0; n] }],
            hidden: Activation::Identity,
            output: Activation::Identity,
        }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(invalid(format!("expected {} parameters, got {}", self.num_params(), params.len())));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Applies `f(param, grad)` over parameters and a matching flat vector.
    pub fn zip_params_mut(&mut self, other: &[f64], mut f: impl FnMut(&mut f64, f64)) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                f(w, other[k]);
                k += 1;
            }
        }
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_size() {
            return Err(invalid(format!("input of length {} for a {}-input network", input.len(), self.input_size())));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let act = if li == last { self.output } else { self.hidden };
            let x = values.last().expect("non-empty");
            let y: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    act.apply(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + l.biases[o])
                })
                .collect();
            values.push(y);
        }
        Ok(Trace { values })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.values.pop().expect("non-empty"))
    }

    /// Accumulates `d(output_grad · y)/dθ` into `grad` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_size() {
            return Err(invalid(format!("output gradient of length {} for {} outputs", output_grad.len(), self.output_size())));
        }
        if grad.len() != self.num_params() {
            return Err(invalid(format!("gradient buffer of length {} for {} parameters", grad.len(), self.num_params())));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offsets.push(k);
            k += l.weights.len() + l.biases.len();
        }
        let last = self.layers.len() - 1;
        let mut delta = output_grad.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let act = if li == last { self.output } else { self.hidden };
            let y = &trace.values[li + 1];
            let x = &trace.values[li];
            for (d, &yo) in delta.iter_mut().zip(y) {
                *d *= act.derivative(yo);
            }
            let off = offsets[li];
            let nw = l.weights.len();
            for o in 0..l.outputs {
                let row = &mut grad[off + o * l.inputs..off + (o + 1) * l.inputs];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += delta[o] * xi;
                }
                grad[off + nw + o] += delta[o];
            }
            let mut dx = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += delta[o] * w;
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|w| w.is_finite()))
    }

    /// Moves every parameter toward `source`: θ ← (1−τ)θ + τ·θ_source.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (a, b) in dst.weights.iter_mut().zip(&src.weights) {
                *a += tau * (b - *a);
            }
            for (a, b) in dst.biases.iter_mut().zip(&src.biases) {
                *a += tau * (b - *a);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    /// One descent step of a network along `grad`.
    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) {
        let mut k = 0;
        let mut upd = self.updater();
        net.zip_params_mut(grad, |p, g| {
            upd(k, p, g);
            k += 1;
        });
    }

    /// One descent step of a flat parameter vector along `grad`.
    pub fn step_slice(&mut self, params: &mut [f64], grad: &[f64]) {
        let mut upd = self.updater();
        for (k, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            upd(k, p, g);
        }
    }

    fn updater(&mut self) -> impl FnMut(usize, &mut f64, f64) + '_ {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        move |k, p, g| {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            *p -= lr * (m[k] / b1t) / ((v[k] / b2t).sqrt() + eps);
        }
    }
}

/// Largest relative error between analytic and central-difference
/// gradients of `w · net(x)` over `probes` random parameters and inputs.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero entries from dominating.
pub fn gradient_check<R: Rng + ?Sized>(net: &Mlp, probes: usize, rng: &mut R) -> Result<f64> {
    const H: f64 = 1e-6;
    const FLOOR: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    for _ in 0..probes {
        let mut probe = net.clone();
        let p: Vec<f64> = probe.params().iter().map(|w| w + 0.3 * unit.sample(rng)).collect();
        probe.set_params(&p)?;
        let x: Vec<f64> = (0..net.input_size()).map(|_| unit.sample(rng)).collect();
        let w: Vec<f64> = (0..net.output_size()).map(|_| unit.sample(rng)).collect();
        let loss = |m: &Mlp, input: &[f64]| -> Result<f64> {
            Ok(m.forward(input)?.iter().zip(&w).map(|(a, b)| a * b).sum())
        };
        let trace = probe.forward_trace(&x)?;
        let mut grad = vec![0.0; probe.num_params()];
        let dx = probe.backward(&trace, &w, &mut grad)?;
        let mut check = |a: f64, n: f64| {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
            worst = worst.max(e);
        };
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + H;
            probe.set_params(&q)?;
            let up = loss(&probe, &x)?;
            q[i] = p[i] - H;
            probe.set_params(&q)?;
            let down = loss(&probe, &x)?;
            check(grad[i], (up - down) / (2.0 * H));
        }
        probe.set_params(&p)?;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] = x[i] + H;
            let up = loss(&probe, &xp)?;
            xp[i] = x[i] - H;
            let down = loss(&probe, &xp)?;
            check(dx[i], (up - down) / (2.0 * H));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::identity(4);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap(), vec![1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn two_layer_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 7, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        assert!(gradient_check(&net, 10, &mut rng).unwrap() < 1e-4);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Mlp::identity(2);
        assert!(net.forward(&[1.0]).is_err());
        let t = net.forward_trace(&[1.0, 2.0]).unwrap();
        assert!(net.backward(&t, &[1.0], &mut vec![0.0; net.num_params()]).is_err());
        assert!(Mlp::new(&[3], Activation::Tanh, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[1, 1], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let mut opt = Adam::new(net.num_params(), 0.05);
        for _ in 0..2000 {
            let mut g = vec![0.0; net.num_params()];
            for x in [-1.0, 0.0, 1.0, 2.0] {
                let t = net.forward_trace(&[x]).unwrap();
                let err = t.output()[0] - (3.0 * x - 1.0);
                net.backward(&t, &[err], &mut g).unwrap();
            }
            opt.step(&mut net, &g);
        }
        assert!((net.layers[0].weights[0] - 3.0).abs() < 1e-3);
        assert!((net.layers[0].biases[0] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn soft_update_mixes() {
        let a = Mlp::identity(2);
        let mut b = a.clone();
        b.set_params(&[0.0; 6]).unwrap();
        b.soft_update(&a, 0.25);
        assert_eq!(b.layers[0].weights[0], 0.25);
    }
}
