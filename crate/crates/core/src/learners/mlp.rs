//! Fully connected network with a smooth activation, full-batch Adam and
//! early stopping. Matrices are row-major; a layer's weight matrix is
//! `n_out x n_in`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::config::LearnerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `z * sigmoid(z)`
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    /// Value and derivative at `z`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                (z * s, s * (1.0 + z * (1.0 - s)))
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[n_out, n_in]`
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn n_out(&self) -> usize {
        self.shape[0]
    }

    fn n_in(&self) -> usize {
        self.shape[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Dense>,
}

/// `C (m x n) = A (m x k) * B (k x n)` with arbitrary strides, overwriting C.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the slices cover every strided index touched, as asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Buffers of a forward pass, reused across epochs.
#[derive(Default)]
struct Trace {
    /// `pre[l]` is `n x n_out(l)`; the last entry is the network output.
    pre: Vec<Vec<f64>>,
    /// Activated hidden layers and their derivatives at `pre`.
    act: Vec<Vec<f64>>,
    dact: Vec<Vec<f64>>,
    /// Backward-pass scratch.
    g: Vec<f64>,
    ga: Vec<f64>,
}

/// Largest log-mean the Poisson loss exponentiates.
pub(crate) const POISSON_MAX_LOG: f64 = 50.0;

/// Training objective on the raw network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loss {
    /// Mean over rows of the squared error summed over outputs.
    Squared,
    /// Binary cross-entropy on a scalar logit with 0/1 targets.
    Logistic,
    /// Poisson quasi-likelihood `e^o - t o` on a log-mean output.
    Poisson,
}

impl Loss {
    /// Returns the loss and writes `d loss / d output` into `grad`.
    fn eval(self, out: &[f64], target: &[f64], n: usize, grad: Option<&mut [f64]>) -> f64 {
        let inv = 1.0 / n as f64;
        let mut total = 0.0;
        match self {
            Loss::Squared => {
                let mut g = grad;
                for (i, (o, t)) in out.iter().zip(target).enumerate() {
                    let r = o - t;
                    total += r * r;
                    if let Some(g) = g.as_deref_mut() {
                        g[i] = 2.0 * r * inv;
                    }
                }
            }
            Loss::Logistic => {
                let mut g = grad;
                for (i, (o, t)) in out.iter().zip(target).enumerate() {
                    // log(1 + e^o) - t o, computed stably
                    let sp = if *o > 0.0 { o + (-o).exp().ln_1p() } else { o.exp().ln_1p() };
                    total += sp - t * o;
                    if let Some(g) = g.as_deref_mut() {
                        g[i] = (1.0 / (1.0 + (-o).exp()) - t) * inv;
                    }
                }
            }
            Loss::Poisson => {
                let mut g = grad;
                for (i, (o, t)) in out.iter().zip(target).enumerate() {
                    let e = o.min(POISSON_MAX_LOG).exp();
                    total += e - t * o;
                    if let Some(g) = g.as_deref_mut() {
                        g[i] = (e - t) * inv;
                    }
                }
            }
        }
        total * inv
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let bound = (6.0 / (i + o) as f64).sqrt();
                Dense {
                    shape: [o, i],
                    weights: (0..i * o).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; o],
                }
            })
            .collect();
        Mlp { activation, layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, Dense::n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Sets every output-layer parameter to zero, making the network the
    /// constant function 0.
    pub(crate) fn zero_output(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weights.iter_mut().for_each(|w| *w = 0.0);
            last.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    fn run(&self, x: &[f64], n: usize, tr: &mut Trace) {
        let nl = self.layers.len();
        tr.pre.resize_with(nl, Vec::new);
        tr.act.resize_with(nl - 1, Vec::new);
        tr.dact.resize_with(nl - 1, Vec::new);
        for (l, layer) in self.layers.iter().enumerate() {
            let (o, i) = (layer.n_out(), layer.n_in());
            let mut z = std::mem::take(&mut tr.pre[l]);
            z.resize(n * o, 0.0);
            let input = if l == 0 { x } else { &tr.act[l - 1] };
            gemm(n, i, o, input, i, 1, &layer.weights, 1, i, &mut z);
            for row in z.chunks_exact_mut(o) {
                row.iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
            }
            if l + 1 < nl {
                let (a, d) = (&mut tr.act[l], &mut tr.dact[l]);
                a.resize(n * o, 0.0);
                d.resize(n * o, 0.0);
                for ((zv, av), dv) in z.iter().zip(a.iter_mut()).zip(d.iter_mut()) {
                    (*av, *dv) = self.activation.eval(*zv);
                }
            }
            tr.pre[l] = z;
        }
    }

    /// Outputs for a row-major batch `x` of `n` rows (`n x n_out`).
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut tr = Trace::default();
        self.run(x, n, &mut tr);
        tr.pre.pop().unwrap_or_default()
    }

    /// Backpropagates `tr.g` (`n x n_out`) to parameter gradients and,
    /// optionally, to the input, leaving `d / d input` (`n x n_in`) in `tr.g`.
    fn backward(&self, x: &[f64], tr: &mut Trace, n: usize, params: Option<&mut [f64]>, to_input: bool) {
        let mut params = params;
        let mut off = self.n_params();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (o, i) = (layer.n_out(), layer.n_in());
            off -= o * i + o;
            if let Some(p) = params.as_deref_mut() {
                let (gw, rest) = p[off..].split_at_mut(o * i);
                let input = if l == 0 { x } else { &tr.act[l - 1] };
                gemm(o, n, i, &tr.g, 1, o, input, i, 1, gw);
                let gb = &mut rest[..o];
                gb.iter_mut().for_each(|v| *v = 0.0);
                for row in tr.g.chunks_exact(o) {
                    gb.iter_mut().zip(row).for_each(|(b, r)| *b += r);
                }
            }
            if l == 0 && !to_input {
                break;
            }
            tr.ga.resize(n * i, 0.0);
            gemm(n, o, i, &tr.g, o, 1, &layer.weights, i, 1, &mut tr.ga);
            if l > 0 {
                tr.ga.iter_mut().zip(&tr.dact[l - 1]).for_each(|(v, d)| *v *= d);
            }
            std::mem::swap(&mut tr.g, &mut tr.ga);
        }
    }

    /// Derivative of output `output` with respect to every input, per row
    /// (`n x n_in`).
    pub fn input_gradient(&self, x: &[f64], n: usize, output: usize) -> Vec<f64> {
        self.forward_with_input_gradient(x, n, output).1
    }

    /// Outputs and [`Mlp::input_gradient`] from a single forward pass.
    pub fn forward_with_input_gradient(&self, x: &[f64], n: usize, output: usize) -> (Vec<f64>, Vec<f64>) {
        let mut tr = Trace::default();
        self.run(x, n, &mut tr);
        let o = self.n_out();
        tr.g = vec![0.0; n * o];
        tr.g.iter_mut().skip(output).step_by(o).for_each(|v| *v = 1.0);
        self.backward(x, &mut tr, n, None, true);
        (tr.pre.pop().unwrap_or_default(), tr.g)
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    fn loss_and_grad_with(&self, x: &[f64], y: &[f64], n: usize, loss: Loss, grad: &mut [f64], tr: &mut Trace) -> f64 {
        self.run(x, n, tr);
        let out = tr.pre.last().expect("at least one layer");
        let mut g = std::mem::take(&mut tr.g);
        g.resize(out.len(), 0.0);
        let value = loss.eval(out, y, n, Some(&mut g));
        tr.g = g;
        self.backward(x, tr, n, Some(grad), false);
        value
    }

    fn loss_with(&self, x: &[f64], y: &[f64], n: usize, loss: Loss, tr: &mut Trace) -> f64 {
        self.run(x, n, tr);
        loss.eval(tr.pre.last().expect("at least one layer"), y, n, None)
    }

    #[cfg(test)]
    fn loss_and_grad(&self, x: &[f64], y: &[f64], n: usize, loss: Loss, grad: &mut [f64]) -> f64 {
        self.loss_and_grad_with(x, y, n, loss, grad, &mut Trace::default())
    }

    fn loss(&self, x: &[f64], y: &[f64], n: usize, loss: Loss) -> f64 {
        self.loss_with(x, y, n, loss, &mut Trace::default())
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub(crate) struct Trained {
    pub net: Mlp,
    pub validation_loss: f64,
    pub epochs: usize,
}

/// Fits `net` to row-major `(x, y)` with full-batch Adam, holding out a
/// random `validation_fraction` of rows for early stopping. Returns the
/// parameters with the best validation loss. `groups` optionally ties rows
/// together so that they land on the same side of the split.
pub(crate) fn train(
    x: &[f64],
    y: &[f64],
    n: usize,
    loss: Loss,
    config: &LearnerConfig,
    groups: usize,
    rng: &mut Rng,
) -> Result<Trained> {
    let d_in = x.len() / n;
    let d_out = y.len() / n;
    let mut net = Mlp::new(d_in, &config.hidden, d_out, config.activation, rng);

    // Rows come in blocks of `groups` consecutive entries sharing one unit.
    let units = n / groups;
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(rng);
    let n_val_units = ((units as f64 * config.validation_fraction).round() as usize).clamp(1, units - 1);
    let (val_units, train_units) = order.split_at(n_val_units);
    let gather = |units: &[usize]| {
        let mut idx: Vec<usize> = units.iter().flat_map(|u| (u * groups)..(u * groups + groups)).collect();
        idx.sort_unstable();
        let xs: Vec<f64> = idx.iter().flat_map(|&i| x[i * d_in..(i + 1) * d_in].iter().copied()).collect();
        let ys: Vec<f64> = idx.iter().flat_map(|&i| y[i * d_out..(i + 1) * d_out].iter().copied()).collect();
        (xs, ys, idx.len())
    };
    let (xt, yt, nt) = gather(train_units);
    let (xv, yv, nv) = gather(val_units);

    let np = net.n_params();
    let mut params = net.params();
    let mut best = params.clone();
    let mut best_val = net.loss(&xv, &yv, nv, loss);
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    let mut grad = vec![0.0; np];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut since_best = 0;
    let mut epochs = 0;
    let (mut tr_train, mut tr_val) = (Trace::default(), Trace::default());
    for epoch in 1..=config.max_epochs {
        epochs = epoch;
        let train_loss = net.loss_and_grad_with(&xt, &yt, nt, loss, &mut grad, &mut tr_train);
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("training loss is {train_loss}"),
            });
        }
        let (c1, c2) = (1.0 - b1.powi(epoch as i32), 1.0 - b2.powi(epoch as i32));
        for k in 0..np {
            let g = grad[k] + config.weight_decay * params[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            params[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
        net.set_params(&params);
        let val = net.loss_with(&xv, &yv, nv, loss, &mut tr_val);
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation loss is {val}"),
            });
        }
        if val < best_val {
            best_val = val;
            best.copy_from_slice(&params);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    net.set_params(&best);
    Ok(Trained {
        net,
        validation_loss: best_val,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn random_net(seed: u64, act: Activation) -> Mlp {
        let mut rng = rng_from(seed);
        let mut net = Mlp::new(3, &[7, 5], 2, act, &mut rng);
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        net
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for act in [Activation::Silu, Activation::Tanh] {
            let net = random_net(1, act);
            let x = [0.3, -1.2, 0.7, 1.1, 0.0, -0.4];
            for out in 0..2 {
                let g = net.input_gradient(&x, 2, out);
                for row in 0..2 {
                    for j in 0..3 {
                        let h = 1e-5;
                        let mut up = x;
                        let mut dn = x;
                        up[row * 3 + j] += h;
                        dn[row * 3 + j] -= h;
                        let fd = (net.forward(&up, 2)[row * 2 + out] - net.forward(&dn, 2)[row * 2 + out]) / (2.0 * h);
                        let an = g[row * 3 + j];
                        assert!((fd - an).abs() <= 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut net = random_net(2, Activation::Silu);
        let x = [0.3, -1.2, 0.7, 1.1, 0.0, -0.4, 0.5, 0.5, -0.9];
        let y = [0.1, 0.2, -0.3, 0.4, 1.0, 0.0];
        let mut g = vec![0.0; net.n_params()];
        net.loss_and_grad(&x, &y, 3, Loss::Squared, &mut g);
        let p0 = net.params();
        for k in (0..p0.len()).step_by(5) {
            let h = 1e-6;
            let mut p = p0.clone();
            p[k] += h;
            net.set_params(&p);
            let up = net.loss(&x, &y, 3, Loss::Squared);
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let dn = net.loss(&x, &y, 3, Loss::Squared);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn logistic_gradient() {
        let mut net = random_net(3, Activation::Silu);
        let x = [0.3, -1.2, 0.7, 1.1, 0.0, -0.4];
        let y = [1.0, 0.0, 0.0, 1.0];
        let mut g = vec![0.0; net.n_params()];
        net.loss_and_grad(&x, &y, 2, Loss::Logistic, &mut g);
        let p0 = net.params();
        let h = 1e-6;
        let mut p = p0.clone();
        p[0] += h;
        net.set_params(&p);
        let up = net.loss(&x, &y, 2, Loss::Logistic);
        p[0] -= 2.0 * h;
        net.set_params(&p);
        let dn = net.loss(&x, &y, 2, Loss::Logistic);
        assert!(((up - dn) / (2.0 * h) - g[0]).abs() < 1e-6);
    }

    #[test]
    fn poisson_gradient() {
        let mut net = random_net(3, Activation::Silu);
        let x = [0.3, -1.2, 0.7, 1.1, 0.0, -0.4];
        let y = [2.5, 0.0, 0.4, 1.3];
        let mut g = vec![0.0; net.n_params()];
        net.loss_and_grad(&x, &y, 2, Loss::Poisson, &mut g);
        let p0 = net.params();
        for k in (0..p0.len()).step_by(3) {
            let h = 1e-6;
            let mut p = p0.clone();
            p[k] += h;
            net.set_params(&p);
            let up = net.loss(&x, &y, 2, Loss::Poisson);
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let dn = net.loss(&x, &y, 2, Loss::Poisson);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
