//! Dense feed-forward networks with hand-written reverse-mode gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensors::TensorFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
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

/// Fully connected network: hidden layers use `activation`, the output is linear.
///
/// Parameters live in one flat vector, layer by layer, each as a row-major
/// `out × in` weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    pub params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero network with the given layer widths (input first, output last).
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut offsets = vec![0];
        for w in sizes.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params: vec![0.0; *offsets.last().unwrap()],
            offsets,
        }
    }

    /// Glorot-uniform weights everywhere except the output layer, which starts at zero.
    pub fn glorot_zero_head<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(sizes, activation);
        for l in 0..m.n_layers() - 1 {
            let (n_in, n_out) = (m.sizes[l], m.sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for w in m.weight_mut(l) {
                *w = rng.gen_range(-limit..limit);
            }
        }
        m
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn split(&self, l: usize) -> (usize, usize, usize) {
        let start = self.offsets[l];
        (
            start,
            start + self.sizes[l] * self.sizes[l + 1],
            self.offsets[l + 1],
        )
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (a, b, _) = self.split(l);
        &self.params[a..b]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b, _) = self.split(l);
        &mut self.params[a..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b, c) = self.split(l);
        &self.params[b..c]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b, c) = self.split(l);
        &mut self.params[b..c]
    }

    fn layer(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let n_in = self.sizes[l];
        let w = self.weight(l);
        let nz: Vec<usize> = (0..n_in).filter(|&i| x[i] != 0.0).collect();
        if nz.len() * 4 < n_in {
            // sparse inputs such as one-hot state encodings
            return self
                .bias(l)
                .iter()
                .enumerate()
                .map(|(o, b)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b + nz.iter().map(|&i| row[i] * x[i]).sum::<f64>()
                })
                .collect();
        }
        self.bias(l)
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w[o * n_in..(o + 1) * n_in], x))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(x.len(), self.input_size());
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut h = x.to_vec();
        for l in 0..self.n_layers() {
            let mut z = self.layer(l, &h);
            if l + 1 < self.n_layers() {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            inputs.push(h);
            h = z;
        }
        (h, MlpCache { inputs })
    }

    /// Accumulate `∂(grad_out · output)/∂params` into `grad`; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        self.backward_impl(cache, grad_out, grad, true)
    }

    /// [`Mlp::backward`] without the input gradient.
    pub fn backward_params(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        self.backward_impl(cache, grad_out, grad, false);
    }

    fn backward_impl(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        grad: &mut [f64],
        input_grad: bool,
    ) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut g = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let x = &cache.inputs[l];
            let n_in = self.sizes[l];
            let (w0, b0, _) = self.split(l);
            let w = self.weight(l);
            let want_gx = l > 0 || input_grad;
            let nz: Vec<usize> = (0..n_in).filter(|&i| x[i] != 0.0).collect();
            let sparse = nz.len() * 4 < n_in;
            let mut gx = vec![0.0; if want_gx { n_in } else { 0 }];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[b0 + o] += go;
                let row = o * n_in;
                let gw = &mut grad[w0 + row..w0 + row + n_in];
                if sparse {
                    for &i in &nz {
                        gw[i] += go * x[i];
                    }
                } else {
                    axpy(go, x, gw);
                }
                if want_gx {
                    axpy(go, &w[row..row + n_in], &mut gx);
                }
            }
            if l > 0 {
                // x is the activated output of layer l - 1
                for (gi, &xi) in gx.iter_mut().zip(x) {
                    *gi *= self.activation.grad_from_output(xi);
                }
            }
            g = gx;
        }
        g
    }

    /// Store as `{prefix}.{l}.weight` / `{prefix}.{l}.bias`.
    pub fn write_tensors(&self, prefix: &str, file: &mut TensorFile) -> Result<()> {
        for l in 0..self.n_layers() {
            file.insert(
                format!("{prefix}.{l}.weight"),
                vec![self.sizes[l + 1], self.sizes[l]],
                self.weight(l).to_vec(),
            )?;
            file.insert(
                format!("{prefix}.{l}.bias"),
                vec![self.sizes[l + 1]],
                self.bias(l).to_vec(),
            )?;
        }
        Ok(())
    }

    /// Load weights for a network of known shape; every tensor must match.
    pub fn read_tensors(
        sizes: &[usize],
        activation: Activation,
        prefix: &str,
        file: &TensorFile,
    ) -> Result<Self> {
        let mut m = Self::zeros(sizes, activation);
        for l in 0..m.n_layers() {
            let w = file.get(&format!("{prefix}.{l}.weight"), &[sizes[l + 1], sizes[l]])?;
            m.weight_mut(l).copy_from_slice(w);
            let b = file.get(&format!("{prefix}.{l}.bias"), &[sizes[l + 1]])?;
            m.bias_mut(l).copy_from_slice(b);
        }
        if file
            .tensors
            .contains_key(&format!("{prefix}.{}.weight", m.n_layers()))
        {
            return Err(Error::Format(format!(
                "{prefix} has more layers than expected"
            )));
        }
        Ok(m)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_net(act: Activation, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::zeros(&[4, 7, 5, 3], act);
        for p in &mut m.params {
            *p = rng.gen_range(-0.8..0.8);
        }
        m
    }

    #[test]
    fn parameter_count() {
        let m = Mlp::zeros(&[4, 7, 5, 3], Activation::Tanh);
        assert_eq!(m.n_params(), 4 * 7 + 7 + 7 * 5 + 5 + 5 * 3 + 3);
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::glorot_zero_head(&[4, 16, 3], Activation::Tanh, &mut rng);
        assert_eq!(m.forward(&[0.3, -1.0, 2.0, 0.5]), vec![0.0; 3]);
        assert!(m
            .weight(0)
            .iter()
            .all(|w| w.abs() <= (6.0f64 / 20.0).sqrt()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let m = random_net(act, 7);
            let x = [0.2, -0.4, 0.9, 0.1];
            let gout = [0.5, -1.5, 2.0];
            let (_, cache) = m.forward_cached(&x);
            let mut grad = vec![0.0; m.n_params()];
            let gx = m.backward(&cache, &gout, &mut grad);
            let f = |net: &Mlp, x: &[f64]| {
                net.forward(x)
                    .iter()
                    .zip(&gout)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let h = 1e-6;
            for (i, &g) in grad.iter().enumerate() {
                let (mut p, mut q) = (m.clone(), m.clone());
                p.params[i] += h;
                q.params[i] -= h;
                let fd = (f(&p, &x) - f(&q, &x)) / (2.0 * h);
                assert!(
                    (fd - g).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{act:?} param {i}: {fd} vs {g}"
                );
            }
            for i in 0..4 {
                let (mut xp, mut xq) = (x, x);
                xp[i] += h;
                xq[i] -= h;
                let fd = (f(&m, &xp) - f(&m, &xq)) / (2.0 * h);
                assert!((fd - gx[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn tensor_round_trip() {
        let m = random_net(Activation::Tanh, 3);
        let mut f = TensorFile::default();
        m.write_tensors("net", &mut f).unwrap();
        let back = Mlp::read_tensors(&[4, 7, 5, 3], Activation::Tanh, "net", &f).unwrap();
        assert_eq!(back, m);
        assert!(Mlp::read_tensors(&[4, 8, 5, 3], Activation::Tanh, "net", &f).is_err());
        assert!(Mlp::read_tensors(&[4, 7, 5], Activation::Tanh, "net", &f).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.01);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }
}
