//! Minimal MLP with manual backprop, shared by the score model and the
//! classifier. Parameters live in one flat buffer (`[w0, b0, w1, b1, ...]`,
//! weights row-major `out x in`) so optimizers and checkpoints can treat the
//! network as a single vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::RngStream;

pub(crate) struct Mlp {
    dims: Vec<usize>,
    params: Vec<f32>,
}

pub(crate) struct ForwardCache {
    /// Post-activation input to each layer; `acts[0]` is the network input,
    /// `acts[L]` the output.
    pub acts: Vec<Vec<f32>>,
    pub batch: usize,
}

impl Mlp {
    pub fn new(dims: &[usize], rng: &mut RngStream) -> Mlp {
        assert!(dims.len() >= 2);
        let mut params = Vec::with_capacity(Self::count(dims));
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let std = math::sqrt32(2.0 / fan_in as f32);
            for _ in 0..fan_in * fan_out {
                params.push(std * rng.normal_f32());
            }
            params.extend(core::iter::repeat(0.0).take(fan_out));
        }
        Mlp {
            dims: dims.to_vec(),
            params,
        }
    }

    fn count(dims: &[usize]) -> usize {
        dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    #[allow(dead_code)]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn from_params(dims: &[usize], params: Vec<f32>) -> Option<Mlp> {
        if params.len() != Self::count(dims) {
            return None;
        }
        Some(Mlp {
            dims: dims.to_vec(),
            params,
        })
    }

    fn layer_offset(&self, l: usize) -> usize {
        Self::count(&self.dims[..l + 1])
    }

    /// Forward pass over a `batch x dims[0]` input, ReLU between layers,
    /// linear output.
    pub fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        self.forward_cached(x, batch).acts.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f32], batch: usize) -> ForwardCache {
        debug_assert_eq!(x.len(), batch * self.dims[0]);
        let layers = self.dims.len() - 1;
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let (w, b) = (
                &self.params[off..off + fan_in * fan_out],
                &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out],
            );
            let prev = &acts[l];
            let mut out = vec![0.0f32; batch * fan_out];
            for bi in 0..batch {
                let xrow = &prev[bi * fan_in..(bi + 1) * fan_in];
                let orow = &mut out[bi * fan_out..(bi + 1) * fan_out];
                for o in 0..fan_out {
                    let wrow = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = b[o];
                    for i in 0..fan_in {
                        acc += wrow[i] * xrow[i];
                    }
                    orow[o] = if l + 1 < layers { acc.max(0.0) } else { acc };
                }
            }
            acts.push(out);
        }
        ForwardCache { acts, batch }
    }

    /// Backprop `grad_out` (gradient of the loss w.r.t. the output) through
    /// the cached forward pass, accumulating into `grad` (same layout as
    /// `params`) and returning the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f32], grad: &mut [f32]) -> Vec<f32> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.dims.len() - 1;
        let batch = cache.batch;
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let xin = &cache.acts[l];
            let mut gx = vec![0.0f32; batch * fan_in];
            for bi in 0..batch {
                let grow = &g[bi * fan_out..(bi + 1) * fan_out];
                let xrow = &xin[bi * fan_in..(bi + 1) * fan_in];
                let gxrow = &mut gx[bi * fan_in..(bi + 1) * fan_in];
                for o in 0..fan_out {
                    let go = grow[o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    let wrow = &w[o * fan_in..(o + 1) * fan_in];
                    let gwrow = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        gwrow[i] += go * xrow[i];
                        gxrow[i] += go * wrow[i];
                    }
                }
            }
            if l > 0 {
                // ReLU mask from the stored post-activation.
                for (gv, &a) in gx.iter_mut().zip(xin.iter()) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = gx;
        }
        g
    }
}

pub(crate) struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(n: usize, lr: f32) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.t as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.t as f32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (math::sqrt32(vhat) + self.eps);
        }
    }
}

pub(crate) struct SgdMomentum {
    vel: Vec<f32>,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl SgdMomentum {
    pub fn new(n: usize, lr: f32, momentum: f32, weight_decay: f32) -> SgdMomentum {
        SgdMomentum {
            vel: vec![0.0; n],
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.vel[i] = self.momentum * self.vel[i] + g;
            params[i] -= self.lr * self.vel[i];
        }
    }
}
