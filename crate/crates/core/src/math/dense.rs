use serde::{Deserialize, Serialize};

use super::gemm::{matmul, matmul_a_bt, matmul_at_b};
use super::{ParamBlocks, RealArray, RngStream};

/// Draws `W: [fan_out×fan_in]` and `b: [fan_out]` uniformly on
/// `[−1/√fan_in, 1/√fan_in]`.
pub fn init_linear(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> (RealArray, RealArray) {
    assert!(fan_in >= 1 && fan_out >= 1, "init_linear needs positive fan-in/out");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    let b = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    (RealArray::matrix(fan_out, fan_in, w), RealArray::vector(b))
}

/// Fully connected layer; `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: RealArray,
    pub bias: RealArray,
}

impl Linear {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let (weight, bias) = init_linear(fan_in, fan_out, rng);
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: RealArray::zeros(&[fan_out, fan_in]),
            bias: RealArray::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    /// `X·Wᵀ + b` over a batch of row vectors.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.fan_in(), self.fan_out());
        assert_eq!(x.len(), batch * i, "linear input length");
        let mut out = vec![0.0; batch * o];
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(self.bias.data());
        }
        matmul_a_bt(x, self.weight.data(), batch, i, o, 1.0, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
        }
    }

    /// Multiplies `grad` by the activation derivative, given the activated output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, y) in grad.iter_mut().zip(out) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, y) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - y * y;
                }
            }
        }
    }
}

/// Multi-layer perceptron with one hidden activation and an output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Activations kept by [`Mlp::forward_cached`]: `acts[0]` is the input,
/// `acts[l+1]` the activated output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub batch: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has input")
    }
}

/// Gradient container mirroring [`Mlp`]'s blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Builds `dims[0] → dims[1] → … → dims[last]`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::fan_out).unwrap_or(0)
    }

    fn act_for(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward_batch(&h, batch);
            self.act_for(l).apply(&mut h);
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    pub fn forward_cached(&self, x: &[f64], batch: usize) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward_batch(acts.last().unwrap(), batch);
            self.act_for(l).apply(&mut h);
            acts.push(h);
        }
        MlpCache { batch, acts }
    }

    /// Reverse pass given `d loss / d output`; returns parameter gradients and
    /// `d loss / d input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64]) -> (MlpGrads, Vec<f64>) {
        let batch = cache.batch;
        let mut grads: Vec<Linear> = self
            .layers
            .iter()
            .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
            .collect();
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            self.act_for(l).backprop(&cache.acts[l + 1], &mut g);
            matmul_at_b(&g, &cache.acts[l], batch, fo, fi, 0.0, grads[l].weight.data_mut());
            let gb = grads[l].bias.data_mut();
            for row in g.chunks_exact(fo) {
                for (b, x) in gb.iter_mut().zip(row) {
                    *b += x;
                }
            }
            let mut gin = vec![0.0; batch * fi];
            matmul(&g, layer.weight.data(), batch, fo, fi, 0.0, &mut gin);
            g = gin;
        }
        (MlpGrads { layers: grads }, g)
    }
}

fn linear_blocks<'a>(prefix: &str, layers: &'a [Linear]) -> Vec<(String, &'a RealArray)> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                (format!("{prefix}.{i}.weight"), &l.weight),
                (format!("{prefix}.{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

fn linear_blocks_mut(layers: &mut [Linear]) -> Vec<&mut RealArray> {
    layers
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

impl ParamBlocks for Mlp {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        linear_blocks("mlp", &self.layers)
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        linear_blocks_mut(&mut self.layers)
    }
}

impl ParamBlocks for MlpGrads {
    fn blocks(&self) -> Vec<(String, &RealArray)> {
        linear_blocks("mlp", &self.layers)
    }

    fn blocks_mut(&mut self) -> Vec<&mut RealArray> {
        linear_blocks_mut(&mut self.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{affine, StreamId};

    #[test]
    fn init_bounds() {
        let mut rng = RngStream::new(3, StreamId::Init);
        let (w, b) = init_linear(1, 7, &mut rng);
        assert!(w.data().iter().chain(b.data()).all(|x| (-1.0..=1.0).contains(x)));
        let (w, b) = init_linear(100, 20, &mut rng);
        assert!(w.data().iter().chain(b.data()).all(|x| (-0.1..=0.1).contains(x)));
        assert_eq!(w.shape(), &[20, 100]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_linear(5, 4, &mut RngStream::new(11, StreamId::Init));
        let b = init_linear(5, 4, &mut RngStream::new(11, StreamId::Init));
        assert_eq!(a, b);
    }

    #[test]
    fn batched_linear_matches_affine() {
        let mut rng = RngStream::new(5, StreamId::Init);
        let lin = Linear::init(4, 3, &mut rng);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).cos()).collect();
        let y = lin.forward_batch(&x, 2);
        for r in 0..2 {
            let want = affine(&lin.weight, &x[r * 4..(r + 1) * 4], lin.bias.data()).unwrap();
            for j in 0..3 {
                assert!((y[r * 3 + j] - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = RngStream::new(8, StreamId::Init);
        let net = Mlp::new(&[3, 5, 4, 2], Activation::Relu, Activation::Tanh, &mut rng);
        let batch = 3;
        let x: Vec<f64> = (0..batch * 3).map(|i| (i as f64 * 0.91).sin()).collect();
        let w: Vec<f64> = (0..batch * 2).map(|i| 1.0 + i as f64 * 0.1).collect();
        let loss = |n: &Mlp, x: &[f64]| -> f64 {
            n.forward_batch(x, batch).iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let cache = net.forward_cached(&x, batch);
        let (grads, gin) = net.backward(&cache, &w);
        let eps = 1e-6;
        for (bi, (_, g)) in grads.blocks().iter().enumerate() {
            for k in 0..g.len() {
                let mut p = net.clone();
                p.blocks_mut()[bi].data_mut()[k] += eps;
                let up = loss(&p, &x);
                p.blocks_mut()[bi].data_mut()[k] -= 2.0 * eps;
                let dn = loss(&p, &x);
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - g.data()[k]).abs() < 1e-6, "block {bi} idx {k}: {fd} vs {}", g.data()[k]);
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += eps;
            let up = loss(&net, &xp);
            xp[k] -= 2.0 * eps;
            let dn = loss(&net, &xp);
            assert!(((up - dn) / (2.0 * eps) - gin[k]).abs() < 1e-6);
        }
    }
}
