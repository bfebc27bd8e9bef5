//! Masked autoregressive conditioner: a masked linear layer, pre-activation
//! residual blocks with tanh, and a masked linear output layer. Output
//! block `d` depends only on inputs `0..d`.

/// Layer sizes and masks; weights live in an external flat vector.
#[derive(Debug, Clone)]
pub struct Made {
    pub dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub out_per: usize,
    mask_in: Vec<f64>,
    mask_hid: Vec<f64>,
    mask_out: Vec<f64>,
}

/// Offsets of each weight group inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w0: usize,
    b0: usize,
    blocks: usize,
    wout: usize,
    bout: usize,
    total: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    x: Vec<f64>,
    /// Residual stream entering each block, then the final one.
    stream: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
    a2: Vec<Vec<f64>>,
}

impl Made {
    pub fn new(dim: usize, hidden: usize, blocks: usize, out_per: usize) -> Self {
        let span = dim.saturating_sub(1).max(1);
        let hdeg: Vec<usize> = (0..hidden).map(|j| j % span + 1).collect();
        let mut mask_in = vec![0.0; hidden * dim];
        for (j, hd) in hdeg.iter().enumerate() {
            for d in 0..dim {
                if *hd >= d + 1 {
                    mask_in[j * dim + d] = 1.0;
                }
            }
        }
        let mut mask_hid = vec![0.0; hidden * hidden];
        for (j, hj) in hdeg.iter().enumerate() {
            for (k, hk) in hdeg.iter().enumerate() {
                if hj >= hk {
                    mask_hid[j * hidden + k] = 1.0;
                }
            }
        }
        let mut mask_out = vec![0.0; dim * out_per * hidden];
        for d in 0..dim {
            for o in 0..out_per {
                let row = d * out_per + o;
                for (j, hd) in hdeg.iter().enumerate() {
                    if d + 1 > *hd {
                        mask_out[row * hidden + j] = 1.0;
                    }
                }
            }
        }
        Self { dim, hidden, blocks, out_per, mask_in, mask_hid, mask_out }
    }

    fn layout(&self) -> Layout {
        let (d, h) = (self.dim, self.hidden);
        let w0 = 0;
        let b0 = w0 + h * d;
        let blocks = b0 + h;
        let wout = blocks + self.blocks * (2 * h * h + 2 * h);
        let bout = wout + d * self.out_per * h;
        let total = bout + d * self.out_per;
        Layout { w0, b0, blocks, wout, bout, total }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }

    /// Random masked hidden weights, zero output layer.
    pub fn init(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        use rand::Rng;
        let l = self.layout();
        let h = self.hidden;
        let mut phi = vec![0.0; l.total];
        let bound0 = 1.0 / (self.dim as f64).sqrt();
        for (p, m) in phi[l.w0..l.b0].iter_mut().zip(&self.mask_in) {
            *p = m * rng.random_range(-bound0..bound0);
        }
        let bound = 1.0 / (h as f64).sqrt();
        for b in 0..self.blocks {
            let base = l.blocks + b * (2 * h * h + 2 * h);
            for layer in 0..2 {
                let w = base + layer * (h * h + h);
                for (p, m) in phi[w..w + h * h].iter_mut().zip(&self.mask_hid) {
                    *p = m * rng.random_range(-bound..bound);
                }
            }
        }
        phi
    }

    /// Zeroes entries for masked-out weights (parameters or gradients).
    pub fn apply_mask(&self, grad: &mut [f64]) {
        let l = self.layout();
        let h = self.hidden;
        for (g, m) in grad[l.w0..l.b0].iter_mut().zip(&self.mask_in) {
            *g *= m;
        }
        for b in 0..self.blocks {
            let base = l.blocks + b * (2 * h * h + 2 * h);
            for layer in 0..2 {
                let w = base + layer * (h * h + h);
                for (g, m) in grad[w..w + h * h].iter_mut().zip(&self.mask_hid) {
                    *g *= m;
                }
            }
        }
        for (g, m) in grad[l.wout..l.bout].iter_mut().zip(&self.mask_out) {
            *g *= m;
        }
    }

    /// Conditioner outputs for input `x`, all coordinates.
    pub fn forward(&self, phi: &[f64], x: &[f64], cache: &mut Cache) -> Vec<f64> {
        let l = self.layout();
        let (d, h) = (self.dim, self.hidden);
        cache.x.clear();
        cache.x.extend_from_slice(x);
        cache.stream.clear();
        cache.a1.clear();
        cache.a2.clear();

        let mut s: Vec<f64> = (0..h)
            .map(|j| {
                let row = &phi[l.w0 + j * d..l.w0 + (j + 1) * d];
                phi[l.b0 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        for b in 0..self.blocks {
            let base = l.blocks + b * (2 * h * h + 2 * h);
            let (w1, b1) = (base, base + h * h);
            let (w2, b2) = (base + h * h + h, base + 2 * h * h + h);
            let a1: Vec<f64> = s.iter().map(|v| v.tanh()).collect();
            let a2: Vec<f64> = (0..h)
                .map(|j| {
                    let row = &phi[w1 + j * h..w1 + (j + 1) * h];
                    (phi[b1 + j] + row.iter().zip(&a1).map(|(w, v)| w * v).sum::<f64>()).tanh()
                })
                .collect();
            let next: Vec<f64> = (0..h)
                .map(|j| {
                    let row = &phi[w2 + j * h..w2 + (j + 1) * h];
                    s[j] + phi[b2 + j] + row.iter().zip(&a2).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            cache.stream.push(std::mem::replace(&mut s, next));
            cache.a1.push(a1);
            cache.a2.push(a2);
        }
        let out = (0..d * self.out_per)
            .map(|r| {
                let row = &phi[l.wout + r * h..l.wout + (r + 1) * h];
                phi[l.bout + r] + row.iter().zip(&s).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        cache.stream.push(s);
        out
    }

    /// Accumulates `d(out . g_out) / d phi` into `grad` using the cache of
    /// the matching forward pass.
    pub fn backward(&self, phi: &[f64], cache: &Cache, g_out: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let (d, h) = (self.dim, self.hidden);
        let top = &cache.stream[self.blocks];
        let mut g_s = vec![0.0; h];
        for (r, go) in g_out.iter().enumerate() {
            if *go == 0.0 {
                continue;
            }
            grad[l.bout + r] += go;
            let w = l.wout + r * h;
            for j in 0..h {
                grad[w + j] += go * top[j];
                g_s[j] += go * phi[w + j];
            }
        }
        for b in (0..self.blocks).rev() {
            let base = l.blocks + b * (2 * h * h + 2 * h);
            let (w1, b1) = (base, base + h * h);
            let (w2, b2) = (base + h * h + h, base + 2 * h * h + h);
            let (a1, a2) = (&cache.a1[b], &cache.a2[b]);
            let mut g_a2 = vec![0.0; h];
            for j in 0..h {
                let g = g_s[j];
                grad[b2 + j] += g;
                for k in 0..h {
                    grad[w2 + j * h + k] += g * a2[k];
                    g_a2[k] += g * phi[w2 + j * h + k];
                }
            }
            let mut g_a1 = vec![0.0; h];
            for j in 0..h {
                let g = g_a2[j] * (1.0 - a2[j] * a2[j]);
                grad[b1 + j] += g;
                for k in 0..h {
                    grad[w1 + j * h + k] += g * a1[k];
                    g_a1[k] += g * phi[w1 + j * h + k];
                }
            }
            for j in 0..h {
                g_s[j] += g_a1[j] * (1.0 - a1[j] * a1[j]);
            }
        }
        for j in 0..h {
            grad[l.b0 + j] += g_s[j];
            for k in 0..d {
                grad[l.w0 + j * d + k] += g_s[j] * cache.x[k];
            }
        }
    }
}
