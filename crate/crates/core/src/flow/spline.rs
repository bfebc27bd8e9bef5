//! Monotone rational-quadratic spline on `[-T, T]` with identity tails.
//!
//! Unconstrained parameters per coordinate are laid out as
//! `[widths (B), heights (B), interior derivatives (B - 1)]`. Widths and
//! heights are `2T (MIN_BIN + (1 - B MIN_BIN) softmax(u))`, so knots stay
//! strictly increasing and bin slopes stay bounded; interior derivatives
//! are `min_d + softplus(u + c)` with `c` chosen so `u = 0` gives slope 1.
//! Boundary derivatives are fixed at 1 so the tails join smoothly.

/// Smallest bin width or height as a fraction of `2T`.
pub const MIN_BIN: f64 = 1e-3;

pub fn n_raw(bins: usize) -> usize {
    3 * bins - 1
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Knot positions, derivatives and the intermediates needed for gradients.
#[derive(Debug, Clone)]
pub struct Knots {
    pub tail: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ds: Vec<f64>,
    pw: Vec<f64>,
    ph: Vec<f64>,
    sig: Vec<f64>,
}

/// Share of `1 - B MIN_BIN` handed out by the softmax.
fn free_share(bins: usize) -> f64 {
    1.0 - bins as f64 * MIN_BIN
}

fn cumulative(p: &[f64], tail: f64) -> Vec<f64> {
    let b = p.len();
    let c = free_share(b);
    let mut out = Vec::with_capacity(b + 1);
    let mut acc = -tail;
    out.push(acc);
    for v in &p[..b - 1] {
        acc += 2.0 * tail * (MIN_BIN + c * v);
        out.push(acc);
    }
    out.push(tail);
    out
}

impl Knots {
    pub fn new(raw: &[f64], bins: usize, tail: f64, min_d: f64) -> Self {
        let pw = softmax(&raw[..bins]);
        let ph = softmax(&raw[bins..2 * bins]);
        let shift = (1.0 - min_d).exp_m1().ln();
        let mut ds = Vec::with_capacity(bins + 1);
        let mut sig = Vec::with_capacity(bins - 1);
        ds.push(1.0);
        for u in &raw[2 * bins..] {
            ds.push(min_d + softplus(u + shift));
            sig.push(sigmoid(u + shift));
        }
        ds.push(1.0);
        Self { tail, xs: cumulative(&pw, tail), ys: cumulative(&ph, tail), ds, pw, ph, sig }
    }

    pub fn bins(&self) -> usize {
        self.pw.len()
    }

    fn inside(&self, v: f64) -> bool {
        v >= -self.tail && v <= self.tail
    }

    /// Bin index `k` with `knots[k] <= v < knots[k + 1]`, the last bin
    /// taking its right end.
    fn locate(knots: &[f64], v: f64) -> usize {
        let b = knots.len() - 1;
        let k = knots.partition_point(|&e| e <= v);
        k.saturating_sub(1).min(b - 1)
    }

    /// `(g(x), log g'(x))`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        if !self.inside(x) {
            return (x, 0.0);
        }
        let k = Self::locate(&self.xs, x);
        let b = Bin::new(self, k);
        let xi = (x - b.xk) / b.w;
        let (z, lg) = b.eval(xi);
        (z, lg)
    }

    /// `(g^{-1}(z), log g'(g^{-1}(z)))`, by the root of the bin's quadratic
    /// on its monotone branch.
    pub fn inverse(&self, z: f64) -> (f64, f64) {
        if !self.inside(z) {
            return (z, 0.0);
        }
        let k = Self::locate(&self.ys, z);
        let b = Bin::new(self, k);
        let dy = z - b.yk;
        let delta = b.d1 + b.d0 - 2.0 * b.s;
        let a = b.h * (b.s - b.d0) + dy * delta;
        let bb = b.h * b.d0 - dy * delta;
        let c = -b.s * dy;
        let disc = (bb * bb - 4.0 * a * c).max(0.0);
        let xi = if c == 0.0 { 0.0 } else { (2.0 * c) / (-bb - disc.sqrt()) };
        let xi = xi.clamp(0.0, 1.0);
        let x = b.xk + xi * b.w;
        let (_, lg) = b.eval(xi);
        (x, lg)
    }

    /// Returns `(z, log g')` and adds the gradient of
    /// `coef_z * z + coef_lg * log g'` with respect to the raw parameters
    /// into `grad`.
    pub fn forward_grad(&self, x: f64, coef_z: f64, coef_lg: f64, grad: &mut [f64]) -> (f64, f64) {
        if !self.inside(x) {
            return (x, 0.0);
        }
        let nb = self.bins();
        let k = Self::locate(&self.xs, x);
        let b = Bin::new(self, k);
        let xi = (x - b.xk) / b.w;
        let p = b.partials(xi);
        let (z, lg) = (p.z, p.lg);

        let g_xi = coef_z * p.z_xi + coef_lg * p.lg_xi;
        let g_s = coef_z * p.z_s + coef_lg * p.lg_s;
        let g_xk = -g_xi / b.w;
        let g_w = -g_xi * xi / b.w - g_s * b.s / b.w;
        let g_h = g_s / b.w + coef_z * p.z_h;
        let g_yk = coef_z;
        let g_d0 = coef_z * p.z_d0 + coef_lg * p.lg_d0;
        let g_d1 = coef_z * p.z_d1 + coef_lg * p.lg_d1;

        // knot k sums the first k widths; bin k's width is width k
        softmax_back(&self.pw, self.tail, k, g_xk, g_w, &mut grad[..nb]);
        softmax_back(&self.ph, self.tail, k, g_yk, g_h, &mut grad[nb..2 * nb]);
        let dg = &mut grad[2 * nb..];
        if k >= 1 {
            dg[k - 1] += g_d0 * self.sig[k - 1];
        }
        if k + 1 <= nb - 1 {
            dg[k] += g_d1 * self.sig[k];
        }
        (z, lg)
    }
}

/// Backpropagates `g_pos` on knot `k` (= -T + 2T sum_{i<k} (m + c p_i)) and
/// `g_len` on segment `k` (= 2T (m + c p_k)) through the softmax.
fn softmax_back(p: &[f64], tail: f64, k: usize, g_pos: f64, g_len: f64, out: &mut [f64]) {
    let scale = 2.0 * tail * free_share(p.len());
    let below: f64 = p[..k].iter().sum();
    let mean = scale * (g_pos * below + g_len * p[k]);
    for (i, (pi, o)) in p.iter().zip(out.iter_mut()).enumerate() {
        let gi = if i < k {
            scale * g_pos
        } else if i == k {
            scale * g_len
        } else {
            0.0
        };
        *o += pi * (gi - mean);
    }
}

struct Bin {
    xk: f64,
    w: f64,
    yk: f64,
    h: f64,
    s: f64,
    d0: f64,
    d1: f64,
}

struct Partials {
    z: f64,
    lg: f64,
    z_xi: f64,
    z_s: f64,
    z_h: f64,
    z_d0: f64,
    z_d1: f64,
    lg_xi: f64,
    lg_s: f64,
    lg_d0: f64,
    lg_d1: f64,
}

impl Bin {
    fn new(kn: &Knots, k: usize) -> Self {
        let xk = kn.xs[k];
        let w = kn.xs[k + 1] - xk;
        let yk = kn.ys[k];
        let h = kn.ys[k + 1] - yk;
        Self { xk, w, yk, h, s: h / w, d0: kn.ds[k], d1: kn.ds[k + 1] }
    }

    fn eval(&self, xi: f64) -> (f64, f64) {
        let tau = xi * (1.0 - xi);
        let a = self.s * xi * xi + self.d0 * tau;
        let den = self.s + (self.d1 + self.d0 - 2.0 * self.s) * tau;
        let n2 = self.d1 * xi * xi + 2.0 * self.s * tau + self.d0 * (1.0 - xi) * (1.0 - xi);
        let z = self.yk + self.h * a / den;
        let lg = 2.0 * self.s.ln() + n2.ln() - 2.0 * den.ln();
        (z, lg)
    }

    fn partials(&self, xi: f64) -> Partials {
        let (s, d0, d1, h) = (self.s, self.d0, self.d1, self.h);
        let tau = xi * (1.0 - xi);
        let dtau = 1.0 - 2.0 * xi;
        let delta = d1 + d0 - 2.0 * s;
        let a = s * xi * xi + d0 * tau;
        let den = s + delta * tau;
        let n2 = d1 * xi * xi + 2.0 * s * tau + d0 * (1.0 - xi) * (1.0 - xi);

        let a_xi = 2.0 * s * xi + d0 * dtau;
        let a_s = xi * xi;
        let a_d0 = tau;
        let den_xi = delta * dtau;
        let den_s = 1.0 - 2.0 * tau;
        let den_d = tau;
        let quot = |da: f64, dden: f64| h * (da * den - a * dden) / (den * den);

        let n2_xi = 2.0 * d1 * xi + 2.0 * s * dtau - 2.0 * d0 * (1.0 - xi);
        let n2_s = 2.0 * tau;
        let n2_d0 = (1.0 - xi) * (1.0 - xi);
        let n2_d1 = xi * xi;

        Partials {
            z: self.yk + h * a / den,
            lg: 2.0 * s.ln() + n2.ln() - 2.0 * den.ln(),
            z_xi: quot(a_xi, den_xi),
            z_s: quot(a_s, den_s),
            z_h: a / den,
            z_d0: quot(a_d0, den_d),
            z_d1: quot(0.0, den_d),
            lg_xi: n2_xi / n2 - 2.0 * den_xi / den,
            lg_s: 2.0 / s + n2_s / n2 - 2.0 * den_s / den,
            lg_d0: n2_d0 / n2 - 2.0 * den_d / den,
            lg_d1: n2_d1 / n2 - 2.0 * den_d / den,
        }
    }
}
