//! Small feed-forward networks with hand-written reverse mode.
//!
//! Activations are batches laid out sample-major; convolutional activations
//! are (channel, row, col) within a sample.

pub mod checkpoint;
pub mod optim;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl MlpSpec {
    /// Four hidden layers of width 128.
    pub fn standard(input: usize) -> MlpSpec {
        MlpSpec { input, hidden: vec![128; 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub filters: Vec<usize>,
    /// Number of leading conv layers followed by 2x2 max-pooling.
    pub pooled: usize,
    pub fc: usize,
}

impl ConvSpec {
    /// Filters 16, 32, 64 with pooling after the first two, then FC 128.
    pub fn standard(channels: usize, rows: usize, cols: usize) -> ConvSpec {
        ConvSpec { channels, rows, cols, filters: vec![16, 32, 64], pooled: 2, fc: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetSpec {
    Mlp(MlpSpec),
    Conv(ConvSpec),
}

impl NetSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            NetSpec::Mlp(m) => m.input,
            NetSpec::Conv(c) => c.channels * c.rows * c.cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// y = W x + b with W stored (out, in).
    Dense { inp: usize, out: usize, w: Vec<f64>, b: Vec<f64> },
    Relu { size: usize },
    /// 3x3 kernel, stride 1, zero padding 1; weights stored (out_ch, in_ch, 3, 3).
    Conv { in_ch: usize, out_ch: usize, h: usize, w: usize, weight: Vec<f64>, bias: Vec<f64> },
    /// 2x2 window, stride 2, over an (ch, h, w) input.
    MaxPool { ch: usize, h: usize, w: usize },
}

impl Layer {
    pub fn in_size(&self) -> usize {
        match self {
            Layer::Dense { inp, .. } => *inp,
            Layer::Relu { size } => *size,
            Layer::Conv { in_ch, h, w, .. } => in_ch * h * w,
            Layer::MaxPool { ch, h, w } => ch * h * w,
        }
    }

    pub fn out_size(&self) -> usize {
        match self {
            Layer::Dense { out, .. } => *out,
            Layer::Relu { size } => *size,
            Layer::Conv { out_ch, h, w, .. } => out_ch * h * w,
            Layer::MaxPool { ch, h, w } => ch * (h / 2) * (w / 2),
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            Layer::Dense { inp, .. } => *inp,
            Layer::Conv { in_ch, .. } => in_ch * 9,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetSpec,
    pub layers: Vec<Layer>,
    version: u64,
}

/// Activation cache of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    version: u64,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients (or any per-parameter tensors) in parameter order:
/// weight then bias for each parametric layer.
pub type Grads = Vec<Vec<f64>>;

fn dense(inp: usize, out: usize) -> Layer {
    Layer::Dense { inp, out, w: vec![0.0; inp * out], b: vec![0.0; out] }
}

impl Network {
    /// Builds the layer stack with all parameters zero.
    pub fn zeros(spec: &NetSpec) -> Result<Network> {
        let mut layers = Vec::new();
        match spec {
            NetSpec::Mlp(m) => {
                if m.input == 0 || m.hidden.iter().any(|&h| h == 0) {
                    return Err(Error::Invalid("MLP widths must be positive".into()));
                }
                let mut prev = m.input;
                for &h in &m.hidden {
                    layers.push(dense(prev, h));
                    layers.push(Layer::Relu { size: h });
                    prev = h;
                }
                layers.push(dense(prev, 1));
            }
            NetSpec::Conv(c) => {
                if c.channels == 0 || c.filters.is_empty() || c.filters.iter().any(|&f| f == 0) || c.fc == 0 {
                    return Err(Error::Invalid("conv widths must be positive".into()));
                }
                let (mut ch, mut h, mut w) = (c.channels, c.rows, c.cols);
                for (i, &f) in c.filters.iter().enumerate() {
                    layers.push(Layer::Conv {
                        in_ch: ch,
                        out_ch: f,
                        h,
                        w,
                        weight: vec![0.0; f * ch * 9],
                        bias: vec![0.0; f],
                    });
                    layers.push(Layer::Relu { size: f * h * w });
                    ch = f;
                    if i < c.pooled {
                        if h < 2 || w < 2 {
                            return Err(Error::Invalid(format!("cannot pool a {h}x{w} map")));
                        }
                        layers.push(Layer::MaxPool { ch, h, w });
                        h /= 2;
                        w /= 2;
                    }
                }
                if h == 0 || w == 0 {
                    return Err(Error::Invalid("spatial size collapsed to zero".into()));
                }
                layers.push(dense(ch * h * w, c.fc));
                layers.push(Layer::Relu { size: c.fc });
                layers.push(dense(c.fc, 1));
            }
        }
        Ok(Network { spec: spec.clone(), layers, version: 0 })
    }

    /// Weights and biases uniform in ±√(1/fan_in).
    pub fn init(spec: &NetSpec, rng: &mut Rng) -> Result<Network> {
        let mut net = Network::zeros(spec)?;
        for layer in &mut net.layers {
            let k = (1.0 / layer.fan_in().max(1) as f64).sqrt();
            match layer {
                Layer::Dense { w, b, .. } | Layer::Conv { weight: w, bias: b, .. } => {
                    w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = rng.gen_range(-k..k));
                }
                _ => {}
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Dense { w, b, .. } | Layer::Conv { weight: w, bias: b, .. } = layer {
                out.push(w.as_slice());
                out.push(b.as_slice());
            }
        }
        out
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Dense { w, b, .. } | Layer::Conv { weight: w, bias: b, .. } = layer {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Forward without keeping activations.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut cur = self.check_input(x, batch)?.to_vec();
        for layer in &self.layers {
            cur = layer_forward(layer, &cur, batch, None);
        }
        finite(cur)
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, Tape)> {
        let mut cur = self.check_input(x, batch)?.to_vec();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::new();
        for layer in &self.layers {
            let mut idx = Vec::new();
            let next = layer_forward(layer, &cur, batch, Some(&mut idx));
            if matches!(layer, Layer::MaxPool { .. }) {
                argmax.push(idx);
            }
            inputs.push(std::mem::replace(&mut cur, next));
        }
        let out = finite(cur)?;
        Ok((out, Tape { batch, inputs, argmax, version: self.version }))
    }

    /// Gradient of Σ_i d_v[i]·v(x_i) with respect to every parameter.
    pub fn backward_batch(&self, tape: &Tape, d_v: &[f64]) -> Result<Grads> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::Invalid("stale tape: parameters changed since the forward pass".into()));
        }
        let batch = tape.batch;
        if d_v.len() != batch {
            return Err(Error::Shape(format!("{} output gradients for a batch of {batch}", d_v.len())));
        }
        let mut grads = self.zero_grads();
        let mut gi = grads.len();
        let mut pool_i = tape.argmax.len();
        let mut delta = d_v.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[li];
            let need_dx = li > 0;
            delta = match layer {
                Layer::Dense { inp, out, w, .. } => {
                    gi -= 2;
                    let (gw, gb) = two_mut(&mut grads, gi);
                    dense_backward(*inp, *out, w, input, &delta, batch, gw, gb, need_dx)
                }
                Layer::Relu { .. } => {
                    delta.iter().zip(input).map(|(&d, &x)| if x > 0.0 { d } else { 0.0 }).collect()
                }
                Layer::Conv { in_ch, out_ch, h, w, weight, .. } => {
                    gi -= 2;
                    let (gw, gb) = two_mut(&mut grads, gi);
                    conv_backward((*in_ch, *out_ch, *h, *w), weight, input, &delta, batch, gw, gb, need_dx)
                }
                Layer::MaxPool { .. } => {
                    pool_i -= 1;
                    let mut dx = vec![0.0; layer.in_size() * batch];
                    for (&i, &d) in tape.argmax[pool_i].iter().zip(&delta) {
                        dx[i as usize] += d;
                    }
                    dx
                }
            };
        }
        Ok(grads)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, Tape)> {
        let (v, tape) = self.forward_batch(x, 1)?;
        Ok((v[0], tape))
    }

    pub fn backward(&self, tape: &Tape, d_v: f64) -> Result<Grads> {
        self.backward_batch(tape, &[d_v])
    }

    fn check_input<'x>(&self, x: &'x [f64], batch: usize) -> Result<&'x [f64]> {
        if batch == 0 || x.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input of length {} for batch {batch} of dimension {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(x)
    }
}

fn finite(v: Vec<f64>) -> Result<Vec<f64>> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Divergence(format!("non-finite network output at batch index {i}"))),
        None => Ok(v),
    }
}

fn two_mut(g: &mut Grads, i: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    let (a, b) = g.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

/// C ← α·A·B + β·C for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || (a.len() > last(m, rsa, k, csa) && b.len() > last(k, rsb, n, csb)));
    assert!(c.len() > last(m, rsc, n, csc));
    // SAFETY: the asserts above keep every strided access inside the slices.
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
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn layer_forward(layer: &Layer, x: &[f64], batch: usize, argmax: Option<&mut Vec<u32>>) -> Vec<f64> {
    match layer {
        Layer::Dense { inp, out, w, b } => {
            let mut y = vec![0.0; batch * out];
            for row in y.chunks_exact_mut(*out) {
                row.copy_from_slice(b);
            }
            gemm(batch, *inp, *out, x, (*inp, 1), w, (1, *inp), 1.0, &mut y, (*out, 1));
            y
        }
        Layer::Relu { .. } => x.iter().map(|&v| v.max(0.0)).collect(),
        Layer::Conv { in_ch, out_ch, h, w, weight, bias } => {
            let hw = h * w;
            let k = in_ch * 9;
            let mut y = vec![0.0; batch * out_ch * hw];
            let mut cols = vec![0.0; k * hw];
            for (xs, ys) in x.chunks_exact(in_ch * hw).zip(y.chunks_exact_mut(out_ch * hw)) {
                im2col(xs, *in_ch, *h, *w, &mut cols);
                for (f, plane) in ys.chunks_exact_mut(hw).enumerate() {
                    plane.fill(bias[f]);
                }
                gemm(*out_ch, k, hw, weight, (k, 1), &cols, (hw, 1), 1.0, ys, (hw, 1));
            }
            y
        }
        Layer::MaxPool { ch, h, w } => {
            let (oh, ow) = (h / 2, w / 2);
            let mut y = Vec::with_capacity(batch * ch * oh * ow);
            let mut idx = Vec::with_capacity(y.capacity());
            for b in 0..batch {
                for c in 0..*ch {
                    let base = (b * ch + c) * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + 2 * oy * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                            y.push(x[best]);
                            idx.push(best as u32);
                        }
                    }
                }
            }
            if let Some(a) = argmax {
                *a = idx;
            }
            y
        }
    }
}

/// Rows (c, ky, kx), columns (y, x) of the padded 3x3 neighbourhoods.
fn im2col(x: &[f64], ch: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..ch {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        row[y * w + xx] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            0.0
                        } else {
                            x[c * hw + sy as usize * w + sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], ch: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for c in 0..ch {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dx[c * hw + sy as usize * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    inp: usize,
    out: usize,
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    batch: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    // dW = dYᵀ X, db = column sums of dY, dX = dY W
    gemm(out, batch, inp, dy, (1, out), x, (inp, 1), 1.0, gw, (inp, 1));
    for row in dy.chunks_exact(out) {
        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, dy, (out, 1), w, (inp, 1), 0.0, &mut dx, (inp, 1));
    dx
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    (in_ch, out_ch, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    batch: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let hw = h * w;
    let k = in_ch * 9;
    let mut cols = vec![0.0; k * hw];
    let mut dcols = vec![0.0; k * hw];
    let mut dx = if need_dx { vec![0.0; batch * in_ch * hw] } else { Vec::new() };
    for b in 0..batch {
        let xs = &x[b * in_ch * hw..][..in_ch * hw];
        let ds = &dy[b * out_ch * hw..][..out_ch * hw];
        im2col(xs, in_ch, h, w, &mut cols);
        gemm(out_ch, hw, k, ds, (hw, 1), &cols, (1, hw), 1.0, gw, (k, 1));
        for (f, plane) in ds.chunks_exact(hw).enumerate() {
            gb[f] += plane.iter().sum::<f64>();
        }
        if need_dx {
            gemm(k, out_ch, hw, weight, (1, k), ds, (hw, 1), 0.0, &mut dcols, (hw, 1));
            col2im(&dcols, in_ch, h, w, &mut dx[b * in_ch * hw..][..in_ch * hw]);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, streams};

    #[test]
    fn zero_net_outputs_zero() {
        let net = Network::zeros(&NetSpec::Mlp(MlpSpec::standard(3))).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.0]).unwrap().0, 0.0);
    }

    #[test]
    fn single_linear_layer() {
        let mut net = Network::zeros(&NetSpec::Mlp(MlpSpec { input: 2, hidden: vec![] })).unwrap();
        {
            let mut p = net.params_mut();
            *p[0] = vec![1.0, 2.0];
            *p[1] = vec![0.5];
        }
        let (v, tape) = net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(v, 3.5);
        let g = net.backward(&tape, 1.0).unwrap();
        assert_eq!(g, vec![vec![1.0, 1.0], vec![1.0]]);
        let g0 = net.backward(&tape, 0.0).unwrap();
        assert!(g0.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = stream_rng(1, streams::TEST);
        let mut net = Network::init(&NetSpec::Mlp(MlpSpec { input: 2, hidden: vec![3] }), &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(net.backward(&tape, 1.0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let net = Network::zeros(&NetSpec::Mlp(MlpSpec { input: 2, hidden: vec![3] })).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn standard_conv_shapes() {
        let net = Network::zeros(&NetSpec::Conv(ConvSpec::standard(4, 12, 13))).unwrap();
        let fc = net.layers.iter().find_map(|l| match l {
            Layer::Dense { inp, out: 128, .. } => Some(*inp),
            _ => None,
        });
        assert_eq!(fc, Some(64 * 3 * 3));
    }

    #[test]
    fn pool_ties_route_to_first_element() {
        let spec = NetSpec::Conv(ConvSpec { channels: 1, rows: 2, cols: 2, filters: vec![1], pooled: 1, fc: 1 });
        let mut net = Network::zeros(&spec).unwrap();
        {
            let mut p = net.params_mut();
            p[0][4] = 1.0; // identity kernel
            *p[2] = vec![1.0];
            *p[4] = vec![1.0];
        }
        let (v, tape) = net.forward(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(v, 2.0);
        let g = net.backward(&tape, 1.0).unwrap();
        // d v / d kernel centre = input at the routed position only
        assert_eq!(g[0][4], 2.0);
        // the routed output pixel is (0, 0): its up-left neighbours are padding
        assert_eq!(g[0][0], 0.0);
        assert_eq!(g[0][8], 2.0);
    }
}
