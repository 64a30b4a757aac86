//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] walks it in
//! reverse. Nodes that do not depend on any gradient-requiring leaf are never
//! differentiated, which keeps target-network and no-grad passes cheap.

use crate::error::{Error, Result};
use crate::geometry::{affine_grid, euler_to_rotation, pose_grad_from_grid, EulerPose};
use crate::tensor::{conv_backward, conv_forward, conv_transpose_backward, conv_transpose_forward, gemm, ConvGeom, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, batch: usize },
    ConvTranspose { x: Var, w: Var, b: Var, geom: ConvGeom, batch: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, rstd: Vec<f32> },
    MeanAll(Var),
    SumRows(Var),
    MeanPool(Var),
    Concat(Var, Var),
    Narrow { x: Var, start: usize },
    Warp { volume: Var, pose: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; absent for nodes that did not need one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LN_EPS: f32 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Copy of the value cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        check_same(self.value(a), self.value(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, f32::min)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Min(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let t = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f32::ln, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// `x [N, in] -> x W^T + b` with `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::shape(
                format!("[N, {}] x [out, in] + [out]", ws.get(1).copied().unwrap_or(0)),
                (xs, ws, self.shape(b).to_vec()),
            ));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut y = vec![0.0; n * fout];
        for row in y.chunks_mut(fout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut y, 1.0);
        let t = Tensor::from_vec(&[n, fout], y)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    fn conv_geom(&self, x: Var, w: Var, transposed: bool, stride: [usize; 3], pad: [usize; 3]) -> Result<(ConvGeom, usize)> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 5 || ws.len() != 5 {
            return Err(Error::shape("5-d input and weight", (xs.to_vec(), ws.to_vec())));
        }
        if xs[1] != ws[0] && transposed || xs[1] != ws[1] && !transposed {
            return Err(Error::shape(format!("input channels matching weight {ws:?}"), xs.to_vec()));
        }
        let kernel = [ws[2], ws[3], ws[4]];
        if !transposed {
            return Ok((
                ConvGeom {
                    in_channels: ws[1],
                    out_channels: ws[0],
                    in_dims: [xs[2], xs[3], xs[4]],
                    kernel,
                    stride,
                    pad,
                },
                xs[0],
            ));
        }
        let mut big = [0; 3];
        for a in 0..3 {
            let ext = (xs[2 + a] - 1) * stride[a] + kernel[a];
            if ext < 2 * pad[a] + 1 {
                return Err(Error::shape("positive transposed extent", xs.to_vec()));
            }
            big[a] = ext - 2 * pad[a];
        }
        let g = ConvGeom {
            in_channels: ws[1],
            out_channels: ws[0],
            in_dims: big,
            kernel,
            stride,
            pad,
        };
        if g.out_dims()? != [xs[2], xs[3], xs[4]] {
            return Err(Error::shape("invertible transposed geometry", xs.to_vec()));
        }
        Ok((g, xs[0]))
    }

    /// 3D convolution: `x [N, C, D, H, W]`, `w [O, C, kd, kh, kw]`, `b [O]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let (geom, batch) = self.conv_geom(x, w, false, stride, pad)?;
        let out = geom.out_dims()?;
        let y = conv_forward(self.value(x).data(), batch, &geom, self.value(w).data(), self.value(b).data())?;
        let t = Tensor::from_vec(&[batch, geom.out_channels, out[0], out[1], out[2]], y)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(t, Op::Conv { x, w, b, geom, batch }, ng))
    }

    /// Transposed 3D convolution: `x [N, Cin, ...]`, `w [Cin, O, kd, kh, kw]`, `b [O]`.
    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let (geom, batch) = self.conv_geom(x, w, true, stride, pad)?;
        let y = conv_transpose_forward(self.value(x).data(), batch, &geom, self.value(w).data(), self.value(b).data())?;
        let [d, h, wd] = geom.in_dims;
        let t = Tensor::from_vec(&[batch, geom.in_channels, d, h, wd], y)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(t, Op::ConvTranspose { x, w, b, geom, batch }, ng))
    }

    /// Row-wise layer normalization of `x [N, F]` with affine `gamma`, `beta` of `[F]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(Error::shape("[N, F] with [F] affine", xs));
        }
        let f = xs[1];
        let mut y = vec![0.0; xs[0] * f];
        let mut rstd = Vec::with_capacity(xs[0]);
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        for (row, out) in self.value(x).data().chunks(f).zip(y.chunks_mut(f)) {
            let mean = row.iter().sum::<f32>() / f as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / f as f32;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for j in 0..f {
                out[j] = (row[j] - mean) * r * g[j] + bt[j];
            }
        }
        let t = Tensor::from_vec(&xs, y)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, rstd }, ng))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(m as f32), Op::MeanAll(a), ng)
    }

    /// `[N, F] -> [N, 1]` row sums.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("[N, F]", s));
        }
        let data = self.value(a).data().chunks(s[1]).map(|r| r.iter().sum()).collect();
        let t = Tensor::from_vec(&[s[0], 1], data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SumRows(a), ng))
    }

    /// `[N, C, ...] -> [N, C]` spatial mean.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 3 {
            return Err(Error::shape("[N, C, spatial...]", s));
        }
        let sp: usize = s[2..].iter().product();
        let data = self
            .value(a)
            .data()
            .chunks(sp)
            .map(|c| c.iter().sum::<f32>() / sp as f32)
            .collect();
        let t = Tensor::from_vec(&[s[0], s[1]], data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MeanPool(a), ng))
    }

    /// Concatenate `[N, A]` and `[N, B]` into `[N, A + B]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape(sa, sb));
        }
        let mut data = Vec::with_capacity(sa[0] * (sa[1] + sb[1]));
        for (ra, rb) in self.value(a).data().chunks(sa[1]).zip(self.value(b).data().chunks(sb[1])) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let t = Tensor::from_vec(&[sa[0], sa[1] + sb[1]], data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Concat(a, b), ng))
    }

    /// Columns `start..start + len` of a `[N, F]` tensor.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::shape(format!("[N, >= {}]", start + len), s));
        }
        let data = self
            .value(a)
            .data()
            .chunks(s[1])
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let t = Tensor::from_vec(&[s[0], len], data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Narrow { x: a, start }, ng))
    }

    /// Rigidly warps each volume of `[N, C, D, H, W]` by the matching row of
    /// `pose [N, 6]` (Euler angles then translation) with trilinear resampling.
    pub fn warp(&mut self, volume: Var, pose: Var) -> Result<Var> {
        let vs = self.shape(volume).to_vec();
        if vs.len() != 5 || self.shape(pose) != [vs[0], 6] {
            return Err(Error::shape(format!("[{}, 6] poses for volume", vs.first().unwrap_or(&0)), self.shape(pose).to_vec()));
        }
        let shape = crate::geometry::sampling_shape(vs[1], vs[2], vs[3], vs[4]);
        let per = vs[1..].iter().product::<usize>();
        let mut out = vec![0.0; vs[0] * per];
        for n in 0..vs[0] {
            let p = pose_row(self.value(pose).data(), n);
            let grid = affine_grid(&euler_to_rotation(&p), p.translation(), (vs[2], vs[3], vs[4]));
            crate::geometry::sample_into(
                &self.value(volume).data()[n * per..(n + 1) * per],
                &shape,
                &grid.coords,
                &mut out[n * per..(n + 1) * per],
            );
        }
        let t = Tensor::from_vec(&vs, out)?;
        let ng = self.ng(volume) || self.ng(pose);
        Ok(self.push(t, Op::Warp { volume, pose }, ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("scalar loss", self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise(&self, v: Var, g: &Tensor, f: impl Fn(f32, f32, f32) -> f32, out: &Tensor) -> Tensor {
        // f(grad, input, output)
        let inp = self.value(v);
        let data = g
            .data()
            .iter()
            .zip(inp.data())
            .zip(out.data())
            .map(|((&gv, &x), &y)| f(gv, x, y))
            .collect();
        Tensor::from_vec(inp.shape(), data).expect("same shape")
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let gb = self.elementwise(*b, g, |gv, y, _| gv * y, out);
                    self.accumulate(grads, *a, gb);
                }
                if self.ng(*b) {
                    let ga = self.elementwise(*a, g, |gv, x, _| gv * x, out);
                    self.accumulate(grads, *b, ga);
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = Tensor::zeros(g.shape());
                let mut gb = Tensor::zeros(g.shape());
                for k in 0..g.len() {
                    if va[k] <= vb[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let t = self.elementwise(*a, g, |gv, x, _| if x > 0.0 { gv } else { 0.0 }, out);
                self.accumulate(grads, *a, t);
            }
            Op::Tanh(a) => {
                let t = self.elementwise(*a, g, |gv, _, y| gv * (1.0 - y * y), out);
                self.accumulate(grads, *a, t);
            }
            Op::Sigmoid(a) => {
                let t = self.elementwise(*a, g, |gv, _, y| gv * y * (1.0 - y), out);
                self.accumulate(grads, *a, t);
            }
            Op::Softplus(a) => {
                let t = self.elementwise(*a, g, |gv, x, _| gv * sigmoid(x), out);
                self.accumulate(grads, *a, t);
            }
            Op::Exp(a) => {
                let t = self.elementwise(*a, g, |gv, _, y| gv * y, out);
                self.accumulate(grads, *a, t);
            }
            Op::Ln(a) => {
                let t = self.elementwise(*a, g, |gv, x, _| gv / x, out);
                self.accumulate(grads, *a, t);
            }
            Op::Abs(a) => {
                // sign(0) = 0 keeps |x| subgradient symmetric at the kink.
                let t = self.elementwise(*a, g, |gv, x, _| if x > 0.0 { gv } else if x < 0.0 { -gv } else { 0.0 }, out);
                self.accumulate(grads, *a, t);
            }
            Op::Square(a) => {
                let t = self.elementwise(*a, g, |gv, x, _| 2.0 * gv * x, out);
                self.accumulate(grads, *a, t);
            }
            Op::Reshape(a) => {
                let t = g.clone().reshaped(self.shape(*a))?;
                self.accumulate(grads, *a, t);
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, fin) = (xs[0], xs[1]);
                let fout = self.shape(*w)[0];
                if self.ng(*x) {
                    let mut dx = vec![0.0; n * fin];
                    gemm(n, fout, fin, g.data(), false, self.value(*w).data(), false, &mut dx, 0.0);
                    self.accumulate(grads, *x, Tensor::from_vec(&[n, fin], dx)?);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    gemm(fout, n, fin, g.data(), true, self.value(*x).data(), false, &mut dw, 0.0);
                    self.accumulate(grads, *w, Tensor::from_vec(&[fout, fin], dw)?);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; fout];
                    for row in g.data().chunks(fout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[fout], db)?);
                }
            }
            Op::Conv { x, w, b, geom, batch } | Op::ConvTranspose { x, w, b, geom, batch } => {
                let transposed = matches!(node.op, Op::ConvTranspose { .. });
                let mut dw = self.ng(*w).then(|| Tensor::zeros(self.shape(*w)));
                let mut db = self.ng(*b).then(|| Tensor::zeros(self.shape(*b)));
                let f = if transposed { conv_transpose_backward } else { conv_backward };
                let dx = f(
                    self.value(*x).data(),
                    *batch,
                    geom,
                    self.value(*w).data(),
                    g.data(),
                    self.ng(*x),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                )?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let Some(db) = db {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let f = self.shape(*x)[1];
                let gam = self.value(*gamma).data();
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                let rows = g.data().chunks(f).zip(self.value(*x).data().chunks(f));
                for (r, ((gr, xr), dxr)) in rows.zip(dx.chunks_mut(f)).enumerate() {
                    let mean = xr.iter().sum::<f32>() / f as f32;
                    let xhat: Vec<f32> = xr.iter().map(|v| (v - mean) * rstd[r]).collect();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..f {
                        let dxhat = gr[j] * gam[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let inv_f = 1.0 / f as f32;
                    for j in 0..f {
                        let dxhat = gr[j] * gam[j];
                        dxr[j] = rstd[r] * inv_f * (f as f32 * dxhat - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                self.accumulate(grads, *gamma, Tensor::from_vec(&[f], dgamma)?);
                self.accumulate(grads, *beta, Tensor::from_vec(&[f], dbeta)?);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f32;
                let t = Tensor::full(self.shape(*a), g.item() / n);
                self.accumulate(grads, *a, t);
            }
            Op::SumRows(a) => {
                let s = self.shape(*a);
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, s[1])).collect();
                self.accumulate(grads, *a, Tensor::from_vec(s, data)?);
            }
            Op::MeanPool(a) => {
                let s = self.shape(*a);
                let sp: usize = s[2..].iter().product();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / sp as f32, sp))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(s, data)?);
            }
            Op::Concat(a, b) => {
                let (fa, fb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let mut ga = Vec::with_capacity(self.value(*a).len());
                let mut gb = Vec::with_capacity(self.value(*b).len());
                for row in g.data().chunks(fa + fb) {
                    ga.extend_from_slice(&row[..fa]);
                    gb.extend_from_slice(&row[fa..]);
                }
                self.accumulate(grads, *a, Tensor::from_vec(self.shape(*a), ga)?);
                self.accumulate(grads, *b, Tensor::from_vec(self.shape(*b), gb)?);
            }
            Op::Narrow { x, start } => {
                let s = self.shape(*x);
                let len = out.shape()[1];
                let mut d = Tensor::zeros(s);
                for (row, gr) in d.data_mut().chunks_mut(s[1]).zip(g.data().chunks(len)) {
                    row[*start..*start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Warp { volume, pose } => {
                let vs = self.shape(*volume).to_vec();
                let shape = crate::geometry::sampling_shape(vs[1], vs[2], vs[3], vs[4]);
                let per = vs[1..].iter().product::<usize>();
                let dims = (vs[2], vs[3], vs[4]);
                let mut gvol = Tensor::zeros(&vs);
                let mut gpose = Tensor::zeros(&[vs[0], 6]);
                let mut grad_grid = vec![[0f32; 3]; dims.0 * dims.1 * dims.2];
                for n in 0..vs[0] {
                    let p = pose_row(self.value(*pose).data(), n);
                    let grid = affine_grid(&euler_to_rotation(&p), p.translation(), dims);
                    crate::geometry::sample_backward_into(
                        &self.value(*volume).data()[n * per..(n + 1) * per],
                        &shape,
                        &grid.coords,
                        &g.data()[n * per..(n + 1) * per],
                        &mut gvol.data_mut()[n * per..(n + 1) * per],
                        &mut grad_grid,
                    );
                    if self.ng(*pose) {
                        let gp = pose_grad_from_grid(&p, &grad_grid, dims);
                        for k in 0..6 {
                            gpose.data_mut()[n * 6 + k] = gp[k] as f32;
                        }
                    }
                }
                self.accumulate(grads, *volume, gvol);
                self.accumulate(grads, *pose, gpose);
            }
        }
        Ok(())
    }
}

fn pose_row(data: &[f32], n: usize) -> EulerPose {
    let r = &data[n * 6..n * 6 + 6];
    EulerPose {
        alpha: r[0] as f64,
        beta: r[1] as f64,
        gamma: r[2] as f64,
        tx: r[3] as f64,
        ty: r[4] as f64,
        tz: r[5] as f64,
    }
}
