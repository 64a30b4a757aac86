//! Dense row-major `f32` tensors and the convolution / matrix kernels the
//! networks are built from.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(shape, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First element; intended for scalar losses.
    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`; all matrices row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the index ranges implied by the dims and strides,
    // checked by the assertion above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 3D convolution; 2D layers use depth 1 with a depth-1 kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn out_dims(&self) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = self.in_dims[a] + 2 * self.pad[a];
            if padded < self.kernel[a] || self.stride[a] == 0 {
                return Err(Error::shape(
                    format!("padded extent >= kernel {:?}", self.kernel),
                    self.in_dims,
                ));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_spatial(&self) -> usize {
        self.in_dims.iter().product()
    }
}

/// Output extent of a transposed convolution along one axis.
pub fn transposed_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Output positions `lo..hi` along one axis whose input index
/// `o * stride + k - pad` falls inside `0..extent`.
fn valid_range(out: usize, extent: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = (extent + pad).saturating_sub(k).div_ceil(stride).min(out);
    (lo.min(hi), hi)
}

fn im2col(x: &[f32], g: &ConvGeom, out: [usize; 3], col: &mut [f32]) {
    let [d, h, w] = g.in_dims;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut i = 0;
                    for oz in 0..od {
                        let z = (oz * sd + kz) as isize - pd as isize;
                        for oy in 0..oh {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            let valid_zy = z >= 0 && (z as usize) < d && y >= 0 && (y as usize) < h;
                            if !valid_zy {
                                dst[i..i + ow].fill(0.0);
                                i += ow;
                                continue;
                            }
                            let base = (z as usize * h + y as usize) * w;
                            let (lo, hi) = valid_range(ow, w, sw, kx, pw);
                            let seg = &mut dst[i..i + ow];
                            seg[..lo].fill(0.0);
                            seg[hi..].fill(0.0);
                            if lo < hi {
                                let x0 = base + lo * sw + kx - pw;
                                if sw == 1 {
                                    seg[lo..hi].copy_from_slice(&xc[x0..x0 + hi - lo]);
                                } else {
                                    for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                                        *v = xc[x0 + j * sw];
                                    }
                                }
                            }
                            i += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeom, out: [usize; 3], x: &mut [f32]) {
    let [d, h, w] = g.in_dims;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut i = 0;
                    for oz in 0..od {
                        let z = (oz * sd + kz) as isize - pd as isize;
                        for oy in 0..oh {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            if !(z >= 0 && (z as usize) < d && y >= 0 && (y as usize) < h) {
                                i += ow;
                                continue;
                            }
                            let base = (z as usize * h + y as usize) * w;
                            let (lo, hi) = valid_range(ow, w, sw, kx, pw);
                            if lo < hi {
                                let x0 = base + lo * sw + kx - pw;
                                let seg = &src[i + lo..i + hi];
                                if sw == 1 {
                                    for (d, v) in xc[x0..x0 + hi - lo].iter_mut().zip(seg) {
                                        *d += v;
                                    }
                                } else {
                                    for (j, v) in seg.iter().enumerate() {
                                        xc[x0 + j * sw] += v;
                                    }
                                }
                            }
                            i += ow;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == [1, 1, 1] && g.stride == [1, 1, 1] && g.pad == [0, 0, 0]
}

/// Convolution forward. `x` is `[N, C, D, H, W]` flattened, `w` is
/// `[O, C, kd, kh, kw]`; returns `[N, O, D', H', W']` flattened.
pub(crate) fn conv_forward(x: &[f32], n: usize, g: &ConvGeom, w: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    let out = g.out_dims()?;
    let p: usize = out.iter().product();
    let ck = g.in_channels * g.kernel_len();
    let in_len = g.in_channels * g.in_spatial();
    let mut y = vec![0.0; n * g.out_channels * p];
    let mut col = if is_pointwise(g) { Vec::new() } else { vec![0.0; ck * p] };
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let ys = &mut y[s * g.out_channels * p..(s + 1) * g.out_channels * p];
        for (o, chunk) in ys.chunks_mut(p).enumerate() {
            chunk.fill(b[o]);
        }
        if is_pointwise(g) {
            gemm(g.out_channels, ck, p, w, false, xs, false, ys, 1.0);
        } else {
            im2col(xs, g, out, &mut col);
            gemm(g.out_channels, ck, p, w, false, &col, false, ys, 1.0);
        }
    }
    Ok(y)
}

/// Convolution backward. Accumulates into `dw`/`db`, returns `dx` if requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    w: &[f32],
    dy: &[f32],
    want_dx: bool,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) -> Result<Option<Vec<f32>>> {
    let out = g.out_dims()?;
    let p: usize = out.iter().product();
    let ck = g.in_channels * g.kernel_len();
    let in_len = g.in_channels * g.in_spatial();
    let pointwise = is_pointwise(g);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; ck * p] };
    let mut dcol = if pointwise || !want_dx { Vec::new() } else { vec![0.0; ck * p] };
    let mut dx = if want_dx { Some(vec![0.0; n * in_len]) } else { None };
    let mut dw = dw;
    if let Some(db) = db {
        for s in 0..n {
            let dys = &dy[s * g.out_channels * p..(s + 1) * g.out_channels * p];
            for (o, chunk) in dys.chunks(p).enumerate() {
                db[o] += chunk.iter().sum::<f32>();
            }
        }
    }
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let dys = &dy[s * g.out_channels * p..(s + 1) * g.out_channels * p];
        if let Some(dw) = dw.as_deref_mut() {
            if pointwise {
                gemm(g.out_channels, p, ck, dys, false, xs, true, dw, 1.0);
            } else {
                im2col(xs, g, out, &mut col);
                gemm(g.out_channels, p, ck, dys, false, &col, true, dw, 1.0);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if pointwise {
                gemm(ck, g.out_channels, p, w, true, dys, false, dxs, 0.0);
            } else {
                gemm(ck, g.out_channels, p, w, true, dys, false, &mut dcol, 0.0);
                col2im(&dcol, g, out, dxs);
            }
        }
    }
    Ok(dx)
}

/// Transposed convolution forward. `x` is `[N, Cin, ...]`, `w` is
/// `[Cin, O, kd, kh, kw]`, and `g` describes the *adjoint* convolution that
/// maps the output volume (channels `O`) back onto the input (channels `Cin`).
pub(crate) fn conv_transpose_forward(x: &[f32], n: usize, g: &ConvGeom, w: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    // g.in_* describes the transposed output; g.out_channels is Cin.
    let small = g.out_dims()?;
    let p: usize = small.iter().product();
    let ok = g.in_channels * g.kernel_len();
    let out_len = g.in_channels * g.in_spatial();
    let in_len = g.out_channels * p;
    let mut y = vec![0.0; n * out_len];
    let mut col = vec![0.0; ok * p];
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let ys = &mut y[s * out_len..(s + 1) * out_len];
        gemm(ok, g.out_channels, p, w, true, xs, false, &mut col, 0.0);
        col2im(&col, g, small, ys);
        let sp = g.in_spatial();
        for (o, chunk) in ys.chunks_mut(sp).enumerate() {
            for v in chunk {
                *v += b[o];
            }
        }
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    w: &[f32],
    dy: &[f32],
    want_dx: bool,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) -> Result<Option<Vec<f32>>> {
    let small = g.out_dims()?;
    let p: usize = small.iter().product();
    let ok = g.in_channels * g.kernel_len();
    let out_len = g.in_channels * g.in_spatial();
    let in_len = g.out_channels * p;
    let mut col = vec![0.0; ok * p];
    let mut dx = if want_dx { Some(vec![0.0; n * in_len]) } else { None };
    let mut dw = dw;
    if let Some(db) = db {
        let sp = g.in_spatial();
        for s in 0..n {
            let dys = &dy[s * out_len..(s + 1) * out_len];
            for (o, chunk) in dys.chunks(sp).enumerate() {
                db[o] += chunk.iter().sum::<f32>();
            }
        }
    }
    for s in 0..n {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        im2col(dys, g, small, &mut col);
        if let Some(dx) = dx.as_mut() {
            gemm(g.out_channels, ok, p, w, false, &col, false, &mut dx[s * in_len..(s + 1) * in_len], 0.0);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xs = &x[s * in_len..(s + 1) * in_len];
            gemm(g.out_channels, p, ok, xs, false, &col, true, dw, 1.0);
        }
    }
    Ok(dx)
}
