use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    DivConst(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    AvgPool1d {
        x: Var,
        kernel: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Sin(Var),
    Index(Var, usize),
    Stack(Vec<Var>),
    LinearResample {
        x: Var,
        disp: Var,
    },
    GaussianSmooth {
        x: Var,
        kernel: Vec<f64>,
    },
    BceLoss {
        p: Var,
        target: Vec<f64>,
    },
    PadZeros {
        x: Var,
        left: usize,
        right: usize,
    },
    Crop {
        x: Var,
        start: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probability clamp used by [`Graph::bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order of the
/// computation, so the backward sweep is a single reverse scan. Only nodes that
/// depend on a `param` leaf carry gradients; VJPs toward constant inputs are
/// skipped entirely.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::Shape {
        op,
        shapes: shapes
            .iter()
            .map(|s| format!("{:?}", s))
            .collect::<Vec<_>>()
            .join(" vs "),
    }
}

/// Reflect index into `0..n` using half-sample symmetry (`d c b a | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian taps, truncated at four standard deviations.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Rows and row length of a rank-1 or rank-2 tensor viewed along its last axis.
fn rows_of(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [t] => Some((1, *t)),
        [c, t] => Some((*c, *t)),
        _ => None,
    }
}

/// `c = a·b + beta·c` for row-major `c` of shape `m × n`; `a` is `m × k` and
/// `b` is `k × n` with the given (row, column) strides.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
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
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    cols: &mut [f64],
) {
    for c in 0..cin {
        let xrow = &x[c * t_in..(c + 1) * t_in];
        for kk in 0..k {
            let dst = &mut cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (t, d) in dst.iter_mut().enumerate() {
                let src = (t * stride + kk) as isize - pad as isize;
                *d = if src >= 0 && (src as usize) < t_in {
                    xrow[src as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Tensor times a single-element node.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale", &[self.shape(x), self.shape(s)]));
        }
        let k = self.value(s).item();
        let rg = self.rg(x) || self.rg(s);
        let t = {
            let vx = self.value(x);
            Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|v| v * k).collect())?
        };
        Ok(self.push(t, Op::Scale(x, s), rg))
    }

    pub fn scale_const(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::ScaleConst(x, k), |v| v * k)
    }

    /// `x / k` for a constant `k`; `v / v` is exactly one, unlike `v * (1 / v)`.
    pub fn div_const(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::DivConst(x, k), |v| v / k)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::AddConst(x), |v| v + k)
    }

    /// `[n, m] x [m, p] -> [n, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, m, p) = match (sa, sb) {
            ([n, m], [m2, p]) if m == m2 => (*n, *m, *p),
            _ => return Err(shape_err("matmul", &[sa, sb])),
        };
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let aik = va[i * m + k];
                for (o, &bv) in row.iter_mut().zip(&vb[k * p..(k + 1) * p]) {
                    *o += aik * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, p], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds `b[o]` along axis 1 of `x` (`[B, O]` or `[B, O, T]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() < 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(shape_err("add_bias", &[sx, sb]));
        }
        let inner: usize = sx[2..].iter().product();
        let o = sx[1];
        let vb = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += vb[(i / inner) % o];
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    /// Batched 1D convolution (cross-correlation), `[B, Cin, T] * [Cout, Cin, K]`
    /// with zero padding `pad` on both ends.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (bsz, cin, t_in, cout, k) = match (&sx[..], &sw[..]) {
            ([bsz, cin, t], [cout, cin2, k]) if cin == cin2 => (*bsz, *cin, *t, *cout, *k),
            _ => return Err(shape_err("conv1d", &[&sx, &sw])),
        };
        if stride == 0 || t_in + 2 * pad < k {
            return Err(shape_err("conv1d", &[&sx, &sw]));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv1d", &[&sw, self.shape(b)]));
            }
        }
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let ck = cin * k;
        let vx = self.value(x).data();
        let vw = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; bsz * cout * t_out];
        let mut cols = vec![0.0; ck * t_out];
        for bi in 0..bsz {
            im2col(
                &vx[bi * cin * t_in..(bi + 1) * cin * t_in],
                cin,
                t_in,
                k,
                stride,
                pad,
                t_out,
                &mut cols,
            );
            let ob = &mut out[bi * cout * t_out..(bi + 1) * cout * t_out];
            if let Some(bias) = bias {
                for (o, row) in ob.chunks_exact_mut(t_out).enumerate() {
                    row.iter_mut().for_each(|r| *r = bias[o]);
                }
            }
            gemm(
                (cout, ck, t_out),
                vw,
                (ck, 1),
                &cols,
                (t_out, 1),
                1.0,
                ob,
            );
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![bsz, cout, t_out], out)?,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Non-overlapping average pooling along the last axis (`stride == kernel`).
    pub fn avgpool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let t = *sx.last().ok_or_else(|| shape_err("avgpool1d", &[&sx]))?;
        if kernel == 0 || kernel > t {
            return Err(contract(
                "avgpool1d",
                format!("kernel {} invalid for length {}", kernel, t),
            ));
        }
        let t_out = t / kernel;
        let rows = self.value(x).len() / t;
        let vx = self.value(x).data();
        let mut out = vec![0.0; rows * t_out];
        for r in 0..rows {
            for j in 0..t_out {
                let s: f64 = vx[r * t + j * kernel..r * t + (j + 1) * kernel].iter().sum();
                out[r * t_out + j] = s / kernel as f64;
            }
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = t_out;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::AvgPool1d { x, kernel }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.map(x, Op::Sin(x), f64::sin)
    }

    /// Softmax of a vector, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 1 {
            return Err(shape_err("softmax", &[self.shape(x)]));
        }
        let t = Tensor::vector(softmax(self.value(x).data()));
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(contract("mean", "empty tensor"));
        }
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(x), rg))
    }

    /// Element `i` of a vector, as a scalar node.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 || i >= v.len() {
            return Err(contract(
                "index",
                format!("index {} into shape {:?}", i, v.shape()),
            ));
        }
        let t = Tensor::scalar(v.data()[i]);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Index(x, i), rg))
    }

    /// Stack equal-shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| contract("stack", "no inputs"))?;
        let shape = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(shape.iter().product::<usize>() * xs.len());
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(shape_err("stack", &[&shape, self.shape(x)]));
            }
            data.extend_from_slice(self.value(x).data());
        }
        let mut out_shape = vec![xs.len()];
        out_shape.extend(&shape);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Stack(xs.to_vec()), rg))
    }

    /// Samples each row of `x` (`[C, T]` or `[T]`) at `t + disp[t]` by linear
    /// interpolation; source positions outside `[0, T-1]` clamp to the edge.
    pub fn linear_resample(&mut self, x: Var, disp: Var) -> Result<Var> {
        let (sx, sd) = (self.shape(x).to_vec(), self.shape(disp).to_vec());
        let (c, t) = match rows_of(&sx) {
            Some(r) if sd == [r.1] => r,
            _ => return Err(shape_err("linear_resample", &[&sx, &sd])),
        };
        let vx = self.value(x).data();
        let vd = self.value(disp).data();
        let mut out = vec![0.0; c * t];
        for (ti, &d) in vd.iter().enumerate() {
            let (i0, f, _) = interp_pos(ti, d, t);
            let i1 = (i0 + 1).min(t - 1);
            for ci in 0..c {
                let row = &vx[ci * t..(ci + 1) * t];
                out[ci * t + ti] = row[i0] * (1.0 - f) + row[i1] * f;
            }
        }
        let rg = self.rg(x) || self.rg(disp);
        Ok(self.push(Tensor::new(sx, out)?, Op::LinearResample { x, disp }, rg))
    }

    /// Convolves each row with a normalized Gaussian, reflect-padded.
    pub fn gaussian_smooth(&mut self, x: Var, kernel_std: f64) -> Result<Var> {
        if !(kernel_std > 0.0) {
            return Err(contract(
                "gaussian_smooth",
                format!("kernel_std must be > 0, got {}", kernel_std),
            ));
        }
        let sx = self.shape(x).to_vec();
        let (c, t) = rows_of(&sx).ok_or_else(|| shape_err("gaussian_smooth", &[&sx]))?;
        let kernel = gaussian_kernel(kernel_std);
        let r = (kernel.len() / 2) as isize;
        let vx = self.value(x).data();
        let mut out = vec![0.0; c * t];
        for ci in 0..c {
            let row = &vx[ci * t..(ci + 1) * t];
            for ti in 0..t {
                let mut acc = 0.0;
                for (j, &kv) in kernel.iter().enumerate() {
                    acc += kv * row[reflect(ti as isize + j as isize - r, t)];
                }
                out[ci * t + ti] = acc;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(sx, out)?, Op::GaussianSmooth { x, kernel }, rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`, with
    /// `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&mut self, p: Var, target: &[f64]) -> Result<Var> {
        let vp = self.value(p).data();
        if vp.len() != target.len() || vp.is_empty() {
            return Err(contract(
                "bce_loss",
                format!("{} predictions vs {} targets", vp.len(), target.len()),
            ));
        }
        let n = vp.len() as f64;
        let loss: f64 = vp
            .iter()
            .zip(target)
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLoss {
                p,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Zero-extends the last axis.
    pub fn pad_zeros(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (c, t) = rows_of(&sx).ok_or_else(|| shape_err("pad_zeros", &[&sx]))?;
        let tn = t + left + right;
        let vx = self.value(x).data();
        let mut out = vec![0.0; c * tn];
        for ci in 0..c {
            out[ci * tn + left..ci * tn + left + t].copy_from_slice(&vx[ci * t..(ci + 1) * t]);
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = tn;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::PadZeros { x, left, right }, rg))
    }

    /// Window `[start, start + len)` of the last axis.
    pub fn crop(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (c, t) = rows_of(&sx).ok_or_else(|| shape_err("crop", &[&sx]))?;
        if start + len > t {
            return Err(contract(
                "crop",
                format!("window {}..{} exceeds length {}", start, start + len, t),
            ));
        }
        let vx = self.value(x).data();
        let mut out = Vec::with_capacity(c * len);
        for ci in 0..c {
            out.extend_from_slice(&vx[ci * t + start..ci * t + start + len]);
        }
        let mut shape = sx.clone();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Crop { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// Nodes that `loss` does not depend on receive a zero gradient.
    pub fn backward(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        self.backward_seeded(loss, Tensor::full(lv.shape(), 1.0), wrt)
    }

    /// Vector-Jacobian product: pulls `seed` (shaped like `out`) back to `wrt`.
    pub fn backward_seeded(&self, out: Var, seed: Tensor, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if seed.shape() != self.shape(out) {
            return Err(shape_err("backward_seeded", &[self.shape(out), seed.shape()]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(seed);

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.vjp(node, &g, &mut grads);
        }

        Ok(wrt
            .iter()
            .map(|&v| {
                grads
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
            })
            .collect())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("vjp shape")
    }

    fn vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.like(*b, gd.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, self.like(*a, d));
                }
                if self.rg(*b) {
                    let d = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, self.like(*b, d));
                }
            }
            Op::Scale(x, s) => {
                let k = self.value(*s).item();
                if self.rg(*x) {
                    self.accumulate(grads, *x, self.like(*x, gd.iter().map(|g| g * k).collect()));
                }
                if self.rg(*s) {
                    let vx = self.value(*x).data();
                    let d: f64 = gd.iter().zip(vx).map(|(g, x)| g * x).sum();
                    self.accumulate(grads, *s, self.like(*s, vec![d]));
                }
            }
            Op::ScaleConst(x, k) => {
                self.accumulate(grads, *x, self.like(*x, gd.iter().map(|g| g * k).collect()));
            }
            Op::DivConst(x, k) => {
                self.accumulate(grads, *x, self.like(*x, gd.iter().map(|g| g / k).collect()));
            }
            Op::AddConst(x) => self.accumulate(grads, *x, g.clone()),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, m, p) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        let grow = &gd[i * p..(i + 1) * p];
                        for k in 0..m {
                            da[i * m + k] = grow
                                .iter()
                                .zip(&vb[k * p..(k + 1) * p])
                                .map(|(g, b)| g * b)
                                .sum();
                        }
                    }
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; m * p];
                    for i in 0..n {
                        let grow = &gd[i * p..(i + 1) * p];
                        for k in 0..m {
                            let aik = va[i * m + k];
                            for (d, g) in db[k * p..(k + 1) * p].iter_mut().zip(grow) {
                                *d += aik * g;
                            }
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*b) {
                    let sx = self.shape(*x);
                    let inner: usize = sx[2..].iter().product();
                    let o = sx[1];
                    let mut db = vec![0.0; o];
                    for (i, gv) in gd.iter().enumerate() {
                        db[(i / inner) % o] += gv;
                    }
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
            } => self.conv1d_vjp(*x, *w, *b, *stride, *pad, g, grads),
            Op::AvgPool1d { x, kernel } => {
                let t = *self.shape(*x).last().unwrap();
                let t_out = t / kernel;
                let rows = self.value(*x).len() / t;
                let mut dx = vec![0.0; rows * t];
                let inv = 1.0 / *kernel as f64;
                for r in 0..rows {
                    for j in 0..t_out {
                        let gv = gd[r * t_out + j] * inv;
                        dx[r * t + j * kernel..r * t + (j + 1) * kernel]
                            .iter_mut()
                            .for_each(|d| *d = gv);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(vx)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = gd.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sin(x) => {
                let vx = self.value(*x).data();
                let d = gd.iter().zip(vx).map(|(g, x)| g * x.cos()).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Softmax(x) => {
                let dot: f64 = gd.iter().zip(out).map(|(g, y)| g * y).sum();
                let d = gd.iter().zip(out).map(|(g, y)| y * (g - dot)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0] / n as f64; n]));
            }
            Op::Index(x, i) => {
                let mut d = vec![0.0; self.value(*x).len()];
                d[*i] = gd[0];
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Stack(xs) => {
                let n = self.value(xs[0]).len();
                for (j, &x) in xs.iter().enumerate() {
                    if self.rg(x) {
                        self.accumulate(grads, x, self.like(x, gd[j * n..(j + 1) * n].to_vec()));
                    }
                }
            }
            Op::LinearResample { x, disp } => {
                let (c, t) = rows_of(self.shape(*x)).unwrap();
                let vx = self.value(*x).data();
                let vd = self.value(*disp).data();
                let want_x = self.rg(*x);
                let want_d = self.rg(*disp);
                let mut dx = if want_x { vec![0.0; c * t] } else { Vec::new() };
                let mut dd = if want_d { vec![0.0; t] } else { Vec::new() };
                for (ti, &d) in vd.iter().enumerate() {
                    let (i0, f, clamped) = interp_pos(ti, d, t);
                    let i1 = (i0 + 1).min(t - 1);
                    for ci in 0..c {
                        let gv = gd[ci * t + ti];
                        if want_x {
                            dx[ci * t + i0] += gv * (1.0 - f);
                            dx[ci * t + i1] += gv * f;
                        }
                        if want_d && !clamped {
                            dd[ti] += gv * (vx[ci * t + i1] - vx[ci * t + i0]);
                        }
                    }
                }
                if want_x {
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if want_d {
                    self.accumulate(grads, *disp, self.like(*disp, dd));
                }
            }
            Op::GaussianSmooth { x, kernel } => {
                let (c, t) = rows_of(self.shape(*x)).unwrap();
                let r = (kernel.len() / 2) as isize;
                let mut dx = vec![0.0; c * t];
                for ci in 0..c {
                    for ti in 0..t {
                        let gv = gd[ci * t + ti];
                        for (j, &kv) in kernel.iter().enumerate() {
                            dx[ci * t + reflect(ti as isize + j as isize - r, t)] += kv * gv;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::BceLoss { p, target } => {
                let vp = self.value(*p).data();
                let n = vp.len() as f64;
                let d = vp
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        gd[0] * (-y / pc + (1.0 - y) / (1.0 - pc)) / n
                    })
                    .collect();
                self.accumulate(grads, *p, self.like(*p, d));
            }
            Op::PadZeros { x, left, right } => {
                let (c, t) = rows_of(self.shape(*x)).unwrap();
                let tn = t + left + right;
                let mut dx = Vec::with_capacity(c * t);
                for ci in 0..c {
                    dx.extend_from_slice(&gd[ci * tn + left..ci * tn + left + t]);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, gd.to_vec()));
            }
            Op::Crop { x, start } => {
                let (c, t) = rows_of(self.shape(*x)).unwrap();
                let len = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; c * t];
                for ci in 0..c {
                    dx[ci * t + start..ci * t + start + len]
                        .copy_from_slice(&gd[ci * len..(ci + 1) * len]);
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_vjp(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let sx = self.shape(x);
        let sw = self.shape(w);
        let (bsz, cin, t_in) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let t_out = g.shape()[2];
        let ck = cin * k;
        let gd = g.data();
        let vx = self.value(x).data();
        let vw = self.value(w).data();
        let want_x = self.rg(x);
        let want_w = self.rg(w);

        if let Some(b) = b.filter(|b| self.rg(*b)) {
            let mut db = vec![0.0; cout];
            for bi in 0..bsz {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += gd[(bi * cout + o) * t_out..(bi * cout + o + 1) * t_out]
                        .iter()
                        .sum::<f64>();
                }
            }
            self.accumulate(grads, b, self.like(b, db));
        }
        if !want_x && !want_w {
            return;
        }

        let mut dw = if want_w { vec![0.0; cout * ck] } else { Vec::new() };
        let mut dx = if want_x {
            vec![0.0; bsz * cin * t_in]
        } else {
            Vec::new()
        };
        let mut cols = vec![0.0; ck * t_out];
        let mut dcols = vec![0.0; if want_x { ck * t_out } else { 0 }];
        for bi in 0..bsz {
            let gb = &gd[bi * cout * t_out..(bi + 1) * cout * t_out];
            if want_w {
                im2col(
                    &vx[bi * cin * t_in..(bi + 1) * cin * t_in],
                    cin,
                    t_in,
                    k,
                    stride,
                    pad,
                    t_out,
                    &mut cols,
                );
                gemm((cout, t_out, ck), gb, (t_out, 1), &cols, (1, t_out), 1.0, &mut dw);
            }
            if want_x {
                gemm((ck, cout, t_out), vw, (1, ck), gb, (t_out, 1), 0.0, &mut dcols);
                let dxb = &mut dx[bi * cin * t_in..(bi + 1) * cin * t_in];
                for c in 0..cin {
                    for kk in 0..k {
                        let src = &dcols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
                        for (t, &v) in src.iter().enumerate() {
                            let pos = (t * stride + kk) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < t_in {
                                dxb[c * t_in + pos as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        if want_w {
            self.accumulate(grads, w, self.like(w, dw));
        }
        if want_x {
            self.accumulate(grads, x, self.like(x, dx));
        }
    }
}

/// Left interpolation index, fraction, and whether the position was clamped.
fn interp_pos(t: usize, d: f64, len: usize) -> (usize, f64, bool) {
    if len == 1 {
        return (0, 0.0, true);
    }
    let raw = t as f64 + d;
    let max = (len - 1) as f64;
    let clamped = !(0.0..=max).contains(&raw);
    let p = raw.clamp(0.0, max);
    let mut i0 = p.floor() as usize;
    if i0 >= len - 1 {
        i0 = len - 2;
    }
    (i0, p - i0 as f64, clamped)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
