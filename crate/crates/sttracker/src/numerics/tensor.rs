use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    NonFinite(String),
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Immutable dense f64 tensor, row-major. Ops record the graph needed for
/// reverse-mode differentiation; `backward` walks it once per scalar loss.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<Op>,
}

enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    Sigmoid(Tensor),
    Softmax {
        input: Tensor,
        axis: usize,
    },
    Linear {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
    },
    MatMul(Tensor, Tensor),
    Transpose2(Tensor),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    BilinearSample {
        grid: Tensor,
        locs: Tensor,
    },
    ConcatLast(Vec<Tensor>),
    Reshape(Tensor),
    SliceLast {
        input: Tensor,
        start: usize,
        len: usize,
    },
    Row {
        input: Tensor,
        index: usize,
    },
    SumAll(Tensor),
    ScatterMax {
        points: Tensor,
        /// argmax point index per output slot, usize::MAX for empty
        argmax: Vec<usize>,
    },
    UpsampleNearest {
        input: Tensor,
        fy: usize,
        fx: usize,
    },
    PatchMean {
        input: Tensor,
        r: usize,
    },
    AttnCombine {
        values: Tensor,
        weights: Tensor,
    },
    FocalLoss {
        pred: Tensor,
        target: Vec<f64>,
        alpha: f64,
        beta: f64,
    },
    L1Masked {
        pred: Tensor,
        target: Vec<f64>,
        mask: Vec<f64>,
    },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite(format!(
            "non-finite value produced by {what}"
        )));
    }
    Ok(())
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(NumericsError::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        check_finite(&data, "from_vec")?;
        Ok(Tensor::new(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![], vec![v], false, None)
    }

    /// Leaf tensor that accumulates gradients.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::new(t.inner.shape.clone(), t.inner.data.clone(), true, None))
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn id(&self) -> u64 {
        self.inner.id
    }

    fn result_of(op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_finite(&data, "op")?;
        let requires = op_parents(&op).iter().any(|p| p.requires_grad());
        Ok(Tensor::new(shape, data, requires, Some(op)))
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "add")?;
        let data = zip2(self, other, |a, b| a + b);
        Tensor::result_of(Op::Add(self.clone(), other.clone()), self.inner.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "sub")?;
        let data = zip2(self, other, |a, b| a - b);
        Tensor::result_of(Op::Sub(self.clone(), other.clone()), self.inner.shape.clone(), data)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape(self, other, "mul")?;
        let data = zip2(self, other, |a, b| a * b);
        Tensor::result_of(Op::Mul(self.clone(), other.clone()), self.inner.shape.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::result_of(Op::Scale(self.clone(), c), self.inner.shape.clone(), data)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::result_of(Op::Relu(self.clone()), self.inner.shape.clone(), data)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        Tensor::result_of(Op::Sigmoid(self.clone()), self.inner.shape.clone(), data)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.inner.shape.len() {
            return Err(NumericsError::Dimension(format!(
                "softmax axis {} out of range for shape {:?}",
                axis, self.inner.shape
            )));
        }
        let (outer, len, inner) = split_axis(&self.inner.shape, axis);
        let mut data = self.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    max = max.max(data[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (data[base + k * inner] - max).exp();
                    data[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..len {
                    data[base + k * inner] /= sum;
                }
            }
        }
        Tensor::result_of(
            Op::Softmax { input: self.clone(), axis },
            self.inner.shape.clone(),
            data,
        )
    }

    // ---- linear algebra ----

    /// Affine map over the last axis: out[..., j] = sum_i in[..., i] w[i, j] + b[j].
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let cin = *self.inner.shape.last().ok_or_else(|| {
            NumericsError::Dimension("linear input must have at least one axis".into())
        })?;
        if weight.shape().len() != 2 || weight.shape()[0] != cin {
            return Err(NumericsError::Dimension(format!(
                "linear weight {:?} does not match input channels {}",
                weight.shape(),
                cin
            )));
        }
        let cout = weight.shape()[1];
        if bias.shape() != [cout] {
            return Err(NumericsError::Dimension(format!(
                "linear bias {:?} does not match output channels {}",
                bias.shape(),
                cout
            )));
        }
        let rows = self.numel() / cin;
        let mut out = vec![0.0; rows * cout];
        let x = self.data();
        let w = weight.data();
        let b = bias.data();
        for r in 0..rows {
            for j in 0..cout {
                let mut acc = b[j];
                for i in 0..cin {
                    acc += x[r * cin + i] * w[i * cout + j];
                }
                out[r * cout + j] = acc;
            }
        }
        let mut shape = self.inner.shape.clone();
        *shape.last_mut().unwrap() = cout;
        Tensor::result_of(
            Op::Linear { input: self.clone(), weight: weight.clone(), bias: bias.clone() },
            shape,
            out,
        )
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2 || other.shape().len() != 2 || self.shape()[1] != other.shape()[0]
        {
            return Err(NumericsError::Dimension(format!(
                "matmul shapes {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let av = a[i * k + kk];
                for j in 0..n {
                    out[i * n + j] += av * b[kk * n + j];
                }
            }
        }
        Tensor::result_of(Op::MatMul(self.clone(), other.clone()), vec![m, n], out)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (m, n) = match self.shape() {
            [m, n] => (*m, *n),
            s => return Err(NumericsError::Dimension(format!("transpose2 on rank {}", s.len()))),
        };
        let x = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        Tensor::result_of(Op::Transpose2(self.clone()), vec![n, m], out)
    }

    /// 2D cross-correlation. Input [H, W, Cin], weight [k, k, Cin, Cout],
    /// bias [Cout]; zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (h, w, cin) = expect_rank3(self, "conv2d input")?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[0] != ws[1] || ws[2] != cin {
            return Err(NumericsError::Dimension(format!(
                "conv2d weight {:?} vs input channels {}",
                ws, cin
            )));
        }
        let k = ws[0];
        let cout = ws[3];
        if bias.shape() != [cout] {
            return Err(NumericsError::Dimension("conv2d bias shape".into()));
        }
        if stride < 1 || k < 1 {
            return Err(NumericsError::Contract("conv2d stride and kernel must be >= 1".into()));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(NumericsError::Dimension(
                "conv2d spatial dims after padding smaller than kernel".into(),
            ));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let x = self.data();
        let wd = weight.data();
        let b = bias.data();
        let mut out = vec![0.0; ho * wo * cout];
        for oi in 0..ho {
            for oj in 0..wo {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ki in 0..k {
                        let ii = (oi * stride + ki) as isize - padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let jj = (oj * stride + kj) as isize - padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xoff = (ii as usize * w + jj as usize) * cin;
                            let woff = ((ki * k + kj) * cin) * cout;
                            for ci in 0..cin {
                                acc += x[xoff + ci] * wd[woff + ci * cout + co];
                            }
                        }
                    }
                    out[(oi * wo + oj) * cout + co] = acc;
                }
            }
        }
        Tensor::result_of(
            Op::Conv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.clone(),
                stride,
                padding,
            },
            vec![ho, wo, cout],
            out,
        )
    }

    /// Bilinear interpolation over the first two axes of a [A, B, C] grid.
    /// `locs` is [M, 2] as (u, v); values outside [0, A-1] x [0, B-1] read 0.
    /// Differentiable w.r.t. both the grid and the locations.
    pub fn bilinear_sample(&self, locs: &Tensor) -> Result<Tensor> {
        let (a, b, c) = expect_rank3(self, "bilinear grid")?;
        if locs.shape().len() != 2 || locs.shape()[1] != 2 {
            return Err(NumericsError::Dimension(format!(
                "bilinear locations must be [M, 2], got {:?}",
                locs.shape()
            )));
        }
        let m = locs.shape()[0];
        let g = self.data();
        let l = locs.data();
        let mut out = vec![0.0; m * c];
        for q in 0..m {
            let u = l[q * 2];
            let v = l[q * 2 + 1];
            let u0 = u.floor();
            let v0 = v.floor();
            let fu = u - u0;
            let fv = v - v0;
            let corner = |du: i64, dv: i64| -> Option<usize> {
                // clamp before integer math: far-out sampling locations must
                // read zero, not overflow the index arithmetic
                let ui = u0.clamp(-2.0, a as f64 + 2.0) as i64 + du;
                let vi = v0.clamp(-2.0, b as f64 + 2.0) as i64 + dv;
                if ui >= 0 && (ui as usize) < a && vi >= 0 && (vi as usize) < b {
                    Some((ui as usize * b + vi as usize) * c)
                } else {
                    None
                }
            };
            let corners = [
                (corner(0, 0), (1.0 - fu) * (1.0 - fv)),
                (corner(1, 0), fu * (1.0 - fv)),
                (corner(0, 1), (1.0 - fu) * fv),
                (corner(1, 1), fu * fv),
            ];
            for ch in 0..c {
                let mut acc = 0.0;
                for (off, wgt) in &corners {
                    if let Some(o) = off {
                        acc += wgt * g[o + ch];
                    }
                }
                out[q * c + ch] = acc;
            }
        }
        Tensor::result_of(
            Op::BilinearSample { grid: self.clone(), locs: locs.clone() },
            vec![m, c],
            out,
        )
    }

    // ---- structural ----

    pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumericsError::Contract("concat of zero tensors".into()));
        }
        let lead = &parts[0].shape()[..parts[0].shape().len() - 1];
        for p in parts {
            if &p.shape()[..p.shape().len() - 1] != lead {
                return Err(NumericsError::Dimension("concat leading dims differ".into()));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (p, &wd) in parts.iter().zip(&widths) {
                out[r * total + off..r * total + off + wd]
                    .copy_from_slice(&p.data()[r * wd..(r + 1) * wd]);
                off += wd;
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Tensor::result_of(Op::ConcatLast(parts.to_vec()), shape, out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(NumericsError::Dimension(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        Tensor::result_of(Op::Reshape(self.clone()), shape.to_vec(), self.data().to_vec())
    }

    /// Select `[start, start+len)` along the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let last = *self.shape().last().ok_or_else(|| {
            NumericsError::Dimension("slice_last on scalar".into())
        })?;
        if start + len > last {
            return Err(NumericsError::Dimension(format!(
                "slice_last {}..{} out of {}",
                start,
                start + len,
                last
            )));
        }
        let rows = self.numel() / last;
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&self.data()[r * last + start..r * last + start + len]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Tensor::result_of(Op::SliceLast { input: self.clone(), start, len }, shape, out)
    }

    /// Select one index along the first axis.
    pub fn row(&self, index: usize) -> Result<Tensor> {
        let first = *self.shape().first().ok_or_else(|| {
            NumericsError::Dimension("row on scalar".into())
        })?;
        if index >= first {
            return Err(NumericsError::Dimension(format!("row {index} out of {first}")));
        }
        let rest = self.numel() / first;
        let out = self.data()[index * rest..(index + 1) * rest].to_vec();
        Tensor::result_of(
            Op::Row { input: self.clone(), index },
            self.shape()[1..].to_vec(),
            out,
        )
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        Tensor::result_of(Op::SumAll(self.clone()), vec![], vec![s])
    }

    /// Per-slot elementwise max over points sharing a slot index.
    /// `points` is [P, C]; `slot[p]` in 0..slots. Empty slots are zero.
    pub fn scatter_max(points: &Tensor, slot: &[usize], slots: usize) -> Result<Tensor> {
        let (p, c) = match points.shape() {
            [p, c] => (*p, *c),
            _ => {
                return Err(NumericsError::Dimension("scatter_max points must be [P, C]".into()))
            }
        };
        if slot.len() != p {
            return Err(NumericsError::Dimension("scatter_max slot index length".into()));
        }
        if let Some(&bad) = slot.iter().find(|&&s| s >= slots) {
            return Err(NumericsError::Dimension(format!("slot {bad} out of {slots}")));
        }
        let x = points.data();
        let mut out = vec![0.0; slots * c];
        let mut argmax = vec![usize::MAX; slots * c];
        for pi in 0..p {
            let s = slot[pi];
            for ch in 0..c {
                let v = x[pi * c + ch];
                let o = s * c + ch;
                if argmax[o] == usize::MAX || v > out[o] {
                    out[o] = v;
                    argmax[o] = pi;
                }
            }
        }
        Tensor::result_of(
            Op::ScatterMax { points: points.clone(), argmax },
            vec![slots, c],
            out,
        )
    }

    /// Nearest-neighbor upsample of a [A, B, C] map by integer factors.
    pub fn upsample_nearest(&self, fy: usize, fx: usize) -> Result<Tensor> {
        let (a, b, c) = expect_rank3(self, "upsample input")?;
        if fy < 1 || fx < 1 {
            return Err(NumericsError::Contract("upsample factors must be >= 1".into()));
        }
        let (ho, wo) = (a * fy, b * fx);
        let x = self.data();
        let mut out = vec![0.0; ho * wo * c];
        for i in 0..ho {
            for j in 0..wo {
                let src = ((i / fy) * b + j / fx) * c;
                out[(i * wo + j) * c..(i * wo + j) * c + c]
                    .copy_from_slice(&x[src..src + c]);
            }
        }
        Tensor::result_of(
            Op::UpsampleNearest { input: self.clone(), fy, fx },
            vec![ho, wo, c],
            out,
        )
    }

    /// Mean over each non-overlapping (H/r x W/r) patch of a [H, W, C] map,
    /// producing [r, r, C].
    pub fn patch_mean(&self, r: usize) -> Result<Tensor> {
        let (h, w, c) = expect_rank3(self, "patch_mean input")?;
        if r < 1 || h % r != 0 || w % r != 0 {
            return Err(NumericsError::Dimension(format!(
                "patch_mean: {h}x{w} not divisible by r={r}"
            )));
        }
        let (py, px) = (h / r, w / r);
        let x = self.data();
        let mut out = vec![0.0; r * r * c];
        for pi in 0..r {
            for pj in 0..r {
                for ii in 0..py {
                    for jj in 0..px {
                        let src = ((pi * py + ii) * w + pj * px + jj) * c;
                        for ch in 0..c {
                            out[(pi * r + pj) * c + ch] += x[src + ch];
                        }
                    }
                }
            }
        }
        let inv = 1.0 / (py * px) as f64;
        for v in &mut out {
            *v *= inv;
        }
        Tensor::result_of(Op::PatchMean { input: self.clone(), r }, vec![r, r, c], out)
    }

    /// out[q, c] = sum_k weights[q, k] * values[q*K + k, c].
    pub fn attn_combine(values: &Tensor, weights: &Tensor) -> Result<Tensor> {
        let (q, k) = match weights.shape() {
            [q, k] => (*q, *k),
            _ => return Err(NumericsError::Dimension("attn weights must be [Q, K]".into())),
        };
        let (rows, c) = match values.shape() {
            [rows, c] => (*rows, *c),
            _ => return Err(NumericsError::Dimension("attn values must be [Q*K, C]".into())),
        };
        if rows != q * k {
            return Err(NumericsError::Dimension(format!(
                "attn values rows {rows} != Q*K {}",
                q * k
            )));
        }
        let v = values.data();
        let w = weights.data();
        let mut out = vec![0.0; q * c];
        for qi in 0..q {
            for ki in 0..k {
                let wgt = w[qi * k + ki];
                let voff = (qi * k + ki) * c;
                for ch in 0..c {
                    out[qi * c + ch] += wgt * v[voff + ch];
                }
            }
        }
        Tensor::result_of(
            Op::AttnCombine { values: values.clone(), weights: weights.clone() },
            vec![q, c],
            out,
        )
    }

    /// Penalty-reduced focal loss against a (possibly soft) target in [0, 1].
    /// Positives are cells with target == 1; sum is normalized by their count.
    pub fn focal_loss(&self, target: &Tensor, alpha: f64, beta: f64) -> Result<Tensor> {
        if self.numel() != target.numel() {
            return Err(NumericsError::Dimension("focal target shape".into()));
        }
        let p = self.data();
        let t = target.data();
        let npos = t.iter().filter(|&&v| v == 1.0).count().max(1) as f64;
        let mut total = 0.0;
        for i in 0..p.len() {
            let pi = p[i].clamp(1e-12, 1.0 - 1e-12);
            if t[i] == 1.0 {
                total -= (1.0 - pi).powf(alpha) * pi.ln();
            } else {
                total -= (1.0 - t[i]).powf(beta) * pi.powf(alpha) * (1.0 - pi).ln();
            }
        }
        Tensor::result_of(
            Op::FocalLoss {
                pred: self.clone(),
                target: t.to_vec(),
                alpha,
                beta,
            },
            vec![],
            vec![total / npos],
        )
    }

    /// Mean absolute error over cells selected by `mask`, channels summed.
    /// `mask` has one entry per row of the last axis.
    pub fn l1_masked(&self, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(NumericsError::Dimension("l1 target shape".into()));
        }
        let last = *self.shape().last().unwrap_or(&1);
        let rows = self.numel() / last;
        if mask.numel() != rows {
            return Err(NumericsError::Dimension(format!(
                "l1 mask has {} entries, expected {rows}",
                mask.numel()
            )));
        }
        let p = self.data();
        let t = target.data();
        let m = mask.data();
        let count = m.iter().filter(|&&v| v != 0.0).count().max(1) as f64;
        let mut total = 0.0;
        for r in 0..rows {
            if m[r] == 0.0 {
                continue;
            }
            for ch in 0..last {
                total += (p[r * last + ch] - t[r * last + ch]).abs();
            }
        }
        Tensor::result_of(
            Op::L1Masked {
                pred: self.clone(),
                target: t.to_vec(),
                mask: m.to_vec(),
            },
            vec![],
            vec![total / count],
        )
    }

    // ---- reverse pass ----

    /// Populate gradients of every requires_grad tensor reachable from this
    /// scalar. Gradients accumulate additively; zero them between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative post-order over the graph.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            let parents: Vec<Tensor> = node
                .inner
                .op
                .as_ref()
                .map(|op| op_parents(op).into_iter().cloned().collect())
                .unwrap_or_default();
            stack.push((node, true));
            for p in parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p, false));
                }
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else { continue };
            if node.requires_grad() {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, gv) in acc.iter_mut().zip(&g) {
                            *a += gv;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(op) = node.inner.op.as_ref() {
                backprop(op, node, &g, &mut grads);
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::Dimension(format!(
            "{what}: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn expect_rank3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(NumericsError::Dimension(format!("{what} must be rank 3, got {s:?}"))),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn op_parents(op: &Op) -> Vec<&Tensor> {
    match op {
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
        Op::Transpose2(a) => vec![a],
        Op::Scale(a, _) | Op::Relu(a) | Op::Sigmoid(a) | Op::Reshape(a) | Op::SumAll(a) => vec![a],
        Op::Softmax { input, .. }
        | Op::SliceLast { input, .. }
        | Op::Row { input, .. }
        | Op::UpsampleNearest { input, .. }
        | Op::PatchMean { input, .. } => vec![input],
        Op::Linear { input, weight, bias } => vec![input, weight, bias],
        Op::Conv2d { input, weight, bias, .. } => vec![input, weight, bias],
        Op::BilinearSample { grid, locs } => vec![grid, locs],
        Op::ConcatLast(parts) => parts.iter().collect(),
        Op::ScatterMax { points, .. } => vec![points],
        Op::AttnCombine { values, weights } => vec![values, weights],
        Op::FocalLoss { pred, .. } | Op::L1Masked { pred, .. } => vec![pred],
    }
}

fn accumulate(grads: &mut HashMap<u64, Vec<f64>>, t: &Tensor, delta: Vec<f64>) {
    if !t.requires_grad() {
        return;
    }
    match grads.entry(t.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (a, d) in e.get_mut().iter_mut().zip(&delta) {
                *a += d;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(delta);
        }
    }
}

#[allow(clippy::too_many_lines)]
fn backprop(op: &Op, out: &Tensor, g: &[f64], grads: &mut HashMap<u64, Vec<f64>>) {
    match op {
        Op::Add(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, a, g.to_vec());
            accumulate(grads, b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            accumulate(grads, a, g.iter().zip(b.data()).map(|(gv, bv)| gv * bv).collect());
            accumulate(grads, b, g.iter().zip(a.data()).map(|(gv, av)| gv * av).collect());
        }
        Op::Scale(a, c) => {
            accumulate(grads, a, g.iter().map(|v| v * c).collect());
        }
        Op::Relu(a) => {
            accumulate(
                grads,
                a,
                g.iter().zip(a.data()).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect(),
            );
        }
        Op::Sigmoid(a) => {
            accumulate(
                grads,
                a,
                g.iter().zip(out.data()).map(|(gv, &y)| gv * y * (1.0 - y)).collect(),
            );
        }
        Op::Softmax { input, axis } => {
            let (outer, len, inner) = split_axis(input.shape(), *axis);
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0;
                    for k in 0..len {
                        dot += g[base + k * inner] * y[base + k * inner];
                    }
                    for k in 0..len {
                        let idx = base + k * inner;
                        dx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            accumulate(grads, input, dx);
        }
        Op::Linear { input, weight, bias } => {
            let cin = *input.shape().last().unwrap();
            let cout = weight.shape()[1];
            let rows = input.numel() / cin;
            let x = input.data();
            let w = weight.data();
            let mut dx = vec![0.0; input.numel()];
            let mut dw = vec![0.0; weight.numel()];
            let mut db = vec![0.0; cout];
            for r in 0..rows {
                for j in 0..cout {
                    let gv = g[r * cout + j];
                    db[j] += gv;
                    for i in 0..cin {
                        dx[r * cin + i] += gv * w[i * cout + j];
                        dw[i * cout + j] += gv * x[r * cin + i];
                    }
                }
            }
            accumulate(grads, input, dx);
            accumulate(grads, weight, dw);
            accumulate(grads, bias, db);
        }
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let ad = a.data();
            let bd = b.data();
            let mut da = vec![0.0; m * k];
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for j in 0..n {
                    let gv = g[i * n + j];
                    for kk in 0..k {
                        da[i * k + kk] += gv * bd[kk * n + j];
                        db[kk * n + j] += gv * ad[i * k + kk];
                    }
                }
            }
            accumulate(grads, a, da);
            accumulate(grads, b, db);
        }
        Op::Transpose2(a) => {
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] = g[j * m + i];
                }
            }
            accumulate(grads, a, da);
        }
        Op::Conv2d { input, weight, bias, stride, padding } => {
            let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let k = weight.shape()[0];
            let cout = weight.shape()[3];
            let (ho, wo) = (out.shape()[0], out.shape()[1]);
            let x = input.data();
            let wd = weight.data();
            let mut dx = vec![0.0; input.numel()];
            let mut dw = vec![0.0; weight.numel()];
            let mut db = vec![0.0; cout];
            for oi in 0..ho {
                for oj in 0..wo {
                    for co in 0..cout {
                        let gv = g[(oi * wo + oj) * cout + co];
                        db[co] += gv;
                        for ki in 0..k {
                            let ii = (oi * stride + ki) as isize - *padding as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let jj = (oj * stride + kj) as isize - *padding as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let xoff = (ii as usize * w + jj as usize) * cin;
                                let woff = ((ki * k + kj) * cin) * cout;
                                for ci in 0..cin {
                                    dx[xoff + ci] += gv * wd[woff + ci * cout + co];
                                    dw[woff + ci * cout + co] += gv * x[xoff + ci];
                                }
                            }
                        }
                    }
                }
            }
            accumulate(grads, input, dx);
            accumulate(grads, weight, dw);
            accumulate(grads, bias, db);
        }
        Op::BilinearSample { grid, locs } => {
            let (a, b, c) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
            let m = locs.shape()[0];
            let gd = grid.data();
            let l = locs.data();
            let mut dgrid = vec![0.0; grid.numel()];
            let mut dloc = vec![0.0; locs.numel()];
            for q in 0..m {
                let u = l[q * 2];
                let v = l[q * 2 + 1];
                let u0 = u.floor();
                let v0 = v.floor();
                let fu = u - u0;
                let fv = v - v0;
                let corner = |du: i64, dv: i64| -> Option<usize> {
                    // clamp before integer math, matching the forward pass
                    let ui = u0.clamp(-2.0, a as f64 + 2.0) as i64 + du;
                    let vi = v0.clamp(-2.0, b as f64 + 2.0) as i64 + dv;
                    if ui >= 0 && (ui as usize) < a && vi >= 0 && (vi as usize) < b {
                        Some((ui as usize * b + vi as usize) * c)
                    } else {
                        None
                    }
                };
                let c00 = corner(0, 0);
                let c10 = corner(1, 0);
                let c01 = corner(0, 1);
                let c11 = corner(1, 1);
                let read = |o: Option<usize>, ch: usize| o.map_or(0.0, |off| gd[off + ch]);
                for ch in 0..c {
                    let gv = g[q * c + ch];
                    if gv == 0.0 {
                        continue;
                    }
                    let (a00, a10, a01, a11) =
                        (read(c00, ch), read(c10, ch), read(c01, ch), read(c11, ch));
                    // d(out)/du and d(out)/dv of the four-corner form
                    dloc[q * 2] += gv * ((1.0 - fv) * (a10 - a00) + fv * (a11 - a01));
                    dloc[q * 2 + 1] += gv * ((1.0 - fu) * (a01 - a00) + fu * (a11 - a10));
                    if let Some(o) = c00 {
                        dgrid[o + ch] += gv * (1.0 - fu) * (1.0 - fv);
                    }
                    if let Some(o) = c10 {
                        dgrid[o + ch] += gv * fu * (1.0 - fv);
                    }
                    if let Some(o) = c01 {
                        dgrid[o + ch] += gv * (1.0 - fu) * fv;
                    }
                    if let Some(o) = c11 {
                        dgrid[o + ch] += gv * fu * fv;
                    }
                }
            }
            accumulate(grads, grid, dgrid);
            accumulate(grads, locs, dloc);
        }
        Op::ConcatLast(parts) => {
            let total = *out.shape().last().unwrap();
            let rows = out.numel() / total;
            let mut off = 0;
            for p in parts {
                let wd = *p.shape().last().unwrap();
                let mut dp = vec![0.0; p.numel()];
                for r in 0..rows {
                    dp[r * wd..(r + 1) * wd]
                        .copy_from_slice(&g[r * total + off..r * total + off + wd]);
                }
                accumulate(grads, p, dp);
                off += wd;
            }
        }
        Op::Reshape(a) => {
            accumulate(grads, a, g.to_vec());
        }
        Op::SliceLast { input, start, len } => {
            let last = *input.shape().last().unwrap();
            let rows = input.numel() / last;
            let mut dx = vec![0.0; input.numel()];
            for r in 0..rows {
                dx[r * last + start..r * last + start + len]
                    .copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            accumulate(grads, input, dx);
        }
        Op::Row { input, index } => {
            let rest = out.numel();
            let mut dx = vec![0.0; input.numel()];
            dx[index * rest..(index + 1) * rest].copy_from_slice(g);
            accumulate(grads, input, dx);
        }
        Op::SumAll(a) => {
            accumulate(grads, a, vec![g[0]; a.numel()]);
        }
        Op::ScatterMax { points, argmax } => {
            let c = points.shape()[1];
            let mut dp = vec![0.0; points.numel()];
            for (o, &pi) in argmax.iter().enumerate() {
                if pi != usize::MAX {
                    dp[pi * c + o % c] += g[o];
                }
            }
            accumulate(grads, points, dp);
        }
        Op::UpsampleNearest { input, fy, fx } => {
            let (a, b, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let wo = b * fx;
            let mut dx = vec![0.0; input.numel()];
            for i in 0..a * fy {
                for j in 0..wo {
                    let src = ((i / fy) * b + j / fx) * c;
                    for ch in 0..c {
                        dx[src + ch] += g[(i * wo + j) * c + ch];
                    }
                }
            }
            accumulate(grads, input, dx);
        }
        Op::PatchMean { input, r } => {
            let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (py, px) = (h / r, w / r);
            let inv = 1.0 / (py * px) as f64;
            let mut dx = vec![0.0; input.numel()];
            for pi in 0..*r {
                for pj in 0..*r {
                    for ii in 0..py {
                        for jj in 0..px {
                            let dst = ((pi * py + ii) * w + pj * px + jj) * c;
                            for ch in 0..c {
                                dx[dst + ch] += g[(pi * r + pj) * c + ch] * inv;
                            }
                        }
                    }
                }
            }
            accumulate(grads, input, dx);
        }
        Op::AttnCombine { values, weights } => {
            let (q, k) = (weights.shape()[0], weights.shape()[1]);
            let c = values.shape()[1];
            let v = values.data();
            let w = weights.data();
            let mut dv = vec![0.0; values.numel()];
            let mut dw = vec![0.0; weights.numel()];
            for qi in 0..q {
                for ki in 0..k {
                    let voff = (qi * k + ki) * c;
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let gv = g[qi * c + ch];
                        dv[voff + ch] += w[qi * k + ki] * gv;
                        acc += v[voff + ch] * gv;
                    }
                    dw[qi * k + ki] += acc;
                }
            }
            accumulate(grads, values, dv);
            accumulate(grads, weights, dw);
        }
        Op::FocalLoss { pred, target, alpha, beta } => {
            let p = pred.data();
            let npos = target.iter().filter(|&&v| v == 1.0).count().max(1) as f64;
            let scale = g[0] / npos;
            let mut dp = vec![0.0; p.len()];
            for i in 0..p.len() {
                let pi = p[i].clamp(1e-12, 1.0 - 1e-12);
                let t = target[i];
                let d = if t == 1.0 {
                    // d/dp [ -(1-p)^a ln p ]
                    alpha * (1.0 - pi).powf(alpha - 1.0) * pi.ln() - (1.0 - pi).powf(*alpha) / pi
                } else {
                    // d/dp [ -(1-t)^b p^a ln(1-p) ]
                    (1.0 - t).powf(*beta)
                        * (pi.powf(*alpha) / (1.0 - pi) - alpha * pi.powf(alpha - 1.0) * (1.0 - pi).ln())
                };
                dp[i] = scale * d;
            }
            accumulate(grads, pred, dp);
        }
        Op::L1Masked { pred, target, mask } => {
            let last = *pred.shape().last().unwrap_or(&1);
            let rows = pred.numel() / last;
            let count = mask.iter().filter(|&&v| v != 0.0).count().max(1) as f64;
            let scale = g[0] / count;
            let p = pred.data();
            let mut dp = vec![0.0; p.len()];
            for r in 0..rows {
                if mask[r] == 0.0 {
                    continue;
                }
                for ch in 0..last {
                    let idx = r * last + ch;
                    let diff = p[idx] - target[idx];
                    dp[idx] = scale * if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 };
                }
            }
            accumulate(grads, pred, dp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let input = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        // 1x1 kernel, identity over channels
        let w = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::zeros(&[2]);
        let out = input.conv2d(&w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_zero_input_gives_bias() {
        let input = Tensor::zeros(&[4, 4, 3]);
        let w = t(&[3, 3, 3, 2], &vec![0.7; 54]);
        let b = t(&[2], &[1.5, -2.0]);
        let out = input.conv2d(&w, &b, 1, 1).unwrap();
        for px in out.data().chunks(2) {
            assert_eq!(px, &[1.5, -2.0]);
        }
    }

    #[test]
    fn conv2d_matches_naive_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (h, w, cin, cout, k, stride) = (5, 5, 2, 3, 3, 2);
        let input: Vec<f64> = (0..h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weight: Vec<f64> = (0..k * k * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = t(&[h, w, cin], &input)
            .conv2d(&t(&[k, k, cin, cout], &weight), &t(&[cout], &bias), stride, 0)
            .unwrap();
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        assert_eq!(out.shape(), &[ho, wo, cout]);
        // independent nested-loop cross-correlation
        for oi in 0..ho {
            for oj in 0..wo {
                for co in 0..cout {
                    let mut acc = bias[co];
                    for ki in 0..k {
                        for kj in 0..k {
                            for ci in 0..cin {
                                let iv = input[((oi * stride + ki) * w + oj * stride + kj) * cin + ci];
                                let wv = weight[((ki * k + kj) * cin + ci) * cout + co];
                                acc += iv * wv;
                            }
                        }
                    }
                    let got = out.data()[(oi * wo + oj) * cout + co];
                    assert!((got - acc).abs() < 1e-12, "cell ({oi},{oj},{co})");
                }
            }
        }
    }

    #[test]
    fn linear_identity_and_direct() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2], &[3.0, 4.0]);
        let out = x.linear(&w, &b).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
        let out2 = x.linear(&w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out2.data(), x.data());
    }

    #[test]
    fn linear_matches_naive_matmul() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = t(&[4, 3], &x).linear(&t(&[3, 5], &w), &t(&[5], &b)).unwrap();
        for r in 0..4 {
            for j in 0..5 {
                let mut acc = b[j];
                for i in 0..3 {
                    acc += x[r * 3 + i] * w[i * 5 + j];
                }
                assert!((out.data()[r * 5 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_lattice_and_center() {
        let grid = t(&[2, 2, 1], &[0.0, 1.0, 2.0, 3.0]);
        let locs = t(&[5, 2], &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.5, 0.5]);
        let out = grid.bilinear_sample(&locs).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 2.0, 3.0, 1.5]);
    }

    #[test]
    fn bilinear_matches_four_corner_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let grid: Vec<f64> = (0..6 * 6 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let locs: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..6.0)).collect();
        let gt = t(&[6, 6, 3], &grid);
        let out = gt.bilinear_sample(&t(&[20, 2], &locs)).unwrap();
        let read = |u: i64, v: i64, c: usize| -> f64 {
            if u < 0 || u >= 6 || v < 0 || v >= 6 {
                0.0
            } else {
                grid[(u as usize * 6 + v as usize) * 3 + c]
            }
        };
        for q in 0..20 {
            let (u, v) = (locs[q * 2], locs[q * 2 + 1]);
            let (u0, v0) = (u.floor() as i64, v.floor() as i64);
            let (fu, fv) = (u - u0 as f64, v - v0 as f64);
            for c in 0..3 {
                let want = (1.0 - fu) * (1.0 - fv) * read(u0, v0, c)
                    + fu * (1.0 - fv) * read(u0 + 1, v0, c)
                    + (1.0 - fu) * fv * read(u0, v0 + 1, c)
                    + fu * fv * read(u0 + 1, v0 + 1, c);
                assert!((out.data()[q * 3 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_extreme_locations_read_zero() {
        let grid = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let locs = t(&[4, 2], &[1e18, 0.0, -1e18, 0.5, 0.5, -1e300, f64::MAX, f64::MAX]);
        let out = grid.bilinear_sample(&locs).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        // gradients through the same path must also stay finite
        let p = Tensor::parameter(&[4, 2], vec![1e18, 0.0, -1e18, 0.5, 0.5, -1e300, 1e300, 1e300])
            .unwrap();
        let s = grid.bilinear_sample(&p).unwrap().sum_all().unwrap();
        s.backward().unwrap();
        assert!(p.grad().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let out = t(&[2], &[0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
        let out = t(&[2], &[1000.0, 1000.0]).softmax(0).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_high_precision() {
        let out = t(&[3], &[1.0, 2.0, 3.0]).softmax(0).unwrap();
        // e^x / sum e^x evaluated directly
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (got, want) in out.data().iter().zip(e.iter().map(|v| v / s)) {
            assert!((got - want).abs() < 1e-14);
        }
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_sum_and_quadratic() {
        let x = Tensor::parameter(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = x.sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let y = Tensor::parameter(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = y.mul(&y).unwrap().sum_all().unwrap().scale(0.5).unwrap();
        loss.backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let x = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.add(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn scatter_max_of_two_points() {
        let pts = t(&[2, 3], &[1.0, -5.0, 0.2, -2.0, 4.0, 0.1]);
        let out = Tensor::scatter_max(&pts, &[0, 0], 2).unwrap();
        assert_eq!(&out.data()[..3], &[1.0, 4.0, 0.2]);
        assert_eq!(&out.data()[3..], &[0.0, 0.0, 0.0]); // empty slot
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(Tensor::from_vec(&[1], vec![f64::NAN]).is_err());
    }
}
