//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; calling
//! [`Tape::backward`] on a 1x1 loss node walks the list in reverse and
//! accumulates gradients for every node that transitively depends on a
//! parameter leaf. Constants (teacher weights, frozen networks, masks) are
//! marked `needs_grad = false`, so whole frozen subgraphs are skipped.
//!
//! Shapes are validated with assertions: loss modules validate user-facing
//! inputs with `Result` before anything reaches the tape, so a shape mismatch
//! here is a programming error.

use crate::mat::Mat;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Channel/height/width layout of image rows used by the image ops. Each
/// matrix row holds one image as channel-major data: index `c*(h*w) + y*w + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImgShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ImgShape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Convolution geometry; output spatial size follows from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// a [RxK] * b [KxC]
    MatMul(usize, usize),
    /// a [RxK] * b^T where b is [CxK]
    MatMulNT(usize, usize),
    /// a [RxC] + row vector b [1xC] broadcast over rows
    AddRowVec(usize, usize),
    Tanh(usize),
    Relu(usize),
    Abs(usize),
    Softplus(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowNormalize(usize),
    ConcatCols(usize, usize),
    StopGrad,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        shape: ConvShape,
    },
    Upsample2x {
        input: usize,
        shape: ImgShape,
    },
    Shift {
        input: usize,
        shape: ImgShape,
        dx: i64,
        dy: i64,
    },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` needed one.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert!(
            m.rows() == 1 && m.cols() == 1,
            "scalar: node is {}x{}",
            m.rows(),
            m.cols()
        );
        m.get(0, 0)
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Leaf whose gradient is never requested (data, frozen weights, masks).
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (trainable parameters, probe inputs).
    pub fn param(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .add(self.value(b))
            .expect("add: shape mismatch");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Add(a.0, b.0), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .sub(self.value(b))
            .expect("sub: shape mismatch");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Sub(a.0, b.0), ng)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .zip(self.value(b), |x, y| x * y)
            .expect("mul_elem: shape mismatch");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::MulElem(a.0, b.0), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let ng = self.needs(a.0);
        self.push(v, Op::Scale(a.0, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.needs(a.0);
        self.push(v, Op::AddScalar(a.0), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .matmul(self.value(b))
            .expect("matmul: shape mismatch");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::MatMul(a.0, b.0), ng)
    }

    /// `a * b^T`; the natural op for feature-against-feature products.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .matmul_nt(self.value(b))
            .expect("matmul_nt: shape mismatch");
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::MatMulNT(a.0, b.0), ng)
    }

    /// Adds a 1xC bias row to every row of a RxC matrix.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert!(
            bm.rows() == 1 && bm.cols() == am.cols(),
            "add_row_vec: {}x{} + {}x{}",
            am.rows(),
            am.cols(),
            bm.rows(),
            bm.cols()
        );
        let mut v = am.clone();
        for r in 0..v.rows() {
            for c in 0..v.cols() {
                let inc = bm.get(0, c);
                v.set(r, c, v.get(r, c) + inc);
            }
        }
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::AddRowVec(a.0, b.0), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.needs(a.0);
        self.push(v, Op::Tanh(a.0), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a.0);
        self.push(v, Op::Relu(a.0), ng)
    }

    /// Element-wise absolute value with subgradient sign(0) = 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let ng = self.needs(a.0);
        self.push(v, Op::Abs(a.0), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.needs(a.0);
        self.push(v, Op::Softplus(a.0), ng)
    }

    /// Natural log; the caller guarantees positivity (normally via `clamp`).
    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.needs(a.0);
        self.push(v, Op::Ln(a.0), ng)
    }

    /// Clamp into [lo, hi]; gradient passes only strictly inside the bounds.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo < hi, "clamp: empty interval");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a.0);
        self.push(v, Op::Clamp(a.0, lo, hi), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a.0);
        self.push(v, Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        assert!(!self.value(a).is_empty(), "mean: empty matrix");
        let v = Mat::filled(1, 1, self.value(a).mean());
        let ng = self.needs(a.0);
        self.push(v, Op::Mean(a.0), ng)
    }

    /// Scales each row to unit L2 norm. Rows with norm at or below 1e-12 fall
    /// back to dividing by the guard itself, keeping forward and backward
    /// finite instead of erroring out mid-training.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = m.clone();
        for r in 0..m.rows() {
            let n = guarded_norm(m.row(r));
            for x in v.row_mut(r) {
                *x /= n;
            }
        }
        let ng = self.needs(a.0);
        self.push(v, Op::RowNormalize(a.0), ng)
    }

    /// Horizontally concatenates two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.rows(), bm.rows(), "concat_cols: row count mismatch");
        let (r, ca, cb) = (am.rows(), am.cols(), bm.cols());
        let mut v = Mat::zeros(r, ca + cb);
        for i in 0..r {
            v.row_mut(i)[..ca].copy_from_slice(am.row(i));
            v.row_mut(i)[ca..].copy_from_slice(bm.row(i));
        }
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::ConcatCols(a.0, b.0), ng)
    }

    /// Copies the value and severs the gradient path.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::StopGrad, false)
    }

    /// Direct 2-D convolution over channel-major image rows.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, shape: ConvShape) -> Var {
        let im = self.value(input);
        let wm = self.value(weight);
        let bm = self.value(bias);
        assert_eq!(
            im.cols(),
            shape.cin * shape.h * shape.w,
            "conv2d: input layout mismatch"
        );
        assert_eq!(wm.rows(), shape.cout, "conv2d: weight rows");
        assert_eq!(
            wm.cols(),
            shape.cin * shape.kh * shape.kw,
            "conv2d: weight cols"
        );
        assert!(
            bm.rows() == 1 && bm.cols() == shape.cout,
            "conv2d: bias shape"
        );
        let v = conv2d_forward(im, wm, bm, &shape);
        let ng = self.needs(input.0) || self.needs(weight.0) || self.needs(bias.0);
        self.push(
            v,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                shape,
            },
            ng,
        )
    }

    /// Nearest-neighbor 2x spatial upsample.
    pub fn upsample2x(&mut self, input: Var, shape: ImgShape) -> Var {
        let im = self.value(input);
        assert_eq!(im.cols(), shape.len(), "upsample2x: layout mismatch");
        let (h2, w2) = (shape.h * 2, shape.w * 2);
        let mut v = Mat::zeros(im.rows(), shape.c * h2 * w2);
        for b in 0..im.rows() {
            let src = im.row(b);
            let dst = v.row_mut(b);
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        let s = src[c * shape.h * shape.w + y * shape.w + x];
                        let base = c * h2 * w2;
                        dst[base + (2 * y) * w2 + 2 * x] = s;
                        dst[base + (2 * y) * w2 + 2 * x + 1] = s;
                        dst[base + (2 * y + 1) * w2 + 2 * x] = s;
                        dst[base + (2 * y + 1) * w2 + 2 * x + 1] = s;
                    }
                }
            }
        }
        let ng = self.needs(input.0);
        self.push(
            v,
            Op::Upsample2x {
                input: input.0,
                shape,
            },
            ng,
        )
    }

    /// Integer translation with zero fill; linear in the pixels, so its
    /// gradient is the reverse shift.
    pub fn shift(&mut self, input: Var, shape: ImgShape, dx: i64, dy: i64) -> Var {
        let im = self.value(input);
        assert_eq!(im.cols(), shape.len(), "shift: layout mismatch");
        let mut v = Mat::zeros(im.rows(), im.cols());
        let (h, w) = (shape.h as i64, shape.w as i64);
        for b in 0..im.rows() {
            let src = im.row(b);
            let dst = v.row_mut(b);
            for c in 0..shape.c {
                for y in 0..h {
                    let sy = y - dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x - dx;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        dst[c * (h * w) as usize + (y * w + x) as usize] =
                            src[c * (h * w) as usize + (sy * w + sx) as usize];
                    }
                }
            }
        }
        let ng = self.needs(input.0);
        self.push(
            v,
            Op::Shift {
                input: input.0,
                shape,
                dx,
                dy,
            },
            ng,
        )
    }

    /// Reverse pass from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lm = self.value(loss);
        assert!(
            lm.rows() == 1 && lm.cols() == 1,
            "backward: loss must be 1x1"
        );
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], target: usize, delta: Mat) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                *existing = existing
                    .add(&delta)
                    .expect("gradient accumulation shape mismatch");
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::MulElem(a, b) => {
                let ga = g.zip(&self.nodes[*b].value, |x, y| x * y).unwrap();
                let gb = g.zip(&self.nodes[*a].value, |x, y| x * y).unwrap();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                // y = a*b: da = g*b^T, db = a^T*g
                let ga = g.matmul_nt(&self.nodes[*b].value).unwrap();
                let gb = self.nodes[*a].value.matmul_tn(g).unwrap();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::MatMulNT(a, b) => {
                // y = a*b^T: da = g*b, db = g^T*a
                let ga = g.matmul(&self.nodes[*b].value).unwrap();
                let gb = g.matmul_tn(&self.nodes[*a].value).unwrap();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRowVec(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut gb = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        gb.set(0, c, gb.get(0, c) + g.get(r, c));
                    }
                }
                self.accumulate(grads, *b, gb);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let ga = g.zip(y, |gi, yi| gi * (1.0 - yi * yi)).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                let ga = g.zip(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let x = &self.nodes[*a].value;
                let ga = g
                    .zip(x, |gi, xi| {
                        if xi > 0.0 {
                            gi
                        } else if xi < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                let ga = g.zip(x, |gi, xi| gi * sigmoid(xi)).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Ln(a) => {
                let x = &self.nodes[*a].value;
                let ga = g.zip(x, |gi, xi| gi / xi).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[*a].value;
                let ga = g
                    .zip(x, |gi, xi| if xi > *lo && xi < *hi { gi } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let s = g.get(0, 0);
                let x = &self.nodes[*a].value;
                self.accumulate(grads, *a, Mat::filled(x.rows(), x.cols(), s));
            }
            Op::Mean(a) => {
                let x = &self.nodes[*a].value;
                let s = g.get(0, 0) / x.len() as f64;
                self.accumulate(grads, *a, Mat::filled(x.rows(), x.cols(), s));
            }
            Op::RowNormalize(a) => {
                // y = x/n per row: dx = (g - y*(g.y)) / n, with n the guarded
                // norm. In the guarded branch y = x/eps is linear: dx = g/eps.
                let x = &self.nodes[*a].value;
                let y = &self.nodes[i].value;
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = guarded_norm(x.row(r));
                    let raw: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if raw <= crate::numerics::EPS_NORM {
                        for (o, gi) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o = gi / n;
                        }
                    } else {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = (gi - yi * dot) / n;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let cb = self.nodes[*b].value.cols();
                let mut ga = Mat::zeros(g.rows(), ca);
                let mut gb = Mat::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::StopGrad => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                shape,
            } => {
                let (gi, gw, gb) = conv2d_backward(
                    g,
                    &self.nodes[*input].value,
                    &self.nodes[*weight].value,
                    shape,
                );
                self.accumulate(grads, *input, gi);
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::Upsample2x { input, shape } => {
                let (h2, w2) = (shape.h * 2, shape.w * 2);
                let mut gi = Mat::zeros(g.rows(), shape.len());
                for b in 0..g.rows() {
                    let src = g.row(b);
                    let dst = gi.row_mut(b);
                    for c in 0..shape.c {
                        for y in 0..shape.h {
                            for x in 0..shape.w {
                                let base = c * h2 * w2;
                                let s = src[base + (2 * y) * w2 + 2 * x]
                                    + src[base + (2 * y) * w2 + 2 * x + 1]
                                    + src[base + (2 * y + 1) * w2 + 2 * x]
                                    + src[base + (2 * y + 1) * w2 + 2 * x + 1];
                                dst[c * shape.h * shape.w + y * shape.w + x] = s;
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Shift {
                input,
                shape,
                dx,
                dy,
            } => {
                let mut gi = Mat::zeros(g.rows(), shape.len());
                let (h, w) = (shape.h as i64, shape.w as i64);
                for b in 0..g.rows() {
                    let src = g.row(b);
                    let dst = gi.row_mut(b);
                    for c in 0..shape.c {
                        for y in 0..h {
                            let ty = y + dy;
                            if ty < 0 || ty >= h {
                                continue;
                            }
                            for x in 0..w {
                                let tx = x + dx;
                                if tx < 0 || tx >= w {
                                    continue;
                                }
                                dst[c * (h * w) as usize + (y * w + x) as usize] =
                                    src[c * (h * w) as usize + (ty * w + tx) as usize];
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, gi);
            }
        }
    }
}

fn guarded_norm(row: &[f64]) -> f64 {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    n.max(crate::numerics::EPS_NORM)
}

/// Overflow-safe softplus: ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Overflow-safe logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv2d_forward(input: &Mat, weight: &Mat, bias: &Mat, s: &ConvShape) -> Mat {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut out = Mat::zeros(input.rows(), s.cout * oh * ow);
    for b in 0..input.rows() {
        let src = input.row(b);
        let dst = out.row_mut(b);
        for oc in 0..s.cout {
            let wrow = weight.row(oc);
            let bv = bias.get(0, oc);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv;
                    for ic in 0..s.cin {
                        for ky in 0..s.kh {
                            let iy = (oy * s.stride + ky) as i64 - s.pad as i64;
                            if iy < 0 || iy >= s.h as i64 {
                                continue;
                            }
                            for kx in 0..s.kw {
                                let ix = (ox * s.stride + kx) as i64 - s.pad as i64;
                                if ix < 0 || ix >= s.w as i64 {
                                    continue;
                                }
                                acc += src[ic * s.h * s.w + iy as usize * s.w + ix as usize]
                                    * wrow[ic * s.kh * s.kw + ky * s.kw + kx];
                            }
                        }
                    }
                    dst[oc * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv2d_backward(g: &Mat, input: &Mat, weight: &Mat, s: &ConvShape) -> (Mat, Mat, Mat) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut gi = Mat::zeros(input.rows(), input.cols());
    let mut gw = Mat::zeros(weight.rows(), weight.cols());
    let mut gb = Mat::zeros(1, s.cout);
    for b in 0..input.rows() {
        let src = input.row(b);
        let gout = g.row(b);
        for oc in 0..s.cout {
            let wrow = weight.row(oc);
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = gout[oc * oh * ow + oy * ow + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    gb.set(0, oc, gb.get(0, oc) + gv);
                    for ic in 0..s.cin {
                        for ky in 0..s.kh {
                            let iy = (oy * s.stride + ky) as i64 - s.pad as i64;
                            if iy < 0 || iy >= s.h as i64 {
                                continue;
                            }
                            for kx in 0..s.kw {
                                let ix = (ox * s.stride + kx) as i64 - s.pad as i64;
                                if ix < 0 || ix >= s.w as i64 {
                                    continue;
                                }
                                let ii = ic * s.h * s.w + iy as usize * s.w + ix as usize;
                                let wi = ic * s.kh * s.kw + ky * s.kw + kx;
                                gw.row_mut(oc)[wi] += gv * src[ii];
                                gi.row_mut(b)[ii] += gv * wrow[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}
