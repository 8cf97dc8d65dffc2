//! Primitive operations. Each records its inputs and a local-derivative
//! closure; chained in reverse they reproduce the analytic Jacobian.
//!
//! Binary elementwise ops broadcast numpy-style; the adjoint of broadcasting
//! sums gradients back down to the operand shape. Gradients at kinks
//! (`abs` at 0, `maximum`/`minimum`/`clamp` at the threshold) use the
//! subgradient 0 convention.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Slice, Zip};

use super::tape::{broadcast_shape, reduce_to_shape, AutodiffError, BackwardFn, Node, Tensor};

impl Tensor {
    fn push(
        &self,
        op: &'static str,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Result<Tensor, AutodiffError> {
        let recording = self.tape.is_recording();
        self.tape
            .push_node(Node {
                value: Rc::new(value),
                parents: if recording { parents } else { Vec::new() },
                backward: if recording { backward } else { None },
                param: None,
                needs_grad: false,
            })
            .map_err(|_| AutodiffError::NonFinite(op))
    }

    fn pointwise(&self, op: &'static str, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(f);
        let bw: BackwardFn = {
            let xv = Rc::clone(&xv);
            Box::new(move |g| {
                vec![Zip::from(g)
                    .and(&*xv)
                    .map_collect(|&gi, &xi| gi * df(xi))]
            })
        };
        self.push(op, out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Pointwise op whose derivative is cheaper in terms of the output.
    fn pointwise_from_out(
        &self,
        op: &'static str,
        f: fn(f64) -> f64,
        df_out: fn(f64) -> f64,
    ) -> Tensor {
        let xv = self.value_ref();
        let out = Rc::new(xv.mapv(f));
        let bw: BackwardFn = {
            let out = Rc::clone(&out);
            Box::new(move |g| {
                vec![Zip::from(g)
                    .and(&*out)
                    .map_collect(|&gi, &oi| gi * df_out(oi))]
            })
        };
        let recording = self.tape.is_recording();
        self.tape
            .push_node(Node {
                value: out,
                parents: if recording { vec![self.node] } else { Vec::new() },
                backward: if recording { Some(bw) } else { None },
                param: None,
                needs_grad: false,
            })
            .map_err(|_| AutodiffError::NonFinite(op))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    fn binary_pointwise(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        dfa: fn(f64, f64) -> f64,
        dfb: fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        if !self.same_tape(other) {
            return Err(AutodiffError::TapeMismatch);
        }
        let av = self.value_ref();
        let bv = other.value_ref();
        let target = broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
            AutodiffError::ShapeMismatch {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            }
        })?;
        let a_bc = av.broadcast(IxDyn(&target)).expect("checked");
        let b_bc = bv.broadcast(IxDyn(&target)).expect("checked");
        let out = Zip::from(&a_bc).and(&b_bc).map_collect(|&a, &b| f(a, b));
        let bw: BackwardFn = {
            let av = Rc::clone(&av);
            let bv = Rc::clone(&bv);
            let target = target.clone();
            Box::new(move |g| {
                let a_bc = av.broadcast(IxDyn(&target)).expect("checked");
                let b_bc = bv.broadcast(IxDyn(&target)).expect("checked");
                let da = Zip::from(g)
                    .and(&a_bc)
                    .and(&b_bc)
                    .map_collect(|&gi, &ai, &bi| gi * dfa(ai, bi));
                let db = Zip::from(g)
                    .and(&a_bc)
                    .and(&b_bc)
                    .map_collect(|&gi, &ai, &bi| gi * dfb(ai, bi));
                vec![
                    reduce_to_shape(da, av.shape()),
                    reduce_to_shape(db, bv.shape()),
                ]
            })
        };
        self.push(op, out, vec![self.node, other.node], Some(bw))
    }

    // ── elementwise binary ───────────────────────────────────────────

    pub fn try_add(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_pointwise(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn try_sub(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_pointwise(other, "subtract", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn try_mul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_pointwise(other, "multiply", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn try_div(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        self.binary_pointwise(
            other,
            "divide",
            |a, b| a / b,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )
    }

    // ── elementwise unary ────────────────────────────────────────────

    pub fn neg_t(&self) -> Tensor {
        self.pointwise("negate", |x| -x, |_| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.pointwise_from_out("exp", f64::exp, |o| o)
    }

    pub fn ln(&self) -> Tensor {
        self.pointwise("ln", f64::ln, |x| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.pointwise_from_out("sqrt", f64::sqrt, |o| 0.5 / o)
    }

    pub fn sin(&self) -> Tensor {
        self.pointwise("sin", f64::sin, f64::cos)
    }

    pub fn cos(&self) -> Tensor {
        self.pointwise("cos", f64::cos, |x| -x.sin())
    }

    pub fn abs(&self) -> Tensor {
        self.pointwise(
            "abs",
            f64::abs,
            |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn square(&self) -> Tensor {
        self.pointwise("square", |x| x * x, |x| 2.0 * x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.pointwise_from_out("sigmoid", |x| 1.0 / (1.0 + (-x).exp()), |o| o * (1.0 - o))
    }

    pub fn powf(&self, p: f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(|x| x.powf(p));
        let bw: BackwardFn = {
            let xv = Rc::clone(&xv);
            Box::new(move |g| {
                vec![Zip::from(g)
                    .and(&*xv)
                    .map_collect(|&gi, &xi| gi * p * xi.powf(p - 1.0))]
            })
        };
        self.push("power", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Elementwise max with a constant; subgradient 0 at the kink.
    pub fn maximum(&self, c: f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(|x| x.max(c));
        let bw: BackwardFn = {
            let xv = Rc::clone(&xv);
            Box::new(move |g| {
                vec![Zip::from(g)
                    .and(&*xv)
                    .map_collect(|&gi, &xi| if xi > c { gi } else { 0.0 })]
            })
        };
        self.push("maximum", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn minimum(&self, c: f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(|x| x.min(c));
        let bw: BackwardFn = {
            let xv = Rc::clone(&xv);
            Box::new(move |g| {
                vec![Zip::from(g)
                    .and(&*xv)
                    .map_collect(|&gi, &xi| if xi < c { gi } else { 0.0 })]
            })
        };
        self.push("minimum", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn clamp_t(&self, lo: f64, hi: f64) -> Tensor {
        self.maximum(lo).minimum(hi)
    }

    pub fn relu(&self) -> Tensor {
        self.maximum(0.0)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(|x| x * s);
        let bw: BackwardFn = Box::new(move |g| vec![g.mapv(|gi| gi * s)]);
        self.push("scale", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let xv = self.value_ref();
        let out = xv.mapv(|x| x + c);
        let bw: BackwardFn = Box::new(move |g| vec![g.clone()]);
        self.push("add_scalar", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    // ── matrix products ──────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn try_matmul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        if !self.same_tape(other) {
            return Err(AutodiffError::TapeMismatch);
        }
        let av = self.value_ref();
        let bv = other.value_ref();
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let a2 = av.view().into_dimensionality::<Ix2>().expect("2d");
        let b2 = bv.view().into_dimensionality::<Ix2>().expect("2d");
        let out = a2.dot(&b2).into_dyn();
        let bw: BackwardFn = {
            let av = Rc::clone(&av);
            let bv = Rc::clone(&bv);
            Box::new(move |g| {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("2d");
                let a2 = av.view().into_dimensionality::<Ix2>().expect("2d");
                let b2 = bv.view().into_dimensionality::<Ix2>().expect("2d");
                vec![g2.dot(&b2.t()).into_dyn(), a2.t().dot(&g2).into_dyn()]
            })
        };
        self.push("matmul", out, vec![self.node, other.node], Some(bw))
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.try_matmul(other).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Batched `[b,m,k] x [b,k,n] -> [b,m,n]`.
    pub fn try_bmm(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        if !self.same_tape(other) {
            return Err(AutodiffError::TapeMismatch);
        }
        let av = self.value_ref();
        let bv = other.value_ref();
        let ok = av.ndim() == 3
            && bv.ndim() == 3
            && av.shape()[0] == bv.shape()[0]
            && av.shape()[2] == bv.shape()[1];
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "bmm",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = bmm_nn(&av, &bv);
        let bw: BackwardFn = {
            let av = Rc::clone(&av);
            let bv = Rc::clone(&bv);
            Box::new(move |g| vec![bmm_nt(g, &bv), bmm_tn(&av, g)])
        };
        self.push("bmm", out, vec![self.node, other.node], Some(bw))
    }

    pub fn bmm(&self, other: &Tensor) -> Tensor {
        self.try_bmm(other).unwrap_or_else(|e| panic!("{e}"))
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum(&self) -> Tensor {
        let xv = self.value_ref();
        let total = xv.sum();
        let shape = xv.shape().to_vec();
        let out = ArrayD::from_elem(IxDyn(&[]), total);
        let bw: BackwardFn = Box::new(move |g| {
            let gs = *g.iter().next().expect("scalar");
            vec![ArrayD::from_elem(IxDyn(&shape), gs)]
        });
        self.push("sum", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along one axis, optionally keeping it as a length-1 dim.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let xv = self.value_ref();
        assert!(
            axis < xv.ndim(),
            "sum_axis: axis {axis} out of range for shape {:?}",
            xv.shape()
        );
        let mut out = xv.sum_axis(Axis(axis));
        if keepdim {
            out = out.insert_axis(Axis(axis));
        }
        let in_shape = xv.shape().to_vec();
        let bw: BackwardFn = Box::new(move |g| {
            let gk = if keepdim {
                g.view()
            } else {
                // reinsert the reduced axis so broadcast lines up
                return vec![g
                    .view()
                    .insert_axis(Axis(axis))
                    .broadcast(IxDyn(&in_shape))
                    .expect("broadcastable")
                    .to_owned()];
            };
            vec![gk
                .broadcast(IxDyn(&in_shape))
                .expect("broadcastable")
                .to_owned()]
        });
        self.push("sum_axis", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / n)
    }

    // ── shape manipulation ───────────────────────────────────────────

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let xv = self.value_ref();
        let numel: usize = shape.iter().product();
        assert_eq!(
            xv.len(),
            numel,
            "reshape: cannot view {:?} as {:?}",
            xv.shape(),
            shape
        );
        let out = xv
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("element count checked");
        let in_shape = xv.shape().to_vec();
        let bw: BackwardFn = Box::new(move |g| {
            vec![g
                .as_standard_layout()
                .to_owned()
                .into_shape_with_order(IxDyn(&in_shape))
                .expect("same count")]
        });
        self.push("reshape", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        let xv = self.value_ref();
        let out = xv
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| {
                panic!(
                    "broadcast: cannot broadcast {:?} to {:?}",
                    xv.shape(),
                    shape
                )
            })
            .to_owned();
        let in_shape = xv.shape().to_vec();
        let bw: BackwardFn = Box::new(move |g| vec![reduce_to_shape(g.clone(), &in_shape)]);
        self.push("broadcast", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Swap the last two axes (rank >= 2).
    pub fn transpose_last2(&self) -> Tensor {
        let xv = self.value_ref();
        let nd = xv.ndim();
        assert!(nd >= 2, "transpose_last2 needs rank >= 2");
        let mut v = xv.view();
        v.swap_axes(nd - 2, nd - 1);
        let out = v.as_standard_layout().to_owned();
        let bw: BackwardFn = Box::new(move |g| {
            let mut gv = g.view();
            let nd = gv.ndim();
            gv.swap_axes(nd - 2, nd - 1);
            vec![gv.as_standard_layout().to_owned()]
        });
        self.push("transpose", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Contiguous range along one axis.
    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Tensor {
        let xv = self.value_ref();
        assert!(
            axis < xv.ndim() && start <= end && end <= xv.shape()[axis],
            "slice_axis: range {start}..{end} on axis {axis} invalid for {:?}",
            xv.shape()
        );
        let out = xv
            .slice_axis(Axis(axis), Slice::from(start..end))
            .as_standard_layout()
            .to_owned();
        let in_shape = xv.shape().to_vec();
        let bw: BackwardFn = Box::new(move |g| {
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&in_shape));
            dx.slice_axis_mut(Axis(axis), Slice::from(start..end))
                .assign(g);
            vec![dx]
        });
        self.push("slice", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    /// Gather rows (axis 0) by index; duplicate indices accumulate in backward.
    pub fn index_select(&self, indices: &[usize]) -> Tensor {
        let xv = self.value_ref();
        let n = xv.shape()[0];
        assert!(
            indices.iter().all(|&i| i < n),
            "index_select: index out of range for first dim {n}"
        );
        let out = xv.select(Axis(0), indices);
        let in_shape = xv.shape().to_vec();
        let idx = indices.to_vec();
        let bw: BackwardFn = Box::new(move |g| {
            let mut dx = ArrayD::<f64>::zeros(IxDyn(&in_shape));
            for (row, &src) in idx.iter().enumerate() {
                let gi = g.index_axis(Axis(0), row);
                let mut slot = dx.index_axis_mut(Axis(0), src);
                slot += &gi;
            }
            vec![dx]
        });
        self.push("index_select", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }

    // ── correlation (fixed kernel) ───────────────────────────────────

    /// Valid-mode correlation with a fixed (non-trainable) kernel along one
    /// axis, applied independently over the remaining axes. The adjoint
    /// scatters with the same kernel (full-mode correlation with the
    /// reversed kernel).
    pub fn conv1d_axis(&self, kernel: &[f64], axis: usize) -> Tensor {
        let xv = self.value_ref();
        let k = kernel.len();
        let n = xv.shape()[axis];
        assert!(
            k >= 1 && k <= n,
            "conv1d_axis: kernel length {k} exceeds axis length {n}"
        );
        let out_len = n - k + 1;
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = out_len;
        let mut out = ArrayD::<f64>::zeros(IxDyn(&out_shape));
        let w = kernel.to_vec();
        conv1d_forward(&xv, &mut out, &w, axis);
        let in_shape = xv.shape().to_vec();
        let bw: BackwardFn = {
            let w = w.clone();
            Box::new(move |g| {
                let mut dx = ArrayD::<f64>::zeros(IxDyn(&in_shape));
                conv1d_adjoint(g, &mut dx, &w, axis);
                vec![dx]
            })
        };
        self.push("conv1d", out, vec![self.node], Some(bw))
            .unwrap_or_else(|e| panic!("{e}"))
    }
}

fn std3(x: &ArrayD<f64>) -> ndarray::CowArray<'_, f64, IxDyn> {
    x.as_standard_layout()
}

/// `out[i] = a[i] . b[i]` over the batch: `[n,m,k] x [n,k,r] -> [n,m,r]`.
/// Hand-rolled loops; batch items are tiny (typically 3x3), so per-call
/// matmul dispatch would dominate.
fn bmm_nn(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let (n, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let r = b.shape()[2];
    let a = std3(a);
    let b = std3(b);
    let asl = a.as_slice().expect("standard");
    let bsl = b.as_slice().expect("standard");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, m, r]));
    let osl = out.as_slice_mut().expect("owned");
    for i in 0..n {
        let ab = &asl[i * m * k..(i + 1) * m * k];
        let bb = &bsl[i * k * r..(i + 1) * k * r];
        let ob = &mut osl[i * m * r..(i + 1) * m * r];
        for mi in 0..m {
            for ki in 0..k {
                let av = ab[mi * k + ki];
                let brow = &bb[ki * r..ki * r + r];
                let orow = &mut ob[mi * r..mi * r + r];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

/// `da[i] = g[i] . b[i]^T`: `[n,m,r] x [n,k,r] -> [n,m,k]`.
fn bmm_nt(g: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let (n, m, r) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let k = b.shape()[1];
    let g = std3(g);
    let b = std3(b);
    let gsl = g.as_slice().expect("standard");
    let bsl = b.as_slice().expect("standard");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, m, k]));
    let osl = out.as_slice_mut().expect("owned");
    for i in 0..n {
        let gb = &gsl[i * m * r..(i + 1) * m * r];
        let bb = &bsl[i * k * r..(i + 1) * k * r];
        let ob = &mut osl[i * m * k..(i + 1) * m * k];
        for mi in 0..m {
            let grow = &gb[mi * r..mi * r + r];
            for ki in 0..k {
                let brow = &bb[ki * r..ki * r + r];
                let mut s = 0.0;
                for (gv, bv) in grow.iter().zip(brow) {
                    s += gv * bv;
                }
                ob[mi * k + ki] = s;
            }
        }
    }
    out
}

/// `db[i] = a[i]^T . g[i]`: `[n,m,k] x [n,m,r] -> [n,k,r]`.
fn bmm_tn(a: &ArrayD<f64>, g: &ArrayD<f64>) -> ArrayD<f64> {
    let (n, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let r = g.shape()[2];
    let a = std3(a);
    let g = std3(g);
    let asl = a.as_slice().expect("standard");
    let gsl = g.as_slice().expect("standard");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, k, r]));
    let osl = out.as_slice_mut().expect("owned");
    for i in 0..n {
        let ab = &asl[i * m * k..(i + 1) * m * k];
        let gb = &gsl[i * m * r..(i + 1) * m * r];
        let ob = &mut osl[i * k * r..(i + 1) * k * r];
        for mi in 0..m {
            let grow = &gb[mi * r..mi * r + r];
            for ki in 0..k {
                let av = ab[mi * k + ki];
                let orow = &mut ob[ki * r..ki * r + r];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    }
    out
}

/// Row-sliced correlation: 2D arrays run on contiguous row slices; other
/// ranks fall back to lane iteration.
fn conv1d_forward(x: &ArrayD<f64>, out: &mut ArrayD<f64>, w: &[f64], axis: usize) {
    if x.ndim() == 2 && x.is_standard_layout() {
        let (h, cols) = (x.shape()[0], x.shape()[1]);
        let xs = x.as_slice().expect("standard layout");
        let out_h = out.shape()[0];
        let out_w = out.shape()[1];
        let os = out.as_slice_mut().expect("owned standard");
        if axis == 0 {
            for i in 0..out_h {
                let orow = &mut os[i * cols..(i + 1) * cols];
                for (j, &wj) in w.iter().enumerate() {
                    let xrow = &xs[(i + j) * cols..(i + j + 1) * cols];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += wj * xv;
                    }
                }
            }
        } else {
            for i in 0..h {
                let xrow = &xs[i * cols..(i + 1) * cols];
                let orow = &mut os[i * out_w..(i + 1) * out_w];
                for (j, &wj) in w.iter().enumerate() {
                    for (o, &xv) in orow.iter_mut().zip(&xrow[j..j + out_w]) {
                        *o += wj * xv;
                    }
                }
            }
        }
        return;
    }
    let out_len = out.shape()[axis];
    Zip::from(out.lanes_mut(Axis(axis)))
        .and(x.lanes(Axis(axis)))
        .for_each(|mut ol, xl| {
            for i in 0..out_len {
                let mut s = 0.0;
                for (j, &wj) in w.iter().enumerate() {
                    s += xl[i + j] * wj;
                }
                ol[i] = s;
            }
        });
}

fn conv1d_adjoint(g: &ArrayD<f64>, dx: &mut ArrayD<f64>, w: &[f64], axis: usize) {
    if g.ndim() == 2 && g.is_standard_layout() {
        let (gh, gw) = (g.shape()[0], g.shape()[1]);
        let cols = dx.shape()[1];
        let gs = g.as_slice().expect("standard layout");
        let ds = dx.as_slice_mut().expect("owned standard");
        if axis == 0 {
            for i in 0..gh {
                let grow = &gs[i * gw..(i + 1) * gw];
                for (j, &wj) in w.iter().enumerate() {
                    let drow = &mut ds[(i + j) * cols..(i + j + 1) * cols];
                    for (d, &gv) in drow.iter_mut().zip(grow) {
                        *d += wj * gv;
                    }
                }
            }
        } else {
            for i in 0..gh {
                let grow = &gs[i * gw..(i + 1) * gw];
                let drow = &mut ds[i * cols..(i + 1) * cols];
                for (j, &wj) in w.iter().enumerate() {
                    for (d, &gv) in drow[j..j + gw].iter_mut().zip(grow) {
                        *d += wj * gv;
                    }
                }
            }
        }
        return;
    }
    Zip::from(dx.lanes_mut(Axis(axis)))
        .and(g.lanes(Axis(axis)))
        .for_each(|mut dl, gl| {
            for i in 0..gl.len() {
                let gi = gl[i];
                for (j, &wj) in w.iter().enumerate() {
                    dl[i + j] += gi * wj;
                }
            }
        });
}

/// Concatenate along `axis`; the adjoint slices the gradient back apart.
pub fn concat(tensors: &[Tensor], axis: usize) -> Tensor {
    assert!(!tensors.is_empty(), "concat of zero tensors");
    let first = &tensors[0];
    for t in tensors {
        assert!(first.same_tape(t), "concat operands on different tapes");
    }
    let values: Vec<_> = tensors.iter().map(|t| t.value_ref()).collect();
    let views: Vec<ArrayViewD<f64>> = values.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(axis), &views).unwrap_or_else(|e| {
        panic!("concat: incompatible shapes along axis {axis}: {e}")
    });
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let parents: Vec<usize> = tensors.iter().map(|t| t.node).collect();
    let bw: BackwardFn = Box::new(move |g| {
        let mut grads = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &len in &sizes {
            grads.push(
                g.slice_axis(Axis(axis), Slice::from(offset..offset + len))
                    .as_standard_layout()
                    .to_owned(),
            );
            offset += len;
        }
        grads
    });
    let recording = first.tape().is_recording();
    first
        .tape()
        .push_node(Node {
            value: Rc::new(out),
            parents: if recording { parents } else { Vec::new() },
            backward: if recording { Some(bw) } else { None },
            param: None,
            needs_grad: false,
        })
        .expect("concat push cannot fail")
}

impl Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        self.try_add(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        self.try_sub(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Mul for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: &Tensor) -> Tensor {
        self.try_mul(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Div for &Tensor {
    type Output = Tensor;
    fn div(self, rhs: &Tensor) -> Tensor {
        self.try_div(rhs).unwrap_or_else(|e| panic!("{e}"))
    }
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        self.neg_t()
    }
}
