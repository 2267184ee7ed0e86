//! Reverse-mode autodiff on a Wengert tape.
//!
//! Every primitive records one node holding its output `Tensor` plus an `Op`
//! naming its inputs. `backward` replays the tape in reverse index order and
//! accumulates exactly one gradient contribution per input per use, so two
//! replays of the same tape produce bit-identical gradients.
//!
//! Complex values never live in a single node: the 2-D DFT ops produce a
//! (re, im) pair of real nodes, and complex arithmetic is composed from real
//! primitives by the callers.

use super::dft;
use super::tensor::Tensor;

/// Handle to a tape node. Cheap to copy; only valid for the tape it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Which half of a DFT output a node carries.
#[derive(Clone, Copy, Debug, PartialEq)]
enum DftPart {
    Re,
    Im,
}

enum Op {
    Leaf,
    /// [p,q] x [q,r] -> [p,r]
    Matmul { a: Var, b: Var },
    /// a * b^T: [p,q] x [r,q] -> [p,r]
    MatmulTB { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// mul * x + add with constant scalars
    Affine { x: Var, mul: f64, add: f64 },
    /// [r,c] + v[c] broadcast over rows
    AddRowVec { m: Var, v: Var },
    /// x + s with s a 1-element node, broadcast everywhere
    AddScalarVar { x: Var, s: Var },
    /// row i of m scaled by v[i]
    ScaleRows { m: Var, v: Var },
    /// s * x with s a 1-element node
    ScaleByScalar { x: Var, s: Var },
    /// v[c] -> [rows,c], every row a copy
    BroadcastRows { v: Var, rows: usize },
    /// k same-length inputs -> [k,c]
    StackRows { xs: Vec<Var> },
    /// concatenate along the last axis; equal leading dims
    ConcatCols { xs: Vec<Var> },
    Transpose { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Sqrt { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    /// softmax along the last axis, max-subtracted
    SoftmaxLast { x: Var },
    /// split last axis in halves (a, b) -> a * sigmoid(b)
    GluLast { x: Var },
    /// [r,c] -> [c], mean over rows
    MeanRows { x: Var },
    /// [r,c] -> [r], mean over the last axis
    MeanCols { x: Var },
    /// [r,c] -> [r], max over the last axis (first max wins ties)
    MaxCols { x: Var },
    SumAll { x: Var },
    Reshape { x: Var },
    /// single-channel signal [len] -> [c, len], zero-padded same-size conv
    Conv1dSame { x: Var, kernel: Var, bias: Var },
    /// one half of a per-channel 2-D DFT of (re, im); im = None means zero
    Dft2 {
        re: Var,
        im: Option<Var>,
        sign: f64,
        scale: f64,
        c: usize,
        h: usize,
        w: usize,
        part: DftPart,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one scalar root with respect to every node that influenced it.
pub struct Gradients {
    g: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient tensor for `v`, or None if the root did not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.idx()).and_then(|o| o.as_ref())
    }

    /// Gradient for `v`, densified to zeros of the given shape when absent.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx()].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let id = self.nodes.len();
        assert!(id <= u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { value, op });
        Var(id as u32)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    // ---- primitive ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (p, q) = self.value(a).dims2();
        let (q2, r) = self.value(b).dims2();
        assert_eq!(q, q2, "matmul inner dims {q} vs {q2}");
        let mut out = vec![0.0; p * r];
        matmul_acc(self.value(a).data(), self.value(b).data(), p, q, r, &mut out);
        self.push(Tensor::new(vec![p, r], out), Op::Matmul { a, b })
    }

    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Var {
        let (p, q) = self.value(a).dims2();
        let (r, q2) = self.value(b).dims2();
        assert_eq!(q, q2, "matmul_tb inner dims {q} vs {q2}");
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                out[i * r + j] = dot(&da[i * q..(i + 1) * q], &db[j * q..(j + 1) * q]);
            }
        }
        self.push(Tensor::new(vec![p, r], out), Op::MatmulTB { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = zip_map(self.value(a), self.value(b), "add", |x, y| x + y);
        self.push(t, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = zip_map(self.value(a), self.value(b), "sub", |x, y| x - y);
        self.push(t, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = zip_map(self.value(a), self.value(b), "mul", |x, y| x * y);
        self.push(t, Op::Mul { a, b })
    }

    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let t = map(self.value(x), |v| mul * v + add);
        self.push(t, Op::Affine { x, mul, add })
    }

    pub fn add_row_vec(&mut self, m: Var, v: Var) -> Var {
        let (r, c) = self.value(m).dims2();
        assert_eq!(self.value(v).len(), c, "add_row_vec width");
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(md[i * c + j] + vd[j]);
            }
        }
        self.push(Tensor::new(vec![r, c], out), Op::AddRowVec { m, v })
    }

    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "add_scalar_var wants 1-element s");
        let sv = self.value(s).item();
        let t = map(self.value(x), |v| v + sv);
        self.push(t, Op::AddScalarVar { x, s })
    }

    pub fn scale_rows(&mut self, m: Var, v: Var) -> Var {
        let (r, c) = self.value(m).dims2();
        assert_eq!(self.value(v).len(), r, "scale_rows length");
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(md[i * c + j] * vd[i]);
            }
        }
        self.push(Tensor::new(vec![r, c], out), Op::ScaleRows { m, v })
    }

    pub fn scale_by_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "scale_by_scalar wants 1-element s");
        let sv = self.value(s).item();
        let t = map(self.value(x), |v| v * sv);
        self.push(t, Op::ScaleByScalar { x, s })
    }

    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Var {
        let c = self.value(v).len();
        let vd = self.value(v).data();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(vd);
        }
        self.push(Tensor::new(vec![rows, c], out), Op::BroadcastRows { v, rows })
    }

    pub fn stack_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "stack_rows of nothing");
        let c = self.value(xs[0]).len();
        let mut out = Vec::with_capacity(xs.len() * c);
        for &x in xs {
            assert_eq!(self.value(x).len(), c, "stack_rows length mismatch");
            out.extend_from_slice(self.value(x).data());
        }
        self.push(
            Tensor::new(vec![xs.len(), c], out),
            Op::StackRows { xs: xs.to_vec() },
        )
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let r = self.value(xs[0]).dims2().0;
        let mut widths = Vec::with_capacity(xs.len());
        let mut total = 0;
        for &x in xs {
            let (ri, ci) = self.value(x).dims2();
            assert_eq!(ri, r, "concat_cols row mismatch");
            widths.push(ci);
            total += ci;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (xi, &x) in xs.iter().enumerate() {
                let c = widths[xi];
                let d = self.value(x).data();
                out.extend_from_slice(&d[i * c..(i + 1) * c]);
            }
        }
        self.push(
            Tensor::new(vec![r, total], out),
            Op::ConcatCols { xs: xs.to_vec() },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let d = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(Tensor::new(vec![c, r], out), Op::Transpose { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = map(self.value(x), f64::tanh);
        self.push(t, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = map(self.value(x), sigmoid);
        self.push(t, Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = map(self.value(x), f64::exp);
        self.push(t, Op::Exp { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let t = map(self.value(x), f64::ln);
        self.push(t, Op::Ln { x })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = map(self.value(x), f64::sqrt);
        self.push(t, Op::Sqrt { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = map(self.value(x), |v| v.clamp(lo, hi));
        self.push(t, Op::Clamp { x, lo, hi })
    }

    /// Softmax along `axis` of a rank-2 tensor (rank-1 treated as one row).
    /// The running max is subtracted before exponentiation.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        match self.value(x).shape().len() {
            1 => {
                assert_eq!(axis, 0, "softmax axis out of range for rank-1");
                self.softmax_last(x)
            }
            2 => {
                if axis == 1 {
                    self.softmax_last(x)
                } else {
                    assert_eq!(axis, 0, "softmax axis out of range for rank-2");
                    let xt = self.transpose(x);
                    let s = self.softmax_last(xt);
                    self.transpose(s)
                }
            }
            n => panic!("softmax on rank-{n} tensor unsupported"),
        }
    }

    fn softmax_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let width = *xv.shape().last().expect("softmax of scalarless shape");
        assert!(width > 0, "softmax over empty axis");
        let d = xv.data();
        let mut out = Vec::with_capacity(d.len());
        for row in d.chunks_exact(width) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let start = out.len();
            for &v in row {
                let e = (v - m).exp();
                denom += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= denom;
            }
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::SoftmaxLast { x })
    }

    /// Gated linear unit over the last axis: split x into halves (a, b) and
    /// return a * sigmoid(b).
    pub fn glu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let width = *xv.shape().last().expect("glu of scalarless shape");
        assert!(width % 2 == 0, "glu wants an even last axis, got {width}");
        let half = width / 2;
        let d = xv.data();
        let mut out = Vec::with_capacity(d.len() / 2);
        for row in d.chunks_exact(width) {
            for j in 0..half {
                out.push(row[j] * sigmoid(row[half + j]));
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        self.push(Tensor::new(shape, out), Op::GluLast { x })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let d = self.value(x).data();
        let mut out = vec![0.0; c];
        for row in d.chunks_exact(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        for o in &mut out {
            *o *= inv;
        }
        self.push(Tensor::new(vec![c], out), Op::MeanRows { x })
    }

    pub fn mean_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let d = self.value(x).data();
        let inv = 1.0 / c as f64;
        let out: Vec<f64> = (0..r)
            .map(|i| d[i * c..(i + 1) * c].iter().sum::<f64>() * inv)
            .collect();
        self.push(Tensor::new(vec![r], out), Op::MeanCols { x })
    }

    pub fn max_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        assert!(c > 0, "max_cols over empty axis");
        let d = self.value(x).data();
        let out: Vec<f64> = (0..r)
            .map(|i| {
                d[i * c..(i + 1) * c]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        self.push(Tensor::new(vec![r], out), Op::MaxCols { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = self.value(x).reshaped(shape);
        self.push(t, Op::Reshape { x })
    }

    /// Same-padding 1-D convolution of a single-channel signal with `c_out`
    /// kernels of odd width, plus a per-channel bias. kernel: [c_out, kw].
    pub fn conv1d_same(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        let len = self.value(x).len();
        let (c_out, kw) = self.value(kernel).dims2();
        assert!(kw % 2 == 1, "conv1d_same wants odd kernel width, got {kw}");
        assert_eq!(self.value(bias).len(), c_out, "conv1d_same bias length");
        let pad = kw / 2;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = Vec::with_capacity(c_out * len);
        for j in 0..c_out {
            for p in 0..len {
                let mut acc = bd[j];
                for u in 0..kw {
                    let q = p + u;
                    if q >= pad && q - pad < len {
                        acc += kd[j * kw + u] * xd[q - pad];
                    }
                }
                out.push(acc);
            }
        }
        self.push(
            Tensor::new(vec![c_out, len], out),
            Op::Conv1dSame { x, kernel, bias },
        )
    }

    /// Per-channel unnormalized 2-D DFT of a real [c,h,w] tensor.
    pub fn fft2(&mut self, x: Var) -> (Var, Var) {
        let (c, h, w) = dims3(self.value(x));
        self.dft2_pair(x, None, -1.0, 1.0, c, h, w)
    }

    /// Per-channel inverse 2-D DFT (scale 1/(h*w)) of a complex pair.
    pub fn ifft2(&mut self, re: Var, im: Var) -> (Var, Var) {
        let (c, h, w) = dims3(self.value(re));
        assert_eq!(self.value(re).shape(), self.value(im).shape(), "ifft2 re/im shape");
        self.dft2_pair(re, Some(im), 1.0, 1.0 / (h * w) as f64, c, h, w)
    }

    fn dft2_pair(
        &mut self,
        re: Var,
        im: Option<Var>,
        sign: f64,
        scale: f64,
        c: usize,
        h: usize,
        w: usize,
    ) -> (Var, Var) {
        let zero;
        let imd = match im {
            Some(v) => self.value(v).data(),
            None => {
                zero = vec![0.0; c * h * w];
                &zero[..]
            }
        };
        let (or, oi) = dft::dft2(self.value(re).data(), imd, c, h, w, sign, scale);
        let shape = self.value(re).shape().to_vec();
        let vr = self.push(
            Tensor::new(shape.clone(), or),
            Op::Dft2 { re, im, sign, scale, c, h, w, part: DftPart::Re },
        );
        let vi = self.push(
            Tensor::new(shape, oi),
            Op::Dft2 { re, im, sign, scale, c, h, w, part: DftPart::Im },
        );
        (vr, vi)
    }

    // ---- reverse pass ---------------------------------------------------

    /// Reverse replay from a scalar root. Returns the full gradient map; the
    /// tape itself is untouched, so repeated calls give bit-identical results.
    pub fn backward(&self, root: Var) -> Gradients {
        let ri = root.idx();
        assert_eq!(
            self.nodes[ri].value.len(),
            1,
            "backward root must be a 1-element tensor"
        );
        let mut g: Vec<Option<Tensor>> = Vec::with_capacity(ri + 1);
        g.resize_with(ri + 1, || None);
        g[ri] = Some(Tensor::new(
            self.nodes[ri].value.shape().to_vec(),
            vec![1.0],
        ));

        for i in (0..=ri).rev() {
            let Some(gout) = g[i].take() else { continue };
            self.step_back(i, &gout, &mut g);
            g[i] = Some(gout);
        }
        Gradients { g }
    }

    fn step_back(&self, i: usize, gout: &Tensor, g: &mut [Option<Tensor>]) {
        let go = gout.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (p, q) = self.value(*a).dims2();
                let r = self.value(*b).dims2().1;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                accum(g, *a, &[p, q], |da| {
                    for i in 0..p {
                        let grow = &go[i * r..(i + 1) * r];
                        for k in 0..q {
                            da[i * q + k] += dot(grow, &bd[k * r..(k + 1) * r]);
                        }
                    }
                });
                accum(g, *b, &[q, r], |db| {
                    for i in 0..p {
                        let grow = &go[i * r..(i + 1) * r];
                        for k in 0..q {
                            let aik = ad[i * q + k];
                            for (dbj, &gj) in db[k * r..(k + 1) * r].iter_mut().zip(grow) {
                                *dbj += aik * gj;
                            }
                        }
                    }
                });
            }
            Op::MatmulTB { a, b } => {
                let (p, q) = self.value(*a).dims2();
                let r = self.value(*b).dims2().0;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // out[i,j] = <a_i, b_j>  =>  da_i += g[i,j] b_j ; db_j += g[i,j] a_i
                accum(g, *a, &[p, q], |da| {
                    for i in 0..p {
                        for j in 0..r {
                            let gij = go[i * r + j];
                            for (d, &bv) in da[i * q..(i + 1) * q].iter_mut().zip(&bd[j * q..(j + 1) * q]) {
                                *d += gij * bv;
                            }
                        }
                    }
                });
                accum(g, *b, &[r, q], |db| {
                    for i in 0..p {
                        for j in 0..r {
                            let gij = go[i * r + j];
                            for (d, &av) in db[j * q..(j + 1) * q].iter_mut().zip(&ad[i * q..(i + 1) * q]) {
                                *d += gij * av;
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                let sh = self.value(*a).shape().to_vec();
                accum(g, *a, &sh, |da| add_assign(da, go));
                accum(g, *b, &sh, |db| add_assign(db, go));
            }
            Op::Sub { a, b } => {
                let sh = self.value(*a).shape().to_vec();
                accum(g, *a, &sh, |da| add_assign(da, go));
                accum(g, *b, &sh, |db| {
                    for (d, &gv) in db.iter_mut().zip(go) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                let sh = self.value(*a).shape().to_vec();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                accum(g, *a, &sh, |da| {
                    for ((d, &gv), &bv) in da.iter_mut().zip(go).zip(bd) {
                        *d += gv * bv;
                    }
                });
                accum(g, *b, &sh, |db| {
                    for ((d, &gv), &av) in db.iter_mut().zip(go).zip(ad) {
                        *d += gv * av;
                    }
                });
            }
            Op::Affine { x, mul, .. } => {
                let sh = self.value(*x).shape().to_vec();
                let m = *mul;
                accum(g, *x, &sh, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(go) {
                        *d += m * gv;
                    }
                });
            }
            Op::AddRowVec { m, v } => {
                let (r, c) = self.value(*m).dims2();
                accum(g, *m, &[r, c], |dm| add_assign(dm, go));
                let vsh = self.value(*v).shape().to_vec();
                accum(g, *v, &vsh, |dv| {
                    for row in go.chunks_exact(c) {
                        add_assign(dv, row);
                    }
                });
            }
            Op::AddScalarVar { x, s } => {
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| add_assign(dx, go));
                let ssh = self.value(*s).shape().to_vec();
                accum(g, *s, &ssh, |ds| ds[0] += go.iter().sum::<f64>());
            }
            Op::ScaleRows { m, v } => {
                let (r, c) = self.value(*m).dims2();
                let (md, vd) = (self.value(*m).data(), self.value(*v).data());
                accum(g, *m, &[r, c], |dm| {
                    for i in 0..r {
                        let vi = vd[i];
                        for (d, &gv) in dm[i * c..(i + 1) * c].iter_mut().zip(&go[i * c..(i + 1) * c]) {
                            *d += vi * gv;
                        }
                    }
                });
                let vsh = self.value(*v).shape().to_vec();
                accum(g, *v, &vsh, |dv| {
                    for i in 0..r {
                        dv[i] += dot(&go[i * c..(i + 1) * c], &md[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::ScaleByScalar { x, s } => {
                let sh = self.value(*x).shape().to_vec();
                let sv = self.value(*s).item();
                let xd = self.value(*x).data();
                accum(g, *x, &sh, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(go) {
                        *d += sv * gv;
                    }
                });
                let ssh = self.value(*s).shape().to_vec();
                accum(g, *s, &ssh, |ds| ds[0] += dot(go, xd));
            }
            Op::BroadcastRows { v, rows } => {
                let c = self.value(*v).len();
                let vsh = self.value(*v).shape().to_vec();
                accum(g, *v, &vsh, |dv| {
                    for i in 0..*rows {
                        add_assign(dv, &go[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::StackRows { xs } => {
                let c = self.value(xs[0]).len();
                for (i, &x) in xs.iter().enumerate() {
                    let sh = self.value(x).shape().to_vec();
                    accum(g, x, &sh, |dx| add_assign(dx, &go[i * c..(i + 1) * c]));
                }
            }
            Op::ConcatCols { xs } => {
                let r = self.value(xs[0]).dims2().0;
                let total: usize = xs.iter().map(|&x| self.value(x).dims2().1).sum();
                let mut off = 0;
                for &x in xs {
                    let (_, c) = self.value(x).dims2();
                    accum(g, x, &[r, c], |dx| {
                        for i in 0..r {
                            add_assign(
                                &mut dx[i * c..(i + 1) * c],
                                &go[i * total + off..i * total + off + c],
                            );
                        }
                    });
                    off += c;
                }
            }
            Op::Transpose { x } => {
                let (r, c) = self.value(*x).dims2();
                accum(g, *x, &[r, c], |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += go[j * r + i];
                        }
                    }
                });
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].value.data();
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(go).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.data();
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(go).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Exp { x } => {
                let y = self.nodes[i].value.data();
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(go).zip(y) {
                        *d += gv * yv;
                    }
                });
            }
            Op::Ln { x } => {
                let xd = self.value(*x).data();
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(go).zip(xd) {
                        *d += gv / xv;
                    }
                });
            }
            Op::Sqrt { x } => {
                let y = self.nodes[i].value.data();
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(go).zip(y) {
                        *d += gv / (2.0 * yv);
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.value(*x).data();
                let sh = self.value(*x).shape().to_vec();
                let (lo, hi) = (*lo, *hi);
                accum(g, *x, &sh, |dx| {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(go).zip(xd) {
                        if xv > lo && xv < hi {
                            *d += gv;
                        }
                    }
                });
            }
            Op::SoftmaxLast { x } => {
                let y = self.nodes[i].value.data();
                let sh = self.value(*x).shape().to_vec();
                let width = *sh.last().unwrap();
                accum(g, *x, &sh, |dx| {
                    for r in 0..y.len() / width {
                        let ys = &y[r * width..(r + 1) * width];
                        let gs = &go[r * width..(r + 1) * width];
                        let inner = dot(ys, gs);
                        for ((d, &gv), &yv) in
                            dx[r * width..(r + 1) * width].iter_mut().zip(gs).zip(ys)
                        {
                            *d += yv * (gv - inner);
                        }
                    }
                });
            }
            Op::GluLast { x } => {
                let xd = self.value(*x).data();
                let sh = self.value(*x).shape().to_vec();
                let width = *sh.last().unwrap();
                let half = width / 2;
                accum(g, *x, &sh, |dx| {
                    for r in 0..xd.len() / width {
                        let xs = &xd[r * width..(r + 1) * width];
                        let gs = &go[r * half..(r + 1) * half];
                        let drow = &mut dx[r * width..(r + 1) * width];
                        for j in 0..half {
                            let s = sigmoid(xs[half + j]);
                            drow[j] += gs[j] * s;
                            drow[half + j] += gs[j] * xs[j] * s * (1.0 - s);
                        }
                    }
                });
            }
            Op::MeanRows { x } => {
                let (r, c) = self.value(*x).dims2();
                let inv = 1.0 / r as f64;
                accum(g, *x, &[r, c], |dx| {
                    for row in dx.chunks_exact_mut(c) {
                        for (d, &gv) in row.iter_mut().zip(go) {
                            *d += gv * inv;
                        }
                    }
                });
            }
            Op::MeanCols { x } => {
                let (r, c) = self.value(*x).dims2();
                let inv = 1.0 / c as f64;
                accum(g, *x, &[r, c], |dx| {
                    for (i, row) in dx.chunks_exact_mut(c).enumerate() {
                        let gi = go[i] * inv;
                        for d in row {
                            *d += gi;
                        }
                    }
                });
            }
            Op::MaxCols { x } => {
                let (r, c) = self.value(*x).dims2();
                let xd = self.value(*x).data();
                accum(g, *x, &[r, c], |dx| {
                    for i in 0..r {
                        let row = &xd[i * c..(i + 1) * c];
                        let mut arg = 0;
                        for (j, &v) in row.iter().enumerate() {
                            if v > row[arg] {
                                arg = j;
                            }
                        }
                        dx[i * c + arg] += go[i];
                    }
                });
            }
            Op::SumAll { x } => {
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| {
                    for d in dx {
                        *d += go[0];
                    }
                });
            }
            Op::Reshape { x } => {
                let sh = self.value(*x).shape().to_vec();
                accum(g, *x, &sh, |dx| add_assign(dx, go));
            }
            Op::Conv1dSame { x, kernel, bias } => {
                let len = self.value(*x).len();
                let (c_out, kw) = self.value(*kernel).dims2();
                let pad = kw / 2;
                let xd = self.value(*x).data();
                let kd = self.value(*kernel).data();
                let xsh = self.value(*x).shape().to_vec();
                accum(g, *x, &xsh, |dx| {
                    for j in 0..c_out {
                        for p in 0..len {
                            let gv = go[j * len + p];
                            for u in 0..kw {
                                let q = p + u;
                                if q >= pad && q - pad < len {
                                    dx[q - pad] += kd[j * kw + u] * gv;
                                }
                            }
                        }
                    }
                });
                accum(g, *kernel, &[c_out, kw], |dk| {
                    for j in 0..c_out {
                        for p in 0..len {
                            let gv = go[j * len + p];
                            for u in 0..kw {
                                let q = p + u;
                                if q >= pad && q - pad < len {
                                    dk[j * kw + u] += gv * xd[q - pad];
                                }
                            }
                        }
                    }
                });
                let bsh = self.value(*bias).shape().to_vec();
                accum(g, *bias, &bsh, |db| {
                    for j in 0..c_out {
                        db[j] += go[j * len..(j + 1) * len].iter().sum::<f64>();
                    }
                });
            }
            Op::Dft2 { re, im, sign, scale, c, h, w, part } => {
                // Adjoint of the (sign, scale) transform is the (-sign, scale)
                // transform; this node carries only one output half, so the
                // other half's seed is zero.
                let zeros = vec![0.0; c * h * w];
                let (gr, gi) = match part {
                    DftPart::Re => (go, &zeros[..]),
                    DftPart::Im => (&zeros[..], go),
                };
                let (dre, dim) = dft::dft2(gr, gi, *c, *h, *w, -sign, *scale);
                let sh = self.value(*re).shape().to_vec();
                accum(g, *re, &sh, |dx| add_assign(dx, &dre));
                if let Some(imv) = im {
                    let ish = self.value(*imv).shape().to_vec();
                    accum(g, *imv, &ish, |dx| add_assign(dx, &dim));
                }
            }
        }
    }
}

// ---- small kernels -------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// out += a @ b, accumulating row-wise so the inner loop vectorizes.
fn matmul_acc(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "{what} shape mismatch");
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected [c,h,w], got shape {s:?}");
    (s[0], s[1], s[2])
}

fn accum(g: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let slot = g[v.idx()].get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
    f(slot.data_mut());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, d: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], d.to_vec())
    }

    /// Textbook triple loop, independent of the production kernel.
    fn matmul_oracle(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..r {
                let mut s = 0.0;
                for k in 0..q {
                    s += a[i * q + k] * b[k * r + j];
                }
                out[i * r + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_known_product() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.5, -2.0, 0.25, 4.0]));
        let eye = tape.leaf(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let z = tape.leaf(Tensor::zeros(vec![2, 2]));
        let ai = tape.matmul(a, eye);
        let az = tape.matmul(a, z);
        assert_eq!(tape.value(ai).data(), tape.value(a).data());
        assert!(tape.value(az).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let (p, q, r) = (3, 5, 4);
        let a: Vec<f64> = (0..p * q).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..q * r).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut tape = Tape::new();
        let av = tape.leaf(t2(p, q, &a));
        let bv = tape.leaf(t2(q, r, &b));
        let cv = tape.matmul(av, bv);
        let want = matmul_oracle(&a, &b, p, q, r);
        for (got, want) in tape.value(cv).data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn matmul_shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 3, &[0.0; 6]));
        let b = tape.leaf(t2(2, 2, &[0.0; 4]));
        tape.matmul(a, b);
    }

    #[test]
    fn matmul_tb_equals_matmul_of_transpose() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t2(4, 3, &[0.5, -1.0, 2.0, 1.0, 0.0, -0.5, 3.0, 1.0, 1.0, -2.0, 0.25, 4.0]));
        let direct = tape.matmul_tb(a, b);
        let bt = tape.transpose(b);
        let via = tape.matmul(a, bt);
        assert_eq!(tape.value(direct).data(), tape.value(via).data());
    }

    #[test]
    fn softmax_uniform_and_log_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        let s = tape.softmax(x, 1);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let y = tape.leaf(t2(1, 2, &[0.0_f64, 3.0_f64.ln()]));
        let sy = tape.softmax(y, 1);
        let d = tape.value(sy).data();
        assert!((d[0] - 0.25).abs() < 1e-15);
        assert!((d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_inputs_and_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 3, &[1000.0, 1000.0, 999.0, -1000.0, -999.0, -1001.0]));
        let s = tape.softmax(x, 1);
        for row in tape.value(s).data().chunks_exact(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_axis0_is_columnwise() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 2, &[0.0, 5.0, 0.0, 5.0]));
        let s = tape.softmax(x, 0);
        let d = tape.value(s).data();
        // Each column had equal entries, so every weight is 0.5.
        assert!(d.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn glu_frozen_values() {
        let mut tape = Tape::new();
        // a = [2], b = [ln 3]: sigmoid(ln 3) = 0.75, so output = 1.5.
        let x = tape.leaf(Tensor::new(vec![2], vec![2.0, 3.0_f64.ln()]));
        let y = tape.glu(x);
        assert!((tape.value(y).data()[0] - 1.5).abs() < 1e-15);

        // Zero gate halves the signal; zero signal stays zero.
        let x2 = tape.leaf(Tensor::new(vec![4], vec![3.0, -1.0, 0.0, 0.0]));
        let y2 = tape.glu(x2);
        assert_eq!(tape.value(y2).data(), &[1.5, -0.5]);
    }

    #[test]
    fn fft2_unit_impulse_spreads_flat() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]));
        let (re, im) = tape.fft2(x);
        for &v in tape.value(re).data() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        for &v in tape.value(im).data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn fft2_constant_concentrates_in_dc() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0; 4]));
        let (re, im) = tape.fft2(x);
        let r = tape.value(re).data();
        assert!((r[0] - 4.0).abs() < 1e-12);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(tape.value(im).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fft2_ifft2_roundtrip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 4 * 4).map(|i| (i as f64 * 0.31).sin()).collect();
        let x = tape.leaf(Tensor::new(vec![2, 4, 4], data.clone()));
        let (re, im) = tape.fft2(x);
        let (br, bi) = tape.ifft2(re, im);
        for (got, want) in tape.value(br).data().iter().zip(&data) {
            assert!((got - want).abs() <= 1e-9);
        }
        assert!(tape.value(bi).data().iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn backward_simple_chain() {
        // f = sum((x * y) + x) => df/dx = y + 1, df/dy = x
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 3, &[1.0, 2.0, 3.0]));
        let y = tape.leaf(t2(1, 3, &[4.0, 5.0, 6.0]));
        let xy = tape.mul(x, y);
        let s = tape.add(xy, x);
        let f = tape.sum_all(s);
        let g = tape.backward(f);
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 6.0, 7.0]);
        assert_eq!(g.get(y).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_accumulates_once_per_use() {
        // f = sum(x + x): gradient must be exactly 2 everywhere.
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 2, &[3.0, -1.0]));
        let s = tape.add(x, x);
        let f = tape.sum_all(s);
        let g = tape.backward(f);
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_replay_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 2, &[0.3, -0.7, 1.1, 0.2]));
        let w = tape.leaf(t2(2, 2, &[0.5, 0.1, -0.4, 0.9]));
        let h = tape.matmul(x, w);
        let a = tape.tanh(h);
        let sm = tape.softmax(a, 1);
        let f = tape.sum_all(sm);
        let g1 = tape.backward(f);
        let g2 = tape.backward(f);
        assert_eq!(g1.get(x).unwrap().data(), g2.get(x).unwrap().data());
        assert_eq!(g1.get(w).unwrap().data(), g2.get(w).unwrap().data());
    }

    #[test]
    fn max_cols_routes_gradient_to_first_max() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 3, &[2.0, 5.0, 5.0]));
        let m = tape.max_cols(x);
        let f = tape.sum_all(m);
        let g = tape.backward(f);
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 1, &[2.0]));
        let y = tape.leaf(t2(1, 1, &[7.0]));
        let f = tape.sum_all(x);
        let g = tape.backward(f);
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(y, &[1, 1]).data(), &[0.0]);
    }
}
