use super::kernels::{self, MatRef};
use super::{NumericsError, Real, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used to show that gradient checks catch
/// broken derivatives.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// RMS-norm backward without the normalization cross term.
    RmsNormDropCrossTerm,
    /// SiLU backward using sigmoid(x) as the derivative.
    SiluAsSigmoid,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LogSoftmax(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, begin: usize, end: usize },
    Transpose(Var),
    Rope { x: Var, n_heads: usize, pos0: usize, base: f64 },
    Silu(Var),
    Relu(Var),
    Sum(Var),
    Gather { x: Var, idx: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only computation tape. Node inputs always precede the node, so the
/// insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: FaultInjection,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: FaultInjection::None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: FaultInjection) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Tensor {
                requires_grad: false,
                grad: None,
                ..value
            },
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad;
        self.nodes.push(Node {
            value: Tensor { grad: None, ..t },
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.value(a).shape.len() != 2 || self.value(b).shape.len() != 2 {
            return Err(shape_err(
                "matmul",
                &self.value(a).shape,
                &self.value(b).shape,
            ));
        }
        let out = kernels::matmul(&self.value(a).data, m, k, &self.value(b).data, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("add", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape.clone(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("mul", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape.clone(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| x * s).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Scale(a, s), &[a])
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.softmax_impl(x, None)
    }

    /// Softmax along the last axis where row `i` only sees the first
    /// `prefix + i + 1` columns; hidden entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var, prefix: usize) -> Var {
        self.softmax_impl(x, Some(prefix))
    }

    fn softmax_impl(&mut self, x: Var, causal: Option<usize>) -> Var {
        let (r, c) = self.dims(x);
        let mut t = self.value(x).clone();
        kernels::softmax_rows(&mut t.data, r, c, causal);
        self.push(t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut t = self.value(x).clone();
        for row in t.data.chunks_mut(c.max(1)).take(r) {
            kernels::log_softmax_in_place(row);
        }
        self.push(t, Op::LogSoftmax(x), &[x])
    }

    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).numel() != c {
            return Err(shape_err(
                "rmsnorm",
                &self.value(x).shape,
                &self.value(gain).shape,
            ));
        }
        let (out, inv_rms) =
            kernels::rmsnorm_rows(&self.value(x).data, r, c, &self.value(gain).data);
        let t = Tensor::new(self.value(x).shape.clone(), out)?;
        Ok(self.push(t, Op::RmsNorm { x, gain, inv_rms }, &[x, gain]))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        let tt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::Contract {
                    op: "embedding",
                    msg: format!("id {id} outside table of {v} rows"),
                });
            }
            out.extend_from_slice(&tt.data[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(NumericsError::Contract {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let (r0, c0) = self.dims(first);
        let t = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if c != c0 {
                        return Err(shape_err("concat", &[r0, c0], &[r, c]));
                    }
                    rows += r;
                    data.extend_from_slice(&self.value(p).data);
                }
                Tensor::new(vec![rows, c0], data)?
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if r != r0 {
                        return Err(shape_err("concat", &[r0, c0], &[r, c]));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for row in 0..r0 {
                    for &p in parts {
                        let (_, c) = self.dims(p);
                        data.extend_from_slice(&self.value(p).data[row * c..(row + 1) * c]);
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
            _ => {
                return Err(NumericsError::Contract {
                    op: "concat",
                    msg: format!("axis {axis} unsupported"),
                })
            }
        };
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Half-open slice `[begin, end)` of a 2-D tensor along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, begin: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        let lim = if axis == 0 { r } else { c };
        if axis > 1 || begin > end || end > lim {
            return Err(NumericsError::Contract {
                op: "slice",
                msg: format!("range {begin}..{end} on axis {axis} of [{r}, {c}]"),
            });
        }
        let src = &self.value(x).data;
        let t = if axis == 0 {
            Tensor::new(vec![end - begin, c], src[begin * c..end * c].to_vec())?
        } else {
            let w = end - begin;
            let mut data = Vec::with_capacity(r * w);
            for row in 0..r {
                data.extend_from_slice(&src[row * c + begin..row * c + end]);
            }
            Tensor::new(vec![r, w], data)?
        };
        Ok(self.push(
            t,
            Op::Slice {
                x,
                axis,
                begin,
                end,
            },
            &[x],
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = &self.value(x).data;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor {
            shape: vec![c, r],
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Transpose(x), &[x])
    }

    /// Rotary position rotation of each head of a `[len × d_model]` tensor.
    pub fn rope(&mut self, x: Var, n_heads: usize, pos0: usize, base: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if n_heads == 0 || c % n_heads != 0 || (c / n_heads) % 2 != 0 {
            return Err(NumericsError::Contract {
                op: "rope",
                msg: format!("width {c} not splittable into {n_heads} even heads"),
            });
        }
        let mut t = self.value(x).clone();
        kernels::rope_rows(&mut t.data, r, c, n_heads, pos0, base, false);
        Ok(self.push(
            t,
            Op::Rope {
                x,
                n_heads,
                pos0,
                base,
            },
            &[x],
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data.iter_mut() {
            *v = kernels::silu(*v);
        }
        self.push(t, Op::Silu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data.iter_mut() {
            *v = v.max(T::zero());
        }
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data.iter().copied().sum();
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![s],
                requires_grad: false,
                grad: None,
            },
            Op::Sum(x),
            &[x],
        )
    }

    /// Picks elements by flat index into a 1-D tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            data.push(*src.get(i).ok_or(NumericsError::Contract {
                op: "gather",
                msg: format!("index {i} outside {} elements", src.len()),
            })?);
        }
        let t = Tensor::new(vec![idx.len()], data)?;
        Ok(self.push(
            t,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every leaf created with
    /// `requires_grad` receives a gradient (zeros if it did not influence the
    /// loss).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(NumericsError::NotScalar(lt.shape.clone()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                node.value.grad = Some(g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]));
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let (_, n) = val(*b).dims2();
                if wants(*a) {
                    let bd = &val(*b).data;
                    acc(*a, &mut |ga| {
                        kernels::gemm(g, MatRef::plain(m, n), bd, MatRef::t(k, n), T::one(), ga)
                    });
                }
                if wants(*b) {
                    let ad = &val(*a).data;
                    acc(*b, &mut |gb| {
                        kernels::gemm(ad, MatRef::t(m, k), g, MatRef::plain(m, n), T::one(), gb)
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |gv| {
                        for (x, &d) in gv.iter_mut().zip(g) {
                            *x += d;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |ga| {
                    for ((x, &d), &o) in ga.iter_mut().zip(g).zip(bd) {
                        *x += d * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &d), &o) in gb.iter_mut().zip(g).zip(ad) {
                        *x += d * o;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| {
                for (x, &d) in ga.iter_mut().zip(g) {
                    *x += d * *s;
                }
            }),
            Op::Softmax(x) => {
                let y = &node.value.data;
                let (_, c) = node.value.dims2();
                acc(*x, &mut |gx| {
                    for ((gr, yr), dr) in gx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s = kernels::dot(dr, yr);
                        for ((o, &yv), &dv) in gr.iter_mut().zip(yr).zip(dr) {
                            *o += yv * (dv - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = &node.value.data;
                let (_, c) = node.value.dims2();
                acc(*x, &mut |gx| {
                    for ((gr, yr), dr) in gx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s: T = dr.iter().copied().sum();
                        for ((o, &yv), &dv) in gr.iter_mut().zip(yr).zip(dr) {
                            *o += dv - yv.exp() * s;
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let xd = &val(*x).data;
                let gd = &val(*gain).data;
                let (_, c) = val(*x).dims2();
                let n = T::from_usize(c).unwrap();
                let drop_cross = self.fault == FaultInjection::RmsNormDropCrossTerm;
                acc(*x, &mut |gx| {
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        let (xr, dr) = (&xd[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let mut ux = T::zero();
                        for j in 0..c {
                            ux += gd[j] * dr[j] * xr[j];
                        }
                        let coef = if drop_cross {
                            T::zero()
                        } else {
                            ux * ir * ir * ir / n
                        };
                        for j in 0..c {
                            gx[r * c + j] += ir * gd[j] * dr[j] - xr[j] * coef;
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (r, &ir) in inv_rms.iter().enumerate() {
                        for j in 0..c {
                            gg[j] += g[r * c + j] * xd[r * c + j] * ir;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let (_, d) = val(*table).dims2();
                acc(*table, &mut |gt| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[row * d + j];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).dims2();
                    if *axis == 0 {
                        let o = offset;
                        acc(p, &mut |gp| {
                            for (x, &d) in gp.iter_mut().zip(&g[o * cols..(o + r) * cols]) {
                                *x += d;
                            }
                        });
                        offset += r;
                    } else {
                        let o = offset;
                        acc(p, &mut |gp| {
                            for row in 0..rows {
                                for j in 0..c {
                                    gp[row * c + j] += g[row * cols + o + j];
                                }
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice {
                x,
                axis,
                begin,
                end,
            } => {
                let (r, c) = val(*x).dims2();
                acc(*x, &mut |gx| {
                    if *axis == 0 {
                        for (o, &d) in gx[begin * c..end * c].iter_mut().zip(g) {
                            *o += d;
                        }
                    } else {
                        let w = end - begin;
                        for row in 0..r {
                            for j in 0..w {
                                gx[row * c + begin + j] += g[row * w + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = val(*x).dims2();
                acc(*x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Rope {
                x,
                n_heads,
                pos0,
                base,
            } => {
                let (r, c) = val(*x).dims2();
                let mut back = g.to_vec();
                kernels::rope_rows(&mut back, r, c, *n_heads, *pos0, *base, true);
                acc(*x, &mut |gx| {
                    for (o, &d) in gx.iter_mut().zip(&back) {
                        *o += d;
                    }
                });
            }
            Op::Silu(x) => {
                let xd = &val(*x).data;
                let as_sigmoid = self.fault == FaultInjection::SiluAsSigmoid;
                acc(*x, &mut |gx| {
                    for ((o, &d), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        let s = kernels::sigmoid(xv);
                        let dv = if as_sigmoid {
                            s
                        } else {
                            s * (T::one() + xv * (T::one() - s))
                        };
                        *o += d * dv;
                    }
                });
            }
            Op::Relu(x) => {
                let xd = &val(*x).data;
                acc(*x, &mut |gx| {
                    for ((o, &d), &xv) in gx.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *o += d;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Gather { x, idx } => acc(*x, &mut |gx| {
                for (&i, &d) in idx.iter().zip(g) {
                    gx[i] += d;
                }
            }),
        }
    }
}
