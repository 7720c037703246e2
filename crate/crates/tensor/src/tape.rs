//! Dynamic tape: eager forward execution with recorded reverse rules.
//!
//! A tape is rebuilt per forward pass and single-owner for its lifetime.
//! `Var` handles index nodes on the tape; `backward` accumulates gradients
//! for every parameter leaf reachable from the scalar loss.

use crate::store::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRowBroadcast {
        a: Var,
        b: Var,
    },
    MulRowBroadcast {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Transpose {
        a: Var,
    },
    Permute3 {
        a: Var,
        perm: [usize; 3],
    },
    Reshape {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Sigmoid {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Exp {
        a: Var,
    },
    SoftmaxLastAxis {
        a: Var,
    },
    Conv1dTime {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    ReduceSum {
        a: Var,
    },
    ReduceMean {
        a: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op, param });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, None)
    }

    /// Parameter leaf; its gradient accumulates under the parameter id.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Leaf, Some(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            matmul_into(da, db, &mut out, m, k, n, false, false);
        }
        let t = Tensor::new(vec![m, n], out).expect("matmul shape");
        Ok(self.push(t, Op::MatMul { a, b }, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_same_shape(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("zip shape");
        Ok(self.push(t, op, None))
    }

    /// `[m, n] + [n]` with the vector broadcast across rows.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.row_broadcast(a, b, "add_row_broadcast", |x, y| x + y, true)
    }

    /// `[m, n] * [n]` with the vector broadcast across rows.
    pub fn mul_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.row_broadcast(a, b, "mul_row_broadcast", |x, y| x * y, false)
    }

    fn row_broadcast(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        additive: bool,
    ) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: sa,
                rhs: sb,
            });
        }
        let n = sa[1];
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, self.value(b).data()[i % n]))
            .collect();
        let t = Tensor::new(sa, data).expect("broadcast shape");
        let op = if additive {
            Op::AddRowBroadcast { a, b }
        } else {
            Op::MulRowBroadcast { a, b }
        };
        Ok(self.push(t, op, None))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("scale shape");
        self.push(t, Op::Scale { a, factor }, None)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: sa,
                rhs: vec![],
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = src[r * n + c];
            }
        }
        let t = Tensor::new(vec![n, m], out).expect("transpose shape");
        Ok(self.push(t, Op::Transpose { a }, None))
    }

    /// Permute the axes of a rank-3 tensor.
    pub fn permute3(&mut self, a: Var, perm: [usize; 3]) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || {
            let mut p = perm;
            p.sort_unstable();
            p != [0, 1, 2]
        } {
            return Err(TensorError::ShapeMismatch {
                op: "permute3",
                lhs: sa,
                rhs: perm.to_vec(),
            });
        }
        let out = permute3_data(self.value(a), perm);
        Ok(self.push(out, Op::Permute3 { a, perm }, None))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape { a }, None))
    }

    /// Concatenate same-rank tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let first = self.shape(parts[0]).to_vec();
        let rank = first.len();
        if axis >= rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != rank
                || sp
                    .iter()
                    .enumerate()
                    .any(|(i, d)| i != axis && *d != first[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sp.to_vec(),
                });
            }
            axis_total += sp[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut offset = 0;
        for &p in parts {
            let sp = self.shape(p).to_vec();
            let block = sp[axis] * inner;
            let src = self.value(p).data();
            for o in 0..outer {
                let dst_start = o * axis_total * inner + offset * inner;
                let src_start = o * block;
                out[dst_start..dst_start + block]
                    .copy_from_slice(&src[src_start..src_start + block]);
            }
            offset += sp[axis];
        }
        let t = Tensor::new(out_shape, out).expect("concat shape");
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            None,
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("sigmoid shape");
        self.push(t, Op::Sigmoid { a }, None)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("relu shape");
        self.push(t, Op::Relu { a }, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("tanh shape");
        self.push(t, Op::Tanh { a }, None)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.exp()).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("exp shape");
        self.push(t, Op::Exp { a }, None)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last_axis(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().expect("softmax needs rank >= 1");
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(shape, data).expect("softmax shape");
        self.push(t, Op::SoftmaxLastAxis { a }, None)
    }

    /// 1-D convolution along the leading (temporal) axis with zero padding
    /// preserving length. `x`: [T, N, C_in], `kernel`: [K, C_in, C_out]
    /// (K odd), `bias`: [C_out].
    pub fn conv1d_time(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 3 || sk.len() != 3 || sb.len() != 1 || sk[1] != sx[2] || sb[0] != sk[2]
            || sk[0] % 2 == 0
        {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_time",
                lhs: sx,
                rhs: sk,
            });
        }
        let (t_len, n, ci) = (sx[0], sx[1], sx[2]);
        let (k, co) = (sk[0], sk[2]);
        let half = k / 2;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; t_len * n * co];
        for t in 0..t_len {
            for d in 0..k {
                let src_t = t as isize + d as isize - half as isize;
                if src_t < 0 || src_t >= t_len as isize {
                    continue;
                }
                let src_t = src_t as usize;
                for nn in 0..n {
                    let x_base = (src_t * n + nn) * ci;
                    let o_base = (t * n + nn) * co;
                    for c_in in 0..ci {
                        let xv = xd[x_base + c_in];
                        if xv == 0.0 {
                            continue;
                        }
                        let k_base = (d * ci + c_in) * co;
                        for c_out in 0..co {
                            out[o_base + c_out] += xv * kd[k_base + c_out];
                        }
                    }
                }
            }
        }
        for t in 0..t_len {
            for nn in 0..n {
                let o_base = (t * n + nn) * co;
                for c_out in 0..co {
                    out[o_base + c_out] += bd[c_out];
                }
            }
        }
        let tensor = Tensor::new(vec![t_len, n, co], out).expect("conv shape");
        Ok(self.push(tensor, Op::Conv1dTime { x, kernel, bias }, None))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum { a }, None)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let len = self.value(a).len().max(1);
        let s: f64 = self.value(a).data().iter().sum::<f64>() / len as f64;
        self.push(Tensor::scalar(s), Op::ReduceMean { a }, None)
    }

    /// Reverse accumulation from a scalar loss. Returns per-parameter
    /// gradients; parameters not reachable from the loss get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut adjoint: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoint[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(grad) = adjoint[id].take() else {
                continue;
            };
            self.propagate(id, &grad, &mut adjoint);
            adjoint[id] = Some(grad);
        }

        let mut grads = Gradients::zeros_like(self.store);
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, adjoint[id].take()) {
                grads.accumulate(pid, &g);
            }
        }
        Ok(grads)
    }

    fn propagate(&self, id: usize, grad: &Tensor, adjoint: &mut [Option<Tensor>]) {
        let add_grad = |adjoint: &mut [Option<Tensor>], v: Var, g: Tensor| {
            match &mut adjoint[v.0] {
                Some(existing) => {
                    for (e, n) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e += n;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = G B^T
                let mut da = vec![0.0; m * k];
                matmul_into(grad.data(), self.value(*b).data(), &mut da, m, n, k, false, true);
                add_grad(adjoint, *a, Tensor::new(sa, da).expect("grad shape"));
                // dB = A^T G
                let mut db = vec![0.0; k * n];
                matmul_into(self.value(*a).data(), grad.data(), &mut db, k, m, n, true, false);
                add_grad(adjoint, *b, Tensor::new(sb, db).expect("grad shape"));
            }
            Op::Add { a, b } => {
                add_grad(adjoint, *a, grad.clone());
                add_grad(adjoint, *b, grad.clone());
            }
            Op::Sub { a, b } => {
                add_grad(adjoint, *a, grad.clone());
                let neg: Vec<f64> = grad.data().iter().map(|g| -g).collect();
                add_grad(
                    adjoint,
                    *b,
                    Tensor::new(grad.shape().to_vec(), neg).expect("grad shape"),
                );
            }
            Op::Mul { a, b } => {
                let ga: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                let gb: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
                add_grad(adjoint, *b, Tensor::new(grad.shape().to_vec(), gb).expect("grad"));
            }
            Op::AddRowBroadcast { a, b } => {
                add_grad(adjoint, *a, grad.clone());
                let n = self.shape(*b)[0];
                let mut gb = vec![0.0; n];
                for (i, g) in grad.data().iter().enumerate() {
                    gb[i % n] += g;
                }
                add_grad(adjoint, *b, Tensor::from_vec(gb));
            }
            Op::MulRowBroadcast { a, b } => {
                let n = self.shape(*b)[0];
                let bv = self.value(*b).data();
                let ga: Vec<f64> = grad
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * bv[i % n])
                    .collect();
                let av = self.value(*a).data();
                let mut gb = vec![0.0; n];
                for (i, g) in grad.data().iter().enumerate() {
                    gb[i % n] += g * av[i];
                }
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
                add_grad(adjoint, *b, Tensor::from_vec(gb));
            }
            Op::Scale { a, factor } => {
                let ga: Vec<f64> = grad.data().iter().map(|g| g * factor).collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::Transpose { a } => {
                let sg = grad.shape();
                let (m, n) = (sg[0], sg[1]);
                let mut ga = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        ga[c * m + r] = grad.data()[r * n + c];
                    }
                }
                add_grad(adjoint, *a, Tensor::new(vec![n, m], ga).expect("grad"));
            }
            Op::Permute3 { a, perm } => {
                let mut inverse = [0usize; 3];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                add_grad(adjoint, *a, permute3_data(grad, inverse));
            }
            Op::Reshape { a } => {
                let back = grad
                    .reshaped(self.shape(*a).to_vec())
                    .expect("reshape grad");
                add_grad(adjoint, *a, back);
            }
            Op::Concat { parts, axis } => {
                let out_shape = grad.shape().to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let sp = self.shape(p).to_vec();
                    let block = sp[*axis] * inner;
                    let mut gp = vec![0.0; sp.iter().product()];
                    for o in 0..outer {
                        let src_start = o * axis_total * inner + offset * inner;
                        let dst_start = o * block;
                        gp[dst_start..dst_start + block]
                            .copy_from_slice(&grad.data()[src_start..src_start + block]);
                    }
                    offset += sp[*axis];
                    add_grad(adjoint, p, Tensor::new(sp, gp).expect("grad"));
                }
            }
            Op::Sigmoid { a } => {
                let out = self.nodes[id].value.data();
                let ga: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(out)
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::Relu { a } => {
                let input = self.value(*a).data();
                let ga: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(input)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::Tanh { a } => {
                let out = self.nodes[id].value.data();
                let ga: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(out)
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::Exp { a } => {
                let out = self.nodes[id].value.data();
                let ga: Vec<f64> = grad.data().iter().zip(out).map(|(g, e)| g * e).collect();
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::SoftmaxLastAxis { a } => {
                let out = self.nodes[id].value.data();
                let n = *grad.shape().last().expect("rank");
                let mut ga = vec![0.0; grad.len()];
                for (row, (g_row, s_row)) in grad
                    .data()
                    .chunks(n)
                    .zip(out.chunks(n))
                    .enumerate()
                {
                    let dot: f64 = g_row.iter().zip(s_row).map(|(g, s)| g * s).sum();
                    for i in 0..n {
                        ga[row * n + i] = s_row[i] * (g_row[i] - dot);
                    }
                }
                add_grad(adjoint, *a, Tensor::new(grad.shape().to_vec(), ga).expect("grad"));
            }
            Op::Conv1dTime { x, kernel, bias } => {
                let sx = self.shape(*x).to_vec();
                let sk = self.shape(*kernel).to_vec();
                let (t_len, n, ci) = (sx[0], sx[1], sx[2]);
                let (k, co) = (sk[0], sk[2]);
                let half = k / 2;
                let xd = self.value(*x).data();
                let kd = self.value(*kernel).data();
                let gd = grad.data();

                let mut gx = vec![0.0; xd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gb = vec![0.0; co];
                for t in 0..t_len {
                    for d in 0..k {
                        let src_t = t as isize + d as isize - half as isize;
                        if src_t < 0 || src_t >= t_len as isize {
                            continue;
                        }
                        let src_t = src_t as usize;
                        for nn in 0..n {
                            let x_base = (src_t * n + nn) * ci;
                            let o_base = (t * n + nn) * co;
                            for c_in in 0..ci {
                                let k_base = (d * ci + c_in) * co;
                                let xv = xd[x_base + c_in];
                                let mut acc = 0.0;
                                for c_out in 0..co {
                                    let g = gd[o_base + c_out];
                                    acc += g * kd[k_base + c_out];
                                    gk[k_base + c_out] += g * xv;
                                }
                                gx[x_base + c_in] += acc;
                            }
                        }
                    }
                }
                for t in 0..t_len {
                    for nn in 0..n {
                        let o_base = (t * n + nn) * co;
                        for c_out in 0..co {
                            gb[c_out] += gd[o_base + c_out];
                        }
                    }
                }
                add_grad(adjoint, *x, Tensor::new(sx, gx).expect("grad"));
                add_grad(adjoint, *kernel, Tensor::new(sk, gk).expect("grad"));
                add_grad(adjoint, *bias, Tensor::from_vec(gb));
            }
            Op::ReduceSum { a } => {
                let g = grad.item();
                add_grad(adjoint, *a, Tensor::filled(self.shape(*a), g));
            }
            Op::ReduceMean { a } => {
                let g = grad.item() / self.value(*a).len().max(1) as f64;
                add_grad(adjoint, *a, Tensor::filled(self.shape(*a), g));
            }
        }
    }
}

/// out[m x n] += A (m x k) * B (k x n), with optional transposes applied to
/// the logical operands (dimensions given are the logical ones).
#[allow(clippy::too_many_arguments)]
fn matmul_into(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    if !trans_a && !trans_b {
        for i in 0..m {
            for kk in 0..k {
                let av = a[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    } else if trans_a && !trans_b {
        // a physically [k, m]
        for kk in 0..k {
            let arow = &a[kk * m..(kk + 1) * m];
            let brow = &b[kk * n..(kk + 1) * n];
            for (i, av) in arow.iter().enumerate() {
                if *av == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    } else if !trans_a && trans_b {
        // b physically [n, k]
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (av, bv) in arow.iter().zip(brow) {
                    acc += av * bv;
                }
                out[i * n + j] += acc;
            }
        }
    } else {
        unreachable!("double transpose not used");
    }
}

fn permute3_data(t: &Tensor, perm: [usize; 3]) -> Tensor {
    let s = t.shape();
    let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let strides = [s[1] * s[2], s[2], 1];
    let mut out = vec![0.0; t.len()];
    let src = t.data();
    let mut idx = 0;
    for i in 0..out_shape[0] {
        for j in 0..out_shape[1] {
            for k in 0..out_shape[2] {
                let coords = [i, j, k];
                let mut src_idx = 0;
                for (axis, &p) in perm.iter().enumerate() {
                    src_idx += coords[axis] * strides[p];
                }
                out[idx] = src[src_idx];
                idx += 1;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("permute shape")
}
