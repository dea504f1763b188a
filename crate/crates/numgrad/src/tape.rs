use std::sync::Arc;

use crate::{Matrix, NumError, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + 1·bias`, bias is a single row.
    AddRow(Var, Var),
    /// `a + c` for a constant `c` (masks).
    AddConst(Var),
    Scale(Var, f64),
    /// Elementwise product with a fixed mask (dropout).
    MaskMul(Var, Matrix),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectCols(Var, usize),
    SelectRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Matrix>,
    op: Op,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// reverse topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the leaf does not influence the root
    /// or `v` is an interior node.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` is unreachable.
    pub fn take_or_zeros(&mut self, v: Var, like: &Matrix) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumError::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a shared input without copying it. Used to bind parameters
    /// that many tapes read concurrently.
    ///
    /// # Panics
    /// Panics if `value` holds a non-finite entry.
    pub fn leaf_shared(&mut self, value: Arc<Matrix>) -> Var {
        assert!(value.is_finite(), "leaf values must be finite");
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Leaves receive gradients like any other node.
    ///
    /// # Panics
    /// Panics if `value` holds a non-finite entry.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, "leaf")
            .expect("leaf values must be finite")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        self.push(out, Op::MatMulT(a, b), "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias), "add_row")
    }

    pub fn add_const(&mut self, a: Var, c: &Matrix) -> Result<Var> {
        let out = self.value(a).zip_map(c, "add_const", |x, y| x + y)?;
        self.push(out, Op::AddConst(a), "add_const")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn mask_mul(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let out = self.value(a).zip_map(&mask, "mask_mul", |x, m| x * m)?;
        self.push(out, Op::MaskMul(a, mask), "mask_mul")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Row-wise `gamma ⊙ (x − mean) / sqrt(var + eps) + beta`; `gamma`, `beta` are `1×cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let cols = xv.cols();
        if gv.shape() != (1, cols) || bv.shape() != (1, cols) {
            return Err(NumError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape(),
                rhs: gv.shape(),
            });
        }
        let mut normed = Matrix::zeros(xv.rows(), cols);
        let mut out = Matrix::zeros(xv.rows(), cols);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normed.set(r, c, n);
                out.set(r, c, gv.data()[c] * n + bv.data()[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_cols(&mats)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::concat_rows(&mats)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn select_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let out = self.value(a).cols_slice(start, width)?;
        self.push(out, Op::SelectCols(a, start), "select_cols")
    }

    pub fn select_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let out = self.value(a).rows_slice(start, count)?;
        self.push(out, Op::SelectRows(a, start), "select_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    /// Mean of squared differences over every entry.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.ensure_same_shape(t, "mse")?;
        let n = p.data().len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Matrix::scalar(s / n), Op::Mse(pred, target), "mse")
    }

    /// Reverse-mode sweep from a `1×1` root. Every node is visited once.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(NumError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // interior gradients are consumed; only leaves keep theirs
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddRow(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g)?,
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|v| v * s))?;
                }
                Op::MaskMul(a, mask) => {
                    let d = g.zip_map(mask, "mask_mul", |v, m| v * m)?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), "relu", |v, x| if x > 0.0 { v } else { 0.0 })?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                            *out = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normed,
                    inv_std,
                } => {
                    let gam = self.value(*gamma);
                    let cols = normed.cols();
                    let n = cols as f64;
                    let mut dx = Matrix::zeros(normed.rows(), cols);
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let mut dn = vec![0.0; cols];
                    for r in 0..normed.rows() {
                        let (gr, nr) = (g.row(r), normed.row(r));
                        for c in 0..cols {
                            dgamma.data_mut()[c] += gr[c] * nr[c];
                            dbeta.data_mut()[c] += gr[c];
                            dn[c] = gr[c] * gam.data()[c];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / n;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / n;
                        let inv = inv_std[r];
                        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = inv * (dn[c] - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *gamma, dgamma)?;
                    accumulate(&mut grads, *beta, dbeta)?;
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        accumulate(&mut grads, *p, g.cols_slice(start, w)?)?;
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        accumulate(&mut grads, *p, g.rows_slice(start, h)?)?;
                        start += h;
                    }
                }
                Op::SelectCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::SelectRows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    let w = src.cols();
                    d.data_mut()[start * w..(start + g.rows()) * w].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::Sum(a) => {
                    let src = self.value(*a);
                    let s = g.data()[0];
                    accumulate(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), s))?;
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let k = 2.0 * g.data()[0] / pv.data().len() as f64;
                    let dp = pv.zip_map(tv, "mse", |a, b| k * (a - b))?;
                    let dt = dp.map(|v| -v);
                    accumulate(&mut grads, *p, dp)?;
                    accumulate(&mut grads, *t, dt)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

pub(crate) fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_symmetric_row() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![0.0, 0.0]]));
        let s = t.softmax_rows(a).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![1000.0, 0.0]]));
        let s = t.softmax_rows(a).unwrap();
        let v = t.value(s).data();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1] < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![0.3, -2.0, 5.0], vec![1e5, -1e5, 0.0]]));
        let s = t.softmax_rows(a).unwrap();
        for r in 0..2 {
            let total: f64 = t.value(s).row(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![-1.0, 2.0]]));
        let r = t.relu(a).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn add_backward_passes_gradient_to_both_inputs() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![1.0, 2.0]]));
        let b = t.leaf(m(&[vec![3.0, 4.0]]));
        let c = t.add(a, b).unwrap();
        let s = t.sum(c).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn concat_then_select_recovers_inputs() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = t.leaf(m(&[vec![5.0], vec![6.0]]));
        let c = t.concat_cols(&[a, b]).unwrap();
        let a2 = t.select_cols(c, 0, 2).unwrap();
        let b2 = t.select_cols(c, 2, 1).unwrap();
        assert_eq!(t.value(a2), t.value(a));
        assert_eq!(t.value(b2), t.value(b));
    }

    #[test]
    fn layer_norm_of_constant_vector_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[vec![4.0; 6]]));
        let g = t.leaf(Matrix::filled(1, 6, 1.0));
        let b = t.leaf(Matrix::zeros(1, 6));
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_output_moments() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[vec![1.0, -3.0, 2.5, 8.0, 0.1]]));
        let g = t.leaf(Matrix::filled(1, 5, 1.0));
        let b = t.leaf(Matrix::zeros(1, 5));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        let v = t.value(y).data();
        let mean = v.iter().sum::<f64>() / 5.0;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(a), Err(NumError::NonScalarRoot((2, 2)))));
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(2.0));
        let b = t.leaf(Matrix::scalar(3.0));
        let s = t.sum(a).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(b).is_none());
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(1e300));
        assert_eq!(t.scale(a, 1e300), Err(NumError::NonFinite("scale")));
    }
}
