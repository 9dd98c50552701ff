//! Reverse-mode differentiation over 2-D matrices.

use super::real::{Mat, Real};

pub type Var = usize;

enum Op<T> {
    Leaf,
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, T),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Softmax(Var),
    Dropout { x: Var, mask: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Rows { x: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    NormalizeRows { x: Var, norms: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Mean(Vec<Var>),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
}

/// Records operations so that gradients of a scalar can be propagated back
/// to the leaves.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v].value
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table].value;
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a].value.clone();
        out.add_assign(&self.nodes[b].value);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.nodes[a].value.clone();
        let b = &self.nodes[bias].value;
        assert_eq!((b.rows, b.cols), (1, out.cols));
        for r in 0..out.rows {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.cols, y.rows, "matmul inner dimension");
        let mut out = Mat::zeros(x.rows, y.cols);
        T::gemm(x.rows, x.cols, y.cols, &x.data, false, &y.data, false, T::zero(), &mut out.data);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(x.cols, y.cols, "matmul_t inner dimension");
        let mut out = Mat::zeros(x.rows, y.rows);
        T::gemm(x.rows, x.cols, y.rows, &x.data, false, &y.data, true, T::zero(), &mut out.data);
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.nodes[a].value.clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xv = &self.nodes[x].value;
        let (gv, bv) = (&self.nodes[g].value, &self.nodes[b].value);
        let n = xv.cols;
        let inv_n = T::of(1.0 / n as f64);
        let mut out = Mat::zeros(xv.rows, n);
        let mut xhat = vec![T::zero(); xv.rows * n];
        let mut rstd = vec![T::zero(); xv.rows];
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_n;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out.data[r * n + c] = h * gv.data[c] + bv.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x].value.clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise softmax. With `causal`, row `i` only sees columns `<= i`.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let xv = &self.nodes[x].value;
        let mut out = Mat::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let visible = if causal { (r + 1).min(xv.cols) } else { xv.cols };
            let row = &xv.row(r)[..visible];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let o = out.row_mut(r);
            let mut sum = T::zero();
            for c in 0..visible {
                o[c] = (row[c] - max).exp();
                sum += o[c];
            }
            for v in &mut o[..visible] {
                *v /= sum;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Multiplies by a fixed mask of `0` or `1 / (1 - p)` entries.
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Var {
        let mut out = self.nodes[x].value.clone();
        assert_eq!(mask.len(), out.data.len());
        out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x].value;
        let mut out = Mat::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = &self.nodes[p].value;
                out.row_mut(r)[c0..c0 + pv.cols].copy_from_slice(pv.row(r));
                c0 += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = &self.nodes[x].value;
        let mut out = Mat::zeros(rows.len(), xv.cols);
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).copy_from_slice(xv.row(r));
        }
        self.push(out, Op::Rows { x, rows: rows.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.nodes[parts[0]].value.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            assert_eq!(pv.cols, cols);
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Scales each row to unit Euclidean norm. Rows must be nonzero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x].value;
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let n = xv.row(r).iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            norms.push(n);
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        self.push(out, Op::NormalizeRows { x, norms })
    }

    /// Mean over rows of `-log softmax(logits)[target]`, as a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = &self.nodes[logits].value;
        assert_eq!(lv.rows, targets.len());
        let mut probs = vec![T::zero(); lv.data.len()];
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
            let lse = max + sum.ln();
            total += lse - row[t];
            for (c, &v) in row.iter().enumerate() {
                probs[r * lv.cols + c] = (v - lse).exp();
            }
        }
        let n = T::of(targets.len() as f64);
        self.push(
            Mat::scalar(total / n),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean of 1×1 values.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        let n = T::of(parts.len() as f64);
        let sum = parts.iter().fold(T::zero(), |s, &p| s + self.nodes[p].value.data[0]);
        self.push(Mat::scalar(sum / n), Op::Mean(parts.to_vec()))
    }

    /// Gradients of the 1×1 node `out` with respect to every node. Entries
    /// for nodes that do not influence `out` are `None`.
    pub fn backward(&self, out: Var) -> Vec<Option<Mat<T>>> {
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Mat::scalar(T::one()));
        for i in (0..=out).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        grads
    }

    fn propagate(&self, i: Var, dy: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Gather { table, ids } => {
                let g = slot(grads, &self.nodes, *table);
                for (r, &id) in ids.iter().enumerate() {
                    for (a, b) in g.row_mut(id).iter_mut().zip(dy.row(r)) {
                        *a += *b;
                    }
                }
            }
            Op::Add(a, b) => {
                slot(grads, &self.nodes, *a).add_assign(dy);
                slot(grads, &self.nodes, *b).add_assign(dy);
            }
            Op::AddRow(a, bias) => {
                slot(grads, &self.nodes, *a).add_assign(dy);
                let g = slot(grads, &self.nodes, *bias);
                for r in 0..dy.rows {
                    for (x, y) in g.data.iter_mut().zip(dy.row(r)) {
                        *x += *y;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                T::gemm(m, n, k, &dy.data, false, &bv.data, true, T::one(), &mut slot(grads, &self.nodes, *a).data);
                T::gemm(k, m, n, &av.data, true, &dy.data, false, T::one(), &mut slot(grads, &self.nodes, *b).data);
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows, av.cols, bv.rows);
                T::gemm(m, n, k, &dy.data, false, &bv.data, false, T::one(), &mut slot(grads, &self.nodes, *a).data);
                T::gemm(n, m, k, &dy.data, true, &av.data, false, T::one(), &mut slot(grads, &self.nodes, *b).data);
            }
            Op::Scale(a, s) => {
                let g = slot(grads, &self.nodes, *a);
                for (x, y) in g.data.iter_mut().zip(&dy.data) {
                    *x += *y * *s;
                }
            }
            Op::LayerNorm { x, g, b, xhat, rstd } => {
                let n = dy.cols;
                let gv = &self.nodes[*g].value;
                let inv_n = T::of(1.0 / n as f64);
                {
                    let gg = slot(grads, &self.nodes, *g);
                    for r in 0..dy.rows {
                        for c in 0..n {
                            gg.data[c] += dy.data[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                {
                    let gb = slot(grads, &self.nodes, *b);
                    for r in 0..dy.rows {
                        for c in 0..n {
                            gb.data[c] += dy.data[r * n + c];
                        }
                    }
                }
                let gx = slot(grads, &self.nodes, *x);
                for r in 0..dy.rows {
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for c in 0..n {
                        let d = dy.data[r * n + c] * gv.data[c];
                        mean_d += d;
                        mean_dx += d * xhat[r * n + c];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for c in 0..n {
                        let d = dy.data[r * n + c] * gv.data[c];
                        gx.data[r * n + c] += rstd[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = &self.nodes[*x].value;
                let g = slot(grads, &self.nodes, *x);
                for ((a, &v), &d) in g.data.iter_mut().zip(&xv.data).zip(&dy.data) {
                    *a += d * gelu_grad(v);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let g = slot(grads, &self.nodes, *x);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let dr = dy.row(r);
                    let dot = yr.iter().zip(dr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                        *gv += yr[c] * (dr[c] - dot);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let g = slot(grads, &self.nodes, *x);
                for ((a, &d), &m) in g.data.iter_mut().zip(&dy.data).zip(mask) {
                    *a += d * m;
                }
            }
            Op::SliceCols { x, start } => {
                let g = slot(grads, &self.nodes, *x);
                for r in 0..dy.rows {
                    for (a, &d) in g.row_mut(r)[*start..*start + dy.cols].iter_mut().zip(dy.row(r)) {
                        *a += d;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let g = slot(grads, &self.nodes, p);
                    let w = g.cols;
                    for r in 0..dy.rows {
                        for (a, &d) in g.row_mut(r).iter_mut().zip(&dy.row(r)[c0..c0 + w]) {
                            *a += d;
                        }
                    }
                    c0 += w;
                }
            }
            Op::Rows { x, rows } => {
                let g = slot(grads, &self.nodes, *x);
                for (k, &r) in rows.iter().enumerate() {
                    for (a, &d) in g.row_mut(r).iter_mut().zip(dy.row(k)) {
                        *a += d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let g = slot(grads, &self.nodes, p);
                    let len = g.data.len();
                    let off = r0 * dy.cols;
                    for (a, &d) in g.data.iter_mut().zip(&dy.data[off..off + len]) {
                        *a += d;
                    }
                    r0 += len / dy.cols;
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let g = slot(grads, &self.nodes, *x);
                for (r, &norm) in norms.iter().enumerate().take(y.rows) {
                    let yr = y.row(r);
                    let dr = dy.row(r);
                    let dot = yr.iter().zip(dr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                    for (c, gv) in g.row_mut(r).iter_mut().enumerate() {
                        *gv += (dr[c] - yr[c] * dot) / norm;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = dy.data[0] / T::of(targets.len() as f64);
                let g = slot(grads, &self.nodes, *logits);
                let cols = g.cols;
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..cols {
                        let onehot = if c == t { T::one() } else { T::zero() };
                        g.data[r * cols + c] += (probs[r * cols + c] - onehot) * scale;
                    }
                }
            }
            Op::Mean(parts) => {
                let share = dy.data[0] / T::of(parts.len() as f64);
                for &p in parts {
                    slot(grads, &self.nodes, p).data[0] += share;
                }
            }
        }
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Mat<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Mat<T> {
    let (r, c) = nodes[v].value.shape();
    grads[v].get_or_insert_with(|| Mat::zeros(r, c))
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Checks every leaf gradient of `f` by central differences.
    fn check(leaves: Vec<Mat<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let run = |vals: &[Mat<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|m| t.leaf(m.clone())).collect();
            let out = f(&mut t, &vars);
            (t, vars, out)
        };
        let (t, vars, out) = run(&leaves);
        let grads = t.backward(out);
        let h = 1e-5;
        for (li, &v) in vars.iter().enumerate() {
            let analytic = grads[v].clone().unwrap_or_else(|| Mat::zeros(leaves[li].rows, leaves[li].cols));
            for k in 0..leaves[li].data.len() {
                let mut plus = leaves.clone();
                plus[li].data[k] += h;
                let mut minus = leaves.clone();
                minus[li].data[k] -= h;
                let (tp, _, op) = run(&plus);
                let (tm, _, om) = run(&minus);
                let numeric = (tp.value(op).data[0] - tm.value(om).data[0]) / (2.0 * h);
                let a = analytic.data[k];
                assert!((a - numeric).abs() < 1e-6 * (1.0 + numeric.abs()), "leaf {li}[{k}]: {a} vs {numeric}");
            }
        }
    }

    fn m(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_and_friends() {
        check(vec![m(3, 4, 1), m(4, 2, 2), m(1, 2, 3)], |t, v| {
            let p = t.matmul(v[0], v[1]);
            let q = t.add_row(p, v[2]);
            let g = t.gelu(q);
            t.cross_entropy(g, &[0, 1, 1])
        });
        check(vec![m(3, 4, 4), m(5, 4, 5)], |t, v| {
            let p = t.matmul_t(v[0], v[1]);
            let s = t.scale(p, 0.7);
            t.cross_entropy(s, &[4, 0, 2])
        });
    }

    #[test]
    fn attention_pieces() {
        check(vec![m(4, 6, 6), m(4, 6, 7)], |t, v| {
            let a = t.slice_cols(v[0], 0, 3);
            let b = t.slice_cols(v[1], 3, 3);
            let s = t.matmul_t(a, b);
            let p = t.softmax(s, true);
            let o = t.matmul(p, b);
            let c = t.concat_cols(&[o, a]);
            t.cross_entropy(c, &[0, 5, 2, 3])
        });
    }

    #[test]
    fn norms_rows_and_gather() {
        check(vec![m(5, 3, 8), m(1, 3, 9), m(1, 3, 10)], |t, v| {
            let e = t.gather(v[0], &[1, 1, 4]);
            let n = t.layer_norm(e, v[1], v[2]);
            let r0 = t.rows(n, &[0]);
            let r2 = t.rows(n, &[2, 1]);
            let stack = t.concat_rows(&[r0, r2]);
            let u = t.normalize_rows(stack);
            let d = t.dropout(u, vec![2.0, 0.0, 2.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
            let a = t.cross_entropy(d, &[0, 1, 2]);
            let b = t.cross_entropy(stack, &[2, 2, 0]);
            t.mean(&[a, b])
        });
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(m(3, 3, 11));
        let p = t.softmax(x, true);
        let v = t.value(p);
        assert_eq!(v.at(0, 1), 0.0);
        assert_eq!(v.at(1, 2), 0.0);
        for r in 0..3 {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
