use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::{ParamId, Params};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1×n` row to every row of `a`.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Multiplies every row of `a` by a `1×n` row.
    MulRow(Var, Var),
    /// `scale · a + shift`
    Affine(Var, f64),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Normalized rows, plus the per-row inverse standard deviation.
    LayerNormRows(Var, Vec<f64>),
    MeanRows(Var),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    RowRange(Var, usize),
    ColRange(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    BroadcastRows(Var),
    /// Element-wise scaling by a fixed mask (inverted dropout).
    Dropout(Var, Array2<f64>),
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

/// A tape of evaluated operations over borrowed parameters.
pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of every node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter that took part in the graph.
    pub fn params(&self) -> Vec<(ParamId, Array2<f64>)> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].clone().map(|g| (id, g)))
            .collect()
    }
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of [`gelu`]: `Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// Row vector input.
    pub fn row(&mut self, values: &[f64]) -> Var {
        self.input(Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape"))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1×n row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a 1×n row");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    /// `x · w + b` for a weight matrix and a `1×out` bias.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let wv = self.param(w);
        let y = self.matmul(x, wv);
        match b {
            Some(b) => {
                let bv = self.param(b);
                self.add_row(y, bv)
            }
            None => y,
        }
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise standardization without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNormRows(a, inv_std))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean over at least one row")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn select_row(&mut self, a: Var, i: usize) -> Var {
        let v = self.value(a).slice(s![i..i + 1, ..]).to_owned();
        self.push(v, Op::Row(a, i))
    }

    /// Rows of `table` at `indices`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let v = t.select(Axis(0), indices);
        self.push(v, Op::Gather(table, indices.to_vec()))
    }

    pub fn row_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::RowRange(a, start))
    }

    pub fn col_range(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::ColRange(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape preserves size");
        self.push(v, Op::Reshape(a))
    }

    /// Repeats a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let r = self.value(a);
        assert_eq!(r.nrows(), 1, "broadcast_rows expects a 1×n row");
        let v = r.broadcast((rows, r.ncols())).expect("broadcast").to_owned();
        self.push(v, Op::BroadcastRows(a))
    }

    /// Multiplies by a precomputed mask whose entries are `0` or `1/(1−rate)`.
    pub fn dropout(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    /// Propagates the given seed gradients back through the tape.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::MulRow(a, r) => {
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *r, dr);
                    accumulate(&mut grads, *a, &g * self.value(*r));
                }
                Op::Affine(a, scale) => accumulate(&mut grads, *a, g.mapv(|x| x * scale)),
                Op::Gelu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| *d *= gelu_grad(x));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(&*node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &*node.value;
                    let mut d = g.clone();
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d = y * (*d - dot));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &*node.value;
                    let n = y.ncols() as f64;
                    let mut d = g.clone();
                    for ((mut drow, yrow), inv) in d.rows_mut().into_iter().zip(y.rows()).zip(inv_std) {
                        let mean_g = drow.sum() / n;
                        let mean_gy: f64 = drow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum::<f64>() / n;
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &y| *d = inv * (*d - mean_g - y * mean_gy));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let d = g.broadcast(self.value(*a).dim()).expect("broadcast").mapv(|x| x / rows as f64);
                    accumulate(&mut grads, *a, d);
                }
                Op::Row(a, i) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*i..*i + 1, ..]).assign(&g);
                    accumulate(&mut grads, *a, d);
                }
                Op::Gather(t, idx) => {
                    let mut d = Array2::zeros(self.value(*t).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *t, d);
                }
                Op::RowRange(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, d);
                }
                Op::ColRange(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let r = self.value(*p).nrows();
                        accumulate(&mut grads, *p, g.slice(s![at..at + r, ..]).to_owned());
                        at += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let c = self.value(*p).ncols();
                        accumulate(&mut grads, *p, g.slice(s![.., at..at + c]).to_owned());
                        at += c;
                    }
                }
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let d = Array2::from_shape_vec(self.value(*a).dim(), flat).expect("reshape");
                    accumulate(&mut grads, *a, d);
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Dropout(a, mask) => accumulate(&mut grads, *a, &g * mask),
            }
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, usize)> = self.param_vars.iter().map(|(id, v)| (*id, v.0)).collect();
        params.sort();
        Gradients { grads, params }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Checks `d(sum(w ⊙ f(x)))/dx` against central differences, where `w`
    /// is a fixed random weighting of the output.
    fn check_unary(build: impl Fn(&mut Graph, Var) -> Var, x: Array2<f64>) {
        let params = Params::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let eval = |x: &Array2<f64>| {
            let mut g = Graph::new(&params);
            let xv = g.input(x.clone());
            let y = build(&mut g, xv);
            (g.value(y).clone(), g, xv, y)
        };
        let (y0, g, xv, y) = eval(&x);
        let w = Array2::from_shape_simple_fn(y0.dim(), || rng.gen_range(-1.0..1.0));
        let analytic = g.backward(&[(y, w.clone())]).of(xv).cloned().unwrap();
        let h = 1e-6;
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            let fp = (&eval(&xp).0 * &w).sum();
            let fm = (&eval(&xm).0 * &w).sum();
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[[r, c]];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + a.abs()),
                "entry {idx}: analytic {a}, numeric {numeric}"
            );
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn elementwise_gradients() {
        check_unary(|g, x| g.gelu(x), sample(3, 4, 1));
        check_unary(|g, x| g.sigmoid(x), sample(3, 4, 2));
        check_unary(|g, x| g.relu(x), sample(3, 4, 3));
        check_unary(|g, x| g.affine(x, -1.5, 0.3), sample(2, 2, 4));
    }

    #[test]
    fn row_operation_gradients() {
        check_unary(|g, x| g.softmax_rows(x), sample(3, 5, 5));
        check_unary(|g, x| g.layer_norm_rows(x, 1e-5), sample(3, 5, 6));
        check_unary(|g, x| g.mean_rows(x), sample(4, 3, 7));
        check_unary(|g, x| g.select_row(x, 2), sample(4, 3, 8));
        check_unary(|g, x| g.gather(x, &[2, 0, 2]), sample(4, 3, 9));
        check_unary(|g, x| g.row_range(x, 1, 3), sample(4, 3, 10));
        check_unary(|g, x| g.col_range(x, 1, 3), sample(4, 3, 11));
        check_unary(|g, x| g.reshape(x, 2, 6), sample(4, 3, 12));
        check_unary(|g, x| {
            let r = g.select_row(x, 0);
            g.broadcast_rows(r, 3)
        }, sample(2, 3, 13));
    }

    #[test]
    fn binary_gradients() {
        let other = sample(3, 4, 20);
        let o = other.clone();
        check_unary(move |g, x| {
            let b = g.input(o.clone());
            g.matmul_t(x, b)
        }, sample(2, 4, 21));
        let o = other.clone();
        check_unary(move |g, x| {
            let b = g.input(o.t().to_owned());
            g.matmul(x, b)
        }, sample(2, 4, 22));
        let o = other.clone();
        check_unary(move |g, x| {
            let b = g.input(o.clone());
            let y = g.mul(x, b);
            g.add(y, x)
        }, sample(3, 4, 23));
        check_unary(|g, x| {
            let r = g.select_row(x, 1);
            let y = g.mul_row(x, r);
            g.add_row(y, r)
        }, sample(3, 4, 24));
        check_unary(|g, x| {
            let a = g.col_range(x, 0, 2);
            let b = g.col_range(x, 2, 4);
            let c = g.concat_cols(&[b, a]);
            g.concat_rows(&[c, x])
        }, sample(3, 4, 25));
        let mask = Array2::from_shape_vec((1, 4), vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        check_unary(move |g, x| g.dropout(x, mask.clone()), sample(1, 4, 26));
    }

    #[test]
    fn params_enter_once_and_get_gradients() {
        let mut p = Params::new();
        let w = p.add("w", Array2::from_elem((2, 2), 1.5));
        let mut g = Graph::new(&p);
        let x = g.row(&[1.0, 2.0]);
        let y1 = g.linear(x, w, None);
        let y2 = g.linear(x, w, None);
        let y = g.add(y1, y2);
        let grads = g.backward(&[(y, Array2::ones((1, 2)))]).params();
        assert_eq!(grads.len(), 1);
        // d/dw of sum(2 x w) = 2 xᵀ 1
        assert_eq!(grads[0].1, ndarray::array![[2.0, 2.0], [4.0, 4.0]]);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
    }
}
