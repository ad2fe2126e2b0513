//! Minimal reverse-mode differentiation over 2-D arrays.
//!
//! A [`Graph`] records operations on row-major matrices (rows are batch
//! items). Parameters are borrowed, not copied; their gradients are
//! accumulated into dense arrays by [`Graph::backward`].

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

pub type NodeId = usize;

enum Op<T> {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    OneMinus(NodeId),
    Concat(NodeId, NodeId),
    /// Rows `ids` of parameter `table`.
    Gather { table: usize, ids: Vec<usize> },
    /// `m * new + (1 - m) * old`, one mask value per row.
    Blend { new: NodeId, old: NodeId, mask: Vec<T> },
    /// Elementwise product with a constant (dropout masks).
    Scale { input: NodeId, factor: Array2<T> },
    /// Masked softmax attention; `alpha` is the saved B×S weight matrix.
    Attention {
        query: NodeId,
        keys: Vec<NodeId>,
        values: Vec<NodeId>,
        alpha: Array2<T>,
    },
    /// `Σ_b w_b · (logsumexp(l_b) − l_b[t_b])`; `probs` are the saved softmax rows.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Array2<T>,
    },
    Sum(Vec<NodeId>),
}

enum Value<'p, T> {
    Owned(Array2<T>),
    Borrowed(&'p Array2<T>),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
}

pub struct Graph<'p, T> {
    params: &'p [Array2<T>],
    nodes: Vec<Node<'p, T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p [Array2<T>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, T> {
        match &self.nodes[id].value {
            Value::Owned(a) => a.view(),
            Value::Borrowed(a) => a.view(),
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, a: Array2<T>) -> NodeId {
        self.push(a, Op::Constant)
    }

    /// A constant that is borrowed rather than copied into the graph.
    pub fn input(&mut self, a: &'p Array2<T>) -> NodeId {
        self.nodes.push(Node {
            value: Value::Borrowed(a),
            op: Op::Constant,
        });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(&self.params[idx]),
            op: Op::Param(idx),
        });
        let id = self.nodes.len() - 1;
        self.param_nodes[idx] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a 1×n bias row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(bias);
        self.push(v, Op::AddRow(a, bias))
    }

    /// `a · w + b` with `b` a bias row.
    pub fn affine(&mut self, a: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let m = self.matmul(a, w);
        self.add_row(m, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) * &self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| T::one() - x);
        self.push(v, Op::OneMinus(a))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = ndarray::concatenate(Axis(1), &[self.value(a), self.value(b)]).expect("equal row counts");
        self.push(v, Op::Concat(a, b))
    }

    pub fn gather(&mut self, table: usize, ids: &[usize]) -> NodeId {
        let v = self.params[table].select(Axis(0), ids);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn blend(&mut self, new: NodeId, old: NodeId, mask: Vec<T>) -> NodeId {
        let mut v = self.value(old).to_owned();
        for ((mut row, n), &m) in v.rows_mut().into_iter().zip(self.value(new).rows()).zip(&mask) {
            if m == T::one() {
                row.assign(&n);
            } else if m != T::zero() {
                Zip::from(&mut row).and(&n).for_each(|o, &nv| *o = m * nv + (T::one() - m) * *o);
            }
        }
        self.push(v, Op::Blend { new, old, mask })
    }

    pub fn scale(&mut self, input: NodeId, factor: Array2<T>) -> NodeId {
        let v = &self.value(input) * &factor;
        self.push(v, Op::Scale { input, factor })
    }

    /// Context vectors `Σ_s α_s · values_s` with `α = softmax_s(query · keys_s)`
    /// restricted to positions where `mask[b, s] != 0`.
    pub fn attention(&mut self, query: NodeId, keys: &[NodeId], values: &[NodeId], mask: &Array2<T>) -> NodeId {
        let q = self.value(query);
        let (b, h) = q.dim();
        let positions = keys.len();
        let mut alpha = Array2::zeros((b, positions));
        for (s, &k) in keys.iter().enumerate() {
            let kv = self.value(k);
            for r in 0..b {
                alpha[[r, s]] = q.row(r).dot(&kv.row(r));
            }
        }
        for (mut row, m) in alpha.rows_mut().into_iter().zip(mask.rows()) {
            let max = row
                .iter()
                .zip(m.iter())
                .filter(|(_, &mv)| mv != T::zero())
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (v, &mv) in row.iter_mut().zip(m.iter()) {
                *v = if mv != T::zero() { (*v - max).exp() } else { T::zero() };
                total += *v;
            }
            if total > T::zero() {
                row.mapv_inplace(|v| v / total);
            }
        }
        let mut ctx = Array2::zeros((b, h));
        for (s, &v) in values.iter().enumerate() {
            let vv = self.value(v);
            for r in 0..b {
                let a = alpha[[r, s]];
                if a != T::zero() {
                    ctx.row_mut(r).scaled_add(a, &vv.row(r));
                }
            }
        }
        self.push(
            ctx,
            Op::Attention {
                query,
                keys: keys.to_vec(),
                values: values.to_vec(),
                alpha,
            },
        )
    }

    /// Weighted sum of per-row softmax cross-entropies, as a 1×1 node.
    /// Rows with zero weight are skipped.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[T]) -> NodeId {
        let l = self.value(logits);
        let mut probs = Array2::zeros(l.raw_dim());
        let mut loss = T::zero();
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            let row = l.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row.iter()) {
                *p = (x - max).exp();
                total += *p;
            }
            probs.row_mut(r).mapv_inplace(|p| p / total);
            loss += w * (max + total.ln() - row[t]);
        }
        let v = Array2::from_elem((1, 1), loss);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let total = terms.iter().map(|&t| self.value(t)[[0, 0]]).fold(T::zero(), |a, b| a + b);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(terms.to_vec()))
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[[0, 0]]
    }

    /// Gradients of the 1×1 node `root` with respect to every parameter.
    pub fn backward(&self, root: NodeId) -> Vec<Array2<T>> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Array2::from_elem((1, 1), T::one()));
        let mut param_grads: Vec<Array2<T>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();

        fn acc<T: Scalar>(grads: &mut [Option<Array2<T>>], id: NodeId, g: Array2<T>) {
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(i) => param_grads[*i] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *bias, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.value(*b);
                    let gb = &g * &self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(id);
                    let ga = Zip::from(&g).and(&y).map_collect(|&g, &y| g * y * (T::one() - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(id);
                    let ga = Zip::from(&g).and(&y).map_collect(|&g, &y| g * (T::one() - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::OneMinus(a) => acc(&mut grads, *a, -g),
                Op::Concat(a, b) => {
                    let wa = self.value(*a).ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..wa]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., wa..]).to_owned());
                }
                Op::Gather { table, ids } => {
                    let pg = &mut param_grads[*table];
                    for (r, &i) in ids.iter().enumerate() {
                        let mut row = pg.row_mut(i);
                        row += &g.row(r);
                    }
                }
                Op::Blend { new, old, mask } => {
                    let mut gn = g.clone();
                    let mut go = g;
                    for ((mut rn, mut ro), &m) in gn.rows_mut().into_iter().zip(go.rows_mut()).zip(mask) {
                        rn.mapv_inplace(|v| v * m);
                        ro.mapv_inplace(|v| v * (T::one() - m));
                    }
                    acc(&mut grads, *new, gn);
                    acc(&mut grads, *old, go);
                }
                Op::Scale { input, factor } => acc(&mut grads, *input, &g * factor),
                Op::Attention {
                    query,
                    keys,
                    values,
                    alpha,
                } => {
                    let q = self.value(*query);
                    let (b, _) = q.dim();
                    let positions = keys.len();
                    let mut dalpha = Array2::<T>::zeros((b, positions));
                    for (s, &v) in values.iter().enumerate() {
                        let vv = self.value(v);
                        let mut gv = Array2::zeros(vv.raw_dim());
                        for r in 0..b {
                            dalpha[[r, s]] = g.row(r).dot(&vv.row(r));
                            gv.row_mut(r).scaled_add(alpha[[r, s]], &g.row(r));
                        }
                        acc(&mut grads, v, gv);
                    }
                    let mut dscore = Array2::<T>::zeros((b, positions));
                    for r in 0..b {
                        let inner = alpha.row(r).dot(&dalpha.row(r));
                        for s in 0..positions {
                            dscore[[r, s]] = alpha[[r, s]] * (dalpha[[r, s]] - inner);
                        }
                    }
                    let mut gq = Array2::zeros(q.raw_dim());
                    for (s, &k) in keys.iter().enumerate() {
                        let kv = self.value(k);
                        let mut gk = Array2::zeros(kv.raw_dim());
                        for r in 0..b {
                            let d = dscore[[r, s]];
                            gq.row_mut(r).scaled_add(d, &kv.row(r));
                            gk.row_mut(r).scaled_add(d, &q.row(r));
                        }
                        acc(&mut grads, k, gk);
                    }
                    acc(&mut grads, *query, gq);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let mut row = gl.row_mut(r);
                        if w == T::zero() {
                            row.fill(T::zero());
                            continue;
                        }
                        row[t] -= T::one();
                        row.mapv_inplace(|v| v * w * up);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        acc(&mut grads, t, g.clone());
                    }
                }
            }
        }
        param_grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Builds a loss exercising every op; returns (loss, grads).
    fn composite(params: &[Array2<f64>]) -> (f64, Vec<Array2<f64>>) {
        let mut g = Graph::new(params);
        let x = g.gather(0, &[1, 3, 1]);
        let w = g.param(1);
        let b = g.param(2);
        let h = g.affine(x, w, b);
        let s = g.sigmoid(h);
        let t = g.tanh(h);
        let om = g.one_minus(s);
        let m = g.mul(om, t);
        let sum = g.add(m, s);
        let blended = g.blend(sum, t, vec![1.0, 0.0, 0.3]);
        let scaled = g.scale(blended, Array2::from_elem((3, 4), 1.5));
        let wa = g.param(3);
        let q = g.matmul(scaled, wa);
        let keys = [blended, sum, t];
        let mask = ndarray::array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [1.0, 0.0, 0.0]];
        let ctx = g.attention(q, &keys, &keys, &mask);
        let cat = g.concat(ctx, q);
        let wo = g.param(4);
        let logits = g.matmul(cat, wo);
        let ce1 = g.cross_entropy(logits, &[0, 2, 4], &[0.5, 0.0, 0.25]);
        let ce2 = g.cross_entropy(logits, &[1, 1, 1], &[0.1, 0.2, 0.3]);
        let total = g.sum(&[ce1, ce2]);
        (g.scalar(total), g.backward(total))
    }

    #[test]
    fn all_ops_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = vec![
            rand_array(5, 3, &mut rng),
            rand_array(3, 4, &mut rng),
            rand_array(1, 4, &mut rng),
            rand_array(4, 4, &mut rng),
            rand_array(8, 5, &mut rng),
        ];
        let (_, grads) = composite(&params);
        let mut worst: f64 = 0.0;
        for p in 0..params.len() {
            for idx in 0..params[p].len() {
                let (r, c) = (idx / params[p].ncols(), idx % params[p].ncols());
                let base = params[p][[r, c]];
                let h = 1e-5 * base.abs().max(1.0);
                params[p][[r, c]] = base + h;
                let up = composite(&params).0;
                params[p][[r, c]] = base - h;
                let down = composite(&params).0;
                params[p][[r, c]] = base;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[p][[r, c]];
                let denom = analytic.abs().max(numeric.abs());
                if denom > 0.0 {
                    worst = worst.max((analytic - numeric).abs() / denom);
                }
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
        // rows 0, 2, 4 of the gathered table never appear
        assert!(grads[0].row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let params: Vec<Array2<f64>> = vec![];
        let mut g = Graph::new(&params);
        let l = g.constant(Array2::zeros((2, 7)));
        let ce = g.cross_entropy(l, &[3, 5], &[0.5, 0.5]);
        assert!((g.scalar(ce) - 7f64.ln()).abs() < 1e-12);
    }
}
