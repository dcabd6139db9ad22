//! A small reverse-mode tape over `f64` vectors.
//!
//! Every node holds a dense vector. Matrices live only in the parameter
//! store and are consumed by the matrix-vector ops, so the tape never
//! copies a weight matrix.

use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    /// One row of a parameter matrix.
    Row(ParamId, usize),
    MatVec(ParamId, Var),
    MatTVec(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    /// `q · k_i` for every key.
    Scores(Var, Vec<Var>),
    Softmax(Var),
    /// `Σ w_i v_i` with `w` a vector node.
    WeightedSum(Var, Vec<Var>),
    Sum(Vec<Var>),
    /// Scalar node times vector node.
    ScaleBy(Var, Var),
    /// `out[idx[i]] += src[i]`
    Scatter(Var, Vec<usize>),
    Pick(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Computation graph reading weights from a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).to_vec();
        self.push(value, Op::Param(id))
    }

    pub fn row(&mut self, id: ParamId, r: usize) -> Var {
        let (rows, cols) = self.params.shape(id);
        assert!(r < rows, "row {r} out of {rows}");
        let value = self.params.get(id)[r * cols..(r + 1) * cols].to_vec();
        self.push(value, Op::Row(id, r))
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Var {
        let (rows, cols) = self.params.shape(w);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), cols, "matvec {}", self.params.name(w));
        let wv = self.params.get(w);
        let value = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(value, Op::MatVec(w, x))
    }

    pub fn mattvec(&mut self, w: ParamId, x: Var) -> Var {
        let (rows, cols) = self.params.shape(w);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), rows, "mattvec {}", self.params.name(w));
        let wv = self.params.get(w);
        let mut value = vec![0.0; cols];
        for (r, &xr) in xv.iter().enumerate() {
            for (o, w) in value.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                *o += w * xr;
            }
        }
        self.push(value, Op::MatTVec(w, x))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len());
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|x| f(*x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice(a, start))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip(a, b, |x, y| x * y).iter().sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn scores(&mut self, q: Var, keys: &[Var]) -> Var {
        let qv = &self.nodes[q.0].value;
        let v = keys
            .iter()
            .map(|k| {
                let kv = &self.nodes[k.0].value;
                assert_eq!(kv.len(), qv.len());
                qv.iter().zip(kv).map(|(a, b)| a * b).sum()
            })
            .collect();
        self.push(v, Op::Scores(q, keys.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(&self.nodes[a.0].value);
        self.push(v, Op::Softmax(a))
    }

    pub fn weighted_sum(&mut self, w: Var, vs: &[Var]) -> Var {
        let wv = &self.nodes[w.0].value;
        assert_eq!(wv.len(), vs.len());
        let n = self.nodes[vs[0].0].value.len();
        let mut out = vec![0.0; n];
        for (wi, v) in wv.iter().zip(vs) {
            for (o, x) in out.iter_mut().zip(&self.nodes[v.0].value) {
                *o += wi * x;
            }
        }
        self.push(out, Op::WeightedSum(w, vs.to_vec()))
    }

    pub fn sum(&mut self, vs: &[Var]) -> Var {
        let n = self.nodes[vs[0].0].value.len();
        let mut out = vec![0.0; n];
        for v in vs {
            for (o, x) in out.iter_mut().zip(&self.nodes[v.0].value) {
                *o += x;
            }
        }
        self.push(out, Op::Sum(vs.to_vec()))
    }

    pub fn mean(&mut self, vs: &[Var]) -> Var {
        let s = self.sum(vs);
        self.scale(s, 1.0 / vs.len() as f64)
    }

    pub fn scale_by(&mut self, s: Var, v: Var) -> Var {
        let c = self.scalar(s);
        let out = self.map(v, |x| x * c);
        self.push(out, Op::ScaleBy(s, v))
    }

    pub fn scatter(&mut self, src: Var, idx: &[usize], len: usize) -> Var {
        let sv = &self.nodes[src.0].value;
        assert_eq!(sv.len(), idx.len());
        let mut out = vec![0.0; len];
        for (x, &i) in sv.iter().zip(idx) {
            out[i] += x;
        }
        self.push(out, Op::Scatter(src, idx.to_vec()))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let v = vec![self.nodes[a.0].value[i]];
        self.push(v, Op::Pick(a, i))
    }

    /// Affine map `W x + b`.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let wx = self.matvec(w, x);
        let bv = self.param(b);
        self.add(wx, bv)
    }

    /// Reverse sweep from the given `(node, d loss / d node)` seeds.
    pub fn backward(&self, seeds: &[(Var, f64)]) -> Gradients {
        let mut grads = Gradients::zeros(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for &(v, g) in seeds {
            let n = self.nodes[v.0].value.len();
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; n]);
            for x in slot.iter_mut() {
                *x += g;
            }
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, f: &dyn Fn(usize) -> f64, adj: &mut Vec<Option<Vec<f64>>>| {
                let n = self.nodes[v.0].value.len();
                let slot = adj[v.0].get_or_insert_with(|| vec![0.0; n]);
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += f(i);
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, b) in grads.data[id.0].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Row(id, r) => {
                    let cols = g.len();
                    for (a, b) in grads.data[id.0][r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(w, x) => {
                    let (rows, cols) = self.params.shape(*w);
                    let wv = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    let gw = &mut grads.data[w.0];
                    for r in 0..rows {
                        if g[r] != 0.0 {
                            for c in 0..cols {
                                gw[r * cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    let slot = adj[x.0].get_or_insert_with(|| vec![0.0; cols]);
                    for r in 0..rows {
                        if g[r] != 0.0 {
                            for (s, w) in slot.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *s += g[r] * w;
                            }
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let (rows, cols) = self.params.shape(*w);
                    let wv = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    let gw = &mut grads.data[w.0];
                    for r in 0..rows {
                        for c in 0..cols {
                            gw[r * cols + c] += xv[r] * g[c];
                        }
                    }
                    let slot = adj[x.0].get_or_insert_with(|| vec![0.0; rows]);
                    for (r, s) in slot.iter_mut().enumerate() {
                        *s += wv[r * cols..(r + 1) * cols].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, &|i| g[i], &mut adj);
                    acc(*b, &|i| g[i], &mut adj);
                }
                Op::Sub(a, b) => {
                    acc(*a, &|i| g[i], &mut adj);
                    acc(*b, &|i| -g[i], &mut adj);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &|i| g[i] * bv[i], &mut adj);
                    acc(*b, &|i| g[i] * av[i], &mut adj);
                }
                Op::Scale(a, c) => acc(*a, &|i| g[i] * c, &mut adj),
                Op::OneMinus(a) => acc(*a, &|i| -g[i], &mut adj),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &|i| g[i] * y[i] * (1.0 - y[i]), &mut adj);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &|i| g[i] * (1.0 - y[i] * y[i]), &mut adj);
                }
                Op::Log(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, &|i| g[i] / x[i], &mut adj);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(*p, &|i| g[off + i], &mut adj);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let (s, len) = (*start, g.len());
                    acc(*a, &|i| if i >= s && i < s + len { g[i - s] } else { 0.0 }, &mut adj);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &|i| g[0] * bv[i], &mut adj);
                    acc(*b, &|i| g[0] * av[i], &mut adj);
                }
                Op::Scores(q, keys) => {
                    let qv = &self.nodes[q.0].value;
                    for (j, k) in keys.iter().enumerate() {
                        if g[j] == 0.0 {
                            continue;
                        }
                        let kv = &self.nodes[k.0].value;
                        acc(*q, &|i| g[j] * kv[i], &mut adj);
                        acc(*k, &|i| g[j] * qv[i], &mut adj);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = y.iter().zip(&g).map(|(p, d)| p * d).sum();
                    acc(*a, &|i| y[i] * (g[i] - dot), &mut adj);
                }
                Op::WeightedSum(w, vs) => {
                    let wv = &self.nodes[w.0].value;
                    let dw: Vec<f64> = vs
                        .iter()
                        .map(|v| self.nodes[v.0].value.iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*w, &|i| dw[i], &mut adj);
                    for (j, v) in vs.iter().enumerate() {
                        let c = wv[j];
                        acc(*v, &|i| g[i] * c, &mut adj);
                    }
                }
                Op::Sum(vs) => {
                    for v in vs {
                        acc(*v, &|i| g[i], &mut adj);
                    }
                }
                Op::ScaleBy(s, v) => {
                    let c = self.nodes[s.0].value[0];
                    let vv = &self.nodes[v.0].value;
                    let ds: f64 = vv.iter().zip(&g).map(|(a, b)| a * b).sum();
                    acc(*s, &|_| ds, &mut adj);
                    acc(*v, &|i| g[i] * c, &mut adj);
                }
                Op::Scatter(src, idx) => acc(*src, &|i| g[idx[i]], &mut adj),
                Op::Pick(a, j) => {
                    let j = *j;
                    acc(*a, &|i| if i == j { g[0] } else { 0.0 }, &mut adj);
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of every parameter scalar.
    fn check(params: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(params);
            let out = f(&mut g);
            g.backward(&[(out, 1.0)])
        };
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            for j in 0..params.get(id).len() {
                let orig = params.get(id)[j];
                let eval = |p: &ParamStore| {
                    let mut g = Graph::new(p);
                    let out = f(&mut g);
                    g.scalar(out)
                };
                params.get_mut(id)[j] = orig + 1e-5;
                let up = eval(params);
                params.get_mut(id)[j] = orig - 1e-5;
                let down = eval(params);
                params.get_mut(id)[j] = orig;
                let numeric = (up - down) / 2e-5;
                let a = analytic.get(id)[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                assert!(rel < 1e-5, "{} [{j}]: {a} vs {numeric}", params.name(id));
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut p = ParamStore::new();
        let w = p.add("w", 3, 4);
        let v = p.add("v", 3, 4);
        let w2 = p.add("w2", 3, 6);
        let b = p.add("b", 3, 1);
        let e = p.add("e", 5, 3);
        p.init_uniform(0.5, 11);
        check(&mut p, |g| {
            let x = g.input(vec![0.3, -0.2, 0.9, 0.1]);
            let h = g.linear(w, b, x);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let m = g.mul(t, s);
            let r = g.row(e, 2);
            let r2 = g.row(e, 4);
            let sc = g.scores(m, &[r, r2, t]);
            let a = g.softmax(sc);
            let ws = g.weighted_sum(a, &[r, r2, t]);
            let u = g.mattvec(v, ws);
            let u = g.slice(u, 1, 3);
            let cat = g.concat(&[u, ws]);
            let z = g.matvec(w2, cat);
            let d = g.dot(z, r);
            let sig = g.sigmoid(d);
            let om = g.one_minus(sig);
            let sb = g.scale_by(om, z);
            let diff = g.sub(sb, r2);
            let sm = g.softmax(diff);
            let sct = g.scatter(sm, &[0, 1, 0], 2);
            let total = g.sum(&[sct, sct]);
            let total = g.scale(total, 0.5);
            let pk = g.pick(total, 1);
            g.log(pk)
        });
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
