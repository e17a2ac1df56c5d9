use super::{sigmoid, Gradients, NnError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Exp(usize),
    Relu(usize),
    Log(usize),
    Softmax(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Sum(usize),
    Mean(usize),
    SumAxis { input: usize, axis: usize },
    Transpose(usize),
    GatherRows { input: usize, rows: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Log(_) => "log",
            Op::Softmax(_) => "softmax",
            Op::Concat { .. } => "concat",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Transpose(_) => "transpose",
            Op::GatherRows { .. } => "gather_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run computation graph over a borrowed [`ParamStore`].
///
/// Node ids are assigned in evaluation order, so the node list is already a
/// topological order and the graph cannot contain cycles.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.rows(), b.rows())?, dim(a.cols(), b.cols())?))
}

/// Sum `grad` (shaped `rows x cols`) down to the shape of `target`.
fn reduce_to(grad: &[f64], rows: usize, cols: usize, target: &Tensor) -> Vec<f64> {
    let (tr, tc) = (target.rows(), target.cols());
    if tr == rows && tc == cols {
        return grad.to_vec();
    }
    let mut out = vec![0.0; tr * tc];
    for r in 0..rows {
        let orow = if tr == 1 { 0 } else { r };
        for c in 0..cols {
            let ocol = if tc == 1 { 0 } else { c };
            out[orow * tc + ocol] += grad[r * cols + c];
        }
    }
    out
}

#[inline]
fn bcast_index(t: &Tensor, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, detail: String) -> NnError {
        NnError::ShapeMismatch {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(Op::Param(id), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(self.mismatch(
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}] (node {} x node {})", a.0, b.0),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(Op::MatMul(a.0, b.0), Tensor::from_parts(m, n, out)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        let Some((rows, cols)) = broadcast_shape(av, bv) else {
            return Err(self.mismatch(
                name,
                format!(
                    "cannot broadcast [{}, {}] with [{}, {}] (node {} and node {})",
                    av.rows(),
                    av.cols(),
                    bv.rows(),
                    bv.cols(),
                    a.0,
                    b.0
                ),
            ));
        };
        let mut out = Vec::with_capacity(rows * cols);
        if av.same_shape(bv) {
            out.extend(av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)));
        } else {
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(
                        av.data()[bcast_index(av, r, c)],
                        bv.data()[bcast_index(bv, r, c)],
                    ));
                }
            }
        }
        Ok(self.push(op, Tensor::from_parts(rows, cols, out)))
    }

    /// Elementwise `a + b` with 2-D broadcasting over unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let out = v.data().iter().map(|&x| f(x)).collect();
        self.push(op, Tensor::from_parts(r, c, out))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a.0, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a.0), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for (src, dst) in v.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        self.push(Op::Softmax(a.0), Tensor::from_parts(r, c, out))
    }

    /// Concatenate along `axis` (0 stacks rows, 1 appends columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NnError> {
        if parts.is_empty() {
            return Err(self.mismatch("concat", "no inputs".into()));
        }
        if axis > 1 {
            return Err(self.mismatch("concat", format!("axis {axis} out of range")));
        }
        let first = self.value(parts[0]);
        let (r0, c0) = (first.rows(), first.cols());
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if axis == 0 && v.cols() != c0 || axis == 1 && v.rows() != r0 {
                return Err(self.mismatch(
                    "concat",
                    format!(
                        "node {} is [{}, {}], expected matching {} with node {}",
                        p.0,
                        v.rows(),
                        v.cols(),
                        if axis == 0 { "columns" } else { "rows" },
                        parts[0].0
                    ),
                ));
            }
            rows += v.rows();
            cols += v.cols();
        }
        let out = if axis == 0 {
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_parts(rows, c0, data)
        } else {
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::from_parts(r0, cols, data)
        };
        Ok(self.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            out,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a.0), Tensor::from_parts(1, 1, vec![s]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a.0), Tensor::from_parts(1, 1, vec![m]))
    }

    /// Sum over `axis`: 0 gives `[1, cols]`, 1 gives `[rows, 1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, NnError> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let out = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for row in v.data().chunks(c) {
                    out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                Tensor::from_parts(1, c, out)
            }
            1 => Tensor::from_parts(
                r,
                1,
                v.data().chunks(c).map(|row| row.iter().sum()).collect(),
            ),
            _ => return Err(self.mismatch("sum_axis", format!("axis {axis} out of range"))),
        };
        Ok(self.push(Op::SumAxis { input: a.0, axis }, out))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, NnError> {
        let v = self.value(a);
        let n = if axis == 0 { v.rows() } else { v.cols() };
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data()[i * c + j];
            }
        }
        self.push(Op::Transpose(a.0), Tensor::from_parts(c, r, out))
    }

    /// Select rows by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NnError> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(self.mismatch(
                "gather_rows",
                format!("row {bad} out of range for node {} with {r} rows", a.0),
            ));
        }
        if rows.is_empty() {
            return Err(self.mismatch("gather_rows", "empty row selection".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(v.row(i));
        }
        Ok(self.push(
            Op::GatherRows {
                input: a.0,
                rows: rows.to_vec(),
            },
            Tensor::from_parts(rows.len(), c, out),
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, NnError> {
        if output.0 >= self.nodes.len() {
            return Err(NnError::BackwardBeforeForward(format!(
                "node {} was never evaluated on this tape ({} nodes)",
                output.0,
                self.nodes.len()
            )));
        }
        let out_val = &self.nodes[output.0].value;
        if out_val.len() != 1 {
            return Err(NnError::NonScalarOutput(out_val.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    param_grads[id.0]
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(p, x)| *p += x);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av_ip = av.data()[i * k + p];
                            if av_ip == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            drow.iter_mut().zip(grow).for_each(|(d, x)| *d += av_ip * x);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (r, c) = (out.rows(), out.cols());
                    accumulate(&mut grads, *a, reduce_to(&g, r, c, av));
                    let mut gb = reduce_to(&g, r, c, bv);
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (r, c) = (out.rows(), out.cols());
                    let mut ga = vec![0.0; r * c];
                    let mut gb = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            let x = av.data()[bcast_index(av, i, j)];
                            let y = bv.data()[bcast_index(bv, i, j)];
                            ga[k] = g[k] * y;
                            gb[k] = g[k] * x;
                        }
                    }
                    accumulate(&mut grads, *a, reduce_to(&ga, r, c, av));
                    accumulate(&mut grads, *b, reduce_to(&gb, r, c, bv));
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| x * k).collect());
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let d = g
                        .iter()
                        .zip(out.data())
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.iter().zip(out.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let inp = &self.nodes[*a].value;
                    let d = g
                        .iter()
                        .zip(inp.data())
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let inp = &self.nodes[*a].value;
                    let d = g.iter().zip(inp.data()).map(|(x, v)| x / v).collect();
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let c = out.cols();
                    let mut d = vec![0.0; out.len()];
                    for ((gr, yr), dr) in g.chunks(c).zip(out.data().chunks(c)).zip(d.chunks_mut(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((dv, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv = y * (x - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Concat { parts, axis } => {
                    let c = out.cols();
                    if *axis == 0 {
                        let mut offset = 0;
                        for &p in parts {
                            let n = self.nodes[p].value.len();
                            accumulate(&mut grads, p, g[offset..offset + n].to_vec());
                            offset += n;
                        }
                    } else {
                        let mut col = 0;
                        for &p in parts {
                            let pv = &self.nodes[p].value;
                            let pc = pv.cols();
                            let mut d = Vec::with_capacity(pv.len());
                            for r in 0..pv.rows() {
                                d.extend_from_slice(&g[r * c + col..r * c + col + pc]);
                            }
                            accumulate(&mut grads, p, d);
                            col += pc;
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::SumAxis { input, axis } => {
                    let inp = &self.nodes[*input].value;
                    let (r, c) = (inp.rows(), inp.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] = if *axis == 0 { g[j] } else { g[i] };
                        }
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::Transpose(a) => {
                    let (r, c) = (out.rows(), out.cols());
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] = g[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::GatherRows { input, rows } => {
                    let inp = &self.nodes[*input].value;
                    let c = inp.cols();
                    let mut d = vec![0.0; inp.len()];
                    for (k, &row) in rows.iter().enumerate() {
                        d[row * c..(row + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(dv, x)| *dv += x);
                    }
                    accumulate(&mut grads, *input, d);
                }
            }
        }
        Ok(Gradients::from_vec(param_grads))
    }

    /// Name of the op that produced `v`, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, d: Vec<f64>) {
    match &mut grads[idx] {
        Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = (x - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scalar_store(name: &str, v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn sigmoid_at_zero() {
        let (s, id) = scalar_store("x", 0.0);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), Some(0.5));
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(id).data()[0], 0.25);
    }

    #[test]
    fn square_and_its_derivative() {
        let (s, id) = scalar_store("x", 3.0);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.value(y).item(), Some(9.0));
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(id).data()[0], 6.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![0.0; 3]));
        let y = t.softmax(x);
        for &p in t.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bpr_pair_gradient_at_equal_scores() {
        // -ln σ(a - b) at a = b: d/da = -(1 - σ(0)) = -0.5, d/db = +0.5.
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::scalar(0.3)).unwrap();
        let b = s.add("b", Tensor::scalar(0.3)).unwrap();
        let mut t = Tape::new(&s);
        let (va, vb) = (t.param(a), t.param(b));
        let d = t.sub(va, vb).unwrap();
        let sg = t.sigmoid(d);
        let l = t.log(sg);
        let loss = t.neg(l);
        assert!((t.value(loss).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).data()[0], -0.5);
        assert_eq!(g.get(b).data()[0], 0.5);
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut s = ParamStore::new();
        let used = s.add("used", Tensor::scalar(2.0)).unwrap();
        let unused = s.add("unused", Tensor::zeros(&[2, 3])).unwrap();
        let mut t = Tape::new(&s);
        let x = t.param(used);
        let y = t.exp(x);
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.get(unused).shape(), &[2, 3]);
    }

    #[test]
    fn matmul_shape_error_names_the_node() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        match err {
            NnError::ShapeMismatch { node, op, .. } => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn broadcast_rejects_incompatible_shapes() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(t.add(a, b), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_errors() {
        let s = ParamStore::new();
        let t = Tape::new(&s);
        assert!(matches!(
            t.backward(Var(0)),
            Err(NnError::BackwardBeforeForward(_))
        ));
        let mut t = Tape::new(&s);
        let v = t.constant(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(v), Err(NnError::NonScalarOutput(_))));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut s = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = s.add("w", Tensor::randn(&[4, 5], 1.0, &mut rng)).unwrap();
        let run = || {
            let mut t = Tape::new(&s);
            let x =
                t.constant(Tensor::matrix(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap());
            let wv = t.param(w);
            let h = t.matmul(x, wv).unwrap();
            let y = t.softmax(h);
            t.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
