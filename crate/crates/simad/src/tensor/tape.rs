use std::cell::RefCell;

use super::{numel_of, Elem, Tensor};

/// Recorded operation of a tape node. Indices refer to earlier nodes.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Softmax { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: Elem },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: Elem },
    AddScalar { x: usize },
    Relu { x: usize },
    MeanAll { x: usize },
    Mse { a: usize, b: usize },
    CosineLast { a: usize, b: usize, eps: Elem },
    Reshape { x: usize },
    TransposeLast2 { x: usize },
    ConcatLast { parts: Vec<usize> },
    SliceLast { x: usize, start: usize },
    BroadcastAdd { x: usize, t: usize },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<Elem>,
    grad: Option<Vec<Elem>>,
    op: Op,
}

/// A Wengert tape: ops run eagerly and append one node each. A single tape is
/// not thread-safe; independent tapes may live on different threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node. Cheap to copy; all arithmetic goes through methods
/// that record onto the owning tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<Elem>, op: Op) -> Var<'_> {
        debug_assert_eq!(numel_of(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, grad: None, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Record a differentiable leaf (parameter or graph input).
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// Record a constant leaf. Identical to [`Tape::leaf`] mechanically; the
    /// distinction is documentation (its gradient is simply never read).
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t)
    }

    /// Accumulated gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        assert!(std::ptr::eq(self, v.tape), "var belongs to a different tape");
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        n.grad.as_ref().map(|g| Tensor::new(n.shape.clone(), g.clone()))
    }

    /// Reverse sweep from a scalar loss. Each call propagates a unit seed and
    /// adds the result into the persistent per-node gradients, so calling
    /// backward twice doubles every gradient; there is no implicit reset.
    pub fn backward(&self, loss: Var<'_>) {
        assert!(std::ptr::eq(self, loss.tape), "var belongs to a different tape");
        let mut nodes = self.nodes.borrow_mut();
        let nodes = &mut *nodes;
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.id].shape
        );

        // This call's gradients, kept separate from the accumulated ones so
        // repeated calls do not re-propagate earlier seeds.
        let mut local: Vec<Option<Vec<Elem>>> = (0..=loss.id).map(|_| None).collect();
        local[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let g = match &local[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let spec = MmSpec::infer(&nodes[a].shape, &nodes[b].shape);
                    // dA += dC . B^T   (sum over batch when A is unbatched)
                    let mut da = vec![0.0; nodes[a].value.len()];
                    mm(
                        &g, spec.out_batched(), false,
                        &nodes[b].value, spec.b_batched, true,
                        &mut da, spec.a_batched,
                        spec.bsz, spec.m, spec.n, spec.k,
                    );
                    add_into(&mut local, a, nodes[a].value.len(), None, &da);
                    // dB += A^T . dC
                    let mut db = vec![0.0; nodes[b].value.len()];
                    mm(
                        &nodes[a].value, spec.a_batched, true,
                        &g, spec.out_batched(), false,
                        &mut db, spec.b_batched,
                        spec.bsz, spec.k, spec.m, spec.n,
                    );
                    add_into(&mut local, b, nodes[b].value.len(), None, &db);
                }
                Op::Softmax { x } => {
                    let y = &nodes[id].value;
                    let k = *nodes[id].shape.last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..y.len() / k {
                        let row = r * k;
                        let mut s = 0.0f64;
                        for i in 0..k {
                            s += g[row + i] as f64 * y[row + i] as f64;
                        }
                        for i in 0..k {
                            dx[row + i] = y[row + i] * (g[row + i] - s as Elem);
                        }
                    }
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let k = *nodes[x].shape.last().unwrap();
                    let rows = nodes[x].value.len() / k;
                    let mut dx = vec![0.0; nodes[x].value.len()];
                    let mut dgain = vec![0.0; k];
                    let mut dbias = vec![0.0; k];
                    {
                        let xv = &nodes[x].value;
                        let gv = &nodes[gain].value;
                        for r in 0..rows {
                            let row = r * k;
                            let (mu, inv) = row_stats(&xv[row..row + k], eps);
                            let mut mean_q = 0.0f64;
                            let mut mean_qx = 0.0f64;
                            let mut xhat = vec![0.0f64; k];
                            let mut q = vec![0.0f64; k];
                            for i in 0..k {
                                xhat[i] = (xv[row + i] as f64 - mu) * inv;
                                q[i] = g[row + i] as f64 * gv[i] as f64;
                                mean_q += q[i];
                                mean_qx += q[i] * xhat[i];
                                dgain[i] += (g[row + i] as f64 * xhat[i]) as Elem;
                                dbias[i] += g[row + i];
                            }
                            mean_q /= k as f64;
                            mean_qx /= k as f64;
                            for i in 0..k {
                                dx[row + i] = (inv * (q[i] - mean_q - xhat[i] * mean_qx)) as Elem;
                            }
                        }
                    }
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                    add_into(&mut local, gain, nodes[gain].value.len(), None, &dgain);
                    add_into(&mut local, bias, nodes[bias].value.len(), None, &dbias);
                }
                Op::Add { a, b } => {
                    add_into(&mut local, a, nodes[a].value.len(), None, &g);
                    add_into(&mut local, b, nodes[b].value.len(), None, &g);
                }
                Op::Sub { a, b } => {
                    add_into(&mut local, a, nodes[a].value.len(), None, &g);
                    add_into(&mut local, b, nodes[b].value.len(), Some(-1.0), &g);
                }
                Op::Mul { a, b } => {
                    let da: Vec<Elem> =
                        g.iter().zip(&nodes[b].value).map(|(&gi, &bi)| gi * bi).collect();
                    let db: Vec<Elem> =
                        g.iter().zip(&nodes[a].value).map(|(&gi, &ai)| gi * ai).collect();
                    add_into(&mut local, a, nodes[a].value.len(), None, &da);
                    add_into(&mut local, b, nodes[b].value.len(), None, &db);
                }
                Op::Scale { x, c } => {
                    add_into(&mut local, x, nodes[x].value.len(), Some(c), &g);
                }
                Op::AddScalar { x } => {
                    add_into(&mut local, x, nodes[x].value.len(), None, &g);
                }
                Op::Relu { x } => {
                    let dx: Vec<Elem> = g
                        .iter()
                        .zip(&nodes[x].value)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                }
                Op::MeanAll { x } => {
                    let n = nodes[x].value.len();
                    let c = g[0] / n as Elem;
                    let dx = vec![c; n];
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                }
                Op::Mse { a, b } => {
                    let n = nodes[a].value.len();
                    let c = (2.0 / n as Elem) * g[0];
                    let da: Vec<Elem> = nodes[a]
                        .value
                        .iter()
                        .zip(&nodes[b].value)
                        .map(|(&av, &bv)| c * (av - bv))
                        .collect();
                    let db: Vec<Elem> = da.iter().map(|&v| -v).collect();
                    add_into(&mut local, a, nodes[a].value.len(), None, &da);
                    add_into(&mut local, b, nodes[b].value.len(), None, &db);
                }
                Op::CosineLast { a, b, eps } => {
                    let k = *nodes[a].shape.last().unwrap();
                    let rows = nodes[a].value.len() / k;
                    let mut da = vec![0.0; nodes[a].value.len()];
                    let mut db = vec![0.0; nodes[b].value.len()];
                    {
                        let av = &nodes[a].value;
                        let bv = &nodes[b].value;
                        for r in 0..rows {
                            let row = r * k;
                            let (dot, na, nb) = row_dot_norms(&av[row..row + k], &bv[row..row + k]);
                            let nac = na.max(eps as f64);
                            let nbc = nb.max(eps as f64);
                            let c = dot / (nac * nbc);
                            let gi = g[r] as f64;
                            for i in 0..k {
                                let ai = av[row + i] as f64;
                                let bi = bv[row + i] as f64;
                                let mut ga = bi / (nac * nbc);
                                if na > eps as f64 {
                                    ga -= c * ai / (nac * nac);
                                }
                                let mut gb = ai / (nac * nbc);
                                if nb > eps as f64 {
                                    gb -= c * bi / (nbc * nbc);
                                }
                                da[row + i] += (gi * ga) as Elem;
                                db[row + i] += (gi * gb) as Elem;
                            }
                        }
                    }
                    add_into(&mut local, a, nodes[a].value.len(), None, &da);
                    add_into(&mut local, b, nodes[b].value.len(), None, &db);
                }
                Op::Reshape { x } => {
                    add_into(&mut local, x, nodes[x].value.len(), None, &g);
                }
                Op::TransposeLast2 { x } => {
                    // g has the transposed shape; transpose it back.
                    let shape = &nodes[id].shape;
                    let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                    let dx = transpose_last2_raw(&g, r, c);
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                }
                Op::ConcatLast { parts } => {
                    let out_last = *nodes[id].shape.last().unwrap();
                    let rows = nodes[id].value.len() / out_last;
                    let mut offset = 0;
                    for &p in &parts {
                        let pk = *nodes[p].shape.last().unwrap();
                        let mut dp = vec![0.0; nodes[p].value.len()];
                        for r in 0..rows {
                            let src = r * out_last + offset;
                            dp[r * pk..(r + 1) * pk].copy_from_slice(&g[src..src + pk]);
                        }
                        add_into(&mut local, p, nodes[p].value.len(), None, &dp);
                        offset += pk;
                    }
                }
                Op::SliceLast { x, start } => {
                    let xk = *nodes[x].shape.last().unwrap();
                    let ok = *nodes[id].shape.last().unwrap();
                    let rows = nodes[id].value.len() / ok;
                    let mut dx = vec![0.0; nodes[x].value.len()];
                    for r in 0..rows {
                        let dst = r * xk + start;
                        dx[dst..dst + ok].copy_from_slice(&g[r * ok..(r + 1) * ok]);
                    }
                    add_into(&mut local, x, nodes[x].value.len(), None, &dx);
                }
                Op::BroadcastAdd { x, t } => {
                    add_into(&mut local, x, nodes[x].value.len(), None, &g);
                    let tk = nodes[t].value.len();
                    let mut dt = vec![0.0; tk];
                    for (i, &gi) in g.iter().enumerate() {
                        dt[i % tk] += gi;
                    }
                    add_into(&mut local, t, nodes[t].value.len(), None, &dt);
                }
            }
        }

        // Merge this call's gradients into the persistent accumulators.
        for (id, lg) in local.into_iter().enumerate() {
            if let Some(lg) = lg {
                add_grad(&mut nodes[id], None, &lg);
            }
        }
    }
}

fn add_into(
    store: &mut [Option<Vec<Elem>>],
    id: usize,
    len: usize,
    scale: Option<Elem>,
    contrib: &[Elem],
) {
    let grad = store[id].get_or_insert_with(|| vec![0.0; len]);
    debug_assert_eq!(grad.len(), contrib.len());
    match scale {
        None => {
            for (gi, &ci) in grad.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        Some(s) => {
            for (gi, &ci) in grad.iter_mut().zip(contrib) {
                *gi += s * ci;
            }
        }
    }
}

fn add_grad(node: &mut Node, scale: Option<Elem>, contrib: &[Elem]) {
    let grad = node.grad.get_or_insert_with(|| vec![0.0; node.value.len()]);
    debug_assert_eq!(grad.len(), contrib.len());
    match scale {
        None => {
            for (gi, &ci) in grad.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        Some(s) => {
            for (gi, &ci) in grad.iter_mut().zip(contrib) {
                *gi += s * ci;
            }
        }
    }
}

fn row_stats(row: &[Elem], eps: Elem) -> (f64, f64) {
    let k = row.len() as f64;
    let mut mu = 0.0f64;
    for &v in row {
        mu += v as f64;
    }
    mu /= k;
    let mut var = 0.0f64;
    for &v in row {
        let d = v as f64 - mu;
        var += d * d;
    }
    var /= k;
    (mu, 1.0 / (var + eps as f64).sqrt())
}

fn row_dot_norms(a: &[Elem], b: &[Elem]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    (dot, na.sqrt(), nb.sqrt())
}

fn transpose_last2_raw(data: &[Elem], rows: usize, cols: usize) -> Vec<Elem> {
    let per = rows * cols;
    let mut out = vec![0.0; data.len()];
    for b in 0..data.len() / per {
        let base = b * per;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = data[base + i * cols + j];
            }
        }
    }
    out
}

/// Dimensions of a (possibly batch-broadcast) matrix product.
struct MmSpec {
    bsz: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

impl MmSpec {
    fn infer(a: &[usize], b: &[usize]) -> MmSpec {
        let bad = || {
            panic!("matmul shape mismatch: lhs {:?} rhs {:?}", a, b);
        };
        if a.len() < 2 || a.len() > 3 || b.len() < 2 || b.len() > 3 {
            bad();
        }
        let a_batched = a.len() == 3;
        let b_batched = b.len() == 3;
        let (m, ka) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if ka != kb {
            bad();
        }
        let bsz = match (a_batched, b_batched) {
            (false, false) => 1,
            (true, false) => a[0],
            (false, true) => b[0],
            (true, true) => {
                if a[0] != b[0] {
                    bad();
                }
                a[0]
            }
        };
        MmSpec { bsz, m, k: ka, n, a_batched, b_batched }
    }

    fn out_batched(&self) -> bool {
        self.a_batched || self.b_batched
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.out_batched() {
            vec![self.bsz, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

/// Accumulate `out[b] += A[b] . B[b]` for logical (m,k)x(k,n) products.
/// `*_batched == false` reuses the single stored matrix for every batch (and,
/// for `out`, sums every batch product into one matrix). `*_trans` marks an
/// operand stored transposed relative to its logical orientation. Products
/// accumulate in f64 regardless of the element type.
#[allow(clippy::too_many_arguments)]
fn mm(
    a: &[Elem], a_batched: bool, a_trans: bool,
    b: &[Elem], b_batched: bool, b_trans: bool,
    out: &mut [Elem], out_batched: bool,
    bsz: usize, m: usize, k: usize, n: usize,
) {
    for bi in 0..bsz {
        let ao = if a_batched { bi * m * k } else { 0 };
        let bo = if b_batched { bi * k * n } else { 0 };
        let oo = if out_batched { bi * m * n } else { 0 };
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    let av = if a_trans { a[ao + p * m + i] } else { a[ao + i * k + p] };
                    let bv = if b_trans { b[bo + j * k + p] } else { b[bo + p * n + j] };
                    acc += av as f64 * bv as f64;
                }
                out[oo + i * n + j] += acc as Elem;
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    /// Snapshot of the node's value.
    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Elem {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        assert_eq!(n.value.len(), 1, "item() on node of shape {:?}", n.shape);
        n.value[0]
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars belong to different tapes");
    }

    fn with<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id])
    }

    fn with2<R>(&self, other: Var<'t>, f: impl FnOnce(&Node, &Node) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id], &nodes[other.id])
    }

    /// Matrix product. Operands are rank-2 `(m,k)x(k,n)` or rank-3 with a
    /// leading batch axis; a rank-2 operand broadcasts over the other's batch.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        let (spec, value) = self.with2(other, |na, nb| {
            let spec = MmSpec::infer(&na.shape, &nb.shape);
            let mut out = vec![0.0; numel_of(&spec.out_shape())];
            mm(
                &na.value, spec.a_batched, false,
                &nb.value, spec.b_batched, false,
                &mut out, spec.out_batched(),
                spec.bsz, spec.m, spec.k, spec.n,
            );
            (spec, out)
        });
        self.tape.push(spec.out_shape(), value, Op::Matmul { a: self.id, b: other.id })
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_lastdim(self) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            debug_assert!(
                n.value.iter().all(|v| !v.is_nan()),
                "softmax input contains NaN"
            );
            let k = *n.shape.last().expect("softmax requires rank >= 1");
            let mut out = vec![0.0; n.value.len()];
            for r in 0..n.value.len() / k {
                let row = &n.value[r * k..(r + 1) * k];
                let max = row.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
                let mut sum = 0.0f64;
                for (i, &v) in row.iter().enumerate() {
                    let e = ((v - max) as f64).exp();
                    out[r * k + i] = e as Elem;
                    sum += e;
                }
                for i in 0..k {
                    out[r * k + i] = (out[r * k + i] as f64 / sum) as Elem;
                }
            }
            (n.shape.clone(), out)
        });
        self.tape.push(shape, value, Op::Softmax { x: self.id })
    }

    /// Layer normalization over the last axis with learnable gain and bias
    /// (both rank-1 of that axis' length).
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: Elem) -> Var<'t> {
        self.same_tape(gain);
        self.same_tape(bias);
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (nx, ng, nb) = (&nodes[self.id], &nodes[gain.id], &nodes[bias.id]);
            let k = *nx.shape.last().expect("layer_norm requires rank >= 1");
            assert!(
                ng.shape == [k] && nb.shape == [k],
                "layer_norm param shape mismatch: input {:?} gain {:?} bias {:?}",
                nx.shape, ng.shape, nb.shape
            );
            let mut out = vec![0.0; nx.value.len()];
            for r in 0..nx.value.len() / k {
                let row = &nx.value[r * k..(r + 1) * k];
                let (mu, inv) = row_stats(row, eps);
                for i in 0..k {
                    let xhat = (row[i] as f64 - mu) * inv;
                    out[r * k + i] = (xhat * ng.value[i] as f64 + nb.value[i] as f64) as Elem;
                }
            }
            (nx.shape.clone(), out)
        };
        self.tape.push(
            shape,
            value,
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, eps },
        )
    }

    fn zip_same_shape(self, other: Var<'t>, name: &str) -> (Vec<usize>, Vec<Elem>, Vec<Elem>) {
        self.same_tape(other);
        self.with2(other, |na, nb| {
            assert!(
                na.shape == nb.shape,
                "{} shape mismatch: lhs {:?} rhs {:?}",
                name, na.shape, nb.shape
            );
            (na.shape.clone(), na.value.clone(), nb.value.clone())
        })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (shape, a, b) = self.zip_same_shape(other, "add");
        let out = a.iter().zip(&b).map(|(&x, &y)| x + y).collect();
        self.tape.push(shape, out, Op::Add { a: self.id, b: other.id })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (shape, a, b) = self.zip_same_shape(other, "sub");
        let out = a.iter().zip(&b).map(|(&x, &y)| x - y).collect();
        self.tape.push(shape, out, Op::Sub { a: self.id, b: other.id })
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (shape, a, b) = self.zip_same_shape(other, "mul");
        let out = a.iter().zip(&b).map(|(&x, &y)| x * y).collect();
        self.tape.push(shape, out, Op::Mul { a: self.id, b: other.id })
    }

    pub fn scale(self, c: Elem) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            (n.shape.clone(), n.value.iter().map(|&v| v * c).collect())
        });
        self.tape.push(shape, value, Op::Scale { x: self.id, c })
    }

    pub fn add_scalar(self, c: Elem) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            (n.shape.clone(), n.value.iter().map(|&v| v + c).collect())
        });
        self.tape.push(shape, value, Op::AddScalar { x: self.id })
    }

    pub fn relu(self) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            (n.shape.clone(), n.value.iter().map(|&v| v.max(0.0)).collect())
        });
        self.tape.push(shape, value, Op::Relu { x: self.id })
    }

    /// Mean over every element, yielding a one-element node.
    pub fn mean_all(self) -> Var<'t> {
        let value = self.with(|n| {
            let mut acc = 0.0f64;
            for &v in &n.value {
                acc += v as f64;
            }
            (acc / n.value.len() as f64) as Elem
        });
        self.tape.push(vec![1], vec![value], Op::MeanAll { x: self.id })
    }

    /// Mean squared error against a same-shape tensor, as a one-element node.
    pub fn mse(self, other: Var<'t>) -> Var<'t> {
        let (_, a, b) = self.zip_same_shape(other, "mse");
        let mut acc = 0.0f64;
        for (&x, &y) in a.iter().zip(&b) {
            let d = x as f64 - y as f64;
            acc += d * d;
        }
        let v = (acc / a.len() as f64) as Elem;
        self.tape.push(vec![1], vec![v], Op::Mse { a: self.id, b: other.id })
    }

    /// Cosine similarity of corresponding last-axis rows. The output drops
    /// the last axis (a rank-1 input yields a one-element node). Denominators
    /// are clamped below by `eps`, so zero rows produce 0.
    pub fn cosine_lastdim(self, other: Var<'t>, eps: Elem) -> Var<'t> {
        let (shape, a, b) = self.zip_same_shape(other, "cosine");
        let k = *shape.last().expect("cosine requires rank >= 1");
        let rows = a.len() / k;
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let (dot, na, nb) = row_dot_norms(&a[r * k..(r + 1) * k], &b[r * k..(r + 1) * k]);
            out[r] = (dot / (na.max(eps as f64) * nb.max(eps as f64))) as Elem;
        }
        let out_shape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        self.tape.push(out_shape, out, Op::CosineLast { a: self.id, b: other.id, eps })
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'t> {
        let shape = shape.into();
        let value = self.with(|n| {
            assert_eq!(
                numel_of(&shape),
                n.value.len(),
                "reshape from {:?} to {:?} changes element count",
                n.shape, shape
            );
            n.value.clone()
        });
        self.tape.push(shape, value, Op::Reshape { x: self.id })
    }

    /// Swap the last two axes.
    pub fn transpose_last2(self) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            assert!(n.shape.len() >= 2, "transpose_last2 requires rank >= 2, got {:?}", n.shape);
            let r = n.shape[n.shape.len() - 2];
            let c = n.shape[n.shape.len() - 1];
            let mut shape = n.shape.clone();
            let len = shape.len();
            shape.swap(len - 2, len - 1);
            (shape, transpose_last2_raw(&n.value, r, c))
        });
        self.tape.push(shape, value, Op::TransposeLast2 { x: self.id })
    }

    /// Contiguous slice `[start, start+len)` of the last axis.
    pub fn slice_lastdim(self, start: usize, len: usize) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            let k = *n.shape.last().expect("slice requires rank >= 1");
            assert!(
                start + len <= k,
                "slice [{start}, {}) out of bounds for last axis of {:?}",
                start + len,
                n.shape
            );
            let rows = n.value.len() / k;
            let mut out = vec![0.0; rows * len];
            for r in 0..rows {
                out[r * len..(r + 1) * len]
                    .copy_from_slice(&n.value[r * k + start..r * k + start + len]);
            }
            let mut shape = n.shape.clone();
            *shape.last_mut().unwrap() = len;
            (shape, out)
        });
        self.tape.push(shape, value, Op::SliceLast { x: self.id, start })
    }

    /// Add a tensor whose shape is a trailing suffix of this one's (tiled
    /// over the leading axes). Used for bias terms and positional tables.
    pub fn broadcast_add(self, t: Var<'t>) -> Var<'t> {
        self.same_tape(t);
        let (shape, value) = self.with2(t, |nx, nt| {
            assert!(
                nx.shape.ends_with(&nt.shape),
                "broadcast add: {:?} is not a trailing shape of {:?}",
                nt.shape, nx.shape
            );
            let k = nt.value.len().max(1);
            let out = nx
                .value
                .iter()
                .enumerate()
                .map(|(i, &v)| v + nt.value[i % k])
                .collect();
            (nx.shape.clone(), out)
        });
        self.tape.push(shape, value, Op::BroadcastAdd { x: self.id, t: t.id })
    }

    /// Copy the value into a fresh leaf, severing it from this node's
    /// history: gradients flowing into the detached copy never reach the
    /// original producers.
    pub fn detach(self) -> Var<'t> {
        let (shape, value) = self.with(|n| (n.shape.clone(), n.value.clone()));
        self.tape.push(shape, value, Op::Leaf)
    }
}

/// Concatenate along the last axis; all leading axes must agree.
pub fn concat_lastdim<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of zero tensors");
    let first = parts[0];
    let tape = first.tape;
    for p in parts {
        first.same_tape(*p);
    }
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let lead = &nodes[first.id].shape[..nodes[first.id].shape.len() - 1];
        let mut out_last = 0;
        for p in parts {
            let s = &nodes[p.id].shape;
            assert!(
                &s[..s.len() - 1] == lead,
                "concat shape mismatch: {:?} vs {:?}",
                nodes[first.id].shape, s
            );
            out_last += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * out_last];
        let mut offset = 0;
        for p in parts {
            let s = &nodes[p.id].shape;
            let pk = s[s.len() - 1];
            let pv = &nodes[p.id].value;
            for r in 0..rows {
                out[r * out_last + offset..r * out_last + offset + pk]
                    .copy_from_slice(&pv[r * pk..(r + 1) * pk]);
            }
            offset += pk;
        }
        let mut shape = lead.to_vec();
        shape.push(out_last);
        (shape, out)
    };
    tape.push(shape, value, Op::ConcatLast { parts: parts.iter().map(|p| p.id).collect() })
}
