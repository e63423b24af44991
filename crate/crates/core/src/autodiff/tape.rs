use rand::Rng;

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Handle to a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors. Insertion order is the
/// canonical parameter order everywhere (optimizer state, checkpoints), so
/// results never depend on hash-map iteration.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor.with_grad()));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }
}

/// Per-column batch statistics a train-mode batch-norm node observed; the
/// caller folds them into its running statistics.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n−1 denominator) variance, the convention for running stats.
    pub var: Vec<f64>,
}

enum Op {
    /// Constant input; no gradient flows past it.
    Input,
    /// Leaf copied from a `ParamStore` entry; gradient is harvested after
    /// backward via the tape's leaf list.
    Param,
    /// C[n,p] = A[n,m] · B[m,p]
    Matmul { a: NodeId, b: NodeId },
    /// Row-broadcast add: out[b,j] = a[b,j] + bias[j]
    AddRow { a: NodeId, bias: NodeId },
    /// Elementwise max(x, slope·x)
    LeakyRelu { x: NodeId, slope: f64 },
    /// Train-mode batch normalization; `x_hat` and `inv_std` are saved for backward.
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Eval-mode batch normalization against fixed running statistics.
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Inverted dropout; mask entries are 0.0 or 1/(1−p).
    Dropout { x: NodeId, mask: Vec<f64> },
    /// Row gather: out[b,:] = table[ids[b],:]; backward scatter-adds.
    Gather { table: NodeId, ids: Vec<usize> },
    /// Horizontal concatenation of same-height blocks.
    ConcatCols { parts: Vec<NodeId> },
    /// Column window copy: out = x[:, start..start+width]
    SliceCols { x: NodeId, start: usize },
    /// Block-granular mixing: out[b, i·c+k] = Σ_j alpha[i,j] · h[b, j·c+k].
    /// Chunk width c selects the granularity: whole towers, equal subspaces,
    /// or single neurons.
    BlockMix { h: NodeId, alpha: NodeId, chunk: usize },
    /// Mean squared error against a constant target; scalar output.
    MseLoss { pred: NodeId, target: Vec<f64> },
    /// Sum of scalar nodes (total multi-task loss).
    SumScalars { parts: Vec<NodeId> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Recorded computation graph. Operations execute eagerly as they are
/// recorded; `backward` replays the record once in reverse insertion order.
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<(ParamId, NodeId)>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaves: Vec::new(),
            ran_backward: false,
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, what: &str) -> Result<NodeId> {
        debug_assert_eq!(rows * cols, value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!("non-finite value in {what}")));
        }
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { rows, cols, value, grad, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant input (no gradient).
    pub fn input(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(Error::data(format!(
                "input of {} values does not fill {rows}x{cols}",
                data.len()
            )));
        }
        self.push(rows, cols, data.to_vec(), Op::Input, "input")
    }

    /// Records a leaf copied from the store; its gradient is written back by
    /// [`Tape::write_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        let t = store.get(id);
        let (rows, cols) = t.dims2();
        let node = self.push(rows, cols, t.data.clone(), Op::Param, store.name(id))?;
        self.leaves.push((id, node));
        Ok(node)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a);
        let (m2, p) = self.dims(b);
        if m != m2 {
            return Err(Error::data(format!(
                "matmul shape mismatch: {n}x{m} times {m2}x{p}"
            )));
        }
        let mut out = vec![0.0; n * p];
        matmul_acc(&self.nodes[a.0].value, &self.nodes[b.0].value, n, m, p, &mut out);
        self.push(n, p, out, Op::Matmul { a, b }, "matmul")
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a);
        let (brows, bcols) = self.dims(bias);
        if brows != 1 || bcols != m {
            return Err(Error::data(format!(
                "bias of {brows}x{bcols} cannot broadcast over {n}x{m}"
            )));
        }
        let bv = &self.nodes[bias.0].value;
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        self.push(n, m, out, Op::AddRow { a, bias }, "add_row")
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(slope >= 0.0) {
            return Err(Error::data(format!("negative leaky-relu slope {slope}")));
        }
        let (n, m) = self.dims(x);
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        self.push(n, m, out, Op::LeakyRelu { x, slope }, "leaky_relu")
    }

    /// Train-mode batch norm: normalizes each column by the batch statistics,
    /// then scales/shifts by gamma/beta. Returns the observed batch statistics
    /// so the caller can update its running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let (n, m) = self.dims(x);
        if n < 2 {
            return Err(Error::data(format!(
                "batch norm needs at least 2 rows in train mode, got {n}"
            )));
        }
        self.check_vec_param(gamma, m, "gamma")?;
        self.check_vec_param(beta, m, "beta")?;

        let xv = &self.nodes[x.0].value;
        let mut mean = vec![0.0; m];
        for row in xv.chunks(m) {
            for (s, v) in mean.iter_mut().zip(row) {
                *s += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);

        let mut var_biased = vec![0.0; m];
        for row in xv.chunks(m) {
            for ((s, v), mu) in var_biased.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *s += d * d;
            }
        }
        var_biased.iter_mut().for_each(|v| *v /= n as f64);

        let inv_std: Vec<f64> = var_biased.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut x_hat = vec![0.0; n * m];
        for (hrow, row) in x_hat.chunks_mut(m).zip(xv.chunks(m)) {
            for j in 0..m {
                hrow[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }

        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = vec![0.0; n * m];
        for (orow, hrow) in out.chunks_mut(m).zip(x_hat.chunks(m)) {
            for j in 0..m {
                orow[j] = gv[j] * hrow[j] + bv[j];
            }
        }

        // Running stats use the unbiased variance (n−1), normalization the biased one.
        let var_unbiased: Vec<f64> = var_biased
            .iter()
            .map(|&v| v * n as f64 / (n as f64 - 1.0))
            .collect();
        let stats = BatchStats { mean, var: var_unbiased };
        let id = self.push(
            n,
            m,
            out,
            Op::BatchNormTrain { x, gamma, beta, x_hat, inv_std },
            "batch_norm",
        )?;
        Ok((id, stats))
    }

    /// Eval-mode batch norm against fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let (n, m) = self.dims(x);
        self.check_vec_param(gamma, m, "gamma")?;
        self.check_vec_param(beta, m, "beta")?;
        if running_mean.len() != m || running_var.len() != m {
            return Err(Error::data("running statistics do not match feature count"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xv = &self.nodes[x.0].value;
        let mut x_hat = vec![0.0; n * m];
        for (hrow, row) in x_hat.chunks_mut(m).zip(xv.chunks(m)) {
            for j in 0..m {
                hrow[j] = (row[j] - running_mean[j]) * inv_std[j];
            }
        }
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let mut out = vec![0.0; n * m];
        for (orow, hrow) in out.chunks_mut(m).zip(x_hat.chunks(m)) {
            for j in 0..m {
                orow[j] = gv[j] * hrow[j] + bv[j];
            }
        }
        self.push(
            n,
            m,
            out,
            Op::BatchNormEval { x, gamma, beta, x_hat, inv_std },
            "batch_norm",
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by 1/(1−p), so the expectation is unchanged. Eval mode is
    /// simply "don't record this op".
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::data(format!("dropout probability {p} outside [0,1)")));
        }
        let (n, m) = self.dims(x);
        if p == 0.0 {
            let out = self.nodes[x.0].value.clone();
            let mask = vec![1.0; n * m];
            return self.push(n, m, out, Op::Dropout { x, mask }, "dropout");
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n * m)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        self.push(n, m, out, Op::Dropout { x, mask }, "dropout")
    }

    /// Embedding lookup: copies `table[ids[b], :]` into row b. Backward
    /// scatter-adds into the selected rows only.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, e) = self.dims(table);
        if let Some(bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::data(format!(
                "embedding id {bad} out of range for table of {v} rows"
            )));
        }
        let tv = &self.nodes[table.0].value;
        let mut out = vec![0.0; ids.len() * e];
        for (row, &id) in out.chunks_mut(e).zip(ids) {
            row.copy_from_slice(&tv[id * e..(id + 1) * e]);
        }
        self.push(ids.len(), e, out, Op::Gather { table, ids: ids.to_vec() }, "gather")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::data("concat of zero blocks"));
        }
        let (n, _) = self.dims(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (pn, pm) = self.dims(p);
            if pn != n {
                return Err(Error::data(format!(
                    "concat blocks disagree on row count: {n} vs {pn}"
                )));
            }
            total += pm;
        }
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for &p in parts {
            let (_, pm) = self.dims(p);
            let pv = &self.nodes[p.0].value;
            for b in 0..n {
                out[b * total + offset..b * total + offset + pm]
                    .copy_from_slice(&pv[b * pm..(b + 1) * pm]);
            }
            offset += pm;
        }
        self.push(n, total, out, Op::ConcatCols { parts: parts.to_vec() }, "concat_cols")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (n, m) = self.dims(x);
        if start + width > m {
            return Err(Error::data(format!(
                "column slice {start}..{} exceeds width {m}",
                start + width
            )));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; n * width];
        for b in 0..n {
            out[b * width..(b + 1) * width]
                .copy_from_slice(&xv[b * m + start..b * m + start + width]);
        }
        self.push(n, width, out, Op::SliceCols { x, start }, "slice_cols")
    }

    /// Mixes equal-width column chunks across the batch:
    /// `out[b, i·c+k] = Σ_j alpha[i,j] · h[b, j·c+k]` with chunk width `c`.
    /// alpha must be square with `h.cols == alpha.rows · c`.
    pub fn block_mix(&mut self, h: NodeId, alpha: NodeId, chunk: usize) -> Result<NodeId> {
        let (n, m) = self.dims(h);
        let (ar, ac) = self.dims(alpha);
        if ar != ac {
            return Err(Error::data(format!("mixing matrix must be square, got {ar}x{ac}")));
        }
        if chunk == 0 || ar * chunk != m {
            return Err(Error::data(format!(
                "activations of width {m} do not split into {ar} chunks of {chunk}"
            )));
        }
        let hv = &self.nodes[h.0].value;
        let av = &self.nodes[alpha.0].value;
        let mut out = vec![0.0; n * m];
        for b in 0..n {
            let hrow = &hv[b * m..(b + 1) * m];
            let orow = &mut out[b * m..(b + 1) * m];
            for j in 0..ar {
                let hchunk = &hrow[j * chunk..(j + 1) * chunk];
                for i in 0..ar {
                    let a = av[i * ar + j];
                    if a == 0.0 {
                        continue;
                    }
                    let ochunk = &mut orow[i * chunk..(i + 1) * chunk];
                    for (o, hv) in ochunk.iter_mut().zip(hchunk) {
                        *o += a * hv;
                    }
                }
            }
        }
        self.push(n, m, out, Op::BlockMix { h, alpha, chunk }, "block_mix")
    }

    /// Mean squared error between a `[B,1]` prediction and a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        let (n, m) = self.dims(pred);
        if m != 1 {
            return Err(Error::data(format!("mse expects a [B,1] prediction, got {n}x{m}")));
        }
        if target.len() != n {
            return Err(Error::data(format!(
                "mse target of {} values does not match batch of {n}",
                target.len()
            )));
        }
        if n == 0 {
            return Err(Error::data("mse over an empty batch"));
        }
        let pv = &self.nodes[pred.0].value;
        let sum: f64 = pv.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        self.push(
            1,
            1,
            vec![sum / n as f64],
            Op::MseLoss { pred, target: target.to_vec() },
            "mse",
        )
    }

    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::data("sum of zero scalars"));
        }
        let mut total = 0.0;
        for &p in parts {
            if self.dims(p) != (1, 1) {
                return Err(Error::data("sum_scalars over a non-scalar node"));
            }
            total += self.nodes[p.0].value[0];
        }
        self.push(1, 1, vec![total], Op::SumScalars { parts: parts.to_vec() }, "sum_scalars")
    }

    fn check_vec_param(&self, id: NodeId, want: usize, what: &str) -> Result<()> {
        let (r, c) = self.dims(id);
        if r != 1 || c != want {
            return Err(Error::data(format!(
                "{what} of {r}x{c} does not match feature count {want}"
            )));
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Visits every node exactly once in
    /// reverse insertion order, accumulating gradients into input nodes.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.dims(loss) != (1, 1) {
            let (r, c) = self.dims(loss);
            return Err(Error::data(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        if self.ran_backward {
            return Err(Error::data("backward already ran on this tape"));
        }
        self.ran_backward = true;
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            // Inputs of node i always precede it, so split at i: everything the
            // node reads or writes gradients into lives in `head`.
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let g = &node.grad;
            let cols = node.cols;
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Matmul { a, b } => {
                    let (n, m) = (head[a.0].rows, head[a.0].cols);
                    let p = cols;
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC. Contributions go through
                    // temporaries so `matmul(w, w)` accumulates both halves.
                    let mut da = vec![0.0; n * m];
                    matmul_nt_acc(g, &head[b.0].value, n, p, m, &mut da);
                    let mut db = vec![0.0; m * p];
                    matmul_tn_acc(&head[a.0].value, g, n, m, p, &mut db);
                    add_into(&mut head[a.0].grad, &da);
                    add_into(&mut head[b.0].grad, &db);
                }
                Op::AddRow { a, bias } => {
                    {
                        let da = &mut head[a.0].grad;
                        for (d, gv) in da.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                    let dbias = &mut head[bias.0].grad;
                    for grow in g.chunks(cols) {
                        for (d, gv) in dbias.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let slope = *slope;
                    let xn = &mut head[x.0];
                    for ((d, gv), xv) in xn.grad.iter_mut().zip(g).zip(&xn.value) {
                        *d += gv * if *xv > 0.0 { 1.0 } else { slope };
                    }
                }
                Op::BatchNormTrain { x, gamma, beta, x_hat, inv_std } => {
                    let n = node.rows;
                    let m = cols;
                    let nf = n as f64;
                    // d_beta[j] = Σ_b g ; d_gamma[j] = Σ_b g·x̂ ; then the
                    // standard train-mode x gradient through mean and variance.
                    let mut sum_g = vec![0.0; m];
                    let mut sum_gx = vec![0.0; m];
                    for (grow, hrow) in g.chunks(m).zip(x_hat.chunks(m)) {
                        for j in 0..m {
                            sum_g[j] += grow[j];
                            sum_gx[j] += grow[j] * hrow[j];
                        }
                    }
                    {
                        let dbeta = &mut head[beta.0].grad;
                        for (d, s) in dbeta.iter_mut().zip(&sum_g) {
                            *d += s;
                        }
                    }
                    {
                        let dgamma = &mut head[gamma.0].grad;
                        for (d, s) in dgamma.iter_mut().zip(&sum_gx) {
                            *d += s;
                        }
                    }
                    let gv = head[gamma.0].value.clone();
                    let dx = &mut head[x.0].grad;
                    for b in 0..n {
                        for j in 0..m {
                            let gy = g[b * m + j] * gv[j];
                            let term = nf * gy - gv[j] * sum_g[j] - x_hat[b * m + j] * gv[j] * sum_gx[j];
                            dx[b * m + j] += inv_std[j] / nf * term;
                        }
                    }
                }
                Op::BatchNormEval { x, gamma, beta, x_hat, inv_std } => {
                    let m = cols;
                    let mut sum_g = vec![0.0; m];
                    let mut sum_gx = vec![0.0; m];
                    for (grow, hrow) in g.chunks(m).zip(x_hat.chunks(m)) {
                        for j in 0..m {
                            sum_g[j] += grow[j];
                            sum_gx[j] += grow[j] * hrow[j];
                        }
                    }
                    {
                        let dbeta = &mut head[beta.0].grad;
                        for (d, s) in dbeta.iter_mut().zip(&sum_g) {
                            *d += s;
                        }
                    }
                    {
                        let dgamma = &mut head[gamma.0].grad;
                        for (d, s) in dgamma.iter_mut().zip(&sum_gx) {
                            *d += s;
                        }
                    }
                    let gv = head[gamma.0].value.clone();
                    let dx = &mut head[x.0].grad;
                    for (b, grow) in g.chunks(m).enumerate() {
                        for j in 0..m {
                            dx[b * m + j] += grow[j] * gv[j] * inv_std[j];
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = &mut head[x.0].grad;
                    for ((d, gv), mv) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * mv;
                    }
                }
                Op::Gather { table, ids } => {
                    let e = cols;
                    let dt = &mut head[table.0].grad;
                    for (grow, &id) in g.chunks(e).zip(ids) {
                        for (d, gv) in dt[id * e..(id + 1) * e].iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let total = cols;
                    let n = node.rows;
                    let mut offset = 0;
                    for &p in parts {
                        let pm = head[p.0].cols;
                        let dp = &mut head[p.0].grad;
                        for b in 0..n {
                            for k in 0..pm {
                                dp[b * pm + k] += g[b * total + offset + k];
                            }
                        }
                        offset += pm;
                    }
                }
                Op::SliceCols { x, start } => {
                    let width = cols;
                    let n = node.rows;
                    let m = head[x.0].cols;
                    let dx = &mut head[x.0].grad;
                    for b in 0..n {
                        for k in 0..width {
                            dx[b * m + start + k] += g[b * width + k];
                        }
                    }
                }
                Op::BlockMix { h, alpha, chunk } => {
                    let chunk = *chunk;
                    let n = node.rows;
                    let m = cols;
                    let t = m / chunk;
                    let av = head[alpha.0].value.clone();
                    {
                        let dh = &mut head[h.0].grad;
                        // dh[b, j·c+k] += Σ_i alpha[i,j] · g[b, i·c+k]
                        for b in 0..n {
                            let grow = &g[b * m..(b + 1) * m];
                            let drow = &mut dh[b * m..(b + 1) * m];
                            for i in 0..t {
                                let gchunk = &grow[i * chunk..(i + 1) * chunk];
                                for j in 0..t {
                                    let a = av[i * t + j];
                                    if a == 0.0 {
                                        continue;
                                    }
                                    let dchunk = &mut drow[j * chunk..(j + 1) * chunk];
                                    for (d, gv) in dchunk.iter_mut().zip(gchunk) {
                                        *d += a * gv;
                                    }
                                }
                            }
                        }
                    }
                    // dα[i,j] += Σ_b Σ_k g[b, i·c+k] · h[b, j·c+k]
                    let mut da = vec![0.0; t * t];
                    {
                        let hv = &head[h.0].value;
                        for b in 0..n {
                            let grow = &g[b * m..(b + 1) * m];
                            let hrow = &hv[b * m..(b + 1) * m];
                            for i in 0..t {
                                let gchunk = &grow[i * chunk..(i + 1) * chunk];
                                for j in 0..t {
                                    let hchunk = &hrow[j * chunk..(j + 1) * chunk];
                                    let dot: f64 =
                                        gchunk.iter().zip(hchunk).map(|(a, b)| a * b).sum();
                                    da[i * t + j] += dot;
                                }
                            }
                        }
                    }
                    add_into(&mut head[alpha.0].grad, &da);
                }
                Op::MseLoss { pred, target } => {
                    let gl = g[0];
                    let n = target.len() as f64;
                    let pn = &mut head[pred.0];
                    for ((d, pv), tv) in pn.grad.iter_mut().zip(&pn.value).zip(target) {
                        *d += gl * 2.0 * (pv - tv) / n;
                    }
                }
                Op::SumScalars { parts } => {
                    let gl = g[0];
                    for &p in parts {
                        head[p.0].grad[0] += gl;
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds each parameter leaf's gradient into its store tensor. Multiple
    /// leaves of the same parameter accumulate.
    pub fn write_grads(&self, store: &mut ParamStore) -> Result<()> {
        for &(pid, nid) in &self.leaves {
            let node = &self.nodes[nid.0];
            let t = store.get_mut(pid);
            if t.grad.is_none() {
                t.zero_grad();
            }
            let g = t.grad.as_mut().unwrap();
            for (d, s) in g.iter_mut().zip(&node.grad) {
                *d += s;
            }
        }
        for &(pid, _) in &self.leaves {
            let t = store.get(pid);
            if let Some(g) = &t.grad {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite gradient for parameter {}",
                        store.name(pid)
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// out[n,p] += a[n,m] · b[m,p], cache-friendly i-k-j loop.
fn matmul_acc(a: &[f64], b: &[f64], n: usize, m: usize, p: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        let orow = &mut out[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * p..(k + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// out[n,m] += a[n,p] · bᵀ where b is [m,p]: row-by-row dot products.
fn matmul_nt_acc(a: &[f64], b: &[f64], n: usize, p: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * p..(i + 1) * p];
        let orow = &mut out[i * m..(i + 1) * m];
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = &b[k * p..(k + 1) * p];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            *o += dot;
        }
    }
}

/// out[m,p] += aᵀ · b where a is [n,m], b is [n,p]: axpy over b rows.
fn matmul_tn_acc(a: &[f64], b: &[f64], n: usize, m: usize, p: usize, out: &mut [f64]) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        let brow = &b[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate() {
            let orow = &mut out[k * p..(k + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}
