use std::sync::Arc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous segments over the rows of an edge-indexed tensor. Segment `s`
/// covers rows `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    ids: Vec<usize>,
}

impl Segments {
    /// Builds segments from per-row segment ids, which must be sorted
    /// non-decreasing and below `num_segments`.
    pub fn from_ids(ids: &[usize], num_segments: usize) -> Result<Self> {
        if let Some(pos) = ids.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::UnsortedSegments(pos + 1));
        }
        if let Some(&last) = ids.last() {
            if last >= num_segments {
                return Err(Error::ShapeMismatch {
                    op: "Segments::from_ids",
                    detail: format!("segment id {last} >= {num_segments}"),
                });
            }
        }
        let mut offsets = vec![0usize; num_segments + 1];
        for &s in ids {
            offsets[s + 1] += 1;
        }
        for s in 0..num_segments {
            offsets[s + 1] += offsets[s];
        }
        Ok(Self {
            offsets,
            ids: ids.to_vec(),
        })
    }

    pub fn from_offsets(offsets: &[usize]) -> Result<Self> {
        if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter("segment offsets must start at 0 and be non-decreasing".into()));
        }
        let mut ids = Vec::with_capacity(*offsets.last().unwrap());
        for s in 0..offsets.len() - 1 {
            ids.extend(std::iter::repeat_n(s, offsets[s + 1] - offsets[s]));
        }
        Ok(Self {
            offsets: offsets.to_vec(),
            ids,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of rows covered.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Gather(Var, Arc<Vec<usize>>),
    ScaleRows(Var, Var),
    SegmentSoftmax(Var, Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    Sum(Var),
    Mean(Var),
    CrossEntropy(Var, Arc<Vec<usize>>, Arc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order so that
/// [`Tape::backward`] can replay them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed back.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let out = matmul(av, bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", av.shape(), rv.shape())));
        }
        let m = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| x + rv.data()[k % m])
            .collect();
        let out = Tensor::new(av.rows(), m, data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        let rg = self.rg(a);
        self.push(out, Op::Elu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let n = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != n) {
            return Err(shape_err(
                "concat",
                format!("row count {} != {n}", self.value(*bad).rows()),
            ));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(n, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(shape_err("slice", format!("{start}..{end} of {} columns", av.cols())));
        }
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for i in 0..av.rows() {
            data.extend_from_slice(&av.row(i)[start..end]);
        }
        let out = Tensor::new(av.rows(), end - start, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, start, end), rg))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows()) {
            return Err(shape_err("gather", format!("row {bad} of {}", av.rows())));
        }
        let mut data = Vec::with_capacity(index.len() * av.cols());
        for &i in index.iter() {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::new(index.len(), av.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a, index), rg))
    }

    /// Multiplies column block `h` of each row of `x` (`E x H*F`) by
    /// `w[e, h]` (`w` is `E x H`).
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rows() != wv.rows() || wv.cols() == 0 || xv.cols() % wv.cols() != 0 {
            return Err(shape_err("scale_rows", format!("{:?} by {:?}", xv.shape(), wv.shape())));
        }
        let block = xv.cols() / wv.cols();
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| v * wv.get(k / cols, (k % cols) / block))
            .collect();
        let out = Tensor::new(xv.rows(), cols, data)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::ScaleRows(x, w), rg))
    }

    /// Column-wise softmax of `logits / temperature` within each segment.
    /// The per-segment maximum is subtracted before exponentiation.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<Segments>, temperature: Var) -> Result<Var> {
        let (ev, tv) = (self.value(logits), self.value(temperature));
        if tv.len() != 1 {
            return Err(shape_err("segment_softmax", format!("temperature of shape {:?}", tv.shape())));
        }
        let t = tv.item();
        if !(t > 0.0) {
            return Err(Error::NonPositiveTemperature(t));
        }
        if ev.rows() != segments.len() {
            return Err(shape_err(
                "segment_softmax",
                format!("{} logits for {} segment rows", ev.rows(), segments.len()),
            ));
        }
        let out = segment_softmax_values(ev, &segments, t);
        let rg = self.rg(logits) || self.rg(temperature);
        Ok(self.push(out, Op::SegmentSoftmax(logits, temperature, segments), rg))
    }

    /// Row `s` of the output is the sum of the rows of `values` in segment `s`.
    pub fn segment_sum(&mut self, values: Var, segments: Arc<Segments>) -> Result<Var> {
        let vv = self.value(values);
        if vv.rows() != segments.len() {
            return Err(shape_err(
                "segment_sum",
                format!("{} rows for {} segment rows", vv.rows(), segments.len()),
            ));
        }
        let m = vv.cols();
        let mut out = Tensor::zeros(segments.num_segments(), m);
        for (k, &s) in segments.ids().iter().enumerate() {
            let src = vv.row(k);
            let dst = &mut out.data_mut()[s * m..(s + 1) * m];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        let rg = self.rg(values);
        Ok(self.push(out, Op::SegmentSum(values, segments), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Mean negative log-likelihood of `labels[i]` under the row softmax of
    /// `logits`, over the node indices in `rows`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>, rows: Arc<Vec<usize>>) -> Result<Var> {
        let lv = self.value(logits);
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        if labels.len() != lv.rows() {
            return Err(shape_err("cross_entropy", format!("{} labels for {} rows", labels.len(), lv.rows())));
        }
        let mut total = 0.0;
        for &i in rows.iter() {
            let row = lv.row(i);
            let y = labels[i];
            if y >= row.len() {
                return Err(shape_err("cross_entropy", format!("label {y} with {} classes", row.len())));
            }
            total -= log_softmax_at(row, y);
        }
        let out = Tensor::scalar(total / rows.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::CrossEntropy(logits, labels, rows), rg))
    }

    /// Reverse pass from a scalar. Fan-out gradients are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarBackward(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let m = g.cols();
                        let mut gr = Tensor::zeros(1, m);
                        for (k, v) in g.data().iter().enumerate() {
                            gr.data_mut()[k % m] += v;
                        }
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = zip_map(&g, self.value(*a), |gv, av| gv * av);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|v| v * c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| if x >= 0.0 { gv } else { slope * gv });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { gv * x.exp() });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, y, |gv, s| gv * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| gv * sigmoid(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip_map(&g, y, |gv, e| gv * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| gv / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let mut gp = Vec::with_capacity(g.rows() * w);
                            for i in 0..g.rows() {
                                gp.extend_from_slice(&g.row(i)[start..start + w]);
                            }
                            accumulate(&mut grads, p, Tensor::new(g.rows(), w, gp)?);
                        }
                        start += w;
                    }
                }
                Op::Slice(a, start, end) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let cols = av.cols();
                    for i in 0..av.rows() {
                        ga.data_mut()[i * cols + start..i * cols + end].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(a, index) => {
                    let av = self.value(*a);
                    let m = av.cols();
                    let mut ga = Tensor::zeros(av.rows(), m);
                    for (k, &i) in index.iter().enumerate() {
                        let dst = &mut ga.data_mut()[i * m..(i + 1) * m];
                        for (d, v) in dst.iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let cols = xv.cols();
                    let block = cols / wv.cols();
                    if self.rg(*x) {
                        let data = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(k, gv)| gv * wv.get(k / cols, (k % cols) / block))
                            .collect();
                        accumulate(&mut grads, *x, Tensor::new(xv.rows(), cols, data)?);
                    }
                    if self.rg(*w) {
                        let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                        let wc = wv.cols();
                        for (k, (gv, xval)) in g.data().iter().zip(xv.data()).enumerate() {
                            gw.data_mut()[(k / cols) * wc + (k % cols) / block] += gv * xval;
                        }
                        accumulate(&mut grads, *w, gw);
                    }
                }
                Op::SegmentSoftmax(logits, temp, segments) => {
                    let t = self.value(*temp).item();
                    let ev = self.value(*logits);
                    let h = y.cols();
                    // dz = y * (g - sum_seg(y * g)), with z = e / t
                    let mut dz = Tensor::zeros(y.rows(), h);
                    for s in 0..segments.num_segments() {
                        let r = segments.range(s);
                        for c in 0..h {
                            let dot: f64 = r.clone().map(|k| y.get(k, c) * g.get(k, c)).sum();
                            for k in r.clone() {
                                dz.data_mut()[k * h + c] = y.get(k, c) * (g.get(k, c) - dot);
                            }
                        }
                    }
                    if self.rg(*temp) {
                        let gt: f64 = dz.data().iter().zip(ev.data()).map(|(d, e)| -d * e / (t * t)).sum();
                        accumulate(&mut grads, *temp, Tensor::scalar(gt));
                    }
                    if self.rg(*logits) {
                        accumulate(&mut grads, *logits, dz.map(|d| d / t));
                    }
                }
                Op::SegmentSum(values, segments) => {
                    let m = g.cols();
                    let mut data = Vec::with_capacity(segments.len() * m);
                    for &s in segments.ids() {
                        data.extend_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *values, Tensor::new(segments.len(), m, data)?);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(av.rows(), av.cols(), g.item()));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let c = g.item() / av.len() as f64;
                    accumulate(&mut grads, *a, Tensor::full(av.rows(), av.cols(), c));
                }
                Op::CrossEntropy(logits, labels, rows) => {
                    let lv = self.value(*logits);
                    let c = lv.cols();
                    let scale = g.item() / rows.len() as f64;
                    let mut gl = Tensor::zeros(lv.rows(), c);
                    for &i in rows.iter() {
                        let row = lv.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for (j, v) in row.iter().enumerate() {
                            let p = (v - max).exp() / z;
                            let target = if j == labels[i] { 1.0 } else { 0.0 };
                            gl.data_mut()[i * c + j] += scale * (p - target);
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip_map shapes agree")
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[k] - lse
}

/// Forward value of the segment softmax, shared with non-taped callers.
pub fn segment_softmax_values(logits: &Tensor, segments: &Segments, temperature: f64) -> Tensor {
    let h = logits.cols();
    let mut out = Tensor::zeros(logits.rows(), h);
    for s in 0..segments.num_segments() {
        let r = segments.range(s);
        if r.is_empty() {
            continue;
        }
        for c in 0..h {
            let max = r
                .clone()
                .map(|k| logits.get(k, c) / temperature)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in r.clone() {
                let e = (logits.get(k, c) / temperature - max).exp();
                out.data_mut()[k * h + c] = e;
                z += e;
            }
            for k in r.clone() {
                out.data_mut()[k * h + c] /= z;
            }
        }
    }
    out
}
