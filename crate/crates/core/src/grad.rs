//! Tape-based reverse-mode differentiation for the small set of dense
//! operations the forecasters need, plus Adam and a named parameter store.
//!
//! Every value on the tape is a row-major matrix. Tensors with more than two
//! dimensions are flattened so that the last axis becomes the columns and the
//! leading axes become rows; when a per-channel quantity is involved, row `r`
//! belongs to channel `r % C`.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::{analyze_band, synthesize_band, Band, FilterBank};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Softmax(Var),
    Add(Var, Var),
    Scale { x: Var, s: Var },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    ChannelAffineInv { x: Var, gamma: Var, beta: Var },
    RowAffine { x: Var, scale: Array1<f64> },
    WaveletBand { x: Var, bank: FilterBank, band: Band },
    InverseWavelet { approx: Var, detail: Var, bank: FilterBank },
    WeightRows { x: Var, weights: Var, col: usize },
    Mse { pred: Var, target: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn ensure_finite(v: &Array2<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a learnable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf; no gradient is accumulated for it.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// `x · W + b` with `x: R×Din`, `W: Din×Dout`, `b: 1×Dout`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.ncols() != wv.nrows() {
            return Err(shape_err("linear inner dims", xv.shape(), wv.shape()));
        }
        let mut out = xv.dot(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.nrows() != 1 || bv.ncols() != out.ncols() {
                return Err(shape_err("linear bias", bv.shape(), &[1, out.ncols()]));
            }
            out += bv;
        }
        let rg = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        ensure_finite(xv, "relu input")?;
        let out = xv.mapv(|v| v.max(0.0));
        let rg = self.needs(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        ensure_finite(xv, "softmax input")?;
        let out = softmax_rows(xv.view());
        let rg = self.needs(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let out = av + bv;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Multiplies rows by a scalar (`s: 1×1`) or by a per-channel factor
    /// (`s: 1×C`, row `r` uses `s[r % C]`).
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let c = sv.ncols();
        if sv.nrows() != 1 || c == 0 || xv.nrows() % c != 0 {
            return Err(shape_err("scale", xv.shape(), sv.shape()));
        }
        let mut out = xv.clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row *= sv[[0, r % c]];
        }
        let rg = self.needs(x) || self.needs(s);
        Ok(self.push(out, Op::Scale { x, s }, rg))
    }

    fn check_channel_pair(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = g.ncols();
        if g.nrows() != 1 || g.shape() != b.shape() || c == 0 || xv.nrows() % c != 0 {
            return Err(Error::ShapeMismatch(format!(
                "channel affine: x {:?}, gamma {:?}, beta {:?}",
                xv.shape(),
                g.shape(),
                b.shape()
            )));
        }
        Ok(c)
    }

    /// `x · γ[c] + β[c]` per row channel.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.check_channel_pair(x, gamma, beta)?;
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = self.value(x).clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (gc, bc) = (g[[0, r % c]], b[[0, r % c]]);
            row.mapv_inplace(|v| v * gc + bc);
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, rg))
    }

    /// `(x − β[c]) / γ[c]` per row channel.
    pub fn channel_affine_inverse(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.check_channel_pair(x, gamma, beta)?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if let Some(ch) = g.iter().position(|v| v.abs() < 1e-12) {
            return Err(Error::ZeroGain(ch));
        }
        let mut out = self.value(x).clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (gc, bc) = (g[[0, r % c]], b[[0, r % c]]);
            row.mapv_inplace(|v| (v - bc) / gc);
        }
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::ChannelAffineInv { x, gamma, beta }, rg))
    }

    /// `x[r, :] · scale[r] + shift[r]` with constant per-row coefficients.
    pub fn row_affine(&mut self, x: Var, scale: Array1<f64>, shift: &Array1<f64>) -> Result<Var> {
        let xv = self.value(x);
        if scale.len() != xv.nrows() || shift.len() != xv.nrows() {
            return Err(shape_err("row affine", xv.shape(), &[scale.len(), shift.len()]));
        }
        let mut out = xv.clone();
        for ((mut row, &a), &b) in out.axis_iter_mut(Axis(0)).zip(&scale).zip(shift) {
            row.mapv_inplace(|v| v * a + b);
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::RowAffine { x, scale }, rg))
    }

    /// One band of a single-level periodic DWT applied to every row.
    pub fn wavelet_band(&mut self, x: Var, bank: &FilterBank, band: Band) -> Result<Var> {
        let xv = self.value(x).as_standard_layout().into_owned();
        let len = xv.ncols();
        bank.check_length(len)?;
        let half = len / 2;
        let mut out = Array2::zeros((xv.nrows(), half));
        let filter = bank.filter(band);
        for (row, mut o) in xv.outer_iter().zip(out.outer_iter_mut()) {
            analyze_band(row.as_slice().unwrap(), filter, o.as_slice_mut().unwrap());
        }
        let rg = self.needs(x);
        let op = Op::WaveletBand {
            x,
            bank: bank.clone(),
            band,
        };
        Ok(self.push(out, op, rg))
    }

    /// Single-level periodic inverse DWT of each row pair.
    pub fn inverse_wavelet(&mut self, approx: Var, detail: Var, bank: &FilterBank) -> Result<Var> {
        let av = self.value(approx).as_standard_layout().into_owned();
        let dv = self.value(detail).as_standard_layout().into_owned();
        if av.shape() != dv.shape() {
            return Err(shape_err("inverse wavelet", av.shape(), dv.shape()));
        }
        let len = 2 * av.ncols();
        bank.check_length(len)?;
        let mut out = Array2::zeros((av.nrows(), len));
        for ((a, d), mut o) in av.outer_iter().zip(dv.outer_iter()).zip(out.outer_iter_mut()) {
            let o = o.as_slice_mut().unwrap();
            synthesize_band(a.as_slice().unwrap(), bank.low_pass(), o);
            synthesize_band(d.as_slice().unwrap(), bank.high_pass(), o);
        }
        let rg = self.needs(approx) || self.needs(detail);
        let op = Op::InverseWavelet {
            approx,
            detail,
            bank: bank.clone(),
        };
        Ok(self.push(out, op, rg))
    }

    /// `out[r, :] = weights[r, col] · x[r, :]`.
    pub fn weight_rows(&mut self, x: Var, weights: Var, col: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if xv.nrows() != wv.nrows() || col >= wv.ncols() {
            return Err(shape_err("weight rows", xv.shape(), wv.shape()));
        }
        let mut out = xv.clone();
        for (mut row, &w) in out.axis_iter_mut(Axis(0)).zip(wv.column(col)) {
            row *= w;
        }
        let rg = self.needs(x) || self.needs(weights);
        Ok(self.push(out, Op::WeightRows { x, weights, col }, rg))
    }

    /// Mean squared error against a constant target; result is `1×1`.
    pub fn mse_loss(&mut self, pred: Var, target: Array2<f64>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err("mse", pv.shape(), target.shape()));
        }
        let n = pv.len().max(1) as f64;
        let loss = Zip::from(pv)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t))
            / n;
        let rg = self.needs(pred);
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::Mse { pred, target }, rg))
    }

    /// Propagates the gradient of the scalar `output` back through the tape.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got {:?}",
                out_val.shape()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, g: Array2<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.needs(*x) {
                    acc(*x, gy.dot(&wv.t()));
                }
                if self.needs(*w) {
                    acc(*w, xv.t().dot(gy));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut g = gy.clone();
                Zip::from(&mut g).and(xv).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                acc(*x, g);
            }
            Op::Softmax(x) => {
                // dx = y ⊙ (gy − Σ gy ⊙ y)
                let y = &node.value;
                let mut g = Array2::zeros(y.raw_dim());
                for ((gr, yr), mut out) in gy.outer_iter().zip(y.outer_iter()).zip(g.outer_iter_mut()) {
                    let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut out)
                        .and(&yr)
                        .and(&gr)
                        .for_each(|o, &yv, &gv| *o = yv * (gv - dot));
                }
                acc(*x, g);
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Scale { x, s } => {
                let sv = self.value(*s);
                let c = sv.ncols();
                if self.needs(*x) {
                    let mut g = gy.clone();
                    for (r, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
                        row *= sv[[0, r % c]];
                    }
                    acc(*x, g);
                }
                if self.needs(*s) {
                    let xv = self.value(*x);
                    let mut g = Array2::zeros((1, c));
                    for (r, (gr, xr)) in gy.outer_iter().zip(xv.outer_iter()).enumerate() {
                        g[[0, r % c]] += gr.dot(&xr);
                    }
                    acc(*s, g);
                }
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let gv = self.value(*gamma);
                let c = gv.ncols();
                if self.needs(*x) {
                    let mut g = gy.clone();
                    for (r, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
                        row *= gv[[0, r % c]];
                    }
                    acc(*x, g);
                }
                let xv = self.value(*x);
                let mut dg = Array2::zeros((1, c));
                let mut db = Array2::zeros((1, c));
                for (r, (gr, xr)) in gy.outer_iter().zip(xv.outer_iter()).enumerate() {
                    dg[[0, r % c]] += gr.dot(&xr);
                    db[[0, r % c]] += gr.sum();
                }
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::ChannelAffineInv { x, gamma, beta } => {
                // out = (x − β)/γ; d/dx = 1/γ; d/dβ = −1/γ; d/dγ = −out/γ
                let gv = self.value(*gamma);
                let c = gv.ncols();
                let out = &node.value;
                if self.needs(*x) {
                    let mut g = gy.clone();
                    for (r, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
                        row /= gv[[0, r % c]];
                    }
                    acc(*x, g);
                }
                let mut dg = Array2::zeros((1, c));
                let mut db = Array2::zeros((1, c));
                for (r, (gr, or)) in gy.outer_iter().zip(out.outer_iter()).enumerate() {
                    let gc = gv[[0, r % c]];
                    dg[[0, r % c]] -= gr.dot(&or) / gc;
                    db[[0, r % c]] -= gr.sum() / gc;
                }
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::RowAffine { x, scale } => {
                let mut g = gy.clone();
                for (mut row, &a) in g.axis_iter_mut(Axis(0)).zip(scale) {
                    row *= a;
                }
                acc(*x, g);
            }
            Op::WaveletBand { x, bank, band } => {
                let len = self.value(*x).ncols();
                let mut g = Array2::zeros((gy.nrows(), len));
                let gy = gy.as_standard_layout();
                for (gr, mut o) in gy.outer_iter().zip(g.outer_iter_mut()) {
                    synthesize_band(gr.as_slice().unwrap(), bank.filter(*band), o.as_slice_mut().unwrap());
                }
                acc(*x, g);
            }
            Op::InverseWavelet { approx, detail, bank } => {
                // Adjoint of synthesis is analysis.
                let half = gy.ncols() / 2;
                let gy = gy.as_standard_layout();
                for (band, target) in [(Band::Approx, *approx), (Band::Detail, *detail)] {
                    if !self.needs(target) {
                        continue;
                    }
                    let mut g = Array2::zeros((gy.nrows(), half));
                    for (gr, mut o) in gy.outer_iter().zip(g.outer_iter_mut()) {
                        analyze_band(gr.as_slice().unwrap(), bank.filter(band), o.as_slice_mut().unwrap());
                    }
                    acc(target, g);
                }
            }
            Op::WeightRows { x, weights, col } => {
                let wv = self.value(*weights);
                if self.needs(*x) {
                    let mut g = gy.clone();
                    for (mut row, &w) in g.axis_iter_mut(Axis(0)).zip(wv.column(*col)) {
                        row *= w;
                    }
                    acc(*x, g);
                }
                if self.needs(*weights) {
                    let xv = self.value(*x);
                    let mut g = Array2::zeros(wv.raw_dim());
                    for (r, (gr, xr)) in gy.outer_iter().zip(xv.outer_iter()).enumerate() {
                        g[[r, *col]] = gr.dot(&xr);
                    }
                    acc(*weights, g);
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = 2.0 * gy[[0, 0]] / pv.len().max(1) as f64;
                let g = Zip::from(pv).and(target).map_collect(|&p, &t| scale * (p - t));
                acc(*pred, g);
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

/// Ordered collection of named learnable matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = value;
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.get(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params: self
                .iter()
                .map(|(name, v)| CheckpointEntry {
                    name: name.to_string(),
                    shape: vec![v.nrows(), v.ncols()],
                    values: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::ConfigMismatch(format!(
                "unknown checkpoint format `{}`",
                ckpt.format
            )));
        }
        let mut store = ParamStore::new();
        for entry in &ckpt.params {
            let [rows, cols] = entry.shape[..] else {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{}` has shape {:?}, expected two dimensions",
                    entry.name, entry.shape
                )));
            };
            let value = Array2::from_shape_vec((rows, cols), entry.values.clone()).map_err(|_| {
                Error::ConfigMismatch(format!(
                    "parameter `{}` has {} values for shape {:?}",
                    entry.name,
                    entry.values.len(),
                    entry.shape
                ))
            })?;
            store.insert(entry.name.clone(), value);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        ParamStore::from_checkpoint(&ckpt)
    }
}

/// Tape handles for every parameter of a store, in store order.
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    /// Records every parameter on `tape` as a learnable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.values.iter().map(|v| tape.param(v.clone())).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Gradients for every parameter in store order; zeros where none flowed.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &Gradients) -> Vec<Array2<f64>> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| grads.get_or_zeros(v, p.dim()))
            .collect()
    }
}

/// `B×N×D` → `(B·N)×D`, row `b·N + n`.
pub fn flatten_rows(x: ArrayView3<f64>) -> Array2<f64> {
    let (b, n, d) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * n, d))
        .expect("contiguous")
}

/// Inverse of [`flatten_rows`].
pub fn unflatten_rows(x: Array2<f64>, batch: usize) -> Result<Array3<f64>> {
    let (rows, d) = x.dim();
    if batch == 0 || rows % batch != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{rows} rows do not split into {batch} instances"
        )));
    }
    let x = x.as_standard_layout().into_owned();
    Ok(x.into_shape_with_order((batch, rows / batch, d)).expect("contiguous"))
}

const CHECKPOINT_FORMAT: &str = "wavets-checkpoint-v1";

/// JSON manifest of named row-major parameter buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &Array2<f64>| Array2::zeros(p.raw_dim());
        AdamState {
            config,
            step: 0,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update. `grads` is aligned with `params` order.
///
/// The state is left untouched when any gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &[Array2<f64>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err(name, p.shape(), g.shape()));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .values_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn linear_identity_and_sum() {
        let mut tape = Tape::new();
        let x = tape.input(array![[1.0, 2.0]]);
        let w = tape.param(array![[1.0, 0.0], [0.0, 1.0]]);
        let b = tape.param(array![[0.0, 0.0]]);
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y), &array![[1.0, 2.0]]);

        let w = tape.param(array![[1.0], [1.0]]);
        let b = tape.param(array![[3.0]]);
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y), &array![[6.0]]);

        let bad = tape.param(array![[1.0, 2.0, 3.0]]);
        assert!(matches!(tape.linear(x, bad, None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn relu_and_softmax_values() {
        let mut tape = Tape::new();
        let x = tape.input(array![[-1.0, 0.0, 2.0]]);
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r), &array![[0.0, 0.0, 2.0]]);

        let z = tape.input(array![[0.0, 0.0, 0.0]]);
        let s = tape.softmax_lastdim(z).unwrap();
        for v in tape.value(s).iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }

        let big = tape.input(array![[1000.0, 1000.0, 999.0]]);
        let s = tape.softmax_lastdim(big).unwrap();
        let row = tape.value(s);
        assert!(row.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        let naive: f64 = [1000.0f64, 1000.0, 999.0].iter().map(|v| v.exp()).sum();
        assert!(naive.is_infinite());

        let nan = tape.input(array![[f64::NAN, 1.0]]);
        assert!(matches!(tape.relu(nan), Err(Error::NonFinite(_))));
        assert!(matches!(tape.softmax_lastdim(nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(array![[0.0, 0.0]]);
        let l = tape.mse_loss(p, array![[1.0, 1.0]]).unwrap();
        assert_eq!(tape.value(l)[[0, 0]], 1.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &array![[-1.0, -1.0]]);

        let p = tape.param(array![[1.0, 2.0, 3.0]]);
        let l = tape.mse_loss(p, array![[2.0, 2.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(tape.value(l)[[0, 0]], 2.0 / 3.0, epsilon = 1e-15);

        let l = tape.mse_loss(p, array![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(tape.value(l)[[0, 0]], 0.0);
        assert!(tape.mse_loss(p, array![[1.0]]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0, 2.0]]);
        assert!(tape.backward(p).is_err());
    }

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", array![[v]]);
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &[array![[2.0]]], &mut state).unwrap();
        assert_abs_diff_eq!(params.get("theta").unwrap()[[0, 0]], -1e-3, epsilon = 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = scalar_store(0.7);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..10 {
            adam_step(&mut params, &[array![[0.0]]], &mut state).unwrap();
        }
        assert_eq!(params.get("theta").unwrap()[[0, 0]], 0.7);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut params = scalar_store(1.0);
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(config, &params);
        for _ in 0..100 {
            let theta = params.get("theta").unwrap()[[0, 0]];
            adam_step(&mut params, &[array![[2.0 * theta]]], &mut state).unwrap();
        }
        assert!(params.get("theta").unwrap()[[0, 0]].abs() < 0.05);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut params = scalar_store(1.0);
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let err = adam_step(&mut params, &[array![[f64::INFINITY]]], &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "theta"));
        assert_eq!(state.step_count(), 0);
        assert_eq!(params.get("theta").unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("w", array![[0.1, -1.0 / 3.0], [1e-300, std::f64::consts::PI]]);
        store.insert("delta", array![[0.999_999_999_999_999_9]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        store.save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        assert_eq!(back.names(), store.names());
        for (a, b) in back.values().iter().zip(store.values()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
