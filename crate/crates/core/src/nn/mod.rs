//! Feed-forward networks with hand-written reverse-mode gradients.
//!
//! An [`MlpNet`] is a stack of ReLU hidden layers followed by either a linear
//! head or a dueling head (`Q = V + A - mean(A)`). A net may also carry a
//! frozen lateral column whose hidden activations are concatenated into every
//! layer after the first (progressive networks).

mod checkpoint;
mod hyper;
mod loss;
mod matrix;
mod optim;

pub use checkpoint::{load_checkpoint, read_net, save_checkpoint, write_net};
pub use hyper::{Hyperparams, TrainBudget};
pub use loss::{
    binary_mask_loss, cross_entropy_loss, l2_anchor_penalty, log_softmax, sdqfd_loss, sigmoid,
    slm_loss, slm_violators, soft_cross_entropy_loss, softmax, td_loss, td_loss_double_q,
    td_targets, TdLoss, TdLossKind,
};
pub use matrix::{argmax, Matrix};
pub use optim::{Adam, AdamConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use matrix::{gemm, gemm_a_bt, gemm_at_b};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Linear,
    Dueling,
}

/// Fully connected layer, `y = x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    /// Uniform in `+-1/sqrt(fan_in)` for weights and biases.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut d = Self::zeros(in_dim, out_dim);
        d.w.iter_mut()
            .for_each(|v| *v = rng.gen_range(-bound..bound));
        d.b.iter_mut()
            .for_each(|v| *v = rng.gen_range(-bound..bound));
        d
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.out_dim);
        gemm(
            x.rows(),
            self.in_dim,
            self.out_dim,
            x.data(),
            &self.w,
            y.data_mut(),
        );
        for i in 0..x.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        y
    }

    /// Parameter gradients and (optionally) the input gradient.
    fn backward(&self, x: &Matrix, dy: &Matrix, need_dx: bool) -> (DenseGrad, Option<Matrix>) {
        let mut g = DenseGrad::zeros(self.in_dim, self.out_dim);
        gemm_at_b(
            self.in_dim,
            x.rows(),
            self.out_dim,
            x.data(),
            dy.data(),
            &mut g.w,
        );
        for i in 0..dy.rows() {
            for (gb, v) in g.b.iter_mut().zip(dy.row(i)) {
                *gb += v;
            }
        }
        let dx = need_dx.then(|| {
            let mut dx = Matrix::zeros(x.rows(), self.in_dim);
            gemm_a_bt(
                x.rows(),
                self.out_dim,
                self.in_dim,
                dy.data(),
                &self.w,
                dx.data_mut(),
            );
            dx
        });
        (g, dx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseGrad {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }
}

/// Gradients for every dense layer, in [`MlpNet::layers`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers()
                .map(|d| DenseGrad::zeros(d.in_dim, d.out_dim))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.layers {
            g.w.iter_mut().for_each(|v| *v *= k);
            g.b.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(shape_err(self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.w.len() != b.w.len() || a.b.len() != b.b.len() {
                return Err(shape_err(a.w.len() + a.b.len(), b.w.len() + b.b.len()));
            }
            a.w.iter_mut().zip(&b.w).for_each(|(x, y)| *x += y);
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.w.iter().chain(&g.b).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.w.iter().chain(&g.b).all(|&v| v == 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Head {
    Linear(Dense),
    Dueling { value: Dense, advantage: Dense },
}

#[derive(Clone, Debug)]
struct Cache {
    /// Input to each hidden layer (after lateral concatenation).
    hidden_inputs: Vec<Matrix>,
    /// ReLU outputs of each hidden layer.
    hidden_outputs: Vec<Matrix>,
    head_input: Matrix,
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Clone, Debug)]
pub struct MlpNet {
    input_dim: usize,
    hidden: Vec<Dense>,
    head: Head,
    /// Frozen hidden layers of another net feeding lateral connections.
    lateral: Option<Vec<Dense>>,
    /// Per-layer trainability, [`MlpNet::layers`] order.
    frozen: Vec<bool>,
    cache: Option<Cache>,
}

impl PartialEq for MlpNet {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.head == other.head
            && self.lateral == other.lateral
    }
}

impl MlpNet {
    /// `sizes = [input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: HeadKind, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let hidden: Vec<Dense> = sizes[..sizes.len() - 1]
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], rng))
            .collect();
        let last = sizes[sizes.len() - 2];
        let out = sizes[sizes.len() - 1];
        let head = match head {
            HeadKind::Linear => Head::Linear(Dense::random(last, out, rng)),
            HeadKind::Dueling => Head::Dueling {
                value: Dense::random(last, 1, rng),
                advantage: Dense::random(last, out, rng),
            },
        };
        Ok(Self::assemble(sizes[0], hidden, head, None))
    }

    fn assemble(
        input_dim: usize,
        hidden: Vec<Dense>,
        head: Head,
        lateral: Option<Vec<Dense>>,
    ) -> Self {
        let n = hidden.len()
            + if matches!(head, Head::Linear(_)) {
                1
            } else {
                2
            };
        Self {
            input_dim,
            hidden,
            head,
            lateral,
            frozen: vec![false; n],
            cache: None,
        }
    }

    /// Progressive net: a fresh agent column whose layers after the first
    /// also read the corresponding hidden activations of `column`, which is
    /// kept frozen.
    pub fn progressive<R: Rng + ?Sized>(
        column: &MlpNet,
        hidden_sizes: &[usize],
        output: usize,
        head: HeadKind,
        rng: &mut R,
    ) -> Result<Self> {
        let student = column.hidden.clone();
        if student.is_empty() || student.len() != hidden_sizes.len() {
            return Err(Error::ArchMismatch(format!(
                "lateral column has {} hidden layers, agent wants {}",
                student.len(),
                hidden_sizes.len()
            )));
        }
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        let mut prev = column.input_dim;
        for (i, &width) in hidden_sizes.iter().enumerate() {
            let in_dim = if i == 0 {
                prev
            } else {
                prev + student[i - 1].out_dim
            };
            hidden.push(Dense::random(in_dim, width, rng));
            prev = width;
        }
        let head_in = prev + student.last().expect("non-empty").out_dim;
        let head = match head {
            HeadKind::Linear => Head::Linear(Dense::random(head_in, output, rng)),
            HeadKind::Dueling => Head::Dueling {
                value: Dense::random(head_in, 1, rng),
                advantage: Dense::random(head_in, output, rng),
            },
        };
        Ok(Self::assemble(
            column.input_dim,
            hidden,
            head,
            Some(student),
        ))
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.head {
            Head::Linear(d) => d.out_dim,
            Head::Dueling { advantage, .. } => advantage.out_dim,
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head {
            Head::Linear(_) => HeadKind::Linear,
            Head::Dueling { .. } => HeadKind::Dueling,
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden.iter().map(|d| d.out_dim).collect()
    }

    pub fn hidden_layers(&self) -> &[Dense] {
        &self.hidden
    }

    pub fn is_progressive(&self) -> bool {
        self.lateral.is_some()
    }

    /// Trainable dense layers: hidden layers, then the head (linear layer, or
    /// value then advantage).
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        let head: Vec<&Dense> = match &self.head {
            Head::Linear(d) => vec![d],
            Head::Dueling { value, advantage } => vec![value, advantage],
        };
        self.hidden.iter().chain(head)
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out: Vec<&mut Dense> = self.hidden.iter_mut().collect();
        match &mut self.head {
            Head::Linear(d) => out.push(d),
            Head::Dueling { value, advantage } => {
                out.push(value);
                out.push(advantage);
            }
        }
        out
    }

    pub fn layer_count(&self) -> usize {
        self.frozen.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    pub fn freeze_hidden(&mut self) {
        let n = self.hidden.len();
        self.frozen[..n].iter_mut().for_each(|f| *f = true);
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.frozen[layer]
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|d| d.w.iter().chain(&d.b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape_err(self.param_count(), params.len()));
        }
        let mut off = 0;
        for d in self.layers_mut() {
            let (nw, nb) = (d.w.len(), d.b.len());
            d.w.copy_from_slice(&params[off..off + nw]);
            d.b.copy_from_slice(&params[off + nw..off + nw + nb]);
            off += nw + nb;
        }
        Ok(())
    }

    /// Copies every parameter from a net of identical architecture.
    pub fn copy_params_from(&mut self, other: &MlpNet) -> Result<()> {
        if !self.same_architecture(other) {
            return Err(Error::ArchMismatch(
                "cannot copy between different architectures".into(),
            ));
        }
        for (d, s) in self.layers_mut().into_iter().zip(other.layers()) {
            d.w.copy_from_slice(&s.w);
            d.b.copy_from_slice(&s.b);
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &MlpNet) -> bool {
        self.input_dim == other.input_dim
            && self.head_kind() == other.head_kind()
            && self.layer_count() == other.layer_count()
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.same_shape(b))
            && self.lateral.is_some() == other.lateral.is_some()
    }

    /// Copies hidden layers from `src`, which must have the same input and
    /// hidden widths. Returns the number of layers copied, including the head
    /// when a linear source head matches this net's output layer.
    pub fn copy_trunk_from(&mut self, src: &MlpNet) -> Result<usize> {
        if self.input_dim != src.input_dim
            || self.hidden.len() != src.hidden.len()
            || self
                .hidden
                .iter()
                .zip(&src.hidden)
                .any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::ArchMismatch(format!(
                "trunk {:?} vs {:?}",
                self.hidden_sizes(),
                src.hidden_sizes()
            )));
        }
        self.hidden.clone_from(&src.hidden);
        let mut copied = self.hidden.len();
        if let Head::Linear(s) = &src.head {
            match &mut self.head {
                Head::Linear(d) | Head::Dueling { advantage: d, .. } if d.same_shape(s) => {
                    d.clone_from(s);
                    copied += 1;
                }
                _ => {}
            }
        }
        Ok(copied)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(shape_err(self.input_dim, x.cols()));
        }
        Ok(())
    }

    fn lateral_activations(&self, x: &Matrix) -> Vec<Matrix> {
        let Some(col) = &self.lateral else {
            return Vec::new();
        };
        let mut acts = Vec::with_capacity(col.len());
        let mut h = x.clone();
        for d in col {
            h = d.forward(&h);
            relu_in_place(&mut h);
            acts.push(h.clone());
        }
        acts
    }

    fn run(&self, x: &Matrix, keep: bool) -> (Matrix, Option<Cache>) {
        let lateral = self.lateral_activations(x);
        let mut hidden_inputs = Vec::new();
        let mut hidden_outputs: Vec<Matrix> = Vec::new();
        let mut h = x.clone();
        for (i, d) in self.hidden.iter().enumerate() {
            let input = if i > 0 && !lateral.is_empty() {
                h.hcat(&lateral[i - 1])
            } else {
                h
            };
            let mut out = d.forward(&input);
            relu_in_place(&mut out);
            if keep {
                hidden_inputs.push(input);
                hidden_outputs.push(out.clone());
            }
            h = out;
        }
        let head_input = match lateral.last() {
            Some(s) => h.hcat(s),
            None => h,
        };
        let out = match &self.head {
            Head::Linear(d) => d.forward(&head_input),
            Head::Dueling { value, advantage } => {
                let v = value.forward(&head_input);
                let mut q = advantage.forward(&head_input);
                for i in 0..q.rows() {
                    let row = q.row_mut(i);
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    let vi = v.get(i, 0);
                    row.iter_mut().for_each(|a| *a += vi - mean);
                }
                q
            }
        };
        let cache = keep.then_some(Cache {
            hidden_inputs,
            hidden_outputs,
            head_input,
        });
        (out, cache)
    }

    /// Forward pass that records activations for [`MlpNet::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let (out, cache) = self.run(x, true);
        self.cache = cache;
        Ok(out)
    }

    /// Forward pass without recording; for targets and evaluation.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.run(x, false).0)
    }

    pub fn predict_one(&self, x: &[f32]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.iter().map(|&v| v as f64).collect())?;
        Ok(self.predict(&m)?.into_data())
    }

    /// Back-propagates `d_out` (gradient of the loss w.r.t. the outputs of
    /// the last [`MlpNet::forward`]). Frozen layers get zero gradients.
    pub fn backward(&self, d_out: &Matrix) -> Result<Gradients> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        if d_out.rows() != cache.head_input.rows() || d_out.cols() != self.output_dim() {
            return Err(shape_err(
                format!("{}x{}", cache.head_input.rows(), self.output_dim()),
                format!("{}x{}", d_out.rows(), d_out.cols()),
            ));
        }
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.layer_count());
        let need_hidden = !self.hidden.is_empty();
        let (head_grads, mut dh) = match &self.head {
            Head::Linear(d) => {
                let (g, dx) = d.backward(&cache.head_input, d_out, need_hidden);
                (vec![g], dx)
            }
            Head::Dueling { value, advantage } => {
                let rows = d_out.rows();
                let cols = d_out.cols();
                let mut dv = Matrix::zeros(rows, 1);
                let mut da = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let row = d_out.row(i);
                    let sum: f64 = row.iter().sum();
                    dv.row_mut(i)[0] = sum;
                    let mean = sum / cols as f64;
                    for (t, s) in da.row_mut(i).iter_mut().zip(row) {
                        *t = s - mean;
                    }
                }
                let (gv, dxv) = value.backward(&cache.head_input, &dv, need_hidden);
                let (ga, dxa) = advantage.backward(&cache.head_input, &da, need_hidden);
                let dx = match (dxv, dxa) {
                    (Some(mut a), Some(b)) => {
                        a.data_mut()
                            .iter_mut()
                            .zip(b.data())
                            .for_each(|(x, y)| *x += y);
                        Some(a)
                    }
                    _ => None,
                };
                (vec![gv, ga], dx)
            }
        };
        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for i in (0..self.hidden.len()).rev() {
            let d = &self.hidden[i];
            let mut dz = dh.take().expect("gradient flows into every hidden layer");
            // Lateral inputs are frozen; keep the agent's own columns.
            if dz.cols() != d.out_dim {
                dz = dz.left_cols(d.out_dim);
            }
            let out = &cache.hidden_outputs[i];
            dz.data_mut()
                .iter_mut()
                .zip(out.data())
                .for_each(|(g, &a)| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            let (g, dx) = d.backward(&cache.hidden_inputs[i], &dz, i > 0);
            hidden_grads.push(g);
            dh = dx;
        }
        hidden_grads.reverse();
        grads.extend(hidden_grads);
        grads.extend(head_grads);
        for (g, &frozen) in grads.iter_mut().zip(&self.frozen) {
            if frozen {
                g.w.iter_mut().for_each(|v| *v = 0.0);
                g.b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(Gradients { layers: grads })
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .all(|d| d.w.iter().chain(&d.b).all(|v| v.is_finite()))
    }
}

fn relu_in_place(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}
