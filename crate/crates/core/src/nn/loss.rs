use serde::{Deserialize, Serialize};

use super::{argmax, Gradients, Matrix, MlpNet};
use crate::error::{shape_err, Error, Result};
use crate::mdp::Transition;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean negative log-likelihood of `labels` under row-wise softmax, and its
/// gradient w.r.t. the logits.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(shape_err(logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    let m = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let logp = log_softmax(logits.row(i));
        loss -= logp[y];
        for (g, lp) in grad.row_mut(i).iter_mut().zip(&logp) {
            *g = lp.exp() / m;
        }
        grad.row_mut(i)[y] -= 1.0 / m;
    }
    Ok((loss / m, grad))
}

/// Cross-entropy against target distributions (rows of `targets`), averaged
/// over rows, and its gradient w.r.t. the logits.
pub fn soft_cross_entropy_loss(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.rows() != targets.rows() || logits.cols() != targets.cols() {
        return Err(shape_err(
            format!("{}x{}", logits.rows(), logits.cols()),
            format!("{}x{}", targets.rows(), targets.cols()),
        ));
    }
    let m = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let logp = log_softmax(logits.row(i));
        let t = targets.row(i);
        let mass: f64 = t.iter().sum();
        loss -= t.iter().zip(&logp).map(|(p, lp)| p * lp).sum::<f64>();
        for ((g, lp), p) in grad.row_mut(i).iter_mut().zip(&logp).zip(t) {
            *g = (mass * lp.exp() - p) / m;
        }
    }
    Ok((loss / m, grad))
}

/// Multi-label logistic loss: per row, the sum over actions of binary
/// cross-entropy against `masks` (entries in `[0, 1]`), averaged over rows.
pub fn binary_mask_loss(logits: &Matrix, masks: &Matrix) -> Result<(f64, Matrix)> {
    if logits.rows() != masks.rows() || logits.cols() != masks.cols() {
        return Err(shape_err(
            format!("{}x{}", logits.rows(), logits.cols()),
            format!("{}x{}", masks.rows(), masks.cols()),
        ));
    }
    let m = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for ((g, &z), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(logits.data())
        .zip(masks.data())
    {
        // -[t log s(z) + (1-t) log(1-s(z))] = softplus(z) - t z
        loss += softplus(z) - t * z;
        *g = (sigmoid(z) - t) / m;
    }
    Ok((loss / m, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TdLossKind {
    #[default]
    Squared,
    /// Huber with unit threshold.
    Huber,
}

/// Result of a TD loss evaluation. `grad` is w.r.t. the online net outputs
/// of the batch states, ready for [`MlpNet::backward`].
#[derive(Clone, Debug)]
pub struct TdLoss {
    pub loss: f64,
    /// `target - Q(s, a)` per sample.
    pub tde: Vec<f64>,
    pub grad: Matrix,
}

/// Double-Q targets `r + gamma (1 - done) Q_target(s', argmax_a Q_online(s', a))`.
pub fn td_targets(
    online: &MlpNet,
    target: &MlpNet,
    batch: &[Transition],
    gamma: f64,
) -> Result<Vec<f64>> {
    if !online.same_architecture(target) && online.output_dim() != target.output_dim() {
        return Err(Error::ArchMismatch(
            "online and target outputs differ".into(),
        ));
    }
    let live: Vec<&Transition> = batch.iter().filter(|t| !t.done).collect();
    let mut bootstrap = vec![0.0; batch.len()];
    if !live.is_empty() && gamma != 0.0 {
        let next = Matrix::from_observations(live.iter().map(|t| &t.next_state))?;
        let choose = online.predict(&next)?;
        let eval = target.predict(&next)?;
        let mut k = 0;
        for (i, t) in batch.iter().enumerate() {
            if !t.done {
                bootstrap[i] = eval.get(k, argmax(choose.row(k)));
                k += 1;
            }
        }
    }
    Ok(batch
        .iter()
        .zip(bootstrap)
        .map(|(t, b)| t.reward + if t.done { 0.0 } else { gamma * b })
        .collect())
}

/// Regression of `Q(s_i, a_i)` (rows of `q`) onto fixed `targets`, weighted
/// per sample and averaged over the batch.
pub fn td_loss(
    q: &Matrix,
    actions: &[usize],
    targets: &[f64],
    weights: Option<&[f64]>,
    kind: TdLossKind,
) -> Result<TdLoss> {
    let n = q.rows();
    if actions.len() != n || targets.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(shape_err(n, actions.len().min(targets.len())));
    }
    let m = n.max(1) as f64;
    let mut grad = Matrix::zeros(n, q.cols());
    let mut tde = Vec::with_capacity(n);
    let mut loss = 0.0;
    for i in 0..n {
        let a = actions[i];
        if a >= q.cols() {
            return Err(Error::ActionOutOfRange {
                action: a,
                count: q.cols(),
            });
        }
        let w = weights.map_or(1.0, |w| w[i]);
        let d = targets[i] - q.get(i, a);
        tde.push(d);
        let (l, dl_dq) = match kind {
            TdLossKind::Squared => (d * d, -2.0 * d),
            TdLossKind::Huber if d.abs() <= 1.0 => (0.5 * d * d, -d),
            TdLossKind::Huber => (d.abs() - 0.5, -d.signum()),
        };
        loss += w * l;
        grad.row_mut(i)[a] = w * dl_dq / m;
    }
    Ok(TdLoss {
        loss: loss / m,
        tde,
        grad,
    })
}

/// Double-Q TD loss. Runs a recording forward pass of `online` on the batch
/// states, so the caller can back-propagate `grad` directly; the target net
/// only supplies constants.
pub fn td_loss_double_q(
    online: &mut MlpNet,
    target: &MlpNet,
    batch: &[Transition],
    gamma: f64,
    weights: Option<&[f64]>,
    kind: TdLossKind,
) -> Result<TdLoss> {
    let targets = td_targets(online, target, batch, gamma)?;
    let states = Matrix::from_observations(batch.iter().map(|t| &t.state))?;
    let q = online.forward(&states)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
    td_loss(&q, &actions, &targets, weights, kind)
}

/// Actions whose value comes within `margin` of the expert's:
/// `{a : Q(a) + l(a_e, a) > Q(a_e)}` with `l = margin` off the expert action.
pub fn slm_violators(q: &[f64], expert: usize, margin: f64) -> Vec<usize> {
    (0..q.len())
        .filter(|&a| a != expert && q[a] + margin > q[expert])
        .collect()
}

/// Strict large-margin loss for one row of Q-values and its gradient.
pub fn slm_loss(q: &[f64], expert: usize, margin: f64) -> Result<(f64, Vec<f64>)> {
    if expert >= q.len() {
        return Err(Error::ActionOutOfRange {
            action: expert,
            count: q.len(),
        });
    }
    let set = slm_violators(q, expert, margin);
    let mut grad = vec![0.0; q.len()];
    if set.is_empty() {
        return Ok((0.0, grad));
    }
    let n = set.len() as f64;
    let loss = set.iter().map(|&a| q[a] + margin - q[expert]).sum::<f64>() / n;
    for &a in &set {
        grad[a] = 1.0 / n;
    }
    grad[expert] = -1.0;
    Ok((loss, grad))
}

pub fn sdqfd_loss(td: f64, slm: f64, omega: f64) -> f64 {
    td + omega * slm
}

/// `omega * |theta - anchor|^2` over every parameter and its gradient.
pub fn l2_anchor_penalty(net: &MlpNet, anchor: &[f64], omega: f64) -> Result<(f64, Gradients)> {
    if anchor.len() != net.param_count() {
        return Err(shape_err(net.param_count(), anchor.len()));
    }
    let mut grads = Gradients::zeros_like(net);
    let mut loss = 0.0;
    let mut off = 0;
    for (g, d) in grads.layers.iter_mut().zip(net.layers()) {
        for (gv, v) in
            g.w.iter_mut()
                .chain(g.b.iter_mut())
                .zip(d.w.iter().chain(&d.b))
        {
            let diff = v - anchor[off];
            loss += diff * diff;
            *gv = 2.0 * omega * diff;
            off += 1;
        }
    }
    Ok((omega * loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{seeded_rng, ActionId, Observation};
    use crate::nn::HeadKind;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cross_entropy_examples() {
        let n = 7;
        let (l, _) = cross_entropy_loss(&Matrix::zeros(1, n), &[3]).unwrap();
        assert!(close(l, (n as f64).ln(), 1e-12));
        let (l, _) =
            cross_entropy_loss(&Matrix::from_rows(&[[0.0, 3f64.ln()]]).unwrap(), &[0]).unwrap();
        assert!(close(l, 4f64.ln(), 1e-12));
        let (l, _) =
            cross_entropy_loss(&Matrix::from_rows(&[[60.0, 0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(l < 1e-20);
        assert!(matches!(
            cross_entropy_loss(&Matrix::zeros(1, 2), &[2]),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn soft_cross_entropy_matches_hard_labels_and_gradient() {
        let logits = Matrix::from_rows(&[[0.2, -1.0, 0.7], [1.5, 0.3, -0.4]]).unwrap();
        let onehot = Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        let (a, ga) = soft_cross_entropy_loss(&logits, &onehot).unwrap();
        let (b, gb) = cross_entropy_loss(&logits, &[2, 0]).unwrap();
        assert!(close(a, b, 1e-12));
        assert!(ga
            .data()
            .iter()
            .zip(gb.data())
            .all(|(x, y)| close(*x, *y, 1e-12)));

        let targets = Matrix::from_rows(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]).unwrap();
        let (_, g) = soft_cross_entropy_loss(&logits, &targets).unwrap();
        for k in 0..6 {
            let mut up = logits.clone();
            up.data_mut()[k] += 1e-6;
            let mut down = logits.clone();
            down.data_mut()[k] -= 1e-6;
            let num = (soft_cross_entropy_loss(&up, &targets).unwrap().0
                - soft_cross_entropy_loss(&down, &targets).unwrap().0)
                / 2e-6;
            assert!(close(num, g.data()[k], 1e-8));
        }
    }

    #[test]
    fn binary_mask_examples() {
        let (l, g) = binary_mask_loss(&Matrix::zeros(2, 5), &Matrix::zeros(2, 5)).unwrap();
        assert!(close(l, 5.0 * 2f64.ln(), 1e-12));
        assert!(g.data().iter().all(|&v| v > 0.0));
        let (l, _) = binary_mask_loss(
            &Matrix::from_rows(&[[80.0]]).unwrap(),
            &Matrix::from_rows(&[[1.0]]).unwrap(),
        )
        .unwrap();
        assert!(l < 1e-30);
        let (_, g) =
            binary_mask_loss(&Matrix::zeros(1, 1), &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert!(close(g.get(0, 0), -0.5, 1e-12));
        assert!(binary_mask_loss(&Matrix::zeros(1, 2), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn slm_worked_examples() {
        assert_eq!(slm_loss(&[1.0, 0.5], 0, 0.1).unwrap().0, 0.0);
        assert!(close(
            slm_loss(&[1.0, 0.95], 0, 0.1).unwrap().0,
            0.05,
            1e-12
        ));
        assert!(close(
            slm_loss(&[2.0, 2.0, 2.0], 1, 0.1).unwrap().0,
            0.1,
            1e-12
        ));
        assert_eq!(slm_violators(&[2.0, 2.0, 2.0], 1, 0.1), vec![0, 2]);
        assert_eq!(slm_violators(&[2.0, 2.0], 0, 0.0), Vec::<usize>::new());
    }

    #[test]
    fn sdqfd_combination() {
        assert_eq!(sdqfd_loss(0.7, 3.0, 0.0), 0.7);
        assert!(close(sdqfd_loss(1.0, 0.05, 0.1), 1.005, 1e-12));
    }

    #[test]
    fn anchor_examples() {
        let mut net = MlpNet::new(&[1, 1], HeadKind::Linear, &mut seeded_rng(0)).unwrap();
        net.set_flat_params(&[1.0, 0.0]).unwrap();
        let (l, g) = l2_anchor_penalty(&net, &[0.0, 0.0], 0.1).unwrap();
        assert!(close(l, 0.1, 1e-12));
        assert!(close(g.flatten()[0], 0.2, 1e-12));
        let p = net.flat_params();
        assert_eq!(l2_anchor_penalty(&net, &p, 0.1).unwrap().0, 0.0);
        assert!(l2_anchor_penalty(&net, &[0.0], 0.1).is_err());
    }

    fn obs(v: &[f32]) -> Observation {
        Observation::new(v.to_vec(), vec![v.len()]).unwrap()
    }

    fn transition(s: &[f32], a: usize, r: f64, s2: &[f32], done: bool) -> Transition {
        Transition::new(obs(s), ActionId(a), r, obs(s2), done).unwrap()
    }

    #[test]
    fn td_examples() {
        let mut rng = seeded_rng(4);
        let mut zero = MlpNet::new(&[2, 3], HeadKind::Linear, &mut rng).unwrap();
        zero.set_flat_params(&vec![0.0; zero.param_count()])
            .unwrap();
        let target = zero.clone();
        let batch = [transition(&[1.0, 0.0], 1, 1.0, &[0.0, 1.0], true)];
        let td =
            td_loss_double_q(&mut zero, &target, &batch, 0.9, None, TdLossKind::Squared).unwrap();
        assert!(close(td.loss, 1.0, 1e-12));

        let online = MlpNet::new(&[2, 4, 3], HeadKind::Dueling, &mut rng).unwrap();
        let other = MlpNet::new(&[2, 4, 3], HeadKind::Dueling, &mut rng).unwrap();
        let batch = [transition(&[0.3, 0.1], 0, 0.25, &[0.5, -1.0], false)];
        assert_eq!(
            td_targets(&online, &other, &batch, 0.0).unwrap(),
            vec![0.25]
        );

        // Constant target net: zero weights, bias c.
        let mut constant = MlpNet::new(&[2, 3], HeadKind::Linear, &mut rng).unwrap();
        constant
            .set_flat_params(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0])
            .unwrap();
        let online = MlpNet::new(&[2, 3], HeadKind::Linear, &mut rng).unwrap();
        let batch = [transition(&[0.3, 0.1], 0, 0.0, &[0.5, -1.0], false)];
        assert!(close(
            td_targets(&online, &constant, &batch, 0.9).unwrap()[0],
            1.8,
            1e-12
        ));
    }

    #[test]
    fn td_gradient_matches_finite_differences_and_ignores_target() {
        let mut rng = seeded_rng(11);
        let mut online = MlpNet::new(&[3, 5, 4], HeadKind::Dueling, &mut rng).unwrap();
        let target = MlpNet::new(&[3, 5, 4], HeadKind::Dueling, &mut rng).unwrap();
        let batch: Vec<Transition> = (0..6)
            .map(|i| {
                let s: Vec<f32> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s2: Vec<f32> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                transition(&s, i % 4, rng.gen_range(-1.0..1.0), &s2, i == 2)
            })
            .collect();
        let weights = [0.5, 1.0, 0.25, 1.0, 0.8, 0.3];
        for kind in [TdLossKind::Squared, TdLossKind::Huber] {
            // Targets are fixed constants: differentiate with them frozen.
            let targets = td_targets(&online, &target, &batch, 0.9).unwrap();
            let td =
                td_loss_double_q(&mut online, &target, &batch, 0.9, Some(&weights), kind).unwrap();
            let analytic = online.backward(&td.grad).unwrap().flatten();
            let states = Matrix::from_observations(batch.iter().map(|t| &t.state)).unwrap();
            let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
            let base = online.flat_params();
            let f = |p: &[f64]| {
                let mut n = online.clone();
                n.set_flat_params(p).unwrap();
                let q = n.predict(&states).unwrap();
                td_loss(&q, &actions, &targets, Some(&weights), kind)
                    .unwrap()
                    .loss
            };
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += 1e-5;
                let up = f(&p);
                p[i] -= 2e-5;
                let num = (up - f(&p)) / 2e-5;
                let a = analytic[i];
                assert!(
                    (a - num).abs() / (a.abs() + 1e-8) < 1e-4 || (a - num).abs() < 1e-9,
                    "{kind:?} {i}"
                );
            }
        }
    }
}
