//! Sliding-window two-layer scorer: `s(u_n) = M2 · tanh(M1 · u_n)`, where
//! `u_n` concatenates the K `(repr ‖ tag)` slots centered on constituent `n`
//! and slots past either end hold the learned padding vector.

use crate::error::{Error, Result};
use crate::nncore::{add_into, affine_backward, affine_tanh, tanh_backward, ModelParams, ParamGrads, Tensor};

/// Raw BIOES scores plus the activations needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub scores: Tensor,
    windows: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.rows() == 0
    }
}

/// Constituent feeding window slot `j` of position `n`, or `None` for padding.
pub fn window_source(n: usize, j: usize, len: usize, window: usize) -> Option<usize> {
    let half = (window - 1) / 2;
    let idx = (n + j).checked_sub(half)?;
    (idx < len).then_some(idx)
}

pub fn window_input(slots: &[Vec<f64>], n: usize, params: &ModelParams) -> Vec<f64> {
    let k = params.dims.window;
    let mut u = Vec::with_capacity(k * params.dims.slot());
    for j in 0..k {
        match window_source(n, j, slots.len(), k) {
            Some(i) => u.extend_from_slice(&slots[i]),
            None => u.extend_from_slice(&params.pad),
        }
    }
    u
}

/// Scores every constituent. `slots[i]` is constituent `i`'s `(repr ‖ tag)`.
pub fn score_sequence(slots: &[Vec<f64>], params: &ModelParams) -> Result<ScoreTable> {
    if slots.is_empty() {
        return Err(Error::ShapeMismatch("empty constituent sequence".into()));
    }
    let slot = params.dims.slot();
    if let Some(s) = slots.iter().find(|s| s.len() != slot) {
        return Err(Error::ShapeMismatch(format!(
            "constituent slot of length {}, expected {slot}",
            s.len()
        )));
    }
    let mut scores = Tensor::zeros(slots.len(), params.m2.rows());
    let mut windows = Vec::with_capacity(slots.len());
    let mut hidden = Vec::with_capacity(slots.len());
    for n in 0..slots.len() {
        let u = window_input(slots, n, params);
        let h = affine_tanh(&params.m1, &u)?;
        let s = params.m2.matvec(&h)?;
        scores.row_mut(n).copy_from_slice(&s);
        windows.push(u);
        hidden.push(h);
    }
    Ok(ScoreTable {
        scores,
        windows,
        hidden,
    })
}

/// Accumulates gradients into M1, M2 and the padding vector and returns the
/// gradient on each constituent slot. Overlapping windows add up.
pub fn tagger_backward(
    table: &ScoreTable,
    grad_scores: &Tensor,
    params: &ModelParams,
    out: &mut ParamGrads,
) -> Result<Vec<Vec<f64>>> {
    let n_items = table.len();
    if table.windows.len() != n_items || table.hidden.len() != n_items {
        return Err(Error::MissingForwardCache);
    }
    if grad_scores.shape() != table.scores.shape() {
        return Err(Error::ShapeMismatch(format!(
            "score gradient {:?} for scores {:?}",
            grad_scores.shape(),
            table.scores.shape()
        )));
    }
    let k = params.dims.window;
    let slot = params.dims.slot();
    let mut slot_grads = vec![vec![0.0; slot]; n_items];
    for n in 0..n_items {
        let g_s = grad_scores.row(n);
        if g_s.iter().all(|&x| x == 0.0) {
            continue;
        }
        let g_h = affine_backward(&params.m2, &table.hidden[n], g_s, &mut out.m2);
        let g_pre = tanh_backward(&table.hidden[n], &g_h);
        let g_u = affine_backward(&params.m1, &table.windows[n], &g_pre, &mut out.m1);
        for j in 0..k {
            let part = &g_u[j * slot..(j + 1) * slot];
            match window_source(n, j, n_items, k) {
                Some(i) => add_into(&mut slot_grads[i], part),
                None => add_into(&mut out.pad, part),
            }
        }
    }
    Ok(slot_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{grad_check, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(window: usize, seed: u64) -> ModelParams {
        let dims = ModelDims {
            word_dim: 3,
            tag_dim: 2,
            hidden: 4,
            window,
            kmax: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(dims, 4, 4, 9, &mut rng).unwrap();
        p.m1 = Tensor::uniform(p.m1.rows(), p.m1.cols(), 0.7, &mut rng);
        p.m2 = Tensor::uniform(p.m2.rows(), p.m2.cols(), 0.7, &mut rng);
        p.pad = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p
    }

    fn slots(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn single_item_window_is_padded() {
        let p = params(5, 1);
        let x = slots(1, 2);
        let u = window_input(&x, 0, &p);
        let expected = [p.pad.clone(), p.pad.clone(), x[0].clone(), p.pad.clone(), p.pad.clone()].concat();
        assert_eq!(u, expected);
    }

    #[test]
    fn zero_second_layer_gives_zero_scores() {
        let mut p = params(3, 1);
        p.m2.fill(0.0);
        let t = score_sequence(&slots(4, 3), &p).unwrap();
        assert!(t.scores.data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn eval_scoring_is_deterministic() {
        let p = params(3, 1);
        let x = slots(5, 4);
        let a = score_sequence(&x, &p).unwrap();
        let b = score_sequence(&x, &p).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn prepending_changes_only_overlapping_windows() {
        let p = params(3, 1);
        let x = slots(6, 5);
        let base = score_sequence(&x, &p).unwrap();
        let mut shifted = slots(1, 6);
        shifted.extend(x.iter().cloned());
        let moved = score_sequence(&shifted, &p).unwrap();
        // With K=3 only the old first position sees the new item.
        assert_ne!(base.scores.row(0), moved.scores.row(1));
        for n in 1..x.len() {
            assert_eq!(base.scores.row(n), moved.scores.row(n + 1));
        }
    }

    fn summed_loss(x: &[Vec<f64>], p: &ModelParams, w: &Tensor) -> f64 {
        let t = score_sequence(x, p).unwrap();
        t.scores.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = params(3, 7);
        let x = slots(3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::uniform(3, 9, 1.0, &mut rng);
        let table = score_sequence(&x, &p).unwrap();
        let mut grads = ParamGrads::zeros(&p);
        let slot_grads = tagger_backward(&table, &w, &p, &mut grads).unwrap();

        let err = grad_check(
            |v| {
                let mut q = p.clone();
                q.unflatten(v);
                summed_loss(&x, &q, &w)
            },
            &p.flatten(),
            &grads.flatten(&p),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");

        let flat_x: Vec<f64> = x.concat();
        let err_x = grad_check(
            |v| {
                let xs: Vec<Vec<f64>> = v.chunks(5).map(|c| c.to_vec()).collect();
                summed_loss(&xs, &p, &w)
            },
            &flat_x,
            &slot_grads.concat(),
            1e-5,
        )
        .unwrap();
        assert!(err_x < 1e-4, "{err_x}");
    }

    #[test]
    fn zero_gradient_and_window_counts() {
        let p = params(3, 7);
        let x = slots(5, 8);
        let table = score_sequence(&x, &p).unwrap();
        let mut grads = ParamGrads::zeros(&p);
        let zero = tagger_backward(&table, &Tensor::zeros(5, 9), &p, &mut grads).unwrap();
        assert!(zero.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.flatten(&p).iter().all(|&g| g == 0.0));

        // Windows containing each position for N=5, K=3.
        let counts: Vec<usize> = (0..5)
            .map(|i| {
                (0..5)
                    .filter(|&n| (0..3).any(|j| window_source(n, j, 5, 3) == Some(i)))
                    .count()
            })
            .collect();
        assert_eq!(counts, vec![2, 3, 3, 3, 2]);
    }

    #[test]
    fn padding_gradient_only_from_boundary_windows() {
        let p = params(3, 7);
        let x = slots(5, 8);
        let table = score_sequence(&x, &p).unwrap();
        let mut interior = Tensor::zeros(5, 9);
        interior.row_mut(2).iter_mut().for_each(|g| *g = 1.0);
        let mut grads = ParamGrads::zeros(&p);
        tagger_backward(&table, &interior, &p, &mut grads).unwrap();
        assert!(grads.pad.iter().all(|&g| g == 0.0));

        let mut edge = Tensor::zeros(5, 9);
        edge.row_mut(0).iter_mut().for_each(|g| *g = 1.0);
        let mut grads = ParamGrads::zeros(&p);
        tagger_backward(&table, &edge, &p, &mut grads).unwrap();
        assert!(grads.pad.iter().any(|&g| g != 0.0));
    }
}
