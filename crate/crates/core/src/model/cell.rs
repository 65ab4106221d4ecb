//! Coupled-gate LSTM cell with precomputed context adaptation.
//!
//! Gate pre-activations are `[i, f, o] = W'·[w, h] + b'`. The forget gate is
//! shifted by +1 before the sigmoid and doubles as one minus the input gate:
//!
//! ```text
//! f = sigmoid(f + 1)
//! m = m_prev ⊙ f + (1 − f) ⊙ tanh(i)
//! h = tanh(m) ⊙ sigmoid(o)
//! ```

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::tensor::{matmul, mode1_product, mode3_product, Tensor};

/// Low-rank adaptation `A = ((c ×₁ Z_L)(Z_R ×₃ c))ᵀ`, laid out 3d×(e+d) to
/// match `W`.
///
/// `c ×₁ Z_L` is (e+d)×r and `Z_R ×₃ c` is r×3d; their product is (e+d)×3d and
/// is transposed so rows index gates.
pub fn compute_adaptation(c: &[f64], left: &Tensor, right: &Tensor) -> Result<Tensor> {
    if left.rank() != 3 || right.rank() != 3 || left.shape()[2] != right.shape()[0] {
        return Err(Error::dim(
            "compute_adaptation",
            left.shape(),
            right.shape(),
        ));
    }
    let p = mode1_product(c, left)?; // (e+d)×r
    let q = mode3_product(right, c)?; // r×3d
    matmul(&q.transpose()?, &p.transpose()?)
}

/// Recurrent weights, gate bias and output-bias offset for one context.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedCell {
    /// W' = W + A
    pub weight: Tensor,
    /// b' = b + V·c
    pub bias: Vec<f64>,
    /// Added to the output logits (Q·c or a class-table row).
    pub offset: Vec<f64>,
    /// Context embedding that produced the cell (empty when unused).
    pub context: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    /// memory cell
    pub m: Vec<f64>,
}

impl CellState {
    pub fn zeros(d: usize) -> Self {
        CellState {
            h: vec![0.0; d],
            m: vec![0.0; d],
        }
    }
}

/// Everything one step computed, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct StepTrace {
    /// [w, h_prev]
    pub x: Vec<f64>,
    /// tanh(i), before dropout
    pub cand: Vec<f64>,
    /// forget gate after the sigmoid
    pub forget: Vec<f64>,
    /// sigmoid(o)
    pub out_gate: Vec<f64>,
    pub m_prev: Vec<f64>,
    pub m: Vec<f64>,
    pub tanh_m: Vec<f64>,
    pub h: Vec<f64>,
}

impl AdaptedCell {
    pub fn hidden_dim(&self) -> usize {
        self.bias.len() / 3
    }

    /// `W'·[w, h] + b'` split later into [i, f, o].
    pub fn preactivations(&self, w_emb: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(w_emb.len() + h.len());
        x.extend_from_slice(w_emb);
        x.extend_from_slice(h);
        self.preactivations_concat(&x)
    }

    fn preactivations_concat(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weight.matvec(x)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }

    pub(crate) fn step_traced(
        &self,
        w_emb: &[f64],
        state: &CellState,
        mask: Option<&[f64]>,
        step: Option<usize>,
    ) -> Result<StepTrace> {
        let d = self.hidden_dim();
        if state.h.len() != d || state.m.len() != d {
            return Err(Error::dim("cell_step", &[d], &[state.h.len(), state.m.len()]));
        }
        let mut x = Vec::with_capacity(w_emb.len() + d);
        x.extend_from_slice(w_emb);
        x.extend_from_slice(&state.h);
        let z = self.preactivations_concat(&x)?;
        let cand: Vec<f64> = z[..d].iter().map(|v| v.tanh()).collect();
        let forget: Vec<f64> = z[d..2 * d].iter().map(|v| sigmoid(v + 1.0)).collect();
        let out_gate: Vec<f64> = z[2 * d..].iter().map(|v| sigmoid(*v)).collect();
        let mut m = Vec::with_capacity(d);
        for j in 0..d {
            let g = match mask {
                Some(mk) => cand[j] * mk[j],
                None => cand[j],
            };
            m.push(state.m[j] * forget[j] + (1.0 - forget[j]) * g);
        }
        let tanh_m: Vec<f64> = m.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = tanh_m.iter().zip(&out_gate).map(|(a, b)| a * b).collect();
        if !m.iter().chain(&h).all(|v| v.is_finite()) {
            return Err(Error::non_finite("cell state", step));
        }
        Ok(StepTrace {
            x,
            cand,
            forget,
            out_gate,
            m_prev: state.m.clone(),
            m,
            tanh_m,
            h,
        })
    }
}

/// Advance the cell by one input embedding.
pub fn cell_step(cell: &AdaptedCell, w_emb: &[f64], state: &CellState) -> Result<CellState> {
    let t = cell.step_traced(w_emb, state, None, None)?;
    Ok(CellState { h: t.h, m: t.m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn cell(e: usize, d: usize) -> AdaptedCell {
        AdaptedCell {
            weight: Tensor::zeros(&[3 * d, e + d]),
            bias: vec![0.0; 3 * d],
            offset: vec![],
            context: vec![],
        }
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let c = cell(2, 3);
        let t = c
            .step_traced(&[0.0, 0.0], &CellState::zeros(3), None, None)
            .unwrap();
        for f in &t.forget {
            assert!((f - 0.731_058_578_630_004_9).abs() < 1e-15);
        }
        assert_eq!(t.m, vec![0.0; 3]);
        assert_eq!(t.h, vec![0.0; 3]);
    }

    #[test]
    fn saturated_gates_preserve_memory() {
        let d = 2;
        let mut c = cell(1, d);
        for j in 0..d {
            c.bias[j] = -1e3;
            c.bias[d + j] = 1e3;
            c.bias[2 * d + j] = -1e3;
        }
        let state = CellState {
            h: vec![0.0; d],
            m: vec![0.42, -0.9],
        };
        let next = cell_step(&c, &[0.3], &state).unwrap();
        assert_eq!(next.m, state.m);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matches_scalar_reference() {
        let (e, d) = (3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = AdaptedCell {
            weight: random(&[3 * d, e + d], &mut rng),
            bias: (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            offset: vec![],
            context: vec![],
        };
        let w: Vec<f64> = (0..e).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = CellState {
            h: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            m: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let next = cell_step(&c, &w, &state).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for j in 0..d {
            let pre = |row: usize| {
                let mut s = c.bias[row];
                for a in 0..e {
                    s += c.weight.get2(row, a) * w[a];
                }
                for a in 0..d {
                    s += c.weight.get2(row, e + a) * state.h[a];
                }
                s
            };
            let i = pre(j);
            let f = sig(pre(d + j) + 1.0);
            let o = pre(2 * d + j);
            let m = state.m[j] * f + (1.0 - f) * i.tanh();
            let h = m.tanh() * sig(o);
            assert!((next.m[j] - m).abs() < 1e-12);
            assert!((next.h[j] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_state_names_step() {
        let c = cell(1, 1);
        let state = CellState {
            h: vec![0.0],
            m: vec![f64::NAN],
        };
        let err = c.step_traced(&[0.0], &state, None, Some(7)).unwrap_err();
        assert!(err.to_string().contains("step 7"), "{err}");
    }

    #[test]
    fn adaptation_zero_and_single_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let left = random(&[1, 5, 2], &mut rng);
        let right = random(&[2, 6, 1], &mut rng);
        let a = compute_adaptation(&[0.0], &left, &right).unwrap();
        assert_eq!(a, Tensor::zeros(&[6, 5]));

        let a = compute_adaptation(&[1.0], &left, &right).unwrap();
        // k = 1: A = (Z_L[0] · Z_R[:, :, 0])ᵀ
        let zr = Tensor::from_fn(&[2, 6], |i| right.data()[i]);
        let expect = matmul(&left.slice0(0), &zr).unwrap().transpose().unwrap();
        for (x, y) in a.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptation_matches_bilinear_expansion() {
        let (k, p, r, g) = (2, 5, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let left = random(&[k, p, r], &mut rng);
        let right = random(&[r, g, k], &mut rng);
        let c = [0.7, -1.3];
        let a = compute_adaptation(&c, &left, &right).unwrap();
        for gi in 0..g {
            for pi in 0..p {
                let mut s = 0.0;
                for k1 in 0..k {
                    for k2 in 0..k {
                        for ri in 0..r {
                            s += c[k1] * c[k2] * left.get3(k1, pi, ri) * right.get3(ri, gi, k2);
                        }
                    }
                }
                assert!((a.get2(gi, pi) - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adaptation_rejects_bad_shapes() {
        let left = Tensor::zeros(&[2, 5, 3]);
        let right = Tensor::zeros(&[2, 6, 2]);
        assert!(compute_adaptation(&[1.0, 0.0], &left, &right).is_err());
    }
}
