use super::FlowState;
use crate::error::{NcsrError, Result};
use crate::numerics::{Padding, Rng, SquareMatrix, Tape, Tensor};
use crate::params::{Bound, ParamId, ParamStore};

/// Invertible 1x1 convolution: every pixel's channel vector is multiplied by
/// a learned `C x C` matrix stored directly (no LU parameterization).
#[derive(Clone, Debug)]
pub struct InvConv1x1 {
    pub name: String,
    pub channels: usize,
    pub weight: ParamId,
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw.
pub(crate) fn random_rotation(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..dim * dim).map(|_| rng.standard_normal()).collect();
        let mut ok = true;
        for r in 0..dim {
            for prev in 0..r {
                let dot: f64 = (0..dim).map(|k| m[r * dim + k] * m[prev * dim + k]).sum();
                for k in 0..dim {
                    m[r * dim + k] -= dot * m[prev * dim + k];
                }
            }
            let norm = (0..dim).map(|k| m[r * dim + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            for k in 0..dim {
                m[r * dim + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

impl InvConv1x1 {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut Rng) -> Self {
        let w = Tensor::from_vec([channels, channels, 1, 1], random_rotation(rng, channels)).expect("square weight");
        let weight = store.register(format!("{name}.weight"), w);
        InvConv1x1 {
            name: name.to_string(),
            channels,
            weight,
        }
    }

    pub fn set_matrix(&self, store: &mut ParamStore, m: &SquareMatrix) -> Result<()> {
        if m.dim() != self.channels {
            return Err(NcsrError::shape("inv_conv1x1", &[m.dim()], &[self.channels]));
        }
        store.set(self.weight, Tensor::from_vec([self.channels, self.channels, 1, 1], m.entries().to_vec())?)
    }

    fn check(&self, tape: &Tape, state: &FlowState) -> Result<(usize, usize)> {
        let [_, c, h, w] = tape.shape(state.h);
        if c != self.channels {
            return Err(NcsrError::shape("inv_conv1x1", &tape.shape(state.h), &[self.channels]));
        }
        Ok((h, w))
    }

    pub fn forward(&self, tape: &mut Tape, p: &mut Bound, state: FlowState) -> Result<FlowState> {
        let (h, w) = self.check(tape, &state)?;
        let wv = p.var(self.weight);
        let out = tape.conv2d(state.h, wv, None, 1, Padding::Valid)?;
        let det = tape.logabsdet(wv)?;
        let ld = tape.scale(det, (h * w) as f64);
        let logdet = tape.add(state.logdet, ld)?;
        Ok(FlowState { h: out, logdet })
    }

    /// Inverse with `W^-1` computed from the bound value; not differentiable
    /// with respect to the weight.
    pub fn inverse(&self, tape: &mut Tape, p: &Bound, state: FlowState) -> Result<FlowState> {
        let (h, w) = self.check(tape, &state)?;
        let m = SquareMatrix::new(self.channels, tape.value(p.var(self.weight)).data().to_vec())?;
        let (ld, inv) = m.logdet_and_inverse()?;
        let winv = tape.constant(Tensor::from_vec([self.channels, self.channels, 1, 1], inv.entries().to_vec())?);
        let out = tape.conv2d(state.h, winv, None, 1, Padding::Valid)?;
        let ldv = tape.constant(Tensor::scalar(ld * (h * w) as f64));
        let logdet = tape.sub(state.logdet, ldv)?;
        Ok(FlowState { h: out, logdet })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::*;

    fn layer(c: usize, seed: u64) -> (ParamStore, InvConv1x1) {
        let mut store = ParamStore::new();
        let l = InvConv1x1::new(&mut store, "conv", c, &mut Rng::seed_from_u64(seed));
        (store, l)
    }

    #[test]
    fn identity_weight_is_identity() {
        let (mut store, l) = layer(3, 1);
        l.set_matrix(&mut store, &SquareMatrix::identity(3)).unwrap();
        let x = Rng::seed_from_u64(2).gaussian([2, 3, 2, 2], 1.0).unwrap();
        let (y, ld) = run_forward(&store, &x, |t, p, s| l.forward(t, p, s));
        assert_eq!(y, x);
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_preserves_volume() {
        let (mut store, l) = layer(2, 1);
        let th: f64 = 0.6;
        let m = SquareMatrix::new(2, vec![th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        l.set_matrix(&mut store, &m).unwrap();
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let (y, ld) = run_forward(&store, &x, |t, p, s| l.forward(t, p, s));
        assert!(ld[0].abs() < 1e-15);
        assert!((y.data()[0] - th.cos()).abs() < 1e-15);
        assert!((y.data()[1] - th.sin()).abs() < 1e-15);
    }

    #[test]
    fn random_weight_matches_full_jacobian() {
        let (mut store, l) = layer(3, 5);
        let mut rng = Rng::seed_from_u64(6);
        let mut e: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        e[0] += 1.5;
        e[4] += 1.5;
        e[8] += 1.5;
        l.set_matrix(&mut store, &SquareMatrix::new(3, e).unwrap()).unwrap();
        let x = rng.gaussian([1, 3, 2, 2], 1.0).unwrap();
        check_jacobian(&store, &x, |t, p, s| l.forward(t, p, s));
        check_round_trip(&store, &x, |t, p, s| l.forward(t, p, s), |t, p, s| l.inverse(t, p, s));
    }

    #[test]
    fn singular_weight_rejected() {
        let (mut store, l) = layer(2, 1);
        l.set_matrix(&mut store, &SquareMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let mut p = store.bind(&mut tape, false);
        let h = tape.constant(Tensor::zeros([1, 2, 2, 2]));
        let st = FlowState::new(&mut tape, h);
        assert!(matches!(l.forward(&mut tape, &mut p, st), Err(NcsrError::Singular { .. })));
    }

    #[test]
    fn init_is_orthogonal() {
        let (store, l) = layer(5, 9);
        let m = SquareMatrix::new(5, store.get(l.weight).data().to_vec()).unwrap();
        let p = m.matmul(&m.transpose()).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((p.get(r, c) - want).abs() < 1e-12);
            }
        }
    }
}
