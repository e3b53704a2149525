//! Shared oracles for layer tests: round trips and brute-force Jacobians.

use super::FlowState;
use crate::error::Result;
use crate::numerics::{SquareMatrix, Tape, Tensor};
use crate::params::{Bound, ParamStore};

pub fn run_forward<F>(store: &ParamStore, x: &Tensor, f: F) -> (Tensor, Vec<f64>)
where
    F: Fn(&mut Tape, &mut Bound, FlowState) -> Result<FlowState>,
{
    let mut tape = Tape::new();
    let mut p = store.bind(&mut tape, false);
    let h = tape.constant(x.clone());
    let st = FlowState::new(&mut tape, h);
    let out = f(&mut tape, &mut p, st).unwrap();
    (tape.value(out.h).clone(), tape.value(out.logdet).data().to_vec())
}

pub fn run_inverse<F>(store: &ParamStore, z: &Tensor, f: F) -> (Tensor, Vec<f64>)
where
    F: Fn(&mut Tape, &Bound, FlowState) -> Result<FlowState>,
{
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let h = tape.constant(z.clone());
    let st = FlowState::new(&mut tape, h);
    let out = f(&mut tape, &p, st).unwrap();
    (tape.value(out.h).clone(), tape.value(out.logdet).data().to_vec())
}

/// inverse(forward(x)) == x, forward(inverse(z)) == z, and the log-dets of
/// the two directions cancel.
pub fn check_round_trip<F, G>(store: &ParamStore, x: &Tensor, fwd: F, inv: G)
where
    F: Fn(&mut Tape, &mut Bound, FlowState) -> Result<FlowState>,
    G: Fn(&mut Tape, &Bound, FlowState) -> Result<FlowState>,
{
    let (z, ld) = run_forward(store, x, &fwd);
    let (back, ld_inv) = run_inverse(store, &z, &inv);
    let err = back.max_abs_diff(x).unwrap();
    assert!(err < 1e-10, "inverse(forward(x)) error {err}");
    for (a, b) in ld.iter().zip(&ld_inv) {
        assert!((a + b).abs() < 1e-10, "logdet {a} vs inverse {b}");
    }
    let (x2, _) = run_inverse(store, x, &inv);
    let (z2, _) = run_forward(store, &x2, &fwd);
    let err = z2.max_abs_diff(x).unwrap();
    assert!(err < 1e-9, "forward(inverse(z)) error {err}");
}

/// Central-difference Jacobian of a batch-of-one map, flattened.
pub fn numeric_jacobian(x: &Tensor, f: impl Fn(&Tensor) -> Vec<f64>) -> (usize, Vec<f64>) {
    let d = x.numel();
    let step = 1e-5;
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut xp = x.clone();
        xp.data_mut()[j] += step;
        let mut xm = x.clone();
        xm.data_mut()[j] -= step;
        let (fp, fm) = (f(&xp), f(&xm));
        assert_eq!(fp.len(), d, "map must preserve dimension");
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    (d, jac)
}

/// Accumulated log-det equals log|det J| of the assembled Jacobian.
pub fn check_jacobian<F>(store: &ParamStore, x: &Tensor, fwd: F)
where
    F: Fn(&mut Tape, &mut Bound, FlowState) -> Result<FlowState>,
{
    assert_eq!(x.batch(), 1);
    let (_, ld) = run_forward(store, x, &fwd);
    let (d, jac) = numeric_jacobian(x, |xx| run_forward(store, xx, &fwd).0.into_vec());
    let brute = SquareMatrix::new(d, jac).unwrap().logabsdet().unwrap();
    assert!((ld[0] - brute).abs() < 1e-7, "logdet {} vs brute force {brute}", ld[0]);
}
