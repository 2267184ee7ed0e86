//! Central-difference gradient checking.
//!
//! The analytic side comes from one tape backward pass; the finite-difference
//! side re-evaluates the function forward-only at perturbed parameters, so the
//! two routes share no differentiation code.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function produced a non-finite value during gradient check")]
    NonFinite,
    #[error("gradient check root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

/// Max over all parameter coordinates of
/// |analytic - central_difference| / max(1, |central_difference|).
///
/// `build` must construct the same scalar function of the leaves every time it
/// is called; it runs once for the analytic gradient and twice per coordinate
/// for the finite differences.
pub fn grad_check<F>(mut build: F, params: &[Tensor], h: f64) -> Result<f64, GradCheckError>
where
    F: FnMut(&mut Tape, &[Var]) -> Var,
{
    let eval = |build: &mut F, ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), GradCheckError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &vars);
        let rv = tape.value(root);
        if rv.len() != 1 {
            return Err(GradCheckError::NonScalarRoot(rv.shape().to_vec()));
        }
        if !rv.item().is_finite() {
            return Err(GradCheckError::NonFinite);
        }
        Ok((tape, vars, root))
    };

    let (tape, vars, root) = eval(&mut build, params)?;
    let grads = tape.backward(root);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.wrt(v, p.shape()))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for pi in 0..work.len() {
        for ci in 0..work[pi].len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let fp = {
                let (t, _, r) = eval(&mut build, &work)?;
                t.value(r).item()
            };
            work[pi].data_mut()[ci] = orig - h;
            let fm = {
                let (t, _, r) = eval(&mut build, &work)?;
                t.value(r).item()
            };
            work[pi].data_mut()[ci] = orig;
            let fd = (fp - fm) / (2.0 * h);
            if !fd.is_finite() {
                return Err(GradCheckError::NonFinite);
            }
            let rel = (analytic[pi].data()[ci] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        // f = sum(x^2): analytic gradient 2x.
        let params = vec![Tensor::new(vec![2], vec![1.0, 2.0])];
        let err = grad_check(
            |tape, vars| {
                let sq = tape.mul(vars[0], vars[0]);
                tape.sum_all(sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = vec![Tensor::new(vec![3], vec![0.3, -0.4, 0.9])];
        let err = grad_check(
            |tape, _vars| {
                let c = tape.leaf(Tensor::scalar(5.0));
                tape.affine(c, 1.0, 0.0)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn every_primitive_passes_gradcheck() {
        // One composite function touching each differentiable primitive once,
        // checked against central differences at 1e-4.
        let params = vec![
            Tensor::new(vec![2, 3], vec![0.31, -0.42, 0.55, 0.17, -0.68, 0.92]),
            Tensor::new(vec![3, 2], vec![0.21, 0.83, -0.44, 0.09, 0.66, -0.71]),
            Tensor::new(vec![2], vec![0.4, -0.3]),
            Tensor::new(vec![1], vec![0.8]),
            Tensor::new(vec![2, 3], vec![0.2, -0.1, 0.3, 0.45, 0.12, -0.27]), // conv kernel
            Tensor::new(vec![2], vec![0.05, -0.15]),                           // conv bias
        ];
        let err = grad_check(
            |tape, v| {
                let (x, w, b, s, k, kb) = (v[0], v[1], v[2], v[3], v[4], v[5]);
                let mm = tape.matmul(x, w); // [2,2]
                let mt = tape.matmul_tb(mm, mm); // [2,2]
                let biased = tape.add_row_vec(mt, b);
                let th = tape.tanh(biased);
                let sg = tape.sigmoid(th);
                let scaled = tape.scale_by_scalar(sg, s);
                let e = tape.exp(scaled);
                let sqr = tape.sqrt(e);
                let cl = tape.clamp(sqr, 0.2, 5.0);
                let sm = tape.softmax(cl, 1);
                let sm0 = tape.softmax(sm, 0);
                let cat = tape.concat_cols(&[sm0, cl]); // [2,4]
                let gl = tape.glu(cat); // [2,2]
                let lnv = tape.affine(gl, 0.5, 1.5);
                let ln = tape.ln(lnv);
                let mr = tape.mean_rows(ln); // [2]
                let flat = tape.reshape(x, vec![6]);
                let conv = tape.conv1d_same(flat, k, kb); // [2,6]
                let mc = tape.mean_cols(conv); // [2]
                let mx = tape.max_cols(conv); // [2]
                let st = tape.stack_rows(&[mr, mc, mx]); // [3,2]
                let tr = tape.transpose(st); // [2,3]
                let row = tape.mean_rows(tr); // [3]
                let rr = tape.reshape(row, vec![1, 3]);
                let br = tape.broadcast_rows(row, 2); // [2,3]
                let sr = tape.scale_rows(br, mr); // [2,3]
                let diff = tape.sub(sr, br);
                let prod = tape.mul(diff, br);
                let both = tape.add(prod, br);
                let ssum = tape.sum_all(both);
                let rsum = tape.sum_all(rr);
                let tot = tape.add(ssum, rsum);
                tape.add_scalar_var(tot, s)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn dft_path_passes_gradcheck() {
        let params = vec![Tensor::new(
            vec![2, 2, 2],
            vec![0.5, -0.25, 0.75, 0.1, -0.6, 0.33, 0.48, -0.9],
        )];
        let err = grad_check(
            |tape, v| {
                let (re, im) = tape.fft2(v[0]);
                // Complex magnitude squared summed over all bins, plus the
                // real part of the inverse to exercise both dft directions.
                let re2 = tape.mul(re, re);
                let im2 = tape.mul(im, im);
                let mag = tape.add(re2, im2);
                let (bre, _bim) = tape.ifft2(re, im);
                let s1 = tape.sum_all(mag);
                let s2 = tape.sum_all(bre);
                tape.add(s1, s2)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn non_scalar_root_rejected() {
        let params = vec![Tensor::new(vec![2], vec![1.0, 2.0])];
        let got = grad_check(|tape, vars| tape.mul(vars[0], vars[0]), &params, 1e-5);
        assert!(matches!(got, Err(GradCheckError::NonScalarRoot(_))));
    }
}
