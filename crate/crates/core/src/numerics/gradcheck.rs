use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), eps)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, points: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::config("grad_check eps must be positive"));
    }
    let eval = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Numerical(format!("grad_check: function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::Numerical("grad_check: non-finite output".into()));
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..points[pi].len() {
            let orig = points[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_sum_is_exact() {
        let x = Tensor::new(vec![3], vec![0.3, -7.0, 12.0]).unwrap();
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_is_numerical_error() {
        let x = Tensor::new(vec![1], vec![1000.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let s = t.scale(v, 1e306);
                let s = t.mul(s, s)?;
                Ok(t.sum(s))
            },
            &x,
            1e-4,
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 2], &mut rng);
            let c = random(&[3, 2], &mut rng);
            let bias = random(&[2], &mut rng);
            let err = grad_check_many(
                |t, v| {
                    let ab = t.matmul(v[0], v[1])?;
                    let ab = t.add_row(ab, v[3])?;
                    let s = t.sigmoid(ab);
                    let th = t.tanh(v[2]);
                    let m = t.mul(s, th)?;
                    let d = t.sub(m, v[2])?;
                    let sm = t.softmax_rows(d);
                    let w = t.scale(sm, 3.0);
                    let left = t.slice_cols(w, 1, 1)?;
                    let top = t.slice_rows(d, 0, 2)?;
                    let both = t.concat_rows(&[top, d])?;
                    let sq = t.mul(both, both)?;
                    let s1 = t.sum(sq);
                    let s2 = t.sum(left);
                    let tot = t.add(s1, s2)?;
                    Ok(tot)
                },
                &[a, b, c, bias],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn l1_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = random(&[4, 3], &mut rng);
        let mut pred = random(&[4, 3], &mut rng);
        for (p, &q) in pred.data_mut().iter_mut().zip(target.data()) {
            if (*p - q).abs() < 1e-3 {
                *p += 0.1;
            }
        }
        let err = grad_check(
            |t, v| {
                let tg = t.constant(target.clone());
                t.masked_l1(v, tg, vec![true, false, true, true], 0.5)
            },
            &pred,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
