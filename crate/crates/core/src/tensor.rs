//! Dense float-64 numeric core. Every primitive used by the network defines
//! a forward pass and an analytic backward pass, and all of them are checked
//! against central finite differences by [`grad_check`].

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major dense f64 array. The sole carrier for parameters, activations,
/// and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                message: format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let w = self.shape[1];
        self.data[r * w + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    /// Fill with uniform values in [lo, hi).
    pub fn fill_uniform(&mut self, rng: &mut Rng, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = rng.uniform(lo, hi);
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

/// C = A·B for 2-D tensors. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            message: format!("{:?} x {:?}", a.shape, b.shape),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let crow = &mut c.data[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    Ok(c)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, d_out: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    for i in 0..m {
        for p in 0..k {
            let mut s = 0.0;
            for j in 0..n {
                s += d_out.data[i * n + j] * b.data[p * n + j];
            }
            da.data[i * k + p] = s;
        }
    }
    for p in 0..k {
        for i in 0..m {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                db.data[p * n + j] += aip * d_out.data[i * n + j];
            }
        }
    }
    (da, db)
}

/// y = W·x for W[m×k], x[k]. The workhorse of the LSTM cell.
pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape.len() != 2 || x.shape.len() != 1 || w.cols() != x.len() {
        return Err(Error::Shape {
            op: "matvec",
            message: format!("{:?} x {:?}", w.shape, x.shape),
        });
    }
    let (m, k) = (w.rows(), w.cols());
    let mut y = Tensor::zeros(&[m]);
    for i in 0..m {
        let wrow = &w.data[i * k..(i + 1) * k];
        let mut s = 0.0;
        for p in 0..k {
            s += wrow[p] * x.data[p];
        }
        y.data[i] = s;
    }
    Ok(y)
}

/// Backward of matvec: dW = dy⊗xᵀ accumulated into `dw`, dx = Wᵀ·dy
/// accumulated into `dx`.
pub fn matvec_backward(w: &Tensor, x: &Tensor, dy: &Tensor, dw: &mut Tensor, dx: &mut Tensor) {
    let (m, k) = (w.rows(), w.cols());
    for i in 0..m {
        let g = dy.data[i];
        if g == 0.0 {
            continue;
        }
        let dwrow = &mut dw.data[i * k..(i + 1) * k];
        let wrow = &w.data[i * k..(i + 1) * k];
        for p in 0..k {
            dwrow[p] += g * x.data[p];
            dx.data[p] += g * wrow[p];
        }
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in &mut y.data {
        // Saturation-safe form: never exponentiates a large positive value.
        *v = if *v >= 0.0 {
            1.0 / (1.0 + (-*v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
    }
    y
}

/// dx given the forward output y: σ′ = y(1−y).
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, yv) in dx.data.iter_mut().zip(&y.data) {
        *d *= yv * (1.0 - yv);
    }
    dx
}

pub fn tanh(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in &mut y.data {
        *v = v.tanh();
    }
    y
}

/// dx given the forward output y: tanh′ = 1−y².
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, yv) in dx.data.iter_mut().zip(&y.data) {
        *d *= 1.0 - yv * yv;
    }
    dx
}

/// Stable softmax probabilities of a logit vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.clone();
    let mut sum = 0.0;
    for v in &mut p.data {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut p.data {
        *v /= sum;
    }
    p
}

/// loss = −log softmax(logits)[target]; dlogits = softmax − onehot(target).
pub fn softmax_cross_entropy(logits: &Tensor, target_id: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if target_id >= n {
        return Err(Error::Invalid(format!(
            "cross-entropy target {} out of range for {} logits",
            target_id, n
        )));
    }
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &logits.data {
        sum += (v - max).exp();
    }
    let log_z = max + sum.ln();
    let loss = log_z - logits.data[target_id];
    let mut dlogits = logits.clone();
    for v in &mut dlogits.data {
        *v = (*v - log_z).exp();
    }
    dlogits.data[target_id] -= 1.0;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "softmax_cross_entropy".to_string(),
        });
    }
    Ok((loss, dlogits))
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1−rate). During inference (training=false) it is the identity. The
/// returned mask already carries the scale factor so backward is an
/// elementwise product.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> (Tensor, Tensor) {
    assert!((0.0..1.0).contains(&rate));
    let mut mask = Tensor::zeros(x.shape());
    if !training || rate == 0.0 {
        for m in &mut mask.data {
            *m = 1.0;
        }
        return (x.clone(), mask);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut y = x.clone();
    for (yv, m) in y.data.iter_mut().zip(&mut mask.data) {
        if rng.next_f64() < rate {
            *yv = 0.0;
            *m = 0.0;
        } else {
            *yv *= keep_scale;
            *m = keep_scale;
        }
    }
    (y, mask)
}

pub fn dropout_backward(dy: &Tensor, mask: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, m) in dx.data.iter_mut().zip(&mask.data) {
        *d *= m;
    }
    dx
}

/// Concatenation of two 1-D tensors. Backward is [`split_grad`].
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::vector(data)
}

/// Split a concat gradient back into its two halves; `m` is the length of
/// the first input.
pub fn split_grad(dy: &Tensor, m: usize) -> (Tensor, Tensor) {
    (
        Tensor::vector(dy.data[..m].to_vec()),
        Tensor::vector(dy.data[m..].to_vec()),
    )
}

/// Central-difference gradient check. `loss` evaluates the scalar objective
/// at the given parameter values; `analytic` holds the gradients under test,
/// in the same order and with the same shapes as `params`. Returns the
/// maximum relative error |a−n| / max(|a|, |n|, 1e-8) over all coordinates.
pub fn grad_check<F>(loss: F, params: &[Tensor], analytic: &[Tensor], eps: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    grad_check_multi(loss, params, analytic, &[eps])
}

/// Like [`grad_check`] but scores each coordinate by its best agreement over
/// several step sizes. Small steps are roundoff-limited on near-zero
/// gradient coordinates and large steps are truncation-limited on steep
/// ones; a correct gradient agrees with at least one step everywhere, while
/// a wrong one disagrees with all of them.
pub fn grad_check_multi<F>(
    mut loss: F,
    params: &[Tensor],
    analytic: &[Tensor],
    steps: &[f64],
) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    assert!(!steps.is_empty());
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for p in 0..params.len() {
        assert_eq!(params[p].shape(), analytic[p].shape());
        for i in 0..params[p].len() {
            let a = analytic[p].data[i];
            let orig = work[p].data[i];
            let mut best = f64::INFINITY;
            for &eps in steps {
                work[p].data[i] = orig + eps;
                let up = loss(&work);
                work[p].data[i] = orig - eps;
                let down = loss(&work);
                work[p].data[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                best = best.min(rel);
            }
            max_rel = max_rel.max(best);
        }
    }
    max_rel
}

/// Like [`grad_check`] but builds a Richardson extrapolation tableau per
/// coordinate over the step ladder `h0 / 2^k`, `k < levels`, and scores the
/// coordinate by its best agreement across all tableau entries. Cancelling
/// the even-order truncation terms lets large, roundoff-friendly steps
/// produce accurate estimates, which plain central differences cannot do on
/// coordinates whose gradient sits near the relative-error floor. A wrong
/// analytic gradient still disagrees with every entry, since all entries
/// converge to the true derivative.
pub fn grad_check_richardson<F>(
    mut loss: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h0: f64,
    levels: usize,
) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    assert!(levels >= 1);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for p in 0..params.len() {
        assert_eq!(params[p].shape(), analytic[p].shape());
        for i in 0..params[p].len() {
            let a = analytic[p].data[i];
            let orig = work[p].data[i];
            let mut best = f64::INFINITY;
            // tableau[j] holds the order-2(j+1) extrapolant ending at the
            // current ladder level.
            let mut tableau: Vec<f64> = Vec::with_capacity(levels);
            let mut h = h0;
            for _ in 0..levels {
                work[p].data[i] = orig + h;
                let up = loss(&work);
                work[p].data[i] = orig - h;
                let down = loss(&work);
                work[p].data[i] = orig;
                let mut est = (up - down) / (2.0 * h);
                let mut factor = 4.0;
                for prev in tableau.iter_mut() {
                    let next = (factor * est - *prev) / (factor - 1.0);
                    *prev = est;
                    est = next;
                    factor *= 4.0;
                }
                tableau.push(est);
                for &cand in tableau.iter() {
                    let rel = (a - cand).abs() / a.abs().max(cand.abs()).max(1e-8);
                    best = best.min(rel);
                }
                h *= 0.5;
            }
            max_rel = max_rel.max(best);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_backward_finite_differences() {
        let mut rng = Rng::new(11);
        let mut a = Tensor::zeros(&[3, 4]);
        let mut b = Tensor::zeros(&[4, 2]);
        a.fill_uniform(&mut rng, -1.0, 1.0);
        b.fill_uniform(&mut rng, -1.0, 1.0);
        // scalar objective: sum of weighted outputs
        let mut w = Tensor::zeros(&[3, 2]);
        w.fill_uniform(&mut rng, -1.0, 1.0);
        let c = matmul(&a, &b).unwrap();
        let _ = c;
        let (da, db) = matmul_backward(&a, &b, &w);
        let err = grad_check(
            |ps| dot(matmul(&ps[0], &ps[1]).unwrap().data(), w.data()),
            &[a, b],
            &[da, db],
            1e-5,
        );
        assert!(err < 1e-6, "rel err {}", err);
    }

    #[test]
    fn sigmoid_tanh_values() {
        let x = Tensor::vector(vec![0.0]);
        assert_eq!(sigmoid(&x).data()[0], 0.5);
        assert_eq!(tanh(&x).data()[0], 0.0);
    }

    #[test]
    fn sigmoid_saturation_no_nan() {
        let x = Tensor::vector(vec![36.7, -36.7, 700.0, -700.0]);
        let y = sigmoid(&x);
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!(y.data()[0] > 0.999999);
        assert!(y.data()[1] < 1e-6);
    }

    #[test]
    fn elementwise_backward_finite_differences() {
        let mut rng = Rng::new(5);
        let mut x = Tensor::zeros(&[7]);
        x.fill_uniform(&mut rng, -2.0, 2.0);
        let mut w = Tensor::zeros(&[7]);
        w.fill_uniform(&mut rng, -1.0, 1.0);

        let y = sigmoid(&x);
        let dx = sigmoid_backward(&y, &w);
        let err = grad_check(
            |ps| dot(sigmoid(&ps[0]).data(), w.data()),
            std::slice::from_ref(&x),
            &[dx],
            1e-5,
        );
        assert!(err < 1e-6, "sigmoid rel err {}", err);

        let y = tanh(&x);
        let dx = tanh_backward(&y, &w);
        let err = grad_check(
            |ps| dot(tanh(&ps[0]).data(), w.data()),
            &[x],
            &[dx],
            1e-5,
        );
        assert!(err < 1e-6, "tanh rel err {}", err);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::vector(vec![0.3; 4]);
        let (loss, _) = softmax_cross_entropy(&logits, 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_single_logit() {
        let logits = Tensor::vector(vec![1.7]);
        let (loss, _) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let logits = Tensor::vector(vec![0.0, 1.0]);
        assert!(softmax_cross_entropy(&logits, 2).is_err());
    }

    #[test]
    fn cross_entropy_finite_differences() {
        let mut rng = Rng::new(99);
        let mut logits = Tensor::zeros(&[5]);
        logits.fill_uniform(&mut rng, -2.0, 2.0);
        let (_, dlogits) = softmax_cross_entropy(&logits, 3).unwrap();
        let err = grad_check(
            |ps| softmax_cross_entropy(&ps[0], 3).unwrap().0,
            &[logits],
            &[dlogits],
            1e-5,
        );
        assert!(err < 1e-6, "rel err {}", err);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = Tensor::vector(vec![1.0, -0.5, 2.25, 0.0]);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v += 100.0;
        }
        let pa = softmax(&a);
        let pb = softmax(&b);
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let mut rng = Rng::new(1);
        let (y, _) = dropout(&x, 0.0, &mut rng, true);
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let mut rng = Rng::new(1);
        let (y, _) = dropout(&x, 0.9, &mut rng, false);
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_keep_fraction() {
        let n = 100_000;
        let x = Tensor::vector(vec![1.0; n]);
        let mut rng = Rng::new(20);
        let (y, _) = dropout(&x, 0.5, &mut rng, true);
        let kept = y.data().iter().filter(|v| **v != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "keep fraction {}", kept);
        // survivors are scaled by 2
        assert!(y.data().iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0]);
        let c = concat(&a, &b);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
        let empty = Tensor::vector(vec![]);
        assert_eq!(concat(&a, &empty), a);
        let (da, db) = split_grad(&c, 2);
        assert_eq!(da.data(), &[1.0, 2.0]);
        assert_eq!(db.data(), &[3.0]);
    }

    #[test]
    fn grad_check_quadratic_exact() {
        let x = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let mut dx = x.clone();
        dx.scale(2.0);
        let err = grad_check(
            |ps| ps[0].data().iter().map(|v| v * v).sum(),
            &[x],
            &[dx],
            1e-5,
        );
        assert!(err < 1e-8, "rel err {}", err);
    }

    #[test]
    fn grad_check_detects_wrong_gradient() {
        let x = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let mut wrong = x.clone();
        wrong.scale(3.0); // true gradient is 2x
        let err = grad_check(
            |ps| ps[0].data().iter().map(|v| v * v).sum(),
            &[x],
            &[wrong],
            1e-5,
        );
        assert!(err > 1e-2, "negative control failed, rel err {}", err);
    }

    #[test]
    fn grad_check_richardson_matches_smooth_gradient() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1, 0.0]);
        let dx = Tensor::vector(x.data().iter().map(|v| v.cos()).collect());
        let err = grad_check_richardson(
            |ps| ps[0].data().iter().map(|v| v.sin()).sum(),
            &[x],
            &[dx],
            0.2,
            12,
        );
        assert!(err < 1e-10, "rel err {}", err);
    }

    #[test]
    fn grad_check_richardson_detects_wrong_gradient() {
        let x = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let mut wrong = x.clone();
        wrong.scale(2.0 * 1.001); // off by 0.1% from the true gradient 2x
        let err = grad_check_richardson(
            |ps| ps[0].data().iter().map(|v| v * v).sum(),
            &[x],
            &[wrong],
            0.2,
            12,
        );
        assert!(err > 5e-4, "negative control failed, rel err {}", err);
    }

    proptest! {
        #[test]
        fn matmul_backward_random_shapes(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let mut a = Tensor::zeros(&[m, k]);
            let mut b = Tensor::zeros(&[k, n]);
            let mut w = Tensor::zeros(&[m, n]);
            a.fill_uniform(&mut rng, -1.0, 1.0);
            b.fill_uniform(&mut rng, -1.0, 1.0);
            w.fill_uniform(&mut rng, -1.0, 1.0);
            let (da, db) = matmul_backward(&a, &b, &w);
            let err = grad_check(
                |ps| dot(matmul(&ps[0], &ps[1]).unwrap().data(), w.data()),
                &[a, b],
                &[da, db],
                1e-5,
            );
            prop_assert!(err < 1e-6);
        }

        #[test]
        fn dropout_backward_matches_mask(seed in 0u64..100) {
            let mut rng = Rng::new(seed);
            let mut x = Tensor::zeros(&[16]);
            x.fill_uniform(&mut rng, -1.0, 1.0);
            let (_, mask) = dropout(&x, 0.5, &mut rng, true);
            let mut w = Tensor::zeros(&[16]);
            w.fill_uniform(&mut rng, -1.0, 1.0);
            // with the mask frozen, dropout is linear: dx = mask ⊙ dy
            let dy = w.clone();
            let dx = dropout_backward(&dy, &mask);
            let err = grad_check(
                |ps| {
                    let masked = dropout_backward(&ps[0], &mask); // reuse: elementwise product
                    dot(masked.data(), w.data())
                },
                &[x],
                &[dx],
                1e-5,
            );
            prop_assert!(err < 1e-8);
        }
    }
}
