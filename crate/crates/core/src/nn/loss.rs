use super::{Scalar, Tensor4};
use crate::error::{bail, Result};

/// Logistic function, evaluated on the side that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `(sigmoid(pred) - target)^2` and its gradient with respect to `pred`.
pub fn loss_mse<S: Scalar>(pred: &Tensor4<S>, target: &Tensor4<S>) -> Result<(f64, Tensor4<S>)> {
    if pred.shape() != target.shape() {
        bail!(
            Shape,
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        );
    }
    let n = pred.len() as f64;
    let mut grad = Tensor4::zeros(pred.shape());
    let mut total = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let s = sigmoid(p.as_f64());
        let d = s - t.as_f64();
        total += d * d;
        *g = S::of(2.0 * d * s * (1.0 - s) / n);
    }
    Ok((total / n, grad))
}

/// Two-class softmax cross-entropy over `[N, 2, H, W]` logits.
///
/// `labels` is `N*H*W` values in {0, 1} (1 = wrinkle). Wrinkle pixels are
/// weighted by `pos_weight` and the sum is normalised by the total weight.
pub fn loss_softmax_ce<S: Scalar>(
    pred: &Tensor4<S>,
    labels: &[u8],
    pos_weight: f64,
) -> Result<(f64, Tensor4<S>)> {
    let [n, c, h, w] = pred.shape();
    if c != 2 {
        bail!(Shape, "softmax CE needs 2 channels, got {:?}", pred.shape());
    }
    if labels.len() != n * h * w {
        bail!(
            Shape,
            "{} labels for logits {:?} (need {})",
            labels.len(),
            pred.shape(),
            n * h * w
        );
    }
    if !(pos_weight > 0.0) {
        bail!(Argument, "pos_weight must be positive, got {pos_weight}");
    }
    let hw = h * w;
    let weight = |l: u8| if l == 1 { pos_weight } else { 1.0 };
    let norm: f64 = labels.iter().map(|&l| weight(l)).sum();
    let mut grad = Tensor4::zeros(pred.shape());
    let mut total = 0.0;
    let logits = pred.data();
    let g = grad.data_mut();
    for b in 0..n {
        for p in 0..hw {
            let ib = b * 2 * hw + p;
            let iw = ib + hw;
            let (lb, lw) = (logits[ib].as_f64(), logits[iw].as_f64());
            let label = labels[b * hw + p];
            let m = lb.max(lw);
            let lse = m + ((lb - m).exp() + (lw - m).exp()).ln();
            let wt = weight(label);
            let chosen = if label == 1 { lw } else { lb };
            total += wt * (lse - chosen);
            let pw = (lw - lse).exp();
            let pb = (lb - lse).exp();
            let scale = wt / norm;
            g[ib] = S::of((pb - f64::from(label == 0)) * scale);
            g[iw] = S::of((pw - f64::from(label == 1)) * scale);
        }
    }
    Ok((total / norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn mse_zero_at_target() {
        let target = Tensor4::from_fn([1, 1, 2, 3], |[_, _, y, x]| 0.1 + 0.1 * (y * 3 + x) as f64);
        let pred = Tensor4::from_fn([1, 1, 2, 3], |i| logit(target.at(i)));
        assert!(loss_mse(&pred, &target).unwrap().0 < 1e-24);

        let half = Tensor4::from_vec([1, 1, 2, 2], vec![0.5f64; 4]).unwrap();
        assert_eq!(loss_mse(&Tensor4::zeros([1, 1, 2, 2]), &half).unwrap().0, 0.0);
        assert!(loss_mse(&half, &Tensor4::zeros([1, 1, 2, 3])).is_err());
    }

    #[test]
    fn mse_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = Tensor4::<f64>::from_fn([2, 1, 4, 4], |_| rng.random_range(-3.0..3.0));
        let target = Tensor4::<f64>::from_fn([2, 1, 4, 4], |_| rng.random::<f64>());
        let (loss, _) = loss_mse(&pred, &target).unwrap();
        let mut oracle = 0.0;
        for (p, t) in pred.data().iter().zip(target.data()) {
            let s = 1.0 / (1.0 + (-p).exp());
            oracle += (s - t) * (s - t);
        }
        assert!((loss - oracle / 32.0).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform_is_ln2() {
        let pred = Tensor4::<f64>::zeros([1, 2, 2, 2]);
        let (loss, _) = loss_softmax_ce(&pred, &[0, 1, 1, 0], 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn ce_saturates() {
        let labels = [1u8, 0];
        let pred = Tensor4::from_vec([1, 2, 1, 2], vec![-10.0f64, 10.0, 10.0, -10.0]).unwrap();
        assert!(loss_softmax_ce(&pred, &labels, 1.0).unwrap().0 < 1e-8);
    }

    #[test]
    fn ce_matches_oracle_and_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Tensor4::<f64>::from_fn([2, 2, 3, 3], |_| rng.random_range(-50.0..50.0));
        let labels: Vec<u8> = (0..18).map(|_| rng.random_range(0..2)).collect();
        let pw = 3.0;
        let (loss, _) = loss_softmax_ce(&pred, &labels, pw).unwrap();
        assert!(loss.is_finite());
        let mut num = 0.0;
        let mut den = 0.0;
        for b in 0..2 {
            for p in 0..9 {
                let l0 = pred.data()[b * 18 + p];
                let l1 = pred.data()[b * 18 + 9 + p];
                let lab = labels[b * 9 + p];
                let (mine, other) = if lab == 1 { (l1, l0) } else { (l0, l1) };
                // -log softmax = log(1 + exp(other - mine)), written without overflow
                let d = other - mine;
                let nll = if d > 0.0 { d + (-d).exp().ln_1p() } else { d.exp().ln_1p() };
                let w = if lab == 1 { pw } else { 1.0 };
                num += w * nll;
                den += w;
            }
        }
        assert!((loss - num / den).abs() < 1e-6);
    }

    #[test]
    fn ce_rejects_bad_shapes() {
        assert!(loss_softmax_ce(&Tensor4::<f32>::zeros([1, 3, 2, 2]), &[0; 4], 1.0).is_err());
        assert!(loss_softmax_ce(&Tensor4::<f32>::zeros([1, 2, 2, 2]), &[0; 3], 1.0).is_err());
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
