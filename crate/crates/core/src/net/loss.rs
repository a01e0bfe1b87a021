//! Distillation-loss evaluation, the NMSE metric, and the attention
//! gradient-formula checks.

use crate::tensor::RealTensor;

use super::ops::{
    attention_block_forward, conv2d_same, sigma_a, sigma_a_prime, ConvSpec, NetError,
};

pub fn mse(a: &RealTensor, b: &RealTensor) -> Result<f64, NetError> {
    if !a.same_shape(b) {
        return Err(NetError::ShapeMismatch("mse operands differ".into()));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Combined distillation loss: `alpha * MSE(student, truth) +
/// beta * MSE(student, teacher) + gamma * sum MSE(project(s_tap), t_tap)`.
///
/// Tap pairing is the caller's choice; `projections[i]` maps the channels of
/// `student_taps[i]` onto those of `teacher_taps[i]`.
#[allow(clippy::too_many_arguments)]
pub fn kd_loss(
    student_out: &RealTensor,
    teacher_out: &RealTensor,
    truth: &RealTensor,
    student_taps: &[RealTensor],
    teacher_taps: &[RealTensor],
    projections: &[ConvSpec],
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<f64, NetError> {
    if student_taps.len() != teacher_taps.len() || student_taps.len() != projections.len() {
        return Err(NetError::ShapeMismatch(
            "tap/projection count mismatch".into(),
        ));
    }
    let hard = mse(student_out, truth)?;
    let soft = mse(student_out, teacher_out)?;
    let mut feature = 0.0;
    for ((s, t), p) in student_taps.iter().zip(teacher_taps).zip(projections) {
        let projected = conv2d_same(s, p)?;
        feature += mse(&projected, t)?;
    }
    Ok(alpha * hard + beta * soft + gamma * feature)
}

/// NMSE as a linear ratio: `||est - truth||_F^2 / ||truth||_F^2`.
pub fn nmse(est: &RealTensor, truth: &RealTensor) -> Result<f64, NetError> {
    if !est.same_shape(truth) {
        return Err(NetError::ShapeMismatch("nmse operands differ".into()));
    }
    let denom: f64 = truth.data.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(NetError::ShapeMismatch("zero-norm truth".into()));
    }
    let num: f64 = est
        .data
        .iter()
        .zip(truth.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// NMSE in dB; a perfect estimate yields `f64::NEG_INFINITY`.
pub fn nmse_db(linear: f64) -> f64 {
    if linear == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * linear.log10()
    }
}

/// Compares the analytic elementwise attention derivative against central
/// finite differences of the forward path and returns the maximum relative
/// error. The analytic form is `(h + o_prev) * sigma_a'(h) + sigma_a(h)` with
/// the residual, `h * sigma_a'(h) + sigma_a(h)` without.
pub fn attention_gradient_check(
    h: &RealTensor,
    o_prev: &RealTensor,
    residual: bool,
    step: f64,
) -> Result<f64, NetError> {
    assert!((1e-7..=1e-4).contains(&step), "step out of supported range");
    let mut max_rel = 0.0f64;
    for idx in 0..h.data.len() {
        let hv = h.data[idx];
        let ov = o_prev.data[idx];
        let analytic = if residual {
            (hv + ov) * sigma_a_prime(hv) + sigma_a(hv)
        } else {
            hv * sigma_a_prime(hv) + sigma_a(hv)
        };

        let mut hp = h.clone();
        hp.data[idx] += step;
        let mut hm = h.clone();
        hm.data[idx] -= step;
        let fp = attention_block_forward(&hp, o_prev, residual)?.data[idx];
        let fm = attention_block_forward(&hm, o_prev, residual)?.data[idx];
        let numeric = (fp - fm) / (2.0 * step);

        let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    fn random_tensor(h: usize, w: usize, c: usize, rng: &mut SplitRng) -> RealTensor {
        RealTensor::from_vec(
            h,
            w,
            c,
            (0..h * w * c).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        )
    }

    #[test]
    fn kd_loss_zero_when_everything_matches() {
        let mut rng = SplitRng::new(1);
        let out = random_tensor(4, 4, 2, &mut rng);
        // One tap with an identity projection.
        let tap = random_tensor(4, 4, 3, &mut rng);
        let mut proj = ConvSpec::zeros(3, 3, 3);
        for i in 0..3 {
            *proj.w_mut(i, i, 1, 1) = 1.0;
        }
        let loss = kd_loss(
            &out,
            &out,
            &out,
            &[tap.clone()],
            &[tap],
            &[proj],
            1.0,
            10.0,
            2.0,
        )
        .unwrap();
        assert!(loss.abs() < 1e-20);
    }

    #[test]
    fn kd_loss_degenerate_weights() {
        let mut rng = SplitRng::new(2);
        let s = random_tensor(3, 3, 2, &mut rng);
        let t = random_tensor(3, 3, 2, &mut rng);
        let truth = random_tensor(3, 3, 2, &mut rng);
        let loss = kd_loss(&s, &t, &truth, &[], &[], &[], 2.0, 0.0, 0.0).unwrap();
        assert!((loss - 2.0 * mse(&s, &truth).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn kd_loss_scalar_oracle() {
        // Direct summation with the weights used for distillation.
        let mut rng = SplitRng::new(3);
        let s = random_tensor(2, 2, 1, &mut rng);
        let t = random_tensor(2, 2, 1, &mut rng);
        let truth = random_tensor(2, 2, 1, &mut rng);
        let s_tap = random_tensor(2, 2, 2, &mut rng);
        let t_tap = random_tensor(2, 2, 3, &mut rng);
        let mut proj = ConvSpec::zeros(3, 2, 3);
        for w in proj.weights.iter_mut() {
            *w = rng.uniform(-0.5, 0.5);
        }
        let (alpha, beta, gamma) = (1.0, 10.0, 2.0);
        let loss = kd_loss(
            &s,
            &t,
            &truth,
            &[s_tap.clone()],
            &[t_tap.clone()],
            &[proj.clone()],
            alpha,
            beta,
            gamma,
        )
        .unwrap();
        let projected = conv2d_same(&s_tap, &proj).unwrap();
        let expect = alpha * mse(&s, &truth).unwrap()
            + beta * mse(&s, &t).unwrap()
            + gamma * mse(&projected, &t_tap).unwrap();
        assert!((loss - expect).abs() < 1e-15);
    }

    #[test]
    fn nmse_basics() {
        let mut rng = SplitRng::new(4);
        let truth = random_tensor(3, 3, 2, &mut rng);
        assert_eq!(nmse(&truth, &truth).unwrap(), 0.0);
        assert_eq!(nmse_db(0.0), f64::NEG_INFINITY);
        let zero = RealTensor::zeros(3, 3, 2);
        assert!((nmse(&zero, &truth).unwrap() - 1.0).abs() < 1e-15);
        let mut doubled = truth.clone();
        doubled.data.iter_mut().for_each(|v| *v *= 2.0);
        let n = nmse(&doubled, &truth).unwrap();
        assert!((n - 1.0).abs() < 1e-15);
        assert!(nmse_db(n).abs() < 1e-12);
    }

    #[test]
    fn nmse_monotone_in_blend() {
        let mut rng = SplitRng::new(5);
        let truth = random_tensor(4, 4, 2, &mut rng);
        let est = random_tensor(4, 4, 2, &mut rng);
        let mut prev = -1.0;
        for step in 0..5 {
            let a = 1.0 - 0.2 * step as f64; // alpha from 1 down to 0.2
            let blend = RealTensor::from_vec(
                4,
                4,
                2,
                truth
                    .data
                    .iter()
                    .zip(est.data.iter())
                    .map(|(t, e)| a * t + (1.0 - a) * e)
                    .collect(),
            );
            let n = nmse(&blend, &truth).unwrap();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn gradient_check_at_origin() {
        let h = RealTensor::zeros(2, 2, 1);
        let o = RealTensor::zeros(2, 2, 1);
        let err = attention_gradient_check(&h, &o, true, 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn gradient_check_random_tensors() {
        let mut rng = SplitRng::new(6);
        for _ in 0..5 {
            let h = random_tensor(3, 3, 2, &mut rng);
            let o = random_tensor(3, 3, 2, &mut rng);
            for residual in [true, false] {
                let err = attention_gradient_check(&h, &o, residual, 1e-5).unwrap();
                assert!(err <= 1e-4, "max rel err {err}");
            }
        }
    }

    #[test]
    fn sigma_a_prime_peaks_at_origin() {
        assert!((sigma_a_prime(0.0) - 0.25).abs() < 1e-9);
        // strictly decreasing in |x| on a sampled grid
        let mut prev = sigma_a_prime(0.0);
        for i in 1..=1000 {
            let x = i as f64 * 8.0 / 1000.0;
            let v = sigma_a_prime(x);
            assert!(v < prev && v > 0.0);
            assert!((sigma_a_prime(-x) - v).abs() < 1e-15);
            prev = v;
        }
    }
}
