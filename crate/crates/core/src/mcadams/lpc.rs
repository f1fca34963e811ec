use num_complex::Complex64;

use super::poly::poly_roots;
use crate::error::{Error, Result};

/// How an [`LpcFrameModel`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpcStatus {
    Ok,
    /// Frame had no energy; identity model.
    Silent,
    /// Levinson recursion hit a reflection coefficient with `|k| >= 1`, or the
    /// pole computation failed; identity model.
    Singular,
}

/// All-pole model of one frame.
#[derive(Debug, Clone)]
pub struct LpcFrameModel {
    /// Denominator `A(z) = 1 + a1 z^-1 + ... + ap z^-p`, leading 1 included.
    pub coefficients: Vec<f64>,
    /// Roots of `coefficients` read as a descending-power polynomial.
    pub poles: Vec<Complex64>,
    /// Inverse-filter output `A(z) x`, same length as the frame.
    pub residual: Vec<f64>,
    /// Final prediction-error power from the recursion.
    pub gain: f64,
    pub status: LpcStatus,
}

impl LpcFrameModel {
    fn identity(frame: &[f64], status: LpcStatus) -> Self {
        Self {
            coefficients: vec![1.0],
            poles: Vec::new(),
            residual: frame.to_vec(),
            gain: 0.0,
            status,
        }
    }
}

pub fn autocorrelation(frame: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            frame[lag..]
                .iter()
                .zip(frame)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Levinson-Durbin recursion. Returns `(coefficients, prediction error)`, or
/// `None` when a reflection coefficient reaches magnitude one.
pub fn levinson_durbin(r: &[f64], order: usize) -> Option<(Vec<f64>, f64)> {
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    for i in 1..=order {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            return None;
        }
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
    }
    Some((a, err))
}

/// Applies the FIR inverse filter `A(z)` with zero initial state.
pub fn inverse_filter(frame: &[f64], coefficients: &[f64]) -> Vec<f64> {
    (0..frame.len())
        .map(|n| {
            coefficients
                .iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, a)| a * frame[n - k])
                .sum()
        })
        .collect()
}

/// Autocorrelation-method LPC analysis of one (already windowed) frame.
pub fn lpc_analyze(frame: &[f64], order: usize) -> Result<LpcFrameModel> {
    if order == 0 || frame.len() <= order {
        return Err(Error::Config(format!(
            "LPC order {order} needs a frame longer than the order (got {})",
            frame.len()
        )));
    }
    let r = autocorrelation(frame, order);
    if r[0] <= f64::MIN_POSITIVE {
        return Ok(LpcFrameModel::identity(frame, LpcStatus::Silent));
    }
    let Some((coefficients, gain)) = levinson_durbin(&r, order) else {
        return Ok(LpcFrameModel::identity(frame, LpcStatus::Singular));
    };
    let Ok(poles) = poly_roots(&coefficients) else {
        return Ok(LpcFrameModel::identity(frame, LpcStatus::Singular));
    };
    let residual = inverse_filter(frame, &coefficients);
    Ok(LpcFrameModel {
        coefficients,
        poles,
        residual,
        gain,
        status: LpcStatus::Ok,
    })
}

/// Filters `residual` through the all-pole filter `1 / A(z)`, zero initial state.
pub fn synthesize_frame(residual: &[f64], coefficients: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(residual.len());
    for (n, &e) in residual.iter().enumerate() {
        let feedback: f64 = coefficients
            .iter()
            .enumerate()
            .skip(1)
            .take(n)
            .map(|(k, a)| a * out[n - k])
            .sum();
        out.push(e - feedback);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn ar1(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0; n];
        let mut prev = 0.0;
        for v in x.iter_mut() {
            prev = 0.9 * prev + normal.sample(&mut rng);
            *v = prev;
        }
        x
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let x = ar1(20_000, 11);
        // Yule-Walker closed form for order 1: a1 = -r1 / r0
        let r = autocorrelation(&x, 1);
        let closed_form = -r[1] / r[0];
        let m = lpc_analyze(&x, 1).unwrap();
        assert_eq!(m.status, LpcStatus::Ok);
        assert!((m.coefficients[1] - closed_form).abs() < 1e-12);
        assert!((m.coefficients[1] + 0.9).abs() < 0.02, "{}", m.coefficients[1]);
    }

    #[test]
    fn silent_frame_is_identity() {
        let m = lpc_analyze(&[0.0; 320], 20).unwrap();
        assert_eq!(m.status, LpcStatus::Silent);
        assert_eq!(m.coefficients, vec![1.0]);
        assert!(m.residual.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn order_must_be_below_frame_length() {
        assert!(lpc_analyze(&[1.0; 10], 10).is_err());
        assert!(lpc_analyze(&[1.0; 10], 0).is_err());
    }

    #[test]
    fn singular_recursion_falls_back() {
        assert!(levinson_durbin(&[1.0, 1.0, 1.0], 2).is_none());
    }

    #[test]
    fn white_noise_residual_energy_not_larger() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..320).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = lpc_analyze(&x, 20).unwrap();
        let e_res: f64 = m.residual.iter().map(|v| v * v).sum();
        let e_x: f64 = x.iter().map(|v| v * v).sum();
        assert!(e_res <= e_x);
    }

    #[test]
    fn poles_are_roots_of_coefficients() {
        let x = ar1(320, 2);
        let m = lpc_analyze(&x, 12).unwrap();
        assert_eq!(m.poles.len(), 12);
        for p in &m.poles {
            let (v, _) = super::super::poly::eval_with_derivative(&m.coefficients, *p);
            assert!(v.norm() <= 1e-6);
        }
    }

    #[test]
    fn synthesis_identities() {
        let residual = [0.3, -0.1, 0.7];
        assert_eq!(synthesize_frame(&residual, &[1.0]), residual.to_vec());

        let mut impulse = vec![0.0; 6];
        impulse[0] = 1.0;
        let y = synthesize_frame(&impulse, &[1.0, -0.5]);
        for (n, v) in y.iter().enumerate() {
            assert!((v - 0.5f64.powi(n as i32)).abs() < 1e-15);
        }

        let x = ar1(320, 9);
        let m = lpc_analyze(&x, 20).unwrap();
        let back = synthesize_frame(&m.residual, &m.coefficients);
        let num: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x.iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() <= 1e-6);
    }
}
