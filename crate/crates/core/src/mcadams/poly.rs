//! Real-polynomial roots and the inverse map from poles back to coefficients.
//!
//! Coefficients are in descending powers with the leading coefficient first,
//! so an LPC denominator `[1, a1, ..., ap]` maps directly to the monic
//! polynomial `z^p + a1 z^(p-1) + ... + ap` whose roots are the filter poles.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Roots whose imaginary part is at most this are treated as real.
pub const REAL_TOLERANCE: f64 = 1e-10;

const MAX_QR_ITERATIONS: usize = 60;
const NEWTON_STEPS: usize = 3;

/// Finds all complex roots of a real polynomial given in descending powers.
///
/// Eigenvalues of the balanced companion matrix are computed with the
/// Francis double-shift QR iteration and each root is then Newton-polished
/// against the original coefficients. The result is conjugate-symmetric:
/// every root with positive imaginary part is followed by its exact mirror.
pub fn poly_roots(coefficients: &[f64]) -> Result<Vec<Complex64>> {
    let lead = *coefficients.first().ok_or(Error::DegreeZero)?;
    let degree = coefficients.len() - 1;
    if degree == 0 {
        return Err(Error::DegreeZero);
    }
    if lead == 0.0 || coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config(
            "polynomial needs a finite, nonzero leading coefficient".into(),
        ));
    }
    let monic: Vec<f64> = coefficients.iter().map(|c| c / lead).collect();

    let mut hess = companion(&monic);
    balance(&mut hess);
    let raw = hqr(&mut hess).ok_or_else(|| {
        Error::Config("QR iteration did not converge while finding roots".into())
    })?;

    let mut out = Vec::with_capacity(degree);
    let mut reals = Vec::new();
    for z in raw {
        if z.im > REAL_TOLERANCE {
            let z = polish(&monic, z);
            if z.im.abs() > REAL_TOLERANCE {
                let upper = Complex64::new(z.re, z.im.abs());
                out.push(upper);
                out.push(upper.conj());
            } else {
                // collapsed onto the axis while polishing: keep as a real pair
                reals.push(z.re);
                reals.push(z.re);
            }
        } else if z.im.abs() <= REAL_TOLERANCE {
            reals.push(polish(&monic, Complex64::new(z.re, 0.0)).re);
        }
        // strictly negative imaginary parts are regenerated from their mirrors
    }
    out.extend(reals.into_iter().map(|r| Complex64::new(r, 0.0)));
    debug_assert_eq!(out.len(), degree);
    Ok(out)
}

/// Evaluates a descending-power polynomial and its derivative at `z`.
pub fn eval_with_derivative(coefficients: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coefficients {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn polish(coefficients: &[f64], mut z: Complex64) -> Complex64 {
    let (mut p, mut dp) = eval_with_derivative(coefficients, z);
    for _ in 0..NEWTON_STEPS {
        if p.norm() == 0.0 || dp.norm() == 0.0 {
            break;
        }
        let candidate = z - p / dp;
        let (cp, cdp) = eval_with_derivative(coefficients, candidate);
        if !(cp.norm() < p.norm()) {
            break;
        }
        z = candidate;
        p = cp;
        dp = cdp;
    }
    z
}

/// Row-major square matrix with 1-based indexing, matching the classic
/// EISPACK formulation of the QR iteration below.
struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; (n + 1) * (n + 1)],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.n + 1) + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * (self.n + 1) + j]
    }
}

/// Upper-Hessenberg companion matrix of a monic polynomial.
fn companion(monic: &[f64]) -> Mat {
    let n = monic.len() - 1;
    let mut m = Mat::zeros(n);
    for j in 1..=n {
        *m.at_mut(1, j) = -monic[j];
    }
    for i in 2..=n {
        *m.at_mut(i, i - 1) = 1.0;
    }
    m
}

/// Diagonal similarity scaling that equalizes row and column norms.
fn balance(a: &mut Mat) {
    const RADIX: f64 = 2.0;
    let n = a.n;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a.at(j, i).abs();
                    r += a.at(i, j).abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        *a.at_mut(i, j) *= g;
                    }
                    for j in 1..=n {
                        *a.at_mut(j, i) *= f;
                    }
                }
            }
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper-Hessenberg matrix by Francis double-shift QR.
/// Destroys `a`. Returns `None` if some eigenvalue fails to converge.
fn hqr(a: &mut Mat) -> Option<Vec<Complex64>> {
    let n = a.n;
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a.at(i, j).abs();
        }
    }

    let mut nn = n;
    let mut t = 0.0;
    while nn >= 1 {
        let mut its = 0;
        loop {
            // look for a single small subdiagonal element
            let mut l = nn;
            while l >= 2 {
                let mut s = a.at(l - 1, l - 1).abs() + a.at(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a.at(l, l - 1).abs() + s == s {
                    *a.at_mut(l, l - 1) = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a.at(nn, nn);
            if l == nn {
                // one root found
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                let mut y = a.at(nn - 1, nn - 1);
                let mut w = a.at(nn, nn - 1) * a.at(nn - 1, nn);
                if l == nn - 1 {
                    // two roots found
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn = nn.saturating_sub(2);
                } else {
                    if its == MAX_QR_ITERATIONS {
                        return None;
                    }
                    if its > 0 && its % 10 == 0 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            *a.at_mut(i, i) -= x;
                        }
                        let s = a.at(nn, nn - 1).abs() + a.at(nn - 1, nn - 2).abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;

                    // form shift and look for two consecutive small subdiagonals
                    let (mut p, mut q, mut r);
                    let mut m = nn - 2;
                    loop {
                        let z = a.at(m, m);
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / a.at(m + 1, m) + a.at(m, m + 1);
                        q = a.at(m + 1, m + 1) - z - r - s;
                        r = a.at(m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a.at(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a.at(m - 1, m - 1).abs() + z.abs() + a.at(m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        *a.at_mut(i, i - 2) = 0.0;
                        if i != m + 2 {
                            *a.at_mut(i, i - 3) = 0.0;
                        }
                    }

                    // double QR step on rows l..nn and columns m..nn
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a.at(k, k - 1);
                            q = a.at(k + 1, k - 1);
                            r = 0.0;
                            if k != nn - 1 {
                                r = a.at(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    *a.at_mut(k, k - 1) = -a.at(k, k - 1);
                                }
                            } else {
                                *a.at_mut(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut p = a.at(k, j) + q * a.at(k + 1, j);
                                if k != nn - 1 {
                                    p += r * a.at(k + 2, j);
                                    *a.at_mut(k + 2, j) -= p * z;
                                }
                                *a.at_mut(k + 1, j) -= p * y;
                                *a.at_mut(k, j) -= p * x;
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                let mut p = x * a.at(i, k) + y * a.at(i, k + 1);
                                if k != nn - 1 {
                                    p += z * a.at(i, k + 2);
                                    *a.at_mut(i, k + 2) -= p * r;
                                }
                                *a.at_mut(i, k + 1) -= p * q;
                                *a.at_mut(i, k) -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }

    Some(
        (1..=n)
            .map(|i| Complex64::new(wr[i], wi[i]))
            .collect(),
    )
}

/// Rebuilds the monic real polynomial whose roots are `poles`.
///
/// Complex poles must come in conjugate pairs; each pair contributes the real
/// quadratic factor `z^2 - 2 Re(p) z + |p|^2`, so the result is exactly real.
pub fn poles_to_coeffs(poles: &[Complex64]) -> Result<Vec<f64>> {
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower: Vec<Complex64> = Vec::new();
    let mut coeffs = vec![1.0];

    for &p in poles {
        if !(p.re.is_finite() && p.im.is_finite()) {
            return Err(Error::NotConjugateSymmetric);
        }
        if p.im > REAL_TOLERANCE {
            upper.push(p);
        } else if p.im < -REAL_TOLERANCE {
            lower.push(p);
        } else {
            coeffs = multiply(&coeffs, &[1.0, -p.re]);
        }
    }
    if upper.len() != lower.len() {
        return Err(Error::NotConjugateSymmetric);
    }

    let mut used = vec![false; lower.len()];
    for u in upper {
        let tol = 1e-9 * u.norm().max(1.0);
        let partner = lower
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, l)| (i, (l.conj() - u).norm()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .ok_or(Error::NotConjugateSymmetric)?;
        used[partner] = true;
        coeffs = multiply(&coeffs, &[1.0, -2.0 * u.re, u.norm_sqr()]);
    }
    Ok(coeffs)
}

fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
