//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

/// Eigenvalues of the companion matrix via nalgebra's Schur decomposition,
/// after a power-of-two diagonal balancing. Shares no code with the library
/// root finder (which uses the first-row companion form and its own QR).
pub fn eigen_roots(monic: &[f64]) -> Vec<Complex64> {
    let n = monic.len() - 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, n - 1)] = -monic[n - i];
        if i > 0 {
            m[(i, i - 1)] = 1.0;
        }
    }
    // scale D^-1 M D until every row/column off-diagonal 1-norm pair is within 2x
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let col: f64 = (0..n).filter(|&k| k != i).map(|k| m[(k, i)].abs()).sum();
            let row: f64 = (0..n).filter(|&k| k != i).map(|k| m[(i, k)].abs()).sum();
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let f = 2f64.powi(((row / col).log2() / 2.0).round() as i32);
            if f != 1.0 {
                for k in 0..n {
                    m[(k, i)] *= f;
                    m[(i, k)] /= f;
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| refine(monic, Complex64::new(z.re, z.im)))
        .collect()
}

/// Newton refinement of an eigenvalue against the polynomial itself, keeping
/// an iterate only while the residual keeps shrinking.
fn refine(monic: &[f64], mut z: Complex64) -> Complex64 {
    let eval = |z: Complex64| {
        let (mut p, mut d) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for &c in monic {
            d = d * z + p;
            p = p * z + c;
        }
        (p, d)
    };
    for _ in 0..8 {
        let (p, d) = eval(z);
        if d.norm() == 0.0 {
            break;
        }
        let next = z - p / d;
        if eval(next).0.norm() >= p.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Max distance after greedily matching each root in `a` to its nearest unused root in `b`.
pub fn matched_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    // match the most isolated roots last: sort pairs by distance globally
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            pairs.push(((x - y).norm(), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut done = vec![false; a.len()];
    for (d, i, j) in pairs {
        if !done[i] && !used[j] {
            done[i] = true;
            used[j] = true;
            worst = worst.max(d);
        }
    }
    worst
}

/// Expands roots into a descending-power monic polynomial (complex arithmetic).
pub fn expand(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    c.iter().map(|z| z.re).collect()
}

/// Random stable monic polynomial of the given degree built from reflection
/// coefficients drawn uniformly in (-0.95, 0.95) by the step-up recursion;
/// every such polynomial is minimum-phase.
pub fn random_stable_poly<R: Rng>(rng: &mut R, degree: usize) -> Vec<f64> {
    let mut a = vec![1.0];
    for _ in 0..degree {
        let k: f64 = rng.gen_range(-0.95..0.95);
        let mut next = a.clone();
        next.push(0.0);
        for j in 1..next.len() {
            next[j] += k * a.get(next.len() - 1 - j).copied().unwrap_or(0.0);
        }
        a = next;
    }
    a
}

/// Random monic polynomial of the given degree: conjugate pairs and
/// real roots strictly inside the unit circle.
pub fn random_stable_roots<R: Rng>(rng: &mut R, degree: usize) -> Vec<Complex64> {
    let mut roots = Vec::with_capacity(degree);
    while roots.len() + 2 <= degree && rng.gen_bool(0.8) {
        let r = rng.gen_range(0.05..0.98);
        let phi = rng.gen_range(0.02..std::f64::consts::PI - 0.02);
        let z = Complex64::from_polar(r, phi);
        roots.push(z);
        roots.push(z.conj());
    }
    while roots.len() < degree {
        roots.push(Complex64::new(rng.gen_range(-0.98..0.98), 0.0));
    }
    roots
}

/// EER by exhaustive threshold sweep: every distinct score (and +inf) is
/// tried, rates are counted with binary search on separately sorted arrays,
/// and the threshold with the smallest |FAR - FRR| gives (FAR + FRR) / 2.
pub fn sweep_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut t = targets.to_vec();
    let mut n = nontargets.to_vec();
    t.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = t.iter().chain(&n).copied().collect();
    candidates.push(f64::INFINITY);
    candidates.push(f64::NEG_INFINITY);
    let mut best = (f64::INFINITY, 0.0);
    for th in candidates {
        let frr = t.partition_point(|&x| x < th) as f64 / t.len() as f64;
        let far = (n.len() - n.partition_point(|&x| x < th)) as f64 / n.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, 100.0 * (far + frr) / 2.0);
        }
    }
    best.1
}

/// (substitutions, deletions, insertions) by memoized recursion from the
/// end of both sequences, preferring diagonal, then deletion, then insertion
/// among equally cheap moves.
pub fn recursive_wer_counts(r: &[String], h: &[String]) -> (usize, usize, usize) {
    fn go(
        i: usize,
        j: usize,
        r: &[String],
        h: &[String],
        memo: &mut Vec<Vec<Option<(usize, usize, usize, usize)>>>,
    ) -> (usize, usize, usize, usize) {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            (j, 0, 0, j)
        } else if j == 0 {
            (i, 0, i, 0)
        } else {
            let (dc, ds, dd, di) = go(i - 1, j - 1, r, h, memo);
            let diag = if r[i - 1] == h[j - 1] {
                (dc, ds, dd, di)
            } else {
                (dc + 1, ds + 1, dd, di)
            };
            let (c, s, d, ins) = go(i - 1, j, r, h, memo);
            let del = (c + 1, s, d + 1, ins);
            let (c, s, d, ins) = go(i, j - 1, r, h, memo);
            let insert = (c + 1, s, d, ins + 1);
            let mut best = diag;
            if del.0 < best.0 {
                best = del;
            }
            if insert.0 < best.0 {
                best = insert;
            }
            best
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; h.len() + 1]; r.len() + 1];
    let (_, s, d, i) = go(r.len(), h.len(), r, h, &mut memo);
    (s, d, i)
}
