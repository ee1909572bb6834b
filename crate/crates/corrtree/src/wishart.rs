//! Moments of Wishart 2-minors and the samplers built on them.
//!
//! A tetrad constraint is a 2x2 minor of the covariance matrix, so testing
//! tetrads needs the joint covariance of minors of a Wishart matrix. For the
//! standard Wishart W ~ W_m(n, I) the covariance of the compound matrix
//! W^(2) is known exactly and is block-diagonal when minors are grouped by
//! the symmetric difference of their index sets; for a general scale C it is
//! obtained by conjugating with the second compound of C^{1/2}.

use rand_distr::{ChiSquared, Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::{cholesky_psd, eigh, Mat, NumericsError};
use crate::rng::Stream;

#[derive(Error, Debug)]
pub enum WishartError {
    #[error("degrees of freedom must be at least 1, got {0}")]
    BadDegrees(usize),
    #[error("minor index {0} out of range for dimension {1}")]
    IndexRange(usize, usize),
    #[error("minor index pair must have two distinct entries")]
    DegeneratePair,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A 2x2 minor of a symmetric m x m matrix: row pair I and column pair J,
/// each ascending. `det A_{I,J} = a_ik a_jl - a_il a_jk` for I=(i,j),
/// J=(k,l).
pub type Minor = ((usize, usize), (usize, usize));

fn check_pair(p: (usize, usize), m: usize) -> Result<(), WishartError> {
    if p.0 >= p.1 {
        return Err(WishartError::DegeneratePair);
    }
    if p.1 >= m {
        return Err(WishartError::IndexRange(p.1, m));
    }
    Ok(())
}

/// Canonical unordered form of a minor label (det A_{I,J} = det A_{J,I} for
/// symmetric A).
pub fn canonical_minor((i, j): Minor) -> Minor {
    if j < i {
        (j, i)
    } else {
        (i, j)
    }
}

/// Lexicographic index of ascending index pairs of {0, .., m-1}.
#[derive(Clone, Debug)]
pub struct PairIndex {
    m: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(m: usize) -> Self {
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in (i + 1)..m {
                pairs.push((i, j));
            }
        }
        PairIndex { m, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, p: usize) -> (usize, usize) {
        self.pairs[p]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // Offset of row a plus position of b within it.
        a * self.m - a * (a + 1) / 2 + (b - a - 1)
    }
}

/// All unordered minor labels of an m x m symmetric matrix, diagonal minors
/// included, ordered lexicographically by (pair index of I, pair index of
/// J). There are P(P+1)/2 of them with P = m(m-1)/2.
pub fn minor_labels(m: usize) -> Vec<Minor> {
    let pi = PairIndex::new(m);
    let mut out = Vec::new();
    for p in 0..pi.len() {
        for q in p..pi.len() {
            out.push((pi.pair(p), pi.pair(q)));
        }
    }
    out
}

/// Second compound matrix: rows and columns indexed by ascending pairs,
/// entries the corresponding 2x2 minors. Satisfies (AB)^(2) = A^(2) B^(2).
pub fn compound2(a: &Mat) -> Mat {
    let pi = PairIndex::new(a.rows);
    let p = pi.len();
    let mut out = Mat::zeros(p, p);
    for r in 0..p {
        let (i, j) = pi.pair(r);
        for c in 0..p {
            let (k, l) = pi.pair(c);
            out[(r, c)] = a[(i, k)] * a[(j, l)] - a[(i, l)] * a[(j, k)];
        }
    }
    out
}

/// Unbiased estimator of `det C_{I,J}` from a Wishart scatter matrix S with
/// `df` degrees of freedom: `det S_{I,J} / (df (df - 1))`.
pub fn minor_estimator(s: &Mat, df: usize, minor: Minor) -> Result<f64, WishartError> {
    let ((i, j), (k, l)) = minor;
    check_pair((i, j), s.rows)?;
    check_pair((k, l), s.rows)?;
    if df < 2 {
        return Err(WishartError::BadDegrees(df));
    }
    let det = s[(i, k)] * s[(j, l)] - s[(i, l)] * s[(j, k)];
    Ok(det / (df as f64 * (df as f64 - 1.0)))
}

fn symdiff(a: (usize, usize), b: (usize, usize)) -> Vec<usize> {
    let mut v: Vec<usize> = [a.0, a.1, b.0, b.1]
        .into_iter()
        .filter(|&x| {
            let in_a = x == a.0 || x == a.1;
            let in_b = x == b.0 || x == b.1;
            in_a != in_b
        })
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn shared(a: (usize, usize), b: (usize, usize)) -> Vec<usize> {
    [a.0, a.1]
        .into_iter()
        .filter(|&x| x == b.0 || x == b.1)
        .collect()
}

/// Pairing type of a minor whose index sets are disjoint, relative to the
/// sorted union {i<j<k<l}: 0 for ij|kl, 1 for ik|jl, 2 for il|jk.
fn pairing_type(minor: Minor, union: &[usize]) -> usize {
    let (a, b) = minor;
    let partner = if a.0 == union[0] {
        a.1
    } else if a.1 == union[0] {
        a.0
    } else if b.0 == union[0] {
        b.1
    } else {
        b.0
    };
    match partner {
        x if x == union[1] => 0,
        x if x == union[2] => 1,
        _ => 2,
    }
}

/// Exact covariance of two 2-minors of the standard Wishart W_m(n, I).
/// Zero unless the two minors have the same symmetric difference of index
/// sets, which makes cov(W^(2)) block diagonal.
pub fn cov_w2_entry(n: usize, a: Minor, b: Minor) -> f64 {
    let nf = n as f64;
    let d1 = symdiff(a.0, a.1);
    let d2 = symdiff(b.0, b.1);
    if d1 != d2 {
        return 0.0;
    }
    match d1.len() {
        0 => {
            // Principal minors det W_{I,I}, det W_{K,K}.
            match shared(a.0, b.0).len() {
                0 => 0.0,
                1 => 2.0 * nf * (nf - 1.0) * (nf - 1.0),
                _ => 2.0 * nf * (2.0 * nf + 1.0) * (nf - 1.0),
            }
        }
        2 => {
            // Minors det W_{ik,jk} and det W_{il,jl} sharing the symmetric
            // difference {i,j}; k and l are the repeated indices.
            let (i, j) = (d1[0], d1[1]);
            let k = shared(a.0, a.1)[0];
            let l = shared(b.0, b.1)[0];
            if k == l {
                nf * (nf + 2.0) * (nf - 1.0)
            } else {
                // Negative exactly when one of k, l lies strictly between i
                // and j (i < k < j < l or k < i < l < j).
                let inside = |x: usize| i < x && x < j;
                if inside(k) != inside(l) {
                    -nf * (nf - 1.0) * (nf - 1.0)
                } else {
                    nf * (nf - 1.0) * (nf - 1.0)
                }
            }
        }
        _ => {
            // Disjoint row/column sets over a common 4-subset: 3x3 block
            // [[a, b, -b], [b, a, b], [-b, b, a]] in the pairing order
            // ij|kl, ik|jl, il|jk.
            let t1 = pairing_type(a, &d1);
            let t2 = pairing_type(b, &d1);
            if t1 == t2 {
                2.0 * nf * (nf - 1.0)
            } else if t1 + t2 == 2 {
                // Types 0 and 2.
                -nf * (nf - 1.0)
            } else {
                nf * (nf - 1.0)
            }
        }
    }
}

/// Full covariance matrix of the 2-minors of the standard Wishart, over the
/// unordered labels from [`minor_labels`].
pub fn cov_w2(m: usize, n: usize) -> (Vec<Minor>, Mat) {
    let labels = minor_labels(m);
    let d = labels.len();
    let mut out = Mat::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            out[(r, c)] = cov_w2_entry(n, labels[r], labels[c]);
        }
    }
    (labels, out)
}

/// Symmetric square root via the spectral decomposition; negative
/// eigenvalues from roundoff are clamped to zero.
pub fn sym_sqrt(a: &Mat) -> Mat {
    let (eigs, vecs) = eigh(a);
    let m = a.rows;
    let mut out = Mat::zeros(m, m);
    for k in 0..m {
        let s = eigs[k].max(0.0).sqrt();
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] += s * vecs[(i, k)] * vecs[(j, k)];
            }
        }
    }
    out
}

/// Inverse of a symmetric positive definite matrix via Cholesky solves.
pub fn inverse_spd(a: &Mat) -> Result<Mat, NumericsError> {
    let m = a.rows;
    let mut out = Mat::zeros(m, m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let col = crate::numerics::solve_spd(a, &e)?;
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    // Symmetrize roundoff.
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Covariance of the selected scatter minors `det S_{I,J}` for
/// S ~ W_m(n, c), obtained by conjugating the standard-Wishart minor
/// covariance with the second compound of c^{1/2}. The block-diagonal
/// structure of cov(W^(2)) keeps the contraction sparse.
pub fn cov_s2_minors(c: &Mat, n: usize, minors: &[Minor]) -> Result<Mat, WishartError> {
    let m = c.rows;
    for &(i, j) in minors {
        check_pair(i, m)?;
        check_pair(j, m)?;
    }
    if n < 2 {
        return Err(WishartError::BadDegrees(n));
    }
    let pi = PairIndex::new(m);
    let p = pi.len();
    let b = compound2(&sym_sqrt(c));

    // Ordered pair index t = a*p + b over (row pair, column pair); group by
    // symmetric difference, since cov_w2_entry vanishes across groups.
    let mut groups: std::collections::HashMap<Vec<usize>, Vec<usize>> =
        std::collections::HashMap::new();
    for a in 0..p {
        for bb in 0..p {
            let key = symdiff(pi.pair(a), pi.pair(bb));
            groups.entry(key).or_default().push(a * p + bb);
        }
    }

    // u_j = (B (x) B) e_{(I,J)}; w_j = cov(W^(2)) u_j.
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(minors.len());
    let mut ws: Vec<Vec<f64>> = Vec::with_capacity(minors.len());
    for &(mi, mj) in minors {
        let ci = pi.index(mi.0, mi.1);
        let cj = pi.index(mj.0, mj.1);
        let mut u = vec![0.0; p * p];
        for a in 0..p {
            for bb in 0..p {
                u[a * p + bb] = b[(a, ci)] * b[(bb, cj)];
            }
        }
        let mut w = vec![0.0; p * p];
        for members in groups.values() {
            for &t in members {
                let lab_t = (pi.pair(t / p), pi.pair(t % p));
                let mut acc = 0.0;
                for &s in members {
                    let lab_s = (pi.pair(s / p), pi.pair(s % p));
                    acc += cov_w2_entry(n, lab_t, lab_s) * u[s];
                }
                w[t] = acc;
            }
        }
        us.push(u);
        ws.push(w);
    }

    let k = minors.len();
    let mut out = Mat::zeros(k, k);
    for r in 0..k {
        for c2 in r..k {
            let v: f64 = us[r].iter().zip(&ws[c2]).map(|(x, y)| x * y).sum();
            out[(r, c2)] = v;
            out[(c2, r)] = v;
        }
    }
    Ok(out)
}

/// Covariance of the unbiased minor estimators Q_{I,J} = det S_{I,J} /
/// (n(n-1)), with the plug-in scale `sigma_hat`.
pub fn cov_q(sigma_hat: &Mat, n: usize, minors: &[Minor]) -> Result<Mat, WishartError> {
    let mut cov = cov_s2_minors(sigma_hat, n, minors)?;
    let scale = (n as f64 * (n as f64 - 1.0)).powi(2);
    for v in cov.data_mut() {
        *v /= scale;
    }
    Ok(cov)
}

/// Draw an n x m data matrix with independent N(0, c) rows.
pub fn sample_mvn(c: &Mat, n: usize, rng: &mut Stream) -> Result<Mat, WishartError> {
    let m = c.rows;
    let l = cholesky_psd(c)?;
    let mut x = Mat::zeros(n, m);
    for r in 0..n {
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            x[(r, i)] = acc;
        }
    }
    Ok(x)
}

/// Draw from the Wishart distribution W_m(df, c). Uses the Bartlett
/// decomposition when df >= m; otherwise accumulates df Gaussian outer
/// products (the distribution is then singular, which is fine for scatter
/// matrices).
pub fn sample_wishart(c: &Mat, df: usize, rng: &mut Stream) -> Result<Mat, WishartError> {
    let m = c.rows;
    if df == 0 {
        return Err(WishartError::BadDegrees(df));
    }
    if df < m {
        let x = sample_mvn(c, df, rng)?;
        let mut s = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for r in 0..df {
                    acc += x[(r, i)] * x[(r, j)];
                }
                s[(i, j)] = acc;
            }
        }
        return Ok(s);
    }
    let l = cholesky_psd(c)?;
    // Lower-triangular Bartlett factor A: chi on the diagonal, standard
    // normals below.
    let mut a = Mat::zeros(m, m);
    for i in 0..m {
        let chi = ChiSquared::new((df - i) as f64).expect("positive dof");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l.matmul(&a);
    Ok(la.matmul(&la.transpose()))
}

/// Draw from the inverse Wishart IW(df, psi), with the convention
/// X ~ IW(df, psi) iff X^{-1} ~ W(df, psi^{-1}). Requires df >= m so the
/// draw is invertible.
pub fn sample_inverse_wishart(
    psi: &Mat,
    df: usize,
    rng: &mut Stream,
) -> Result<Mat, WishartError> {
    let m = psi.rows;
    if df < m {
        return Err(WishartError::BadDegrees(df));
    }
    let psi_inv = inverse_spd(psi)?;
    let w = sample_wishart(&psi_inv, df, rng)?;
    Ok(inverse_spd(&w)?)
}

// ---- chi-square tail probabilities -----------------------------------------

fn lgamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x) by series expansion; for
/// x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - lgamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction; for
/// x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x + a * x.ln() - lgamma(a)).exp()
}

/// Survival function of the chi-square distribution with `dof` degrees of
/// freedom: P(X > x). Absolute error below 1e-10.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    assert!(dof > 0.0, "degrees of freedom must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    let a = 0.5 * dof;
    let xx = 0.5 * x;
    if xx < a + 1.0 {
        (1.0 - gamma_p_series(a, xx)).clamp(0.0, 1.0)
    } else {
        gamma_q_cf(a, xx).clamp(0.0, 1.0)
    }
}

/// Cumulative distribution function of the chi-square distribution.
pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    1.0 - chi2_sf(x, dof)
}

/// Density of the chi-square distribution.
pub fn chi2_pdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * dof;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - lgamma(a)).exp()
}
