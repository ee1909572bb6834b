//! Tetrad chi-square tests and Bayesian compatibility probabilities.
//!
//! The frequentist side tests vanishing tetrads: the quartet minors are
//! estimated without bias from the scatter matrix, standardized by the proxy
//! covariance (the exact Wishart minor covariance with the sample covariance
//! plugged in), and compared against a chi-square law with one degree of
//! freedom per quartet. The Bayesian side samples the inverse-Wishart
//! posterior of the covariance and reports the fraction of draws satisfying
//! the semialgebraic constraints.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, Role, SymMatrix};
use crate::numerics::{condition_number_spd, solve_spd, Mat, NumericsError};
use crate::rng::Stream;
use crate::trees::{
    enumerate_binary_trees, serialize_newick, Quartet, QuartetSet, QuartetTag, Tree, TreeError,
};
use crate::wishart::{chi2_sf, cov_q, minor_estimator, sample_inverse_wishart, Minor, WishartError};

/// Condition number above which the proxy covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Leaf count cap for exhaustive tree enumeration in [`exploratory_scan`].
pub const EXPLORATION_CAP: usize = 7;

/// Budget cap for posterior sampling: draws x m^3.
pub const BAYES_BUDGET: u64 = 1_000_000_000;

/// Sample correlations below this magnitude trigger a regularity warning.
pub const LOW_CORRELATION: f64 = 0.02;

#[derive(Error, Debug)]
pub enum InferenceError {
    #[error("sample size n = {n} must exceed the number of variables m = {m}")]
    SampleSize { n: usize, m: usize },
    #[error("quartet set must be nonempty")]
    EmptyQuartets,
    #[error("leaf {0} of a quartet is not a variable of the matrix")]
    UnknownLeaf(String),
    #[error(
        "near-singular tetrad covariance (condition number {0:.3e}) — reduce or re-select quartet set"
    )]
    NearSingular(f64),
    #[error("{m} leaves exceeds the enumeration cap of {cap}; use quartet_screen instead")]
    EnumerationCap { m: usize, cap: usize },
    #[error("posterior sampling budget exceeded: draws x m^3 = {0} > {1}")]
    BudgetExceeded(u64, u64),
    #[error("mode quartet-full requires a designated quartet")]
    MissingQuartet,
    #[error("input matrix role {0:?} cannot be interpreted as a scatter or covariance")]
    BadRole(Role),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Wishart(#[from] WishartError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Result of a tetrad chi-square test.
#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Tested quartets, serialized "ij|kl".
    pub quartets: Vec<String>,
    pub n: usize,
    pub seed: Option<u64>,
    /// Covariance mode; only the proxy covariance is implemented.
    pub mode: String,
    pub condition_number: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankedTree {
    pub tree: String,
    pub report: TestReport,
    pub rejected: bool,
}

/// Result of scanning all binary trees on the observed leaves.
#[derive(Clone, Debug, Serialize)]
pub struct ExploratoryReport {
    pub alpha: f64,
    pub bonferroni_alpha: f64,
    pub n: usize,
    /// Descending by p-value; ties broken by the serialized tree.
    pub ranked: Vec<RankedTree>,
    /// Highest-p tree among the survivors, if any survive.
    pub candidate: Option<String>,
}

/// Classification of one 4-subset by single-quartet tests.
#[derive(Clone, Debug, Serialize)]
pub struct SubsetClassification {
    pub leaves: Vec<String>,
    /// The three candidate splits in the order ij|kl, ik|jl, il|jk.
    pub splits: Vec<String>,
    pub p_values: Vec<f64>,
    /// The unique non-rejected split, or none when 0 or >= 2 survive.
    pub resolved: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScreenReport {
    pub alpha: f64,
    pub n: usize,
    pub subsets: Vec<SubsetClassification>,
}

/// Result of posterior compatibility sampling.
#[derive(Clone, Debug, Serialize)]
pub struct BayesReport {
    pub probability: f64,
    pub draws: usize,
    pub n: usize,
    pub seed: Option<u64>,
    /// Constraint kind: "triples" or "quartet-full".
    pub mode: String,
    pub prior_n0: usize,
    pub prior_c0: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub quartets: Vec<String>,
}

/// Which semialgebraic constraints the posterior draws are tested against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayesMode {
    /// Triple-product sign constraints, Eq-style tree compatibility.
    Triples,
    /// Tetrad inequalities of a designated quartet times its four triple
    /// constraints.
    QuartetFull,
}

impl BayesMode {
    fn as_str(self) -> &'static str {
        match self {
            BayesMode::Triples => "triples",
            BayesMode::QuartetFull => "quartet-full",
        }
    }
}

/// Interpret an input matrix as (sigma_hat, scatter): scatter matrices are
/// divided by n, covariance/correlation matrices are multiplied by n.
fn split_roles(s: &SymMatrix, n: usize) -> Result<(Mat, Mat), InferenceError> {
    let m = s.dim();
    let mut sigma = Mat::zeros(m, m);
    let mut scatter = Mat::zeros(m, m);
    match s.role() {
        Role::Scatter => {
            for i in 0..m {
                for j in 0..m {
                    scatter[(i, j)] = s.get(i, j);
                    sigma[(i, j)] = s.get(i, j) / n as f64;
                }
            }
        }
        Role::Covariance | Role::Correlation => {
            for i in 0..m {
                for j in 0..m {
                    sigma[(i, j)] = s.get(i, j);
                    scatter[(i, j)] = s.get(i, j) * n as f64;
                }
            }
        }
        r => return Err(InferenceError::BadRole(r)),
    }
    Ok((sigma, scatter))
}

fn quartet_minor(q: &Quartet, names: &[String]) -> Result<Minor, InferenceError> {
    let pos = |label: &str| -> Result<usize, InferenceError> {
        names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| InferenceError::UnknownLeaf(label.to_string()))
    };
    let (a, b) = q.left();
    let (c, d) = q.right();
    let (i, j) = (pos(a)?, pos(b)?);
    let (k, l) = (pos(c)?, pos(d)?);
    Ok(((i.min(j), i.max(j)), (k.min(l), k.max(l))))
}

fn low_correlation_warnings(sigma: &Mat, minors: &[Minor], names: &[String]) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    for &((i, j), (k, l)) in minors {
        for &(a, b) in &[(i, k), (i, l), (j, k), (j, l), (i, j), (k, l)] {
            let (a, b) = (a.min(b), a.max(b));
            if a != b {
                seen.insert((a, b));
            }
        }
    }
    let mut warnings = Vec::new();
    for (a, b) in seen {
        let rho = sigma[(a, b)] / (sigma[(a, a)] * sigma[(b, b)]).sqrt();
        if rho.abs() < LOW_CORRELATION {
            warnings.push(format!(
                "correlation ({},{}) = {:.4} is near zero; the test may be irregular",
                names[a], names[b], rho
            ));
        }
    }
    warnings
}

/// Simultaneous chi-square test of the vanishing tetrads of a quartet set,
/// standardized by the proxy minor covariance.
pub fn tetrad_statistic(
    s: &SymMatrix,
    n: usize,
    quartets: &QuartetSet,
) -> Result<TestReport, InferenceError> {
    let m = s.dim();
    if n <= m {
        return Err(InferenceError::SampleSize { n, m });
    }
    if quartets.is_empty() {
        return Err(InferenceError::EmptyQuartets);
    }
    let names = s.names();
    let (sigma, scatter) = split_roles(s, n)?;
    let minors: Vec<Minor> = quartets
        .iter()
        .map(|q| quartet_minor(q, &names))
        .collect::<Result<_, _>>()?;
    let qhat: Vec<f64> = minors
        .iter()
        .map(|&mm| minor_estimator(&scatter, n, mm))
        .collect::<Result<_, _>>()?;
    let cov = cov_q(&sigma, n, &minors)?;
    let cond = condition_number_spd(&cov);
    if !cond.is_finite() || cond < 0.0 || cond > MAX_CONDITION {
        return Err(InferenceError::NearSingular(cond));
    }
    let x = solve_spd(&cov, &qhat)?;
    let statistic = qhat.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let dof = quartets.len();
    Ok(TestReport {
        statistic,
        dof,
        p_value: chi2_sf(statistic, dof as f64),
        quartets: quartets.iter().map(|q| q.to_string()).collect(),
        n,
        seed: None,
        mode: "proxy".to_string(),
        condition_number: cond,
        warnings: low_correlation_warnings(&sigma, &minors, &names),
    })
}

/// Single-quartet tetrad test, one degree of freedom.
pub fn quartet_test(s: &SymMatrix, n: usize, q: &Quartet) -> Result<TestReport, InferenceError> {
    let set = QuartetSet::new(vec![q.clone()], QuartetTag::Arbitrary)?;
    tetrad_statistic(s, n, &set)
}

/// Full-model test of a binary tree over a testing quartet set of size
/// C(m,2) - (2m-3), the codimension of the model.
pub fn confirmatory_test(s: &SymMatrix, n: usize, t: &Tree) -> Result<TestReport, InferenceError> {
    let quartets = t.testing_quartets()?;
    tetrad_statistic(s, n, &quartets)
}

/// Test every binary tree on the observed leaves over a minimal determining
/// quartet set (m - 3 quartets each), with a Bonferroni correction across
/// trees.
pub fn exploratory_scan(
    s: &SymMatrix,
    n: usize,
    alpha: f64,
) -> Result<ExploratoryReport, InferenceError> {
    let m = s.dim();
    if m > EXPLORATION_CAP {
        return Err(InferenceError::EnumerationCap {
            m,
            cap: EXPLORATION_CAP,
        });
    }
    let names = s.names();
    let trees = enumerate_binary_trees(&names, Some(EXPLORATION_CAP))?;
    let bonferroni_alpha = alpha / trees.len() as f64;
    let mut ranked: Vec<RankedTree> = trees
        .iter()
        .map(|t| {
            let report = tetrad_statistic(s, n, &t.minimal_determining_quartets()?)?;
            let rejected = report.p_value < bonferroni_alpha;
            Ok(RankedTree {
                tree: serialize_newick(t),
                report,
                rejected,
            })
        })
        .collect::<Result<_, InferenceError>>()?;
    ranked.sort_by(|a, b| {
        b.report
            .p_value
            .partial_cmp(&a.report.p_value)
            .unwrap()
            .then_with(|| a.tree.cmp(&b.tree))
    });
    let candidate = ranked
        .iter()
        .find(|r| !r.rejected)
        .map(|r| r.tree.clone());
    Ok(ExploratoryReport {
        alpha,
        bonferroni_alpha,
        n,
        ranked,
        candidate,
    })
}

/// Classify every 4-subset of variables by testing its three possible
/// splits; a subset resolves to the unique non-rejected split.
pub fn quartet_screen(s: &SymMatrix, n: usize, alpha: f64) -> Result<ScreenReport, InferenceError> {
    let m = s.dim();
    if n <= m {
        return Err(InferenceError::SampleSize { n, m });
    }
    let names = s.names();
    let mut subsets = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                for l in (k + 1)..m {
                    let (a, b, c, d) = (&names[i], &names[j], &names[k], &names[l]);
                    let splits = [
                        Quartet::new(a, b, c, d)?,
                        Quartet::new(a, c, b, d)?,
                        Quartet::new(a, d, b, c)?,
                    ];
                    let mut p_values = Vec::with_capacity(3);
                    for q in &splits {
                        p_values.push(quartet_test(s, n, q)?.p_value);
                    }
                    let survivors: Vec<usize> = (0..3).filter(|&t| p_values[t] >= alpha).collect();
                    let resolved = if survivors.len() == 1 {
                        Some(splits[survivors[0]].to_string())
                    } else {
                        None
                    };
                    subsets.push(SubsetClassification {
                        leaves: vec![a.clone(), b.clone(), c.clone(), d.clone()],
                        splits: splits.iter().map(|q| q.to_string()).collect(),
                        p_values,
                        resolved,
                    });
                }
            }
        }
    }
    Ok(ScreenReport { alpha, n, subsets })
}

/// Triple-product sign indicator on a correlation matrix, the fixed-tree
/// compatibility constraint for the triple (i, j, k).
fn triple_indicator(rho: &Mat, i: usize, j: usize, k: usize) -> bool {
    let a = rho[(i, j)] - rho[(i, k)] * rho[(j, k)];
    let b = rho[(i, k)] - rho[(i, j)] * rho[(j, k)];
    let c = rho[(j, k)] - rho[(i, j)] * rho[(i, k)];
    a * b * c >= 0.0
}

fn to_correlation(c: &Mat) -> Mat {
    let m = c.rows;
    let mut rho = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            rho[(i, j)] = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
        }
    }
    rho
}

/// Posterior probability that the covariance satisfies the semialgebraic
/// tree constraints, under the conjugate inverse-Wishart prior with
/// n0 = m and C0 = I. Draws are parallelized over per-index substreams, so
/// the estimate does not depend on the worker count.
#[allow(clippy::too_many_arguments)]
pub fn bayes_compatibility(
    s: &SymMatrix,
    n: usize,
    draws: usize,
    seed: u64,
    mode: BayesMode,
    quartet: Option<&Quartet>,
    triple: Option<[String; 3]>,
) -> Result<BayesReport, InferenceError> {
    let m = s.dim();
    assert!(draws >= 1, "need at least one posterior draw");
    let budget = draws as u64 * (m as u64).pow(3);
    if budget > BAYES_BUDGET {
        return Err(InferenceError::BudgetExceeded(budget, BAYES_BUDGET));
    }
    let names = s.names();
    let (_, scatter) = split_roles(s, n)?;
    // Posterior IW(n0 + n, C0 + S).
    let df = m + n;
    let mut psi = scatter;
    for i in 0..m {
        psi[(i, i)] += 1.0;
    }
    // Constraint evaluation plan.
    let triple_idx: Option<[usize; 3]> = match &triple {
        Some([a, b, c]) => {
            let pos = |x: &String| {
                names
                    .iter()
                    .position(|nm| nm == x)
                    .ok_or_else(|| InferenceError::UnknownLeaf(x.clone()))
            };
            Some([pos(a)?, pos(b)?, pos(c)?])
        }
        None => None,
    };
    let minor = match (mode, quartet) {
        (BayesMode::QuartetFull, Some(q)) => Some(quartet_minor(q, &names)?),
        (BayesMode::QuartetFull, None) => return Err(InferenceError::MissingQuartet),
        _ => None,
    };

    let count: usize = (0..draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = Stream::substream(seed, l as u64);
            let c = sample_inverse_wishart(&psi, df, &mut rng).expect("posterior draw");
            let rho = to_correlation(&c);
            let ok = match mode {
                BayesMode::Triples => match triple_idx {
                    Some([i, j, k]) => triple_indicator(&rho, i, j, k),
                    None => {
                        let mut all = true;
                        'outer: for i in 0..m {
                            for j in (i + 1)..m {
                                for k in (j + 1)..m {
                                    if !triple_indicator(&rho, i, j, k) {
                                        all = false;
                                        break 'outer;
                                    }
                                }
                            }
                        }
                        all
                    }
                },
                BayesMode::QuartetFull => {
                    let ((i, j), (k, l)) = minor.unwrap();
                    let split = rho[(i, j)] * rho[(k, l)];
                    let ineq = rho[(i, l)] * rho[(j, k)] <= split
                        && rho[(i, k)] * rho[(j, l)] <= split;
                    let idx = [i, j, k, l];
                    let mut triples = true;
                    for a in 0..4 {
                        for b in (a + 1)..4 {
                            for c2 in (b + 1)..4 {
                                if !triple_indicator(&rho, idx[a], idx[b], idx[c2]) {
                                    triples = false;
                                }
                            }
                        }
                    }
                    ineq && triples
                }
            };
            usize::from(ok)
        })
        .sum();

    Ok(BayesReport {
        probability: count as f64 / draws as f64,
        draws,
        n,
        seed: Some(seed),
        mode: mode.as_str().to_string(),
        prior_n0: m,
        prior_c0: "identity".to_string(),
        quartets: quartet.map(|q| vec![q.to_string()]).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{corr_from_tree, EdgeWeights};
    use crate::simlab::gen_tree_data;
    use crate::trees::parse_newick;
    use rand::Rng as _;

    fn quintet() -> Tree {
        parse_newick("((1,2),5,(3,4));").unwrap()
    }

    fn model_cov(rho: f64) -> SymMatrix {
        corr_from_tree(&quintet(), &EdgeWeights::constant(&quintet(), rho)).unwrap()
    }

    fn sample_cov(t: &Tree, rho: f64, n: usize, seed: u64) -> SymMatrix {
        let w = EdgeWeights::constant(t, rho);
        let x = gen_tree_data(t, &w, n, &mut Stream::new(seed)).unwrap();
        let m = x.cols;
        let mut rows = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += x[(r, i)] * x[(r, j)];
                }
                rows[i][j] = acc;
            }
        }
        SymMatrix::new(Role::Scatter, &rows, Some(t.leaf_labels())).unwrap()
    }

    #[test]
    fn exact_model_true_quartet_has_p_one() {
        let s = model_cov(0.7);
        let q = Quartet::parse("12|34").unwrap();
        let rep = quartet_test(&s, 60, &q).unwrap();
        assert!(rep.statistic.abs() < 1e-18);
        assert_eq!(rep.p_value, 1.0);
        assert_eq!(rep.dof, 1);
        assert_eq!(rep.mode, "proxy");
    }

    #[test]
    fn quartet_test_side_symmetry() {
        let s = sample_cov(&quintet(), 0.7, 60, 1);
        let a = quartet_test(&s, 60, &Quartet::parse("12|34").unwrap()).unwrap();
        let b = quartet_test(&s, 60, &Quartet::parse("34|12").unwrap()).unwrap();
        assert_eq!(a.statistic, b.statistic);
    }

    #[test]
    fn statistic_scale_invariance() {
        let mut rng = Stream::new(31);
        let t = quintet();
        for rep in 0..100 {
            let s = sample_cov(&t, 0.7, 60, 100 + rep);
            let names = s.names();
            let lam: Vec<f64> = (0..5).map(|_| rng.gen_range(0.2..5.0)).collect();
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|i| (0..5).map(|j| lam[i] * lam[j] * s.get(i, j)).collect())
                .collect();
            let scaled = SymMatrix::new(Role::Scatter, &rows, Some(names)).unwrap();
            let q = Quartet::parse("12|34").unwrap();
            let a = quartet_test(&s, 60, &q).unwrap().statistic;
            let b = quartet_test(&scaled, 60, &q).unwrap().statistic;
            assert!(
                (a - b).abs() <= 1e-8 * a.abs().max(1.0),
                "rep {rep}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn covariance_and_scatter_inputs_agree() {
        let s = sample_cov(&quintet(), 0.7, 60, 7);
        let m = s.dim();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| s.get(i, j) / 60.0).collect())
            .collect();
        let cov = SymMatrix::new(Role::Covariance, &rows, Some(s.names())).unwrap();
        let q = Quartet::parse("12|34").unwrap();
        let a = quartet_test(&s, 60, &q).unwrap();
        let b = quartet_test(&cov, 60, &q).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-10);
    }

    #[test]
    fn sample_size_guard() {
        let s = model_cov(0.7);
        assert!(matches!(
            quartet_test(&s, 5, &Quartet::parse("12|34").unwrap()),
            Err(InferenceError::SampleSize { .. })
        ));
    }

    #[test]
    fn confirmatory_quintet_dof_three_and_exact_p_one() {
        let s = model_cov(0.8);
        let rep = confirmatory_test(&s, 60, &quintet()).unwrap();
        assert_eq!(rep.dof, 3);
        assert!(rep.statistic < 1e-16);
        assert_eq!(rep.p_value, 1.0);
    }

    #[test]
    fn confirmatory_rejects_wrong_topology() {
        // Data from 12|5|34 tested against 13|5|24.
        let wrong = parse_newick("((1,3),5,(2,4));").unwrap();
        let mut hits = 0;
        for rep in 0..20 {
            let s = sample_cov(&quintet(), 0.7, 200, 300 + rep);
            let r = confirmatory_test(&s, 200, &wrong).unwrap();
            if r.p_value < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 16, "only {hits}/20 rejections");
    }

    #[test]
    fn exploratory_exact_model_finds_tree() {
        let s = model_cov(0.7);
        let rep = exploratory_scan(&s, 60, 0.05).unwrap();
        assert_eq!(rep.ranked.len(), 15);
        assert!((rep.bonferroni_alpha - 0.05 / 15.0).abs() < 1e-15);
        let expected = serialize_newick(&quintet());
        assert_eq!(rep.candidate.as_deref(), Some(expected.as_str()));
        // Every per-tree test has dof m - 3 = 2.
        for r in &rep.ranked {
            assert_eq!(r.report.dof, 2);
        }
    }

    #[test]
    fn exploratory_cap() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..8).map(|j| if i == j { 1.0 } else { 0.1 }).collect())
            .collect();
        let s = SymMatrix::new(Role::Covariance, &rows, None).unwrap();
        assert!(matches!(
            exploratory_scan(&s, 100, 0.05),
            Err(InferenceError::EnumerationCap { .. })
        ));
    }

    #[test]
    fn screen_exact_model_resolves_all_subsets() {
        let s = model_cov(0.7);
        let t = quintet();
        // n = 200: at n = 60 the plug-in standardization leaves the weak
        // false splits through leaf 5 unresolved even on exact model input.
        let rep = quartet_screen(&s, 200, 0.05).unwrap();
        assert_eq!(rep.subsets.len(), 5);
        for sub in &rep.subsets {
            let resolved = sub.resolved.as_ref().expect("subset should resolve");
            let q = Quartet::parse(resolved).unwrap();
            assert!(t.displays(&q).unwrap(), "wrong split {resolved}");
        }
    }

    #[test]
    fn screen_star_covariance_unresolved() {
        // All correlations equal: every tetrad vanishes, all three splits
        // survive.
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.36 }).collect())
            .collect();
        let s = SymMatrix::new(Role::Covariance, &rows, None).unwrap();
        let rep = quartet_screen(&s, 100, 0.05).unwrap();
        assert_eq!(rep.subsets.len(), 1);
        assert!(rep.subsets[0].resolved.is_none());
    }

    #[test]
    fn bayes_strong_tripod_high_probability() {
        let t = parse_newick("(1,2,3);").unwrap();
        let s = sample_cov(&t, 0.9, 200, 5);
        let rep = bayes_compatibility(&s, 200, 2000, 99, BayesMode::Triples, None, None).unwrap();
        assert!(rep.probability >= 0.9, "probability {}", rep.probability);
        assert_eq!(rep.prior_n0, 3);
    }

    #[test]
    fn bayes_sign_violation_low_probability() {
        // Correlations (-0.4, 0.4, 0.4): negative triple product, inside
        // the elliptope (det 0.392 > 0).
        let rows = vec![
            vec![1.0, -0.4, 0.4],
            vec![-0.4, 1.0, 0.4],
            vec![0.4, 0.4, 1.0],
        ];
        let s = SymMatrix::new(Role::Covariance, &rows, None).unwrap();
        let rep = bayes_compatibility(&s, 200, 2000, 99, BayesMode::Triples, None, None).unwrap();
        assert!(rep.probability <= 0.1, "probability {}", rep.probability);
    }

    #[test]
    fn bayes_deterministic_and_stabilizing() {
        let t = parse_newick("(1,2,3);").unwrap();
        let s = sample_cov(&t, 0.8, 100, 6);
        let a = bayes_compatibility(&s, 100, 500, 7, BayesMode::Triples, None, None).unwrap();
        let b = bayes_compatibility(&s, 100, 500, 7, BayesMode::Triples, None, None).unwrap();
        assert_eq!(a.probability, b.probability);
        // Doubling draws keeps the estimate nearby (Cauchy behavior).
        let c = bayes_compatibility(&s, 100, 1000, 7, BayesMode::Triples, None, None).unwrap();
        let d = bayes_compatibility(&s, 100, 2000, 7, BayesMode::Triples, None, None).unwrap();
        assert!((c.probability - d.probability).abs() < 0.08);
    }

    #[test]
    fn bayes_quartet_full_on_model_data() {
        let t = parse_newick("((1,2),(3,4));").unwrap();
        let s = sample_cov(&t, 0.8, 200, 12);
        let q = Quartet::parse("12|34").unwrap();
        let rep =
            bayes_compatibility(&s, 200, 1000, 4, BayesMode::QuartetFull, Some(&q), None).unwrap();
        assert!(rep.probability > 0.3, "probability {}", rep.probability);
        assert_eq!(rep.quartets, vec!["12|34".to_string()]);
        // Missing quartet is an error.
        assert!(matches!(
            bayes_compatibility(&s, 200, 10, 4, BayesMode::QuartetFull, None, None),
            Err(InferenceError::MissingQuartet)
        ));
    }

    #[test]
    fn report_json_schema() {
        let s = model_cov(0.7);
        let rep = quartet_test(&s, 60, &Quartet::parse("12|34").unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        for key in ["statistic", "dof", "p_value", "quartets", "n", "seed", "mode"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(v["quartets"][0], "12|34");
        assert_eq!(v["mode"], "proxy");
        assert!(v["seed"].is_null());
    }
}
