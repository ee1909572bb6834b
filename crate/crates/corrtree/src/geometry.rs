//! Semialgebraic layer: tree metrics, phylogenetic oranges, and the latent
//! tree correlation space, with membership tests, parameterization, sign
//! canonicalization, and tree reconstruction.
//!
//! Membership tests here are geometric, meant for exact or analytic inputs;
//! noisy statistical inputs belong in [`crate::inference`].

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::numerics::{eigh, Mat, NumericsError};
use crate::rng::Stream;
use crate::trees::{Edge, Quartet, Tree, TreeError};

/// Default absolute/relative tolerance for analytic membership checks.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("leaf names of the matrix do not match the tree's leaves")]
    LabelMismatch,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix violates {role:?} invariant: {detail}")]
    RoleInvariant { role: Role, detail: String },
    #[error("entry ({0},{1}) must be strictly positive")]
    NonPositiveEntry(String, String),
    #[error("zero off-diagonal entry at ({0},{1})")]
    ZeroEntry(String, String),
    #[error("matrix is not positive semidefinite")]
    NotPsd,
    #[error("edge weight {0} outside [-1, 1]")]
    WeightOutOfRange(f64),
    #[error("missing weight for edge ({0},{1})")]
    MissingWeight(usize, usize),
    #[error("not sign-canonicalizable: triple ({0},{1},{2}) has negative product")]
    NotSignCanonicalizable(String, String, String),
    #[error("quartet system is not tree-like: {0}")]
    NotTreeLike(String),
    #[error("all quartets unresolved: star-like or degenerate input")]
    Unresolved,
    #[error("need at least {0} leaves")]
    TooSmall(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Distance,
    Correlation,
    Covariance,
    Scatter,
}

/// Dense symmetric matrix with role-specific invariants and optional leaf
/// names. Names default to `"1".."m"` when absent.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    role: Role,
    mat: Mat,
    names: Option<Vec<String>>,
}

impl SymMatrix {
    pub fn new(
        role: Role,
        rows: &[Vec<f64>],
        names: Option<Vec<String>>,
    ) -> Result<Self, GeometryError> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(GeometryError::RoleInvariant {
                role,
                detail: "matrix must be square and nonempty".into(),
            });
        }
        if let Some(n) = &names {
            if n.len() != m {
                return Err(GeometryError::RoleInvariant {
                    role,
                    detail: "leaf name count does not match dimension".into(),
                });
            }
        }
        let mat = Mat::from_rows(rows);
        let scale = mat.max_abs().max(1.0);
        for i in 0..m {
            for j in (i + 1)..m {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                    return Err(GeometryError::NotSymmetric);
                }
            }
        }
        match role {
            Role::Distance => {
                for i in 0..m {
                    if mat[(i, i)] != 0.0 {
                        return Err(GeometryError::RoleInvariant {
                            role,
                            detail: format!("nonzero diagonal at {i}"),
                        });
                    }
                    for j in 0..m {
                        if mat[(i, j)] < 0.0 {
                            return Err(GeometryError::RoleInvariant {
                                role,
                                detail: format!("negative distance at ({i},{j})"),
                            });
                        }
                    }
                }
            }
            Role::Correlation => {
                for i in 0..m {
                    if (mat[(i, i)] - 1.0).abs() > 1e-12 {
                        return Err(GeometryError::RoleInvariant {
                            role,
                            detail: format!("diagonal entry {i} is not 1"),
                        });
                    }
                    for j in 0..m {
                        if mat[(i, j)].abs() > 1.0 + 1e-12 {
                            return Err(GeometryError::RoleInvariant {
                                role,
                                detail: format!("entry ({i},{j}) outside [-1,1]"),
                            });
                        }
                    }
                }
            }
            Role::Covariance | Role::Scatter => {
                let (eigs, _) = eigh(&mat);
                let max = eigs.last().copied().unwrap_or(0.0).max(0.0);
                if eigs[0] < -1e-10 * max.max(1.0) {
                    return Err(GeometryError::NotPsd);
                }
            }
        }
        Ok(SymMatrix { role, mat, names })
    }

    pub fn dim(&self) -> usize {
        self.mat.rows
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn stored_names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Leaf names, falling back to 1-based index strings.
    pub fn names(&self) -> Vec<String> {
        match &self.names {
            Some(n) => n.clone(),
            None => (1..=self.dim()).map(|i| i.to_string()).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    /// Rescale a covariance/scatter/correlation matrix to unit diagonal.
    pub fn to_correlation(&self) -> Result<SymMatrix, GeometryError> {
        let m = self.dim();
        let names = self.names();
        for i in 0..m {
            if self.get(i, i) <= 0.0 {
                return Err(GeometryError::NonPositiveEntry(
                    names[i].clone(),
                    names[i].clone(),
                ));
            }
        }
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else {
                            // Clamp roundoff just past +-1.
                            let v = self.get(i, j) / (self.get(i, i) * self.get(j, j)).sqrt();
                            v.clamp(-1.0, 1.0)
                        }
                    })
                    .collect()
            })
            .collect();
        SymMatrix::new(Role::Correlation, &rows, self.names.clone())
    }

    /// Entrywise absolute value (correlation role).
    pub fn abs(&self) -> Result<SymMatrix, GeometryError> {
        let m = self.dim();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| self.get(i, j).abs()).collect())
            .collect();
        SymMatrix::new(self.role, &rows, self.names.clone())
    }
}

/// Map from tree edges to weights (correlations in [-1,1] or lengths in
/// [0, inf)).
#[derive(Clone, Debug)]
pub struct EdgeWeights {
    map: HashMap<Edge, f64>,
}

impl EdgeWeights {
    pub fn new(map: HashMap<Edge, f64>) -> Self {
        EdgeWeights { map }
    }

    /// Same weight on every edge.
    pub fn constant(t: &Tree, value: f64) -> Self {
        EdgeWeights {
            map: t.edges().into_iter().map(|e| (e, value)).collect(),
        }
    }

    /// Independent uniform weights on [lo, hi].
    pub fn random_uniform(t: &Tree, lo: f64, hi: f64, rng: &mut Stream) -> Self {
        use rand::Rng as _;
        EdgeWeights {
            map: t
                .edges()
                .into_iter()
                .map(|e| (e, rng.gen_range(lo..hi)))
                .collect(),
        }
    }

    pub fn get(&self, e: Edge) -> Option<f64> {
        self.map.get(&e).copied()
    }

    pub fn set(&mut self, e: Edge, w: f64) {
        self.map.insert(e, w);
    }
}

/// Description of the first violated constraint.
#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub indices: Vec<String>,
    pub kind: String,
    pub slack: f64,
}

/// Result of a membership test.
#[derive(Clone, Debug, Serialize)]
pub struct MembershipVerdict {
    pub member: bool,
    pub witness: Option<Witness>,
    pub tol: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MembershipVerdict {
    fn pass(tol: f64) -> Self {
        MembershipVerdict {
            member: true,
            witness: None,
            tol,
            flags: Vec::new(),
        }
    }

    fn fail(tol: f64, indices: Vec<String>, kind: &str, slack: f64) -> Self {
        MembershipVerdict {
            member: false,
            witness: Some(Witness {
                indices,
                kind: kind.to_string(),
                slack,
            }),
            tol,
            flags: Vec::new(),
        }
    }
}

#[inline]
fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn check_labels(s: &SymMatrix, t: &Tree) -> Result<Vec<usize>, GeometryError> {
    // Map leaf position (label order) to matrix index.
    let names = s.names();
    t.leaf_labels()
        .iter()
        .map(|l| {
            names
                .iter()
                .position(|n| n == l)
                .ok_or(GeometryError::LabelMismatch)
        })
        .collect()
}

/// Correlation matrix of the latent tree model: `rho_ij` is the product of
/// edge correlations along the path between leaves `i` and `j`.
pub fn corr_from_tree(t: &Tree, w: &EdgeWeights) -> Result<SymMatrix, GeometryError> {
    for e in t.edges() {
        let v = w.get(e).ok_or(GeometryError::MissingWeight(e.0, e.1))?;
        if !(-1.0..=1.0).contains(&v) {
            return Err(GeometryError::WeightOutOfRange(v));
        }
    }
    let leaves = t.leaves();
    let m = leaves.len();
    let mut rows = vec![vec![1.0_f64; m]; m];
    for a in 0..m {
        for b in (a + 1)..m {
            let p: f64 = t
                .path_edges(leaves[a], leaves[b])?
                .into_iter()
                .map(|e| w.get(e).unwrap())
                .product();
            rows[a][b] = p;
            rows[b][a] = p;
        }
    }
    SymMatrix::new(Role::Correlation, &rows, Some(t.leaf_labels()))
}

/// The isomorphism `d_ij = -log(rho_ij)` from strictly positive correlations
/// to distances.
pub fn dist_from_corr(r: &SymMatrix) -> Result<SymMatrix, GeometryError> {
    let m = r.dim();
    let names = r.names();
    let mut rows = vec![vec![0.0_f64; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let rho = r.get(i, j);
            if rho <= 0.0 {
                return Err(GeometryError::NonPositiveEntry(
                    names[i].clone(),
                    names[j].clone(),
                ));
            }
            rows[i][j] = -rho.ln();
        }
    }
    SymMatrix::new(Role::Distance, &rows, r.names.clone())
}

/// Inverse of [`dist_from_corr`].
pub fn corr_from_dist(d: &SymMatrix) -> Result<SymMatrix, GeometryError> {
    let m = d.dim();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| if i == j { 1.0 } else { (-d.get(i, j)).exp() })
                .collect()
        })
        .collect();
    SymMatrix::new(Role::Correlation, &rows, d.names.clone())
}

/// Four-point condition over all (not necessarily distinct) index 4-tuples:
/// among the three pairwise sums, the two largest are equal within `tol` and
/// not smaller than the third. Repeated indices cover the triangle
/// inequality.
pub fn is_tree_metric(d: &SymMatrix, tol: f64) -> MembershipVerdict {
    let m = d.dim();
    let names = d.names();
    for i in 0..m {
        for j in i..m {
            for k in j..m {
                for l in k..m {
                    let sums = [
                        d.get(i, k) + d.get(j, l),
                        d.get(i, l) + d.get(j, k),
                        d.get(i, j) + d.get(k, l),
                    ];
                    let mut s = sums;
                    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    if !approx_eq(s[1], s[2], tol) {
                        return MembershipVerdict::fail(
                            tol,
                            vec![
                                names[i].clone(),
                                names[j].clone(),
                                names[k].clone(),
                                names[l].clone(),
                            ],
                            "four-point: two largest sums differ",
                            s[2] - s[1],
                        );
                    }
                }
            }
        }
    }
    MembershipVerdict::pass(tol)
}

/// Four-point condition restricted to the quartets of a fixed tree:
/// `d_ik + d_jl = d_il + d_jk >= d_ij + d_kl` for every quartet `ij|kl`,
/// plus the plain metric requirement.
pub fn is_tree_metric_for(d: &SymMatrix, t: &Tree, tol: f64) -> Result<MembershipVerdict, GeometryError> {
    let idx = check_labels(d, t)?;
    let names = d.names();
    // Triangle inequality.
    let m = d.dim();
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let slack = d.get(i, j) - d.get(i, k) - d.get(k, j);
                if slack > tol * d.get(i, j).abs().max(1.0) {
                    return Ok(MembershipVerdict::fail(
                        tol,
                        vec![names[i].clone(), names[j].clone(), names[k].clone()],
                        "triangle inequality",
                        slack,
                    ));
                }
            }
        }
    }
    if t.leaf_count() >= 4 {
        let leaf_pos: HashMap<String, usize> = t
            .leaf_labels()
            .into_iter()
            .enumerate()
            .map(|(p, l)| (l, p))
            .collect();
        for q in t.quartets_of()?.iter() {
            let [li, lj, lk, ll] = q.labels();
            let (i, j, k, l) = (
                idx[leaf_pos[li]],
                idx[leaf_pos[lj]],
                idx[leaf_pos[lk]],
                idx[leaf_pos[ll]],
            );
            let cross1 = d.get(i, k) + d.get(j, l);
            let cross2 = d.get(i, l) + d.get(j, k);
            let split = d.get(i, j) + d.get(k, l);
            if !approx_eq(cross1, cross2, tol) {
                return Ok(MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "quartet cross sums differ",
                    (cross1 - cross2).abs(),
                ));
            }
            if split > cross1.max(cross2) + tol * split.abs().max(1.0) {
                return Ok(MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "split sum exceeds cross sums",
                    split - cross1.max(cross2),
                ));
            }
        }
    }
    Ok(MembershipVerdict::pass(tol))
}

/// Membership in the union of phylogenetic oranges PO(V): for every
/// 4-tuple, at least two of the three products are equal and not larger
/// than the third.
pub fn in_po(r: &SymMatrix, tol: f64) -> MembershipVerdict {
    let m = r.dim();
    let names = r.names();
    for i in 0..m {
        for j in 0..m {
            if r.get(i, j) < 0.0 {
                return MembershipVerdict::fail(
                    tol,
                    vec![names[i].clone(), names[j].clone()],
                    "negative entry",
                    -r.get(i, j),
                );
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            for k in j..m {
                for l in k..m {
                    let p = [
                        r.get(i, k) * r.get(j, l),
                        r.get(i, l) * r.get(j, k),
                        r.get(i, j) * r.get(k, l),
                    ];
                    let ok = (0..3).any(|a| {
                        let b = (a + 1) % 3;
                        let c = (a + 2) % 3;
                        approx_eq(p[a], p[b], tol)
                            && p[a] <= p[c] + tol * p[c].abs().max(1.0)
                            && p[b] <= p[c] + tol * p[c].abs().max(1.0)
                    });
                    if !ok {
                        let mut sorted = p;
                        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        return MembershipVerdict::fail(
                            tol,
                            vec![
                                names[i].clone(),
                                names[j].clone(),
                                names[k].clone(),
                                names[l].clone(),
                            ],
                            "no two products equal and below the third",
                            sorted[1] - sorted[0],
                        );
                    }
                }
            }
        }
    }
    MembershipVerdict::pass(tol)
}

/// Membership in the phylogenetic orange of a fixed tree: the tetrad
/// equality/inequality on every quartet of `t` plus the triangle inequality
/// `rho_ij rho_ik <= rho_jk` on every leaf triple.
pub fn in_po_t(r: &SymMatrix, t: &Tree, tol: f64) -> Result<MembershipVerdict, GeometryError> {
    let idx = check_labels(r, t)?;
    let names = r.names();
    let m = r.dim();
    for i in 0..m {
        for j in 0..m {
            if r.get(i, j) < 0.0 {
                return Ok(MembershipVerdict::fail(
                    tol,
                    vec![names[i].clone(), names[j].clone()],
                    "negative entry",
                    -r.get(i, j),
                ));
            }
        }
    }
    // Triangle inequality over ordered triples.
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                if i == j || j == k || i == k {
                    continue;
                }
                let slack = r.get(i, j) * r.get(i, k) - r.get(j, k);
                if slack > tol {
                    return Ok(MembershipVerdict::fail(
                        tol,
                        vec![names[i].clone(), names[j].clone(), names[k].clone()],
                        "correlation triangle inequality",
                        slack,
                    ));
                }
            }
        }
    }
    if t.leaf_count() >= 4 {
        let leaf_pos: HashMap<String, usize> = t
            .leaf_labels()
            .into_iter()
            .enumerate()
            .map(|(p, l)| (l, p))
            .collect();
        for q in t.quartets_of()?.iter() {
            let [li, lj, lk, ll] = q.labels();
            let (i, j, k, l) = (
                idx[leaf_pos[li]],
                idx[leaf_pos[lj]],
                idx[leaf_pos[lk]],
                idx[leaf_pos[ll]],
            );
            let cross1 = r.get(i, k) * r.get(j, l);
            let cross2 = r.get(i, l) * r.get(j, k);
            let split = r.get(i, j) * r.get(k, l);
            if !approx_eq(cross1, cross2, tol) {
                return Ok(MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "tetrad equality violated",
                    (cross1 - cross2).abs(),
                ));
            }
            if cross1.max(cross2) > split + tol * split.abs().max(1.0) {
                return Ok(MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "cross products exceed split product",
                    cross1.max(cross2) - split,
                ));
            }
        }
    }
    Ok(MembershipVerdict::pass(tol))
}

/// Membership in the latent tree model correlation space M(T): the
/// entrywise absolute value lies in PO(T) and every distinct-triple product
/// `rho_ij rho_ik rho_jk` is nonnegative.
pub fn in_m_t(r: &SymMatrix, t: &Tree, tol: f64) -> Result<MembershipVerdict, GeometryError> {
    let names = r.names();
    let m = r.dim();
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                let p = r.get(i, j) * r.get(i, k) * r.get(j, k);
                if p < -tol {
                    return Ok(MembershipVerdict::fail(
                        tol,
                        vec![names[i].clone(), names[j].clone(), names[k].clone()],
                        "negative triple product",
                        -p,
                    ));
                }
            }
        }
    }
    in_po_t(&r.abs()?, t, tol)
}

/// How much of the semialgebraic system `tree_compatible` and
/// `t_compatible` check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompatMode {
    /// Triple-product constraints only (the pre-screen).
    TriplesOnly,
    /// Triples plus the class- or tree-level quartet conditions.
    Full,
}

fn triples_eq3(
    rho: &SymMatrix,
    tol: f64,
) -> Option<(Vec<String>, f64)> {
    let m = rho.dim();
    let names = rho.names();
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                let a = rho.get(i, j) - rho.get(i, k) * rho.get(j, k);
                let b = rho.get(i, k) - rho.get(i, j) * rho.get(j, k);
                let c = rho.get(j, k) - rho.get(i, j) * rho.get(i, k);
                let p = a * b * c;
                if p < -tol {
                    return Some((
                        vec![names[i].clone(), names[j].clone(), names[k].clone()],
                        -p,
                    ));
                }
            }
        }
    }
    None
}

fn zero_offdiag_flags(rho: &SymMatrix) -> Vec<String> {
    let m = rho.dim();
    let names = rho.names();
    let mut flags = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if rho.get(i, j) == 0.0 {
                flags.push(format!("zero-offdiagonal:{},{}", names[i], names[j]));
            }
        }
    }
    flags
}

/// Class-level tree compatibility of a covariance or correlation matrix:
/// the triple-product condition on every distinct triple, and (in full mode)
/// membership of the absolute correlations in PO(V).
pub fn tree_compatible(
    s: &SymMatrix,
    tol: f64,
    mode: CompatMode,
) -> Result<MembershipVerdict, GeometryError> {
    let (eigs, _) = eigh(s.mat());
    let max = eigs.last().copied().unwrap_or(0.0).max(0.0);
    if eigs[0] < -1e-10 * max.max(1.0) {
        return Err(GeometryError::NotPsd);
    }
    let rho = s.to_correlation()?;
    let flags = zero_offdiag_flags(&rho);
    if let Some((indices, slack)) = triples_eq3(&rho, tol) {
        let mut v = MembershipVerdict::fail(tol, indices, "triple-product triangle constraint", slack);
        v.flags = flags;
        return Ok(v);
    }
    let mut verdict = match mode {
        CompatMode::TriplesOnly => MembershipVerdict::pass(tol),
        CompatMode::Full => in_po(&rho.abs()?, tol),
    };
    verdict.flags = flags;
    Ok(verdict)
}

/// Tree-specific compatibility of a covariance matrix: the triple-product
/// condition plus the tetrad equality/inequality for every quartet of `t`,
/// evaluated in cross-product form to avoid division.
pub fn t_compatible(
    s: &SymMatrix,
    t: &Tree,
    tol: f64,
    mode: CompatMode,
) -> Result<MembershipVerdict, GeometryError> {
    let (eigs, _) = eigh(s.mat());
    let max = eigs.last().copied().unwrap_or(0.0).max(0.0);
    if eigs[0] < -1e-10 * max.max(1.0) {
        return Err(GeometryError::NotPsd);
    }
    let rho = s.to_correlation()?;
    let idx = check_labels(&rho, t)?;
    let flags = zero_offdiag_flags(&rho);
    if let Some((indices, slack)) = triples_eq3(&rho, tol) {
        let mut v = MembershipVerdict::fail(tol, indices, "triple-product triangle constraint", slack);
        v.flags = flags;
        return Ok(v);
    }
    if mode == CompatMode::Full && t.leaf_count() >= 4 {
        let leaf_pos: HashMap<String, usize> = t
            .leaf_labels()
            .into_iter()
            .enumerate()
            .map(|(p, l)| (l, p))
            .collect();
        for q in t.quartets_of()?.iter() {
            let [li, lj, lk, ll] = q.labels();
            let (i, j, k, l) = (
                idx[leaf_pos[li]],
                idx[leaf_pos[lj]],
                idx[leaf_pos[lk]],
                idx[leaf_pos[ll]],
            );
            let cross1 = rho.get(i, k) * rho.get(j, l);
            let cross2 = rho.get(i, l) * rho.get(j, k);
            let split = rho.get(i, j) * rho.get(k, l);
            if !approx_eq(cross1, cross2, tol) {
                let mut v = MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "tetrad equality violated",
                    (cross1 - cross2).abs(),
                );
                v.flags = flags;
                return Ok(v);
            }
            // Division-faithful form of cross/split <= 1: multiply through by
            // the split product, flipping with its sign.
            let lhs = cross1.max(cross2) * split;
            let rhs = split * split;
            if lhs > rhs + tol * rhs.abs().max(1.0) {
                let mut v = MembershipVerdict::fail(
                    tol,
                    q.labels().iter().map(|s| s.to_string()).collect(),
                    "tetrad inequality violated",
                    lhs - rhs,
                );
                v.flags = flags;
                return Ok(v);
            }
        }
    }
    let mut v = MembershipVerdict::pass(tol);
    v.flags = flags;
    Ok(v)
}

/// Diagonal sign canonicalization: `D_ii = sign(rho_1i)` with `D_11 = +1`.
/// Succeeds iff every distinct-triple product is nonnegative, in which case
/// `D R D` equals `|R|` entrywise.
pub fn sign_canonicalize(r: &SymMatrix) -> Result<(Vec<i8>, SymMatrix), GeometryError> {
    let m = r.dim();
    let names = r.names();
    for i in 0..m {
        for j in (i + 1)..m {
            if r.get(i, j) == 0.0 {
                return Err(GeometryError::ZeroEntry(names[i].clone(), names[j].clone()));
            }
        }
    }
    let mut signs = vec![1i8; m];
    for i in 1..m {
        signs[i] = if r.get(0, i) < 0.0 { -1 } else { 1 };
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| f64::from(signs[i]) * f64::from(signs[j]) * r.get(i, j))
                .collect()
        })
        .collect();
    for i in 0..m {
        for j in (i + 1)..m {
            if rows[i][j] < 0.0 {
                // The triple (1, i, j) has a negative product.
                return Err(GeometryError::NotSignCanonicalizable(
                    names[0].clone(),
                    names[i].clone(),
                    names[j].clone(),
                ));
            }
        }
    }
    let canon = SymMatrix::new(Role::Correlation, &rows, r.names.clone())?;
    Ok((signs, canon))
}

/// Neighbor joining on a distance matrix, topology only. Returns an unrooted
/// binary tree over the given names.
pub fn neighbor_joining(d: &Mat, names: &[String]) -> Result<Tree, GeometryError> {
    let m = names.len();
    if m < 3 {
        return Err(GeometryError::TooSmall(3));
    }
    // Arena of tree nodes; the first m are leaves.
    let mut labels: Vec<Option<String>> = names.iter().map(|n| Some(n.clone())).collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    // Active cluster list: (arena node, row in dist).
    let mut active: Vec<usize> = (0..m).collect();
    let mut dist = d.clone();
    while active.len() > 3 {
        let n = active.len();
        let r: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| dist[(active[i], active[j])]).sum())
            .collect();
        let mut best = (f64::INFINITY, 0usize, 1usize);
        for i in 0..n {
            for j in (i + 1)..n {
                let q = (n as f64 - 2.0) * dist[(active[i], active[j])] - r[i] - r[j];
                if q < best.0 - 1e-15 {
                    best = (q, i, j);
                }
            }
        }
        let (_, bi, bj) = best;
        let (u, v) = (active[bi], active[bj]);
        let w = labels.len();
        labels.push(None);
        edges.push((u, w));
        edges.push((v, w));
        // Grow the distance matrix by one row/column for w.
        let old = dist.rows;
        let mut grown = Mat::zeros(old + 1, old + 1);
        for a in 0..old {
            for b in 0..old {
                grown[(a, b)] = dist[(a, b)];
            }
        }
        for &k in &active {
            if k == u || k == v {
                continue;
            }
            let dk = 0.5 * (dist[(u, k)] + dist[(v, k)] - dist[(u, v)]);
            grown[(w, k)] = dk;
            grown[(k, w)] = dk;
        }
        dist = grown;
        active.retain(|&x| x != u && x != v);
        active.push(w);
    }
    let c = labels.len();
    labels.push(None);
    for &x in &active {
        edges.push((x, c));
    }
    Ok(Tree::from_edges(labels.len(), &edges, labels)?)
}

/// Reconstruct the unique tree whose model contains `r`, when one exists:
/// quartets are resolved by the strictly largest absolute product, the tree
/// is amalgamated by neighbor joining on `-log |rho|`, and the result is
/// verified against every resolved quartet.
pub fn reconstruct_tree(r: &SymMatrix, tol: f64) -> Result<Tree, GeometryError> {
    let m = r.dim();
    let names = r.names();
    if m < 3 {
        return Err(GeometryError::TooSmall(3));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if r.get(i, j) == 0.0 {
                return Err(GeometryError::ZeroEntry(names[i].clone(), names[j].clone()));
            }
        }
    }
    if m == 3 {
        return Ok(crate::trees::parse_newick(&format!(
            "({},{},{});",
            names[0], names[1], names[2]
        ))?);
    }
    // Resolve each 4-subset: the split whose product of within-pair
    // absolute correlations is strictly the largest.
    let mut resolved: Vec<Quartet> = Vec::new();
    let mut subsets = 0usize;
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                for l in (k + 1)..m {
                    subsets += 1;
                    let products = [
                        (r.get(i, j) * r.get(k, l)).abs(), // ij|kl
                        (r.get(i, k) * r.get(j, l)).abs(), // ik|jl
                        (r.get(i, l) * r.get(j, k)).abs(), // il|jk
                    ];
                    let mut order = [0usize, 1, 2];
                    order.sort_by(|&a, &b| products[b].partial_cmp(&products[a]).unwrap());
                    if products[order[0]] - products[order[1]] > tol {
                        let q = match order[0] {
                            0 => Quartet::new(&names[i], &names[j], &names[k], &names[l]),
                            1 => Quartet::new(&names[i], &names[k], &names[j], &names[l]),
                            _ => Quartet::new(&names[i], &names[l], &names[j], &names[k]),
                        }?;
                        resolved.push(q);
                    }
                }
            }
        }
    }
    let _ = subsets;
    if resolved.is_empty() {
        return Err(GeometryError::Unresolved);
    }
    let mut dist = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                dist[(i, j)] = -r.get(i, j).abs().ln();
            }
        }
    }
    let tree = neighbor_joining(&dist, &names)?;
    for q in &resolved {
        if !tree.displays(q)? {
            return Err(GeometryError::NotTreeLike(format!(
                "resolved quartet {q} is not displayed by the amalgamated tree"
            )));
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::parse_newick;

    fn tripod() -> Tree {
        parse_newick("(1,2,3);").unwrap()
    }

    fn tripod_corr(r12: f64, r13: f64, r23: f64) -> SymMatrix {
        SymMatrix::new(
            Role::Correlation,
            &[
                vec![1.0, r12, r13],
                vec![r12, 1.0, r23],
                vec![r13, r23, 1.0],
            ],
            Some(vec!["1".into(), "2".into(), "3".into()]),
        )
        .unwrap()
    }

    #[test]
    fn corr_from_tree_quartet() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let w = EdgeWeights::constant(&t, 0.5);
        let r = corr_from_tree(&t, &w).unwrap();
        let names = r.names();
        let at = |x: &str, y: &str| {
            r.get(
                names.iter().position(|n| n == x).unwrap(),
                names.iter().position(|n| n == y).unwrap(),
            )
        };
        assert!((at("a", "b") - 0.25).abs() < 1e-15);
        assert!((at("c", "d") - 0.25).abs() < 1e-15);
        assert!((at("a", "c") - 0.125).abs() < 1e-15);
        assert!((at("b", "d") - 0.125).abs() < 1e-15);
    }

    #[test]
    fn corr_from_tree_unit_weights_all_ones() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, 1.0)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(r.get(i, j), 1.0);
            }
        }
    }

    #[test]
    fn corr_from_tree_tripod_weights() {
        let t = tripod();
        let mut w = EdgeWeights::constant(&t, 0.0);
        // Center is the single inner node; its edges go to leaves 1, 2, 3.
        let l1 = t.leaf_by_label("1").unwrap();
        let l2 = t.leaf_by_label("2").unwrap();
        let l3 = t.leaf_by_label("3").unwrap();
        let center = t.neighbors(l1)[0];
        let e = |a: usize, b: usize| (a.min(b), a.max(b));
        w.set(e(center, l1), 0.9);
        w.set(e(center, l2), 0.8);
        w.set(e(center, l3), 0.7);
        let r = corr_from_tree(&t, &w).unwrap();
        assert!((r.get(0, 1) - 0.72).abs() < 1e-12);
        assert!((r.get(0, 2) - 0.63).abs() < 1e-12);
        assert!((r.get(1, 2) - 0.56).abs() < 1e-12);
    }

    #[test]
    fn corr_from_tree_rejects_out_of_range() {
        let t = tripod();
        let w = EdgeWeights::constant(&t, 1.5);
        assert!(matches!(
            corr_from_tree(&t, &w),
            Err(GeometryError::WeightOutOfRange(_))
        ));
    }

    #[test]
    fn dist_corr_round_trip() {
        let r = tripod_corr(0.5, 0.9, 0.45);
        let d = dist_from_corr(&r).unwrap();
        assert!((d.get(0, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        let back = corr_from_dist(&d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back.get(i, j) - r.get(i, j)).abs() < 1e-12);
            }
        }
        let bad = tripod_corr(-0.5, 0.9, 0.45);
        assert!(dist_from_corr(&bad).is_err());
    }

    #[test]
    fn unit_quartet_tree_is_tree_metric() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, (-1.0f64).exp())).unwrap();
        let d = dist_from_corr(&r).unwrap();
        // Unit edge lengths: cross sums 6, 6; split sum 4.
        assert!((d.get(0, 2) + d.get(1, 3) - 6.0).abs() < 1e-9);
        assert!((d.get(0, 1) + d.get(2, 3) - 4.0).abs() < 1e-9);
        assert!(is_tree_metric(&d, 1e-9).member);
        // Break it: d_ab = 10.
        let mut rows = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                rows[i][j] = d.get(i, j);
            }
        }
        rows[0][1] = 10.0;
        rows[1][0] = 10.0;
        let bad = SymMatrix::new(Role::Distance, &rows, Some(d.names())).unwrap();
        let v = is_tree_metric(&bad, 1e-9);
        assert!(!v.member);
        assert!(v.witness.is_some());
    }

    #[test]
    fn random_binary_trees_give_tree_metrics() {
        use crate::trees::random_binary_tree;
        use rand::Rng as _;
        let mut rng = Stream::new(4);
        for rep in 0..200 {
            let m = 4 + rep % 5; // up to 8 leaves
            let names: Vec<String> = (0..m).map(|i| format!("v{i}")).collect();
            let t = random_binary_tree(&names, &mut rng).unwrap();
            // Edge lengths U[0.1, 2] as correlations exp(-len).
            let mut w = EdgeWeights::constant(&t, 0.0);
            for e in t.edges() {
                w.set(e, (-rng.gen_range(0.1..2.0f64)).exp());
            }
            let d = dist_from_corr(&corr_from_tree(&t, &w).unwrap()).unwrap();
            assert!(is_tree_metric(&d, 1e-9).member);
            assert!(is_tree_metric_for(&d, &t, 1e-9).unwrap().member);
        }
    }

    #[test]
    fn tree_metric_for_wrong_topology_fails() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, (-1.0f64).exp())).unwrap();
        let d = dist_from_corr(&r).unwrap();
        let wrong = parse_newick("((a,c),(b,d));").unwrap();
        assert!(!is_tree_metric_for(&d, &wrong, 1e-9).unwrap().member);
    }

    #[test]
    fn tree_metric_for_label_mismatch() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let r = tripod_corr(0.5, 0.5, 0.5);
        let d = dist_from_corr(&r).unwrap();
        assert!(is_tree_metric_for(&d, &t, 1e-9).is_err());
    }

    #[test]
    fn in_po_accepts_model_points() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let mut rng = Stream::new(11);
        for _ in 0..20 {
            let w = EdgeWeights::random_uniform(&t, 0.1, 0.95, &mut rng);
            let r = corr_from_tree(&t, &w).unwrap();
            assert!(in_po(&r, 1e-9).member);
            assert!(in_po_t(&r, &t, 1e-9).unwrap().member);
        }
    }

    #[test]
    fn in_po_all_ones_boundary() {
        let t = parse_newick("(a,b,c,d);").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, 1.0)).unwrap();
        assert!(in_po(&r, 1e-9).member);
    }

    #[test]
    fn in_po_rejects_perturbed_quartet() {
        // Products 0.0625, 0.03, 0.015625: no two of the smaller products
        // are equal.
        let rows = vec![
            vec![1.0, 0.25, 0.12, 0.125],
            vec![0.25, 1.0, 0.125, 0.125],
            vec![0.12, 0.125, 1.0, 0.25],
            vec![0.125, 0.125, 0.25, 1.0],
        ];
        let r = SymMatrix::new(Role::Correlation, &rows, None).unwrap();
        assert!(!in_po(&r, 1e-9).member);
    }

    #[test]
    fn in_po_t_wrong_topology_fails() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, 0.5)).unwrap();
        assert!(in_po_t(&r, &t, 1e-9).unwrap().member);
        let wrong = parse_newick("((a,c),(b,d));").unwrap();
        let v = in_po_t(&r, &wrong, 1e-9).unwrap();
        assert!(!v.member);
    }

    #[test]
    fn in_po_t_triangle_violation() {
        // rho_12 rho_13 = 0.81 > 0.5 = rho_23 on a tripod.
        let r = tripod_corr(0.9, 0.9, 0.5);
        let v = in_po_t(&r, &tripod(), 1e-9).unwrap();
        assert!(!v.member);
        assert!(v.witness.unwrap().kind.contains("triangle"));
    }

    #[test]
    fn in_m_t_tripod_cases() {
        let t = tripod();
        assert!(in_m_t(&tripod_corr(0.5, 0.5, 0.5), &t, 1e-9).unwrap().member);
        assert!(!in_m_t(&tripod_corr(0.9, 0.9, 0.5), &t, 1e-9).unwrap().member);
        // Sign-flip copy of PO(T).
        assert!(in_m_t(&tripod_corr(-0.5, -0.5, 0.5), &t, 1e-9).unwrap().member);
        // Negative triple product.
        let v = in_m_t(&tripod_corr(-0.5, 0.5, 0.5), &t, 1e-9).unwrap();
        assert!(!v.member);
        assert_eq!(v.witness.unwrap().kind, "negative triple product");
    }

    #[test]
    fn tree_compatible_model_points_and_violations() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let mut rng = Stream::new(23);
        for _ in 0..10 {
            let w = EdgeWeights::random_uniform(&t, -0.9, 0.9, &mut rng);
            let r = corr_from_tree(&t, &w).unwrap();
            assert!(tree_compatible(&r, 1e-9, CompatMode::Full).unwrap().member);
        }
        let bad = tripod_corr(0.5, -0.5, 0.5);
        assert!(!tree_compatible(&bad, 1e-9, CompatMode::TriplesOnly)
            .unwrap()
            .member);
    }

    #[test]
    fn t_compatible_scale_invariance_and_perturbation() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let w = EdgeWeights::constant(&t, 0.7);
        let r = corr_from_tree(&t, &w).unwrap();
        // Rescale with variances 1..5.
        let scales = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| r.get(i, j) * (scales[i] * scales[j]).sqrt())
                    .collect()
            })
            .collect();
        let cov = SymMatrix::new(Role::Covariance, &rows, Some(r.names())).unwrap();
        assert!(t_compatible(&cov, &t, 1e-9, CompatMode::Full).unwrap().member);
        // Perturb one tetrad entry.
        let mut bad_rows = rows.clone();
        bad_rows[0][3] += 0.2;
        bad_rows[3][0] += 0.2;
        let bad = SymMatrix::new(Role::Covariance, &bad_rows, Some(r.names())).unwrap();
        let v = t_compatible(&bad, &t, 1e-9, CompatMode::Full).unwrap();
        assert!(!v.member);
    }

    #[test]
    fn sign_canonicalize_cases() {
        let (signs, canon) = sign_canonicalize(&tripod_corr(-0.5, -0.5, 0.5)).unwrap();
        assert_eq!(signs, vec![1, -1, -1]);
        assert!((canon.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((canon.get(0, 2) - 0.5).abs() < 1e-15);
        assert!((canon.get(1, 2) - 0.5).abs() < 1e-15);

        let (signs, _) = sign_canonicalize(&tripod_corr(0.5, 0.5, 0.5)).unwrap();
        assert_eq!(signs, vec![1, 1, 1]);

        assert!(matches!(
            sign_canonicalize(&tripod_corr(-0.5, 0.5, 0.5)),
            Err(GeometryError::NotSignCanonicalizable(..))
        ));
        assert!(matches!(
            sign_canonicalize(&tripod_corr(0.0, 0.5, 0.5)),
            Err(GeometryError::ZeroEntry(..))
        ));
    }

    #[test]
    fn reconstruct_quartet_example() {
        let t = parse_newick("((a,b),(c,d));").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, 0.5)).unwrap();
        let rec = reconstruct_tree(&r, 1e-9).unwrap();
        assert!(rec.topology_eq(&t));
    }

    #[test]
    fn reconstruct_quintet_round_trip() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let mut rng = Stream::new(77);
        for _ in 0..100 {
            let w = EdgeWeights::random_uniform(&t, 0.5, 0.9, &mut rng);
            let r = corr_from_tree(&t, &w).unwrap();
            let rec = reconstruct_tree(&r, 1e-9).unwrap();
            assert!(rec.topology_eq(&t));
        }
    }

    #[test]
    fn reconstruct_signed_matches_canonical() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let mut rng = Stream::new(78);
        let w = EdgeWeights::random_uniform(&t, -0.9, -0.5, &mut rng);
        let r = corr_from_tree(&t, &w).unwrap();
        let rec = reconstruct_tree(&r, 1e-9).unwrap();
        assert!(rec.topology_eq(&t));
    }

    #[test]
    fn reconstruct_star_is_unresolved() {
        let t = parse_newick("(a,b,c,d);").unwrap();
        let r = corr_from_tree(&t, &EdgeWeights::constant(&t, 0.6)).unwrap();
        assert!(matches!(
            reconstruct_tree(&r, 1e-9),
            Err(GeometryError::Unresolved)
        ));
    }

    #[test]
    fn metric_orange_isomorphism() {
        // is_tree_metric(dist_from_corr(r)) agrees with in_po(r) on strictly
        // positive matrices.
        let mut rng = Stream::new(99);
        use rand::Rng as _;
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        for rep in 0..40 {
            let r = if rep % 2 == 0 {
                corr_from_tree(&t, &EdgeWeights::random_uniform(&t, 0.3, 0.95, &mut rng)).unwrap()
            } else {
                // Random positive symmetric unit-diagonal matrix, usually not
                // in PO(V).
                let mut rows = vec![vec![1.0; 5]; 5];
                for i in 0..5 {
                    for j in (i + 1)..5 {
                        let v = rng.gen_range(0.05..0.95);
                        rows[i][j] = v;
                        rows[j][i] = v;
                    }
                }
                SymMatrix::new(Role::Correlation, &rows, None).unwrap()
            };
            let po = in_po(&r, 1e-9).member;
            let metric = is_tree_metric(&dist_from_corr(&r).unwrap(), 1e-9).member;
            assert_eq!(po, metric, "mismatch at rep {rep}");
        }
    }

    #[test]
    fn permutation_and_sign_invariance() {
        let t = parse_newick("((1,2),5,(3,4));").unwrap();
        let mut rng = Stream::new(5);
        let w = EdgeWeights::random_uniform(&t, 0.4, 0.9, &mut rng);
        let r = corr_from_tree(&t, &w).unwrap();
        // Sign flip D R D stays in M(T).
        let signs = [1.0, -1.0, 1.0, -1.0, -1.0];
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| signs[i] * signs[j] * r.get(i, j)).collect())
            .collect();
        let flipped = SymMatrix::new(Role::Correlation, &rows, Some(r.names())).unwrap();
        assert_eq!(
            in_m_t(&r, &t, 1e-9).unwrap().member,
            in_m_t(&flipped, &t, 1e-9).unwrap().member
        );
    }
}
