//! Leaf-labeled undirected trees, Newick I/O, quartets, and quartet-set
//! construction.
//!
//! Trees here are the combinatorial object behind every constraint in the
//! crate: connected, acyclic, inner nodes of degree at least three, leaves
//! carrying unique labels. Degree-2 nodes (including artificial Newick roots)
//! are suppressed on construction.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Stream;

pub type NodeId = usize;
/// Undirected edge with endpoints in ascending order.
pub type Edge = (NodeId, NodeId);

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TreeError {
    #[error("newick parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("duplicate leaf label {0:?}")]
    DuplicateLabel(String),
    #[error("empty leaf label")]
    EmptyLabel,
    #[error("tree is not connected")]
    NotConnected,
    #[error("tree has a cycle")]
    Cyclic,
    #[error("inner node {0} has degree {1}, expected at least 3")]
    LowDegreeInner(NodeId, usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown leaf label {0:?}")]
    UnknownLabel(String),
    #[error("operation requires at least {needed} leaves, tree has {got}")]
    TooFewLeaves { needed: usize, got: usize },
    #[error("operation requires a binary tree")]
    NotBinary,
    #[error("quartet leaves must be four distinct labels")]
    QuartetNotDistinct,
    #[error("invalid quartet syntax {0:?}")]
    QuartetSyntax(String),
    #[error("duplicate quartet {0}")]
    DuplicateQuartet(String),
    #[error("{0} leaves exceeds the enumeration cap of {1}")]
    EnumerationCap(usize, usize),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Unordered split `ij|kl` of four distinct leaves, stored in canonical form:
/// each pair sorted, pairs ordered by their smaller label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quartet {
    left: (String, String),
    right: (String, String),
}

impl Quartet {
    pub fn new(i: &str, j: &str, k: &str, l: &str) -> Result<Self, TreeError> {
        let all = [i, j, k, l];
        let distinct: HashSet<&&str> = all.iter().collect();
        if distinct.len() != 4 || all.iter().any(|s| s.is_empty()) {
            return Err(TreeError::QuartetNotDistinct);
        }
        let mut left = (i.to_string(), j.to_string());
        let mut right = (k.to_string(), l.to_string());
        if left.0 > left.1 {
            std::mem::swap(&mut left.0, &mut left.1);
        }
        if right.0 > right.1 {
            std::mem::swap(&mut right.0, &mut right.1);
        }
        if right.0 < left.0 {
            std::mem::swap(&mut left, &mut right);
        }
        Ok(Quartet { left, right })
    }

    pub fn left(&self) -> (&str, &str) {
        (&self.left.0, &self.left.1)
    }

    pub fn right(&self) -> (&str, &str) {
        (&self.right.0, &self.right.1)
    }

    pub fn labels(&self) -> [&str; 4] {
        [&self.left.0, &self.left.1, &self.right.0, &self.right.1]
    }

    /// Parse `"12|34"` (single-character labels) or `"a,b|c,d"`.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let bad = || TreeError::QuartetSyntax(text.to_string());
        let (l, r) = text.split_once('|').ok_or_else(bad)?;
        let split_pair = |s: &str| -> Result<(String, String), TreeError> {
            if let Some((a, b)) = s.split_once(',') {
                Ok((a.trim().to_string(), b.trim().to_string()))
            } else {
                let chars: Vec<char> = s.trim().chars().collect();
                if chars.len() == 2 {
                    Ok((chars[0].to_string(), chars[1].to_string()))
                } else {
                    Err(bad())
                }
            }
        };
        let (a, b) = split_pair(l)?;
        let (c, d) = split_pair(r)?;
        Quartet::new(&a, &b, &c, &d)
    }
}

impl fmt::Display for Quartet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let single = self.labels().iter().all(|s| s.chars().count() == 1);
        if single {
            write!(
                f,
                "{}{}|{}{}",
                self.left.0, self.left.1, self.right.0, self.right.1
            )
        } else {
            write!(
                f,
                "{},{}|{},{}",
                self.left.0, self.left.1, self.right.0, self.right.1
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuartetTag {
    Determining,
    Testing,
    Arbitrary,
}

/// Ordered sequence of distinct quartets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuartetSet {
    quartets: Vec<Quartet>,
    pub tag: QuartetTag,
}

impl QuartetSet {
    pub fn new(quartets: Vec<Quartet>, tag: QuartetTag) -> Result<Self, TreeError> {
        let mut seen = HashSet::new();
        for q in &quartets {
            if !seen.insert(q.clone()) {
                return Err(TreeError::DuplicateQuartet(q.to_string()));
            }
        }
        Ok(QuartetSet { quartets, tag })
    }

    pub fn len(&self) -> usize {
        self.quartets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quartets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Quartet> {
        self.quartets.iter()
    }

    pub fn as_slice(&self) -> &[Quartet] {
        &self.quartets
    }
}

impl<'a> IntoIterator for &'a QuartetSet {
    type Item = &'a Quartet;
    type IntoIter = std::slice::Iter<'a, Quartet>;
    fn into_iter(self) -> Self::IntoIter {
        self.quartets.iter()
    }
}

/// Undirected leaf-labeled tree with suppressed degree-2 nodes.
#[derive(Clone, Debug)]
pub struct Tree {
    adj: Vec<Vec<NodeId>>,
    labels: Vec<Option<String>>,
}

impl Tree {
    /// Build and validate a tree from an edge list. Labeled nodes are leaves.
    pub fn from_edges(
        node_count: usize,
        edges: &[(NodeId, NodeId)],
        labels: Vec<Option<String>>,
    ) -> Result<Self, TreeError> {
        assert_eq!(labels.len(), node_count);
        let mut adj = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(TreeError::UnknownNode(u.max(v)));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        let t = Tree { adj, labels };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TreeError> {
        let n = self.adj.len();
        let edge_count: usize = self.adj.iter().map(|a| a.len()).sum::<usize>() / 2;
        if n == 0 {
            return Err(TreeError::NotConnected);
        }
        // Connectivity by BFS.
        let mut seen = vec![false; n];
        let mut queue = vec![0usize];
        seen[0] = true;
        let mut visited = 1;
        while let Some(u) = queue.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    visited += 1;
                    queue.push(v);
                }
            }
        }
        if visited != n {
            return Err(TreeError::NotConnected);
        }
        if edge_count != n - 1 {
            return Err(TreeError::Cyclic);
        }
        let mut label_set = HashSet::new();
        for u in 0..n {
            match &self.labels[u] {
                Some(name) => {
                    if name.is_empty() {
                        return Err(TreeError::EmptyLabel);
                    }
                    if !label_set.insert(name.clone()) {
                        return Err(TreeError::DuplicateLabel(name.clone()));
                    }
                    if self.adj[u].len() > 1 {
                        return Err(TreeError::Internal(format!(
                            "labeled node {u} has degree {}",
                            self.adj[u].len()
                        )));
                    }
                }
                None => {
                    if n > 1 && self.adj[u].len() < 3 {
                        return Err(TreeError::LowDegreeInner(u, self.adj[u].len()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adj[u].len()
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.adj[u]
    }

    pub fn label(&self, u: NodeId) -> Option<&str> {
        self.labels[u].as_deref()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for u in 0..self.adj.len() {
            for &v in &self.adj[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Edges with both endpoints internal.
    pub fn internal_edges(&self) -> Vec<Edge> {
        self.edges()
            .into_iter()
            .filter(|&(u, v)| self.labels[u].is_none() && self.labels[v].is_none())
            .collect()
    }

    /// Leaf node ids in ascending label order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = (0..self.adj.len())
            .filter(|&u| self.labels[u].is_some())
            .collect();
        out.sort_by(|&a, &b| self.labels[a].cmp(&self.labels[b]));
        out
    }

    /// Leaf labels in ascending order.
    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves()
            .into_iter()
            .map(|u| self.labels[u].clone().unwrap())
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn leaf_by_label(&self, name: &str) -> Result<NodeId, TreeError> {
        self.labels
            .iter()
            .position(|l| l.as_deref() == Some(name))
            .ok_or_else(|| TreeError::UnknownLabel(name.to_string()))
    }

    pub fn is_binary(&self) -> bool {
        (0..self.adj.len()).all(|u| {
            if self.labels[u].is_some() {
                self.adj[u].len() <= 1
            } else {
                self.adj[u].len() == 3
            }
        })
    }

    /// Edge set of the unique path between two nodes; empty iff `u == v`.
    pub fn path_edges(&self, u: NodeId, v: NodeId) -> Result<Vec<Edge>, TreeError> {
        let n = self.adj.len();
        if u >= n {
            return Err(TreeError::UnknownNode(u));
        }
        if v >= n {
            return Err(TreeError::UnknownNode(v));
        }
        if u == v {
            return Ok(Vec::new());
        }
        let mut parent = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(u);
        parent[u] = u;
        while let Some(x) = queue.pop_front() {
            if x == v {
                break;
            }
            for &y in &self.adj[x] {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    queue.push_back(y);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = v;
        while cur != u {
            let p = parent[cur];
            path.push((p.min(cur), p.max(cur)));
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Whether the quartet `ij|kl` is displayed: paths ph(i,j) and ph(k,l)
    /// share no edge.
    pub fn displays(&self, q: &Quartet) -> Result<bool, TreeError> {
        let [i, j, k, l] = q.labels();
        let (ni, nj, nk, nl) = (
            self.leaf_by_label(i)?,
            self.leaf_by_label(j)?,
            self.leaf_by_label(k)?,
            self.leaf_by_label(l)?,
        );
        let a: HashSet<Edge> = self.path_edges(ni, nj)?.into_iter().collect();
        let b = self.path_edges(nk, nl)?;
        Ok(b.iter().all(|e| !a.contains(e)))
    }

    /// All quartets of the tree: splits `ij|kl` with edge-disjoint paths.
    /// For a binary tree this is exactly one quartet per 4-subset of leaves.
    pub fn quartets_of(&self) -> Result<QuartetSet, TreeError> {
        let leaves = self.leaves();
        let m = leaves.len();
        if m < 4 {
            return Err(TreeError::TooFewLeaves { needed: 4, got: m });
        }
        // Pairwise path edge sets, reused across subsets.
        let mut paths: Vec<Vec<HashSet<Edge>>> = vec![vec![HashSet::new(); m]; m];
        for a in 0..m {
            for b in (a + 1)..m {
                let p: HashSet<Edge> = self
                    .path_edges(leaves[a], leaves[b])?
                    .into_iter()
                    .collect();
                paths[a][b] = p;
            }
        }
        let disjoint = |p: &HashSet<Edge>, q: &HashSet<Edge>| p.iter().all(|e| !q.contains(e));
        let mut out = Vec::new();
        for a in 0..m {
            for b in (a + 1)..m {
                for c in (b + 1)..m {
                    for d in (c + 1)..m {
                        let names = [
                            self.labels[leaves[a]].as_deref().unwrap(),
                            self.labels[leaves[b]].as_deref().unwrap(),
                            self.labels[leaves[c]].as_deref().unwrap(),
                            self.labels[leaves[d]].as_deref().unwrap(),
                        ];
                        // Pairings ab|cd, ac|bd, ad|bc.
                        let pairings = [
                            ((a, b), (c, d), [0usize, 1, 2, 3]),
                            ((a, c), (b, d), [0, 2, 1, 3]),
                            ((a, d), (b, c), [0, 3, 1, 2]),
                        ];
                        for ((x1, x2), (y1, y2), idx) in pairings {
                            if disjoint(&paths[x1][x2], &paths[y1][y2]) {
                                out.push(Quartet::new(
                                    names[idx[0]],
                                    names[idx[1]],
                                    names[idx[2]],
                                    names[idx[3]],
                                )?);
                            }
                        }
                    }
                }
            }
        }
        out.sort();
        QuartetSet::new(out, QuartetTag::Arbitrary)
    }

    /// Minimal determining quartet set for a binary tree: one quartet per
    /// internal edge, built from the closest leaf in each of the four subtrees
    /// hanging off the edge's endpoints. Size equals the number of internal
    /// edges, i.e. m - 3.
    pub fn minimal_determining_quartets(&self) -> Result<QuartetSet, TreeError> {
        if !self.is_binary() {
            return Err(TreeError::NotBinary);
        }
        let m = self.leaf_count();
        if m < 4 {
            return Err(TreeError::TooFewLeaves { needed: 4, got: m });
        }
        let mut out = Vec::new();
        for (u, v) in self.internal_edges() {
            let reps_u = self.closest_leaves_around(u, v)?;
            let reps_v = self.closest_leaves_around(v, u)?;
            out.push(Quartet::new(
                &reps_u[0], &reps_u[1], &reps_v[0], &reps_v[1],
            )?);
        }
        out.sort();
        QuartetSet::new(out, QuartetTag::Determining)
    }

    /// For an inner node `u` with excluded neighbor `banned`, return the
    /// closest leaf (hop distance, ties by label) in each remaining subtree.
    fn closest_leaves_around(&self, u: NodeId, banned: NodeId) -> Result<Vec<String>, TreeError> {
        let mut reps = Vec::new();
        for &w in &self.adj[u] {
            if w == banned {
                continue;
            }
            // BFS into the subtree rooted at w away from u.
            let mut best: Option<(usize, String)> = None;
            let mut queue = std::collections::VecDeque::new();
            queue.push_back((w, u, 0usize));
            while let Some((x, from, depth)) = queue.pop_front() {
                if let Some(name) = &self.labels[x] {
                    let cand = (depth, name.clone());
                    if best.as_ref().map_or(true, |b| cand < *b) {
                        best = Some(cand);
                    }
                    continue;
                }
                for &y in &self.adj[x] {
                    if y != from {
                        queue.push_back((y, x, depth + 1));
                    }
                }
            }
            let (_, name) =
                best.ok_or_else(|| TreeError::Internal("leafless subtree".into()))?;
            reps.push(name);
        }
        Ok(reps)
    }

    /// Algebraically independent testing quartet set of size
    /// `C(m,2) - (2m - 3)`, selected greedily by the rank of the Jacobian of
    /// tetrad polynomials at a fixed-seed generic model point.
    pub fn testing_quartets(&self) -> Result<QuartetSet, TreeError> {
        if !self.is_binary() {
            return Err(TreeError::NotBinary);
        }
        let leaves = self.leaves();
        let m = leaves.len();
        if m < 4 {
            return Err(TreeError::TooFewLeaves { needed: 4, got: m });
        }
        let target = m * (m - 1) / 2 - (2 * m - 3);
        // Generic point: edge correlations in [0.6, 0.9] from a fixed seed.
        let mut rng = Stream::new(0x7e57_0001);
        let edges = self.edges();
        let weights: Vec<f64> = edges.iter().map(|_| rng.gen_range(0.6..0.9)).collect();
        let edge_weight = |e: &Edge| -> f64 {
            let pos = edges.iter().position(|x| x == e).unwrap();
            weights[pos]
        };
        let pos_of = |a: usize, b: usize| -> usize {
            let (i, j) = (a.min(b), a.max(b));
            // Lexicographic rank of pair (i, j) with i < j among C(m,2) pairs.
            i * m - i * (i + 1) / 2 + (j - i - 1)
        };
        let mut rho = vec![vec![1.0_f64; m]; m];
        for a in 0..m {
            for b in (a + 1)..m {
                let p: f64 = self
                    .path_edges(leaves[a], leaves[b])?
                    .iter()
                    .map(edge_weight)
                    .product();
                rho[a][b] = p;
                rho[b][a] = p;
            }
        }
        let npairs = m * (m - 1) / 2;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut accepted = Vec::new();
        let label_index: std::collections::HashMap<&str, usize> = leaves
            .iter()
            .enumerate()
            .map(|(idx, &u)| (self.labels[u].as_deref().unwrap(), idx))
            .collect();
        for q in self.quartets_of()?.iter() {
            if accepted.len() == target {
                break;
            }
            let [li, lj, lk, ll] = q.labels();
            let (i, j, k, l) = (
                label_index[li],
                label_index[lj],
                label_index[lk],
                label_index[ll],
            );
            // Gradient of f = rho_ik rho_jl - rho_il rho_jk.
            let mut g = vec![0.0_f64; npairs];
            g[pos_of(i, k)] += rho[j][l];
            g[pos_of(j, l)] += rho[i][k];
            g[pos_of(i, l)] -= rho[j][k];
            g[pos_of(j, k)] -= rho[i][l];
            let norm0: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Modified Gram-Schmidt against accepted gradients.
            for b in &basis {
                let dot: f64 = g.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in g.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 * norm0.max(1.0) {
                for x in g.iter_mut() {
                    *x /= norm;
                }
                basis.push(g);
                accepted.push(q.clone());
            }
        }
        if accepted.len() != target {
            return Err(TreeError::Internal(format!(
                "testing quartet selection reached rank {} of target {target}",
                accepted.len()
            )));
        }
        QuartetSet::new(accepted, QuartetTag::Testing)
    }

    /// Leaf-label bipartitions induced by edges, each normalized to the side
    /// not containing the smallest label. Two trees on the same leaf set are
    /// isomorphic iff their split sets agree.
    pub fn splits(&self) -> BTreeSet<BTreeSet<String>> {
        let all = self.leaf_labels();
        let smallest = match all.first() {
            Some(s) => s.clone(),
            None => return BTreeSet::new(),
        };
        let mut out = BTreeSet::new();
        for (u, v) in self.edges() {
            // Leaves on v's side of edge (u, v).
            let mut side = BTreeSet::new();
            let mut queue = vec![(v, u)];
            while let Some((x, from)) = queue.pop() {
                if let Some(name) = &self.labels[x] {
                    side.insert(name.clone());
                }
                for &y in &self.adj[x] {
                    if y != from {
                        queue.push((y, x));
                    }
                }
            }
            if side.contains(&smallest) {
                side = all.iter().filter(|s| !side.contains(*s)).cloned().collect();
            }
            out.insert(side);
        }
        out
    }

    /// Topological isomorphism of leaf-labeled trees.
    pub fn topology_eq(&self, other: &Tree) -> bool {
        self.leaf_labels() == other.leaf_labels() && self.splits() == other.splits()
    }
}

// ---------------------------------------------------------------------------
// Newick I/O
// ---------------------------------------------------------------------------

struct NewickParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    // Growing arena; edges into a star of parsed children.
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<String>>,
}

impl<'a> NewickParser<'a> {
    fn err<T>(&self, message: &str) -> Result<T, TreeError> {
        Err(TreeError::Parse {
            position: self.pos,
            message: message.to_string(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn new_node(&mut self, label: Option<String>) -> usize {
        self.labels.push(label);
        self.labels.len() - 1
    }

    fn label_char(c: u8) -> bool {
        c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'-'
    }

    fn read_label(&mut self) -> String {
        let start = self.pos;
        while self.peek().map_or(false, Self::label_char) {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn skip_branch_length(&mut self) -> Result<(), TreeError> {
        if self.peek() == Some(b':') {
            self.pos += 1;
            let start = self.pos;
            while self
                .peek()
                .map_or(false, |c| c.is_ascii_digit() || matches!(c, b'.' | b'e' | b'E' | b'+' | b'-'))
            {
                self.pos += 1;
            }
            if self.pos == start {
                return self.err("expected branch length after ':'");
            }
        }
        Ok(())
    }

    /// Parse one subtree and return its node id.
    fn subtree(&mut self) -> Result<usize, TreeError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let node = self.new_node(None);
                loop {
                    let child = self.subtree()?;
                    self.edges.push((node, child));
                    self.skip_ws();
                    match self.peek() {
                        Some(b',') => {
                            self.pos += 1;
                        }
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        _ => return self.err("expected ',' or ')'"),
                    }
                }
                // Optional internal label, accepted and discarded.
                let _ = self.read_label();
                self.skip_branch_length()?;
                Ok(node)
            }
            Some(c) if Self::label_char(c) => {
                let label = self.read_label();
                self.skip_branch_length()?;
                Ok(self.new_node(Some(label)))
            }
            _ => self.err("expected '(' or a leaf label"),
        }
    }
}

/// Parse a Newick string into a tree, suppressing degree-2 nodes (including
/// an artificial root). Branch lengths are accepted and discarded.
pub fn parse_newick(text: &str) -> Result<Tree, TreeError> {
    let mut p = NewickParser {
        bytes: text.as_bytes(),
        pos: 0,
        edges: Vec::new(),
        labels: Vec::new(),
    };
    let root = p.subtree()?;
    let _ = root;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return p.err("expected ';'");
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return p.err("trailing input after ';'");
    }
    let NewickParser { edges, labels, .. } = p;
    build_suppressed(edges, labels)
}

/// Build a tree from raw parse output, iteratively removing unlabeled nodes
/// of degree 1 or 2 (the model treats them as marginalized).
fn build_suppressed(
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<String>>,
) -> Result<Tree, TreeError> {
    let n = labels.len();
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for (u, v) in edges {
        adj[u].insert(v);
        adj[v].insert(u);
    }
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for u in 0..n {
            if !alive[u] || labels[u].is_some() {
                continue;
            }
            match adj[u].len() {
                0 if n > 1 => {
                    alive[u] = false;
                    changed = true;
                }
                1 => {
                    let v = *adj[u].iter().next().unwrap();
                    adj[v].remove(&u);
                    adj[u].clear();
                    alive[u] = false;
                    changed = true;
                }
                2 => {
                    let mut it = adj[u].iter();
                    let a = *it.next().unwrap();
                    let b = *it.next().unwrap();
                    adj[a].remove(&u);
                    adj[b].remove(&u);
                    adj[a].insert(b);
                    adj[b].insert(a);
                    adj[u].clear();
                    alive[u] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    // Compact node ids.
    let mut remap = vec![usize::MAX; n];
    let mut new_labels = Vec::new();
    for u in 0..n {
        if alive[u] {
            remap[u] = new_labels.len();
            new_labels.push(labels[u].clone());
        }
    }
    let mut new_edges = Vec::new();
    for u in 0..n {
        if !alive[u] {
            continue;
        }
        for &v in &adj[u] {
            if u < v {
                new_edges.push((remap[u], remap[v]));
            }
        }
    }
    Tree::from_edges(new_labels.len(), &new_edges, new_labels)
}

/// Deterministic Newick serialization: rooted at the inner node adjacent to
/// the smallest leaf label, children ordered by the smallest leaf label in
/// their subtree. Round-trips through [`parse_newick`] up to isomorphism.
pub fn serialize_newick(t: &Tree) -> String {
    let leaves = t.leaves();
    if leaves.is_empty() {
        return ";".to_string();
    }
    if t.node_count() <= 2 {
        let names = t.leaf_labels();
        return if names.len() == 1 {
            format!("{};", names[0])
        } else {
            format!("({},{});", names[0], names[1])
        };
    }
    let first_leaf = leaves[0];
    let root = t.neighbors(first_leaf)[0];
    fn subtree(t: &Tree, u: NodeId, from: Option<NodeId>) -> (String, String) {
        if let Some(name) = t.label(u) {
            return (name.to_string(), name.to_string());
        }
        let mut children: Vec<(String, String)> = t
            .neighbors(u)
            .iter()
            .filter(|&&v| Some(v) != from)
            .map(|&v| subtree(t, v, Some(u)))
            .collect();
        children.sort_by(|a, b| a.1.cmp(&b.1));
        let min_label = children[0].1.clone();
        let body: Vec<String> = children.into_iter().map(|(s, _)| s).collect();
        (format!("({})", body.join(",")), min_label)
    }
    let (body, _) = subtree(t, root, None);
    format!("{body};")
}

// ---------------------------------------------------------------------------
// Tree generation
// ---------------------------------------------------------------------------

/// Internal growable representation for leaf-insertion constructions.
#[derive(Clone)]
struct Growing {
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<String>>,
}

impl Growing {
    fn tripod(labels: &[String]) -> Self {
        Growing {
            edges: vec![(0, 1), (0, 2), (0, 3)],
            labels: vec![
                None,
                Some(labels[0].clone()),
                Some(labels[1].clone()),
                Some(labels[2].clone()),
            ],
        }
    }

    /// Subdivide edge `e` and attach a new leaf there.
    fn insert_leaf(&mut self, e: usize, label: &str) {
        let (u, v) = self.edges[e];
        let w = self.labels.len();
        self.labels.push(None);
        let x = self.labels.len();
        self.labels.push(Some(label.to_string()));
        self.edges[e] = (u, w);
        self.edges.push((w, v));
        self.edges.push((w, x));
    }

    fn build(&self) -> Result<Tree, TreeError> {
        Tree::from_edges(self.labels.len(), &self.edges, self.labels.clone())
    }
}

pub const DEFAULT_ENUMERATION_CAP: usize = 10;

/// All `(2m-5)!!` leaf-labeled binary topologies on the given labels, in
/// deterministic order, by iterative leaf insertion into every edge.
pub fn enumerate_binary_trees(labels: &[String], cap: Option<usize>) -> Result<Vec<Tree>, TreeError> {
    let m = labels.len();
    if m < 3 {
        return Err(TreeError::TooFewLeaves { needed: 3, got: m });
    }
    let cap = cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    if m > cap {
        return Err(TreeError::EnumerationCap(m, cap));
    }
    let mut sorted: Vec<String> = labels.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != m {
        return Err(TreeError::DuplicateLabel("duplicate labels in input".into()));
    }
    let mut current = vec![Growing::tripod(&sorted)];
    for label in sorted.iter().skip(3) {
        let mut next = Vec::new();
        for g in &current {
            for e in 0..g.edges.len() {
                let mut h = g.clone();
                h.insert_leaf(e, label);
                next.push(h);
            }
        }
        current = next;
    }
    current.iter().map(Growing::build).collect()
}

/// A uniformly random binary topology on the labels, by leaf insertion at
/// random edges.
pub fn random_binary_tree(labels: &[String], rng: &mut Stream) -> Result<Tree, TreeError> {
    let m = labels.len();
    if m < 3 {
        return Err(TreeError::TooFewLeaves { needed: 3, got: m });
    }
    let mut sorted: Vec<String> = labels.to_vec();
    sorted.sort();
    let mut g = Growing::tripod(&sorted);
    for label in sorted.iter().skip(3) {
        let e = rng.gen_range(0..g.edges.len());
        g.insert_leaf(e, label);
    }
    g.build()
}
