//! Skeleton trees: rooted binary trees whose root has a single child, their
//! monotone numberings, and the exact combinatorial weights `c_{k,n}`.
//!
//! A tree is encoded by the subtree hanging below the root's child: a leaf
//! is `*` and a splitting vertex with ordered children is `(left,right)`.
//! Mirror images are distinct trees.

use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest `k` accepted by [`enumerate_trees`].
pub const MAX_SPLITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Shape {
    Leaf,
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn splits(&self) -> usize {
        match self {
            Shape::Leaf => 0,
            Shape::Split(l, r) => 1 + l.splits() + r.splits(),
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Shape::Leaf => out.push('*'),
            Shape::Split(l, r) => {
                out.push('(');
                l.write(out);
                out.push(',');
                r.write(out);
                out.push(')');
            }
        }
    }
}

fn parse_shape(bytes: &[u8], pos: &mut usize) -> Result<Shape> {
    match bytes.get(*pos) {
        Some(b'*') => {
            *pos += 1;
            Ok(Shape::Leaf)
        }
        Some(b'(') => {
            *pos += 1;
            let left = parse_shape(bytes, pos)?;
            if bytes.get(*pos) != Some(&b',') {
                return Err(invalid(format!("expected ',' at offset {pos}")));
            }
            *pos += 1;
            let right = parse_shape(bytes, pos)?;
            if bytes.get(*pos) != Some(&b')') {
                return Err(invalid(format!("expected ')' at offset {pos}")));
            }
            *pos += 1;
            Ok(Shape::Split(Box::new(left), Box::new(right)))
        }
        _ => Err(invalid(format!("unexpected input at offset {pos}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Children {
    None,
    One(usize),
    Two(usize, usize),
}

/// A tree in `T_k`, stored as an arena with vertices in preorder: the root
/// is vertex `0` and its only child is vertex `1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTree {
    shape: Shape,
    parent: Vec<Option<usize>>,
    children: Vec<Children>,
    splits: Vec<usize>,
    leaves: Vec<usize>,
}

impl SkeletonTree {
    pub fn from_shape(shape: Shape) -> Self {
        let mut tree = SkeletonTree {
            shape: Shape::Leaf,
            parent: vec![None],
            children: vec![Children::One(1)],
            splits: Vec::new(),
            leaves: Vec::new(),
        };
        tree.push_subtree(&shape, 0);
        tree.shape = shape;
        tree
    }

    fn push_subtree(&mut self, shape: &Shape, parent: usize) -> usize {
        let id = self.parent.len();
        self.parent.push(Some(parent));
        self.children.push(Children::None);
        match shape {
            Shape::Leaf => self.leaves.push(id),
            Shape::Split(l, r) => {
                self.splits.push(id);
                let left = self.push_subtree(l, id);
                let right = self.push_subtree(r, id);
                self.children[id] = Children::Two(left, right);
            }
        }
        id
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Number of splitting vertices.
    pub fn k(&self) -> usize {
        self.splits.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> Children {
        self.children[v]
    }

    /// Splitting vertices in preorder.
    pub fn splits(&self) -> &[usize] {
        &self.splits
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        matches!(self.children[v], Children::None)
    }

    /// Directed edges `(parent, child)` in preorder of the child.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.n_vertices()).map(move |v| (self.parent[v].unwrap(), v))
    }

    pub fn encoding(&self) -> String {
        let mut out = String::new();
        self.shape.write(&mut out);
        out
    }
}

impl fmt::Display for SkeletonTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encoding())
    }
}

impl FromStr for SkeletonTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.trim().as_bytes();
        let mut pos = 0;
        let shape = parse_shape(bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(invalid(format!("trailing input after offset {pos} in '{s}'")));
        }
        Ok(SkeletonTree::from_shape(shape))
    }
}

fn shapes(k: usize, memo: &mut Vec<Option<Vec<Shape>>>) -> Vec<Shape> {
    if let Some(Some(done)) = memo.get(k) {
        return done.clone();
    }
    let result = if k == 0 {
        vec![Shape::Leaf]
    } else {
        let mut out = Vec::new();
        for left_k in 0..k {
            let lefts = shapes(left_k, memo);
            let rights = shapes(k - 1 - left_k, memo);
            for l in &lefts {
                for r in &rights {
                    out.push(Shape::Split(Box::new(l.clone()), Box::new(r.clone())));
                }
            }
        }
        out
    };
    memo[k] = Some(result.clone());
    result
}

/// All trees with `k` splitting vertices, sorted by encoding.
pub fn enumerate_trees(k: usize) -> Result<Vec<SkeletonTree>> {
    if k > MAX_SPLITS {
        return Err(Error::Capacity {
            what: "skeleton tree splits",
            limit: MAX_SPLITS,
            requested: k,
        });
    }
    let mut memo = vec![None; k + 1];
    let mut trees: Vec<SkeletonTree> = shapes(k, &mut memo).into_iter().map(SkeletonTree::from_shape).collect();
    trees.sort_by_cached_key(|t| t.encoding());
    Ok(trees)
}

/// A monotone numbering: labels `0..=k` on the root and splitting vertices,
/// increasing along edges, with every leaf labelled `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Numbering {
    labels: Vec<usize>,
}

impl Numbering {
    /// Label of vertex `v` (leaves carry `k + 1`).
    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Labels of the splitting vertices in preorder; the compact external form.
    pub fn split_labels(&self, tree: &SkeletonTree) -> Vec<usize> {
        tree.splits().iter().map(|&s| self.labels[s]).collect()
    }

    pub fn from_split_labels(tree: &SkeletonTree, split_labels: &[usize]) -> Result<Self> {
        if split_labels.len() != tree.k() {
            return Err(invalid(format!(
                "tree {tree} has {} splits, got {} labels",
                tree.k(),
                split_labels.len()
            )));
        }
        let k = tree.k();
        let mut labels = vec![k + 1; tree.n_vertices()];
        labels[0] = 0;
        for (&s, &l) in tree.splits().iter().zip(split_labels) {
            labels[s] = l;
        }
        let numbering = Numbering { labels };
        if !numbering.is_valid_for(tree) {
            return Err(invalid(format!("labels {split_labels:?} are not a monotone numbering of {tree}")));
        }
        Ok(numbering)
    }

    pub fn is_valid_for(&self, tree: &SkeletonTree) -> bool {
        let k = tree.k();
        if self.labels.len() != tree.n_vertices() || self.labels[0] != 0 {
            return false;
        }
        let mut seen = vec![false; k + 1];
        seen[0] = true;
        for &s in tree.splits() {
            let l = self.labels[s];
            if l == 0 || l > k || std::mem::replace(&mut seen[l], true) {
                return false;
            }
        }
        tree.leaves().iter().all(|&l| self.labels[l] == k + 1)
            && tree.edges().all(|(u, v)| self.labels[u] < self.labels[v])
    }

    /// Vertex ids of the root and splitting vertices, ordered by label.
    pub fn by_label(&self, tree: &SkeletonTree) -> Vec<usize> {
        let mut order = vec![0; tree.k() + 1];
        for &s in tree.splits() {
            order[self.labels[s]] = s;
        }
        order
    }
}

/// All monotone numberings of `tree`, by backtracking over the splitting
/// vertices whose parent is already labelled.
pub fn enumerate_numberings(tree: &SkeletonTree) -> Vec<Numbering> {
    let k = tree.k();
    let mut labels = vec![k + 1; tree.n_vertices()];
    labels[0] = 0;
    let mut out = Vec::new();
    let mut frontier: Vec<usize> = match tree.children(0) {
        Children::One(c) if !tree.is_leaf(c) => vec![c],
        _ => Vec::new(),
    };
    extend(tree, 1, &mut labels, &mut frontier, &mut out);
    out
}

fn extend(tree: &SkeletonTree, next: usize, labels: &mut [usize], frontier: &mut Vec<usize>, out: &mut Vec<Numbering>) {
    if frontier.is_empty() {
        out.push(Numbering { labels: labels.to_vec() });
        return;
    }
    for i in 0..frontier.len() {
        let v = frontier[i];
        labels[v] = next;
        let mut rest = frontier.clone();
        rest.remove(i);
        if let Children::Two(a, b) = tree.children(v) {
            rest.extend([a, b].into_iter().filter(|&c| !tree.is_leaf(c)));
        }
        rest.sort_unstable();
        extend(tree, next + 1, labels, &mut rest, out);
        labels[v] = tree.k() + 1;
    }
}

fn binomial(n: usize, k: usize) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Memo of `c_{k,n}` rows, indexed `[n][k]` with `n >= 1`.
fn coeff_table() -> &'static Mutex<Vec<Vec<BigUint>>> {
    static TABLE: OnceLock<Mutex<Vec<Vec<BigUint>>>> = OnceLock::new();
    TABLE.get_or_init(|| Mutex::new(vec![Vec::new()]))
}

/// The exact weight `c_{k,n}`, `0 <= k < n`, from
/// `c_{0,n} = 1`, `c_{k,n} = sum_{i=1}^{n-k} binom(n, i) c_{k-1, n-i}`.
pub fn c_coeff(k: usize, n: usize) -> Result<BigUint> {
    if n == 0 || k >= n {
        return Err(Error::Domain(format!("c_{{k,n}} needs 0 <= k < n, got k={k}, n={n}")));
    }
    let mut table = coeff_table().lock().unwrap_or_else(|e| e.into_inner());
    while table.len() <= n {
        let m = table.len();
        let mut row = vec![BigUint::one()];
        for kk in 1..m {
            let mut sum = BigUint::zero();
            for i in 1..=(m - kk) {
                sum += binomial(m, i) * &table[m - i][kk - 1];
            }
            row.push(sum);
        }
        table.push(row);
    }
    Ok(table[n][k].clone())
}

/// `c_{k,n}` as a float, for weighting estimates.
pub fn c_coeff_f64(k: usize, n: usize) -> Result<f64> {
    use num_traits::ToPrimitive;
    Ok(c_coeff(k, n)?.to_f64().unwrap_or(f64::INFINITY))
}

/// Check `sum_{l=k1+1}^{n-(k-k1)} binom(n,l) c_{k1,l} c_{k-k1-1,n-l} = c_{k,n}`
/// for every `k1 in 0..k`, in exact arithmetic.
pub fn convolution_identity_check(k: usize, n: usize) -> Result<bool> {
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("identity needs 1 <= k < n, got k={k}, n={n}")));
    }
    let target = c_coeff(k, n)?;
    for k1 in 0..k {
        let mut sum = BigUint::zero();
        for l in (k1 + 1)..=(n - (k - k1)) {
            sum += binomial(n, l) * c_coeff(k1, l)? * c_coeff(k - k1 - 1, n - l)?;
        }
        if sum != target {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Serialisable (tree, numbering) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedTree {
    pub k: usize,
    pub tree: String,
    /// Labels of the splitting vertices in preorder.
    pub numbering: Vec<usize>,
}

impl NumberedTree {
    pub fn new(tree: &SkeletonTree, numbering: &Numbering) -> Self {
        NumberedTree {
            k: tree.k(),
            tree: tree.encoding(),
            numbering: numbering.split_labels(tree),
        }
    }

    pub fn resolve(&self) -> Result<(SkeletonTree, Numbering)> {
        let tree: SkeletonTree = self.tree.parse()?;
        let numbering = Numbering::from_split_labels(&tree, &self.numbering)?;
        Ok((tree, numbering))
    }
}
