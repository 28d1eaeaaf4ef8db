//! Rooted binary phylogenies with node ages measured before the present.
//!
//! A [`Tree`] is an immutable arena of [`TreeNode`]s. Construction goes
//! through the nested [`Clade`] builder, which is also what the Newick parser,
//! the simulator and the pruning routine produce. The root may carry one child
//! (a stem from the origin of the process) or two; every other internal node is
//! a bifurcation.

mod newick;
mod simulate;

use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub use newick::{parse_newick, write_newick, NewickError};
pub use simulate::{simulate_crbd, simulate_reconstructed};

/// Index of a node inside its [`Tree`].
pub type NodeId = usize;

/// Leaves whose age is at most this are extant.
pub const EXTANT_AGE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node at age {age} has {children} children; expected 0 or 2")]
    NotBinary { age: f64, children: usize },
    #[error("root has {0} children; expected 1 or 2")]
    BadRoot(usize),
    #[error("child age {child} is not below parent age {parent}")]
    NonPositiveBranch { parent: f64, child: f64 },
    #[error("negative or non-finite age {0}")]
    BadAge(f64),
    #[error("tree is fully extinct")]
    FullyExtinct,
    #[error("invalid tip state {state:?} for label {label:?}; expected 0 or 1")]
    BadTipState { label: String, state: String },
    #[error("failed to read tip states: {0}")]
    TipStateIo(String),
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
    #[error("no simulated tree had {leaves} extant leaves after {tries} attempts")]
    LeafCountNotReached { leaves: usize, tries: usize },
}

/// Nested tree builder.
#[derive(Clone, Debug, PartialEq)]
pub struct Clade {
    pub age: f64,
    pub label: Option<String>,
    pub tip_state: Option<u8>,
    pub children: Vec<Clade>,
}

impl Clade {
    pub fn leaf(age: f64, label: Option<String>) -> Self {
        Clade {
            age,
            label,
            tip_state: None,
            children: Vec::new(),
        }
    }

    pub fn node(age: f64, children: Vec<Clade>) -> Self {
        Clade {
            age,
            label: None,
            tip_state: None,
            children,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    /// Time before present.
    pub age: f64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub label: Option<String>,
    pub tip_state: Option<u8>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Immutable rooted phylogeny.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: NodeId,
    preorder: Vec<NodeId>,
}

/// Summary counts of a tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeStats {
    /// Speciation events, excluding the root.
    pub speciations: usize,
    /// Extant leaves.
    pub extant: usize,
    /// Extinct leaves.
    pub extinctions: usize,
    /// Sum of all branch lengths.
    pub length: f64,
    /// Number of branches (non-root nodes).
    pub branches: usize,
}

impl Tree {
    /// Builds a tree from a nested clade, checking structure and ages.
    pub fn from_clade(root: &Clade) -> Result<Tree, TreeError> {
        if !(1..=2).contains(&root.children.len()) {
            return Err(TreeError::BadRoot(root.children.len()));
        }
        let mut tree = Tree {
            nodes: Vec::new(),
            root: 0,
            preorder: Vec::new(),
        };
        tree.push_clade(root, None)?;
        Ok(tree)
    }

    fn push_clade(&mut self, clade: &Clade, parent: Option<NodeId>) -> Result<NodeId, TreeError> {
        if !clade.age.is_finite() || clade.age < 0.0 {
            return Err(TreeError::BadAge(clade.age));
        }
        if parent.is_some() && !matches!(clade.children.len(), 0 | 2) {
            return Err(TreeError::NotBinary {
                age: clade.age,
                children: clade.children.len(),
            });
        }
        let id = self.nodes.len();
        let age = if clade.children.is_empty() && clade.age <= EXTANT_AGE {
            0.0
        } else {
            clade.age
        };
        self.nodes.push(TreeNode {
            age,
            parent,
            children: Vec::with_capacity(clade.children.len()),
            label: clade.label.clone(),
            tip_state: clade.tip_state,
        });
        if parent.is_some() {
            self.preorder.push(id);
        }
        for child in &clade.children {
            if child.age >= clade.age {
                return Err(TreeError::NonPositiveBranch {
                    parent: clade.age,
                    child: child.age,
                });
            }
            let cid = self.push_clade(child, Some(id))?;
            self.nodes[id].children.push(cid);
        }
        Ok(id)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-root nodes in depth-first pre-order, first child first. This is
    /// the checkpoint order of the augmentation programs.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    pub fn age(&self, id: NodeId) -> f64 {
        self.nodes[id].age
    }

    pub fn root_age(&self) -> f64 {
        self.nodes[self.root].age
    }

    /// Length of the branch above `id`; zero for the root.
    pub fn branch_length(&self, id: NodeId) -> f64 {
        match self.nodes[id].parent {
            Some(p) => self.nodes[p].age - self.nodes[id].age,
            None => 0.0,
        }
    }

    pub fn is_extant(&self, id: NodeId) -> bool {
        let n = &self.nodes[id];
        n.is_leaf() && n.age <= EXTANT_AGE
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// Nested copy of the subtree rooted at `id`.
    pub fn to_clade(&self, id: NodeId) -> Clade {
        let n = &self.nodes[id];
        Clade {
            age: n.age,
            label: n.label.clone(),
            tip_state: n.tip_state,
            children: n.children.iter().map(|&c| self.to_clade(c)).collect(),
        }
    }

    pub fn stats(&self) -> TreeStats {
        let mut s = TreeStats {
            speciations: 0,
            extant: 0,
            extinctions: 0,
            length: 0.0,
            branches: self.preorder.len(),
        };
        for &id in &self.preorder {
            s.length += self.branch_length(id);
            if !self.nodes[id].is_leaf() {
                s.speciations += 1;
            }
        }
        for id in self.leaves() {
            if self.is_extant(id) {
                s.extant += 1;
            } else {
                s.extinctions += 1;
            }
        }
        s
    }

    /// Number of bifurcating nodes, the root included when it has two
    /// children. Each one doubles the count of orderings of the tree.
    pub fn bifurcations(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.len() == 2).count()
    }

    /// Removes every subtree whose leaves are all extinct and suppresses the
    /// unary nodes this leaves behind. Node ages are kept; the root is kept
    /// even when only one of its children survives.
    pub fn prune(&self) -> Result<Tree, TreeError> {
        let kept: Vec<Clade> = self.nodes[self.root]
            .children
            .iter()
            .filter_map(|&c| self.prune_below(c))
            .collect();
        if kept.is_empty() {
            return Err(TreeError::FullyExtinct);
        }
        let n = &self.nodes[self.root];
        Tree::from_clade(&Clade {
            age: n.age,
            label: n.label.clone(),
            tip_state: n.tip_state,
            children: kept,
        })
    }

    fn prune_below(&self, id: NodeId) -> Option<Clade> {
        let n = &self.nodes[id];
        if n.is_leaf() {
            return self.is_extant(id).then(|| self.to_clade(id));
        }
        let mut kept: Vec<Clade> = n
            .children
            .iter()
            .filter_map(|&c| self.prune_below(c))
            .collect();
        match kept.len() {
            0 => None,
            1 => kept.pop(),
            _ => Some(Clade {
                age: n.age,
                label: n.label.clone(),
                tip_state: n.tip_state,
                children: kept,
            }),
        }
    }

    /// Copy of the tree with tip states joined on leaf labels. Leaves whose
    /// label is missing from `states` get an unknown state.
    pub fn with_tip_states(&self, states: &HashMap<String, u8>) -> Tree {
        let mut t = self.clone();
        for node in t.nodes.iter_mut().filter(|n| n.is_leaf()) {
            node.tip_state = node.label.as_ref().and_then(|l| states.get(l).copied());
        }
        t
    }

    /// Log-likelihood of this tree as a complete CRBD phylogeny:
    /// `log(2^B / C!) + S log λ + X log μ - (λ + μ) L`, with `B` the number of
    /// bifurcations (`S + 1` for a tree rooted at a speciation).
    pub fn crbd_complete_loglik(&self, lambda: f64, mu: f64) -> f64 {
        crbd_complete_loglik(self, lambda, mu)
    }
}

/// See [`Tree::crbd_complete_loglik`].
pub fn crbd_complete_loglik(tree: &Tree, lambda: f64, mu: f64) -> f64 {
    let s = tree.stats();
    let orderings =
        tree.bifurcations() as f64 * std::f64::consts::LN_2 - ln_gamma(s.extant as f64 + 1.0);
    orderings + xlogy(s.speciations, lambda) + xlogy(s.extinctions, mu) - (lambda + mu) * s.length
}

/// `n log(x)` with the convention `0 log 0 = 0`.
pub(crate) fn xlogy(n: usize, x: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * x.ln()
    }
}

#[derive(Deserialize)]
struct TipStateRow {
    label: String,
    state: String,
}

/// Reads a `label,state` CSV (with header) into a label to state table.
pub fn read_tip_states<R: Read>(reader: R) -> Result<HashMap<String, u8>, TreeError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = HashMap::new();
    for row in rdr.deserialize::<TipStateRow>() {
        let row = row.map_err(|e| TreeError::TipStateIo(e.to_string()))?;
        let state = match row.state.as_str() {
            "0" => 0,
            "1" => 1,
            _ => {
                return Err(TreeError::BadTipState {
                    label: row.label,
                    state: row.state,
                })
            }
        };
        out.insert(row.label, state);
    }
    Ok(out)
}
