//! Index algebra for a complete binary tree of fixed depth.
//!
//! Nodes are numbered breadth-first starting at 1: node `t` has children
//! `2t` (left) and `2t + 1` (right), and the leaves of a depth-`D` tree are
//! `2^D ..= 2^(D+1) - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based node identifier.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct TreeTopology {
    depth: u32,
}

impl TreeTopology {
    pub fn new(depth: u32) -> Result<Self> {
        if depth < 1 {
            return Err(Error::InvalidArgument(format!(
                "tree depth must be at least 1, got {depth}"
            )));
        }
        if depth > 20 {
            return Err(Error::InvalidArgument(format!(
                "tree depth {depth} is unreasonably large"
            )));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Total number of nodes, `2^(D+1) - 1`.
    pub fn node_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn nodes(&self) -> std::ops::RangeInclusive<NodeId> {
        1..=self.node_count()
    }

    pub fn branch_nodes(&self) -> std::ops::RangeInclusive<NodeId> {
        1..=(1usize << self.depth) - 1
    }

    pub fn leaf_nodes(&self) -> std::ops::RangeInclusive<NodeId> {
        (1usize << self.depth)..=self.node_count()
    }

    pub fn num_branch_nodes(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn num_leaves(&self) -> usize {
        1usize << self.depth
    }

    /// Non-root nodes reached through a left branch (the even ids).
    pub fn left_nodes(&self) -> impl Iterator<Item = NodeId> {
        (2..=self.node_count()).step_by(2)
    }

    /// Non-root nodes reached through a right branch (the odd ids above 1).
    pub fn right_nodes(&self) -> impl Iterator<Item = NodeId> {
        (3..=self.node_count()).step_by(2)
    }

    pub fn is_leaf(&self, t: NodeId) -> bool {
        t >= (1usize << self.depth) && t <= self.node_count()
    }

    pub fn is_branch(&self, t: NodeId) -> bool {
        t >= 1 && t < (1usize << self.depth)
    }

    pub fn contains(&self, t: NodeId) -> bool {
        t >= 1 && t <= self.node_count()
    }

    /// Parent of a non-root node.
    pub fn parent(&self, t: NodeId) -> Option<NodeId> {
        (t >= 2 && t <= self.node_count()).then_some(t / 2)
    }

    pub fn left_child(&self, t: NodeId) -> Option<NodeId> {
        self.is_branch(t).then_some(2 * t)
    }

    pub fn right_child(&self, t: NodeId) -> Option<NodeId> {
        self.is_branch(t).then_some(2 * t + 1)
    }

    /// The other child of `t`'s parent.
    pub fn sibling(&self, t: NodeId) -> Option<NodeId> {
        self.parent(t).map(|_| t ^ 1)
    }

    /// Level of a node; the root is level 0.
    pub fn level(&self, t: NodeId) -> u32 {
        debug_assert!(t >= 1);
        usize::BITS - 1 - t.leading_zeros()
    }

    /// Nodes at level `s`, in increasing id order.
    pub fn level_nodes(&self, s: u32) -> std::ops::RangeInclusive<NodeId> {
        assert!(s <= self.depth, "level {s} beyond depth {}", self.depth);
        (1usize << s)..=(1usize << (s + 1)) - 1
    }

    /// All levels `u_0, ..., u_D`.
    pub fn levels(&self) -> Vec<Vec<NodeId>> {
        (0..=self.depth)
            .map(|s| self.level_nodes(s).collect())
            .collect()
    }

    /// Node at level `s` on the path from the root to `t`.
    pub fn ancestor_at_level(&self, t: NodeId, s: u32) -> Result<NodeId> {
        if !self.contains(t) {
            return Err(Error::InvalidArgument(format!("node {t} is not in the tree")));
        }
        let lt = self.level(t);
        if s > lt {
            return Err(Error::InvalidArgument(format!(
                "level {s} is below node {t} (which sits at level {lt})"
            )));
        }
        Ok(t >> (lt - s))
    }

    /// Nodes on the root-to-`t` path, root first.
    pub fn path_to(&self, t: NodeId) -> Vec<NodeId> {
        let mut path: Vec<NodeId> = std::iter::successors(Some(t), |&u| (u > 1).then_some(u / 2)).collect();
        path.reverse();
        path
    }

    /// Leaves in the subtree rooted at `t`.
    pub fn leaves_under(&self, t: NodeId) -> std::ops::RangeInclusive<NodeId> {
        let shift = self.depth - self.level(t);
        (t << shift)..=((t + 1) << shift) - 1
    }
}

impl TryFrom<u32> for TreeTopology {
    type Error = Error;

    fn try_from(depth: u32) -> Result<Self> {
        TreeTopology::new(depth)
    }
}

impl From<TreeTopology> for u32 {
    fn from(t: TreeTopology) -> u32 {
        t.depth
    }
}
