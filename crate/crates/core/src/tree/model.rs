use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node as stored in a tree file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    pub parent: Option<usize>,
    /// Probability of reaching this node from its parent; omitted at the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub prices: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reset: bool,
    /// Prices right after the reset, in the new dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_prices: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub maturity: usize,
    pub payoff: BTreeMap<usize, f64>,
}

/// A tree file: nodes, named withdrawal streams and named claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub streams: BTreeMap<String, BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub claims: BTreeMap<String, ClaimSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Identifier used in the tree file.
    pub id: usize,
    pub parent: Option<usize>,
    pub prob: f64,
    pub depth: usize,
    pub prices: Vec<f64>,
    pub post: Option<Vec<f64>>,
    pub children: Vec<usize>,
}

impl Node {
    /// Prices carried into the next step: post-reset prices if any.
    pub fn effective_prices(&self) -> &[f64] {
        self.post.as_deref().unwrap_or(&self.prices)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A finite probability tree. Nodes are stored breadth first, so index 0 is
/// the root and parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    nodes: Vec<Node>,
    by_depth: Vec<Vec<usize>>,
}

/// Values indexed by internal node position.
pub type NodeValues = Vec<f64>;

impl EventTree {
    pub fn from_specs(specs: &[NodeSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Structure("a tree needs at least one node".into()));
        }
        let mut pos: HashMap<usize, usize> = HashMap::new();
        for (k, s) in specs.iter().enumerate() {
            if pos.insert(s.id, k).is_some() {
                return Err(Error::Structure(format!("duplicate node id {}", s.id)));
            }
        }
        let roots: Vec<usize> = (0..specs.len())
            .filter(|&k| specs[k].parent.is_none())
            .collect();
        if roots.len() != 1 {
            return Err(Error::Structure(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        for (k, s) in specs.iter().enumerate() {
            if let Some(p) = s.parent {
                let &pk = pos.get(&p).ok_or_else(|| {
                    Error::Structure(format!("node {} has unknown parent {p}", s.id))
                })?;
                kids[pk].push(k);
            }
        }
        let mut order = Vec::with_capacity(specs.len());
        let mut depth = vec![0usize; specs.len()];
        let mut queue = VecDeque::from([roots[0]]);
        while let Some(k) = queue.pop_front() {
            order.push(k);
            for &c in &kids[k] {
                depth[c] = depth[k] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != specs.len() {
            return Err(Error::Structure(
                "some nodes are not reachable from the root".into(),
            ));
        }
        let mut internal = vec![0usize; specs.len()];
        for (i, &k) in order.iter().enumerate() {
            internal[k] = i;
        }
        let mut nodes = Vec::with_capacity(specs.len());
        for &k in &order {
            let s = &specs[k];
            if s.prices.is_empty() {
                return Err(Error::Structure(format!("node {} has no prices", s.id)));
            }
            if let Some(d) = s.dim {
                if d != s.prices.len() {
                    return Err(Error::Dimension {
                        context: format!("node {} prices", s.id),
                        expected: d,
                        found: s.prices.len(),
                    });
                }
            }
            if s.prices.iter().any(|x| !x.is_finite()) {
                return Err(Error::Structure(format!(
                    "node {} has non-finite prices",
                    s.id
                )));
            }
            let prob = match (s.parent, s.prob) {
                (None, None) => 1.0,
                (None, Some(p)) if (p - 1.0).abs() <= 1e-12 => 1.0,
                (None, Some(p)) => {
                    return Err(Error::Structure(format!(
                        "root probability must be 1, got {p}"
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::Structure(format!("node {} is missing prob", s.id)))
                }
                (Some(_), Some(p)) if p > 0.0 && p <= 1.0 => p,
                (Some(_), Some(p)) => {
                    return Err(Error::Structure(format!(
                        "node {}: probability {p} not in (0, 1]",
                        s.id
                    )))
                }
            };
            let post = match (s.reset, &s.post_prices) {
                (false, None) => None,
                (true, Some(v)) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => {
                    Some(v.clone())
                }
                (true, _) => {
                    return Err(Error::Structure(format!(
                        "node {}: a reset needs nonempty post_prices",
                        s.id
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::Structure(format!(
                        "node {}: post_prices without reset",
                        s.id
                    )))
                }
            };
            if post.is_some() && s.parent.is_none() {
                return Err(Error::Structure("the root cannot reset".into()));
            }
            let mut children: Vec<usize> = kids[k].iter().map(|&c| internal[c]).collect();
            children.sort_unstable();
            nodes.push(Node {
                id: s.id,
                parent: s.parent.map(|p| internal[pos[&p]]),
                prob,
                depth: depth[k],
                prices: s.prices.clone(),
                post,
                children,
            });
        }
        let horizon = nodes.iter().map(|n| n.depth).max().unwrap();
        let mut by_depth = vec![Vec::new(); horizon + 1];
        for (i, n) in nodes.iter().enumerate() {
            by_depth[n.depth].push(i);
            if n.is_leaf() && n.depth != horizon {
                return Err(Error::Structure(format!(
                    "leaf {} at depth {} but the horizon is {horizon}; all leaves must share the last date",
                    n.id, n.depth
                )));
            }
            if !n.is_leaf() {
                let total: f64 = n.children.iter().map(|&c| nodes[c].prob).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Structure(format!(
                        "child probabilities of node {} sum to {total}",
                        n.id
                    )));
                }
                let dim = n.effective_prices().len();
                for &c in &n.children {
                    if nodes[c].prices.len() != dim {
                        return Err(Error::Dimension {
                            context: format!("prices of node {} (child of {})", nodes[c].id, n.id),
                            expected: dim,
                            found: nodes[c].prices.len(),
                        });
                    }
                }
            }
        }
        Ok(EventTree { nodes, by_depth })
    }

    pub fn from_file(file: &TreeFile) -> Result<Self> {
        EventTree::from_specs(&file.nodes)
    }

    pub fn to_specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                parent: n.parent.map(|p| self.nodes[p].id),
                prob: n.parent.map(|_| n.prob),
                dim: None,
                prices: n.prices.clone(),
                reset: n.post.is_some(),
                post_prices: n.post.clone(),
            })
            .collect()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.by_depth.len() - 1
    }

    pub fn at_depth(&self, d: usize) -> &[usize] {
        &self.by_depth[d]
    }

    /// Internal position of a file id.
    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// `ΔS(child) = S(child) − S(parent+)`.
    pub fn delta_s(&self, child: usize) -> Vec<f64> {
        let parent = self.nodes[child].parent.expect("root has no increment");
        self.nodes[child]
            .prices
            .iter()
            .zip(self.nodes[parent].effective_prices())
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Unconditional probability of each node.
    pub fn path_probabilities(&self) -> NodeValues {
        let mut out = vec![1.0; self.len()];
        for i in 1..self.len() {
            out[i] = out[self.nodes[i].parent.unwrap()] * self.nodes[i].prob;
        }
        out
    }

    /// Epoch of the step that ends at each node (`1` for the root).
    pub fn epoch_of_step_into(&self) -> Vec<usize> {
        let mut out = vec![1; self.len()];
        for i in 1..self.len() {
            let p = self.nodes[i].parent.unwrap();
            out[i] = out[p] + usize::from(self.nodes[p].post.is_some());
        }
        out
    }

    /// Nodes from the root to `i`.
    pub fn path_to(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut k = i;
        while let Some(p) = self.nodes[k].parent {
            path.push(p);
            k = p;
        }
        path.reverse();
        path
    }

    /// `K(node) = Σ ΔK` along the path from the root, inclusive.
    pub fn cumulate(&self, dk: &[f64]) -> NodeValues {
        let mut out = dk.to_vec();
        for i in 1..self.len() {
            out[i] += out[self.nodes[i].parent.unwrap()];
        }
        out
    }
}

/// Nonnegative withdrawals `ΔK(node)`, paid at the node.
#[derive(Debug, Clone, PartialEq)]
pub struct WithdrawalStream {
    pub dk: NodeValues,
}

impl WithdrawalStream {
    pub fn zero(tree: &EventTree) -> Self {
        WithdrawalStream {
            dk: vec![0.0; tree.len()],
        }
    }

    pub fn new(tree: &EventTree, dk: NodeValues) -> Result<Self> {
        if dk.len() != tree.len() {
            return Err(Error::Dimension {
                context: "withdrawal stream".into(),
                expected: tree.len(),
                found: dk.len(),
            });
        }
        if let Some(i) = dk.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Input(format!(
                "withdrawal at node {} must be finite and >= 0, got {}",
                tree.node(i).id,
                dk[i]
            )));
        }
        Ok(WithdrawalStream { dk })
    }

    /// From a file map `id -> ΔK`; missing nodes withdraw nothing.
    pub fn from_map(tree: &EventTree, map: &BTreeMap<usize, f64>) -> Result<Self> {
        let mut dk = vec![0.0; tree.len()];
        for (&id, &v) in map {
            let i = tree
                .index_of(id)
                .ok_or_else(|| Error::Input(format!("stream refers to unknown node {id}")))?;
            dk[i] = v;
        }
        WithdrawalStream::new(tree, dk)
    }
}

/// European claim paying `ξ(node) >= 0` at every node of depth `maturity`.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub maturity: usize,
    pub payoff: NodeValues,
}

impl Claim {
    pub fn from_fn(tree: &EventTree, maturity: usize, f: impl Fn(&Node) -> f64) -> Result<Self> {
        let payoff = (0..tree.len())
            .map(|i| {
                if tree.node(i).depth == maturity {
                    f(tree.node(i))
                } else {
                    0.0
                }
            })
            .collect();
        Claim::new(tree, maturity, payoff)
    }

    pub fn new(tree: &EventTree, maturity: usize, payoff: NodeValues) -> Result<Self> {
        if maturity > tree.horizon() {
            return Err(Error::Input(format!(
                "maturity {maturity} beyond the horizon {}",
                tree.horizon()
            )));
        }
        if payoff.len() != tree.len() {
            return Err(Error::Dimension {
                context: "claim payoff".into(),
                expected: tree.len(),
                found: payoff.len(),
            });
        }
        for (i, &v) in payoff.iter().enumerate() {
            let at = tree.node(i).depth == maturity;
            if !(v >= 0.0) || !v.is_finite() || (!at && v != 0.0) {
                return Err(Error::Input(format!(
                    "claim payoff at node {} must be finite, >= 0 and only at depth {maturity}",
                    tree.node(i).id
                )));
            }
        }
        Ok(Claim { maturity, payoff })
    }

    pub fn from_spec(tree: &EventTree, spec: &ClaimSpec) -> Result<Self> {
        let mut payoff = vec![0.0; tree.len()];
        for (&id, &v) in &spec.payoff {
            let i = tree
                .index_of(id)
                .ok_or_else(|| Error::Input(format!("claim refers to unknown node {id}")))?;
            payoff[i] = v;
        }
        for i in tree.at_depth(spec.maturity.min(tree.horizon())) {
            if !spec.payoff.contains_key(&tree.node(*i).id) {
                return Err(Error::Input(format!(
                    "claim has no payoff for node {} at its maturity",
                    tree.node(*i).id
                )));
            }
        }
        Claim::new(tree, spec.maturity, payoff)
    }

    pub fn stream(&self) -> WithdrawalStream {
        WithdrawalStream {
            dk: self.payoff.clone(),
        }
    }
}
