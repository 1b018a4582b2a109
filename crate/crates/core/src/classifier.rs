//! Deployable trees: extraction from a solver valuation, prediction and a
//! versioned JSON document format shared with the CART baseline.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bnb::{SolveResult, SolveStatus};
use crate::dataset::{ClassId, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::formulation::{decode, majority, score, CostConfig, MiqpModel, Plane};
use crate::topology::{NodeId, TreeTopology};

pub const FORMAT_NAME: &str = "moctsvm-tree";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Moctsvm,
    Cart,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Moctsvm => "moctsvm",
            Method::Cart => "cart",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub method: Method,
    #[serde(default)]
    pub costs: Option<CostConfig>,
    #[serde(default)]
    pub status: Option<SolveStatus>,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub gap: Option<f64>,
}

/// A trained tree over the complete topology of its depth.
///
/// Branch node `t` (1-based) owns `split_flags[t - 1]` and
/// `hyperplanes[t - 1]`; leaf `t` owns `leaf_class[t - 2^D]`;
/// `node_majority[t - 1]` covers every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct TreeClassifier {
    topology: TreeTopology,
    num_features: usize,
    hyperplanes: Vec<Option<Plane>>,
    split_flags: Vec<bool>,
    node_majority: Vec<ClassId>,
    leaf_class: Vec<ClassId>,
    normalization: Option<Normalization>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    metadata: ModelMetadata,
}

/// Subtree actually traversed by training points once pass-through nodes
/// (no split, but a splitting descendant on the occupied side) are skipped.
enum Effective {
    Leaf(ClassId),
    Split(Plane, Box<Effective>, Box<Effective>),
}

/// Builds a classifier from a solver result.
///
/// Pass-through nodes are compressed: the subtree the training points enter
/// is lifted into the unsplit node, so pruning is downward-closed and every
/// training point keeps the leaf class its `z` path earned. Leaves that
/// training points reach take their routed majority (which is the `q`
/// class of any optimal valuation, ties resolved towards `q`).
pub fn extract_tree(r: &SolveResult, m: &MiqpModel, d: &Dataset) -> Result<TreeClassifier> {
    let x = r
        .incumbent
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("solve result has no incumbent (status {})", r.status)))?;
    if x.len() != m.num_vars() {
        return Err(Error::InvalidArgument(format!(
            "valuation has {} entries, model has {} variables",
            x.len(),
            m.num_vars()
        )));
    }
    if d.len() != m.layout.n || d.num_features() != m.layout.p {
        return Err(Error::InvalidArgument("dataset does not match the model dimensions".into()));
    }
    let topo = m.layout.topology();
    let tree = decode(m, x);
    let first = 1usize << topo.depth();

    // Occupancy of each node along the z paths.
    let mut occupied = vec![0usize; topo.node_count()];
    for &leaf in &tree.leaves {
        let mut t = leaf;
        while t >= 1 {
            occupied[t - 1] += 1;
            t /= 2;
        }
    }
    fn build(t: NodeId, topo: &TreeTopology, tree: &crate::formulation::DecodedTree, occupied: &[usize], first: usize) -> Effective {
        if topo.is_leaf(t) {
            return Effective::Leaf(tree.leaf_class[t - first]);
        }
        if tree.split[t - 1] {
            return Effective::Split(
                tree.planes[t - 1].clone(),
                Box::new(build(2 * t, topo, tree, occupied, first)),
                Box::new(build(2 * t + 1, topo, tree, occupied, first)),
            );
        }
        let side = if occupied[2 * t] > occupied[2 * t - 1] { 2 * t + 1 } else { 2 * t };
        build(side, topo, tree, occupied, first)
    }
    let effective = build(1, &topo, &tree, &occupied, first);

    let p = m.layout.p;
    let mut c = TreeClassifier {
        topology: topo.clone(),
        num_features: p,
        hyperplanes: vec![None; topo.num_branch_nodes()],
        split_flags: vec![false; topo.num_branch_nodes()],
        node_majority: vec![1; topo.node_count()],
        leaf_class: vec![1; topo.num_leaves()],
        normalization: d.normalization().cloned(),
        feature_names: d.feature_names().to_vec(),
        class_names: d.class_names().to_vec(),
        metadata: ModelMetadata {
            method: Method::Moctsvm,
            costs: Some(m.costs),
            status: Some(r.status),
            objective: r.objective,
            gap: r.gap,
        },
    };
    let mut hint = vec![None; topo.node_count()];
    c.place(&effective, 1, &mut hint);
    c.settle_majorities(d, &hint);
    Ok(c)
}

impl TreeClassifier {
    /// Assembles a classifier from explicit parts. `hint` gives a preferred
    /// class per node for majority ties and empty nodes.
    pub(crate) fn from_parts(
        topology: TreeTopology,
        hyperplanes: Vec<Option<Plane>>,
        hint: Vec<Option<ClassId>>,
        d: &Dataset,
        metadata: ModelMetadata,
    ) -> Self {
        debug_assert_eq!(hyperplanes.len(), topology.num_branch_nodes());
        let split_flags: Vec<bool> = hyperplanes.iter().map(Option::is_some).collect();
        let mut c = TreeClassifier {
            num_features: d.num_features(),
            hyperplanes,
            split_flags,
            node_majority: vec![1; topology.node_count()],
            leaf_class: vec![1; topology.num_leaves()],
            normalization: d.normalization().cloned(),
            feature_names: d.feature_names().to_vec(),
            class_names: d.class_names().to_vec(),
            metadata,
            topology,
        };
        c.settle_majorities(d, &hint);
        c
    }

    fn place(&mut self, sub: &Effective, t: NodeId, hint: &mut [Option<ClassId>]) {
        match sub {
            Effective::Split(plane, left, right) => {
                self.split_flags[t - 1] = true;
                self.hyperplanes[t - 1] = Some(plane.clone());
                self.place(left, 2 * t, hint);
                self.place(right, 2 * t + 1, hint);
            }
            Effective::Leaf(k) => {
                hint[t - 1] = Some(*k);
                if self.topology.is_branch(t) {
                    // Unreachable descendants inherit the class.
                    self.place(sub, 2 * t, hint);
                    self.place(sub, 2 * t + 1, hint);
                } else {
                    let first = 1usize << self.topology.depth();
                    self.leaf_class[t - first] = *k;
                }
            }
        }
    }

    /// Routes the training sample with the prediction rule, then sets node
    /// majorities (ties prefer the hint, then the smallest id; empty nodes
    /// take the hint or their parent's majority) and aligns the classes of
    /// reached leaves with them.
    fn settle_majorities(&mut self, d: &Dataset, hint: &[Option<ClassId>]) {
        let k = d.num_classes().max(self.class_names.len());
        let mut counts = vec![vec![0usize; k]; self.topology.node_count()];
        for i in 0..d.len() {
            for t in self.path(d.row(i)) {
                counts[t - 1][d.label(i) - 1] += 1;
            }
        }
        let first = 1usize << self.topology.depth();
        for t in self.topology.nodes() {
            let c = &counts[t - 1];
            let best = c.iter().copied().max().unwrap_or(0);
            let maj = if best == 0 {
                hint[t - 1].unwrap_or_else(|| self.topology.parent(t).map_or(1, |p| self.node_majority[p - 1]))
            } else {
                match hint[t - 1] {
                    Some(h) if c.get(h - 1) == Some(&best) => h,
                    _ => majority(c).expect("nonempty node"),
                }
            };
            self.node_majority[t - 1] = maj;
            if self.topology.is_leaf(t) {
                self.leaf_class[t - first] = maj;
            }
        }
    }

    /// Nodes visited by an already scaled point, root first, ending where the
    /// prediction is read.
    pub fn path(&self, x: &[f64]) -> Vec<NodeId> {
        let mut out = vec![1];
        let mut t = 1;
        while self.topology.is_branch(t) && self.split_flags[t - 1] {
            let plane = self.hyperplanes[t - 1].as_ref().expect("split nodes carry a plane");
            t = if score(plane, x) > 0.0 { 2 * t + 1 } else { 2 * t };
            out.push(t);
        }
        out
    }

    /// Class of a point already on the training scale.
    pub fn predict_scaled(&self, x: &[f64]) -> Result<ClassId> {
        self.check_dim(x.len())?;
        let t = *self.path(x).last().expect("path starts at the root");
        Ok(if self.topology.is_leaf(t) {
            self.leaf_class[t - (1usize << self.topology.depth())]
        } else {
            self.node_majority[t - 1]
        })
    }

    /// Class of a raw point: scaled with the stored ranges (clamped to
    /// `[0, 1]`) when the model has them, used as is otherwise.
    pub fn predict(&self, raw: &[f64]) -> Result<ClassId> {
        self.check_dim(raw.len())?;
        match &self.normalization {
            Some(n) => self.predict_scaled(&n.apply(raw)),
            None => self.predict_scaled(raw),
        }
    }

    /// Predictions for every row. A dataset carrying the model's own
    /// normalization is taken as already scaled; one without any
    /// normalization is treated as raw.
    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<ClassId>> {
        self.check_dim(d.num_features())?;
        let scaled = match (d.normalization(), &self.normalization) {
            (None, _) => false,
            (Some(a), Some(b)) if a == b => true,
            (Some(_), None) => true,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument(
                    "dataset was scaled with ranges other than the model's".into(),
                ))
            }
        };
        d.rows()
            .map(|row| if scaled { self.predict_scaled(row) } else { self.predict(row) })
            .collect()
    }

    /// Fraction of correctly predicted rows; see [`Self::predict_dataset`].
    pub fn accuracy(&self, d: &Dataset) -> Result<f64> {
        if d.is_empty() {
            return Err(Error::InvalidArgument("accuracy of an empty dataset is undefined".into()));
        }
        let pred = self.predict_dataset(d)?;
        let hits = pred.iter().zip(d.labels()).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / d.len() as f64)
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if p != self.num_features {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {p}",
                self.num_features
            )));
        }
        Ok(())
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    pub fn depth(&self) -> u32 {
        self.topology.depth()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn hyperplane(&self, t: NodeId) -> Option<&Plane> {
        self.hyperplanes.get(t.wrapping_sub(1)).and_then(Option::as_ref)
    }

    pub fn is_split(&self, t: NodeId) -> bool {
        self.topology.is_branch(t) && self.split_flags[t - 1]
    }

    pub fn split_flags(&self) -> &[bool] {
        &self.split_flags
    }

    pub fn num_splits(&self) -> usize {
        self.split_flags.iter().filter(|&&s| s).count()
    }

    pub fn node_majority(&self, t: NodeId) -> ClassId {
        self.node_majority[t - 1]
    }

    pub fn leaf_classes(&self) -> &[ClassId] {
        &self.leaf_class
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, k: ClassId) -> &str {
        &self.class_names[k - 1]
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Format(e.to_string()),
            _ => Error::Json(e),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Writes `row,class` lines, one per prediction, with class names.
pub fn write_predictions<W: Write>(w: W, c: &TreeClassifier, predictions: &[ClassId]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "class"])?;
    for (i, &k) in predictions.iter().enumerate() {
        out.write_record([i.to_string(), c.class_name(k).to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperplaneDoc {
    omega: Vec<f64>,
    omega0: f64,
}

/// On-disk form of a [`TreeClassifier`]. The topology is stored as its
/// depth only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    depth: u32,
    num_features: usize,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    normalization: Option<Normalization>,
    split_flags: Vec<bool>,
    hyperplanes: Vec<Option<HyperplaneDoc>>,
    node_majority: Vec<ClassId>,
    leaf_class: Vec<ClassId>,
    metadata: ModelMetadata,
}

impl From<TreeClassifier> for ModelDocument {
    fn from(c: TreeClassifier) -> Self {
        ModelDocument {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            depth: c.topology.depth(),
            num_features: c.num_features,
            feature_names: c.feature_names,
            class_names: c.class_names,
            normalization: c.normalization,
            split_flags: c.split_flags,
            hyperplanes: c
                .hyperplanes
                .into_iter()
                .map(|h| h.map(|(omega, omega0)| HyperplaneDoc { omega, omega0 }))
                .collect(),
            node_majority: c.node_majority,
            leaf_class: c.leaf_class,
            metadata: c.metadata,
        }
    }
}

impl TryFrom<ModelDocument> for TreeClassifier {
    type Error = String;

    fn try_from(doc: ModelDocument) -> std::result::Result<Self, String> {
        if doc.format != FORMAT_NAME {
            return Err(format!("unknown format {:?}", doc.format));
        }
        if doc.version != FORMAT_VERSION {
            return Err(format!("unsupported version {} (expected {FORMAT_VERSION})", doc.version));
        }
        let topology = TreeTopology::new(doc.depth).map_err(|e| e.to_string())?;
        let (nb, nl, nn) = (topology.num_branch_nodes(), topology.num_leaves(), topology.node_count());
        let p = doc.num_features;
        let k = doc.class_names.len();
        if k < 2 {
            return Err("at least two class names are required".into());
        }
        if doc.feature_names.len() != p {
            return Err(format!("{} feature names for {p} features", doc.feature_names.len()));
        }
        if doc.split_flags.len() != nb || doc.hyperplanes.len() != nb {
            return Err(format!("depth {} needs {nb} split flags and hyperplane slots", doc.depth));
        }
        if doc.node_majority.len() != nn || doc.leaf_class.len() != nl {
            return Err(format!("depth {} needs {nn} node majorities and {nl} leaf classes", doc.depth));
        }
        if let Some(n) = &doc.normalization {
            if n.ranges.len() != p || n.ranges.iter().any(|r| !r.0.is_finite() || !r.1.is_finite()) {
                return Err("normalization must hold one finite range per feature".into());
            }
        }
        for (i, (&flag, h)) in doc.split_flags.iter().zip(&doc.hyperplanes).enumerate() {
            let t = i + 1;
            match (flag, h) {
                (true, None) => return Err(format!("node {t} splits but has no hyperplane")),
                (false, Some(_)) => return Err(format!("node {t} does not split but carries a hyperplane")),
                (true, Some(h)) => {
                    if h.omega.len() != p || !h.omega0.is_finite() || h.omega.iter().any(|v| !v.is_finite()) {
                        return Err(format!("hyperplane of node {t} must have {p} finite coefficients"));
                    }
                }
                (false, None) => {}
            }
            if flag && t > 1 && !doc.split_flags[t / 2 - 1] {
                return Err(format!("node {t} splits below the unsplit node {}", t / 2));
            }
        }
        if let Some(&bad) = doc.node_majority.iter().chain(&doc.leaf_class).find(|&&c| c == 0 || c > k) {
            return Err(format!("class id {bad} outside 1..={k}"));
        }
        Ok(TreeClassifier {
            topology,
            num_features: p,
            hyperplanes: doc
                .hyperplanes
                .into_iter()
                .map(|h| h.map(|h| (h.omega, h.omega0)))
                .collect(),
            split_flags: doc.split_flags,
            node_majority: doc.node_majority,
            leaf_class: doc.leaf_class,
            normalization: doc.normalization,
            feature_names: doc.feature_names,
            class_names: doc.class_names,
            metadata: doc.metadata,
        })
    }
}
