//! Latent-space connectivities.
//!
//! Four kinds are supported: edge-free Bernoulli, Chimera (bipartite tiling of
//! `K_{4,4}` cells), a Pegasus-style quadripartite tiling of 8-qubit cells, and
//! the complete graph. Colorings are computed at construction and drive the
//! block structure of Gibbs sweeps.
//!
//! Node indexing is row-major over cells and, within a cell, vertical qubits
//! (`0..shore`) before horizontal ones (`shore..2*shore`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    #[default]
    Bernoulli,
    Chimera,
    Pegasus,
    Complete,
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GraphKind::Bernoulli => "bernoulli",
            GraphKind::Chimera => "chimera",
            GraphKind::Pegasus => "pegasus",
            GraphKind::Complete => "complete",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" => Ok(GraphKind::Bernoulli),
            "chimera" => Ok(GraphKind::Chimera),
            "pegasus" => Ok(GraphKind::Pegasus),
            "complete" | "rbm" | "full" => Ok(GraphKind::Complete),
            other => Err(Error::InvalidArgument(format!("unknown graph kind '{other}'"))),
        }
    }
}

/// Cell grid geometry of tiled kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLayout {
    pub rows: usize,
    pub cols: usize,
    pub shore: usize,
}

impl CellLayout {
    fn node(&self, r: usize, c: usize, horizontal: bool, k: usize) -> usize {
        (r * self.cols + c) * 2 * self.shore + if horizontal { self.shore } else { 0 } + k
    }

    /// True if `node` belongs to the vertical shore of its cell.
    pub fn is_vertical(&self, node: usize) -> bool {
        node % (2 * self.shore) < self.shore
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Connectivity {
    kind: GraphKind,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    coloring: Vec<usize>,
    active_mask: Vec<bool>,
    layout: Option<CellLayout>,
    // derived
    neighbors: Vec<Vec<(usize, usize)>>,
    color_classes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    version: u32,
    kind: GraphKind,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    coloring: Vec<usize>,
    active_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<CellLayout>,
}

impl Connectivity {
    fn from_parts(
        kind: GraphKind,
        num_nodes: usize,
        mut edges: Vec<(usize, usize)>,
        coloring: Vec<usize>,
        active_mask: Vec<bool>,
        layout: Option<CellLayout>,
    ) -> Result<Self> {
        edges.sort_unstable();
        let conn = Connectivity {
            kind,
            num_nodes,
            edges,
            coloring,
            active_mask,
            layout,
            neighbors: Vec::new(),
            color_classes: Vec::new(),
        };
        conn.validate()?;
        Ok(conn.with_derived())
    }

    fn with_derived(mut self) -> Self {
        let mut neighbors = vec![Vec::new(); self.num_nodes];
        for (e, &(l, m)) in self.edges.iter().enumerate() {
            neighbors[l].push((m, e));
            neighbors[m].push((l, e));
        }
        let ncolors = self.coloring.iter().copied().max().map_or(0, |c| c + 1);
        let mut classes = vec![Vec::new(); ncolors];
        for node in 0..self.num_nodes {
            if self.active_mask[node] {
                classes[self.coloring[node]].push(node);
            }
        }
        classes.retain(|c| !c.is_empty());
        self.neighbors = neighbors;
        self.color_classes = classes;
        self
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if n == 0 {
            return Err(Error::InvalidArgument("graph has no nodes".into()));
        }
        if self.coloring.len() != n || self.active_mask.len() != n {
            return Err(Error::Shape(format!(
                "coloring/mask lengths {}/{} do not match {n} nodes",
                self.coloring.len(),
                self.active_mask.len()
            )));
        }
        let mut prev: Option<(usize, usize)> = None;
        for &(l, m) in &self.edges {
            if l >= m || m >= n {
                return Err(Error::InvalidArgument(format!("bad edge ({l}, {m})")));
            }
            if prev == Some((l, m)) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({l}, {m})")));
            }
            if self.coloring[l] == self.coloring[m] {
                return Err(Error::InvalidArgument(format!(
                    "edge ({l}, {m}) joins two nodes of color {}",
                    self.coloring[l]
                )));
            }
            if !self.active_mask[l] || !self.active_mask[m] {
                return Err(Error::InvalidArgument(format!("edge ({l}, {m}) touches an inactive node")));
            }
            prev = Some((l, m));
        }
        Ok(())
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coloring(&self) -> &[usize] {
        &self.coloring
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active_mask
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active_mask[node]
    }

    pub fn active_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|&i| self.active_mask[i]).collect()
    }

    pub fn num_active(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    pub fn layout(&self) -> Option<CellLayout> {
        self.layout
    }

    /// `(neighbor, edge index)` pairs of `node`.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.neighbors[node]
    }

    /// Active nodes grouped by color; one block-Gibbs update per class.
    pub fn color_classes(&self) -> &[Vec<usize>] {
        &self.color_classes
    }

    pub fn num_colors(&self) -> usize {
        self.color_classes.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GraphDoc {
            version: GRAPH_FORMAT_VERSION,
            kind: self.kind,
            num_nodes: self.num_nodes,
            edges: self.edges.clone(),
            coloring: self.coloring.clone(),
            active_mask: self.active_mask.clone(),
            layout: self.layout,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        if doc.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "graph format version {} is not supported (expected {GRAPH_FORMAT_VERSION})",
                doc.version
            )));
        }
        Self::from_parts(doc.kind, doc.num_nodes, doc.edges, doc.coloring, doc.active_mask, doc.layout)
    }
}

/// `K_{shore,shore}` cells on a `rows × cols` grid. Vertical qubits couple to
/// the same position in the cell below, horizontal ones to the cell on the
/// right. The proper 2-coloring is the checkerboard `(side + r + c) mod 2`.
pub fn build_chimera(rows: usize, cols: usize, shore: usize) -> Result<Connectivity> {
    if rows == 0 || cols == 0 || shore == 0 {
        return Err(Error::InvalidArgument(format!(
            "chimera dimensions must be positive, got ({rows}, {cols}, {shore})"
        )));
    }
    let layout = CellLayout { rows, cols, shore };
    let n = 2 * shore * rows * cols;
    let mut edges = Vec::with_capacity(16 * rows * cols + 8 * rows * cols);
    let mut coloring = vec![0; n];
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..shore {
                let v = layout.node(r, c, false, k);
                let h = layout.node(r, c, true, k);
                coloring[v] = (r + c) % 2;
                coloring[h] = (1 + r + c) % 2;
                for j in 0..shore {
                    edges.push((v, layout.node(r, c, true, j)));
                }
                if r + 1 < rows {
                    edges.push((v, layout.node(r + 1, c, false, k)));
                }
                if c + 1 < cols {
                    edges.push((h, layout.node(r, c + 1, true, k)));
                }
            }
        }
    }
    Connectivity::from_parts(GraphKind::Chimera, n, edges, coloring, vec![true; n], Some(layout))
}

/// Pegasus-style tiling on a `patch × patch` grid of 8-qubit cells.
///
/// Cell adjacency (frozen fixture):
/// - intra-cell `K_{4,4}` between vertical and horizontal qubits (16 edges)
/// - odd couplers `v0-v1, v2-v3, h0-h1, h2-h3` (4 edges)
/// - `v_k(r,c) - v_k(r+1,c)` and `h_k(r,c) - h_k(r,c+1)`
/// - cross-cell `v_k(r,c) - h_k(r,c+1)` and `h_k(r,c) - v_k(r+1,c)`
///
/// Colors: vertical `(k + r + c) mod 2`, horizontal `2 + (k + r + c) mod 2`.
/// Boundary cells simply lose the couplers that would leave the patch.
pub fn build_pegasus(patch_size: usize) -> Result<Connectivity> {
    if patch_size == 0 {
        return Err(Error::InvalidArgument("pegasus patch size must be positive".into()));
    }
    let shore = 4;
    let layout = CellLayout { rows: patch_size, cols: patch_size, shore };
    let n = 8 * patch_size * patch_size;
    let mut edges = Vec::new();
    let mut coloring = vec![0; n];
    for r in 0..patch_size {
        for c in 0..patch_size {
            for k in 0..shore {
                let v = layout.node(r, c, false, k);
                let h = layout.node(r, c, true, k);
                coloring[v] = (k + r + c) % 2;
                coloring[h] = 2 + (k + r + c) % 2;
                for j in 0..shore {
                    edges.push((v, layout.node(r, c, true, j)));
                }
                if k % 2 == 0 {
                    edges.push((v, v + 1));
                    edges.push((h, h + 1));
                }
                if r + 1 < patch_size {
                    edges.push((v, layout.node(r + 1, c, false, k)));
                    edges.push((h, layout.node(r + 1, c, false, k)));
                }
                if c + 1 < patch_size {
                    edges.push((h, layout.node(r, c + 1, true, k)));
                    edges.push((v, layout.node(r, c + 1, true, k)));
                }
            }
        }
    }
    let edges = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    Connectivity::from_parts(GraphKind::Pegasus, n, edges, coloring, vec![true; n], Some(layout))
}

pub fn build_complete(n: usize) -> Result<Connectivity> {
    if n == 0 {
        return Err(Error::InvalidArgument("complete graph needs at least one node".into()));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for l in 0..n {
        for m in l + 1..n {
            edges.push((l, m));
        }
    }
    Connectivity::from_parts(GraphKind::Complete, n, edges, (0..n).collect(), vec![true; n], None)
}

pub fn build_bernoulli(n: usize) -> Result<Connectivity> {
    if n == 0 {
        return Err(Error::InvalidArgument("bernoulli graph needs at least one node".into()));
    }
    Connectivity::from_parts(GraphKind::Bernoulli, n, Vec::new(), vec![0; n], vec![true; n], None)
}

/// Builds the graph the experiments use for a given kind at (roughly) `n` nodes.
/// Chimera and Pegasus require `n = 8·s²` for a square patch of side `s`.
pub fn build_kind(kind: GraphKind, n: usize) -> Result<Connectivity> {
    match kind {
        GraphKind::Bernoulli => build_bernoulli(n),
        GraphKind::Complete => build_complete(n),
        GraphKind::Chimera | GraphKind::Pegasus => {
            let side = ((n / 8) as f64).sqrt().round() as usize;
            if side == 0 || 8 * side * side != n {
                return Err(Error::InvalidArgument(format!(
                    "{kind} needs 8·s² nodes for a square patch, got {n}"
                )));
            }
            if kind == GraphKind::Chimera {
                build_chimera(side, side, 4)
            } else {
                build_pegasus(side)
            }
        }
    }
}

/// Graph description as written in run configs and checkpoints.
///
/// Chimera takes `rows`/`cols` (and optionally `shore`), Pegasus takes `rows`
/// as its patch side; any kind accepts `nodes` instead, resolved by
/// [`build_kind`]. `dead` nodes are masked out afterwards.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: GraphKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shore: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dead: Vec<usize>,
}

impl GraphSpec {
    pub fn with_nodes(kind: GraphKind, nodes: usize) -> Self {
        GraphSpec { kind, nodes: Some(nodes), ..GraphSpec::default() }
    }

    pub fn chimera(rows: usize, cols: usize) -> Self {
        GraphSpec { kind: GraphKind::Chimera, rows: Some(rows), cols: Some(cols), ..GraphSpec::default() }
    }

    pub fn build(&self) -> Result<Connectivity> {
        let conn = match (self.kind, self.rows, self.nodes) {
            (GraphKind::Chimera, Some(rows), _) => {
                build_chimera(rows, self.cols.unwrap_or(rows), self.shore.unwrap_or(4))?
            }
            (GraphKind::Pegasus, Some(rows), _) => build_pegasus(rows)?,
            (kind, _, Some(n)) => build_kind(kind, n)?,
            (kind, _, None) => {
                return Err(Error::InvalidArgument(format!("graph '{kind}' needs a size (nodes or rows)")));
            }
        };
        if self.dead.is_empty() {
            Ok(conn)
        } else {
            mask_nodes(&conn, &self.dead)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyScheme {
    Bipartite,
    Chains,
}

impl std::str::FromStr for HierarchyScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bipartite" => Ok(HierarchyScheme::Bipartite),
            "chains" => Ok(HierarchyScheme::Chains),
            other => Err(Error::InvalidArgument(format!("unknown hierarchy scheme '{other}'"))),
        }
    }
}

/// Assignment of latent nodes to the two posterior hierarchy levels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyMapping {
    pub scheme: HierarchyScheme,
    pub group1: Vec<usize>,
    pub group2: Vec<usize>,
}

impl HierarchyMapping {
    pub fn intra_group_edges(&self, conn: &Connectivity) -> usize {
        let mut side = vec![0u8; conn.num_nodes()];
        for &i in &self.group1 {
            side[i] = 1;
        }
        for &i in &self.group2 {
            side[i] = 2;
        }
        conn.edges().iter().filter(|&&(l, m)| side[l] == side[m] && side[l] != 0).count()
    }
}

/// Splits the active nodes into two hierarchy groups.
///
/// `Bipartite` uses the color classes when there are two of them. With one
/// class (Bernoulli) the active nodes are split in index order; with four
/// (Pegasus) the color pairing with the fewest intra-group edges is used; any
/// other count falls back to whole color classes filling the first half.
/// `Chains` puts vertical qubits in group 1 and horizontal ones in group 2
/// and is only defined on Chimera.
pub fn hierarchy_mapping(conn: &Connectivity, scheme: HierarchyScheme) -> Result<HierarchyMapping> {
    let active = conn.active_nodes();
    let (group1, group2) = match scheme {
        HierarchyScheme::Chains => {
            if conn.kind() != GraphKind::Chimera {
                return Err(Error::InvalidArgument(format!(
                    "chains mapping requires a chimera graph, got {}",
                    conn.kind()
                )));
            }
            let layout = conn.layout().expect("chimera graphs carry a layout");
            active.iter().partition(|&&i| layout.is_vertical(i))
        }
        HierarchyScheme::Bipartite => {
            let classes = conn.color_classes();
            match classes.len() {
                2 => (classes[0].clone(), classes[1].clone()),
                4 => {
                    let pairings = [[0usize, 1], [0, 2], [0, 3]];
                    let mut best: Option<(usize, Vec<usize>, Vec<usize>)> = None;
                    for pair in pairings {
                        let mut g1: Vec<usize> = pair.iter().flat_map(|&c| classes[c].clone()).collect();
                        let mut g2: Vec<usize> = (0..4)
                            .filter(|c| !pair.contains(c))
                            .flat_map(|c| classes[c].clone())
                            .collect();
                        g1.sort_unstable();
                        g2.sort_unstable();
                        let m = HierarchyMapping { scheme, group1: g1.clone(), group2: g2.clone() };
                        let cost = m.intra_group_edges(conn);
                        if best.as_ref().is_none_or(|b| cost < b.0) {
                            best = Some((cost, g1, g2));
                        }
                    }
                    let (_, g1, g2) = best.expect("three pairings were scored");
                    (g1, g2)
                }
                1 => {
                    let half = active.len().div_ceil(2);
                    (active[..half].to_vec(), active[half..].to_vec())
                }
                _ => {
                    let half = active.len().div_ceil(2);
                    let mut g1 = Vec::new();
                    let mut g2 = Vec::new();
                    for class in classes {
                        if g1.len() < half {
                            g1.extend_from_slice(class);
                        } else {
                            g2.extend_from_slice(class);
                        }
                    }
                    g1.sort_unstable();
                    g2.sort_unstable();
                    (g1, g2)
                }
            }
        }
    };
    Ok(HierarchyMapping { scheme, group1, group2 })
}

/// Flags `dead` nodes inactive and drops their couplers. Node indices are kept.
pub fn mask_nodes(conn: &Connectivity, dead: &[usize]) -> Result<Connectivity> {
    let dead: BTreeSet<usize> = dead.iter().copied().collect();
    if let Some(&bad) = dead.iter().find(|&&i| i >= conn.num_nodes()) {
        return Err(Error::InvalidArgument(format!(
            "node {bad} out of range for a {}-node graph",
            conn.num_nodes()
        )));
    }
    let mut mask = conn.active_mask.clone();
    for &i in &dead {
        mask[i] = false;
    }
    let edges = conn
        .edges
        .iter()
        .copied()
        .filter(|&(l, m)| mask[l] && mask[m])
        .collect();
    Connectivity::from_parts(conn.kind, conn.num_nodes, edges, conn.coloring.clone(), mask, conn.layout)
}
