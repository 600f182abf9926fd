//! `qvae graph info`.

use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use qvae::graph::{hierarchy_mapping, GraphKind, GraphSpec, HierarchyScheme};

use crate::{print_summary, CliError, CliResult};

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// bernoulli, chimera, pegasus or complete.
    #[arg(long)]
    pub kind: GraphKind,
    /// Node count for kinds sized by nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Cell rows (Chimera) or patch size (Pegasus).
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Chimera shore size.
    #[arg(long)]
    pub shore: Option<usize>,
    /// Nodes to mark inactive, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dead: Vec<usize>,
    /// Also write the full graph document here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn info(args: InfoArgs) -> CliResult<()> {
    let spec = GraphSpec { kind: args.kind, nodes: args.nodes, rows: args.rows, cols: args.cols, shore: args.shore, dead: args.dead };
    let conn = spec.build()?;
    let n = conn.num_nodes();
    let degrees: Vec<usize> = (0..n).map(|i| conn.degree(i)).collect();
    let class_sizes: Vec<usize> = conn.color_classes().iter().map(Vec::len).collect();
    let intra = |scheme| hierarchy_mapping(&conn, scheme).ok().map(|m| m.intra_group_edges(&conn));
    if let Some(p) = &args.json {
        std::fs::write(p, conn.to_json()?).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    print_summary(&json!({
        "command": "graph info",
        "kind": conn.kind(),
        "nodes": n,
        "active_nodes": conn.num_active(),
        "edges": conn.num_edges(),
        "colors": conn.num_colors(),
        "color_class_sizes": class_sizes,
        "max_degree": degrees.iter().max().copied().unwrap_or(0),
        "mean_degree": if n == 0 { 0.0 } else { degrees.iter().sum::<usize>() as f64 / n as f64 },
        "intra_group_edges": {
            "bipartite": intra(HierarchyScheme::Bipartite),
            "chains": intra(HierarchyScheme::Chains),
        },
    }));
    Ok(())
}
