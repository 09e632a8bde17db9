use crate::error::{Error, Result};

/// Widths and neighbor counts of the upsampling network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    /// Width `U` of per-point features; interpolated features are `2U` wide.
    pub feature_width: usize,
    /// Output width of each dynamic edge-convolution layer.
    pub edge_widths: Vec<usize>,
    /// Neighbors per point in the dynamic feature-space graph.
    pub graph_k: usize,
    pub query_width: usize,
    pub value_width: usize,
    /// Hidden width of the weight head and refinement MLPs.
    pub hidden_width: usize,
    /// Largest supported upsampling factor.
    pub r_max: usize,
    /// Interpolation neighbors `K`.
    pub neighbors: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            feature_width: 64,
            edge_widths: vec![24, 24, 24],
            graph_k: 16,
            query_width: 32,
            value_width: 32,
            hidden_width: 64,
            r_max: 16,
            neighbors: 32,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("feature_width", self.feature_width),
            ("graph_k", self.graph_k),
            ("query_width", self.query_width),
            ("value_width", self.value_width),
            ("hidden_width", self.hidden_width),
            ("neighbors", self.neighbors),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) {
            return Err(Error::Config(
                "edge_widths needs at least one layer, each at least 1 wide".into(),
            ));
        }
        if self.r_max < 2 {
            return Err(Error::Config(format!("r_max = {} must be at least 2", self.r_max)));
        }
        Ok(())
    }

    /// Checks that a patch of `n` points can be processed.
    pub fn check_patch(&self, n: usize) -> Result<()> {
        if n < self.neighbors || n < self.graph_k {
            return Err(Error::Range(format!(
                "patch of {n} points is smaller than K = {} or graph K = {}",
                self.neighbors, self.graph_k
            )));
        }
        Ok(())
    }
}
