use serde::Serialize;

use crate::catalog::{DesignSpace, DesignVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    /// A node or time limit stopped the search; the design (if any) is the
    /// best incumbent found.
    LimitReached,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::LimitReached => "limit_reached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slack {
    pub label: String,
    pub slack: f64,
}

/// Outcome of solving a co-design problem, by search or by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub status: Status,
    pub design: Option<DesignVector>,
    /// One value per lexicographic level.
    pub objective_values: Vec<f64>,
    pub node_count: u64,
    /// Seconds.
    pub wall_time: f64,
    pub certificate: Vec<Slack>,
}

impl Solution {
    pub fn infeasible(node_count: u64, wall_time: f64) -> Self {
        Self {
            status: Status::Infeasible,
            design: None,
            objective_values: Vec::new(),
            node_count,
            wall_time,
            certificate: Vec::new(),
        }
    }

    /// `(module, component name)` pairs; `None` for an empty optional module.
    pub fn component_names(&self, space: &DesignSpace) -> Vec<(String, Option<String>)> {
        let Some(design) = &self.design else {
            return Vec::new();
        };
        space
            .modules()
            .iter()
            .zip(design.choices())
            .map(|(m, c)| (m.module_id().to_string(), c.map(|j| m.component_names()[j].clone())))
            .collect()
    }
}
