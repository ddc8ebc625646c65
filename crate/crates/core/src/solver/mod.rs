//! Backward dynamic programming over controlled discrete martingales.
//!
//! Two solvers share one recursion
//!
//!   J_k(state) = max_{gamma in grid} sum_i w_i J_{k+1}(state advanced by
//!                (gamma x_i / sqrt(n), gamma^2 / n))
//!
//! differing in the state representation: the tree solver keeps full
//! histories exactly (any payoff, small n), the lattice solver keeps the
//! payoff's declared Markov state on a rectangular grid (larger n).

pub mod lattice;
pub mod tree;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::domain::{ControlGrid, UncertaintyDomain};
use crate::error::{Error, Result};

pub use lattice::{solve_lattice, LatticeConfig, LatticePolicy};
pub use tree::{
    solve_tree, solve_tree_budgeted, tree_forward_expectation, TreePolicy,
    DEFAULT_TREE_BUDGET,
};

/// Magic + version prefix of the binary policy format.
const POLICY_MAGIC: &[u8; 8] = b"GEXPVP01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Tree,
    Lattice,
}

/// One rectangular state axis of the lattice solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        if self.points < 2 { 0.0 } else { (self.hi - self.lo) / (self.points - 1) as f64 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Polynomial exactness of the quadrature driving the recursion;
    /// None when the noise law was summed exactly.
    pub quadrature_exactness: Option<u32>,
    pub control_resolution: u32,
    pub control_count: usize,
    /// Lattice state axes, in index order (absent for the tree).
    pub state_axes: Option<Vec<Axis>>,
    /// |value - value at half state resolution| (lattice only).
    pub richardson_error: Option<f64>,
    /// Set when the truncation box looks too tight for the domain.
    pub boundary_warning: Option<String>,
}

/// Per-stage value and argmax tables in the solver's own state indexing.
#[derive(Debug, Clone)]
pub enum PolicyTables {
    Tree(TreePolicy),
    Lattice(LatticePolicy),
}

/// Output of a solve: the stage-0 value, the argmax policy realized as
/// per-stage tables, and enough context to replay the policy forward.
#[derive(Debug, Clone)]
pub struct ValueAndPolicy {
    pub value: f64,
    pub n: usize,
    pub d: usize,
    pub kind: SolverKind,
    pub payoff_name: String,
    pub domain: UncertaintyDomain,
    pub grid: ControlGrid,
    pub tables: PolicyTables,
    pub diagnostics: SolverDiagnostics,
}

/// JSON header embedded in the binary policy file, ahead of the raw tables.
#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    schema_version: u32,
    value: f64,
    n: usize,
    d: usize,
    kind: SolverKind,
    payoff_name: String,
    domain: UncertaintyDomain,
    grid: ControlGrid,
    diagnostics: SolverDiagnostics,
    tree: Option<tree::TreeHeader>,
    lattice: Option<lattice::LatticeHeader>,
}

impl ValueAndPolicy {
    /// Human-readable summary without the bulky tables.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "n": self.n,
            "d": self.d,
            "solver": self.kind,
            "payoff": self.payoff_name,
            "domain": self.domain,
            "control_count": self.grid.len(),
            "diagnostics": self.diagnostics,
        })
    }

    /// Writes the versioned binary policy file: magic, JSON header, then the
    /// per-stage tables as little-endian scalars.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(POLICY_MAGIC)?;
        let header = PolicyHeader {
            schema_version: 1,
            value: self.value,
            n: self.n,
            d: self.d,
            kind: self.kind,
            payoff_name: self.payoff_name.clone(),
            domain: self.domain.clone(),
            grid: self.grid.clone(),
            diagnostics: self.diagnostics.clone(),
            tree: match &self.tables {
                PolicyTables::Tree(t) => Some(t.header()),
                PolicyTables::Lattice(_) => None,
            },
            lattice: match &self.tables {
                PolicyTables::Lattice(l) => Some(l.header()),
                PolicyTables::Tree(_) => None,
            },
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        out.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        out.write_all(&header_bytes)?;
        let (values, policies) = match &self.tables {
            PolicyTables::Tree(t) => (&t.stage_values, &t.stage_policy),
            PolicyTables::Lattice(l) => (&l.stage_values, &l.stage_policy),
        };
        out.write_u64::<LittleEndian>(values.len() as u64)?;
        for table in values {
            out.write_u64::<LittleEndian>(table.len() as u64)?;
            for &x in table {
                out.write_f64::<LittleEndian>(x)?;
            }
        }
        out.write_u64::<LittleEndian>(policies.len() as u64)?;
        for table in policies {
            out.write_u64::<LittleEndian>(table.len() as u64)?;
            for &c in table {
                out.write_u16::<LittleEndian>(c)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != POLICY_MAGIC {
            return Err(Error::Serialization(format!(
                "bad policy file magic {:?}; expected {:?}",
                magic, POLICY_MAGIC
            )));
        }
        let header_len = input.read_u64::<LittleEndian>()? as usize;
        if header_len > 1 << 30 {
            return Err(Error::Serialization("policy header too large".into()));
        }
        let mut header_bytes = vec![0u8; header_len];
        input.read_exact(&mut header_bytes)?;
        let header: PolicyHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Serialization(e.to_string()))?;

        let n_value_tables = input.read_u64::<LittleEndian>()? as usize;
        let mut stage_values = Vec::with_capacity(n_value_tables);
        for _ in 0..n_value_tables {
            let len = input.read_u64::<LittleEndian>()? as usize;
            let mut table = vec![0.0f64; len];
            input.read_f64_into::<LittleEndian>(&mut table)?;
            stage_values.push(table);
        }
        let n_policy_tables = input.read_u64::<LittleEndian>()? as usize;
        let mut stage_policy = Vec::with_capacity(n_policy_tables);
        for _ in 0..n_policy_tables {
            let len = input.read_u64::<LittleEndian>()? as usize;
            let mut table = vec![0u16; len];
            input.read_u16_into::<LittleEndian>(&mut table)?;
            stage_policy.push(table);
        }

        let tables = match header.kind {
            SolverKind::Tree => {
                let th = header.tree.ok_or_else(|| {
                    Error::Serialization("tree policy file missing tree header".into())
                })?;
                PolicyTables::Tree(TreePolicy::from_parts(th, stage_values, stage_policy)?)
            }
            SolverKind::Lattice => {
                let lh = header.lattice.ok_or_else(|| {
                    Error::Serialization("lattice policy file missing lattice header".into())
                })?;
                PolicyTables::Lattice(LatticePolicy::from_parts(
                    lh,
                    stage_values,
                    stage_policy,
                )?)
            }
        };
        Ok(ValueAndPolicy {
            value: header.value,
            n: header.n,
            d: header.d,
            kind: header.kind,
            payoff_name: header.payoff_name,
            domain: header.domain,
            grid: header.grid,
            tables,
            diagnostics: header.diagnostics,
        })
    }
}
