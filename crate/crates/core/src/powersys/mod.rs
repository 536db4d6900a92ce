//! Power-system data ingestion, Newton-Raphson power flow, Kron reduction to
//! machine internal nodes, and the classical swing model.

mod case;
mod kron;
mod powerflow;
mod swing;

pub use case::{bundled_case, load_case, parse_case, Branch, Bus, BusType, Machine, PowerCase};
pub use kron::{kron_reduce, kron_reduce_with, ReducedSystem, ReductionOptions, ReductionVariant};
pub use powerflow::{power_flow, PowerFlowSolution};
pub use swing::{reduced_angle_field, swing_field};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("io error reading case: {0}")]
    Io(#[from] std::io::Error),
    #[error("case schema violation: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("case must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("machine references unknown bus {0}")]
    UnknownMachineBus(usize),
    #[error("branch references unknown bus {0}")]
    UnknownBranchBus(usize),
    #[error("machine at bus {bus}: {name} must be positive, got {value}")]
    NonPositiveMachineParam {
        bus: usize,
        name: &'static str,
        value: f64,
    },
    #[error("network is disconnected over in-service branches (bus {0} unreachable)")]
    Disconnected(usize),
    #[error("power flow diverged: mismatch {mismatch:.3e} after {iterations} iterations")]
    PowerFlowDiverged { mismatch: f64, iterations: usize },
    #[error("contingency invalid: {0}")]
    BadContingency(String),
    #[error("network reduction failed: eliminated block is singular near bus {bus}")]
    ReductionSingular { bus: usize },
    #[error("case has no machines to reduce onto")]
    NoMachines,
    #[error("multiple machines at bus {0} are not supported")]
    SharedMachineBus(usize),
    #[error("no post-fault equilibrium found: {0}")]
    NoPostFaultSep(String),
}

/// A solid three-phase bus fault cleared by tripping one line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub faulted_bus: usize,
    /// `(from, to)` pair of the line removed when the fault clears.
    pub tripped_branch: (usize, usize),
}

impl Contingency {
    pub fn new(faulted_bus: usize, tripped_branch: (usize, usize)) -> Self {
        Self {
            faulted_bus,
            tripped_branch,
        }
    }

    /// The tripped branch must exist in service and the faulted bus must be
    /// one of its endpoints.
    pub fn validate(&self, case: &PowerCase) -> Result<(), PowerError> {
        let (f, t) = self.tripped_branch;
        let found = case
            .branches
            .iter()
            .any(|b| b.in_service && ((b.from == f && b.to == t) || (b.from == t && b.to == f)));
        if !found {
            return Err(PowerError::BadContingency(format!(
                "tripped branch {f}-{t} not found in service"
            )));
        }
        if self.faulted_bus != f && self.faulted_bus != t {
            return Err(PowerError::BadContingency(format!(
                "faulted bus {} is not an endpoint of branch {f}-{t}",
                self.faulted_bus
            )));
        }
        Ok(())
    }

    /// `bus:8,line:8-9` notation used by the CLI and result tables.
    pub fn parse(spec: &str) -> Result<Self, PowerError> {
        let mut faulted = None;
        let mut branch = None;
        for part in spec.split(',') {
            let (key, value) = part
                .split_once(':')
                .ok_or_else(|| PowerError::BadContingency(format!("bad token '{part}'")))?;
            match key.trim() {
                "bus" => {
                    faulted =
                        Some(value.trim().parse::<usize>().map_err(|_| {
                            PowerError::BadContingency(format!("bad bus id '{value}'"))
                        })?)
                }
                "line" => {
                    let (a, b) = value.trim().split_once('-').ok_or_else(|| {
                        PowerError::BadContingency(format!("bad line spec '{value}'"))
                    })?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| PowerError::BadContingency(format!("bad bus id '{s}'")))
                    };
                    branch = Some((parse(a)?, parse(b)?));
                }
                other => return Err(PowerError::BadContingency(format!("unknown key '{other}'"))),
            }
        }
        match (faulted, branch) {
            (Some(bus), Some(line)) => Ok(Self::new(bus, line)),
            _ => Err(PowerError::BadContingency(
                "expected bus:<id>,line:<from>-<to>".into(),
            )),
        }
    }

    pub fn line_label(&self) -> String {
        format!("{}-{}", self.tripped_branch.0, self.tripped_branch.1)
    }
}

impl std::fmt::Display for Contingency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "bus:{},line:{}-{}",
            self.faulted_bus, self.tripped_branch.0, self.tripped_branch.1
        )
    }
}
