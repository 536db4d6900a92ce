//! The JSON case schema and its validation. Angles are radians, powers are
//! per unit on `base_mva`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PowerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(rename = "type")]
    pub bus_type: BusType,
    /// Voltage magnitude setpoint (slack/PV) in pu; ignored for PQ buses.
    #[serde(default = "one")]
    pub voltage: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (half at each end).
    #[serde(default)]
    pub b: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Machine {
    pub bus: usize,
    /// Inertia constant, seconds.
    pub h: f64,
    /// Damping coefficient, pu torque per pu speed deviation.
    pub d: f64,
    /// Transient reactance, pu.
    pub xd_prime: f64,
    /// Scheduled mechanical power, pu (slack value is recomputed from the
    /// power flow).
    pub p_mech: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCase {
    pub base_mva: f64,
    pub frequency_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub machines: Vec<Machine>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl PowerCase {
    /// Synchronous angular frequency, rad/s.
    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency_hz
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(PowerError::DuplicateBus(b.id));
            }
        }
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.bus_type == BusType::Slack)
            .count();
        if slack_count != 1 {
            return Err(PowerError::SlackCount(slack_count));
        }
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !seen.contains(&end) {
                    return Err(PowerError::UnknownBranchBus(end));
                }
            }
        }
        for m in &self.machines {
            if !seen.contains(&m.bus) {
                return Err(PowerError::UnknownMachineBus(m.bus));
            }
            if m.h <= 0.0 {
                return Err(PowerError::NonPositiveMachineParam {
                    bus: m.bus,
                    name: "H",
                    value: m.h,
                });
            }
            if m.xd_prime <= 0.0 {
                return Err(PowerError::NonPositiveMachineParam {
                    bus: m.bus,
                    name: "xd_prime",
                    value: m.xd_prime,
                });
            }
        }
        self.check_connected()?;
        Ok(())
    }

    fn check_connected(&self) -> Result<(), PowerError> {
        if self.buses.is_empty() {
            return Ok(());
        }
        let n = self.buses.len();
        let index = |id: usize| self.bus_index(id).expect("endpoint validated");
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            let (f, t) = (index(br.from), index(br.to));
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    stack.push(w);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            None => Ok(()),
            Some(i) => Err(PowerError::Disconnected(self.buses[i].id)),
        }
    }

    /// Net scheduled active injection at bus index `i` (machines minus load).
    pub fn p_injection(&self, i: usize) -> f64 {
        let bus = &self.buses[i];
        let gen: f64 = self
            .machines
            .iter()
            .filter(|m| m.bus == bus.id)
            .map(|m| m.p_mech)
            .sum();
        gen - bus.p_load
    }
}

/// Parse a case from JSON text and validate it.
pub fn parse_case(json: &str) -> Result<PowerCase, PowerError> {
    let case: PowerCase = serde_json::from_str(json)?;
    case.validate()?;
    Ok(case)
}

/// Load a case file from disk and validate it.
pub fn load_case(path: impl AsRef<Path>) -> Result<PowerCase, PowerError> {
    let text = std::fs::read_to_string(path)?;
    parse_case(&text)
}

/// Cases shipped with the crate: `wscc9` (3-machine 9-bus) and `ieee39`
/// (New England 10-machine 39-bus).
pub fn bundled_case(name: &str) -> Option<Result<PowerCase, PowerError>> {
    let text = match name.trim_end_matches(".json") {
        "wscc9" => include_str!("../../data/wscc9.json"),
        "ieee39" => include_str!("../../data/ieee39.json"),
        _ => return None,
    };
    Some(parse_case(text))
}
