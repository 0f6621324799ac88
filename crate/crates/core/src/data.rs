//! Trajectory and dataset model with JSON-lines persistence.
//!
//! A dataset file starts with one header record (the [`SpaceSpec`], reward bounds
//! and optional ratio bound) followed by one trajectory per line.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of state space. Cardinality and dimension are the same at every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    Finite { cardinality: usize },
    RealVector { dimension: usize },
}

/// Shape of the decision process: state kind, number of actions and horizon `T`
/// (steps are indexed `0..=T`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub state: StateKind,
    pub n_actions: usize,
    pub horizon: usize,
}

impl SpaceSpec {
    pub fn finite(cardinality: usize, n_actions: usize, horizon: usize) -> Result<Self> {
        let spec = SpaceSpec {
            state: StateKind::Finite { cardinality },
            n_actions,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn real(dimension: usize, n_actions: usize, horizon: usize) -> Result<Self> {
        let spec = SpaceSpec {
            state: StateKind::RealVector { dimension },
            n_actions,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of steps per trajectory, `T + 1`.
    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self.state {
            StateKind::Finite { cardinality } => Some(cardinality),
            StateKind::RealVector { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 {
            return Err(Error::invalid("action cardinality must be at least 1"));
        }
        match self.state {
            StateKind::Finite { cardinality: 0 } => {
                Err(Error::invalid("state cardinality must be at least 1"))
            }
            StateKind::RealVector { dimension: 0 } => {
                Err(Error::invalid("state dimension must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Borrowed view of a single state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StateRef<'a> {
    Discrete(usize),
    Real(&'a [f64]),
}

impl<'a> StateRef<'a> {
    /// Integer code of a finite state.
    ///
    /// # Panics
    /// Panics on a real-vector state.
    pub fn code(&self) -> usize {
        match self {
            StateRef::Discrete(s) => *s,
            StateRef::Real(_) => panic!("expected a finite state, got a real vector"),
        }
    }

    /// Coordinates of a real-vector state.
    ///
    /// # Panics
    /// Panics on a finite state.
    pub fn coords(&self) -> &'a [f64] {
        match self {
            StateRef::Real(x) => x,
            StateRef::Discrete(_) => panic!("expected a real-vector state, got a finite state"),
        }
    }

    /// First coordinate of a real state, or the code of a finite state as `f64`.
    pub fn scalar(&self) -> f64 {
        match self {
            StateRef::Discrete(s) => *s as f64,
            StateRef::Real(x) => x[0],
        }
    }
}

/// States of one trajectory, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub enum States {
    Discrete(Vec<usize>),
    Real { dim: usize, values: Vec<f64> },
}

impl States {
    pub fn len(&self) -> usize {
        match self {
            States::Discrete(v) => v.len(),
            States::Real { dim, values } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, t: usize) -> StateRef<'_> {
        match self {
            States::Discrete(v) => StateRef::Discrete(v[t]),
            States::Real { dim, values } => StateRef::Real(&values[t * dim..(t + 1) * dim]),
        }
    }

    /// Empty container matching a state kind.
    pub fn with_capacity(kind: StateKind, steps: usize) -> Self {
        match kind {
            StateKind::Finite { .. } => States::Discrete(Vec::with_capacity(steps)),
            StateKind::RealVector { dimension } => States::Real {
                dim: dimension,
                values: Vec::with_capacity(steps * dimension),
            },
        }
    }

    /// Appends a state; panics if its kind does not match.
    pub fn push(&mut self, s: StateRef<'_>) {
        match (self, s) {
            (States::Discrete(v), StateRef::Discrete(x)) => v.push(x),
            (States::Real { dim, values }, StateRef::Real(x)) => {
                assert_eq!(*dim, x.len(), "state dimension mismatch");
                values.extend_from_slice(x);
            }
            _ => panic!("state kind mismatch"),
        }
    }
}

impl Serialize for States {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        match self {
            States::Discrete(v) => v.serialize(serializer),
            States::Real { dim, values } => {
                let mut seq = serializer.serialize_seq(Some(values.len() / dim))?;
                for chunk in values.chunks(*dim) {
                    seq.serialize_element(chunk)?;
                }
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for States {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Discrete(Vec<usize>),
            Real(Vec<Vec<f64>>),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Discrete(v) => Ok(States::Discrete(v)),
            Raw::Real(rows) => {
                let dim = rows.first().map_or(1, Vec::len);
                if rows.iter().any(|r| r.len() != dim) || dim == 0 {
                    return Err(serde::de::Error::custom("ragged real-vector states"));
                }
                Ok(States::Real {
                    dim,
                    values: rows.into_iter().flatten().collect(),
                })
            }
        }
    }
}

/// One logged episode `(s_0, a_0, r_0, ..., s_T, a_T, r_T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: States,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: States, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        if states.len() != actions.len() || actions.len() != rewards.len() {
            return Err(Error::invalid(format!(
                "trajectory lengths differ: {} states, {} actions, {} rewards",
                states.len(),
                actions.len(),
                rewards.len()
            )));
        }
        if actions.is_empty() {
            return Err(Error::invalid("empty trajectory"));
        }
        Ok(Trajectory {
            states,
            actions,
            rewards,
        })
    }

    /// Number of steps, `T + 1`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, t: usize) -> StateRef<'_> {
        self.states.get(t)
    }

    pub fn action(&self, t: usize) -> usize {
        self.actions[t]
    }

    pub fn reward(&self, t: usize) -> f64 {
        self.rewards[t]
    }

    pub fn states(&self) -> &States {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Undiscounted return `Σ_t r_t`.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn check(&self, space: &SpaceSpec, bounds: (f64, f64)) -> Result<()> {
        if self.len() != space.steps() {
            return Err(Error::invalid(format!(
                "trajectory has {} steps, horizon requires {}",
                self.len(),
                space.steps()
            )));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= space.n_actions) {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        match (&self.states, space.state) {
            (States::Discrete(v), StateKind::Finite { cardinality }) => {
                if let Some(&s) = v.iter().find(|&&s| s >= cardinality) {
                    return Err(Error::invalid(format!("state {s} out of range")));
                }
            }
            (States::Real { dim, values }, StateKind::RealVector { dimension }) => {
                if *dim != dimension {
                    return Err(Error::invalid("state dimension mismatch"));
                }
                if values.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("non-finite state coordinate"));
                }
            }
            _ => return Err(Error::invalid("state kind does not match the space")),
        }
        let (lo, hi) = bounds;
        if let Some(r) = self
            .rewards
            .iter()
            .find(|r| !(lo..=hi).contains(*r) || !r.is_finite())
        {
            return Err(Error::invalid(format!("reward {r} outside [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Header record of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    space: SpaceSpec,
    reward_bounds: (f64, f64),
    #[serde(default)]
    ratio_bound: Option<f64>,
}

/// An i.i.d. sample of trajectories from one behavior policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    space: SpaceSpec,
    trajectories: Vec<Trajectory>,
    reward_bounds: (f64, f64),
    ratio_bound: Option<f64>,
}

impl Dataset {
    /// Validates every trajectory against `space` and `reward_bounds`.
    pub fn new(
        space: SpaceSpec,
        trajectories: Vec<Trajectory>,
        reward_bounds: (f64, f64),
    ) -> Result<Self> {
        space.validate()?;
        let (lo, hi) = reward_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("bad reward bounds [{lo}, {hi}]")));
        }
        if trajectories.is_empty() {
            return Err(Error::invalid("dataset must contain at least one trajectory"));
        }
        for (i, traj) in trajectories.iter().enumerate() {
            traj.check(&space, reward_bounds)
                .map_err(|e| Error::invalid(format!("trajectory {i}: {e}")))?;
        }
        Ok(Dataset {
            space,
            trajectories,
            reward_bounds,
            ratio_bound: None,
        })
    }

    /// Sets the ratio clip constant used by fitted ratio models.
    pub fn with_ratio_bound(mut self, bound: Option<f64>) -> Result<Self> {
        if let Some(c) = bound {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("ratio bound must be positive, got {c}")));
            }
        }
        self.ratio_bound = bound;
        Ok(self)
    }

    pub fn space(&self) -> &SpaceSpec {
        &self.space
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.space.horizon
    }

    pub fn steps(&self) -> usize {
        self.space.steps()
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    pub fn ratio_bound(&self) -> Option<f64> {
        self.ratio_bound
    }

    /// Sub-dataset made of the listed rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        Ok(Dataset {
            space: self.space,
            trajectories: rows.iter().map(|&i| self.trajectories[i].clone()).collect(),
            reward_bounds: self.reward_bounds,
            ratio_bound: self.ratio_bound,
        })
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let header = Header {
            space: self.space,
            reward_bounds: self.reward_bounds,
            ratio_bound: self.ratio_bound,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for traj in &self.trajectories {
            serde_json::to_writer(&mut w, traj)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header_line = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::invalid("dataset file is empty")),
            }
        };
        let header: Header = serde_json::from_str(&header_line)?;
        let mut trajectories = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let traj: Trajectory = serde_json::from_str(&line)?;
            trajectories.push(Trajectory::new(traj.states, traj.actions, traj.rewards)?);
        }
        Dataset::new(header.space, trajectories, header.reward_bounds)?
            .with_ratio_bound(header.ratio_bound)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.write_jsonl(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::read_jsonl(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let space = SpaceSpec::finite(2, 2, 1).unwrap();
        let trajs = vec![
            Trajectory::new(States::Discrete(vec![0, 1]), vec![1, 0], vec![0.5, 1.0]).unwrap(),
            Trajectory::new(States::Discrete(vec![1, 1]), vec![0, 0], vec![0.0, 0.25]).unwrap(),
        ];
        Dataset::new(space, trajs, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn jsonl_round_trip_discrete() {
        let data = toy().with_ratio_bound(Some(4.0)).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains("\"states\":[0,1]"));
        assert_eq!(Dataset::read_jsonl(&buf[..]).unwrap(), data);
    }

    #[test]
    fn jsonl_round_trip_real() {
        let space = SpaceSpec::real(2, 3, 1).unwrap();
        let states = States::Real {
            dim: 2,
            values: vec![-0.5, 0.0, -0.4999, 0.0012],
        };
        let traj = Trajectory::new(states, vec![2, 1], vec![-1.0, -1.0]).unwrap();
        let data = Dataset::new(space, vec![traj], (-1.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        assert_eq!(Dataset::read_jsonl(&buf[..]).unwrap(), data);
    }

    #[test]
    fn rejects_nonconforming_trajectories() {
        let space = SpaceSpec::finite(2, 2, 1).unwrap();
        let bad_action =
            Trajectory::new(States::Discrete(vec![0, 1]), vec![2, 0], vec![0.0, 0.0]).unwrap();
        assert!(Dataset::new(space, vec![bad_action], (0.0, 1.0)).is_err());
        let bad_reward =
            Trajectory::new(States::Discrete(vec![0, 1]), vec![0, 0], vec![0.0, 2.0]).unwrap();
        assert!(Dataset::new(space, vec![bad_reward], (0.0, 1.0)).is_err());
        let short = Trajectory::new(States::Discrete(vec![0]), vec![0], vec![0.0]).unwrap();
        assert!(Dataset::new(space, vec![short], (0.0, 1.0)).is_err());
        assert!(Dataset::new(space, vec![], (0.0, 1.0)).is_err());
        assert!(Trajectory::new(States::Discrete(vec![0, 1]), vec![0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn subset_preserves_order() {
        let data = toy();
        let sub = data.subset(&[1, 0]).unwrap();
        assert_eq!(sub.trajectory(0), data.trajectory(1));
        assert_eq!(sub.trajectory(1), data.trajectory(0));
    }
}
