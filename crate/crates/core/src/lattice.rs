//! Lattice geometry: sites, unit steps, nearest-neighbour paths and their
//! per-site outgoing-step statistics.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported total dimension d.
pub const MAX_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimensions {
    pub d0: usize,
    pub d1: usize,
    pub d_star: usize,
}

impl Dimensions {
    pub fn new(d0: usize, d1: usize, d_star: usize) -> Result<Self> {
        let dims = Dimensions { d0, d1, d_star };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        if self.d_star < 1 || self.d_star > self.d0 {
            return Err(Error::Dimensions(format!(
                "need 1 <= d_star <= d0, got d_star={} d0={}",
                self.d_star, self.d0
            )));
        }
        if self.d1 < 1 {
            return Err(Error::Dimensions("need d1 >= 1".into()));
        }
        if self.d() > MAX_DIM {
            return Err(Error::Dimensions(format!("d={} exceeds {}", self.d(), MAX_DIM)));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d0 + self.d1
    }

    /// True for a step along one of the last d1 axes.
    pub fn is_q_step(&self, s: Step) -> bool {
        s.axis() >= self.d0
    }

    /// True for a step along one of the first d_star axes.
    pub fn is_star_step(&self, s: Step) -> bool {
        s.axis() < self.d_star
    }
}

/// A unit vector ±e_i. The axis is stored 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    axis: u8,
    neg: bool,
}

impl Step {
    pub fn new(axis: usize, sign: i32) -> Step {
        assert!(axis < MAX_DIM && (sign == 1 || sign == -1));
        Step { axis: axis as u8, neg: sign < 0 }
    }

    pub fn plus(axis: usize) -> Step {
        Step::new(axis, 1)
    }

    pub fn minus(axis: usize) -> Step {
        Step::new(axis, -1)
    }

    pub fn axis(self) -> usize {
        self.axis as usize
    }

    pub fn sign(self) -> i32 {
        if self.neg {
            -1
        } else {
            1
        }
    }

    /// Index in 0..2d: +e_i ↦ 2i, −e_i ↦ 2i+1.
    pub fn index(self) -> usize {
        2 * self.axis as usize + self.neg as usize
    }

    pub fn from_index(i: usize) -> Step {
        Step::new(i / 2, if i % 2 == 0 { 1 } else { -1 })
    }

    pub fn opposite(self) -> Step {
        Step { axis: self.axis, neg: !self.neg }
    }

    /// All 2d unit vectors of Z^d, in index order.
    pub fn all(d: usize) -> impl Iterator<Item = Step> + Clone {
        (0..2 * d).map(Step::from_index)
    }

    /// Parses "+3" / "-3" (1-based axis).
    pub fn parse(s: &str) -> Result<Step> {
        let s = s.trim();
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => return Err(Error::Direction(s.to_string())),
        };
        let axis: usize = rest.parse().map_err(|_| Error::Direction(s.to_string()))?;
        if axis == 0 || axis > MAX_DIM {
            return Err(Error::Direction(s.to_string()));
        }
        Ok(Step::new(axis - 1, sign))
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.neg { '-' } else { '+' }, self.axis + 1)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Site {
    coords: [i32; MAX_DIM],
}

impl Site {
    pub fn origin() -> Site {
        Site::default()
    }

    pub fn from_coords(c: &[i32]) -> Site {
        assert!(c.len() <= MAX_DIM);
        let mut coords = [0; MAX_DIM];
        coords[..c.len()].copy_from_slice(c);
        Site { coords }
    }

    pub fn coord(&self, i: usize) -> i32 {
        self.coords[i]
    }

    pub fn coords(&self, d: usize) -> &[i32] {
        &self.coords[..d]
    }

    pub fn shifted(&self, s: Step) -> Site {
        let mut out = *self;
        out.coords[s.axis()] += s.sign();
        out
    }

    pub fn add(&self, other: &Site) -> Site {
        let mut out = *self;
        for (a, b) in out.coords.iter_mut().zip(other.coords.iter()) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Site) -> Site {
        let mut out = *self;
        for (a, b) in out.coords.iter_mut().zip(other.coords.iter()) {
            *a -= b;
        }
        out
    }

    pub fn l1_norm(&self) -> i64 {
        self.coords.iter().map(|c| c.unsigned_abs() as i64).sum()
    }

    pub fn l1_dist(&self, other: &Site) -> i64 {
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| (a - b).unsigned_abs() as i64)
            .sum()
    }

    /// The unit step from `self` to `other`, if they are neighbours.
    pub fn step_to(&self, other: &Site) -> Option<Step> {
        let diff = other.sub(self);
        if diff.l1_norm() != 1 {
            return None;
        }
        let axis = diff.coords.iter().position(|&c| c != 0)?;
        Some(Step::new(axis, diff.coords[axis]))
    }

    /// Keeps the last `d1` of the first `d` coordinates.
    pub fn project_d1(&self, d: usize, d1: usize) -> Site {
        Site::from_coords(&self.coords[d - d1..d])
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.coords.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        write!(f, "{:?}", &self.coords[..last])
    }
}

/// Outgoing-step counts at one site, indexed by `Step::index`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct StepCounts([u32; 2 * MAX_DIM]);

impl StepCounts {
    pub fn get(&self, s: Step) -> u32 {
        self.0[s.index()]
    }

    pub fn add(&mut self, s: Step) {
        self.0[s.index()] += 1;
    }

    pub fn remove(&mut self, s: Step) {
        debug_assert!(self.0[s.index()] > 0);
        self.0[s.index()] -= 1;
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn sum_over<I: IntoIterator<Item = Step>>(&self, dirs: I) -> u32 {
        dirs.into_iter().map(|s| self.get(s)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn with(mut self, s: Step) -> StepCounts {
        self.add(s);
        self
    }
}

impl fmt::Debug for StepCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (i, &c) in self.0.iter().enumerate() {
            if c > 0 {
                m.entry(&Step::from_index(i).to_string(), &c);
            }
        }
        m.finish()
    }
}

/// A nearest-neighbour path with incrementally maintained departure counts.
#[derive(Clone, Debug)]
pub struct PathHistory {
    positions: Vec<Site>,
    steps: Vec<Step>,
    stats: HashMap<Site, StepCounts>,
}

impl PartialEq for PathHistory {
    fn eq(&self, other: &Self) -> bool {
        self.positions == other.positions
    }
}

impl PathHistory {
    pub fn new(origin: Site) -> Self {
        PathHistory { positions: vec![origin], steps: Vec::new(), stats: HashMap::new() }
    }

    pub fn from_steps(origin: Site, steps: &[Step]) -> Self {
        let mut h = PathHistory::new(origin);
        for &s in steps {
            h.push(s);
        }
        h
    }

    /// Builds a path from its site sequence.
    pub fn from_sites(sites: &[Site]) -> Result<Self> {
        let mut h = PathHistory::new(*sites.first().ok_or_else(|| Error::Spec("empty path".into()))?);
        for w in sites.windows(2) {
            let s = w[0].step_to(&w[1]).ok_or_else(|| Error::Spec(format!("{:?} -> {:?} is not a unit step", w[0], w[1])))?;
            h.push(s);
        }
        Ok(h)
    }

    pub fn push(&mut self, s: Step) {
        let here = self.terminal();
        self.stats.entry(here).or_default().add(s);
        self.positions.push(here.shifted(s));
        self.steps.push(s);
    }

    pub fn pop(&mut self) -> Option<Step> {
        let s = self.steps.pop()?;
        self.positions.pop();
        let here = self.terminal();
        let counts = self.stats.get_mut(&here).expect("stats out of sync");
        counts.remove(s);
        if counts.is_empty() {
            self.stats.remove(&here);
        }
        Some(s)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn origin(&self) -> Site {
        self.positions[0]
    }

    pub fn terminal(&self) -> Site {
        *self.positions.last().unwrap()
    }

    pub fn site(&self, i: usize) -> Site {
        self.positions[i]
    }

    pub fn sites(&self) -> &[Site] {
        &self.positions
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Departure counts from `at` (all zero if never left from there).
    pub fn site_stats(&self, at: &Site) -> StepCounts {
        self.stats.get(at).copied().unwrap_or_default()
    }

    pub fn all_stats(&self) -> &HashMap<Site, StepCounts> {
        &self.stats
    }

    /// Number of past departures from `at` along a step in `dirs`.
    pub fn edge_local_time<I: IntoIterator<Item = Step>>(&self, at: &Site, dirs: I) -> u32 {
        self.site_stats(at).sum_over(dirs)
    }

    pub fn departures(&self, at: &Site) -> u32 {
        self.site_stats(at).total()
    }

    /// Whether `x` is among the sites x_0..x_{n-1} (sites departed from).
    pub fn departed_from(&self, x: &Site) -> bool {
        self.stats.contains_key(x)
    }

    pub fn concat(&self, suffix: &PathHistory) -> Result<PathHistory> {
        if suffix.origin() != self.terminal() {
            let d = MAX_DIM;
            return Err(Error::MismatchedJunction {
                expected: self.terminal().coords(d).to_vec(),
                found: suffix.origin().coords(d).to_vec(),
            });
        }
        let mut out = self.clone();
        for &s in &suffix.steps {
            out.push(s);
        }
        Ok(out)
    }

    pub fn recompute_stats(&self) -> HashMap<Site, StepCounts> {
        let mut stats: HashMap<Site, StepCounts> = HashMap::new();
        for (i, &s) in self.steps.iter().enumerate() {
            stats.entry(self.positions[i]).or_default().add(s);
        }
        stats
    }

    /// Sites of the path projected onto the last `d1` of `d` axes.
    pub fn project_d1(&self, d: usize, d1: usize) -> Vec<Site> {
        self.positions.iter().map(|x| x.project_d1(d, d1)).collect()
    }
}
