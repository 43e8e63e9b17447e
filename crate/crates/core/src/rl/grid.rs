use std::fmt::Write as _;
use std::path::Path;

use super::policy::Decision;
use super::rollout::{Agent, PolicyAgent};
use super::{state_dim, PolicyCheckpoint, RlError};

/// Reference forces (x, y) in N of the comparison table.
pub const TABLE_REFERENCES: [[f64; 2]; 6] = [[1.0, -1.0], [2.0, -1.0], [2.0, 0.0], [3.0, 0.0], [1.0, 1.0], [2.0, 1.0]];

const MANIFEST: &str = "grid.txt";
const MAGIC: &str = "softfin-grid 1";

/// Policies keyed by the fixed reference each was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBank {
    entries: Vec<([f64; 2], PolicyCheckpoint)>,
}

impl GridBank {
    /// Every checkpoint must carry its reference; keys must be distinct.
    pub fn new(policies: Vec<PolicyCheckpoint>) -> Result<Self, RlError> {
        if policies.is_empty() {
            return Err(RlError::EmptyBank);
        }
        let mut entries = Vec::with_capacity(policies.len());
        for p in policies {
            let key = p
                .reference
                .ok_or_else(|| RlError::Format("grid policy without a reference".into()))?;
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(RlError::Format(format!("duplicate grid key {key:?}")));
            }
            entries.push((key, p));
        }
        entries.sort_by(|a, b| lex(&a.0, &b.0));
        Ok(GridBank { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys in lexicographic order.
    pub fn keys(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }

    pub fn get(&self, key: [f64; 2]) -> Option<&PolicyCheckpoint> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, p)| p)
    }

    pub fn policies(&self) -> impl Iterator<Item = &PolicyCheckpoint> {
        self.entries.iter().map(|(_, p)| p)
    }

    /// One checkpoint per entry plus a text manifest. Returns the size in
    /// bytes of each checkpoint file.
    pub fn save(&self, dir: &Path) -> Result<Vec<u64>, RlError> {
        std::fs::create_dir_all(dir).map_err(|e| RlError::Format(format!("{}: {e}", dir.display())))?;
        let mut manifest = format!("{MAGIC}\n");
        let mut sizes = Vec::new();
        for (i, (k, p)) in self.entries.iter().enumerate() {
            let file = format!("policy_{i}.ckpt");
            p.save(&dir.join(&file))?;
            sizes.push(std::fs::metadata(dir.join(&file)).map(|m| m.len()).unwrap_or(0));
            writeln!(manifest, "{file} {:?} {:?} {} {}", k[0], k[1], p.seed, p.steps).unwrap();
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).map_err(|e| RlError::Format(format!("{}: {e}", path.display())))?;
        Ok(sizes)
    }

    pub fn load(dir: &Path) -> Result<Self, RlError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| RlError::Format(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(RlError::Format(format!("{}: not a grid manifest", path.display())));
        }
        let mut policies = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || RlError::Format(format!("{}: bad line `{line}`", path.display()));
            if f.len() != 5 {
                return Err(bad());
            }
            let key = [f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?];
            let p = PolicyCheckpoint::load(&dir.join(f[0]))?;
            if p.reference != Some(key) {
                return Err(RlError::Format(format!("{}: key does not match checkpoint", f[0])));
            }
            policies.push(p);
        }
        Self::new(policies)
    }
}

fn lex(a: &[f64; 2], b: &[f64; 2]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Nearest trained reference (Euclidean); ties go to the lexicographically
/// smallest key.
pub fn grid_select<'a>(bank: &'a GridBank, reference: [f64; 2]) -> &'a PolicyCheckpoint {
    let d2 = |k: &[f64; 2]| (k[0] - reference[0]).powi(2) + (k[1] - reference[1]).powi(2);
    // entries are sorted, so the first minimum wins ties
    let mut best = &bank.entries[0];
    for e in &bank.entries[1..] {
        if d2(&e.0) < d2(&best.0) {
            best = e;
        }
    }
    &best.1
}

/// Switches to the nearest bank policy whenever the reference in the state
/// maps to a different key, starting that policy with fresh memory.
pub struct GridAgent<'a> {
    bank: &'a GridBank,
    k: usize,
    agents: Vec<(Option<[f64; 2]>, PolicyAgent<'a>)>,
    buf: Vec<Decision>,
}

impl<'a> GridAgent<'a> {
    pub fn new(bank: &'a GridBank) -> Self {
        let k = bank.policies().next().expect("bank is non-empty").policy.k;
        GridAgent {
            bank,
            k,
            agents: Vec::new(),
            buf: Vec::new(),
        }
    }
}

impl Agent for GridAgent<'_> {
    fn history(&self) -> usize {
        self.k
    }

    fn begin(&mut self, n: usize) {
        let first = &self.bank.policies().next().expect("bank is non-empty").policy;
        self.agents = (0..n).map(|_| (None, PolicyAgent::mean(first))).collect();
    }

    fn act(&mut self, states: &[f64], out: &mut Vec<Decision>) -> Result<(), RlError> {
        out.clear();
        for (s, (current, agent)) in states.chunks(state_dim(self.k)).zip(&mut self.agents) {
            let reference = [s[1], s[2]];
            let chosen = grid_select(self.bank, reference);
            if *current != chosen.reference {
                *agent = PolicyAgent::mean(&chosen.policy);
                agent.begin(1);
                *current = chosen.reference;
            }
            agent.act(s, &mut self.buf)?;
            out.push(self.buf[0]);
        }
        Ok(())
    }
}
