use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::topology::ProcessId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    RoundRobin,
    SeededRandom,
    AdversarialAging,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::RoundRobin,
        PolicyKind::SeededRandom,
        PolicyKind::AdversarialAging,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            PolicyKind::RoundRobin => "rr",
            PolicyKind::SeededRandom => "random",
            PolicyKind::AdversarialAging => "adversarial",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" | "round-robin" => Ok(PolicyKind::RoundRobin),
            "random" | "seeded-random" => Ok(PolicyKind::SeededRandom),
            "adversarial" | "adversarial-aging" => Ok(PolicyKind::AdversarialAging),
            other => Err(format!("unknown policy `{other}` (expected rr, random, adversarial)")),
        }
    }
}

/// How the scheduler picks the next process.
///
/// `aging_bound` is the number of consecutive decisions a process may be
/// passed over before it is forced; round-robin ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchedulerPolicy {
    pub kind: PolicyKind,
    pub seed: u64,
    pub aging_bound: u64,
}

impl SchedulerPolicy {
    pub fn new(kind: PolicyKind, seed: u64, aging_bound: u64) -> Self {
        assert!(aging_bound >= 1, "aging bound must be positive");
        SchedulerPolicy {
            kind,
            seed,
            aging_bound,
        }
    }

    pub fn round_robin() -> Self {
        Self::new(PolicyKind::RoundRobin, 0, 1)
    }
}

/// Probability that the adversary keeps running the process it ran last.
const STICKINESS: f64 = 0.85;

/// Stateful process picker implementing a [`SchedulerPolicy`].
#[derive(Debug, Clone)]
pub struct Picker {
    policy: SchedulerPolicy,
    rng: ChaCha8Rng,
    ages: Vec<u64>,
    next_rr: ProcessId,
    last: Option<ProcessId>,
}

impl Picker {
    pub fn new(policy: SchedulerPolicy, n: usize) -> Self {
        Picker {
            policy,
            rng: ChaCha8Rng::seed_from_u64(policy.seed),
            ages: vec![0; n],
            next_rr: 0,
            last: None,
        }
    }

    /// Decisions since each process last ran.
    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    fn overdue(&self) -> Option<ProcessId> {
        let bound = self.policy.aging_bound;
        let (p, &age) = self
            .ages
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (age >= bound).then_some(p)
    }

    pub fn pick(&mut self) -> ProcessId {
        let n = self.ages.len();
        let chosen = match self.policy.kind {
            PolicyKind::RoundRobin => {
                let p = self.next_rr;
                self.next_rr = (p + 1) % n;
                p
            }
            PolicyKind::SeededRandom => match self.overdue() {
                Some(p) => p,
                None => self.rng.random_range(0..n),
            },
            PolicyKind::AdversarialAging => match self.overdue() {
                Some(p) => p,
                None => match self.last {
                    Some(p) if self.rng.random_bool(STICKINESS) => p,
                    _ => self.rng.random_range(0..n),
                },
            },
        };
        for age in &mut self.ages {
            *age += 1;
        }
        self.ages[chosen] = 0;
        self.last = Some(chosen);
        chosen
    }
}
