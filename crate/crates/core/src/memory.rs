//! Bounded episodic memory of observations and head-turn decisions.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::UnitQuaternion;
use crate::world::{EntitySnapshot, Tag};

pub const RECENT_CAPACITY: usize = 10;
pub const RELEVANT_CAPACITY: usize = 10;

/// Motivations that can justify a head turn, in oracle priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Driver {
    Safety,
    InformationSeeking,
    SocialSchema,
    Interest,
    Habit,
}

impl Driver {
    pub const ALL: [Driver; 5] = [
        Driver::Safety,
        Driver::InformationSeeking,
        Driver::SocialSchema,
        Driver::Interest,
        Driver::Habit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Driver::Safety => "Safety",
            Driver::InformationSeeking => "InformationSeeking",
            Driver::SocialSchema => "SocialSchema",
            Driver::Interest => "Interest",
            Driver::Habit => "Habit",
        }
    }

    /// Lower is more urgent.
    pub fn priority(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Driver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "safety" => Driver::Safety,
            "informationseeking" | "information" => Driver::InformationSeeking,
            "socialschema" | "social" => Driver::SocialSchema,
            "interest" => Driver::Interest,
            "habit" => Driver::Habit,
            _ => return Err(Error::schema("driver", format!("unknown driver {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Entity(String),
    /// Absolute head orientation in the world frame.
    Orientation(UnitQuaternion),
}

impl Target {
    pub fn entity_id(&self) -> Option<&str> {
        match self {
            Target::Entity(id) => Some(id),
            Target::Orientation(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReason {
    /// Unique within one agent's run.
    pub id: u64,
    pub target: Target,
    pub driver: Driver,
    pub rationale: String,
    pub issued_at: f64,
    /// Entities that motivated the action; for an entity target this includes the target.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Insertion sequence number, assigned by [`Fmm::insert`].
    #[serde(default)]
    pub seq: u64,
    pub t: f64,
    pub objects: Vec<EntitySnapshot>,
    pub agents: Vec<EntitySnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub descriptions: Vec<Description>,
    #[serde(default)]
    pub goal_in_view: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_reason: Option<ActionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    /// Set when the relevance came from the local fallback after a scorer failure.
    #[serde(default)]
    pub relevance_fallback: bool,
    #[serde(default)]
    pub executed: bool,
}

impl MemoryEntry {
    /// Splits snapshots into agents (pedestrians and anything tagged social) and objects.
    pub fn from_snapshots(t: f64, snaps: impl IntoIterator<Item = EntitySnapshot>) -> Self {
        let (agents, objects) = snaps.into_iter().partition(|s| s.is_agent || s.has(Tag::Social));
        Self { t, objects, agents, ..Default::default() }
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntitySnapshot> {
        self.objects.iter().chain(self.agents.iter())
    }
}

pub trait RelevanceScorer {
    /// Non-negative relevance of `entry` to `goal`.
    fn score(&self, entry: &MemoryEntry, goal: &str) -> Result<f64>;
}

/// Token and tag overlap with the goal text.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

pub fn goal_tokens(goal: &str) -> BTreeSet<String> {
    goal.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl RelevanceScorer for OverlapScorer {
    fn score(&self, entry: &MemoryEntry, goal: &str) -> Result<f64> {
        let tokens = goal_tokens(goal);
        let mut score = 0usize;
        for e in entry.entities() {
            score += goal_tokens(&e.class_label).intersection(&tokens).count();
            score += e.tags.iter().filter(|t| tokens.contains(t.as_str())).count();
            if e.has(Tag::GoalRelevant) {
                score += 2;
            }
        }
        Ok(score as f64)
    }
}

/// Scores an entry, falling back to [`OverlapScorer`] if `scorer` fails or
/// returns a negative or non-finite value. The flag reports the fallback.
pub fn tag_relevance(entry: &MemoryEntry, goal: &str, scorer: &dyn RelevanceScorer) -> Result<(f64, bool)> {
    if goal.trim().is_empty() {
        return Err(Error::Contract("relevance requires a non-empty goal".into()));
    }
    match scorer.score(entry, goal) {
        Ok(s) if s.is_finite() && s >= 0.0 => Ok((s, false)),
        Ok(s) => {
            log::warn!("relevance scorer returned {s}; using overlap score");
            Ok((OverlapScorer.score(entry, goal)?, true))
        }
        Err(e) => {
            log::warn!("relevance scorer failed: {e}; using overlap score");
            Ok((OverlapScorer.score(entry, goal)?, true))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkOutcome {
    Marked,
    AlreadyMarked,
    Unknown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fmm {
    pub goal: String,
    entries: Vec<MemoryEntry>,
    recent: usize,
    relevant: usize,
    next_seq: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl Fmm {
    pub fn new(goal: &str) -> Self {
        Self::with_capacity(goal, RECENT_CAPACITY, RELEVANT_CAPACITY)
    }

    pub fn with_capacity(goal: &str, recent: usize, relevant: usize) -> Self {
        Self { goal: goal.to_string(), entries: Vec::new(), recent, relevant, next_seq: 0, warnings: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.recent + self.relevant
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&MemoryEntry> {
        self.entries.last()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Appends `entry`, scoring it if it has no relevance yet, then evicts down
    /// to capacity. Returns the assigned sequence number.
    pub fn insert(&mut self, mut entry: MemoryEntry, scorer: &dyn RelevanceScorer) -> Result<u64> {
        if let Some(last) = self.entries.last() {
            if entry.t < last.t {
                return Err(Error::Contract(format!(
                    "memory entry at t={} precedes latest entry at t={}",
                    entry.t, last.t
                )));
            }
        }
        if entry.relevance.is_none() {
            let (score, fallback) = tag_relevance(&entry, &self.goal, scorer)?;
            entry.relevance = Some(score);
            entry.relevance_fallback = fallback;
        }
        entry.seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(entry);
        self.evict();
        Ok(self.next_seq - 1)
    }

    fn evict(&mut self) {
        while self.entries.len() > self.capacity() {
            let pool = self.entries.len() - self.recent;
            let victim = (0..pool)
                .min_by(|&a, &b| retention_key(&self.entries[a]).partial_cmp(&retention_key(&self.entries[b])).unwrap())
                .expect("pool is non-empty when over capacity");
            self.entries.remove(victim);
        }
    }

    pub fn get_mut(&mut self, seq: u64) -> Option<&mut MemoryEntry> {
        self.entries.iter_mut().find(|e| e.seq == seq)
    }

    /// Sets the executed flag on the entry carrying `action_id`.
    pub fn mark_executed(&mut self, action_id: u64) -> MarkOutcome {
        match self.entries.iter_mut().find(|e| e.action_reason.as_ref().is_some_and(|a| a.id == action_id)) {
            Some(e) if e.executed => MarkOutcome::AlreadyMarked,
            Some(e) => {
                e.executed = true;
                MarkOutcome::Marked
            }
            None => {
                let msg = format!("mark_executed: action {action_id} not in memory");
                log::warn!("{msg}");
                self.warnings.push(msg);
                MarkOutcome::Unknown
            }
        }
    }

    /// Entity ids targeted by, or motivating, any retained action.
    pub fn attended(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for a in self.actions() {
            out.extend(a.target.entity_id().map(str::to_string));
            out.extend(a.subjects.iter().cloned());
        }
        out
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionReason> {
        self.entries.iter().filter_map(|e| e.action_reason.as_ref())
    }

    pub fn goal_observed(&self) -> bool {
        self.entries.iter().any(|e| e.goal_in_view)
    }

    pub fn last_action_time(&self) -> Option<f64> {
        self.actions().map(|a| a.issued_at).fold(None, |m, t| Some(m.map_or(t, |m: f64| m.max(t))))
    }

    pub fn count_driver(&self, d: Driver) -> usize {
        self.actions().filter(|a| a.driver == d).count()
    }

    /// One JSON object per line, oldest first.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("memory entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// Ordering used for eviction: lowest relevance goes first, then older, then earlier inserted.
fn retention_key(e: &MemoryEntry) -> (f64, f64, u64) {
    (e.relevance.unwrap_or(0.0), e.t, e.seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use proptest::prelude::*;

    fn snap(id: &str, class: &str, tags: &[Tag]) -> EntitySnapshot {
        EntitySnapshot {
            id: id.into(),
            class_label: class.into(),
            tags: tags.iter().copied().collect(),
            position: Vec3::ZERO,
            velocity: Vec3::ZERO,
            extents: Vec3::new(0.5, 0.5, 0.5),
            hint: String::new(),
            is_agent: false,
        }
    }

    fn scored(t: f64, r: f64) -> MemoryEntry {
        MemoryEntry { t, relevance: Some(r), ..Default::default() }
    }

    /// Global form of the retention policy: last `recent` plus the best
    /// `relevant` of the remainder.
    fn brute_retained(rel: &[f64], recent: usize, relevant: usize) -> BTreeSet<usize> {
        let n = rel.len();
        if n <= recent + relevant {
            return (0..n).collect();
        }
        let mut keep: BTreeSet<usize> = (n - recent..n).collect();
        let mut rest: Vec<usize> = (0..n - recent).collect();
        rest.sort_by(|&a, &b| rel[b].partial_cmp(&rel[a]).unwrap().then(b.cmp(&a)));
        keep.extend(rest.into_iter().take(relevant));
        keep
    }

    #[test]
    fn under_capacity_keeps_all() {
        let mut f = Fmm::new("goal");
        for i in 0..20 {
            f.insert(scored(i as f64, 0.0), &OverlapScorer).unwrap();
        }
        assert_eq!(f.len(), 20);
        f.insert(scored(20.0, 0.0), &OverlapScorer).unwrap();
        assert_eq!(f.len(), 20);
        // all ties: the oldest goes
        assert_eq!(f.entries()[0].seq, 1);
    }

    #[test]
    fn twenty_five_inserts_mod_seven() {
        let rel: Vec<f64> = (0..25).map(|i| (i % 7) as f64).collect();
        let mut f = Fmm::new("goal");
        for (i, r) in rel.iter().enumerate() {
            f.insert(scored(i as f64, *r), &OverlapScorer).unwrap();
        }
        let got: BTreeSet<usize> = f.entries().iter().map(|e| e.seq as usize).collect();
        assert_eq!(got, brute_retained(&rel, 10, 10));
        // first 15 have relevances 0..6,0..6,0; the five dropped are the lowest
        let dropped: BTreeSet<usize> = (0..25).filter(|i| !got.contains(i)).collect();
        assert_eq!(dropped, BTreeSet::from([0, 1, 7, 8, 14]));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut f = Fmm::new("goal");
        f.insert(scored(2.0, 0.0), &OverlapScorer).unwrap();
        assert!(matches!(f.insert(scored(1.0, 0.0), &OverlapScorer), Err(Error::Contract(_))));
        f.insert(scored(2.0, 0.0), &OverlapScorer).unwrap();
    }

    #[test]
    fn overlap_scores() {
        let goal = "find empty seat";
        let none = MemoryEntry::from_snapshots(0.0, [snap("a", "tree", &[])]);
        assert_eq!(OverlapScorer.score(&none, goal).unwrap(), 0.0);
        let rel = MemoryEntry::from_snapshots(0.0, [snap("a", "kiosk", &[Tag::GoalRelevant])]);
        assert_eq!(OverlapScorer.score(&rel, goal).unwrap(), 2.0);
        let seat = MemoryEntry::from_snapshots(0.0, [snap("a", "seat", &[])]);
        assert!(OverlapScorer.score(&seat, goal).unwrap() >= 1.0);
    }

    struct Broken;
    impl RelevanceScorer for Broken {
        fn score(&self, _: &MemoryEntry, _: &str) -> Result<f64> {
            Err(Error::Backend { role: "relevance".into(), message: "down".into() })
        }
    }

    #[test]
    fn scorer_failure_falls_back_and_flags() {
        let e = MemoryEntry::from_snapshots(0.0, [snap("a", "seat", &[])]);
        assert_eq!(tag_relevance(&e, "seat", &Broken).unwrap(), (1.0, true));
        assert!(tag_relevance(&e, "  ", &OverlapScorer).is_err());
        let mut f = Fmm::new("seat");
        f.insert(e, &Broken).unwrap();
        assert!(f.entries()[0].relevance_fallback);
    }

    fn action(id: u64) -> ActionReason {
        ActionReason { id, target: Target::Entity("a".into()), driver: Driver::Interest, rationale: String::new(), issued_at: 0.0, subjects: vec!["a".into()] }
    }

    #[test]
    fn mark_executed_is_idempotent() {
        let mut f = Fmm::new("goal");
        let mut e = scored(0.0, 0.0);
        e.action_reason = Some(action(7));
        f.insert(e, &OverlapScorer).unwrap();
        assert_eq!(f.mark_executed(7), MarkOutcome::Marked);
        assert_eq!(f.mark_executed(7), MarkOutcome::AlreadyMarked);
        assert!(f.entries()[0].executed);
        assert_eq!(f.mark_executed(99), MarkOutcome::Unknown);
        assert_eq!(f.warnings().len(), 1);
    }

    #[test]
    fn jsonl_round_trips() {
        let mut f = Fmm::new("goal");
        let mut e = MemoryEntry::from_snapshots(1.0, [snap("a", "seat", &[Tag::Novel])]);
        e.action_reason = Some(ActionReason {
            target: Target::Orientation(UnitQuaternion::from_yaw_degrees(30.0)),
            ..action(1)
        });
        f.insert(e, &OverlapScorer).unwrap();
        let text = f.to_jsonl();
        assert_eq!(text.lines().count(), 1);
        let back: MemoryEntry = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(&back, &f.entries()[0]);
    }

    #[test]
    fn driver_parsing() {
        for d in Driver::ALL {
            assert_eq!(d.as_str().parse::<Driver>().unwrap(), d);
        }
        assert_eq!("information_seeking".parse::<Driver>().unwrap(), Driver::InformationSeeking);
        assert!("curiosity".parse::<Driver>().is_err());
    }

    proptest! {
        #[test]
        fn retention_matches_global_policy(rel in prop::collection::vec(0u8..5, 0..60)) {
            let mut f = Fmm::new("goal");
            for (i, r) in rel.iter().enumerate() {
                f.insert(scored(i as f64, f64::from(*r)), &OverlapScorer).unwrap();
                let n = i + 1;
                prop_assert!(f.len() <= 20);
                let seqs: BTreeSet<usize> = f.entries().iter().map(|e| e.seq as usize).collect();
                for k in n.saturating_sub(10)..n {
                    prop_assert!(seqs.contains(&k));
                }
                let relf: Vec<f64> = rel[..n].iter().map(|&r| f64::from(r)).collect();
                prop_assert_eq!(seqs, brute_retained(&relf, 10, 10));
                prop_assert!(f.entries().windows(2).all(|w| w[0].t <= w[1].t));
            }
        }
    }
}
