//! Preference statistics over ranking data: pairwise proportions, exact
//! one-sided binomial tests, significance tiers, the Hasse diagram of the
//! significant preferences, and per-method rank summaries.
//!
//! Ranking datasets are plain text, one record per line:
//!
//! ```text
//! participant,pair,TEXTUAL:3,SWITCH:1,ALTERNATE:2,UNET:4
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Rank 1 is best.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::Registry;
use crate::pipeline::BlendMethod;

const METHODS: [BlendMethod; 4] = BlendMethod::BLENDS;

/// One participant's full ranking of the four blends of a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub participant: String,
    pub pair: String,
    /// Rank of each method, in [`BlendMethod::BLENDS`] order.
    ranks: [u8; 4],
}

impl RankingRecord {
    /// `ranks` in [`BlendMethod::BLENDS`] order; must be a permutation of 1..=4.
    pub fn new(participant: impl Into<String>, pair: impl Into<String>, ranks: [u8; 4]) -> Result<Self> {
        let participant = participant.into();
        let pair = pair.into();
        for (what, id) in [("participant", &participant), ("pair", &pair)] {
            if id.is_empty() || id.contains([',', ':', '\n', '\r']) || id.trim() != id {
                return Err(Error::InvalidConfig(format!("{what} id {id:?} is not a plain token")));
            }
        }
        let mut seen = [false; 4];
        for &r in &ranks {
            if !(1..=4).contains(&r) || std::mem::replace(&mut seen[r as usize - 1], true) {
                return Err(Error::InvalidConfig(format!(
                    "ranks {ranks:?} are not a permutation of 1..=4"
                )));
            }
        }
        Ok(Self {
            participant,
            pair,
            ranks,
        })
    }

    /// Build from explicit `(method, rank)` entries covering each blend exactly once.
    pub fn from_entries(
        participant: impl Into<String>,
        pair: impl Into<String>,
        entries: &[(BlendMethod, u8)],
    ) -> Result<Self> {
        let mut ranks = [0u8; 4];
        for &(method, rank) in entries {
            let i = method
                .blend_index()
                .ok_or_else(|| Error::InvalidConfig(format!("{method} cannot be ranked")))?;
            if ranks[i] != 0 {
                return Err(Error::InvalidConfig(format!("{method} ranked twice")));
            }
            ranks[i] = rank;
        }
        if ranks.contains(&0) {
            return Err(Error::InvalidConfig("ranking must cover all four methods".into()));
        }
        Self::new(participant, pair, ranks)
    }

    pub fn rank(&self, method: BlendMethod) -> Option<u8> {
        method.blend_index().map(|i| self.ranks[i])
    }

    pub fn ranks(&self) -> [u8; 4] {
        self.ranks
    }

    pub fn to_line(&self) -> String {
        let mut line = format!("{},{}", self.participant, self.pair);
        for (m, r) in METHODS.iter().zip(self.ranks) {
            write!(line, ",{m}:{r}").expect("writing to a String");
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!("expected 6 comma-separated fields, got {}", fields.len())));
        }
        let mut entries = Vec::with_capacity(4);
        for f in &fields[2..] {
            let (m, r) = f
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("entry {f:?} is not METHOD:RANK")))?;
            let method: BlendMethod = m.parse()?;
            let rank: u8 = r
                .parse()
                .map_err(|_| Error::Parse(format!("rank {r:?} is not an integer")))?;
            entries.push((method, rank));
        }
        Self::from_entries(fields[0], fields[1], &entries)
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<RankingRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = RankingRecord::parse_line(line).map_err(|e| Error::MalformedRecord {
            location: format!("line {}", i + 1),
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn format_dataset(records: &[RankingRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

pub fn read_dataset(path: &Path) -> Result<Vec<RankingRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|e| match e {
        Error::MalformedRecord { location, reason } => Error::MalformedRecord {
            location: format!("{}:{location}", path.display()),
            reason,
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignificanceTier {
    None,
    /// p < 0.05
    Significant,
    /// p < 0.01
    Very,
    /// p < 0.001
    Extreme,
}

impl SignificanceTier {
    pub fn name(self) -> &'static str {
        match self {
            SignificanceTier::None => "NONE",
            SignificanceTier::Significant => "SIGNIFICANT",
            SignificanceTier::Very => "VERY",
            SignificanceTier::Extreme => "EXTREME",
        }
    }
}

impl fmt::Display for SignificanceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn significance_tier(p: f64) -> SignificanceTier {
    if p < 0.001 {
        SignificanceTier::Extreme
    } else if p < 0.01 {
        SignificanceTier::Very
    } else if p < 0.05 {
        SignificanceTier::Significant
    } else {
        SignificanceTier::None
    }
}

/// `ln C(n, k)` as a sum of logs; exact enough for n up to ~10^6.
fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|j| ((n - k + j) as f64 / j as f64).ln()).sum()
}

/// `P(X >= k)` for `X ~ Bin(n, 1/2)` when the terms from `k` on are
/// non-increasing (`2k + 1 >= n`): one log-space head, then ratios.
fn upper_tail_decreasing(k: u64, n: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let ln_head = ln_choose(n, k) - n as f64 * std::f64::consts::LN_2;
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    for i in k..n {
        term *= (n - i) as f64 / (i + 1) as f64;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    (ln_head + sum.ln()).exp()
}

/// Exact one-sided tail `P(X >= k)` for `X ~ Bin(n, 1/2)`.
pub fn binomial_tail(k: u64, n: u64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::OutOfRange {
            name: "k",
            value: k as f64,
            range: "0 <= k <= n, n >= 1",
        });
    }
    if k == 0 {
        return Ok(1.0);
    }
    if 2 * k + 1 >= n {
        Ok(upper_tail_decreasing(k, n).min(1.0))
    } else {
        // P(X >= k) = 1 - P(X <= k-1) = 1 - P(X >= n-k+1) by symmetry
        Ok((1.0 - upper_tail_decreasing(n - k + 1, n)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTestResult {
    pub method_a: BlendMethod,
    pub method_b: BlendMethod,
    /// Records where `method_a` ranked better than `method_b`.
    pub k: u64,
    pub n: u64,
    pub proportion: f64,
    pub p_value: f64,
    pub tier: SignificanceTier,
}

impl PreferenceTestResult {
    pub fn from_counts(method_a: BlendMethod, method_b: BlendMethod, k: u64, n: u64) -> Result<Self> {
        let p_value = binomial_tail(k, n)?;
        Ok(Self {
            method_a,
            method_b,
            k,
            n,
            proportion: k as f64 / n as f64,
            p_value,
            tier: significance_tier(p_value),
        })
    }

    pub fn reversed(&self) -> Self {
        Self::from_counts(self.method_b, self.method_a, self.n - self.k, self.n).expect("k <= n holds")
    }

    /// Oriented so the preferred method comes first (`k >= n - k`).
    pub fn oriented(&self) -> Self {
        if 2 * self.k >= self.n {
            *self
        } else {
            self.reversed()
        }
    }

    /// `"A < B"`: A is preferred to B.
    pub fn label(&self) -> String {
        format!("{} < {}", self.method_a, self.method_b)
    }
}

pub fn pairwise_preference(records: &[RankingRecord], a: BlendMethod, b: BlendMethod) -> Result<PreferenceTestResult> {
    if records.is_empty() {
        return Err(Error::Empty("no ranking records".into()));
    }
    if a == b || a.blend_index().is_none() || b.blend_index().is_none() {
        return Err(Error::InvalidConfig(format!("cannot compare {a} with {b}")));
    }
    let k = records
        .iter()
        .filter(|r| r.rank(a).expect("blend method") < r.rank(b).expect("blend method"))
        .count() as u64;
    PreferenceTestResult::from_counts(a, b, k, records.len() as u64)
}

/// All six method pairs, each oriented preferred-first.
pub fn all_pairwise(records: &[RankingRecord]) -> Result<Vec<PreferenceTestResult>> {
    let mut out = Vec::with_capacity(6);
    for (i, &a) in METHODS.iter().enumerate() {
        for &b in &METHODS[i + 1..] {
            out.push(pairwise_preference(records, a, b)?.oriented());
        }
    }
    Ok(out)
}

/// A Hasse-diagram edge: `better` is significantly preferred over `worse`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceEdge {
    pub better: BlendMethod,
    pub worse: BlendMethod,
    pub tier: SignificanceTier,
    pub proportion: f64,
    pub p_value: f64,
}

/// Edges in transitive-reduction form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceOrder {
    pub methods: Vec<BlendMethod>,
    pub edges: Vec<PreferenceEdge>,
}

impl PreferenceOrder {
    pub fn has_edge(&self, better: BlendMethod, worse: BlendMethod) -> bool {
        self.edges.iter().any(|e| e.better == better && e.worse == worse)
    }

    pub fn connected(&self, a: BlendMethod, b: BlendMethod) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// Graphviz rendering, best methods on top. Line weight encodes the tier:
    /// bold for p < 0.001, solid for p < 0.01, dashed otherwise.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph preferences {\n  rankdir=TB;\n  node [shape=box];\n");
        for m in &self.methods {
            writeln!(s, "  {m};").expect("writing to a String");
        }
        for e in &self.edges {
            let style = match e.tier {
                SignificanceTier::Extreme => "style=bold, penwidth=3",
                SignificanceTier::Very => "style=solid",
                _ => "style=dashed",
            };
            writeln!(
                s,
                "  {} -> {} [{style}, label=\"{:.2}\"];",
                e.better, e.worse, e.proportion
            )
            .expect("writing to a String");
        }
        s.push_str("}\n");
        s
    }
}

/// Significant preferences at `tier_min` or stronger, reduced to Hasse form.
/// A cycle among significant preferences is an error naming the cycle.
pub fn preference_order(results: &[PreferenceTestResult], tier_min: SignificanceTier) -> Result<PreferenceOrder> {
    let mut methods = BTreeSet::new();
    let mut seen_pairs = BTreeSet::new();
    let mut edges = Vec::new();
    for r in results {
        if r.method_a == r.method_b {
            return Err(Error::InvalidConfig(format!("{} compared with itself", r.method_a)));
        }
        let key = (r.method_a.min(r.method_b), r.method_a.max(r.method_b));
        if !seen_pairs.insert(key) {
            return Err(Error::InvalidConfig(format!(
                "pair {} / {} listed twice",
                key.0, key.1
            )));
        }
        methods.insert(r.method_a);
        methods.insert(r.method_b);
        let o = r.oriented();
        if 2 * o.k > o.n && o.tier >= tier_min && o.tier != SignificanceTier::None {
            edges.push(PreferenceEdge {
                better: o.method_a,
                worse: o.method_b,
                tier: o.tier,
                proportion: o.proportion,
                p_value: o.p_value,
            });
        }
    }
    let methods: Vec<BlendMethod> = methods.into_iter().collect();
    if let Some(cycle) = find_cycle(&methods, &edges) {
        let names: Vec<&str> = cycle.iter().map(|m| m.name()).collect();
        return Err(Error::PreferenceCycle(names.join(" < ")));
    }

    let reachable_without = |from: BlendMethod, to: BlendMethod, skip: usize| {
        let mut stack = vec![from];
        let mut visited = BTreeSet::new();
        while let Some(m) = stack.pop() {
            for (i, e) in edges.iter().enumerate() {
                if i != skip && e.better == m && visited.insert(e.worse) {
                    if e.worse == to {
                        return true;
                    }
                    stack.push(e.worse);
                }
            }
        }
        false
    };
    let reduced = edges
        .iter()
        .enumerate()
        .filter(|&(i, e)| !reachable_without(e.better, e.worse, i))
        .map(|(_, e)| *e)
        .collect();
    Ok(PreferenceOrder {
        methods,
        edges: reduced,
    })
}

fn find_cycle(methods: &[BlendMethod], edges: &[PreferenceEdge]) -> Option<Vec<BlendMethod>> {
    // 0 unvisited, 1 on stack, 2 done
    fn visit(
        m: BlendMethod,
        edges: &[PreferenceEdge],
        state: &mut BTreeMap<BlendMethod, u8>,
        path: &mut Vec<BlendMethod>,
    ) -> Option<Vec<BlendMethod>> {
        state.insert(m, 1);
        path.push(m);
        for e in edges.iter().filter(|e| e.better == m) {
            match state.get(&e.worse).copied().unwrap_or(0) {
                1 => {
                    let start = path.iter().position(|&x| x == e.worse).expect("on stack");
                    let mut cycle = path[start..].to_vec();
                    cycle.push(e.worse);
                    return Some(cycle);
                }
                0 => {
                    if let Some(c) = visit(e.worse, edges, state, path) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        path.pop();
        state.insert(m, 2);
        None
    }
    let mut state = BTreeMap::new();
    for &m in methods {
        if state.get(&m).copied().unwrap_or(0) == 0 {
            if let Some(c) = visit(m, edges, &mut state, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// `"~0"` below 0.001, otherwise three decimals.
pub fn format_p_value(p: f64) -> String {
    if p < 0.001 {
        "~0".into()
    } else {
        format!("{p:.3}")
    }
}

/// CSV with columns `group,Preference,Proportion,p-value,k,n,tier`.
pub fn results_csv(rows: &[(String, PreferenceTestResult)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "Preference", "Proportion", "p-value", "k", "n", "tier"])?;
    for (group, r) in rows {
        w.write_record([
            group.clone(),
            r.label(),
            format!("{:.2}", r.proportion),
            format_p_value(r.p_value),
            r.k.to_string(),
            r.n.to_string(),
            r.tier.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Pair,
    Category,
    All,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pair" => Ok(GroupBy::Pair),
            "category" => Ok(GroupBy::Category),
            "all" => Ok(GroupBy::All),
            _ => Err(Error::Parse(format!("unknown grouping {s:?}"))),
        }
    }
}

/// Split records into named groups. Category grouping looks each pair up in
/// `registry`; unknown pairs are an error.
pub fn group_records<'a>(
    records: &'a [RankingRecord],
    group_by: GroupBy,
    registry: &Registry,
) -> Result<Vec<(String, Vec<&'a RankingRecord>)>> {
    let mut groups: BTreeMap<String, Vec<&RankingRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::All => "ALL".to_string(),
            GroupBy::Pair => r.pair.clone(),
            GroupBy::Category => registry
                .category_of(&r.pair)
                .ok_or_else(|| Error::MalformedRecord {
                    location: format!("participant {} pair {}", r.participant, r.pair),
                    reason: "pair is not in the registry".into(),
                })?
                .to_string(),
        };
        groups.entry(key).or_default().push(r);
    }
    Ok(groups.into_iter().collect())
}

/// Pairwise tables per group, in group order.
pub fn pairwise_by_group(
    records: &[RankingRecord],
    group_by: GroupBy,
    registry: &Registry,
) -> Result<Vec<(String, PreferenceTestResult)>> {
    let mut rows = Vec::new();
    for (group, members) in group_records(records, group_by, registry)? {
        let owned: Vec<RankingRecord> = members.into_iter().cloned().collect();
        for r in all_pairwise(&owned)? {
            rows.push((group.clone(), r));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: BlendMethod,
    pub mean: f64,
    /// `mean` rounded to three significant digits.
    pub mean_3sf: f64,
    /// Lower median of the ranks.
    pub median: u8,
    /// Most frequent rank; the smallest one when several tie.
    pub mode: u8,
    pub mode_tied: bool,
    /// How often each rank 1..=4 was given.
    pub counts: [u64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub methods: Vec<MethodSummary>,
}

pub fn round_sig3(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 3 - x.abs().log10().floor() as i32 - 1;
    let scale = 10f64.powi(digits);
    (x * scale).round() / scale
}

fn summarize(method: BlendMethod, records: &[&RankingRecord]) -> MethodSummary {
    let mut counts = [0u64; 4];
    let mut total = 0u64;
    for r in records {
        let rank = r.rank(method).expect("blend method");
        counts[rank as usize - 1] += 1;
        total += rank as u64;
    }
    let n = records.len() as u64;
    let mean = total as f64 / n as f64;
    // lower median: the ceil(n/2)-th smallest rank
    let target = n.div_ceil(2);
    let mut acc = 0;
    let mut median = 4;
    for (i, &c) in counts.iter().enumerate() {
        acc += c;
        if acc >= target {
            median = i as u8 + 1;
            break;
        }
    }
    let max = *counts.iter().max().expect("four counts");
    let mode = counts.iter().position(|&c| c == max).expect("max exists") as u8 + 1;
    MethodSummary {
        method,
        mean,
        mean_3sf: round_sig3(mean),
        median,
        mode,
        mode_tied: counts.iter().filter(|&&c| c == max).count() > 1,
        counts,
    }
}

/// Mean, median and mode of each method's rank within each group.
pub fn rank_summary(records: &[RankingRecord], group_by: GroupBy, registry: &Registry) -> Result<Vec<GroupSummary>> {
    if records.is_empty() {
        log::warn!("rank summary over an empty dataset");
        return Ok(Vec::new());
    }
    Ok(group_records(records, group_by, registry)?
        .into_iter()
        .map(|(group, members)| GroupSummary {
            n: members.len(),
            methods: METHODS.iter().map(|&m| summarize(m, &members)).collect(),
            group,
        })
        .collect())
}

/// CSV with columns `group,method,n,mean,median,mode,mode_tied`.
pub fn summary_csv(groups: &[GroupSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "method", "n", "mean", "median", "mode", "mode_tied"])?;
    for g in groups {
        for m in &g.methods {
            w.write_record([
                g.group.clone(),
                m.method.to_string(),
                g.n.to_string(),
                m.mean_3sf.to_string(),
                m.median.to_string(),
                m.mode.to_string(),
                m.mode_tied.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use BlendMethod::*;

    fn rec(ranks: [u8; 4]) -> RankingRecord {
        RankingRecord::new("p", "lion-cat", ranks).unwrap()
    }

    #[test]
    fn binomial_small_cases() {
        assert_eq!(binomial_tail(0, 7).unwrap(), 1.0);
        assert!((binomial_tail(7, 7).unwrap() - 0.5f64.powi(7)).abs() < 1e-15);
        assert!((binomial_tail(2, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!(binomial_tail(3, 2).is_err());
        assert!(binomial_tail(0, 0).is_err());
        assert!(binomial_tail(50, 100).unwrap() >= 0.5);
    }

    #[test]
    fn binomial_large_n_stays_finite() {
        let p = binomial_tail(50_500, 100_000).unwrap();
        assert!(p > 0.0 && p < 0.001, "{p}");
        let q = binomial_tail(49_000, 100_000).unwrap();
        assert!(q > 0.999 && q <= 1.0);
        assert!(binomial_tail(100_000, 100_000).unwrap() >= 0.0);
    }

    #[test]
    fn reference_tails() {
        let p = binomial_tail(1122, 2200).unwrap();
        assert!((0.15..=0.35).contains(&p), "{p}");
        let q = binomial_tail(285, 500).unwrap();
        assert!((q - 1.00015e-3).abs() < 1e-7, "{q}");
        assert_eq!(significance_tier(q), SignificanceTier::Very);
    }

    #[test]
    fn tiers_are_strict() {
        assert_eq!(significance_tier(0.0005), SignificanceTier::Extreme);
        assert_eq!(significance_tier(0.001), SignificanceTier::Very);
        assert_eq!(significance_tier(0.01), SignificanceTier::Significant);
        assert_eq!(significance_tier(0.03), SignificanceTier::Significant);
        assert_eq!(significance_tier(0.05), SignificanceTier::None);
        assert_eq!(significance_tier(0.5), SignificanceTier::None);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(RankingRecord::new("p", "x", [1, 2, 2, 4]).is_err());
        assert!(RankingRecord::new("p", "x", [0, 1, 2, 3]).is_err());
        assert!(RankingRecord::new("p", "x", [1, 2, 3, 5]).is_err());
        assert!(RankingRecord::new("p,q", "x", [1, 2, 3, 4]).is_err());
        assert!(RankingRecord::from_entries("p", "x", &[(Textual, 1), (Switch, 2), (Unet, 3)]).is_err());
        assert!(RankingRecord::from_entries("p", "x", &[(Textual, 1), (Switch, 2), (Unet, 3), (Baseline, 4)]).is_err());
    }

    #[test]
    fn line_round_trip_and_order_independence() {
        let r = rec([3, 1, 2, 4]);
        let line = r.to_line();
        assert_eq!(line, "p,lion-cat,TEXTUAL:3,SWITCH:1,ALTERNATE:2,UNET:4");
        assert_eq!(RankingRecord::parse_line(&line).unwrap(), r);
        let shuffled = "p,lion-cat,UNET:4,ALTERNATE:2,TEXTUAL:3,SWITCH:1";
        assert_eq!(RankingRecord::parse_line(shuffled).unwrap(), r);
    }

    #[test]
    fn malformed_line_is_located() {
        let text = "# header\np,a,TEXTUAL:1,SWITCH:2,ALTERNATE:3,UNET:4\np,b,TEXTUAL:1,SWITCH:1,ALTERNATE:3,UNET:4\n";
        match parse_dataset(text) {
            Err(Error::MalformedRecord { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_wins_give_quarter() {
        let records = vec![rec([1, 2, 3, 4]), rec([2, 1, 3, 4])];
        let r = pairwise_preference(&records, Alternate, Unet).unwrap();
        assert_eq!((r.k, r.n), (2, 2));
        assert_eq!(r.proportion, 1.0);
        assert!((r.p_value - 0.25).abs() < 1e-15);
        let back = pairwise_preference(&records, Unet, Alternate).unwrap();
        assert_eq!(back.proportion + r.proportion, 1.0);
        assert!(pairwise_preference(&[], Alternate, Unet).is_err());
    }

    fn result(a: BlendMethod, b: BlendMethod, k: u64, n: u64) -> PreferenceTestResult {
        PreferenceTestResult::from_counts(a, b, k, n).unwrap()
    }

    #[test]
    fn transitive_edge_is_reduced() {
        let results = [
            result(Switch, Unet, 600, 1000),
            result(Unet, Textual, 600, 1000),
            result(Switch, Textual, 700, 1000),
        ];
        let order = preference_order(&results, SignificanceTier::Significant).unwrap();
        assert!(order.has_edge(Switch, Unet));
        assert!(order.has_edge(Unet, Textual));
        assert!(!order.has_edge(Switch, Textual));
    }

    #[test]
    fn balanced_results_have_no_edges() {
        let results: Vec<_> = (0..4)
            .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
            .map(|(i, j)| result(METHODS[i], METHODS[j], 500, 1000))
            .collect();
        assert!(preference_order(&results, SignificanceTier::Significant)
            .unwrap()
            .edges
            .is_empty());
    }

    #[test]
    fn cycles_are_reported() {
        let results = [
            result(Switch, Unet, 700, 1000),
            result(Unet, Textual, 700, 1000),
            result(Textual, Switch, 700, 1000),
        ];
        match preference_order(&results, SignificanceTier::Significant) {
            Err(Error::PreferenceCycle(c)) => assert!(c.contains("SWITCH") && c.contains("TEXTUAL")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tier_threshold_filters_edges() {
        // p ~ 0.028: significant but not very
        let results = [result(Switch, Unet, 60, 100)];
        assert_eq!(
            preference_order(&results, SignificanceTier::Significant).unwrap().edges.len(),
            1
        );
        assert!(preference_order(&results, SignificanceTier::Very).unwrap().edges.is_empty());
    }

    #[test]
    fn dot_encodes_tiers() {
        let results = [result(Switch, Unet, 700, 1000), result(Unet, Textual, 60, 100)];
        let dot = preference_order(&results, SignificanceTier::Significant)
            .unwrap()
            .to_dot();
        assert!(dot.contains("SWITCH -> UNET [style=bold"));
        assert!(dot.contains("UNET -> TEXTUAL [style=dashed"));
    }

    #[test]
    fn summary_of_single_record() {
        let registry = Registry::bundled();
        let s = rank_summary(&[rec([1, 2, 3, 4])], GroupBy::All, &registry).unwrap();
        let means: Vec<f64> = s[0].methods.iter().map(|m| m.mean).collect();
        assert_eq!(means, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(s[0].methods.iter().all(|m| !m.mode_tied));
    }

    #[test]
    fn lower_median_and_tied_mode() {
        let registry = Registry::bundled();
        let s = rank_summary(&[rec([1, 2, 3, 4]), rec([2, 1, 3, 4])], GroupBy::All, &registry).unwrap();
        let t = &s[0].methods[0];
        assert_eq!((t.median, t.mode, t.mode_tied), (1, 1, true));
        assert_eq!(t.mean, 1.5);
    }

    #[test]
    fn category_grouping_needs_known_pairs() {
        let registry = Registry::bundled();
        let unknown = RankingRecord::new("p", "nope", [1, 2, 3, 4]).unwrap();
        assert!(rank_summary(&[unknown], GroupBy::Category, &registry).is_err());
        let s = rank_summary(&[rec([1, 2, 3, 4])], GroupBy::Category, &registry).unwrap();
        assert_eq!(s[0].group, "SAME");
    }

    #[test]
    fn sig3_rounding() {
        assert_eq!(round_sig3(2.34567), 2.35);
        assert_eq!(round_sig3(1.0), 1.0);
        assert_eq!(round_sig3(3.0049), 3.0);
        assert_eq!(round_sig3(0.012345), 0.0123);
    }

    #[test]
    fn p_value_format() {
        assert_eq!(format_p_value(0.0004), "~0");
        assert_eq!(format_p_value(0.047), "0.047");
        let csv = results_csv(&[("ALL".into(), result(Alternate, Textual, 1320, 2200))]).unwrap();
        assert!(csv.contains("ALL,ALTERNATE < TEXTUAL,0.60,~0,1320,2200,EXTREME"));
    }
}
