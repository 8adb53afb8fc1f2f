//! Success rate, average turns and hierarchical DCG over episode records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AttrId, ItemId, UserId};
use crate::simulator::{TurnKind, TurnRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("turn {t} outside 1..={max}")]
    TurnOutOfRange { t: usize, max: usize },
    #[error("rank {k} outside 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
}

/// Hierarchical DCG of a success at 1-based turn `t` with the target at
/// 1-based rank `k`, for a `max_turns` by `max_rank` grid.
pub fn hdcg(t: usize, k: usize, max_turns: usize, max_rank: usize) -> Result<f64, MetricsError> {
    if t == 0 || t > max_turns {
        return Err(MetricsError::TurnOutOfRange { t, max: max_turns });
    }
    if k == 0 || k > max_rank {
        return Err(MetricsError::RankOutOfRange { k, max: max_rank });
    }
    let tf = t as f64;
    let outer = 1.0 / (tf + 2.0).log2();
    let inner = 1.0 / (tf + 1.0).log2() - outer;
    Ok(outer + inner / (k as f64 + 1.0).log2())
}

/// Summary of one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub user: UserId,
    pub targets: Vec<ItemId>,
    pub p0: AttrId,
    pub success: bool,
    /// Turn at which the episode ended.
    pub turns: usize,
    /// 1-based rank of the accepted item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Whether answer filtering ever removed a target from the candidates.
    pub target_filtered: bool,
    pub transcript: Vec<TurnRecord>,
}

/// `(success, end turn, rank)` read back from a transcript alone.
pub fn outcome_from_transcript(transcript: &[TurnRecord]) -> (bool, usize, Option<usize>) {
    for (i, rec) in transcript.iter().enumerate() {
        if rec.kind == TurnKind::Recommend {
            if let Some(v) = rec.accepted {
                let rank = rec.recommended.iter().position(|x| *x == v).map(|r| r + 1);
                return (true, i + 1, rank);
            }
        }
    }
    (false, transcript.len(), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    /// Success rate within the turn limit.
    pub sr: f64,
    /// Average turns, counting failures as the turn limit.
    pub at: f64,
    pub hdcg: f64,
    /// `sr_curve[t - 1]` is the fraction of episodes that succeeded by turn `t`.
    pub sr_curve: Vec<f64>,
    /// Fraction of episodes in which a target was filtered out.
    pub target_filtered: f64,
}

/// Aggregates episodes; `max_rank` is the recommendation list length.
pub fn compute_metrics(records: &[EpisodeRecord], max_turns: usize, max_rank: usize) -> Metrics {
    let n = records.len();
    if n == 0 {
        return Metrics {
            episodes: 0,
            sr: 0.0,
            at: 0.0,
            hdcg: 0.0,
            sr_curve: vec![0.0; max_turns],
            target_filtered: 0.0,
        };
    }
    let mut successes = 0usize;
    let mut turns = 0usize;
    let mut gain = 0.0;
    let mut by_turn = vec![0usize; max_turns];
    let mut filtered = 0usize;
    for r in records {
        if r.target_filtered {
            filtered += 1;
        }
        match (r.success, r.rank) {
            (true, Some(k)) if r.turns >= 1 && r.turns <= max_turns => {
                successes += 1;
                turns += r.turns;
                by_turn[r.turns - 1] += 1;
                gain += hdcg(r.turns, k, max_turns, max_rank.max(k)).unwrap_or(0.0);
            }
            _ => turns += max_turns,
        }
    }
    let nf = n as f64;
    let mut acc = 0usize;
    let sr_curve = by_turn
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / nf
        })
        .collect();
    Metrics {
        episodes: n,
        sr: successes as f64 / nf,
        at: turns as f64 / nf,
        hdcg: gain / nf,
        sr_curve,
        target_filtered: filtered as f64 / nf,
    }
}

/// Re-derives success, end turn and rank of each record from its transcript
/// before aggregating.
pub fn metrics_from_transcripts(records: &[EpisodeRecord], max_turns: usize, max_rank: usize) -> Metrics {
    let rebuilt: Vec<EpisodeRecord> = records
        .iter()
        .map(|r| {
            let (success, turns, rank) = outcome_from_transcript(&r.transcript);
            EpisodeRecord {
                success,
                turns,
                rank,
                ..r.clone()
            }
        })
        .collect();
    compute_metrics(&rebuilt, max_turns, max_rank)
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[EpisodeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(body: &str) -> Result<Vec<EpisodeRecord>, serde_json::Error> {
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(success: bool, turns: usize, rank: Option<usize>) -> EpisodeRecord {
        EpisodeRecord {
            episode: 0,
            user: UserId(0),
            targets: vec![ItemId(0)],
            p0: AttrId(0),
            success,
            turns,
            rank,
            target_filtered: false,
            transcript: Vec::new(),
        }
    }

    #[test]
    fn hdcg_top_corner_is_one() {
        assert!((hdcg(1, 1, 15, 10).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hdcg_rejects_out_of_range() {
        assert!(hdcg(0, 1, 15, 10).is_err());
        assert!(hdcg(16, 1, 15, 10).is_err());
        assert!(hdcg(3, 0, 15, 10).is_err());
        assert!(hdcg(3, 11, 15, 10).is_err());
    }

    #[test]
    fn ratio_and_mean() {
        let five = [
            rec(true, 3, Some(1)),
            rec(false, 15, None),
            rec(true, 5, Some(2)),
            rec(false, 15, None),
            rec(true, 1, Some(1)),
        ];
        assert!((compute_metrics(&five, 15, 10).sr - 0.6).abs() < 1e-15);
        let three = [rec(false, 15, None), rec(true, 5, Some(1)), rec(true, 10, Some(1))];
        assert!((compute_metrics(&three, 15, 10).at - 10.0).abs() < 1e-15);
    }
}
