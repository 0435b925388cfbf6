//! Topic taxonomy handling: parse, truncate, and sample slash-delimited
//! multi-grained topic paths that seed task brainstorming.

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_MAX_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("empty topic at line {line}")]
    EmptyTopic { line: usize },
    #[error("max_depth must be >= 2 and even, got {0}")]
    BadMaxDepth(usize),
    #[error("requested {requested} topics but pool holds {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("failed to read topic file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A slash-delimited topic path; depth is the segment count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicPath {
    segments: Vec<String>,
}

impl TopicPath {
    /// Parses one line into a topic path. Empty interior segments (from
    /// doubled separators) are dropped; a line with no segments is an error
    /// reported at `line` (1-based).
    pub fn parse(line: &str, line_no: usize) -> Result<Self, TaxonomyError> {
        let segments: Vec<String> = line
            .trim()
            .split('/')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        if segments.is_empty() {
            return Err(TaxonomyError::EmptyTopic { line: line_no });
        }
        Ok(TopicPath { segments })
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Caps the path at `max_depth` segments by keeping the first
    /// `max_depth/2` and last `max_depth/2` and dropping the middle.
    /// Shallow paths pass through unchanged. `max_depth` must be >= 2 and
    /// even so the path splits into a head half and a tail half.
    pub fn truncate(&self, max_depth: usize) -> Result<Self, TaxonomyError> {
        if max_depth < 2 || max_depth % 2 != 0 {
            return Err(TaxonomyError::BadMaxDepth(max_depth));
        }
        if self.depth() <= max_depth {
            return Ok(self.clone());
        }
        let half = max_depth / 2;
        let mut segments = self.segments[..half].to_vec();
        segments.extend_from_slice(&self.segments[self.depth() - half..]);
        Ok(TopicPath { segments })
    }
}

impl fmt::Display for TopicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.segments.join("/"))
    }
}

/// An immutable pool of truncated, de-duplicated topics.
#[derive(Debug, Clone)]
pub struct TopicPool {
    topics: Vec<TopicPath>,
}

impl TopicPool {
    /// Builds a pool from raw lines: blank lines and `#` comments are
    /// skipped, every path is truncated to `max_depth`, and duplicate
    /// truncations collapse to their first occurrence.
    pub fn from_lines<'a, I>(lines: I, max_depth: usize) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut topics = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.into_iter().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let path = TopicPath::parse(trimmed, i + 1)?.truncate(max_depth)?;
            if seen.insert(path.clone()) {
                topics.push(path);
            }
        }
        Ok(TopicPool { topics })
    }

    pub fn from_file(path: &Path, max_depth: usize) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_lines(text.lines(), max_depth)
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn topics(&self) -> &[TopicPath] {
        &self.topics
    }

    /// Uniform sampling without replacement; identical `(pool, n, seed)`
    /// yields an identical list.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<TopicPath>, TaxonomyError> {
        if n > self.topics.len() {
            return Err(TaxonomyError::SampleTooLarge {
                requested: n,
                available: self.topics.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = index_sample(&mut rng, self.topics.len(), n);
        Ok(idx.into_iter().map(|i| self.topics[i].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_single_segment() {
        let p = TopicPath::parse("Arts", 1).unwrap();
        assert_eq!(p.depth(), 1);
        assert_eq!(p.to_string(), "Arts");
    }

    #[test]
    fn parse_preserves_inner_punctuation() {
        let p = TopicPath::parse("Sports/Hockey/Ice_Hockey/Players", 3).unwrap();
        assert_eq!(p.depth(), 4);
        assert_eq!(p.segments()[2], "Ice_Hockey");
    }

    #[test]
    fn parse_empty_line_reports_line_number() {
        let err = TopicPath::parse("   ", 17).unwrap_err();
        assert!(matches!(err, TaxonomyError::EmptyTopic { line: 17 }));
    }

    #[test]
    fn truncate_keeps_head_and_tail_halves() {
        let p = TopicPath::parse("Arts/Movies/Titles/3/36_Hours_-_1964/Cast_and_Crew", 1).unwrap();
        let t = p.truncate(4).unwrap();
        assert_eq!(t.to_string(), "Arts/Movies/36_Hours_-_1964/Cast_and_Crew");
    }

    #[test]
    fn truncate_leaves_shallow_paths_alone() {
        let p = TopicPath::parse("Business/Food_and_Related_Products/Produce/Frozen", 1).unwrap();
        assert_eq!(p.truncate(4).unwrap(), p);
    }

    #[test]
    fn truncate_seven_segment_path() {
        let p = TopicPath::parse(
            "Science/Technology/Structural_Engineering/Bridge/History/People/Beedy,_Daniel",
            1,
        )
        .unwrap();
        let t = p.truncate(4).unwrap();
        assert_eq!(t.to_string(), "Science/Technology/People/Beedy,_Daniel");
    }

    #[test]
    fn truncate_rejects_bad_max_depth() {
        let p = TopicPath::parse("a/b/c", 1).unwrap();
        assert!(matches!(p.truncate(1), Err(TaxonomyError::BadMaxDepth(1))));
        assert!(matches!(p.truncate(3), Err(TaxonomyError::BadMaxDepth(3))));
        assert!(matches!(p.truncate(0), Err(TaxonomyError::BadMaxDepth(0))));
    }

    #[test]
    fn pool_collapses_duplicate_truncations_and_skips_comments() {
        let lines = [
            "# odp sample",
            "Arts/Movies/Titles/3/36_Hours_-_1964/Cast_and_Crew",
            "Arts/Movies/XYZ/ABC/36_Hours_-_1964/Cast_and_Crew",
            "",
            "Arts",
        ];
        let pool = TopicPool::from_lines(lines, 4).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn sample_is_deterministic_and_exhaustive() {
        let lines: Vec<String> = (0..10).map(|i| format!("T{i}/a/b")).collect();
        let pool =
            TopicPool::from_lines(lines.iter().map(String::as_str), 4).unwrap();
        let a = pool.sample(3, 7).unwrap();
        let b = pool.sample(3, 7).unwrap();
        assert_eq!(a, b);

        let all = pool.sample(10, 99).unwrap();
        let mut sorted: Vec<String> = all.iter().map(|p| p.to_string()).collect();
        sorted.sort();
        let mut expected: Vec<String> = pool.topics().iter().map(|p| p.to_string()).collect();
        expected.sort();
        assert_eq!(sorted, expected);
    }

    #[test]
    fn sample_too_large_reports_both_counts() {
        let pool = TopicPool::from_lines(["a", "b"], 4).unwrap();
        match pool.sample(11, 0) {
            Err(TaxonomyError::SampleTooLarge {
                requested: 11,
                available: 2,
            }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    fn arb_path() -> impl Strategy<Value = TopicPath> {
        proptest::collection::vec("[A-Za-z0-9_,-]{1,8}", 1..10)
            .prop_map(|segments| TopicPath { segments })
    }

    proptest! {
        #[test]
        fn truncation_is_idempotent_and_bounded(p in arb_path()) {
            let once = p.truncate(4).unwrap();
            let twice = once.truncate(4).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.depth() <= 4);
            if p.depth() > 4 {
                prop_assert_eq!(once.depth(), 4);
            }
        }

        #[test]
        fn truncation_preserves_surviving_segments(p in arb_path()) {
            let t = p.truncate(4).unwrap();
            // Every kept segment matches the original at head or tail.
            for (i, seg) in t.segments().iter().take(2).enumerate() {
                prop_assert_eq!(seg, &p.segments()[i]);
            }
            let kept_tail = t.depth().min(2);
            for i in 0..kept_tail {
                prop_assert_eq!(
                    &t.segments()[t.depth() - 1 - i],
                    &p.segments()[p.depth() - 1 - i]
                );
            }
        }
    }
}
