//! Phrase segmentation reports.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

/// Phrase lengths: words after one active boundary up to and including the
/// next. Sentence ends count as active boundaries.
pub fn phrase_lengths(segments: &[Vec<Range<usize>>]) -> Vec<usize> {
    segments.iter().flatten().map(|r| r.len()).collect()
}

/// Tokens joined by spaces with `//` after every phrase end.
pub fn marked_text(tokens: &[String], segments: &[Vec<Range<usize>>]) -> String {
    let mut parts = Vec::with_capacity(tokens.len() * 2);
    for r in segments.iter().flatten() {
        for t in r.clone() {
            parts.push(tokens[t].as_str());
        }
        parts.push("//");
    }
    parts.join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhraseLengthStats {
    pub count: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    /// Length to number of phrases.
    pub histogram: BTreeMap<usize, usize>,
}

impl PhraseLengthStats {
    pub fn from_lengths(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut histogram = BTreeMap::new();
        for &l in lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        Some(PhraseLengthStats {
            count: lengths.len(),
            mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
            min: *lengths.iter().min().expect("nonempty"),
            max: *lengths.iter().max().expect("nonempty"),
            histogram,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DocSegmentation {
    pub doc_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub marked: String,
    pub pi: Vec<f64>,
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub top_word: Option<String>,
    pub top_word_index: Option<usize>,
    pub phrase_lengths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentReport {
    pub documents: Vec<DocSegmentation>,
    pub phrase_lengths: Option<PhraseLengthStats>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use emhrnn::model::{segments_from, Document, IndicatorAssignment};

    fn doc(lens: &[usize]) -> Document {
        Document::new(lens.iter().map(|&n| vec![vec![0.0]; n]).collect(), 0).unwrap()
    }

    fn words(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn single_sentence_example() {
        let d = doc(&[5]);
        let segs = segments_from(&d, &IndicatorAssignment::from_bits(&[0, 0, 1, 0, 1])).unwrap();
        assert_eq!(marked_text(&words(5), &segs), "w1 w2 w3 // w4 w5 //");
        let lengths = phrase_lengths(&segs);
        assert_eq!(lengths, vec![3, 2]);
        assert_eq!(PhraseLengthStats::from_lengths(&lengths).unwrap().mean, 2.5);
    }

    #[test]
    fn all_active_gives_unit_phrases() {
        let d = doc(&[5, 5]);
        let segs = segments_from(&d, &IndicatorAssignment::ones(10)).unwrap();
        let stats = PhraseLengthStats::from_lengths(&phrase_lengths(&segs)).unwrap();
        assert_eq!((stats.mean, stats.min, stats.max, stats.count), (1.0, 1, 1, 10));
    }

    #[test]
    fn empty_lengths_have_no_stats() {
        assert!(PhraseLengthStats::from_lengths(&[]).is_none());
    }
}
