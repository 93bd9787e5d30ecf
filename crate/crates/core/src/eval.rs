//! Agreement between extracted collaboration maps and human annotations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collab::CollabMap;
use crate::error::{Error, Result};

/// Tolerance on `sum == 1` for inputs to [`jaccard`].
pub const NORMALIZED_TOLERANCE: f64 = 1e-9;

/// Five-level subjective rating of an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Rating {
    Unacceptable = 1,
    Problematic = 2,
    Acceptable = 3,
    Good = 4,
    Perfect = 5,
}

impl TryFrom<u8> for Rating {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Rating::Unacceptable,
            2 => Rating::Problematic,
            3 => Rating::Acceptable,
            4 => Rating::Good,
            5 => Rating::Perfect,
            _ => return Err(Error::InvalidParameter(format!("rating {} outside 1..=5", v))),
        })
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r as u8
    }
}

/// Labeled strengths for the stones around one target move.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub board_id: String,
    pub entries: Vec<((usize, usize), f64)>,
    pub rating: Option<Rating>,
}

impl AnnotationSet {
    pub fn stones(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn strengths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

/// Parses `board_id,row,col,strength` rows plus an optional `rating,<1-5>`
/// line. A leading header row is skipped.
pub fn parse_annotations(text: &str, path: &Path, board: (usize, usize)) -> Result<AnnotationSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut board_id: Option<String> = None;
    let mut entries = Vec::new();
    let mut rating = None;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "rating" {
            let [_, v] = fields[..] else {
                return Err(err(n, "expected rating,<1-5>".into()));
            };
            let v: u8 = v.parse().map_err(|_| err(n, format!("bad rating {:?}", v)))?;
            rating = Some(Rating::try_from(v).map_err(|e| err(n, e.to_string()))?);
            continue;
        }
        if fields[0] == "board_id" && entries.is_empty() {
            continue;
        }
        let [id, r, c, s] = fields[..] else {
            return Err(err(n, format!("expected 4 fields, found {}", fields.len())));
        };
        let r: usize = r.parse().map_err(|_| err(n, format!("bad row {:?}", r)))?;
        let c: usize = c.parse().map_err(|_| err(n, format!("bad col {:?}", c)))?;
        let s: f64 = s.parse().map_err(|_| err(n, format!("bad strength {:?}", s)))?;
        if r >= board.0 || c >= board.1 {
            return Err(err(n, format!("({}, {}) is off the board", r, c)));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(err(n, format!("strength {} must be non-negative", s)));
        }
        match &board_id {
            Some(b) if b != id => {
                return Err(err(n, format!("board id {:?} differs from {:?}", id, b)));
            }
            None => board_id = Some(id.to_string()),
            _ => {}
        }
        if entries.iter().any(|&(p, _)| p == (r, c)) {
            return Err(err(n, format!("({}, {}) annotated twice", r, c)));
        }
        entries.push(((r, c), s));
    }
    let board_id = board_id.ok_or_else(|| err(0, "no annotated stones".into()))?;
    Ok(AnnotationSet {
        board_id,
        entries,
        rating,
    })
}

pub fn load_annotations(path: &Path, board: (usize, usize)) -> Result<AnnotationSet> {
    parse_annotations(&fs::read_to_string(path)?, path, board)
}

/// `q_v = |C_v|` over the given stones.
pub fn collab_strengths(map: &CollabMap, stones: &[(usize, usize)]) -> Result<Vec<f64>> {
    if stones.is_empty() {
        return Err(Error::config("no stones to score"));
    }
    stones
        .iter()
        .map(|&(r, c)| {
            if r >= map.height() || c >= map.width() {
                Err(Error::config(format!("stone ({}, {}) is off the map", r, c)))
            } else {
                Ok(map.get(r, c).abs())
            }
        })
        .collect()
}

/// `p / sum(p)`; `Degenerate` for an all-zero vector.
pub fn normalize_dist(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("distribution entries must be finite and >= 0".into()));
    }
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all-zero strengths cannot be normalized".into()));
    }
    Ok(p.iter().map(|v| v / total).collect())
}

/// Weighted Jaccard `sum min / sum max` of two normalized distributions.
pub fn jaccard(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("{} vs {} entries", p.len(), q.len())));
    }
    for v in [p, q] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > NORMALIZED_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "jaccard needs normalized inputs (sum {})",
                sum
            )));
        }
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        lo += a.min(b);
        hi += a.max(b);
    }
    Ok(lo / hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardMetric {
    pub board_id: String,
    /// `None` when the map is zero on every annotated stone.
    pub jaccard: Option<f64>,
    pub n_stones: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating: Option<Rating>,
}

pub fn board_metric(ann: &AnnotationSet, map: &CollabMap) -> Result<BoardMetric> {
    let p = normalize_dist(&ann.strengths())?;
    let q = collab_strengths(map, &ann.stones())?;
    let jaccard = match normalize_dist(&q) {
        Ok(q) => Some(jaccard(&p, &q)?),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BoardMetric {
        board_id: ann.board_id.clone(),
        jaccard,
        n_stones: ann.entries.len(),
        rating: ann.rating,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub boards: Vec<BoardMetric>,
    /// Mean over boards with a defined score; an undefined score counts as 0.
    pub mean_jaccard: f64,
    pub mean_rating: Option<f64>,
    /// Ids present on only one side.
    pub unmatched: Vec<String>,
}

impl MetricReport {
    pub fn new(boards: Vec<BoardMetric>, unmatched: Vec<String>) -> Result<Self> {
        if boards.is_empty() {
            return Err(Error::config("no boards to evaluate"));
        }
        let n = boards.len() as f64;
        let mean_jaccard = boards.iter().map(|b| b.jaccard.unwrap_or(0.0)).sum::<f64>() / n;
        let ratings: Vec<f64> = boards.iter().filter_map(|b| b.rating.map(|r| u8::from(r) as f64)).collect();
        let mean_rating = (!ratings.is_empty()).then(|| ratings.iter().sum::<f64>() / ratings.len() as f64);
        Ok(MetricReport {
            boards,
            mean_jaccard,
            mean_rating,
            unmatched,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(jaccard(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(jaccard(&[0.5, 0.5, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0 / 3.0);
        assert!(jaccard(&[1.0, 1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_dist(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(normalize_dist(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(normalize_dist(&[4.2]).unwrap(), vec![1.0]);
        assert!(matches!(normalize_dist(&[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn strengths_restrict_to_stones() {
        let mut m = CollabMap::zeros(2, 2);
        m.values = Tensor::from_vec(&[2, 2, 1], vec![-0.3, 9.0, 0.1, 0.0]).unwrap();
        assert_eq!(collab_strengths(&m, &[(0, 0), (1, 0)]).unwrap(), vec![0.3, 0.1]);
        assert!(collab_strengths(&m, &[]).is_err());
    }

    #[test]
    fn annotation_parsing() {
        let p = Path::new("a.csv");
        let text = "rating,5\nb7,0,0,1\nb7,1,2,0.5\nb7,2,2,2\n";
        let a = parse_annotations(text, p, (9, 9)).unwrap();
        assert_eq!(a.entries.len(), 3);
        assert_eq!(a.rating, Some(Rating::Perfect));
        assert_eq!(a.board_id, "b7");
        let bad = parse_annotations("b,0,0,1\nb,1,1,-1\n", p, (9, 9)).unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 2, .. }), "{}", bad);
        assert!(parse_annotations("b,9,0,1\n", p, (9, 9)).is_err());
        assert!(parse_annotations("rating,6\nb,0,0,1\n", p, (9, 9)).is_err());
    }

    #[test]
    fn report_means() {
        let b = |j: Option<f64>, r: Option<Rating>| BoardMetric {
            board_id: "x".into(),
            jaccard: j,
            n_stones: 2,
            rating: r,
        };
        let rep = MetricReport::new(vec![b(Some(1.0), Some(Rating::Good)), b(Some(0.5), None)], vec![]).unwrap();
        assert_eq!(rep.mean_jaccard, 0.75);
        assert_eq!(rep.mean_rating, Some(4.0));
        assert!(MetricReport::new(vec![], vec![]).is_err());
    }
}
