use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unlabeled dependency tree over a sentence. `heads[i]` is the 0-based
/// position of token `i`'s head, or `None` when `i` attaches to ROOT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyArcs {
    heads: Vec<Option<usize>>,
    root: usize,
}

impl DependencyArcs {
    /// Validates a single root, in-range heads and acyclicity. Projectivity
    /// is reported by [`DependencyArcs::is_projective`], not enforced here,
    /// so gold files with crossing arcs can still be loaded.
    pub fn new(heads: Vec<Option<usize>>) -> Result<Self> {
        let n = heads.len();
        let roots: Vec<usize> = (0..n).filter(|&i| heads[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Structure(format!(
                "expected exactly one ROOT attachment, found {}",
                roots.len()
            )));
        }
        for (i, h) in heads.iter().enumerate() {
            if let Some(h) = *h {
                if h >= n {
                    return Err(Error::Structure(format!("head {h} of token {i} out of range")));
                }
                if h == i {
                    return Err(Error::Structure(format!("token {i} heads itself")));
                }
            }
        }
        // every token must reach the root within n steps
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = heads[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(Error::Structure(format!("cycle through token {start}")));
                }
            }
        }
        Ok(DependencyArcs {
            heads,
            root: roots[0],
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn head_of(&self, i: usize) -> Option<usize> {
        self.heads[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// No two arcs cross when drawn above the sentence (ROOT arc included,
    /// treating ROOT as a position left of the first token).
    pub fn is_projective(&self) -> bool {
        let arcs: Vec<(isize, isize)> = self
            .heads
            .iter()
            .enumerate()
            .map(|(d, h)| {
                let h = h.map_or(-1, |h| h as isize);
                let d = d as isize;
                (h.min(d), h.max(d))
            })
            .collect();
        for (a, &(l1, r1)) in arcs.iter().enumerate() {
            for &(l2, r2) in &arcs[a + 1..] {
                if (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1) {
                    return false;
                }
            }
        }
        true
    }

    /// 1-based head indices with 0 for ROOT, as written in dependency files.
    pub fn to_one_based(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.map_or(0, |h| h + 1)).collect()
    }

    pub fn from_one_based(heads: &[usize]) -> Result<Self> {
        Self::new(
            heads
                .iter()
                .map(|&h| if h == 0 { None } else { Some(h - 1) })
                .collect(),
        )
    }
}

/// One sentence of a dependency file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSentence {
    pub tokens: Vec<String>,
    pub arcs: DependencyArcs,
}

/// Writes `index<TAB>token<TAB>head` lines, blank line between sentences.
pub fn write_dependency_file<S: AsRef<str>>(sentences: &[(Vec<S>, DependencyArcs)]) -> String {
    let mut out = String::new();
    for (tokens, arcs) in sentences {
        for (i, (tok, head)) in tokens.iter().zip(arcs.to_one_based()).enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, tok.as_ref(), head);
        }
        out.push('\n');
    }
    out
}

/// Parses a dependency file. Each sentence is validated for a single root
/// and acyclicity; projectivity is left to the caller.
pub fn parse_dependency_file(text: &str, path: &str) -> Result<Vec<DepSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut first_line = 1;
    let flush = |tokens: &mut Vec<String>, heads: &mut Vec<usize>, line: usize, out: &mut Vec<DepSentence>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let arcs = DependencyArcs::from_one_based(heads).map_err(|e| Error::Parse {
            path: path.to_string(),
            line,
            msg: e.to_string(),
        })?;
        out.push(DepSentence {
            tokens: std::mem::take(tokens),
            arcs,
        });
        heads.clear();
        Ok(())
    };
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut heads, first_line, &mut out)?;
            continue;
        }
        if tokens.is_empty() {
            first_line = lineno;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let idx: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad index {:?}", fields[0])))?;
        if idx != tokens.len() + 1 {
            return Err(bad(format!("index {idx} out of sequence")));
        }
        let head: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad head {:?}", fields[2])))?;
        tokens.push(fields[1].to_string());
        heads.push(head);
    }
    flush(&mut tokens, &mut heads, first_line, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dog_chasing_cat_arcs() {
        // the dog is chasing the cat
        let arcs = DependencyArcs::from_one_based(&[2, 4, 4, 0, 6, 4]).unwrap();
        assert_eq!(arcs.root(), 3);
        assert!(arcs.is_projective());
    }

    #[test]
    fn rejects_two_roots_and_cycles() {
        assert!(DependencyArcs::from_one_based(&[0, 0]).is_err());
        assert!(DependencyArcs::from_one_based(&[2, 3, 2, 0]).is_err());
        assert!(DependencyArcs::from_one_based(&[5, 0]).is_err());
    }

    #[test]
    fn crossing_arcs_detected() {
        // 1←3, 2←4 cross
        let arcs = DependencyArcs::from_one_based(&[3, 4, 0, 3]).unwrap();
        assert!(!arcs.is_projective());
    }

    #[test]
    fn file_round_trip() {
        let arcs = DependencyArcs::from_one_based(&[2, 4, 4, 0, 6, 4]).unwrap();
        let toks = vec!["the", "dog", "is", "chasing", "the", "cat"];
        let text = write_dependency_file(&[(toks.clone(), arcs.clone()), (vec!["a", "b"], DependencyArcs::from_one_based(&[0, 1]).unwrap())]);
        let back = parse_dependency_file(&text, "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].arcs, arcs);
        assert_eq!(back[0].tokens, toks);
    }

    #[test]
    fn bad_lines_report_position() {
        let err = parse_dependency_file("1\ta\t0\n3\tb\t1\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
