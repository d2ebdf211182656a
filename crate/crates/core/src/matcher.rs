//! Subgraph matching of ACFGs with an optional pattern filter.
//!
//! Semantics are non-induced: every template edge must map to a target edge,
//! extra target edges among mapped blocks are fine.

use serde::Serialize;

use crate::cfg::{Acfg, BasicBlock};

pub const DEFAULT_BUDGET: u64 = 10_000_000;
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// `pairs[t]` is the target block for template block `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mapping {
    pub pairs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("mapping covers {found} template blocks, template has {expected}")]
    NotTotal { expected: usize, found: usize },
    #[error("target block {0} is out of range or used twice")]
    NotInjective(usize),
    #[error("template edge {0} -> {1} has no image")]
    MissingEdge(usize, usize),
    #[error("template block {0} and its image have different pattern sequences")]
    Incompatible(usize),
}

impl Mapping {
    pub fn verify(
        &self,
        template: &Acfg,
        target: &Acfg,
        use_patterns: bool,
    ) -> Result<(), MappingError> {
        if self.pairs.len() != template.len() {
            return Err(MappingError::NotTotal {
                expected: template.len(),
                found: self.pairs.len(),
            });
        }
        let mut used = vec![false; target.len()];
        for &g in &self.pairs {
            if g >= target.len() || std::mem::replace(&mut used[g], true) {
                return Err(MappingError::NotInjective(g));
            }
        }
        for &(u, v) in &template.edges {
            if !target.has_edge(self.pairs[u], self.pairs[v]) {
                return Err(MappingError::MissingEdge(u, v));
            }
        }
        if use_patterns {
            for (t, &g) in self.pairs.iter().enumerate() {
                if !node_compatible(&template.blocks[t], &target.blocks[g]) {
                    return Err(MappingError::Incompatible(t));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    Found(Mapping),
    NotFound,
    /// The expansion budget ran out before the search finished.
    Inconclusive {
        expansions: u64,
    },
}

impl MatchOutcome {
    pub fn mapping(&self) -> Option<&Mapping> {
        match self {
            MatchOutcome::Found(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self, MatchOutcome::Found(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOptions {
    pub use_patterns: bool,
    /// Candidate pair checks allowed per search.
    pub budget: u64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            use_patterns: true,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("brute force is limited to {BRUTE_FORCE_LIMIT} blocks per graph (template {template}, target {target})")]
pub struct TooLarge {
    pub template: usize,
    pub target: usize,
}

/// Ordered equality of pattern sequences.
pub fn node_compatible(template_block: &BasicBlock, target_block: &BasicBlock) -> bool {
    template_block.pattern_seq == target_block.pattern_seq
}

struct Adj {
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
    /// Undirected neighbours without self.
    nbr: Vec<Vec<usize>>,
    self_loop: Vec<bool>,
}

impl Adj {
    fn new(g: &Acfg) -> Self {
        let out = g.successors();
        let inc = g.predecessors();
        let mut nbr = vec![Vec::new(); g.len()];
        let mut self_loop = vec![false; g.len()];
        for &(s, d) in &g.edges {
            if s == d {
                self_loop[s] = true;
            } else {
                nbr[s].push(d);
                nbr[d].push(s);
            }
        }
        for n in &mut nbr {
            n.sort_unstable();
            n.dedup();
        }
        Adj {
            out,
            inc,
            nbr,
            self_loop,
        }
    }
}

struct Search<'a> {
    t: &'a Acfg,
    g: &'a Acfg,
    ta: Adj,
    ga: Adj,
    opts: MatchOptions,
    order: Vec<usize>,
    core_t: Vec<Option<usize>>,
    core_g: Vec<Option<usize>>,
    expansions: u64,
}

enum Step {
    Done,
    Fail,
    OutOfBudget,
}

impl<'a> Search<'a> {
    /// Template visiting order: breadth-first over undirected neighbours,
    /// restarting at the lowest unvisited block, so every block after the
    /// first of its component has an already matched neighbour.
    fn order(t: &Acfg, ta: &Adj) -> Vec<usize> {
        let mut seen = vec![false; t.len()];
        let mut order = Vec::with_capacity(t.len());
        for root in 0..t.len() {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut i = order.len();
            order.push(root);
            while i < order.len() {
                for &n in &ta.nbr[order[i]] {
                    if !seen[n] {
                        seen[n] = true;
                        order.push(n);
                    }
                }
                i += 1;
            }
        }
        order
    }

    fn feasible(&self, n: usize, c: usize) -> bool {
        let (ta, ga) = (&self.ta, &self.ga);
        if ta.out[n].len() > ga.out[c].len() || ta.inc[n].len() > ga.inc[c].len() {
            return false;
        }
        if ta.self_loop[n] && !ga.self_loop[c] {
            return false;
        }
        if self.opts.use_patterns && !node_compatible(&self.t.blocks[n], &self.g.blocks[c]) {
            return false;
        }
        for &s in &ta.out[n] {
            if let Some(gs) = self.core_t[s] {
                if !self.g.has_edge(c, gs) {
                    return false;
                }
            }
        }
        for &p in &ta.inc[n] {
            if let Some(gp) = self.core_t[p] {
                if !self.g.has_edge(gp, c) {
                    return false;
                }
            }
        }
        // Unmatched neighbours of n need distinct unmatched neighbours of c.
        let free_t = ta.nbr[n]
            .iter()
            .filter(|&&x| self.core_t[x].is_none())
            .count();
        let free_g = ga.nbr[c]
            .iter()
            .filter(|&&x| self.core_g[x].is_none())
            .count();
        free_t <= free_g
    }

    fn candidates(&self, n: usize) -> Vec<usize> {
        // Anchor on a matched neighbour when there is one.
        let anchor = self.ta.inc[n]
            .iter()
            .find_map(|&p| self.core_t[p].map(|gp| &self.ga.out[gp]))
            .or_else(|| {
                self.ta.out[n]
                    .iter()
                    .find_map(|&s| self.core_t[s].map(|gs| &self.ga.inc[gs]))
            });
        match anchor {
            Some(list) => {
                let mut v: Vec<usize> = list
                    .iter()
                    .copied()
                    .filter(|&c| self.core_g[c].is_none())
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => (0..self.g.len())
                .filter(|&c| self.core_g[c].is_none())
                .collect(),
        }
    }

    fn extend(&mut self, depth: usize) -> Step {
        if depth == self.order.len() {
            return Step::Done;
        }
        let n = self.order[depth];
        for c in self.candidates(n) {
            self.expansions += 1;
            if self.expansions > self.opts.budget {
                return Step::OutOfBudget;
            }
            if !self.feasible(n, c) {
                continue;
            }
            self.core_t[n] = Some(c);
            self.core_g[c] = Some(n);
            match self.extend(depth + 1) {
                Step::Fail => {}
                other => return other,
            }
            self.core_t[n] = None;
            self.core_g[c] = None;
        }
        Step::Fail
    }
}

/// VF2-style search for an embedding of `template` into `target`.
pub fn subgraph_match_with(template: &Acfg, target: &Acfg, opts: MatchOptions) -> MatchOutcome {
    if template.len() > target.len() || template.edges.len() > target.edges.len() {
        return MatchOutcome::NotFound;
    }
    let ta = Adj::new(template);
    let ga = Adj::new(target);
    let order = Search::order(template, &ta);
    let mut s = Search {
        t: template,
        g: target,
        ta,
        ga,
        opts,
        order,
        core_t: vec![None; template.len()],
        core_g: vec![None; target.len()],
        expansions: 0,
    };
    match s.extend(0) {
        Step::Done => {
            let pairs = s
                .core_t
                .iter()
                .map(|c| c.expect("complete mapping"))
                .collect();
            MatchOutcome::Found(Mapping { pairs })
        }
        Step::Fail => MatchOutcome::NotFound,
        Step::OutOfBudget => MatchOutcome::Inconclusive {
            expansions: s.expansions - 1,
        },
    }
}

pub fn subgraph_match(template: &Acfg, target: &Acfg, use_patterns: bool) -> MatchOutcome {
    subgraph_match_with(
        template,
        target,
        MatchOptions {
            use_patterns,
            ..Default::default()
        },
    )
}

/// Tries every injective map in lexicographic order. Test oracle only.
pub fn brute_force_match(
    template: &Acfg,
    target: &Acfg,
    use_patterns: bool,
) -> Result<Option<Mapping>, TooLarge> {
    if template.len() > BRUTE_FORCE_LIMIT || target.len() > BRUTE_FORCE_LIMIT {
        return Err(TooLarge {
            template: template.len(),
            target: target.len(),
        });
    }
    fn rec(
        i: usize,
        pairs: &mut Vec<usize>,
        used: &mut [bool],
        t: &Acfg,
        g: &Acfg,
        use_patterns: bool,
    ) -> bool {
        if i == t.len() {
            return Mapping {
                pairs: pairs.clone(),
            }
            .verify(t, g, use_patterns)
            .is_ok();
        }
        for c in 0..g.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            pairs.push(c);
            if rec(i + 1, pairs, used, t, g, use_patterns) {
                return true;
            }
            pairs.pop();
            used[c] = false;
        }
        false
    }
    let mut pairs = Vec::with_capacity(template.len());
    let mut used = vec![false; target.len()];
    Ok(rec(0, &mut pairs, &mut used, template, target, use_patterns).then_some(Mapping { pairs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::PatternTag::{self, *};

    fn g(n: usize, edges: &[(usize, usize)]) -> Acfg {
        Acfg::from_patterns("g", vec![vec![Assign]; n], edges.iter().copied())
    }

    fn seqs(name: &str, blocks: Vec<Vec<PatternTag>>, edges: &[(usize, usize)]) -> Acfg {
        Acfg::from_patterns(name, blocks, edges.iter().copied())
    }

    #[test]
    fn node_compatibility_is_ordered_equality() {
        let b = |p: Vec<PatternTag>| BasicBlock {
            pattern_seq: p,
            ..Default::default()
        };
        assert!(node_compatible(
            &b(vec![Assign, ControlConstant]),
            &b(vec![Assign, ControlConstant])
        ));
        assert!(!node_compatible(&b(vec![Assign]), &b(vec![AssignConstant])));
        assert!(!node_compatible(
            &b(vec![Assign, Jump]),
            &b(vec![Jump, Assign])
        ));
        assert!(node_compatible(&b(vec![]), &b(vec![])));
    }

    #[test]
    fn graph_matches_itself() {
        let x = g(4, &[(0, 1), (1, 2), (2, 1), (2, 3), (3, 3)]);
        let m = subgraph_match(&x, &x, false);
        m.mapping().unwrap().verify(&x, &x, true).unwrap();
    }

    #[test]
    fn triangle_in_k4() {
        let tri = g(3, &[(0, 1), (1, 2), (2, 0)]);
        let k4: Vec<_> = (0..4)
            .flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        let k4 = g(4, &k4);
        assert!(subgraph_match(&tri, &k4, false).is_found());
        assert!(brute_force_match(&tri, &k4, false).unwrap().is_some());
    }

    #[test]
    fn cycle_not_in_path() {
        let cyc = g(3, &[(0, 1), (1, 2), (2, 0)]);
        let path = g(3, &[(0, 1), (1, 2)]);
        assert_eq!(subgraph_match(&cyc, &path, false), MatchOutcome::NotFound);
        assert_eq!(brute_force_match(&cyc, &path, false).unwrap(), None);
        let p2 = g(2, &[(0, 1)]);
        assert_eq!(
            brute_force_match(&p2, &p2, false).unwrap(),
            Some(Mapping { pairs: vec![0, 1] })
        );
    }

    #[test]
    fn non_induced() {
        let path = g(2, &[(0, 1)]);
        let both = g(2, &[(0, 1), (1, 0)]);
        assert!(subgraph_match(&path, &both, false).is_found());
    }

    #[test]
    fn pattern_filter_rejects_shape_match() {
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let malware = seqs(
            "m",
            vec![
                vec![Assign, Control],
                vec![LibCall],
                vec![Assign],
                vec![Jump],
            ],
            &edges,
        );
        let benign = seqs(
            "b",
            vec![
                vec![Assign, Control],
                vec![AssignConstant],
                vec![Call],
                vec![JumpConstant],
            ],
            &edges,
        );
        assert!(subgraph_match(&malware, &benign, false).is_found());
        assert_eq!(
            subgraph_match(&malware, &benign, true),
            MatchOutcome::NotFound
        );
    }

    #[test]
    fn budget_exhaustion_is_inconclusive() {
        let tri = g(3, &[(0, 1), (1, 2), (2, 0)]);
        let path = g(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let out = subgraph_match_with(
            &tri,
            &path,
            MatchOptions {
                use_patterns: false,
                budget: 2,
            },
        );
        assert!(matches!(out, MatchOutcome::Inconclusive { .. }));
    }

    #[test]
    fn brute_force_rejects_large_graphs() {
        let big = g(9, &[]);
        assert!(brute_force_match(&big, &big, false).is_err());
    }

    #[test]
    fn verify_catches_bad_mappings() {
        let p = g(2, &[(0, 1)]);
        assert_eq!(
            Mapping { pairs: vec![0, 0] }.verify(&p, &p, false),
            Err(MappingError::NotInjective(0))
        );
        assert_eq!(
            Mapping { pairs: vec![1, 0] }.verify(&p, &p, false),
            Err(MappingError::MissingEdge(0, 1))
        );
    }
}
