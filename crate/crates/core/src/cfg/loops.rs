use std::collections::BTreeSet;

use super::Acfg;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub header: usize,
    pub body: BTreeSet<usize>,
    pub back_edges: Vec<(usize, usize)>,
    /// Index of the innermost enclosing loop.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoopInfo {
    /// Immediate dominator per block; `None` for the entry and unreachable blocks.
    pub idom: Vec<Option<usize>>,
    /// Edges whose target dominates their source.
    pub back_edges: Vec<(usize, usize)>,
    /// Natural loops, one per header, ordered by header.
    pub loops: Vec<Loop>,
    /// Retreating DFS edges whose target does not dominate the source.
    pub irreducible: Vec<(usize, usize)>,
    /// Edges that go to the same or an earlier block in address order.
    pub backward_branches: Vec<(usize, usize)>,
}

impl LoopInfo {
    pub fn outer(&self) -> impl Iterator<Item = &Loop> {
        self.loops.iter().filter(|l| l.parent.is_none())
    }

    pub fn inner(&self) -> impl Iterator<Item = &Loop> {
        self.loops.iter().filter(|l| l.parent.is_some())
    }

    pub fn children(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.loops.len()).filter(move |&i| self.loops[i].parent == Some(index))
    }

    pub fn depth(&self, index: usize) -> usize {
        let mut d = 1;
        let mut cur = self.loops[index].parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.loops[p].parent;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        (0..self.loops.len())
            .map(|i| self.depth(i))
            .max()
            .unwrap_or(0)
    }

    pub fn dominates(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.idom.get(b).copied().flatten() {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    /// One line, e.g. "1 outer, 2 inner".
    pub fn summary(&self) -> String {
        format!(
            "{} outer, {} inner",
            self.outer().count(),
            self.inner().count()
        )
    }
}

/// Reverse postorder of the blocks reachable from the entry, plus the
/// retreating edges seen on the way.
fn dfs(succs: &[Vec<usize>]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let n = succs.len();
    let mut state = vec![0u8; n]; // 0 new, 1 on stack, 2 done
    let mut post = Vec::with_capacity(n);
    let mut retreating = Vec::new();
    let mut stack = vec![(Acfg::ENTRY, 0usize)];
    state[Acfg::ENTRY] = 1;
    while let Some(&mut (b, ref mut i)) = stack.last_mut() {
        if let Some(&s) = succs[b].get(*i) {
            *i += 1;
            match state[s] {
                0 => {
                    state[s] = 1;
                    stack.push((s, 0));
                }
                1 => retreating.push((b, s)),
                _ => {}
            }
        } else {
            state[b] = 2;
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    (post, retreating)
}

/// Dominators by the iterative two-finger algorithm over reverse postorder.
fn dominators(preds: &[Vec<usize>], rpo: &[usize]) -> Vec<Option<usize>> {
    let n = preds.len();
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    idom[Acfg::ENTRY] = Some(Acfg::ENTRY);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].expect("processed");
            }
            while order[b] > order[a] {
                b = idom[b].expect("processed");
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom[Acfg::ENTRY] = None;
    idom
}

pub fn find_loops(cfg: &Acfg) -> LoopInfo {
    if cfg.blocks.is_empty() {
        return LoopInfo::default();
    }
    let succs = cfg.successors();
    let preds = cfg.predecessors();
    let (rpo, retreating) = dfs(&succs);
    let mut info = LoopInfo {
        idom: dominators(&preds, &rpo),
        ..Default::default()
    };
    let reachable: BTreeSet<usize> = rpo.iter().copied().collect();

    for &(s, d) in &cfg.edges {
        if !reachable.contains(&s) {
            continue;
        }
        if info.dominates(d, s) {
            info.back_edges.push((s, d));
        }
        if d <= s {
            info.backward_branches.push((s, d));
        }
    }
    info.irreducible = retreating
        .into_iter()
        .filter(|&(s, d)| !info.dominates(d, s))
        .collect();
    info.irreducible.sort_unstable();

    let mut headers: Vec<usize> = info.back_edges.iter().map(|&(_, h)| h).collect();
    headers.sort_unstable();
    headers.dedup();
    for h in headers {
        let back: Vec<(usize, usize)> = info
            .back_edges
            .iter()
            .copied()
            .filter(|&(_, d)| d == h)
            .collect();
        let mut body = BTreeSet::from([h]);
        let mut work: Vec<usize> = back.iter().map(|&(s, _)| s).collect();
        while let Some(b) = work.pop() {
            if body.insert(b) {
                work.extend(preds[b].iter().copied().filter(|p| reachable.contains(p)));
            }
        }
        info.loops.push(Loop {
            header: h,
            body,
            back_edges: back,
            parent: None,
        });
    }

    // Innermost enclosing loop: the smallest other loop whose body holds this header.
    for i in 0..info.loops.len() {
        let parent = (0..info.loops.len())
            .filter(|&j| {
                j != i
                    && info.loops[j].body.contains(&info.loops[i].header)
                    && info.loops[j].body.is_superset(&info.loops[i].body)
            })
            .min_by_key(|&j| info.loops[j].body.len());
        info.loops[i].parent = parent;
    }
    info
}
