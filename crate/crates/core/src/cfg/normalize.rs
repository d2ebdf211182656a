use std::collections::BTreeSet;

use super::{Acfg, BasicBlock};

/// Working form: blocks may be tombstoned, edges kept as a set.
struct Work {
    blocks: Vec<Option<BasicBlock>>,
    edges: BTreeSet<(usize, usize)>,
    entry: usize,
}

impl Work {
    fn succs(&self, b: usize) -> Vec<usize> {
        self.edges
            .range((b, 0)..=(b, usize::MAX))
            .map(|&(_, d)| d)
            .collect()
    }

    fn preds(&self, b: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, d)| d == b)
            .map(|&(s, _)| s)
            .collect()
    }

    fn remove(&mut self, b: usize) {
        self.blocks[b] = None;
        self.edges.retain(|&(s, d)| s != b && d != b);
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .map(|(i, _)| i)
    }

    fn drop_unreachable(&mut self) -> bool {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![self.entry];
        seen[self.entry] = true;
        while let Some(b) = stack.pop() {
            for s in self.succs(b) {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        let dead: Vec<usize> = self.live().filter(|&b| !seen[b]).collect();
        for &b in &dead {
            self.remove(b);
        }
        !dead.is_empty()
    }

    fn on_cycle(&self, b: usize) -> bool {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = self.succs(b);
        while let Some(x) = stack.pop() {
            if x == b {
                return true;
            }
            if !std::mem::replace(&mut seen[x], true) {
                stack.extend(self.succs(x));
            }
        }
        false
    }

    /// Removes one empty block, wiring its predecessors to its successors.
    /// Only done when one side has at most one edge, so the edge count never
    /// grows, and never for a block on a cycle, so paths between the other
    /// blocks and hence dominators and loops stay as they were.
    fn bypass_empty(&mut self) -> bool {
        let candidates: Vec<usize> = self
            .live()
            .filter(|&b| self.blocks[b].as_ref().is_some_and(BasicBlock::is_empty))
            .collect();
        for b in candidates {
            let succs = self.succs(b);
            let preds = self.preds(b);
            if preds.len().min(succs.len()) > 1 || self.on_cycle(b) {
                continue;
            }
            if b == self.entry {
                if !preds.is_empty() || succs.len() != 1 {
                    continue;
                }
                self.entry = succs[0];
            } else if succs.is_empty() && preds.is_empty() {
                continue;
            }
            self.remove(b);
            for &p in &preds {
                for &s in &succs {
                    self.edges.insert((p, s));
                }
            }
            return true;
        }
        false
    }

    /// Folds a block's sole successor into it when that successor has no
    /// other predecessor and the block does not end in a control statement.
    fn merge_chain(&mut self) -> bool {
        let live: Vec<usize> = self.live().collect();
        for u in live {
            let succs = self.succs(u);
            let [v] = succs[..] else { continue };
            if v == u || v == self.entry || self.preds(v) != [u] {
                continue;
            }
            if self.blocks[u]
                .as_ref()
                .is_some_and(BasicBlock::ends_in_control)
            {
                continue;
            }
            let vb = self.blocks[v].take().expect("live successor");
            let outs = self.succs(v);
            self.edges.retain(|&(s, d)| s != v && d != v);
            for d in outs {
                self.edges.insert((u, if d == v { u } else { d }));
            }
            let ub = self.blocks[u].as_mut().expect("live block");
            ub.statements.extend(vb.statements);
            ub.pattern_seq.extend(vb.pattern_seq);
            return true;
        }
        false
    }
}

/// Removes unreachable blocks, bypasses empty blocks and merges straight-line
/// chains until nothing changes, then renumbers with the entry first.
pub fn normalize(cfg: &Acfg) -> Acfg {
    if cfg.blocks.is_empty() {
        return cfg.clone();
    }
    let mut w = Work {
        blocks: cfg.blocks.iter().cloned().map(Some).collect(),
        edges: cfg.edges.iter().copied().collect(),
        entry: Acfg::ENTRY,
    };
    loop {
        let mut changed = w.drop_unreachable();
        changed |= w.bypass_empty();
        changed |= w.merge_chain();
        if !changed {
            break;
        }
    }

    let order: Vec<usize> = std::iter::once(w.entry)
        .chain(w.live().filter(|&b| b != w.entry))
        .collect();
    let mut new_id = vec![usize::MAX; w.blocks.len()];
    for (i, &b) in order.iter().enumerate() {
        new_id[b] = i;
    }
    let blocks = order
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut block = w.blocks[b].take().expect("live block");
            block.id = i;
            block
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = w
        .edges
        .iter()
        .map(|&(s, d)| (new_id[s], new_id[d]))
        .collect();
    edges.sort_unstable();
    Acfg {
        name: cfg.name.clone(),
        blocks,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::PatternTag::*;

    #[test]
    fn drops_unreachable() {
        let g = Acfg::from_patterns("f", vec![vec![Jump], vec![Assign], vec![Halt]], [(0, 2)]);
        let n = normalize(&g);
        assert_eq!(n.blocks.len(), 1);
        assert_eq!(n.blocks[0].pattern_seq, vec![Jump, Halt]);
    }

    #[test]
    fn keeps_control_boundaries() {
        let g = Acfg::from_patterns("f", vec![vec![Control], vec![Assign]], [(0, 1)]);
        assert_eq!(normalize(&g), g);
    }

    #[test]
    fn bypasses_empty_block() {
        let g = Acfg::from_patterns(
            "f",
            vec![vec![Control], vec![], vec![Assign], vec![Halt]],
            [(0, 1), (0, 2), (1, 3), (2, 3)],
        );
        let n = normalize(&g);
        assert_eq!(n.blocks.len(), 3);
        assert_eq!(n.edges, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn empty_self_loop_survives() {
        let g = Acfg::from_patterns(
            "f",
            vec![vec![Control], vec![], vec![Halt]],
            [(0, 1), (0, 2), (1, 1)],
        );
        assert_eq!(normalize(&g).blocks.len(), 3);
    }

    #[test]
    fn empty_block_on_irreducible_cycle_survives() {
        let g = Acfg::from_patterns(
            "f",
            vec![vec![Control], vec![], vec![]],
            [(0, 1), (0, 2), (1, 2), (2, 1)],
        );
        assert_eq!(normalize(&g), g);
    }

    #[test]
    fn two_cycle_merges_into_self_loop() {
        let g = Acfg::from_patterns("f", vec![vec![Assign], vec![Jump]], [(0, 1), (1, 0)]);
        let n = normalize(&g);
        assert_eq!(n.blocks.len(), 1);
        assert_eq!(n.edges, vec![(0, 0)]);
    }

    #[test]
    fn idempotent_on_small_graph() {
        let g = Acfg::from_patterns(
            "f",
            vec![
                vec![Assign],
                vec![],
                vec![Control],
                vec![Assign],
                vec![Jump],
            ],
            [(0, 1), (1, 2), (2, 3), (2, 4), (3, 4), (4, 2)],
        );
        let n = normalize(&g);
        assert_eq!(normalize(&n), n);
    }
}
