//! Aggregation order optimization: choose which output stream each of a
//! node's neighbor tokens travels in.

use std::collections::BTreeMap;

use super::{ConflictIndex, Token};
use crate::packing::SlotLayout;

/// `Σ_k popcount(OR of shifts in stream k)`: the rotations a single clean
/// ciphertext per stream would need.
pub fn union_cost(tokens: &[Token]) -> u32 {
    let mut unions: BTreeMap<usize, usize> = BTreeMap::new();
    for t in tokens {
        *unions.entry(t.output).or_default() |= t.shift;
    }
    unions.values().map(|u| u.count_ones()).sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

struct Assigner<'a> {
    unions: Vec<usize>,
    index: ConflictIndex,
    layout: &'a SlotLayout,
}

impl Assigner<'_> {
    fn score(&self, token: &Token, output: usize) -> (u32, u64) {
        let u = self.unions[output];
        let growth = (u | token.shift).count_ones() - u.count_ones();
        let pos = self.layout.node_position(token.source);
        let conflicts = self.index.conflicts(output, token.source, pos, token.shift);
        (growth, conflicts)
    }

    fn commit(&mut self, token: &mut Token, output: usize) {
        token.output = output;
        self.unions[output] |= token.shift;
        let pos = self.layout.node_position(token.source);
        self.index.insert(output, token.source, pos, token.shift);
    }
}

/// Reassigns outputs per target node. Exhaustive over permutations for
/// `n <= 6`, greedy otherwise. Returns the input unchanged if the result
/// would raise [`union_cost`].
pub fn aoo_assign(tokens: &[Token], layout: &SlotLayout) -> Vec<Token> {
    let n = tokens.iter().map(|t| t.output + 1).max().unwrap_or(0);
    if n <= 1 {
        return tokens.to_vec();
    }
    let mut by_target: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        by_target.entry(t.target).or_default().push(i);
    }
    let mut order: Vec<(usize, Vec<usize>)> = by_target.into_iter().collect();
    order.sort_by_key(|(v, idx)| {
        let bits: u32 = idx.iter().map(|&i| tokens[i].shift.count_ones()).sum();
        (std::cmp::Reverse(bits), *v)
    });

    let mut out = tokens.to_vec();
    let mut a = Assigner {
        unions: vec![0; n],
        index: ConflictIndex::new(layout.ring(), n),
        layout,
    };
    let perms = if n <= 6 { permutations(n) } else { Vec::new() };

    for (_, idx) in &order {
        if idx.len() == n && n <= 6 {
            let mut best: Option<((u32, u64), &Vec<usize>)> = None;
            for p in &perms {
                let mut s = (0, 0);
                for (j, &i) in idx.iter().enumerate() {
                    let (g, c) = a.score(&out[i], p[j]);
                    s = (s.0 + g, s.1 + c);
                }
                if best.as_ref().is_none_or(|(b, _)| s < *b) {
                    best = Some((s, p));
                }
            }
            let p = best.expect("at least one permutation").1.clone();
            for (j, &i) in idx.iter().enumerate() {
                let mut t = out[i];
                a.commit(&mut t, p[j]);
                out[i] = t;
            }
        } else {
            let mut pending = idx.clone();
            pending.sort_by_key(|&i| (std::cmp::Reverse(out[i].shift.count_ones()), i));
            let mut free: Vec<bool> = vec![false; n];
            for &i in idx {
                free[out[i].output] = true;
            }
            for i in pending {
                let k = (0..n)
                    .filter(|&k| free[k])
                    .min_by_key(|&k| (a.score(&out[i], k), k))
                    .expect("one free output per token");
                free[k] = false;
                let mut t = out[i];
                a.commit(&mut t, k);
                out[i] = t;
            }
        }
    }

    if union_cost(&out) > union_cost(tokens) {
        tokens.to_vec()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(target: usize, source: usize, output: usize, shift: usize) -> Token {
        Token {
            source,
            target,
            output,
            shift,
            weight: 0.5,
        }
    }

    #[test]
    fn groups_equal_shifts() {
        // Two nodes with shifts {1, 6}, crossed in the identity assignment.
        let layout = SlotLayout::identity(8, 1, 8, 1).unwrap();
        let tokens = vec![
            tok(0, 1, 0, 1),
            tok(0, 6, 1, 6),
            tok(1, 7, 0, 6),
            tok(1, 2, 1, 1),
        ];
        assert_eq!(union_cost(&tokens), 6);
        let out = aoo_assign(&tokens, &layout);
        assert_eq!(union_cost(&out), 3);
    }

    #[test]
    fn single_output_unchanged() {
        let layout = SlotLayout::identity(8, 1, 8, 1).unwrap();
        let tokens = vec![tok(0, 3, 0, 3), tok(1, 5, 0, 4)];
        assert_eq!(aoo_assign(&tokens, &layout), tokens);
    }

    #[test]
    fn keeps_one_token_per_output() {
        let layout = SlotLayout::identity(16, 1, 16, 1).unwrap();
        let tokens: Vec<Token> = (0..16)
            .flat_map(|v| (0..3).map(move |k| tok(v, (v + 3 * k + 1) % 16, k, 3 * k + 1)))
            .collect();
        let out = aoo_assign(&tokens, &layout);
        for v in 0..16 {
            let mut ks: Vec<usize> = out
                .iter()
                .filter(|t| t.target == v)
                .map(|t| t.output)
                .collect();
            ks.sort();
            assert_eq!(ks, vec![0, 1, 2]);
        }
        assert!(union_cost(&out) <= union_cost(&tokens));
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
