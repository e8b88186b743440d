//! Primal network simplex on the dense bipartite transport graph.
//!
//! The spanning tree is rooted at an artificial node joined to every real
//! node. Entering arcs are chosen by block search; the leaving arc rule keeps
//! the tree strongly feasible, which rules out cycling on degenerate pivots.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::{TransportBackend, TransportProblem, TransportSolution};

const TREE: i8 = 0;
const LOWER: i8 = 1;
const UP: i8 = 1;
const DOWN: i8 = -1;
const NONE: usize = usize::MAX;

/// Exact transport solver.
#[derive(Clone, Debug)]
pub struct NetworkSimplex {
    /// Pivot limit as a multiple of the number of arcs.
    pub max_pivots_factor: usize,
}

impl Default for NetworkSimplex {
    fn default() -> Self {
        Self {
            max_pivots_factor: 50,
        }
    }
}

struct Graph {
    src: Vec<usize>,
    tgt: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<i8>,
    search_arcs: usize,

    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
    child_pos: Vec<usize>,

    next_arc: usize,
    block: usize,
    eps: f64,
}

impl Graph {
    fn build(problem: &TransportProblem) -> Self {
        let p = problem.supply.len();
        let q = problem.demand.len();
        let nodes = p + q;
        let root = nodes;
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut cost = Vec::new();
        let mut maxc: f64 = 0.0;
        for i in 0..p {
            for j in 0..q {
                if problem.is_allowed(i, j) {
                    let c = -problem.surplus[(i, j)];
                    maxc = maxc.max(c.abs());
                    src.push(i);
                    tgt.push(p + j);
                    cost.push(c);
                }
            }
        }
        let search_arcs = src.len();
        let art = (maxc + 1.0) * (nodes as f64 + 1.0);
        let mut flow = vec![0.0; search_arcs];
        let mut state = vec![LOWER; search_arcs];

        let mut parent = vec![NONE; nodes + 1];
        let mut pred = vec![NONE; nodes + 1];
        let mut pred_dir = vec![0; nodes + 1];
        let mut depth = vec![0; nodes + 1];
        let mut pi = vec![0.0; nodes + 1];
        let mut children = vec![Vec::new(); nodes + 1];
        let mut child_pos = vec![0; nodes + 1];
        for u in 0..nodes {
            let e = src.len();
            let supply = if u < p { problem.supply[u] } else { -problem.demand[u - p] };
            parent[u] = root;
            pred[u] = e;
            depth[u] = 1;
            child_pos[u] = children[root].len();
            children[root].push(u);
            state.push(TREE);
            if supply >= 0.0 {
                pred_dir[u] = UP;
                src.push(u);
                tgt.push(root);
                cost.push(0.0);
                flow.push(supply);
            } else {
                pred_dir[u] = DOWN;
                pi[u] = art;
                src.push(root);
                tgt.push(u);
                cost.push(art);
                flow.push(-supply);
            }
        }
        let block = ((search_arcs as f64).sqrt().ceil() as usize).max(10);
        Self {
            src,
            tgt,
            cost,
            flow,
            state,
            search_arcs,
            parent,
            pred,
            pred_dir,
            depth,
            pi,
            children,
            child_pos,
            next_arc: 0,
            block,
            eps: 1e-11 * (1.0 + maxc),
        }
    }

    fn reduced(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.src[e]] - self.pi[self.tgt[e]]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let m = self.search_arcs;
        if m == 0 {
            return None;
        }
        let mut best = -self.eps;
        let mut found = None;
        let mut cnt = self.block;
        let mut e = self.next_arc;
        for _ in 0..m {
            if self.state[e] == LOWER {
                let c = self.reduced(e);
                if c < best {
                    best = c;
                    found = Some(e);
                }
            }
            e += 1;
            if e == m {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if found.is_some() {
                    break;
                }
                cnt = self.block;
            }
        }
        self.next_arc = e;
        found
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    fn remove_child(&mut self, par: usize, child: usize) {
        let pos = self.child_pos[child];
        let list = &mut self.children[par];
        list.swap_remove(pos);
        if pos < list.len() {
            let moved = list[pos];
            self.child_pos[moved] = pos;
        }
    }

    fn add_child(&mut self, par: usize, child: usize) {
        self.child_pos[child] = self.children[par].len();
        self.children[par].push(child);
    }

    fn pivot(&mut self, in_arc: usize) -> Result<()> {
        let first = self.src[in_arc];
        let second = self.tgt[in_arc];
        let join = self.find_join(first, second);

        // Leaving arc: the last blocking arc on the cycle orientation.
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut result = 0;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    result = 1;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    result = 2;
                }
            }
            u = self.parent[u];
        }
        if result == 0 {
            return Err(Error::Lp("unbounded transport problem".into()));
        }
        let (u_in, v_in) = if result == 1 { (first, second) } else { (second, first) };

        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] -= self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
            u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += self.pred_dir[u] as f64 * delta;
                u = self.parent[u];
            }
        }
        let out_arc = self.pred[u_out];
        self.flow[out_arc] = 0.0;
        self.state[in_arc] = TREE;
        self.state[out_arc] = LOWER;

        // Re-hang the subtree of u_out from u_in under v_in.
        let mut stem = vec![u_in];
        while *stem.last().unwrap() != u_out {
            let w = *stem.last().unwrap();
            stem.push(self.parent[w]);
        }
        let v_out = self.parent[u_out];
        self.remove_child(v_out, u_out);
        for i in 0..stem.len() - 1 {
            self.remove_child(stem[i + 1], stem[i]);
        }
        let old: Vec<(usize, i8)> = stem.iter().map(|w| (self.pred[*w], self.pred_dir[*w])).collect();
        for i in (1..stem.len()).rev() {
            let w = stem[i];
            self.parent[w] = stem[i - 1];
            self.pred[w] = old[i - 1].0;
            self.pred_dir[w] = -old[i - 1].1;
            self.add_child(stem[i - 1], w);
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = in_arc;
        self.pred_dir[u_in] = if self.src[in_arc] == u_in { UP } else { DOWN };
        self.add_child(v_in, u_in);

        let mut stack = vec![u_in];
        while let Some(w) = stack.pop() {
            let par = self.parent[w];
            let c = self.cost[self.pred[w]];
            self.depth[w] = self.depth[par] + 1;
            self.pi[w] = if self.pred_dir[w] == UP {
                self.pi[par] - c
            } else {
                self.pi[par] + c
            };
            stack.extend_from_slice(&self.children[w]);
        }
        Ok(())
    }
}

impl TransportBackend for NetworkSimplex {
    fn solve(&self, problem: &TransportProblem) -> Result<TransportSolution> {
        let p = problem.supply.len();
        let q = problem.demand.len();
        let mut g = Graph::build(problem);
        let limit = self.max_pivots_factor * (g.search_arcs + p + q + 10);
        let mut iterations = 0;
        while let Some(e) = g.find_entering() {
            g.pivot(e)?;
            iterations += 1;
            if iterations > limit {
                return Err(Error::Lp(format!("pivot limit {limit} reached")));
            }
        }
        let total: f64 = problem.supply.iter().sum();
        let art_flow: f64 = g.flow[g.search_arcs..].iter().sum();
        if art_flow > 1e-9 * (1.0 + total) {
            return Err(Error::Lp(format!(
                "transport problem infeasible under the arc mask (unrouted mass {art_flow:e})"
            )));
        }
        let mut plan = DMatrix::zeros(p, q);
        let mut value = 0.0;
        let tiny = 1e-14 * (1.0 + total);
        let mut positive = 0;
        for e in 0..g.search_arcs {
            let (i, j) = (g.src[e], g.tgt[e] - p);
            let fl = g.flow[e];
            if fl > 0.0 {
                plan[(i, j)] = fl;
                value += fl * problem.surplus[(i, j)];
            }
            if g.state[e] == TREE && fl > tiny {
                positive += 1;
            }
        }
        let f: Vec<f64> = g.pi[..p].to_vec();
        let gd: Vec<f64> = g.pi[p..p + q].iter().map(|v| -v).collect();
        let mut sol = TransportSolution {
            plan,
            value,
            f,
            g: gd,
            dual_unique: positive + 1 == p + q,
            duality_gap: 0.0,
            iterations,
        };
        sol.duality_gap = sol.dual_value(problem) - value;
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_problems_satisfy_optimality_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let p = rng.random_range(1..12);
            let q = rng.random_range(1..12);
            let mut a: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut b: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..1.0)).collect();
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            a.iter_mut().for_each(|v| *v /= sa);
            b.iter_mut().for_each(|v| *v /= sb);
            let s = DMatrix::from_fn(p, q, |_, _| rng.random_range(-2.0..2.0));
            let prob = TransportProblem::new(a.clone(), b.clone(), s.clone()).unwrap();
            let sol = NetworkSimplex::default().solve(&prob).unwrap();
            for i in 0..p {
                assert!((sol.plan.row(i).sum() - a[i]).abs() < 1e-12);
                for j in 0..q {
                    assert!(sol.f[i] + sol.g[j] >= s[(i, j)] - 1e-10);
                    if sol.plan[(i, j)] > 1e-12 {
                        assert!((sol.f[i] + sol.g[j] - s[(i, j)]).abs() < 1e-10);
                    }
                }
            }
            for j in 0..q {
                assert!((sol.plan.column(j).sum() - b[j]).abs() < 1e-12);
            }
            assert!(sol.duality_gap.abs() < 1e-10);
        }
    }

    #[test]
    fn masked_arcs_carry_no_flow() {
        let s = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 0.0]);
        let mask = DMatrix::from_row_slice(2, 2, &[false, true, true, true]);
        let prob = TransportProblem::new(vec![0.5, 0.5], vec![0.5, 0.5], s)
            .unwrap()
            .with_allowed(mask)
            .unwrap();
        let sol = NetworkSimplex::default().solve(&prob).unwrap();
        assert_eq!(sol.plan[(0, 0)], 0.0);
        let mask = DMatrix::from_row_slice(1, 2, &[false, false]);
        let prob = TransportProblem::new(vec![1.0], vec![0.5, 0.5], DMatrix::zeros(1, 2))
            .unwrap()
            .with_allowed(mask)
            .unwrap();
        assert!(NetworkSimplex::default().solve(&prob).is_err());
    }
}
