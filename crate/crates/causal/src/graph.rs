//! Weighted DAGs, intervention effects and heatmap export.

use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CausalError;

/// `weights[(j, i)]` is the weight of edge j→i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub names: Vec<String>,
    pub weights: DMatrix<f64>,
    pub blocked: DMatrix<bool>,
}

impl CausalGraph {
    pub fn new(names: Vec<String>, weights: DMatrix<f64>) -> Result<Self, CausalError> {
        let d = names.len();
        if weights.nrows() != weights.ncols() {
            return Err(CausalError::NonSquare { rows: weights.nrows(), cols: weights.ncols() });
        }
        if weights.nrows() != d {
            return Err(CausalError::Shape(format!("{d} names for a {0}x{0} matrix", weights.nrows())));
        }
        Ok(CausalGraph { names, weights, blocked: DMatrix::from_element(d, d, false) })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn node(&self, name: &str) -> Result<usize, CausalError> {
        self.names.iter().position(|n| n == name).ok_or_else(|| CausalError::UnknownNode(name.to_owned()))
    }

    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let d = self.len();
        let mut out = Vec::new();
        for j in 0..d {
            for i in 0..d {
                let w = self.weights[(j, i)];
                if w != 0.0 {
                    out.push((j, i, w));
                }
            }
        }
        out
    }

    pub fn support(&self) -> DMatrix<bool> {
        self.weights.map(|w| w != 0.0)
    }

    pub fn is_acyclic(&self) -> bool {
        topological_order(&self.support()).is_some()
    }
}

/// Kahn's algorithm over `adj[(j, i)]` = edge j→i; `None` when cyclic.
pub fn topological_order(adj: &DMatrix<bool>) -> Option<Vec<usize>> {
    let d = adj.nrows();
    let mut indeg: Vec<usize> = (0..d).map(|i| (0..d).filter(|&j| adj[(j, i)]).count()).collect();
    let mut ready: Vec<usize> = (0..d).filter(|&i| indeg[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(d);
    while let Some(j) = ready.pop() {
        order.push(j);
        for i in 0..d {
            if adj[(j, i)] {
                indeg[i] -= 1;
                if indeg[i] == 0 {
                    ready.push(i);
                }
            }
        }
    }
    (order.len() == d).then_some(order)
}

fn find_cycle(adj: &DMatrix<bool>) -> Option<Vec<usize>> {
    let d = adj.nrows();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; d];
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(v: usize, adj: &DMatrix<bool>, state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for u in 0..adj.nrows() {
            if !adj[(v, u)] {
                continue;
            }
            if state[u] == 1 {
                let start = stack.iter().position(|&x| x == u).unwrap_or(0);
                return Some(stack[start..].to_vec());
            }
            if state[u] == 0 {
                if let Some(c) = dfs(u, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    (0..d).find_map(|v| if state[v] == 0 { dfs(v, adj, &mut state, &mut stack) } else { None })
}

/// Removes the weakest edge of some cycle until none remain. Returns the
/// number of edges removed.
pub fn break_cycles(weights: &mut DMatrix<f64>) -> usize {
    let mut removed = 0;
    while let Some(cycle) = find_cycle(&weights.map(|w| w != 0.0)) {
        let edges = cycle.iter().zip(cycle.iter().cycle().skip(1)).map(|(&a, &b)| (a, b));
        let weakest = edges.min_by(|x, y| weights[*x].abs().total_cmp(&weights[*y].abs())).expect("cycle has edges");
        weights[weakest] = 0.0;
        removed += 1;
    }
    removed
}

/// Structural Hamming distance; a reversed edge counts once.
pub fn shd(a: &DMatrix<bool>, b: &DMatrix<bool>) -> usize {
    let d = a.nrows();
    let mut dist = 0;
    for i in 0..d {
        for j in i + 1..d {
            if (a[(i, j)], a[(j, i)]) != (b[(i, j)], b[(j, i)]) {
                dist += 1;
            }
        }
    }
    dist
}

/// Sum over all directed paths of weight products: entries of W + W² + … + W^d.
pub fn total_effects(weights: &DMatrix<f64>) -> DMatrix<f64> {
    let d = weights.nrows();
    let mut acc = DMatrix::zeros(d, d);
    let mut power = weights.clone();
    for _ in 0..d {
        acc += &power;
        power = &power * weights;
    }
    acc
}

/// Total linear effect of a unit intervention on `treatment` on `outcome`.
pub fn intervention_effect(graph: &CausalGraph, treatment: &str, outcome: &str) -> Result<f64, CausalError> {
    let t = graph.node(treatment)?;
    let o = graph.node(outcome)?;
    if !graph.is_acyclic() {
        return Err(CausalError::Cyclic);
    }
    Ok(total_effects(&graph.weights)[(t, o)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub treatments: Vec<String>,
    pub outcomes: Vec<String>,
    /// rows = treatments, columns = outcomes
    pub values: DMatrix<f64>,
}

pub fn effects_heatmap(graph: &CausalGraph, treatments: &[String], outcomes: &[String]) -> Result<Heatmap, CausalError> {
    if let Some(n) = treatments.iter().find(|t| outcomes.contains(t)) {
        return Err(CausalError::Shape(format!("{n:?} is both a treatment and an outcome")));
    }
    let t: Vec<usize> = treatments.iter().map(|n| graph.node(n)).collect::<Result<_, _>>()?;
    let o: Vec<usize> = outcomes.iter().map(|n| graph.node(n)).collect::<Result<_, _>>()?;
    if !graph.is_acyclic() {
        return Err(CausalError::Cyclic);
    }
    let total = total_effects(&graph.weights);
    Ok(Heatmap {
        treatments: treatments.to_vec(),
        outcomes: outcomes.to_vec(),
        values: DMatrix::from_fn(t.len(), o.len(), |r, c| total[(t[r], o[c])]),
    })
}

impl Heatmap {
    /// Header `treatment,<outcome>...`, then one row per treatment.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), CausalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["treatment".to_owned()];
        header.extend(self.outcomes.iter().cloned());
        w.write_record(&header)?;
        for (r, name) in self.treatments.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.outcomes.len()).map(|c| format!("{}", self.values[(r, c)])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CausalError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, CausalError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let outcomes: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut treatments = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            treatments.push(rec.get(0).unwrap_or_default().to_owned());
            for v in rec.iter().skip(1) {
                values.push(v.parse::<f64>().map_err(|e| CausalError::Shape(format!("bad value {v:?}: {e}")))?);
            }
        }
        if values.len() != treatments.len() * outcomes.len() {
            return Err(CausalError::Shape("ragged heatmap CSV".into()));
        }
        let values = DMatrix::from_row_slice(treatments.len(), outcomes.len(), &values);
        Ok(Heatmap { treatments, outcomes, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(d: usize, edges: &[(usize, usize, f64)]) -> CausalGraph {
        let mut w = DMatrix::zeros(d, d);
        for &(j, i, v) in edges {
            w[(j, i)] = v;
        }
        let names = (0..d).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
        CausalGraph::new(names, w).unwrap()
    }

    /// Brute-force enumeration of every directed path.
    fn path_sum(w: &DMatrix<f64>, from: usize, to: usize) -> f64 {
        fn walk(w: &DMatrix<f64>, v: usize, to: usize, prod: f64, seen: &mut Vec<bool>) -> f64 {
            if v == to {
                return prod;
            }
            let mut total = 0.0;
            for u in 0..w.nrows() {
                if w[(v, u)] != 0.0 && !seen[u] {
                    seen[u] = true;
                    total += walk(w, u, to, prod * w[(v, u)], seen);
                    seen[u] = false;
                }
            }
            total
        }
        if from == to {
            return 0.0;
        }
        let mut seen = vec![false; w.nrows()];
        seen[from] = true;
        walk(w, from, to, 1.0, &mut seen)
    }

    #[test]
    fn effect_examples() {
        let chain = graph(3, &[(0, 1, 2.0), (1, 2, 0.5)]);
        assert!((intervention_effect(&chain, "A", "C").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(intervention_effect(&chain, "C", "A").unwrap(), 0.0);
        let diamond = graph(4, &[(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)]);
        assert!((intervention_effect(&diamond, "A", "D").unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(intervention_effect(&diamond, "A", "Z"), Err(CausalError::UnknownNode(_))));
        let cyc = graph(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(intervention_effect(&cyc, "A", "B"), Err(CausalError::Cyclic)));
    }

    #[test]
    fn heatmap_and_csv_roundtrip() {
        let g = graph(2, &[]);
        let h = effects_heatmap(&g, &["A".into()], &["B".into()]).unwrap();
        assert_eq!(h.values, DMatrix::from_element(1, 1, 0.0));

        let g = graph(4, &[(0, 2, 1.5), (1, 2, -0.4), (2, 3, -2.0), (0, 3, 0.25)]);
        let t = vec!["A".to_owned(), "B".to_owned()];
        let o = vec!["C".to_owned(), "D".to_owned()];
        let h = effects_heatmap(&g, &t, &o).unwrap();
        // hand-computed: A→D = 1.5·(−2) + 0.25, B→D = (−0.4)·(−2)
        let want = DMatrix::from_row_slice(2, 2, &[1.5, -2.75, -0.4, 0.8]);
        assert!((&h.values - &want).norm() < 1e-12);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("treatment,C,D\nA,1.5,-2.75\n"));
        assert_eq!(Heatmap::read_csv(&buf[..]).unwrap(), h);
        assert!(effects_heatmap(&g, &t, &t).is_err());
    }

    #[test]
    fn cycles_broken_at_weakest_edge() {
        let mut w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.9, 0.35, 0.0, 0.0]);
        assert_eq!(break_cycles(&mut w), 1);
        assert_eq!(w[(2, 0)], 0.0);
        assert!(topological_order(&w.map(|x| x != 0.0)).is_some());
    }

    #[test]
    fn shd_counts() {
        let a = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]).support();
        let reversed = graph(3, &[(1, 0, 1.0), (1, 2, 1.0)]).support();
        let extra = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).support();
        assert_eq!(shd(&a, &a), 0);
        assert_eq!(shd(&a, &reversed), 1);
        assert_eq!(shd(&a, &extra), 1);
    }

    fn random_dag() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (2usize..=6).prop_flat_map(|d| {
            let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j + 1..d).map(move |i| (j, i))).collect();
            let n = pairs.len();
            (Just(d), Just(pairs), prop::collection::vec(prop::option::of(-2.0f64..2.0), n), Just((0..d).collect::<Vec<usize>>()).prop_shuffle())
                .prop_map(|(d, pairs, ws, perm)| {
                    let edges = pairs.iter().zip(ws).filter_map(|(&(j, i), w)| w.map(|w| (perm[j], perm[i], w))).collect();
                    (d, edges)
                })
        })
    }

    proptest! {
        #[test]
        fn effects_match_path_enumeration((d, edges) in random_dag()) {
            let g = graph(d, &edges);
            prop_assert!(g.is_acyclic());
            let total = total_effects(&g.weights);
            for a in 0..d {
                for b in 0..d {
                    let oracle = path_sum(&g.weights, a, b);
                    prop_assert!((total[(a, b)] - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
                }
            }
        }
    }
}
