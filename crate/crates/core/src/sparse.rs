//! Sparse symmetric solves for 6x6-block normal equations.
//!
//! Blocks are reordered with reverse Cuthill–McKee to shrink the profile and
//! the matrix is factored in envelope (skyline) form, which holds all fill.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DVector, Matrix6};

/// Symmetric matrix of 6x6 blocks; only the upper block triangle is stored.
#[derive(Clone, Debug)]
pub struct BlockMatrix {
    diag: Vec<Matrix6<f64>>,
    /// Keyed by `(a, b)` with `a < b`, holding block `(a, b)`.
    upper: BTreeMap<(usize, usize), Matrix6<f64>>,
}

impl BlockMatrix {
    pub fn new(blocks: usize) -> Self {
        Self {
            diag: vec![Matrix6::zeros(); blocks],
            upper: BTreeMap::new(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        6 * self.diag.len()
    }

    /// Adds `m` to block `(a, b)` (and implicitly `mᵀ` to `(b, a)`).
    pub fn add(&mut self, a: usize, b: usize, m: &Matrix6<f64>) {
        use std::cmp::Ordering::*;
        match a.cmp(&b) {
            Equal => self.diag[a] += m,
            Less => *self.upper.entry((a, b)).or_insert_with(Matrix6::zeros) += m,
            Greater => *self.upper.entry((b, a)).or_insert_with(Matrix6::zeros) += m.transpose(),
        }
    }

    pub fn diagonal(&self, a: usize) -> &Matrix6<f64> {
        &self.diag[a]
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for (a, d) in self.diag.iter().enumerate() {
            let r = d * x.fixed_rows::<6>(6 * a);
            let mut slot = y.fixed_rows_mut::<6>(6 * a);
            slot += r;
        }
        for (&(a, b), m) in &self.upper {
            let ra = m * x.fixed_rows::<6>(6 * b);
            let rb = m.transpose() * x.fixed_rows::<6>(6 * a);
            let mut slot = y.fixed_rows_mut::<6>(6 * a);
            slot += ra;
            let mut slot = y.fixed_rows_mut::<6>(6 * b);
            slot += rb;
        }
        y
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.blocks()];
        for &(a, b) in self.upper.keys() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// Reverse Cuthill–McKee ordering; `order[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    // nodes by ascending degree seed each connected component
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (degree[i], i));
    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            next.dedup();
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular envelope storage: row `i` holds columns `first[i]..=i`.
struct Envelope {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Envelope {
    /// In-place `L Lᵀ` factorization; `None` if the matrix is not positive definite.
    fn factor(&mut self) -> Option<()> {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut sum = self.rows[i][j - fi];
                let (ri, rj) = (&self.rows[i], &self.rows[j]);
                for k in k0..j {
                    sum -= ri[k - fi] * rj[k - fj];
                }
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    self.rows[i][j - fi] = sum.sqrt();
                } else {
                    let djj = self.rows[j][j - fj];
                    self.rows[i][j - fi] = sum / djj;
                }
            }
        }
        Some(())
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            let mut sum = b[i];
            for k in fi..i {
                sum -= self.rows[i][k - fi] * b[k];
            }
            b[i] = sum / self.rows[i][i - fi];
        }
        for i in (0..n).rev() {
            b[i] /= self.rows[i][i - self.first[i]];
            let bi = b[i];
            let fi = self.first[i];
            for k in fi..i {
                b[k] -= self.rows[i][k - fi] * bi;
            }
        }
    }
}

/// Solves `(A + λI) x = b` for symmetric positive definite `A + λI`.
pub fn solve_damped(a: &BlockMatrix, lambda: f64, b: &DVector<f64>) -> Option<DVector<f64>> {
    let blocks = a.blocks();
    let order = reverse_cuthill_mckee(&a.adjacency());
    let mut position = vec![0usize; blocks];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let mut first_block: Vec<usize> = (0..blocks).collect();
    for &(x, y) in a.upper.keys() {
        let (px, py) = (position[x], position[y]);
        let (hi, lo) = (px.max(py), px.min(py));
        first_block[hi] = first_block[hi].min(lo);
    }
    let n = 6 * blocks;
    let first: Vec<usize> = (0..n).map(|i| 6 * first_block[i / 6]).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i + 1 - first[i]]).collect();
    let mut env = Envelope { first, rows };

    for (old, d) in a.diag.iter().enumerate() {
        let p = 6 * position[old];
        for r in 0..6 {
            for c in 0..=r {
                let fi = env.first[p + r];
                env.rows[p + r][p + c - fi] = d[(r, c)] + if r == c { lambda } else { 0.0 };
            }
        }
    }
    for (&(x, y), m) in &a.upper {
        let (px, py) = (6 * position[x], 6 * position[y]);
        for r in 0..6 {
            for c in 0..6 {
                // block (x, y) holds rows of x and columns of y
                let (row, col) = if px > py { (px + r, py + c) } else { (py + c, px + r) };
                let fi = env.first[row];
                env.rows[row][col - fi] = m[(r, c)];
            }
        }
    }
    env.factor()?;

    let mut rhs = vec![0.0; n];
    for old in 0..blocks {
        for r in 0..6 {
            rhs[6 * position[old] + r] = b[6 * old + r];
        }
    }
    env.solve(&mut rhs);
    let mut x = DVector::zeros(n);
    for old in 0..blocks {
        for r in 0..6 {
            x[6 * old + r] = rhs[6 * position[old] + r];
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_block(rng: &mut ChaCha8Rng) -> Matrix6<f64> {
        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose() + Matrix6::identity()
    }

    fn to_dense(a: &BlockMatrix) -> DMatrix<f64> {
        let n = a.dim();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..a.blocks() {
            d.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&a.diag[i]);
        }
        for (&(x, y), m) in &a.upper {
            d.view_mut((6 * x, 6 * y), (6, 6)).copy_from(m);
            d.view_mut((6 * y, 6 * x), (6, 6)).copy_from(&m.transpose());
        }
        d
    }

    #[test]
    fn matches_dense_solve_on_graph_like_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let blocks = 5 + trial * 3;
            let mut a = BlockMatrix::new(blocks);
            // chain plus a few long-range edges, each edge an SPD contribution
            let mut edges: Vec<(usize, usize)> = (0..blocks - 1).map(|i| (i, i + 1)).collect();
            for _ in 0..blocks / 3 {
                let x = rng.random_range(0..blocks);
                let y = rng.random_range(0..blocks);
                if x != y {
                    edges.push((x, y));
                }
            }
            for (x, y) in edges {
                let m = random_spd_block(&mut rng);
                a.add(x, x, &m);
                a.add(y, y, &m);
                a.add(x, y, &(-m));
            }
            a.add(0, 0, &(Matrix6::identity() * 10.0));
            let b = DVector::from_fn(a.dim(), |_, _| rng.random_range(-1.0..1.0));
            let lambda = 1e-3;
            let x = solve_damped(&a, lambda, &b).unwrap();
            let residual = a.mul_vec(&x) + &x * lambda - &b;
            assert!(residual.amax() < 1e-10 * b.amax(), "trial {trial}: {}", residual.amax());
            let dense = to_dense(&a) + DMatrix::identity(a.dim(), a.dim()) * lambda;
            let y = dense.cholesky().unwrap().solve(&b);
            assert!((x - y).amax() < 1e-8);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = BlockMatrix::new(2);
        a.add(0, 0, &Matrix6::identity());
        a.add(1, 1, &(-Matrix6::identity()));
        assert!(solve_damped(&a, 0.0, &DVector::zeros(12)).is_none());
    }

    #[test]
    fn rcm_orders_a_path_contiguously() {
        let n = 8;
        let mut adj = vec![Vec::new(); n];
        // path 0-7-1-6-2-5-3-4 in scrambled labels
        let path = [0, 7, 1, 6, 2, 5, 3, 4];
        for w in path.windows(2) {
            adj[w[0]].push(w[1]);
            adj[w[1]].push(w[0]);
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        for w in path.windows(2) {
            assert_eq!(pos[w[0]].abs_diff(pos[w[1]]), 1);
        }
    }
}
