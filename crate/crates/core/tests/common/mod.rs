//! Reference implementations used only by the integration tests. Each one
//! recomputes a library quantity from first principles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pushpull::graph::Digraph;
use pushpull::problems::{LeastSquares, ProblemSet};

pub const UNREACHABLE: usize = usize::MAX / 4;

/// All-pairs shortest path lengths by Floyd-Warshall.
pub fn floyd_warshall(g: &Digraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut d = vec![vec![UNREACHABLE; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(i, j) in g.edges() {
        d[i][j] = 1;
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][m] + d[m][j] < d[i][j] {
                    d[i][j] = d[i][m] + d[m][j];
                }
            }
        }
    }
    d
}

pub fn fw_diameter(g: &Digraph) -> usize {
    floyd_warshall(g).into_iter().flatten().max().unwrap()
}

/// Every shortest path from `from` to `to`, as node lists.
pub fn shortest_paths(g: &Digraph, d: &[Vec<usize>], from: usize, to: usize) -> Vec<Vec<usize>> {
    fn walk(g: &Digraph, d: &[Vec<usize>], at: usize, to: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == to {
            out.push(path.clone());
            return;
        }
        for &next in g.out_neighbors(at) {
            if d[next][to] + 1 == d[at][to] {
                path.push(next);
                walk(g, d, next, to, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(g, d, from, to, &mut vec![from], &mut out);
    out
}

/// Outcome of the brute-force edge-utility search.
pub struct Covering {
    pub utility: usize,
    /// Number of coverings enumerated; zero when the space was too large and
    /// loads were maximized per edge over all path choices instead.
    pub coverings: u64,
}

/// Largest edge load over shortest-path coverings. A covering picks one
/// shortest path per ordered pair; when at most `cap` coverings exist they
/// are all enumerated.
pub fn covering_utility(g: &Digraph, cap: u64) -> Covering {
    let n = g.n();
    let d = floyd_warshall(g);
    let mut choices: Vec<Vec<Vec<(usize, usize)>>> = Vec::new();
    for j in 0..n {
        for l in 0..n {
            if j != l {
                let paths = shortest_paths(g, &d, j, l);
                choices.push(paths.iter().map(|p| p.windows(2).map(|w| (w[0], w[1])).collect()).collect());
            }
        }
    }
    let total = choices.iter().try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64));
    let edge_index = |e: (usize, usize)| e.0 * n + e.1;

    match total {
        Some(total) if total <= cap => {
            let mut best = 0;
            let mut idx = vec![0usize; choices.len()];
            loop {
                let mut load = vec![0usize; n * n];
                for (pair, &c) in choices.iter().zip(&idx) {
                    for &e in &pair[c] {
                        load[edge_index(e)] += 1;
                    }
                }
                best = best.max(load.into_iter().max().unwrap_or(0));
                // Odometer increment over path choices.
                let mut pos = 0;
                loop {
                    if pos == idx.len() {
                        return Covering { utility: best, coverings: total };
                    }
                    idx[pos] += 1;
                    if idx[pos] < choices[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
        }
        _ => {
            let utility = g
                .edges()
                .iter()
                .map(|e| choices.iter().filter(|pair| pair.iter().any(|path| path.contains(e))).count())
                .max()
                .unwrap_or(0);
            Covering { utility, coverings: 0 }
        }
    }
}

/// Random strongly connected digraph: a relabelled ring plus extra edges.
pub fn random_strong_digraph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Digraph {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push((perm[i], perm[(i + 1) % n]));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    if n == 1 {
        edges.clear();
    }
    Digraph::new(n, edges).expect("valid digraph")
}

/// Characteristic polynomial coefficients `[c0, c1, c2, c3, 1]` of a 4x4
/// matrix by the Faddeev-LeVerrier recursion.
pub fn char_poly(m: &Matrix4<f64>) -> [f64; 5] {
    let mut coeffs = [0.0; 5];
    coeffs[4] = 1.0;
    let mut mk = Matrix4::zeros();
    let id = Matrix4::identity();
    for k in 1..=4 {
        mk = m * mk + id * coeffs[5 - k];
        coeffs[4 - k] = -(m * mk).trace() / k as f64;
    }
    coeffs
}

/// Roots of a monic polynomial by Durand-Kerner iteration.
pub fn poly_roots(coeffs: &[f64; 5]) -> [Complex64; 4] {
    let eval = |z: Complex64| coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let scale = 1.0 + coeffs[..4].iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: [Complex64; 4] = std::array::from_fn(|i| seed.powu(i as u32) * scale);
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for i in 0..4 {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..4 {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            moved = moved.max(delta.norm());
        }
        if moved < 1e-15 * scale {
            break;
        }
    }
    roots
}

pub fn oracle_spectral_radius(m: &Matrix4<f64>) -> f64 {
    poly_roots(&char_poly(m)).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut up = x.clone();
        let mut down = x.clone();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Random strongly convex quadratic as a single least-squares agent.
pub fn random_quadratic(rng: &mut ChaCha8Rng, p: usize) -> ProblemSet {
    let h = DMatrix::from_fn(p + 2, p, |_, _| rng.random_range(-1.0..1.0));
    let z = DVector::from_fn(p + 2, |_, _| rng.random_range(-1.0..1.0));
    let lambda = rng.random_range(0.05..0.5);
    ProblemSet::least_squares("quadratic", vec![LeastSquares::new(h, z, lambda).unwrap()]).unwrap()
}

/// Independent single-agent recursion: heavy ball plus Nesterov
/// extrapolation, with plain gradient descent at `beta = gamma = 0`.
pub fn centralized_trajectory(
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    iters: usize,
) -> Vec<DVector<f64>> {
    let mut x_prev = x0.clone();
    let mut x = x0.clone();
    let mut s = x0.clone();
    let mut out = vec![x.clone()];
    for _ in 0..iters {
        let next = &s - grad(&s) * alpha + (&x - &x_prev) * beta;
        s = &next + (&next - &x) * gamma;
        x_prev = std::mem::replace(&mut x, next);
        out.push(x.clone());
    }
    out
}
