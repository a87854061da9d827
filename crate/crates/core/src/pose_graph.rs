//! Top-down pose graph over the layer-1 poses.
//!
//! Every adjacent pair inside every window of every layer becomes one
//! relative-pose factor between the layer-1 frames the two keyframes stand
//! for; overlapping windows contribute parallel factors. A strong prior on
//! node 0 fixes the gauge.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix6};

use crate::ba::adjacent_constraints;
use crate::error::{FrameIoError, GeometryError, GraphError};
use crate::geometry::{log_map, se3_right_jacobian_inv, Pose, Twist};
use crate::pyramid::Pyramid;
use crate::sparse::{solve_damped, BlockMatrix};

pub const PRIOR_INFORMATION: f64 = 1e6;
const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RelativePoseFactor {
    pub a: usize,
    pub b: usize,
    /// Measured `Ta⁻¹·Tb`.
    pub measurement: Pose,
    pub information: Matrix6<f64>,
    /// Layer the measurement came from.
    pub layer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFactor {
    pub node: usize,
    pub pose: Pose,
    pub information: Matrix6<f64>,
}

#[derive(Clone, Debug)]
pub struct FactorGraph {
    pub nodes: Vec<Pose>,
    pub factors: Vec<RelativePoseFactor>,
    pub prior: PriorFactor,
}

impl FactorGraph {
    /// Checks node indices and that every node is reachable from the prior node.
    pub fn new(nodes: Vec<Pose>, factors: Vec<RelativePoseFactor>, prior: PriorFactor) -> Result<Self, GraphError> {
        let len = nodes.len();
        for f in &factors {
            for node in [f.a, f.b] {
                if node >= len {
                    return Err(GraphError::MissingNode { node, len });
                }
            }
        }
        if prior.node >= len {
            return Err(GraphError::MissingNode { node: prior.node, len });
        }
        let mut parent: Vec<usize> = (0..len).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for f in &factors {
            let (ra, rb) = (find(&mut parent, f.a), find(&mut parent, f.b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let root = find(&mut parent, prior.node);
        for node in 0..len {
            if find(&mut parent, node) != root {
                return Err(GraphError::DisconnectedGraph { node });
            }
        }
        Ok(Self { nodes, factors, prior })
    }

    pub fn cost(&self) -> Result<f64, GraphError> {
        total_cost(self, &self.nodes)
    }
}

/// Collapses all window results of `pyramid` onto the layer-1 `nodes`.
pub fn build_graph(pyramid: &Pyramid, nodes: &[Pose]) -> Result<FactorGraph, GraphError> {
    let mut factors = Vec::new();
    let mut scale = 1usize;
    for layer in &pyramid.layers {
        for (span, result) in layer.windows.iter().zip(&layer.results) {
            for (k, c) in adjacent_constraints(result).into_iter().enumerate() {
                let j = span.start + k;
                factors.push(RelativePoseFactor {
                    a: scale * j,
                    b: scale * (j + 1),
                    measurement: c.measurement,
                    information: c.information,
                    layer: layer.index,
                });
            }
        }
        scale *= pyramid.stride;
    }
    let prior = PriorFactor {
        node: 0,
        pose: nodes[0],
        information: Matrix6::identity() * PRIOR_INFORMATION,
    };
    FactorGraph::new(nodes.to_vec(), factors, prior)
}

/// `e = Log(Z⁻¹·Ta⁻¹·Tb)` and its weighted square `eᵀΛe`.
pub fn factor_residual(f: &RelativePoseFactor, ta: &Pose, tb: &Pose) -> Result<(Twist, f64), GeometryError> {
    let e = log_map(&f.measurement.inverse().compose(&ta.relative(tb)))?;
    Ok((e, (e.transpose() * f.information * e)[0]))
}

pub fn prior_residual(p: &PriorFactor, t: &Pose) -> Result<(Twist, f64), GeometryError> {
    let e = log_map(&p.pose.relative(t))?;
    Ok((e, (e.transpose() * p.information * e)[0]))
}

fn total_cost(graph: &FactorGraph, poses: &[Pose]) -> Result<f64, GraphError> {
    let mut cost = prior_residual(&graph.prior, &poses[graph.prior.node])?.1;
    for f in &graph.factors {
        cost += factor_residual(f, &poses[f.a], &poses[f.b])?.1;
    }
    Ok(cost)
}

/// Gauss–Newton normal equations `JᵀΛJ`, `JᵀΛe` at `poses`.
fn normal_equations(graph: &FactorGraph, poses: &[Pose]) -> Result<(BlockMatrix, DVector<f64>), GraphError> {
    let n = poses.len();
    let mut h = BlockMatrix::new(n);
    let mut g = DVector::zeros(6 * n);
    let mut add_grad = |node: usize, v: Twist| {
        let mut slot = g.fixed_rows_mut::<6>(6 * node);
        slot += v;
    };
    {
        let p = &graph.prior;
        let (e, _) = prior_residual(p, &poses[p.node])?;
        let j = se3_right_jacobian_inv(&e);
        let jt_l = j.transpose() * p.information;
        h.add(p.node, p.node, &(jt_l * j));
        add_grad(p.node, jt_l * e);
    }
    for f in &graph.factors {
        let (ta, tb) = (&poses[f.a], &poses[f.b]);
        let (e, _) = factor_residual(f, ta, tb)?;
        let jr_inv = se3_right_jacobian_inv(&e);
        let jb = jr_inv;
        let ja = -jr_inv * tb.relative(ta).adjoint();
        let ja_t = ja.transpose() * f.information;
        let jb_t = jb.transpose() * f.information;
        h.add(f.a, f.a, &(ja_t * ja));
        h.add(f.b, f.b, &(jb_t * jb));
        h.add(f.a, f.b, &(ja_t * jb));
        add_grad(f.a, ja_t * e);
        add_grad(f.b, jb_t * e);
    }
    Ok((h, g))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphSolution {
    pub poses: Vec<Pose>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    /// False when the iteration cap was hit; the poses are still the best iterate.
    pub converged: bool,
}

/// Levenberg–Marquardt over all node poses.
pub fn optimize(graph: &FactorGraph, config: &GraphConfig) -> Result<GraphSolution, GraphError> {
    let mut poses = graph.nodes.clone();
    let mut cost = total_cost(graph, &poses)?;
    if !cost.is_finite() {
        return Err(GraphError::NonFiniteCost { iteration: 0 });
    }
    let initial_cost = cost;
    let mut lambda = config.lambda_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut cost_history = Vec::new();

    while iterations < config.max_iter {
        let (h, g) = normal_equations(graph, &poses)?;
        if g.amax() < config.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut small_step = false;
        while lambda <= LAMBDA_MAX {
            let Some(delta) = solve_damped(&h, lambda, &(-&g)) else {
                lambda *= config.lambda_up;
                continue;
            };
            let trial: Vec<Pose> = poses
                .iter()
                .enumerate()
                .map(|(i, p)| p.retract(&delta.fixed_rows::<6>(6 * i).into_owned()))
                .collect();
            // a step that crosses the log-map singularity is simply rejected
            let trial_cost = total_cost(graph, &trial).unwrap_or(f64::INFINITY);
            small_step = delta.amax() < config.step_tol;
            if trial_cost <= cost {
                poses = trial;
                cost = trial_cost;
                lambda = (lambda / config.lambda_down).max(LAMBDA_MIN);
                accepted = true;
                break;
            }
            if small_step {
                break;
            }
            lambda *= config.lambda_up;
        }
        if accepted {
            iterations += 1;
            cost_history.push(cost);
        }
        if small_step {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        log::warn!("pose graph stopped after {iterations} iterations without converging");
    }
    Ok(GraphSolution {
        poses,
        initial_cost,
        cost,
        iterations,
        cost_history,
        converged,
    })
}

/// One factor per line: `a b layer`, the measurement as 12 row-major numbers,
/// then the 21 upper-triangle entries of the information matrix.
pub fn format_edge_list(graph: &FactorGraph) -> String {
    let mut out = String::new();
    for f in &graph.factors {
        let _ = write!(out, "{} {} {}", f.a, f.b, f.layer);
        for v in f.measurement.to_row_major_3x4() {
            let _ = write!(out, " {v:e}");
        }
        for r in 0..6 {
            for c in r..6 {
                let _ = write!(out, " {:e}", f.information[(r, c)]);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_edge_list(graph: &FactorGraph, path: &Path) -> Result<(), FrameIoError> {
    std::fs::write(path, format_edge_list(graph)).map_err(|e| FrameIoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::WindowResult;
    use crate::geometry::exp_map;
    use crate::pyramid::{partition_windows, Layer, WindowSpan};
    use nalgebra::{Matrix6, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, scale: f64) -> Twist {
        Twist::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn identity_layer(index: usize, frames: usize, windows: Vec<WindowSpan>) -> Layer {
        let results = windows
            .iter()
            .map(|w| WindowResult::passthrough(vec![Pose::identity(); w.len]))
            .collect();
        Layer {
            index,
            frame_count: frames,
            windows,
            results,
        }
    }

    #[test]
    fn factors_collapse_onto_layer_one_nodes() {
        // 54 frames, w=6, s=3: layer 2 has 17 keyframes, layer 3 four
        let l1 = partition_windows(54, 6, 3);
        let l2 = partition_windows(l1.len(), 6, 3);
        let top = vec![WindowSpan { start: 0, len: l2.len() }];
        let pyramid = Pyramid {
            layers: vec![
                identity_layer(1, 54, l1.clone()),
                identity_layer(2, l1.len(), l2.clone()),
                identity_layer(3, l2.len(), top),
            ],
            stride: 3,
            base_pose: Pose::identity(),
            voxel_seconds: 0.0,
            ba_seconds: 0.0,
        };
        let graph = build_graph(&pyramid, &vec![Pose::identity(); 54]).unwrap();
        let layer2: Vec<_> = graph.factors.iter().filter(|f| f.layer == 2).collect();
        assert_eq!((layer2[0].a, layer2[0].b), (0, 3));
        let layer3: Vec<_> = graph.factors.iter().filter(|f| f.layer == 3).collect();
        assert_eq!((layer3[0].a, layer3[0].b), (0, 9));
        let expected: usize = pyramid
            .layers
            .iter()
            .flat_map(|l| l.windows.iter().map(|w| w.len - 1))
            .sum();
        assert_eq!(graph.factors.len(), expected);
    }

    #[test]
    fn overlap_pairs_get_one_factor_per_window() {
        let pyramid = Pyramid {
            layers: vec![identity_layer(1, 20, partition_windows(20, 10, 5))],
            stride: 5,
            base_pose: Pose::identity(),
            voxel_seconds: 0.0,
            ba_seconds: 0.0,
        };
        let graph = build_graph(&pyramid, &vec![Pose::identity(); 20]).unwrap();
        assert_eq!(graph.factors.iter().filter(|f| f.a == 5 && f.b == 6).count(), 2);
        assert_eq!(graph.factors.len(), 27);
    }

    #[test]
    fn disconnected_and_missing_nodes() {
        let f = |a, b| RelativePoseFactor {
            a,
            b,
            measurement: Pose::identity(),
            information: Matrix6::identity(),
            layer: 1,
        };
        let prior = PriorFactor {
            node: 0,
            pose: Pose::identity(),
            information: Matrix6::identity(),
        };
        let err = FactorGraph::new(vec![Pose::identity(); 4], vec![f(0, 1), f(2, 3)], prior.clone()).unwrap_err();
        assert_eq!(err, GraphError::DisconnectedGraph { node: 2 });
        let err = FactorGraph::new(vec![Pose::identity(); 2], vec![f(0, 2)], prior).unwrap_err();
        assert_eq!(err, GraphError::MissingNode { node: 2, len: 2 });
    }

    #[test]
    fn residual_examples() {
        let f = RelativePoseFactor {
            a: 0,
            b: 1,
            measurement: Pose::identity(),
            information: Matrix6::identity(),
            layer: 1,
        };
        let eps = 1e-3;
        let (_, cost) = factor_residual(&f, &Pose::identity(), &Pose::from_translation(Vector3::new(eps, 0.0, 0.0))).unwrap();
        assert!((cost - eps * eps).abs() < 1e-18);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ta = exp_map(&random_twist(&mut rng, 1.0));
        let z = exp_map(&random_twist(&mut rng, 1.0));
        let (e, cost) = factor_residual(&RelativePoseFactor { measurement: z, ..f.clone() }, &ta, &ta.compose(&z)).unwrap();
        assert!(e.amax() < 1e-12 && cost < 1e-24);

        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let info = a * a.transpose() + Matrix6::identity();
        let tb = exp_map(&random_twist(&mut rng, 1.0));
        let factor = RelativePoseFactor {
            measurement: z,
            information: info,
            ..f
        };
        let (e, cost) = factor_residual(&factor, &ta, &tb).unwrap();
        let mut dense = 0.0;
        for r in 0..6 {
            for c in 0..6 {
                dense += e[r] * info[(r, c)] * e[c];
            }
        }
        assert!((cost - dense).abs() < 1e-12 * dense.max(1.0));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let f = RelativePoseFactor {
            a: 0,
            b: 1,
            measurement: exp_map(&random_twist(&mut rng, 0.5)),
            information: Matrix6::identity(),
            layer: 1,
        };
        let ta = exp_map(&random_twist(&mut rng, 1.0));
        let tb = ta.compose(&f.measurement).compose(&exp_map(&random_twist(&mut rng, 0.3)));
        let (e, _) = factor_residual(&f, &ta, &tb).unwrap();
        let jr_inv = se3_right_jacobian_inv(&e);
        let ja = -jr_inv * tb.relative(&ta).adjoint();
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Twist::zeros();
            d[k] = h;
            let plus = factor_residual(&f, &ta.retract(&d), &tb).unwrap().0;
            let minus = factor_residual(&f, &ta.retract(&(-d)), &tb).unwrap().0;
            assert!(((plus - minus) / (2.0 * h) - ja.column(k)).amax() < 1e-7);
            let plus = factor_residual(&f, &ta, &tb.retract(&d)).unwrap().0;
            let minus = factor_residual(&f, &ta, &tb.retract(&(-d))).unwrap().0;
            assert!(((plus - minus) / (2.0 * h) - jr_inv.column(k)).amax() < 1e-7);
        }
    }

    fn chain(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Pose>, Vec<RelativePoseFactor>) {
        let mut truth = vec![exp_map(&random_twist(rng, 1.0))];
        for _ in 1..n {
            let step = exp_map(&random_twist(rng, 0.5));
            truth.push(truth.last().unwrap().compose(&step));
        }
        let factors = (0..n - 1)
            .map(|i| RelativePoseFactor {
                a: i,
                b: i + 1,
                measurement: truth[i].relative(&truth[i + 1]),
                information: Matrix6::identity(),
                layer: 1,
            })
            .collect();
        (truth, factors)
    }

    #[test]
    fn chain_is_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (truth, factors) = chain(&mut rng, 10);
        let init: Vec<Pose> = truth
            .iter()
            .map(|t| t.retract(&random_twist(&mut rng, 0.1)))
            .collect();
        let prior = PriorFactor {
            node: 0,
            pose: init[0],
            information: Matrix6::identity() * PRIOR_INFORMATION,
        };
        let graph = FactorGraph::new(init, factors, prior).unwrap();
        let sol = optimize(&graph, &GraphConfig::default()).unwrap();
        assert!(sol.converged);
        for w in sol.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let (e0, t0) = (sol.poses[0].inverse(), truth[0].inverse());
        for (est, gt) in sol.poses.iter().zip(&truth) {
            assert!(e0.compose(est).max_abs_diff(&t0.compose(gt)) < 1e-8);
        }
    }

    #[test]
    fn consistent_graph_at_optimum_does_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (truth, factors) = chain(&mut rng, 8);
        let prior = PriorFactor {
            node: 0,
            pose: truth[0],
            information: Matrix6::identity() * PRIOR_INFORMATION,
        };
        let graph = FactorGraph::new(truth.clone(), factors, prior).unwrap();
        let sol = optimize(&graph, &GraphConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        for (a, b) in sol.poses.iter().zip(&truth) {
            assert!(a.max_abs_diff(b) < 1e-10);
        }
    }

    #[test]
    fn parallel_factors_average() {
        let f = |x: f64| RelativePoseFactor {
            a: 0,
            b: 1,
            measurement: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
            information: Matrix6::identity(),
            layer: 1,
        };
        let prior = PriorFactor {
            node: 0,
            pose: Pose::identity(),
            information: Matrix6::identity() * PRIOR_INFORMATION,
        };
        let graph = FactorGraph::new(vec![Pose::identity(); 2], vec![f(1.0), f(2.0)], prior).unwrap();
        let sol = optimize(&graph, &GraphConfig::default()).unwrap();
        let expected = Pose::from_translation(Vector3::new(1.5, 0.0, 0.0));
        assert!(sol.poses[1].max_abs_diff(&expected) < 1e-9, "{:?}", sol.poses[1]);
        assert!(sol.poses[0].max_abs_diff(&Pose::identity()) < 1e-9);
    }

    #[test]
    fn cost_is_order_invariant_and_dump_has_one_line_per_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (truth, mut factors) = chain(&mut rng, 6);
        let nodes: Vec<Pose> = truth.iter().map(|t| t.retract(&random_twist(&mut rng, 0.05))).collect();
        let prior = PriorFactor {
            node: 0,
            pose: truth[0],
            information: Matrix6::identity() * PRIOR_INFORMATION,
        };
        let a = FactorGraph::new(nodes.clone(), factors.clone(), prior.clone()).unwrap();
        factors.reverse();
        let b = FactorGraph::new(nodes, factors, prior).unwrap();
        assert!((a.cost().unwrap() - b.cost().unwrap()).abs() < 1e-12);
        let dump = format_edge_list(&a);
        assert_eq!(dump.lines().count(), 5);
        assert_eq!(dump.lines().next().unwrap().split_whitespace().count(), 3 + 12 + 21);
    }
}
