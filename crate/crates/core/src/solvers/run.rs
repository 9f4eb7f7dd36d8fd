//! The round loop: local proximal steps, neighbor exchange, dual ascent.

use nalgebra::{DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::estimators::{estimate_pair, sample_directions};
use crate::graph::{spectral_summary, weight_matrix, WeightedGraph};
use crate::objectives::Problem;
use crate::simnet::{exchange, ExchangeRecord, ExchangeTrace};
use crate::solvers::line_search::{armijo_stepsize, LineSearchError};
use crate::solvers::proximal::{choose_d, solve_with_eigen, CONDITIONING_FLOOR};
use crate::solvers::record::{
    IterationMetrics, RunMetadata, RunRecord, StateSnapshot, StepInfo,
};
use crate::solvers::{AlgoConfig, NodeState, SlopeMode};
use crate::util::{rng_for, seed_tag};

/// Diagnostics of one round.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Value queries made this round: `N (2b + 1)` for the estimates plus
    /// one per line-search probe (plus one per node under the
    /// finite-difference slope).
    pub value_calls: usize,
    pub steps: Vec<StepInfo>,
    pub records: Vec<ExchangeRecord>,
    pub conditioning_shifts: usize,
}

fn node_context(node: usize, round: usize) -> String {
    format!(" at node {node}, round {round}")
}

fn attach_context(err: Error, node: usize, round: usize) -> Error {
    match err {
        Error::NonFinite { point, context } => Error::NonFinite {
            point,
            context: format!("{context}{}", node_context(node, round)),
        },
        Error::Conditioning { lambda_min, context } => Error::Conditioning {
            lambda_min,
            context: format!("{context}{}", node_context(node, round)),
        },
        other => other,
    }
}

/// One synchronous round of the zeroth-order solver: every node estimates
/// curvature and gradient from shared probe directions, solves its local
/// proximal system, backtracks a stepsize, moves, and then the engine
/// exchanges primal values so nodes can refresh the penalty stencil and
/// ascend their duals. Neighbor values are read only after all nodes have
/// moved, matching the send/receive order of the distributed protocol.
///
/// The line search certifies decrease of the local augmented model
/// `phi_i(p) = f_i(p) + (rho y_i + q_i)^T p`, the function whose quadratic
/// model the search direction minimizes. Its directional-derivative
/// surrogate `(g + rho y + q)^T d` is nonpositive whenever the local
/// system is positive definite, so the search cannot stall on
/// consensus-driven moves that raise the raw local objective; each probe
/// still costs exactly one value query since the linear term is known
/// locally.
pub fn zopro_round(
    states: &mut [NodeState],
    problem: &Problem,
    graph: &WeightedGraph,
    cfg: &AlgoConfig,
    round: usize,
) -> Result<RoundOutput> {
    let n = states.len();
    assert_eq!(n, problem.n_nodes());
    assert_eq!(n, graph.n_nodes());
    let mu = cfg.smoothing.mu;
    let dirs = sample_directions(&cfg.smoothing, problem.dimension(), round);
    let floor_alpha = cfg.alpha_floor_a_priori();

    let mut steps = Vec::with_capacity(n);
    let mut value_calls = 0usize;
    let mut conditioning_shifts = 0usize;

    for i in 0..n {
        let node = problem.node(i);
        let f = |p: &DVector<f64>| node.value(p);

        let (g, h, f0, calls) = estimate_pair(f, &states[i].x, &dirs, mu)
            .map_err(|e| attach_context(e, i, round))?;
        value_calls += calls;

        let sys = &h + &states[i].d_mat;
        let mut eig = SymmetricEigen::new(sys);
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= CONDITIONING_FLOOR {
            // estimator noise can break positivity at finite batch sizes;
            // shift the spectrum up to the floor and log the event
            let shift = CONDITIONING_FLOOR - lambda_min;
            for k in 0..eig.eigenvalues.len() {
                eig.eigenvalues[k] += shift;
            }
            conditioning_shifts += 1;
        }
        let linear = &states[i].y * cfg.rho + &states[i].q;
        let rhs = -(&g + &linear);
        let dir = solve_with_eigen(&eig, &rhs);

        // augmented local merit: one value query per probe, linear term free
        let phi = |p: &DVector<f64>| f(p) + linear.dot(p);
        let phi0 = f0 + linear.dot(&states[i].x);

        let slope = match cfg.slope_mode {
            SlopeMode::GradientEstimate => g.dot(&dir) + linear.dot(&dir),
            SlopeMode::ForwardDifference { epsilon } => {
                let probe = &states[i].x + &dir * epsilon;
                let fp = phi(&probe);
                value_calls += 1;
                if !fp.is_finite() {
                    return Err(attach_context(
                        Error::NonFinite {
                            point: probe.iter().cloned().collect(),
                            context: " while probing the slope".into(),
                        },
                        i,
                        round,
                    ));
                }
                (fp - phi0) / epsilon
            }
        };

        let (alpha, probes, accepted, f_after) = match armijo_stepsize(
            phi,
            phi0,
            &states[i].x,
            &dir,
            slope,
            cfg.c_armijo,
            cfg.shrink,
            cfg.max_backtracks,
        ) {
            Ok((alpha, probes, f_alpha)) => {
                value_calls += probes;
                (alpha, probes, true, Some(f_alpha))
            }
            Err(LineSearchError::NonDescent { .. }) => (floor_alpha, 0, false, None),
            Err(LineSearchError::Exhausted { last_alpha, probes }) => {
                value_calls += probes;
                (last_alpha, probes, false, None)
            }
        };

        states[i].x = &states[i].x + &dir * alpha;
        states[i].alpha_last = alpha;
        steps.push(StepInfo {
            alpha,
            slope,
            accepted,
            probes,
            f_before: Some(phi0),
            f_after,
        });
    }

    let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let (views, records) = exchange(&xs, graph, round + 1);
    for (i, state) in states.iter_mut().enumerate() {
        let y = views[i].stencil(&state.x, graph);
        state.q += &y * cfg.rho;
        state.y = y;
    }

    Ok(RoundOutput {
        value_calls,
        steps,
        records,
        conditioning_shifts,
    })
}

/// One round of the exact-derivative solver: unit step through the local
/// system built from the true gradient and Hessian, then the same exchange
/// and dual ascent. No smoothing, no line search, no value queries.
fn sopro_round(
    states: &mut [NodeState],
    problem: &Problem,
    graph: &WeightedGraph,
    cfg: &AlgoConfig,
    round: usize,
) -> Result<RoundOutput> {
    let n = states.len();
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let node = problem.node(i);
        let g = node.gradient(&states[i].x);
        let h = node.hessian(&states[i].x);
        let sys = &h + &states[i].d_mat;
        let eig = SymmetricEigen::new(sys);
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= CONDITIONING_FLOOR {
            return Err(Error::Conditioning {
                lambda_min,
                context: node_context(i, round),
            });
        }
        let linear = &states[i].y * cfg.rho + &states[i].q;
        let rhs = -(&g + &linear);
        let dir = solve_with_eigen(&eig, &rhs);
        let slope = g.dot(&dir) + linear.dot(&dir);
        states[i].x = &states[i].x + &dir;
        states[i].alpha_last = 1.0;
        steps.push(StepInfo {
            alpha: 1.0,
            slope,
            accepted: true,
            probes: 0,
            f_before: None,
            f_after: None,
        });
    }
    let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let (views, records) = exchange(&xs, graph, round + 1);
    for (i, state) in states.iter_mut().enumerate() {
        let y = views[i].stencil(&state.x, graph);
        state.q += &y * cfg.rho;
        state.y = y;
    }
    Ok(RoundOutput {
        value_calls: 0,
        steps,
        records,
        conditioning_shifts: 0,
    })
}

fn init_states(
    problem: &Problem,
    graph: &WeightedGraph,
    seed: u64,
    d_blocks: &[nalgebra::DMatrix<f64>],
    cfg: &AlgoConfig,
    trace: &mut Option<ExchangeTrace>,
) -> Vec<NodeState> {
    let n = problem.n_nodes();
    let d = problem.dimension();
    let mut rng = rng_for(seed, seed_tag::INIT_STATE);
    let mut states: Vec<NodeState> = (0..n)
        .map(|i| NodeState {
            x: DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)),
            q: DVector::zeros(d),
            y: DVector::zeros(d),
            d_mat: d_blocks[i].clone(),
            alpha_last: 1.0,
        })
        .collect();
    let xs: Vec<DVector<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let (views, records) = exchange(&xs, graph, 0);
    for (i, state) in states.iter_mut().enumerate() {
        state.y = views[i].stencil(&state.x, graph);
    }
    if cfg.record_trace {
        trace.get_or_insert_with(ExchangeTrace::default).extend(records);
    }
    states
}

fn snapshot(states: &[NodeState]) -> StateSnapshot {
    StateSnapshot {
        x: states.iter().map(|s| s.x.clone()).collect(),
        q: states.iter().map(|s| s.q.clone()).collect(),
        y: states.iter().map(|s| s.y.clone()).collect(),
    }
}

enum Algorithm {
    Zopro,
    Sopro,
}

fn run_loop(
    algorithm: Algorithm,
    problem: &Problem,
    graph: &WeightedGraph,
    cfg: &AlgoConfig,
    seed: u64,
    x_star: &DVector<f64>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if graph.n_nodes() != problem.n_nodes() {
        return Err(Error::Parameter(format!(
            "graph has {} nodes but problem has {}",
            graph.n_nodes(),
            problem.n_nodes()
        )));
    }
    if x_star.len() != problem.dimension() {
        return Err(Error::Parameter("reference optimum dimension mismatch".into()));
    }
    let n = problem.n_nodes();
    let bounds = problem.convexity_bounds();
    let spectral = spectral_summary(&weight_matrix(graph))?;
    let prox = choose_d(
        &cfg.d_policy,
        &bounds,
        cfg.rho,
        spectral.lambda_max,
        problem.dimension(),
    )?;

    let mut trace: Option<ExchangeTrace> = None;
    let mut states = init_states(problem, graph, seed, &prox.blocks, cfg, &mut trace);

    let mut series: Vec<IterationMetrics> = Vec::new();
    let mut snapshots: Option<Vec<StateSnapshot>> =
        cfg.record_states.then(|| vec![snapshot(&states)]);
    let mut step_log: Option<Vec<Vec<StepInfo>>> = cfg.record_steps.then(Vec::new);

    let mut value_calls = 0usize;
    let mut derivative_calls = 0usize;
    let mut conditioning_shifts = 0usize;
    let mut fallback_steps = 0usize;
    let mut alpha_floor_observed: Option<f64> = None;
    let mut consecutive_ok = 0usize;

    for k in 0..cfg.max_iterations {
        let out = match algorithm {
            Algorithm::Zopro => zopro_round(&mut states, problem, graph, cfg, k)?,
            Algorithm::Sopro => {
                derivative_calls += 2 * n;
                sopro_round(&mut states, problem, graph, cfg, k)?
            }
        };
        value_calls += out.value_calls;
        conditioning_shifts += out.conditioning_shifts;
        for s in &out.steps {
            if s.accepted {
                alpha_floor_observed =
                    Some(alpha_floor_observed.map_or(s.alpha, |a: f64| a.min(s.alpha)));
            } else {
                fallback_steps += 1;
            }
        }

        let avg_error = states
            .iter()
            .map(|s| (&s.x - x_star).norm_squared())
            .sum::<f64>()
            / n as f64;
        let consensus_residual = states
            .iter()
            .map(|s| s.y.norm_squared())
            .sum::<f64>()
            .sqrt();
        let objective = states
            .iter()
            .enumerate()
            .map(|(i, s)| problem.node(i).value(&s.x))
            .sum::<f64>();
        let min_alpha = out.steps.iter().map(|s| s.alpha).fold(f64::INFINITY, f64::min);
        let max_alpha = out.steps.iter().map(|s| s.alpha).fold(f64::NEG_INFINITY, f64::max);
        series.push(IterationMetrics {
            iter: k,
            avg_error,
            consensus_residual,
            objective,
            min_alpha,
            max_alpha,
            oracle_calls: value_calls,
        });

        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(snapshot(&states));
        }
        if let Some(log) = step_log.as_mut() {
            log.push(out.steps);
        }
        if cfg.record_trace {
            trace.get_or_insert_with(ExchangeTrace::default).extend(out.records);
        }

        if let Some(stop) = &cfg.stop {
            if avg_error <= stop.tolerance {
                consecutive_ok += 1;
            } else {
                consecutive_ok = 0;
            }
            if consecutive_ok > stop.window {
                break;
            }
        }
    }

    let iterations_run = series.len();
    Ok(RunRecord {
        metadata: RunMetadata {
            algorithm: match algorithm {
                Algorithm::Zopro => "zopro".into(),
                Algorithm::Sopro => "sopro".into(),
            },
            seed,
            config: cfg.clone(),
            graph_digest: graph.digest(),
            problem_digest: problem.digest(),
            n_nodes: n,
            dimension: problem.dimension(),
            x_star: x_star.iter().cloned().collect(),
            d_tau: prox.tau,
            alpha_floor_observed,
            alpha_floor_a_priori: cfg.alpha_floor_a_priori(),
            conditioning_shifts,
            fallback_steps,
            value_calls,
            derivative_calls,
            iterations_run,
        },
        series,
        states: snapshots,
        steps: step_log,
        trace,
    })
}

/// Runs the zeroth-order solver from a seeded Gaussian start with zero
/// duals. Deterministic in `(seed, cfg, problem, graph)`.
pub fn run_zopro(
    problem: &Problem,
    graph: &WeightedGraph,
    cfg: &AlgoConfig,
    seed: u64,
    x_star: &DVector<f64>,
) -> Result<RunRecord> {
    run_loop(Algorithm::Zopro, problem, graph, cfg, seed, x_star)
}

/// Runs the exact-derivative solver from the same seeded start. Shares the
/// configuration (penalty, proximal policy, iteration budget) with the
/// zeroth-order variant; smoothing and line-search settings are unused.
pub fn run_sopro(
    problem: &Problem,
    graph: &WeightedGraph,
    cfg: &AlgoConfig,
    seed: u64,
    x_star: &DVector<f64>,
) -> Result<RunRecord> {
    run_loop(Algorithm::Sopro, problem, graph, cfg, seed, x_star)
}
