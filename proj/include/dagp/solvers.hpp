#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dagp/graph.hpp"
#include "dagp/problems.hpp"

namespace dagp {

/// Per-node working tuple. After any round, x is the projection output and
/// z - x lies in the normal cone of the node's constraint set at x.
struct NodeState {
    Eigen::VectorXd x;
    Eigen::VectorXd z;
    Eigen::VectorXd g;
    Eigen::VectorXd h;
};

struct DagpParams {
    double mu = 0.1;      // projection step
    double rho = 0.1;     // tracking gain
    double alpha = 0.1;   // feedback gain
    int iterations = 0;
};

/// One row of metrics. Gaps are measured at the node-average solution for
/// instantaneous rows and at the time averages for the averaged rows; the
/// objective gap is relative to the attached reference (raw objective sum
/// when no reference is present).
struct TraceRecord {
    int iter = 0;
    double obj_gap = 0.0;
    double feas_max = 0.0;   // max_v squared distance to S^v
    double feas_sum = 0.0;   // sum over v of squared distances
    double consensus = 0.0;  // sum over v of squared spread around the mean
    double gsum_norm = 0.0;  // squared norm of the summed tracking vectors
    double wallclock_s = 0.0;
};

/// Metric trajectories of one run. instant[k] is measured after round k+1
/// at the current iterates; time_avg[k] is measured at the running averages
/// of iterates 0..k, the quantities the sublinear rates are stated for.
struct SolverTrace {
    std::vector<TraceRecord> instant;
    std::vector<TraceRecord> time_avg;
};

inline constexpr char kTraceHeader[] =
    "iter,obj_gap,feas_max,feas_sum,consensus,gsum_norm,wallclock_s";

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& rows);

/// One synchronized round. Every node consumes only round-k messages
/// (x^u, h^u - g^u) from its in-neighbors plus its own tuple; all four
/// updates are computed Jacobi style from the same snapshot.
void dagp_round(std::vector<NodeState>& states,
                const DecentralizedProblem& problem, const GossipPair& gossip,
                const DagpParams& params);

struct DagpRun {
    SolverTrace trace;
    std::vector<NodeState> states;
};

/// Node tuples captured before the first round and after every round, so
/// history[k] is the state after k rounds.
using StateHistory = std::vector<std::vector<NodeState>>;

/// Runs params.iterations rounds from the given start. h starts at zero,
/// which the rounds preserve in sum; g0 defaults to zero as well. A non-null
/// history receives every intermediate state.
DagpRun run_dagp(const DecentralizedProblem& problem, const DirectedGraph& graph,
                 const DagpParams& params,
                 const std::vector<Eigen::VectorXd>& x0,
                 const std::vector<Eigen::VectorXd>& g0,
                 StateHistory* history = nullptr);

/// Convenience start: x0 standard normal from the seed, g0 = 0.
DagpRun run_dagp(const DecentralizedProblem& problem, const DirectedGraph& graph,
                 const DagpParams& params, std::uint64_t seed,
                 StateHistory* history = nullptr);

std::vector<Eigen::VectorXd> random_start(int node_count, int dimension,
                                          std::uint64_t seed);

struct DdpsParams {
    double step_scale = 1.0;    // step at round k is step_scale / sqrt(k)
    double surplus_gain = 0.05; // weight of the surplus fed back into x
    int iterations = 0;
};

/// Surplus-based subgradient method with per-node local projection. Mixes
/// x with the row-stochastic matrix and the surplus y with the
/// column-stochastic one; the gsum_norm column reports ‖Σ_v y^v‖².
SolverTrace run_ddps(const DecentralizedProblem& problem,
                     const DirectedGraph& graph, const DdpsParams& params,
                     const std::vector<Eigen::VectorXd>& x0);

/// Row-stochastic solution mixing with column-stochastic gradient tracking,
/// fixed step. Unconstrained problems only.
SolverTrace run_push_pull(const DecentralizedProblem& problem,
                          const DirectedGraph& graph, double step,
                          int iterations,
                          const std::vector<Eigen::VectorXd>& x0);

/// Column-stochastic-only gradient tracking with scalar de-biasing weights,
/// fixed step. Unconstrained problems only; metrics are taken at the
/// de-biased iterates.
SolverTrace run_add_opt(const DecentralizedProblem& problem,
                        const DirectedGraph& graph, double step,
                        int iterations,
                        const std::vector<Eigen::VectorXd>& x0);

/// Projected gradient on the summed objective, with cyclic corrected
/// projections onto the constraint intersection. Halfspace multipliers are
/// recovered so the stationarity residual is below the tolerance; for other
/// constrained variants the normals are marked unavailable.
ReferenceSolution centralized_reference(const DecentralizedProblem& problem,
                                        double tolerance,
                                        int max_iterations = 2000000);

/// Entropy-regularized scaling iterations. Underflow in the kernel or the
/// scalings raises NumericalUnderflow rather than clamping.
Eigen::MatrixXd run_sinkhorn(const Eigen::VectorXd& source_marginal,
                             const Eigen::VectorXd& target_marginal,
                             const Eigen::MatrixXd& cost, double regularization,
                             double tolerance, int max_iterations = 100000);

struct TransportPlan {
    Eigen::MatrixXd plan;
    double cost = 0.0;
};

/// Exact minimum-cost coupling by enumerating the basic solutions of the
/// transport polytope (spanning trees of the complete bipartite support).
/// Exponential in the instance size; guarded for desk-scale inputs.
TransportPlan exact_transport_plan(const Eigen::VectorXd& source_marginal,
                                   const Eigen::VectorXd& target_marginal,
                                   const Eigen::MatrixXd& cost);

/// Fraction of plan entries below the threshold.
double sparsity(const Eigen::MatrixXd& plan, double threshold);

}  // namespace dagp
