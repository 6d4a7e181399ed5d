#include "dagp/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "dagp/errors.hpp"
#include "dagp/operators.hpp"
#include "dagp/rng.hpp"

namespace dagp {

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& rows) {
    out << kTraceHeader << "\n";
    char buffer[192];
    for (const auto& r : rows) {
        std::snprintf(buffer, sizeof(buffer),
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter,
                      r.obj_gap, r.feas_max, r.feas_sum, r.consensus,
                      r.gsum_norm, r.wallclock_s);
        out << buffer;
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Builds both metric rows of a run. Time-averaged rows at iteration k use
// the iterates 0..k-1, matching the averaged quantities the sublinear
// rates are stated for, so iterates are absorbed before the round that
// replaces them.
class MetricsRecorder {
public:
    MetricsRecorder(const DecentralizedProblem& problem, SolverTrace& trace)
        : problem_(problem),
          trace_(trace),
          fstar_(problem.reference ? problem.reference->objective : 0.0),
          start_(Clock::now()),
          x_sums_(static_cast<std::size_t>(problem.node_count()),
                  Eigen::VectorXd::Zero(problem.dimension)),
          tracking_sum_(Eigen::VectorXd::Zero(problem.dimension)) {}

    void absorb(const std::vector<Eigen::VectorXd>& xs,
                const Eigen::VectorXd& tracking) {
        for (std::size_t v = 0; v < xs.size(); ++v) x_sums_[v] += xs[v];
        tracking_sum_ += tracking;
        ++absorbed_;
    }

    void record(int iter, const std::vector<Eigen::VectorXd>& xs,
                const Eigen::VectorXd& tracking) {
        const double elapsed = seconds_since(start_);
        const int m = problem_.node_count();

        TraceRecord now;
        now.iter = iter;
        now.wallclock_s = elapsed;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(problem_.dimension);
        for (const auto& x : xs) mean += x;
        mean /= m;
        now.obj_gap = problem_.global_objective(mean) - fstar_;
        const Eigen::VectorXd gaps = problem_.feasibility_gaps(mean);
        now.feas_max = gaps.maxCoeff();
        now.feas_sum = gaps.sum();
        for (const auto& x : xs) now.consensus += (x - mean).squaredNorm();
        now.gsum_norm = tracking.squaredNorm();
        trace_.instant.push_back(now);

        TraceRecord avg;
        avg.iter = iter;
        avg.wallclock_s = elapsed;
        const double k = static_cast<double>(absorbed_);
        Eigen::VectorXd avg_mean = Eigen::VectorXd::Zero(problem_.dimension);
        double obj = 0.0;
        for (int v = 0; v < m; ++v) {
            const Eigen::VectorXd node_avg = x_sums_[static_cast<std::size_t>(v)] / k;
            obj += problem_.nodes[static_cast<std::size_t>(v)].objective.value(node_avg);
            avg_mean += node_avg;
        }
        avg_mean /= m;
        avg.obj_gap = obj - fstar_;
        const Eigen::VectorXd avg_gaps = problem_.feasibility_gaps(avg_mean);
        avg.feas_max = avg_gaps.maxCoeff();
        avg.feas_sum = avg_gaps.sum();
        for (int v = 0; v < m; ++v) {
            const Eigen::VectorXd node_avg = x_sums_[static_cast<std::size_t>(v)] / k;
            avg.consensus += (node_avg - avg_mean).squaredNorm();
        }
        avg.gsum_norm = (tracking_sum_ / k).squaredNorm();
        trace_.time_avg.push_back(avg);
    }

private:
    const DecentralizedProblem& problem_;
    SolverTrace& trace_;
    double fstar_;
    Clock::time_point start_;
    std::vector<Eigen::VectorXd> x_sums_;
    Eigen::VectorXd tracking_sum_;
    long absorbed_ = 0;
};

void check_shapes(const DecentralizedProblem& problem,
                  const DirectedGraph& graph,
                  const std::vector<Eigen::VectorXd>& x0) {
    if (graph.node_count() != problem.node_count()) {
        throw DimensionMismatch("graph and problem node counts differ");
    }
    if (static_cast<int>(x0.size()) != problem.node_count()) {
        throw DimensionMismatch("start point count differs from node count");
    }
    for (const auto& x : x0) {
        if (x.size() != problem.dimension) {
            throw DimensionMismatch("start point dimension differs from problem");
        }
    }
}

GossipPair checked_gossip(const DirectedGraph& graph) {
    const GossipPair gossip = graph.node_count() == 1
                                  ? single_node_gossip()
                                  : build_gossip_matrices(graph);
    const KernelConditionReport report = check_kernel_condition(gossip);
    if (!report.holds) {
        throw DegenerateGraph("gossip pair fails the kernel condition: " +
                              report.detail);
    }
    return gossip;
}

std::vector<Eigen::VectorXd> rows_of(const Eigen::MatrixXd& m) {
    std::vector<Eigen::VectorXd> rows(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index v = 0; v < m.rows(); ++v) {
        rows[static_cast<std::size_t>(v)] = m.row(v).transpose();
    }
    return rows;
}

Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows, int dim) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t v = 0; v < rows.size(); ++v) {
        m.row(static_cast<Eigen::Index>(v)) = rows[v].transpose();
    }
    return m;
}

Eigen::MatrixXd gradients_at(const DecentralizedProblem& problem,
                             const Eigen::MatrixXd& x) {
    Eigen::MatrixXd grad(x.rows(), x.cols());
    for (Eigen::Index v = 0; v < x.rows(); ++v) {
        grad.row(v) = problem.nodes[static_cast<std::size_t>(v)]
                          .objective.gradient(x.row(v).transpose())
                          .transpose();
    }
    return grad;
}

}  // namespace

void dagp_round(std::vector<NodeState>& states,
                const DecentralizedProblem& problem, const GossipPair& gossip,
                const DagpParams& params) {
    const int node_count = problem.node_count();
    const int dim = problem.dimension;
    if (static_cast<int>(states.size()) != node_count ||
        gossip.size() != node_count) {
        throw DimensionMismatch("state or gossip size differs from problem");
    }
    if (params.mu <= 0.0 || params.rho <= 0.0 || params.alpha <= 0.0) {
        throw InvalidParameter("mu, rho, and alpha must be positive");
    }

    // Snapshot of the round-k quantities; every update below reads only
    // these, never partially updated peers.
    Eigen::MatrixXd x(node_count, dim), g(node_count, dim), h(node_count, dim);
    for (int v = 0; v < node_count; ++v) {
        const auto& s = states[static_cast<std::size_t>(v)];
        if (s.x.size() != dim || s.g.size() != dim || s.h.size() != dim) {
            throw DimensionMismatch("node state dimension differs from problem");
        }
        x.row(v) = s.x.transpose();
        g.row(v) = s.g.transpose();
        h.row(v) = s.h.transpose();
    }
    const Eigen::MatrixXd grad = gradients_at(problem, x);

    const Eigen::MatrixXd z_new =
        x - gossip.W * x - params.mu * (grad - g);
    Eigen::MatrixXd x_new(node_count, dim);
    for (int v = 0; v < node_count; ++v) {
        x_new.row(v) = problem.nodes[static_cast<std::size_t>(v)]
                           .constraint.project(z_new.row(v).transpose())
                           .transpose();
    }
    const Eigen::MatrixXd g_new =
        g + params.rho * (grad - g + (z_new - x_new) / params.mu) +
        params.alpha * (h - g);
    const Eigen::MatrixXd h_new = h - gossip.Q * (h - g);

    for (int v = 0; v < node_count; ++v) {
        auto& s = states[static_cast<std::size_t>(v)];
        s.x = x_new.row(v).transpose();
        s.z = z_new.row(v).transpose();
        s.g = g_new.row(v).transpose();
        s.h = h_new.row(v).transpose();
    }
}

DagpRun run_dagp(const DecentralizedProblem& problem, const DirectedGraph& graph,
                 const DagpParams& params,
                 const std::vector<Eigen::VectorXd>& x0,
                 const std::vector<Eigen::VectorXd>& g0,
                 StateHistory* history) {
    check_shapes(problem, graph, x0);
    if (g0.size() != x0.size()) {
        throw DimensionMismatch("g0 count differs from x0 count");
    }
    if (params.iterations < 0) {
        throw InvalidParameter("iteration budget must be nonnegative");
    }
    const GossipPair gossip = checked_gossip(graph);

    DagpRun run;
    run.states.resize(x0.size());
    for (std::size_t v = 0; v < x0.size(); ++v) {
        auto& s = run.states[v];
        s.x = x0[v];
        s.z = x0[v];
        s.g = g0[v];
        s.h = Eigen::VectorXd::Zero(problem.dimension);
    }

    MetricsRecorder recorder(problem, run.trace);
    auto tracking_sum = [&]() {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(problem.dimension);
        for (const auto& s : run.states) sum += s.g;
        return sum;
    };
    auto solutions = [&]() {
        std::vector<Eigen::VectorXd> xs(run.states.size());
        for (std::size_t v = 0; v < run.states.size(); ++v) {
            xs[v] = run.states[v].x;
        }
        return xs;
    };

    if (history != nullptr) {
        history->clear();
        history->push_back(run.states);
    }
    recorder.absorb(solutions(), tracking_sum());
    for (int k = 1; k <= params.iterations; ++k) {
        dagp_round(run.states, problem, gossip, params);
        if (history != nullptr) history->push_back(run.states);
        recorder.record(k, solutions(), tracking_sum());
        recorder.absorb(solutions(), tracking_sum());
    }
    return run;
}

DagpRun run_dagp(const DecentralizedProblem& problem, const DirectedGraph& graph,
                 const DagpParams& params, std::uint64_t seed,
                 StateHistory* history) {
    const auto x0 = random_start(problem.node_count(), problem.dimension, seed);
    const std::vector<Eigen::VectorXd> g0(
        static_cast<std::size_t>(problem.node_count()),
        Eigen::VectorXd::Zero(problem.dimension));
    return run_dagp(problem, graph, params, x0, g0, history);
}

std::vector<Eigen::VectorXd> random_start(int node_count, int dimension,
                                          std::uint64_t seed) {
    if (node_count < 1 || dimension < 1) {
        throw InvalidParameter("node count and dimension must be positive");
    }
    Rng rng(seed);
    std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(node_count));
    for (auto& x : xs) {
        x.resize(dimension);
        for (int i = 0; i < dimension; ++i) x(i) = rng.normal();
    }
    return xs;
}

SolverTrace run_ddps(const DecentralizedProblem& problem,
                     const DirectedGraph& graph, const DdpsParams& params,
                     const std::vector<Eigen::VectorXd>& x0) {
    check_shapes(problem, graph, x0);
    if (params.step_scale <= 0.0) {
        throw InvalidParameter("step scale must be positive");
    }
    if (params.surplus_gain <= 0.0 || params.surplus_gain >= 1.0) {
        throw InvalidParameter("surplus gain must lie in (0, 1)");
    }
    const int node_count = problem.node_count();
    const int dim = problem.dimension;
    const GossipPair gossip = graph.node_count() == 1
                                  ? single_node_gossip()
                                  : build_gossip_matrices(graph);
    const Eigen::MatrixXd row_stochastic =
        Eigen::MatrixXd::Identity(node_count, node_count) - gossip.W;
    const Eigen::MatrixXd col_stochastic =
        Eigen::MatrixXd::Identity(node_count, node_count) - gossip.Q;

    Eigen::MatrixXd x = stack_rows(x0, dim);
    Eigen::MatrixXd surplus = Eigen::MatrixXd::Zero(node_count, dim);

    SolverTrace trace;
    MetricsRecorder recorder(problem, trace);
    recorder.absorb(rows_of(x), surplus.colwise().sum().transpose());

    for (int k = 1; k <= params.iterations; ++k) {
        const double step = params.step_scale / std::sqrt(static_cast<double>(k));
        const Eigen::MatrixXd grad = gradients_at(problem, x);
        const Eigen::MatrixXd mixed = row_stochastic * x;
        Eigen::MatrixXd x_new(node_count, dim);
        for (int v = 0; v < node_count; ++v) {
            const Eigen::VectorXd target =
                (mixed.row(v) + params.surplus_gain * surplus.row(v) -
                 step * grad.row(v))
                    .transpose();
            x_new.row(v) = problem.nodes[static_cast<std::size_t>(v)]
                               .constraint.project(target)
                               .transpose();
        }
        surplus = x - mixed + col_stochastic * surplus -
                  params.surplus_gain * surplus;
        x = x_new;
        recorder.record(k, rows_of(x), surplus.colwise().sum().transpose());
        recorder.absorb(rows_of(x), surplus.colwise().sum().transpose());
    }
    return trace;
}

namespace {

void require_unconstrained(const DecentralizedProblem& problem) {
    for (const auto& node : problem.nodes) {
        if (node.constraint.kind() != ConstraintSet::Kind::WholeSpace) {
            throw UnsupportedConstraint(
                "this solver handles unconstrained problems only");
        }
    }
}

}  // namespace

SolverTrace run_push_pull(const DecentralizedProblem& problem,
                          const DirectedGraph& graph, double step,
                          int iterations,
                          const std::vector<Eigen::VectorXd>& x0) {
    check_shapes(problem, graph, x0);
    require_unconstrained(problem);
    if (step <= 0.0) throw InvalidParameter("step must be positive");
    const int node_count = problem.node_count();
    const int dim = problem.dimension;
    const GossipPair gossip = graph.node_count() == 1
                                  ? single_node_gossip()
                                  : build_gossip_matrices(graph);
    const Eigen::MatrixXd row_stochastic =
        Eigen::MatrixXd::Identity(node_count, node_count) - gossip.W;
    const Eigen::MatrixXd col_stochastic =
        Eigen::MatrixXd::Identity(node_count, node_count) - gossip.Q;

    Eigen::MatrixXd x = stack_rows(x0, dim);
    Eigen::MatrixXd grad = gradients_at(problem, x);
    Eigen::MatrixXd tracker = grad;

    SolverTrace trace;
    MetricsRecorder recorder(problem, trace);
    recorder.absorb(rows_of(x), tracker.colwise().sum().transpose());

    for (int k = 1; k <= iterations; ++k) {
        const Eigen::MatrixXd x_new = row_stochastic * x - step * tracker;
        const Eigen::MatrixXd grad_new = gradients_at(problem, x_new);
        tracker = col_stochastic * tracker + grad_new - grad;
        x = x_new;
        grad = grad_new;
        recorder.record(k, rows_of(x), tracker.colwise().sum().transpose());
        recorder.absorb(rows_of(x), tracker.colwise().sum().transpose());
    }
    return trace;
}

SolverTrace run_add_opt(const DecentralizedProblem& problem,
                        const DirectedGraph& graph, double step,
                        int iterations,
                        const std::vector<Eigen::VectorXd>& x0) {
    check_shapes(problem, graph, x0);
    require_unconstrained(problem);
    if (step <= 0.0) throw InvalidParameter("step must be positive");
    const int node_count = problem.node_count();
    const int dim = problem.dimension;
    const GossipPair gossip = graph.node_count() == 1
                                  ? single_node_gossip()
                                  : build_gossip_matrices(graph);
    const Eigen::MatrixXd col_stochastic =
        Eigen::MatrixXd::Identity(node_count, node_count) - gossip.Q;

    Eigen::MatrixXd x = stack_rows(x0, dim);
    Eigen::VectorXd weight = Eigen::VectorXd::Ones(node_count);
    Eigen::MatrixXd debiased = x;
    Eigen::MatrixXd grad = gradients_at(problem, debiased);
    Eigen::MatrixXd tracker = grad;

    SolverTrace trace;
    MetricsRecorder recorder(problem, trace);
    recorder.absorb(rows_of(debiased), tracker.colwise().sum().transpose());

    for (int k = 1; k <= iterations; ++k) {
        x = col_stochastic * x - step * tracker;
        weight = col_stochastic * weight;
        for (int v = 0; v < node_count; ++v) {
            debiased.row(v) = x.row(v) / weight(v);
        }
        const Eigen::MatrixXd grad_new = gradients_at(problem, debiased);
        tracker = col_stochastic * tracker + grad_new - grad;
        grad = grad_new;
        recorder.record(k, rows_of(debiased),
                        tracker.colwise().sum().transpose());
        recorder.absorb(rows_of(debiased),
                        tracker.colwise().sum().transpose());
    }
    return trace;
}

namespace {

// Dykstra's corrected cycle over the non-trivial constraint sets; the
// limit is the Euclidean projection onto their intersection.
Eigen::VectorXd project_intersection(
    const std::vector<const ConstraintSet*>& sets, const Eigen::VectorXd& x) {
    if (sets.empty()) return x;
    if (sets.size() == 1) return sets[0]->project(x);
    constexpr int kMaxCycles = 20000;
    constexpr double kCycleTol = 1e-14;
    Eigen::VectorXd y = x;
    std::vector<Eigen::VectorXd> corrections(
        sets.size(), Eigen::VectorXd::Zero(x.size()));
    for (int cycle = 0; cycle < kMaxCycles; ++cycle) {
        const Eigen::VectorXd before = y;
        for (std::size_t j = 0; j < sets.size(); ++j) {
            const Eigen::VectorXd shifted = y + corrections[j];
            const Eigen::VectorXd projected = sets[j]->project(shifted);
            corrections[j] = shifted - projected;
            y = projected;
        }
        if ((y - before).lpNorm<Eigen::Infinity>() <= kCycleTol) return y;
    }
    throw ProjectionFailure("intersection projection did not settle");
}

}  // namespace

ReferenceSolution centralized_reference(const DecentralizedProblem& problem,
                                        double tolerance, int max_iterations) {
    if (tolerance <= 0.0) throw InvalidParameter("tolerance must be positive");
    const int node_count = problem.node_count();
    const int dim = problem.dimension;

    std::vector<const ConstraintSet*> active_sets;
    bool normals_supported = true;
    for (const auto& node : problem.nodes) {
        switch (node.constraint.kind()) {
            case ConstraintSet::Kind::WholeSpace:
                break;
            case ConstraintSet::Kind::Halfspace:
                active_sets.push_back(&node.constraint);
                break;
            default:
                active_sets.push_back(&node.constraint);
                normals_supported = false;
                break;
        }
    }

    double total_smoothness = 0.0;
    for (const auto& node : problem.nodes) {
        total_smoothness += node.objective.smoothness;
    }
    const double step = 1.0 / std::max(total_smoothness, 1e-12);

    Eigen::VectorXd x = problem.feasible_point.size() == dim
                            ? problem.feasible_point
                            : Eigen::VectorXd::Zero(dim);
    x = project_intersection(active_sets, x);

    auto total_gradient = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        for (const auto& node : problem.nodes) g += node.objective.gradient(p);
        return g;
    };

    // Multiplier recovery: nonnegative weights on the active halfspace
    // normals that cancel the summed gradient.
    auto try_multipliers = [&](const Eigen::VectorXd& p, ReferenceSolution& out) {
        const Eigen::VectorXd grad_sum = total_gradient(p);
        std::vector<int> active;
        for (int v = 0; v < node_count; ++v) {
            const auto& set = problem.nodes[static_cast<std::size_t>(v)].constraint;
            if (set.kind() != ConstraintSet::Kind::Halfspace) continue;
            const double slack = set.halfspace_offset() -
                                 set.halfspace_normal().dot(p);
            if (slack <= 1e-7 * (1.0 + std::abs(set.halfspace_offset()))) {
                active.push_back(v);
            }
        }
        Eigen::VectorXd residual = grad_sum;
        Eigen::VectorXd weights;
        if (!active.empty()) {
            Eigen::MatrixXd a(dim, static_cast<Eigen::Index>(active.size()));
            for (std::size_t k = 0; k < active.size(); ++k) {
                a.col(static_cast<Eigen::Index>(k)) =
                    problem.nodes[static_cast<std::size_t>(active[k])]
                        .constraint.halfspace_normal();
            }
            weights = nonnegative_least_squares(a, -grad_sum);
            residual = grad_sum + a * weights;
        }
        if (residual.norm() > tolerance) return false;
        out.x = p;
        out.objective = problem.global_objective(p);
        out.normals_available = true;
        out.normals.assign(static_cast<std::size_t>(node_count),
                           Eigen::VectorXd::Zero(dim));
        for (std::size_t k = 0; k < active.size(); ++k) {
            out.normals[static_cast<std::size_t>(active[k])] =
                weights(static_cast<Eigen::Index>(k)) *
                problem.nodes[static_cast<std::size_t>(active[k])]
                    .constraint.halfspace_normal();
        }
        return true;
    };

    ReferenceSolution result;
    for (int it = 1; it <= max_iterations; ++it) {
        const Eigen::VectorXd x_next =
            project_intersection(active_sets, x - step * total_gradient(x));
        const double moved = (x_next - x).norm();
        x = x_next;

        const bool settled = moved / step <= tolerance;
        if (normals_supported) {
            if ((settled || it % 100 == 0) && try_multipliers(x, result)) {
                return result;
            }
        } else if (settled) {
            result.x = x;
            result.objective = problem.global_objective(x);
            result.normals_available = false;
            return result;
        }
    }
    throw NonConvergence("centralized reference did not reach the tolerance");
}

Eigen::MatrixXd run_sinkhorn(const Eigen::VectorXd& source_marginal,
                             const Eigen::VectorXd& target_marginal,
                             const Eigen::MatrixXd& cost, double regularization,
                             double tolerance, int max_iterations) {
    const Eigen::Index ns = source_marginal.size();
    const Eigen::Index nt = target_marginal.size();
    if (cost.rows() != ns || cost.cols() != nt) {
        throw DimensionMismatch("cost matrix shape differs from marginals");
    }
    if (regularization <= 0.0) {
        throw InvalidParameter("regularization must be positive");
    }
    if (tolerance <= 0.0) throw InvalidParameter("tolerance must be positive");
    if (source_marginal.minCoeff() <= 0.0 || target_marginal.minCoeff() <= 0.0) {
        throw InvalidMarginal("marginal entries must be positive");
    }
    if (std::abs(source_marginal.sum() - target_marginal.sum()) > 1e-9) {
        throw InvalidMarginal("marginal masses differ");
    }

    const Eigen::MatrixXd kernel =
        (-cost / regularization).array().exp().matrix();
    // Vectorized exp saturates instead of flushing to zero, so subnormal
    // entries are the reliable underflow signal here.
    if (!(kernel.minCoeff() >= std::numeric_limits<double>::min())) {
        throw NumericalUnderflow(
            "kernel underflowed; regularization too small for this cost range");
    }

    Eigen::VectorXd u = Eigen::VectorXd::Ones(ns);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(nt);
    for (int it = 0; it < max_iterations; ++it) {
        const Eigen::VectorXd kv = kernel * v;
        if (kv.minCoeff() <= 0.0 || !kv.allFinite()) {
            throw NumericalUnderflow("scaling denominators degenerated");
        }
        u = source_marginal.cwiseQuotient(kv);
        const Eigen::VectorXd ktu = kernel.transpose() * u;
        if (ktu.minCoeff() <= 0.0 || !ktu.allFinite()) {
            throw NumericalUnderflow("scaling denominators degenerated");
        }
        v = target_marginal.cwiseQuotient(ktu);
        if (!u.allFinite() || !v.allFinite()) {
            throw NumericalUnderflow("scaling vectors left the finite range");
        }

        const Eigen::MatrixXd plan =
            u.asDiagonal() * kernel * v.asDiagonal();
        const double row_err =
            (plan.rowwise().sum() - source_marginal).lpNorm<Eigen::Infinity>();
        const double col_err = (plan.colwise().sum().transpose() -
                                target_marginal)
                                   .lpNorm<Eigen::Infinity>();
        if (row_err <= tolerance && col_err <= tolerance) return plan;
    }
    throw NonConvergence("scaling iterations missed the marginal tolerance");
}

namespace {

struct UnionFind {
    std::vector<int> parent;

    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    // Returns false when a and b are already connected.
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[a] = b;
        return true;
    }
};

// Unique flow on a spanning tree by leaf elimination. Returns false when
// some flow is negative beyond rounding.
bool solve_tree(const std::vector<std::pair<int, int>>& edges,
                const std::vector<int>& chosen, const Eigen::VectorXd& supply,
                std::vector<double>& flows) {
    const int vertices = static_cast<int>(supply.size());
    std::vector<std::vector<int>> incident(vertices);
    std::vector<int> degree(vertices, 0);
    for (int e : chosen) {
        incident[edges[static_cast<std::size_t>(e)].first].push_back(e);
        incident[edges[static_cast<std::size_t>(e)].second].push_back(e);
        ++degree[edges[static_cast<std::size_t>(e)].first];
        ++degree[edges[static_cast<std::size_t>(e)].second];
    }
    std::vector<double> residual(supply.data(), supply.data() + vertices);
    std::vector<bool> done_edge(edges.size(), false);
    std::vector<int> queue;
    for (int v = 0; v < vertices; ++v) {
        if (degree[v] == 1) queue.push_back(v);
    }
    flows.assign(edges.size(), 0.0);

    int processed = 0;
    while (!queue.empty()) {
        const int leaf = queue.back();
        queue.pop_back();
        if (degree[leaf] != 1) continue;
        int edge = -1;
        for (int e : incident[leaf]) {
            if (!done_edge[static_cast<std::size_t>(e)]) {
                edge = e;
                break;
            }
        }
        if (edge < 0) continue;
        const auto& [a, b] = edges[static_cast<std::size_t>(edge)];
        const int other = (a == leaf) ? b : a;
        const double flow = residual[leaf];
        if (flow < -1e-12) return false;
        flows[static_cast<std::size_t>(edge)] = flow;
        residual[leaf] = 0.0;
        residual[other] -= flow;
        done_edge[static_cast<std::size_t>(edge)] = true;
        --degree[leaf];
        --degree[other];
        if (degree[other] == 1) queue.push_back(other);
        ++processed;
    }
    return processed == static_cast<int>(chosen.size());
}

}  // namespace

TransportPlan exact_transport_plan(const Eigen::VectorXd& source_marginal,
                                   const Eigen::VectorXd& target_marginal,
                                   const Eigen::MatrixXd& cost) {
    const int ns = static_cast<int>(source_marginal.size());
    const int nt = static_cast<int>(target_marginal.size());
    if (cost.rows() != ns || cost.cols() != nt) {
        throw DimensionMismatch("cost matrix shape differs from marginals");
    }
    if (source_marginal.minCoeff() < 0.0 || target_marginal.minCoeff() < 0.0) {
        throw InvalidMarginal("marginal entries must be nonnegative");
    }
    if (std::abs(source_marginal.sum() - target_marginal.sum()) > 1e-9) {
        throw InvalidMarginal("marginal masses differ");
    }
    if (ns * nt > 25) {
        throw InvalidParameter(
            "exhaustive enumeration is limited to 25 plan entries");
    }

    const int vertices = ns + nt;
    const int tree_size = vertices - 1;
    std::vector<std::pair<int, int>> edges;
    edges.reserve(static_cast<std::size_t>(ns * nt));
    for (int i = 0; i < ns; ++i) {
        for (int j = 0; j < nt; ++j) edges.push_back({i, ns + j});
    }
    Eigen::VectorXd supply(vertices);
    supply.head(ns) = source_marginal;
    supply.tail(nt) = target_marginal;

    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(tree_size));
    std::vector<double> flows;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<int> best_edges;
    std::vector<double> best_flows;

    // Depth-first combination enumeration with cycle pruning; each level keeps
    // its own union-find copy so backtracking is a pop.
    std::vector<UnionFind> stack;
    stack.emplace_back(vertices);

    auto recurse = [&](auto&& self, int next_edge) -> void {
        if (static_cast<int>(chosen.size()) == tree_size) {
            if (!solve_tree(edges, chosen, supply, flows)) return;
            double total = 0.0;
            for (int e : chosen) {
                const auto& [a, b] = edges[static_cast<std::size_t>(e)];
                total += flows[static_cast<std::size_t>(e)] * cost(a, b - ns);
            }
            if (total < best_cost - 1e-15) {
                best_cost = total;
                best_edges = chosen;
                best_flows = flows;
            }
            return;
        }
        const int remaining = tree_size - static_cast<int>(chosen.size());
        for (int e = next_edge; e <= static_cast<int>(edges.size()) - remaining;
             ++e) {
            UnionFind uf = stack.back();
            if (!uf.unite(edges[static_cast<std::size_t>(e)].first,
                          edges[static_cast<std::size_t>(e)].second)) {
                continue;
            }
            chosen.push_back(e);
            stack.push_back(std::move(uf));
            self(self, e + 1);
            stack.pop_back();
            chosen.pop_back();
        }
    };
    recurse(recurse, 0);

    if (!std::isfinite(best_cost)) {
        throw NonConvergence("no feasible basic plan found");
    }
    TransportPlan result;
    result.cost = best_cost;
    result.plan = Eigen::MatrixXd::Zero(ns, nt);
    for (std::size_t k = 0; k < best_edges.size(); ++k) {
        const auto& [a, b] = edges[static_cast<std::size_t>(best_edges[k])];
        result.plan(a, b - ns) =
            std::max(0.0, best_flows[static_cast<std::size_t>(best_edges[k])]);
    }
    return result;
}

double sparsity(const Eigen::MatrixXd& plan, double threshold) {
    if (threshold <= 0.0) throw InvalidParameter("threshold must be positive");
    if (plan.size() == 0) throw InvalidParameter("plan is empty");
    int below = 0;
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
        for (Eigen::Index j = 0; j < plan.cols(); ++j) {
            if (plan(i, j) < threshold) ++below;
        }
    }
    return static_cast<double>(below) / static_cast<double>(plan.size());
}

}  // namespace dagp
