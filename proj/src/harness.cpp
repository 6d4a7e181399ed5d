#include "dagp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "dagp/analysis.hpp"
#include "dagp/errors.hpp"
#include "dagp/graph.hpp"
#include "dagp/problems.hpp"
#include "dagp/rng.hpp"

namespace dagp {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string trim(const std::string& text) {
    const auto begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = text.find_last_not_of(" \t\r\n");
    return text.substr(begin, end - begin + 1);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long parsed = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not an integer: '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long parsed = std::stoull(value, &used);
        if (used != value.size() || value.front() == '-') {
            throw std::invalid_argument(value);
        }
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not an unsigned integer: '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not a number: '" + value + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key,
                                const std::string& value) {
    std::vector<int> out;
    std::stringstream stream(value);
    std::string item;
    while (std::getline(stream, item, ',')) {
        const std::string token = trim(item);
        if (token.empty()) {
            throw ConfigError(key + ": empty list entry");
        }
        out.push_back(static_cast<int>(parse_long(key, token)));
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

void emit_file(RunArtifacts& artifacts, const fs::path& dir,
               const std::string& name, const std::string& body) {
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("output_dir: cannot write " + path.string());
    out << body;
    artifacts.files.push_back(path.string());
}

std::string trace_csv_text(const std::string& echo,
                           const std::vector<TraceRecord>& rows) {
    std::ostringstream out;
    out << echo;
    write_trace_csv(out, rows);
    return out.str();
}

double pick_metric(const TraceRecord& row, TraceMetric metric) {
    switch (metric) {
        case TraceMetric::ObjGap: return std::abs(row.obj_gap);
        case TraceMetric::FeasMax: return row.feas_max;
        case TraceMetric::FeasSum: return row.feas_sum;
        case TraceMetric::Consensus: return row.consensus;
        case TraceMetric::GsumNorm: return row.gsum_norm;
    }
    throw InvalidParameter("unknown trace metric");
}

/// Least-squares slope of log(value) against plain iteration count, the
/// straight line a geometric decay follows on a semilog plot. Rows are used
/// only up to the first one at or below the rounding floor: past that point
/// the metric is double-precision noise around zero, not rate information.
RateFit fit_semilog(const std::vector<TraceRecord>& rows, TraceMetric metric,
                    int k_min, int k_max) {
    constexpr double kNoiseFloor = 1e-13;
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& row : rows) {
        if (row.iter < k_min || row.iter > k_max) continue;
        const double value = pick_metric(row, metric);
        if (!std::isfinite(value)) continue;
        if (value <= kNoiseFloor) break;
        xs.push_back(static_cast<double>(row.iter));
        ys.push_back(std::log(value));
    }
    RateFit fit;
    fit.points = static_cast<int>(xs.size());
    if (fit.points < 2) return fit;
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) return fit;
    fit.slope = sxy / sxx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

std::string describe_fit(const std::vector<TraceRecord>& rows,
                         TraceMetric metric, int k_min, int k_max) {
    try {
        const RateFit fit = fit_rate(rows, metric, k_min, k_max);
        return "slope " + fmt_short(fit.slope) + " (r2 " +
               fmt_short(fit.r_squared) + ", " + std::to_string(fit.points) +
               " points)";
    } catch (const InsufficientData& e) {
        return std::string("unavailable (") + e.what() + ")";
    }
}

struct SolverOutcome {
    std::string name;
    SolverTrace trace;
    double seconds = 0.0;
    ExperimentConfig echo_config;
};

void append_trace_files(RunArtifacts& artifacts, const fs::path& dir,
                        const SolverOutcome& outcome) {
    std::ostringstream out;
    out << config_echo(outcome.echo_config);
    out << "# series = instant\n";
    write_trace_csv(out, outcome.trace.instant);
    out << "# series = time_avg\n";
    write_trace_csv(out, outcome.trace.time_avg);
    emit_file(artifacts, dir, outcome.name + "_trace.csv", out.str());
}

void append_gap_summary(std::ostringstream& out, const SolverOutcome& outcome,
                        int fit_from, int fit_to) {
    const auto& instant = outcome.trace.instant;
    const auto& averaged = outcome.trace.time_avg;
    out << "[" << outcome.name << "]\n";
    out << "wallclock_s = " << fmt_short(outcome.seconds) << "\n";
    if (!instant.empty()) {
        out << "final_obj_gap = " << fmt(instant.back().obj_gap) << "\n";
        out << "final_feas_max = " << fmt(instant.back().feas_max) << "\n";
        out << "final_consensus = " << fmt(instant.back().consensus) << "\n";
    }
    if (!averaged.empty()) {
        out << "final_avg_obj_gap = " << fmt(averaged.back().obj_gap) << "\n";
        out << "final_avg_feas_max = " << fmt(averaged.back().feas_max)
            << "\n";
        out << "avg_feas_fit: "
            << describe_fit(averaged, TraceMetric::FeasMax, fit_from, fit_to)
            << "\n";
        out << "avg_obj_fit: "
            << describe_fit(averaged, TraceMetric::ObjGap, fit_from, fit_to)
            << "\n";
    }
}

std::vector<std::string> solver_list(const ExperimentConfig& config,
                                     std::vector<std::string> defaults) {
    if (config.solver.empty()) return defaults;
    return {config.solver};
}

// Bin centers of the scaling study marginals: two truncated normal
// profiles on [0, 1] moved toward opposite ends of the interval.
void scaling_marginals(int bins, Eigen::VectorXd* source,
                       Eigen::VectorXd* target, Eigen::MatrixXd* cost) {
    *source = gaussian_bins(1.0 / 3.0, 0.25, bins);
    *target = gaussian_bins(2.0 / 3.0, 0.125, bins);
    cost->resize(bins, bins);
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            const double ci = (i + 0.5) / bins;
            const double cj = (j + 0.5) / bins;
            (*cost)(i, j) = std::abs(ci - cj);
        }
    }
}

struct OtRun {
    Eigen::MatrixXd plan;
    double objective = 0.0;
    int rounds = 0;
    bool converged = false;
    double seconds = 0.0;
    std::vector<TraceRecord> checkpoints;
};

/// Runs the solver on a transport instance until the stopping test
/// (objective drift and worst constraint distance) passes between two
/// consecutive checkpoints, or the round cap is reached.
OtRun solve_transport(const DecentralizedProblem& problem,
                      const DirectedGraph& graph, const DagpParams& params,
                      long max_rounds, int check_every) {
    const auto start = Clock::now();
    const GossipPair gossip = build_gossip_matrices(graph);
    const int m = problem.node_count();

    std::vector<NodeState> states(m);
    for (int v = 0; v < m; ++v) {
        states[v].x = problem.feasible_point;
        states[v].z = problem.feasible_point;
        states[v].g = Eigen::VectorXd::Zero(problem.dimension);
        states[v].h = Eigen::VectorXd::Zero(problem.dimension);
    }

    OtRun run;
    const auto checkpoint = [&](int iter) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(problem.dimension);
        for (const auto& s : states) mean += s.x;
        mean /= m;
        TraceRecord record;
        record.iter = iter;
        record.obj_gap = problem.global_objective(mean);
        const Eigen::VectorXd gaps = problem.feasibility_gaps(mean);
        record.feas_max = gaps.maxCoeff();
        record.feas_sum = gaps.sum();
        double spread = 0.0;
        for (const auto& s : states) spread += (s.x - mean).squaredNorm();
        record.consensus = spread;
        Eigen::VectorXd gsum = Eigen::VectorXd::Zero(problem.dimension);
        for (const auto& s : states) gsum += s.g;
        record.gsum_norm = gsum.squaredNorm();
        record.wallclock_s = seconds_since(start);
        run.checkpoints.push_back(record);
    };

    checkpoint(0);
    for (long k = 1; k <= max_rounds; ++k) {
        dagp_round(states, problem, gossip, params);
        if (k % check_every == 0 || k == max_rounds) {
            checkpoint(static_cast<int>(k));
            const std::size_t n = run.checkpoints.size();
            if (n >= 2) {
                const std::vector<TraceRecord> window(
                    run.checkpoints.end() - 2, run.checkpoints.end());
                if (ot_stopping_check(window)) {
                    run.converged = true;
                    run.rounds = static_cast<int>(k);
                    break;
                }
            }
        }
    }
    if (!run.converged) run.rounds = static_cast<int>(max_rounds);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(problem.dimension);
    for (const auto& s : states) mean += s.x;
    mean /= m;
    run.seconds = seconds_since(start);
    run.objective = problem.global_objective(mean);
    const int bins = static_cast<int>(std::lround(
        std::sqrt(static_cast<double>(problem.dimension))));
    run.plan.resize(bins, bins);
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            run.plan(i, j) = mean(i * bins + j);
        }
    }
    return run;
}

RunArtifacts run_logcosh(const ExperimentConfig& config, int default_nodes,
                         int default_dimension) {
    const int m = config.nodes > 0 ? config.nodes : default_nodes;
    const int dim =
        config.dimension > 0 ? config.dimension : default_dimension;
    const long iterations =
        config.iterations >= 0 ? config.iterations : 10000;

    DecentralizedProblem problem = build_logcosh_problem(m, dim, config.seed);
    problem.reference = centralized_reference(problem, 1e-9);

    const DirectedGraph graph = random_strongly_connected_graph(
        m, config.edge_density, config.seed + 1);
    const auto x0 = random_start(m, dim, config.seed + 2);
    const std::vector<Eigen::VectorXd> g0(
        static_cast<std::size_t>(m), Eigen::VectorXd::Zero(dim));

    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);
    std::ostringstream summary;

    double max_smoothness = 0.0;
    for (const auto& node : problem.nodes) {
        max_smoothness = std::max(max_smoothness, node.objective.smoothness);
    }

    ExperimentConfig resolved = config;
    resolved.nodes = m;
    resolved.dimension = dim;
    resolved.iterations = iterations;
    resolved.mu = config.mu > 0.0 ? config.mu : 1.0 / max_smoothness;
    resolved.rho = config.rho > 0.0 ? config.rho : 0.3 * resolved.mu;
    resolved.alpha = config.alpha > 0.0 ? config.alpha : 0.4;
    resolved.step_scale = config.step_scale > 0.0 ? config.step_scale : 1.0;

    for (const auto& name : solver_list(config, {"dagp", "ddps"})) {
        SolverOutcome outcome;
        outcome.name = name;
        outcome.echo_config = resolved;
        outcome.echo_config.solver = name;
        const auto start = Clock::now();
        if (name == "dagp") {
            DagpParams params;
            params.mu = resolved.mu;
            params.rho = resolved.rho;
            params.alpha = resolved.alpha;
            params.iterations = static_cast<int>(iterations);
            outcome.trace = run_dagp(problem, graph, params, x0, g0).trace;
        } else {
            DdpsParams params;
            params.step_scale = resolved.step_scale;
            params.surplus_gain = resolved.surplus_gain;
            params.iterations = static_cast<int>(iterations);
            outcome.trace = run_ddps(problem, graph, params, x0);
        }
        outcome.seconds = seconds_since(start);
        append_trace_files(artifacts, dir, outcome);
        append_gap_summary(summary, outcome, 100,
                           static_cast<int>(iterations));
    }

    artifacts.summary = config_echo(resolved) + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

RunArtifacts run_logistic(const ExperimentConfig& config) {
    const int m = config.nodes > 0 ? config.nodes : 20;
    const int dim = config.dimension > 0 ? config.dimension : 10;
    const int samples = config.samples > 0 ? config.samples : 200;
    const long iterations =
        config.iterations >= 0 ? config.iterations : 30000;

    const Dataset data =
        config.dataset.empty()
            ? make_two_cluster_data(samples, dim, config.separation,
                                    config.seed)
            : load_labeled_csv_file(config.dataset);
    // The default ridge keeps the summed problem's condition number small
    // enough that every tracking method is deep in its linear regime well
    // inside the default iteration budget.
    const double ridge = config.ridge > 0.0 ? config.ridge : 0.2;

    DecentralizedProblem problem =
        build_logistic_problem(data, m, ridge, config.seed + 1);
    problem.reference = centralized_reference(problem, 1e-12);

    const DirectedGraph graph = random_strongly_connected_graph(
        m, config.edge_density, config.seed + 2);
    const auto x0 = random_start(m, problem.dimension, config.seed + 3);
    const std::vector<Eigen::VectorXd> g0(
        static_cast<std::size_t>(m),
        Eigen::VectorXd::Zero(problem.dimension));

    double max_smoothness = 0.0;
    for (const auto& node : problem.nodes) {
        max_smoothness = std::max(max_smoothness, node.objective.smoothness);
    }

    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);
    std::ostringstream summary;

    ExperimentConfig resolved = config;
    resolved.nodes = m;
    resolved.dimension = problem.dimension;
    resolved.samples = data.sample_count();
    resolved.iterations = iterations;
    resolved.ridge = ridge;
    resolved.mu = config.mu > 0.0 ? config.mu : 1.0 / max_smoothness;
    resolved.rho = config.rho > 0.0 ? config.rho : 0.1 * resolved.mu;
    resolved.alpha = config.alpha > 0.0 ? config.alpha : 0.4;
    resolved.step = config.step > 0.0 ? config.step : 0.5 / max_smoothness;

    const auto solvers =
        solver_list(config, {"dagp", "push_pull", "add_opt"});
    for (const auto& name : solvers) {
        SolverOutcome outcome;
        outcome.name = name;
        outcome.echo_config = resolved;
        outcome.echo_config.solver = name;
        const auto start = Clock::now();
        if (name == "dagp") {
            DagpParams params;
            params.mu = resolved.mu;
            params.rho = resolved.rho;
            params.alpha = resolved.alpha;
            params.iterations = static_cast<int>(iterations);
            outcome.trace = run_dagp(problem, graph, params, x0, g0).trace;
        } else if (name == "push_pull") {
            outcome.trace = run_push_pull(problem, graph, resolved.step,
                                          static_cast<int>(iterations), x0);
        } else {
            outcome.trace = run_add_opt(problem, graph, resolved.step,
                                        static_cast<int>(iterations), x0);
        }
        outcome.seconds = seconds_since(start);
        append_trace_files(artifacts, dir, outcome);

        summary << "[" << name << "]\n";
        summary << "wallclock_s = " << fmt_short(outcome.seconds) << "\n";
        if (!outcome.trace.instant.empty()) {
            summary << "final_obj_gap = "
                    << fmt(outcome.trace.instant.back().obj_gap) << "\n";
            summary << "final_consensus = "
                    << fmt(outcome.trace.instant.back().consensus) << "\n";
        }
        const RateFit semilog = fit_semilog(
            outcome.trace.instant, TraceMetric::ObjGap,
            static_cast<int>(iterations) / 10, static_cast<int>(iterations));
        summary << "semilog_obj_fit: slope_per_iter = "
                << fmt_short(semilog.slope) << ", r2 = "
                << fmt_short(semilog.r_squared) << ", points = "
                << semilog.points << "\n";
    }

    artifacts.summary = config_echo(resolved) + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

DagpParams transport_params(const ExperimentConfig& config) {
    DagpParams params;
    params.mu = config.mu > 0.0 ? config.mu : 0.05;
    // The tracking gain trades per-round progress against stability; this value
    // keeps the largest preset instances inside the iteration cap while the
    // smallest ones still match the enumeration optimum to well below the
    // checkpoint tolerance.
    params.rho = config.rho > 0.0 ? config.rho : 0.16;
    params.alpha = config.alpha > 0.0 ? config.alpha : 0.4;
    return params;
}

RunArtifacts run_ot_scaling(const ExperimentConfig& config) {
    const long cap = config.iterations >= 0 ? config.iterations : 50000;
    const DagpParams params = transport_params(config);

    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);

    ExperimentConfig resolved = config;
    resolved.iterations = cap;
    resolved.mu = params.mu;
    resolved.rho = params.rho;
    resolved.alpha = params.alpha;
    const std::string echo = config_echo(resolved);

    std::ostringstream csv;
    csv << echo << "n,rep,rounds,converged,objective,wallclock_s\n";
    std::ostringstream summary;

    for (int bins : config.ot_sizes) {
        Eigen::VectorXd source, target;
        Eigen::MatrixXd cost;
        scaling_marginals(bins, &source, &target, &cost);
        const int m = config.nodes > 0 ? config.nodes : bins;
        const DecentralizedProblem problem =
            build_ot_problem(source, target, cost, m);
        const DirectedGraph graph = complete_graph(m);

        double total_seconds = 0.0;
        int converged_count = 0;
        for (int rep = 0; rep < config.ot_reps; ++rep) {
            const OtRun run =
                solve_transport(problem, graph, params, cap, 50);
            total_seconds += run.seconds;
            converged_count += run.converged ? 1 : 0;
            char line[160];
            std::snprintf(line, sizeof(line), "%d,%d,%d,%d,%.17g,%.17g\n",
                          bins, rep, run.rounds, run.converged ? 1 : 0,
                          run.objective, run.seconds);
            csv << line;
        }
        summary << "n = " << bins << ": mean_wallclock_s = "
                << fmt_short(total_seconds / config.ot_reps)
                << ", converged = " << converged_count << "/"
                << config.ot_reps << "\n";
    }

    emit_file(artifacts, dir, "scaling.csv", csv.str());
    artifacts.summary = echo + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

RunArtifacts run_ot_plan(const ExperimentConfig& config) {
    const int bins = config.ot_size;
    const long cap = config.iterations >= 0 ? config.iterations : 200000;
    const DagpParams params = transport_params(config);

    Eigen::VectorXd source, target;
    Eigen::MatrixXd cost;
    scaling_marginals(bins, &source, &target, &cost);
    const int m = config.nodes > 0 ? config.nodes : bins;
    const DecentralizedProblem problem =
        build_ot_problem(source, target, cost, m);
    const DirectedGraph graph = complete_graph(m);

    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);

    ExperimentConfig resolved = config;
    resolved.nodes = m;
    resolved.iterations = cap;
    resolved.mu = params.mu;
    resolved.rho = params.rho;
    resolved.alpha = params.alpha;
    const std::string echo = config_echo(resolved);

    std::ostringstream summary;
    const auto solvers = solver_list(config, {"dagp", "sinkhorn"});
    Eigen::MatrixXd dagp_plan;

    for (const auto& name : solvers) {
        if (name == "dagp") {
            const OtRun run =
                solve_transport(problem, graph, params, cap, 25);
            dagp_plan = run.plan;
            std::ostringstream plan_text;
            plan_text << echo;
            save_matrix(plan_text, run.plan);
            emit_file(artifacts, dir, "dagp_plan.txt", plan_text.str());
            emit_file(artifacts, dir, "dagp_checkpoints.csv",
                      trace_csv_text(echo, run.checkpoints));
            summary << "[dagp]\n";
            summary << "objective = " << fmt(run.objective) << "\n";
            summary << "rounds = " << run.rounds
                    << ", converged = " << (run.converged ? "yes" : "no")
                    << ", wallclock_s = " << fmt_short(run.seconds) << "\n";
            summary << "sparsity_1e-5 = "
                    << fmt_short(sparsity(run.plan, 1e-5)) << "\n";
        } else {
            const auto start = Clock::now();
            const Eigen::MatrixXd plan = run_sinkhorn(
                source, target, cost, config.regularization, 1e-9);
            std::ostringstream plan_text;
            plan_text << echo;
            save_matrix(plan_text, plan);
            emit_file(artifacts, dir, "sinkhorn_plan.txt", plan_text.str());
            summary << "[sinkhorn]\n";
            summary << "objective = " << fmt(plan.cwiseProduct(cost).sum())
                    << "\n";
            summary << "regularization = " << fmt_short(config.regularization)
                    << ", wallclock_s = " << fmt_short(seconds_since(start))
                    << "\n";
            summary << "sparsity_1e-5 = " << fmt_short(sparsity(plan, 1e-5))
                    << "\n";
        }
    }

    if (static_cast<long long>(bins) * bins <= 25) {
        const TransportPlan exact =
            exact_transport_plan(source, target, cost);
        std::ostringstream plan_text;
        plan_text << echo;
        save_matrix(plan_text, exact.plan);
        emit_file(artifacts, dir, "exact_plan.txt", plan_text.str());
        summary << "[exact]\n";
        summary << "objective = " << fmt(exact.cost) << "\n";
        summary << "sparsity_1e-5 = " << fmt_short(sparsity(exact.plan, 1e-5))
                << "\n";
        if (dagp_plan.size() > 0) {
            summary << "dagp_objective_error = "
                    << fmt(std::abs(dagp_plan.cwiseProduct(cost).sum() -
                                    exact.cost))
                    << "\n";
        }
    }

    artifacts.summary = echo + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

RunArtifacts run_param_scan(const ExperimentConfig& config) {
    const int m = config.nodes > 0 ? config.nodes : 4;
    const double rho = config.rho > 0.0 ? config.rho : 1e-6;
    const double alpha = config.alpha > 0.0 ? config.alpha : 0.5;
    const double mu_bar = config.mu > 0.0 ? config.mu : 1e-2;

    const GossipPair gossip = scan_gossip_pair(m, config.seed);

    std::vector<double> mu_grid;
    for (int i = 0; i <= 24; ++i) {
        mu_grid.push_back(std::pow(10.0, -3.0 + i / 6.0));
    }
    const MuScan mu_scan =
        scan_mu_region(gossip.W, gossip.Q, config.smoothness, rho, alpha,
                       config.eta, config.beta, mu_grid, m);

    std::vector<double> rho_grid;
    for (int i = 0; i <= 6; ++i) rho_grid.push_back(std::pow(10.0, -8.0 + i));
    std::vector<double> alpha_grid;
    for (int i = 0; i <= 6; ++i) alpha_grid.push_back(0.05 + 0.15 * i);
    const RhoAlphaScan ra_scan = scan_rho_alpha_region(
        gossip.W, gossip.Q, config.smoothness, mu_bar, config.eta,
        config.beta, rho_grid, alpha_grid, m);

    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);

    ExperimentConfig resolved = config;
    resolved.nodes = m;
    resolved.rho = rho;
    resolved.alpha = alpha;
    resolved.mu = mu_bar;
    const std::string echo = config_echo(resolved);

    std::ostringstream mu_csv;
    mu_csv << echo;
    write_mu_scan_csv(mu_csv, mu_scan);
    emit_file(artifacts, dir, "mu_scan.csv", mu_csv.str());

    std::ostringstream ra_csv;
    ra_csv << echo;
    write_rho_alpha_csv(ra_csv, ra_scan);
    emit_file(artifacts, dir, "rho_alpha.csv", ra_csv.str());

    const SpectralModel model_at_bar =
        build_spectral_model(gossip.W, gossip.Q, config.smoothness, mu_bar,
                             rho, alpha, config.eta, config.beta, m);
    const ParameterCheck check_at_bar =
        check_parameter_conditions(model_at_bar);

    int pass_count = 0;
    for (std::size_t i = 0; i < mu_scan.pass.size(); ++i) {
        pass_count += mu_scan.pass[i] ? 1 : 0;
    }
    int ra_pass = 0;
    for (const auto& row : ra_scan.pass) {
        for (bool ok : row) ra_pass += ok ? 1 : 0;
    }

    std::ostringstream summary;
    summary << "mu_grid_pass = " << pass_count << "/" << mu_grid.size()
            << "\n";
    summary << "mu0 = " << (mu_scan.has_feasible ? fmt(mu_scan.mu0) : "none")
            << "\n";
    summary << "rho_alpha_pass = " << ra_pass << "/"
            << (rho_grid.size() * alpha_grid.size()) << "\n";
    summary << "check at mu = " << fmt_short(mu_bar) << ":\n"
            << check_at_bar.summary();

    artifacts.passed = mu_scan.has_feasible && mu_scan.mu0 < 4.0 &&
                       check_at_bar.certified_pass();
    artifacts.summary = echo + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

RunArtifacts run_gd_check(const ExperimentConfig& config) {
    RunArtifacts artifacts;
    const fs::path dir(config.output_dir);
    const std::string echo = config_echo(config);

    std::ostringstream csv;
    csv << echo
        << "smoothness,beta,mu,root_low,root_high,expected_low,expected_high,"
           "error,pass\n";

    Rng rng(config.seed);
    bool all_pass = true;
    std::ostringstream summary;

    const auto closed_form = [](double smoothness, double mu, double beta) {
        const double t = (smoothness * mu - 1.0 - beta * mu) /
                         (smoothness * mu - 1.0);
        const double s = std::sqrt(t * t - 1.0);
        return std::make_pair(t - s, t + s);
    };

    const auto run_case = [&](double smoothness, double beta) {
        const double mu = 0.99 / smoothness;
        const SpectralModel model = build_gd_model(smoothness, mu, beta);
        const RootReport report = pencil_roots(model);
        const auto expected = closed_form(smoothness, mu, beta);

        bool ok = report.roots.size() == 2 && report.all_real &&
                  report.all_simple;
        double error = std::numeric_limits<double>::infinity();
        double low = 0.0, high = 0.0;
        if (report.roots.size() == 2) {
            low = std::min(report.roots[0].z.real(),
                           report.roots[1].z.real());
            high = std::max(report.roots[0].z.real(),
                            report.roots[1].z.real());
            ok = ok && low > 0.0;
            error = std::max(std::abs(low - expected.first),
                             std::abs(high - expected.second));
            ok = ok && error <= 1e-8;
        }

        // Just past the stability threshold the same pencil must stop
        // producing two distinct real positive roots.
        const double bad_mu = 1.01 / smoothness;
        const RootReport bad =
            pencil_roots(build_gd_model(smoothness, bad_mu, beta));
        bool bad_is_good = bad.roots.size() == 2 && bad.all_real &&
                           bad.all_simple;
        if (bad_is_good) {
            for (const auto& root : bad.roots) {
                bad_is_good = bad_is_good && root.z.real() > 0.0;
            }
        }
        ok = ok && !bad_is_good;

        char line[256];
        std::snprintf(line, sizeof(line),
                      "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3g,%d\n",
                      smoothness, beta, mu, low, high, expected.first,
                      expected.second, error, ok ? 1 : 0);
        csv << line;
        all_pass = all_pass && ok;
    };

    for (int i = 0; i < 50; ++i) {
        const double smoothness =
            std::exp(std::log(0.05) +
                     rng.uniform() * (std::log(20.0) - std::log(0.05)));
        const double beta = std::exp(
            std::log(0.05) + rng.uniform() * (std::log(20.0) - std::log(0.05)));
        run_case(smoothness, beta);
    }

    // Pinned case with hand-solved roots 2 - sqrt(3) and 2 + sqrt(3).
    {
        const SpectralModel model = build_gd_model(1.0, 0.5, 1.0);
        const RootReport report = pencil_roots(model);
        bool ok = report.roots.size() == 2 && report.all_real;
        if (ok) {
            const double low = std::min(report.roots[0].z.real(),
                                        report.roots[1].z.real());
            const double high = std::max(report.roots[0].z.real(),
                                         report.roots[1].z.real());
            ok = std::abs(low - (2.0 - std::sqrt(3.0))) <= 1e-8 &&
                 std::abs(high - (2.0 + std::sqrt(3.0))) <= 1e-8;
        }
        summary << "pinned case (smoothness 1, step 0.5, beta 1): "
                << (ok ? "pass" : "FAIL") << "\n";
        all_pass = all_pass && ok;
    }

    summary << "random cases: " << (all_pass ? "all pass" : "FAILURES")
            << "\n";

    emit_file(artifacts, dir, "gd_roots.csv", csv.str());
    artifacts.passed = all_pass;
    artifacts.summary = echo + summary.str();
    emit_file(artifacts, dir, "summary.txt", artifacts.summary);
    artifacts.summary_path = (dir / "summary.txt").string();
    return artifacts;
}

}  // namespace

const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids = {
        "logcosh_setup1", "logcosh_setup2", "logistic", "ot_scaling",
        "ot_plan",        "param_scan",     "gd_check"};
    return ids;
}

GossipPair scan_gossip_pair(int node_count, std::uint64_t seed) {
    if (node_count < 2) {
        throw InvalidParameter("scan gossip pair needs at least 2 nodes");
    }
    const int m = node_count;
    Eigen::MatrixXd w =
        Eigen::MatrixXd::Constant(m, m, -0.5 / (m - 1.0));
    w.diagonal().setConstant(0.5);

    Rng rng(seed);
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            const double entry = 2.0 * rng.uniform() - 1.0;
            noise(i, j) = entry;
            noise(j, i) = entry;
        }
    }
    // The diagonal is zero so far, so this cancels each row sum exactly.
    noise.diagonal() = -noise.rowwise().sum();
    w += 0.03 * noise;

    GossipPair pair;
    pair.W = w;
    pair.Q = w;
    return pair;
}

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig config;
    std::set<std::string> seen;
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        const std::string text = trim(line);
        if (text.empty() || text.front() == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_number) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(line_number) +
                              ": missing key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(key + ": duplicate key");
        }

        if (key == "experiment") {
            config.experiment = value;
        } else if (key == "solver") {
            config.solver = value;
        } else if (key == "nodes") {
            config.nodes = static_cast<int>(parse_long(key, value));
        } else if (key == "dimension") {
            config.dimension = static_cast<int>(parse_long(key, value));
        } else if (key == "samples") {
            config.samples = static_cast<int>(parse_long(key, value));
        } else if (key == "edge_density") {
            config.edge_density = parse_double(key, value);
        } else if (key == "seed") {
            config.seed = parse_u64(key, value);
        } else if (key == "iterations") {
            config.iterations = parse_long(key, value);
        } else if (key == "mu") {
            config.mu = parse_double(key, value);
        } else if (key == "rho") {
            config.rho = parse_double(key, value);
        } else if (key == "alpha") {
            config.alpha = parse_double(key, value);
        } else if (key == "eta") {
            config.eta = parse_double(key, value);
        } else if (key == "step") {
            config.step = parse_double(key, value);
        } else if (key == "step_scale") {
            config.step_scale = parse_double(key, value);
        } else if (key == "surplus_gain") {
            config.surplus_gain = parse_double(key, value);
        } else if (key == "ridge") {
            config.ridge = parse_double(key, value);
        } else if (key == "regularization") {
            config.regularization = parse_double(key, value);
        } else if (key == "separation") {
            config.separation = parse_double(key, value);
        } else if (key == "smoothness") {
            config.smoothness = parse_double(key, value);
        } else if (key == "beta") {
            config.beta = parse_double(key, value);
        } else if (key == "ot_size") {
            config.ot_size = static_cast<int>(parse_long(key, value));
        } else if (key == "ot_sizes") {
            config.ot_sizes = parse_int_list(key, value);
        } else if (key == "ot_reps") {
            config.ot_reps = static_cast<int>(parse_long(key, value));
        } else if (key == "dataset") {
            config.dataset = value;
        } else if (key == "output_dir") {
            config.output_dir = value;
        } else {
            throw ConfigError(key + ": unknown key");
        }
    }
    return config;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

void validate_config(const ExperimentConfig& config) {
    const auto& ids = experiment_ids();
    if (std::find(ids.begin(), ids.end(), config.experiment) == ids.end()) {
        throw ConfigError("experiment: unknown id '" + config.experiment +
                          "'");
    }

    static const std::map<std::string, std::set<std::string>> allowed = {
        {"logcosh_setup1", {"dagp", "ddps"}},
        {"logcosh_setup2", {"dagp", "ddps"}},
        {"logistic", {"dagp", "push_pull", "add_opt"}},
        {"ot_scaling", {"dagp"}},
        {"ot_plan", {"dagp", "sinkhorn"}},
        {"param_scan", {}},
        {"gd_check", {}},
    };
    if (!config.solver.empty()) {
        const auto& set = allowed.at(config.experiment);
        if (set.find(config.solver) == set.end()) {
            throw ConfigError("solver: '" + config.solver +
                              "' is not available for " + config.experiment);
        }
    }

    if (config.nodes < 0) throw ConfigError("nodes: must be nonnegative");
    if (config.dimension < 0) {
        throw ConfigError("dimension: must be nonnegative");
    }
    if (config.samples < 0) throw ConfigError("samples: must be nonnegative");
    if (!(config.edge_density > 0.0) || config.edge_density > 1.0) {
        throw ConfigError("edge_density: must be in (0, 1]");
    }
    if (config.iterations < -1) {
        throw ConfigError("iterations: must be -1 (default) or nonnegative");
    }
    if (config.mu < 0.0 || config.rho < 0.0 || config.alpha < 0.0) {
        throw ConfigError("mu/rho/alpha: must be nonnegative");
    }
    if (!(config.eta > 0.0)) throw ConfigError("eta: must be positive");
    if (config.step < 0.0) throw ConfigError("step: must be nonnegative");
    if (config.step_scale < 0.0) {
        throw ConfigError("step_scale: must be nonnegative");
    }
    if (!(config.surplus_gain > 0.0) || config.surplus_gain >= 1.0) {
        throw ConfigError("surplus_gain: must be in (0, 1)");
    }
    if (config.ridge < 0.0) throw ConfigError("ridge: must be nonnegative");
    if (!(config.regularization > 0.0)) {
        throw ConfigError("regularization: must be positive");
    }
    if (!(config.separation > 0.0)) {
        throw ConfigError("separation: must be positive");
    }
    if (!(config.smoothness > 0.0)) {
        throw ConfigError("smoothness: must be positive");
    }
    if (!(config.beta > 0.0)) throw ConfigError("beta: must be positive");
    if (config.ot_size < 1) throw ConfigError("ot_size: must be positive");
    if (config.ot_reps < 1) throw ConfigError("ot_reps: must be positive");
    if (config.ot_sizes.empty()) {
        throw ConfigError("ot_sizes: must be nonempty");
    }
    for (int n : config.ot_sizes) {
        if (n < 1) throw ConfigError("ot_sizes: entries must be positive");
    }
    if (config.output_dir.empty()) {
        throw ConfigError("output_dir: must be nonempty");
    }
    if (!config.dataset.empty() && !fs::exists(config.dataset)) {
        throw ConfigError("dataset: file not found: " + config.dataset);
    }
}

std::string config_echo(const ExperimentConfig& config) {
    std::ostringstream out;
    out << "# experiment = " << config.experiment << "\n";
    out << "# solver = " << config.solver << "\n";
    out << "# nodes = " << config.nodes << "\n";
    out << "# dimension = " << config.dimension << "\n";
    out << "# samples = " << config.samples << "\n";
    out << "# edge_density = " << fmt(config.edge_density) << "\n";
    out << "# seed = " << config.seed << "\n";
    out << "# iterations = " << config.iterations << "\n";
    out << "# mu = " << fmt(config.mu) << "\n";
    out << "# rho = " << fmt(config.rho) << "\n";
    out << "# alpha = " << fmt(config.alpha) << "\n";
    out << "# eta = " << fmt(config.eta) << "\n";
    out << "# step = " << fmt(config.step) << "\n";
    out << "# step_scale = " << fmt(config.step_scale) << "\n";
    out << "# surplus_gain = " << fmt(config.surplus_gain) << "\n";
    out << "# ridge = " << fmt(config.ridge) << "\n";
    out << "# regularization = " << fmt(config.regularization) << "\n";
    out << "# separation = " << fmt(config.separation) << "\n";
    out << "# smoothness = " << fmt(config.smoothness) << "\n";
    out << "# beta = " << fmt(config.beta) << "\n";
    out << "# ot_size = " << config.ot_size << "\n";
    out << "# ot_sizes = ";
    for (std::size_t i = 0; i < config.ot_sizes.size(); ++i) {
        out << (i > 0 ? "," : "") << config.ot_sizes[i];
    }
    out << "\n";
    out << "# ot_reps = " << config.ot_reps << "\n";
    out << "# dataset = " << config.dataset << "\n";
    out << "# output_dir = " << config.output_dir << "\n";
    return out.str();
}

RunArtifacts run_experiment(const ExperimentConfig& config) {
    validate_config(config);
    try {
        fs::create_directories(config.output_dir);
    } catch (const fs::filesystem_error& e) {
        throw ConfigError(std::string("output_dir: cannot create: ") +
                          e.what());
    }

    if (config.experiment == "logcosh_setup1") {
        return run_logcosh(config, 10, 20);
    }
    if (config.experiment == "logcosh_setup2") {
        return run_logcosh(config, 20, 10);
    }
    if (config.experiment == "logistic") return run_logistic(config);
    if (config.experiment == "ot_scaling") return run_ot_scaling(config);
    if (config.experiment == "ot_plan") return run_ot_plan(config);
    if (config.experiment == "param_scan") return run_param_scan(config);
    return run_gd_check(config);
}

bool ot_stopping_check(const std::vector<TraceRecord>& window) {
    if (window.size() < 2) {
        throw InvalidParameter("stopping check needs at least two records");
    }
    for (std::size_t i = 1; i < window.size(); ++i) {
        if (!(std::abs(window[i].obj_gap - window[i - 1].obj_gap) < 1e-7)) {
            return false;
        }
    }
    const double worst = std::sqrt(std::max(0.0, window.back().feas_max));
    return worst < 1e-4;
}

RateFit fit_rate(const std::vector<TraceRecord>& rows, TraceMetric metric,
                 int k_min, int k_max) {
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& row : rows) {
        if (row.iter < k_min || row.iter > k_max || row.iter < 1) continue;
        const double value = pick_metric(row, metric);
        if (!(value > 0.0) || !std::isfinite(value)) continue;
        xs.push_back(std::log(static_cast<double>(row.iter)));
        ys.push_back(std::log(value));
    }
    if (xs.size() < 10) {
        throw InsufficientData(
            "rate fit needs at least 10 positive records in range, found " +
            std::to_string(xs.size()));
    }

    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) {
        throw InsufficientData("iteration range is degenerate");
    }

    RateFit fit;
    fit.points = static_cast<int>(xs.size());
    fit.slope = sxy / sxx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

}  // namespace dagp
