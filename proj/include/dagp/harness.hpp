#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dagp/solvers.hpp"

namespace dagp {

/// Flat key = value run description. Every knob lives here so a run can be
/// reproduced from its config echo alone; unknown keys are rejected rather
/// than ignored. Zero or empty means the experiment default.
struct ExperimentConfig {
    std::string experiment;
    std::string solver;
    int nodes = 0;
    int dimension = 0;
    int samples = 0;
    double edge_density = 0.35;
    std::uint64_t seed = 1;
    long iterations = -1;

    double mu = 0.0;
    double rho = 0.0;
    double alpha = 0.0;
    double eta = 0.1;
    double step = 0.0;
    double step_scale = 0.0;
    double surplus_gain = 0.05;
    double ridge = 0.0;
    double regularization = 0.05;
    double separation = 3.0;
    double smoothness = 0.1;
    double beta = 1.0;

    int ot_size = 5;
    std::vector<int> ot_sizes = {5, 10, 20, 40};
    int ot_reps = 10;

    std::string dataset;
    std::string output_dir = "runs";
};

/// Valid experiment ids, in the order presets are documented.
const std::vector<std::string>& experiment_ids();

/// Gossip pair for the parameter-region presets: W is the complete-graph
/// Laplacian with entries 1/2 and -1/(2(m-1)) plus a seeded symmetric
/// zero-row-sum perturbation of relative size 0.03, and Q = W. The exact
/// Laplacian has an (m-1)-fold eigenvalue that makes most pencil roots
/// collide; the perturbation splits them while keeping every row and
/// column sum at zero, so the pair stays admissible.
GossipPair scan_gossip_pair(int node_count, std::uint64_t seed);

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

/// Field-level validation, including existence of referenced files.
void validate_config(const ExperimentConfig& config);

/// Serialized config echo, one "# key = value" line per knob. Prepended to
/// every output file so no result can be detached from its parameters.
std::string config_echo(const ExperimentConfig& config);

struct RunArtifacts {
    std::vector<std::string> files;
    std::string summary_path;
    std::string summary;
    bool passed = true;
};

RunArtifacts run_experiment(const ExperimentConfig& config);

/// Convergence test over a trace window: every step of the objective gap
/// moves less than 1e-7 and the last distance to the farthest constraint
/// is below 1e-4. Records carry squared distances, hence the square root.
bool ot_stopping_check(const std::vector<TraceRecord>& window);

enum class TraceMetric { ObjGap, FeasMax, FeasSum, Consensus, GsumNorm };

struct RateFit {
    double slope = 0.0;
    double r_squared = 0.0;
    int points = 0;
};

/// Least-squares slope of log metric against log iteration over rows with
/// iter in [k_min, k_max]. The objective gap enters as an absolute value;
/// rows with nonpositive metric are skipped. Fewer than 10 usable rows
/// raise InsufficientData.
RateFit fit_rate(const std::vector<TraceRecord>& rows, TraceMetric metric,
                 int k_min, int k_max);

}  // namespace dagp
