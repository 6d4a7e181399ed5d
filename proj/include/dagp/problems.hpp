#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dagp/operators.hpp"

namespace dagp {

/// Objective and constraint owned by a single node, both of dimension m.
struct NodeProblem {
    SmoothFunction objective;
    ConstraintSet constraint;
    int dimension;
};

/// Centralized solution attached to a problem for gap reporting. normals[v]
/// is a vector in the normal cone of S^v at x such that the stationarity
/// residual ‖Σ_v (∇f^v(x) + n^v)‖ is below the solver tolerance.
struct ReferenceSolution {
    Eigen::VectorXd x;
    double objective = 0.0;
    std::vector<Eigen::VectorXd> normals;
    bool normals_available = false;
};

/// The shared decision problem: M nodes over a common m-dimensional
/// variable. feasible_point witnesses that the constraint intersection is
/// nonempty.
struct DecentralizedProblem {
    std::vector<NodeProblem> nodes;
    int dimension = 0;
    Eigen::VectorXd feasible_point;
    std::optional<ReferenceSolution> reference;

    int node_count() const { return static_cast<int>(nodes.size()); }

    // Sum of all node objectives at x.
    double global_objective(const Eigen::VectorXd& x) const;
    // Squared distance from x to each node's constraint set.
    Eigen::VectorXd feasibility_gaps(const Eigen::VectorXd& x) const;
};

/// Labeled classification samples with labels in {+1, -1}.
struct Dataset {
    Eigen::MatrixXd features;  // one sample per row
    Eigen::VectorXi labels;

    int sample_count() const { return static_cast<int>(features.rows()); }
    int feature_count() const { return static_cast<int>(features.cols()); }
};

/// M nodes with f^v(x) = log cosh(a_vᵀx - b_v) and S^v a halfspace
/// {x : c_vᵀx ≤ d_v}. Coefficients are standard normal; the offsets d_v
/// are anchored at a sampled point so the intersection is nonempty.
DecentralizedProblem build_logcosh_problem(int node_count, int dimension,
                                           std::uint64_t seed);

/// Ridge-regularized logistic regression split across M nodes. Samples are
/// shuffled and dealt out evenly; when the count is not divisible by M the
/// last node takes the remainder. All constraints are the whole space.
DecentralizedProblem build_logistic_problem(const Dataset& data, int node_count,
                                            double ridge, std::uint64_t seed);

/// Discrete optimal transport between marginals over the flattened
/// n_s x n_t plan (row-major). The n_s row terms and n_t column terms, each
/// carrying half of its cost slice, are dealt round robin to M nodes; a
/// node's constraint set fixes the marginal mass on every slice it owns.
DecentralizedProblem build_ot_problem(const Eigen::VectorXd& source_marginal,
                                      const Eigen::VectorXd& target_marginal,
                                      const Eigen::MatrixXd& cost,
                                      int node_count);

/// Gaussian density sampled at the n bin centers (i + 0.5)/n on [0, 1],
/// normalized to sum exactly 1.
Eigen::VectorXd gaussian_bins(double mean, double std_dev, int bins);

/// Two Gaussian clusters labeled +1/-1, centers at ±separation/2 along
/// every coordinate.
Dataset make_two_cluster_data(int samples, int dimension, double separation,
                              std::uint64_t seed);

/// Reads rows "label,feat1,...,featm" with labels in {+1, -1}.
Dataset load_labeled_csv(std::istream& in);
Dataset load_labeled_csv_file(const std::string& path);

/// Reads a whitespace-separated numeric matrix, one row per line.
Eigen::MatrixXd load_matrix(std::istream& in);
Eigen::MatrixXd load_matrix_file(const std::string& path);
void save_matrix(std::ostream& out, const Eigen::MatrixXd& m);
void save_matrix_file(const std::string& path, const Eigen::MatrixXd& m);

}  // namespace dagp
