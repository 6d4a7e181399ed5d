#include "dagp/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dagp/errors.hpp"
#include "dagp/rng.hpp"

namespace dagp {

namespace {

// log(cosh(t)) without overflow for large |t|.
double log_cosh(double t) {
    const double a = std::abs(t);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

// log(1 + exp(t)) without overflow.
double softplus(double t) {
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

double DecentralizedProblem::global_objective(const Eigen::VectorXd& x) const {
    double total = 0.0;
    for (const auto& node : nodes) total += node.objective.value(x);
    return total;
}

Eigen::VectorXd DecentralizedProblem::feasibility_gaps(
    const Eigen::VectorXd& x) const {
    Eigen::VectorXd gaps(node_count());
    for (int v = 0; v < node_count(); ++v) {
        gaps(v) = (x - nodes[v].constraint.project(x)).squaredNorm();
    }
    return gaps;
}

DecentralizedProblem build_logcosh_problem(int node_count, int dimension,
                                           std::uint64_t seed) {
    if (node_count < 1 || dimension < 1) {
        throw InvalidParameter("node count and dimension must be positive");
    }
    Rng rng(seed);

    // All halfspace offsets are anchored at one shared interior point, so
    // the intersection contains it with positive margin.
    Eigen::VectorXd anchor(dimension);
    for (int i = 0; i < dimension; ++i) anchor(i) = rng.normal();

    DecentralizedProblem problem;
    problem.dimension = dimension;
    problem.feasible_point = anchor;
    problem.nodes.reserve(node_count);

    for (int v = 0; v < node_count; ++v) {
        Eigen::VectorXd a(dimension);
        for (int i = 0; i < dimension; ++i) a(i) = rng.normal();
        const double b = rng.normal();
        Eigen::VectorXd c(dimension);
        for (int i = 0; i < dimension; ++i) c(i) = rng.normal();
        const double d = c.dot(anchor) + std::abs(rng.normal());

        SmoothFunction f;
        f.value = [a, b](const Eigen::VectorXd& x) {
            return log_cosh(a.dot(x) - b);
        };
        f.gradient = [a, b](const Eigen::VectorXd& x) {
            return Eigen::VectorXd(std::tanh(a.dot(x) - b) * a);
        };
        f.smoothness = a.squaredNorm();

        problem.nodes.push_back(
            {std::move(f), ConstraintSet::halfspace(c, d), dimension});
    }
    return problem;
}

DecentralizedProblem build_logistic_problem(const Dataset& data, int node_count,
                                            double ridge, std::uint64_t seed) {
    const int total = data.sample_count();
    const int dim = data.feature_count();
    if (node_count < 1) throw InvalidParameter("node count must be positive");
    if (total < node_count) {
        throw InvalidParameter("need at least one sample per node");
    }
    if (ridge < 0.0) throw InvalidParameter("ridge weight must be nonnegative");
    for (int i = 0; i < total; ++i) {
        if (data.labels(i) != 1 && data.labels(i) != -1) {
            throw InvalidParameter("labels must be +1 or -1");
        }
    }

    // Shuffled even split; the last node absorbs the remainder when the
    // sample count is not divisible by the node count.
    std::vector<int> order(total);
    for (int i = 0; i < total; ++i) order[i] = i;
    Rng rng(seed);
    for (int i = total - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }
    const int base = total / node_count;

    DecentralizedProblem problem;
    problem.dimension = dim;
    problem.feasible_point = Eigen::VectorXd::Zero(dim);
    problem.nodes.reserve(node_count);

    int cursor = 0;
    for (int v = 0; v < node_count; ++v) {
        const int count = (v == node_count - 1) ? total - cursor : base;
        Eigen::MatrixXd xs(count, dim);
        Eigen::VectorXd ys(count);
        for (int r = 0; r < count; ++r) {
            xs.row(r) = data.features.row(order[cursor]);
            ys(r) = static_cast<double>(data.labels(order[cursor]));
            ++cursor;
        }

        const double reg = ridge / static_cast<double>(node_count);
        SmoothFunction f;
        f.value = [xs, ys, reg, count](const Eigen::VectorXd& w) {
            const Eigen::VectorXd margins = ys.asDiagonal() * (xs * w);
            double loss = 0.0;
            for (int r = 0; r < count; ++r) loss += softplus(-margins(r));
            return loss / count + 0.5 * reg * w.squaredNorm();
        };
        f.gradient = [xs, ys, reg, count](const Eigen::VectorXd& w) {
            const Eigen::VectorXd margins = ys.asDiagonal() * (xs * w);
            Eigen::VectorXd weights(count);
            for (int r = 0; r < count; ++r) {
                weights(r) = -ys(r) * sigmoid(-margins(r));
            }
            Eigen::VectorXd grad = xs.transpose() * weights / count;
            grad += reg * w;
            return grad;
        };
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xs.transpose() * xs);
        f.smoothness =
            es.eigenvalues().maxCoeff() / (4.0 * count) + reg;

        problem.nodes.push_back(
            {std::move(f), ConstraintSet::whole_space(dim), dim});
    }
    return problem;
}

DecentralizedProblem build_ot_problem(const Eigen::VectorXd& source_marginal,
                                      const Eigen::VectorXd& target_marginal,
                                      const Eigen::MatrixXd& cost,
                                      int node_count) {
    const int ns = static_cast<int>(source_marginal.size());
    const int nt = static_cast<int>(target_marginal.size());
    if (ns < 1 || nt < 1) throw InvalidParameter("marginals are empty");
    if (cost.rows() != ns || cost.cols() != nt) {
        throw DimensionMismatch("cost matrix shape differs from marginals");
    }
    if (source_marginal.minCoeff() <= 0.0 || target_marginal.minCoeff() <= 0.0) {
        throw InvalidMarginal("marginal entries must be positive");
    }
    if (std::abs(source_marginal.sum() - 1.0) > 1e-9 ||
        std::abs(target_marginal.sum() - 1.0) > 1e-9) {
        throw InvalidMarginal("marginals must sum to 1");
    }
    if (node_count < 1 || node_count > ns + nt) {
        throw InvalidParameter("node count must lie in [1, rows + columns]");
    }

    const int dim = ns * nt;
    const int terms = ns + nt;

    // Term t < ns is row t with half the row costs; the rest are columns.
    // Round robin keeps per-node term counts within one of each other.
    std::vector<Eigen::VectorXd> slopes(node_count,
                                        Eigen::VectorXd::Zero(dim));
    std::vector<std::vector<SimplexSlice>> slices(node_count);
    for (int t = 0; t < terms; ++t) {
        const int v = t % node_count;
        SimplexSlice slice;
        if (t < ns) {
            const int i = t;
            slice.total = source_marginal(i);
            for (int j = 0; j < nt; ++j) {
                slice.indices.push_back(i * nt + j);
                slopes[v](i * nt + j) += 0.5 * cost(i, j);
            }
        } else {
            const int j = t - ns;
            slice.total = target_marginal(j);
            for (int i = 0; i < ns; ++i) {
                slice.indices.push_back(i * nt + j);
                slopes[v](i * nt + j) += 0.5 * cost(i, j);
            }
        }
        slices[v].push_back(std::move(slice));
    }

    DecentralizedProblem problem;
    problem.dimension = dim;
    // The independent coupling meets every row and column sum at once.
    problem.feasible_point = Eigen::VectorXd(dim);
    for (int i = 0; i < ns; ++i) {
        for (int j = 0; j < nt; ++j) {
            problem.feasible_point(i * nt + j) =
                source_marginal(i) * target_marginal(j);
        }
    }

    problem.nodes.reserve(node_count);
    for (int v = 0; v < node_count; ++v) {
        const Eigen::VectorXd slope = slopes[v];
        SmoothFunction f;
        f.value = [slope](const Eigen::VectorXd& x) { return slope.dot(x); };
        f.gradient = [slope](const Eigen::VectorXd&) { return slope; };
        f.smoothness = 0.0;
        problem.nodes.push_back(
            {std::move(f),
             ConstraintSet::slice_simplexes(dim, std::move(slices[v])), dim});
    }
    return problem;
}

Eigen::VectorXd gaussian_bins(double mean, double std_dev, int bins) {
    if (bins < 1) throw InvalidParameter("bin count must be positive");
    if (std_dev <= 0.0) {
        throw InvalidParameter("standard deviation must be positive");
    }
    Eigen::VectorXd w(bins);
    for (int i = 0; i < bins; ++i) {
        const double center = (i + 0.5) / bins;
        const double u = (center - mean) / std_dev;
        w(i) = std::exp(-0.5 * u * u);
    }
    return w / w.sum();
}

Dataset make_two_cluster_data(int samples, int dimension, double separation,
                              std::uint64_t seed) {
    if (samples < 2 || dimension < 1) {
        throw InvalidParameter("need at least two samples and one feature");
    }
    Rng rng(seed);
    Dataset data;
    data.features.resize(samples, dimension);
    data.labels.resize(samples);
    for (int i = 0; i < samples; ++i) {
        const int label = (i % 2 == 0) ? 1 : -1;
        const double shift = 0.5 * separation * label;
        for (int j = 0; j < dimension; ++j) {
            data.features(i, j) = shift + rng.normal();
        }
        data.labels(i) = label;
    }
    return data;
}

Dataset load_labeled_csv(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(row, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw InvalidParameter("bad numeric cell '" + cell + "'");
            }
        }
        if (values.size() < 2) {
            throw InvalidParameter("sample row needs a label and features");
        }
        const double label = values.front();
        if (label != 1.0 && label != -1.0) {
            throw InvalidParameter("labels must be +1 or -1");
        }
        labels.push_back(static_cast<int>(label));
        rows.push_back({values.begin() + 1, values.end()});
        if (rows.front().size() != rows.back().size()) {
            throw InvalidParameter("inconsistent feature count across rows");
        }
    }
    if (rows.empty()) throw InvalidParameter("sample file is empty");

    Dataset data;
    data.features.resize(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(rows.front().size()));
    data.labels.resize(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            data.features(static_cast<Eigen::Index>(i),
                          static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        data.labels(static_cast<Eigen::Index>(i)) = labels[i];
    }
    return data;
}

Dataset load_labeled_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open " + path);
    return load_labeled_csv(in);
}

Eigen::MatrixXd load_matrix(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::vector<double> values;
        double v = 0.0;
        while (row >> v) values.push_back(v);
        if (values.empty()) continue;
        if (!rows.empty() && values.size() != rows.front().size()) {
            throw InvalidParameter("inconsistent column count across rows");
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw InvalidParameter("matrix file is empty");

    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
        }
    }
    return m;
}

Eigen::MatrixXd load_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidParameter("cannot open " + path);
    return load_matrix(in);
}

void save_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    char buffer[64];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buffer, sizeof(buffer), "%.17g", m(i, j));
            out << buffer << (j + 1 < m.cols() ? " " : "");
        }
        out << "\n";
    }
}

void save_matrix_file(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path);
    if (!out) throw InvalidParameter("cannot open " + path);
    save_matrix(out, m);
}

}  // namespace dagp
