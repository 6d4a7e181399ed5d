#include "dagp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "dagp/errors.hpp"

namespace dagp {

namespace {

constexpr double kHeuristicSlack = 0.1;
constexpr double kBoundMargin = 1e-9;
const double kSmallZProbes[] = {1e-2, 1e-3, 1e-4};
const double kBetaProbes[] = {1.0, 1e-2, 1e-4, 1e-6};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void attach_pencil(SpectralModel& model) {
    const int n = model.state_size();
    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd coupling =
        (model.P * model.P.transpose()) / model.beta;

    model.F0.setZero(2 * n, 2 * n);
    model.F0.block(0, n, n, n) = identity;
    model.F0.block(n, 0, n, n) = -model.R;
    model.F0.block(n, n, n, n) = -coupling;

    model.F1.setZero(2 * n, 2 * n);
    model.F1.block(0, 0, n, n) = model.S;
    model.F1.block(0, n, n, n) = -model.R.transpose();
    model.F1.block(n, 0, n, n) = identity;
}

void require_positive(double value, const char* name) {
    if (!(value > 0.0)) {
        throw InvalidParameter(std::string(name) + " must be positive");
    }
}

/// Pencil pieces after joint row scaling. A shared positive row scaling
/// multiplies the determinant by a constant and leaves every right null
/// space untouched, so the root set, null vectors, and singularity tests
/// agree with the raw pencil while singular values stay comparable across
/// rows even when beta pushes the coupling block far from unit scale.
struct EquilibratedPencil {
    Eigen::MatrixXd f0;
    Eigen::MatrixXd f1;

    Eigen::MatrixXcd value(std::complex<double> z) const {
        return f0.cast<std::complex<double>>() +
               z * f1.cast<std::complex<double>>();
    }
};

EquilibratedPencil equilibrate_pencil(const SpectralModel& model) {
    if (!model.F0.allFinite() || !model.F1.allFinite()) {
        throw IllConditionedPencil("pencil pieces contain non-finite entries");
    }
    EquilibratedPencil eq{model.F0, model.F1};
    const int size = model.pencil_size();
    for (int i = 0; i < size; ++i) {
        const double row_scale =
            std::max(eq.f0.row(i).cwiseAbs().maxCoeff(),
                     eq.f1.row(i).cwiseAbs().maxCoeff());
        if (row_scale == 0.0) {
            throw IllConditionedPencil(
                "pencil has an identically zero row, every point is a root");
        }
        eq.f0.row(i) /= row_scale;
        eq.f1.row(i) /= row_scale;
    }
    return eq;
}

/// Smallest singular value of the equilibrated pencil at a real point.
double smallest_singular(const EquilibratedPencil& pencil, double z) {
    const Eigen::MatrixXd fz = pencil.f0 + z * pencil.f1;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fz);
    return svd.singularValues()(svd.singularValues().size() - 1);
}

/// Rank test for unit columns: the family is independent when the smallest
/// singular value of the stacked matrix clears the threshold.
bool columns_independent(const std::vector<Eigen::VectorXcd>& columns,
                         double* smallest = nullptr) {
    if (smallest != nullptr) *smallest = 0.0;
    if (columns.empty()) return true;
    const auto rows = columns.front().size();
    if (static_cast<Eigen::Index>(columns.size()) > rows) return false;
    Eigen::MatrixXcd stacked(rows, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) {
        stacked.col(static_cast<Eigen::Index>(i)) = columns[i];
    }
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(stacked);
    const double sigma =
        svd.singularValues()(svd.singularValues().size() - 1);
    if (smallest != nullptr) *smallest = sigma;
    return sigma > kIndependenceTolerance;
}

/// Greedy nearest-pair matching between equal-sized root sets. Returns the
/// largest matched distance.
double match_root_sets(const std::vector<std::complex<double>>& a,
                       const std::vector<std::complex<double>>& b) {
    const std::size_t count = a.size();
    std::vector<bool> used_a(count, false);
    std::vector<bool> used_b(count, false);
    double worst = 0.0;
    for (std::size_t round = 0; round < count; ++round) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        std::size_t bj = 0;
        for (std::size_t i = 0; i < count; ++i) {
            if (used_a[i]) continue;
            for (std::size_t j = 0; j < count; ++j) {
                if (used_b[j]) continue;
                const double d = std::abs(a[i] - b[j]);
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        used_a[bi] = true;
        used_b[bj] = true;
        worst = std::max(worst, best);
    }
    return worst;
}

/// Certification statistics over the non-stationary roots of a report.
/// Gap and independence are recomputed on this subset because a stationary
/// multiple root at z = 1 would otherwise poison both.
struct FamilyStats {
    std::size_t regular = 0;
    std::size_t stationary = 0;
    bool all_real = true;
    double worst_margin = std::numeric_limits<double>::infinity();
    double min_gap = std::numeric_limits<double>::infinity();
    bool null_independent = false;
    bool shifted_independent = false;
    std::vector<std::complex<double>> values;

    bool real_and_simple() const {
        return regular > 0 && all_real &&
               worst_margin > kSimplicityTolerance &&
               min_gap > kRootGapTolerance;
    }
};

FamilyStats family_stats(const RootReport& report, int state_size) {
    FamilyStats stats;
    std::vector<Eigen::VectorXcd> plain;
    std::vector<Eigen::VectorXcd> shifted;
    for (const auto& root : report.roots) {
        if (root.stationary) {
            ++stats.stationary;
            continue;
        }
        ++stats.regular;
        stats.all_real = stats.all_real && root.real;
        stats.worst_margin =
            std::min(stats.worst_margin, root.simplicity_margin);
        stats.values.push_back(root.z);
        plain.push_back(root.null_vector);
        Eigen::VectorXcd twisted = root.null_vector;
        twisted.head(state_size) *= root.z;
        const double norm = twisted.norm();
        if (norm > 0.0) twisted /= norm;
        shifted.push_back(std::move(twisted));
    }
    for (std::size_t i = 0; i < stats.values.size(); ++i) {
        for (std::size_t j = i + 1; j < stats.values.size(); ++j) {
            stats.min_gap = std::min(
                stats.min_gap, std::abs(stats.values[i] - stats.values[j]));
        }
    }
    stats.null_independent = columns_independent(plain);
    stats.shifted_independent = columns_independent(shifted);
    return stats;
}

}  // namespace

Eigen::MatrixXcd pencil_value(const SpectralModel& model,
                              std::complex<double> z) {
    return model.F0.cast<std::complex<double>>() +
           z * model.F1.cast<std::complex<double>>();
}

SpectralModel build_spectral_model(const Eigen::MatrixXd& w,
                                   const Eigen::MatrixXd& q, double smoothness,
                                   double mu, double rho, double alpha,
                                   double eta, double beta, int node_count) {
    if (node_count < 1) {
        throw InvalidParameter("node count must be at least 1");
    }
    const int m = node_count;
    if (w.rows() != m || w.cols() != m || q.rows() != m || q.cols() != m) {
        throw DimensionMismatch("gossip matrices must be node_count square");
    }
    require_positive(smoothness, "smoothness");
    require_positive(mu, "mu");
    require_positive(rho, "rho");
    require_positive(alpha, "alpha");
    require_positive(eta, "eta");
    require_positive(beta, "beta");

    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(m, m);
    const Eigen::MatrixXd mixing_defect = identity - w;
    const double gain = rho / mu;
    const double half_smooth_step = smoothness * mu / 2.0;

    SpectralModel model;
    model.beta = beta;

    model.R.setZero(4 * m, 4 * m);
    model.R.block(m, 0, m, m) = identity;
    model.R.block(2 * m, 0, m, m) = -gain * identity;
    model.R.block(2 * m, m, m, m) = gain * mixing_defect;
    model.R.block(2 * m, 2 * m, m, m) = identity;
    model.R.block(2 * m, 3 * m, m, m) = alpha * identity;
    model.R.block(3 * m, 0, m, m) = gain * identity;
    model.R.block(3 * m, m, m, m) = -gain * mixing_defect;
    model.R.block(3 * m, 3 * m, m, m) = (1.0 - alpha) * identity - q;

    const Eigen::MatrixXd centering =
        identity - Eigen::MatrixXd::Constant(m, m, 1.0 / m);
    const Eigen::MatrixXd cross =
        -0.5 * mixing_defect + half_smooth_step * identity;

    model.S.setZero(4 * m, 4 * m);
    model.S.block(0, 0, m, m) =
        (1.0 - half_smooth_step) * identity - (m * eta) * centering;
    model.S.block(0, m, m, m) = cross;
    model.S.block(m, 0, m, m) = cross.transpose();
    model.S.block(0, 2 * m, m, m) = -(mu / 2.0) * identity;
    model.S.block(2 * m, 0, m, m) = -(mu / 2.0) * identity;
    model.S.block(m, m, m, m) = -half_smooth_step * identity;

    model.P.setZero(4 * m, m);
    model.P.block(0, 0, m, m) = identity;

    attach_pencil(model);
    return model;
}

SpectralModel build_gd_model(double smoothness, double mu, double beta) {
    require_positive(smoothness, "smoothness");
    require_positive(mu, "mu");
    require_positive(beta, "beta");

    SpectralModel model;
    model.beta = beta;
    model.R.setZero(2, 2);
    model.R(1, 0) = 1.0;
    model.P.setZero(2, 1);
    model.P(0, 0) = 1.0;
    model.S.resize(2, 2);
    model.S(0, 0) = (2.0 - smoothness * mu) / (2.0 * mu);
    model.S(0, 1) = (smoothness * mu - 1.0) / (2.0 * mu);
    model.S(1, 0) = model.S(0, 1);
    model.S(1, 1) = -smoothness / 2.0;
    attach_pencil(model);
    return model;
}

RootReport pencil_roots(const SpectralModel& model) {
    const int size = model.pencil_size();
    const EquilibratedPencil pencil = equilibrate_pencil(model);

    Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> solver;
    solver.compute(-pencil.f0, pencil.f1, false);
    if (solver.info() != Eigen::Success) {
        throw IllConditionedPencil("generalized eigensolver did not converge");
    }

    RootReport report;
    std::vector<std::complex<double>> kept;
    for (int i = 0; i < size; ++i) {
        const std::complex<double> numerator = solver.alphas()(i);
        const double denominator = solver.betas()(i);
        const double scale = std::abs(numerator) + std::abs(denominator);
        if (scale < 1e-300) {
            throw IllConditionedPencil(
                "eigensolver returned an indeterminate eigenvalue pair");
        }
        if (std::abs(denominator) <= kPencilCut * scale) {
            ++report.infinite_roots;
            continue;
        }
        if (std::abs(numerator) <= kPencilCut * scale) {
            ++report.zero_roots;
            continue;
        }
        kept.push_back(numerator / denominator);
    }

    report.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = i + 1; j < kept.size(); ++j) {
            report.min_gap = std::min(report.min_gap,
                                      std::abs(kept[i] - kept[j]));
        }
    }

    {
        Eigen::JacobiSVD<Eigen::MatrixXd> at_one(pencil.f0 + pencil.f1);
        const auto& sigma = at_one.singularValues();
        report.singular_at_one =
            sigma(sigma.size() - 1) <= kStationarySingularRatio * sigma(0);
    }

    report.all_real = true;
    report.all_simple = true;
    std::vector<Eigen::VectorXcd> plain;
    std::vector<Eigen::VectorXcd> shifted;
    const int state = model.state_size();
    for (const auto& z : kept) {
        PencilRoot root;
        root.z = z;
        root.real = std::abs(z.imag()) <= kRealTolerance * (1.0 + std::abs(z.real()));
        root.stationary =
            report.singular_at_one &&
            std::abs(z - 1.0) <= kStationaryRootTolerance;

        const Eigen::MatrixXcd fz = pencil.value(z);
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(fz, Eigen::ComputeFullV);
        const auto& sigma = svd.singularValues();
        const double largest = sigma(0);
        root.simplicity_margin =
            largest > 0.0 ? sigma(sigma.size() - 2) / largest : 0.0;
        root.null_vector = svd.matrixV().col(size - 1);

        double own_gap = std::numeric_limits<double>::infinity();
        for (const auto& other : kept) {
            if (&other == &z) continue;
            own_gap = std::min(own_gap, std::abs(z - other));
        }
        root.simple = root.simplicity_margin > kSimplicityTolerance &&
                      own_gap > kRootGapTolerance;

        report.all_real = report.all_real && root.real;
        report.all_simple = report.all_simple && root.simple;

        plain.push_back(root.null_vector);
        Eigen::VectorXcd twisted = root.null_vector;
        twisted.head(state) *= z;
        const double norm = twisted.norm();
        if (norm > 0.0) twisted /= norm;
        shifted.push_back(twisted);

        report.roots.push_back(std::move(root));
    }

    report.null_vectors_independent = columns_independent(plain);
    report.shifted_vectors_independent = columns_independent(shifted);
    return report;
}

void write_root_report(std::ostream& out, const RootReport& report) {
    out << "nonzero roots: " << report.roots.size()
        << " (zero: " << report.zero_roots
        << ", infinite: " << report.infinite_roots << ")\n";
    for (const auto& root : report.roots) {
        char line[176];
        std::snprintf(line, sizeof(line),
                      "  z = %.12g %+.12gi  |imag| = %.3g  margin = %.3g  %s %s%s",
                      root.z.real(), root.z.imag(), std::abs(root.z.imag()),
                      root.simplicity_margin, root.real ? "real" : "complex",
                      root.simple ? "simple" : "clustered",
                      root.stationary ? " stationary" : "");
        out << line << '\n';
    }
    if (report.singular_at_one) {
        out << "stationary modes at z = 1: " << report.stationary_count()
            << " (the pencil is singular at 1; these modes are excluded"
               " from certification)\n";
    }
    out << "min pairwise gap: " << format_double(report.min_gap) << '\n';
    out << "null vectors independent: "
        << (report.null_vectors_independent ? "yes" : "no") << '\n';
    out << "shifted vectors independent: "
        << (report.shifted_vectors_independent ? "yes" : "no") << '\n';
}

bool ParameterCheck::certified_pass() const {
    return roots_real_simple.pass && null_vectors_independent.pass &&
           shifted_vectors_independent.pass && beta_family.pass;
}

bool ParameterCheck::all_pass() const {
    return certified_pass() && small_z_bounded.pass;
}

std::string ParameterCheck::summary() const {
    const auto line = [](const char* name, const ConditionVerdict& v) {
        std::ostringstream s;
        s << name << (v.pass ? " [pass] " : " [FAIL] ")
          << (v.certified ? "certified" : "heuristic") << ": " << v.detail
          << '\n';
        return s.str();
    };
    std::string text;
    text += line("roots real and simple      ", roots_real_simple);
    text += line("small-z inverse bounded    ", small_z_bounded);
    text += line("null vectors independent   ", null_vectors_independent);
    text += line("shifted vectors independent", shifted_vectors_independent);
    text += line("beta family stable         ", beta_family);
    return text;
}

ParameterCheck check_parameter_conditions(const SpectralModel& model) {
    ParameterCheck out;
    out.small_z_bounded.certified = false;

    RootReport base;
    try {
        base = pencil_roots(model);
    } catch (const Error& e) {
        const std::string why = std::string("root search failed: ") + e.what();
        out.roots_real_simple.detail = why;
        out.small_z_bounded.detail = why;
        out.null_vectors_independent.detail = why;
        out.shifted_vectors_independent.detail = why;
        out.beta_family.detail = why;
        return out;
    }

    const int state = model.state_size();
    const FamilyStats stats = family_stats(base, state);
    const std::string family_size = std::to_string(stats.regular);
    const std::string excluded_note =
        stats.stationary == 0
            ? std::string()
            : "; " + std::to_string(stats.stationary) +
                  " stationary modes at z = 1 excluded (the pencil is"
                  " singular at 1 for every zero-column-sum tracker"
                  " gossip matrix)";

    if (stats.regular == 0) {
        out.roots_real_simple.detail =
            "no certifiable nonzero roots" + excluded_note;
    } else {
        out.roots_real_simple.pass = stats.real_and_simple();
        out.roots_real_simple.detail =
            family_size + " certified roots, min gap " +
            format_double(stats.min_gap) + ", worst margin " +
            format_double(stats.worst_margin) + excluded_note;
    }

    out.null_vectors_independent.pass =
        stats.regular > 0 && stats.null_independent;
    out.null_vectors_independent.detail =
        stats.regular == 0
            ? "no roots to stack"
            : "null vectors of the " + family_size + " certified roots " +
                  (stats.null_independent ? "have full rank"
                                          : "are rank deficient");

    out.shifted_vectors_independent.pass =
        stats.regular > 0 && stats.shifted_independent;
    out.shifted_vectors_independent.detail =
        stats.regular == 0
            ? "no roots to stack"
            : "shifted vectors of the " + family_size + " certified roots " +
                  (stats.shifted_independent ? "have full rank"
                                             : "are rank deficient");

    {
        std::ostringstream detail;
        detail << "norm of z*inverse(F(z)) at z =";
        bool pass = true;
        double previous = std::numeric_limits<double>::infinity();
        bool first = true;
        const EquilibratedPencil pencil = equilibrate_pencil(model);
        for (double z : kSmallZProbes) {
            const double sigma = smallest_singular(pencil, z);
            const double value =
                sigma > 0.0 ? z / sigma
                            : std::numeric_limits<double>::infinity();
            detail << ' ' << format_double(z) << " -> "
                   << format_double(value) << ';';
            if (!std::isfinite(value)) pass = false;
            if (!first && value > previous * (1.0 + kHeuristicSlack)) {
                pass = false;
            }
            previous = value;
            first = false;
        }
        out.small_z_bounded.pass = pass;
        out.small_z_bounded.detail = detail.str();
    }

    {
        bool pass = stats.regular > 0;
        std::ostringstream detail;
        detail << "probed beta:";
        std::vector<std::complex<double>> previous_roots;
        double worst_drift = 0.0;
        for (double beta : kBetaProbes) {
            detail << ' ' << format_double(beta);
            SpectralModel probe = model;
            probe.beta = beta;
            attach_pencil(probe);
            RootReport probed;
            try {
                probed = pencil_roots(probe);
            } catch (const Error& e) {
                pass = false;
                detail << " (root search failed: " << e.what() << ')';
                break;
            }
            const FamilyStats probe_stats = family_stats(probed, state);
            if (probe_stats.regular == 0) {
                pass = false;
                detail << " (no certifiable roots)";
                break;
            }
            if (probe_stats.regular != stats.regular) {
                pass = false;
                detail << " (root count changed to "
                       << probe_stats.regular << ')';
                break;
            }
            if (!probe_stats.real_and_simple()) {
                pass = false;
                detail << " (roots not real and simple)";
                break;
            }
            if (!probe_stats.null_independent ||
                !probe_stats.shifted_independent) {
                pass = false;
                detail << " (vector families lose rank)";
                break;
            }
            if (!previous_roots.empty()) {
                worst_drift = std::max(
                    worst_drift,
                    match_root_sets(previous_roots, probe_stats.values));
            }
            previous_roots = probe_stats.values;
        }
        if (pass) {
            detail << "; counts stable at " << stats.regular
                   << ", max matched drift " << format_double(worst_drift);
        }
        out.beta_family.pass = pass;
        out.beta_family.detail = detail.str();
    }

    return out;
}

MuScan scan_mu_region(const Eigen::MatrixXd& w, const Eigen::MatrixXd& q,
                      double smoothness, double rho, double alpha, double eta,
                      double beta, const std::vector<double>& mu_grid,
                      int node_count) {
    MuScan scan;
    scan.grid = mu_grid;
    scan.mu0 = std::numeric_limits<double>::quiet_NaN();
    for (double mu : mu_grid) {
        ParameterCheck report;
        try {
            const SpectralModel model = build_spectral_model(
                w, q, smoothness, mu, rho, alpha, eta, beta, node_count);
            report = check_parameter_conditions(model);
        } catch (const Error& e) {
            report.roots_real_simple.detail =
                std::string("model build failed: ") + e.what();
        }
        scan.pass.push_back(report.certified_pass());
        scan.reports.push_back(std::move(report));
    }
    for (std::size_t i = 0; i < scan.pass.size(); ++i) {
        if (!scan.pass[i]) break;
        scan.mu0 = scan.grid[i];
        scan.has_feasible = true;
    }
    return scan;
}

RhoAlphaScan scan_rho_alpha_region(const Eigen::MatrixXd& w,
                                   const Eigen::MatrixXd& q, double smoothness,
                                   double mu, double eta, double beta,
                                   const std::vector<double>& rho_grid,
                                   const std::vector<double>& alpha_grid,
                                   int node_count) {
    RhoAlphaScan scan;
    scan.rho_grid = rho_grid;
    scan.alpha_grid = alpha_grid;
    scan.pass.resize(rho_grid.size());
    for (std::size_t i = 0; i < rho_grid.size(); ++i) {
        scan.pass[i].resize(alpha_grid.size(), false);
        for (std::size_t j = 0; j < alpha_grid.size(); ++j) {
            try {
                const SpectralModel model = build_spectral_model(
                    w, q, smoothness, mu, rho_grid[i], alpha_grid[j], eta,
                    beta, node_count);
                scan.pass[i][j] =
                    check_parameter_conditions(model).certified_pass();
            } catch (const Error&) {
                scan.pass[i][j] = false;
            }
        }
    }
    return scan;
}

void write_mu_scan_csv(std::ostream& out, const MuScan& scan) {
    out << "mu,pass\n";
    for (std::size_t i = 0; i < scan.grid.size(); ++i) {
        char line[64];
        std::snprintf(line, sizeof(line), "%.17g,%d\n", scan.grid[i],
                      scan.pass[i] ? 1 : 0);
        out << line;
    }
}

void write_rho_alpha_csv(std::ostream& out, const RhoAlphaScan& scan) {
    out << "rho,alpha,pass\n";
    for (std::size_t i = 0; i < scan.rho_grid.size(); ++i) {
        for (std::size_t j = 0; j < scan.alpha_grid.size(); ++j) {
            char line[96];
            std::snprintf(line, sizeof(line), "%.17g,%.17g,%d\n",
                          scan.rho_grid[i], scan.alpha_grid[j],
                          scan.pass[i][j] ? 1 : 0);
            out << line;
        }
    }
}

AggregateBound trajectory_aggregate(const std::vector<Eigen::MatrixXd>& states,
                                    const Eigen::MatrixXd& s) {
    if (s.rows() != s.cols()) {
        throw DimensionMismatch("aggregate weight matrix must be square");
    }
    if (states.empty()) {
        throw InvalidParameter("trajectory aggregate needs at least one state");
    }
    for (const auto& psi : states) {
        if (psi.rows() != s.rows()) {
            throw DimensionMismatch(
                "state row count does not match the weight matrix");
        }
    }

    AggregateBound result;
    result.partial_sums.reserve(states.size());
    double running = 0.0;
    for (const auto& psi : states) {
        running += (s * psi).cwiseProduct(psi).sum();
        result.partial_sums.push_back(running);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    const double lambda_min = eig.eigenvalues()(0);
    result.margin_constant = std::max(0.0, -lambda_min) + kBoundMargin;
    result.bound = -result.margin_constant * states.front().squaredNorm();
    result.min_partial =
        *std::min_element(result.partial_sums.begin(),
                          result.partial_sums.end());
    result.holds = result.min_partial >= result.bound;
    return result;
}

AggregateBound dagp_trajectory_aggregate(const StateHistory& history,
                                         const Eigen::MatrixXd& s,
                                         const DecentralizedProblem& problem,
                                         const ReferenceSolution& reference) {
    if (history.size() < 2) {
        throw InvalidParameter("state history needs at least two snapshots");
    }
    const int m = problem.node_count();
    const int dim = problem.dimension;
    if (s.rows() != 4 * m || s.cols() != 4 * m) {
        throw DimensionMismatch("weight matrix must be 4*node_count square");
    }
    for (const auto& snapshot : history) {
        if (static_cast<int>(snapshot.size()) != m) {
            throw DimensionMismatch("snapshot node count mismatch");
        }
    }
    if (reference.x.size() != dim) {
        throw DimensionMismatch("reference dimension mismatch");
    }

    bool constrained = false;
    for (const auto& node : problem.nodes) {
        if (node.constraint.kind() != ConstraintSet::Kind::WholeSpace) {
            constrained = true;
            break;
        }
    }
    Eigen::MatrixXd normals = Eigen::MatrixXd::Zero(m, dim);
    if (reference.normals_available &&
        static_cast<int>(reference.normals.size()) == m) {
        for (int v = 0; v < m; ++v) {
            if (reference.normals[v].size() != dim) {
                throw DimensionMismatch("reference normal dimension mismatch");
            }
            normals.row(v) = reference.normals[v].transpose();
        }
    } else if (constrained) {
        throw MissingReference(
            "constrained problems need reference normals for the aggregate");
    }

    Eigen::MatrixXd gradients_at_reference(m, dim);
    for (int v = 0; v < m; ++v) {
        gradients_at_reference.row(v) =
            problem.nodes[v].objective.gradient(reference.x).transpose();
    }

    const auto solution_block = [&](std::size_t k) {
        Eigen::MatrixXd block(m, dim);
        for (int v = 0; v < m; ++v) {
            block.row(v) =
                (history[k][v].x - reference.x).transpose();
        }
        return block;
    };

    std::vector<Eigen::MatrixXd> deviations;
    deviations.reserve(history.size() - 1);
    for (std::size_t k = 0; k + 1 < history.size(); ++k) {
        Eigen::MatrixXd psi(4 * m, dim);
        psi.topRows(m) = solution_block(k + 1);
        psi.middleRows(m, m) = solution_block(k);
        for (int v = 0; v < m; ++v) {
            psi.row(2 * m + v) = history[k][v].g.transpose() -
                                 gradients_at_reference.row(v) -
                                 normals.row(v);
            psi.row(3 * m + v) =
                (history[k][v].h - history[k][v].g).transpose();
        }
        deviations.push_back(std::move(psi));
    }

    return trajectory_aggregate(deviations, s);
}

}  // namespace dagp
