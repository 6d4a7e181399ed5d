#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include "dagp/analysis.hpp"
#include "dagp/errors.hpp"
#include "dagp/graph.hpp"
#include "dagp/harness.hpp"
#include "dagp/problems.hpp"
#include "dagp/rng.hpp"
#include "dagp/solvers.hpp"

using dagp::AggregateBound;
using dagp::GossipPair;
using dagp::ParameterCheck;
using dagp::PencilRoot;
using dagp::Rng;
using dagp::RootReport;
using dagp::SpectralModel;

namespace {

std::vector<double> sorted_real_roots(const RootReport& report) {
    std::vector<double> values;
    for (const auto& root : report.roots) values.push_back(root.z.real());
    std::sort(values.begin(), values.end());
    return values;
}

dagp::SmoothFunction scaled(const dagp::SmoothFunction& f, double factor) {
    dagp::SmoothFunction out;
    out.value = [f, factor](const Eigen::VectorXd& x) {
        return factor * f.value(x);
    };
    out.gradient = [f, factor](const Eigen::VectorXd& x) {
        return (factor * f.gradient(x)).eval();
    };
    out.smoothness = factor * f.smoothness;
    return out;
}

// The reference model for the stationary-family and scan tests: four nodes
// at the documented operating point of the parameter scan preset.
SpectralModel reference_model() {
    const GossipPair gossip = dagp::scan_gossip_pair(4, 7);
    return dagp::build_spectral_model(gossip.W, gossip.Q, 0.1, 1e-2, 1e-6,
                                      0.5, 0.1, 1.0, 4);
}

}  // namespace

TEST_CASE("gradient descent pencil has the frozen root pair") {
    const SpectralModel gd = dagp::build_gd_model(1.0, 0.5, 1.0);
    CHECK(gd.state_size() == 2);
    CHECK(gd.pencil_size() == 4);
    // The two-state reduction shifts the deviation down one slot, so the
    // propagation matrix is nilpotent and the summand weight is symmetric.
    CHECK((gd.R * gd.R).norm() == 0.0);
    CHECK((gd.S - gd.S.transpose()).norm() == 0.0);

    const RootReport report = dagp::pencil_roots(gd);
    REQUIRE(report.roots.size() == 2);
    const std::vector<double> roots = sorted_real_roots(report);
    CHECK(roots[0] == doctest::Approx(2.0 - std::sqrt(3.0)).epsilon(1e-10));
    CHECK(roots[1] == doctest::Approx(2.0 + std::sqrt(3.0)).epsilon(1e-10));
    CHECK(report.zero_roots == 1);
    CHECK(report.infinite_roots == 1);
    CHECK(!report.singular_at_one);
    CHECK(report.all_real);
    CHECK(report.all_simple);
    CHECK(report.null_vectors_independent);
    CHECK(report.shifted_vectors_independent);
    CHECK(report.stationary_count() == 0);

    const ParameterCheck check = dagp::check_parameter_conditions(gd);
    CHECK(check.certified_pass());
    CHECK(check.all_pass());
}

TEST_CASE("gradient descent roots follow the closed form") {
    // For step mu on an L-smooth objective the nonzero roots solve a
    // quadratic with product one: t +- sqrt(t^2 - 1) where
    // t = (L mu - 1 - beta mu) / (L mu - 1).
    Rng rng(91);
    for (int trial = 0; trial < 10; ++trial) {
        const double smoothness = 0.5 + 7.5 * rng.uniform();
        const double beta = 0.1 + 1.9 * rng.uniform();
        const double mu = 0.99 / smoothness;
        const double t =
            (smoothness * mu - 1.0 - beta * mu) / (smoothness * mu - 1.0);
        const double spread = std::sqrt(t * t - 1.0);

        const SpectralModel gd = dagp::build_gd_model(smoothness, mu, beta);
        const RootReport report = dagp::pencil_roots(gd);
        REQUIRE(report.roots.size() == 2);
        CHECK(report.all_real);
        CHECK(report.all_simple);
        const std::vector<double> roots = sorted_real_roots(report);
        CHECK(roots[0] > 0.0);
        CHECK(roots[1] > roots[0]);
        CHECK(roots[0] == doctest::Approx(t - spread).epsilon(1e-8));
        CHECK(roots[1] == doctest::Approx(t + spread).epsilon(1e-8));
    }

    // A frozen off-grid point.
    const RootReport frozen =
        dagp::pencil_roots(dagp::build_gd_model(2.0, 0.3, 0.7));
    const std::vector<double> roots = sorted_real_roots(frozen);
    REQUIRE(roots.size() == 2);
    CHECK(roots[0] == doctest::Approx(0.373642106033).epsilon(1e-9));
    CHECK(roots[1] == doctest::Approx(2.676357893967).epsilon(1e-9));

    // At mu = 1/L the quadratic degenerates: no nonzero finite roots are
    // left, only the zero and infinite families.
    const RootReport edge =
        dagp::pencil_roots(dagp::build_gd_model(1.0, 1.0, 1.0));
    CHECK(edge.roots.empty());
    CHECK(edge.zero_roots == 2);
    CHECK(edge.infinite_roots == 2);
}

TEST_CASE("pencil value matches its blockwise assembly") {
    const SpectralModel model = reference_model();
    const int n = model.state_size();
    Rng rng(92);
    for (int trial = 0; trial < 3; ++trial) {
        const std::complex<double> z(2.0 * rng.normal(),
                                     trial == 0 ? 0.0 : rng.normal());
        const Eigen::MatrixXcd fz = dagp::pencil_value(model, z);
        REQUIRE(fz.rows() == 2 * n);
        REQUIRE(fz.cols() == 2 * n);

        Eigen::MatrixXcd manual = Eigen::MatrixXcd::Zero(2 * n, 2 * n);
        manual.topLeftCorner(n, n) = z * model.S;
        manual.topRightCorner(n, n) =
            Eigen::MatrixXcd::Identity(n, n) - z * model.R.transpose();
        manual.bottomLeftCorner(n, n) =
            z * Eigen::MatrixXcd::Identity(n, n) - model.R;
        manual.bottomRightCorner(n, n) =
            -(model.P * model.P.transpose()) / model.beta;
        CHECK((fz - manual).norm() <= 1e-12);
    }
}

TEST_CASE("full model separates the stationary family from the spectrum") {
    const SpectralModel model = reference_model();
    CHECK(model.state_size() == 16);

    const RootReport report = dagp::pencil_roots(model);
    CHECK(report.roots.size() == 24);
    CHECK(report.zero_roots == 4);
    CHECK(report.infinite_roots == 4);
    // A zero-column-sum tracker gossip matrix pins one mode per node at
    // z = 1; those are disclosed, not counted against certification.
    CHECK(report.singular_at_one);
    CHECK(report.stationary_count() == 8);

    const ParameterCheck check = dagp::check_parameter_conditions(model);
    CHECK(check.certified_pass());
    CHECK(check.all_pass());
    CHECK(check.roots_real_simple.certified);
    CHECK(!check.small_z_bounded.certified);  // finite sampling only
    const std::string summary = check.summary();
    CHECK(summary.find("roots real and simple") != std::string::npos);
    CHECK(summary.find("[pass]") != std::string::npos);
}

TEST_CASE("step size scan brackets the feasible region") {
    const GossipPair gossip = dagp::scan_gossip_pair(4, 7);
    const std::vector<double> grid = {1e-3, 1e-2, 1e-1, 1.0, 40.0};
    const dagp::MuScan scan = dagp::scan_mu_region(
        gossip.W, gossip.Q, 0.1, 1e-6, 0.5, 0.1, 1.0, grid, 4);
    REQUIRE(scan.grid.size() == 5);
    REQUIRE(scan.pass.size() == 5);
    REQUIRE(scan.reports.size() == 5);
    CHECK(scan.pass[0]);
    CHECK(scan.pass[1]);
    CHECK(scan.pass[2]);
    CHECK(!scan.pass[3]);
    CHECK(!scan.pass[4]);
    CHECK(scan.has_feasible);
    CHECK(scan.mu0 == doctest::Approx(0.1).epsilon(1e-15));

    const dagp::RhoAlphaScan region = dagp::scan_rho_alpha_region(
        gossip.W, gossip.Q, 0.1, 1e-2, 0.1, 1.0, {1e-6, 5.0}, {0.5, 0.9}, 4);
    REQUIRE(region.pass.size() == 2);
    REQUIRE(region.pass[0].size() == 2);
    CHECK(region.pass[0][0]);
    CHECK(region.pass[0][1]);
    CHECK(!region.pass[1][0]);
    CHECK(!region.pass[1][1]);
}

TEST_CASE("scan writers emit one row per grid point") {
    dagp::MuScan scan;
    scan.grid = {0.001, 0.25};
    scan.pass = {true, false};
    std::ostringstream mu_out;
    dagp::write_mu_scan_csv(mu_out, scan);
    CHECK(mu_out.str() == "mu,pass\n0.001,1\n0.25,0\n");

    dagp::RhoAlphaScan region;
    region.rho_grid = {0.5};
    region.alpha_grid = {0.125, 0.75};
    region.pass = {{false, true}};
    std::ostringstream ra_out;
    dagp::write_rho_alpha_csv(ra_out, region);
    CHECK(ra_out.str() == "rho,alpha,pass\n0.5,0.125,0\n0.5,0.75,1\n");
}

TEST_CASE("root report text names the root structure") {
    std::ostringstream out;
    dagp::write_root_report(out,
                            dagp::pencil_roots(dagp::build_gd_model(1.0, 0.5, 1.0)));
    const std::string text = out.str();
    CHECK(text.find("nonzero roots: 2") != std::string::npos);
    CHECK(text.find("zero: 1") != std::string::npos);
    CHECK(text.find("real simple") != std::string::npos);
    CHECK(text.find("null vectors independent: yes") != std::string::npos);
    CHECK(text.find("shifted vectors independent: yes") != std::string::npos);
}

TEST_CASE("trajectory aggregate on hand built sequences") {
    Eigen::MatrixXd s(2, 2);
    s << 2.0, 0.0, 0.0, -1.0;

    Eigen::MatrixXd psi0(2, 1), psi1(2, 1), psi2(2, 1);
    psi0 << 1.0, 0.0;
    psi1 << 0.0, 1.0;
    psi2 << 1.0, 1.0;

    const AggregateBound agg = dagp::trajectory_aggregate({psi0, psi1, psi2}, s);
    REQUIRE(agg.partial_sums.size() == 3);
    CHECK(agg.partial_sums[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(agg.partial_sums[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(agg.partial_sums[2] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(agg.min_partial == doctest::Approx(1.0).epsilon(1e-15));
    // lambda_min(S) = -1, so the slack constant is 1 plus the fixed margin.
    CHECK(agg.margin_constant == doctest::Approx(1.0 + 1e-9).epsilon(1e-15));
    CHECK(agg.bound == doctest::Approx(-(1.0 + 1e-9)).epsilon(1e-12));
    CHECK(agg.holds);

    // A sequence that sinks along the negative eigendirection violates the
    // bound: partials -1, -5 against a bound of about -1.
    Eigen::MatrixXd sink0(2, 1), sink1(2, 1);
    sink0 << 0.0, 1.0;
    sink1 << 0.0, 2.0;
    const AggregateBound bad = dagp::trajectory_aggregate({sink0, sink1}, s);
    CHECK(bad.min_partial == doctest::Approx(-5.0).epsilon(1e-15));
    CHECK(!bad.holds);

    // An all-zero trajectory trivially holds with a zero bound.
    const AggregateBound zero = dagp::trajectory_aggregate(
        {Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 3)}, s);
    CHECK(zero.bound == 0.0);
    CHECK(zero.min_partial == 0.0);
    CHECK(zero.holds);

    CHECK_THROWS_AS(dagp::trajectory_aggregate({psi0}, Eigen::MatrixXd::Zero(2, 3)),
                    dagp::DimensionMismatch);
    CHECK_THROWS_AS(dagp::trajectory_aggregate({Eigen::MatrixXd::Zero(3, 1)}, s),
                    dagp::DimensionMismatch);
    CHECK_THROWS_AS(dagp::trajectory_aggregate({}, s), dagp::InvalidParameter);
}

TEST_CASE("recorded run aggregate needs reference normals") {
    const dagp::DecentralizedProblem problem =
        dagp::build_logcosh_problem(3, 2, 95);
    const dagp::DirectedGraph graph = dagp::complete_graph(3);
    dagp::DagpParams params;
    params.mu = 0.1;
    params.rho = 0.03;
    params.alpha = 0.4;
    params.iterations = 3;
    dagp::StateHistory history;
    dagp::run_dagp(problem, graph, params, 96, &history);

    const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(12, 12);
    dagp::ReferenceSolution no_normals;
    no_normals.x = problem.feasible_point;
    no_normals.normals_available = false;
    CHECK_THROWS_AS(
        dagp::dagp_trajectory_aggregate(history, s, problem, no_normals),
        dagp::MissingReference);

    const dagp::ReferenceSolution reference =
        dagp::centralized_reference(problem, 1e-9);
    CHECK_THROWS_AS(dagp::dagp_trajectory_aggregate(
                        {history.front()}, s, problem, reference),
                    dagp::InvalidParameter);
    CHECK_THROWS_AS(dagp::dagp_trajectory_aggregate(
                        history, Eigen::MatrixXd::Identity(8, 8), problem,
                        reference),
                    dagp::DimensionMismatch);
}

TEST_CASE("certified configuration satisfies the aggregate bound") {
    const int m = 4;
    const double target_smoothness = 0.1;
    dagp::DagpParams params;
    params.mu = 1e-2;
    params.rho = 1e-6;
    params.alpha = 0.5;

    const GossipPair gossip = dagp::scan_gossip_pair(m, 1);
    const SpectralModel model =
        dagp::build_spectral_model(gossip.W, gossip.Q, target_smoothness,
                                   params.mu, params.rho, params.alpha, 0.1,
                                   1.0, m);
    REQUIRE(dagp::check_parameter_conditions(model).certified_pass());

    // Scale every node objective to the smoothness the model was built for.
    dagp::DecentralizedProblem problem = dagp::build_logcosh_problem(m, 2, 700);
    double max_smoothness = 0.0;
    for (const auto& node : problem.nodes) {
        max_smoothness = std::max(max_smoothness, node.objective.smoothness);
    }
    for (auto& node : problem.nodes) {
        node.objective = scaled(node.objective, target_smoothness / max_smoothness);
    }
    const dagp::ReferenceSolution reference =
        dagp::centralized_reference(problem, 1e-11);

    std::vector<dagp::NodeState> states(m);
    Rng rng(800);
    dagp::StateHistory history;
    for (int v = 0; v < m; ++v) {
        states[v].x = Eigen::VectorXd::NullaryExpr(
            2, [&](Eigen::Index) { return rng.normal(); });
        states[v].z = states[v].x;
        states[v].g = Eigen::VectorXd::Zero(2);
        states[v].h = Eigen::VectorXd::Zero(2);
    }
    history.push_back(states);
    for (int round = 0; round < 200; ++round) {
        dagp::dagp_round(states, problem, gossip, params);
        history.push_back(states);
    }

    const AggregateBound agg =
        dagp::dagp_trajectory_aggregate(history, model.S, problem, reference);
    CHECK(agg.holds);
    CHECK(agg.min_partial >= agg.bound);
    // Each deviation state pairs consecutive snapshots.
    REQUIRE(agg.partial_sums.size() == history.size() - 1);

    // The slack constant matches its definition from the summand weights.
    const Eigen::VectorXd eigenvalues =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
            0.5 * (model.S + model.S.transpose()))
            .eigenvalues();
    const double expected_margin =
        std::max(0.0, -eigenvalues.minCoeff()) + 1e-9;
    CHECK(agg.margin_constant ==
          doctest::Approx(expected_margin).epsilon(1e-12));
}

TEST_CASE("degenerate pencils are rejected") {
    SpectralModel broken = dagp::build_gd_model(1.0, 0.5, 1.0);
    broken.F0.row(0).setZero();
    broken.F1.row(0).setZero();
    CHECK_THROWS_AS(dagp::pencil_roots(broken), dagp::IllConditionedPencil);

    SpectralModel poisoned = dagp::build_gd_model(1.0, 0.5, 1.0);
    poisoned.F0(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(dagp::pencil_roots(poisoned), dagp::IllConditionedPencil);
}
