#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "dagp/errors.hpp"
#include "dagp/problems.hpp"
#include "dagp/rng.hpp"
#include "oracles.hpp"

using dagp::Dataset;
using dagp::DecentralizedProblem;
using dagp::Rng;

TEST_CASE("logcosh problems are well formed") {
    const DecentralizedProblem problem = dagp::build_logcosh_problem(6, 4, 3);
    CHECK(problem.node_count() == 6);
    CHECK(problem.dimension == 4);
    // The anchored offsets make the shared feasible point satisfy every
    // halfspace.
    for (const auto& node : problem.nodes) {
        CHECK(node.constraint.kind() ==
              dagp::ConstraintSet::Kind::Halfspace);
        CHECK(node.constraint.contains(problem.feasible_point));
    }

    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x(i) = 2.0 * rng.normal();
        for (const auto& node : problem.nodes) {
            const Eigen::VectorXd grad = node.objective.gradient(x);
            const Eigen::VectorXd fd =
                oracles::fd_gradient(node.objective.value, x);
            CHECK((grad - fd).norm() <= 1e-6 * (1.0 + grad.norm()));
        }
    }

    // log cosh curvature is capped by the squared coefficient norm.
    for (const auto& node : problem.nodes) {
        CHECK(node.objective.smoothness > 0.0);
        Eigen::VectorXd a(4);
        Eigen::VectorXd b(4);
        for (int i = 0; i < 4; ++i) {
            a(i) = rng.normal();
            b(i) = rng.normal();
        }
        const double lhs = (node.objective.gradient(a) -
                            node.objective.gradient(b)).norm();
        CHECK(lhs <= node.objective.smoothness * (a - b).norm() + 1e-12);
    }

    // Determinism across rebuilds with the same seed.
    const DecentralizedProblem again = dagp::build_logcosh_problem(6, 4, 3);
    Eigen::VectorXd probe = Eigen::VectorXd::Constant(4, 0.3);
    CHECK(problem.global_objective(probe) ==
          again.global_objective(probe));
}

TEST_CASE("feasibility gaps are squared distances") {
    const DecentralizedProblem problem = dagp::build_logcosh_problem(4, 3, 11);
    Rng rng(12);
    Eigen::VectorXd x(3);
    for (int i = 0; i < 3; ++i) x(i) = 3.0 * rng.normal();
    const Eigen::VectorXd gaps = problem.feasibility_gaps(x);
    REQUIRE(gaps.size() == 4);
    for (int v = 0; v < 4; ++v) {
        const Eigen::VectorXd p = problem.nodes[v].constraint.project(x);
        CHECK(gaps(v) == doctest::Approx((x - p).squaredNorm()).epsilon(1e-12));
    }
}

TEST_CASE("logistic split keeps every sample and the reference value") {
    const Dataset data = dagp::make_two_cluster_data(23, 3, 2.5, 9);
    const DecentralizedProblem problem =
        dagp::build_logistic_problem(data, 5, 0.01, 4);
    CHECK(problem.node_count() == 5);
    CHECK(problem.dimension == 3);
    for (const auto& node : problem.nodes) {
        CHECK(node.constraint.kind() ==
              dagp::ConstraintSet::Kind::WholeSpace);
    }

    // Every node's loss is its sample mean, so the zero vector scores
    // log 2 per node regardless of the uneven split.
    const double at_zero =
        problem.global_objective(Eigen::VectorXd::Zero(3));
    CHECK(at_zero == doctest::Approx(5.0 * std::log(2.0)).epsilon(1e-12));

    Rng rng(10);
    for (int trial = 0; trial < 6; ++trial) {
        Eigen::VectorXd w(3);
        for (int i = 0; i < 3; ++i) w(i) = rng.normal();
        for (const auto& node : problem.nodes) {
            const Eigen::VectorXd grad = node.objective.gradient(w);
            const Eigen::VectorXd fd =
                oracles::fd_gradient(node.objective.value, w);
            CHECK((grad - fd).norm() <= 1e-6 * (1.0 + grad.norm()));
        }
    }

    CHECK_THROWS_AS(dagp::build_logistic_problem(data, 30, 0.01, 4),
                    dagp::InvalidParameter);
    CHECK_THROWS_AS(dagp::build_logistic_problem(data, 5, -1.0, 4),
                    dagp::InvalidParameter);
    Dataset bad = data;
    bad.labels(0) = 3;
    CHECK_THROWS_AS(dagp::build_logistic_problem(bad, 5, 0.01, 4),
                    dagp::InvalidParameter);
}

TEST_CASE("two cluster data is separated and labeled") {
    const Dataset data = dagp::make_two_cluster_data(60, 2, 4.0, 21);
    CHECK(data.sample_count() == 60);
    CHECK(data.feature_count() == 2);
    Eigen::Vector2d pos = Eigen::Vector2d::Zero();
    Eigen::Vector2d neg = Eigen::Vector2d::Zero();
    int npos = 0;
    for (int i = 0; i < 60; ++i) {
        REQUIRE((data.labels(i) == 1 || data.labels(i) == -1));
        if (data.labels(i) == 1) {
            pos += data.features.row(i).transpose();
            ++npos;
        } else {
            neg += data.features.row(i).transpose();
        }
    }
    REQUIRE(npos > 0);
    REQUIRE(npos < 60);
    pos /= npos;
    neg /= (60 - npos);
    // Cluster means straddle the origin by roughly the separation.
    CHECK((pos - neg).norm() > 2.0);

    const Dataset same = dagp::make_two_cluster_data(60, 2, 4.0, 21);
    CHECK((same.features - data.features).norm() == 0.0);
}

TEST_CASE("transport problem splits the cost across marginal slices") {
    const Eigen::VectorXd source = dagp::gaussian_bins(1.0 / 3.0, 0.25, 3);
    const Eigen::VectorXd target = dagp::gaussian_bins(2.0 / 3.0, 0.125, 3);
    Eigen::MatrixXd cost(3, 3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            cost(i, j) = std::abs((i + 0.5) / 3.0 - (j + 0.5) / 3.0);
        }
    }
    const DecentralizedProblem problem =
        dagp::build_ot_problem(source, target, cost, 4);
    CHECK(problem.node_count() == 4);
    CHECK(problem.dimension == 9);

    // The half-half cost split makes the summed objective the plan cost,
    // whatever the plan.
    Rng rng(30);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd plan(9);
        for (int i = 0; i < 9; ++i) plan(i) = rng.uniform();
        double direct = 0.0;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) direct += cost(i, j) * plan(3 * i + j);
        }
        CHECK(problem.global_objective(plan) ==
              doctest::Approx(direct).epsilon(1e-12));
    }

    // The independence coupling witnesses feasibility.
    for (const auto& node : problem.nodes) {
        CHECK(node.constraint.contains(problem.feasible_point, 1e-9));
    }

    Eigen::VectorXd negative = source;
    negative(0) = -negative(0);
    CHECK_THROWS_AS(dagp::build_ot_problem(negative, target, cost, 4),
                    dagp::InvalidMarginal);
    Eigen::VectorXd heavy = source;
    heavy(0) += 0.5;
    CHECK_THROWS_AS(dagp::build_ot_problem(heavy, target, cost, 4),
                    dagp::InvalidMarginal);
    CHECK_THROWS_AS(dagp::build_ot_problem(source, target, cost.transpose()
                                               .eval()
                                               .topRows(2)
                                               .eval(),
                                           4),
                    dagp::DimensionMismatch);
}

TEST_CASE("gaussian bins form a normalized positive histogram") {
    const Eigen::VectorXd bins = dagp::gaussian_bins(0.5, 0.2, 7);
    CHECK(bins.size() == 7);
    CHECK(bins.sum() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(bins.minCoeff() > 0.0);
    // Symmetry about mean 0.5 with centered bins.
    for (int i = 0; i < 3; ++i) {
        CHECK(bins(i) == doctest::Approx(bins(6 - i)).epsilon(1e-12));
    }
    // Direct density ratio at the first two centers.
    const double c0 = 0.5 / 7.0;
    const double c1 = 1.5 / 7.0;
    const double expected =
        std::exp(-(c0 - 0.5) * (c0 - 0.5) / (2.0 * 0.04)) /
        std::exp(-(c1 - 0.5) * (c1 - 0.5) / (2.0 * 0.04));
    CHECK(bins(0) / bins(1) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(dagp::gaussian_bins(0.5, 0.0, 7), dagp::InvalidParameter);
    CHECK_THROWS_AS(dagp::gaussian_bins(0.5, 0.2, 0), dagp::InvalidParameter);
}

TEST_CASE("labeled csv parsing") {
    std::stringstream text;
    text << "+1,0.5,1.25\n";
    text << "-1,-0.75,2\n";
    text << "1,0,0\n";
    const Dataset data = dagp::load_labeled_csv(text);
    CHECK(data.sample_count() == 3);
    CHECK(data.feature_count() == 2);
    CHECK(data.labels(0) == 1);
    CHECK(data.labels(1) == -1);
    CHECK(data.features(1, 0) == doctest::Approx(-0.75));

    std::stringstream bad;
    bad << "2,0.5,1.0\n";
    CHECK_THROWS_AS(dagp::load_labeled_csv(bad), dagp::InvalidParameter);
    std::stringstream empty;
    CHECK_THROWS_AS(dagp::load_labeled_csv(empty), dagp::InvalidParameter);
}

TEST_CASE("matrix text round trip skips comment lines") {
    Eigen::MatrixXd m(2, 3);
    m << 1.0, -2.5, 3.0e-7, 4.0, 5.0, -6.0;
    std::stringstream buffer;
    buffer << "# leading note\n";
    dagp::save_matrix(buffer, m);
    const Eigen::MatrixXd back = dagp::load_matrix(buffer);
    REQUIRE(back.rows() == 2);
    REQUIRE(back.cols() == 3);
    CHECK((back - m).norm() == 0.0);
}
