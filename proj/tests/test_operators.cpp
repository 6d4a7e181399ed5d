#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "dagp/errors.hpp"
#include "dagp/operators.hpp"
#include "dagp/rng.hpp"
#include "oracles.hpp"

using dagp::ConstraintSet;
using dagp::ProxFunction;
using dagp::Rng;
using dagp::SimplexSlice;

namespace {

Eigen::VectorXd random_vector(Rng& rng, int dim, double scale = 2.0) {
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x(i) = scale * rng.normal();
    return x;
}

}  // namespace

TEST_CASE("prox catalog matches closed forms") {
    Eigen::Vector3d x(2.0, -0.3, 0.1);

    const Eigen::VectorXd soft = dagp::prox_abs(x, 0.5);
    CHECK(soft(0) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(soft(1) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(soft(2) == doctest::Approx(0.0).epsilon(1e-15));

    Eigen::Vector2d v(3.0, 4.0);
    const Eigen::VectorXd shrunk = dagp::prox_l2norm(v, 2.0);
    CHECK(shrunk(0) == doctest::Approx(1.8).epsilon(1e-14));
    CHECK(shrunk(1) == doctest::Approx(2.4).epsilon(1e-14));

    // Shrinkage never crosses the origin.
    const Eigen::VectorXd wiped = dagp::prox_l2norm(v, 6.0);
    CHECK(wiped.norm() == doctest::Approx(0.0).epsilon(1e-15));

    Eigen::Vector2d slope(1.0, -2.0);
    const Eigen::VectorXd tilted = dagp::prox_linear(v, 0.25, slope);
    CHECK(tilted(0) == doctest::Approx(2.75).epsilon(1e-14));
    CHECK(tilted(1) == doctest::Approx(4.5).epsilon(1e-14));

    const Eigen::VectorXd damped = dagp::prox_quadratic(v, 1.0);
    CHECK(damped(0) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(damped(1) == doctest::Approx(2.0).epsilon(1e-14));

    CHECK_THROWS_AS(dagp::prox_abs(x, 0.0), dagp::InvalidParameter);
    CHECK_THROWS_AS(dagp::prox_abs(x, -1.0), dagp::InvalidParameter);
    CHECK_THROWS_AS(dagp::prox_linear(v, 0.5, x), dagp::DimensionMismatch);
}

TEST_CASE("prox outputs are global minimizers of their objective") {
    Rng rng(71);
    const std::vector<ProxFunction> functions = {
        dagp::make_abs_function(), dagp::make_l2norm_function(),
        dagp::make_quadratic_function(),
        dagp::make_linear_function(Eigen::Vector3d(0.5, -1.0, 2.0))};
    for (const auto& f : functions) {
        for (int trial = 0; trial < 25; ++trial) {
            const Eigen::VectorXd x = random_vector(rng, 3);
            const double tau = 0.1 + 2.0 * rng.uniform();
            const Eigen::VectorXd p = f.prox(x, tau);
            const double at_p = f.value(p) + (p - x).squaredNorm() / (2 * tau);
            for (int probe = 0; probe < 20; ++probe) {
                const Eigen::VectorXd y = p + random_vector(rng, 3, 0.5);
                const double at_y =
                    f.value(y) + (y - x).squaredNorm() / (2 * tau);
                CHECK(at_y >= at_p - 1e-10);
            }
        }
    }
}

TEST_CASE("scalar prox agrees with a grid search") {
    Rng rng(72);
    const ProxFunction abs_f = dagp::make_abs_function();
    const ProxFunction quad_f = dagp::make_quadratic_function();
    for (int trial = 0; trial < 40; ++trial) {
        Eigen::VectorXd x(1);
        x(0) = 6.0 * rng.normal();
        const double tau = 0.05 + 3.0 * rng.uniform();

        const auto abs_obj = [&](double y) {
            return std::abs(y) + (y - x(0)) * (y - x(0)) / (2.0 * tau);
        };
        const double abs_ref =
            oracles::grid_minimize(abs_obj, x(0), std::abs(x(0)) + tau + 1.0);
        CHECK(abs_f.prox(x, tau)(0) == doctest::Approx(abs_ref).epsilon(1e-7));

        const auto quad_obj = [&](double y) {
            return 0.5 * y * y + (y - x(0)) * (y - x(0)) / (2.0 * tau);
        };
        const double quad_ref =
            oracles::grid_minimize(quad_obj, x(0), std::abs(x(0)) + 1.0);
        CHECK(quad_f.prox(x, tau)(0) ==
              doctest::Approx(quad_ref).epsilon(1e-7));
    }
}

TEST_CASE("Moreau envelope values and bounds") {
    const ProxFunction abs_f = dagp::make_abs_function();
    Eigen::VectorXd x(1);
    x(0) = 2.0;
    // prox at tau = 0.5 is 1.5, so the envelope is 1.5 + 0.25^2 / 1.
    CHECK(abs_f.moreau(x, 0.5) == doctest::Approx(1.75).epsilon(1e-14));

    Rng rng(73);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::VectorXd y = random_vector(rng, 2);
        const double tau = 0.1 + rng.uniform();
        // The envelope never exceeds the function and grows as tau shrinks.
        CHECK(abs_f.moreau(y, tau) <= abs_f.value(y) + 1e-12);
        CHECK(abs_f.moreau(y, tau) >= abs_f.moreau(y, 2.0 * tau) - 1e-12);
    }
    CHECK_THROWS_AS(abs_f.moreau(x, 0.0), dagp::InvalidParameter);
}

TEST_CASE("simplex projection matches support enumeration") {
    Rng rng(74);
    for (int trial = 0; trial < 200; ++trial) {
        const int dim = 1 + static_cast<int>(rng.below(6));
        const double radius = 0.25 + 3.0 * rng.uniform();
        const Eigen::VectorXd x = random_vector(rng, dim);
        const Eigen::VectorXd got = dagp::project_simplex(x, radius);
        const Eigen::VectorXd want = oracles::project_simplex(x, radius);
        CHECK((got - want).norm() <= 1e-10);
        CHECK(got.minCoeff() >= -1e-12);
        CHECK(got.sum() == doctest::Approx(radius).epsilon(1e-12));
    }
    Eigen::Vector2d x(0.2, 0.9);
    const Eigen::VectorXd p = dagp::project_simplex(x, 1.0);
    CHECK(p(0) == doctest::Approx(0.15).epsilon(1e-14));
    CHECK(p(1) == doctest::Approx(0.85).epsilon(1e-14));
    CHECK_THROWS_AS(dagp::project_simplex(x, 0.0), dagp::InvalidParameter);
}

TEST_CASE("halfspace projection and degenerate normals") {
    Eigen::Vector2d x(1.0, 1.0);
    const ConstraintSet set =
        ConstraintSet::halfspace(Eigen::Vector2d(1.0, 1.0), 1.0);
    const Eigen::VectorXd p = set.project(x);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(set.contains(p));
    CHECK_FALSE(set.contains(x));

    Rng rng(75);
    for (int trial = 0; trial < 200; ++trial) {
        const int dim = 1 + static_cast<int>(rng.below(6));
        const Eigen::VectorXd c = random_vector(rng, dim);
        const double d = rng.normal();
        const ConstraintSet h = ConstraintSet::halfspace(c, d);
        const Eigen::VectorXd y = random_vector(rng, dim);
        CHECK((h.project(y) - oracles::project_halfspace(y, c, d)).norm() <=
              1e-12);
    }

    // A zero normal keeps the whole space when the offset admits it and is
    // empty otherwise.
    const ConstraintSet loose =
        ConstraintSet::halfspace(Eigen::Vector2d::Zero(), 0.5);
    CHECK((loose.project(x) - x).norm() == 0.0);
    CHECK_THROWS_AS(ConstraintSet::halfspace(Eigen::Vector2d::Zero(), -0.5),
                    dagp::EmptySet);
}

TEST_CASE("orthant and whole space projections") {
    const ConstraintSet orthant = ConstraintSet::nonnegative_orthant(3);
    Eigen::Vector3d x(1.0, -2.0, 0.5);
    const Eigen::VectorXd p = orthant.project(x);
    CHECK(p(0) == 1.0);
    CHECK(p(1) == 0.0);
    CHECK(p(2) == 0.5);
    CHECK(orthant.membership_residual(x) == doctest::Approx(2.0));

    const ConstraintSet all = ConstraintSet::whole_space(3);
    CHECK((all.project(x) - x).norm() == 0.0);
    CHECK(all.membership_residual(x) == 0.0);

    CHECK_THROWS_AS(orthant.project(Eigen::Vector2d(1.0, 1.0)),
                    dagp::DimensionMismatch);
}

TEST_CASE("slice simplex projection matches the pinned KKT enumeration") {
    Rng rng(76);
    for (int trial = 0; trial < 60; ++trial) {
        const int dim = 4 + static_cast<int>(rng.below(3));
        std::vector<SimplexSlice> slices;
        slices.push_back({{0, 1, 2}, 0.5 + rng.uniform()});
        if (rng.bernoulli(0.5)) {
            // Overlapping pair of slices sharing coordinate 2.
            slices.push_back({{2, 3}, 0.5 + rng.uniform()});
        } else {
            slices.push_back({{3}, 0.5 + rng.uniform()});
        }
        const Eigen::VectorXd x = random_vector(rng, dim);
        const ConstraintSet set = ConstraintSet::slice_simplexes(dim, slices);
        const Eigen::VectorXd got = set.project(x);
        const Eigen::VectorXd want = oracles::project_slices(x, slices);
        REQUIRE(want.size() == dim);
        CHECK((got - want).norm() <= 1e-7);
        CHECK(set.membership_residual(got) <= 1e-8);
        // Coordinates outside every slice pass through untouched.
        for (int i = 4; i < dim; ++i) CHECK(got(i) == x(i));
    }

    CHECK_THROWS_AS(ConstraintSet::slice_simplexes(3, {}),
                    dagp::InvalidParameter);
    CHECK_THROWS_AS(ConstraintSet::slice_simplexes(3, {{{0, 7}, 1.0}}),
                    dagp::InvalidParameter);
    CHECK_THROWS_AS(ConstraintSet::slice_simplexes(3, {{{0}, -1.0}}),
                    dagp::InvalidParameter);
}

TEST_CASE("projections are non-expansive and idempotent") {
    Rng rng(77);
    std::vector<ConstraintSet> sets;
    sets.push_back(ConstraintSet::halfspace(Eigen::Vector3d(1, -2, 0.5), 0.3));
    sets.push_back(ConstraintSet::scaled_simplex(3, 1.5));
    sets.push_back(ConstraintSet::nonnegative_orthant(3));
    sets.push_back(
        ConstraintSet::slice_simplexes(3, {{{0, 1}, 1.0}, {{1, 2}, 0.8}}));
    for (const auto& set : sets) {
        for (int trial = 0; trial < 50; ++trial) {
            const Eigen::VectorXd x = random_vector(rng, 3);
            const Eigen::VectorXd y = random_vector(rng, 3);
            const Eigen::VectorXd px = set.project(x);
            const Eigen::VectorXd py = set.project(y);
            CHECK((px - py).norm() <= (x - y).norm() + 1e-9);
            CHECK((set.project(px) - px).norm() <= 1e-7);
            CHECK(set.contains(px, 1e-7));
        }
    }
}

TEST_CASE("epigraph projection matches the grid oracle") {
    Rng rng(78);
    const ProxFunction abs_f = dagp::make_abs_function();
    const ProxFunction quad_f = dagp::make_quadratic_function();
    const ProxFunction l2_f = dagp::make_l2norm_function();
    const std::vector<const ProxFunction*> functions = {&abs_f, &quad_f,
                                                        &l2_f};
    for (int trial = 0; trial < 45; ++trial) {
        const ProxFunction& f = *functions[trial % functions.size()];
        const int base_dim = 1 + static_cast<int>(rng.below(2));
        const Eigen::VectorXd y0 = random_vector(rng, base_dim);
        const double t0 = 2.0 * rng.normal();

        const auto got = dagp::epigraph_project(f, y0, t0);
        const auto want = oracles::epigraph_project(f.value, y0, t0);
        CHECK((got.first - want.first).norm() <= 1e-6);
        CHECK(got.second == doctest::Approx(want.second).epsilon(1e-6));
        // Membership and no overshoot past the input height.
        CHECK(f.value(got.first) <= got.second + 1e-9);
        CHECK(got.second >= t0 - 1e-12);
    }
}

TEST_CASE("epigraph projection pinned examples") {
    const ProxFunction abs_f = dagp::make_abs_function();
    Eigen::VectorXd y(1);
    y(0) = 3.0;
    const auto p = dagp::epigraph_project(abs_f, y, 0.0);
    CHECK(p.first(0) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(p.second == doctest::Approx(1.5).epsilon(1e-9));

    const ProxFunction lin_f =
        dagp::make_linear_function(Eigen::VectorXd::Ones(1));
    y(0) = 2.0;
    const auto q = dagp::epigraph_project(lin_f, y, 0.0);
    CHECK(q.first(0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(q.second == doctest::Approx(1.0).epsilon(1e-9));

    // Points already inside return unchanged.
    y(0) = 0.25;
    const auto r = dagp::epigraph_project(abs_f, y, 1.0);
    CHECK(r.first(0) == 0.25);
    CHECK(r.second == 1.0);

    CHECK_THROWS_AS(dagp::epigraph_project(abs_f, y, -1.0, 1.5),
                    dagp::InvalidParameter);
}

TEST_CASE("epigraph constraint set variant") {
    const ConstraintSet epi =
        ConstraintSet::epigraph(dagp::make_abs_function(), 2);
    Eigen::Vector2d inside(0.5, 2.0);
    Eigen::Vector2d outside(3.0, 0.0);
    CHECK(epi.contains(inside));
    CHECK_FALSE(epi.contains(outside));
    const Eigen::VectorXd p = epi.project(outside);
    CHECK(p(0) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(p(1) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(epi.membership_residual(outside) == doctest::Approx(3.0));
}

TEST_CASE("nonnegative least squares matches support enumeration") {
    Rng rng(79);
    for (int trial = 0; trial < 80; ++trial) {
        const int rows = 3 + static_cast<int>(rng.below(3));
        const int cols = 1 + static_cast<int>(rng.below(4));
        Eigen::MatrixXd a(rows, cols);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) a(i, j) = rng.normal();
        }
        const Eigen::VectorXd b = random_vector(rng, rows);
        const Eigen::VectorXd w = dagp::nonnegative_least_squares(a, b);
        REQUIRE(w.size() == cols);
        CHECK(w.minCoeff() >= -1e-12);
        const double residual = (a * w - b).norm();
        CHECK(residual <= oracles::nnls_residual(a, b) + 1e-8);
        // Stationarity: the gradient is nonnegative everywhere and zero on
        // the support.
        const Eigen::VectorXd grad = a.transpose() * (a * w - b);
        for (int j = 0; j < cols; ++j) {
            if (w(j) > 1e-10) {
                CHECK(std::abs(grad(j)) <= 1e-6);
            } else {
                CHECK(grad(j) >= -1e-6);
            }
        }
    }
    CHECK_THROWS_AS(dagp::nonnegative_least_squares(Eigen::MatrixXd::Ones(2, 2),
                                                    Eigen::VectorXd::Ones(3)),
                    dagp::DimensionMismatch);
}

TEST_CASE("normal cone residuals") {
    const ConstraintSet half =
        ConstraintSet::halfspace(Eigen::Vector2d(1.0, 0.0), 1.0);
    Eigen::Vector2d boundary(1.0, 0.3);
    // Outward normal direction is accepted on the boundary.
    CHECK(dagp::normal_cone_residual(half, boundary,
                                     Eigen::Vector2d(2.0, 0.0)) <= 1e-10);
    CHECK(dagp::normal_cone_residual(half, boundary,
                                     Eigen::Vector2d(0.0, 1.0)) ==
          doctest::Approx(1.0).epsilon(1e-10));
    // Interior points admit only the zero direction.
    Eigen::Vector2d interior(0.0, 0.0);
    CHECK(dagp::normal_cone_residual(half, interior,
                                     Eigen::Vector2d(1.0, 0.0)) ==
          doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(dagp::normal_cone_residual(half, Eigen::Vector2d(2.0, 0.0),
                                               interior),
                    dagp::NotAMember);

    const ConstraintSet orthant = ConstraintSet::nonnegative_orthant(2);
    Eigen::Vector2d corner(0.0, 1.0);
    CHECK(dagp::normal_cone_residual(orthant, corner,
                                     Eigen::Vector2d(-3.0, 0.0)) <= 1e-12);
    CHECK(dagp::normal_cone_residual(orthant, corner,
                                     Eigen::Vector2d(0.0, -1.0)) ==
          doctest::Approx(1.0).epsilon(1e-10));

    const ConstraintSet simplex = ConstraintSet::scaled_simplex(2, 1.0);
    Eigen::Vector2d mid(0.5, 0.5);
    // The span direction of the equality is always a valid normal.
    CHECK(dagp::normal_cone_residual(simplex, mid,
                                     Eigen::Vector2d(0.7, 0.7)) <= 1e-8);
    CHECK(dagp::normal_cone_residual(simplex, mid,
                                     Eigen::Vector2d(-0.7, -0.7)) <= 1e-8);
    CHECK(dagp::normal_cone_residual(simplex, mid, Eigen::Vector2d(1.0, 0.0)) >
          0.1);

    const ConstraintSet epi =
        ConstraintSet::epigraph(dagp::make_abs_function(), 2);
    CHECK_THROWS_AS(dagp::normal_cone_residual(epi, Eigen::Vector2d(0.0, 1.0),
                                               Eigen::Vector2d(0.0, -1.0)),
                    dagp::UnsupportedConstraint);
}

TEST_CASE("projection consistency with the normal cone") {
    // For any projection p of x, the displacement x - p is a valid normal
    // direction at p.
    Rng rng(80);
    std::vector<ConstraintSet> sets;
    sets.push_back(ConstraintSet::halfspace(Eigen::Vector3d(0.5, 1, -1), 0.2));
    sets.push_back(ConstraintSet::scaled_simplex(3, 2.0));
    sets.push_back(ConstraintSet::nonnegative_orthant(3));
    for (const auto& set : sets) {
        for (int trial = 0; trial < 30; ++trial) {
            const Eigen::VectorXd x = random_vector(rng, 3);
            const Eigen::VectorXd p = set.project(x);
            CHECK(dagp::normal_cone_residual(set, p, x - p) <= 1e-6);
        }
    }
}
