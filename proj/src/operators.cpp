#include "dagp/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dagp/errors.hpp"

namespace dagp {

double ProxFunction::moreau(const Eigen::VectorXd& x, double tau) const {
    if (tau <= 0.0) {
        throw InvalidParameter("Moreau envelope needs tau > 0");
    }
    const Eigen::VectorXd p = prox(x, tau);
    return (x - p).squaredNorm() / (2.0 * tau) + value(p);
}

namespace {

void require_positive_step(double tau) {
    if (tau <= 0.0) {
        throw InvalidParameter("prox step must be positive, got " +
                               std::to_string(tau));
    }
}

double soft_threshold(double v, double tau) {
    if (v > tau) return v - tau;
    if (v < -tau) return v + tau;
    return 0.0;
}

}  // namespace

Eigen::VectorXd prox_abs(const Eigen::VectorXd& x, double tau) {
    require_positive_step(tau);
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out(i) = soft_threshold(x(i), tau);
    }
    return out;
}

Eigen::VectorXd prox_l2norm(const Eigen::VectorXd& x, double tau) {
    require_positive_step(tau);
    const double n = x.norm();
    if (n <= tau) return Eigen::VectorXd::Zero(x.size());
    return x * (1.0 - tau / n);
}

Eigen::VectorXd prox_linear(const Eigen::VectorXd& x, double tau,
                            const Eigen::VectorXd& slope) {
    require_positive_step(tau);
    if (x.size() != slope.size()) {
        throw DimensionMismatch("prox_linear slope dimension differs from x");
    }
    return x - tau * slope;
}

Eigen::VectorXd prox_quadratic(const Eigen::VectorXd& x, double tau) {
    require_positive_step(tau);
    return x / (1.0 + tau);
}

ProxFunction make_abs_function() {
    ProxFunction f;
    f.value = [](const Eigen::VectorXd& y) { return y.lpNorm<1>(); };
    f.prox = [](const Eigen::VectorXd& y, double tau) {
        return prox_abs(y, tau);
    };
    return f;
}

ProxFunction make_l2norm_function() {
    ProxFunction f;
    f.value = [](const Eigen::VectorXd& y) { return y.norm(); };
    f.prox = [](const Eigen::VectorXd& y, double tau) {
        return prox_l2norm(y, tau);
    };
    return f;
}

ProxFunction make_linear_function(Eigen::VectorXd slope) {
    ProxFunction f;
    f.value = [slope](const Eigen::VectorXd& y) { return slope.dot(y); };
    f.prox = [slope](const Eigen::VectorXd& y, double tau) {
        return prox_linear(y, tau, slope);
    };
    return f;
}

ProxFunction make_quadratic_function() {
    ProxFunction f;
    f.value = [](const Eigen::VectorXd& y) { return 0.5 * y.squaredNorm(); };
    f.prox = [](const Eigen::VectorXd& y, double tau) {
        return prox_quadratic(y, tau);
    };
    return f;
}

ConstraintSet ConstraintSet::whole_space(int dim) {
    if (dim < 1) throw InvalidParameter("set dimension must be positive");
    return ConstraintSet(Kind::WholeSpace, dim);
}

ConstraintSet ConstraintSet::halfspace(Eigen::VectorXd c, double d) {
    if (c.size() < 1) throw InvalidParameter("halfspace normal is empty");
    if (c.squaredNorm() == 0.0 && d < 0.0) {
        throw EmptySet("halfspace with zero normal and negative offset");
    }
    ConstraintSet s(Kind::Halfspace, static_cast<int>(c.size()));
    s.c_ = std::move(c);
    s.d_ = d;
    return s;
}

ConstraintSet ConstraintSet::scaled_simplex(int dim, double radius) {
    if (dim < 1) throw InvalidParameter("set dimension must be positive");
    if (radius <= 0.0) {
        throw InvalidParameter("simplex radius must be positive");
    }
    ConstraintSet s(Kind::ScaledSimplex, dim);
    s.radius_ = radius;
    return s;
}

ConstraintSet ConstraintSet::nonnegative_orthant(int dim) {
    if (dim < 1) throw InvalidParameter("set dimension must be positive");
    return ConstraintSet(Kind::NonnegativeOrthant, dim);
}

ConstraintSet ConstraintSet::slice_simplexes(int dim,
                                             std::vector<SimplexSlice> slices) {
    if (dim < 1) throw InvalidParameter("set dimension must be positive");
    if (slices.empty()) {
        throw InvalidParameter("slice set needs at least one slice");
    }
    for (const auto& slice : slices) {
        if (slice.indices.empty()) {
            throw InvalidParameter("slice has no coordinates");
        }
        if (slice.total <= 0.0) {
            throw InvalidParameter("slice total must be positive");
        }
        for (int i : slice.indices) {
            if (i < 0 || i >= dim) {
                throw InvalidParameter("slice index " + std::to_string(i) +
                                       " out of range");
            }
        }
    }
    ConstraintSet s(Kind::SliceSimplexes, dim);
    s.slices_ = std::move(slices);
    return s;
}

ConstraintSet ConstraintSet::epigraph(ProxFunction f, int dim) {
    if (dim < 2) {
        throw InvalidParameter("epigraph set needs the function argument and "
                               "the level coordinate");
    }
    ConstraintSet s(Kind::Epigraph, dim);
    s.base_ = std::move(f);
    return s;
}

void ConstraintSet::check_dimension(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) {
        throw DimensionMismatch("point has dimension " +
                                std::to_string(x.size()) + ", set expects " +
                                std::to_string(dim_));
    }
}

namespace {

// Replaces the slice coordinates with their simplex projection.
void project_slice(Eigen::VectorXd& x, const SimplexSlice& slice) {
    Eigen::VectorXd part(slice.indices.size());
    for (std::size_t k = 0; k < slice.indices.size(); ++k) {
        part(static_cast<Eigen::Index>(k)) = x(slice.indices[k]);
    }
    part = project_simplex(part, slice.total);
    for (std::size_t k = 0; k < slice.indices.size(); ++k) {
        x(slice.indices[k]) = part(static_cast<Eigen::Index>(k));
    }
}

// Dykstra's alternating projections onto the slice sets. The correction
// terms make the limit the projection onto the intersection, not merely a
// feasible point. The iterate can stall on a simplex vertex for several
// cycles while the corrections still drift, so settling requires both a
// tiny cycle increment and membership in every slice.
Eigen::VectorXd dykstra_slices(const Eigen::VectorXd& x,
                               const std::vector<SimplexSlice>& slices) {
    constexpr int kMaxCycles = 100000;
    constexpr double kCycleTol = 5e-15;
    constexpr double kResidualTol = 1e-10;
    Eigen::VectorXd y = x;
    std::vector<Eigen::VectorXd> corrections(
        slices.size(), Eigen::VectorXd::Zero(x.size()));
    for (int cycle = 0; cycle < kMaxCycles; ++cycle) {
        const Eigen::VectorXd before = y;
        for (std::size_t j = 0; j < slices.size(); ++j) {
            const Eigen::VectorXd shifted = y + corrections[j];
            Eigen::VectorXd projected = shifted;
            project_slice(projected, slices[j]);
            corrections[j] = shifted - projected;
            y = projected;
        }
        if ((y - before).lpNorm<Eigen::Infinity>() > kCycleTol) continue;
        double residual = 0.0;
        for (const auto& slice : slices) {
            double sum = 0.0;
            for (int i : slice.indices) {
                sum += y(i);
                residual = std::max(residual, -y(i));
            }
            residual = std::max(residual, std::abs(sum - slice.total));
        }
        if (residual <= kResidualTol) return y;
    }
    throw ProjectionFailure("alternating slice projections did not settle");
}

}  // namespace

Eigen::VectorXd ConstraintSet::project(const Eigen::VectorXd& x) const {
    check_dimension(x);
    switch (kind_) {
        case Kind::WholeSpace:
            return x;
        case Kind::Halfspace: {
            const double cc = c_.squaredNorm();
            if (cc == 0.0) return x;
            const double excess = c_.dot(x) - d_;
            if (excess <= 0.0) return x;
            return x - (excess / cc) * c_;
        }
        case Kind::ScaledSimplex:
            return project_simplex(x, radius_);
        case Kind::NonnegativeOrthant:
            return x.cwiseMax(0.0);
        case Kind::SliceSimplexes: {
            if (slices_.size() == 1) {
                Eigen::VectorXd y = x;
                project_slice(y, slices_[0]);
                return y;
            }
            return dykstra_slices(x, slices_);
        }
        case Kind::Epigraph: {
            const Eigen::VectorXd head = x.head(dim_ - 1);
            auto [y, t] = epigraph_project(base_, head, x(dim_ - 1));
            Eigen::VectorXd out(dim_);
            out.head(dim_ - 1) = y;
            out(dim_ - 1) = t;
            return out;
        }
    }
    throw InvalidParameter("unknown constraint variant");
}

double ConstraintSet::membership_residual(const Eigen::VectorXd& x) const {
    check_dimension(x);
    switch (kind_) {
        case Kind::WholeSpace:
            return 0.0;
        case Kind::Halfspace: {
            const double n = c_.norm();
            if (n == 0.0) return 0.0;
            return std::max(0.0, (c_.dot(x) - d_) / n);
        }
        case Kind::ScaledSimplex: {
            const double neg = std::max(0.0, -x.minCoeff());
            return std::max(std::abs(x.sum() - radius_), neg);
        }
        case Kind::NonnegativeOrthant:
            return std::max(0.0, -x.minCoeff());
        case Kind::SliceSimplexes: {
            double worst = 0.0;
            for (const auto& slice : slices_) {
                double sum = 0.0;
                double neg = 0.0;
                for (int i : slice.indices) {
                    sum += x(i);
                    neg = std::max(neg, -x(i));
                }
                worst = std::max(worst, std::abs(sum - slice.total));
                worst = std::max(worst, neg);
            }
            return worst;
        }
        case Kind::Epigraph:
            return std::max(0.0, base_.value(x.head(dim_ - 1)) - x(dim_ - 1));
    }
    throw InvalidParameter("unknown constraint variant");
}

bool ConstraintSet::contains(const Eigen::VectorXd& x, double tol) const {
    return membership_residual(x) <= tol;
}

Eigen::VectorXd project(const ConstraintSet& set, const Eigen::VectorXd& x) {
    return set.project(x);
}

Eigen::VectorXd project_simplex(const Eigen::VectorXd& y, double radius) {
    if (radius <= 0.0) {
        throw InvalidParameter("simplex radius must be positive, got " +
                               std::to_string(radius));
    }
    if (y.size() < 1) throw InvalidParameter("cannot project an empty vector");

    std::vector<double> sorted(y.data(), y.data() + y.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    // Largest k with sorted[k-1] > (running sum - radius)/k fixes the
    // threshold; entries below it clip to zero.
    double running = 0.0;
    double theta = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        running += sorted[k];
        const double candidate = (running - radius) / static_cast<double>(k + 1);
        if (sorted[k] - candidate > 0.0) {
            theta = candidate;
        } else {
            break;
        }
    }
    return (y.array() - theta).cwiseMax(0.0);
}

std::pair<Eigen::VectorXd, double> epigraph_project(const ProxFunction& f,
                                                    const Eigen::VectorXd& x,
                                                    double t,
                                                    double backtrack_step,
                                                    double tol, int max_iter) {
    if (backtrack_step <= 0.0 || backtrack_step >= 1.0) {
        throw InvalidParameter("backtrack step must lie in (0, 1)");
    }
    if (tol <= 0.0) throw InvalidParameter("tolerance must be positive");

    const double fx = f.value(x);
    if (t >= fx) return {x, t};

    // A unit-step prox gives a slope surrogate ‖x − prox_1(x)‖ that scales
    // the initial tau past the steep region near zero; the fixed point is
    // unique, so the start only affects the iteration count.
    double tau;
    {
        const double slope = (x - f.prox(x, 1.0)).norm();
        tau = (fx - t) / (1.0 + slope);
        if (!std::isfinite(tau) || tau < 0.0) tau = 1.0;
    }

    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd xd = tau > 0.0 ? f.prox(x, tau) : x;
        const double td = t + tau;
        const double residual = f.value(xd) - td;
        if (std::abs(residual) <= tol) return {xd, td};
        tau = std::max(0.0, tau + backtrack_step * residual);
    }
    throw NonConvergence("epigraph backtracking residual stayed above " +
                         std::to_string(tol));
}

Eigen::VectorXd nonnegative_least_squares(const Eigen::MatrixXd& a,
                                          const Eigen::VectorXd& b,
                                          int max_iter, double tol) {
    if (a.rows() != b.size()) {
        throw DimensionMismatch("matrix rows differ from target length");
    }
    const Eigen::Index n = a.cols();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(n, false);
    Eigen::VectorXd residual = b;
    const double grad_tol = tol * (1.0 + b.norm());

    for (int it = 0; it < max_iter; ++it) {
        // Most violated optimality multiplier among the clamped variables.
        const Eigen::VectorXd grad = a.transpose() * residual;
        Eigen::Index best = -1;
        double best_val = grad_tol;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!passive[i] && grad(i) > best_val) {
                best_val = grad(i);
                best = i;
            }
        }
        if (best < 0) return w;
        passive[best] = true;

        // Inner loop restores feasibility of the unconstrained solve on the
        // passive set by stepping to the first bound and demoting.
        for (int inner = 0; inner <= max_iter; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (passive[i]) idx.push_back(i);
            }
            Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) {
                sub.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
            }
            const Eigen::VectorXd z =
                sub.colPivHouseholderQr().solve(b);

            bool all_positive = true;
            for (Eigen::Index k = 0; k < z.size(); ++k) {
                if (z(k) <= tol) {
                    all_positive = false;
                    break;
                }
            }
            if (all_positive) {
                w.setZero();
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    w(idx[k]) = z(static_cast<Eigen::Index>(k));
                }
                break;
            }

            double alpha = 1.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double zk = z(static_cast<Eigen::Index>(k));
                if (zk <= tol) {
                    const double wk = w(idx[k]);
                    if (wk - zk > 0.0) {
                        alpha = std::min(alpha, wk / (wk - zk));
                    }
                }
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const Eigen::Index i = idx[k];
                w(i) += alpha * (z(static_cast<Eigen::Index>(k)) - w(i));
                if (w(i) <= tol) {
                    w(i) = 0.0;
                    passive[i] = false;
                }
            }
        }
        residual = b - a * w;
    }
    return w;
}

namespace {

// Coordinates at the boundary within this tolerance count as active.
constexpr double kActiveTol = 1e-8;

double cone_residual_from_generators(const Eigen::MatrixXd& generators,
                                     const Eigen::VectorXd& v) {
    if (generators.cols() == 0) return v.norm();
    const Eigen::VectorXd w = nonnegative_least_squares(generators, v);
    return (v - generators * w).norm();
}

}  // namespace

double normal_cone_residual(const ConstraintSet& set, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& v) {
    if (x.size() != v.size()) {
        throw DimensionMismatch("point and direction dimensions differ");
    }
    if (!set.contains(x, kActiveTol)) {
        throw NotAMember("point is not a member of the set");
    }

    switch (set.kind()) {
        case ConstraintSet::Kind::WholeSpace:
            return v.norm();
        case ConstraintSet::Kind::Halfspace: {
            const Eigen::VectorXd& c = set.halfspace_normal();
            const double cc = c.squaredNorm();
            if (cc == 0.0) return v.norm();
            const bool active = c.dot(x) - set.halfspace_offset() >=
                                -kActiveTol * (1.0 + std::abs(set.halfspace_offset()));
            if (!active) return v.norm();
            const double lambda = std::max(0.0, c.dot(v) / cc);
            return (v - lambda * c).norm();
        }
        case ConstraintSet::Kind::NonnegativeOrthant: {
            // Cone is spanned by −e_i over the active coordinates.
            Eigen::VectorXd p = Eigen::VectorXd::Zero(v.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                if (x(i) <= kActiveTol) p(i) = std::min(v(i), 0.0);
            }
            return (v - p).norm();
        }
        case ConstraintSet::Kind::ScaledSimplex: {
            // Cone is span{1} plus nonnegative combinations of −e_i over
            // active coordinates; the free sign of the span needs both
            // signed generators.
            std::vector<Eigen::VectorXd> gens;
            gens.push_back(Eigen::VectorXd::Ones(x.size()));
            gens.push_back(-Eigen::VectorXd::Ones(x.size()));
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                if (x(i) <= kActiveTol) {
                    gens.push_back(-Eigen::VectorXd::Unit(x.size(), i));
                }
            }
            Eigen::MatrixXd a(x.size(), static_cast<Eigen::Index>(gens.size()));
            for (std::size_t k = 0; k < gens.size(); ++k) {
                a.col(static_cast<Eigen::Index>(k)) = gens[k];
            }
            return cone_residual_from_generators(a, v);
        }
        case ConstraintSet::Kind::SliceSimplexes: {
            std::vector<Eigen::VectorXd> gens;
            for (const auto& slice : set.slices()) {
                Eigen::VectorXd ind = Eigen::VectorXd::Zero(x.size());
                for (int i : slice.indices) ind(i) = 1.0;
                gens.push_back(ind);
                gens.push_back(-ind);
                for (int i : slice.indices) {
                    if (x(i) <= kActiveTol) {
                        gens.push_back(-Eigen::VectorXd::Unit(x.size(), i));
                    }
                }
            }
            Eigen::MatrixXd a(x.size(), static_cast<Eigen::Index>(gens.size()));
            for (std::size_t k = 0; k < gens.size(); ++k) {
                a.col(static_cast<Eigen::Index>(k)) = gens[k];
            }
            return cone_residual_from_generators(a, v);
        }
        case ConstraintSet::Kind::Epigraph:
            throw UnsupportedConstraint(
                "normal cone residual is not available for epigraph sets");
    }
    throw InvalidParameter("unknown constraint variant");
}

}  // namespace dagp
