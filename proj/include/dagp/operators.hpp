#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace dagp {

/// Convex differentiable objective held by one node: value and gradient
/// oracles plus a Lipschitz constant of the gradient.
struct SmoothFunction {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
    double smoothness = 0.0;
};

/// Convex function accessed through value and proximal oracles. The prox
/// oracle returns argmin_y ‖y − x‖²/(2τ) + f(y) for τ > 0.
struct ProxFunction {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> prox;

    // Moreau envelope value at x for parameter tau, computed from the prox.
    double moreau(const Eigen::VectorXd& x, double tau) const;
};

// Prox catalog. Each closed form satisfies the prox optimality condition
// exactly; the factories wrap them as ProxFunction handles.
Eigen::VectorXd prox_abs(const Eigen::VectorXd& x, double tau);
Eigen::VectorXd prox_l2norm(const Eigen::VectorXd& x, double tau);
Eigen::VectorXd prox_linear(const Eigen::VectorXd& x, double tau,
                            const Eigen::VectorXd& slope);
Eigen::VectorXd prox_quadratic(const Eigen::VectorXd& x, double tau);

ProxFunction make_abs_function();
ProxFunction make_l2norm_function();
ProxFunction make_linear_function(Eigen::VectorXd slope);
ProxFunction make_quadratic_function();

/// One coordinate slice carrying a simplex constraint:
/// x[indices] ≥ 0 and sum(x[indices]) = total.
struct SimplexSlice {
    std::vector<int> indices;
    double total = 0.0;
};

/// Closed convex set a node projects onto. Construct through the factory
/// functions; project/membership dispatch on the variant.
class ConstraintSet {
public:
    enum class Kind {
        WholeSpace,
        Halfspace,
        ScaledSimplex,
        NonnegativeOrthant,
        SliceSimplexes,
        Epigraph,
    };

    static ConstraintSet whole_space(int dim);
    // {x : cᵀx ≤ d}. c = 0 with d ≥ 0 degenerates to the whole space;
    // c = 0 with d < 0 is empty and throws EmptySet.
    static ConstraintSet halfspace(Eigen::VectorXd c, double d);
    // {x : x ≥ 0, 1ᵀx = radius}, radius > 0.
    static ConstraintSet scaled_simplex(int dim, double radius);
    static ConstraintSet nonnegative_orthant(int dim);
    // Intersection of simplex constraints on coordinate slices; coordinates
    // outside every slice are unconstrained. Slices may overlap.
    static ConstraintSet slice_simplexes(int dim, std::vector<SimplexSlice> slices);
    // {(y, t) : f(y) ≤ t} over dim-1 y-coordinates plus the trailing t.
    static ConstraintSet epigraph(ProxFunction f, int dim);

    Kind kind() const { return kind_; }
    int dimension() const { return dim_; }

    // Euclidean projection onto the set.
    Eigen::VectorXd project(const Eigen::VectorXd& x) const;

    // Scalar violation measure; 0 within tolerance means membership.
    double membership_residual(const Eigen::VectorXd& x) const;
    bool contains(const Eigen::VectorXd& x, double tol = 1e-8) const;

    // Variant payload accessors used by the normal-cone machinery.
    const Eigen::VectorXd& halfspace_normal() const { return c_; }
    double halfspace_offset() const { return d_; }
    double simplex_radius() const { return radius_; }
    const std::vector<SimplexSlice>& slices() const { return slices_; }

private:
    ConstraintSet(Kind kind, int dim) : kind_(kind), dim_(dim) {}

    void check_dimension(const Eigen::VectorXd& x) const;

    Kind kind_;
    int dim_;
    Eigen::VectorXd c_;
    double d_ = 0.0;
    double radius_ = 0.0;
    std::vector<SimplexSlice> slices_;
    ProxFunction base_;
};

/// Euclidean projection of set member candidates; thin free-function form.
Eigen::VectorXd project(const ConstraintSet& set, const Eigen::VectorXd& x);

/// Sort-and-threshold projection onto {y ≥ 0, 1ᵀy = radius}.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& y, double radius);

/// Projection of (x, t) onto the epigraph of f by gradient ascent on the
/// scalar dual variable tau. Returns (prox_{τf}(x), t + τ); returns (x, t)
/// unchanged when t ≥ f(x). backtrack_step lies in (0, 1).
std::pair<Eigen::VectorXd, double> epigraph_project(const ProxFunction& f,
                                                    const Eigen::VectorXd& x,
                                                    double t,
                                                    double backtrack_step = 0.5,
                                                    double tol = 1e-12,
                                                    int max_iter = 10000);

/// Iteratively reweighted active-set solver for min ‖Aw − b‖, w ≥ 0.
Eigen::VectorXd nonnegative_least_squares(const Eigen::MatrixXd& a,
                                          const Eigen::VectorXd& b,
                                          int max_iter = 1000,
                                          double tol = 1e-12);

/// Distance from v to the normal cone of the set at the member x. Zero
/// means v is a valid normal direction at x.
double normal_cone_residual(const ConstraintSet& set, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& v);

}  // namespace dagp
