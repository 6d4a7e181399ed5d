#include "dagp/graph.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "dagp/errors.hpp"
#include "dagp/rng.hpp"

namespace dagp {

DirectedGraph::DirectedGraph(int node_count) : node_count_(node_count) {
    if (node_count < 1) {
        throw InvalidParameter("graph needs at least one node, got " +
                               std::to_string(node_count));
    }
}

void DirectedGraph::add_edge(int receiver, int sender) {
    if (receiver < 0 || receiver >= node_count_ || sender < 0 ||
        sender >= node_count_) {
        throw InvalidParameter("edge (" + std::to_string(receiver) + ", " +
                               std::to_string(sender) + ") out of range for " +
                               std::to_string(node_count_) + " nodes");
    }
    if (receiver == sender) {
        throw InvalidParameter("self-loop at node " + std::to_string(receiver));
    }
    edges_.insert({receiver, sender});
}

bool DirectedGraph::has_edge(int receiver, int sender) const {
    return edges_.count({receiver, sender}) > 0;
}

int DirectedGraph::in_degree(int v) const {
    int d = 0;
    for (const auto& [r, s] : edges_) d += (r == v);
    return d;
}

int DirectedGraph::out_degree(int v) const {
    int d = 0;
    for (const auto& [r, s] : edges_) d += (s == v);
    return d;
}

int DirectedGraph::max_in_degree() const {
    int best = 0;
    for (int v = 0; v < node_count_; ++v) best = std::max(best, in_degree(v));
    return best;
}

int DirectedGraph::max_out_degree() const {
    int best = 0;
    for (int v = 0; v < node_count_; ++v) best = std::max(best, out_degree(v));
    return best;
}

Eigen::MatrixXd DirectedGraph::adjacency() const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(node_count_, node_count_);
    for (const auto& [r, s] : edges_) a(r, s) = 1.0;
    return a;
}

void DirectedGraph::save(std::ostream& out) const {
    out << "nodes " << node_count_ << "\n";
    for (const auto& [r, s] : edges_) out << r << " " << s << "\n";
}

DirectedGraph DirectedGraph::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw InvalidParameter("graph stream is empty");
    }
    std::istringstream header(line);
    std::string tag;
    int n = 0;
    if (!(header >> tag >> n) || tag != "nodes") {
        throw InvalidParameter("graph header must be 'nodes M', got '" + line +
                               "'");
    }
    DirectedGraph g(n);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        int r = 0, s = 0;
        if (!(row >> r >> s)) {
            throw InvalidParameter("bad edge line '" + line + "'");
        }
        g.add_edge(r, s);
    }
    return g;
}

GossipPair build_gossip_matrices(const DirectedGraph& g) {
    const int m = g.node_count();
    if (g.edges().empty() && m > 1) {
        throw DegenerateGraph("graph on " + std::to_string(m) +
                              " nodes has no edges");
    }
    if (m == 1) return single_node_gossip();

    const Eigen::MatrixXd a = g.adjacency();
    const double din = g.max_in_degree();
    const double dout = g.max_out_degree();
    if (din == 0 || dout == 0) {
        throw DegenerateGraph("graph has a zero maximum degree");
    }

    GossipPair p;
    p.W = -a / (2.0 * din);
    p.Q = -a / (2.0 * dout);
    // Set each diagonal entry to the negated sum of the rest of its row
    // (column for Q) so the zero-sum property holds exactly in floating
    // point, not just up to rounding.
    for (int v = 0; v < m; ++v) {
        p.W(v, v) = 0.0;
        p.Q(v, v) = 0.0;
        p.W(v, v) = -p.W.row(v).sum();
        p.Q(v, v) = -p.Q.col(v).sum();
    }
    return p;
}

namespace {

// Columns of V whose singular values fall below tol * sigma_max.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = kNullSpaceTolerance * (sv.size() ? sv(0) : 0.0);
    int rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    return svd.matrixV().rightCols(sv.size() - rank);
}

}  // namespace

KernelConditionReport check_kernel_condition(const GossipPair& p) {
    KernelConditionReport report;
    const Eigen::MatrixXd kq = null_space(p.Q);
    const Eigen::MatrixXd kwt = null_space(p.W.transpose());
    report.ker_q_dim = static_cast<int>(kq.cols());
    report.ker_wt_dim = static_cast<int>(kwt.cols());

    if (report.ker_q_dim != report.ker_wt_dim) {
        report.holds = false;
        report.detail = "kernel dimensions differ: dim ker(Q) = " +
                        std::to_string(report.ker_q_dim) +
                        ", dim ker(W^T) = " + std::to_string(report.ker_wt_dim);
        return report;
    }
    if (report.ker_q_dim == 0) {
        report.holds = true;
        report.alignment = 1.0;
        report.detail = "both kernels are trivial";
        return report;
    }
    // Equal-dimension subspaces coincide iff every principal-angle cosine
    // is 1; the smallest is the least singular value of K_q^T K_wt.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(kq.transpose() * kwt);
    report.alignment = svd.singularValues().minCoeff();
    report.holds = report.alignment > 1.0 - 1e-8;
    report.detail = report.holds ? "kernels coincide" : "kernels differ";
    return report;
}

DirectedGraph random_strongly_connected_graph(int node_count,
                                              double extra_edge_probability,
                                              std::uint64_t seed) {
    if (node_count < 2) {
        throw InvalidParameter("random graph needs at least two nodes");
    }
    if (extra_edge_probability < 0.0 || extra_edge_probability > 1.0) {
        throw InvalidParameter("edge probability must lie in [0, 1]");
    }
    DirectedGraph g(node_count);
    Rng rng(seed);

    // Every extra structure below adds whole directed cycles, so in-degree
    // equals out-degree at every node. Balanced strongly connected graphs
    // are exactly the ones whose Laplacian-scaled gossip pair satisfies the
    // kernel condition; unpaired chords would break it.
    std::vector<int> order(node_count);
    for (int v = 0; v < node_count; ++v) order[v] = v;
    for (int v = node_count - 1; v > 0; --v) {
        std::swap(order[v], order[rng.below(static_cast<std::uint64_t>(v + 1))]);
    }
    for (int v = 0; v < node_count; ++v) {
        g.add_edge(order[(v + 1) % node_count], order[v]);
    }

    // Two-cycle chords carry the requested density.
    for (int a = 0; a < node_count; ++a) {
        for (int b = a + 1; b < node_count; ++b) {
            if (!rng.bernoulli(extra_edge_probability)) continue;
            if (g.has_edge(a, b) || g.has_edge(b, a)) continue;
            g.add_edge(a, b);
            g.add_edge(b, a);
        }
    }

    // A few directed triangles keep the extras from being all symmetric.
    if (node_count >= 3) {
        const int attempts = static_cast<int>(
            extra_edge_probability * node_count);
        for (int t = 0; t < attempts; ++t) {
            const int a = static_cast<int>(rng.below(node_count));
            int b = static_cast<int>(rng.below(node_count));
            int c = static_cast<int>(rng.below(node_count));
            if (a == b || b == c || a == c) continue;
            if (g.has_edge(b, a) || g.has_edge(c, b) || g.has_edge(a, c)) {
                continue;
            }
            g.add_edge(b, a);
            g.add_edge(c, b);
            g.add_edge(a, c);
        }
    }
    return g;
}

DirectedGraph complete_graph(int node_count) {
    DirectedGraph g(node_count);
    for (int r = 0; r < node_count; ++r) {
        for (int s = 0; s < node_count; ++s) {
            if (r != s) g.add_edge(r, s);
        }
    }
    return g;
}

GossipPair single_node_gossip() {
    GossipPair p;
    p.W = Eigen::MatrixXd::Zero(1, 1);
    p.Q = Eigen::MatrixXd::Zero(1, 1);
    return p;
}

}  // namespace dagp
