#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>

namespace dagp {

/// Directed communication graph. An edge (receiver, sender) means the
/// sender can transmit to the receiver, so row v of the adjacency matrix
/// lists the in-neighbors of node v. Self-loops are never stored; the
/// self-weights required by the gossip construction appear on the
/// diagonals of W and Q instead.
class DirectedGraph {
public:
    using Edge = std::pair<int, int>;  // (receiver, sender)

    explicit DirectedGraph(int node_count);

    int node_count() const { return node_count_; }
    const std::set<Edge>& edges() const { return edges_; }

    // Inserts (receiver, sender); rejects self-loops and bad indices.
    void add_edge(int receiver, int sender);
    bool has_edge(int receiver, int sender) const;

    int in_degree(int v) const;
    int out_degree(int v) const;
    int max_in_degree() const;
    int max_out_degree() const;

    // A(v, u) = 1 iff u can send to v.
    Eigen::MatrixXd adjacency() const;

    // Edge-list text: header "nodes M", then one "receiver sender" per line.
    void save(std::ostream& out) const;
    static DirectedGraph load(std::istream& in);

private:
    int node_count_;
    std::set<Edge> edges_;
};

/// The (W, Q) gossip matrix pair: W has zero row sums and mixes solution
/// vectors, Q has zero column sums and mixes tracking vectors. Both share
/// the graph's sparsity pattern plus the diagonal.
struct GossipPair {
    Eigen::MatrixXd W;
    Eigen::MatrixXd Q;

    int size() const { return static_cast<int>(W.rows()); }
};

struct KernelConditionReport {
    bool holds = false;
    int ker_q_dim = 0;
    int ker_wt_dim = 0;
    // Smallest principal-angle cosine between the two null spaces; 1 means
    // the spaces coincide. Meaningful only when the dimensions agree.
    double alignment = 0.0;
    std::string detail;
};

// Relative singular-value cutoff used when extracting null spaces.
inline constexpr double kNullSpaceTolerance = 1e-10;

/// W = L_in / (2 d_max_in), Q = L_out / (2 d_max_out) with the in/out
/// Laplacians of the graph. Diagonals are balanced so that row sums of W
/// and column sums of Q vanish exactly. Throws DegenerateGraph when the
/// graph has no edges.
GossipPair build_gossip_matrices(const DirectedGraph& g);

/// Verifies ker(Q) = ker(W^T) by comparing SVD null-space bases.
KernelConditionReport check_kernel_condition(const GossipPair& p);

/// Directed Hamiltonian cycle on M nodes plus independent extra edges with
/// the given probability. Deterministic for a fixed seed.
DirectedGraph random_strongly_connected_graph(int node_count,
                                              double extra_edge_probability,
                                              std::uint64_t seed);

/// Complete bidirectional graph on M nodes.
DirectedGraph complete_graph(int node_count);

/// Gossip pair for an isolated single node (both matrices are 1x1 zero).
GossipPair single_node_gossip();

}  // namespace dagp
