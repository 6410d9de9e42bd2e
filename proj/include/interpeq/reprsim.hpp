#pragma once

#include <functional>
#include <string>
#include <vector>

#include "interpeq/model.hpp"

namespace interpeq {

// Layer pooling: each group lists the variable ids concatenated into one
// representation layer. Groups must form a chain (group k feeds only group
// k+1, possibly through unpooled intermediates).
struct RhoSpec {
    std::vector<std::vector<std::string>> groups;
};

struct ReprMatrix {
    std::vector<Mat> blocks;  // per layer: task inputs x pooled width
    std::string source;       // provenance tag

    Eigen::Index rows() const { return blocks.empty() ? 0 : blocks.front().rows(); }
    Eigen::Index total_cols() const {
        Eigen::Index c = 0;
        for (const auto& b : blocks) c += b.cols();
        return c;
    }
    Mat concat() const;
};

// Solves the model on every task input and concatenates the pooled
// activations per layer. Deterministic; row order = task input order.
ReprMatrix get_reprs(const CausalModel& model, const Task& task, const RhoSpec& rho);

// One direction of the bidirectional constrained fit: W approximately
// minimizes the dataset-RMS of ||W x - y|| subject to ||W||_spectral <= 1.
// The reported residual is an upper bound on the true infimum (ridge init,
// spectral projection, fixed projected-gradient refinement; a feasible
// min-norm least-squares candidate short-circuits when it already satisfies
// the constraint).
struct LinearFit {
    Mat map;                    // q x p
    double operator_norm = 0.0;
    double residual = 0.0;      // dataset-RMS of the row residuals
};

LinearFit fit_constrained(const Mat& X, const Mat& Y);
LinearFit fit_constrained(const Mat& X, const Mat& Y, const std::vector<Mat>& hint_maps);

// Mean-centered, zero-variance-dropped concatenation used for the actual
// fitting; the mask records which columns survived.
struct PreparedRepr {
    Mat data;
    std::vector<Eigen::Index> kept;
    Vec mean;
};
PreparedRepr prepare_repr(const ReprMatrix& r);
PreparedRepr prepare_matrix(const Mat& m);

struct ReprDistDetail {
    double value = 0.0;
    LinearFit forward;   // prepared(a) -> prepared(b)
    LinearFit backward;  // prepared(b) -> prepared(a)
};

// d_repr: max of the two directional constrained-fit residuals on the
// prepared concatenations. Hints are feasible candidate maps in prepared
// coordinates (used by the theorem checks to carry certified compositions).
ReprDistDetail repr_dist_detail(const ReprMatrix& a, const ReprMatrix& b,
                                const std::vector<Mat>& hints_forward = {},
                                const std::vector<Mat>& hints_backward = {});
double repr_dist(const ReprMatrix& a, const ReprMatrix& b);

struct ReprQuality {
    std::vector<double> encoder_residual;  // per layer: fit H_k -> h
    std::vector<double> decoder_residual;  // per layer: fit h -> H_k
    LinearFit encoder;  // concatenated H -> h (prepared spaces)
    LinearFit decoder;  // h -> concatenated H
    double delta = 0.0; // max over directions of the concatenated residuals
};

// Certifies R as an (L, delta)-representation against the model outputs.
ReprQuality repr_quality(const ReprMatrix& r, const Mat& h_outputs);

enum class GapNorm { Max, Rms };

Mat model_outputs(const CausalModel& m, const Task& task);  // inputs x out-arity
double functional_gap(const CausalModel& a, const CausalModel& b, const Task& task,
                      GapNorm norm = GapNorm::Max);

// Empirical lower bound on Lip(rho): the largest observed ratio
// repr_dist / impl_dist over the supplied pairs (pairs with impl_dist below
// 1e-12 are skipped; *any_valid reports whether any ratio survived).
double lipschitz_estimate(
    const std::vector<std::pair<const CausalModel*, const CausalModel*>>& pairs,
    const Task& task, const RhoSpec& rho,
    const std::function<double(const CausalModel&, const CausalModel&)>& impl_dist,
    bool* any_valid = nullptr);

// Binary block format for representation matrices: magic "RMX1", then
// uint32 layer count, uint32 rows, per-layer uint32 cols, then row-major
// little-endian doubles per layer.
void save_repr(const ReprMatrix& r, const std::string& path);
ReprMatrix load_repr(const std::string& path);

}  // namespace interpeq
