#pragma once

#include <functional>
#include <string>
#include <vector>

#include "interpeq/implgen.hpp"
#include "interpeq/model.hpp"
#include "interpeq/reprsim.hpp"

namespace interpeq {

struct CongruityConfig {
    int n_rounds = 100;
    int bootstrap_samples = 20;
    double confidence = 0.95;
    double null_band = 0.5;  // reject "different interpretations" when ci_lo exceeds this
    std::uint64_t seed = 7;
};

struct CongruityReport {
    double score = 0.0;   // 1 - |p1 + p2 - 1|
    double p1_hat = 0.0;  // per-direction vote rates
    double p2_hat = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    std::string verdict;  // "equivalent-not-rejected" | "different"
    bool degenerate_variants = false;
    std::vector<std::pair<int, int>> votes;  // per-round (side-1, side-2)
    std::vector<double> d11, d22;            // per-round within-set distances
    double d12 = 0.0;                        // base-to-base distance
};

// Vote 1 when d_repr(r1, r2) <= d_repr(r1, r3), else 0 (ties vote 1).
int repr_dist_vote(const ReprMatrix& r1, const ReprMatrix& r2, const ReprMatrix& r3);

// Draws one fresh implementation of the given side's model for a round.
using VariantSampler = std::function<CausalModel(int side, int round, Rng& rng)>;

// Per round, each side draws a fresh implementation pair (h, h*); the round
// votes [d_repr(R(h1), R(h1*)) <= d_repr(R(h1), R(h2))] and the mirrored
// direction, and the score is 1 - |s/n - 1|. Fully seeded. m1/m2 identify
// the two generators' sources; the sampler does the drawing.
CongruityReport congruity(const CausalModel& m1, const CausalModel& m2, const Task& task,
                          const CongruityConfig& cfg, const VariantSampler& sampler,
                          const RhoSpec& rho1, const RhoSpec& rho2);

// Same algorithm with rounds drawing (distinct picks, with replacement
// across rounds) from pre-generated implementation pools; representations
// and pairwise distances are cached.
CongruityReport congruity_from_pools(const std::vector<const CausalModel*>& pool1,
                                     const RhoSpec& rho1,
                                     const std::vector<const CausalModel*>& pool2,
                                     const RhoSpec& rho2, const Task& task,
                                     const CongruityConfig& cfg);

// Wald interval over bootstrap-resampled rounds, clamped to [0,1].
std::pair<double, double> bootstrap_ci(const std::vector<std::pair<int, int>>& votes,
                                       const CongruityConfig& cfg);

struct CongruityGroup {
    std::string name;
    const ImplementationSet* set = nullptr;
    RhoSpec rho;
};

struct CongruityCell {
    int row = 0, col = 0;
    CongruityReport report;
};

// Pairwise congruity over group representatives. Off-diagonal cells compare
// the two bases with their variant pools; diagonal cells split the group's
// own pool in half (two variant representatives), since comparing a model
// with itself ties every distance and degenerates to score 0.
std::vector<CongruityCell> congruity_matrix(const std::vector<CongruityGroup>& groups,
                                            const Task& task, const CongruityConfig& cfg);

double normal_quantile(double p);  // inverse standard normal CDF

}  // namespace interpeq
