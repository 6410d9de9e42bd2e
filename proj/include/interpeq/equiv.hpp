#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interpeq/implgen.hpp"
#include "interpeq/model.hpp"
#include "interpeq/reprsim.hpp"

namespace interpeq {

// Fixed distillation map: concatenate the selected variables' solutions and
// apply an optional linear projection. Induces the implementation metric
// d(F, F~) as the dataset-RMS of the projected solution difference.
struct DistillationMap {
    std::vector<std::string> ids;
    std::optional<Mat> projection;  // rows x total selected arity

    Mat apply(const CausalModel& model, const Task& task) const;  // inputs x dim
};

// Distillation through the output variable alone (identity projection).
DistillationMap output_distillation(const CausalModel& model);

double impl_distance(const CausalModel& f1, const CausalModel& f2, const DistillationMap& phi,
                     const Task& task);

// Exact set metrics over finite implementation sets (sup/inf over the
// provided models). Pairwise distances are computed through `phi` on `task`.
double hausdorff_distance(const std::vector<const CausalModel*>& a,
                          const std::vector<const CausalModel*>& b, const DistillationMap& phi,
                          const Task& task);
double compression(const std::vector<const CausalModel*>& set, const DistillationMap& phi,
                   const Task& task);
double empirical_diameter(const std::vector<const CausalModel*>& samples,
                          const DistillationMap& phi, const Task& task);

// Same metrics on a precomputed distance matrix (used by the Monte Carlo
// experiments; distances_ab[i][j] = d(a_i, b_j)).
double hausdorff_from_matrix(const Mat& distances_ab);
double diameter_from_matrix(const Mat& distances_aa);

// Smallest m with m >= (ln C - ln delta) / p_min, floored at 1.
int sample_size_bound(double covering_number, double p_min, double delta);

// Greedy epsilon-net on a finite set: number of balls and the minimum ball
// mass under the uniform distribution.
struct CoveringEstimate {
    int covering_number = 0;
    double p_min = 0.0;
    std::vector<int> assignment;  // point -> ball index
};
CoveringEstimate greedy_covering(const Mat& distances, double radius);

// 1-Lipschitz readout from prepared representation coordinates to the
// distillation codomain. The default extracts the final representation block
// (the unembedded output), for which omega is identically zero when phi is
// the output distillation.
struct ReadoutMap {
    bool last_block = true;  // extract the last layer block of the representation
    Mat fitted;              // otherwise: a constrained linear fit (spectral <= 1)
    double spectral_norm = 1.0;

    Mat apply(const ReprMatrix& r) const;
};

double measure_omega(const ReadoutMap& psi, const ReprMatrix& r, const Mat& phi_values);

struct BoundReport {
    std::string name;
    bool holds = false;
    double lhs = 0.0, rhs = 0.0, slack = 0.0;
    std::map<std::string, double> terms;
    std::string note;
};

struct TheoremInputs {
    const ImplementationSet* set1 = nullptr;
    const ImplementationSet* set2 = nullptr;
    RhoSpec rho1, rho2;
    DistillationMap phi;
    const Task* task = nullptr;
    double tol = 1e-6;
    double omega_cap = 1e-6;   // Assumption-4 gate: refuse when omega exceeds this
    double lip_safety = 2.0;   // multiplier applied to the empirical Lipschitz estimate
    int lip_pair_cap = 40;     // pairs sampled for the Lipschitz estimate
    int epsilon_grid = 24;     // grid size for the vote-rate bound
    double mc_margin = 0.0;    // slack for sampled (non-exhaustive) sets
};

// d_interp <= kappa1 + kappa2 + 2*omega + d_repr + delta1 + delta2 + Delta.
BoundReport check_thm1(const TheoremInputs& in);
// d_repr <= eps*(Lip(rho1)+1) + delta1 + delta2 + Delta, with eps the
// measured d_interp and a safety-factored Lipschitz estimate.
BoundReport check_thm2(const TheoremInputs& in);
// p >= 1 - inf over valid eps of (within tail + cross tail), everything
// enumerated exactly on the finite sets.
BoundReport check_thm3(const TheoremInputs& in);

// Corollary envelope: f = inf_eps [t1 + 2*t2 + t3]; when f >= 1 the exact
// congruity score lies in [2-f, f].
struct CorollaryEnvelope {
    double f = 0.0;
    bool applicable = false;  // f >= 1
    double score = 0.0;       // exact enumeration congruity 1-|p1+p2-1|
    bool holds = false;
};
CorollaryEnvelope corollary_envelope(const TheoremInputs& in);

}  // namespace interpeq
