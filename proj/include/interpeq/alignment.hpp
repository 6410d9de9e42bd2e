#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "interpeq/model.hpp"
#include "interpeq/rng.hpp"

namespace interpeq {

struct FaithfulnessBudget {
    double eta = 0.0;
};

// One mapped high-level variable: its (disjoint) preimage of low-level
// variables and the value map applied to their pooled solutions.
struct AlignmentEntry {
    std::string high_id;
    std::vector<std::string> low_ids;  // ordered; low variables not listed anywhere are discarded
    std::function<Vec(const std::vector<const Vec*>&)> value_fn;
};

// An alignment (pi, omega): pi maps subsets of low-level variables onto
// high-level variables (partial on the low side, surjective on the high
// side); omega translates low-level interventions into high-level ones.
// omega may decline an intervention (nullopt) when the alignment only
// supports a restricted intervention set.
struct Alignment {
    std::vector<AlignmentEntry> entries;
    std::function<std::optional<Intervention>(const Intervention&)> intervention_map;

    const AlignmentEntry* entry_for(const std::string& high_id) const;
    void validate_against(const CausalModel& low, const CausalModel& high) const;
};

// Identity alignment from a model to itself.
Alignment identity_alignment(const CausalModel& model);

// The two-variable collapse: {v_out} -> v_out, everything else discarded;
// interventions map through only when they target the output variable.
Alignment trivial_alignment(const CausalModel& low, const CausalModel& trivial_high);

// Builds the two-variable model U -> v_out with v_out = h(U), h given by a
// reference model solved on the fly.
CausalModel trivial_model_of(const CausalModel& reference);

struct CheckItem {
    std::string name;
    double residual = 0.0;
    bool pass = false;
};

struct CircuitReport {
    bool input_accepts = false;     // every task input solves
    bool hidden_real_valued = false;
    bool output_terminal = false;   // v_out has no successors
    bool output_matches = false;    // worst deviation within tolerance
    double worst_deviation = 0.0;
    bool passed() const {
        return input_accepts && hidden_real_valued && output_terminal && output_matches;
    }
};

struct AbstractionReport {
    bool passed = false;
    double max_obs_residual = 0.0;
    double max_inter_residual = 0.0;
    std::vector<CheckItem> checks;
};

// Verifies the four circuit properties against task.reference_outputs.
CircuitReport check_circuit(const CausalModel& model, const Task& task, double tolerance);

// Observational consistency (solved high values equal pi of pooled low
// values) and interventional consistency (do-then-abstract commutes with
// abstract-then-do over the supplied suite), both within tolerance.
AbstractionReport check_abstraction(const CausalModel& low, const CausalModel& high,
                                    const Alignment& a, const Task& task,
                                    const std::vector<Intervention>& suite, double tolerance);

// True iff the abstraction checks pass and the two output variables agree
// within budget.eta on every task input.
bool check_interpretation(const CausalModel& circuit, const CausalModel& interp,
                          const Alignment& a, const Task& task, const FaithfulnessBudget& budget,
                          const std::vector<Intervention>& suite,
                          double abstraction_tol = 1e-6);

// Composite alignment low->mid->high. Preimages concatenate through the
// middle layer; intervention maps compose.
Alignment compose_alignments(const Alignment& a12, const Alignment& a23);

// One constant ablation plus one resample ablation per non-input variable,
// seeded; the standard falsification suite for interventional consistency.
std::vector<Intervention> make_default_suite(const CausalModel& model, const Task& task,
                                             std::uint64_t seed);

// Largest per-input l2 gap between the two models' outputs over the task.
double max_output_gap(const CausalModel& a, const CausalModel& b, const Task& task);

}  // namespace interpeq
