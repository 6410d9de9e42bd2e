#pragma once

#include <optional>
#include <string>
#include <vector>

#include "interpeq/alignment.hpp"
#include "interpeq/model.hpp"
#include "interpeq/rng.hpp"

namespace interpeq {

enum class StrategyKind {
    ConstantAblate,
    ResampleAblate,
    GaussianPerturb,
    DeadComponentInsert,
    UnusedSubspaceRotate,
};

const char* strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& name);

struct VariantStrategy {
    StrategyKind kind = StrategyKind::GaussianPerturb;
    double magnitude = 0.05;   // noise scale / rotation mix / dead-insert count
    std::uint64_t seed = 0;
};

struct ComponentScore {
    std::string id;
    double importance = 0.0;  // task-averaged fractional output change, clamped to [0,1]
};

// Importance by ablation patching: for each non-input variable, replace it
// with a constant (zero or a resampled solution) and average the relative
// output change over the task.
std::vector<ComponentScore> score_components(const CausalModel& model, const Task& task,
                                             StrategyKind ablation,
                                             std::uint64_t seed = 0);

// A block of a variable's output that no downstream consumer reads; safe for
// rotations and free-form perturbation (compiled models expose their padding
// blocks here).
struct RotatableBlock {
    std::string variable;
    int offset = 0;
    int width = 0;
};

struct GeneratorConfig {
    std::vector<VariantStrategy> strategies;
    double importance_threshold = 0.02;
    int retry_cap = 50;
    FaithfulnessBudget budget{1e-6};
    std::vector<RotatableBlock> rotatable;
    int interchange_checks = 3;  // patches per preservation verification
};

struct PreservationReport {
    bool passed = false;
    double output_residual = 0.0;       // max per-input output gap
    double interchange_residual = 0.0;  // max gap under important-component patches
};

// Pass iff outputs agree within budget.eta on the task and interchange
// patches on important components move both models the same way.
PreservationReport verify_preservation(const CausalModel& base, const CausalModel& variant,
                                       const Task& task, const FaithfulnessBudget& budget,
                                       const std::vector<std::string>& important_ids,
                                       std::uint64_t seed, int interchange_checks);

// Applies one strategy draw to the listed unimportant components. Only the
// listed ids (or inserted dead variables / rotatable pads) are touched; the
// touched ids are reported through `touched` when given. Resample ablation
// draws its donor input from `task`.
CausalModel sample_variant(const CausalModel& model, const std::vector<std::string>& unimportant,
                           const VariantStrategy& strategy,
                           const std::vector<RotatableBlock>& rotatable = {},
                           const Task* task = nullptr,
                           std::vector<std::string>* touched = nullptr);

struct VariantProvenance {
    StrategyKind kind = StrategyKind::GaussianPerturb;
    std::uint64_t seed = 0;
    std::vector<std::string> targets;
    double output_residual = 0.0;
    int retries = 0;
};

struct ImplementationSet {
    CausalModel base;
    std::vector<CausalModel> variants;
    FaithfulnessBudget budget;
    std::uint64_t seed = 0;
    std::vector<VariantProvenance> provenance;

    // base + variants, in that order.
    std::vector<const CausalModel*> all_models() const;
};

// GetImpl: draws `count` verified interpretation-preserving variants.
// Retries each slot up to cfg.retry_cap times; fully reproducible from seed.
ImplementationSet generate_implementations(const CausalModel& model, const Task& task, int count,
                                           const GeneratorConfig& cfg, std::uint64_t seed);

// Directory persistence: base.json, variant_###.json, manifest.json.
void save_implementation_set(const ImplementationSet& set, const std::string& dir);
ImplementationSet load_implementation_set(const std::string& dir);

}  // namespace interpeq
