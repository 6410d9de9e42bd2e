#pragma once

#include <map>
#include <string>
#include <vector>

#include "interpeq/alignment.hpp"
#include "interpeq/model.hpp"
#include "interpeq/rasp.hpp"

namespace interpeq {
namespace rasp {

struct CompileConfig {
    int max_len = 5;        // compiled sequence length (fixed per model)
    int alphabet_size = 5;  // |Sigma|
    int max_layers = 0;     // 0 = unconstrained
    int max_heads = 0;      // 0 = unconstrained (per layer)
    int pad_width = 8;      // rotatable padding dims appended per layer
    std::uint64_t seed = 1; // seeds the padding projections
};

// Where a value lives inside the compiled residual stream.
struct SlotInfo {
    int offset = 0;           // start of the encoding block in the residual
    int width = 0;
    bool onehot = true;       // scalar slot otherwise
    std::vector<double> domain;
    bool empty_possible = false;  // all-zero one-hot block decodes to 0.0
};

struct CompiledTransformer {
    CausalModel model;
    Alignment source_map;   // compiled model -> abstract_model(program)
    int layers = 0;
    int heads = 0;          // max heads in any layer
    int n = 0;
    int alphabet = 0;

    // Default representation pooling: residual stream per layer, then the
    // unembedded output as its own final layer.
    std::vector<std::vector<std::string>> rho_groups;

    // Padding blocks that are provably unread by downstream consumers; the
    // variant generator rotates/perturbs these.
    struct PadBlock {
        std::string variable;
        int offset = 0;
        int width = 0;
    };
    std::vector<PadBlock> pad_blocks;

    std::map<std::string, SlotInfo> named_slots;  // by s-op name
};

// Compiles a program into a hard-attention transformer causal model. The
// compiled model reproduces the interpreter bit-exactly on every length-n
// input over the alphabet (tables and attention perform the same arithmetic
// in the same order).
CompiledTransformer compile(const Program& program, const CompileConfig& cfg);

// Builds the permutation-detection task at length n: inputs plus reference
// outputs from the multiset oracle, unembedded the same way compiled models
// unembed their outputs.
Task permutation_task_exhaustive(int n);
Task permutation_task_sampled(int n, int count, std::uint64_t seed, bool balanced);

}  // namespace rasp
}  // namespace interpeq
