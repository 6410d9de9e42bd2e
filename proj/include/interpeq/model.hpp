#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "interpeq/errors.hpp"

namespace interpeq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class VarKind { Input, Hidden, Output };

struct Variable {
    std::string id;
    int arity = 1;  // dimension of the value space
    VarKind kind = VarKind::Hidden;
};

// ---------------------------------------------------------------------------
// Transition evaluators.
//
// A transition is either one of the named, serializable ops below (models
// built from these round-trip through JSON bit-exactly) or an opaque lambda
// (test fixtures, abstract interpreter-backed models; not serializable).
// ---------------------------------------------------------------------------

enum class OpKind {
    Affine,            // y = W * concat(parents) + b
    Relu,              // y = max(0, concat(parents))
    Constant,          // y = c
    Concat,            // y = concat(parents)
    MeanPool,          // y = elementwise mean of parents (equal arities)
    ElementwiseTable,  // keyed lookup over decoded parent blocks
    HardAttention,     // row-normalized boolean attention over parent positions
    Lambda,            // opaque evaluator
};

const char* op_kind_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);

// Decodes one scalar key from a block of a parent's value.
// onehot=true: key = argmax index of the block, or -1 if max < 0.5 (empty).
// onehot=false: key = block[0] (width must be 1).
struct TableProbe {
    int parent = 0;
    int offset = 0;
    int width = 1;
    bool onehot = false;
};

// Hard attention over positions. Parents are the per-position vectors in
// position order; the query comes from parents[query_parent]. A key position
// j is selected when onehot(query block)^T * predicate * onehot(key block)
// exceeds 0.5; the output is the mean of selected value blocks (ascending j),
// or zero when nothing is selected. always_first_key forces selection of
// position 0 (used by counting heads attending to the BOS slot).
struct AttentionParams {
    int query_parent = 0;
    int query_offset = 0;
    int query_width = 0;
    int key_offset = 0;
    int key_width = 0;
    int value_offset = 0;
    int value_width = 0;
    Mat predicate;  // query_width x key_width, 0/1 entries
    bool always_first_key = false;
};

using Evaluator =
    std::function<Vec(const std::vector<const Vec*>& parents, const Vec& input)>;

struct Op {
    OpKind kind = OpKind::Lambda;

    // Affine / Constant
    Mat weight;
    Vec bias;
    Vec value;

    // ElementwiseTable
    std::vector<TableProbe> probes;
    Mat table_keys;    // one row per entry, cols = probes.size()
    Mat table_values;  // one row per entry, cols = output arity

    // HardAttention
    AttentionParams attn;

    // Lambda
    Evaluator fn;

    Vec evaluate(const std::vector<const Vec*>& parents, const Vec& input,
                 int expected_arity) const;
};

using OpPtr = std::shared_ptr<const Op>;

OpPtr make_affine(Mat weight, Vec bias);
OpPtr make_constant(Vec value);
OpPtr make_concat();
OpPtr make_relu();
OpPtr make_mean_pool();
OpPtr make_table(std::vector<TableProbe> probes, Mat keys, Mat values);
OpPtr make_attention(AttentionParams params);
OpPtr make_lambda(Evaluator fn);

struct Transition {
    std::string target;
    std::vector<std::string> parents;
    OpPtr op;
};

// A do-operation: replace `target`'s transition with a new one.
struct Intervention {
    std::string target;
    std::vector<std::string> new_parents;
    OpPtr new_op;
};

// ---------------------------------------------------------------------------
// Task: a finite input set with optional reference outputs (the role of h(S)).
// Inputs are token sequences over {1..alphabet_size}; generic numeric models
// read them as raw real vectors.
// ---------------------------------------------------------------------------
struct Task {
    int alphabet_size = 0;
    std::vector<std::vector<int>> inputs;
    std::optional<std::vector<Vec>> reference_outputs;

    void validate() const;
    Vec input_vector(std::size_t i) const;  // token ids as doubles
    static Vec to_vector(const std::vector<int>& seq);
};

// Solved values of every variable for one input setting, ordered like the
// model's topological order (input variable first).
class CausalModel;

class Solution {
public:
    Solution(const CausalModel* model, Vec input_value, std::vector<Vec> values)
        : model_(model), input_(std::move(input_value)), values_(std::move(values)) {}

    const Vec& input() const { return input_; }
    const Vec& value(const std::string& id) const;
    const Vec& value_at(int index) const { return values_[static_cast<std::size_t>(index)]; }
    const Vec& output() const;
    std::size_t size() const { return values_.size(); }

private:
    const CausalModel* model_;
    Vec input_;
    std::vector<Vec> values_;  // aligned with model order; input slot holds input value
};

// Deterministic causal model: a DAG of variables with one input variable,
// one designated output variable, and one transition per non-input variable.
// Immutable after construction; interventions return new models.
class CausalModel {
public:
    CausalModel() = default;  // empty shell; populate via build()

    static CausalModel build(std::vector<Variable> variables, const std::string& input_id,
                             std::vector<Transition> transitions);

    Solution solve(const Vec& input_value) const;
    Solution solve(const std::vector<int>& sequence) const { return solve(Task::to_vector(sequence)); }

    CausalModel with_intervention(const Intervention& iv) const;

    const std::vector<std::string>& order() const { return order_; }
    const Variable& variable(const std::string& id) const;
    const Variable& variable_at(int index) const { return vars_[static_cast<std::size_t>(index)]; }
    const Transition* transition(const std::string& id) const;  // null for input
    int index_of(const std::string& id) const;
    bool has_variable(const std::string& id) const { return index_.count(id) > 0; }
    std::size_t size() const { return vars_.size(); }

    const std::string& input_id() const { return input_id_; }
    const std::string& output_id() const { return output_id_; }

    // ids of variables from which `id` is reachable (ancestors), and the
    // reverse (descendants, including id itself when include_self).
    std::vector<std::string> descendants(const std::string& id, bool include_self) const;
    bool reaches_output(const std::string& id) const;

    std::vector<std::string> hidden_ids() const;  // everything except the input

private:
    std::string input_id_;
    std::string output_id_;
    std::vector<Variable> vars_;              // topo order, input first
    std::vector<Transition> transitions_;     // aligned with vars_; empty op for input
    std::vector<std::string> order_;
    std::unordered_map<std::string, int> index_;

    friend class Solution;
};

CausalModel build_model(std::vector<Variable> variables, const std::string& input_id,
                        std::vector<Transition> transitions);
CausalModel apply_intervention(const CausalModel& model, const Intervention& iv);

}  // namespace interpeq
