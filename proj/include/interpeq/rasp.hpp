#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "interpeq/errors.hpp"
#include "interpeq/model.hpp"

namespace interpeq {
namespace rasp {

// ---------------------------------------------------------------------------
// A small hard-attention sequence DSL. S-ops are length-preserving sequences
// over numeric values; selectors are boolean key/query matrices. Grammar
// (see README for the full description):
//
//   name = expr
//   expr := number | tokens | indices | name
//         | expr (+ - * / % == != < <= > >= and or) expr | not expr | - expr
//         | select(keys, queries, PRED)                    -- PRED over k, q
//         | select(k1, k2, q1, q2, PRED)                   -- PRED over k1,k2,q1,q2
//         | aggregate(selector, values)   -- row-mean over selected (0 if none);
//                                            values must be boolean-valued
//         | gather(selector, values)      -- exclusive aggregate: at most one
//                                            selected per row (0 if none)
//         | width(selector)               -- count of selected keys per row
//
// The s-op named `out` is the program output. Comparisons/and/or/not yield
// 0/1. Predicates must be boolean-valued expressions over key/query leaves.
// ---------------------------------------------------------------------------

enum class EOp {
    Num, K1, K2, Q1, Q2, True,
    Add, Sub, Mul, Div, Mod, Neg,
    Eq, Ne, Lt, Le, Gt, Ge, And, Or, Not,
};

bool eop_is_boolean(EOp op);
double eval_scalar(EOp op, double a, double b);  // shared by interpreter and compiler

// Predicate expression over key/query scalar leaves.
struct Pred {
    EOp op = EOp::True;
    double num = 0.0;
    std::vector<Pred> args;

    double eval(double k1, double k2, double q1, double q2) const;
    bool boolean_valued() const;
    bool uses_second_pair() const;
};

enum class SopKind { Tokens, Indices, Number, Elementwise, Aggregate, Gather, Width };

struct Selector {
    std::vector<int> keys;     // 1 or 2 s-op ids
    std::vector<int> queries;  // same count as keys
    Pred pred;
    int line = 0, col = 0;
};

struct Sop {
    SopKind kind = SopKind::Tokens;
    EOp eop = EOp::Num;        // for Elementwise
    double number = 0.0;       // for Number
    std::vector<int> args;     // elementwise operands; [values] for Aggregate/Gather
    int selector = -1;         // for Aggregate/Gather/Width
    std::string name;          // user name, or "_k" for intermediates
    int line = 0, col = 0;
};

struct Program {
    std::vector<Sop> sops;          // definition order (topological)
    std::vector<Selector> selectors;
    std::map<std::string, int> named;  // user-named s-ops
    int output = -1;                   // id of the s-op named "out"
    std::string source;

    const Sop& sop(int id) const { return sops.at(static_cast<std::size_t>(id)); }
};

Program parse_program(const std::string& source_text);

// Boolean selector matrix: rows are query positions, cols are key positions.
struct SelectorMatrix {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> entries;  // row-major
    bool at(int q, int k) const { return entries[static_cast<std::size_t>(q * cols + k)] != 0; }
};

// Per-input evaluation of every s-op (reference semantics).
struct Evaluation {
    std::vector<std::vector<double>> sop_values;   // by s-op id, length n each
    std::vector<SelectorMatrix> selector_values;   // by selector id
};

Evaluation evaluate(const Program& p, const std::vector<int>& sequence, int alphabet_size);

// Evaluates one s-op while holding the listed s-ops at externally supplied
// values (the do-operator at s-op granularity). Anonymous intermediates are
// recomputed; fixed s-ops short-circuit.
std::vector<double> evaluate_sop_with_fixed(const Program& p, int target,
                                            const std::map<int, std::vector<double>>& fixed,
                                            const std::vector<int>& sequence, int alphabet_size);

// Output s-op values for one input.
std::vector<double> interpret(const Program& p, const std::vector<int>& sequence,
                              int alphabet_size);

// Maps the output s-op's final-position value into R^{alphabet}: boolean
// programs emit [1-b, b, 0, ...], categorical values emit one-hot when in
// range, anything else the zero vector. This is the model function h used by
// tasks, shared verbatim by the compiler's unembedding.
Vec reference_output(const Program& p, const std::vector<int>& sequence, int alphabet_size);
bool output_is_boolean(const Program& p);
Vec unembed_value(double value, bool boolean, int alphabet_size);

// Abstract causal model of the program: one hidden variable per named s-op
// (value = the whole length-n sequence), plus the unembedded output variable.
// Transitions are interpreter-backed lambdas; not serializable.
CausalModel abstract_model(const Program& p, int sequence_length, int alphabet_size);

// Named s-ops this s-op depends on, looking through anonymous intermediates.
std::vector<std::string> named_parent_names(const Program& p, int sop_id);

// ---------------------------------------------------------------------------
// Builtin permutation-detection programs 1-6. Each decides whether a length-n
// sequence over {1..n} is a permutation of 1..n; 1-4 sort first, 5-6 count.
// ---------------------------------------------------------------------------
std::string builtin_source(int interpretation, int n);   // interpretation in 1..6
std::vector<Program> builtin_interpretations(int n);     // all six, 3 <= n <= 10

// Ground truth: multiset equality with {1..n}.
bool is_permutation(const std::vector<int>& seq, int n);

}  // namespace rasp
}  // namespace interpeq
