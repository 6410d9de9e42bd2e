#include "interpeq/model.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <set>
#include <sstream>

namespace interpeq {

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Affine: return "affine";
        case OpKind::Relu: return "relu";
        case OpKind::Constant: return "constant";
        case OpKind::Concat: return "concat";
        case OpKind::MeanPool: return "mean-pool";
        case OpKind::ElementwiseTable: return "elementwise-table";
        case OpKind::HardAttention: return "softmax-hard-attention";
        case OpKind::Lambda: return "lambda";
    }
    return "?";
}

OpKind op_kind_from_name(const std::string& name) {
    if (name == "affine") return OpKind::Affine;
    if (name == "relu") return OpKind::Relu;
    if (name == "constant") return OpKind::Constant;
    if (name == "concat") return OpKind::Concat;
    if (name == "mean-pool") return OpKind::MeanPool;
    if (name == "elementwise-table") return OpKind::ElementwiseTable;
    if (name == "softmax-hard-attention") return OpKind::HardAttention;
    throw UnknownTarget("op kind '" + name + "' is not in the evaluator whitelist");
}

namespace {

Vec concat_parents(const std::vector<const Vec*>& parents) {
    Eigen::Index total = 0;
    for (const Vec* p : parents) total += p->size();
    Vec out(total);
    Eigen::Index at = 0;
    for (const Vec* p : parents) {
        out.segment(at, p->size()) = *p;
        at += p->size();
    }
    return out;
}

double decode_probe(const TableProbe& probe, const std::vector<const Vec*>& parents,
                    const Vec& input) {
    // parent == -1 probes the model input directly (embedding tables).
    const Vec& v = probe.parent < 0 ? input : *parents.at(static_cast<std::size_t>(probe.parent));
    if (probe.offset < 0 || probe.offset + probe.width > v.size())
        throw EvaluatorFailure("table probe out of range");
    if (!probe.onehot) return v[probe.offset];
    int best = -1;
    double best_val = 0.5;  // below 0.5 everywhere decodes as "empty" (-1)
    for (int i = 0; i < probe.width; ++i) {
        const double x = v[probe.offset + i];
        if (x > best_val) {
            best_val = x;
            best = i;
        }
    }
    return static_cast<double>(best);
}

}  // namespace

Vec Op::evaluate(const std::vector<const Vec*>& parents, const Vec& input,
                 int expected_arity) const {
    switch (kind) {
        case OpKind::Affine: {
            Vec x = concat_parents(parents);
            if (weight.cols() != x.size())
                throw EvaluatorFailure("affine input size mismatch");
            return weight * x + bias;
        }
        case OpKind::Relu:
            return concat_parents(parents).cwiseMax(0.0);
        case OpKind::Constant:
            return value;
        case OpKind::Concat:
            return concat_parents(parents);
        case OpKind::MeanPool: {
            if (parents.empty()) throw EvaluatorFailure("mean-pool with no parents");
            Vec acc = *parents[0];
            for (std::size_t i = 1; i < parents.size(); ++i) {
                if (parents[i]->size() != acc.size())
                    throw EvaluatorFailure("mean-pool arity mismatch");
                acc += *parents[i];
            }
            return acc / static_cast<double>(parents.size());
        }
        case OpKind::ElementwiseTable: {
            Vec key(static_cast<Eigen::Index>(probes.size()));
            for (std::size_t i = 0; i < probes.size(); ++i)
                key[static_cast<Eigen::Index>(i)] = decode_probe(probes[i], parents, input);
            // Nearest key wins. Keys are integer-spaced by construction, so
            // this is exact for the value sets that actually occur.
            Eigen::Index best = -1;
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index r = 0; r < table_keys.rows(); ++r) {
                const double d = (table_keys.row(r).transpose() - key).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = r;
                }
            }
            if (best < 0) throw EvaluatorFailure("elementwise-table has no entries");
            return table_values.row(best).transpose();
        }
        case OpKind::HardAttention: {
            const auto& a = attn;
            if (a.query_parent < 0 ||
                a.query_parent >= static_cast<int>(parents.size()))
                throw EvaluatorFailure("attention query parent out of range");
            const Vec& qv = *parents[static_cast<std::size_t>(a.query_parent)];
            if (a.query_offset + a.query_width > qv.size())
                throw EvaluatorFailure("attention query block out of range");
            const auto q = qv.segment(a.query_offset, a.query_width);
            Vec out = Vec::Zero(a.value_width);
            int count = 0;
            for (std::size_t j = 0; j < parents.size(); ++j) {
                const Vec& kv = *parents[j];
                if (a.key_offset + a.key_width > kv.size() ||
                    a.value_offset + a.value_width > kv.size())
                    throw EvaluatorFailure("attention key/value block out of range");
                bool selected = a.always_first_key && j == 0;
                if (!selected) {
                    const double score =
                        q.dot(a.predicate * kv.segment(a.key_offset, a.key_width));
                    selected = score > 0.5;
                }
                if (selected) {
                    out += kv.segment(a.value_offset, a.value_width);
                    ++count;
                }
            }
            if (count > 0) out /= static_cast<double>(count);
            return out;
        }
        case OpKind::Lambda:
            return fn(parents, input);
    }
    throw EvaluatorFailure("unhandled op kind");
    (void)expected_arity;
}

OpPtr make_affine(Mat weight, Vec bias) {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::Affine;
    op->weight = std::move(weight);
    op->bias = std::move(bias);
    return op;
}

OpPtr make_constant(Vec value) {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::Constant;
    op->value = std::move(value);
    return op;
}

OpPtr make_concat() {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::Concat;
    return op;
}

OpPtr make_relu() {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::Relu;
    return op;
}

OpPtr make_mean_pool() {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::MeanPool;
    return op;
}

OpPtr make_table(std::vector<TableProbe> probes, Mat keys, Mat values) {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::ElementwiseTable;
    op->probes = std::move(probes);
    op->table_keys = std::move(keys);
    op->table_values = std::move(values);
    if (op->table_keys.rows() != op->table_values.rows())
        throw EvaluatorFailure("table keys/values row mismatch");
    return op;
}

OpPtr make_attention(AttentionParams params) {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::HardAttention;
    op->attn = std::move(params);
    return op;
}

OpPtr make_lambda(Evaluator fn) {
    auto op = std::make_shared<Op>();
    op->kind = OpKind::Lambda;
    op->fn = std::move(fn);
    return op;
}

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

void Task::validate() const {
    std::set<std::vector<int>> seen;
    for (const auto& s : inputs) {
        if (!seen.insert(s).second) throw ConfigError("task inputs must be distinct");
    }
    if (reference_outputs && reference_outputs->size() != inputs.size())
        throw ConfigError("reference_outputs length must match inputs");
}

Vec Task::to_vector(const std::vector<int>& seq) {
    Vec v(static_cast<Eigen::Index>(seq.size()));
    for (std::size_t i = 0; i < seq.size(); ++i) v[static_cast<Eigen::Index>(i)] = seq[i];
    return v;
}

Vec Task::input_vector(std::size_t i) const { return to_vector(inputs.at(i)); }

// ---------------------------------------------------------------------------
// CausalModel
// ---------------------------------------------------------------------------

const Vec& Solution::value(const std::string& id) const {
    return values_[static_cast<std::size_t>(model_->index_of(id))];
}

const Vec& Solution::output() const { return value(model_->output_id()); }

CausalModel CausalModel::build(std::vector<Variable> variables, const std::string& input_id,
                               std::vector<Transition> transitions) {
    CausalModel m;
    std::unordered_map<std::string, int> decl;
    int input_count = 0, output_count = 0;
    for (std::size_t i = 0; i < variables.size(); ++i) {
        const auto& v = variables[i];
        if (v.arity < 1) throw ConfigError("variable '" + v.id + "' has arity < 1");
        if (!decl.emplace(v.id, static_cast<int>(i)).second)
            throw ConfigError("duplicate variable id '" + v.id + "'");
        if (v.kind == VarKind::Input) ++input_count;
        if (v.kind == VarKind::Output) {
            ++output_count;
            m.output_id_ = v.id;
        }
    }
    if (!decl.count(input_id) ||
        variables[static_cast<std::size_t>(decl[input_id])].kind != VarKind::Input)
        throw ConfigError("input id '" + input_id + "' is not declared as an input variable");
    if (input_count != 1) throw ConfigError("exactly one input variable required");
    if (output_count != 1) throw ConfigError("exactly one output variable required");
    m.input_id_ = input_id;

    std::unordered_map<std::string, Transition> by_target;
    for (auto& t : transitions) {
        if (!decl.count(t.target)) throw UnknownTarget("transition target '" + t.target + "'");
        if (t.target == input_id)
            throw DuplicateTransition("the input variable takes no transition");
        for (const auto& p : t.parents) {
            if (!decl.count(p))
                throw UnknownParentId("parent '" + p + "' of '" + t.target + "'");
        }
        if (!t.op) throw MissingTransition("null op for '" + t.target + "'");
        if (!by_target.emplace(t.target, std::move(t)).second)
            throw DuplicateTransition("two transitions for '" + t.target + "'");
    }
    for (const auto& v : variables) {
        if (v.kind != VarKind::Input && !by_target.count(v.id))
            throw MissingTransition("no transition for '" + v.id + "'");
    }

    // Kahn topological sort, stable in declaration order, input first.
    std::unordered_map<std::string, int> remaining;
    std::unordered_map<std::string, std::vector<std::string>> children;
    for (const auto& [target, t] : by_target) {
        std::set<std::string> uniq(t.parents.begin(), t.parents.end());
        remaining[target] = static_cast<int>(uniq.size());
        for (const auto& p : uniq) children[p].push_back(target);
    }
    for (auto& [p, ch] : children)
        std::sort(ch.begin(), ch.end(),
                  [&](const std::string& a, const std::string& b) { return decl[a] < decl[b]; });

    std::vector<std::string> ready;
    ready.push_back(input_id);
    for (const auto& v : variables)
        if (v.kind != VarKind::Input && remaining[v.id] == 0) ready.push_back(v.id);
    // Keep declaration order among initially-ready variables (input stays first).
    std::stable_sort(ready.begin() + 1, ready.end(),
                     [&](const std::string& a, const std::string& b) { return decl[a] < decl[b]; });

    std::vector<std::string> order;
    std::deque<std::string> queue(ready.begin(), ready.end());
    while (!queue.empty()) {
        std::string id = queue.front();
        queue.pop_front();
        order.push_back(id);
        for (const auto& c : children[id]) {
            if (--remaining[c] == 0) queue.push_back(c);
        }
    }
    if (order.size() != variables.size())
        throw CycleDetected("transition graph contains a cycle");

    for (const auto& id : order) {
        const auto& v = variables[static_cast<std::size_t>(decl[id])];
        m.index_[id] = static_cast<int>(m.vars_.size());
        m.vars_.push_back(v);
        if (v.kind == VarKind::Input)
            m.transitions_.push_back(Transition{});
        else
            m.transitions_.push_back(std::move(by_target[id]));
    }
    m.order_ = order;
    return m;
}

Solution CausalModel::solve(const Vec& input_value) const {
    std::vector<Vec> values(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        const auto& v = vars_[i];
        if (v.kind == VarKind::Input) {
            values[i] = input_value;
            continue;
        }
        const auto& t = transitions_[i];
        std::vector<const Vec*> parent_values;
        parent_values.reserve(t.parents.size());
        for (const auto& p : t.parents)
            parent_values.push_back(&values[static_cast<std::size_t>(index_.at(p))]);
        Vec result;
        try {
            result = t.op->evaluate(parent_values, input_value, v.arity);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw EvaluatorFailure("variable '" + v.id + "': " + e.what());
        }
        if (result.size() != v.arity) {
            std::ostringstream os;
            os << "variable '" << v.id << "': evaluator returned arity " << result.size()
               << ", expected " << v.arity;
            throw EvaluatorFailure(os.str());
        }
        values[i] = std::move(result);
    }
    return Solution(this, input_value, std::move(values));
}

CausalModel CausalModel::with_intervention(const Intervention& iv) const {
    if (!index_.count(iv.target)) throw UnknownTarget("intervention target '" + iv.target + "'");
    const int ti = index_.at(iv.target);
    if (vars_[static_cast<std::size_t>(ti)].kind == VarKind::Input)
        throw UnknownTarget("cannot intervene on the input variable");
    for (const auto& p : iv.new_parents) {
        if (!index_.count(p)) throw UnknownParentId("intervention parent '" + p + "'");
        if (index_.at(p) >= ti)
            throw OrderViolation("parent '" + p + "' does not precede '" + iv.target + "'");
    }
    if (!iv.new_op) throw MissingTransition("intervention with null op");
    CausalModel copy = *this;
    copy.transitions_[static_cast<std::size_t>(ti)] =
        Transition{iv.target, iv.new_parents, iv.new_op};
    return copy;
}

const Variable& CausalModel::variable(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownVariable("'" + id + "'");
    return vars_[static_cast<std::size_t>(it->second)];
}

const Transition* CausalModel::transition(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownVariable("'" + id + "'");
    const auto& t = transitions_[static_cast<std::size_t>(it->second)];
    return t.op ? &t : nullptr;
}

int CausalModel::index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownVariable("'" + id + "'");
    return it->second;
}

std::vector<std::string> CausalModel::descendants(const std::string& id,
                                                  bool include_self) const {
    const int start = index_of(id);
    std::vector<bool> mark(vars_.size(), false);
    mark[static_cast<std::size_t>(start)] = true;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        const auto& t = transitions_[i];
        if (!t.op) continue;
        for (const auto& p : t.parents) {
            if (mark[static_cast<std::size_t>(index_.at(p))]) {
                mark[i] = true;
                break;
            }
        }
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        if (!mark[i]) continue;
        if (!include_self && static_cast<int>(i) == start) continue;
        out.push_back(vars_[i].id);
    }
    return out;
}

bool CausalModel::reaches_output(const std::string& id) const {
    for (const auto& d : descendants(id, true))
        if (d == output_id_) return true;
    return false;
}

std::vector<std::string> CausalModel::hidden_ids() const {
    std::vector<std::string> out;
    for (const auto& v : vars_)
        if (v.kind != VarKind::Input) out.push_back(v.id);
    return out;
}

CausalModel build_model(std::vector<Variable> variables, const std::string& input_id,
                        std::vector<Transition> transitions) {
    return CausalModel::build(std::move(variables), input_id, std::move(transitions));
}

CausalModel apply_intervention(const CausalModel& model, const Intervention& iv) {
    return model.with_intervention(iv);
}

}  // namespace interpeq
