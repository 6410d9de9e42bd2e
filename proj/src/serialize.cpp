#include "interpeq/serialize.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace interpeq {

using nlohmann::json;

namespace {

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Mat mat_from_json(const json& j) {
    Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
    const auto& data = j.at("data");
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = data.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
    return m;
}

json vec_to_json(const Vec& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Vec vec_from_json(const json& j) {
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

json op_to_json(const Op& op) {
    json j;
    j["kind"] = op_kind_name(op.kind);
    switch (op.kind) {
        case OpKind::Affine:
            j["weight"] = mat_to_json(op.weight);
            j["bias"] = vec_to_json(op.bias);
            break;
        case OpKind::Constant:
            j["value"] = vec_to_json(op.value);
            break;
        case OpKind::Relu:
        case OpKind::Concat:
        case OpKind::MeanPool:
            break;
        case OpKind::ElementwiseTable: {
            json probes = json::array();
            for (const auto& p : op.probes)
                probes.push_back(json{{"parent", p.parent},
                                      {"offset", p.offset},
                                      {"width", p.width},
                                      {"onehot", p.onehot}});
            j["probes"] = std::move(probes);
            j["keys"] = mat_to_json(op.table_keys);
            j["values"] = mat_to_json(op.table_values);
            break;
        }
        case OpKind::HardAttention: {
            const auto& a = op.attn;
            j["query_parent"] = a.query_parent;
            j["query_offset"] = a.query_offset;
            j["query_width"] = a.query_width;
            j["key_offset"] = a.key_offset;
            j["key_width"] = a.key_width;
            j["value_offset"] = a.value_offset;
            j["value_width"] = a.value_width;
            j["predicate"] = mat_to_json(a.predicate);
            j["always_first_key"] = a.always_first_key;
            break;
        }
        case OpKind::Lambda:
            throw UnsupportedOp("lambda-backed transitions are not serializable");
    }
    return j;
}

OpPtr op_from_json(const json& j) {
    const OpKind kind = op_kind_from_name(j.at("kind").get<std::string>());
    switch (kind) {
        case OpKind::Affine:
            return make_affine(mat_from_json(j.at("weight")), vec_from_json(j.at("bias")));
        case OpKind::Constant:
            return make_constant(vec_from_json(j.at("value")));
        case OpKind::Relu:
            return make_relu();
        case OpKind::Concat:
            return make_concat();
        case OpKind::MeanPool:
            return make_mean_pool();
        case OpKind::ElementwiseTable: {
            std::vector<TableProbe> probes;
            for (const auto& pj : j.at("probes")) {
                TableProbe p;
                p.parent = pj.at("parent").get<int>();
                p.offset = pj.at("offset").get<int>();
                p.width = pj.at("width").get<int>();
                p.onehot = pj.at("onehot").get<bool>();
                probes.push_back(p);
            }
            return make_table(std::move(probes), mat_from_json(j.at("keys")),
                              mat_from_json(j.at("values")));
        }
        case OpKind::HardAttention: {
            AttentionParams a;
            a.query_parent = j.at("query_parent").get<int>();
            a.query_offset = j.at("query_offset").get<int>();
            a.query_width = j.at("query_width").get<int>();
            a.key_offset = j.at("key_offset").get<int>();
            a.key_width = j.at("key_width").get<int>();
            a.value_offset = j.at("value_offset").get<int>();
            a.value_width = j.at("value_width").get<int>();
            a.predicate = mat_from_json(j.at("predicate"));
            a.always_first_key = j.at("always_first_key").get<bool>();
            return make_attention(std::move(a));
        }
        case OpKind::Lambda:
            break;
    }
    throw UnsupportedOp("cannot deserialize op kind");
}

const char* kind_name(VarKind k) {
    switch (k) {
        case VarKind::Input: return "input";
        case VarKind::Hidden: return "hidden";
        case VarKind::Output: return "output";
    }
    return "?";
}

VarKind kind_from_name(const std::string& s) {
    if (s == "input") return VarKind::Input;
    if (s == "hidden") return VarKind::Hidden;
    if (s == "output") return VarKind::Output;
    throw ConfigError("unknown variable kind '" + s + "'");
}

}  // namespace

json model_to_json(const CausalModel& model) {
    json vars = json::array();
    json transitions = json::array();
    json order = json::array();
    for (const auto& id : model.order()) {
        const auto& v = model.variable(id);
        vars.push_back(json{{"id", v.id}, {"arity", v.arity}, {"kind", kind_name(v.kind)}});
        order.push_back(id);
        const Transition* t = model.transition(id);
        if (t) {
            transitions.push_back(json{{"target", t->target},
                                       {"parents", t->parents},
                                       {"op", op_to_json(*t->op)}});
        }
    }
    return json{{"variables", std::move(vars)},
                {"transitions", std::move(transitions)},
                {"order", std::move(order)}};
}

CausalModel model_from_json(const json& j) {
    std::vector<Variable> vars;
    std::string input_id;
    for (const auto& vj : j.at("variables")) {
        Variable v;
        v.id = vj.at("id").get<std::string>();
        v.arity = vj.at("arity").get<int>();
        v.kind = kind_from_name(vj.at("kind").get<std::string>());
        if (v.kind == VarKind::Input) input_id = v.id;
        vars.push_back(std::move(v));
    }
    std::vector<Transition> transitions;
    for (const auto& tj : j.at("transitions")) {
        Transition t;
        t.target = tj.at("target").get<std::string>();
        t.parents = tj.at("parents").get<std::vector<std::string>>();
        t.op = op_from_json(tj.at("op"));
        transitions.push_back(std::move(t));
    }
    return build_model(std::move(vars), input_id, std::move(transitions));
}

void save_model(const CausalModel& model, const std::string& path) {
    write_file(path, model_to_json(model).dump(2) + "\n");
}

CausalModel load_model(const std::string& path) {
    return model_from_json(json::parse(read_file(path)));
}

json task_to_json(const Task& task) {
    json j;
    j["alphabet_size"] = task.alphabet_size;
    j["inputs"] = task.inputs;
    if (task.reference_outputs) {
        json refs = json::array();
        for (const auto& r : *task.reference_outputs) refs.push_back(vec_to_json(r));
        j["reference_outputs"] = std::move(refs);
    }
    return j;
}

Task task_from_json(const json& j) {
    Task t;
    t.alphabet_size = j.at("alphabet_size").get<int>();
    t.inputs = j.at("inputs").get<std::vector<std::vector<int>>>();
    if (j.contains("reference_outputs")) {
        std::vector<Vec> refs;
        for (const auto& rj : j.at("reference_outputs")) refs.push_back(vec_from_json(rj));
        t.reference_outputs = std::move(refs);
    }
    t.validate();
    return t;
}

void save_task(const Task& task, const std::string& path) {
    write_file(path, task_to_json(task).dump(2) + "\n");
}

Task load_task(const std::string& path) { return task_from_json(json::parse(read_file(path))); }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write '" + path + "'");
    out << contents;
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace interpeq
