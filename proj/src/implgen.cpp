#include "interpeq/implgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "interpeq/serialize.hpp"

namespace interpeq {

using nlohmann::json;

const char* strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::ConstantAblate: return "constant-ablate";
        case StrategyKind::ResampleAblate: return "resample-ablate";
        case StrategyKind::GaussianPerturb: return "gaussian-perturb";
        case StrategyKind::DeadComponentInsert: return "dead-component-insert";
        case StrategyKind::UnusedSubspaceRotate: return "unused-subspace-rotate";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
    if (name == "constant-ablate") return StrategyKind::ConstantAblate;
    if (name == "resample-ablate") return StrategyKind::ResampleAblate;
    if (name == "gaussian-perturb") return StrategyKind::GaussianPerturb;
    if (name == "dead-component-insert") return StrategyKind::DeadComponentInsert;
    if (name == "unused-subspace-rotate") return StrategyKind::UnusedSubspaceRotate;
    throw ConfigError("unknown strategy '" + name + "'");
}

std::vector<ComponentScore> score_components(const CausalModel& model, const Task& task,
                                             StrategyKind ablation, std::uint64_t seed) {
    if (task.inputs.empty()) throw EmptyTask("score_components needs at least one input");
    std::vector<Vec> base_outputs;
    base_outputs.reserve(task.inputs.size());
    std::vector<Solution> base_solutions;
    for (std::size_t i = 0; i < task.inputs.size(); ++i)
        base_solutions.push_back(model.solve(task.input_vector(i)));
    for (const auto& s : base_solutions) base_outputs.push_back(s.output());

    Rng rng = Rng(seed).split(0x5c07e);
    std::vector<ComponentScore> scores;
    for (const auto& id : model.hidden_ids()) {
        const auto& var = model.variable(id);
        Vec replacement = Vec::Zero(var.arity);
        if (ablation == StrategyKind::ResampleAblate) {
            const std::size_t donor = rng.next_below(task.inputs.size());
            replacement = base_solutions[donor].value(id);
        }
        CausalModel ablated = model.with_intervention({id, {}, make_constant(replacement)});
        double acc = 0.0;
        for (std::size_t i = 0; i < task.inputs.size(); ++i) {
            const Vec out = ablated.solve(task.input_vector(i)).output();
            const double ref = std::max(base_outputs[i].norm(), 1e-12);
            acc += (out - base_outputs[i]).norm() / ref;
        }
        double importance = acc / static_cast<double>(task.inputs.size());
        importance = std::clamp(importance, 0.0, 1.0);
        scores.push_back({id, importance});
    }
    return scores;
}

namespace {

// Clone the model's variables and transitions so extra dead components can be
// appended through the ordinary builder.
void clone_structure(const CausalModel& m, std::vector<Variable>* vars,
                     std::vector<Transition>* transitions) {
    for (const auto& id : m.order()) {
        vars->push_back(m.variable(id));
        const Transition* t = m.transition(id);
        if (t) transitions->push_back(*t);
    }
}

OpPtr perturb_op(const Op& op, double magnitude, Rng& rng) {
    auto next = std::make_shared<Op>(op);
    switch (op.kind) {
        case OpKind::Affine:
            for (Eigen::Index i = 0; i < next->weight.size(); ++i)
                next->weight.data()[i] += magnitude * rng.next_gaussian();
            for (Eigen::Index i = 0; i < next->bias.size(); ++i)
                next->bias[i] += magnitude * rng.next_gaussian();
            break;
        case OpKind::Constant:
            for (Eigen::Index i = 0; i < next->value.size(); ++i)
                next->value[i] += magnitude * rng.next_gaussian();
            break;
        case OpKind::ElementwiseTable:
            for (Eigen::Index i = 0; i < next->table_values.size(); ++i)
                next->table_values.data()[i] += magnitude * rng.next_gaussian();
            break;
        case OpKind::Lambda: {
            // additive output noise, drawn once per variant
            Evaluator inner = op.fn;
            auto noise = std::make_shared<Vec>();
            const double mag = magnitude;
            auto noise_seed = rng.next_u64();
            next->fn = [inner, noise, mag, noise_seed](const std::vector<const Vec*>& parents,
                                                       const Vec& input) {
                Vec v = inner(parents, input);
                if (noise->size() != v.size()) {
                    Rng local(noise_seed);
                    noise->resize(v.size());
                    for (Eigen::Index i = 0; i < v.size(); ++i)
                        (*noise)[i] = mag * local.next_gaussian();
                }
                return v + *noise;
            };
            break;
        }
        default:
            return nullptr;  // structural ops (concat, attention, ...) are not perturbed
    }
    return next;
}

Mat random_rotation(int width, double magnitude, Rng& rng) {
    Mat g(width, width);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.next_gaussian();
    Mat mixed = Mat::Identity(width, width) + magnitude * g;
    Eigen::HouseholderQR<Mat> qr(mixed);
    Mat q = qr.householderQ() * Mat::Identity(width, width);
    // Fix signs so magnitude 0 yields exactly the identity.
    Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < width; ++i)
        if (r(i, i) < 0) q.col(i) *= -1.0;
    return q;
}

}  // namespace

CausalModel sample_variant(const CausalModel& model, const std::vector<std::string>& unimportant,
                           const VariantStrategy& strategy,
                           const std::vector<RotatableBlock>& rotatable, const Task* task,
                           std::vector<std::string>* touched) {
    Rng rng = Rng(strategy.seed).split(0x7a41a7);
    for (const auto& id : unimportant) {
        if (id == model.output_id()) throw TargetIsOutput("'" + id + "'");
        if (id == model.input_id()) throw TargetIsInput("'" + id + "'");
    }
    auto record = [&](const std::string& id) {
        if (touched) touched->push_back(id);
    };
    switch (strategy.kind) {
        case StrategyKind::ConstantAblate: {
            if (unimportant.empty()) throw NoUnimportantComponents("constant-ablate");
            const auto& id = unimportant[rng.next_below(unimportant.size())];
            const auto& var = model.variable(id);
            record(id);
            return model.with_intervention({id, {}, make_constant(Vec::Zero(var.arity))});
        }
        case StrategyKind::ResampleAblate: {
            if (unimportant.empty()) throw NoUnimportantComponents("resample-ablate");
            const auto& id = unimportant[rng.next_below(unimportant.size())];
            // Freeze the variable at its own solution on a donor input.
            if (!task || task->inputs.empty())
                throw EmptyTask("resample-ablate needs a task to draw donors from");
            const std::size_t donor = rng.next_below(task->inputs.size());
            const Vec v = model.solve(task->input_vector(donor)).value(id);
            record(id);
            return model.with_intervention({id, {}, make_constant(v)});
        }
        case StrategyKind::GaussianPerturb: {
            if (unimportant.empty()) throw NoUnimportantComponents("gaussian-perturb");
            // try targets in seeded order until one has perturbable params
            std::vector<std::size_t> order(unimportant.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.next_below(i)]);
            for (std::size_t oi : order) {
                const auto& id = unimportant[oi];
                const Transition* t = model.transition(id);
                if (!t) continue;
                OpPtr next = perturb_op(*t->op, strategy.magnitude, rng);
                if (!next) continue;
                record(id);
                return model.with_intervention({id, t->parents, next});
            }
            throw NoUnimportantComponents("no perturbable unimportant component");
        }
        case StrategyKind::DeadComponentInsert: {
            const int count = std::max(1, static_cast<int>(std::llround(strategy.magnitude)));
            std::vector<Variable> vars;
            std::vector<Transition> transitions;
            clone_structure(model, &vars, &transitions);
            // anchor: any hidden variable (or the input when none fits)
            std::string anchor = model.input_id();
            int anchor_arity = model.variable(anchor).arity;
            for (const auto& id : model.hidden_ids()) {
                if (id != model.output_id()) {
                    anchor = id;
                    anchor_arity = model.variable(id).arity;
                    break;
                }
            }
            for (int i = 0; i < count; ++i) {
                std::ostringstream os;
                os << "dead." << strategy.seed << "." << i;
                const int arity = 4;
                Mat w(arity, anchor_arity);
                for (Eigen::Index k = 0; k < w.size(); ++k)
                    w.data()[k] = strategy.magnitude * rng.next_gaussian();
                vars.push_back({os.str(), arity, VarKind::Hidden});
                transitions.push_back({os.str(), {anchor}, make_affine(w, Vec::Zero(arity))});
                record(os.str());
            }
            return build_model(std::move(vars), model.input_id(), std::move(transitions));
        }
        case StrategyKind::UnusedSubspaceRotate: {
            std::vector<RotatableBlock> usable;
            std::set<std::string> allowed(unimportant.begin(), unimportant.end());
            for (const auto& b : rotatable)
                if (allowed.empty() || allowed.count(b.variable)) usable.push_back(b);
            if (usable.empty())
                throw NoUnimportantComponents("no rotatable blocks available");
            const auto& block = usable[rng.next_below(usable.size())];
            const Transition* t = model.transition(block.variable);
            if (!t || t->op->kind != OpKind::Affine)
                throw NoUnimportantComponents("rotatable block is not affine-backed");
            const Mat q = random_rotation(block.width, std::max(strategy.magnitude, 0.25), rng);
            auto next = std::make_shared<Op>(*t->op);
            next->weight.middleRows(block.offset, block.width) =
                q * next->weight.middleRows(block.offset, block.width);
            next->bias.segment(block.offset, block.width) =
                q * next->bias.segment(block.offset, block.width);
            record(block.variable);
            return model.with_intervention({block.variable, t->parents, next});
        }
    }
    throw ConfigError("unhandled strategy kind");
}

PreservationReport verify_preservation(const CausalModel& base, const CausalModel& variant,
                                       const Task& task, const FaithfulnessBudget& budget,
                                       const std::vector<std::string>& important_ids,
                                       std::uint64_t seed, int interchange_checks) {
    PreservationReport report;
    report.output_residual = max_output_gap(base, variant, task);

    Rng rng = Rng(seed).split(0xc0ffee);
    double worst = 0.0;
    if (!important_ids.empty() && !task.inputs.empty()) {
        for (int c = 0; c < interchange_checks; ++c) {
            const auto& id = important_ids[rng.next_below(important_ids.size())];
            if (!variant.has_variable(id)) {
                worst = std::numeric_limits<double>::infinity();
                break;
            }
            const std::size_t donor = rng.next_below(task.inputs.size());
            const Vec donor_base = base.solve(task.input_vector(donor)).value(id);
            const Vec donor_variant = variant.solve(task.input_vector(donor)).value(id);
            CausalModel base_p = base.with_intervention({id, {}, make_constant(donor_base)});
            CausalModel variant_p =
                variant.with_intervention({id, {}, make_constant(donor_variant)});
            worst = std::max(worst, max_output_gap(base_p, variant_p, task));
        }
    }
    report.interchange_residual = worst;
    const double eta = budget.eta;
    auto ok = [eta](double r) { return r < eta || r == 0.0; };
    report.passed = ok(report.output_residual) && ok(report.interchange_residual);
    return report;
}

std::vector<const CausalModel*> ImplementationSet::all_models() const {
    std::vector<const CausalModel*> out;
    out.push_back(&base);
    for (const auto& v : variants) out.push_back(&v);
    return out;
}

ImplementationSet generate_implementations(const CausalModel& model, const Task& task, int count,
                                           const GeneratorConfig& cfg, std::uint64_t seed) {
    if (count < 1) throw ConfigError("count must be >= 1");
    if (task.inputs.empty()) throw EmptyTask("generate_implementations needs task inputs");
    if (cfg.strategies.empty()) throw ConfigError("no strategies configured");

    auto scores = score_components(model, task, StrategyKind::ConstantAblate, seed);
    std::vector<std::string> unimportant, important;
    for (const auto& s : scores) {
        if (s.id == model.output_id()) {
            important.push_back(s.id);
            continue;
        }
        (s.importance < cfg.importance_threshold ? unimportant : important).push_back(s.id);
    }
    bool needs_targets = false;
    for (const auto& st : cfg.strategies) {
        if (st.kind == StrategyKind::ConstantAblate || st.kind == StrategyKind::ResampleAblate ||
            st.kind == StrategyKind::GaussianPerturb)
            needs_targets = true;
    }
    if (unimportant.empty() && needs_targets)
        throw NoUnimportantComponents("every component clears the importance threshold");

    ImplementationSet set;
    set.base = model;
    set.budget = cfg.budget;
    set.seed = seed;

    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Rng slot = root.split(static_cast<std::uint64_t>(i) + 1);
        bool accepted = false;
        for (int attempt = 0; attempt < cfg.retry_cap; ++attempt) {
            Rng draw = slot.split(static_cast<std::uint64_t>(attempt));
            VariantStrategy st = cfg.strategies[draw.next_below(cfg.strategies.size())];
            st.seed = draw.next_u64();
            CausalModel candidate;
            std::vector<std::string> touched;
            try {
                candidate = sample_variant(model, unimportant, st, cfg.rotatable, &task, &touched);
            } catch (const NoUnimportantComponents&) {
                continue;
            }
            PreservationReport pr = verify_preservation(model, candidate, task, cfg.budget,
                                                        important, st.seed, cfg.interchange_checks);
            if (!pr.passed) continue;
            VariantProvenance prov;
            prov.kind = st.kind;
            prov.seed = st.seed;
            prov.targets = std::move(touched);
            prov.output_residual = pr.output_residual;
            prov.retries = attempt;
            set.variants.push_back(std::move(candidate));
            set.provenance.push_back(std::move(prov));
            accepted = true;
            break;
        }
        if (!accepted)
            throw BudgetExhausted("variant slot " + std::to_string(i) + " failed after " +
                                  std::to_string(cfg.retry_cap) + " attempts");
    }
    return set;
}

void save_implementation_set(const ImplementationSet& set, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_model(set.base, dir + "/base.json");
    json manifest;
    manifest["seed"] = set.seed;
    manifest["eta"] = set.budget.eta;
    json variants = json::array();
    for (std::size_t i = 0; i < set.variants.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "variant_%03zu.json", i);
        save_model(set.variants[i], dir + "/" + name);
        const auto& p = set.provenance[i];
        variants.push_back(json{{"file", name},
                                {"strategy", strategy_name(p.kind)},
                                {"seed", p.seed},
                                {"targets", p.targets},
                                {"output_residual", p.output_residual},
                                {"retries", p.retries}});
    }
    manifest["variants"] = std::move(variants);
    write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

ImplementationSet load_implementation_set(const std::string& dir) {
    ImplementationSet set;
    const json manifest = json::parse(read_file(dir + "/manifest.json"));
    set.base = load_model(dir + "/base.json");
    set.seed = manifest.at("seed").get<std::uint64_t>();
    set.budget.eta = manifest.at("eta").get<double>();
    for (const auto& vj : manifest.at("variants")) {
        set.variants.push_back(load_model(dir + "/" + vj.at("file").get<std::string>()));
        VariantProvenance p;
        p.kind = strategy_from_name(vj.at("strategy").get<std::string>());
        p.seed = vj.at("seed").get<std::uint64_t>();
        p.output_residual = vj.at("output_residual").get<double>();
        p.retries = vj.at("retries").get<int>();
        set.provenance.push_back(std::move(p));
    }
    return set;
}

}  // namespace interpeq
