#include "interpeq/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace interpeq {

const AlignmentEntry* Alignment::entry_for(const std::string& high_id) const {
    for (const auto& e : entries)
        if (e.high_id == high_id) return &e;
    return nullptr;
}

void Alignment::validate_against(const CausalModel& low, const CausalModel& high) const {
    std::set<std::string> seen_low;
    std::set<std::string> covered;
    for (const auto& e : entries) {
        if (!high.has_variable(e.high_id))
            throw UnknownVariable("alignment maps onto unknown high variable '" + e.high_id + "'");
        if (!covered.insert(e.high_id).second)
            throw ConfigError("two alignment entries for high variable '" + e.high_id + "'");
        for (const auto& l : e.low_ids) {
            if (!low.has_variable(l))
                throw UnknownVariable("alignment preimage names unknown low variable '" + l + "'");
            if (!seen_low.insert(l).second)
                throw ConfigError("low variable '" + l + "' appears in two preimages");
        }
        if (!e.value_fn) throw ConfigError("alignment entry without a value map");
    }
    for (const auto& id : high.hidden_ids()) {
        if (!covered.count(id))
            throw UnmappedHighVariable("high variable '" + id + "' has no preimage");
    }
}

Alignment identity_alignment(const CausalModel& model) {
    Alignment a;
    for (const auto& id : model.hidden_ids()) {
        AlignmentEntry e;
        e.high_id = id;
        e.low_ids = {id};
        e.value_fn = [](const std::vector<const Vec*>& vals) { return *vals[0]; };
        a.entries.push_back(std::move(e));
    }
    a.intervention_map = [](const Intervention& iv) { return std::optional<Intervention>(iv); };
    return a;
}

Alignment trivial_alignment(const CausalModel& low, const CausalModel& trivial_high) {
    Alignment a;
    AlignmentEntry e;
    e.high_id = trivial_high.output_id();
    e.low_ids = {low.output_id()};
    e.value_fn = [](const std::vector<const Vec*>& vals) { return *vals[0]; };
    a.entries.push_back(std::move(e));
    const std::string low_out = low.output_id();
    const std::string high_out = trivial_high.output_id();
    a.intervention_map = [low_out, high_out](const Intervention& iv) -> std::optional<Intervention> {
        if (iv.target != low_out) return std::nullopt;
        Intervention out = iv;
        out.target = high_out;
        out.new_parents = {};  // the trivial output variable keeps no structural parents
        if (iv.new_op->kind != OpKind::Constant)
            return std::nullopt;  // only value-level output patches translate
        return out;
    };
    return a;
}

CausalModel trivial_model_of(const CausalModel& reference) {
    const auto& in = reference.variable(reference.input_id());
    const auto& out = reference.variable(reference.output_id());
    std::vector<Variable> vars = {
        {in.id, in.arity, VarKind::Input},
        {out.id, out.arity, VarKind::Output},
    };
    auto ref = std::make_shared<CausalModel>(reference);
    Transition t;
    t.target = out.id;
    t.parents = {};
    t.op = make_lambda([ref](const std::vector<const Vec*>&, const Vec& input) {
        return ref->solve(input).output();
    });
    return build_model(std::move(vars), in.id, {std::move(t)});
}

CircuitReport check_circuit(const CausalModel& model, const Task& task, double tolerance) {
    if (!task.reference_outputs)
        throw ConfigError("check_circuit requires reference outputs on the task");
    CircuitReport r;
    r.input_accepts = true;
    r.hidden_real_valued = true;
    r.output_matches = true;

    // Property 3: designated output variable with no successors.
    r.output_terminal = true;
    for (const auto& id : model.order()) {
        const Transition* t = model.transition(id);
        if (!t) continue;
        for (const auto& p : t->parents)
            if (p == model.output_id()) r.output_terminal = false;
    }

    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        std::optional<Solution> sol;
        try {
            sol = model.solve(task.input_vector(i));
        } catch (const Error&) {
            r.input_accepts = false;
            continue;
        }
        for (std::size_t k = 0; k < sol->size(); ++k) {
            if (!sol->value_at(static_cast<int>(k)).allFinite()) r.hidden_real_valued = false;
        }
        const double dev = (sol->output() - task.reference_outputs->at(i)).norm();
        r.worst_deviation = std::max(r.worst_deviation, dev);
    }
    r.output_matches = r.worst_deviation <= tolerance;
    return r;
}

namespace {

double obs_residual(const CausalModel& low, const CausalModel& high, const Alignment& a,
                    const Vec& input, std::vector<CheckItem>* checks, const std::string& tag,
                    double tolerance) {
    Solution ls = low.solve(input);
    Solution hs = high.solve(input);
    double worst = 0.0;
    for (const auto& e : a.entries) {
        std::vector<const Vec*> pooled;
        pooled.reserve(e.low_ids.size());
        for (const auto& id : e.low_ids) pooled.push_back(&ls.value(id));
        const Vec mapped = e.value_fn(pooled);
        const Vec& actual = hs.value(e.high_id);
        double res = 0.0;
        if (mapped.size() != actual.size())
            res = std::numeric_limits<double>::infinity();
        else
            res = (mapped - actual).norm();
        worst = std::max(worst, res);
        if (checks)
            checks->push_back({tag + e.high_id, res, res <= tolerance});
    }
    return worst;
}

}  // namespace

AbstractionReport check_abstraction(const CausalModel& low, const CausalModel& high,
                                    const Alignment& a, const Task& task,
                                    const std::vector<Intervention>& suite, double tolerance) {
    a.validate_against(low, high);
    AbstractionReport report;

    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        const double res = obs_residual(low, high, a, task.input_vector(i), nullptr, "", tolerance);
        report.max_obs_residual = std::max(report.max_obs_residual, res);
    }
    report.checks.push_back(
        {"observational", report.max_obs_residual, report.max_obs_residual <= tolerance});

    for (std::size_t s = 0; s < suite.size(); ++s) {
        const auto& iv = suite[s];
        const std::string tag = "do(" + iv.target + ")#" + std::to_string(s);
        if (!a.intervention_map) {
            report.checks.push_back({tag + ":no-omega", std::numeric_limits<double>::infinity(), false});
            continue;
        }
        auto mapped = a.intervention_map(iv);
        if (!mapped) {
            report.checks.push_back({tag + ":unmappable", std::numeric_limits<double>::infinity(), false});
            continue;
        }
        CausalModel low_do = low.with_intervention(iv);
        CausalModel high_do = high.with_intervention(*mapped);
        double worst = 0.0;
        for (std::size_t i = 0; i < task.inputs.size(); ++i)
            worst = std::max(worst,
                             obs_residual(low_do, high_do, a, task.input_vector(i), nullptr, "", tolerance));
        report.max_inter_residual = std::max(report.max_inter_residual, worst);
        report.checks.push_back({tag, worst, worst <= tolerance});
    }

    report.passed = true;
    for (const auto& c : report.checks) report.passed = report.passed && c.pass;
    return report;
}

bool check_interpretation(const CausalModel& circuit, const CausalModel& interp,
                          const Alignment& a, const Task& task, const FaithfulnessBudget& budget,
                          const std::vector<Intervention>& suite, double abstraction_tol) {
    AbstractionReport abs = check_abstraction(circuit, interp, a, task, suite, abstraction_tol);
    if (!abs.passed) return false;
    const double gap = max_output_gap(circuit, interp, task);
    return gap < budget.eta || gap == 0.0;  // eta = 0 demands exact agreement
}

Alignment compose_alignments(const Alignment& a12, const Alignment& a23) {
    Alignment out;
    for (const auto& e23 : a23.entries) {
        AlignmentEntry e;
        e.high_id = e23.high_id;
        // Resolve each middle variable through a12 and record slice extents.
        struct MidPiece {
            std::function<Vec(const std::vector<const Vec*>&)> fn;
            std::size_t begin, count;
        };
        std::vector<MidPiece> pieces;
        std::size_t cursor = 0;
        for (const auto& mid : e23.low_ids) {
            const AlignmentEntry* e12 = a12.entry_for(mid);
            if (!e12)
                throw DomainMismatch("middle variable '" + mid + "' is not in a12's codomain");
            pieces.push_back({e12->value_fn, cursor, e12->low_ids.size()});
            cursor += e12->low_ids.size();
            for (const auto& l : e12->low_ids) e.low_ids.push_back(l);
        }
        auto mid_fn = e23.value_fn;
        e.value_fn = [pieces, mid_fn](const std::vector<const Vec*>& lows) {
            std::vector<Vec> mids;
            mids.reserve(pieces.size());
            for (const auto& p : pieces) {
                std::vector<const Vec*> slice(lows.begin() + static_cast<std::ptrdiff_t>(p.begin),
                                              lows.begin() + static_cast<std::ptrdiff_t>(p.begin + p.count));
                mids.push_back(p.fn(slice));
            }
            std::vector<const Vec*> mid_ptrs;
            mid_ptrs.reserve(mids.size());
            for (const auto& m : mids) mid_ptrs.push_back(&m);
            return mid_fn(mid_ptrs);
        };
        out.entries.push_back(std::move(e));
    }
    auto w12 = a12.intervention_map;
    auto w23 = a23.intervention_map;
    out.intervention_map = [w12, w23](const Intervention& iv) -> std::optional<Intervention> {
        if (!w12 || !w23) return std::nullopt;
        auto mid = w12(iv);
        if (!mid) return std::nullopt;
        return w23(*mid);
    };
    return out;
}

std::vector<Intervention> make_default_suite(const CausalModel& model, const Task& task,
                                             std::uint64_t seed) {
    std::vector<Intervention> suite;
    Rng rng = Rng(seed).split(0xab1a7e);
    for (const auto& id : model.hidden_ids()) {
        const auto& v = model.variable(id);
        suite.push_back({id, {}, make_constant(Vec::Zero(v.arity))});
        if (!task.inputs.empty()) {
            const std::size_t pick = rng.next_below(task.inputs.size());
            const Vec donor = model.solve(task.input_vector(pick)).value(id);
            suite.push_back({id, {}, make_constant(donor)});
        }
    }
    return suite;
}

double max_output_gap(const CausalModel& a, const CausalModel& b, const Task& task) {
    double worst = 0.0;
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        const Vec va = a.solve(task.input_vector(i)).output();
        const Vec vb = b.solve(task.input_vector(i)).output();
        if (va.size() != vb.size()) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, (va - vb).norm());
    }
    return worst;
}

}  // namespace interpeq
