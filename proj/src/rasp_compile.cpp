#include "interpeq/rasp_compile.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "interpeq/rng.hpp"

namespace interpeq {
namespace rasp {

namespace {

constexpr std::size_t kDomainCap = 20000;

struct Enc {
    bool onehot = true;
    std::vector<double> domain;
    bool empty_possible = false;
    int width() const { return onehot ? static_cast<int>(domain.size()) : 1; }
};

enum class UnitKind { TokenEmb, IndexEmb, Const, Table, Head, Pair, Snap };

struct Unit {
    UnitKind kind = UnitKind::Table;
    int sop = -1;       // owning s-op (or -1 for inserted pair/snap helpers)
    int layer = 0;      // 0 = embedding row
    std::string name;   // id stem, e.g. "sorted"

    // tables (elementwise / pair / snap)
    std::vector<int> operands;  // unit indices probed by the table

    // heads
    int selector = -1;
    bool is_width = false, is_gather = false, is_aggregate = false;
    int key_unit = -1, query_unit = -1, value_unit = -1;

    Enc enc;
    int out_width = 0;   // variable width; enc block sits at [enc_local, enc_local+enc.width)
    int enc_local = 0;
    int res_offset = -1; // offset of the unit's output inside the residual stream
};

std::vector<double> sorted_unique(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

int index_in(const std::vector<double>& domain, double v) {
    for (std::size_t i = 0; i < domain.size(); ++i)
        if (domain[i] == v) return static_cast<int>(i);
    return -1;
}

// (key_code, semantic value) pairs an operand block can decode to.
std::vector<std::pair<double, double>> key_codes(const Enc& enc) {
    std::vector<std::pair<double, double>> out;
    if (enc.onehot) {
        for (std::size_t i = 0; i < enc.domain.size(); ++i)
            out.emplace_back(static_cast<double>(i), enc.domain[i]);
        if (enc.empty_possible) out.emplace_back(-1.0, 0.0);
    } else {
        for (double v : enc.domain) out.emplace_back(v, v);
    }
    return out;
}

double decode_enc_block(const Enc& enc, int local, const Vec& v) {
    if (!enc.onehot) return v[local];
    int best = -1;
    double best_val = 0.5;
    for (int i = 0; i < enc.width(); ++i) {
        if (v[local + i] > best_val) {
            best_val = v[local + i];
            best = i;
        }
    }
    return best < 0 ? 0.0 : enc.domain[static_cast<std::size_t>(best)];
}

struct Compiler {
    const Program& prog;
    const CompileConfig& cfg;
    int n, alpha;

    std::vector<Unit> units;
    std::vector<int> sop_unit;            // sop id -> public unit index
    std::map<std::pair<int, int>, int> pair_units;  // (sop1, sop2) -> unit
    std::vector<std::vector<double>> sop_domain;
    int out_unit = -1;
    int token_unit = -1;  // shared embedding units (token unit carries the BOS flag)
    int index_unit = -1;

    Compiler(const Program& p, const CompileConfig& c)
        : prog(p), cfg(c), n(c.max_len), alpha(c.alphabet_size) {}

    // ---- domain analysis --------------------------------------------------

    void compute_domains() {
        sop_domain.resize(prog.sops.size());
        for (std::size_t i = 0; i < prog.sops.size(); ++i) {
            const Sop& s = prog.sops[i];
            std::vector<double>& d = sop_domain[i];
            switch (s.kind) {
                case SopKind::Tokens:
                    for (int v = 1; v <= alpha; ++v) d.push_back(v);
                    break;
                case SopKind::Indices:
                    for (int v = 0; v < n; ++v) d.push_back(v);
                    break;
                case SopKind::Number:
                    d.push_back(s.number);
                    break;
                case SopKind::Elementwise: {
                    const auto& a = sop_domain[static_cast<std::size_t>(s.args[0])];
                    if (s.args.size() == 1) {
                        for (double x : a) d.push_back(eval_scalar(s.eop, x, 0.0));
                    } else {
                        const auto& b = sop_domain[static_cast<std::size_t>(s.args[1])];
                        const auto ea = effective_domain(s.args[0]);
                        const auto eb = effective_domain(s.args[1]);
                        if (ea.size() * eb.size() > kDomainCap)
                            throw UnsupportedOp("elementwise domain product too large for s-op '" +
                                                s.name + "'");
                        for (double x : ea)
                            for (double y : eb) d.push_back(eval_scalar(s.eop, x, y));
                        (void)a;
                        (void)b;
                    }
                    d = sorted_unique(std::move(d));
                    break;
                }
                case SopKind::Gather: {
                    d = effective_domain(s.args[0]);
                    d.push_back(0.0);
                    d = sorted_unique(std::move(d));
                    break;
                }
                case SopKind::Aggregate: {
                    const auto vals = effective_domain(s.args[0]);
                    for (double v : vals)
                        if (v != 0.0 && v != 1.0)
                            throw UnsupportedOp(
                                "aggregate requires boolean values; s-op '" + s.name +
                                "' aggregates a value with domain element " + std::to_string(v));
                    d.push_back(0.0);
                    for (int j = 1; j <= n; ++j)
                        for (int k = 0; k <= j; ++k)
                            d.push_back(static_cast<double>(k) / static_cast<double>(j));
                    d = sorted_unique(std::move(d));
                    break;
                }
                case SopKind::Width:
                    for (int v = 0; v <= n; ++v) d.push_back(v);
                    break;
            }
        }
    }

    // Domain including the empty-selection 0.0 where applicable.
    std::vector<double> effective_domain(int sop_id) const {
        std::vector<double> d = sop_domain[static_cast<std::size_t>(sop_id)];
        const Sop& s = prog.sop(sop_id);
        if (s.kind == SopKind::Gather) {
            d.push_back(0.0);
            d = sorted_unique(std::move(d));
        }
        return d;
    }

    // ---- unit construction -------------------------------------------------

    int add_unit(Unit u) {
        units.push_back(std::move(u));
        return static_cast<int>(units.size() - 1);
    }

    int mlp_ready_layer(int unit) const {
        // Earliest layer whose MLP can read this unit: same layer for heads
        // (attention precedes the MLP within a layer), next layer otherwise.
        const Unit& u = units[static_cast<std::size_t>(unit)];
        return u.kind == UnitKind::Head ? std::max(1, u.layer) : u.layer + 1;
    }

    int attention_ready_layer(int unit) const {
        // Attention reads the previous layer's residual.
        return units[static_cast<std::size_t>(unit)].layer + 1;
    }

    int require_select_operand(int sop_id) {
        const int u = sop_unit[static_cast<std::size_t>(sop_id)];
        const Unit& unit = units[static_cast<std::size_t>(u)];
        if (!unit.enc.onehot)
            throw UnsupportedOp("selector operand '" + prog.sop(sop_id).name +
                                "' is not categorical");
        if (unit.enc.empty_possible)
            throw UnsupportedOp("selector operand '" + prog.sop(sop_id).name +
                                "' may be empty; gate it through an elementwise op first");
        return u;
    }

    int pair_unit_for(int sop1, int sop2) {
        auto key = std::make_pair(sop1, sop2);
        auto it = pair_units.find(key);
        if (it != pair_units.end()) return it->second;
        const int u1 = require_select_operand(sop1);
        const int u2 = require_select_operand(sop2);
        const Enc& e1 = units[static_cast<std::size_t>(u1)].enc;
        const Enc& e2 = units[static_cast<std::size_t>(u2)].enc;
        if (e1.domain.size() * e2.domain.size() > kDomainCap)
            throw UnsupportedOp("selector pair domain too large");
        Unit u;
        u.kind = UnitKind::Pair;
        u.operands = {u1, u2};
        u.name = "pair_" + prog.sop(sop1).name + "_" + prog.sop(sop2).name;
        u.enc.onehot = true;
        u.enc.empty_possible = false;
        for (std::size_t i = 0; i < e1.domain.size() * e2.domain.size(); ++i)
            u.enc.domain.push_back(static_cast<double>(i));
        u.out_width = u.enc.width();
        u.layer = std::max(1, std::max(mlp_ready_layer(u1), mlp_ready_layer(u2)));
        const int id = add_unit(std::move(u));
        pair_units[key] = id;
        return id;
    }

    void build_units() {
        // The token and index embeddings are always present (the token block
        // carries the BOS flag used by counting heads and the padding rows).
        {
            Unit tok;
            tok.kind = UnitKind::TokenEmb;
            tok.layer = 0;
            tok.name = "tokens";
            std::vector<double> dom;
            for (int v = 1; v <= alpha; ++v) dom.push_back(v);
            tok.enc = {true, dom, false};
            tok.out_width = 1 + alpha;  // BOS flag dim + token one-hot
            tok.enc_local = 1;
            token_unit = add_unit(std::move(tok));
            Unit idx;
            idx.kind = UnitKind::IndexEmb;
            idx.layer = 0;
            idx.name = "indices";
            std::vector<double> idom;
            for (int v = 0; v < n; ++v) idom.push_back(v);
            idx.enc = {true, idom, false};
            idx.out_width = idx.enc.width();
            index_unit = add_unit(std::move(idx));
        }
        sop_unit.assign(prog.sops.size(), -1);
        for (std::size_t i = 0; i < prog.sops.size(); ++i) {
            const Sop& s = prog.sops[i];
            if (s.kind == SopKind::Tokens) {
                sop_unit[i] = token_unit;
                continue;
            }
            if (s.kind == SopKind::Indices) {
                sop_unit[i] = index_unit;
                continue;
            }
            Unit u;
            u.sop = static_cast<int>(i);
            u.name = s.name;
            switch (s.kind) {
                case SopKind::Tokens:
                case SopKind::Indices:
                    break;  // handled above
                case SopKind::Number: {
                    u.kind = UnitKind::Const;
                    u.layer = 0;
                    u.enc = {true, sop_domain[i], false};
                    u.out_width = 1;
                    break;
                }
                case SopKind::Elementwise: {
                    u.kind = UnitKind::Table;
                    u.enc = {true, sop_domain[i], false};
                    u.out_width = u.enc.width();
                    int layer = 1;
                    for (int a : s.args) {
                        u.operands.push_back(sop_unit[static_cast<std::size_t>(a)]);
                        layer = std::max(layer,
                                         mlp_ready_layer(sop_unit[static_cast<std::size_t>(a)]));
                    }
                    u.layer = layer;
                    break;
                }
                case SopKind::Aggregate:
                case SopKind::Gather:
                case SopKind::Width: {
                    const Selector& sel = prog.selectors[static_cast<std::size_t>(s.selector)];
                    int key_u, query_u;
                    if (sel.keys.size() == 1) {
                        key_u = require_select_operand(sel.keys[0]);
                        query_u = require_select_operand(sel.queries[0]);
                    } else {
                        key_u = pair_unit_for(sel.keys[0], sel.keys[1]);
                        query_u = pair_unit_for(sel.queries[0], sel.queries[1]);
                    }
                    u.kind = UnitKind::Head;
                    u.selector = s.selector;
                    u.key_unit = key_u;
                    u.query_unit = query_u;
                    int layer = std::max(attention_ready_layer(key_u),
                                         attention_ready_layer(query_u));
                    if (s.kind == SopKind::Width) {
                        u.is_width = true;
                        u.enc.onehot = false;
                        for (int w = 0; w <= n; ++w)
                            u.enc.domain.push_back(1.0 / static_cast<double>(w + 1));
                        u.out_width = 1;
                    } else {
                        u.value_unit = sop_unit[static_cast<std::size_t>(s.args[0])];
                        layer = std::max(layer, attention_ready_layer(u.value_unit));
                        const Enc& ve = units[static_cast<std::size_t>(u.value_unit)].enc;
                        if (s.kind == SopKind::Gather) {
                            u.is_gather = true;
                            u.enc = ve;
                            u.enc.empty_possible = true;
                            u.out_width = u.enc.width();
                        } else {
                            u.is_aggregate = true;
                            u.enc.onehot = false;
                            u.enc.domain = sop_domain[i];
                            u.out_width = 1;
                        }
                    }
                    u.layer = std::max(1, layer);
                    break;
                }
            }
            const int unit_id = add_unit(std::move(u));
            sop_unit[i] = unit_id;

            if (s.kind == SopKind::Width) {
                // Snap the reciprocal BOS-mean back to an exact count.
                Unit snap;
                snap.kind = UnitKind::Snap;
                snap.sop = static_cast<int>(i);
                snap.name = s.name;
                snap.operands = {unit_id};
                snap.enc = {true, sop_domain[i], false};
                snap.out_width = snap.enc.width();
                snap.layer = units[static_cast<std::size_t>(unit_id)].layer;
                sop_unit[i] = add_unit(std::move(snap));  // public unit is the snap
                units[static_cast<std::size_t>(unit_id)].name += "_recip";
            }
        }
        out_unit = sop_unit[static_cast<std::size_t>(prog.output)];
        if (!units[static_cast<std::size_t>(out_unit)].enc.onehot) {
            const Unit& src = units[static_cast<std::size_t>(out_unit)];
            Unit snap;
            snap.kind = UnitKind::Snap;
            snap.sop = src.sop;
            snap.name = src.name + "_onehot";
            snap.operands = {out_unit};
            snap.enc = {true, src.enc.domain, false};
            snap.out_width = snap.enc.width();
            snap.layer = std::max(1, mlp_ready_layer(out_unit));
            out_unit = add_unit(std::move(snap));
        }
    }
};

int sop_unit_of(const Compiler& c, int sop_id) {
    return c.sop_unit[static_cast<std::size_t>(sop_id)];
}

std::string var_id(const Unit& u, int unit_index, int p) {
    std::ostringstream os;
    switch (u.kind) {
        case UnitKind::TokenEmb: os << "emb.tok"; break;
        case UnitKind::IndexEmb: os << "emb.idx"; break;
        case UnitKind::Const: os << "emb.const." << u.name; break;
        case UnitKind::Head: os << "att.L" << u.layer << "." << u.name; break;
        case UnitKind::Table:
        case UnitKind::Pair:
        case UnitKind::Snap: os << "mlp.L" << u.layer << "." << u.name; break;
    }
    os << ".u" << unit_index << ".p" << p;
    return os.str();
}

}  // namespace

CompiledTransformer compile(const Program& program, const CompileConfig& cfg) {
    const int n = cfg.max_len;
    const int alpha = cfg.alphabet_size;
    if (n < 1) throw ConfigError("max_len must be >= 1");

    Compiler c(program, cfg);
    c.compute_domains();
    c.build_units();

    int layers = 0;
    for (const auto& u : c.units) layers = std::max(layers, u.layer);
    if (cfg.max_layers > 0 && layers > cfg.max_layers) {
        std::ostringstream os;
        os << "program needs " << layers << " layers, config allows " << cfg.max_layers;
        throw CapacityExceeded(os.str());
    }
    std::vector<int> heads_at(static_cast<std::size_t>(layers) + 1, 0);
    for (const auto& u : c.units)
        if (u.kind == UnitKind::Head) ++heads_at[static_cast<std::size_t>(u.layer)];
    int max_heads_used = 0;
    for (int h : heads_at) max_heads_used = std::max(max_heads_used, h);
    if (cfg.max_heads > 0 && max_heads_used > cfg.max_heads) {
        std::ostringstream os;
        os << "a layer needs " << max_heads_used << " heads, config allows " << cfg.max_heads;
        throw CapacityExceeded(os.str());
    }

    // ---- residual layout ----------------------------------------------------
    // Per layer: the units introduced there (heads first, then tables), then a
    // padding block. Layer 0 holds the embeddings and constants.
    std::vector<std::vector<int>> layer_units(static_cast<std::size_t>(layers) + 1);
    for (std::size_t i = 0; i < c.units.size(); ++i)
        layer_units[static_cast<std::size_t>(c.units[i].layer)].push_back(static_cast<int>(i));
    for (auto& lu : layer_units)
        std::stable_sort(lu.begin(), lu.end(), [&](int a, int b) {
            const bool ha = c.units[static_cast<std::size_t>(a)].kind == UnitKind::Head;
            const bool hb = c.units[static_cast<std::size_t>(b)].kind == UnitKind::Head;
            return ha > hb;
        });

    int cursor = 0;
    for (int l = 0; l <= layers; ++l) {
        for (int ui : layer_units[static_cast<std::size_t>(l)]) {
            c.units[static_cast<std::size_t>(ui)].res_offset = cursor;
            cursor += c.units[static_cast<std::size_t>(ui)].out_width;
        }
        cursor += cfg.pad_width;
    }
    std::vector<int> res_width(static_cast<std::size_t>(layers) + 1, 0);
    {
        int acc = 0;
        for (int l = 0; l <= layers; ++l) {
            for (int ui : layer_units[static_cast<std::size_t>(l)])
                acc += c.units[static_cast<std::size_t>(ui)].out_width;
            acc += cfg.pad_width;
            res_width[static_cast<std::size_t>(l)] = acc;
        }
    }

    // ---- emit variables -----------------------------------------------------
    std::vector<Variable> vars;
    std::vector<Transition> transitions;
    vars.push_back({"U", n, VarKind::Input});

    auto res_id = [](int l, int p) {
        return "res.L" + std::to_string(l) + ".p" + std::to_string(p);
    };
    std::vector<std::vector<std::string>> unit_var(c.units.size(),
                                                   std::vector<std::string>(static_cast<std::size_t>(n) + 1));

    Rng pad_rng = Rng(cfg.seed).split(0x9ad5);

    auto add_var = [&](const std::string& id, int arity, Transition t) {
        vars.push_back({id, arity, VarKind::Hidden});
        t.target = id;
        transitions.push_back(std::move(t));
    };

    for (int l = 0; l <= layers; ++l) {
        // Unit variables at every position; BOS (p=0) carries zero blocks.
        for (int ui : layer_units[static_cast<std::size_t>(l)]) {
            Unit& u = c.units[static_cast<std::size_t>(ui)];
            for (int p = 0; p <= n; ++p) {
                const std::string id = var_id(u, ui, p);
                unit_var[static_cast<std::size_t>(ui)][static_cast<std::size_t>(p)] = id;
                if (p == 0) {
                    Vec v = Vec::Zero(u.out_width);
                    if (u.kind == UnitKind::TokenEmb) v[0] = 1.0;  // BOS flag
                    add_var(id, u.out_width, {"", {}, make_constant(v)});
                    continue;
                }
                switch (u.kind) {
                    case UnitKind::TokenEmb: {
                        // Probe input position p-1, emit [flag=0, onehot(token)].
                        Mat keys(alpha, 1), values(alpha, 1 + alpha);
                        values.setZero();
                        for (int v = 1; v <= alpha; ++v) {
                            keys(v - 1, 0) = v;
                            values(v - 1, v) = 1.0;
                        }
                        add_var(id, u.out_width,
                                {"", {}, make_table({{-1, p - 1, 1, false}}, keys, values)});
                        break;
                    }
                    case UnitKind::IndexEmb: {
                        Vec v = Vec::Zero(u.out_width);
                        v[p - 1] = 1.0;
                        add_var(id, u.out_width, {"", {}, make_constant(v)});
                        break;
                    }
                    case UnitKind::Const: {
                        Vec v = Vec::Ones(1);
                        add_var(id, u.out_width, {"", {}, make_constant(v)});
                        break;
                    }
                    case UnitKind::Head: {
                        AttentionParams ap;
                        ap.query_parent = p;
                        const Unit& qu = c.units[static_cast<std::size_t>(u.query_unit)];
                        const Unit& ku = c.units[static_cast<std::size_t>(u.key_unit)];
                        ap.query_offset = qu.res_offset + qu.enc_local;
                        ap.query_width = qu.enc.width();
                        ap.key_offset = ku.res_offset + ku.enc_local;
                        ap.key_width = ku.enc.width();
                        ap.predicate = Mat::Zero(ap.query_width, ap.key_width);
                        const Selector& sel =
                            program.selectors[static_cast<std::size_t>(u.selector)];
                        auto fill_pred = [&](int qi, double q1, double q2, int ki, double k1,
                                             double k2) {
                            ap.predicate(qi, ki) = sel.pred.eval(k1, k2, q1, q2) != 0.0 ? 1.0 : 0.0;
                        };
                        if (sel.keys.size() == 1) {
                            for (int qi = 0; qi < ap.query_width; ++qi)
                                for (int ki = 0; ki < ap.key_width; ++ki)
                                    fill_pred(qi, qu.enc.domain[static_cast<std::size_t>(qi)], 0.0,
                                              ki, ku.enc.domain[static_cast<std::size_t>(ki)], 0.0);
                        } else {
                            const Unit& q1u = c.units[static_cast<std::size_t>(
                                qu.operands[0])];
                            const Unit& q2u = c.units[static_cast<std::size_t>(
                                qu.operands[1])];
                            const Unit& k1u = c.units[static_cast<std::size_t>(
                                ku.operands[0])];
                            const Unit& k2u = c.units[static_cast<std::size_t>(
                                ku.operands[1])];
                            const int q2n = static_cast<int>(q2u.enc.domain.size());
                            const int k2n = static_cast<int>(k2u.enc.domain.size());
                            for (int qi = 0; qi < ap.query_width; ++qi)
                                for (int ki = 0; ki < ap.key_width; ++ki)
                                    fill_pred(qi, q1u.enc.domain[static_cast<std::size_t>(qi / q2n)],
                                              q2u.enc.domain[static_cast<std::size_t>(qi % q2n)], ki,
                                              k1u.enc.domain[static_cast<std::size_t>(ki / k2n)],
                                              k2u.enc.domain[static_cast<std::size_t>(ki % k2n)]);
                        }
                        if (u.is_width) {
                            const Unit& tok = c.units[static_cast<std::size_t>(c.token_unit)];
                            ap.always_first_key = true;
                            ap.value_offset = tok.res_offset;  // BOS flag dim
                            ap.value_width = 1;
                        } else {
                            const Unit& vu = c.units[static_cast<std::size_t>(u.value_unit)];
                            if (u.is_gather) {
                                ap.value_offset = vu.res_offset + vu.enc_local;
                                ap.value_width = vu.enc.width();
                            } else {
                                // aggregate: pool the "value == 1" coordinate
                                if (vu.enc.onehot) {
                                    const int one = index_in(vu.enc.domain, 1.0);
                                    if (one >= 0) {
                                        ap.value_offset = vu.res_offset + vu.enc_local + one;
                                    } else {
                                        // Aggregated value is never 1: pool the BOS
                                        // flag, which is 0 at every real position.
                                        ap.value_offset =
                                            c.units[static_cast<std::size_t>(c.token_unit)].res_offset;
                                    }
                                    ap.value_width = 1;
                                } else {
                                    ap.value_offset = vu.res_offset + vu.enc_local;
                                    ap.value_width = 1;
                                }
                            }
                        }
                        Transition t;
                        t.parents.reserve(static_cast<std::size_t>(n) + 1);
                        for (int j = 0; j <= n; ++j) t.parents.push_back(res_id(l - 1, j));
                        t.op = make_attention(std::move(ap));
                        add_var(id, u.out_width, std::move(t));
                        break;
                    }
                    case UnitKind::Table:
                    case UnitKind::Pair:
                    case UnitKind::Snap: {
                        // Probes read the previous residual, except same-layer
                        // heads which are probed directly.
                        Transition t;
                        t.parents.push_back(res_id(l - 1, p));
                        std::vector<TableProbe> probes;
                        std::vector<std::vector<std::pair<double, double>>> codes;
                        for (int oi : u.operands) {
                            const Unit& ou = c.units[static_cast<std::size_t>(oi)];
                            TableProbe probe;
                            probe.onehot = ou.enc.onehot;
                            probe.width = ou.enc.width();
                            if (ou.kind == UnitKind::Head && ou.layer == l) {
                                probe.parent = static_cast<int>(t.parents.size());
                                probe.offset = ou.enc_local;
                                t.parents.push_back(
                                    unit_var[static_cast<std::size_t>(oi)][static_cast<std::size_t>(p)]);
                            } else {
                                probe.parent = 0;
                                probe.offset = ou.res_offset + ou.enc_local;
                            }
                            probes.push_back(probe);
                            codes.push_back(key_codes(ou.enc));
                        }
                        // Enumerate all probe-code combinations.
                        std::size_t rows = 1;
                        for (const auto& cs : codes) rows *= cs.size();
                        if (rows > kDomainCap) throw UnsupportedOp("table too large");
                        Mat keys(static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(probes.size()));
                        Mat values(static_cast<Eigen::Index>(rows), u.out_width);
                        values.setZero();
                        std::vector<std::size_t> idx(codes.size(), 0);
                        for (std::size_t r = 0; r < rows; ++r) {
                            std::vector<double> semantic(codes.size());
                            for (std::size_t k = 0; k < codes.size(); ++k) {
                                keys(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
                                    codes[k][idx[k]].first;
                                semantic[k] = codes[k][idx[k]].second;
                            }
                            double result = 0.0;
                            if (u.kind == UnitKind::Pair) {
                                result = static_cast<double>(
                                    idx[0] * c.units[static_cast<std::size_t>(u.operands[1])]
                                                 .enc.domain.size() +
                                    idx[1]);
                            } else if (u.kind == UnitKind::Snap) {
                                result = semantic[0];
                                if (c.units[static_cast<std::size_t>(u.operands[0])].is_width)
                                    result = std::round(1.0 / semantic[0]) - 1.0;  // 1/(w+1) -> w
                            } else {
                                const Sop& s = program.sops[static_cast<std::size_t>(u.sop)];
                                result = s.args.size() == 1
                                             ? eval_scalar(s.eop, semantic[0], 0.0)
                                             : eval_scalar(s.eop, semantic[0], semantic[1]);
                            }
                            if (u.enc.onehot) {
                                const int di = index_in(u.enc.domain, result);
                                if (di >= 0) values(static_cast<Eigen::Index>(r), di) = 1.0;
                            } else {
                                values(static_cast<Eigen::Index>(r), 0) = result;
                            }
                            for (std::size_t k = codes.size(); k-- > 0;) {
                                if (++idx[k] < codes[k].size()) break;
                                idx[k] = 0;
                            }
                        }
                        t.op = make_table(std::move(probes), std::move(keys), std::move(values));
                        add_var(id, u.out_width, std::move(t));
                        break;
                    }
                }
            }
        }

        // Padding block, then the residual concat.
        for (int p = 0; p <= n; ++p) {
            const std::string pid = "pad.L" + std::to_string(l) + ".p" + std::to_string(p);
            if (p == 0) {
                add_var(pid, cfg.pad_width, {"", {}, make_constant(Vec::Zero(cfg.pad_width))});
            } else if (l == 0) {
                Mat w = Mat::Zero(cfg.pad_width, 1 + alpha);
                for (int r = 0; r < cfg.pad_width; ++r)
                    for (int cidx = 1; cidx <= alpha; ++cidx)
                        w(r, cidx) = 0.25 * pad_rng.next_gaussian();
                add_var(pid, cfg.pad_width,
                        {"",
                         {unit_var[static_cast<std::size_t>(c.token_unit)][static_cast<std::size_t>(p)]},
                         make_affine(std::move(w), Vec::Zero(cfg.pad_width))});
            } else {
                const Unit& tok = c.units[static_cast<std::size_t>(c.token_unit)];
                Mat w = Mat::Zero(cfg.pad_width, res_width[static_cast<std::size_t>(l) - 1]);
                for (int r = 0; r < cfg.pad_width; ++r)
                    for (int cidx = 0; cidx < alpha; ++cidx)
                        w(r, tok.res_offset + 1 + cidx) = 0.25 * pad_rng.next_gaussian();
                add_var(pid, cfg.pad_width,
                        {"", {res_id(l - 1, p)}, make_affine(std::move(w), Vec::Zero(cfg.pad_width))});
            }
        }
        for (int p = 0; p <= n; ++p) {
            Transition t;
            if (l > 0) t.parents.push_back(res_id(l - 1, p));
            for (int ui : layer_units[static_cast<std::size_t>(l)])
                t.parents.push_back(unit_var[static_cast<std::size_t>(ui)][static_cast<std::size_t>(p)]);
            t.parents.push_back("pad.L" + std::to_string(l) + ".p" + std::to_string(p));
            t.op = make_concat();
            add_var(res_id(l, p), res_width[static_cast<std::size_t>(l)], std::move(t));
        }
    }

    // Unembedding from the final residual at the last position.
    const Unit& ou = c.units[static_cast<std::size_t>(c.out_unit)];
    const bool boolean = output_is_boolean(program);
    Mat unembed = Mat::Zero(alpha, res_width[static_cast<std::size_t>(layers)]);
    for (std::size_t d = 0; d < ou.enc.domain.size(); ++d) {
        const Vec col = unembed_value(ou.enc.domain[d], boolean, alpha);
        unembed.col(ou.res_offset + ou.enc_local + static_cast<int>(d)) = col;
    }
    vars.push_back({"out", alpha, VarKind::Output});
    {
        Transition t;
        t.target = "out";
        t.parents = {res_id(layers, n)};
        t.op = make_affine(std::move(unembed), Vec::Zero(alpha));
        transitions.push_back(std::move(t));
    }

    CompiledTransformer out;
    out.model = build_model(std::move(vars), "U", std::move(transitions));
    out.layers = layers;
    out.heads = max_heads_used;
    out.n = n;
    out.alphabet = alpha;

    for (int l = 0; l <= layers; ++l) {
        std::vector<std::string> group;
        for (int p = 0; p <= n; ++p) group.push_back(res_id(l, p));
        out.rho_groups.push_back(std::move(group));
    }
    out.rho_groups.push_back({"out"});

    for (int l = 0; l <= layers; ++l)
        for (int p = 1; p <= n; ++p)
            out.pad_blocks.push_back({"pad.L" + std::to_string(l) + ".p" + std::to_string(p), 0,
                                      cfg.pad_width});

    for (const auto& [name, sid] : program.named) {
        const Unit& u = c.units[static_cast<std::size_t>(sop_unit_of(c, sid))];
        SlotInfo si;
        si.offset = u.res_offset + u.enc_local;
        si.width = u.enc.width();
        si.onehot = u.enc.onehot;
        si.domain = u.enc.domain;
        si.empty_possible = u.enc.empty_possible;
        out.named_slots[name] = si;
    }

    // ---- source map ---------------------------------------------------------
    auto prog_ptr = std::make_shared<Program>(program);
    for (const auto& [name, sid] : program.named) {
        const int ui = sop_unit_of(c, sid);
        const Unit& u = c.units[static_cast<std::size_t>(ui)];
        AlignmentEntry e;
        e.high_id = name;
        for (int p = 1; p <= n; ++p)
            e.low_ids.push_back(unit_var[static_cast<std::size_t>(ui)][static_cast<std::size_t>(p)]);
        const Enc enc = u.enc;
        const int local = u.enc_local;
        e.value_fn = [enc, local](const std::vector<const Vec*>& vals) {
            Vec out_v(static_cast<Eigen::Index>(vals.size()));
            for (std::size_t p = 0; p < vals.size(); ++p)
                out_v[static_cast<Eigen::Index>(p)] = decode_enc_block(enc, local, *vals[p]);
            return out_v;
        };
        out.source_map.entries.push_back(std::move(e));
    }
    {
        AlignmentEntry e;
        e.high_id = "out_logits";
        e.low_ids = {"out"};
        e.value_fn = [](const std::vector<const Vec*>& vals) { return *vals[0]; };
        out.source_map.entries.push_back(std::move(e));
    }

    // Reverse lookup: low variable id -> (s-op name, position, encoding).
    struct LowSlot {
        std::string sop;
        int position;
        Enc enc;
        int local;
    };
    auto low_slots = std::make_shared<std::map<std::string, LowSlot>>();
    for (const auto& [name, sid] : program.named) {
        const int ui = sop_unit_of(c, sid);
        const Unit& u = c.units[static_cast<std::size_t>(ui)];
        for (int p = 1; p <= n; ++p)
            (*low_slots)[unit_var[static_cast<std::size_t>(ui)][static_cast<std::size_t>(p)]] =
                {name, p, u.enc, u.enc_local};
    }
    const int nn = n;
    const int aa = alpha;
    out.source_map.intervention_map =
        [prog_ptr, low_slots, nn, aa](const Intervention& iv) -> std::optional<Intervention> {
        if (iv.target == "out") {
            if (iv.new_op->kind != OpKind::Constant) return std::nullopt;
            Intervention high;
            high.target = "out_logits";
            high.new_parents = {};
            high.new_op = iv.new_op;
            return high;
        }
        auto it = low_slots->find(iv.target);
        if (it == low_slots->end()) return std::nullopt;
        if (iv.new_op->kind != OpKind::Constant) return std::nullopt;
        const LowSlot slot = it->second;
        const double patched = decode_enc_block(slot.enc, slot.local, iv.new_op->value);
        const int sop_id = prog_ptr->named.at(slot.sop);
        const auto parent_names = named_parent_names(*prog_ptr, sop_id);
        Intervention high;
        high.target = slot.sop;
        high.new_parents = parent_names;
        const int pos = slot.position;
        high.new_op = make_lambda([prog_ptr, sop_id, parent_names, patched, pos, aa](
                                      const std::vector<const Vec*>& parents, const Vec& input) {
            std::map<int, std::vector<double>> fixed;
            for (std::size_t i = 0; i < parent_names.size(); ++i) {
                const int pid = prog_ptr->named.at(parent_names[i]);
                std::vector<double> vals(static_cast<std::size_t>(parents[i]->size()));
                for (Eigen::Index j = 0; j < parents[i]->size(); ++j)
                    vals[static_cast<std::size_t>(j)] = (*parents[i])[j];
                fixed[pid] = std::move(vals);
            }
            std::vector<int> seq(static_cast<std::size_t>(input.size()));
            for (Eigen::Index i = 0; i < input.size(); ++i)
                seq[static_cast<std::size_t>(i)] = static_cast<int>(input[i]);
            auto vals = evaluate_sop_with_fixed(*prog_ptr, sop_id, fixed, seq, aa);
            vals[static_cast<std::size_t>(pos - 1)] = patched;
            Vec v(static_cast<Eigen::Index>(vals.size()));
            for (std::size_t i = 0; i < vals.size(); ++i)
                v[static_cast<Eigen::Index>(i)] = vals[i];
            return v;
        });
        (void)nn;
        return high;
    };

    return out;
}

Task permutation_task_exhaustive(int n) {
    Task t;
    t.alphabet_size = n;
    std::vector<int> seq(static_cast<std::size_t>(n), 1);
    std::vector<Vec> refs;
    while (true) {
        t.inputs.push_back(seq);
        refs.push_back(unembed_value(is_permutation(seq, n) ? 1.0 : 0.0, true, n));
        int i = n - 1;
        while (i >= 0 && seq[static_cast<std::size_t>(i)] == n) {
            seq[static_cast<std::size_t>(i)] = 1;
            --i;
        }
        if (i < 0) break;
        ++seq[static_cast<std::size_t>(i)];
    }
    t.reference_outputs = std::move(refs);
    return t;
}

Task permutation_task_sampled(int n, int count, std::uint64_t seed, bool balanced) {
    Task t;
    t.alphabet_size = n;
    Rng rng = Rng(seed).split(0x7a5c);
    std::set<std::vector<int>> seen;
    std::vector<Vec> refs;
    int guard = 0;
    while (static_cast<int>(t.inputs.size()) < count && guard < count * 200) {
        ++guard;
        std::vector<int> seq(static_cast<std::size_t>(n));
        const bool want_perm = balanced && (t.inputs.size() % 2 == 0);
        if (want_perm) {
            for (int i = 0; i < n; ++i) seq[static_cast<std::size_t>(i)] = i + 1;
            for (int i = n - 1; i > 0; --i) {
                const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
                std::swap(seq[static_cast<std::size_t>(i)], seq[static_cast<std::size_t>(j)]);
            }
        } else {
            for (int i = 0; i < n; ++i)
                seq[static_cast<std::size_t>(i)] =
                    1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        }
        if (!seen.insert(seq).second) continue;
        refs.push_back(unembed_value(is_permutation(seq, n) ? 1.0 : 0.0, true, n));
        t.inputs.push_back(std::move(seq));
    }
    t.reference_outputs = std::move(refs);
    return t;
}

}  // namespace rasp
}  // namespace interpeq
