#include "interpeq/rasp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <sstream>

namespace interpeq {
namespace rasp {

bool eop_is_boolean(EOp op) {
    switch (op) {
        case EOp::Eq: case EOp::Ne: case EOp::Lt: case EOp::Le:
        case EOp::Gt: case EOp::Ge: case EOp::And: case EOp::Or:
        case EOp::Not: case EOp::True:
            return true;
        default:
            return false;
    }
}

double eval_scalar(EOp op, double a, double b) {
    switch (op) {
        case EOp::Add: return a + b;
        case EOp::Sub: return a - b;
        case EOp::Mul: return a * b;
        case EOp::Div: return b == 0.0 ? 0.0 : a / b;
        case EOp::Mod: return b == 0.0 ? 0.0 : std::fmod(a, b);
        case EOp::Neg: return -a;
        case EOp::Eq: return a == b ? 1.0 : 0.0;
        case EOp::Ne: return a != b ? 1.0 : 0.0;
        case EOp::Lt: return a < b ? 1.0 : 0.0;
        case EOp::Le: return a <= b ? 1.0 : 0.0;
        case EOp::Gt: return a > b ? 1.0 : 0.0;
        case EOp::Ge: return a >= b ? 1.0 : 0.0;
        case EOp::And: return (a != 0.0 && b != 0.0) ? 1.0 : 0.0;
        case EOp::Or: return (a != 0.0 || b != 0.0) ? 1.0 : 0.0;
        case EOp::Not: return a == 0.0 ? 1.0 : 0.0;
        default: throw EvaluatorFailure("eval_scalar on non-arithmetic op");
    }
}

double Pred::eval(double k1, double k2, double q1, double q2) const {
    switch (op) {
        case EOp::Num: return num;
        case EOp::K1: return k1;
        case EOp::K2: return k2;
        case EOp::Q1: return q1;
        case EOp::Q2: return q2;
        case EOp::True: return 1.0;
        case EOp::Neg:
        case EOp::Not:
            return eval_scalar(op, args[0].eval(k1, k2, q1, q2), 0.0);
        default:
            return eval_scalar(op, args[0].eval(k1, k2, q1, q2), args[1].eval(k1, k2, q1, q2));
    }
}

bool Pred::boolean_valued() const { return eop_is_boolean(op); }

bool Pred::uses_second_pair() const {
    if (op == EOp::K2 || op == EOp::Q2) return true;
    for (const auto& a : args)
        if (a.uses_second_pair()) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

struct Token {
    enum Kind { Ident, Number, Op, LParen, RParen, Comma, Assign, End } kind;
    std::string text;
    double number = 0.0;
    int line = 0, col = 0;
};

struct Lexer {
    const std::string& src;
    std::size_t pos = 0;
    int line = 1, col = 1;

    explicit Lexer(const std::string& s) : src(s) {}

    [[noreturn]] void fail(const std::string& msg, int l, int c) const {
        std::ostringstream os;
        os << "line " << l << ", col " << c << ": " << msg;
        throw SyntaxError(os.str());
    }

    void advance(char c) {
        ++pos;
        if (c == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }

    std::vector<Token> lex() {
        std::vector<Token> out;
        while (pos < src.size()) {
            const char c = src[pos];
            if (c == '#') {
                while (pos < src.size() && src[pos] != '\n') advance(src[pos]);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c)) || c == ';') {
                advance(c);
                continue;
            }
            const int l = line, co = col;
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                std::string ident;
                while (pos < src.size() &&
                       (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) {
                    ident += src[pos];
                    advance(src[pos]);
                }
                out.push_back({Token::Ident, ident, 0.0, l, co});
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '.' && pos + 1 < src.size() &&
                 std::isdigit(static_cast<unsigned char>(src[pos + 1])))) {
                std::string num;
                while (pos < src.size() &&
                       (std::isdigit(static_cast<unsigned char>(src[pos])) || src[pos] == '.')) {
                    num += src[pos];
                    advance(src[pos]);
                }
                out.push_back({Token::Number, num, std::stod(num), l, co});
                continue;
            }
            auto two = src.substr(pos, 2);
            if (two == "==" || two == "!=" || two == "<=" || two == ">=") {
                advance(src[pos]);
                advance(src[pos]);
                out.push_back({Token::Op, two, 0.0, l, co});
                continue;
            }
            if (c == '=') {
                advance(c);
                out.push_back({Token::Assign, "=", 0.0, l, co});
                continue;
            }
            if (std::string("+-*/%<>").find(c) != std::string::npos) {
                advance(c);
                out.push_back({Token::Op, std::string(1, c), 0.0, l, co});
                continue;
            }
            if (c == '(') {
                advance(c);
                out.push_back({Token::LParen, "(", 0.0, l, co});
                continue;
            }
            if (c == ')') {
                advance(c);
                out.push_back({Token::RParen, ")", 0.0, l, co});
                continue;
            }
            if (c == ',') {
                advance(c);
                out.push_back({Token::Comma, ",", 0.0, l, co});
                continue;
            }
            fail(std::string("unexpected character '") + c + "'", l, co);
        }
        out.push_back({Token::End, "", 0.0, line, col});
        return out;
    }
};

// Parsed expression value: an s-op id or a selector id.
struct Value {
    bool is_selector = false;
    int id = -1;
};

struct Parser {
    Program prog;
    std::vector<Token> toks;
    std::size_t at = 0;
    std::map<std::string, Value> scope;  // user names -> sop/selector
    bool in_pred = false;

    [[noreturn]] void fail(const std::string& msg) const {
        const Token& t = toks[std::min(at, toks.size() - 1)];
        std::ostringstream os;
        os << "line " << t.line << ", col " << t.col << ": " << msg;
        throw SyntaxError(os.str());
    }

    const Token& peek() const { return toks[at]; }
    Token take() { return toks[at++]; }

    bool take_if(Token::Kind k, const std::string& text = "") {
        if (peek().kind != k) return false;
        if (!text.empty() && peek().text != text) return false;
        ++at;
        return true;
    }

    void expect(Token::Kind k, const std::string& what) {
        if (peek().kind != k) fail("expected " + what);
        ++at;
    }

    int add_sop(Sop s) {
        s.line = peek().line;
        if (s.name.empty()) s.name = "_" + std::to_string(prog.sops.size());
        prog.sops.push_back(std::move(s));
        return static_cast<int>(prog.sops.size() - 1);
    }

    int number_sop(double v) {
        Sop s;
        s.kind = SopKind::Number;
        s.number = v;
        return add_sop(std::move(s));
    }

    // --- predicate expressions (scalar leaves k/q) ---

    Pred parse_pred() {
        Pred p = pred_or();
        if (!p.boolean_valued())
            throw TypeMismatch("selector predicate must be boolean-valued (line " +
                               std::to_string(peek().line) + ")");
        return p;
    }

    Pred pred_or() {
        Pred lhs = pred_and();
        while (peek().kind == Token::Ident && peek().text == "or") {
            take();
            Pred rhs = pred_and();
            Pred node;
            node.op = EOp::Or;
            node.args = {std::move(lhs), std::move(rhs)};
            lhs = std::move(node);
        }
        return lhs;
    }

    Pred pred_and() {
        Pred lhs = pred_not();
        while (peek().kind == Token::Ident && peek().text == "and") {
            take();
            Pred rhs = pred_not();
            Pred node;
            node.op = EOp::And;
            node.args = {std::move(lhs), std::move(rhs)};
            lhs = std::move(node);
        }
        return lhs;
    }

    Pred pred_not() {
        if (peek().kind == Token::Ident && peek().text == "not") {
            take();
            Pred node;
            node.op = EOp::Not;
            node.args = {pred_not()};
            return node;
        }
        return pred_cmp();
    }

    Pred pred_cmp() {
        Pred lhs = pred_add();
        if (peek().kind == Token::Op) {
            const std::string op = peek().text;
            EOp e;
            if (op == "==") e = EOp::Eq;
            else if (op == "!=") e = EOp::Ne;
            else if (op == "<") e = EOp::Lt;
            else if (op == "<=") e = EOp::Le;
            else if (op == ">") e = EOp::Gt;
            else if (op == ">=") e = EOp::Ge;
            else return lhs;
            take();
            Pred rhs = pred_add();
            Pred node;
            node.op = e;
            node.args = {std::move(lhs), std::move(rhs)};
            return node;
        }
        return lhs;
    }

    Pred pred_add() {
        Pred lhs = pred_mul();
        while (peek().kind == Token::Op && (peek().text == "+" || peek().text == "-")) {
            const EOp e = take().text == "+" ? EOp::Add : EOp::Sub;
            Pred rhs = pred_mul();
            Pred node;
            node.op = e;
            node.args = {std::move(lhs), std::move(rhs)};
            lhs = std::move(node);
        }
        return lhs;
    }

    Pred pred_mul() {
        Pred lhs = pred_unary();
        while (peek().kind == Token::Op &&
               (peek().text == "*" || peek().text == "/" || peek().text == "%")) {
            const std::string op = take().text;
            const EOp e = op == "*" ? EOp::Mul : (op == "/" ? EOp::Div : EOp::Mod);
            Pred rhs = pred_unary();
            Pred node;
            node.op = e;
            node.args = {std::move(lhs), std::move(rhs)};
            lhs = std::move(node);
        }
        return lhs;
    }

    Pred pred_unary() {
        if (peek().kind == Token::Op && peek().text == "-") {
            take();
            Pred node;
            node.op = EOp::Neg;
            node.args = {pred_unary()};
            return node;
        }
        return pred_primary();
    }

    Pred pred_primary() {
        if (take_if(Token::LParen)) {
            Pred p = pred_or();
            expect(Token::RParen, "')'");
            return p;
        }
        if (peek().kind == Token::Number) {
            Pred p;
            p.op = EOp::Num;
            p.num = take().number;
            return p;
        }
        if (peek().kind == Token::Ident) {
            const std::string id = take().text;
            Pred p;
            if (id == "k" || id == "k1") p.op = EOp::K1;
            else if (id == "k2") p.op = EOp::K2;
            else if (id == "q" || id == "q1") p.op = EOp::Q1;
            else if (id == "q2") p.op = EOp::Q2;
            else if (id == "true") p.op = EOp::True;
            else fail("predicates may only reference k/q (or k1,k2,q1,q2) and constants; got '" + id + "'");
            return p;
        }
        fail("expected predicate term");
    }

    // --- s-op expressions ---

    Value parse_expr() { return expr_or(); }

    int sop_of(Value v, const char* where) {
        if (v.is_selector) fail(std::string("selector used where an s-op is required (") + where + ")");
        return v.id;
    }

    Value binary(EOp e, Value a, Value b, const char* where) {
        Sop s;
        s.kind = SopKind::Elementwise;
        s.eop = e;
        s.args = {sop_of(a, where), sop_of(b, where)};
        return {false, add_sop(std::move(s))};
    }

    Value expr_or() {
        Value lhs = expr_and();
        while (peek().kind == Token::Ident && peek().text == "or") {
            take();
            lhs = binary(EOp::Or, lhs, expr_and(), "or");
        }
        return lhs;
    }

    Value expr_and() {
        Value lhs = expr_not();
        while (peek().kind == Token::Ident && peek().text == "and") {
            take();
            lhs = binary(EOp::And, lhs, expr_not(), "and");
        }
        return lhs;
    }

    Value expr_not() {
        if (peek().kind == Token::Ident && peek().text == "not") {
            take();
            Value v = expr_not();
            Sop s;
            s.kind = SopKind::Elementwise;
            s.eop = EOp::Not;
            s.args = {sop_of(v, "not")};
            return {false, add_sop(std::move(s))};
        }
        return expr_cmp();
    }

    Value expr_cmp() {
        Value lhs = expr_add();
        if (peek().kind == Token::Op) {
            const std::string op = peek().text;
            EOp e;
            if (op == "==") e = EOp::Eq;
            else if (op == "!=") e = EOp::Ne;
            else if (op == "<") e = EOp::Lt;
            else if (op == "<=") e = EOp::Le;
            else if (op == ">") e = EOp::Gt;
            else if (op == ">=") e = EOp::Ge;
            else return lhs;
            take();
            return binary(e, lhs, expr_add(), "comparison");
        }
        return lhs;
    }

    Value expr_add() {
        Value lhs = expr_mul();
        while (peek().kind == Token::Op && (peek().text == "+" || peek().text == "-")) {
            const EOp e = take().text == "+" ? EOp::Add : EOp::Sub;
            lhs = binary(e, lhs, expr_mul(), "+/-");
        }
        return lhs;
    }

    Value expr_mul() {
        Value lhs = expr_unary();
        while (peek().kind == Token::Op &&
               (peek().text == "*" || peek().text == "/" || peek().text == "%")) {
            const std::string op = take().text;
            const EOp e = op == "*" ? EOp::Mul : (op == "/" ? EOp::Div : EOp::Mod);
            lhs = binary(e, lhs, expr_unary(), op.c_str());
        }
        return lhs;
    }

    Value expr_unary() {
        if (peek().kind == Token::Op && peek().text == "-") {
            take();
            Value v = expr_unary();
            Sop s;
            s.kind = SopKind::Elementwise;
            s.eop = EOp::Neg;
            s.args = {sop_of(v, "negate")};
            return {false, add_sop(std::move(s))};
        }
        return expr_primary();
    }

    Value expr_primary() {
        if (take_if(Token::LParen)) {
            Value v = parse_expr();
            expect(Token::RParen, "')'");
            return v;
        }
        if (peek().kind == Token::Number) {
            return {false, number_sop(take().number)};
        }
        if (peek().kind != Token::Ident) fail("expected expression");
        const Token ident = take();
        const std::string& id = ident.text;

        if (id == "tokens") {
            Sop s;
            s.kind = SopKind::Tokens;
            return {false, add_sop(std::move(s))};
        }
        if (id == "indices") {
            Sop s;
            s.kind = SopKind::Indices;
            return {false, add_sop(std::move(s))};
        }
        if (id == "select") return parse_select();
        if (id == "aggregate" || id == "gather") {
            expect(Token::LParen, "'('");
            Value sel = parse_expr();
            if (!sel.is_selector)
                throw TypeMismatch("first argument of " + id + " must be a selector (line " +
                                   std::to_string(ident.line) + ")");
            expect(Token::Comma, "','");
            Value vals = parse_expr();
            expect(Token::RParen, "')'");
            Sop s;
            s.kind = id == "aggregate" ? SopKind::Aggregate : SopKind::Gather;
            s.selector = sel.id;
            s.args = {sop_of(vals, id.c_str())};
            return {false, add_sop(std::move(s))};
        }
        if (id == "width") {
            expect(Token::LParen, "'('");
            Value sel = parse_expr();
            if (!sel.is_selector)
                throw TypeMismatch("width takes a selector (line " + std::to_string(ident.line) + ")");
            expect(Token::RParen, "')'");
            Sop s;
            s.kind = SopKind::Width;
            s.selector = sel.id;
            return {false, add_sop(std::move(s))};
        }
        auto it = scope.find(id);
        if (it == scope.end())
            throw UnknownPrimitive("'" + id + "' (line " + std::to_string(ident.line) + ", col " +
                                   std::to_string(ident.col) + ")");
        return it->second;
    }

    Value parse_select() {
        const int line = peek().line;
        expect(Token::LParen, "'('");
        // Operands are comma-separated s-op expressions; the final argument
        // (the one directly before the closing paren) is always the
        // predicate, so a trailing expression parse is rolled back and
        // re-read as a predicate.
        std::vector<Value> args;
        std::vector<Pred> pred;
        while (true) {
            const std::size_t save_at = at;
            const std::size_t save_sops = prog.sops.size();
            const std::size_t save_sels = prog.selectors.size();
            bool is_last = false;
            try {
                Value v = parse_expr();
                if (peek().kind == Token::Comma) {
                    args.push_back(v);
                    take();
                    continue;
                }
                is_last = true;  // expression directly before ')': reparse as predicate
            } catch (const Error&) {
                is_last = true;
            }
            if (is_last) {
                at = save_at;
                prog.sops.resize(save_sops);
                prog.selectors.resize(save_sels);
                pred.push_back(parse_pred());
                break;
            }
        }
        expect(Token::RParen, "')'");
        if (pred.empty()) fail("select is missing its predicate");
        Selector sel;
        sel.line = line;
        if (args.size() == 2) {
            sel.keys = {sop_of(args[0], "select keys")};
            sel.queries = {sop_of(args[1], "select queries")};
            if (pred[0].uses_second_pair())
                throw TypeMismatch("predicate references k2/q2 but select has one key (line " +
                                   std::to_string(line) + ")");
        } else if (args.size() == 4) {
            sel.keys = {sop_of(args[0], "select k1"), sop_of(args[1], "select k2")};
            sel.queries = {sop_of(args[2], "select q1"), sop_of(args[3], "select q2")};
        } else {
            fail("select takes (keys, queries, pred) or (k1, k2, q1, q2, pred)");
        }
        sel.pred = std::move(pred[0]);
        prog.selectors.push_back(std::move(sel));
        return {true, static_cast<int>(prog.selectors.size() - 1)};
    }

    void parse_program_body() {
        while (peek().kind != Token::End) {
            if (peek().kind != Token::Ident) fail("expected a definition 'name = expr'");
            const Token name = take();
            static const std::set<std::string> reserved = {
                "tokens", "indices", "select", "aggregate", "gather", "width",
                "and",    "or",      "not",    "true",      "k",      "q",
                "k1",     "k2",      "q1",     "q2"};
            if (reserved.count(name.text)) fail("'" + name.text + "' is reserved");
            if (scope.count(name.text)) fail("'" + name.text + "' is already defined");
            expect(Token::Assign, "'='");
            Value v = parse_expr();
            if (!v.is_selector) {
                prog.sops[static_cast<std::size_t>(v.id)].name = name.text;
                prog.named[name.text] = v.id;
            }
            scope[name.text] = v;
        }
        auto it = prog.named.find("out");
        if (it == prog.named.end())
            fail("program must define an s-op named 'out'");
        prog.output = it->second;
    }
};

}  // namespace

Program parse_program(const std::string& source_text) {
    Lexer lex(source_text);
    Parser parser;
    parser.toks = lex.lex();
    parser.prog.source = source_text;
    parser.parse_program_body();
    return std::move(parser.prog);
}

// ---------------------------------------------------------------------------
// Interpreter
// ---------------------------------------------------------------------------

Evaluation evaluate(const Program& p, const std::vector<int>& sequence, int alphabet_size) {
    const int n = static_cast<int>(sequence.size());
    for (int tok : sequence) {
        if (tok < 1 || tok > alphabet_size)
            throw AlphabetViolation("token " + std::to_string(tok) + " outside 1.." +
                                    std::to_string(alphabet_size));
    }
    Evaluation ev;
    ev.sop_values.resize(p.sops.size());
    ev.selector_values.resize(p.selectors.size());

    auto selector_matrix = [&](int sid) -> const SelectorMatrix& {
        SelectorMatrix& m = ev.selector_values[static_cast<std::size_t>(sid)];
        if (m.rows != 0) return m;
        const Selector& sel = p.selectors[static_cast<std::size_t>(sid)];
        m.rows = n;
        m.cols = n;
        m.entries.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
        const auto& k1 = ev.sop_values[static_cast<std::size_t>(sel.keys[0])];
        const auto& q1 = ev.sop_values[static_cast<std::size_t>(sel.queries[0])];
        const auto* k2 = sel.keys.size() > 1
                             ? &ev.sop_values[static_cast<std::size_t>(sel.keys[1])]
                             : nullptr;
        const auto* q2 = sel.queries.size() > 1
                             ? &ev.sop_values[static_cast<std::size_t>(sel.queries[1])]
                             : nullptr;
        for (int q = 0; q < n; ++q) {
            for (int k = 0; k < n; ++k) {
                const double r = sel.pred.eval(k1[static_cast<std::size_t>(k)],
                                               k2 ? (*k2)[static_cast<std::size_t>(k)] : 0.0,
                                               q1[static_cast<std::size_t>(q)],
                                               q2 ? (*q2)[static_cast<std::size_t>(q)] : 0.0);
                m.entries[static_cast<std::size_t>(q * n + k)] = r != 0.0 ? 1 : 0;
            }
        }
        return m;
    };

    for (std::size_t i = 0; i < p.sops.size(); ++i) {
        const Sop& s = p.sops[i];
        std::vector<double>& out = ev.sop_values[i];
        out.assign(static_cast<std::size_t>(n), 0.0);
        switch (s.kind) {
            case SopKind::Tokens:
                for (int j = 0; j < n; ++j)
                    out[static_cast<std::size_t>(j)] = sequence[static_cast<std::size_t>(j)];
                break;
            case SopKind::Indices:
                for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = j;
                break;
            case SopKind::Number:
                std::fill(out.begin(), out.end(), s.number);
                break;
            case SopKind::Elementwise: {
                const auto& a = ev.sop_values[static_cast<std::size_t>(s.args[0])];
                const auto* b = s.args.size() > 1
                                    ? &ev.sop_values[static_cast<std::size_t>(s.args[1])]
                                    : nullptr;
                for (int j = 0; j < n; ++j)
                    out[static_cast<std::size_t>(j)] =
                        eval_scalar(s.eop, a[static_cast<std::size_t>(j)],
                                    b ? (*b)[static_cast<std::size_t>(j)] : 0.0);
                break;
            }
            case SopKind::Aggregate:
            case SopKind::Gather: {
                const SelectorMatrix& m = selector_matrix(s.selector);
                const auto& vals = ev.sop_values[static_cast<std::size_t>(s.args[0])];
                for (int q = 0; q < n; ++q) {
                    double sum = 0.0;
                    int count = 0;
                    for (int k = 0; k < n; ++k) {
                        if (m.at(q, k)) {
                            sum += vals[static_cast<std::size_t>(k)];
                            ++count;
                        }
                    }
                    if (s.kind == SopKind::Gather && count > 1)
                        throw EvaluatorFailure("gather selected " + std::to_string(count) +
                                               " keys at position " + std::to_string(q) +
                                               " (s-op '" + s.name + "')");
                    out[static_cast<std::size_t>(q)] =
                        count == 0 ? 0.0 : sum / static_cast<double>(count);
                }
                break;
            }
            case SopKind::Width: {
                const SelectorMatrix& m = selector_matrix(s.selector);
                for (int q = 0; q < n; ++q) {
                    int count = 0;
                    for (int k = 0; k < n; ++k)
                        if (m.at(q, k)) ++count;
                    out[static_cast<std::size_t>(q)] = count;
                }
                break;
            }
        }
    }
    return ev;
}

std::vector<double> interpret(const Program& p, const std::vector<int>& sequence,
                              int alphabet_size) {
    Evaluation ev = evaluate(p, sequence, alphabet_size);
    return ev.sop_values[static_cast<std::size_t>(p.output)];
}

std::vector<double> evaluate_sop_with_fixed(const Program& p, int target,
                                            const std::map<int, std::vector<double>>& fixed,
                                            const std::vector<int>& sequence, int alphabet_size) {
    const int n = static_cast<int>(sequence.size());
    std::map<int, std::vector<double>> memo;

    std::function<const std::vector<double>&(int)> eval_sop = [&](int id) -> const std::vector<double>& {
        if (id != target) {
            auto fit = fixed.find(id);
            if (fit != fixed.end()) return fit->second;
        }
        auto mit = memo.find(id);
        if (mit != memo.end()) return mit->second;

        const Sop& s = p.sop(id);
        std::vector<double> out(static_cast<std::size_t>(n), 0.0);
        switch (s.kind) {
            case SopKind::Tokens:
                for (int j = 0; j < n; ++j)
                    out[static_cast<std::size_t>(j)] = sequence[static_cast<std::size_t>(j)];
                break;
            case SopKind::Indices:
                for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = j;
                break;
            case SopKind::Number:
                std::fill(out.begin(), out.end(), s.number);
                break;
            case SopKind::Elementwise: {
                const auto& a = eval_sop(s.args[0]);
                const std::vector<double>* b = s.args.size() > 1 ? &eval_sop(s.args[1]) : nullptr;
                for (int j = 0; j < n; ++j)
                    out[static_cast<std::size_t>(j)] =
                        eval_scalar(s.eop, a[static_cast<std::size_t>(j)],
                                    b ? (*b)[static_cast<std::size_t>(j)] : 0.0);
                break;
            }
            case SopKind::Aggregate:
            case SopKind::Gather:
            case SopKind::Width: {
                const Selector& sel = p.selectors[static_cast<std::size_t>(s.selector)];
                const auto& k1 = eval_sop(sel.keys[0]);
                const auto& q1 = eval_sop(sel.queries[0]);
                const std::vector<double>* k2 =
                    sel.keys.size() > 1 ? &eval_sop(sel.keys[1]) : nullptr;
                const std::vector<double>* q2 =
                    sel.queries.size() > 1 ? &eval_sop(sel.queries[1]) : nullptr;
                const std::vector<double>* vals =
                    s.kind == SopKind::Width ? nullptr : &eval_sop(s.args[0]);
                for (int q = 0; q < n; ++q) {
                    double sum = 0.0;
                    int count = 0;
                    for (int k = 0; k < n; ++k) {
                        const double r =
                            sel.pred.eval(k1[static_cast<std::size_t>(k)],
                                          k2 ? (*k2)[static_cast<std::size_t>(k)] : 0.0,
                                          q1[static_cast<std::size_t>(q)],
                                          q2 ? (*q2)[static_cast<std::size_t>(q)] : 0.0);
                        if (r != 0.0) {
                            if (vals) sum += (*vals)[static_cast<std::size_t>(k)];
                            ++count;
                        }
                    }
                    if (s.kind == SopKind::Width)
                        out[static_cast<std::size_t>(q)] = count;
                    else if (s.kind == SopKind::Gather && count > 1)
                        throw EvaluatorFailure("gather ambiguity under intervention at position " +
                                               std::to_string(q));
                    else
                        out[static_cast<std::size_t>(q)] =
                            count == 0 ? 0.0 : sum / static_cast<double>(count);
                }
                break;
            }
        }
        return memo.emplace(id, std::move(out)).first->second;
    };

    (void)alphabet_size;
    return eval_sop(target);
}

bool output_is_boolean(const Program& p) {
    const Sop& out = p.sop(p.output);
    if (out.kind == SopKind::Elementwise) return eop_is_boolean(out.eop);
    return false;
}

Vec unembed_value(double value, bool boolean, int alphabet_size) {
    Vec v = Vec::Zero(alphabet_size);
    if (boolean) {
        const double b = value != 0.0 ? 1.0 : 0.0;
        v[0] = 1.0 - b;
        if (alphabet_size > 1) v[1] = b;
        return v;
    }
    const double rounded = std::round(value);
    if (rounded == value && rounded >= 1.0 && rounded <= alphabet_size)
        v[static_cast<Eigen::Index>(rounded) - 1] = 1.0;
    return v;
}

Vec reference_output(const Program& p, const std::vector<int>& sequence, int alphabet_size) {
    const auto vals = interpret(p, sequence, alphabet_size);
    return unembed_value(vals.back(), output_is_boolean(p), alphabet_size);
}

std::vector<std::string> named_parent_names(const Program& p, int sop_id) {
    auto named_of = [&](int id) -> std::string {
        const Sop& s = p.sop(id);
        auto it = p.named.find(s.name);
        return (it != p.named.end() && it->second == id) ? s.name : std::string();
    };
    std::vector<std::vector<std::string>> named_parents(p.sops.size());
    for (std::size_t i = 0; i <= static_cast<std::size_t>(sop_id); ++i) {
        const Sop& s = p.sops[i];
        std::vector<int> deps = s.args;
        if (s.selector >= 0) {
            const Selector& sel = p.selectors[static_cast<std::size_t>(s.selector)];
            deps.insert(deps.end(), sel.keys.begin(), sel.keys.end());
            deps.insert(deps.end(), sel.queries.begin(), sel.queries.end());
        }
        std::set<std::string> acc;
        for (int d : deps) {
            const std::string nm = named_of(d);
            if (!nm.empty() && d != static_cast<int>(i)) {
                acc.insert(nm);
            } else {
                for (const auto& g : named_parents[static_cast<std::size_t>(d)]) acc.insert(g);
            }
        }
        named_parents[i] = std::vector<std::string>(acc.begin(), acc.end());
    }
    return named_parents[static_cast<std::size_t>(sop_id)];
}

CausalModel abstract_model(const Program& p, int sequence_length, int alphabet_size) {
    auto prog = std::make_shared<Program>(p);
    std::vector<Variable> vars;
    vars.push_back({"U", sequence_length, VarKind::Input});

    std::vector<Transition> transitions;
    for (const auto& [name, id] : p.named) {
        vars.push_back({name, sequence_length, VarKind::Hidden});
        Transition t;
        t.target = name;
        t.parents = named_parent_names(p, id);
        const int sop_id = id;
        const int alpha = alphabet_size;
        const std::vector<std::string> parent_names = t.parents;
        // Recomputes this s-op from its named parents' (possibly intervened)
        // values, re-evaluating only the anonymous intermediates in between.
        t.op = make_lambda([prog, sop_id, alpha, parent_names](
                               const std::vector<const Vec*>& parents, const Vec& input) {
            std::map<int, std::vector<double>> fixed;
            for (std::size_t i = 0; i < parent_names.size(); ++i) {
                const int pid = prog->named.at(parent_names[i]);
                std::vector<double> vals(static_cast<std::size_t>(parents[i]->size()));
                for (Eigen::Index j = 0; j < parents[i]->size(); ++j)
                    vals[static_cast<std::size_t>(j)] = (*parents[i])[j];
                fixed[pid] = std::move(vals);
            }
            std::vector<int> seq(static_cast<std::size_t>(input.size()));
            for (Eigen::Index i = 0; i < input.size(); ++i)
                seq[static_cast<std::size_t>(i)] = static_cast<int>(input[i]);
            const auto vals = evaluate_sop_with_fixed(*prog, sop_id, fixed, seq, alpha);
            Vec v(static_cast<Eigen::Index>(vals.size()));
            for (std::size_t i = 0; i < vals.size(); ++i)
                v[static_cast<Eigen::Index>(i)] = vals[i];
            return v;
        });
        transitions.push_back(std::move(t));
    }

    vars.push_back({"out_logits", alphabet_size, VarKind::Output});
    Transition t;
    t.target = "out_logits";
    t.parents = {prog->sop(prog->output).name};
    const bool boolean = output_is_boolean(p);
    const int alpha = alphabet_size;
    t.op = make_lambda([boolean, alpha](const std::vector<const Vec*>& parents, const Vec&) {
        const Vec& seq = *parents[0];
        return unembed_value(seq[seq.size() - 1], boolean, alpha);
    });
    transitions.push_back(std::move(t));

    return build_model(std::move(vars), "U", std::move(transitions));
}

// ---------------------------------------------------------------------------
// Builtin interpretations
// ---------------------------------------------------------------------------

namespace {

const char* kRankAsc =
    "rank = width(select(tokens, indices, tokens, indices, k1 < q1 or (k1 == q1 and k2 < q2)))\n"
    "sorted = gather(select(rank, indices, k == q), tokens)\n";

}  // namespace

std::string builtin_source(int interpretation, int n) {
    if (n < 3 || n > 10) throw ConfigError("builtin interpretations require 3 <= n <= 10");
    std::ostringstream os;
    switch (interpretation) {
        case 1:
            // Sort ascending; difference between each element and the one
            // before it (a phantom 0 precedes the first); all equal.
            os << kRankAsc
               << "prev = gather(select(indices, indices, k + 1 == q), sorted)\n"
                  "diff = sorted - prev\n"
                  "diff0 = gather(select(indices, indices, k == 0), diff)\n"
                  "out = aggregate(select(indices, indices, true), diff == diff0) == 1\n";
            break;
        case 2:
            // Sort descending; add the index to each element; all equal.
            os << "rankd = width(select(tokens, indices, tokens, indices, k1 > q1 or (k1 == q1 "
                  "and k2 < q2)))\n"
                  "sortd = gather(select(rankd, indices, k == q), tokens)\n"
                  "lifted = sortd + indices\n"
                  "lifted0 = gather(select(indices, indices, k == 0), lifted)\n"
                  "out = aggregate(select(indices, indices, true), lifted == lifted0) == 1\n";
            break;
        case 3:
            // Sort ascending; interleave with the reversed copy; sum the
            // interleaved pairs; all pair sums equal, and no interleaved
            // element may meet its own duplicate neighbour.
            os << kRankAsc << "rev = gather(select(indices, indices, k + q == " << (n - 1)
               << "), sorted)\n"
                  "folded = sorted + rev\n"
                  "folded0 = gather(select(indices, indices, k == 0), folded)\n"
                  "symmetric = aggregate(select(indices, indices, true), folded == folded0) == 1\n"
                  "nxt = gather(select(indices, indices, k == q + 1), sorted)\n"
                  "repeats = aggregate(select(indices, indices, true), sorted == nxt) > 0\n"
                  "out = symmetric and not repeats\n";
            break;
        case 4:
            // Sort ascending; the sorted parities must alternate (odd first).
            os << kRankAsc
               << "parity = sorted % 2\n"
                  "prevpar = gather(select(indices, indices, k + 1 == q), parity)\n"
                  "out = aggregate(select(indices, indices, true), parity != prevpar) == 1\n";
            break;
        case 5:
            // Pigeonhole: flag duplicated tokens; smear the global flag onto
            // its successor; the smeared sequence is flat only when no
            // duplicate exists.
            os << "same = width(select(tokens, tokens, k == q))\n"
                  "dup = same >= 2\n"
                  "anydup = aggregate(select(indices, indices, true), dup) > 0\n"
                  "nextflag = gather(select(indices, indices, k == q + 1), anydup)\n"
                  "smear = anydup + nextflag\n"
                  "smear0 = gather(select(indices, indices, k == 0), smear)\n"
                  "out = aggregate(select(indices, indices, true), smear == smear0) == 1\n";
            break;
        case 6:
            // Replace each element by its strict-less count; a permutation is
            // exactly the case where no two counts collide.
            os << "less = width(select(tokens, tokens, k < q))\n"
                  "shared = width(select(less, less, k == q))\n"
                  "collide = shared >= 2\n"
                  "out = aggregate(select(indices, indices, true), collide) == 0\n";
            break;
        default:
            throw ConfigError("interpretation index must be 1..6");
    }
    return os.str();
}

std::vector<Program> builtin_interpretations(int n) {
    std::vector<Program> out;
    for (int i = 1; i <= 6; ++i) out.push_back(parse_program(builtin_source(i, n)));
    return out;
}

bool is_permutation(const std::vector<int>& seq, int n) {
    if (static_cast<int>(seq.size()) != n) return false;
    std::vector<int> counts(static_cast<std::size_t>(n) + 1, 0);
    for (int v : seq) {
        if (v < 1 || v > n) return false;
        ++counts[static_cast<std::size_t>(v)];
    }
    for (int v = 1; v <= n; ++v)
        if (counts[static_cast<std::size_t>(v)] != 1) return false;
    return true;
}

}  // namespace rasp
}  // namespace interpeq
