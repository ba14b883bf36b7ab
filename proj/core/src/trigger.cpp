#include "tpb/trigger.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace tpb::trigger {

Expr Expr::make_atom(ConstraintAtom a) {
    Expr e;
    e.kind = Kind::Atom;
    e.atom = a;
    return e;
}

Expr Expr::make_and(Expr left, Expr right) {
    Expr e;
    e.kind = Kind::And;
    e.children.push_back(std::move(left));
    e.children.push_back(std::move(right));
    return e;
}

Expr Expr::make_or(Expr left, Expr right) {
    Expr e;
    e.kind = Kind::Or;
    e.children.push_back(std::move(left));
    e.children.push_back(std::move(right));
    return e;
}

Expr Expr::make_ite(Expr cond, Expr then_branch, Expr else_branch) {
    Expr e;
    e.kind = Kind::Ite;
    e.children.push_back(std::move(cond));
    e.children.push_back(std::move(then_branch));
    e.children.push_back(std::move(else_branch));
    return e;
}

ParseError::ParseError(const std::string& message, std::size_t line, std::size_t column)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

std::string_view to_string(ArithOp op) {
    switch (op) {
        case ArithOp::Subtract: return "-";
        case ArithOp::Add: return "+";
        case ArithOp::Multiply: return "*";
        case ArithOp::Divide: return "/";
    }
    return "?";
}

std::string_view to_string(Comparator cmp) {
    switch (cmp) {
        case Comparator::Eq: return "==";
        case Comparator::Ne: return "!=";
        case Comparator::Gt: return ">";
        case Comparator::Ge: return ">=";
        case Comparator::Lt: return "<";
        case Comparator::Le: return "<=";
    }
    return "?";
}

Comparator negate(Comparator cmp) {
    switch (cmp) {
        case Comparator::Eq: return Comparator::Ne;
        case Comparator::Ne: return Comparator::Eq;
        case Comparator::Gt: return Comparator::Le;
        case Comparator::Ge: return Comparator::Lt;
        case Comparator::Lt: return Comparator::Ge;
        case Comparator::Le: return Comparator::Gt;
    }
    return cmp;
}

Comparator mirror(Comparator cmp) {
    switch (cmp) {
        case Comparator::Gt: return Comparator::Lt;
        case Comparator::Ge: return Comparator::Le;
        case Comparator::Lt: return Comparator::Gt;
        case Comparator::Le: return Comparator::Ge;
        default: return cmp;
    }
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    TriggerFormula parse_trigger() {
        TriggerFormula formula;
        expect_keyword("trigger");
        formula.name = parse_ident();
        expect("(");
        expect_keyword("window");
        expect("=");
        const auto [wline, wcol] = position();
        formula.window_len = parse_uint();
        if (formula.window_len < 2) fail_at("window must be at least 2", wline, wcol);
        skip_ws();
        if (peek_is(",")) {
            advance(1);
            expect_keyword("duration");
            expect("=");
            const auto [dline, dcol] = position();
            const auto duration = parse_uint();
            if (duration == 0) fail_at("duration must be positive", dline, dcol);
            formula.duration = duration;
        }
        expect(")");
        expect("{");
        window_len_ = formula.window_len;
        formula.root = parse_expr();
        expect("}");
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        if (formula.window_len > 10) {
            spdlog::warn("trigger '{}' spans {} timesteps; windows above 10 are hard for the "
                         "recurrent policy to memorize",
                         formula.name, formula.window_len);
        }
        return formula;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t col_ = 1;
    std::size_t window_len_ = 0;

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(message, line_, col_);
    }
    [[noreturn]] static void fail_at(const std::string& message, std::size_t line,
                                     std::size_t col) {
        throw ParseError(message, line, col);
    }

    std::pair<std::size_t, std::size_t> position() {
        skip_ws();
        return {line_, col_};
    }

    void advance(std::size_t n) {
        for (std::size_t i = 0; i < n && pos_ < text_.size(); ++i) {
            if (text_[pos_] == '\n') {
                ++line_;
                col_ = 1;
            } else {
                ++col_;
            }
            ++pos_;
        }
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            advance(1);
        }
    }

    bool peek_is(std::string_view token) const {
        return text_.substr(pos_, token.size()) == token;
    }

    void expect(std::string_view token) {
        skip_ws();
        if (!peek_is(token)) {
            fail("expected '" + std::string(token) + "'" + found());
        }
        advance(token.size());
    }

    std::string found() const {
        if (pos_ >= text_.size()) return ", found end of input";
        return ", found '" + std::string(1, text_[pos_]) + "'";
    }

    static bool ident_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    }

    std::string parse_ident() {
        skip_ws();
        const auto start = pos_;
        if (pos_ >= text_.size() ||
            !(std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
            fail("expected identifier" + found());
        }
        while (pos_ < text_.size() && ident_char(text_[pos_])) advance(1);
        return std::string(text_.substr(start, pos_ - start));
    }

    void expect_keyword(std::string_view keyword) {
        skip_ws();
        const auto [line, col] = std::pair{line_, col_};
        const auto word = parse_ident();
        if (word != keyword) {
            fail_at("expected '" + std::string(keyword) + "', found '" + word + "'", line, col);
        }
    }

    bool at_keyword(std::string_view keyword) {
        skip_ws();
        if (!peek_is(keyword)) return false;
        const auto after = pos_ + keyword.size();
        return after >= text_.size() || !ident_char(text_[after]);
    }

    std::size_t parse_uint() {
        skip_ws();
        const char* first = text_.data() + pos_;
        const char* last = text_.data() + text_.size();
        std::size_t value = 0;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc{} || ptr == first) fail("expected integer" + found());
        advance(static_cast<std::size_t>(ptr - first));
        return value;
    }

    double parse_number() {
        skip_ws();
        const char* first = text_.data() + pos_;
        const char* last = text_.data() + text_.size();
        const char* start = first;
        if (start < last && *start == '+') ++start;  // from_chars rejects a leading '+'
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(start, last, value);
        if (ec != std::errc{} || ptr == start) fail("expected number" + found());
        if (!std::isfinite(value)) fail("constant must be finite");
        advance(static_cast<std::size_t>(ptr - first));
        return value;
    }

    std::size_t parse_index() {
        skip_ws();
        if (!peek_is("d")) fail("expected window reference 'd['" + found());
        advance(1);
        expect("[");
        const auto [iline, icol] = position();
        const auto index = parse_uint();
        expect("]");
        if (index >= window_len_) {
            fail_at("index d[" + std::to_string(index) + "] out of range for window " +
                        std::to_string(window_len_),
                    iline, icol);
        }
        return index;
    }

    ArithOp parse_op() {
        skip_ws();
        if (pos_ >= text_.size()) fail("expected arithmetic operator" + found());
        switch (text_[pos_]) {
            case '-': advance(1); return ArithOp::Subtract;
            case '+': advance(1); return ArithOp::Add;
            case '*': advance(1); return ArithOp::Multiply;
            case '/': advance(1); return ArithOp::Divide;
            default: fail("unknown arithmetic operator '" + std::string(1, text_[pos_]) + "'");
        }
    }

    Comparator parse_cmp() {
        skip_ws();
        static constexpr std::pair<std::string_view, Comparator> table[] = {
            {"==", Comparator::Eq}, {"!=", Comparator::Ne}, {">=", Comparator::Ge},
            {"<=", Comparator::Le}, {">", Comparator::Gt},  {"<", Comparator::Lt},
        };
        for (const auto& [token, cmp] : table) {
            if (peek_is(token)) {
                advance(token.size());
                return cmp;
            }
        }
        if (pos_ >= text_.size()) fail("expected comparator" + found());
        std::size_t len = 0;
        while (pos_ + len < text_.size() && std::ispunct(static_cast<unsigned char>(text_[pos_ + len])) &&
               text_[pos_ + len] != '-' && text_[pos_ + len] != '+' && text_[pos_ + len] != '.') {
            ++len;
        }
        fail("unknown comparator '" + std::string(text_.substr(pos_, std::max<std::size_t>(len, 1))) +
             "'");
    }

    Expr parse_expr() { return parse_or(); }

    Expr parse_or() {
        Expr left = parse_and();
        while (true) {
            skip_ws();
            if (!peek_is("||")) break;
            advance(2);
            left = Expr::make_or(std::move(left), parse_and());
        }
        return left;
    }

    Expr parse_and() {
        Expr left = parse_unit();
        while (true) {
            skip_ws();
            if (!peek_is("&&")) break;
            advance(2);
            left = Expr::make_and(std::move(left), parse_unit());
        }
        return left;
    }

    Expr parse_unit() {
        skip_ws();
        if (peek_is("(")) {
            advance(1);
            Expr inner = parse_expr();
            expect(")");
            return inner;
        }
        if (at_keyword("ite")) {
            advance(3);
            expect("(");
            Expr cond = parse_expr();
            expect(",");
            Expr then_branch = parse_expr();
            expect(",");
            Expr else_branch = parse_expr();
            expect(")");
            return Expr::make_ite(std::move(cond), std::move(then_branch), std::move(else_branch));
        }
        return parse_atom();
    }

    Expr parse_atom() {
        ConstraintAtom atom;
        atom.lhs_index = parse_index();
        atom.op = parse_op();
        atom.rhs_index = parse_index();
        atom.cmp = parse_cmp();
        atom.constant = parse_number();
        return Expr::make_atom(atom);
    }
};

std::string format_constant(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    (void)ec;
    return std::string(buf, end);
}

void print_expr(const Expr& expr, std::string& out);

void print_child(const Expr& child, Expr::Kind parent, bool right_side, std::string& out) {
    // Binary chains parse left-associatively, so a same-kind right child and
    // an Or nested under And both need explicit parentheses.
    const bool needs_parens =
        (child.kind == Expr::Kind::Or && parent == Expr::Kind::And) ||
        (child.kind == parent && right_side);
    if (needs_parens) out += '(';
    print_expr(child, out);
    if (needs_parens) out += ')';
}

void print_expr(const Expr& expr, std::string& out) {
    switch (expr.kind) {
        case Expr::Kind::Atom: {
            const auto& a = expr.atom;
            out += "d[" + std::to_string(a.lhs_index) + "]";
            out += to_string(a.op);
            out += "d[" + std::to_string(a.rhs_index) + "] ";
            out += to_string(a.cmp);
            out += ' ';
            out += format_constant(a.constant);
            break;
        }
        case Expr::Kind::And:
        case Expr::Kind::Or:
            print_child(expr.children[0], expr.kind, false, out);
            out += expr.kind == Expr::Kind::And ? " && " : " || ";
            print_child(expr.children[1], expr.kind, true, out);
            break;
        case Expr::Kind::Ite:
            out += "ite(";
            print_expr(expr.children[0], out);
            out += ", ";
            print_expr(expr.children[1], out);
            out += ", ";
            print_expr(expr.children[2], out);
            out += ')';
            break;
    }
}

}  // namespace

TriggerFormula parse(std::string_view text) { return Parser(text).parse_trigger(); }

TriggerFormula load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trigger file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string print(const Expr& expr) {
    std::string out;
    print_expr(expr, out);
    return out;
}

std::string print(const TriggerFormula& formula) {
    std::string out = "trigger " + formula.name + "(window=" + std::to_string(formula.window_len);
    if (formula.duration) out += ", duration=" + std::to_string(*formula.duration);
    out += ") { ";
    out += print(formula.root);
    out += " }";
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

bool evaluate_atom(const ConstraintAtom& atom, std::span<const double> window) {
    const double x = window[atom.lhs_index];
    const double y = window[atom.rhs_index];
    double value = 0.0;
    switch (atom.op) {
        case ArithOp::Subtract: value = x - y; break;
        case ArithOp::Add: value = x + y; break;
        case ArithOp::Multiply: value = x * y; break;
        case ArithOp::Divide:
            if (std::abs(y) < kDivideEpsilon) return false;
            value = x / y;
            break;
    }
    switch (atom.cmp) {
        case Comparator::Eq: return value == atom.constant;
        case Comparator::Ne: return value != atom.constant;
        case Comparator::Gt: return value > atom.constant;
        case Comparator::Ge: return value >= atom.constant;
        case Comparator::Lt: return value < atom.constant;
        case Comparator::Le: return value <= atom.constant;
    }
    return false;
}

bool evaluate(const Expr& expr, std::span<const double> window) {
    switch (expr.kind) {
        case Expr::Kind::Atom: return evaluate_atom(expr.atom, window);
        case Expr::Kind::And:
            return evaluate(expr.children[0], window) && evaluate(expr.children[1], window);
        case Expr::Kind::Or:
            return evaluate(expr.children[0], window) || evaluate(expr.children[1], window);
        case Expr::Kind::Ite:
            return evaluate(expr.children[0], window) ? evaluate(expr.children[1], window)
                                                      : evaluate(expr.children[2], window);
    }
    return false;
}

bool evaluate(const TriggerFormula& formula, std::span<const double> window) {
    if (window.size() != formula.window_len) {
        throw std::invalid_argument("trigger '" + formula.name + "' expects a window of " +
                                    std::to_string(formula.window_len) + " values, got " +
                                    std::to_string(window.size()));
    }
    return evaluate(formula.root, window);
}

std::vector<std::size_t> scan_end_indices(const TriggerFormula& formula,
                                          std::span<const double> series) {
    const std::size_t n = formula.window_len;
    if (series.size() < n) {
        throw std::invalid_argument("series of length " + std::to_string(series.size()) +
                                    " is shorter than trigger window " + std::to_string(n));
    }
    std::vector<std::size_t> ends;
    for (std::size_t end = n - 1; end < series.size(); ++end) {
        if (evaluate(formula.root, series.subspan(end + 1 - n, n))) ends.push_back(end);
    }
    return ends;
}

std::vector<TriggerOccurrence> scan(const TriggerFormula& formula,
                                    std::span<const double> series) {
    std::vector<TriggerOccurrence> out;
    const std::size_t n = formula.window_len;
    for (std::size_t end : scan_end_indices(formula, series)) {
        const auto window = series.subspan(end + 1 - n, n);
        out.push_back({end, std::vector<double>(window.begin(), window.end())});
    }
    return out;
}

std::size_t count_atoms(const Expr& expr) {
    if (expr.kind == Expr::Kind::Atom) return 1;
    std::size_t total = 0;
    for (const auto& child : expr.children) total += count_atoms(child);
    return total;
}

}  // namespace tpb::trigger
