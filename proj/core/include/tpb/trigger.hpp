#pragma once

// Temporal-pattern triggers: boolean formulas over arithmetic constraints
// between the values of a fixed-length sliding window of a scalar series.
//
//   trigger tau(window=4, duration=7) { d[1]-d[0] > -3 && d[1]-d[0] < -2.6 }
//
// Window positions are 0-based: d[0] is the oldest value, d[N-1] the newest.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tpb/rng.hpp"

namespace tpb::trigger {

enum class ArithOp { Subtract, Add, Multiply, Divide };
enum class Comparator { Eq, Ne, Gt, Ge, Lt, Le };

/// Divisors with magnitude below this make a Divide atom evaluate to false.
inline constexpr double kDivideEpsilon = 1e-12;

struct ConstraintAtom {
    std::size_t lhs_index = 0;
    std::size_t rhs_index = 0;
    ArithOp op = ArithOp::Subtract;
    Comparator cmp = Comparator::Gt;
    double constant = 0.0;

    bool operator==(const ConstraintAtom&) const = default;
};

struct Expr {
    enum class Kind { Atom, And, Or, Ite };

    Kind kind = Kind::Atom;
    ConstraintAtom atom;          // Kind::Atom only
    std::vector<Expr> children;   // And/Or: {left, right}; Ite: {cond, then, else}

    static Expr make_atom(ConstraintAtom a);
    static Expr make_and(Expr left, Expr right);
    static Expr make_or(Expr left, Expr right);
    static Expr make_ite(Expr cond, Expr then_branch, Expr else_branch);

    bool operator==(const Expr&) const = default;
};

struct TriggerFormula {
    std::string name;
    std::size_t window_len = 2;
    std::optional<std::size_t> duration;  // attack duration L, when declared
    Expr root;

    bool operator==(const TriggerFormula&) const = default;
};

struct TriggerOccurrence {
    std::size_t end_index = 0;
    std::vector<double> window;

    bool operator==(const TriggerOccurrence&) const = default;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, std::size_t line, std::size_t column);

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

class SynthesisFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses one trigger definition. Throws ParseError (with 1-based line and
/// column) on syntax errors, unknown operators, or indices >= window.
/// Windows longer than 10 are accepted with a logged warning.
TriggerFormula parse(std::string_view text);
TriggerFormula load(const std::string& path);

/// Canonical source text; parse(print(f)) == f.
std::string print(const TriggerFormula& formula);
std::string print(const Expr& expr);

bool evaluate_atom(const ConstraintAtom& atom, std::span<const double> window);
bool evaluate(const Expr& expr, std::span<const double> window);
/// Throws std::invalid_argument unless window.size() == formula.window_len.
bool evaluate(const TriggerFormula& formula, std::span<const double> window);

/// All end indices t (ascending, overlaps allowed) whose window
/// series[t-N+1 .. t] satisfies the formula. Throws std::invalid_argument when
/// the series is shorter than the window.
std::vector<TriggerOccurrence> scan(const TriggerFormula& formula, std::span<const double> series);
std::vector<std::size_t> scan_end_indices(const TriggerFormula& formula,
                                          std::span<const double> series);

std::size_t count_atoms(const Expr& expr);

/// Closed interval of admissible channel values.
struct ChannelBounds {
    double lo = 1.0;
    double hi = 1000.0;
};

inline constexpr std::size_t kSynthesisAttemptBudget = 10'000;

/// Returns a window that satisfies the formula and lies within `bounds`.
///
/// The formula is expanded into disjunctive clauses (ite(a,b,c) becomes
/// (a && b) || (!a && c)); a clause is picked uniformly among those not yet
/// shown infeasible. Clauses made only of subtraction atoms are solved by
/// interval propagation: d[k] is drawn uniformly from the intersection of the
/// intervals implied by every atom linking it to an earlier position, and
/// unconstrained positions keep their base value. Other clauses fall back to
/// rejection sampling around the base window. Every candidate is re-checked
/// with evaluate() before it is returned. Throws SynthesisFailed after
/// kSynthesisAttemptBudget attempts.
std::vector<double> synthesize_window(const TriggerFormula& formula,
                                      std::span<const double> base_window,
                                      const ChannelBounds& bounds, Rng& rng);

std::string_view to_string(ArithOp op);
std::string_view to_string(Comparator cmp);
Comparator negate(Comparator cmp);
/// Comparator obtained by swapping the two sides (a < b  <=>  b > a).
Comparator mirror(Comparator cmp);

}  // namespace tpb::trigger
