#include <algorithm>
#include <cmath>
#include <limits>

#include "tpb/trigger.hpp"

namespace tpb::trigger {

namespace {

using Clause = std::vector<ConstraintAtom>;
using Dnf = std::vector<Clause>;

constexpr std::size_t kMaxClauses = 4096;

ConstraintAtom negated(ConstraintAtom atom) {
    atom.cmp = negate(atom.cmp);
    return atom;
}

Dnf conjoin(const Dnf& a, const Dnf& b) {
    Dnf out;
    if (a.size() * b.size() > kMaxClauses) return {};  // caller falls back to rejection
    out.reserve(a.size() * b.size());
    for (const auto& ca : a) {
        for (const auto& cb : b) {
            Clause merged = ca;
            merged.insert(merged.end(), cb.begin(), cb.end());
            out.push_back(std::move(merged));
        }
    }
    return out;
}

Dnf disjoin(Dnf a, const Dnf& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// Disjunctive normal form with negation pushed down to atoms. Returns an
// empty DNF if the expansion exceeds kMaxClauses.
Dnf to_dnf(const Expr& expr, bool negate_expr) {
    switch (expr.kind) {
        case Expr::Kind::Atom:
            return Dnf{Clause{negate_expr ? negated(expr.atom) : expr.atom}};
        case Expr::Kind::And:
        case Expr::Kind::Or: {
            const bool conj = (expr.kind == Expr::Kind::And) != negate_expr;
            Dnf left = to_dnf(expr.children[0], negate_expr);
            Dnf right = to_dnf(expr.children[1], negate_expr);
            if (left.empty() || right.empty()) return {};
            return conj ? conjoin(left, right) : disjoin(std::move(left), right);
        }
        case Expr::Kind::Ite: {
            // ite(c,t,e) == (c && t) || (!c && e); its negation is
            // (c && !t) || (!c && !e).
            Dnf cond = to_dnf(expr.children[0], false);
            Dnf not_cond = to_dnf(expr.children[0], true);
            Dnf then_part = to_dnf(expr.children[1], negate_expr);
            Dnf else_part = to_dnf(expr.children[2], negate_expr);
            if (cond.empty() || not_cond.empty() || then_part.empty() || else_part.empty()) {
                return {};
            }
            Dnf first = conjoin(cond, then_part);
            Dnf second = conjoin(not_cond, else_part);
            if (first.empty() || second.empty()) return {};
            if (first.size() + second.size() > kMaxClauses) return {};
            return disjoin(std::move(first), second);
        }
    }
    return {};
}

bool constant_atom_holds(const ConstraintAtom& atom) {
    const double probe[1] = {0.0};
    ConstraintAtom a = atom;
    a.lhs_index = 0;
    a.rhs_index = 0;
    // Subtracting a value from itself is 0 for every finite input.
    return evaluate_atom(a, probe);
}

struct Interval {
    double lo;
    double hi;
    bool lo_open = false;
    bool hi_open = false;
    std::optional<double> point;
    std::vector<double> excluded;
    bool constrained = false;

    void lower(double v, bool open) {
        constrained = true;
        if (v > lo || (v == lo && open)) {
            lo = v;
            lo_open = open;
        }
    }
    void upper(double v, bool open) {
        constrained = true;
        if (v < hi || (v == hi && open)) {
            hi = v;
            hi_open = open;
        }
    }
    void apply(Comparator cmp, double v) {
        switch (cmp) {
            case Comparator::Gt: lower(v, true); break;
            case Comparator::Ge: lower(v, false); break;
            case Comparator::Lt: upper(v, true); break;
            case Comparator::Le: upper(v, false); break;
            case Comparator::Eq:
                constrained = true;
                if (point && *point != v) {
                    lo = 1.0;  // contradictory equalities
                    hi = 0.0;
                }
                point = v;
                break;
            case Comparator::Ne:
                constrained = true;
                excluded.push_back(v);
                break;
        }
    }
};

enum class Outcome { Solved, Retry, Infeasible };

bool is_difference_clause(const Clause& clause) {
    return std::all_of(clause.begin(), clause.end(),
                       [](const ConstraintAtom& a) { return a.op == ArithOp::Subtract; });
}

// Assigns positions in increasing order; each atom is enforced when its
// later position is drawn, so earlier values are already fixed.
Outcome propagate(const Clause& clause, std::span<const double> base, const ChannelBounds& bounds,
                  bool random_anchors, Rng& rng, std::vector<double>& out) {
    const std::size_t n = base.size();
    out.assign(base.begin(), base.end());
    for (const auto& atom : clause) {
        if (atom.lhs_index == atom.rhs_index && !constant_atom_holds(atom)) return Outcome::Infeasible;
    }
    for (std::size_t k = 0; k < n; ++k) {
        Interval iv;
        iv.lo = bounds.lo;
        iv.hi = bounds.hi;
        for (const auto& atom : clause) {
            if (atom.lhs_index == atom.rhs_index) continue;
            if (std::max(atom.lhs_index, atom.rhs_index) != k) continue;
            if (atom.lhs_index == k) {
                // d[k] - d[j] cmp c   =>   d[k] cmp c + d[j]
                iv.apply(atom.cmp, atom.constant + out[atom.rhs_index]);
            } else {
                // d[j] - d[k] cmp c   =>   d[k] mirror(cmp) d[j] - c
                iv.apply(mirror(atom.cmp), out[atom.lhs_index] - atom.constant);
            }
        }
        if (!iv.constrained) {
            if (random_anchors) {
                out[k] = std::uniform_real_distribution<double>(bounds.lo, bounds.hi)(rng);
            } else {
                out[k] = std::clamp(base[k], bounds.lo, bounds.hi);
            }
            continue;
        }
        if (iv.lo > iv.hi || (iv.lo == iv.hi && (iv.lo_open || iv.hi_open))) return Outcome::Retry;
        double value;
        if (iv.point) {
            value = *iv.point;
            if (value < iv.lo || value > iv.hi || (value == iv.lo && iv.lo_open) ||
                (value == iv.hi && iv.hi_open)) {
                return Outcome::Retry;
            }
        } else if (iv.lo == iv.hi) {
            value = iv.lo;
        } else {
            value = std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
        }
        if (std::find(iv.excluded.begin(), iv.excluded.end(), value) != iv.excluded.end()) {
            return Outcome::Retry;
        }
        out[k] = value;
    }
    return Outcome::Solved;
}

void perturb(std::span<const double> base, const ChannelBounds& bounds, Rng& rng,
             std::vector<double>& out) {
    const double radius = 0.25 * (bounds.hi - bounds.lo);
    out.resize(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
        const double centre = std::clamp(base[k], bounds.lo, bounds.hi);
        const double lo = std::max(bounds.lo, centre - radius);
        const double hi = std::min(bounds.hi, centre + radius);
        out[k] = lo < hi ? std::uniform_real_distribution<double>(lo, hi)(rng) : lo;
    }
}

bool within(std::span<const double> w, const ChannelBounds& bounds) {
    return std::all_of(w.begin(), w.end(),
                       [&](double v) { return std::isfinite(v) && v >= bounds.lo && v <= bounds.hi; });
}

}  // namespace

std::vector<double> synthesize_window(const TriggerFormula& formula,
                                      std::span<const double> base_window,
                                      const ChannelBounds& bounds, Rng& rng) {
    if (base_window.size() != formula.window_len) {
        throw std::invalid_argument("base window length does not match trigger window");
    }
    if (!(bounds.lo <= bounds.hi) || !std::isfinite(bounds.lo) || !std::isfinite(bounds.hi)) {
        throw std::invalid_argument("channel bounds must be finite with lo <= hi");
    }

    const Dnf clauses = to_dnf(formula.root, false);
    std::vector<double> candidate;

    if (clauses.empty()) {
        for (std::size_t attempt = 0; attempt < kSynthesisAttemptBudget; ++attempt) {
            perturb(base_window, bounds, rng, candidate);
            if (evaluate(formula, candidate)) return candidate;
        }
        throw SynthesisFailed("no satisfying window for trigger '" + formula.name + "' within " +
                              std::to_string(kSynthesisAttemptBudget) + " attempts");
    }

    // A clause is declared infeasible after this many consecutive failures so
    // the remaining budget goes to branches that admit solutions.
    const std::size_t per_clause_limit =
        std::max<std::size_t>(64, kSynthesisAttemptBudget / (2 * clauses.size()));
    constexpr std::size_t kBaseAnchorAttempts = 16;

    std::vector<std::size_t> live(clauses.size());
    for (std::size_t i = 0; i < live.size(); ++i) live[i] = i;
    std::vector<std::size_t> failures(clauses.size(), 0);

    for (std::size_t attempt = 0; attempt < kSynthesisAttemptBudget && !live.empty(); ++attempt) {
        const std::size_t pick =
            std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng);
        const std::size_t ci = live[pick];
        const Clause& clause = clauses[ci];

        Outcome outcome;
        if (is_difference_clause(clause)) {
            outcome = propagate(clause, base_window, bounds, failures[ci] >= kBaseAnchorAttempts,
                                rng, candidate);
        } else {
            perturb(base_window, bounds, rng, candidate);
            outcome = Outcome::Solved;
        }
        if (outcome == Outcome::Solved && within(candidate, bounds) &&
            evaluate(formula, candidate)) {
            return candidate;
        }
        if (outcome == Outcome::Infeasible || ++failures[ci] >= per_clause_limit) {
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(pick));
        }
    }
    throw SynthesisFailed("no satisfying window for trigger '" + formula.name + "' within " +
                          std::to_string(kSynthesisAttemptBudget) + " attempts");
}

}  // namespace tpb::trigger
