#pragma once

// Edge-condition expression language: lexer, parser, typed evaluator,
// canonical printer and the builtin connection abstractions.
//
//   cond       := or
//   or         := and ("||" and)*
//   and        := unary ("&&" unary)*
//   unary      := "!" unary | primary
//   primary    := "(" cond ")" | comparison | term
//   comparison := term op term
//   op         := "==" | "!=" | "<" | "<=" | ">" | ">="
//   term       := IDENT | NUMBER | STRING | "true" | "false"

#include <cctype>
#include <charconv>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "polyglot/error.hpp"
#include "polyglot/text.hpp"

namespace polyglot::condition {

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge };

inline constexpr std::string_view op_text(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
  }
  return "?";
}

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct BoolLit {
  bool value;
};
struct NumLit {
  double value;
};
struct StrLit {
  std::string value;
};
struct Var {
  std::string name;
};
struct Compare {
  CmpOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Not {
  ExprPtr operand;
};
struct And {
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Or {
  ExprPtr lhs;
  ExprPtr rhs;
};

struct Expr {
  std::variant<BoolLit, NumLit, StrLit, Var, Compare, Not, And, Or> node;
};

inline ExprPtr boolean(bool v) { return std::make_shared<const Expr>(Expr{BoolLit{v}}); }
inline ExprPtr number(double v) { return std::make_shared<const Expr>(Expr{NumLit{v}}); }
inline ExprPtr string(std::string v) { return std::make_shared<const Expr>(Expr{StrLit{std::move(v)}}); }
inline ExprPtr variable(std::string name) { return std::make_shared<const Expr>(Expr{Var{std::move(name)}}); }
inline ExprPtr compare(CmpOp op, ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<const Expr>(Expr{Compare{op, std::move(lhs), std::move(rhs)}});
}
inline ExprPtr logical_not(ExprPtr operand) { return std::make_shared<const Expr>(Expr{Not{std::move(operand)}}); }
inline ExprPtr logical_and(ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<const Expr>(Expr{And{std::move(lhs), std::move(rhs)}});
}
inline ExprPtr logical_or(ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<const Expr>(Expr{Or{std::move(lhs), std::move(rhs)}});
}

inline bool operator==(const Expr& a, const Expr& b);

inline bool same(const ExprPtr& a, const ExprPtr& b) {
  if (!a || !b) return a == b;
  return *a == *b;
}

inline bool operator==(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      [&](const auto& lhs) -> bool {
        using T = std::decay_t<decltype(lhs)>;
        const auto& rhs = std::get<T>(b.node);
        if constexpr (std::is_same_v<T, BoolLit> || std::is_same_v<T, NumLit> || std::is_same_v<T, StrLit>) {
          return lhs.value == rhs.value;
        } else if constexpr (std::is_same_v<T, Var>) {
          return lhs.name == rhs.name;
        } else if constexpr (std::is_same_v<T, Compare>) {
          return lhs.op == rhs.op && same(lhs.lhs, rhs.lhs) && same(lhs.rhs, rhs.rhs);
        } else if constexpr (std::is_same_v<T, Not>) {
          return same(lhs.operand, rhs.operand);
        } else {
          return same(lhs.lhs, rhs.lhs) && same(lhs.rhs, rhs.rhs);
        }
      },
      a.node);
}

// ---------------------------------------------------------------------------
// Values and evaluation context

enum class ValueType { Bool, Number, String };

inline constexpr std::string_view type_name(ValueType t) {
  switch (t) {
    case ValueType::Bool: return "bool";
    case ValueType::Number: return "number";
    case ValueType::String: return "string";
  }
  return "?";
}

using Value = std::variant<bool, double, std::string>;

inline ValueType type_of(const Value& v) { return static_cast<ValueType>(v.index()); }

using VariableTypes = std::map<std::string, ValueType, std::less<>>;

// The facts an edge condition may read: the latest graded submission.
struct EvaluationContext {
  bool passed = false;
  double score = 0.0;
  std::string answer;
  std::string label;
  int attempts = 1;
  std::string kind;

  std::optional<Value> lookup(std::string_view name) const {
    if (name == "passed") return Value{passed};
    if (name == "score") return Value{score};
    if (name == "answer") return Value{answer};
    if (name == "label") return Value{label};
    if (name == "attempts") return Value{static_cast<double>(attempts)};
    if (name == "kind") return Value{kind};
    return std::nullopt;
  }
};

inline const VariableTypes& context_variables() {
  static const VariableTypes vars = {
      {"passed", ValueType::Bool},   {"score", ValueType::Number},   {"answer", ValueType::String},
      {"label", ValueType::String},  {"attempts", ValueType::Number}, {"kind", ValueType::String},
  };
  return vars;
}

inline std::set<std::string> context_variable_names() {
  std::set<std::string> names;
  for (const auto& [name, type] : context_variables()) names.insert(name);
  return names;
}

// ---------------------------------------------------------------------------
// Lexer

namespace detail {

enum class Tok { Ident, Number, String, True, False, LParen, RParen, Bang, AndAnd, OrOr, Op, End };

struct Token {
  Tok kind;
  std::size_t pos;  // 1-based column of the first character
  std::string text;
  double number = 0.0;
  CmpOp op = CmpOp::Eq;
};

[[noreturn]] inline void syntax_error(std::size_t pos, std::string_view expected) {
  throw Error(Errc::SyntaxError,
              "syntax error at position " + std::to_string(pos) + ": expected " + std::string(expected),
              {{"position", pos}, {"expected", std::string(expected)}});
}

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (true) {
    while (i < src.size() && std::isspace(static_cast<unsigned char>(src[i]))) ++i;
    if (i >= src.size()) {
      out.push_back({Tok::End, src.size() + 1, {}});
      return out;
    }
    const std::size_t start = i;
    const std::size_t pos = i + 1;
    const char c = src[i];
    if (ident_start(c)) {
      while (i < src.size() && ident_char(src[i])) ++i;
      std::string word(src.substr(start, i - start));
      Tok kind = word == "true" ? Tok::True : word == "false" ? Tok::False : Tok::Ident;
      out.push_back({kind, pos, std::move(word)});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
      if (i < src.size() && src[i] == '.') {
        ++i;
        const std::size_t frac_start = i;
        while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        if (i == frac_start) syntax_error(i + 1, "digit after '.'");
      }
      if (i < src.size() && ident_char(src[i])) syntax_error(i + 1, "operator or end of number");
      std::string text(src.substr(start, i - start));
      double value = 0.0;
      std::from_chars(text.data(), text.data() + text.size(), value);
      Token tok{Tok::Number, pos, std::move(text)};
      tok.number = value;
      out.push_back(std::move(tok));
    } else if (c == '"') {
      ++i;
      std::string value;
      bool closed = false;
      while (i < src.size()) {
        char ch = src[i++];
        if (ch == '"') {
          closed = true;
          break;
        }
        if (ch == '\\') {
          if (i >= src.size()) break;
          char esc = src[i];
          if (esc != '"' && esc != '\\') syntax_error(i + 1, "escape \\\" or \\\\");
          value.push_back(esc);
          ++i;
          continue;
        }
        value.push_back(ch);
      }
      if (!closed) syntax_error(src.size() + 1, "closing '\"'");
      out.push_back({Tok::String, pos, std::move(value)});
    } else {
      auto two = src.substr(i, 2);
      auto push_op = [&](CmpOp op, std::size_t len) {
        Token tok{Tok::Op, pos, std::string(src.substr(i, len))};
        tok.op = op;
        out.push_back(std::move(tok));
        i += len;
      };
      if (two == "&&") {
        out.push_back({Tok::AndAnd, pos, "&&"});
        i += 2;
      } else if (two == "||") {
        out.push_back({Tok::OrOr, pos, "||"});
        i += 2;
      } else if (two == "==") {
        push_op(CmpOp::Eq, 2);
      } else if (two == "!=") {
        push_op(CmpOp::Ne, 2);
      } else if (two == "<=") {
        push_op(CmpOp::Le, 2);
      } else if (two == ">=") {
        push_op(CmpOp::Ge, 2);
      } else if (c == '<') {
        push_op(CmpOp::Lt, 1);
      } else if (c == '>') {
        push_op(CmpOp::Gt, 1);
      } else if (c == '!') {
        out.push_back({Tok::Bang, pos, "!"});
        ++i;
      } else if (c == '(') {
        out.push_back({Tok::LParen, pos, "("});
        ++i;
      } else if (c == ')') {
        out.push_back({Tok::RParen, pos, ")"});
        ++i;
      } else {
        syntax_error(pos, "token");
      }
    }
  }
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  ExprPtr parse() {
    ExprPtr e = parse_or();
    if (peek().kind != Tok::End) {
      syntax_error(peek().pos, peek().kind == Tok::Op ? "'&&', '||' or end of input (comparisons do not chain)"
                                                      : "'&&', '||' or end of input");
    }
    return e;
  }

 private:
  static constexpr int kMaxDepth = 200;

  const Token& peek() const { return tokens_[index_]; }
  const Token& take() { return tokens_[index_++]; }

  struct DepthGuard {
    explicit DepthGuard(Parser& p) : parser(p) {
      if (++parser.depth_ > kMaxDepth) syntax_error(parser.peek().pos, "shallower nesting");
    }
    ~DepthGuard() { --parser.depth_; }
    Parser& parser;
  };

  ExprPtr parse_or() {
    DepthGuard guard(*this);
    ExprPtr lhs = parse_and();
    while (peek().kind == Tok::OrOr) {
      take();
      lhs = logical_or(lhs, parse_and());
    }
    return lhs;
  }

  ExprPtr parse_and() {
    ExprPtr lhs = parse_unary();
    while (peek().kind == Tok::AndAnd) {
      take();
      lhs = logical_and(lhs, parse_unary());
    }
    return lhs;
  }

  ExprPtr parse_unary() {
    DepthGuard guard(*this);
    if (peek().kind == Tok::Bang) {
      take();
      return logical_not(parse_unary());
    }
    return parse_primary();
  }

  static bool is_term(Tok k) {
    return k == Tok::Ident || k == Tok::Number || k == Tok::String || k == Tok::True || k == Tok::False;
  }

  ExprPtr parse_term() {
    const Token& t = peek();
    if (!is_term(t.kind)) syntax_error(t.pos, "term");
    take();
    switch (t.kind) {
      case Tok::Ident: return variable(t.text);
      case Tok::Number: return number(t.number);
      case Tok::String: return string(t.text);
      case Tok::True: return boolean(true);
      default: return boolean(false);
    }
  }

  ExprPtr parse_primary() {
    if (peek().kind == Tok::LParen) {
      take();
      ExprPtr inner = parse_or();
      if (peek().kind != Tok::RParen) syntax_error(peek().pos, "')'");
      take();
      return inner;
    }
    ExprPtr lhs = parse_term();
    if (peek().kind == Tok::Op) {
      CmpOp op = take().op;
      return compare(op, lhs, parse_term());
    }
    return lhs;
  }

  std::vector<Token> tokens_;
  std::size_t index_ = 0;
  int depth_ = 0;
};

inline void collect_variables(const Expr& e, std::set<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Var>) {
          out.insert(n.name);
        } else if constexpr (std::is_same_v<T, Compare> || std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          collect_variables(*n.lhs, out);
          collect_variables(*n.rhs, out);
        } else if constexpr (std::is_same_v<T, Not>) {
          collect_variables(*n.operand, out);
        }
      },
      e.node);
}

}  // namespace detail

inline std::set<std::string> referenced_variables(const Expr& e) {
  std::set<std::string> out;
  detail::collect_variables(e, out);
  return out;
}

inline ExprPtr parse_condition(std::string_view source) {
  return detail::Parser(detail::lex(source)).parse();
}

// Parses and additionally rejects references outside `declared`.
inline ExprPtr parse_condition(std::string_view source, const std::set<std::string>& declared) {
  ExprPtr e = parse_condition(source);
  for (const auto& name : referenced_variables(*e)) {
    if (!declared.contains(name)) {
      throw Error(Errc::UnknownVariable, "unknown variable '" + name + "'", {{"variable", name}});
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Printer

namespace detail {

inline void print_string(const std::string& s, std::string& out) {
  out.push_back('"');
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
}

// Precedence: or 1, and 2, not 3, comparison 4, term 5.
inline void print(const Expr& e, int min_prec, std::string& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        auto wrap = [&](int prec, auto body) {
          const bool parens = prec < min_prec;
          if (parens) out.push_back('(');
          body();
          if (parens) out.push_back(')');
        };
        if constexpr (std::is_same_v<T, BoolLit>) {
          out += n.value ? "true" : "false";
        } else if constexpr (std::is_same_v<T, NumLit>) {
          out += format_number(n.value);
        } else if constexpr (std::is_same_v<T, StrLit>) {
          print_string(n.value, out);
        } else if constexpr (std::is_same_v<T, Var>) {
          out += n.name;
        } else if constexpr (std::is_same_v<T, Compare>) {
          wrap(4, [&] {
            print(*n.lhs, 5, out);
            out.push_back(' ');
            out += op_text(n.op);
            out.push_back(' ');
            print(*n.rhs, 5, out);
          });
        } else if constexpr (std::is_same_v<T, Not>) {
          wrap(3, [&] {
            out.push_back('!');
            print(*n.operand, 3, out);
          });
        } else if constexpr (std::is_same_v<T, And>) {
          wrap(2, [&] {
            print(*n.lhs, 2, out);
            out += " && ";
            print(*n.rhs, 3, out);
          });
        } else {
          wrap(1, [&] {
            print(*n.lhs, 1, out);
            out += " || ";
            print(*n.rhs, 2, out);
          });
        }
      },
      e.node);
}

}  // namespace detail

inline std::string print_condition(const Expr& e) {
  std::string out;
  detail::print(e, 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

// Called for every sub-expression the evaluator actually visits.
using VisitObserver = std::function<void(const Expr&)>;

namespace detail {

[[noreturn]] inline void type_mismatch(std::string_view op, ValueType lhs, std::optional<ValueType> rhs) {
  nlohmann::json detail = {{"operator", std::string(op)}, {"lhs", std::string(type_name(lhs))}};
  std::string message = "type mismatch: '" + std::string(op) + "' applied to " + std::string(type_name(lhs));
  if (rhs) {
    detail["rhs"] = std::string(type_name(*rhs));
    message += " and " + std::string(type_name(*rhs));
  }
  throw Error(Errc::TypeMismatch, message, detail);
}

template <typename T>
bool apply(CmpOp op, const T& a, const T& b) {
  switch (op) {
    case CmpOp::Eq: return a == b;
    case CmpOp::Ne: return a != b;
    case CmpOp::Lt: return a < b;
    case CmpOp::Le: return a <= b;
    case CmpOp::Gt: return a > b;
    case CmpOp::Ge: return a >= b;
  }
  return false;
}

template <typename Env>
Value eval(const Expr& e, const Env& ctx, const VisitObserver* observer);

template <typename Env>
bool eval_bool(const Expr& e, std::string_view op, const Env& ctx, const VisitObserver* observer) {
  Value v = eval(e, ctx, observer);
  if (type_of(v) != ValueType::Bool) type_mismatch(op, type_of(v), std::nullopt);
  return std::get<bool>(v);
}

template <typename Env>
Value eval(const Expr& e, const Env& ctx, const VisitObserver* observer) {
  if (observer && *observer) (*observer)(e);
  return std::visit(
      [&](const auto& n) -> Value {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, BoolLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, NumLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, StrLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, Var>) {
          auto v = ctx.lookup(n.name);
          if (!v) throw Error(Errc::UnknownVariable, "unknown variable '" + n.name + "'", {{"variable", n.name}});
          return *v;
        } else if constexpr (std::is_same_v<T, Compare>) {
          Value a = eval(*n.lhs, ctx, observer);
          Value b = eval(*n.rhs, ctx, observer);
          const ValueType ta = type_of(a);
          const ValueType tb = type_of(b);
          if (ta != tb) type_mismatch(op_text(n.op), ta, tb);
          if (ta == ValueType::Bool) {
            if (n.op != CmpOp::Eq && n.op != CmpOp::Ne) type_mismatch(op_text(n.op), ta, tb);
            return apply(n.op, std::get<bool>(a), std::get<bool>(b));
          }
          if (ta == ValueType::Number) return apply(n.op, std::get<double>(a), std::get<double>(b));
          return apply(n.op, std::get<std::string>(a), std::get<std::string>(b));
        } else if constexpr (std::is_same_v<T, Not>) {
          return !eval_bool(*n.operand, "!", ctx, observer);
        } else if constexpr (std::is_same_v<T, And>) {
          if (!eval_bool(*n.lhs, "&&", ctx, observer)) return false;
          return eval_bool(*n.rhs, "&&", ctx, observer);
        } else {
          if (eval_bool(*n.lhs, "||", ctx, observer)) return true;
          return eval_bool(*n.rhs, "||", ctx, observer);
        }
      },
      e.node);
}

}  // namespace detail

// Free-form variable bindings, for conditions evaluated outside a session.
struct Bindings {
  std::map<std::string, Value, std::less<>> values;
  std::optional<Value> lookup(std::string_view name) const {
    auto it = values.find(name);
    if (it == values.end()) return std::nullopt;
    return it->second;
  }
};

template <typename Env = EvaluationContext>
bool evaluate_condition(const Expr& e, const Env& ctx, const VisitObserver& observer = {}) {
  Value v = detail::eval(e, ctx, observer ? &observer : nullptr);
  if (type_of(v) != ValueType::Bool) {
    throw Error(Errc::TypeMismatch,
                "condition yields " + std::string(type_name(type_of(v))) + ", expected bool",
                {{"operator", "condition"}, {"lhs", std::string(type_name(type_of(v)))}});
  }
  return std::get<bool>(v);
}

// Static typing against declared variable types; throws UnknownVariable or
// TypeMismatch for the first offending sub-expression.
inline ValueType check_types(const Expr& e, const VariableTypes& vars) {
  return std::visit(
      [&](const auto& n) -> ValueType {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, BoolLit>) {
          return ValueType::Bool;
        } else if constexpr (std::is_same_v<T, NumLit>) {
          return ValueType::Number;
        } else if constexpr (std::is_same_v<T, StrLit>) {
          return ValueType::String;
        } else if constexpr (std::is_same_v<T, Var>) {
          auto it = vars.find(n.name);
          if (it == vars.end()) {
            throw Error(Errc::UnknownVariable, "unknown variable '" + n.name + "'", {{"variable", n.name}});
          }
          return it->second;
        } else if constexpr (std::is_same_v<T, Compare>) {
          ValueType a = check_types(*n.lhs, vars);
          ValueType b = check_types(*n.rhs, vars);
          if (a != b || (a == ValueType::Bool && n.op != CmpOp::Eq && n.op != CmpOp::Ne)) {
            detail::type_mismatch(op_text(n.op), a, b);
          }
          return ValueType::Bool;
        } else if constexpr (std::is_same_v<T, Not>) {
          ValueType a = check_types(*n.operand, vars);
          if (a != ValueType::Bool) detail::type_mismatch("!", a, std::nullopt);
          return ValueType::Bool;
        } else {
          constexpr std::string_view op = std::is_same_v<T, And> ? "&&" : "||";
          ValueType a = check_types(*n.lhs, vars);
          if (a != ValueType::Bool) detail::type_mismatch(op, a, std::nullopt);
          ValueType b = check_types(*n.rhs, vars);
          if (b != ValueType::Bool) detail::type_mismatch(op, b, std::nullopt);
          return ValueType::Bool;
        }
      },
      e.node);
}

// ---------------------------------------------------------------------------
// Builtins: pass, fail, always, retry_exceeded(n)

inline ExprPtr builtin_condition(std::string_view name) {
  if (name == "pass") return compare(CmpOp::Eq, variable("passed"), boolean(true));
  if (name == "fail") return compare(CmpOp::Eq, variable("passed"), boolean(false));
  if (name == "always") return boolean(true);
  constexpr std::string_view retry = "retry_exceeded(";
  if (name.starts_with(retry) && name.ends_with(")")) {
    auto digits = name.substr(retry.size(), name.size() - retry.size() - 1);
    int n = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (!digits.empty() && ec == std::errc() && ptr == digits.data() + digits.size() && n >= 1) {
      return compare(CmpOp::Ge, variable("attempts"), number(n));
    }
  }
  throw Error(Errc::UnknownBuiltin, "unknown builtin condition '" + std::string(name) + "'",
              {{"builtin", std::string(name)}});
}

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {"always", "fail", "pass", "retry_exceeded(n)"};
  return names;
}

// Edge condition as stored in a fragment document.
struct ConditionSpec {
  enum class Kind { Builtin, Expression };
  Kind kind = Kind::Builtin;
  std::string text = "pass";

  static ConditionSpec builtin(std::string name) { return {Kind::Builtin, std::move(name)}; }
  static ConditionSpec expression(std::string source) { return {Kind::Expression, std::move(source)}; }

  bool operator==(const ConditionSpec&) const = default;
};

inline ExprPtr compile(const ConditionSpec& spec) {
  return spec.kind == ConditionSpec::Kind::Builtin ? builtin_condition(spec.text) : parse_condition(spec.text);
}

}  // namespace polyglot::condition
