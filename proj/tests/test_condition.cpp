#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "generators.hpp"
#include "polyglot/condition.hpp"

using namespace polyglot;
using namespace polyglot::condition;
using namespace testsupport;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::BadRequest;
}

std::size_t syntax_position(std::string_view src) {
  try {
    parse_condition(src);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SyntaxError) << src;
    return e.detail().at("position").get<std::size_t>();
  }
  ADD_FAILURE() << "no syntax error for: " << src;
  return 0;
}

EvaluationContext ctx(bool passed = true, double score = 1.0, std::string answer = "", std::string label = "",
                      int attempts = 1) {
  return {passed, score, std::move(answer), std::move(label), attempts, "quiz"};
}

}  // namespace

TEST(ConditionParse, ConjunctionOfComparisonAndVariable) {
  auto e = parse_condition("score >= 0.8 && passed");
  auto expected = logical_and(compare(CmpOp::Ge, variable("score"), number(0.8)), variable("passed"));
  EXPECT_TRUE(*e == *expected);
}

TEST(ConditionParse, DistractorLabelCondition) {
  auto e = parse_condition("label == \"average_value\"");
  EXPECT_TRUE(*e == *compare(CmpOp::Eq, variable("label"), string("average_value")));
}

TEST(ConditionParse, IncompleteComparisonReportsEndOfInput) { EXPECT_EQ(syntax_position("score >"), 8u); }

TEST(ConditionParse, SyntaxErrorPositions) {
  EXPECT_EQ(syntax_position(""), 1u);
  EXPECT_EQ(syntax_position("(passed"), 8u);
  EXPECT_EQ(syntax_position("passed &&"), 10u);
  EXPECT_EQ(syntax_position("passed & true"), 8u);
  EXPECT_EQ(syntax_position("a == b == c"), 8u);
  EXPECT_EQ(syntax_position("\"open"), 6u);
  EXPECT_EQ(syntax_position("1.5e3 > 2"), 4u);
  EXPECT_EQ(syntax_position("passed)"), 7u);
}

TEST(ConditionParse, PrecedenceNotOverAndOverOr) {
  auto e = parse_condition("!a || b && c");
  auto expected = logical_or(logical_not(variable("a")), logical_and(variable("b"), variable("c")));
  EXPECT_TRUE(*e == *expected);
}

TEST(ConditionParse, ComparisonsDoNotChain) {
  EXPECT_EQ(code_of([] { parse_condition("score < 1 < 2"); }), Errc::SyntaxError);
}

TEST(ConditionParse, DeclaredVariablesAreEnforced) {
  EXPECT_NO_THROW(parse_condition("passed && score > 0.5", context_variable_names()));
  EXPECT_EQ(code_of([] { parse_condition("grade > 3", context_variable_names()); }), Errc::UnknownVariable);
}

TEST(ConditionParse, StringEscapes) {
  auto e = parse_condition(R"(answer == "a\"b\\c")");
  EXPECT_TRUE(*e == *compare(CmpOp::Eq, variable("answer"), string("a\"b\\c")));
}

TEST(ConditionEval, BuiltinPass) {
  EXPECT_TRUE(evaluate_condition(*builtin_condition("pass"), ctx(true)));
  EXPECT_FALSE(evaluate_condition(*builtin_condition("pass"), ctx(false)));
  EXPECT_TRUE(evaluate_condition(*builtin_condition("fail"), ctx(false)));
}

TEST(ConditionEval, AnswerEquality) {
  auto e = compare(CmpOp::Eq, variable("answer"), string("2.5"));
  EXPECT_TRUE(evaluate_condition(*e, ctx(true, 1.0, "2.5")));
}

TEST(ConditionEval, BoolOrderingIsTypeMismatch) {
  auto e = compare(CmpOp::Lt, variable("passed"), number(1));
  EXPECT_EQ(code_of([&] { evaluate_condition(*e, ctx()); }), Errc::TypeMismatch);
  EXPECT_EQ(code_of([&] { check_types(*e, context_variables()); }), Errc::TypeMismatch);
}

TEST(ConditionEval, ConnectivesRequireBooleans) {
  EXPECT_EQ(code_of([] { evaluate_condition(*parse_condition("score && passed"), ctx()); }), Errc::TypeMismatch);
  EXPECT_EQ(code_of([] { evaluate_condition(*parse_condition("!label"), ctx()); }), Errc::TypeMismatch);
  EXPECT_EQ(code_of([] { evaluate_condition(*parse_condition("score"), ctx()); }), Errc::TypeMismatch);
  EXPECT_EQ(code_of([] { evaluate_condition(*parse_condition("label < 3"), ctx()); }), Errc::TypeMismatch);
}

TEST(ConditionEval, ShortCircuitSkipsRightOperand) {
  const auto rhs = variable("undeclared");
  int rhs_visits = 0;
  VisitObserver observer = [&](const Expr& e) {
    if (&e == rhs.get()) ++rhs_visits;
  };
  EXPECT_FALSE(evaluate_condition(*logical_and(boolean(false), rhs), ctx(), observer));
  EXPECT_TRUE(evaluate_condition(*logical_or(boolean(true), rhs), ctx(), observer));
  EXPECT_EQ(rhs_visits, 0);
  EXPECT_EQ(code_of([&] { evaluate_condition(*logical_and(boolean(true), rhs), ctx(), observer); }),
            Errc::UnknownVariable);
  EXPECT_EQ(rhs_visits, 1);
}

TEST(ConditionEval, Attempts) {
  auto e = builtin_condition("retry_exceeded(3)");
  EXPECT_FALSE(evaluate_condition(*e, ctx(false, 0, "", "", 2)));
  EXPECT_TRUE(evaluate_condition(*e, ctx(false, 0, "", "", 3)));
}

TEST(ConditionBuiltins, Expansions) {
  EXPECT_TRUE(*builtin_condition("pass") == *compare(CmpOp::Eq, variable("passed"), boolean(true)));
  EXPECT_TRUE(*builtin_condition("fail") == *compare(CmpOp::Eq, variable("passed"), boolean(false)));
  EXPECT_TRUE(*builtin_condition("always") == *boolean(true));
  EXPECT_TRUE(*builtin_condition("retry_exceeded(2)") == *compare(CmpOp::Ge, variable("attempts"), number(2)));
  EXPECT_EQ(code_of([] { builtin_condition("perfect"); }), Errc::UnknownBuiltin);
  EXPECT_EQ(code_of([] { builtin_condition("retry_exceeded(0)"); }), Errc::UnknownBuiltin);
  EXPECT_EQ(code_of([] { builtin_condition("retry_exceeded(x)"); }), Errc::UnknownBuiltin);
}

TEST(ConditionPrint, MinimalParentheses) {
  auto e = logical_and(variable("passed"), logical_or(variable("passed"), boolean(false)));
  EXPECT_EQ(print_condition(*e), "passed && (passed || false)");
  EXPECT_EQ(print_condition(*parse_condition("((a)) || (b && c)")), "a || b && c");
  EXPECT_EQ(print_condition(*parse_condition("!(a || b)")), "!(a || b)");
  EXPECT_EQ(print_condition(*parse_condition("(a || b) || c")), "a || b || c");
  EXPECT_EQ(print_condition(*parse_condition("a || (b || c)")), "a || (b || c)");
}

TEST(ConditionPrint, CanonicalNumbers) {
  EXPECT_EQ(print_condition(*compare(CmpOp::Ge, variable("score"), number(0.8))), "score >= 0.8");
  EXPECT_EQ(print_condition(*parse_condition("score >= 0.800")), "score >= 0.8");
  EXPECT_EQ(print_condition(*parse_condition("attempts > 3.0")), "attempts > 3");
}

// ---------------------------------------------------------------------------
// Property: parse(print(ast)) == ast


TEST(ConditionProperty, PrintParseRoundTrip) {
  std::mt19937_64 rng(20240611);
  for (int i = 0; i < 500; ++i) {
    const ExprPtr ast = random_expr(rng, 1 + i % 5);
    const std::string printed = print_condition(*ast);
    ExprPtr reparsed;
    ASSERT_NO_THROW(reparsed = parse_condition(printed)) << printed;
    EXPECT_TRUE(*reparsed == *ast) << printed;
    EXPECT_EQ(print_condition(*reparsed), printed);
  }
}

// ---------------------------------------------------------------------------
// Property: evaluator agrees with a truth-table oracle on 3 boolean variables


TEST(ConditionProperty, TruthTableOracle) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 1000; ++i) {
    const Formula f = random_formula(rng, 1 + i % 5);
    const std::string text = render(f);
    const ExprPtr ast = parse_condition(text);
    for (unsigned assignment = 0; assignment < 8; ++assignment) {
      Bindings env;
      env.values["a"] = bool(assignment & 1U);
      env.values["b"] = bool(assignment & 2U);
      env.values["c"] = bool(assignment & 4U);
      ASSERT_EQ(evaluate_condition(*ast, env), truth(f, assignment)) << text << " @ " << assignment;
    }
  }
}

TEST(ConditionProperty, FuzzNeverCrashes) {
  std::mt19937_64 rng(4242);
  int parsed = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::string s = fuzz_string(rng);
    try {
      auto ast = parse_condition(s);
      ++parsed;
      EXPECT_TRUE(*parse_condition(print_condition(*ast)) == *ast) << s;
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::SyntaxError) << s;
      const auto pos = e.detail().at("position").get<std::size_t>();
      EXPECT_GE(pos, 1u);
      EXPECT_LE(pos, s.size() + 1) << s;
    }
  }
  EXPECT_GT(parsed, 0);
}

TEST(ConditionProperty, DeepNestingIsRejectedNotOverflowed) {
  std::string deep(5000, '(');
  deep += "passed";
  deep += std::string(5000, ')');
  EXPECT_EQ(code_of([&] { parse_condition(deep); }), Errc::SyntaxError);
  std::string bangs(5000, '!');
  EXPECT_EQ(code_of([&] { parse_condition(bangs + "passed"); }), Errc::SyntaxError);
}

TEST(ConditionProperty, DeterministicEvaluation) {
  auto e = parse_condition("score >= 0.5 && label != \"average_value\" || attempts > 2");
  const auto c = ctx(false, 0.75, "3", "", 1);
  const bool first = evaluate_condition(*e, c);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(evaluate_condition(*e, c), first);
}
