#include "sparseot/core.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace sparseot;

namespace {

OTProblem two_by_two_quadratic() {
  OTProblem p;
  p.a = Vector::Constant(2, 0.5);
  p.b = Vector::Constant(2, 0.5);
  p.C = Matrix::Zero(2, 2);
  p.reg = Regularizer::quadratic(1.0);
  return p;
}

std::string error_of(const OTProblem& p) {
  try {
    validate_problem(p);
  } catch (const ProblemError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(ValidateProblem, AcceptsWellFormed) {
  const OTProblem p = two_by_two_quadratic();
  const OTProblem v = validate_problem(p);
  EXPECT_EQ(v.a, p.a);
  EXPECT_EQ(v.b, p.b);
}

TEST(ValidateProblem, MassMismatch) {
  OTProblem p;
  p.a = Vector(2);
  p.a << 0.7, 0.5;
  p.b = Vector::Ones(1);
  p.C = Matrix::Zero(2, 1);
  const std::string msg = error_of(p);
  EXPECT_NE(msg.find("marginal mass mismatch (1.2 vs 1)"), std::string::npos) << msg;
}

TEST(ValidateProblem, KOutOfRange) {
  OTProblem p;
  p.a = Vector::Constant(3, 1.0 / 3);
  p.b = Vector::Ones(1);
  p.C = Matrix::Zero(3, 1);
  p.reg = Regularizer::sparsity_constrained(1.0, 4);
  EXPECT_NE(error_of(p).find("k out of range"), std::string::npos);
  p.reg.k = 0;
  EXPECT_NE(error_of(p).find("k out of range"), std::string::npos);
}

TEST(ValidateProblem, OtherErrors) {
  OTProblem p = two_by_two_quadratic();
  p.C = Matrix::Zero(3, 2);
  EXPECT_NE(error_of(p).find("dimension mismatch"), std::string::npos);

  p = two_by_two_quadratic();
  p.a << 1.5, -0.5;
  EXPECT_NE(error_of(p).find("negative marginal"), std::string::npos);

  p = two_by_two_quadratic();
  p.C(0, 1) = std::nan("");
  EXPECT_NE(error_of(p).find("nonfinite cost"), std::string::npos);

  p = two_by_two_quadratic();
  p.reg.gamma = 0.0;
  EXPECT_NE(error_of(p).find("gamma"), std::string::npos);
}

TEST(ValidateProblem, NormalizesNearUnitMass) {
  OTProblem p = two_by_two_quadratic();
  p.a *= 1.0 + 5e-10;
  const OTProblem v = validate_problem(p);
  EXPECT_NEAR(v.a.sum(), 1.0, 1e-15);
  p.a = Vector::Constant(2, 0.5 * (1.0 + 1e-6));
  EXPECT_THROW(validate_problem(p), ProblemError);
}

TEST(ValidateProblem, AllowsEqualNonUnitMass) {
  OTProblem p = two_by_two_quadratic();
  p.a = Vector::Constant(2, 2.0);
  p.b = Vector::Constant(2, 2.0);
  EXPECT_NO_THROW(validate_problem(p));
}

TEST(TopK, Examples) {
  Vector s(3);
  s << 2, -1, 3;
  Vector t = topk_values(s, 2);
  EXPECT_EQ(t[0], 2);
  EXPECT_EQ(t[1], -kInf);
  EXPECT_EQ(t[2], 3);

  s << 1, 1, 0;
  t = topk_values(s, 1);
  EXPECT_EQ(t[0], 1);
  EXPECT_EQ(t[1], -kInf);
  EXPECT_EQ(t[2], -kInf);

  s << 5, 4, 3;
  EXPECT_EQ(topk_values(s, 3), s);
}

TEST(TopK, RangeErrors) {
  const Vector s = Vector::Ones(3);
  EXPECT_THROW(topk_values(s, 0), ProblemError);
  EXPECT_THROW(topk_values(s, 4), ProblemError);
}

TEST(TopK, IdempotentAndIdentityAtM) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = testutil::random_int(rng, 1, 9);
    const int k = testutil::random_int(rng, 1, m);
    Vector s = testutil::uniform_vector(rng, m, -2, 2);
    if (trial % 3 == 0) s[0] = s[m - 1];  // force some ties
    const Vector once = topk_values(s, k);
    // masked entries are -inf; re-applying keeps the same support
    EXPECT_EQ(topk_values(once, k), once);
    EXPECT_EQ(topk_values(s, m), s);
  }
}

TEST(TopK, IndicesOrderedAndLowestIndexOnTies) {
  Vector s(5);
  s << 1, 3, 3, 0, 3;
  const auto idx = topk_indices(s, 2);
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx[0], 1);
  EXPECT_EQ(idx[1], 2);
}

TEST(LogSumExp, Examples) {
  Vector s = Vector::Zero(2);
  EXPECT_NEAR(logsumexp(s), std::log(2.0), 1e-15);
  s << 1000, 1000;
  EXPECT_NEAR(logsumexp(s), 1000 + std::log(2.0), 1e-12);
  Vector one(1);
  one << -3.25;
  EXPECT_EQ(logsumexp(one), -3.25);
  EXPECT_THROW(logsumexp(Vector()), ProblemError);
}

TEST(LogSumExp, ShiftProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector s = testutil::uniform_vector(rng, testutil::random_int(rng, 1, 8), -5, 5);
    const double c = testutil::uniform_vector(rng, 1, -50, 50)[0];
    EXPECT_NEAR(logsumexp((s.array() + c).matrix()), logsumexp(s) + c, 1e-12);
  }
}

TEST(Softmax, SumsToOne) {
  Vector s(3);
  s << 1, 2, 3;
  const Vector p = softmax(s);
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_GT(p[2], p[1]);
}

TEST(Transpose, SwapsRoles) {
  OTProblem p;
  p.a = Vector::Constant(2, 0.5);
  p.b = Vector::Constant(3, 1.0 / 3);
  p.C = Matrix::Random(2, 3);
  const OTProblem t = transpose(p);
  EXPECT_EQ(t.a, p.b);
  EXPECT_EQ(t.b, p.a);
  EXPECT_EQ(t.C, p.C.transpose());
}

TEST(TieTolerance, ScalesWithMagnitude) {
  Vector s(2);
  s << 0.1, 0.2;
  EXPECT_DOUBLE_EQ(tie_tolerance(s), 1e-9);
  s << 1e3, -2e3;
  EXPECT_DOUBLE_EQ(tie_tolerance(s), 2e-6);
}

TEST(Regularizer, ParsesNamesAndDescribes) {
  EXPECT_EQ(reg_kind_from_string("topk"), RegKind::SparsityConstrained);
  EXPECT_EQ(reg_kind_from_string("entropy"), RegKind::Negentropy);
  EXPECT_THROW(reg_kind_from_string("l1"), ProblemError);
  EXPECT_EQ(Regularizer::sparsity_constrained(0.5, 3).describe(), "sparsity_constrained(gamma=0.5,k=3)");
  EXPECT_EQ(Regularizer::none().describe(), "none");
}
