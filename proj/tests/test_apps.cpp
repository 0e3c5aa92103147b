#include "sparseot/apps.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace sparseot;

namespace {

Vector vec2(double x, double y) { return (Vector(2) << x, y).finished(); }

SolverConfig inner_cfg() {
  SolverConfig cfg;
  cfg.max_iter = 500;
  cfg.record_time = false;
  return cfg;
}

}  // namespace

TEST(Generators, GaussianPair) {
  const OTProblem p = gen_1d_gaussian_pair(32, 10, 4, 16, 5);
  EXPECT_EQ(p.rows(), 32);
  EXPECT_NEAR(p.a.sum(), 1.0, 1e-14);
  EXPECT_NEAR(p.b.sum(), 1.0, 1e-14);
  Index arg = 0;
  p.a.maxCoeff(&arg);
  EXPECT_EQ(arg, 10);
  EXPECT_EQ(p.C.diagonal(), Vector::Zero(32));
  EXPECT_DOUBLE_EQ(p.C(0, 31), 1.0);
  EXPECT_GE(p.C.minCoeff(), 0.0);

  const OTProblem same = gen_1d_gaussian_pair(16, 5, 2, 5, 2);
  EXPECT_EQ(same.a, same.b);
  EXPECT_THROW(gen_1d_gaussian_pair(1, 0, 1, 0, 1), ProblemError);
  EXPECT_THROW(gen_1d_gaussian_pair(8, 0, 0, 0, 1), ProblemError);
}

TEST(Generators, BigaussianTarget) {
  const OTProblem p = gen_1d_bigaussian_target(32, 16, 5, 8, 24, 5);
  EXPECT_NEAR(p.b.sum(), 1.0, 1e-14);
  std::vector<Index> peaks;
  for (Index z = 1; z + 1 < 32; ++z) {
    if (p.b[z] > p.b[z - 1] && p.b[z] > p.b[z + 1]) peaks.push_back(z);
  }
  ASSERT_EQ(peaks.size(), 2u);
  EXPECT_NEAR(static_cast<double>(peaks[0]), 8, 1);
  EXPECT_NEAR(static_cast<double>(peaks[1]), 24, 1);
}

TEST(Generators, PointClouds) {
  const Matrix I = Matrix::Identity(2, 2);
  const PointClouds a = gen_2d_gaussian_clouds(20, 20, vec2(0, 0), I, vec2(4, 4), I, 7);
  const PointClouds b = gen_2d_gaussian_clouds(20, 20, vec2(0, 0), I, vec2(4, 4), I, 7);
  EXPECT_EQ(a.source, b.source);
  EXPECT_EQ(a.C, b.C);
  const PointClouds c = gen_2d_gaussian_clouds(20, 20, vec2(0, 0), I, vec2(4, 4), I, 8);
  EXPECT_NE(a.source, c.source);

  EXPECT_EQ(pairwise_cost(a.source, a.source, false).diagonal(), Vector::Zero(20));
  EXPECT_TRUE(pairwise_cost(2 * a.source, 2 * a.target, false).isApprox(2 * a.C, 1e-14));
  EXPECT_TRUE(pairwise_cost(a.source, a.target, true).isApprox(a.C.cwiseAbs2(), 1e-12));

  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  EXPECT_THROW(gen_2d_gaussian_clouds(3, 3, vec2(0, 0), bad, vec2(0, 0), I, 0), ProblemError);

  const OTProblem ref = gen_reference_clouds_problem(0);
  EXPECT_EQ(ref.rows(), 20);
  EXPECT_EQ(ref.cols(), 20);
  EXPECT_NEAR(ref.a.sum(), 1.0, 1e-14);
}

TEST(Generators, BlobsDeterministic) {
  EXPECT_EQ(gen_blobs({10, 5}, 3, 0.5, 1), gen_blobs({10, 5}, 3, 0.5, 1));
  EXPECT_EQ(gen_blobs({10, 5}, 3, 0.5, 1).cols(), 15);
}

TEST(Cluster, TwoSymmetricBlobs) {
  const Matrix X = gen_blobs({30, 30}, 5, 0.5, 11);
  for (const Regularizer& reg : {Regularizer::quadratic(1.0), Regularizer::sparsity_constrained(1.0, 35)}) {
    ClusterConfig cfg;
    cfg.n_clusters = 2;
    cfg.reg = reg;
    cfg.em_steps = 10;
    cfg.inner = inner_cfg();
    const ClusterResult r = balanced_cluster(X, cfg);
    EXPECT_EQ(r.metrics.sizes, (std::vector<int>{30, 30})) << reg.describe();
    EXPECT_NEAR(r.metrics.kl_to_uniform, 0.0, 1e-15);
    EXPECT_NEAR(r.plan.colwise().sum()(0), 0.5, 1e-9);
  }
}

TEST(Cluster, OneBlobCenterIsTheMean) {
  const Matrix X = gen_blobs({25}, 2, 1, 12);
  ClusterConfig cfg;
  cfg.n_clusters = 1;
  cfg.em_steps = 1;
  cfg.reg = Regularizer::quadratic(1);
  cfg.inner = inner_cfg();
  const ClusterResult r = balanced_cluster(X, cfg);
  // the plan column matches a = 1/m up to the inner solver tolerance
  EXPECT_LE((r.centers.col(0) - X.rowwise().mean()).norm(), 1e-4);
}

TEST(Cluster, OtIsMoreBalancedThanSoftKMeans) {
  const Matrix X = gen_blobs({100, 50, 30, 20}, 6, 1, 3);
  ClusterConfig cfg;
  cfg.n_clusters = 4;
  cfg.seed = 1;
  cfg.inner = inner_cfg();
  cfg.method = ClusterMethod::SoftKMeans;
  const double soft = balanced_cluster(X, cfg).metrics.kl_to_uniform;
  cfg.method = ClusterMethod::OptimalTransport;
  cfg.reg = Regularizer::sparsity_constrained(1.0, balanced_sparsity_k(200, 4));
  const ClusterResult ot = balanced_cluster(X, cfg);
  EXPECT_LE(ot.metrics.kl_to_uniform, soft);
  EXPECT_LE(ot.metrics.kl_to_uniform, 1e-3);
  EXPECT_GT(soft, 1e-2);
}

TEST(Cluster, HelpersAndErrors) {
  EXPECT_EQ(balanced_sparsity_k(200, 4), 58);
  EXPECT_EQ(kl_to_uniform({5, 5, 5}), 0.0);
  EXPECT_NEAR(kl_to_uniform({1, 0}), std::log(2.0), 1e-15);
  Matrix T(2, 3);
  T << 0.2, 0.2, 0.1, 0, 0.3, 0.5;
  EXPECT_EQ(argmax_rows(T), (std::vector<int>{0, 2}));
  ClusterConfig cfg;
  cfg.n_clusters = 5;
  EXPECT_THROW(balanced_cluster(Matrix::Zero(2, 3), cfg), ProblemError);
  EXPECT_EQ(cluster_method_from_string("soft_kmeans"), ClusterMethod::SoftKMeans);
  EXPECT_THROW(cluster_method_from_string("dbscan"), ProblemError);
}

TEST(Router, UniformAffinity) {
  RouterConfig cfg;
  cfg.capacity = 2;
  const GatingResult r = moe_gating(Matrix::Zero(4, 2), cfg);
  EXPECT_LE((r.gating.colwise().sum().transpose() - Vector::Constant(2, 2.0)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((r.gating.rowwise().sum() - Vector::Ones(4)).cwiseAbs().maxCoeff(), 1e-6);
  for (Index j = 0; j < 2; ++j) EXPECT_EQ((r.gating.col(j).array() > 1e-12).count(), 2);
  EXPECT_TRUE(((r.gating.array() == 0.0) || ((r.gating.array() - 1.0).abs() < 1e-6)).all());
}

TEST(Router, DiagonalAffinity) {
  RouterConfig cfg;
  cfg.capacity = 1;
  Matrix A(2, 2);
  A << 5, -5, -5, 5;
  const GatingResult r = moe_gating(A, cfg);
  EXPECT_LE((r.gating - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Router, CapacityContract) {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix A(32, 4);
    for (Index j = 0; j < 4; ++j) A.col(j) = testutil::uniform_vector(rng, 32, -2, 2);
    RouterConfig cfg;
    cfg.capacity = testutil::random_int(rng, 8, 12);
    const GatingResult r = moe_gating(A, cfg);
    for (Index j = 0; j < 4; ++j) EXPECT_LE((r.gating.col(j).array() > 1e-12).count(), cfg.capacity);
    EXPECT_LE((r.gating.colwise().sum().transpose() - Vector::Constant(4, 8.0)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((r.gating.rowwise().sum() - Vector::Ones(32)).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(Router, Errors) {
  RouterConfig cfg;
  cfg.capacity = 1;
  EXPECT_THROW(moe_gating(Matrix::Zero(5, 2), cfg), ProblemError);
  cfg.capacity = 0;
  EXPECT_THROW(moe_gating(Matrix::Zero(2, 2), cfg), ProblemError);
  cfg.capacity = 2;
  cfg.num_experts = 3;
  EXPECT_THROW(moe_gating(Matrix::Zero(2, 2), cfg), ProblemError);
}

TEST(Router, Baselines) {
  Matrix A(3, 4);
  A << 1, 2, 3, 4, 4, 3, 2, 1, 0, 0, 5, 0;
  const Matrix G = topk_gating(A, 2);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ((G.row(i).array() > 0).count(), 2);
  EXPECT_GT(G(0, 3), 0.0);
  EXPECT_GT(G(1, 0), 0.0);
  const Matrix S = sbase_gating(A, 1);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ((S.row(i).array() > 0).count(), 1);
  EXPECT_GT(S(2, 2), 0.0);
}
