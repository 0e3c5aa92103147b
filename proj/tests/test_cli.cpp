#include "sparseot/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace sparseot;
using cli::json;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("sparse_ot_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(json cfg, const std::string& name = "config.json") {
    if (!cfg.contains("output_dir")) cfg["output_dir"] = (dir_ / "out").string();
    const fs::path path = dir_ / name;
    std::ofstream(path) << cfg.dump(2);
    return path.string();
  }

  static std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  json read_json(const std::string& name) const { return json::parse(slurp(dir_ / "out" / name)); }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

json one_by_one_config() {
  return json{{"problem", {{"cost", {{0.3}}}, {"marginals", "uniform"}}},
              {"regularizer", {{"kind", "quadratic"}, {"gamma", 1.0}}},
              {"formulation", "semidual"},
              {"solver", {{"method", "lbfgs"}, {"max_iter", 100}, {"tol", 1e-9}}}};
}

json random_config(int m, int n, const json& reg) {
  return json{{"problem", {{"m", m}, {"n", n}, {"cost", {{"generator", "random_uniform"}, {"seed", 4}}}}},
              {"regularizer", reg},
              {"solver", {{"max_iter", 500}, {"seed", 1}}}};
}

}  // namespace

TEST_F(CliTest, SolveOneByOne) {
  EXPECT_EQ(cli::cmd_solve(write_config(one_by_one_config()), out_, err_), cli::kExitOk) << err_.str();
  const json report = read_json("report.json");
  EXPECT_NEAR(report["objective_semidual"].get<double>(), 0.8, 1e-12);
  EXPECT_NEAR(report["primal_value"].get<double>(), 0.8, 1e-12);
  EXPECT_TRUE(report["converged"].get<bool>());
  for (const char* key : {"grad_norm", "iterations", "ties_detected", "max_col_nnz", "marginal_err_row",
                          "marginal_err_col"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(slurp(dir_ / "out" / "plan.csv"), "# 1,1,1\ni,j,value\n0,0,1\n");
  EXPECT_EQ(slurp(dir_ / "out" / "trace.csv").rfind("iter,objective,grad_norm,wall_ms\n", 0), 0u);
  EXPECT_NE(out_.str().find("objective 0.8"), std::string::npos);
}

TEST_F(CliTest, KOutOfRange) {
  json cfg = one_by_one_config();
  cfg["regularizer"] = {{"kind", "sparsity_constrained"}, {"gamma", 1.0}, {"k", 2}};
  EXPECT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitConfig);
  EXPECT_NE(err_.str().find("k out of range"), std::string::npos) << err_.str();
  EXPECT_NE(err_.str().find("regularizer.k"), std::string::npos) << err_.str();
}

TEST_F(CliTest, ErrorsNameTheField) {
  json cfg = one_by_one_config();
  cfg["solver"]["tol"] = -1;
  EXPECT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitConfig);
  EXPECT_NE(err_.str().find("solver.tol"), std::string::npos) << err_.str();

  cfg = one_by_one_config();
  cfg["regularizer"]["kind"] = "lasso";
  EXPECT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitConfig);

  cfg = one_by_one_config();
  cfg["problem"]["marginals"] = {{"a", {0.5}}, {"b", {1.0}}};
  err_.str("");
  EXPECT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitConfig);
  EXPECT_NE(err_.str().find("marginals"), std::string::npos) << err_.str();

  EXPECT_EQ(cli::cmd_solve((dir_ / "missing.json").string(), out_, err_), cli::kExitConfig);
}

TEST_F(CliTest, MalformedJson) {
  const fs::path path = dir_ / "bad.json";
  std::ofstream(path) << "{\"problem\": [1, 2";
  for (auto cmd : {cli::cmd_solve, cli::cmd_compare, cli::cmd_cluster, cli::cmd_route}) {
    err_.str("");
    EXPECT_EQ(cmd(path.string(), out_, err_), cli::kExitConfig);
    EXPECT_NE(err_.str().find("malformed JSON"), std::string::npos);
  }
}

TEST_F(CliTest, NonConvergenceStillWritesFiles) {
  json cfg = random_config(6, 6, {{"kind", "quadratic"}, {"gamma", 0.1}});
  cfg["solver"]["max_iter"] = 1;
  EXPECT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitNotConverged);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "plan.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "trace.csv"));
  EXPECT_FALSE(read_json("report.json")["converged"].get<bool>());
}

TEST_F(CliTest, RerunIsByteIdentical) {
  const json cfg = random_config(7, 5, {{"kind", "sparsity_constrained"}, {"gamma", 0.5}, {"k", 2}});
  ASSERT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitOk) << err_.str();
  const std::string trace = slurp(dir_ / "out" / "trace.csv");
  const std::string plan = slurp(dir_ / "out" / "plan.csv");
  const std::string report = slurp(dir_ / "out" / "report.json");
  ASSERT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "out" / "trace.csv"), trace);
  EXPECT_EQ(slurp(dir_ / "out" / "plan.csv"), plan);
  EXPECT_EQ(slurp(dir_ / "out" / "report.json"), report);
}

TEST_F(CliTest, PlanRoundTrip) {
  const json cfg = random_config(6, 4, {{"kind", "quadratic"}, {"gamma", 0.3}});
  ASSERT_EQ(cli::cmd_solve(write_config(cfg), out_, err_), cli::kExitOk);
  const Matrix T = io::read_plan_csv((dir_ / "out" / "plan.csv").string());
  std::ostringstream again;
  io::write_plan_csv(again, T);
  EXPECT_EQ(again.str(), slurp(dir_ / "out" / "plan.csv"));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix M(5, 3);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) M(i, j) = u(rng) < 0.5 ? 0.0 : u(rng) / 3.0;
  }
  std::stringstream ss;
  io::write_plan_csv(ss, M);
  EXPECT_EQ(io::read_plan_csv(ss), M);
}

TEST_F(CliTest, CompareSparsityOrdering) {
  const json cfg = {
      {"problem", {{"cost", {{"generator", "clouds_2d"}, {"m", 20}, {"n", 20}, {"seed", 0}}}, {"marginals", "uniform"}}},
      {"regularizers",
       {{{"kind", "negentropy"}, {"gamma", 0.1}},
        {{"kind", "quadratic"}, {"gamma", 0.1}},
        {{"kind", "sparsity_constrained"}, {"gamma", 0.1}, {"k", 1}}}},
      {"formulations", {"dual", "semidual"}},
      {"solvers", {{{"method", "lbfgs"}, {"max_iter", 3000}}}}};
  EXPECT_EQ(cli::cmd_compare(write_config(cfg), out_, err_), cli::kExitOk) << err_.str() << out_.str();
  std::ifstream csv(dir_ / "out" / "compare.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "row,formulation,regularizer,solver,objective,iterations,wall_ms,max_col_nnz,nnz,converged,duality_gap");
  std::map<std::string, long> nnz;
  std::map<std::string, long> max_col;
  std::vector<double> gaps;
  while (std::getline(csv, line)) {
    // regularizer is quoted because describe() contains commas
    const auto q1 = line.find('"');
    const auto q2 = line.find('"', q1 + 1);
    const std::string reg = line.substr(q1 + 1, q2 - q1 - 1);
    std::vector<std::string> rest;
    std::stringstream ss(line.substr(q2 + 2));
    std::string cell;
    while (std::getline(ss, cell, ',')) rest.push_back(cell);
    const std::string form = line.substr(line.find(',') + 1, q1 - line.find(',') - 2);
    if (form == "semidual") {
      nnz[reg] = std::stol(rest[5]);
      max_col[reg] = std::stol(rest[4]);
    }
    if (rest.size() > 7 && reg.find("sparsity") == 0) gaps.push_back(std::stod(rest[7]));
    EXPECT_TRUE(fs::exists(dir_ / "out" / ("trace_0" + line.substr(0, line.find(',')) + ".csv")));
  }
  EXPECT_EQ(nnz.at("negentropy(gamma=0.1)"), 400);
  EXPECT_EQ(max_col.at("sparsity_constrained(gamma=0.1,k=1)"), 1);
  EXPECT_GT(nnz.at("quadratic(gamma=0.1)"), nnz.at("sparsity_constrained(gamma=0.1,k=1)"));
  EXPECT_LT(nnz.at("quadratic(gamma=0.1)"), 400);
  ASSERT_FALSE(gaps.empty());
  for (double g : gaps) EXPECT_LE(g, 1e-4);
}

TEST_F(CliTest, ClusterTwoBlobs) {
  const json cfg = {{"data", {{"generator", "blobs"}, {"sizes", {40, 40}}, {"radius", 5}, {"spread", 0.5}}},
                    {"cluster", {{"n_clusters", 2}, {"method", "ot"}, {"em_steps", 10}}},
                    {"regularizer", {{"kind", "sparsity_constrained"}, {"gamma", 1.0}, {"k", "auto"}}}};
  EXPECT_EQ(cli::cmd_cluster(write_config(cfg), out_, err_), cli::kExitOk) << err_.str();
  const json metrics = read_json("metrics.json");
  EXPECT_EQ(metrics["kl_to_uniform"].get<double>(), 0.0);
  EXPECT_EQ(metrics["regularizer"].get<std::string>(), "sparsity_constrained(gamma=1,k=46)");
  EXPECT_TRUE(fs::exists(dir_ / "out" / "assignment.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "centers.csv"));
}

TEST_F(CliTest, RouteSymmetric) {
  const json cfg = {{"affinity", {{"generator", "uniform"}, {"tokens", 16}, {"experts", 4}}},
                    {"router", {{"capacity", 4}}}};
  EXPECT_EQ(cli::cmd_route(write_config(cfg), out_, err_), cli::kExitOk) << err_.str();
  const Matrix G = io::read_plan_csv((dir_ / "out" / "gating.csv").string());
  EXPECT_LE((G.colwise().sum().array() - 4.0).abs().maxCoeff(), 1e-6);
  EXPECT_LE((G.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
  const json metrics = read_json("metrics.json");
  for (const auto& v : metrics["tokens_per_expert"]) EXPECT_EQ(v.get<int>(), 4);
}

TEST_F(CliTest, RouteCapacityTooSmall) {
  const json cfg = {{"affinity", {{"generator", "random"}, {"tokens", 16}, {"experts", 4}}},
                    {"router", {{"capacity", 3}}}};
  EXPECT_EQ(cli::cmd_route(write_config(cfg), out_, err_), cli::kExitConfig);
  EXPECT_NE(err_.str().find("router.capacity"), std::string::npos);
}
