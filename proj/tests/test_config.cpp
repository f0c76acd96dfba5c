#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cit/config.hpp"

namespace cit {
namespace {

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

TEST(RunConfig, DefaultsAreValid) { EXPECT_TRUE(violations(RunConfig{}).empty()); }

TEST(RunConfig, ParsesEverySection) {
  std::vector<std::string> problems;
  const auto c = parse_config(
      "# comment\n"
      "[data]\nn_requests = 500\nv = 40\ndisplay_cutoff=12\nseed=9\n"
      "[teacher]\nhidden_sizes = 64, 32\n"
      "[student]\nembedding_dim=12\n"
      "[train]\nlambda=0.4\nobjective=pairwise\nscheme=teacher_top_u\ncit_variant=literal\nu=10\n"
      "[cascade]\nv=40\nu=10\nk=3\n"
      "[paths]\nout=/tmp/x\n",
      problems);
  EXPECT_TRUE(problems.empty());
  EXPECT_EQ(c.data.n_requests, 500u);
  EXPECT_EQ(c.data.candidates_per_request, 40u);
  EXPECT_EQ(c.data.seed, 9u);
  EXPECT_EQ(c.teacher.hidden_sizes, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(c.student.embedding_dim, 12u);
  EXPECT_EQ(c.train.lambda, 0.4);
  EXPECT_EQ(c.train.objective, Objective::pairwise);
  EXPECT_EQ(c.train.scheme, LabelScheme::teacher_top_u);
  EXPECT_EQ(c.train.cit_variant, CitVariant::literal);
  EXPECT_EQ(c.cascade.k, 3u);
  EXPECT_EQ(c.paths.teacher_path(), "/tmp/x/teacher.ckpt");
  EXPECT_TRUE(violations(c).empty());
}

TEST(RunConfig, SyntaxProblemsCarryLineNumbers) {
  std::vector<std::string> problems;
  parse_config("[train]\nlambda = abc\nnot a pair\n[bogus]\nx=1\n[train]\nwhat=1\n[cascade\n", problems);
  ASSERT_EQ(problems.size(), 5u);
  EXPECT_NE(problems[0].find("line 2"), std::string::npos);
  EXPECT_NE(problems[1].find("line 3"), std::string::npos);
  EXPECT_NE(problems[2].find("unknown section"), std::string::npos);
  EXPECT_NE(problems[3].find("unknown key"), std::string::npos);
  EXPECT_NE(problems[4].find("line 8"), std::string::npos);
}

TEST(RunConfig, KeyBeforeSectionRejected) {
  std::vector<std::string> problems;
  parse_config("lambda=0.5\n", problems);
  EXPECT_EQ(problems.size(), 1u);
}

TEST(RunConfig, EveryViolationListed) {
  RunConfig c;
  c.train.lambda = 2.0;
  c.train.tau = -1.0;
  c.cascade.k = 0;
  c.student.representation_dim = 4;
  c.data.display_cutoff = c.data.candidates_per_request + 1;
  const auto v = violations(c);
  EXPECT_TRUE(mentions(v, "lambda"));
  EXPECT_TRUE(mentions(v, "tau"));
  EXPECT_TRUE(mentions(v, "cascade k"));
  EXPECT_TRUE(mentions(v, "representation_dim"));
  EXPECT_TRUE(mentions(v, "display_cutoff"));
}

TEST(RunConfig, CrossSectionChecks) {
  RunConfig c;
  c.cascade.v = 100;
  c.train.u = 10;
  c.split.train = 17;
  const auto v = violations(c);
  EXPECT_TRUE(mentions(v, "cascade.v"));
  EXPECT_TRUE(mentions(v, "train.u"));
  EXPECT_TRUE(mentions(v, "n_days"));
}

TEST(RunConfig, DescribeRoundTripsThroughParser) {
  RunConfig c;
  c.train.lambda = 0.123456789012345;
  c.teacher.hidden_sizes = {7, 5};
  c.data.click_bias = -3.25;
  std::vector<std::string> problems;
  const auto back = parse_config(describe(c), problems);
  EXPECT_TRUE(problems.empty());
  EXPECT_EQ(describe(back), describe(c));
}

TEST(RunConfig, HashIgnoresPathsAndWorkers) {
  RunConfig a, b;
  b.paths.out = "elsewhere";
  b.train.workers = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.train.tau = 0.7;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(RunConfig, StudentSeesItemPrefix) {
  RunConfig c;
  EXPECT_EQ(c.student_model().feature_dims.item, 16u);
  EXPECT_EQ(c.teacher_model().feature_dims.item, 24u);
}

TEST(RunConfig, MissingFileIsInputError) {
  std::vector<std::string> problems;
  EXPECT_THROW(load_config("/nonexistent/run.cfg", problems), InputError);
  const auto path = std::filesystem::temp_directory_path() / "cit_run.cfg";
  std::ofstream(path) << "[train]\nepochs=3\n";
  EXPECT_EQ(load_config(path.string(), problems).train.epochs, 3u);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cit
