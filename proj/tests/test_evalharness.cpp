#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "graph_adapter/evalharness.hpp"
#include "graph_adapter/trainer.hpp"
#include "test_util.hpp"

using namespace graph_adapter;

namespace {

EmbeddingBundle source_bundle(std::uint32_t k = 5, double cluster_noise = 0.2) {
  SyntheticSpec spec;
  spec.num_classes = k;
  spec.dim = 32;
  spec.per_class_train = 6;
  spec.per_class_test = 12;
  spec.anchor_noise = 0.3;
  spec.cluster_noise = cluster_noise;
  spec.seed = 4;
  return make_synthetic_bundle(spec);
}

TrainResult quick_train(const EmbeddingBundle& b) {
  TrainConfig c;
  c.epochs = 5;
  c.shots = 4;
  c.seed = 2;
  return train(b, sample_few_shot(b, 4, 2), c);
}

// Keeps only test rows of the listed classes, relabelled in list order.
EmbeddingBundle subset(const EmbeddingBundle& b, const std::vector<std::uint32_t>& classes) {
  EmbeddingBundle out = b;
  out.class_names.clear();
  out.text_features.clear();
  out.test_features.clear();
  out.test_labels.clear();
  for (std::uint32_t n = 0; n < classes.size(); ++n) {
    const auto c = classes[n];
    out.class_names.push_back(b.class_names[c]);
    const auto first = b.text_features.begin() + static_cast<std::ptrdiff_t>(c * b.num_templates * b.dim);
    out.text_features.insert(out.text_features.end(), first, first + b.num_templates * b.dim);
    for (std::size_t i = 0; i < b.num_test(); ++i)
      if (b.test_labels[i] == c) {
        const auto r = b.test_row(i);
        out.test_features.insert(out.test_features.end(), r.begin(), r.end());
        out.test_labels.push_back(n);
      }
  }
  out.train_features.clear();
  out.train_labels.clear();
  return out;
}

}  // namespace

TEST(Top1, OrthonormalCopiesAndWrongLabels) {
  const Eigen::MatrixXd cls = Eigen::MatrixXd::Identity(3, 3);
  const std::vector<std::uint32_t> right{0, 1, 2}, wrong{1, 2, 0};
  EXPECT_DOUBLE_EQ(top1_accuracy(cls, cls, right, 100.0), 100.0);
  EXPECT_DOUBLE_EQ(top1_accuracy(cls, cls, wrong, 100.0), 0.0);
}

TEST(Top1, InvariantToPositiveRescaling) {
  const auto b = source_bundle();
  const auto t = build_text_nodes(b);
  const auto x = test_matrix(b);
  Eigen::VectorXd s(5);  // positive per-row scales
  s << 0.5, 2, 3, 7, 0.1;
  EXPECT_EQ(top1_accuracy(t, x, b.test_labels, 100.0),
            top1_accuracy(s.asDiagonal() * t, x, b.test_labels, 100.0));
  EXPECT_EQ(top1_accuracy(t, x, b.test_labels, 100.0), top1_accuracy(t, x, b.test_labels, 3.0));
}

TEST(Transfer, SourceAsTargetMatchesDirectScore) {
  const auto b = source_bundle();
  const auto r = quick_train(b);
  const auto e = evaluate_transfer(r.state, r.graph, b, {b}, "x");
  EXPECT_EQ(e.source.top1, r.report.test_top1);
  ASSERT_EQ(e.targets.size(), 1u);
  EXPECT_EQ(e.targets[0].top1, r.report.test_top1);
  EXPECT_EQ(e.average, r.report.test_top1);
}

TEST(Transfer, SubsetTargetUsesTwoWayClassifier) {
  const auto b = source_bundle();
  const auto r = quick_train(b);
  const auto target = subset(b, {0, 1});
  const auto cls = adapt_classifier(r.state, r.graph).features;
  Eigen::MatrixXd two(2, cls.cols());
  two.row(0) = cls.row(0);
  two.row(1) = cls.row(1);
  const double expected = top1_accuracy(two, test_matrix(target), target.test_labels, 100.0);
  const auto e = evaluate_transfer(r.state, r.graph, b, {target}, "x");
  EXPECT_EQ(e.targets[0].top1, expected);
}

TEST(Transfer, PermutedTargetClassOrderGivesSameAccuracy) {
  const auto b = source_bundle();
  const auto r = quick_train(b);
  const auto a = subset(b, {0, 1, 2, 3, 4});
  const auto p = subset(b, {3, 0, 4, 2, 1});
  const auto ea = evaluate_transfer(r.state, r.graph, b, {a}, "x");
  const auto ep = evaluate_transfer(r.state, r.graph, b, {p}, "x");
  EXPECT_EQ(ea.targets[0].top1, ep.targets[0].top1);
}

TEST(Transfer, UnknownClassesAreListed) {
  const auto b = source_bundle();
  const auto r = quick_train(b);
  auto t = subset(b, {0, 1});
  t.class_names = {"class_000", "zebra"};
  try {
    evaluate_transfer(r.state, r.graph, b, {t}, "x");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'zebra'"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).find("class_000"), std::string::npos);
  }
}

TEST(Transfer, CrossDomainTagsAndAlphas) {
  const auto b = source_bundle();
  const auto r = quick_train(b);
  CrossDomainJob job;
  job.source = &b;
  job.targets = {source_bundle(5, 0.4)};
  const auto res = cross_domain_eval(job, r.state, r.graph);
  EXPECT_EQ(res.ours.tag, "Ours");
  EXPECT_EQ(res.ours_g.tag, "Ours_g");
  EXPECT_DOUBLE_EQ(res.ours.alpha, 0.6);
  EXPECT_DOUBLE_EQ(res.ours_g.alpha, 0.8);
  for (const auto* e : {&res.ours, &res.ours_g}) {
    EXPECT_GE(e->average, 0.0);
    EXPECT_LE(e->average, 100.0);
  }
  const auto j = to_json(res.ours_g);
  EXPECT_EQ(j.at("targets").size(), 1u);
  EXPECT_EQ(j.at("tag"), "Ours_g");
}

TEST(Transfer, HeavierResidualDegradesLessUnderShift) {
  const auto src = make_synthetic_bundle(test_util::acceptance_spec());
  auto shifted_spec = test_util::acceptance_spec();
  shifted_spec.cluster_noise = 0.45;
  auto target = make_synthetic_bundle(shifted_spec);
  target.dataset = "shifted";
  TrainConfig c;
  c.seed = 1;
  c.shots = 16;
  const auto r = train(src, sample_few_shot(src, 16, 1), c);
  CrossDomainJob job;
  job.source = &src;
  job.targets = {target};
  const auto res = cross_domain_eval(job, r.state, r.graph);
  const double drop = res.ours.source.top1 - res.ours.average;
  const double drop_g = res.ours_g.source.top1 - res.ours_g.average;
  EXPECT_LT(drop_g, drop);
}

TEST(Drift, IdenticalNodesHaveZeroDelta) {
  std::mt19937_64 rng(41);
  const auto m = test_util::random_unit_rows(6, 4, rng);
  const auto s = drift_summary(m, m);
  EXPECT_EQ(s.delta(), 0.0);
  EXPECT_EQ(s.mean_displacement, 0.0);
}

TEST(Drift, NegatingARowLowersMeanCosine) {
  Eigen::MatrixXd m(3, 2);
  m << 1, 0, 0.8, 0.6, 0.6, 0.8;
  Eigen::MatrixXd after = m;
  after.row(2) *= -1;
  EXPECT_LT(drift_summary(m, after).delta(), 0.0);
}

TEST(Drift, MeanCosineIsPermutationInvariant) {
  std::mt19937_64 rng(42);
  const auto m = test_util::random_unit_rows(7, 5, rng);
  Eigen::MatrixXd p(7, 5);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < 7; ++i) p.row(i) = m.row(perm[i]);
  EXPECT_NEAR(mean_pairwise_cosine(m), mean_pairwise_cosine(p), 1e-15);
  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 1, 1;
  EXPECT_NEAR(mean_pairwise_cosine(two), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Drift, ExportWritesCsvAndSummary) {
  test_util::TempDir dir;
  Eigen::MatrixXd m(2, 2);
  m << 1, 0, 0, 1;
  export_node_drift(m, m, {"a", "b"}, dir.file("d.csv"));
  std::ifstream in(dir.file("d.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "class,tag,dim_0,dim_1");
  EXPECT_EQ(lines[1], "a,before,1,0");
  EXPECT_EQ(lines[4], "b,after,0,1");
  std::ifstream js(dir.file("d.csv.summary.json"));
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j.at("mean_pairwise_cosine_delta").get<double>(), 0.0);
}

TEST(Drift, UnwritablePathIsAnError) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_THROW(export_node_drift(m, m, {"a", "b"}, "/nonexistent-dir/x.csv"), DataError);
}
