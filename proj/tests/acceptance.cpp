// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "graph_adapter/graph_adapter.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace graph_adapter;

namespace {

// Zero-shot top-1 of the acceptance task, from a single oracle run
// (nearest text anchor by brute-force dot products).
constexpr double kPinnedZeroShot = 14.7;
constexpr double kMinGain = 5.0;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool run(const char* id, const char* title, double budget_s, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  const double took = seconds_since(t0);
  if (budget_s > 0 && took > budget_s) {
    v.pass = false;
    v.detail << " [over time budget " << budget_s << " s]";
  }
  std::printf("%s %s - %s (%.2f s) %s\n", v.pass ? "PASS" : "FAIL", id, title, took,
              v.detail.str().c_str());
  std::fflush(stdout);
  return v.pass;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& n) {
  const double scale = std::max(a.norm(), n.norm());
  return scale == 0.0 ? 0.0 : (a - n).norm() / scale;
}

TrainConfig paper_config(std::uint64_t seed, double beta = 0.7) {
  TrainConfig c;
  c.seed = seed;
  c.shots = 16;
  c.adapter.alpha = 0.6;
  c.adapter.beta = beta;
  c.adapter.variant = Variant::text;
  return c;
}

// Shared state between criteria that reuse the same training runs.
struct Shared {
  EmbeddingBundle bundle = make_synthetic_bundle(test_util::acceptance_spec());
  std::vector<TrainResult> runs;  // beta 0.7, one per seed
  double mean_trained = 0.0;
  double p4_seconds = 0.0;

  const std::vector<TrainResult>& trained() {
    if (runs.empty()) {
      for (auto seed : kSeeds)
        runs.push_back(train(bundle, sample_few_shot(bundle, 16, seed), paper_config(seed)));
      double sum = 0.0;
      for (const auto& r : runs) sum += r.report.test_top1;
      mean_trained = sum / static_cast<double>(runs.size());
    }
    return runs;
  }
};

void p1_gradients(Verdict& v) {
  std::mt19937_64 rng(101);
  const double h = 1e-4, scale = 100.0;
  double worst = 0.0;
  for (int trial = 0; trial < 24; ++trial) {
    const Eigen::Index k = 3 + trial % 4, d = 5 + (trial / 4) % 4, b = 2 + trial % 3;
    const Eigen::MatrixXd t = test_util::random_unit_rows(k, d, rng).cwiseAbs();
    const Eigen::MatrixXd vis = test_util::random_unit_rows(k, d, rng).cwiseAbs();
    const auto graph = build_partitioned_graph(t, vis, 256, 0);
    const Eigen::MatrixXd images = test_util::random_unit_rows(b, d, rng).cwiseAbs();
    std::vector<std::uint32_t> labels;
    for (Eigen::Index i = 0; i < b; ++i) labels.push_back(static_cast<std::uint32_t>(rng() % k));

    AdapterConfig cfg;
    const auto s = make_adapter_state(cfg, d, static_cast<std::uint64_t>(trial));
    const auto lg = loss_and_gradients(s, graph, images, labels, scale);

    // Numerical side uses the brute-force loss only.
    const auto ot = oracle::from_eigen(t);
    const auto ov = oracle::from_eigen(vis);
    const auto oi = oracle::from_eigen(images);
    auto w_tt = oracle::from_eigen(s.layer(LayerRole::tt).weight);
    auto w_vt = oracle::from_eigen(s.layer(LayerRole::vt).weight);
    auto loss = [&] {
      return oracle::text_variant_loss(ot, ov, w_tt, w_vt, 0.6, 0.7, oi, labels, scale, true);
    };
    for (int which = 0; which < 2; ++which) {
      auto& w = which == 0 ? w_tt : w_vt;
      Eigen::MatrixXd num(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) {
          const double keep = w[i][j];
          w[i][j] = keep + h;
          const double lp = loss();
          w[i][j] = keep - h;
          const double lm = loss();
          w[i][j] = keep;
          num(i, j) = (lp - lm) / (2 * h);
        }
      worst = std::max(worst, rel_err(lg.grads.weight[static_cast<std::size_t>(which)], num));
    }
  }
  v.detail << "24 instances, logit scale 100, worst relative error " << worst;
  v.require(worst < 1e-4, "relative error < 1e-4");
}

void p2_residual_collapse(Verdict& v, Shared& sh) {
  std::size_t checked = 0;
  SyntheticSpec other;
  other.num_classes = 7;
  other.dim = 48;
  other.seed = 3;
  for (const auto& bundle : {sh.bundle, make_synthetic_bundle(other)}) {
    const auto split = sample_few_shot(bundle, 8, 5);
    const auto graph = build_partitioned_graph(bundle, split, 256, 5);
    const Eigen::MatrixXd x = test_matrix(bundle);
    const auto zero_shot = predict(graph.text_nodes, x);
    for (auto variant : {Variant::text, Variant::image, Variant::text_image}) {
      AdapterConfig cfg;
      cfg.variant = variant;
      cfg.alpha = 1.0;
      const auto s = make_adapter_state(cfg, bundle.dim, 9);
      const auto pred = predict(adapt_classifier(s, graph).features, prepare_images(s, graph, x));
      v.require(pred == zero_shot, std::string("variant ") + to_string(variant) + " on " + bundle.dataset);
      checked += pred.size();
    }
  }
  v.detail << checked << " predictions compared";
}

void p3_oracles(Verdict& v) {
  Eigen::Matrix2d e;
  e << 1, 0.5, 0.5, 1;
  Eigen::Matrix2d expected;
  expected << 0.8, 0.2, 0.2, 0.8;
  const double hand = (laplace_normalize(e).matrix - expected).cwiseAbs().maxCoeff();
  v.require(hand < 1e-6, "2x2 hand case");

  std::mt19937_64 rng(103);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + trial % 9, d = 2 + trial % 7;
    const Eigen::MatrixXd x = test_util::random_matrix(n, d, rng).cwiseAbs();
    const Eigen::MatrixXd edges = cosine_edges(x);
    const auto adj = laplace_normalize(edges);
    const auto ref_adj = oracle::laplace(oracle::from_eigen(edges));
    worst = std::max(worst, (adj.matrix - oracle::to_eigen(ref_adj)).cwiseAbs().maxCoeff());
    GcnLayer layer = init_gcn_layer(d, LayerRole::tt, static_cast<std::uint64_t>(trial),
                                    trial % 2 ? Activation::tanh : Activation::identity);
    const auto out = gcn_forward(layer, adj, x).output;
    const auto ref = oracle::gcn(ref_adj, oracle::from_eigen(x), oracle::from_eigen(layer.weight),
                                 layer.activation == Activation::tanh);
    worst = std::max(worst, (out - oracle::to_eigen(ref)).cwiseAbs().maxCoeff());
  }
  v.detail << "50 instances, worst abs error " << worst << ", 2x2 error " << hand;
  v.require(worst < 1e-6, "abs error < 1e-6");
}

void p4_gain(Verdict& v, Shared& sh) {
  const auto& b = sh.bundle;
  auto rows = [&](const std::vector<float>& flat) {
    oracle::Mat m(flat.size() / b.dim, oracle::Vec(b.dim));
    for (std::size_t i = 0; i < flat.size(); ++i) m[i / b.dim][i % b.dim] = flat[i];
    return m;
  };
  const auto x = rows(b.test_features);
  const auto anchors = rows(b.text_features);
  const double oracle_zs = oracle::nearest_row_accuracy(anchors, x, sh.bundle.test_labels);
  v.require(oracle_zs == kPinnedZeroShot, "pinned zero-shot baseline reproduces");

  const auto& runs = sh.trained();
  v.detail << "zero-shot " << kPinnedZeroShot << ", trained per seed";
  for (const auto& r : runs) {
    v.detail << " " << r.report.test_top1;
    v.require(r.report.zero_shot_top1 == kPinnedZeroShot, "library zero-shot equals oracle");
  }
  const double gain = sh.mean_trained - kPinnedZeroShot;
  v.detail << ", mean " << sh.mean_trained << ", gain " << gain;
  v.require(gain >= kMinGain, "gain >= 5 points");
}

void p5_beta(Verdict& v, Shared& sh) {
  const double interior = (sh.trained(), sh.mean_trained);
  std::vector<double> ends;
  for (double beta : {0.0, 1.0}) {
    double sum = 0.0;
    for (auto seed : kSeeds)
      sum += train(sh.bundle, sample_few_shot(sh.bundle, 16, seed), paper_config(seed, beta))
                 .report.test_top1;
    ends.push_back(sum / static_cast<double>(kSeeds.size()));
  }
  v.detail << "mean top-1 beta=0: " << ends[0] << ", beta=0.7: " << interior
           << ", beta=1: " << ends[1];
  v.require(interior >= std::max(ends[0], ends[1]) - 0.5, "interior >= best endpoint - 0.5");
}

void p6_determinism(Verdict& v, Shared& sh) {
  const auto split = sample_few_shot(sh.bundle, 16, 1);
  const auto a = train(sh.bundle, split, paper_config(1));
  const auto b = train(sh.bundle, split, paper_config(1));
  const auto wa = encode_weights(make_weight_file(a, sh.bundle));
  const auto wb = encode_weights(make_weight_file(b, sh.bundle));
  v.require(wa == wb, "GAW1 bytes identical");
  v.require(a.report.test_top1 == b.report.test_top1, "test accuracy identical");
  bool same_epochs = a.report.epochs.size() == b.report.epochs.size();
  for (std::size_t i = 0; same_epochs && i < a.report.epochs.size(); ++i)
    same_epochs = a.report.epochs[i].loss == b.report.epochs[i].loss &&
                  a.report.epochs[i].train_top1 == b.report.epochs[i].train_top1;
  v.require(same_epochs, "per-epoch records identical");
  v.detail << wa.size() << "-byte weight files compared";
}

void p7_equivariance(Verdict& v, Shared& sh) {
  const auto& bundle = sh.bundle;
  std::vector<std::uint32_t> perm(bundle.num_classes());
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937_64 rng(107);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto permuted = permute_classes(bundle, perm);

  TrainConfig cfg = paper_config(2);
  cfg.epochs = 20;
  cfg.adapter.variant = Variant::text_image;
  const auto a = train(bundle, sample_few_shot(bundle, 16, 2), cfg);
  const auto b = train(permuted, sample_few_shot(permuted, 16, 2), cfg);

  double graph_err = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i), p = static_cast<Eigen::Index>(perm[i]);
    graph_err = std::max(graph_err, (b.graph.text_nodes.row(r) - a.graph.text_nodes.row(p)).cwiseAbs().maxCoeff());
    graph_err = std::max(graph_err, (b.graph.visual_nodes.row(r) - a.graph.visual_nodes.row(p)).cwiseAbs().maxCoeff());
    for (std::size_t j = 0; j < perm.size(); ++j)
      graph_err = std::max(graph_err, std::abs(b.graph.groups[0].text.edges(r, static_cast<Eigen::Index>(j)) -
                                               a.graph.groups[0].text.edges(p, perm[j])));
  }
  v.require(graph_err < 1e-12, "graph construction equivariant");

  // Adaptation with shared weights on both class orders.
  const auto ca = adapt_classifier(a.state, a.graph).features;
  const auto cb = adapt_classifier(a.state, b.graph).features;
  double adapt_err = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    adapt_err = std::max(adapt_err, (cb.row(static_cast<Eigen::Index>(i)) -
                                     ca.row(static_cast<Eigen::Index>(perm[i]))).cwiseAbs().maxCoeff());
  v.require(adapt_err < 1e-10, "adaptation equivariant");
  v.require(a.report.test_top1 == b.report.test_top1, "trained accuracy identical under permutation");
  v.require(a.report.zero_shot_top1 == b.report.zero_shot_top1, "zero-shot identical under permutation");

  test_util::TempDir dir;
  save_bundle(bundle, dir.file("b.ceb"));
  const auto back = load_bundle(dir.file("b.ceb"));
  v.require(encode_bundle(back) == encode_bundle(bundle), "CEB1 round trip");
  const auto wf = make_weight_file(a, bundle);
  save_weights(wf, dir.file("w.gaw"));
  v.require(encode_weights(load_weights(dir.file("w.gaw"))) == encode_weights(wf), "GAW1 round trip");
  v.detail << "graph err " << graph_err << ", adaptation err " << adapt_err << ", accuracy "
           << a.report.test_top1 << " vs " << b.report.test_top1;
}

void p8_drift(Verdict& v, Shared& sh) {
  const char* sep = "";
  for (const auto& r : sh.trained()) {
    const auto s = drift_summary(r.graph.text_nodes, adapt_classifier(r.state, r.graph).features);
    v.detail << sep << "seed " << r.report.seed << ": " << s.mean_cosine_before << " -> "
             << s.mean_cosine_after;
    sep = "; ";
    v.require(s.mean_cosine_after <= s.mean_cosine_before, "mean pairwise cosine does not increase");
  }
}

}  // namespace

int main() {
  Shared shared;
  bool ok = true;
  ok &= run("P1", "gradient fidelity", 10.0, p1_gradients);
  ok &= run("P2", "residual collapse", 1.0, [&](Verdict& v) { p2_residual_collapse(v, shared); });
  ok &= run("P3", "oracle equivalence", 5.0, p3_oracles);
  const auto p4_start = std::chrono::steady_clock::now();
  ok &= run("P4", "synthetic few-shot gain", 60.0, [&](Verdict& v) { p4_gain(v, shared); });
  shared.p4_seconds = seconds_since(p4_start);
  ok &= run("P5", "beta ablation direction", 0.0, [&](Verdict& v) { p5_beta(v, shared); });
  ok &= run("P6", "determinism", 2.0 * shared.p4_seconds,
            [&](Verdict& v) { p6_determinism(v, shared); });
  ok &= run("P7", "equivariance and round trips", 0.0, [&](Verdict& v) { p7_equivariance(v, shared); });
  ok &= run("P8", "node drift direction", 0.0, [&](Verdict& v) { p8_drift(v, shared); });
  std::printf("%s\n", ok ? "ALL PASS" : "SOME CRITERIA FAILED");
  return ok ? 0 : 1;
}
