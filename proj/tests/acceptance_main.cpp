// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Thresholds are fixed here, not configurable.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "dualprompt/data.hpp"
#include "dualprompt/io.hpp"
#include "dualprompt/loss.hpp"
#include "dualprompt/metrics.hpp"
#include "dualprompt/prompts.hpp"
#include "dualprompt/scoring.hpp"
#include "dualprompt/trainer.hpp"

using namespace dualprompt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* what, bool ok) {
  std::printf("criterion %2d [%s]: %s\n", criterion, ok ? "PASS" : "FAIL",
              what);
  if (!ok) ++g_failures;
}

// ---- 1: analytic gradients vs central finite differences -------------------

bool check_gradients() {
  std::mt19937_64 rng(1001);
  for (int inst = 0; inst < 20; ++inst) {
    const int d = 4 + int(rng() % 13);      // <= 16
    const int m = 2 + int(rng() % 7);       // <= 8
    const int grid = 2 + int(rng() % 3);    // R <= 16
    const ClassCatalog cat = make_synthetic_catalog(m, d, rng());
    SynthConfig sc;
    sc.n_images = 3;
    sc.grid_h = sc.grid_w = grid;
    sc.labels_min = 1;
    sc.labels_max = std::min(2, m);
    sc.noise_sigma = 0.4;
    sc.seed = rng();
    const Dataset ds = synth_dataset(cat, sc);
    const EncoderSet enc =
        make_encoders(EncoderMode::random_frozen, EncoderDims{d, d, d, d},
                      rng());
    PromptConfig pc;
    pc.n_ctx_pos = 2;
    pc.n_ctx_neg = 3;
    pc.dim = d;
    pc.mode = (inst % 2) ? PromptMode::shared : PromptMode::class_specific;
    PromptBank bank = init_prompts(pc, m, rng());

    std::vector<const ImageRecord*> batch;
    std::vector<int> rows;
    for (int i = 0; i < int(ds.images.size()); ++i) {
      batch.push_back(&ds.images[i]);
      rows.push_back(i);
    }
    LossConfig loss;
    ClassifierConfig cls;
    cls.aggregation = (inst % 3 == 0) ? Aggregation::average
                                      : Aggregation::softmax_weighted;
    cls.spatial_temp = 0.5;
    const auto grads =
        loss_gradients(bank, cat, enc, batch, ds.labels, rows, loss, cls);

    const double h = 1e-5;
    for (int coord = 0; coord < 100; ++coord) {
      const int pi = int(rng() % bank.pairs.size());
      const bool pos = rng() % 2;
      auto& ctx = pos ? bank.pairs[pi].pos_ctx : bank.pairs[pi].neg_ctx;
      const int r = int(rng() % ctx.rows());
      const int c = int(rng() % ctx.cols());
      const double saved = ctx(r, c);
      ctx(r, c) = saved + h;
      const double lp =
          batch_loss(bank, cat, enc, batch, ds.labels, rows, loss, cls);
      ctx(r, c) = saved - h;
      const double lm =
          batch_loss(bank, cat, enc, batch, ds.labels, rows, loss, cls);
      ctx(r, c) = saved;
      const double fd = (lp - lm) / (2 * h);
      const double analytic =
          (pos ? grads[pi].pos_ctx : grads[pi].neg_ctx)(r, c);
      if (std::abs(analytic - fd) > 1e-4 * (std::abs(fd) + 1e-8)) return false;
    }
  }
  return true;
}

// ---- 2: ASL with both gammas zero and zero margin is BCE -------------------

bool check_asl_bce() {
  LossConfig cfg;
  cfg.gamma_pos = 0;
  cfg.gamma_neg = 0;
  cfg.margin = 0;
  std::mt19937_64 rng(1002);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng);
    const int y = (rng() % 2) ? 1 : -1;
    const double bce = (y == 1) ? -std::log(p) : -std::log1p(-p);
    if (std::abs(asl_loss(p, y, cfg) - bce) > 1e-12) return false;
  }
  return true;
}

// ---- 3: aggregation semantics ----------------------------------------------

bool check_aggregation() {
  std::mt19937_64 rng(1003);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ClassifierConfig cfg;
  cfg.spatial_temp = 0.7;
  auto agg_pair = [&](const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg,
                      Aggregation a) {
    cfg.aggregation = a;
    Eigen::VectorXd sp, sn;
    aggregate(RegionLogits{pos, neg}, cfg, sp, sn);
    return std::pair<Eigen::VectorXd, Eigen::VectorXd>{sp, sn};
  };

  // Single region: exact pass-through in every mode.
  for (auto agg : {Aggregation::softmax_weighted, Aggregation::average,
                   Aggregation::max}) {
    Eigen::MatrixXd one(1, 3);
    one << 0.2, -0.4, 0.9;
    const Eigen::VectorXd got = agg_pair(one, one, agg).first;
    for (int m = 0; m < 3; ++m)
      if (got(m) != one(0, m)) return false;
  }

  for (int trial = 0; trial < 100; ++trial) {
    const int r = 2 + int(rng() % 8), m = 1 + int(rng() % 5);
    Eigen::MatrixXd pos(r, m), neg(r, m);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < m; ++j) {
        pos(i, j) = u(rng);
        neg(i, j) = u(rng);
      }

    // Constant positive columns: softmax weighting degenerates to the mean.
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(r, m, 0.3);
    const auto sm = agg_pair(flat, neg, Aggregation::softmax_weighted);
    const auto av = agg_pair(flat, neg, Aggregation::average);
    for (int j = 0; j < m; ++j) {
      if (std::abs(sm.first(j) - av.first(j)) > 1e-12) return false;
      if (std::abs(sm.second(j) - av.second(j)) > 1e-12) return false;
    }

    // Max mode: brute-force argmax of the positive column picks both sides.
    const auto mx = agg_pair(pos, neg, Aggregation::max);
    for (int j = 0; j < m; ++j) {
      int arg = 0;
      for (int i = 1; i < r; ++i)
        if (pos(i, j) > pos(arg, j)) arg = i;
      if (mx.first(j) != pos(arg, j) || mx.second(j) != neg(arg, j))
        return false;
    }

    // Weight sharing: the negative aggregate reuses the positive weights.
    const auto soft = agg_pair(pos, neg, Aggregation::softmax_weighted);
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd w = aggregation_weights(pos.col(j), 0.7);
      if (std::abs(soft.first(j) - w.dot(pos.col(j))) > 1e-12) return false;
      if (std::abs(soft.second(j) - w.dot(neg.col(j))) > 1e-12) return false;
    }

    // Region order never matters.
    std::vector<int> perm(r);
    for (int i = 0; i < r; ++i) perm[i] = i;
    for (int rep = 0; rep < 2; ++rep) {
      std::shuffle(perm.begin(), perm.end(), rng);
      Eigen::MatrixXd pos_p(r, m), neg_p(r, m);
      for (int i = 0; i < r; ++i) {
        pos_p.row(i) = pos.row(perm[i]);
        neg_p.row(i) = neg.row(perm[i]);
      }
      for (auto agg : {Aggregation::softmax_weighted, Aggregation::average,
                       Aggregation::max}) {
        const auto a = agg_pair(pos, neg, agg);
        const auto b = agg_pair(pos_p, neg_p, agg);
        for (int j = 0; j < m; ++j) {
          if (std::abs(a.first(j) - b.first(j)) > 1e-12) return false;
          if (std::abs(a.second(j) - b.second(j)) > 1e-12) return false;
        }
      }
    }
  }
  return true;
}

// ---- 4: probability complement and temperature-invariant predictions -------

bool check_classifier_symmetry() {
  std::mt19937_64 rng(1004);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng), b = u(rng);
    if (std::abs(class_probability(a, b, 0.3) +
                 class_probability(b, a, 0.3) - 1.0) > 1e-12)
      return false;
  }
  ScorePair sp;
  sp.s_pos.resize(10000);
  sp.s_neg.resize(10000);
  sp.p.resize(10000);
  for (int i = 0; i < 10000; ++i) {
    sp.s_pos(i) = u(rng);
    sp.s_neg(i) = u(rng);
  }
  Eigen::VectorXi base;
  for (double tau : {0.01, 0.05, 1.0}) {
    for (int i = 0; i < 10000; ++i)
      sp.p(i) = std::clamp(class_probability(sp.s_pos(i), sp.s_neg(i), tau),
                           1e-15, 1.0 - 1e-15);
    const Eigen::VectorXi pred = predict_labels(sp);
    if (base.size() == 0)
      base = pred;
    else if (pred != base)
      return false;
  }
  return true;
}

// ---- 5: metric implementations vs brute-force oracles ----------------------

double oracle_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<int> order(s.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return s[a] > s[b]; });
  double hits = 0, sum = 0, npos = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    if (y[order[rank]] == 1) {
      hits += 1;
      sum += hits / double(rank + 1);
    }
  for (int v : y) npos += (v == 1);
  return sum / npos;
}

bool check_metric_oracles() {
  std::mt19937_64 rng(1005);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 1000; ++inst) {
    const int n = 1 + int(rng() % 6), m = 1 + int(rng() % 4);
    LabelMatrix truth(n, m), preds(n, m);
    Eigen::MatrixXd probs(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const int roll = int(rng() % 3);
        truth.at(i, j) = std::int8_t(roll == 0 ? 1 : (roll == 1 ? -1 : 0));
        preds.at(i, j) = (rng() % 2) ? 1 : -1;
        probs(i, j) = u(rng);
      }

    // AP per class against the independent ranking walk.
    for (int j = 0; j < m; ++j) {
      std::vector<double> s;
      std::vector<int> y;
      bool any_pos = false;
      for (int i = 0; i < n; ++i)
        if (truth.at(i, j) != 0) {
          s.push_back(probs(i, j));
          y.push_back(truth.at(i, j));
          any_pos |= truth.at(i, j) == 1;
        }
      if (!any_pos || s.empty()) continue;
      if (std::abs(average_precision(s, y) - oracle_ap(s, y)) > 1e-12)
        return false;
    }

    // Thresholded metrics against direct cell counting.
    double tp_all = 0, pred_all = 0, pos_all = 0;
    double cp_sum = 0, cr_sum = 0;
    int cp_n = 0, cr_n = 0;
    for (int j = 0; j < m; ++j) {
      double tp = 0, predicted = 0, actual = 0;
      for (int i = 0; i < n; ++i) {
        if (truth.at(i, j) == 0) continue;
        const bool hit = preds.at(i, j) == 1;
        const bool is_pos = truth.at(i, j) == 1;
        predicted += hit;
        actual += is_pos;
        tp += hit && is_pos;
      }
      tp_all += tp;
      pred_all += predicted;
      pos_all += actual;
      cp_sum += predicted > 0 ? tp / predicted : 0.0;
      ++cp_n;
      if (actual > 0) {
        cr_sum += tp / actual;
        ++cr_n;
      }
    }
    const auto got = classwise_overall_metrics(preds, truth);
    const double cp = cp_sum / cp_n;
    const double cr = cr_n ? cr_sum / cr_n : 0.0;
    const double op = pred_all > 0 ? tp_all / pred_all : 0.0;
    const double orr = pos_all > 0 ? tp_all / pos_all : 0.0;
    if (std::abs(got.cp - cp) > 1e-12 || std::abs(got.cr - cr) > 1e-12 ||
        std::abs(got.op - op) > 1e-12 || std::abs(got.orr - orr) > 1e-12)
      return false;

    // Top-k against brute selection.
    const int k = 1 + int(rng() % m);
    double tp_k = 0, sel = 0, pos_k = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<int> order(m);
      for (int j = 0; j < m; ++j) order[j] = j;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return probs(i, a) > probs(i, b);
      });
      for (int j = 0; j < m; ++j) pos_k += truth.at(i, j) == 1;
      for (int r = 0; r < k; ++r) {
        sel += 1;
        tp_k += truth.at(i, order[r]) == 1;
      }
    }
    const auto tk = topk_metrics(probs, truth, k);
    const double p_k = sel > 0 ? tp_k / sel : 0.0;
    const double r_k = pos_k > 0 ? tp_k / pos_k : 0.0;
    if (std::abs(tk.precision - p_k) > 1e-12 ||
        std::abs(tk.recall - r_k) > 1e-12)
      return false;
  }
  return true;
}

// ---- shared synthetic end-to-end helpers -----------------------------------

struct Pipeline {
  ClassCatalog catalog;
  Dataset train_ds;
  Dataset test_ds;
  EncoderSet enc;
};

Pipeline make_pipeline(int m, int dim, int grid, int n_train, int n_test,
                       double sigma, std::uint64_t seed) {
  Pipeline p;
  p.catalog = make_synthetic_catalog(m, dim, seed);
  SynthConfig sc;
  sc.grid_h = sc.grid_w = grid;
  sc.labels_min = 1;
  sc.labels_max = 3;
  sc.noise_sigma = sigma;
  sc.n_images = n_train;
  sc.seed = seed + 1;
  p.train_ds = synth_dataset(p.catalog, sc);
  sc.n_images = n_test;
  sc.seed = seed + 2;
  p.test_ds = synth_dataset(p.catalog, sc);
  p.enc = make_encoders(EncoderMode::aligned, EncoderDims{dim, dim, dim, dim},
                        0);
  return p;
}

TrainConfig base_train_config(int dim) {
  TrainConfig cfg;
  cfg.lr0 = 0.01;
  cfg.epochs = 40;
  cfg.batch_size = 32;
  cfg.prompt.dim = dim;
  cfg.prompt.n_ctx_pos = cfg.prompt.n_ctx_neg = 16;
  cfg.classifier.spatial_temp = 0.1;
  return cfg;
}

double test_map(const PromptBank& bank, const Pipeline& p,
                const ClassifierConfig& cls) {
  EvalMode mode;
  return evaluate(bank, p.catalog, p.enc, p.test_ds, mode, cls).map;
}

// ---- 6: partial-label end-to-end -------------------------------------------

bool check_end_to_end() {
  Pipeline p = make_pipeline(20, 64, 8, 2000, 500, 0.1, 2006);
  TrainConfig cfg = base_train_config(64);

  auto run_at_keep = [&](double keep) {
    Dataset masked = p.train_ds;
    masked.labels = mask_labels(masked.labels, keep, 17);
    return train(cfg, masked, std::nullopt, p.enc).bank;
  };

  const PromptBank untrained = init_prompts(cfg.prompt, 20, cfg.seed);
  const double map_untrained = test_map(untrained, p, cfg.classifier);
  const double map_k01 = test_map(run_at_keep(0.1), p, cfg.classifier);
  const double map_k09 = test_map(run_at_keep(0.9), p, cfg.classifier);
  std::printf("  keep=0.1 mAP %.4f, keep=0.9 mAP %.4f, untrained %.4f\n",
              map_k01, map_k09, map_untrained);
  return map_k01 >= 0.90 && map_k01 - map_untrained >= 0.30 &&
         map_k09 >= map_k01 - 0.02;
}

// ---- 7: aggregation ordering on sparse positives ---------------------------

bool check_aggregation_ordering() {
  auto run = [&](Aggregation agg, std::uint64_t seed) {
    Pipeline p = make_pipeline(20, 64, 8, 1000, 500, 0.15, seed);
    TrainConfig cfg = base_train_config(64);
    cfg.classifier.aggregation = agg;
    const PromptBank bank = train(cfg, p.train_ds, std::nullopt, p.enc).bank;
    return test_map(bank, p, cfg.classifier);
  };
  std::vector<double> soft, avg, mx;
  for (std::uint64_t seed : {3001, 3002, 3003, 3004, 3005}) {
    soft.push_back(run(Aggregation::softmax_weighted, seed));
    mx.push_back(run(Aggregation::max, seed));
    avg.push_back(run(Aggregation::average, seed));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double ms = median(soft), mm = median(mx), ma = median(avg);
  std::printf("  median mAP: softmax %.4f, max %.4f, average %.4f\n", ms, mm,
              ma);
  return ms >= mm + 0.01 && mm >= ma + 0.01;
}

// ---- 8: zero-shot transfer of shared prompts -------------------------------

bool check_zero_shot() {
  Pipeline p = make_pipeline(20, 64, 8, 1000, 500, 0.1, 2008);
  std::set<int> unseen{15, 16, 17, 18, 19};
  const ZslSplit split = make_zsl_split(p.catalog, unseen);

  TrainConfig cfg = base_train_config(64);
  cfg.prompt.mode = PromptMode::shared;
  cfg.prompt.n_ctx_pos = cfg.prompt.n_ctx_neg = 64;
  const PromptBank bank = train(cfg, p.train_ds, split, p.enc).bank;

  EvalMode mode;
  mode.kind = EvalKind::zsl;
  mode.split = split;
  mode.topk = {3};
  const double f1 =
      evaluate(bank, p.catalog, p.enc, p.test_ds, mode, cfg.classifier)
          .topk[0]
          .f1;

  // Monte-Carlo baseline: random scores over the unseen columns.
  const int n = int(p.test_ds.images.size());
  LabelMatrix truth(n, int(unseen.size()));
  {
    int col = 0;
    for (int c : unseen) {
      for (int i = 0; i < n; ++i)
        truth.at(i, col) = p.test_ds.labels.at(i, c);
      ++col;
    }
  }
  std::vector<double> baseline;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(4000 + seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd probs(n, int(unseen.size()));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < int(unseen.size()); ++j) probs(i, j) = u(rng);
    baseline.push_back(topk_metrics(probs, truth, 3).f1);
  }
  double mu = 0;
  for (double v : baseline) mu += v;
  mu /= baseline.size();
  double var = 0;
  for (double v : baseline) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / (baseline.size() - 1));
  std::printf("  unseen F1@3 %.4f vs random %.4f +/- %.4f\n", f1, mu, sd);
  return f1 >= mu + 5 * sd;
}

// ---- 9: reproducibility and frozen encoders --------------------------------

bool check_reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "dp_acceptance";
  fs::create_directories(dir);
  Pipeline p = make_pipeline(6, 16, 3, 80, 40, 0.2, 2009);
  TrainConfig cfg = base_train_config(16);
  cfg.epochs = 6;
  cfg.prompt.n_ctx_pos = cfg.prompt.n_ctx_neg = 4;

  const std::string digest_before = encoder_digest(p.enc);
  auto run = [&](const fs::path& ckpt, const fs::path& hist,
                 const fs::path& rep) {
    const TrainResult r = train(cfg, p.train_ds, std::nullopt, p.enc);
    save_checkpoint(r.bank, "{}", ckpt);
    r.history.save_csv(hist);
    EvalMode mode;
    io::write_text_file(
        rep, evaluate(r.bank, p.catalog, p.enc, p.test_ds, mode,
                      cfg.classifier)
                 .to_json());
  };
  run(dir / "a.dcpt", dir / "a.csv", dir / "a.json");
  run(dir / "b.dcpt", dir / "b.csv", dir / "b.json");
  const bool same =
      io::read_text_file(dir / "a.dcpt") == io::read_text_file(dir / "b.dcpt") &&
      io::read_text_file(dir / "a.csv") == io::read_text_file(dir / "b.csv") &&
      io::read_text_file(dir / "a.json") == io::read_text_file(dir / "b.json");
  return same && encoder_digest(p.enc) == digest_before;
}

// ---- 10: write -> read -> write byte identity ------------------------------

bool check_round_trips() {
  const fs::path dir = fs::temp_directory_path() / "dp_acceptance_rt";
  fs::create_directories(dir);
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<float> values(60);
  for (auto& v : values) v = float(gauss(rng));
  io::write_dcfm(dir / "x1.dcfm", 3, 4, 5, values);
  const io::DcfmFile rt = io::read_dcfm(dir / "x1.dcfm");
  io::write_dcfm(dir / "x2.dcfm", rt.h, rt.w, rt.d, rt.values);
  if (io::read_text_file(dir / "x1.dcfm") !=
      io::read_text_file(dir / "x2.dcfm"))
    return false;

  PromptConfig pc;
  pc.dim = 6;
  pc.n_ctx_pos = 2;
  pc.n_ctx_neg = 3;
  const PromptBank bank = init_prompts(pc, 4, 11);
  save_checkpoint(bank, "{\"k\":1}", dir / "c1.dcpt");
  const Checkpoint loaded = load_checkpoint(dir / "c1.dcpt");
  save_checkpoint(loaded.bank, loaded.meta_json, dir / "c2.dcpt");
  if (io::read_text_file(dir / "c1.dcpt") !=
      io::read_text_file(dir / "c2.dcpt"))
    return false;

  Pipeline p = make_pipeline(4, 8, 2, 10, 10, 0.3, 2010);
  TrainConfig cfg = base_train_config(8);
  const PromptBank b = init_prompts(cfg.prompt, 4, 1);
  EvalMode mode;
  const std::string rep1 =
      evaluate(b, p.catalog, p.enc, p.test_ds, mode, cfg.classifier).to_json();
  io::write_text_file(dir / "r1.json", rep1);
  io::write_text_file(dir / "r2.json", io::read_text_file(dir / "r1.json"));
  return io::read_text_file(dir / "r1.json") ==
         io::read_text_file(dir / "r2.json");
}

}  // namespace

int main() {
  report(1, "analytic gradients match finite differences", check_gradients());
  report(2, "ASL with zero focusing equals BCE", check_asl_bce());
  report(3, "aggregation semantics", check_aggregation());
  report(4, "classifier symmetry and temperature invariance",
         check_classifier_symmetry());
  report(5, "metrics match brute-force oracles", check_metric_oracles());
  report(6, "partial-label end-to-end quality", check_end_to_end());
  report(7, "aggregation quality ordering", check_aggregation_ordering());
  report(8, "zero-shot transfer of shared prompts", check_zero_shot());
  report(9, "bitwise reproducibility with frozen encoders",
         check_reproducibility());
  report(10, "format write-read-write byte identity", check_round_trips());
  return g_failures == 0 ? 0 : 1;
}
