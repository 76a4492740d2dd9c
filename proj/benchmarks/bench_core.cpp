#include <benchmark/benchmark.h>

#include "dualprompt/metrics.hpp"
#include "dualprompt/trainer.hpp"

using namespace dualprompt;

namespace {

struct Setup {
  ClassCatalog catalog;
  Dataset ds;
  EncoderSet enc;
  PromptBank bank;
  std::vector<const ImageRecord*> batch;
  std::vector<int> rows;

  Setup() {
    const int d = 64, m = 20;
    catalog = make_synthetic_catalog(m, d, 1);
    SynthConfig sc;
    sc.n_images = 32;
    sc.grid_h = sc.grid_w = 8;
    sc.noise_sigma = 0.1;
    sc.seed = 2;
    ds = synth_dataset(catalog, sc);
    enc = make_encoders(EncoderMode::random_frozen, EncoderDims{d, d, d, d}, 3);
    PromptConfig pc;
    pc.dim = d;
    bank = init_prompts(pc, m, 4);
    for (int i = 0; i < int(ds.images.size()); ++i) {
      batch.push_back(&ds.images[i]);
      rows.push_back(i);
    }
  }
};

Setup& setup() {
  static Setup s;
  return s;
}

void bm_region_logits(benchmark::State& state) {
  Setup& s = setup();
  const TextFeatures tf = compute_text_features(s.bank, s.catalog, s.enc);
  const Eigen::MatrixXd g = encode_image_regions(s.ds.images[0].feature_map,
                                                 s.enc);
  for (auto _ : state)
    benchmark::DoNotOptimize(region_logits(g, tf.f_pos, tf.f_neg));
}
BENCHMARK(bm_region_logits);

void bm_aggregate_softmax(benchmark::State& state) {
  Setup& s = setup();
  const TextFeatures tf = compute_text_features(s.bank, s.catalog, s.enc);
  const Eigen::MatrixXd g = encode_image_regions(s.ds.images[0].feature_map,
                                                 s.enc);
  const RegionLogits rl = region_logits(g, tf.f_pos, tf.f_neg);
  ClassifierConfig cfg;
  Eigen::VectorXd sp, sn;
  for (auto _ : state) {
    aggregate(rl, cfg, sp, sn);
    benchmark::DoNotOptimize(sp);
  }
}
BENCHMARK(bm_aggregate_softmax);

void bm_batch_loss(benchmark::State& state) {
  Setup& s = setup();
  LossConfig loss;
  ClassifierConfig cls;
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_loss(s.bank, s.catalog, s.enc, s.batch,
                                        s.ds.labels, s.rows, loss, cls));
}
BENCHMARK(bm_batch_loss);

void bm_loss_gradients(benchmark::State& state) {
  Setup& s = setup();
  LossConfig loss;
  ClassifierConfig cls;
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_gradients(s.bank, s.catalog, s.enc, s.batch,
                                            s.ds.labels, s.rows, loss, cls));
}
BENCHMARK(bm_loss_gradients);

void bm_evaluate(benchmark::State& state) {
  Setup& s = setup();
  EvalMode mode;
  ClassifierConfig cls;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        evaluate(s.bank, s.catalog, s.enc, s.ds, mode, cls));
}
BENCHMARK(bm_evaluate);

}  // namespace

BENCHMARK_MAIN();
