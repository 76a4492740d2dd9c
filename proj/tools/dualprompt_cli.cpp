// Command-line surface for the dual-prompt pipeline: synthesize data, mask
// labels, split classes, train prompt contexts, evaluate, export attention
// maps and run sweeps. Exit codes: 0 success, 2 validation error, 3 runtime
// abort.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "dualprompt/data.hpp"
#include "dualprompt/encoders.hpp"
#include "dualprompt/io.hpp"
#include "dualprompt/metrics.hpp"
#include "dualprompt/prompts.hpp"
#include "dualprompt/scoring.hpp"
#include "dualprompt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dualprompt;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

fs::path default_out_dir() {
  if (const char* env = std::getenv("DUALPROMPT_OUT_DIR")) return env;
  return ".";
}

// ---- run configuration ----------------------------------------------------

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw std::invalid_argument("unknown config key \"" + key + "\" in " +
                                  where);
}

struct EncoderConfig {
  std::string mode = "aligned";
  std::uint64_t seed = 0;
  int d_emb = 0;  // 0: derive from data
  int d_t = 0;
};

struct RunConfig {
  TrainConfig train;
  EncoderConfig encoder;
};

RunConfig parse_run_config(const json& j) {
  reject_unknown_keys(j,
                      {"lr0", "epochs", "batch_size", "seed", "momentum",
                       "per_step_schedule", "loss", "classifier", "prompt",
                       "encoder"},
                      "run config");
  RunConfig cfg;
  auto& t = cfg.train;
  t.lr0 = j.value("lr0", t.lr0);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
  t.momentum = j.value("momentum", t.momentum);
  t.per_step_schedule = j.value("per_step_schedule", t.per_step_schedule);
  if (j.contains("loss")) {
    const json& l = j["loss"];
    reject_unknown_keys(l, {"gamma_pos", "gamma_neg", "margin", "reduction"},
                        "loss");
    t.loss.gamma_pos = l.value("gamma_pos", t.loss.gamma_pos);
    t.loss.gamma_neg = l.value("gamma_neg", t.loss.gamma_neg);
    t.loss.margin = l.value("margin", t.loss.margin);
    if (l.contains("reduction"))
      t.loss.reduction = reduction_from_string(l["reduction"]);
  }
  if (j.contains("classifier")) {
    const json& c = j["classifier"];
    reject_unknown_keys(c, {"tau", "aggregation", "spatial_temp"}, "classifier");
    t.classifier.tau = c.value("tau", t.classifier.tau);
    t.classifier.spatial_temp =
        c.value("spatial_temp", t.classifier.spatial_temp);
    if (c.contains("aggregation"))
      t.classifier.aggregation = aggregation_from_string(c["aggregation"]);
  }
  if (j.contains("prompt")) {
    const json& p = j["prompt"];
    reject_unknown_keys(p, {"n_ctx_pos", "n_ctx_neg", "dim", "mode",
                            "init_sigma"},
                        "prompt");
    t.prompt.n_ctx_pos = p.value("n_ctx_pos", t.prompt.n_ctx_pos);
    t.prompt.n_ctx_neg = p.value("n_ctx_neg", t.prompt.n_ctx_neg);
    t.prompt.dim = p.value("dim", t.prompt.dim);
    t.prompt.init_sigma = p.value("init_sigma", t.prompt.init_sigma);
    if (p.contains("mode"))
      t.prompt.mode = prompt_mode_from_string(p["mode"]);
  }
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    reject_unknown_keys(e, {"mode", "seed", "d_emb", "d_t"}, "encoder");
    cfg.encoder.mode = e.value("mode", cfg.encoder.mode);
    cfg.encoder.seed = e.value("seed", cfg.encoder.seed);
    cfg.encoder.d_emb = e.value("d_emb", cfg.encoder.d_emb);
    cfg.encoder.d_t = e.value("d_t", cfg.encoder.d_t);
    if (cfg.encoder.mode != "aligned" && cfg.encoder.mode != "random")
      throw std::invalid_argument("encoder.mode must be aligned or random");
  }
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  json j;
  j["lr0"] = t.lr0;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["seed"] = t.seed;
  j["momentum"] = t.momentum;
  j["per_step_schedule"] = t.per_step_schedule;
  j["loss"] = {{"gamma_pos", t.loss.gamma_pos},
               {"gamma_neg", t.loss.gamma_neg},
               {"margin", t.loss.margin},
               {"reduction", to_string(t.loss.reduction)}};
  j["classifier"] = {{"tau", t.classifier.tau},
                     {"aggregation", to_string(t.classifier.aggregation)},
                     {"spatial_temp", t.classifier.spatial_temp}};
  j["prompt"] = {{"n_ctx_pos", t.prompt.n_ctx_pos},
                 {"n_ctx_neg", t.prompt.n_ctx_neg},
                 {"dim", t.prompt.dim},
                 {"mode", to_string(t.prompt.mode)},
                 {"init_sigma", t.prompt.init_sigma}};
  j["encoder"] = {{"mode", cfg.encoder.mode},
                  {"seed", cfg.encoder.seed},
                  {"d_emb", cfg.encoder.d_emb},
                  {"d_t", cfg.encoder.d_t}};
  return j;
}

EncoderSet build_encoders(const EncoderConfig& ec, const Dataset& ds) {
  const int d = ds.catalog.dim();
  const int d_v = ds.images.empty() ? d : ds.images.front().feature_map.d;
  EncoderDims dims;
  dims.d_token = d;
  dims.d_v = d_v;
  if (ec.mode == "aligned") {
    dims.d_emb = d;
    dims.d_t = d;
    return make_encoders(EncoderMode::aligned, dims, ec.seed);
  }
  dims.d_emb = ec.d_emb > 0 ? ec.d_emb : d_v;
  dims.d_t = ec.d_t > 0 ? ec.d_t : d;
  return make_encoders(EncoderMode::random_frozen, dims, ec.seed);
}

std::set<int> parse_index_list(const std::string& csv) {
  std::set<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.insert(std::stoi(item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (double v : parse_double_list(csv)) out.push_back(int(v));
  return out;
}

// ---- subcommand payloads ---------------------------------------------------

struct SynthArgs {
  int classes = 20;
  int images = 2000;
  int dim = 64;
  std::string grid = "8x8";
  int labels_min = 1;
  int labels_max = 3;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  std::int64_t catalog_seed = -1;  // default: same as seed
  std::string out;
};

int run_synth(const SynthArgs& a) {
  SynthConfig sc;
  sc.n_images = a.images;
  const auto x = a.grid.find('x');
  if (x == std::string::npos)
    throw std::invalid_argument("--grid must look like HxW, e.g. 8x8");
  sc.grid_h = std::stoi(a.grid.substr(0, x));
  sc.grid_w = std::stoi(a.grid.substr(x + 1));
  sc.labels_min = a.labels_min;
  sc.labels_max = a.labels_max;
  sc.noise_sigma = a.sigma;
  sc.seed = a.seed;

  const std::uint64_t cat_seed =
      a.catalog_seed >= 0 ? std::uint64_t(a.catalog_seed) : a.seed;
  const ClassCatalog catalog = make_synthetic_catalog(a.classes, a.dim, cat_seed);
  const Dataset ds = synth_dataset(catalog, sc);
  const fs::path out =
      a.out.empty() ? default_out_dir() / "synth" : fs::path(a.out);
  save_dataset(ds, out);

  json cfg;
  cfg["classes"] = a.classes;
  cfg["images"] = a.images;
  cfg["dim"] = a.dim;
  cfg["grid"] = a.grid;
  cfg["labels_min"] = a.labels_min;
  cfg["labels_max"] = a.labels_max;
  cfg["sigma"] = a.sigma;
  cfg["seed"] = a.seed;
  cfg["catalog_seed"] = cat_seed;
  const std::string digest = io::sha256_hex(cfg.dump());
  // Re-open the manifest to stamp the generating config digest.
  json manifest = json::parse(io::read_text_file(out / "manifest.json"));
  manifest["config_digest"] = digest;
  io::write_text_file(out / "manifest.json", manifest.dump(2) + "\n");

  std::vector<std::string> ids;
  for (const auto& img : ds.images) ids.push_back(img.id);
  save_labels_csv(ds.labels, catalog.names, ids, out / "labels.csv");

  std::cout << "synth: wrote " << ds.images.size() << " images, "
            << catalog.num_classes() << " classes, grid " << a.grid << " to "
            << out.string() << " (digest " << digest.substr(0, 12) << ")\n";
  return 0;
}

int run_mask(const std::string& in, const std::string& out, double keep,
             std::uint64_t seed) {
  Dataset ds = load_dataset(in);
  ds.labels = mask_labels(ds.labels, keep, seed);
  save_dataset(ds, out);
  json manifest = json::parse(io::read_text_file(fs::path(out) / "manifest.json"));
  json cfg = {{"keep", keep}, {"seed", seed}, {"in", in}};
  manifest["config_digest"] = io::sha256_hex(cfg.dump());
  io::write_text_file(fs::path(out) / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "mask: kept " << ds.labels.count_nonzero() << " of "
            << ds.labels.values.size() << " cells\n";
  return 0;
}

int run_split(const std::string& in, const std::string& out,
              const std::string& unseen_csv) {
  const Dataset ds = load_dataset(in);
  const ZslSplit split = make_zsl_split(ds.catalog, parse_index_list(unseen_csv));
  save_split_json(split, out);
  std::cout << "split: " << split.seen.size() << " seen, "
            << split.unseen.size() << " unseen classes -> " << out << "\n";
  return 0;
}

std::string checkpoint_meta(const RunConfig& cfg, const std::string& data_path,
                            const EncoderSet& enc) {
  json meta;
  meta["config"] = run_config_to_json(cfg);
  meta["config_digest"] = io::sha256_hex(meta["config"].dump());
  meta["data"] = data_path;
  meta["encoder_digest"] = encoder_digest(enc);
  return meta.dump();
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& split_path, const std::string& out_ckpt,
              const std::string& history_path, double lr0_override,
              int epochs_override, std::int64_t seed_override) {
  RunConfig cfg;
  if (!config_path.empty())
    cfg = parse_run_config(json::parse(io::read_text_file(config_path)));
  if (lr0_override >= 0) cfg.train.lr0 = lr0_override;
  if (epochs_override > 0) cfg.train.epochs = epochs_override;
  if (seed_override >= 0) cfg.train.seed = std::uint64_t(seed_override);
  cfg.train.validate();

  const Dataset ds = load_dataset(data_path);
  if (cfg.train.prompt.dim != ds.catalog.dim())
    cfg.train.prompt.dim = ds.catalog.dim();  // prompt dim follows the data
  const EncoderSet enc = build_encoders(cfg.encoder, ds);

  std::optional<ZslSplit> split;
  if (!split_path.empty()) split = load_split_json(split_path);

  const std::string digest_before = encoder_digest(enc);
  TrainResult result;
  try {
    result = train(cfg.train, ds, split, enc);
  } catch (const TrainAbortError& e) {
    const fs::path diag = fs::path(out_ckpt).replace_extension(".abort.json");
    io::write_text_file(diag, e.diagnostic_json + "\n");
    std::cerr << "train aborted; diagnostic at " << diag << "\n";
    return kExitRuntime;
  }
  if (encoder_digest(enc) != digest_before) {
    std::cerr << "encoder parameters changed during training\n";
    return kExitRuntime;
  }

  save_checkpoint(result.bank, checkpoint_meta(cfg, data_path, enc), out_ckpt);
  if (!history_path.empty()) result.history.save_csv(history_path);
  std::cout << "train: " << cfg.train.epochs << " epochs, final mean loss "
            << result.history.mean_loss.back() << ", checkpoint " << out_ckpt
            << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& mode_str, const std::string& topk_csv,
             const std::string& split_path, const std::string& report_path,
             const std::string& csv_path, const std::string& csv_key,
             double tau, double spatial_temp, const std::string& agg) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_path);

  EvalMode mode;
  mode.kind = eval_kind_from_string(mode_str);
  mode.topk = parse_int_list(topk_csv);
  if (!split_path.empty()) mode.split = load_split_json(split_path);

  ClassifierConfig cls;
  cls.tau = tau;
  cls.spatial_temp = spatial_temp;
  cls.aggregation = aggregation_from_string(agg);

  // Encoders are rebuilt from the checkpoint's recorded config so that an
  // eval sees exactly the frozen stack the training run used.
  RunConfig rc;
  const json meta = json::parse(ck.meta_json);
  if (meta.contains("config")) rc = parse_run_config(meta["config"]);
  const EncoderSet enc = build_encoders(rc.encoder, ds);
  if (meta.contains("encoder_digest") &&
      meta["encoder_digest"].get<std::string>() != encoder_digest(enc))
    throw std::runtime_error(
        "encoder digest mismatch between checkpoint and rebuilt encoders");

  const MetricsReport report = evaluate(ck.bank, ds.catalog, enc, ds, mode, cls);

  json out = json::parse(report.to_json());
  json cfg = {{"checkpoint", ckpt_path}, {"data", data_path},
              {"mode", mode_str},        {"topk", topk_csv},
              {"tau", tau},              {"spatial_temp", spatial_temp},
              {"aggregation", agg}};
  out["config_digest"] = io::sha256_hex(cfg.dump());
  io::write_text_file(report_path, out.dump(2) + "\n");
  if (!csv_path.empty()) {
    std::ofstream os(csv_path, std::ios::app);
    if (fs::file_size(csv_path) == 0)
      os << MetricsReport::csv_header() << "\n";
    os << report.to_csv_row(csv_key.empty() ? ckpt_path : csv_key) << "\n";
  }
  std::cout << "eval: mAP " << report.map << " (" << mode_str << ") -> "
            << report_path << "\n";
  return 0;
}

int run_attmap(const std::string& ckpt_path, const std::string& data_path,
               const std::string& image_id, int class_index,
               const std::string& out_prefix, double spatial_temp, double tau) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_path);

  const ImageRecord* img = nullptr;
  for (const auto& rec : ds.images)
    if (rec.id == image_id) img = &rec;
  if (!img) throw std::invalid_argument("unknown image id: " + image_id);
  if (class_index < 0 || class_index >= ds.catalog.num_classes())
    throw std::invalid_argument("class index out of range");

  RunConfig rc;
  const json meta = json::parse(ck.meta_json);
  if (meta.contains("config")) rc = parse_run_config(meta["config"]);
  const EncoderSet enc = build_encoders(rc.encoder, ds);

  const TextFeatures tf = compute_text_features(ck.bank, ds.catalog, enc);
  const Eigen::MatrixXd g = encode_image_regions(img->feature_map, enc);
  RegionLogits rl;
  rl.pos = g * tf.f_pos.transpose();
  rl.neg = g * tf.f_neg.transpose();

  ClassifierConfig cls;
  cls.tau = tau;
  cls.spatial_temp = spatial_temp;
  const Eigen::MatrixXd grid = export_attention_map(
      rl, cls, class_index, img->feature_map.h, img->feature_map.w);
  save_attention_csv(grid, out_prefix + ".csv");
  save_attention_pgm(grid, out_prefix + ".pgm");
  std::cout << "attmap: wrote " << out_prefix << ".csv and .pgm (peak weight "
            << grid.maxCoeff() << ")\n";
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& train_data,
              const std::string& test_data, const std::string& keep_csv,
              const std::string& nctx_csv, const std::string& out_csv,
              std::uint64_t mask_seed) {
  if (keep_csv.empty() == nctx_csv.empty())
    throw std::invalid_argument(
        "sweep needs exactly one of --keep-list or --nctx-list");
  RunConfig base;
  if (!config_path.empty())
    base = parse_run_config(json::parse(io::read_text_file(config_path)));

  const Dataset train_ds = load_dataset(train_data);
  const Dataset test_ds = load_dataset(test_data);

  // Resumability: existing rows are keyed by the swept value and skipped.
  std::set<std::string> done;
  bool has_header = false;
  if (fs::exists(out_csv)) {
    std::ifstream is(out_csv);
    std::string line;
    while (std::getline(is, line)) {
      if (line.rfind("key,", 0) == 0) { has_header = true; continue; }
      const auto comma = line.find(',');
      if (comma != std::string::npos) done.insert(line.substr(0, comma));
    }
  }
  std::ofstream os(out_csv, std::ios::app);
  if (!has_header) os << MetricsReport::csv_header() << ",mAP_delta_vs_prev\n";

  struct Setting { std::string key; double keep; int nctx; };
  std::vector<Setting> settings;
  if (!keep_csv.empty())
    for (double k : parse_double_list(keep_csv))
      settings.push_back({"keep=" + std::to_string(k), k, 0});
  else
    for (int n : parse_int_list(nctx_csv))
      settings.push_back({"nctx=" + std::to_string(n), 1.0, n});

  double prev_map = std::nan("");
  for (const auto& s : settings) {
    if (done.count(s.key)) {
      std::cout << "sweep: skipping existing row " << s.key << "\n";
      continue;
    }
    RunConfig cfg = base;
    if (s.nctx > 0) {
      cfg.train.prompt.n_ctx_pos = s.nctx;
      cfg.train.prompt.n_ctx_neg = s.nctx;
    }
    Dataset masked = train_ds;
    if (s.keep < 1.0)
      masked.labels = mask_labels(train_ds.labels, s.keep, mask_seed);
    cfg.train.prompt.dim = masked.catalog.dim();
    const EncoderSet enc = build_encoders(cfg.encoder, masked);
    const TrainResult result = train(cfg.train, masked, std::nullopt, enc);

    EvalMode mode;
    mode.topk = {3};
    const MetricsReport report = evaluate(result.bank, test_ds.catalog, enc,
                                          test_ds, mode, cfg.train.classifier);
    const double delta = std::isnan(prev_map) ? 0.0 : report.map - prev_map;
    os << report.to_csv_row(s.key) << "," << delta << "\n";
    os.flush();
    prev_map = report.map;
    std::cout << "sweep: " << s.key << " mAP " << report.map << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-prompt multi-label recognition pipeline"};
  app.require_subcommand(1);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--classes", sy.classes);
  synth->add_option("--images", sy.images);
  synth->add_option("--dim", sy.dim);
  synth->add_option("--grid", sy.grid);
  synth->add_option("--labels-min", sy.labels_min);
  synth->add_option("--labels-max", sy.labels_max);
  synth->add_option("--sigma", sy.sigma);
  synth->add_option("--seed", sy.seed);
  synth->add_option("--catalog-seed", sy.catalog_seed);
  synth->add_option("--out", sy.out);

  std::string in, out, unseen;
  double keep = 1.0;
  std::uint64_t seed = 0;
  auto* mask = app.add_subcommand("mask", "mask labels down to a kept fraction");
  mask->add_option("--in", in)->required();
  mask->add_option("--out", out)->required();
  mask->add_option("--keep", keep)->required();
  mask->add_option("--seed", seed);

  auto* split = app.add_subcommand("split", "write a seen/unseen class split");
  split->add_option("--in", in)->required();
  split->add_option("--out", out)->required();
  split->add_option("--unseen", unseen)->required();

  std::string config_path, data_path, split_path, ckpt, history;
  double lr0_override = -1;
  int epochs_override = 0;
  std::int64_t seed_override = -1;
  auto* tr = app.add_subcommand("train", "train prompt contexts");
  tr->add_option("--config", config_path);
  tr->add_option("--data", data_path)->required();
  tr->add_option("--split", split_path);
  tr->add_option("--out-checkpoint", ckpt)->required();
  tr->add_option("--history", history);
  tr->add_option("--lr0", lr0_override);
  tr->add_option("--epochs", epochs_override);
  tr->add_option("--seed", seed_override);

  std::string mode_str = "partial", topk_csv = "3", report_path, csv_path,
              csv_key, agg = "softmax_weighted";
  double tau = 0.01, spatial_temp = 1.0;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--data", data_path)->required();
  ev->add_option("--mode", mode_str)
      ->check(CLI::IsMember({"partial", "partial_label", "zsl", "gzsl"}));
  ev->add_option("--topk", topk_csv);
  ev->add_option("--split", split_path);
  ev->add_option("--report", report_path)->required();
  ev->add_option("--csv", csv_path);
  ev->add_option("--key", csv_key);
  ev->add_option("--tau", tau);
  ev->add_option("--spatial-temp", spatial_temp);
  ev->add_option("--aggregation", agg);

  std::string image_id, out_prefix;
  int class_index = 0;
  auto* att = app.add_subcommand("attmap", "export a class attention map");
  att->add_option("--checkpoint", ckpt)->required();
  att->add_option("--data", data_path)->required();
  att->add_option("--image-id", image_id)->required();
  att->add_option("--class", class_index)->required();
  att->add_option("--out", out_prefix)->required();
  att->add_option("--spatial-temp", spatial_temp);
  att->add_option("--tau", tau);

  std::string test_data, keep_csv, nctx_csv;
  auto* sw = app.add_subcommand("sweep", "train+eval over a swept variable");
  sw->add_option("--config", config_path);
  sw->add_option("--data", data_path)->required();
  sw->add_option("--test-data", test_data)->required();
  sw->add_option("--keep-list", keep_csv);
  sw->add_option("--nctx-list", nctx_csv);
  sw->add_option("--out", out)->required();
  sw->add_option("--mask-seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*synth) return run_synth(sy);
    if (*mask) return run_mask(in, out, keep, seed);
    if (*split) return run_split(in, out, unseen);
    if (*tr)
      return run_train(config_path, data_path, split_path, ckpt, history,
                       lr0_override, epochs_override, seed_override);
    if (*ev)
      return run_eval(ckpt, data_path, mode_str, topk_csv, split_path,
                      report_path, csv_path, csv_key, tau, spatial_temp, agg);
    if (*att)
      return run_attmap(ckpt, data_path, image_id, class_index, out_prefix,
                        spatial_temp, tau);
    if (*sw)
      return run_sweep(config_path, data_path, test_data, keep_csv, nctx_csv,
                       out, seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
