#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "hbm/errors.hpp"
#include "hbm/loss_metrics.hpp"
#include "hbm/saliency.hpp"
#include "hbm/storage.hpp"
#include "hbm/study.hpp"
#include "hbm/trainer.hpp"
#include "json.hpp"

namespace hbm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ModelFlags {
  std::size_t m = 0;  // 0: longest document in the dataset
  std::size_t layers = 4;
  std::size_t heads = 1;
  std::size_t ffn_expansion = 4;
  double dropout = 0.01;
  std::size_t saliency_layer = 0;
  bool mask_padding = false;
};

struct TrainFlags {
  double lr = 2e-5;
  std::size_t epochs = 50;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  bool no_rollback = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--m", f.m, "Padded sentence count (default: longest document)");
  cmd->add_option("--layers", f.layers, "Encoder layers")->capture_default_str();
  cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
  cmd->add_option("--ffn-expansion", f.ffn_expansion, "FFN width multiplier")->capture_default_str();
  cmd->add_option("--dropout", f.dropout, "Dropout probability")->capture_default_str();
  cmd->add_option("--saliency-layer", f.saliency_layer, "Layer used for saliency")->capture_default_str();
  cmd->add_flag("--mask-padding", f.mask_padding, "Exclude padding rows from attention and pooling");
}

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str();
  cmd->add_flag("--no-rollback", f.no_rollback, "Keep the last epoch instead of the lowest-loss one");
}

ModelConfig resolve_config(const ModelFlags& f, const EmbeddedDataset& ds) {
  ModelConfig c;
  c.embed_dim = ds.embed_dim;
  std::size_t longest = 1;
  for (const auto& d : ds.documents) longest = std::max(longest, d.sentence_count());
  c.max_sentences = f.m == 0 ? longest : f.m;
  c.layers = f.layers;
  c.heads = f.heads;
  c.ffn_expansion = f.ffn_expansion;
  c.dropout = f.dropout;
  c.saliency_layer = f.saliency_layer;
  c.mask_padding = f.mask_padding;
  c.validate();
  ds.check_compatible(c);
  return c;
}

TrainConfig resolve_training(const TrainFlags& f) {
  TrainConfig t;
  t.adam.lr = f.lr;
  t.epochs = f.epochs;
  t.batch_size = f.batch;
  t.seed = f.seed;
  t.rollback = !f.no_rollback;
  t.validate();
  return t;
}

json training_json(const TrainConfig& t) {
  return {{"lr", t.adam.lr},     {"beta1", t.adam.beta1},     {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},   {"epochs", t.epochs},        {"batch_size", t.batch_size},
          {"seed", t.seed},      {"rollback", t.rollback},    {"shuffle", t.shuffle}};
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string digest(const fs::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : read_file(path)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Record of one invocation; replay re-runs `args` and compares digests.
struct Manifest {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  std::vector<std::uint64_t> seeds;
  json inputs = json::object();
  std::vector<fs::path> outputs;

  void write(const fs::path& path) const {
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back({{"path", p.string()}, {"fnv1a64", digest(p)}});
    write_json(path, {{"command", command},
                      {"args", args},
                      {"config", config},
                      {"seeds", seeds},
                      {"inputs", inputs},
                      {"outputs", outs},
                      {"version", HBM_VERSION}});
  }
};

std::size_t thread_budget(std::size_t requested) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* cap = std::getenv("HBM_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(cap, &end, 10);
    if (end != cap && *end == '\0' && v > 0) n = std::min<std::size_t>(n, v);
  }
  return n;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Context {
  const std::vector<std::string>& args;
  std::ostream& out;
  std::ostream& err;
};

// ---- train ----

struct TrainOptions {
  std::string data;
  std::string out;
  std::size_t n = 0;
  std::size_t pool = 200;
  ModelFlags model;
  TrainFlags train;
};

int cmd_train(const TrainOptions& o, Context& ctx) {
  const EmbeddedDataset ds = read_dataset(o.data);
  const ModelConfig config = resolve_config(o.model, ds);
  const TrainConfig tconf = resolve_training(o.train);

  std::vector<const Document*> docs;
  if (o.n == 0) {
    docs = all_documents(ds);
  } else {
    const Split split = subsample(ds.documents.size(), {o.pool, o.n, tconf.seed});
    docs = select(ds, split.train);
  }
  const TrainResult result = train(docs, config, tconf);

  const fs::path ckpt = o.out;
  save_checkpoint(ckpt, {config, result.params, {result.selected_epoch, result.selected_loss, tconf.seed}});

  json epochs = json::array();
  for (const auto& e : result.history)
    epochs.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"checkpoint", e.checkpoint}});
  json ids = json::array();
  for (const Document* d : docs) ids.push_back(d->id);
  const fs::path history = o.out + ".history.json";
  write_json(history, {{"selected_epoch", result.selected_epoch},
                       {"selected_loss", result.selected_loss},
                       {"epochs", epochs},
                       {"train_ids", ids}});

  Manifest m{"train", ctx.args};
  m.config = {{"model", config_to_json(config)}, {"training", training_json(tconf)},
              {"n", o.n}, {"pool", o.pool}};
  m.seeds = {tconf.seed};
  m.inputs = {{"data", o.data}};
  m.outputs = {ckpt, history};
  m.write(o.out + ".manifest.json");

  ctx.out << json{{"checkpoint", o.out},
                  {"documents", docs.size()},
                  {"selected_epoch", result.selected_epoch},
                  {"selected_loss", result.selected_loss}}
                 .dump()
          << "\n";
  return kOk;
}

// ---- eval ----

struct EvalOptions {
  std::string model;
  std::string data;
  std::string out = "eval.json";
  std::string subset = "all";
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t pool = 200;
};

int cmd_eval(const EvalOptions& o, Context& ctx) {
  const Checkpoint ck = load_checkpoint(o.model);
  const EmbeddedDataset ds = read_dataset(o.data);
  ds.check_compatible(ck.config);

  std::vector<const Document*> docs;
  if (o.subset == "all") {
    docs = all_documents(ds);
  } else {
    const std::size_t n = o.n == 0 ? o.pool : o.n;
    const Split split = subsample(ds.documents.size(), {o.pool, n, o.seed});
    docs = select(ds, o.subset == "train" ? split.train : split.test);
  }

  const auto scores = predict(ck.params, ck.config, docs);
  std::vector<int> labels;
  json rows = json::array();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    labels.push_back(docs[i]->label == 1 ? 1 : 0);
    rows.push_back({{"id", docs[i]->id}, {"label", docs[i]->label}, {"score", scores[i]}});
  }
  json auc_value = nullptr;
  try {
    auc_value = auc(scores, labels);
  } catch (const MetricError& e) {
    ctx.err << "warning: " << e.what() << "\n";
  }
  const json report = {{"auc", auc_value}, {"documents", docs.size()}, {"subset", o.subset},
                       {"scores_file", o.out}};
  write_json(o.out, {{"auc", auc_value}, {"documents", docs.size()}, {"subset", o.subset}, {"scores", rows}});

  Manifest m{"eval", ctx.args};
  m.config = {{"model", config_to_json(ck.config)}, {"subset", o.subset}, {"n", o.n}, {"pool", o.pool}};
  m.seeds = {o.seed};
  m.inputs = {{"model", o.model}, {"data", o.data}};
  m.outputs = {o.out};
  m.write(o.out + ".manifest.json");

  ctx.out << report.dump() << "\n";
  return kOk;
}

// ---- experiment ----

struct ExperimentOptions {
  std::string data;
  std::string out = "experiment";
  std::vector<std::size_t> sizes{50, 100, 150, 200};
  std::size_t seeds = 10;
  std::uint64_t first_seed = 0;
  std::size_t pool = 200;
  std::size_t threads = 0;
  ModelFlags model;
  TrainFlags train;
};

int cmd_experiment(const ExperimentOptions& o, Context& ctx) {
  const EmbeddedDataset ds = read_dataset(o.data);
  const ModelConfig config = resolve_config(o.model, ds);
  const TrainConfig tconf = resolve_training(o.train);
  if (o.seeds == 0) throw ConfigError("--seeds must be >= 1");

  ExperimentSpec spec;
  spec.sizes = o.sizes;
  spec.seeds.clear();
  for (std::size_t i = 0; i < o.seeds; ++i) spec.seeds.push_back(o.first_seed + i);
  spec.train_pool_size = o.pool;
  spec.threads = thread_budget(o.threads);
  const ExperimentResult result = run_experiment(ds, spec, config, tconf);

  const fs::path table = o.out + ".tsv";
  const fs::path results = o.out + ".json";
  write_file(table, result.table());
  json cells = json::array();
  for (const auto& c : result.cells) {
    cells.push_back({{"n", c.n}, {"mean", c.mean}, {"std", c.std_dev}, {"formatted", c.formatted()},
                     {"aucs", c.aucs}});
  }
  write_json(results, {{"pool", o.pool}, {"seeds", spec.seeds}, {"cells", cells}});

  Manifest m{"experiment", ctx.args};
  m.config = {{"model", config_to_json(config)}, {"training", training_json(tconf)},
              {"sizes", o.sizes}, {"pool", o.pool}};
  m.seeds = spec.seeds;
  m.inputs = {{"data", o.data}};
  m.outputs = {table, results};
  m.write(o.out + ".manifest.json");

  ctx.out << result.table();
  return kOk;
}

// ---- explain ----

struct ExplainOptions {
  std::string model;
  std::string data;
  std::string out = "explain";
  double ratio = kDefaultSalientRatio;
  std::string condition = "both";
  std::string ids;
  std::size_t limit = 10;
  std::string labels = "negative,positive";
  std::optional<std::size_t> layer;
};

int cmd_explain(const ExplainOptions& o, Context& ctx) {
  Checkpoint ck = load_checkpoint(o.model);
  const EmbeddedDataset ds = read_dataset(o.data);
  ds.check_compatible(ck.config);
  if (o.layer) {
    ck.config.saliency_layer = *o.layer;
    ck.config.validate();
  }
  if (!(o.ratio >= 0.0 && o.ratio < 1.0)) throw ConfigError("--ratio must lie in [0, 1)");
  if (!fs::exists(sidecar_path(o.data))) {
    ctx.err << "warning: no sentence sidecar at " << sidecar_path(o.data).string()
            << "; reports carry indices only\n";
  }

  std::vector<const Document*> docs;
  if (!o.ids.empty()) {
    for (const auto& id : split_list(o.ids)) docs.push_back(&ds.find(static_cast<std::uint32_t>(std::stoul(id))));
  } else {
    for (const auto& d : ds.documents) {
      if (o.limit != 0 && docs.size() == o.limit) break;
      docs.push_back(&d);
    }
  }

  std::vector<SaliencyReport> reports;
  json report_json = json::array();
  for (const Document* d : docs) {
    reports.push_back(explain(*d, ck.params, ck.config, o.ratio));
    report_json.push_back(report_to_json(reports.back()));
  }

  std::vector<Condition> conditions;
  if (o.condition == "both") {
    conditions = {Condition::highlight, Condition::plain};
  } else {
    conditions = {condition_from_string(o.condition)};
  }

  fs::create_directories(o.out);
  const fs::path dir = o.out;
  Manifest m{"explain", ctx.args};
  m.outputs.push_back(dir / "reports.json");
  write_json(m.outputs.back(), report_json);
  const auto label_options = split_list(o.labels);
  for (Condition c : conditions) {
    m.outputs.push_back(dir / ("bundle." + to_string(c) + ".json"));
    write_bundle(m.outputs.back(), export_bundle(reports, ds, c, label_options));
  }
  m.config = {{"model", config_to_json(ck.config)}, {"ratio", o.ratio}, {"condition", o.condition}};
  m.seeds = {ck.meta.seed};
  m.inputs = {{"model", o.model}, {"data", o.data}};
  m.write(dir / "manifest.json");

  json written = json::array();
  for (const auto& p : m.outputs) written.push_back(p.string());
  ctx.out << json{{"documents", reports.size()}, {"outputs", written}}.dump() << "\n";
  return kOk;
}

// ---- summarize ----

struct SummarizeOptions {
  std::string bundle;
  std::vector<std::string> sessions;
  std::string out = "summary.json";
};

int cmd_summarize(const SummarizeOptions& o, Context& ctx) {
  const auto truth = bundle_truth(read_bundle(o.bundle));
  std::vector<Session> sessions;
  json excluded = json::array();
  for (const auto& path : o.sessions) {
    sessions.push_back(read_session(path));
    if (auto why = exclusion_reason(sessions.back(), truth)) {
      excluded.push_back({{"session", path}, {"reason", *why}});
    }
  }
  json summary = summary_to_json(summarize(sessions, truth));
  summary["excluded_sessions"] = excluded;
  write_json(o.out, summary);

  Manifest m{"summarize", ctx.args};
  m.inputs = {{"bundle", o.bundle}, {"sessions", o.sessions}};
  m.outputs = {o.out};
  m.write(o.out + ".manifest.json");

  ctx.out << summary.dump() << "\n";
  return kOk;
}

// ---- replay ----

int cmd_replay(const std::string& path, bool verify, Context& ctx) {
  json manifest;
  try {
    manifest = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not JSON: ") + e.what());
  }
  const auto args = manifest.at("args").get<std::vector<std::string>>();
  if (args.empty() || args[0] == "replay") throw FormatError("manifest does not describe a replayable run");
  if (manifest.value("version", std::string()) != HBM_VERSION) {
    ctx.err << "warning: manifest was written by version " << manifest.value("version", std::string("?"))
            << ", this is " << HBM_VERSION << "\n";
  }
  const int code = run(args, ctx.out, ctx.err);
  if (code != kOk || !verify) return code;
  int status = kOk;
  for (const auto& o : manifest.at("outputs")) {
    const std::string p = o.at("path").get<std::string>();
    if (digest(p) != o.at("fnv1a64").get<std::string>()) {
      ctx.err << "replay mismatch: " << p << "\n";
      status = kReplayMismatch;
    }
  }
  if (status == kOk) ctx.err << "replay reproduced " << manifest.at("outputs").size() << " outputs\n";
  return status;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentence-level hierarchical encoder: training, evaluation and saliency", "hbm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HBM_VERSION);

  TrainOptions train_o;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", train_o.data, "HBE1 dataset")->required();
  train_cmd->add_option("--out", train_o.out, "Checkpoint path")->required();
  train_cmd->add_option("--seed", train_o.train.seed, "Seed for initialization, shuffling and subsampling")
      ->capture_default_str();
  train_cmd->add_option("--n", train_o.n, "Training size drawn from the pool (default: every document)");
  train_cmd->add_option("--pool", train_o.pool, "Pool size for subsampling")->capture_default_str();
  add_model_flags(train_cmd, train_o.model);
  add_train_flags(train_cmd, train_o.train);

  EvalOptions eval_o;
  auto* eval_cmd = app.add_subcommand("eval", "Score documents and report AUC");
  eval_cmd->add_option("--model", eval_o.model, "Checkpoint")->required();
  eval_cmd->add_option("--data", eval_o.data, "HBE1 dataset")->required();
  eval_cmd->add_option("--out", eval_o.out, "Per-document scores file")->capture_default_str();
  eval_cmd->add_option("--subset", eval_o.subset, "Documents to score")
      ->check(CLI::IsMember({"all", "train", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_o.seed, "Split seed for train/test subsets")->capture_default_str();
  eval_cmd->add_option("--n", eval_o.n, "Training size used for the train subset");
  eval_cmd->add_option("--pool", eval_o.pool, "Pool size for subsets")->capture_default_str();

  ExperimentOptions exp_o;
  auto* exp_cmd = app.add_subcommand("experiment", "Run the training-size by seed grid");
  exp_cmd->add_option("--data", exp_o.data, "HBE1 dataset")->required();
  exp_cmd->add_option("--out", exp_o.out, "Output prefix for .tsv and .json")->capture_default_str();
  exp_cmd->add_option("--sizes", exp_o.sizes, "Training sizes")->delimiter(',')->capture_default_str();
  exp_cmd->add_option("--seeds", exp_o.seeds, "Number of seeds")->capture_default_str();
  exp_cmd->add_option("--first-seed", exp_o.first_seed, "First seed")->capture_default_str();
  exp_cmd->add_option("--pool", exp_o.pool, "Pool size")->capture_default_str();
  exp_cmd->add_option("--threads", exp_o.threads, "Worker threads (0: all cores, capped by HBM_THREADS)")
      ->capture_default_str();
  add_model_flags(exp_cmd, exp_o.model);
  add_train_flags(exp_cmd, exp_o.train);

  ExplainOptions ex_o;
  auto* ex_cmd = app.add_subcommand("explain", "Write saliency reports and annotation bundles");
  ex_cmd->add_option("--model", ex_o.model, "Checkpoint")->required();
  ex_cmd->add_option("--data", ex_o.data, "HBE1 dataset")->required();
  ex_cmd->add_option("--out", ex_o.out, "Output directory")->capture_default_str();
  ex_cmd->add_option("--ratio", ex_o.ratio, "Salient ratio threshold")->capture_default_str();
  ex_cmd->add_option("--condition", ex_o.condition, "Bundles to write")
      ->check(CLI::IsMember({"highlight", "plain", "both"}))
      ->capture_default_str();
  ex_cmd->add_option("--ids", ex_o.ids, "Comma-separated document ids");
  ex_cmd->add_option("--limit", ex_o.limit, "Documents when --ids is absent (0: all)")->capture_default_str();
  ex_cmd->add_option("--labels", ex_o.labels, "Comma-separated label names")->capture_default_str();
  ex_cmd->add_option("--layer", ex_o.layer, "Attention layer (default: the checkpoint's)");

  SummarizeOptions sum_o;
  auto* sum_cmd = app.add_subcommand("summarize", "Clean study sessions and compare conditions");
  sum_cmd->add_option("--bundle", sum_o.bundle, "Annotation bundle carrying the ground truth")->required();
  sum_cmd->add_option("--sessions", sum_o.sessions, "Session files exported by the annotation UI")
      ->required()
      ->expected(1, -1);
  sum_cmd->add_option("--out", sum_o.out, "Summary file")->capture_default_str();

  std::string manifest_path;
  bool no_verify = false;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a manifest and compare outputs");
  replay_cmd->add_option("manifest", manifest_path, "Manifest written by a previous run")->required();
  replay_cmd->add_flag("--no-verify", no_verify, "Skip output digest comparison");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Context ctx{args, out, err};
  try {
    if (*train_cmd) return cmd_train(train_o, ctx);
    if (*eval_cmd) return cmd_eval(eval_o, ctx);
    if (*exp_cmd) return cmd_experiment(exp_o, ctx);
    if (*ex_cmd) return cmd_explain(ex_o, ctx);
    if (*sum_cmd) return cmd_summarize(sum_o, ctx);
    if (*replay_cmd) return cmd_replay(manifest_path, !no_verify, ctx);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DegenerateInputError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ExportError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << "\n";
    return kTrainingError;
  } catch (const NumericError& e) {
    err << "training error: " << e.what() << "\n";
    return kTrainingError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace hbm::cli
