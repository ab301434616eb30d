#include "gtp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gtp/checkpoint.hpp"
#include "gtp/dataset.hpp"
#include "gtp/ensemble.hpp"
#include "gtp/error.hpp"
#include "gtp/metrics.hpp"
#include "gtp/synthetic.hpp"
#include "gtp/trainer.hpp"

namespace gtp {

namespace fs = std::filesystem;

namespace {

struct GenDataArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string data;
  std::string loss = "balce";
  std::string gtp = "on";
  std::size_t epochs = 50;
  std::size_t batch = 32;
  std::size_t eval_batch = 32;
  std::uint64_t seed = 0;
  std::string out;
  std::string log;
  double lr = 1e-5;
  double flip = 0.5;
  double rotation = 15.0;
  std::size_t image_size = 32;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t feature_dim = 32;
  std::optional<std::size_t> model_dim, blocks, heads, edge_dim, max_batch;
  std::optional<std::string> edge_mode;
  bool full_dim_scaling = false;
  bool no_bn_recalibration = false;
};

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string preds;
  std::string report;
  std::size_t eval_batch = 32;
};

struct EnsembleArgs {
  std::vector<std::string> preds;
  std::string method;
  std::vector<double> weights;
  std::string report;
  std::string out_preds;
};

struct ReportArgs {
  std::vector<std::string> reports;
  std::string out;
};

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + " is not valid JSON: " + e.what());
  }
}

/// "<dir>/<stem><suffix>" next to `path`.
std::string sibling(const std::string& path, const std::string& suffix) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string best_checkpoint_path(const std::string& path) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + ".best" + p.extension().string())).string();
}

/// A directory with labels.csv, or its test/ subdirectory.
LabeledDataset load_split(const std::string& dir, const char* preferred) {
  const fs::path base(dir);
  for (const fs::path& candidate : {base / preferred, base}) {
    if (fs::exists(candidate / "labels.csv")) {
      return load_image_dataset(candidate.string(), (candidate / "labels.csv").string());
    }
  }
  throw IoError("no labels.csv in '" + dir + "' or '" + (base / preferred).string() + "'");
}

void print_config(std::ostream& out, const std::string& command, const nlohmann::json& config) {
  out << "resolved configuration (" << command << "):\n" << config.dump(2) << "\n";
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

void warn_undefined(const MetricsReport& report, std::ostream& err) {
  for (const auto& name : report.undefined_metrics()) {
    err << "warning: " << name << " is undefined for this evaluation set\n";
  }
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  SynthConfig config = SynthConfig::from_json(parse_json(read_text(a.config), "synthetic config"));
  if (a.seed) config.seed = *a.seed;
  print_config(out, "gen-data", {{"config", config.to_json()}, {"out", a.out}});

  const LabeledDataset data = generate_synthetic(config);
  for (std::size_t k = 0; k < 4; ++k) {
    if (data.counts().n[k] != config.counts[k]) throw Error("generator produced a count that differs from the config");
  }
  auto [train, test] = stratified_split(data, config.seed);
  save_image_dataset(train, (fs::path(a.out) / "train").string());
  save_image_dataset(test, (fs::path(a.out) / "test").string());
  const nlohmann::json manifest{{"config", config.to_json()},
                                {"seed", config.seed},
                                {"train_counts", train.counts().n},
                                {"test_counts", test.counts().n}};
  write_text((fs::path(a.out) / "manifest.json").string(), manifest.dump(2) + "\n");
  out << "wrote " << train.size() << " train and " << test.size() << " test images to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig c;
  c.loss = parse_loss_kind(a.loss);
  if (a.gtp != "on" && a.gtp != "off") throw UsageError("--gtp must be on or off");
  c.network.use_gtp = a.gtp == "on";
  if (!c.network.use_gtp && (a.model_dim || a.blocks || a.heads || a.edge_mode || a.edge_dim || a.max_batch ||
                             a.full_dim_scaling)) {
    throw UsageError("graph options (--model-dim, --blocks, --heads, --edge-*, --max-batch, --full-dim-scaling) "
                     "need --gtp on");
  }
  if (a.channels.size() != 3) throw UsageError("--encoder-channels takes exactly three values");
  c.network.image_size = a.image_size;
  std::copy(a.channels.begin(), a.channels.end(), c.network.encoder_channels.begin());
  c.network.feature_dim = a.feature_dim;
  if (a.model_dim) c.network.model_dim = *a.model_dim;
  if (a.blocks) c.network.blocks = *a.blocks;
  if (a.heads) c.network.heads = *a.heads;
  if (a.edge_mode) c.network.edge_mode = parse_edge_mode(*a.edge_mode);
  if (a.edge_dim) c.network.edge_dim = *a.edge_dim;
  if (a.max_batch) c.network.max_batch = *a.max_batch;
  c.network.full_dim_scaling = a.full_dim_scaling;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.eval_batch_size = a.eval_batch;
  c.optimizer.lr = a.lr;
  c.flip_probability = a.flip;
  c.rotation_degrees = a.rotation;
  c.seed = a.seed;
  c.bn_recalibration = !a.no_bn_recalibration;
  c.validate();

  const std::string log_path = a.log.empty() ? sibling(a.out, ".log.csv") : a.log;
  nlohmann::json resolved = c.to_json();
  resolved["data"] = a.data;
  resolved["out"] = a.out;
  resolved["best_out"] = best_checkpoint_path(a.out);
  resolved["log"] = log_path;
  print_config(out, "train", resolved);

  const LabeledDataset train_set = load_split(a.data, "train");
  const LabeledDataset test_set = load_split(a.data, "test");
  const TrainResult result = train(c, train_set, test_set, &out);

  save_checkpoint(result.final, a.out);
  save_checkpoint(result.best, best_checkpoint_path(a.out));
  write_text(log_path, format_epoch_log(result.log));
  out << "best test macro-F1 at epoch " << result.best_epoch << "; checkpoints " << a.out << ", "
      << best_checkpoint_path(a.out) << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  print_config(out, "eval",
               {{"ckpt", a.ckpt}, {"data", a.data}, {"preds", a.preds}, {"report", a.report},
                {"eval_batch_size", a.eval_batch}});
  if (!fs::exists(a.ckpt)) throw IoError("checkpoint '" + a.ckpt + "' does not exist");
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  if (ckpt.network.config().use_gtp && ckpt.network.config().edge_mode == EdgeMode::Positional &&
      a.eval_batch > ckpt.network.config().max_batch) {
    throw ConfigError("eval batch exceeds the positional edge table of the checkpoint");
  }
  const LabeledDataset data = load_split(a.data, "test");
  const std::string model_id = fs::path(a.ckpt).stem().string();
  const Evaluation ev = evaluate(ckpt.network, data, a.eval_batch, model_id);

  write_predictions(ev.predictions, a.preds);
  write_text(a.report, ev.report.to_json().dump(2) + "\n");
  write_text(sibling(a.report, ".confusion.csv"), confusion_to_csv(ev.report.confusion));
  const auto probs = ev.predictions.probabilities();
  const auto labels = ev.predictions.labels();
  for (std::size_t k = 0; k < 4; ++k) {
    if (!ev.report.auc[k]) continue;
    write_text(sibling(a.report, ".roc_" + class_name(k) + ".csv"), roc_to_csv(roc_curve(probs, labels, k)));
  }
  warn_undefined(ev.report, err);
  out << "macro-F1 " << ev.report.macro_f1 << " on " << data.size() << " samples\n";
  return kExitOk;
}

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out, std::ostream& err) {
  const EnsembleMethod method = parse_ensemble_method(a.method);
  if (method == EnsembleMethod::Weighted && a.weights.empty()) throw UsageError("--method weighted needs --weights");
  if (method != EnsembleMethod::Weighted && !a.weights.empty()) throw UsageError("--weights only applies to weighted");
  print_config(out, "ensemble",
               {{"preds", a.preds}, {"method", to_string(method)}, {"weights", a.weights}, {"report", a.report}});

  std::vector<PredictionSet> sets;
  for (const auto& p : a.preds) sets.push_back(read_predictions(p));
  check_aligned(sets);
  const std::vector<std::size_t> labels = sets.front().labels();
  for (const auto& s : sets) {
    if (s.labels() != labels) throw AlignmentError("prediction files disagree on labels ('" + s.model_id + "')");
  }

  PredictionSet combined;
  MetricsReport report;
  switch (method) {
    case EnsembleMethod::MaxVote: {
      combined = vote_fractions(sets);
      const auto decisions = max_vote(sets);
      report = compute_report(combined.probabilities(), decisions, labels);
      break;
    }
    case EnsembleMethod::Average:
      combined = average(sets);
      report = compute_report(combined.probabilities(), labels);
      break;
    case EnsembleMethod::Weighted: {
      bool renormalized = false;
      normalize_weights(a.weights, sets.size(), &renormalized);
      if (renormalized) err << "warning: ensemble weights do not sum to 1; normalizing\n";
      combined = weighted_average(sets, a.weights);
      report = compute_report(combined.probabilities(), labels);
      break;
    }
  }
  std::string members;
  for (const auto& s : sets) members += (members.empty() ? "" : "+") + s.model_id;
  report.model = to_string(method) + "(" + members + ")";
  write_text(a.report, report.to_json().dump(2) + "\n");
  if (!a.out_preds.empty()) write_predictions(combined, a.out_preds);
  warn_undefined(report, err);
  out << report.model << " macro-F1 " << report.macro_f1 << "\n";
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  print_config(out, "report", {{"reports", a.reports}, {"out", a.out}});
  std::string table = "model,macro_f1,auc_silicosis,auc_normal,auc_bacterial,auc_viral\n";
  for (const auto& path : a.reports) {
    MetricsReport r = MetricsReport::from_json(parse_json(read_text(path), "report '" + path + "'"));
    if (r.model.empty()) r.model = fs::path(path).stem().string();
    table += r.model + "," + format_metric(r.macro_f1);
    for (const auto& auc : r.auc) table += "," + format_metric(auc);
    table += "\n";
  }
  write_text(a.out, table);
  out << "wrote " << a.reports.size() << " rows to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph transformer post-hoc classifier: data generation, training, evaluation and ensembles", "gtp"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic imbalanced dataset (train/ and test/)");
  gen_cmd->add_option("--config", gen.config, "Synthetic config JSON")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the config seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on DIR/train, tracking macro-F1 on DIR/test");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--loss", tr.loss, "ce or balce")->check(CLI::IsMember({"ce", "balce"}));
  train_cmd->add_option("--gtp", tr.gtp, "on: graph blocks, off: plain encoder + classifier")
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--eval-batch", tr.eval_batch);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--out", tr.out, "Final checkpoint; the best one goes to <stem>.best<ext>")->required();
  train_cmd->add_option("--log", tr.log, "Epoch log CSV (default <stem>.log.csv)");
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--flip", tr.flip, "Horizontal flip probability");
  train_cmd->add_option("--rotation", tr.rotation, "Maximum rotation in degrees");
  train_cmd->add_option("--image-size", tr.image_size);
  train_cmd->add_option("--encoder-channels", tr.channels)->delimiter(',')->expected(3);
  train_cmd->add_option("--feature-dim", tr.feature_dim);
  train_cmd->add_option("--model-dim", tr.model_dim);
  train_cmd->add_option("--blocks", tr.blocks);
  train_cmd->add_option("--heads", tr.heads);
  train_cmd->add_option("--edge-mode", tr.edge_mode, "none, shared or positional");
  train_cmd->add_option("--edge-dim", tr.edge_dim);
  train_cmd->add_option("--max-batch", tr.max_batch, "Batch capacity of positional edges");
  train_cmd->add_flag("--no-bn-recalibration", tr.no_bn_recalibration,
                      "Keep the momentum running statistics instead of re-estimating them after each epoch");
  train_cmd->add_flag("--full-dim-scaling", tr.full_dim_scaling, "Scale attention by sqrt(d) instead of sqrt(d/heads)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--data", ev.data, "Directory with labels.csv (or DIR/test)")->required();
  eval_cmd->add_option("--preds", ev.preds, "Prediction CSV output")->required();
  eval_cmd->add_option("--report", ev.report, "Metrics JSON output")->required();
  eval_cmd->add_option("--eval-batch", ev.eval_batch);

  EnsembleArgs en;
  auto* ens_cmd = app.add_subcommand("ensemble", "Combine prediction files");
  ens_cmd->add_option("--preds", en.preds)->required()->expected(1, -1);
  ens_cmd->add_option("--method", en.method)->required()->check(CLI::IsMember({"maxvote", "average", "weighted"}));
  ens_cmd->add_option("--weights", en.weights)->delimiter(',');
  ens_cmd->add_option("--report", en.report)->required();
  ens_cmd->add_option("--out-preds", en.out_preds, "Also write the combined prediction CSV");

  ReportArgs rp;
  auto* rep_cmd = app.add_subcommand("report", "Tabulate metrics reports");
  rep_cmd->add_option("--reports", rp.reports)->required()->expected(1, -1);
  rep_cmd->add_option("--out", rp.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (ens_cmd->parsed()) return cmd_ensemble(en, out, err);
    if (rep_cmd->parsed()) return cmd_report(rp, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"gtp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace gtp
