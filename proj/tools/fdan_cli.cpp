// fdan: synthesize feature files, train, evaluate, and export projections.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fdan/fdan.hpp"
#include "json.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fdan::Modality parse_modality(const std::string& s) {
  if (s == "v" || s == "visual") return fdan::Modality::kVisual;
  if (s == "a" || s == "acoustic") return fdan::Modality::kAcoustic;
  throw UsageError("modality must be v or a, got '" + s + "'");
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out_visual;
  std::string out_acoustic;
};

void run_synth(const SynthArgs& a) {
  fdan::SynthSpec spec;
  try {
    nlohmann::json::parse(fdan::read_file(a.spec)).get_to(spec);
  } catch (const nlohmann::json::exception& e) {
    throw fdan::FormatError(a.spec + ": " + e.what());
  }
  try {
    spec.validate();
  } catch (const fdan::ConfigError& e) {
    throw fdan::FormatError(a.spec + ": " + e.what());
  }
  const auto [visual, acoustic] = fdan::synth_domains(spec);
  fdan::save_feature_file(a.out_visual, visual);
  fdan::save_feature_file(a.out_acoustic, acoustic);
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> visual;
  std::string acoustic;
  double alpha = 1e-3;
  double lr = 1e-2;
  double momentum = 0.99;
  double decay = 1e-4;
  std::size_t batch = 32;
  std::size_t epochs = 300;
  std::uint64_t seed = 1;
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t hidden = 0;
  std::string ablation = "full";
  double split = 0.8;
  std::optional<std::size_t> classes;
  std::string out_model;
  std::string history;
  std::string report;
};

void run_train(const TrainArgs& a) {
  fdan::TrainConfig config;
  config.alpha = a.alpha;
  config.learning_rate = a.lr;
  config.momentum = a.momentum;
  config.weight_decay = a.decay;
  config.batch_size = a.batch;
  config.epochs = a.epochs;
  config.seed = a.seed;
  fdan::Architecture arch;
  arch.width = a.dim;
  arch.hidden = a.hidden == 0 ? 2 * a.dim : a.hidden;
  arch.layers = a.layers;
  try {
    config.ablation = fdan::parse_ablation(a.ablation);
    config.validate();
    if (arch.width < 2 || arch.layers == 0) throw fdan::ConfigError("need --dim >= 2 and --layers >= 1");
    if (!(a.split > 0.0 && a.split < 1.0)) throw fdan::ConfigError("--split must lie in (0, 1)");
  } catch (const fdan::ConfigError& e) {
    throw UsageError(e.what());
  }

  std::vector<fdan::FeatureDomain> sources;
  for (const auto& path : a.visual)
    sources.push_back(fdan::load_feature_file(path, fdan::Modality::kVisual, a.classes));
  fdan::FeatureDomain source = fdan::concatenate(sources);
  source.modality = fdan::Modality::kVisual;
  fdan::FeatureDomain target =
      fdan::load_feature_file(a.acoustic, fdan::Modality::kAcoustic, a.classes);
  target.modality = fdan::Modality::kAcoustic;
  const auto [target_train, target_test] = fdan::stratified_split(target, a.split, a.seed);

  const fdan::TrainResult result = fdan::train(config, source, target_train, target_test, arch);
  fdan::save_model(a.out_model, result.model);
  if (!a.history.empty()) {
    fdan::write_file_atomic(a.history, fdan::format_history(result.history));
  }
  const fdan::MetricsReport final_report =
      fdan::evaluate(result.model, target_test, fdan::Modality::kAcoustic);
  if (!a.report.empty()) fdan::write_file_atomic(a.report, dump_json(fdan::to_json(final_report)));
  std::printf("target-test war=%.4f uar=%.4f w_f1=%.4f\n", final_report.war, final_report.uar,
              final_report.w_f1);
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
  std::string modality;
  std::string report;
  std::optional<std::size_t> classes;
};

void run_eval(const EvalArgs& a) {
  const fdan::Modality modality = parse_modality(a.modality);
  const fdan::ModelParams model = fdan::load_model(a.model);
  const fdan::FeatureDomain data = fdan::load_feature_file(a.data, modality, a.classes);
  const fdan::MetricsReport r = fdan::evaluate(model, data, modality);
  nlohmann::json j = fdan::to_json(r);
  j["modality"] = fdan::modality_name(modality);
  j["class_names"] = data.class_names;
  if (!a.report.empty()) fdan::write_file_atomic(a.report, dump_json(j));
  std::printf("war=%.4f uar=%.4f w_f1=%.4f\n", r.war, r.uar, r.w_f1);
}

// --- project ---------------------------------------------------------------

struct ProjectArgs {
  std::string model;
  std::vector<std::string> data;
  std::string out;
  std::string csv_modality = "a";
  std::optional<std::size_t> classes;
};

void run_project(const ProjectArgs& a) {
  const fdan::Modality csv_modality = parse_modality(a.csv_modality);
  const fdan::ModelParams model = fdan::load_model(a.model);
  fdan::Matrix pooled;
  std::vector<std::string> modality_col;
  std::vector<std::string> class_col;
  for (const auto& path : a.data) {
    const fdan::FeatureDomain d = fdan::load_feature_file(path, csv_modality, a.classes);
    const fdan::Matrix z = fdan::infer(model, d.features, d.modality).activations;
    pooled = fdan::vstack(pooled, z);
    const auto labels = d.label_indices();
    for (std::size_t r = 0; r < d.size(); ++r) {
      modality_col.emplace_back(fdan::modality_name(d.modality));
      class_col.push_back(d.class_names[labels[r]]);
    }
  }
  const fdan::Matrix xy = fdan::pca_project(pooled, 2);
  std::ostringstream out;
  out.precision(10);
  out << "modality,class,x,y\n";
  for (std::size_t r = 0; r < xy.rows(); ++r)
    out << modality_col[r] << ',' << class_col[r] << ',' << xy(r, 0) << ',' << xy(r, 1) << '\n';
  fdan::write_file_atomic(a.out, out.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal feature distribution adaptation"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads for large matrix products")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic visual/acoustic pair");
  synth_cmd->add_option("--spec", synth.spec, "JSON synthetic spec")->required();
  synth_cmd->add_option("--out-visual", synth.out_visual)->required();
  synth_cmd->add_option("--out-acoustic", synth.out_acoustic)->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on visual source + acoustic target");
  train_cmd->add_option("--visual", tr.visual, "Source feature file(s), concatenated")
      ->required()
      ->expected(1, -1);
  train_cmd->add_option("--acoustic", tr.acoustic, "Target feature file")->required();
  train_cmd->add_option("--alpha", tr.alpha);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--momentum", tr.momentum);
  train_cmd->add_option("--decay", tr.decay);
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--layers", tr.layers);
  train_cmd->add_option("--dim", tr.dim);
  train_cmd->add_option("--hidden", tr.hidden, "FFN width (default 2*dim)");
  train_cmd->add_option("--ablation", tr.ablation)
      ->check(CLI::IsMember({"full", "no-attention", "no-lmmd"}));
  train_cmd->add_option("--split", tr.split, "Target-train fraction per class");
  train_cmd->add_option("--classes", tr.classes, "Class count for CSV input");
  train_cmd->add_option("--out-model", tr.out_model)->required();
  train_cmd->add_option("--history", tr.history, "Per-epoch JSON lines");
  train_cmd->add_option("--report", tr.report, "Final target-test metrics JSON");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on one modality");
  eval_cmd->add_option("--model", ev.model)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--modality", ev.modality)->required();
  eval_cmd->add_option("--report", ev.report);
  eval_cmd->add_option("--classes", ev.classes, "Class count for CSV input");

  ProjectArgs pr;
  auto* project_cmd = app.add_subcommand("project", "Export 2-D PCA of final activations");
  project_cmd->add_option("--model", pr.model)->required();
  project_cmd->add_option("--data", pr.data)->required()->expected(1, -1);
  project_cmd->add_option("--out", pr.out)->required();
  project_cmd->add_option("--csv-modality", pr.csv_modality, "Modality of CSV inputs (v|a)");
  project_cmd->add_option("--classes", pr.classes, "Class count for CSV input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "fdan: error: " << e.what() << "\n";
    return kExitUsage;
  }

  fdan::set_num_threads(threads);
  try {
    if (*synth_cmd) run_synth(synth);
    if (*train_cmd) run_train(tr);
    if (*eval_cmd) run_eval(ev);
    if (*project_cmd) run_project(pr);
  } catch (const UsageError& e) {
    std::cerr << "fdan: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fdan::DivergenceError& e) {
    std::cerr << "fdan: error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "fdan: error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
