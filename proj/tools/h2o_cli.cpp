#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "h2o/checkpoint.hpp"
#include "h2o/config.hpp"
#include "h2o/data.hpp"
#include "h2o/gradcheck.hpp"
#include "h2o/inspect.hpp"
#include "h2o/metrics.hpp"
#include "h2o/model.hpp"
#include "h2o/topology.hpp"
#include "h2o/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string dtype;
  std::string variant;
  std::int64_t seed = -1;  // -1: keep config value
};

std::string default_out_dir(const std::string& subcommand) {
  const char* root = std::getenv("H2O_OUT_ROOT");
  return (fs::path(root ? root : "out") / subcommand).string();
}

std::string ensure_out_dir(const CommonArgs& args, const std::string& subcommand) {
  const std::string dir = args.out_dir.empty() ? default_out_dir(subcommand) : args.out_dir;
  fs::create_directories(dir);
  return dir;
}

h2o::RunConfig load_config(CommonArgs& args) {
  h2o::RunConfig cfg = h2o::load_run_config(args.config_path, args.overrides);
  if (args.seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    cfg.raw["train"]["seed"] = cfg.train.seed;
  }
  if (!args.dtype.empty()) {
    cfg.model.dtype = h2o::dtype_from_name(args.dtype);
    cfg.raw["model"]["dtype"] = args.dtype;
  }
  if (!args.variant.empty()) {
    const h2o::VariantSpec& v = h2o::variant_by_id(args.variant);
    cfg.model = h2o::apply_variant(cfg.model, v);
    cfg.train = h2o::apply_variant(cfg.train, v);
  }
  return cfg;
}

void write_snapshot(const std::string& out_dir, const h2o::RunConfig& cfg,
                    const CommonArgs& args) {
  nlohmann::json snap;
  snap["config"] = cfg.raw;
  snap["data"] = args.data_path;
  snap["variant"] = args.variant.empty() ? "Full" : args.variant;
  snap["seed"] = cfg.train.seed;
  snap["dtype"] = h2o::dtype_name(cfg.model.dtype);
  std::ofstream out(fs::path(out_dir) / "config_snapshot.json");
  out << snap.dump(2);
}

h2o::DatasetManifest load_data(const std::string& path,
                               std::shared_ptr<const h2o::Topology> topo, double train_fraction,
                               std::uint64_t seed) {
  h2o::DatasetManifest manifest = h2o::load_jsonl(path, topo);
  if (manifest.sequences.empty()) {
    std::cerr << "warning: dataset '" << path << "' is empty\n";
    return manifest;
  }
  h2o::split_by_subject(manifest, train_fraction, seed);
  return manifest;
}

int run_gen_data(CommonArgs& args) {
  h2o::SynthFile synth = h2o::load_synth_spec(args.config_path, args.overrides);
  if (args.seed >= 0) synth.spec.seed = static_cast<std::uint64_t>(args.seed);
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(synth.topology_path));
  h2o::DatasetManifest manifest = h2o::generate_synthetic(synth.spec, topo);

  const std::string out_dir = ensure_out_dir(args, "gen-data");
  const std::string data_path =
      args.data_path.empty() ? (fs::path(out_dir) / "synthetic.jsonl").string() : args.data_path;
  h2o::save_jsonl(data_path, manifest);

  std::size_t pos = 0, oracle_hits = 0;
  for (const auto& seq : manifest.sequences) {
    pos += static_cast<std::size_t>(seq.label == 1);
    if (h2o::energy_oracle_label(seq.frames, *topo, synth.spec.positive_group,
                                 synth.spec.negative_group) == seq.label)
      ++oracle_hits;
  }
  const std::size_t total = manifest.sequences.size();
  std::cout << "wrote " << data_path << ": " << total << " sequences, " << pos << "/"
            << (total - pos) << ", oracle "
            << (100.0 * static_cast<double>(oracle_hits) / static_cast<double>(total)) << "%\n";
  return 0;
}

int run_train(CommonArgs& args) {
  h2o::RunConfig cfg = load_config(args);
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(cfg.topology_path));
  h2o::DatasetManifest manifest =
      load_data(args.data_path, topo, cfg.train_fraction, cfg.train.seed);
  if (manifest.sequences.empty()) throw h2o::ValidationError("train: dataset is empty");

  const std::string out_dir = ensure_out_dir(args, "train");
  write_snapshot(out_dir, cfg, args);

  h2o::Model model(cfg.model, topo, cfg.train.seed);
  h2o::TrainHooks hooks;
  hooks.log = [](const std::string& msg) { std::cout << msg << "\n"; };
  h2o::TrainResult result =
      cfg.train.stage_mode == h2o::StageMode::two_stage
          ? h2o::train_two_stage(model, manifest, cfg.train, out_dir, hooks)
          : h2o::train_one_stage(model, manifest, cfg.train, out_dir, hooks);

  std::cout << "run dir: " << out_dir << "\n"
            << "final train acc " << result.final_train_acc << ", val acc "
            << result.report.accuracy << ", f1(micro/pos/macro) " << result.report.f1_micro << "/"
            << result.report.f1_positive << "/" << result.report.f1_macro << "\n";
  return 0;
}

int run_eval(CommonArgs& args, const std::string& checkpoint_path) {
  h2o::RunConfig cfg = load_config(args);
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(cfg.topology_path));
  h2o::DatasetManifest manifest =
      load_data(args.data_path, topo, cfg.train_fraction, cfg.train.seed);
  h2o::Model model(cfg.model, topo, cfg.train.seed);
  if (!checkpoint_path.empty()) h2o::load_checkpoint(checkpoint_path, model.parameters());
  h2o::MetricsReport report = h2o::evaluate(model, manifest, h2o::Split::test);
  std::cout << report.to_json() << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream out(fs::path(args.out_dir) / "report.json");
    out << report.to_json();
  }
  return 0;
}

int run_gradcheck(CommonArgs& args, double tolerance, std::size_t samples) {
  h2o::RunConfig cfg = load_config(args);
  cfg.model.dtype = h2o::Dtype::f64;  // verification always runs in double
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(cfg.topology_path));
  h2o::Model model(cfg.model, topo, cfg.train.seed);

  h2o::Rng rng(h2o::Rng::derive(cfg.train.seed, "gradcheck.data"));
  std::vector<h2o::NdArray> inputs;
  const std::vector<int> labels = {1, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    h2o::NdArray x({cfg.model.temporal_len, cfg.model.num_joints, cfg.model.in_channels});
    for (std::size_t k = 0; k < x.numel(); ++k) x[k] = rng.normal(0.0, 0.5);
    inputs.push_back(std::move(x));
  }
  const bool with_rec = cfg.model.decoder_enabled() && cfg.train.lambda1 > 0.0;
  auto loss_fn = [&]() {
    std::vector<h2o::Tensor> probs, xhats;
    std::vector<h2o::NdArray> targets;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      h2o::ForwardOutput out = model.forward(inputs[i], h2o::Mode::train, nullptr, with_rec);
      probs.push_back(out.probability);
      if (with_rec) {
        xhats.push_back(out.reconstruction);
        targets.push_back(inputs[i]);
      }
    }
    h2o::Tensor l_cls = h2o::loss_cls(probs, labels);
    if (!with_rec) return h2o::scale(l_cls, cfg.train.lambda2);
    return h2o::combined_loss(h2o::loss_rec(xhats, targets), l_cls, cfg.train.lambda1,
                              cfg.train.lambda2);
  };

  h2o::FiniteDiffReport report = h2o::finite_diff_check(loss_fn, model.parameters(), 1e-5,
                                                        tolerance, samples, cfg.train.seed);
  std::cout << report.to_table();
  return report.pass ? 0 : 2;
}

int run_ablate(CommonArgs& args) {
  h2o::RunConfig cfg = load_config(args);
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(cfg.topology_path));
  h2o::DatasetManifest manifest =
      load_data(args.data_path, topo, cfg.train_fraction, cfg.train.seed);
  const std::string out_dir = ensure_out_dir(args, "ablate");
  write_snapshot(out_dir, cfg, args);

  h2o::TrainHooks hooks;
  hooks.log = [](const std::string& msg) { std::cout << msg << "\n"; };
  std::vector<h2o::AblationRow> rows =
      h2o::run_ablation_matrix(manifest, cfg.model, cfg.train, hooks);

  auto flag = [](bool b) { return b ? "yes" : "no"; };
  std::ofstream md(fs::path(out_dir) / "ablation.md");
  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  md << "| Variant | Hypergraph | Enhanced Hyperedge | Decoder Branch | One-stage Learning | "
        "Accuracy | F1 (micro) | F1 (positive) |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  csv << "variant,hypergraph,enhanced_hyperedge,decoder_branch,one_stage_learning,accuracy,"
         "f1_micro,f1_positive,f1_macro\n";
  for (const auto& row : rows) {
    md << "| " << row.spec.id << " | " << flag(row.spec.hypergraph) << " | "
       << flag(row.spec.enhanced_hyperedge) << " | " << flag(row.spec.decoder_branch) << " | "
       << flag(row.spec.one_stage_learning) << " | " << row.metrics.accuracy << " | "
       << row.metrics.f1_micro << " | " << row.metrics.f1_positive << " |\n";
    csv << row.spec.id << "," << row.spec.hypergraph << "," << row.spec.enhanced_hyperedge << ","
        << row.spec.decoder_branch << "," << row.spec.one_stage_learning << ","
        << row.metrics.accuracy << "," << row.metrics.f1_micro << "," << row.metrics.f1_positive
        << "," << row.metrics.f1_macro << "\n";
  }
  md << "\nAll rows share seed " << cfg.train.seed << " and the same dataset.\n";
  std::cout << "ablation table written to " << out_dir << " (" << rows.size() << " variants)\n";
  return 0;
}

int run_inspect(CommonArgs& args, const std::string& checkpoint_path, std::size_t sample) {
  h2o::RunConfig cfg = load_config(args);
  auto topo = std::make_shared<h2o::Topology>(h2o::Topology::from_json_file(cfg.topology_path));
  h2o::DatasetManifest manifest = h2o::load_jsonl(args.data_path, topo);
  if (sample >= manifest.sequences.size())
    throw h2o::ValidationError("inspect: sample " + std::to_string(sample) +
                               " out of range for " + std::to_string(manifest.sequences.size()) +
                               " sequences");
  h2o::Model model(cfg.model, topo, cfg.train.seed);
  if (!checkpoint_path.empty()) h2o::load_checkpoint(checkpoint_path, model.parameters());

  const h2o::NdArray input =
      h2o::prepare_input(manifest.sequences[sample], *topo, cfg.model.temporal_len);
  h2o::NoGradGuard guard;
  h2o::ForwardOutput out =
      model.forward(input, h2o::Mode::eval, nullptr, cfg.model.decoder_enabled(), true);

  const std::string out_dir = ensure_out_dir(args, "inspect");
  h2o::dump_diagnostics(out_dir, out.encoder_diags,
                        h2o::inspect_block_picks(out.encoder_diags.size()), "encoder");
  if (!out.decoder_diags.empty())
    h2o::dump_diagnostics(out_dir, out.decoder_diags,
                          h2o::inspect_block_picks(out.decoder_diags.size()), "decoder");
  std::cout << "diagnostics for sample " << sample << " written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypergraph-enhanced transformer for skeleton-based emotion recognition"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint_path;
  std::size_t sample = 0;
  double tolerance = 1e-4;
  std::size_t samples_per_tensor = 32;

  auto add_common = [&](CLI::App* cmd, bool needs_data) {
    cmd->add_option("--config", args.config_path, "config JSON path")->required();
    if (needs_data) cmd->add_option("--data", args.data_path, "dataset JSONL path");
    cmd->add_option("--out", args.out_dir, "output directory (default $H2O_OUT_ROOT/<cmd>)");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--override", args.overrides, "dotted-key config override, repeatable");
    cmd->add_option("--dtype", args.dtype, "f32 or f64");
    cmd->add_option("--variant", args.variant, "ablation variant id (e.g. BL, Full)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
  add_common(gen, true);
  CLI::App* train = app.add_subcommand("train", "train a model on a JSONL dataset");
  add_common(train, true);
  train->get_option("--data")->required();
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, true);
  eval_cmd->get_option("--data")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint JSON path");
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(grad, false);
  grad->add_option("--tolerance", tolerance, "max relative error");
  grad->add_option("--samples", samples_per_tensor, "entries sampled per tensor");
  CLI::App* ablate = app.add_subcommand("ablate", "run the 7-variant component sweep");
  add_common(ablate, true);
  ablate->get_option("--data")->required();
  CLI::App* inspect = app.add_subcommand("inspect", "dump attention/hyperedge CSV snapshots");
  add_common(inspect, true);
  inspect->get_option("--data")->required();
  inspect->add_option("--checkpoint", checkpoint_path, "checkpoint JSON path");
  inspect->add_option("--sample", sample, "sequence index to inspect");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(args);
    if (train->parsed()) return run_train(args);
    if (eval_cmd->parsed()) return run_eval(args, checkpoint_path);
    if (grad->parsed()) return run_gradcheck(args, tolerance, samples_per_tensor);
    if (ablate->parsed()) return run_ablate(args);
    if (inspect->parsed()) return run_inspect(args, checkpoint_path, sample);
  } catch (const h2o::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const h2o::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
