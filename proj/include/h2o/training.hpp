#pragma once

#include <functional>
#include <string>
#include <vector>

#include "h2o/data.hpp"
#include "h2o/losses.hpp"
#include "h2o/metrics.hpp"
#include "h2o/model.hpp"
#include "h2o/optim.hpp"

namespace h2o {

enum class StageMode { one_stage, two_stage };

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 0.0005;
  double lr_decay = 0.1;
  std::vector<std::size_t> lr_milestones = {60};
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  std::uint64_t seed = 0;
  StageMode stage_mode = StageMode::one_stage;
  std::size_t stage1_epochs = 0;  // two-stage only; 0 means epochs/2

  // Returns a warning string when the config is unusual but allowed
  // (lambda1 == 0 with the decoder on detaches the reconstruction term).
  std::string validate(bool decoder_enabled) const;
  LrSchedule schedule() const { return {lr, lr_decay, lr_milestones}; }
};

struct TrainResult {
  MetricsReport report;  // final test-split metrics, curve attached
  std::vector<double> first_step_losses;  // combined loss of the first 3 steps
  double initial_l_rec = 0.0;
  double final_l_rec = 0.0;
  double final_l_cls = 0.0;
  double final_train_acc = 0.0;
};

struct TrainHooks {
  std::function<void(const std::string&)> log;       // optional progress sink
  std::function<void(std::size_t)> on_epoch;         // fires after each epoch's updates
};

// One forward per test sample in eval mode, threshold 0.5.
MetricsReport evaluate(Model& model, const DatasetManifest& manifest, Split side = Split::test);

// Hybrid-supervised single phase: L = lambda1*L_rec + lambda2*L_cls.
// When out_dir is nonempty writes metrics.csv, milestone checkpoints and the
// final report there; a NaN loss aborts with the last good checkpoint saved.
TrainResult train_one_stage(Model& model, const DatasetManifest& manifest,
                            const TrainConfig& config, const std::string& out_dir = "",
                            const TrainHooks& hooks = {});

// Reconstruction-only phase, then classification-only phase through encoder
// and head. Nothing is frozen; the gradient paths do the separation.
TrainResult train_two_stage(Model& model, const DatasetManifest& manifest,
                            const TrainConfig& config, const std::string& out_dir = "",
                            const TrainHooks& hooks = {});

// Table rows for the component sweep; flags mirror the published component
// columns (hypergraph / enhanced hyperedge / decoder branch / one-stage).
struct VariantSpec {
  std::string id;
  bool hypergraph = false;
  bool enhanced_hyperedge = false;
  bool decoder_branch = false;
  bool one_stage_learning = false;
  double masking_rate = 0.0;
  StageMode stage_mode = StageMode::one_stage;
};

const std::vector<VariantSpec>& ablation_variants();
const VariantSpec& variant_by_id(const std::string& id);
ModelConfig apply_variant(ModelConfig base, const VariantSpec& v);
TrainConfig apply_variant(TrainConfig base, const VariantSpec& v);

struct AblationRow {
  VariantSpec spec;
  MetricsReport metrics;
  double final_l_rec = 0.0;
  double final_l_cls = 0.0;
};

// Runs all 7 variants with identical seeds and data.
std::vector<AblationRow> run_ablation_matrix(const DatasetManifest& manifest,
                                             const ModelConfig& base_model,
                                             const TrainConfig& base_train,
                                             const TrainHooks& hooks = {});

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRecord& r);

}  // namespace h2o
